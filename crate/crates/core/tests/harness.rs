use std::path::{Path, PathBuf};

use memstdp::fitting::FitReport;
use memstdp::harness::run::{
    mnist_from_snapshot, run_fit, run_mnist, run_stdp_curve, run_supervised, supervised_from_snapshot,
};
use memstdp::harness::{run, ExperimentConfig, ExperimentKind, WeightSnapshot};
use memstdp::rng::{stream_rng, Stream};
use memstdp::supervised::{self, Recording, SupervisedTask};
use memstdp::unsupervised;
use memstdp::{solve_boundaries, Error};

fn small_supervised() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 4,
        ..ExperimentConfig::default()
    };
    cfg.supervised.n_inputs = 200;
    cfg.supervised.epochs = 2;
    cfg.supervised.stop_on_success = false;
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());

    let partial = ExperimentConfig::parse("seed = 5\n[mnist]\nn_outputs = 30\n").unwrap();
    assert_eq!(partial.seed, 5);
    assert_eq!(partial.mnist.n_outputs, 30);
    assert_eq!(partial.model, cfg.model);

    assert!(ExperimentConfig::parse("[mnist]\nn_output = 30\n").is_err());
    assert!(ExperimentConfig::parse("[supervised]\nepochs = \"many\"\n").is_err());
}

#[test]
fn missing_config_file_names_the_path() {
    let err = ExperimentConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/run.toml"), "{err}");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = ExperimentConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_stdp_curve(&cfg, a.path()).unwrap();
    run_stdp_curve(&cfg, b.path()).unwrap();
    for name in ["curve.csv", "bands.csv", "summary.json", "config.toml"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }

    let mut other = cfg.clone();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    run_stdp_curve(&other, c.path()).unwrap();
    assert_ne!(read(a.path(), "curve.csv"), read(c.path(), "curve.csv"));
}

#[test]
fn empty_mnist_subset_reports_undefined_accuracy_without_data() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.mnist_dir = PathBuf::from("/nonexistent/mnist");
    cfg.mnist.train_subset = 0;
    let out = tempfile::tempdir().unwrap();
    let s = run_mnist(&cfg, out.path(), &mut |_| {}).unwrap();
    assert!(!s.accuracy_defined);
    assert_eq!(s.accuracy, None);
    assert!(out.path().join("summary.json").exists());
}

#[test]
fn missing_mnist_files_are_reported() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.mnist_dir = PathBuf::from("/nonexistent/mnist");
    let out = tempfile::tempdir().unwrap();
    let err = run_mnist(&cfg, out.path(), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
    assert!(err.to_string().contains("/nonexistent/mnist"), "{err}");
}

#[test]
fn supervised_snapshot_reproduces_the_forward_pass() {
    let cfg = small_supervised();
    let out = tempfile::tempdir().unwrap();
    run_supervised(&cfg, out.path(), &mut |_| {}).unwrap();

    let snap = WeightSnapshot::load(&out.path().join("snapshots/epoch_0002.snap")).unwrap();
    assert_eq!(snap.meta.epoch, 2);
    assert_eq!(snap.meta.config_hash, cfg.hash());
    let net = supervised_from_snapshot(&snap, &cfg, cfg.supervised.trainer.kappa).unwrap();

    let s = &cfg.supervised;
    let mut task = SupervisedTask::poisson(
        s.n_inputs,
        s.n_outputs,
        s.input_rate,
        s.duration,
        s.n_desired,
        s.min_gap,
        &mut stream_rng(cfg.seed, Stream::Inputs, &[]),
    )
    .unwrap();
    task.match_tolerance = s.match_tolerance;
    let stats = supervised::simulate(&net, &task, &cfg.model, &cfg.lif, &s.trainer, Recording::default()).unwrap();

    let logged: Vec<f64> = String::from_utf8(read(out.path(), "spikes.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.contains(",observed,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(stats.outputs[0].observed.times(), &logged[..]);
}

#[test]
fn fitted_model_loads_back() {
    let cfg = ExperimentConfig::default();
    let out = tempfile::tempdir().unwrap();
    let summary = run_fit(&cfg, out.path()).unwrap();
    assert!(summary.synthesized);

    let report: FitReport = serde_json::from_slice(&read(out.path(), "report.json")).unwrap();
    let loaded = ExperimentConfig::load(&out.path().join("fitted_model.toml")).unwrap();
    assert_eq!(loaded.model, report.params);
    let (lo, hi) = solve_boundaries(&loaded.model).unwrap();
    assert!((lo / cfg.model.g0 - summary.lower_boundary_g0).abs() < 1e-12);
    assert!((hi / cfg.model.g0 - summary.upper_boundary_g0).abs() < 1e-12);
}

#[test]
fn dispatch_writes_config_and_summary() {
    let cfg = ExperimentConfig::default();
    for kind in [ExperimentKind::StdpCurve, ExperimentKind::Energy] {
        let out = tempfile::tempdir().unwrap();
        let json = run(kind, &cfg, out.path(), &mut |_| {}).unwrap();
        assert_eq!(json["seed"], 1);
        assert_eq!(json["config_hash"], cfg.hash());
        let written = ExperimentConfig::load(&out.path().join("config.toml")).unwrap();
        assert_eq!(written, cfg);
    }
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MEMSTDP_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

#[test]
fn mnist_snapshot_reproduces_test_accuracy() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST files not found; skipping");
        return;
    };
    let mut cfg = ExperimentConfig::default();
    cfg.data.mnist_dir = dir;
    cfg.mnist.train_subset = 300;
    cfg.mnist.test_subset = 100;
    cfg.mnist.epochs = 1;
    let out = tempfile::tempdir().unwrap();
    let s = run_mnist(&cfg, out.path(), &mut |_| {}).unwrap();

    let snap = WeightSnapshot::load(&out.path().join("snapshots/epoch_0001.snap")).unwrap();
    let mut net = mnist_from_snapshot(&snap, &cfg).unwrap();
    let (_, test) = memstdp::harness::run::load_mnist(&cfg).unwrap();
    let idx: Vec<usize> = (0..100).collect();
    let acc = unsupervised::evaluate(&mut net, &s.labels, &test, &idx, &cfg.mnist, &cfg.model, &cfg.lif).unwrap();
    assert_eq!(acc.fraction(), s.accuracy);
}

#[test]
fn sequence_predictor_maps_n_onto_j() {
    let cfg = ExperimentConfig::default();
    let out = tempfile::tempdir().unwrap();
    let s = memstdp::harness::run::run_sequence(&cfg, out.path(), &mut |_| {}).unwrap();
    let n = s.predictions.iter().find(|p| p.input == 'N').unwrap();
    assert_eq!(n.target, 'J');
    assert!(n.overlap >= 0.5, "{s:?}");
    for letter in ['N', 'J', 'I'] {
        assert!(out.path().join(format!("output_{letter}.pgm")).exists());
    }
    let snap = WeightSnapshot::load(&out.path().join("snapshots/final.snap")).unwrap();
    assert_eq!((snap.meta.n_inputs, snap.meta.n_outputs), (900, 900));
}
