//! The named experiments. Each runner writes its artifacts into `out` and
//! returns the summary it also stores as `summary.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::idx::Dataset;
use super::pgm;
use super::snapshot::{SnapshotMeta, WeightSnapshot};
use crate::device_model::{apply_update, normalized_change, solve_boundaries, DeviceState, ModelParams, NoiseConfig};
use crate::error::{Error, Result};
use crate::fitting::{self, bin_average, ConductanceRange, FitReport, StdpRecord};
use crate::rng::{stream_rng, Stream};
use crate::supervised::{
    self, BipolarSynapseView, GrayImage, Recording, SequencePredictor, SupervisedNet, SupervisedTask,
};
use crate::unsupervised::{self, MnistNet};
use crate::waveform::{align_to_grid, difference_waveform, energy, post_spike_waveform, pre_spike_waveform};

/// Receives one line per notable step of a long run.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}

fn write_summary<T: Serialize>(out: &Path, summary: &T) -> Result<()> {
    let path = out.join("summary.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, summary).expect("summary serializes");
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
}

fn snapshot_dir(out: &Path) -> Result<PathBuf> {
    let dir = out.join("snapshots");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Mean of the values selected by `keep`, or `None` when nothing matches.
fn mean_where(points: &[(f64, f64, usize)], keep: impl Fn(f64) -> bool) -> Option<f64> {
    let (sum, n) = points
        .iter()
        .filter(|p| keep(p.0))
        .fold((0.0, 0usize), |(s, n), p| (s + p.1 * p.2 as f64, n + p.2));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSummary {
    /// Band limits in units of G0; the top band is unbounded.
    pub low: f64,
    pub high: Option<f64>,
    pub records: usize,
    /// Mean ΔG_norm over `0 < Δt <= 10` ms.
    pub near_potentiation: Option<f64>,
    /// Mean |ΔG_norm| over `-10 <= Δt < 0` ms.
    pub near_depression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StdpCurveSummary {
    pub seed: u64,
    pub config_hash: String,
    pub draws: usize,
    pub final_conductance: f64,
    pub bands: Vec<BandSummary>,
}

/// Program one device with random spike pairs and log every change.
pub fn run_stdp_curve(cfg: &ExperimentConfig, out: &Path) -> Result<StdpCurveSummary> {
    prepare(cfg, out)?;
    let c = &cfg.stdp_curve;
    let p = &cfg.model;
    let noise = (c.sigma_fraction > 0.0)
        .then(|| NoiseConfig::new(c.sigma_fraction, cfg.seed))
        .transpose()?;
    let mut rng = stream_rng(cfg.seed, Stream::Curve, &[]);
    let mut state = DeviceState::clamped(c.initial_conductance, p);
    let mut records = Vec::with_capacity(c.draws);
    for _ in 0..c.draws {
        let dt = align_to_grid(rng.gen_range(-c.dt_max..=c.dt_max), &cfg.waveform);
        let next = apply_update(state, dt, p, noise.as_ref(), &mut rng);
        records.push(StdpRecord {
            delta_t: dt,
            g_initial: state.conductance(),
            g_final: next.conductance(),
        });
        state = next;
    }

    let path = out.join("curve.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["delta_t_ms", "g_initial_S", "g_final_S", "delta_g_norm"])?;
    for r in &records {
        let dg = normalized_change(r.g_initial, r.g_final);
        w.write_record([r.delta_t, r.g_initial, r.g_final, dg].map(|v| v.to_string()))?;
    }
    finish(w, &path)?;

    let mut edges = vec![0.0];
    edges.extend(&c.band_edges);
    edges.push(f64::INFINITY);
    let ranges: Vec<ConductanceRange> = edges
        .windows(2)
        .map(|w| ConductanceRange {
            low: w[0] * p.g0,
            high: w[1] * p.g0,
        })
        .collect();
    let path = out.join("bands.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "band_low_g0",
        "band_high_g0",
        "delta_t_ms",
        "mean_delta_g_norm",
        "count",
    ])?;
    let mut bands = Vec::new();
    for (range, edge) in ranges.iter().zip(edges.windows(2)) {
        let avg = bin_average(&records, std::slice::from_ref(range), (-c.dt_max, c.dt_max), p.g0);
        let points = avg.first().map(|a| a.points.clone()).unwrap_or_default();
        let (low, high) = (edge[0], edge[1]);
        for &(dt, v, n) in &points {
            w.write_record([
                low.to_string(),
                high.to_string(),
                dt.to_string(),
                v.to_string(),
                n.to_string(),
            ])?;
        }
        bands.push(BandSummary {
            low,
            high: high.is_finite().then_some(high),
            records: points.iter().map(|p| p.2).sum(),
            near_potentiation: mean_where(&points, |dt| dt > 0.0 && dt <= 10.0),
            near_depression: mean_where(&points, |dt| (-10.0..0.0).contains(&dt)).map(f64::abs),
        });
    }
    finish(w, &path)?;

    let summary = StdpCurveSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        draws: records.len(),
        final_conductance: state.conductance(),
        bands,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyAtConductance {
    /// Conductance in units of G0.
    pub g: f64,
    pub mean_pair_energy: f64,
    pub pre_spike_energy: f64,
    pub post_spike_energy: f64,
    pub pair_energy_at_min_dt: f64,
    pub pair_energy_at_max_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySummary {
    pub seed: u64,
    pub config_hash: String,
    pub conductances: Vec<EnergyAtConductance>,
}

/// Pair energy over a `Δt` sweep at each configured conductance.
pub fn run_energy(cfg: &ExperimentConfig, out: &Path) -> Result<EnergySummary> {
    prepare(cfg, out)?;
    let e = &cfg.energy;
    let wp = &cfg.waveform;
    let dts = fitting::dt_grid(-e.dt_max, e.dt_max, e.dt_step);
    let waves = dts
        .iter()
        .map(|&dt| difference_waveform(dt, wp))
        .collect::<Result<Vec<_>>>()?;
    let pre = pre_spike_waveform(wp);
    let post = post_spike_waveform(wp);

    let path = out.join("energy.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["g_over_g0", "delta_t_ms", "energy_J"])?;
    let mut rows = Vec::new();
    for &g_rel in &e.conductances {
        let g = g_rel * cfg.model.g0;
        let energies: Vec<f64> = waves.iter().map(|wave| energy(wave, g)).collect();
        for (dt, en) in dts.iter().zip(&energies) {
            w.write_record([g_rel, *dt, *en].map(|v| v.to_string()))?;
        }
        rows.push(EnergyAtConductance {
            g: g_rel,
            mean_pair_energy: energies.iter().sum::<f64>() / energies.len() as f64,
            pre_spike_energy: energy(&pre, g),
            post_spike_energy: energy(&post, g),
            pair_energy_at_min_dt: energies[0],
            pair_energy_at_max_dt: *energies.last().expect("non-empty sweep"),
        });
    }
    finish(w, &path)?;

    let path = out.join("waveform_dt_plus5.csv");
    difference_waveform(5.0, wp)?.write_csv(create(&path)?)?;

    let summary = EnergySummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        conductances: rows,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupervisedSummary {
    pub seed: u64,
    pub config_hash: String,
    pub epochs_run: usize,
    pub converged_at: Option<usize>,
    pub final_hits: usize,
    pub final_misses: usize,
    pub final_spurious: usize,
}

fn supervised_meta(cfg: &ExperimentConfig, kind: &str, net: &SupervisedNet, epoch: usize) -> SnapshotMeta {
    SnapshotMeta {
        kind: kind.into(),
        n_inputs: net.n_inputs,
        n_outputs: net.n_outputs,
        devices_per_synapse: 1,
        epoch,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        thresholds: Vec::new(),
    }
}

/// The spike-timing task: train until every teacher spike is matched.
pub fn run_supervised(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<SupervisedSummary> {
    prepare(cfg, out)?;
    let s = &cfg.supervised;
    let mut task = SupervisedTask::poisson(
        s.n_inputs,
        s.n_outputs,
        s.input_rate,
        s.duration,
        s.n_desired,
        s.min_gap,
        &mut stream_rng(cfg.seed, Stream::Inputs, &[]),
    )?;
    task.epochs = s.epochs;
    task.match_tolerance = s.match_tolerance;
    let mut net = SupervisedNet::init(
        s.n_inputs,
        s.n_outputs,
        &cfg.model,
        &s.trainer,
        &mut stream_rng(cfg.seed, Stream::Init, &[]),
    )?;

    let snaps = snapshot_dir(out)?;
    let path = out.join("epochs.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "epoch",
        "hits",
        "misses",
        "spurious",
        "eval_hits",
        "eval_misses",
        "eval_spurious",
        "mean_abs_dg_S",
    ])?;
    let run = supervised::train(
        &mut net,
        &task,
        &cfg.model,
        &cfg.lif,
        &s.trainer,
        cfg.seed,
        s.stop_on_success,
        |net, stats, eval| {
            let sc = stats.score;
            w.write_record([
                stats.epoch.to_string(),
                sc.hits.to_string(),
                sc.misses.to_string(),
                sc.spurious.to_string(),
                eval.hits.to_string(),
                eval.misses.to_string(),
                eval.spurious.to_string(),
                stats.mean_abs_dg.to_string(),
            ])?;
            let meta = supervised_meta(cfg, "supervised", net, stats.epoch);
            WeightSnapshot::capture(meta, &net.synapses)?
                .save(&snaps.join(format!("epoch_{:04}.snap", stats.epoch)))?;
            progress(&format!(
                "epoch {}: {} hits, {} misses, {} spurious after the epoch",
                stats.epoch, eval.hits, eval.misses, eval.spurious
            ));
            Ok(())
        },
    )?;
    finish(w, &path)?;

    // Frozen pass with the membrane recorded, for raster and trace plots.
    let rec = Recording {
        membrane: true,
        updates: false,
    };
    let last = supervised::simulate(&net, &task, &cfg.model, &cfg.lif, &s.trainer, rec)?;
    let path = out.join("spikes.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["output", "kind", "time_ms"])?;
    for (m, o) in last.outputs.iter().enumerate() {
        for &t in task.desired[m].times() {
            w.write_record([m.to_string(), "desired".into(), t.to_string()])?;
        }
        for &t in o.observed.times() {
            w.write_record([m.to_string(), "observed".into(), t.to_string()])?;
        }
    }
    finish(w, &path)?;
    let path = out.join("membrane.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["output", "time_ms", "v_m"])?;
    for (m, o) in last.outputs.iter().enumerate() {
        for &(t, v) in &o.trace {
            w.write_record([m.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    finish(w, &path)?;

    let summary = SupervisedSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        epochs_run: run.epochs.len(),
        converged_at: run.converged_at,
        final_hits: last.score.hits,
        final_misses: last.score.misses,
        final_spurious: last.score.spurious,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

/// `<letter>.pgm` files of a directory, sorted by letter.
pub fn load_letters(dir: &Path) -> Result<Vec<(char, GrayImage)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut letters = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm"));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let mut chars = stem.chars();
        if let (true, Some(ch), None) = (is_pgm, chars.next(), chars.next()) {
            letters.push((ch, pgm::read(&path)?));
        }
    }
    letters.sort_by_key(|(c, _)| *c);
    Ok(letters)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LetterPrediction {
    pub input: char,
    pub target: char,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub predictions: Vec<LetterPrediction>,
    pub mean_overlap: Option<f64>,
}

/// Letter-to-letter prediction with a fully connected image-to-image layer.
pub fn run_sequence(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<SequenceSummary> {
    prepare(cfg, out)?;
    let letters = match &cfg.data.letters_dir {
        Some(dir) => load_letters(dir)?,
        None => supervised::bundled_letters()?,
    };
    let mut pred = SequencePredictor::new(letters, cfg.sequence.clone(), &cfg.model, cfg.seed)?;
    let path = out.join("epochs.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["epoch", "mean_abs_dg_S", "output_spikes", "teacher_hits"])?;
    for epoch in 1..=cfg.sequence.epochs {
        let stats = pred.train_epoch(&cfg.model, &cfg.lif, cfg.seed, epoch)?;
        let spikes: usize = stats.outputs.iter().map(|o| o.observed.len()).sum();
        w.write_record([
            epoch.to_string(),
            stats.mean_abs_dg.to_string(),
            spikes.to_string(),
            stats.score.hits.to_string(),
        ])?;
        progress(&format!("epoch {epoch}: {spikes} output spikes"));
    }
    finish(w, &path)?;

    let meta = supervised_meta(cfg, "sequence", &pred.net, cfg.sequence.epochs);
    WeightSnapshot::capture(meta, &pred.net.synapses)?.save(&snapshot_dir(out)?.join("final.snap"))?;

    let path = out.join("rate_maps.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["letter", "pixel", "input_rate_hz", "output_rate_hz"])?;
    let mut predictions = Vec::new();
    for (src, dst) in pred.pairs() {
        let map = pred.rate_map(src, &cfg.model, &cfg.lif, cfg.seed)?;
        for (k, (i, o)) in map.input_rates.iter().zip(&map.output_rates).enumerate() {
            w.write_record([src.to_string(), k.to_string(), i.to_string(), o.to_string()])?;
        }
        let img = pred.image(src);
        let pic = pgm::normalized(img.width, img.height, &map.output_rates)?;
        pgm::write(&out.join(format!("output_{src}.pgm")), &pic)?;
        if let Some(overlap) = pred.prediction_overlap(&map) {
            predictions.push(LetterPrediction {
                input: src,
                target: dst,
                overlap,
            });
        }
    }
    finish(w, &path)?;

    let mean_overlap = (!predictions.is_empty())
        .then(|| predictions.iter().map(|p| p.overlap).sum::<f64>() / predictions.len() as f64);
    let summary = SequenceSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        epochs: cfg.sequence.epochs,
        predictions,
        mean_overlap,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MnistSummary {
    pub seed: u64,
    pub config_hash: String,
    pub n_outputs: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// False when nothing was trained or tested.
    pub accuracy_defined: bool,
    pub accuracy: Option<f64>,
    pub epoch_accuracies: Vec<Option<f64>>,
    pub labels: Vec<Option<u8>>,
    /// Share of labeled outputs whose weights resemble their digit's mean image
    /// more than any other digit's.
    pub prototype_agreement: Option<f64>,
}

/// Load the configured MNIST train and test splits.
pub fn load_mnist(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let train = Dataset::load(&d.mnist_dir.join(&d.train_images), &d.mnist_dir.join(&d.train_labels))?;
    let test = Dataset::load(&d.mnist_dir.join(&d.test_images), &d.mnist_dir.join(&d.test_labels))?;
    Ok((train, test))
}

/// Winner-take-all digit learning on MNIST.
pub fn run_mnist(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<MnistSummary> {
    prepare(cfg, out)?;
    let m = &cfg.mnist;
    let mut summary = MnistSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        n_outputs: m.n_outputs,
        train_images: 0,
        test_images: 0,
        accuracy_defined: false,
        accuracy: None,
        epoch_accuracies: Vec::new(),
        labels: vec![None; m.n_outputs],
        prototype_agreement: None,
    };
    if m.train_subset == 0 || m.test_subset == 0 || m.epochs == 0 {
        write_summary(out, &summary)?;
        return Ok(summary);
    }
    let (train_set, test_set) = load_mnist(cfg)?;
    summary.train_images = m.train_subset.min(train_set.len());
    summary.test_images = m.test_subset.min(test_set.len());
    let mut net = MnistNet::init(m, &cfg.model, &cfg.lif, &mut stream_rng(cfg.seed, Stream::Init, &[]))?;

    let snaps = snapshot_dir(out)?;
    let path = out.join("epochs.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "epoch",
        "accuracy",
        "correct",
        "total",
        "silent_test",
        "train_spikes",
        "silent_train",
    ])?;
    let history = unsupervised::train(
        &mut net,
        &train_set,
        &test_set,
        m,
        &cfg.model,
        &cfg.lif,
        cfg.seed,
        |net, e| {
            let acc = e.accuracy.fraction();
            w.write_record([
                e.epoch.to_string(),
                acc.map_or(String::new(), |a| a.to_string()),
                e.accuracy.correct.to_string(),
                e.accuracy.total.to_string(),
                e.accuracy.silent.to_string(),
                e.train_spikes.to_string(),
                e.silent_train_images.to_string(),
            ])?;
            let meta = SnapshotMeta {
                kind: "mnist".into(),
                n_inputs: net.n_inputs,
                n_outputs: net.n_outputs,
                devices_per_synapse: m.devices_per_synapse,
                epoch: e.epoch,
                seed: cfg.seed,
                config_hash: cfg.hash(),
                thresholds: net.homeostasis.thresholds.clone(),
            };
            WeightSnapshot::capture(meta, &net.synapses)?.save(&snaps.join(format!("epoch_{:04}.snap", e.epoch)))?;
            progress(&format!(
                "epoch {}: accuracy {}",
                e.epoch,
                acc.map_or("undefined".into(), |a| format!("{:.2}%", 100.0 * a))
            ));
            Ok(())
        },
    )?;
    finish(w, &path)?;

    let maps = out.join("weights");
    std::fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
    let side = (net.n_inputs as f64).sqrt() as usize;
    for j in 0..net.n_outputs {
        let img = pgm::normalized(side, side, &net.weight_vector(j, &cfg.model))?;
        pgm::write(&maps.join(format!("output_{j:02}.pgm")), &img)?;
    }

    if let Some(last) = history.last() {
        let protos = unsupervised::digit_prototypes(&train_set, summary.train_images, m.binarize_threshold);
        summary.accuracy = last.accuracy.fraction();
        summary.accuracy_defined = summary.accuracy.is_some();
        summary.labels = last.labels.clone();
        summary.prototype_agreement = unsupervised::prototype_agreement(&net, &last.labels, &protos, &cfg.model);
    }
    summary.epoch_accuracies = history.iter().map(|e| e.accuracy.fraction()).collect();
    let path = out.join("labels.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["output", "label"])?;
    for (j, l) in summary.labels.iter().enumerate() {
        w.write_record([j.to_string(), l.map_or(String::new(), |d| d.to_string())])?;
    }
    finish(w, &path)?;
    write_summary(out, &summary)?;
    Ok(summary)
}

/// Rebuild an MNIST network from a snapshot written by [`run_mnist`].
pub fn mnist_from_snapshot(snap: &WeightSnapshot, cfg: &ExperimentConfig) -> Result<MnistNet> {
    let mut net = MnistNet::from_synapses(
        snap.meta.n_inputs,
        snap.meta.n_outputs,
        snap.synapses(&cfg.model)?,
        cfg.mnist.kappa,
        &cfg.lif,
    )?;
    if snap.meta.thresholds.len() == net.n_outputs {
        net.homeostasis.thresholds = snap.meta.thresholds.clone();
    }
    Ok(net)
}

/// Rebuild the single-device synapses of a supervised snapshot.
pub fn supervised_from_snapshot(snap: &WeightSnapshot, cfg: &ExperimentConfig, kappa: f64) -> Result<SupervisedNet> {
    Ok(SupervisedNet {
        n_inputs: snap.meta.n_inputs,
        n_outputs: snap.meta.n_outputs,
        synapses: snap.synapses(&cfg.model)?,
        view: BipolarSynapseView::new(&cfg.model),
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub seed: u64,
    pub config_hash: String,
    pub synthesized: bool,
    pub records: usize,
    pub bands: usize,
    pub lower_boundary_g0: f64,
    pub upper_boundary_g0: f64,
    /// Largest relative deviation of a fitted α or β from the configured model,
    /// reported for synthesized records only.
    pub max_relative_error: Option<f64>,
}

/// Relative deviation of each fitted α, β and boundary from `reference`.
pub fn fit_errors(report: &FitReport, reference: &ModelParams) -> Result<Vec<(&'static str, f64)>> {
    let f = &report.params;
    let r = reference;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (lo, hi) = solve_boundaries(r)?;
    Ok(vec![
        ("alpha_ap", rel(f.alpha_ap, r.alpha_ap)),
        ("beta_ap", rel(f.beta_ap, r.beta_ap)),
        ("alpha_bp", rel(f.alpha_bp, r.alpha_bp)),
        ("beta_bp", rel(f.beta_bp, r.beta_bp)),
        ("alpha_an", rel(f.alpha_an, r.alpha_an)),
        ("beta_an", rel(f.beta_an, r.beta_an)),
        ("alpha_bn", rel(f.alpha_bn, r.alpha_bn)),
        ("beta_bn", rel(f.beta_bn, r.beta_bn)),
        ("lower_boundary", rel(report.lower_boundary, lo)),
        ("upper_boundary", rel(report.upper_boundary, hi)),
    ])
}

/// Records for the fit: the configured file, or the model's own curves.
pub fn fit_records(cfg: &ExperimentConfig) -> Result<(Vec<StdpRecord>, bool)> {
    if let Some(path) = &cfg.data.records {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        return Ok((fitting::read_records(file)?, false));
    }
    let s = &cfg.synthesis;
    let levels = if s.levels.is_empty() {
        cfg.fit.band_centres()
    } else {
        s.levels.clone()
    };
    let grid = fitting::dt_grid(cfg.fit.window.0, cfg.fit.window.1, s.dt_step);
    let mut rng = stream_rng(cfg.seed, Stream::Synthesis, &[]);
    let records = fitting::synthesize_records(&cfg.model, &levels, &grid, s.noise_fraction, s.repeats, &mut rng)?;
    Ok((records, true))
}

/// Extract model constants from STDP records.
pub fn run_fit(cfg: &ExperimentConfig, out: &Path) -> Result<FitSummary> {
    prepare(cfg, out)?;
    let (records, synthesized) = fit_records(cfg)?;
    if synthesized {
        let path = out.join("records.csv");
        fitting::write_records(create(&path)?, &records)?;
    }
    let report = fitting::fit_model(&records, &cfg.fit, &cfg.model)?;

    let path = out.join("bands.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "mean_log_g",
        "lobe",
        "a",
        "tau_a_ms",
        "tau_b_ms",
        "rms_residual",
        "converged",
    ])?;
    for b in &report.bands {
        for (lobe, f) in [("potentiation", &b.potentiation), ("depression", &b.depression)] {
            w.write_record([
                b.mean_log_g.to_string(),
                lobe.into(),
                f.a.to_string(),
                f.tau_a.to_string(),
                f.tau_b.to_string(),
                f.residual.to_string(),
                f.converged.to_string(),
            ])?;
        }
    }
    finish(w, &path)?;

    let path = out.join("report.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report).expect("report serializes");
    w.flush().map_err(|e| Error::io(&path, e))?;
    // Usable directly as `--config` for the other experiments.
    let fitted = ExperimentConfig {
        model: report.params,
        ..ExperimentConfig::default()
    };
    let path = out.join("fitted_model.toml");
    let model_only = format!("[model]\n{}", toml::to_string(&fitted.model).expect("model serializes"));
    std::fs::write(&path, model_only).map_err(|e| Error::io(&path, e))?;

    let max_relative_error = if synthesized {
        let errs = fit_errors(&report, &cfg.model)?;
        Some(errs.iter().take(8).map(|e| e.1).fold(0.0, f64::max))
    } else {
        None
    };
    let summary = FitSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        synthesized,
        records: records.len(),
        bands: report.bands.len(),
        lower_boundary_g0: report.lower_boundary / cfg.model.g0,
        upper_boundary_g0: report.upper_boundary / cfg.model.g0,
        max_relative_error,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

/// Run `kind` and return its summary as JSON.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<serde_json::Value> {
    let value = match kind {
        ExperimentKind::StdpCurve => serde_json::to_value(run_stdp_curve(cfg, out)?),
        ExperimentKind::Energy => serde_json::to_value(run_energy(cfg, out)?),
        ExperimentKind::Supervised => serde_json::to_value(run_supervised(cfg, out, progress)?),
        ExperimentKind::Sequence => serde_json::to_value(run_sequence(cfg, out, progress)?),
        ExperimentKind::Mnist => serde_json::to_value(run_mnist(cfg, out, progress)?),
        ExperimentKind::Fit => serde_json::to_value(run_fit(cfg, out)?),
    };
    Ok(value.expect("summaries serialize"))
}
