//! Experiment configuration: one TOML file with a section per component.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected anywhere in the tree.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device_model::ModelParams;
use crate::error::{Error, Result};
use crate::fitting::FitConfig;
use crate::neuron::LifParams;
use crate::supervised::{SequenceConfig, SupervisedConfig};
use crate::unsupervised::MnistConfig;
use crate::waveform::WaveformParams;

/// The named experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StdpCurve,
    Energy,
    Supervised,
    Sequence,
    Mnist,
    Fit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::StdpCurve,
        Self::Energy,
        Self::Supervised,
        Self::Sequence,
        Self::Mnist,
        Self::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::StdpCurve => "stdp-curve",
            Self::Energy => "energy",
            Self::Supervised => "supervised",
            Self::Sequence => "sequence",
            Self::Mnist => "mnist",
            Self::Fit => "fit",
        }
    }
}

/// Random programming of a single device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpCurveConfig {
    pub draws: usize,
    /// Starting conductance (S); clamped into the device range.
    pub initial_conductance: f64,
    /// `Δt` is drawn uniformly from `[-dt_max, dt_max]` ms.
    pub dt_max: f64,
    /// Band edges in units of G0 splitting the records into bands.
    pub band_edges: Vec<f64>,
    pub sigma_fraction: f64,
}

impl Default for StdpCurveConfig {
    fn default() -> Self {
        Self {
            draws: 400,
            initial_conductance: 1e-6,
            dt_max: 40.0,
            band_edges: vec![0.05, 0.16],
            sigma_fraction: 0.0,
        }
    }
}

/// Pair-energy sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Device conductances in units of G0.
    pub conductances: Vec<f64>,
    pub dt_max: f64,
    pub dt_step: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            conductances: vec![0.05, 0.1, 0.2],
            dt_max: 40.0,
            dt_step: 0.5,
        }
    }
}

/// Spike-timing task with Poisson inputs and random teacher spikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedTimingConfig {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Poisson input rate (Hz).
    pub input_rate: f64,
    /// Pattern length (ms).
    pub duration: f64,
    /// Teacher spikes per output.
    pub n_desired: usize,
    /// Minimum spacing of teacher spikes and distance from the edges (ms).
    pub min_gap: f64,
    pub epochs: usize,
    pub match_tolerance: f64,
    pub stop_on_success: bool,
    pub trainer: SupervisedConfig,
}

impl Default for SupervisedTimingConfig {
    fn default() -> Self {
        Self {
            n_inputs: 1000,
            n_outputs: 1,
            input_rate: 5.0,
            duration: 1000.0,
            n_desired: 5,
            min_gap: 60.0,
            epochs: 50,
            match_tolerance: 10.0,
            stop_on_success: true,
            trainer: SupervisedConfig::default(),
        }
    }
}

/// Model-generated records used when no measurement file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Initial conductances in units of G0; empty means the fit band centres.
    pub levels: Vec<f64>,
    pub dt_step: f64,
    pub noise_fraction: f64,
    pub repeats: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            dt_step: 0.5,
            noise_fraction: 0.0,
            repeats: 1,
        }
    }
}

/// Locations of external inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub mnist_dir: PathBuf,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    /// Directory of `<letter>.pgm` images; the bundled N, J, I, T when unset.
    pub letters_dir: Option<PathBuf>,
    /// Measurement CSV for the fit; synthesized from the model when unset.
    pub records: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            letters_dir: None,
            records: None,
        }
    }
}

/// Everything an experiment reads besides its datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelParams,
    pub lif: LifParams,
    pub waveform: WaveformParams,
    pub data: DataConfig,
    pub stdp_curve: StdpCurveConfig,
    pub energy: EnergyConfig,
    pub supervised: SupervisedTimingConfig,
    pub sequence: SequenceConfig,
    pub mnist: MnistConfig,
    pub fit: FitConfig,
    pub synthesis: SynthesisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelParams::default(),
            lif: LifParams::default(),
            waveform: WaveformParams::default(),
            data: DataConfig::default(),
            stdp_curve: StdpCurveConfig::default(),
            energy: EnergyConfig::default(),
            supervised: SupervisedTimingConfig::default(),
            sequence: SequenceConfig::default(),
            mnist: MnistConfig::default(),
            fit: FitConfig::default(),
            synthesis: SynthesisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lif.validate()?;
        self.waveform.validate()?;
        self.supervised.trainer.validate()?;
        self.sequence.trainer.validate()?;
        self.mnist.validate()?;
        let c = &self.stdp_curve;
        if !(c.dt_max > 0.0) || !(c.initial_conductance > 0.0) {
            return Err(Error::config(
                "stdp_curve needs dt_max > 0 and a positive initial conductance",
            ));
        }
        if c.band_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("stdp_curve band edges must increase"));
        }
        let e = &self.energy;
        if !(e.dt_step > 0.0 && e.dt_max >= 0.0) || e.conductances.iter().any(|&g| g < 0.0) {
            return Err(Error::config("energy needs dt_step > 0 and non-negative conductances"));
        }
        let s = &self.supervised;
        if s.n_inputs == 0 || s.n_outputs == 0 || !(s.duration > 0.0) || !(s.input_rate >= 0.0) {
            return Err(Error::config(
                "supervised needs inputs, outputs, a positive duration and rate",
            ));
        }
        if self.fit.band_edges.len() < 3 || self.fit.band_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("fit needs at least two bands with increasing edges"));
        }
        if !(self.fit.window.0 < self.fit.window.1) {
            return Err(Error::config("fit window must be an increasing pair"));
        }
        if !(self.synthesis.dt_step > 0.0 && self.synthesis.noise_fraction >= 0.0) || self.synthesis.repeats == 0 {
            return Err(Error::config(
                "synthesis needs dt_step > 0, noise >= 0 and repeats >= 1",
            ));
        }
        Ok(())
    }
}

/// Where each default comes from, for generated documentation. `published`
/// values come from the device measurements and the reference network,
/// `chosen` values are settings of this implementation.
pub fn default_provenance() -> Vec<(&'static str, &'static str)> {
    vec![
        ("model.*", "published: fitted device constants"),
        ("model.g_min, model.g_max", "published: observed conductance range"),
        ("lif.*", "published: neuron and synapse constants"),
        ("lif.theta", "published value, read as an absolute voltage"),
        ("waveform.*", "published: programming waveform and 0.5 ms sampling"),
        (
            "stdp_curve.draws, initial_conductance",
            "published: 400 draws from 1 µS",
        ),
        (
            "stdp_curve.band_edges",
            "published: conductance bands of the band analysis",
        ),
        (
            "supervised.n_inputs, n_outputs, match_tolerance",
            "published: 1000x1 task, ±10 ms",
        ),
        ("supervised.input_rate, duration, n_desired, min_gap, epochs", "chosen"),
        ("supervised.trainer.*", "chosen: calibrated at desk scale"),
        ("sequence.*", "chosen: calibrated at desk scale"),
        (
            "mnist.image_duration, spike_time, potentiation_window, depression_dt, wta_block, homeostasis_period",
            "published",
        ),
        (
            "mnist.kappa, init_g_*, homeostasis_gain, binarize_threshold",
            "chosen: calibrated at desk scale",
        ),
        ("fit.*, synthesis.*", "chosen"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sed = 3").is_err());
        assert!(ExperimentConfig::parse("[mnist]\nn_output = 3").is_err());
        assert!(ExperimentConfig::parse("[supervised.trainer]\nkapa = 1.0").is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse("seed = 9\n[mnist]\nn_outputs = 30\n[model]\na = 8.0").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mnist.n_outputs, 30);
        assert_eq!(cfg.model.a, 8.0);
        assert_eq!(cfg.model.alpha_ap, 5.2);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.records = Some("m.csv".into());
        cfg.sequence.sequence = "NJ".into();
        let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::parse("[mnist]\nspike_time = 300.0").is_err());
        assert!(ExperimentConfig::parse("[fit]\nband_edges = [0.1]").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
