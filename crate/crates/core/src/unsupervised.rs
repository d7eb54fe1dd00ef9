//! Unsupervised digit learning in a winner-take-all layer.
//!
//! Each binarized pixel fires a single spike into every output neuron. The
//! first output to reach its threshold wins: all outputs reset and stay quiet
//! for a short block, and the winner's synapses learn. Synapses whose input
//! fired shortly before the winning spike are potentiated with the model
//! update for that delay; all others are depressed with a fixed negative
//! delay. Adaptive thresholds keep every output's firing rate comparable.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device_model::{DeviceState, ModelParams, MultiDeviceSynapse, NoiseConfig, G0};
use crate::error::{Error, Result};
use crate::harness::idx::Dataset;
use crate::neuron::{merge_trains, LifParams, LifState, SpikeTrain, SynapticDrive};
use crate::rng::{stream_rng, SimRng, Stream};

const TIME_EPS: f64 = 1e-9;
pub const IMAGE_PIXELS: usize = 784;

/// Settings of the winner-take-all MNIST experiment. Times in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub n_outputs: usize,
    pub devices_per_synapse: usize,
    pub sigma_fraction: f64,
    pub image_duration: f64,
    pub spike_time: f64,
    pub potentiation_window: f64,
    pub depression_dt: f64,
    pub wta_block: f64,
    /// Images between threshold adjustments.
    pub homeostasis_period: usize,
    /// Threshold shift (V) per unit relative deviation from the mean count.
    pub homeostasis_gain: f64,
    pub epochs: usize,
    pub train_subset: usize,
    pub test_subset: usize,
    /// Trailing training images whose spike counts assign the labels.
    pub label_window: usize,
    /// Pixel level at which a pixel is treated as on.
    pub binarize_threshold: u8,
    /// Conductance-to-current scale κ (A per S).
    pub kappa: f64,
    /// Initial device conductances are uniform in this range (units of G0).
    pub init_g_low: f64,
    pub init_g_high: f64,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            n_outputs: 10,
            devices_per_synapse: 1,
            sigma_fraction: 0.0,
            image_duration: 200.0,
            spike_time: 50.0,
            potentiation_window: 40.0,
            depression_dt: -60.0,
            wta_block: 3.0,
            homeostasis_period: 100,
            homeostasis_gain: 2e-3,
            epochs: 2,
            train_subset: 5000,
            test_subset: 2000,
            label_window: 10_000,
            binarize_threshold: 128,
            kappa: 7.0e-6,
            init_g_low: 0.2,
            init_g_high: 0.5,
        }
    }
}

impl MnistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_outputs == 0 || self.devices_per_synapse == 0 {
            return Err(Error::config(
                "mnist needs at least one output and one device per synapse",
            ));
        }
        if !(self.spike_time >= 0.0 && self.spike_time < self.image_duration) {
            return Err(Error::config("mnist needs 0 <= spike_time < image_duration"));
        }
        if !(self.potentiation_window > 0.0) {
            return Err(Error::config("potentiation window must be positive"));
        }
        if !(self.depression_dt < 0.0) {
            return Err(Error::config("depression_dt must be negative"));
        }
        if self.homeostasis_period == 0 {
            return Err(Error::config("homeostasis period must be at least one image"));
        }
        if !(self.kappa > 0.0) || !(self.init_g_low <= self.init_g_high) {
            return Err(Error::config("mnist needs kappa > 0 and init_g_low <= init_g_high"));
        }
        NoiseConfig::new(self.sigma_fraction, 0).map(|_| ())
    }

    fn noise(&self) -> Option<NoiseConfig> {
        (self.sigma_fraction > 0.0).then_some(NoiseConfig {
            sigma_fraction: self.sigma_fraction,
            seed: 0,
        })
    }
}

/// One spike at `spike_time` for each pixel at or above the binarization level.
pub fn encode_image(pixels: &[u8], cfg: &MnistConfig) -> Result<Vec<SpikeTrain>> {
    if pixels.len() != IMAGE_PIXELS {
        return Err(Error::domain(format!(
            "expected {IMAGE_PIXELS} pixels, got {}",
            pixels.len()
        )));
    }
    pixels
        .iter()
        .map(|&p| {
            if p >= cfg.binarize_threshold {
                SpikeTrain::new(vec![cfg.spike_time])
            } else {
                Ok(SpikeTrain::empty())
            }
        })
        .collect()
}

/// Per-output spike counters and adaptive thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeostasisState {
    pub counts: Vec<u64>,
    /// Absolute thresholds (V).
    pub thresholds: Vec<f64>,
}

impl HomeostasisState {
    pub fn new(n: usize, lif: &LifParams) -> Self {
        Self {
            counts: vec![0; n],
            thresholds: vec![lif.threshold(); n],
        }
    }

    /// Allowed threshold range `[E_L + 5 mV, E_L + 200 mV]`.
    pub fn bounds(lif: &LifParams) -> (f64, f64) {
        (lif.e_l + 5e-3, lif.e_l + 200e-3)
    }
}

/// Move each threshold by `gain * (count - mean) / mean`, clamp, and clear the
/// counters. Nothing moves while every neuron is silent.
pub fn homeostasis_step(state: &mut HomeostasisState, gain: f64, lif: &LifParams) {
    let n = state.counts.len();
    let mean = state.counts.iter().sum::<u64>() as f64 / n.max(1) as f64;
    let (lo, hi) = HomeostasisState::bounds(lif);
    if mean > 0.0 {
        for (th, &c) in state.thresholds.iter_mut().zip(&state.counts) {
            *th = (*th + gain * (c as f64 - mean) / mean).clamp(lo, hi);
        }
    }
    state.counts.iter_mut().for_each(|c| *c = 0);
}

/// Output layer with `n_outputs x 784` multi-device excitatory synapses.
#[derive(Debug, Clone)]
pub struct MnistNet {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Row-major: `synapses[out * n_inputs + input]`.
    pub synapses: Vec<MultiDeviceSynapse>,
    pub homeostasis: HomeostasisState,
    pub kappa: f64,
    drives: Vec<SynapticDrive>,
}

/// What one presentation produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Presentation {
    /// `(time, output)` in firing order.
    pub spikes: Vec<(f64, usize)>,
    pub counts: Vec<u64>,
    /// Synapse updates issued: potentiations and depressions.
    pub potentiations: usize,
    pub depressions: usize,
}

impl MnistNet {
    pub fn init<R: Rng + ?Sized>(
        cfg: &MnistConfig,
        params: &ModelParams,
        lif: &LifParams,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = (cfg.init_g_low * G0, cfg.init_g_high * G0);
        let synapses = (0..cfg.n_outputs * IMAGE_PIXELS)
            .map(|_| {
                let devices = (0..cfg.devices_per_synapse)
                    .map(|_| {
                        let g = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                        DeviceState::clamped(g, params)
                    })
                    .collect();
                MultiDeviceSynapse::new(devices)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_synapses(IMAGE_PIXELS, cfg.n_outputs, synapses, cfg.kappa, lif)
    }

    pub fn from_synapses(
        n_inputs: usize,
        n_outputs: usize,
        synapses: Vec<MultiDeviceSynapse>,
        kappa: f64,
        lif: &LifParams,
    ) -> Result<Self> {
        if synapses.len() != n_inputs * n_outputs {
            return Err(Error::domain("synapse count does not match network shape"));
        }
        Ok(Self {
            n_inputs,
            n_outputs,
            synapses,
            homeostasis: HomeostasisState::new(n_outputs, lif),
            kappa,
            drives: (0..n_outputs).map(|_| SynapticDrive::new(n_inputs, lif)).collect(),
        })
    }

    pub fn row(&self, out: usize) -> &[MultiDeviceSynapse] {
        &self.synapses[out * self.n_inputs..(out + 1) * self.n_inputs]
    }

    /// Effective conductances `Σ (G - G_min)` of one output's synapses.
    pub fn weight_vector(&self, out: usize, params: &ModelParams) -> Vec<f64> {
        self.row(out).iter().map(|s| s.effective_conductance(params)).collect()
    }

    /// Simulate one image. With `learn`, the winner's synapses are programmed
    /// at each of its spikes and spike counts feed homeostasis.
    #[allow(clippy::too_many_arguments)]
    pub fn present(
        &mut self,
        trains: &[SpikeTrain],
        cfg: &MnistConfig,
        params: &ModelParams,
        lif: &LifParams,
        learn: bool,
        noise: Option<&NoiseConfig>,
        rng: &mut SimRng,
    ) -> Result<Presentation> {
        if trains.len() != self.n_inputs {
            return Err(Error::domain("input count does not match network"));
        }
        let events = merge_trains(trains);
        let mut out = Presentation {
            counts: vec![0; self.n_outputs],
            ..Presentation::default()
        };
        if events.is_empty() {
            return Ok(out);
        }
        for d in &mut self.drives {
            d.reset();
        }
        let mut states = vec![LifState::at_rest(lif); self.n_outputs];
        let mut proposals = vec![0.0; self.n_outputs];
        let n_steps = (cfg.image_duration / lif.dt).round() as u64;
        let mut next_event = 0;
        for step in 0..n_steps {
            let t = step as f64 * lif.dt;
            while next_event < events.len() && events[next_event].0 <= t + TIME_EPS {
                let (ts, ch) = events[next_event];
                for (j, d) in self.drives.iter_mut().enumerate() {
                    let w = self.kappa * self.synapses[j * self.n_inputs + ch].effective_conductance(params);
                    d.add_spike(ch, w, ts);
                }
                next_event += 1;
            }
            // Integrate all outputs, then let the highest suprathreshold one win.
            let mut winner: Option<usize> = None;
            for j in 0..self.n_outputs {
                let st = &mut states[j];
                let d = &self.drives[j];
                if st.is_held(t) {
                    st.vm = lif.e_l;
                    proposals[j] = f64::NEG_INFINITY;
                    continue;
                }
                proposals[j] = st.heun(d.current(), d.current_next(), lif);
                st.vm = proposals[j];
                if proposals[j] >= self.homeostasis.thresholds[j] && winner.is_none_or(|w| proposals[j] > proposals[w])
                {
                    winner = Some(j);
                }
            }
            for d in &mut self.drives {
                d.advance();
            }
            let Some(w) = winner else { continue };
            let t_spike = t + lif.dt;
            for st in states.iter_mut() {
                st.hold(t_spike + cfg.wta_block, lif);
            }
            states[w].fire(t_spike, lif);
            out.spikes.push((t_spike, w));
            out.counts[w] += 1;
            if learn {
                self.homeostasis.counts[w] += 1;
                self.learn_at(w, t_spike, trains, cfg, params, noise, rng, &mut out);
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn learn_at(
        &mut self,
        w: usize,
        t_post: f64,
        trains: &[SpikeTrain],
        cfg: &MnistConfig,
        params: &ModelParams,
        noise: Option<&NoiseConfig>,
        rng: &mut SimRng,
        out: &mut Presentation,
    ) {
        let n = self.n_inputs;
        let row = &mut self.synapses[w * n..(w + 1) * n];
        let drive = &mut self.drives[w];
        for (i, syn) in row.iter_mut().enumerate() {
            let recent = trains[i]
                .last_at_or_before(t_post + TIME_EPS)
                .filter(|&t_pre| t_post - t_pre <= cfg.potentiation_window + TIME_EPS);
            let dt = match recent {
                Some(t_pre) => {
                    out.potentiations += 1;
                    t_post - t_pre
                }
                None => {
                    out.depressions += 1;
                    cfg.depression_dt
                }
            };
            let dg = syn.update(dt, params, noise, rng);
            if dg != 0.0 {
                drive.change_weight(i, self.kappa * dg);
            }
        }
    }
}

/// Label per output: the digit that drew most of its spikes, ties to the
/// lower digit, `None` for a silent neuron.
pub fn assign_labels(counts: &[[u64; 10]]) -> Vec<Option<u8>> {
    counts
        .iter()
        .map(|c| {
            let (digit, &best) = c.iter().enumerate().rev().max_by_key(|&(_, v)| v).expect("ten digits");
            (best > 0).then_some(digit as u8)
        })
        .collect()
}

/// Predicted digit: label of the output with the most spikes, ties to the
/// lower index. Silent networks and unlabeled winners predict nothing.
pub fn predict(counts: &[u64], labels: &[Option<u8>]) -> Option<u8> {
    let (best, &n) = counts.iter().enumerate().rev().max_by_key(|&(_, c)| c)?;
    if n == 0 {
        return None;
    }
    labels[best]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub silent: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Classify `indices` of `data` with learning off.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &mut MnistNet,
    labels: &[Option<u8>],
    data: &Dataset,
    indices: &[usize],
    cfg: &MnistConfig,
    params: &ModelParams,
    lif: &LifParams,
) -> Result<Accuracy> {
    let mut acc = Accuracy::default();
    let mut rng = stream_rng(0, Stream::Noise, &[u64::MAX]);
    for &k in indices {
        let trains = encode_image(data.images.image(k), cfg)?;
        let p = net.present(&trains, cfg, params, lif, false, None, &mut rng)?;
        acc.total += 1;
        if p.spikes.is_empty() {
            acc.silent += 1;
        }
        if predict(&p.counts, labels) == Some(data.labels[k]) {
            acc.correct += 1;
        }
    }
    Ok(acc)
}

/// Per-epoch outcome of [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistEpoch {
    pub epoch: usize,
    pub labels: Vec<Option<u8>>,
    pub accuracy: Accuracy,
    pub train_spikes: u64,
    pub silent_train_images: usize,
    pub thresholds: Vec<f64>,
}

/// Train for `cfg.epochs` epochs on the first `cfg.train_subset` images of
/// `train_set`, relabeling and testing on the first `cfg.test_subset` images
/// of `test_set` after each epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &mut MnistNet,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &MnistConfig,
    params: &ModelParams,
    lif: &LifParams,
    seed: u64,
    mut on_epoch: impl FnMut(&MnistNet, &MnistEpoch) -> Result<()>,
) -> Result<Vec<MnistEpoch>> {
    let n_train = cfg.train_subset.min(train_set.len());
    let n_test = cfg.test_subset.min(test_set.len());
    let test_idx: Vec<usize> = (0..n_test).collect();
    let noise = cfg.noise();
    let label_from = n_train.saturating_sub(cfg.label_window.min(n_train));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut seen = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
        let mut rng = stream_rng(seed, Stream::Noise, &[epoch as u64]);
        let mut label_counts = vec![[0u64; 10]; net.n_outputs];
        let (mut spikes, mut silent) = (0u64, 0usize);
        for (pos, &k) in order.iter().enumerate() {
            let trains = encode_image(train_set.images.image(k), cfg)?;
            let p = net.present(&trains, cfg, params, lif, true, noise.as_ref(), &mut rng)?;
            spikes += p.spikes.len() as u64;
            silent += p.spikes.is_empty() as usize;
            if pos >= label_from {
                let digit = train_set.labels[k] as usize;
                for (c, &n) in label_counts.iter_mut().zip(&p.counts) {
                    c[digit] += n;
                }
            }
            seen += 1;
            if seen.is_multiple_of(cfg.homeostasis_period) {
                homeostasis_step(&mut net.homeostasis, cfg.homeostasis_gain, lif);
            }
        }
        let labels = assign_labels(&label_counts);
        let accuracy = evaluate(net, &labels, test_set, &test_idx, cfg, params, lif)?;
        let record = MnistEpoch {
            epoch,
            labels,
            accuracy,
            train_spikes: spikes,
            silent_train_images: silent,
            thresholds: net.homeostasis.thresholds.clone(),
        };
        on_epoch(net, &record)?;
        history.push(record);
    }
    Ok(history)
}

/// Mean binarized image per digit over the first `n` images.
pub fn digit_prototypes(data: &Dataset, n: usize, level: u8) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; IMAGE_PIXELS]; 10];
    let mut counts = [0usize; 10];
    for k in 0..n.min(data.len()) {
        let d = data.labels[k] as usize;
        counts[d] += 1;
        for (s, &p) in sums[d].iter_mut().zip(data.images.image(k)) {
            *s += (p >= level) as u8 as f64;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fraction of labeled outputs whose weights are closer (by cosine) to their
/// own digit's prototype than to any other digit's.
pub fn prototype_agreement(
    net: &MnistNet,
    labels: &[Option<u8>],
    prototypes: &[Vec<f64>],
    params: &ModelParams,
) -> Option<f64> {
    let mut assigned = 0;
    let mut agree = 0;
    for (j, label) in labels.iter().enumerate() {
        let Some(label) = label else { continue };
        assigned += 1;
        let w = net.weight_vector(j, params);
        let sims: Vec<f64> = prototypes.iter().map(|p| cosine(&w, p)).collect();
        let own = sims[*label as usize];
        if sims.iter().enumerate().all(|(d, &s)| d == *label as usize || own > s) {
            agree += 1;
        }
    }
    (assigned > 0).then(|| agree as f64 / assigned as f64)
}
