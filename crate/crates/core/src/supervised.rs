//! Supervised spike-timing training with device-model plasticity.
//!
//! A teacher spike potentiates every synapse by the model update for the time
//! elapsed since that synapse's most recent input spike; an observed output
//! spike depresses them the same way. An observed spike that coincides with a
//! teacher spike (within a configurable window) cancels both updates.
//!
//! Weights are signed around a reference conductance, `w = κ (G - G_ref)`, so
//! each unipolar device can act as an excitatory or an inhibitory synapse.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device_model::{DeviceState, ModelParams, MultiDeviceSynapse, NoiseConfig};
use crate::error::{Error, Result};
use crate::neuron::{merge_trains, poisson_train, syn_current, LifParams, LifState, SpikeTrain, SynapticDrive};
use crate::rng::{stream_rng, SimRng, Stream};

const TIME_EPS: f64 = 1e-9;

/// Pixel level at which a letter pixel counts as on.
pub const ON_LEVEL: u8 = 128;

/// Trainer settings that the model constants do not fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    /// Conductance-to-current scale κ (A per S).
    pub kappa: f64,
    /// Teacher and output spikes closer than this (ms) count as coincident.
    pub coincidence_window: f64,
    /// Log-normal spread of the initial conductances around `G_ref`.
    pub init_spread: f64,
    /// Programming noise as a fraction of the mean update.
    pub sigma_fraction: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            kappa: 7.0e-6,
            coincidence_window: 2.5,
            init_spread: 0.1,
            sigma_fraction: 0.0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::config("supervised kappa must be positive"));
        }
        if !(self.coincidence_window >= 0.0 && self.init_spread >= 0.0) {
            return Err(Error::config("coincidence window and init spread must be >= 0"));
        }
        NoiseConfig::new(self.sigma_fraction, 0).map(|_| ())
    }
}

/// Reads a synapse as a signed weight around the reference conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BipolarSynapseView {
    pub g_ref: f64,
}

impl BipolarSynapseView {
    pub fn new(params: &ModelParams) -> Self {
        Self { g_ref: params.g_ref() }
    }

    /// Weight in amperes: `κ (Σ G_j - n G_ref)`.
    pub fn weight(&self, syn: &MultiDeviceSynapse, kappa: f64) -> f64 {
        kappa * (syn.total_conductance() - syn.len() as f64 * self.g_ref)
    }
}

/// Inputs and teacher trains for an `N x M` network.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedTask {
    pub inputs: Vec<SpikeTrain>,
    pub desired: Vec<SpikeTrain>,
    /// Pattern length (ms).
    pub duration: f64,
    pub epochs: usize,
    /// Allowed timing error of a hit (ms).
    pub match_tolerance: f64,
}

impl SupervisedTask {
    pub fn new(
        inputs: Vec<SpikeTrain>,
        desired: Vec<SpikeTrain>,
        duration: f64,
        epochs: usize,
        match_tolerance: f64,
    ) -> Result<Self> {
        if inputs.is_empty() || desired.is_empty() {
            return Err(Error::domain("a task needs at least one input and one output"));
        }
        if !(match_tolerance > 0.0) || !(duration > 0.0) {
            return Err(Error::domain("duration and match tolerance must be positive"));
        }
        Ok(Self {
            inputs,
            desired,
            duration,
            epochs,
            match_tolerance,
        })
    }

    /// `n_inputs x n_outputs` task: Poisson inputs and, per output, `n_desired`
    /// teacher spikes placed uniformly at random, at least `min_gap` ms apart
    /// and from the edges.
    #[allow(clippy::too_many_arguments)]
    pub fn poisson<R: Rng + ?Sized>(
        n_inputs: usize,
        n_outputs: usize,
        input_rate: f64,
        duration: f64,
        n_desired: usize,
        min_gap: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let inputs = (0..n_inputs)
            .map(|_| poisson_train(input_rate, duration, rng))
            .collect::<Result<Vec<_>>>()?;
        let lo = min_gap;
        let hi = duration - min_gap;
        if n_desired > 0 && (hi - lo) < min_gap * (n_desired - 1) as f64 {
            return Err(Error::domain("teacher spikes do not fit with the requested gap"));
        }
        let mut desired = Vec::with_capacity(n_outputs);
        for _ in 0..n_outputs {
            let mut times: Vec<f64> = Vec::with_capacity(n_desired);
            while times.len() < n_desired {
                let t: f64 = rng.gen_range(lo..hi);
                let t = (t * 10.0).round() / 10.0;
                if times.iter().all(|&s| (s - t).abs() >= min_gap) {
                    times.push(t);
                }
            }
            desired.push(SpikeTrain::from_unsorted(times)?);
        }
        Self::new(inputs, desired, duration, 0, 10.0)
    }
}

/// Hit/miss/spurious counts of an observed train against a desired one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingScore {
    pub hits: usize,
    pub misses: usize,
    pub spurious: usize,
}

impl TimingScore {
    pub fn perfect(&self) -> bool {
        self.misses == 0 && self.spurious == 0
    }

    fn add(&mut self, other: &TimingScore) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.spurious += other.spurious;
    }
}

/// Greedy one-to-one matching in time order: each desired spike takes the
/// earliest unmatched observed spike within `±tol`.
pub fn evaluate_timing(observed: &SpikeTrain, desired: &SpikeTrain, tol: f64) -> TimingScore {
    let obs = observed.times();
    let mut used = vec![false; obs.len()];
    let mut hits = 0;
    let mut start = 0;
    for &d in desired.times() {
        while start < obs.len() && obs[start] < d - tol {
            start += 1;
        }
        let mut k = start;
        while k < obs.len() && obs[k] <= d + tol {
            if !used[k] {
                used[k] = true;
                hits += 1;
                break;
            }
            k += 1;
        }
    }
    TimingScore {
        hits,
        misses: desired.len() - hits,
        spurious: obs.len() - hits,
    }
}

/// Fully connected `n_inputs x n_outputs` network of bipolar synapses.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedNet {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Row-major: `synapses[out * n_inputs + input]`.
    pub synapses: Vec<MultiDeviceSynapse>,
    pub view: BipolarSynapseView,
    pub kappa: f64,
}

impl SupervisedNet {
    /// Conductances drawn log-normally around `G_ref` and clamped.
    pub fn init<R: Rng + ?Sized>(
        n_inputs: usize,
        n_outputs: usize,
        params: &ModelParams,
        cfg: &SupervisedConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let view = BipolarSynapseView::new(params);
        let spread = LogNormal::new(view.g_ref.ln(), cfg.init_spread).map_err(|e| Error::domain(e.to_string()))?;
        let synapses = (0..n_inputs * n_outputs)
            .map(|_| {
                let g = spread.sample(rng);
                MultiDeviceSynapse::new(vec![DeviceState::clamped(g, params)])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_inputs,
            n_outputs,
            synapses,
            view,
            kappa: cfg.kappa,
        })
    }

    /// Network from explicit single-device conductances, row-major.
    pub fn from_conductances(
        n_inputs: usize,
        n_outputs: usize,
        conductances: &[f64],
        params: &ModelParams,
        kappa: f64,
    ) -> Result<Self> {
        if conductances.len() != n_inputs * n_outputs {
            return Err(Error::domain("conductance count does not match network shape"));
        }
        let synapses = conductances
            .iter()
            .map(|&g| MultiDeviceSynapse::new(vec![DeviceState::new(g, params)?]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_inputs,
            n_outputs,
            synapses,
            view: BipolarSynapseView::new(params),
            kappa,
        })
    }

    pub fn row(&self, out: usize) -> &[MultiDeviceSynapse] {
        &self.synapses[out * self.n_inputs..(out + 1) * self.n_inputs]
    }

    pub fn weights(&self, out: usize) -> Vec<f64> {
        self.row(out).iter().map(|s| self.view.weight(s, self.kappa)).collect()
    }

    pub fn conductances(&self) -> Vec<f64> {
        self.synapses
            .iter()
            .flat_map(|s| s.devices().iter().map(|d| d.conductance()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Potentiation,
    Depression,
}

/// One programming event of one synapse, for inspection of training traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub time: f64,
    pub input: usize,
    pub kind: UpdateKind,
    pub delta_g: f64,
}

/// What happened at one output during one pass over the pattern.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputEpoch {
    pub observed: SpikeTrain,
    pub score: TimingScore,
    pub potentiation_events: usize,
    pub depression_events: usize,
    pub coincidences: usize,
    /// Number of individual synapse updates issued.
    pub synapse_updates: usize,
    pub sum_abs_dg: f64,
    pub trace: Vec<(f64, f64)>,
    pub updates: Vec<UpdateRecord>,
}

/// Aggregates over all outputs of one epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub outputs: Vec<OutputEpoch>,
    pub score: TimingScore,
    /// Mean |ΔG| (S) over issued synapse updates.
    pub mean_abs_dg: f64,
}

impl EpochStats {
    fn collect(epoch: usize, outputs: Vec<OutputEpoch>) -> Self {
        let mut score = TimingScore::default();
        let (mut total, mut count) = (0.0, 0usize);
        for o in &outputs {
            score.add(&o.score);
            total += o.sum_abs_dg;
            count += o.synapse_updates;
        }
        let mean_abs_dg = if count > 0 { total / count as f64 } else { 0.0 };
        Self {
            epoch,
            outputs,
            score,
            mean_abs_dg,
        }
    }
}

/// Extra outputs to record while simulating.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Recording {
    pub membrane: bool,
    pub updates: bool,
}

/// Simulates one output neuron over one presentation, optionally learning.
struct OutputRun<'a> {
    params: &'a ModelParams,
    lif: &'a LifParams,
    cfg: &'a SupervisedConfig,
    view: BipolarSynapseView,
    kappa: f64,
    inputs: &'a [SpikeTrain],
    events: &'a [(f64, usize)],
    duration: f64,
    tolerance: f64,
}

impl OutputRun<'_> {
    #[allow(clippy::too_many_arguments)]
    fn program(
        &self,
        row: &mut [MultiDeviceSynapse],
        t_event: f64,
        kind: UpdateKind,
        noise: Option<&NoiseConfig>,
        rng: &mut SimRng,
        out: &mut OutputEpoch,
        record: bool,
    ) {
        for (i, syn) in row.iter_mut().enumerate() {
            let Some(t_in) = self.inputs[i].last_at_or_before(t_event + TIME_EPS) else {
                continue;
            };
            let elapsed = (t_event - t_in).max(0.0);
            let dt = match kind {
                UpdateKind::Potentiation => elapsed,
                UpdateKind::Depression => -elapsed,
            };
            let dg = syn.update(dt, self.params, noise, rng);
            out.synapse_updates += 1;
            out.sum_abs_dg += dg.abs();
            if record && dg != 0.0 {
                out.updates.push(UpdateRecord {
                    time: t_event,
                    input: i,
                    kind,
                    delta_g: dg,
                });
            }
        }
        match kind {
            UpdateKind::Potentiation => out.potentiation_events += 1,
            UpdateKind::Depression => out.depression_events += 1,
        }
    }

    /// Output spikes of the neuron driven through `row` with fixed weights.
    fn simulate(&self, row: &[MultiDeviceSynapse], out: &mut OutputEpoch, membrane: bool) -> SpikeTrain {
        let lif = self.lif;
        let mut drive = SynapticDrive::new(row.len(), lif);
        let mut state = LifState::at_rest(lif);
        let threshold = lif.threshold();
        let n_steps = (self.duration / lif.dt).round() as u64;
        if membrane {
            out.trace.push((0.0, state.vm));
        }
        let mut next_event = 0;
        for _ in 0..n_steps {
            let t = drive.now();
            while next_event < self.events.len() && self.events[next_event].0 <= t + TIME_EPS {
                let (ts, ch) = self.events[next_event];
                drive.add_spike(ch, self.view.weight(&row[ch], self.kappa), ts);
                next_event += 1;
            }
            let end = t + lif.dt;
            let arriving: f64 = self.events[next_event..]
                .iter()
                .take_while(|e| e.0 <= end + TIME_EPS)
                .map(|&(ts, ch)| syn_current(self.view.weight(&row[ch], self.kappa), end - ts, lif))
                .sum();
            state.step(t, drive.current(), drive.current_next() + arriving, threshold, lif);
            drive.advance();
            if membrane {
                out.trace.push((drive.now(), state.vm));
            }
        }
        state.spikes
    }

    /// Simulate one presentation, then replay teacher and output spikes in
    /// time order, programming the synapses at each event.
    fn run(
        &self,
        row: &mut [MultiDeviceSynapse],
        desired: &SpikeTrain,
        learn: bool,
        rng: &mut SimRng,
        recording: Recording,
    ) -> OutputEpoch {
        let mut out = OutputEpoch::default();
        out.observed = self.simulate(row, &mut out, recording.membrane);
        out.score = evaluate_timing(&out.observed, desired, self.tolerance);
        if !learn {
            return out;
        }
        let noise = (self.cfg.sigma_fraction > 0.0).then_some(NoiseConfig {
            sigma_fraction: self.cfg.sigma_fraction,
            seed: 0,
        });
        let (events, coincidences) = replay_events(out.observed.times(), desired.times(), self.cfg.coincidence_window);
        out.coincidences = coincidences;
        for (t, kind) in events {
            self.program(row, t, kind, noise.as_ref(), rng, &mut out, recording.updates);
        }
        out
    }
}

/// Time-ordered update events for one output. An observed spike within
/// `window` of a teacher spike (nearest first) cancels both.
pub fn replay_events(observed: &[f64], desired: &[f64], window: f64) -> (Vec<(f64, UpdateKind)>, usize) {
    let mut obs_used = vec![false; observed.len()];
    let mut des_used = vec![false; desired.len()];
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &o) in observed.iter().enumerate() {
        for (j, &d) in desired.iter().enumerate() {
            let gap = (o - d).abs();
            if gap <= window + TIME_EPS {
                pairs.push((gap, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut coincidences = 0;
    for (_, i, j) in pairs {
        if !obs_used[i] && !des_used[j] {
            obs_used[i] = true;
            des_used[j] = true;
            coincidences += 1;
        }
    }
    let mut events: Vec<(f64, UpdateKind)> = desired
        .iter()
        .zip(&des_used)
        .filter(|(_, &u)| !u)
        .map(|(&t, _)| (t, UpdateKind::Potentiation))
        .chain(
            observed
                .iter()
                .zip(&obs_used)
                .filter(|(_, &u)| !u)
                .map(|(&t, _)| (t, UpdateKind::Depression)),
        )
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    (events, coincidences)
}

/// Present one pattern to every output neuron, in parallel.
#[allow(clippy::too_many_arguments)]
fn present(
    net: &mut SupervisedNet,
    inputs: &[SpikeTrain],
    desired: &[SpikeTrain],
    duration: f64,
    tolerance: f64,
    params: &ModelParams,
    lif: &LifParams,
    cfg: &SupervisedConfig,
    learn: bool,
    rng_path: (u64, u64, u64),
    recording: Recording,
) -> Result<Vec<OutputEpoch>> {
    if inputs.len() != net.n_inputs || desired.len() != net.n_outputs {
        return Err(Error::domain(format!(
            "task shape {}x{} does not match network {}x{}",
            inputs.len(),
            desired.len(),
            net.n_inputs,
            net.n_outputs
        )));
    }
    let events = merge_trains(inputs);
    let runner = OutputRun {
        params,
        lif,
        cfg,
        view: net.view,
        kappa: net.kappa,
        inputs,
        events: &events,
        duration,
        tolerance,
    };
    let (seed, epoch, pattern) = rng_path;
    let n_inputs = net.n_inputs;
    Ok(net
        .synapses
        .par_chunks_mut(n_inputs)
        .zip(desired.par_iter())
        .enumerate()
        .map(|(m, (row, teacher))| {
            let mut rng = stream_rng(seed, Stream::Noise, &[epoch, pattern, m as u64]);
            runner.run(row, teacher, learn, &mut rng, recording)
        })
        .collect())
}

/// One training epoch over a single pattern, with online updates.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &mut SupervisedNet,
    task: &SupervisedTask,
    params: &ModelParams,
    lif: &LifParams,
    cfg: &SupervisedConfig,
    seed: u64,
    epoch: usize,
    recording: Recording,
) -> Result<EpochStats> {
    let outputs = present(
        net,
        &task.inputs,
        &task.desired,
        task.duration,
        task.match_tolerance,
        params,
        lif,
        cfg,
        true,
        (seed, epoch as u64, 0),
        recording,
    )?;
    Ok(EpochStats::collect(epoch, outputs))
}

/// Run the network on a pattern without plasticity.
pub fn simulate(
    net: &SupervisedNet,
    task: &SupervisedTask,
    params: &ModelParams,
    lif: &LifParams,
    cfg: &SupervisedConfig,
    recording: Recording,
) -> Result<EpochStats> {
    let mut frozen = net.clone();
    let outputs = present(
        &mut frozen,
        &task.inputs,
        &task.desired,
        task.duration,
        task.match_tolerance,
        params,
        lif,
        cfg,
        false,
        (0, 0, 0),
        recording,
    )?;
    Ok(EpochStats::collect(0, outputs))
}

/// Training history of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub epochs: Vec<EpochStats>,
    /// Score of a frozen pass after each epoch.
    pub evaluations: Vec<TimingScore>,
    /// First epoch (1-based) after which a frozen pass matched every teacher
    /// spike with no spurious spikes.
    pub converged_at: Option<usize>,
}

/// Train for up to `task.epochs` epochs, scoring the network with plasticity
/// off after each one. Stops at the first perfect score when `stop_on_success`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &mut SupervisedNet,
    task: &SupervisedTask,
    params: &ModelParams,
    lif: &LifParams,
    cfg: &SupervisedConfig,
    seed: u64,
    stop_on_success: bool,
    mut on_epoch: impl FnMut(&SupervisedNet, &EpochStats, &TimingScore) -> Result<()>,
) -> Result<TrainingRun> {
    let mut epochs = Vec::with_capacity(task.epochs);
    let mut evaluations = Vec::with_capacity(task.epochs);
    let mut converged_at = None;
    for e in 1..=task.epochs {
        let stats = train_epoch(net, task, params, lif, cfg, seed, e, Recording::default())?;
        let eval = simulate(net, task, params, lif, cfg, Recording::default())?.score;
        on_epoch(net, &stats, &eval)?;
        epochs.push(stats);
        evaluations.push(eval);
        if eval.perfect() && converged_at.is_none() {
            converged_at = Some(e);
            if stop_on_success {
                break;
            }
        }
    }
    Ok(TrainingRun {
        epochs,
        evaluations,
        converged_at,
    })
}

/// Grayscale image, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::domain("pixel count does not match image size"));
        }
        Ok(Self { width, height, pixels })
    }

    /// Indices of pixels at or above `level`.
    pub fn on_set(&self, level: u8) -> Vec<usize> {
        (0..self.pixels.len()).filter(|&i| self.pixels[i] >= level).collect()
    }
}

/// Settings of the letter sequence predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    /// Letters in presentation order; each one predicts the next.
    pub sequence: String,
    /// Poisson rate of a full-intensity pixel (Hz).
    pub max_rate: f64,
    /// Length of one presentation (ms).
    pub presentation: f64,
    pub epochs: usize,
    /// Presentations averaged into each output rate map.
    pub eval_trials: usize,
    pub trainer: SupervisedConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            sequence: "NJIT".into(),
            max_rate: 100.0,
            presentation: 400.0,
            epochs: 40,
            eval_trials: 5,
            trainer: SupervisedConfig {
                kappa: 2.0e-6,
                ..SupervisedConfig::default()
            },
        }
    }
}

/// Poisson trains with rates proportional to pixel intensity.
pub fn rate_encode<R: Rng + ?Sized>(
    img: &GrayImage,
    max_rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<Vec<SpikeTrain>> {
    img.pixels
        .iter()
        .map(|&p| poisson_train(max_rate * p as f64 / 255.0, duration, rng))
        .collect()
}

/// Teacher trains: on-pixels (`>= 128`) fire at their intensity's rate, the
/// rest stay silent.
pub fn teacher_encode<R: Rng + ?Sized>(
    img: &GrayImage,
    max_rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<Vec<SpikeTrain>> {
    img.pixels
        .iter()
        .map(|&p| {
            if p >= ON_LEVEL {
                poisson_train(max_rate * p as f64 / 255.0, duration, rng)
            } else {
                Ok(SpikeTrain::empty())
            }
        })
        .collect()
}

/// Output rates observed when one letter is presented.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    pub input: char,
    pub target: Option<char>,
    pub input_rates: Vec<f64>,
    pub output_rates: Vec<f64>,
}

impl RateMap {
    /// Pixels with the `k` highest nonzero output rates (ties to lower index).
    pub fn top_pixels(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.output_rates.len())
            .filter(|&i| self.output_rates[i] > 0.0)
            .collect();
        idx.sort_by(|&a, &b| self.output_rates[b].total_cmp(&self.output_rates[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// `|A ∩ B| / |A ∪ B|`, zero for two empty sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// The letter-to-letter predictor: one square image per letter, each letter's
/// image drives the inputs and the next letter's image is the teacher.
#[derive(Debug, Clone)]
pub struct SequencePredictor {
    pub letters: Vec<(char, GrayImage)>,
    pub net: SupervisedNet,
    pub cfg: SequenceConfig,
}

impl SequencePredictor {
    pub fn new(letters: Vec<(char, GrayImage)>, cfg: SequenceConfig, params: &ModelParams, seed: u64) -> Result<Self> {
        let Some((_, first)) = letters.first() else {
            return Err(Error::config("sequence needs at least one letter image"));
        };
        let (w, h) = (first.width, first.height);
        if letters.iter().any(|(_, img)| img.width != w || img.height != h) {
            return Err(Error::config("all letter images must share one size"));
        }
        for ch in cfg.sequence.chars() {
            if !letters.iter().any(|(c, _)| *c == ch) {
                return Err(Error::config(format!("no image for letter {ch:?}")));
            }
        }
        if cfg.sequence.chars().count() < 2 {
            return Err(Error::config("sequence needs at least two letters"));
        }
        cfg.trainer.validate()?;
        let n = w * h;
        let mut rng = stream_rng(seed, Stream::Init, &[]);
        let net = SupervisedNet::init(n, n, params, &cfg.trainer, &mut rng)?;
        Ok(Self { letters, net, cfg })
    }

    pub fn image(&self, ch: char) -> &GrayImage {
        &self.letters.iter().find(|(c, _)| *c == ch).expect("validated letter").1
    }

    /// `(input, target)` letter pairs in sequence order.
    pub fn pairs(&self) -> Vec<(char, char)> {
        let s: Vec<char> = self.cfg.sequence.chars().collect();
        s.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Successor of `ch` in the sequence.
    pub fn target_of(&self, ch: char) -> Option<char> {
        self.pairs().into_iter().find(|(a, _)| *a == ch).map(|(_, b)| b)
    }

    /// One epoch: every pair once, fresh Poisson trains each time.
    pub fn train_epoch(
        &mut self,
        params: &ModelParams,
        lif: &LifParams,
        seed: u64,
        epoch: usize,
    ) -> Result<EpochStats> {
        let mut outputs_total = Vec::new();
        for (k, (src, dst)) in self.pairs().into_iter().enumerate() {
            let path = [epoch as u64, k as u64];
            let mut in_rng = stream_rng(seed, Stream::Inputs, &path);
            let mut teach_rng = stream_rng(seed, Stream::Teacher, &path);
            let d = self.cfg.presentation;
            let inputs = rate_encode(self.image(src), self.cfg.max_rate, d, &mut in_rng)?;
            let desired = teacher_encode(self.image(dst), self.cfg.max_rate, d, &mut teach_rng)?;
            let outs = present(
                &mut self.net,
                &inputs,
                &desired,
                d,
                10.0,
                params,
                lif,
                &self.cfg.trainer,
                true,
                (seed, epoch as u64, k as u64),
                Recording::default(),
            )?;
            outputs_total.extend(outs);
        }
        Ok(EpochStats::collect(epoch, outputs_total))
    }

    /// Present `ch` without plasticity and measure output rates (Hz),
    /// averaged over `eval_trials` independent input draws.
    pub fn rate_map(&self, ch: char, params: &ModelParams, lif: &LifParams, seed: u64) -> Result<RateMap> {
        let d = self.cfg.presentation;
        let trials = self.cfg.eval_trials.max(1);
        let img = self.image(ch);
        let silent = vec![SpikeTrain::empty(); self.net.n_outputs];
        let mut input_counts = vec![0usize; self.net.n_inputs];
        let mut output_counts = vec![0usize; self.net.n_outputs];
        let mut frozen = self.net.clone();
        for trial in 0..trials {
            let mut rng = stream_rng(seed, Stream::Inputs, &[u64::MAX, ch as u64, trial as u64]);
            let inputs = rate_encode(img, self.cfg.max_rate, d, &mut rng)?;
            let outs = present(
                &mut frozen,
                &inputs,
                &silent,
                d,
                10.0,
                params,
                lif,
                &self.cfg.trainer,
                false,
                (seed, 0, 0),
                Recording::default(),
            )?;
            for (c, t) in input_counts.iter_mut().zip(&inputs) {
                *c += t.len();
            }
            for (c, o) in output_counts.iter_mut().zip(&outs) {
                *c += o.observed.len();
            }
        }
        let to_hz = |n: &usize| *n as f64 * 1000.0 / (d * trials as f64);
        Ok(RateMap {
            input: ch,
            target: self.target_of(ch),
            input_rates: input_counts.iter().map(to_hz).collect(),
            output_rates: output_counts.iter().map(to_hz).collect(),
        })
    }

    /// Jaccard overlap between the top-rate output pixels for `ch` and the
    /// on-pixels of its successor.
    pub fn prediction_overlap(&self, map: &RateMap) -> Option<f64> {
        let target = self.image(map.target?).on_set(ON_LEVEL);
        let top = map.top_pixels(target.len());
        Some(jaccard(&top, &target))
    }
}

/// Bundled 30x30 letter images for the N→J→I→T sequence.
pub fn bundled_letters() -> Result<Vec<(char, GrayImage)>> {
    const FILES: [(char, &[u8]); 4] = [
        ('N', include_bytes!("../assets/letters/N.pgm")),
        ('J', include_bytes!("../assets/letters/J.pgm")),
        ('I', include_bytes!("../assets/letters/I.pgm")),
        ('T', include_bytes!("../assets/letters/T.pgm")),
    ];
    FILES
        .iter()
        .map(|(c, bytes)| Ok((*c, crate::harness::pgm::decode(bytes, "<bundled letter>")?)))
        .collect()
}
