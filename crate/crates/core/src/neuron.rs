//! Leaky integrate-and-fire neurons driven by double-exponential synaptic
//! currents, integrated with a fixed-step second-order Runge-Kutta (Heun)
//! scheme, plus Poisson spike encoding.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, non-negative spike times in ms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpikeTrain {
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::domain("spike times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("spike times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts and deduplicates arbitrary times.
    pub fn from_unsorted(mut times: Vec<f64>) -> Result<Self> {
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a spike after the current last one.
    pub fn push(&mut self, t: f64) -> Result<()> {
        match self.times.last() {
            Some(&last) if t <= last => Err(Error::domain(format!("spike at {t} ms does not follow {last} ms"))),
            _ if !(t >= 0.0) => Err(Error::domain("negative spike time")),
            _ => {
                self.times.push(t);
                Ok(())
            }
        }
    }

    /// Most recent spike at or before `t`.
    pub fn last_at_or_before(&self, t: f64) -> Option<f64> {
        let idx = self.times.partition_point(|&s| s <= t);
        idx.checked_sub(1).map(|i| self.times[i])
    }
}

/// Homogeneous Poisson spike train at `rate` Hz over `[0, duration)` ms.
pub fn poisson_train<R: Rng + ?Sized>(rate: f64, duration: f64, rng: &mut R) -> Result<SpikeTrain> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::domain(format!("rate {rate} Hz must be non-negative")));
    }
    if rate == 0.0 {
        return Ok(SpikeTrain::empty());
    }
    let isi = Exp::new(rate / 1000.0).map_err(|e| Error::domain(e.to_string()))?;
    let mut times = Vec::with_capacity((rate * duration / 1000.0).ceil() as usize + 4);
    let mut t = isi.sample(rng);
    while t < duration {
        if times.last().is_none_or(|&last| t > last) {
            times.push(t);
        }
        t += isi.sample(rng);
    }
    Ok(SpikeTrain { times })
}

/// Membrane and synapse constants. SI units except times, which are ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    /// Membrane capacitance (F).
    pub cm: f64,
    /// Leak conductance (S).
    pub g_l: f64,
    /// Firing threshold (V, absolute membrane voltage).
    pub theta: f64,
    /// Resting potential (V).
    pub e_l: f64,
    pub t_refrac: f64,
    /// Integration step.
    pub dt: f64,
    /// Slow and fast synaptic kernel time constants.
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            cm: 300e-12,
            g_l: 30e-9,
            theta: 20e-3,
            e_l: -70e-3,
            t_refrac: 5.0,
            dt: 0.1,
            tau1: 5.0,
            tau2: 1.25,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cm > 0.0 && self.g_l > 0.0) {
            return Err(Error::config("LIF needs cm > 0 and g_l > 0"));
        }
        if !(self.tau1 > self.tau2 && self.tau2 > 0.0) {
            return Err(Error::config("LIF needs tau1 > tau2 > 0"));
        }
        if !(self.dt > 0.0 && self.t_refrac >= 0.0) {
            return Err(Error::config("LIF needs dt > 0 and t_refrac >= 0"));
        }
        Ok(())
    }

    /// Membrane time constant in ms.
    pub fn tau_m(&self) -> f64 {
        self.cm / self.g_l * 1e3
    }

    pub fn threshold(&self) -> f64 {
        self.theta
    }

    /// Time of the kernel maximum, `ln(τ1/τ2) τ1 τ2 / (τ1 - τ2)`.
    pub fn kernel_peak_time(&self) -> f64 {
        (self.tau1 / self.tau2).ln() * self.tau1 * self.tau2 / (self.tau1 - self.tau2)
    }

    fn dvdt(&self, v: f64, current: f64) -> f64 {
        (current - self.g_l * (v - self.e_l)) / self.cm
    }
}

/// Synaptic current `w (exp(-t/τ1) - exp(-t/τ2))` a time `t` ms after a spike.
pub fn syn_current(w: f64, t_since_spike: f64, p: &LifParams) -> f64 {
    if t_since_spike < 0.0 {
        return 0.0;
    }
    w * ((-t_since_spike / p.tau1).exp() - (-t_since_spike / p.tau2).exp())
}

/// Membrane state of one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub vm: f64,
    pub refractory_until: f64,
    pub spikes: SpikeTrain,
}

// Guards step-time comparisons against accumulated round-off.
const TIME_EPS: f64 = 1e-9;

impl LifState {
    pub fn at_rest(p: &LifParams) -> Self {
        Self {
            vm: p.e_l,
            refractory_until: f64::NEG_INFINITY,
            spikes: SpikeTrain::empty(),
        }
    }

    /// Whether the step starting at `t` is clamped at rest.
    pub fn is_held(&self, t: f64) -> bool {
        t < self.refractory_until - TIME_EPS
    }

    /// Heun step of `dV/dt = (I - g_L (V - E_L)) / C_m` over `p.dt`, given the
    /// input current at the start and the end of the step.
    pub fn heun(&self, i_now: f64, i_next: f64, p: &LifParams) -> f64 {
        heun_over(self.vm, p.dt, i_now, i_next, p)
    }

    /// Record a spike at `t`, reset to rest and start the refractory period.
    pub fn fire(&mut self, t: f64, p: &LifParams) {
        // Spike times always move forward.
        let _ = self.spikes.push(t);
        self.vm = p.e_l;
        self.refractory_until = self.refractory_until.max(t + p.t_refrac);
    }

    /// Reset to rest and hold there until `until` (ms).
    pub fn hold(&mut self, until: f64, p: &LifParams) {
        self.vm = p.e_l;
        self.refractory_until = self.refractory_until.max(until);
    }

    /// Advance one step from `t`. Returns the spike time if the threshold was
    /// crossed during the step.
    ///
    /// A refractory period that ends inside the step releases the membrane for
    /// the remainder, and the crossing time is interpolated linearly within the
    /// step, so spike times do not snap to the grid.
    pub fn step(&mut self, t: f64, i_now: f64, i_next: f64, threshold: f64, p: &LifParams) -> Option<f64> {
        let end = t + p.dt;
        if end <= self.refractory_until + TIME_EPS {
            self.vm = p.e_l;
            return None;
        }
        let (start, i_start) = if self.is_held(t) {
            let frac = (self.refractory_until - t) / p.dt;
            (self.refractory_until, i_now + frac * (i_next - i_now))
        } else {
            (t, i_now)
        };
        let v0 = if self.is_held(t) { p.e_l } else { self.vm };
        let v1 = heun_over(v0, end - start, i_start, i_next, p);
        self.vm = v1;
        if v1 >= threshold {
            let frac = if v1 > v0 {
                ((threshold - v0) / (v1 - v0)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let t_spike = start + frac * (end - start);
            self.fire(t_spike, p);
            Some(t_spike)
        } else {
            None
        }
    }
}

fn heun_over(v: f64, dt_ms: f64, i0: f64, i1: f64, p: &LifParams) -> f64 {
    let h = dt_ms * 1e-3;
    let k1 = p.dvdt(v, i0);
    let k2 = p.dvdt(v + h * k1, i1);
    v + 0.5 * h * (k1 + k2)
}

#[derive(Debug, Clone, Copy, Default)]
struct Trace {
    time: f64,
    fast: f64,
    slow: f64,
}

/// Summed kernel current of many weighted synapses onto one neuron.
///
/// Each synapse keeps lazily decayed kernel traces; the neuron keeps the
/// weighted totals, so a step costs O(1) and a weight change O(1).
#[derive(Debug, Clone)]
pub struct SynapticDrive {
    tau1: f64,
    tau2: f64,
    dt: f64,
    decay1: f64,
    decay2: f64,
    step: u64,
    fast: f64,
    slow: f64,
    traces: Vec<Trace>,
}

impl SynapticDrive {
    pub fn new(n_synapses: usize, p: &LifParams) -> Self {
        Self {
            tau1: p.tau1,
            tau2: p.tau2,
            dt: p.dt,
            decay1: (-p.dt / p.tau1).exp(),
            decay2: (-p.dt / p.tau2).exp(),
            step: 0,
            fast: 0.0,
            slow: 0.0,
            traces: vec![Trace::default(); n_synapses],
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.fast = 0.0;
        self.slow = 0.0;
        self.traces.iter_mut().for_each(|t| *t = Trace::default());
    }

    pub fn now(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn current(&self) -> f64 {
        self.fast - self.slow
    }

    /// Current one step ahead, assuming no new spikes or weight changes.
    pub fn current_next(&self) -> f64 {
        self.fast * self.decay1 - self.slow * self.decay2
    }

    pub fn advance(&mut self) {
        self.step += 1;
        self.fast *= self.decay1;
        self.slow *= self.decay2;
    }

    fn bring_to_now(&mut self, i: usize) -> Trace {
        let now = self.now();
        let tr = &mut self.traces[i];
        let elapsed = now - tr.time;
        if elapsed != 0.0 {
            tr.fast *= (-elapsed / self.tau1).exp();
            tr.slow *= (-elapsed / self.tau2).exp();
            tr.time = now;
        }
        *tr
    }

    /// Register a spike of synapse `i` at `t_spike <= now` with weight `w` (A).
    pub fn add_spike(&mut self, i: usize, w: f64, t_spike: f64) {
        let age = (self.now() - t_spike).max(0.0);
        let e1 = (-age / self.tau1).exp();
        let e2 = (-age / self.tau2).exp();
        self.bring_to_now(i);
        let tr = &mut self.traces[i];
        tr.fast += e1;
        tr.slow += e2;
        self.fast += w * e1;
        self.slow += w * e2;
    }

    /// Apply a weight change `dw` (A) to synapse `i` from now on.
    pub fn change_weight(&mut self, i: usize, dw: f64) {
        let tr = self.bring_to_now(i);
        self.fast += dw * tr.fast;
        self.slow += dw * tr.slow;
    }
}

/// Options for [`lif_run`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_trace: bool,
    /// Constant current injected on top of the synaptic drive (A).
    pub bias_current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifRun {
    pub spikes: SpikeTrain,
    /// `(time_ms, volts)` samples, empty unless requested.
    pub trace: Vec<(f64, f64)>,
}

impl LifRun {
    /// Two-column CSV: `time_ms,volts`.
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_ms", "volts"])?;
        for (t, v) in &self.trace {
            w.write_record([format!("{t}"), format!("{v}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Merge several trains into time-ordered `(time, channel)` events.
pub fn merge_trains<'a>(trains: impl IntoIterator<Item = &'a SpikeTrain>) -> Vec<(f64, usize)> {
    let mut events: Vec<(f64, usize)> = trains
        .into_iter()
        .enumerate()
        .flat_map(|(i, tr)| tr.times().iter().map(move |&t| (t, i)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    events
}

/// Simulate one neuron for `duration` ms from rest.
///
/// `hook` runs at the start of every step and may force resets, e.g. for
/// lateral inhibition.
pub fn lif_run(
    inputs: &[(SpikeTrain, f64)],
    p: &LifParams,
    duration: f64,
    opts: RunOptions,
    mut hook: impl FnMut(f64, &mut LifState),
) -> LifRun {
    let events = merge_trains(inputs.iter().map(|(tr, _)| tr));
    let mut drive = SynapticDrive::new(inputs.len(), p);
    let mut state = LifState::at_rest(p);
    let threshold = p.threshold();
    let n_steps = (duration / p.dt).round() as u64;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.reserve(n_steps as usize + 1);
        trace.push((0.0, state.vm));
    }
    let mut next_event = 0;
    for _ in 0..n_steps {
        let t = drive.now();
        while next_event < events.len() && events[next_event].0 <= t + TIME_EPS {
            let (ts, ch) = events[next_event];
            drive.add_spike(ch, inputs[ch].1, ts);
            next_event += 1;
        }
        hook(t, &mut state);
        let i_now = drive.current() + opts.bias_current;
        // Spikes arriving inside the step already drive its end point.
        let end = t + p.dt;
        let arriving: f64 = events[next_event..]
            .iter()
            .take_while(|e| e.0 <= end + TIME_EPS)
            .map(|&(ts, ch)| syn_current(inputs[ch].1, end - ts, p))
            .sum();
        let i_next = drive.current_next() + arriving + opts.bias_current;
        state.step(t, i_now, i_next, threshold, p);
        drive.advance();
        if opts.record_trace {
            trace.push((drive.now(), state.vm));
        }
    }
    LifRun {
        spikes: state.spikes,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn p() -> LifParams {
        LifParams::default()
    }

    #[test]
    fn spike_train_validation() {
        assert!(SpikeTrain::new(vec![1.0, 2.0, 3.0]).is_ok());
        assert!(SpikeTrain::new(vec![1.0, 1.0]).is_err());
        assert!(SpikeTrain::new(vec![2.0, 1.0]).is_err());
        assert!(SpikeTrain::new(vec![-1.0]).is_err());
        let tr = SpikeTrain::from_unsorted(vec![3.0, 1.0, 3.0]).unwrap();
        assert_eq!(tr.times(), &[1.0, 3.0]);
        assert_eq!(tr.last_at_or_before(2.9), Some(1.0));
        assert_eq!(tr.last_at_or_before(3.0), Some(3.0));
        assert_eq!(tr.last_at_or_before(0.5), None);
        let mut tr = tr;
        assert!(tr.push(2.0).is_err());
        tr.push(4.0).unwrap();
    }

    #[test]
    fn zero_rate_gives_empty_train() {
        let mut rng = stream_rng(0, Stream::Inputs, &[]);
        assert!(poisson_train(0.0, 1000.0, &mut rng).unwrap().is_empty());
        assert!(poisson_train(-1.0, 1000.0, &mut rng).is_err());
    }

    #[test]
    fn poisson_count_statistics() {
        let mut total = 0usize;
        for s in 0..1000 {
            let mut rng = stream_rng(s, Stream::Inputs, &[]);
            total += poisson_train(20.0, 1000.0, &mut rng).unwrap().len();
        }
        let mean = total as f64 / 1000.0;
        // Mean of 1000 Poisson(20) counts: standard error sqrt(20/1000).
        assert!((mean - 20.0).abs() < 3.0 * (20.0f64 / 1000.0).sqrt(), "{mean}");
    }

    #[test]
    fn poisson_intervals_are_exponential() {
        let mut rng = stream_rng(11, Stream::Inputs, &[]);
        let rate = 40.0;
        let tr = poisson_train(rate, 200_000.0, &mut rng).unwrap();
        let mut isi: Vec<f64> = tr.times().windows(2).map(|w| w[1] - w[0]).collect();
        isi.sort_by(f64::total_cmp);
        let n = isi.len() as f64;
        let lambda = rate / 1000.0;
        let d = isi
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let cdf = 1.0 - (-lambda * x).exp();
                (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov-Smirnov critical value at the 1% level.
        assert!(d < 1.628 / n.sqrt(), "D = {d}, n = {n}");
    }

    #[test]
    fn kernel_shape() {
        let p = p();
        assert_eq!(syn_current(1.0, 0.0, &p), 0.0);
        assert_eq!(syn_current(1.0, -1.0, &p), 0.0);
        assert!(syn_current(1.0, 500.0, &p).abs() < 1e-40);
        let t_star = p.kernel_peak_time();
        assert!((t_star - 2.31).abs() < 0.005, "{t_star}");
        let peak = syn_current(1.0, t_star, &p);
        for dt in [-0.01, 0.01] {
            assert!(syn_current(1.0, t_star + dt, &p) < peak);
        }
    }

    #[test]
    fn drive_matches_direct_kernel_sum() {
        let p = p();
        let spikes = [(0.0, 0usize, 2e-9), (1.3, 1, -1e-9), (2.0, 0, 2e-9), (7.7, 2, 0.5e-9)];
        let mut drive = SynapticDrive::new(3, &p);
        let mut next = 0;
        for _ in 0..200 {
            let t = drive.now();
            while next < spikes.len() && spikes[next].0 <= t + 1e-9 {
                let (ts, ch, w) = spikes[next];
                drive.add_spike(ch, w, ts);
                next += 1;
            }
            let direct: f64 = spikes[..next]
                .iter()
                .map(|&(ts, _, w)| syn_current(w, t - ts, &p))
                .sum();
            assert!((drive.current() - direct).abs() < 1e-20, "t={t}");
            drive.advance();
        }
    }

    #[test]
    fn weight_change_applies_to_live_traces() {
        let p = p();
        let mut drive = SynapticDrive::new(1, &p);
        drive.add_spike(0, 1e-9, 0.0);
        for _ in 0..20 {
            drive.advance();
        }
        drive.change_weight(0, 2e-9);
        let t = drive.now();
        assert!((drive.current() - syn_current(3e-9, t, &p)).abs() < 1e-22);
    }

    #[test]
    fn resting_neuron_stays_at_rest() {
        let run = lif_run(
            &[],
            &p(),
            100.0,
            RunOptions {
                record_trace: true,
                bias_current: 0.0,
            },
            |_, _| {},
        );
        assert!(run.spikes.is_empty());
        assert!(run.trace.iter().all(|&(_, v)| v == p().e_l));
        assert_eq!(run.trace.len(), 1001);
    }

    // V(t) = E_L + (I/g_L)(1 - exp(-t/τm)) from rest, plus the refractory hold.
    fn closed_form_period(i: f64, p: &LifParams) -> f64 {
        let v_inf = i / p.g_l;
        let gap = p.threshold() - p.e_l;
        p.t_refrac + p.tau_m() * (v_inf / (v_inf - gap)).ln()
    }

    fn measured_period(i: f64, p: &LifParams) -> f64 {
        let run = lif_run(
            &[],
            p,
            2000.0,
            RunOptions {
                record_trace: false,
                bias_current: i,
            },
            |_, _| {},
        );
        let t = run.spikes.times();
        (t[t.len() - 1] - t[1]) / (t.len() - 2) as f64
    }

    #[test]
    fn constant_current_rate_matches_closed_form() {
        let p = p();
        for i in [3.0e-9, 5.4e-9, 20e-9] {
            let expect = closed_form_period(i, &p);
            let got = measured_period(i, &p);
            assert!((got - expect).abs() / expect < 0.02, "I={i}: {got} vs {expect}");
        }
        // 5.4 nA drives V_inf to twice the 90 mV gap: period τm ln 2 + t_refrac.
        assert!((closed_form_period(5.4e-9, &p) - (10.0 * 2f64.ln() + 5.0)).abs() < 1e-9);
        assert!((1000.0 / closed_form_period(5.4e-9, &p) - 83.8).abs() < 0.1);
    }

    #[test]
    fn subthreshold_current_never_fires() {
        let run = lif_run(
            &[],
            &p(),
            5000.0,
            RunOptions {
                record_trace: false,
                bias_current: 2.0e-9,
            },
            |_, _| {},
        );
        assert!(run.spikes.is_empty());
    }

    #[test]
    fn refractory_spacing() {
        let p = p();
        let run = lif_run(
            &[],
            &p,
            500.0,
            RunOptions {
                record_trace: false,
                bias_current: 50e-9,
            },
            |_, _| {},
        );
        assert!(run.spikes.len() > 10);
        for w in run.spikes.times().windows(2) {
            assert!(w[1] - w[0] >= p.t_refrac - 1e-9);
        }
    }

    #[test]
    fn subthreshold_response_is_linear_in_weight() {
        let p = p();
        let input = SpikeTrain::new(vec![1.0]).unwrap();
        let peak = |w: f64| {
            let run = lif_run(
                &[(input.clone(), w)],
                &p,
                60.0,
                RunOptions {
                    record_trace: true,
                    bias_current: 0.0,
                },
                |_, _| {},
            );
            assert!(run.spikes.is_empty());
            run.trace.iter().map(|&(_, v)| v - p.e_l).fold(0.0, f64::max)
        };
        let (one, two) = (peak(0.5e-9), peak(1.0e-9));
        assert!(one > 0.0);
        assert!((two / one - 2.0).abs() < 0.01 * 0.5);
    }

    #[test]
    fn reset_hook_can_force_rest() {
        let p = p();
        let run = lif_run(
            &[],
            &p,
            200.0,
            RunOptions {
                record_trace: false,
                bias_current: 5.4e-9,
            },
            |t, s| {
                if t < 100.0 {
                    s.hold(t + p.dt, &p);
                }
            },
        );
        assert!(run.spikes.times().iter().all(|&t| t > 100.0));
        assert!(!run.spikes.is_empty());
    }

    #[test]
    fn halving_dt_moves_spikes_by_less_than_dt() {
        let p = p();
        let half = LifParams { dt: p.dt / 2.0, ..p };
        let mut rng = stream_rng(2, Stream::Inputs, &[]);
        let inputs: Vec<(SpikeTrain, f64)> = (0..400)
            .map(|k| (poisson_train(10.0, 500.0, &mut rng).unwrap(), 0.4e-9 + 1e-12 * k as f64))
            .collect();
        for (inputs, bias) in [(&inputs[..0], 5.4e-9), (&inputs[..], 0.0)] {
            let opts = RunOptions {
                record_trace: false,
                bias_current: bias,
            };
            let a = lif_run(inputs, &p, 500.0, opts, |_, _| {});
            let b = lif_run(inputs, &half, 500.0, opts, |_, _| {});
            assert!(!a.spikes.is_empty());
            assert_eq!(a.spikes.len(), b.spikes.len());
            for (x, y) in a.spikes.times().iter().zip(b.spikes.times()) {
                assert!((x - y).abs() < p.dt, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn spike_times_fall_between_grid_points() {
        let p = p();
        let run = lif_run(
            &[],
            &p,
            100.0,
            RunOptions {
                record_trace: false,
                bias_current: 5.4e-9,
            },
            |_, _| {},
        );
        let first = run.spikes.times()[0];
        // Closed-form crossing at τm ln 2 from rest.
        assert!((first - 10.0 * 2f64.ln()).abs() < 0.01, "{first}");
        let gaps: Vec<f64> = run.spikes.times().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(
            gaps.iter().all(|g| (g - (10.0 * 2f64.ln() + 5.0)).abs() < 0.01),
            "{gaps:?}"
        );
    }
}
