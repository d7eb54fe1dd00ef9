//! Programming waveforms applied across a device for each spike, and the
//! energy they dissipate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the pre/post spike waveforms. Amplitudes in volts, times in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformParams {
    pub a1: f64,
    pub a2: f64,
    pub tau_m: f64,
    pub tau_s: f64,
    pub sample_dt: f64,
    pub duration: f64,
}

impl Default for WaveformParams {
    fn default() -> Self {
        Self {
            a1: 0.1,
            a2: 0.25,
            tau_m: 3.0,
            tau_s: 30.0,
            sample_dt: 0.5,
            duration: 250.0,
        }
    }
}

impl WaveformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a2 > 0.0) {
            return Err(Error::config("waveform amplitudes must be positive"));
        }
        if !(self.tau_m > 0.0 && self.tau_m < self.tau_s) {
            return Err(Error::config("waveform needs 0 < tau_m < tau_s"));
        }
        if !(self.sample_dt > 0.0 && self.duration >= self.sample_dt) {
            return Err(Error::config("waveform needs 0 < sample_dt <= duration"));
        }
        Ok(())
    }

    fn shape(&self, t: f64, lead: f64, tail: f64) -> f64 {
        let onset = 3.0 * self.tau_m;
        let mut v = 0.0;
        if t >= 0.0 {
            v += lead * (-t / self.tau_m).exp();
        }
        if t >= onset {
            v -= tail * (-(t - onset) / self.tau_s).exp();
        }
        v
    }
}

/// Waveform driven by the pre-synaptic neuron, `t` ms after its spike.
pub fn v_pre(t: f64, p: &WaveformParams) -> f64 {
    p.shape(t, p.a1, p.a2)
}

/// Waveform driven back by the post-synaptic neuron, `t` ms after its spike.
pub fn v_post(t: f64, p: &WaveformParams) -> f64 {
    p.shape(t, p.a2, p.a1)
}

/// A uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub start_time: f64,
    pub sample_dt: f64,
    pub samples: Vec<f64>,
}

impl SampledWaveform {
    pub fn sample(start_time: f64, sample_dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let samples = (0..n).map(|k| f(start_time + k as f64 * sample_dt)).collect();
        Self {
            start_time,
            sample_dt,
            samples,
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| self.start_time + k as f64 * self.sample_dt)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.sample_dt
    }

    /// Sub-waveform over a sample index range (inclusive of both ends).
    pub fn slice(&self, first: usize, last: usize) -> Self {
        Self {
            start_time: self.start_time + first as f64 * self.sample_dt,
            sample_dt: self.sample_dt,
            samples: self.samples[first..=last].to_vec(),
        }
    }

    /// Append `other` after this waveform, continuing the time axis.
    pub fn append(&mut self, other: &SampledWaveform) {
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Two-column CSV: `time_ms,volts`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_ms", "volts"])?;
        for (t, v) in self.times().zip(&self.samples) {
            w.write_record([format!("{t}"), format!("{v}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn window_len(p: &WaveformParams) -> usize {
    (p.duration / p.sample_dt).round() as usize + 1
}

/// Round `delta_t` to the sampling grid.
pub fn align_to_grid(delta_t: f64, p: &WaveformParams) -> f64 {
    (delta_t / p.sample_dt).round() * p.sample_dt
}

/// Voltage `V_post - V_pre` seen by the device when the post spike trails the
/// pre spike by `delta_t` ms. The earlier spike sits at `t = 0`.
pub fn difference_waveform(delta_t: f64, p: &WaveformParams) -> Result<SampledWaveform> {
    if !delta_t.is_finite() || delta_t.abs() > p.duration / 2.0 {
        return Err(Error::domain(format!(
            "delta_t {delta_t} ms outside ±{} ms window",
            p.duration / 2.0
        )));
    }
    let dt = align_to_grid(delta_t, p);
    let t_pre = (-dt).max(0.0);
    let t_post = dt.max(0.0);
    Ok(SampledWaveform::sample(0.0, p.sample_dt, window_len(p), |t| {
        v_post(t - t_post, p) - v_pre(t - t_pre, p)
    }))
}

/// An isolated pre-spike waveform over the window.
pub fn pre_spike_waveform(p: &WaveformParams) -> SampledWaveform {
    SampledWaveform::sample(0.0, p.sample_dt, window_len(p), |t| v_pre(t, p))
}

/// An isolated post-spike waveform over the window.
pub fn post_spike_waveform(p: &WaveformParams) -> SampledWaveform {
    SampledWaveform::sample(0.0, p.sample_dt, window_len(p), |t| v_post(t, p))
}

/// Non-disruptive read pulse (defaults: 50 mV for 5 ms).
pub fn read_pulse(amplitude: f64, width: f64, sample_dt: f64) -> SampledWaveform {
    let n = (width / sample_dt).round() as usize + 1;
    SampledWaveform::sample(0.0, sample_dt, n, |_| amplitude)
}

/// Energy (J) dissipated in a device of conductance `g` (S) held constant over
/// the waveform: trapezoidal `∫ V² g dt`.
pub fn energy(w: &SampledWaveform, g: f64) -> f64 {
    let dt_s = w.sample_dt * 1e-3;
    let sq = |v: f64| v * v;
    let integral: f64 = w
        .samples
        .windows(2)
        .map(|pair| 0.5 * (sq(pair[0]) + sq(pair[1])) * dt_s)
        .sum();
    integral * g
}

/// Energy with the conductance taken as the mean of the states before and
/// after the programming event.
pub fn energy_between(w: &SampledWaveform, g_initial: f64, g_final: f64) -> f64 {
    energy(w, 0.5 * (g_initial + g_final))
}
