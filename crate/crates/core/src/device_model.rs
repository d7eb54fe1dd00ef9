//! State-dependent conductance-update model of the Cu/SiO2/W synapse.
//!
//! The normalized change `ΔG_norm = (G_f - G_i) / min(G_i, G_f)` produced by a
//! spike pair separated by `dt = t_post - t_pre` is a difference of two
//! exponentials whose time constants are linear in `g = log10(G_i / G0)`:
//!
//! ```text
//! dt > 0:  ΔG_norm =  A exp(-dt / (α_ap + g β_ap)) - A exp(-dt / (α_bp + g β_bp))
//! dt <= 0: ΔG_norm = -A exp( dt / (α_an + g β_an)) + A exp( dt / (α_bn + g β_bn))
//! ```
//!
//! The two potentiation time constants meet near `G_max` and the two depression
//! time constants meet near `G_min`, so updates fade out at the conductance limits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conductance quantum `2e²/h`, in siemens.
pub const G0: f64 = 77.48e-6;

/// Constants of the conductance-update model. Time constants are in
/// milliseconds, conductances in siemens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub a: f64,
    pub alpha_ap: f64,
    pub beta_ap: f64,
    pub alpha_bp: f64,
    pub beta_bp: f64,
    pub alpha_an: f64,
    pub beta_an: f64,
    pub alpha_bn: f64,
    pub beta_bn: f64,
    pub g0: f64,
    pub g_min: f64,
    pub g_max: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            a: 9.0,
            alpha_ap: 5.2,
            beta_ap: -3.8,
            alpha_bp: 6.9,
            beta_bp: 1.9,
            alpha_an: 9.1,
            beta_an: -1.9,
            alpha_bn: 2.3,
            beta_bn: -5.7,
            g0: G0,
            g_min: 0.016 * G0,
            g_max: 0.5 * G0,
        }
    }
}

/// The four time constants (ms) evaluated at one conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConstants {
    pub ap: f64,
    pub bp: f64,
    pub an: f64,
    pub bn: f64,
}

impl ModelParams {
    /// Log-conductance coordinate `log10(G / G0)`.
    pub fn log_g(&self, g: f64) -> f64 {
        (g / self.g0).log10()
    }

    pub fn time_constants(&self, g: f64) -> TimeConstants {
        let x = self.log_g(g);
        TimeConstants {
            ap: self.alpha_ap + x * self.beta_ap,
            bp: self.alpha_bp + x * self.beta_bp,
            an: self.alpha_an + x * self.beta_an,
            bn: self.alpha_bn + x * self.beta_bn,
        }
    }

    /// Geometric mean of the conductance limits.
    pub fn g_ref(&self) -> f64 {
        (self.g_min * self.g_max).sqrt()
    }

    pub fn clamp(&self, g: f64) -> f64 {
        g.clamp(self.g_min, self.g_max)
    }

    pub fn contains(&self, g: f64) -> bool {
        // Tolerate round-off from unit conversions at the limits.
        let slack = 1e-12;
        g >= self.g_min * (1.0 - slack) && g <= self.g_max * (1.0 + slack)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::config("model gain `a` must be positive"));
        }
        if !(self.g0 > 0.0 && self.g_min > 0.0 && self.g_min < self.g_max) {
            return Err(Error::config("model needs 0 < g_min < g_max and g0 > 0"));
        }
        // Time constants are linear in g, so positivity at both limits covers the range.
        for g in [self.g_min, self.g_max] {
            let tc = self.time_constants(g);
            if [tc.ap, tc.bp, tc.an, tc.bn].iter().any(|&t| !(t > 0.0)) {
                return Err(Error::config(format!(
                    "a time constant is not positive at G = {:.4} G0",
                    g / self.g0
                )));
            }
        }
        Ok(())
    }
}

fn delta_g_norm_unchecked(dt: f64, g_i: f64, params: &ModelParams) -> f64 {
    let tc = params.time_constants(g_i);
    let a = params.a;
    // Past the point where a branch's time constants cross (just inside the
    // clamp range) the raw difference changes sign; the branch saturates at 0.
    if dt > 0.0 {
        (a * (-dt / tc.ap).exp() - a * (-dt / tc.bp).exp()).max(0.0)
    } else {
        (-a * (dt / tc.an).exp() + a * (dt / tc.bn).exp()).min(0.0)
    }
}

/// Normalized conductance change for a spike pair `dt = t_post - t_pre` (ms)
/// applied to a device at conductance `g_i` (S). Positive values potentiate.
///
/// Causal pairs never depress and anti-causal pairs never potentiate.
pub fn delta_g_norm(dt: f64, g_i: f64, params: &ModelParams) -> Result<f64> {
    if !params.contains(g_i) {
        return Err(Error::ConductanceOutOfRange {
            value: g_i,
            min: params.g_min,
            max: params.g_max,
        });
    }
    Ok(delta_g_norm_unchecked(dt, g_i, params))
}

/// Final conductance implied by a normalized change, inverting
/// `ΔG_norm = (G_f - G_i) / min(G_i, G_f)` on each branch. Not clamped.
pub fn apply_normalized_change(g_i: f64, dg_norm: f64) -> f64 {
    if dg_norm >= 0.0 {
        g_i * (1.0 + dg_norm)
    } else {
        g_i / (1.0 - dg_norm)
    }
}

/// `(G_f - G_i) / min(G_i, G_f)`.
pub fn normalized_change(g_i: f64, g_f: f64) -> f64 {
    (g_f - g_i) / g_i.min(g_f)
}

/// Gaussian programming noise: each update draws `ΔG_norm ~ N(μ, (σ_frac |μ|)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=0.5).contains(&sigma_fraction) {
            return Err(Error::domain(format!(
                "sigma_fraction {sigma_fraction} outside [0, 0.5]"
            )));
        }
        Ok(Self { sigma_fraction, seed })
    }

    fn perturb<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        let sd = self.sigma_fraction * mean.abs();
        if sd > 0.0 {
            // sd is finite and positive here, so construction cannot fail.
            Normal::new(mean, sd).unwrap().sample(rng)
        } else {
            mean
        }
    }
}

/// A single memristive device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    conductance: f64,
}

impl DeviceState {
    /// Device at `g`, which must lie in the model range.
    pub fn new(g: f64, params: &ModelParams) -> Result<Self> {
        if !params.contains(g) {
            return Err(Error::ConductanceOutOfRange {
                value: g,
                min: params.g_min,
                max: params.g_max,
            });
        }
        Ok(Self::clamped(g, params))
    }

    /// Device at `g` clamped into the model range.
    pub fn clamped(g: f64, params: &ModelParams) -> Self {
        Self {
            conductance: params.clamp(g),
        }
    }

    pub fn conductance(&self) -> f64 {
        self.conductance
    }

    /// Mean normalized change this device would see for `dt`.
    pub fn expected_change(&self, dt: f64, params: &ModelParams) -> f64 {
        delta_g_norm_unchecked(dt, self.conductance, params)
    }
}

/// Program one device with a spike pair `dt`, optionally with Gaussian noise on
/// the normalized change, and clamp the result into `[G_min, G_max]`.
pub fn apply_update<R: Rng + ?Sized>(
    state: DeviceState,
    dt: f64,
    params: &ModelParams,
    noise: Option<&NoiseConfig>,
    rng: &mut R,
) -> DeviceState {
    let mean = state.expected_change(dt, params);
    let dg = match noise {
        Some(n) => n.perturb(mean, rng),
        None => mean,
    };
    DeviceState::clamped(apply_normalized_change(state.conductance, dg), params)
}

/// Conductances `(lower, upper)` where the depression and the potentiation
/// time-constant lines intersect.
pub fn solve_boundaries(params: &ModelParams) -> Result<(f64, f64)> {
    let meet = |a1: f64, b1: f64, a2: f64, b2: f64| -> Result<f64> {
        if b1 == b2 {
            return Err(Error::ParallelLines);
        }
        let g = (a2 - a1) / (b1 - b2);
        Ok(params.g0 * 10f64.powf(g))
    };
    let upper = meet(params.alpha_ap, params.beta_ap, params.alpha_bp, params.beta_bp)?;
    let lower = meet(params.alpha_an, params.beta_an, params.alpha_bn, params.beta_bn)?;
    Ok((lower, upper))
}

/// One logical synapse built from `n` devices. All devices are read in sum;
/// each programming event goes to a single device chosen round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDeviceSynapse {
    devices: Vec<DeviceState>,
    next_index: usize,
}

impl MultiDeviceSynapse {
    pub fn new(devices: Vec<DeviceState>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::domain("a synapse needs at least one device"));
        }
        Ok(Self { devices, next_index: 0 })
    }

    pub fn uniform(n: usize, g: f64, params: &ModelParams) -> Result<Self> {
        Self::new(vec![DeviceState::new(g, params)?; n])
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn next_index(&self) -> usize {
        self.next_index
    }

    /// Sum of device conductances.
    pub fn total_conductance(&self) -> f64 {
        self.devices.iter().map(|d| d.conductance).sum()
    }

    /// `Σ_j (G_j - G_min)`.
    pub fn effective_conductance(&self, params: &ModelParams) -> f64 {
        self.devices.iter().map(|d| d.conductance - params.g_min).sum()
    }

    /// Program the device under the round-robin pointer and advance it.
    /// Returns the change in total conductance.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        dt: f64,
        params: &ModelParams,
        noise: Option<&NoiseConfig>,
        rng: &mut R,
    ) -> f64 {
        let idx = self.next_index;
        let before = self.devices[idx];
        let after = apply_update(before, dt, params, noise, rng);
        self.devices[idx] = after;
        self.next_index = (idx + 1) % self.devices.len();
        after.conductance - before.conductance
    }
}

/// Functional form of [`MultiDeviceSynapse::update`].
pub fn synapse_update<R: Rng + ?Sized>(
    mut syn: MultiDeviceSynapse,
    dt: f64,
    params: &ModelParams,
    noise: Option<&NoiseConfig>,
    rng: &mut R,
) -> MultiDeviceSynapse {
    syn.update(dt, params, noise, rng);
    syn
}

pub fn effective_conductance(syn: &MultiDeviceSynapse, params: &ModelParams) -> f64 {
    syn.effective_conductance(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn p() -> ModelParams {
        ModelParams::default()
    }

    // Straight transcription of the two branches with the time constants
    // written out by hand for g = log10(0.1) = -1.
    fn hand_eval(dt: f64) -> f64 {
        let (tap, tbp, tan, tbn) = (5.2 + 3.8, 6.9 - 1.9, 9.1 + 1.9, 2.3 + 5.7);
        if dt > 0.0 {
            9.0 * ((-dt / tap).exp() - (-dt / tbp).exp())
        } else {
            9.0 * ((dt / tbn).exp() - (dt / tan).exp())
        }
    }

    #[test]
    fn point_values_match_hand_evaluation() {
        let g = 0.1 * G0;
        let plus = delta_g_norm(5.0, g, &p()).unwrap();
        let minus = delta_g_norm(-5.0, g, &p()).unwrap();
        assert!((plus - hand_eval(5.0)).abs() < 1e-12);
        assert!((minus - hand_eval(-5.0)).abs() < 1e-12);
        assert!((plus - 1.8529).abs() < 1e-3, "{plus}");
        assert!((minus - (-0.8953)).abs() < 1e-3, "{minus}");
    }

    #[test]
    fn zero_dt_is_exactly_zero() {
        for k in 0..=10 {
            let g = p().g_min + (p().g_max - p().g_min) * k as f64 / 10.0;
            assert_eq!(delta_g_norm(0.0, g, &p()).unwrap(), 0.0);
        }
    }

    #[test]
    fn branches_saturate_beyond_their_crossing() {
        // The depression lines cross at ~0.01624 G0, above g_min = 0.016 G0.
        let params = p();
        let (lo, _) = solve_boundaries(&params).unwrap();
        for g in [params.g_min, 0.5 * (params.g_min + lo)] {
            for dt in [-1.0, -10.0, -40.0] {
                assert_eq!(delta_g_norm(dt, g, &params).unwrap(), 0.0);
            }
        }
        assert!(delta_g_norm(-10.0, lo * 1.01, &params).unwrap() < 0.0);
    }

    #[test]
    fn update_vanishes_at_upper_limit() {
        let v = delta_g_norm(5.0, 0.5 * G0, &p()).unwrap();
        assert!(v.abs() < 0.02, "{v}");
    }

    #[test]
    fn out_of_range_conductance_is_an_error() {
        assert!(matches!(
            delta_g_norm(5.0, 0.6 * G0, &p()),
            Err(Error::ConductanceOutOfRange { .. })
        ));
        assert!(delta_g_norm(5.0, 0.01 * G0, &p()).is_err());
    }

    #[test]
    fn apply_update_examples() {
        let params = p();
        let mut rng = stream_rng(0, Stream::Noise, &[]);
        let floor = DeviceState::new(params.g_min, &params).unwrap();
        let out = apply_update(floor, -10.0, &params, None, &mut rng);
        assert_eq!(out.conductance(), params.g_min);

        let mid = DeviceState::new(0.1 * G0, &params).unwrap();
        let up = apply_update(mid, 5.0, &params, None, &mut rng);
        let expect = 0.1 * G0 * (1.0 + hand_eval(5.0));
        assert!((up.conductance() - expect).abs() < 1e-15);
        assert!((up.conductance() / G0 - 0.285).abs() < 1e-3);

        let down = apply_update(mid, -60.0, &params, None, &mut rng);
        assert!(down.conductance() < mid.conductance());
        assert!(down.conductance() >= params.g_min);
    }

    #[test]
    fn depression_inverts_the_normalized_definition() {
        let g_f = apply_normalized_change(2.0, -0.5);
        assert!((normalized_change(2.0, g_f) - (-0.5)).abs() < 1e-15);
        let g_f = apply_normalized_change(2.0, 0.7);
        assert!((normalized_change(2.0, g_f) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn boundaries_from_table_values() {
        let (lo, hi) = solve_boundaries(&p()).unwrap();
        assert!((lo / G0 - 0.016238).abs() < 1e-5, "{}", lo / G0);
        assert!((hi / G0 - 0.503216).abs() < 1e-5, "{}", hi / G0);
    }

    #[test]
    fn parallel_lines_have_no_boundary() {
        let mut params = p();
        params.beta_bp = params.beta_ap;
        assert!(matches!(solve_boundaries(&params), Err(Error::ParallelLines)));
    }

    #[test]
    fn equal_intercepts_meet_at_g0() {
        let mut params = p();
        params.alpha_bp = params.alpha_ap;
        let (_, hi) = solve_boundaries(&params).unwrap();
        assert!((hi - G0).abs() < 1e-18);
    }

    #[test]
    fn round_robin_over_five_devices() {
        let params = p();
        let mut rng = stream_rng(1, Stream::Noise, &[]);
        let mut syn = MultiDeviceSynapse::uniform(5, 0.05 * G0, &params).unwrap();
        let mut hits = [0usize; 5];
        for _ in 0..10 {
            let before = syn.devices().to_vec();
            syn.update(3.0, &params, None, &mut rng);
            for (k, (b, a)) in before.iter().zip(syn.devices()).enumerate() {
                if b != a {
                    hits[k] += 1;
                }
            }
        }
        assert_eq!(hits, [2; 5]);
    }

    #[test]
    fn single_device_synapse_matches_apply_update() {
        let params = p();
        let noise = NoiseConfig::new(0.3, 9).unwrap();
        let mut r1 = stream_rng(2, Stream::Noise, &[]);
        let mut r2 = stream_rng(2, Stream::Noise, &[]);
        let mut syn = MultiDeviceSynapse::uniform(1, 0.1 * G0, &params).unwrap();
        let mut dev = DeviceState::new(0.1 * G0, &params).unwrap();
        for dt in [5.0, -3.0, 12.0, -30.0, 1.5] {
            syn = synapse_update(syn, dt, &params, Some(&noise), &mut r1);
            dev = apply_update(dev, dt, &params, Some(&noise), &mut r2);
            assert_eq!(syn.devices()[0], dev);
        }
    }

    #[test]
    fn only_one_device_leaves_the_floor() {
        let params = p();
        let mut rng = stream_rng(3, Stream::Noise, &[]);
        let mut syn = MultiDeviceSynapse::uniform(10, params.g_min, &params).unwrap();
        syn.update(5.0, &params, None, &mut rng);
        let moved = syn.devices().iter().filter(|d| d.conductance() > params.g_min).count();
        assert_eq!(moved, 1);
    }

    #[test]
    fn effective_conductance_examples() {
        let params = p();
        let floor = MultiDeviceSynapse::uniform(4, params.g_min, &params).unwrap();
        assert_eq!(floor.effective_conductance(&params), 0.0);
        let one = MultiDeviceSynapse::uniform(1, 0.1 * G0, &params).unwrap();
        assert!((one.effective_conductance(&params) - 0.084 * G0).abs() < 1e-15);
        assert!((one.effective_conductance(&params) - 6.51e-6).abs() < 1e-8);
        let two = MultiDeviceSynapse::uniform(2, params.g_max, &params).unwrap();
        assert!((two.effective_conductance(&params) - 0.968 * G0).abs() < 1e-15);
    }

    #[test]
    fn empty_synapse_rejected() {
        assert!(MultiDeviceSynapse::new(vec![]).is_err());
    }

    #[test]
    fn noise_bounds_checked() {
        assert!(NoiseConfig::new(-0.1, 0).is_err());
        assert!(NoiseConfig::new(0.6, 0).is_err());
        assert!(NoiseConfig::new(0.5, 0).is_ok());
    }

    #[test]
    fn default_params_validate() {
        p().validate().unwrap();
        let mut bad = p();
        bad.g_min = bad.g_max;
        assert!(bad.validate().is_err());
    }
}
