//! Extraction of model parameters from STDP measurements.
//!
//! Records are binned by initial conductance and averaged per unique `Δt`,
//! each averaged lobe is smoothed and fitted with a difference of
//! exponentials `A (exp(-x/τA) - exp(-x/τB))` by gradient descent, and the
//! fitted time constants are regressed linearly against `log10(G/G0)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device_model::{apply_normalized_change, delta_g_norm, normalized_change, solve_boundaries, ModelParams};
use crate::error::{Error, Result};

/// One programming measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpRecord {
    #[serde(rename = "delta_t_ms")]
    pub delta_t: f64,
    #[serde(rename = "g_initial_S")]
    pub g_initial: f64,
    #[serde(rename = "g_final_S")]
    pub g_final: f64,
}

impl StdpRecord {
    pub fn delta_g_norm(&self) -> f64 {
        normalized_change(self.g_initial, self.g_final)
    }
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<StdpRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        let r: StdpRecord = rec?;
        if !(r.g_initial > 0.0 && r.g_final > 0.0) {
            return Err(Error::domain(format!(
                "record at Δt = {} ms has a non-positive conductance",
                r.delta_t
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_records<W: Write>(out: W, records: &[StdpRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Half-open initial-conductance band `[low, high)` in siemens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceRange {
    pub low: f64,
    pub high: f64,
}

impl ConductanceRange {
    pub fn contains(&self, g: f64) -> bool {
        g >= self.low && g < self.high
    }
}

/// Mean `ΔG_norm` per unique `Δt` over the records of one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedCurve {
    pub range: ConductanceRange,
    /// Mean `log10(G_i / G0)` of the records used.
    pub mean_log_g: f64,
    /// `(Δt, mean ΔG_norm, count)` sorted by `Δt`.
    pub points: Vec<(f64, f64, usize)>,
}

impl AveragedCurve {
    /// Potentiation lobe as `(Δt, value)` for `Δt > 0`.
    pub fn potentiation(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter(|p| p.0 > 0.0).map(|p| (p.0, p.1)).collect()
    }

    /// Depression lobe mirrored onto `x = -Δt >= 0`.
    pub fn depression(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.points.iter().filter(|p| p.0 <= 0.0).map(|p| (-p.0, p.1)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

/// Average records per band and per unique `Δt` inside `window` (inclusive).
/// Bands without records are left out.
pub fn bin_average(
    records: &[StdpRecord],
    ranges: &[ConductanceRange],
    window: (f64, f64),
    g0: f64,
) -> Vec<AveragedCurve> {
    let mut out = Vec::new();
    for range in ranges {
        // Key on Δt in units of 1 µs so float noise does not split bins.
        let mut bins: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for r in records {
            if !range.contains(r.g_initial) || r.delta_t < window.0 || r.delta_t > window.1 {
                continue;
            }
            let key = (r.delta_t * 1e3).round() as i64;
            let e = bins.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += r.delta_t;
            e.1 += r.delta_g_norm();
            e.2 += 1;
            log_sum += (r.g_initial / g0).log10();
            n += 1;
        }
        if n == 0 {
            continue;
        }
        out.push(AveragedCurve {
            range: *range,
            mean_log_g: log_sum / n as f64,
            points: bins
                .into_values()
                .map(|(t, v, c)| (t / c as f64, v / c as f64, c))
                .collect(),
        });
    }
    out
}

/// Centered moving average whose window shrinks at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len().saturating_sub(1));
            let span = (i - lo).min(hi - i);
            let (lo, hi) = (i - span, i + span);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// `A (exp(-x/τA) - exp(-x/τB))`, normalized so that `τA >= τB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDiffFit {
    pub a: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ExpDiffFit {
    pub fn guess(a: f64, tau_a: f64, tau_b: f64) -> Self {
        Self {
            a,
            tau_a,
            tau_b,
            residual: f64::NAN,
            converged: false,
            iterations: 0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a * ((-x / self.tau_a).exp() - (-x / self.tau_b).exp())
    }

    fn normalized(mut self) -> Self {
        if self.tau_a < self.tau_b {
            std::mem::swap(&mut self.tau_a, &mut self.tau_b);
            self.a = -self.a;
        }
        self
    }
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Give up once the loss has fallen by less than this fraction over the
    /// last `STALL_WINDOW` iterations. The run is then not converged.
    pub stall_tolerance: f64,
}

const STALL_WINDOW: usize = 50;

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            gradient_tolerance: 1e-9,
            stall_tolerance: 1e-10,
        }
    }
}

fn basis(x: f64, ta: f64, tb: f64) -> (f64, f64, f64) {
    let ea = (-x / ta).exp();
    let eb = (-x / tb).exp();
    (ea, eb, ea - eb)
}

// Amplitude minimizing the squared error for fixed time constants.
fn best_amplitude(ta: f64, tb: f64, pts: &[(f64, f64)]) -> f64 {
    let (mut yp, mut pp) = (0.0, 0.0);
    for &(x, y) in pts {
        let (_, _, p) = basis(x, ta, tb);
        yp += y * p;
        pp += p * p;
    }
    if pp > 0.0 {
        yp / pp
    } else {
        0.0
    }
}

// The amplitude enters linearly and is solved in closed form, so descent runs
// on (ln τA, ln τB) only. At the optimal amplitude the gradient of the reduced
// loss equals the partial gradient of the full one.
fn loss_and_grad(q: [f64; 2], pts: &[(f64, f64)]) -> (f64, [f64; 2]) {
    let (ta, tb) = (q[0].exp(), q[1].exp());
    let a = best_amplitude(ta, tb, pts);
    let n = pts.len() as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 2];
    for &(x, y) in pts {
        let (ea, eb, p) = basis(x, ta, tb);
        let r = a * p - y;
        loss += r * r;
        g[0] += 2.0 * r * a * ea * x / ta;
        g[1] -= 2.0 * r * a * eb * x / tb;
    }
    (loss / n, g.map(|v| v / n))
}

fn validate_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::domain(
            "a difference-of-exponentials fit needs at least 4 points",
        ));
    }
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::domain("fit points must be finite"));
    }
    let pos = points.iter().all(|p| p.0 >= 0.0);
    let neg = points.iter().all(|p| p.0 <= 0.0);
    if !(pos || neg) {
        return Err(Error::domain("fit points must share the sign of Δt"));
    }
    Ok(())
}

/// Outcome of a gradient-descent run.
#[derive(Debug, Clone, PartialEq)]
struct Descent {
    point: Vec<f64>,
    loss: f64,
    history: Vec<f64>,
    converged: bool,
    iterations: usize,
}

// Steepest descent with Barzilai-Borwein step proposals and Armijo
// backtracking, so the loss never increases.
fn descend(start: Vec<f64>, eval: impl Fn(&[f64]) -> (f64, Vec<f64>), opts: &DescentOptions) -> Descent {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut p = start;
    let (mut f, mut g) = eval(&p);
    let mut history = vec![f];
    let mut step = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iterations {
        let gg = dot(&g, &g);
        if gg.sqrt() < opts.gradient_tolerance {
            converged = true;
            iterations = it;
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let q: Vec<f64> = p.iter().zip(&g).map(|(x, d)| x - alpha * d).collect();
            let (fq, gq) = eval(&q);
            if fq.is_finite() && fq <= f - 1e-4 * alpha * gg {
                accepted = Some((q, fq, gq));
                break;
            }
            alpha *= 0.5;
        }
        iterations = it + 1;
        let Some((q, fq, gq)) = accepted else {
            // No further descent is representable; the loss is at its floor.
            converged = f < 1e-24 || gg.sqrt() < opts.gradient_tolerance.sqrt();
            break;
        };
        let s: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gq.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-12, 1e6)
        } else {
            alpha * 2.0
        };
        p = q;
        f = fq;
        g = gq;
        history.push(f);
        if history.len() > STALL_WINDOW {
            let before = history[history.len() - 1 - STALL_WINDOW];
            if before - f <= opts.stall_tolerance * f {
                break;
            }
        }
    }
    Descent {
        point: p,
        loss: f,
        history,
        converged,
        iterations,
    }
}

/// Least-squares fit by gradient descent. The amplitude is solved exactly at
/// every step, so only the time constants of `init` matter. Points with
/// `x <= 0` are mirrored onto `|x|`. Returns the best point found;
/// `converged` reports whether the gradient tolerance was met.
pub fn fit_exp_diff(points: &[(f64, f64)], init: ExpDiffFit, opts: &DescentOptions) -> Result<ExpDiffFit> {
    fit_exp_diff_traced(points, init, opts).map(|(fit, _)| fit)
}

/// As [`fit_exp_diff`], also returning the loss after every iteration.
pub fn fit_exp_diff_traced(
    points: &[(f64, f64)],
    init: ExpDiffFit,
    opts: &DescentOptions,
) -> Result<(ExpDiffFit, Vec<f64>)> {
    validate_points(points)?;
    if !(init.tau_a > 0.0 && init.tau_b > 0.0) {
        return Err(Error::domain("initial time constants must be positive"));
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.abs(), y)).collect();
    let mut start = vec![init.tau_a.ln(), init.tau_b.ln()];
    if init.tau_a == init.tau_b {
        // The two exponentials cancel exactly; nudge them apart.
        start[1] -= 1e-3;
    }
    let d = descend(
        start,
        |q| {
            let (f, g) = loss_and_grad([q[0], q[1]], &pts);
            (f, g.to_vec())
        },
        opts,
    );
    let (tau_a, tau_b) = (d.point[0].exp(), d.point[1].exp());
    let fit = ExpDiffFit {
        a: best_amplitude(tau_a, tau_b, &pts),
        tau_a,
        tau_b,
        residual: d.loss.sqrt(),
        converged: d.converged,
        iterations: d.iterations,
    }
    .normalized();
    Ok((fit, d.history))
}

fn peak_time(ta: f64, tb: f64) -> f64 {
    (ta / tb).ln() * ta * tb / (ta - tb)
}

/// Starting point from the lobe's shape: `τA` from the log-slope of the tail,
/// `τB` so that the model peak sits at the observed peak, `A` from the peak.
pub fn initial_guess(points: &[(f64, f64)]) -> Result<ExpDiffFit> {
    validate_points(points)?;
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.abs(), y)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (k_peak, &(x_peak, y_peak)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.abs().total_cmp(&b.1 .1.abs()))
        .expect("non-empty");
    if y_peak == 0.0 {
        return Ok(ExpDiffFit::guess(0.0, 10.0, 5.0));
    }
    // Tail: points past the peak still above 5% of it, same sign.
    let tail: Vec<(f64, f64)> = pts[k_peak..]
        .iter()
        .filter(|p| p.1 * y_peak > 0.0 && p.1.abs() > 0.05 * y_peak.abs())
        .map(|&(x, y)| (x, y.abs().ln()))
        .collect();
    let tau_a = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
        let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        if slope < 0.0 {
            -1.0 / slope
        } else {
            2.0 * x_peak.max(1.0)
        }
    } else {
        2.0 * x_peak.max(1.0)
    };
    // Peak time rises with τB on (0, τA); bisect for the observed peak.
    let target = x_peak.max(1e-3);
    let tau_b = if target >= tau_a {
        0.9 * tau_a
    } else {
        let (mut lo, mut hi) = (1e-6 * tau_a, tau_a * (1.0 - 1e-9));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if peak_time(tau_a, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let shape = (-x_peak / tau_a).exp() - (-x_peak / tau_b).exp();
    let a = if shape.abs() > 1e-12 { y_peak / shape } else { y_peak };
    Ok(ExpDiffFit::guess(a, tau_a, tau_b))
}

/// `τ = α + β g` line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauLine {
    pub alpha: f64,
    pub beta: f64,
    /// Root-mean-square residual of the regression.
    pub residual: f64,
}

/// Ordinary least squares of `τ` on `g = log10(G/G0)`.
pub fn fit_tau_line(points: &[(f64, f64)]) -> Result<TauLine> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.len() < 2 || !(sxx > 1e-24) {
        return Err(Error::SingularDesign);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let residual = (points.iter().map(|p| (p.1 - alpha - beta * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TauLine { alpha, beta, residual })
}

/// Fitted lobes of one conductance band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    pub mean_log_g: f64,
    pub potentiation: ExpDiffFit,
    pub depression: ExpDiffFit,
}

/// The four time-constant lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauLines {
    pub ap: TauLine,
    pub bp: TauLine,
    pub an: TauLine,
    pub bn: TauLine,
}

/// Regress per-band time constants onto lines in `log10(G/G0)`.
pub fn fit_tau_lines(bands: &[BandFit]) -> Result<TauLines> {
    let line =
        |f: &dyn Fn(&BandFit) -> f64| fit_tau_line(&bands.iter().map(|b| (b.mean_log_g, f(b))).collect::<Vec<_>>());
    Ok(TauLines {
        ap: line(&|b| b.potentiation.tau_a)?,
        bp: line(&|b| b.potentiation.tau_b)?,
        an: line(&|b| b.depression.tau_a)?,
        bn: line(&|b| b.depression.tau_b)?,
    })
}

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Band edges in units of G0; consecutive pairs form the bands.
    pub band_edges: Vec<f64>,
    /// Inclusive `Δt` window (ms).
    pub window: (f64, f64),
    /// Moving-average width used when locating the peak and tail of each
    /// lobe for the starting point (1 disables smoothing).
    pub smoothing: usize,
    /// Refine the regressed lines against all bands at once.
    pub joint_refinement: bool,
    pub descent: DescentOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            band_edges: log_edges(0.02, 0.4, 10),
            window: (-40.0, 40.0),
            smoothing: 3,
            joint_refinement: true,
            descent: DescentOptions::default(),
        }
    }
}

/// `n + 1` edges spaced evenly in `log10` from `lo` to `hi`.
pub fn log_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

impl FitConfig {
    /// Geometric centres of the bands, in units of G0.
    pub fn band_centres(&self) -> Vec<f64> {
        self.band_edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect()
    }

    pub fn ranges(&self, g0: f64) -> Vec<ConductanceRange> {
        self.band_edges
            .windows(2)
            .map(|w| ConductanceRange {
                low: w[0] * g0,
                high: w[1] * g0,
            })
            .collect()
    }
}

/// Result of [`fit_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub bands: Vec<BandFit>,
    pub lines: TauLines,
    /// Mean `|A|` over all fitted lobes.
    pub a: f64,
    /// Boundary conductances (S) where the fitted lines meet.
    pub lower_boundary: f64,
    pub upper_boundary: f64,
    /// Joint refinement of the lines, when enabled.
    pub joint: Option<JointFit>,
    /// Model constants ready to load back.
    pub params: ModelParams,
}

/// Model constants fitted to every band's curve at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub a: f64,
    pub alpha_ap: f64,
    pub beta_ap: f64,
    pub alpha_bp: f64,
    pub beta_bp: f64,
    pub alpha_an: f64,
    pub beta_an: f64,
    pub alpha_bn: f64,
    pub beta_bn: f64,
    /// RMS error over all points.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// One averaged point for the joint fit: centred log-conductance, `|Δt|`,
/// lobe sign (+1 potentiation) and the mean change.
#[derive(Debug, Clone, Copy)]
struct JointPoint {
    x: f64,
    t: f64,
    sign: f64,
    y: f64,
}

// Rectified lobe shape and its derivatives in (τA, τB).
fn rectified(t: f64, ta: f64, tb: f64) -> (f64, f64, f64) {
    let (ea, eb, p) = basis(t, ta, tb);
    if p > 0.0 {
        (p, ea * t / (ta * ta), -eb * t / (tb * tb))
    } else {
        (0.0, 0.0, 0.0)
    }
}

// Parameters are [c, β] for ap, bp, an, bn, with lines centred on the mean
// log-conductance. The shared amplitude is projected out as in the
// single-lobe fit. Non-positive time constants give an infinite loss.
fn joint_loss(theta: &[f64], pts: &[JointPoint]) -> (f64, Vec<f64>) {
    let tau = |k: usize, x: f64| theta[2 * k] + theta[2 * k + 1] * x;
    let mut shapes = Vec::with_capacity(pts.len());
    let (mut yh, mut hh) = (0.0, 0.0);
    for p in pts {
        let (ka, kb) = if p.sign > 0.0 { (0, 1) } else { (2, 3) };
        let (ta, tb) = (tau(ka, p.x), tau(kb, p.x));
        if !(ta > 0.0 && tb > 0.0) {
            return (f64::INFINITY, vec![0.0; 8]);
        }
        let r = rectified(p.t, ta, tb);
        yh += p.y * p.sign * r.0;
        hh += r.0 * r.0;
        shapes.push((ka, kb, r));
    }
    let a = if hh > 0.0 { yh / hh } else { 0.0 };
    let n = pts.len() as f64;
    let mut loss = 0.0;
    let mut g = vec![0.0; 8];
    for (p, &(ka, kb, (h, da, db))) in pts.iter().zip(&shapes) {
        let r = p.sign * a * h - p.y;
        loss += r * r;
        let w = 2.0 * r * p.sign * a / n;
        g[2 * ka] += w * da;
        g[2 * ka + 1] += w * da * p.x;
        g[2 * kb] += w * db;
        g[2 * kb + 1] += w * db * p.x;
    }
    (loss / n, g)
}

fn joint_amplitude(theta: &[f64], pts: &[JointPoint]) -> f64 {
    let (mut yh, mut hh) = (0.0, 0.0);
    for p in pts {
        let (ka, kb) = if p.sign > 0.0 { (0, 1) } else { (2, 3) };
        let ta = theta[2 * ka] + theta[2 * ka + 1] * p.x;
        let tb = theta[2 * kb] + theta[2 * kb + 1] * p.x;
        let h = rectified(p.t, ta, tb).0;
        yh += p.y * p.sign * h;
        hh += h * h;
    }
    if hh > 0.0 {
        yh / hh
    } else {
        0.0
    }
}

fn refine_jointly(curves: &[&AveragedCurve], lines: &TauLines, opts: &DescentOptions) -> JointFit {
    let xbar = curves.iter().map(|c| c.mean_log_g).sum::<f64>() / curves.len() as f64;
    let mut pts = Vec::new();
    for c in curves {
        let x = c.mean_log_g - xbar;
        for (sign, lobe) in [(1.0, c.potentiation()), (-1.0, c.depression())] {
            pts.extend(lobe.into_iter().map(|(t, y)| JointPoint { x, t, sign, y }));
        }
    }
    let start: Vec<f64> = [lines.ap, lines.bp, lines.an, lines.bn]
        .iter()
        .flat_map(|l| [l.alpha + l.beta * xbar, l.beta])
        .collect();
    let d = descend(start, |th| joint_loss(th, &pts), opts);
    let th = &d.point;
    let alpha = |k: usize| th[2 * k] - th[2 * k + 1] * xbar;
    JointFit {
        a: joint_amplitude(th, &pts),
        alpha_ap: alpha(0),
        beta_ap: th[1],
        alpha_bp: alpha(1),
        beta_bp: th[3],
        alpha_an: alpha(2),
        beta_an: th[5],
        alpha_bn: alpha(3),
        beta_bn: th[7],
        residual: d.loss.sqrt(),
        converged: d.converged,
        iterations: d.iterations,
    }
}

// The smoothed lobe only seeds the descent: the fitted time constants are
// sensitive enough that smoothing bias would dominate noise-free data.
fn fit_lobe(points: &[(f64, f64)], cfg: &FitConfig) -> Result<ExpDiffFit> {
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let smoothed: Vec<(f64, f64)> = points
        .iter()
        .zip(smooth(&ys, cfg.smoothing))
        .map(|(p, y)| (p.0, y))
        .collect();
    let init = initial_guess(&smoothed)?;
    fit_exp_diff(points, init, &cfg.descent)
}

/// Full pipeline. `template` supplies G0 and the clamp limits of the result.
pub fn fit_model(records: &[StdpRecord], cfg: &FitConfig, template: &ModelParams) -> Result<FitReport> {
    if records.is_empty() {
        return Err(Error::domain("no records to fit"));
    }
    let curves = bin_average(records, &cfg.ranges(template.g0), cfg.window, template.g0);
    let mut bands = Vec::new();
    let mut used = Vec::new();
    for c in &curves {
        let pot = c.potentiation();
        let dep = c.depression();
        if pot.len() < 4 || dep.len() < 4 {
            continue;
        }
        bands.push(BandFit {
            mean_log_g: c.mean_log_g,
            potentiation: fit_lobe(&pot, cfg)?,
            depression: fit_lobe(&dep, cfg)?,
        });
        used.push(c);
    }
    let lines = fit_tau_lines(&bands)?;
    let a = bands
        .iter()
        .flat_map(|b| [b.potentiation.a.abs(), b.depression.a.abs()])
        .sum::<f64>()
        / (2 * bands.len()) as f64;
    let joint = cfg
        .joint_refinement
        .then(|| refine_jointly(&used, &lines, &cfg.descent));
    let params = match &joint {
        Some(j) => ModelParams {
            a: j.a,
            alpha_ap: j.alpha_ap,
            beta_ap: j.beta_ap,
            alpha_bp: j.alpha_bp,
            beta_bp: j.beta_bp,
            alpha_an: j.alpha_an,
            beta_an: j.beta_an,
            alpha_bn: j.alpha_bn,
            beta_bn: j.beta_bn,
            ..*template
        },
        None => ModelParams {
            a,
            alpha_ap: lines.ap.alpha,
            beta_ap: lines.ap.beta,
            alpha_bp: lines.bp.alpha,
            beta_bp: lines.bp.beta,
            alpha_an: lines.an.alpha,
            beta_an: lines.an.beta,
            alpha_bn: lines.bn.alpha,
            beta_bn: lines.bn.beta,
            ..*template
        },
    };
    let (lower_boundary, upper_boundary) = solve_boundaries(&params)?;
    Ok(FitReport {
        bands,
        lines,
        a,
        joint,
        lower_boundary,
        upper_boundary,
        params,
    })
}

/// Records generated by the model itself at fixed initial conductances (in
/// units of G0) on a `Δt` grid. Observation noise is Gaussian with spread
/// `noise_fraction * |ΔG_norm|`. Final conductances are not clamped, so every
/// record inverts exactly.
pub fn synthesize_records<R: Rng + ?Sized>(
    params: &ModelParams,
    levels: &[f64],
    dt_grid: &[f64],
    noise_fraction: f64,
    repeats: usize,
    rng: &mut R,
) -> Result<Vec<StdpRecord>> {
    let mut out = Vec::with_capacity(levels.len() * dt_grid.len() * repeats);
    for &level in levels {
        let g = level * params.g0;
        let values = dt_grid
            .iter()
            .map(|&dt| delta_g_norm(dt, g, params))
            .collect::<Result<Vec<_>>>()?;
        let noise = if noise_fraction > 0.0 {
            Some(Normal::new(0.0, noise_fraction).map_err(|e| Error::domain(e.to_string()))?)
        } else {
            None
        };
        for _ in 0..repeats {
            for (&dt, &v) in dt_grid.iter().zip(&values) {
                let v = v + noise.map_or(0.0, |n| n.sample(rng) * v.abs());
                out.push(StdpRecord {
                    delta_t: dt,
                    g_initial: g,
                    g_final: apply_normalized_change(g, v),
                });
            }
        }
    }
    Ok(out)
}

/// `Δt` values from `lo` to `hi` inclusive with spacing `step`.
pub fn dt_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}
