//! Measured quantities from event tables: singles, coincidences, heralded
//! `P(C2|NC1)`, Gaussian fits over delay scans, and efficiency extraction
//! from fitted center-to-wings ratios.
//!
//! Rates are per live pulse. A row is live when neither detector is dead;
//! dead rows are left out of numerators and denominators alike.

use nalgebra::{Matrix2, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::model::{
    click_statistics, cwr_approx, invert_cwr_for_eta1, invert_cwr_unheralded_for_eta2,
    DetectorParams, EffectiveEfficiency, SourceParams,
};
use crate::tags::{Channel, ChannelState, EventRow, PulseEventTable};

/// Integer tallies over live rows. Partial tallies over disjoint row sets
/// combine with [`RateCounts::merge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RateCounts {
    pub rows: u64,
    pub live: u64,
    pub clicks1: u64,
    pub clicks2: u64,
    pub coincidences: u64,
    /// Live rows with D1 no-click.
    pub nc1: u64,
    /// Live rows with D1 no-click and D2 click.
    pub heralded: u64,
}

impl RateCounts {
    /// Tally `n_rows` rows of which only `marked` differ from (no-click, no-click).
    pub fn from_marked(marked: &[EventRow], n_rows: u64) -> Self {
        let unmarked = n_rows - marked.len() as u64;
        let mut c = RateCounts {
            rows: n_rows,
            live: unmarked,
            nc1: unmarked,
            ..Default::default()
        };
        for row in marked.iter().filter(|r| r.is_live()) {
            c.live += 1;
            let c1 = row.d1 == ChannelState::Click;
            let c2 = row.d2 == ChannelState::Click;
            c.clicks1 += c1 as u64;
            c.clicks2 += c2 as u64;
            c.coincidences += (c1 && c2) as u64;
            if !c1 {
                c.nc1 += 1;
                c.heralded += c2 as u64;
            }
        }
        c
    }

    pub fn from_table(table: &PulseEventTable) -> Self {
        Self::from_marked(table.marked_rows(), table.n_rows())
    }

    pub fn merge(self, other: Self) -> Self {
        RateCounts {
            rows: self.rows + other.rows,
            live: self.live + other.live,
            clicks1: self.clicks1 + other.clicks1,
            clicks2: self.clicks2 + other.clicks2,
            coincidences: self.coincidences + other.coincidences,
            nc1: self.nc1 + other.nc1,
            heralded: self.heralded + other.heralded,
        }
    }
}

/// A rate `k / n` with Poisson error `sqrt(k) / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub stderr: f64,
}

impl Rate {
    fn of(k: u64, n: u64) -> Self {
        let n = n as f64;
        Rate {
            value: k as f64 / n,
            stderr: (k as f64).sqrt() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub delta_t: f64,
    pub counts: RateCounts,
    pub singles1: Rate,
    pub singles2: Rate,
    pub coincidence: Rate,
    /// `P(C2|NC1)` estimated over live D1 no-click rows.
    pub heralded_rate: Rate,
    /// Fraction of live rows with D1 no-click.
    pub heralding_success: Rate,
}

impl RateSummary {
    pub fn n_live_pulses(&self) -> u64 {
        self.counts.live
    }
}

pub fn compute_rates(table: &PulseEventTable, delta_t: f64) -> Result<RateSummary> {
    summarize(RateCounts::from_table(table), delta_t)
}

pub fn summarize(counts: RateCounts, delta_t: f64) -> Result<RateSummary> {
    if counts.live == 0 {
        return Err(Error::EmptyInput("no live pulses in the event table".into()));
    }
    if counts.nc1 == 0 {
        return Err(Error::Undefined(
            "no D1 no-click rows; the heralded rate is undefined".into(),
        ));
    }
    let n = counts.live;
    Ok(RateSummary {
        delta_t,
        counts,
        singles1: Rate::of(counts.clicks1, n),
        singles2: Rate::of(counts.clicks2, n),
        coincidence: Rate::of(counts.coincidences, n),
        heralded_rate: Rate::of(counts.heralded, counts.nc1),
        heralding_success: Rate::of(counts.nc1, n),
    })
}

/// Per-pulse probability to counts per second at the given pulse period.
pub fn per_second(rate: f64, rep_period_ps: u32) -> f64 {
    rate * 1e12 / rep_period_ps as f64
}

/// Histogram of spacings between consecutive click rows on one channel.
/// Entry `i` counts spacings of `i + 1` pulses, up to `max_lag`.
pub fn click_lag_histogram(table: &PulseEventTable, channel: Channel, max_lag: u64) -> Vec<u64> {
    let mut hist = vec![0u64; max_lag as usize];
    let mut last: Option<u64> = None;
    for row in table.marked_rows() {
        if row.state(channel) != ChannelState::Click {
            continue;
        }
        if let Some(prev) = last {
            let lag = row.pulse_index - prev;
            if (1..=max_lag).contains(&lag) {
                hist[lag as usize - 1] += 1;
            }
        }
        last = Some(row.pulse_index);
    }
    hist
}

/// Fraction of live D1 no-click rows whose heralding mode truly held no
/// photon, given the ascending pulses where it held at least one.
/// Returns `(fidelity, binomial stderr, no-click rows)`.
pub fn heralded_fidelity_from_truth(
    table: &PulseEventTable,
    occupied: impl IntoIterator<Item = u64>,
) -> Result<(f64, f64, u64)> {
    let counts = RateCounts::from_table(table);
    if counts.nc1 == 0 {
        return Err(Error::Undefined("no D1 no-click rows".into()));
    }
    let wrong = occupied
        .into_iter()
        .filter_map(|p| table.row(p))
        .filter(|r| r.is_live() && r.d1 == ChannelState::NoClick)
        .count() as f64;
    let n = counts.nc1 as f64;
    let f = 1.0 - wrong / n;
    Ok((f, (f * (1.0 - f) / n).sqrt(), counts.nc1))
}

/// One point of a delay scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub delta_t: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeHint {
    Peak,
    Dip,
    Auto,
}

pub const MAX_FIT_ITERATIONS: usize = 200;
pub const FIT_REL_TOL: f64 = 1e-9;

/// `a + b exp(-(dt - t0)^2 / (2 sigma^2))` fitted by weighted least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub baseline: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Parameter covariance in the order (baseline, amplitude, center, width).
    pub covariance: [[f64; 4]; 4],
    /// `(a + b) / a`
    pub cwr: f64,
    pub cwr_err: f64,
    /// `|b| / a`
    pub visibility: f64,
    pub visibility_err: f64,
    /// `sqrt(chi^2)` of the weighted residuals.
    pub residual_norm: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn baseline_err(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn amplitude_err(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn center_err(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }

    pub fn width_err(&self) -> f64 {
        self.covariance[3][3].sqrt()
    }

    pub fn eval(&self, delta_t: f64) -> f64 {
        gaussian(&Vector4::new(self.baseline, self.amplitude, self.center, self.width), delta_t).0
    }

    fn finish(p: Vector4<f64>, cov: Matrix4<f64>, chi2: f64, dof: usize, iterations: usize) -> Self {
        let (a, b) = (p[0], p[1]);
        let var_ab = |ga: f64, gb: f64| {
            (ga * ga * cov[(0, 0)] + 2.0 * ga * gb * cov[(0, 1)] + gb * gb * cov[(1, 1)])
                .max(0.0)
                .sqrt()
        };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = cov[(i, j)];
            }
        }
        FitResult {
            baseline: a,
            amplitude: b,
            center: p[2],
            width: p[3],
            covariance,
            cwr: (a + b) / a,
            cwr_err: var_ab(-b / (a * a), 1.0 / a),
            visibility: b.abs() / a,
            visibility_err: var_ab(-sign * b / (a * a), sign / a),
            residual_norm: chi2.sqrt(),
            dof,
            iterations,
        }
    }
}

/// Model value and gradient with respect to (a, b, t0, sigma).
fn gaussian(p: &Vector4<f64>, x: f64) -> (f64, Vector4<f64>) {
    let (a, b, t0, s) = (p[0], p[1], p[2], p[3]);
    let u = x - t0;
    let g = (-u * u / (2.0 * s * s)).exp();
    let grad = Vector4::new(1.0, g, b * g * u / (s * s), b * g * u * u / (s * s * s));
    (a + b * g, grad)
}

fn chi2(points: &[ScanPoint], weights: &[f64], p: &Vector4<f64>) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(pt, w)| {
            let r = pt.value - gaussian(p, pt.delta_t).0;
            w * r * r
        })
        .sum()
}

fn normal_equations(points: &[ScanPoint], weights: &[f64], p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (pt, &w) in points.iter().zip(weights) {
        let (f, grad) = gaussian(p, pt.delta_t);
        jtj += w * grad * grad.transpose();
        jtr += w * (pt.value - f) * grad;
    }
    (jtj, jtr)
}

/// Weighted Levenberg-Marquardt fit of a Gaussian peak or dip on a baseline.
///
/// Weights are `1/stderr^2`; points with a non-positive stderr take the
/// smallest positive stderr in the set. Initialization is deterministic:
/// baseline from the outer quartiles by delay, center at the most extreme
/// point, width a sixth of the delay span.
pub fn gaussian_fit(points: &[ScanPoint], hint: ShapeHint) -> Result<FitResult> {
    let (pts, weights) = prepare(points, 5)?;
    let span = pts[pts.len() - 1].delta_t - pts[0].delta_t;
    let dof = pts.len() - 4;

    let q = (pts.len() / 4).max(1);
    let outer: Vec<f64> = pts[..q].iter().chain(&pts[pts.len() - q..]).map(|p| p.value).collect();
    let a0 = outer.iter().sum::<f64>() / outer.len() as f64;
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.value), hi.max(p.value))
    });
    let width0 = span / 2.0 / 3.0;
    let mid = 0.5 * (pts[0].delta_t + pts[pts.len() - 1].delta_t);

    if hi - lo <= 1e-15 * hi.abs().max(lo.abs()) {
        return linear_fit(&pts, &weights, mid, width0, (f64::INFINITY, f64::INFINITY), true);
    }

    let extreme = match hint {
        ShapeHint::Peak => pts.iter().max_by(|a, b| a.value.total_cmp(&b.value)),
        ShapeHint::Dip => pts.iter().min_by(|a, b| a.value.total_cmp(&b.value)),
        ShapeHint::Auto => pts
            .iter()
            .max_by(|a, b| (a.value - a0).abs().total_cmp(&(b.value - a0).abs())),
    }
    .unwrap();
    let mut p = Vector4::new(a0, extreme.value - a0, extreme.delta_t, width0);

    // Keep the center inside the scanned range and the width between a
    // fraction of the smallest spacing and twice the span.
    let min_gap = pts
        .windows(2)
        .map(|w| w[1].delta_t - w[0].delta_t)
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let (w_lo, w_hi) = (0.25 * min_gap, 2.0 * span);
    let (c_lo, c_hi) = (pts[0].delta_t, pts[pts.len() - 1].delta_t);
    let project = |v: &mut Vector4<f64>| {
        v[2] = v[2].clamp(c_lo, c_hi);
        v[3] = v[3].abs().clamp(w_lo, w_hi);
    };
    project(&mut p);

    let scale = Vector4::new(a0.abs().max(hi.abs()), a0.abs().max(hi.abs()), span, span);
    let mut lambda = 1e-3;
    let mut current = chi2(&pts, &weights, &p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&pts, &weights, &p);
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-30 * jtj.diagonal().max());
        }
        // Parameters sitting on a bound and pushed outward are held for this step.
        let solve = |held: [bool; 4]| {
            let mut m = damped;
            let mut rhs = jtr;
            for i in (0..4).filter(|&i| held[i]) {
                m.set_row(i, &nalgebra::RowVector4::zeros());
                m.set_column(i, &Vector4::zeros());
                m[(i, i)] = 1.0;
                rhs[i] = 0.0;
            }
            m.cholesky().map(|c| c.solve(&rhs))
        };
        let Some(mut step) = solve([false; 4]) else {
            lambda *= 10.0;
            continue;
        };
        let mut held = [false; 4];
        for (i, lo, hi) in [(2, c_lo, c_hi), (3, w_lo, w_hi)] {
            held[i] = (p[i] <= lo && step[i] < 0.0) || (p[i] >= hi && step[i] > 0.0);
        }
        if held.iter().any(|&h| h) {
            match solve(held) {
                Some(s) => step = s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            }
        }
        let mut trial = p + step;
        project(&mut trial);
        let moved = trial - p;
        let trial_chi2 = chi2(&pts, &weights, &trial);
        let small = (0..4).all(|i| moved[i].abs() <= FIT_REL_TOL * (p[i].abs() + scale[i]));
        if trial_chi2 <= current {
            p = trial;
            current = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if small {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitDiverged {
            iterations,
            residual_norm: current.sqrt(),
        });
    }
    let (jtj, _) = normal_equations(&pts, &weights, &p);
    let cov = jtj.try_inverse().unwrap_or_else(|| partial_covariance(&jtj));
    let fit = FitResult::finish(p, cov, current, dof, iterations);
    match hint {
        ShapeHint::Peak if fit.amplitude <= 0.0 => Err(Error::WrongShape(format!(
            "peak fit converged to a dip (amplitude {})",
            fit.amplitude
        ))),
        ShapeHint::Dip if fit.amplitude >= 0.0 => Err(Error::WrongShape(format!(
            "dip fit converged to a peak (amplitude {})",
            fit.amplitude
        ))),
        _ => Ok(fit),
    }
}

/// Covariance of (a, b) only, for when the center and width are not
/// identified (vanishing amplitude).
fn partial_covariance(jtj: &Matrix4<f64>) -> Matrix4<f64> {
    let mut cov = Matrix4::from_diagonal_element(f64::INFINITY);
    let sub = Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(1, 0)], jtj[(1, 1)]);
    if let Some(inv) = sub.try_inverse() {
        for i in 0..2 {
            for j in 0..2 {
                cov[(i, j)] = inv[(i, j)];
            }
        }
    }
    cov
}

/// Weighted linear fit of `a + b g(dt)` with the Gaussian `g` fixed.
/// With `flat`, `b` is pinned to zero.
fn linear_fit(
    pts: &[ScanPoint],
    weights: &[f64],
    center: f64,
    width: f64,
    shape_cov: (f64, f64),
    flat: bool,
) -> Result<FitResult> {
    let p0 = Vector4::new(0.0, 1.0, center, width);
    let mut m = Matrix2::zeros();
    let mut rhs = nalgebra::Vector2::zeros();
    for (pt, &w) in pts.iter().zip(weights) {
        let basis = nalgebra::Vector2::new(1.0, gaussian(&p0, pt.delta_t).0);
        m += w * basis * basis.transpose();
        rhs += w * pt.value * basis;
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("linear fit normal equations are singular".into()))?;
    let ab = inv * rhs;
    let p = Vector4::new(ab[0], if flat { 0.0 } else { ab[1] }, center, width);
    if !(p[0] > 0.0) {
        return Err(Error::Degenerate(format!("fitted baseline {} is not positive", p[0])));
    }
    let mut cov = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            cov[(i, j)] = inv[(i, j)];
        }
    }
    cov[(2, 2)] = shape_cov.0;
    cov[(3, 3)] = shape_cov.1;
    let residual = chi2(pts, weights, &p);
    let dof = pts.len().saturating_sub(if flat { 1 } else { 2 });
    Ok(FitResult::finish(p, cov, residual, dof, 0))
}

fn prepare(points: &[ScanPoint], min_points: usize) -> Result<(Vec<ScanPoint>, Vec<f64>)> {
    if points.len() < min_points {
        return Err(Error::EmptyInput(format!(
            "a Gaussian fit needs at least {min_points} points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.delta_t.is_finite() && p.value.is_finite())) {
        return Err(Error::Degenerate("non-finite scan point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.delta_t.total_cmp(&b.delta_t));
    if pts[pts.len() - 1].delta_t - pts[0].delta_t <= 0.0 {
        return Err(Error::Degenerate("all scan points share one delay".into()));
    }
    let floor = pts
        .iter()
        .map(|p| p.stderr)
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let weights = pts
        .iter()
        .map(|p| {
            let s = if p.stderr > 0.0 { p.stderr } else { floor };
            if s.is_finite() { 1.0 / (s * s) } else { 1.0 }
        })
        .collect();
    Ok((pts, weights))
}

/// Fit baseline and amplitude only, borrowing center and width from another
/// fit over the same delays. All rates are affine in the overlap, so every
/// series shares one delay shape; a strong series (the coincidence dip) can
/// pin it down for weak ones.
pub fn gaussian_fit_with_shape(points: &[ScanPoint], shape: &FitResult) -> Result<FitResult> {
    let (pts, weights) = prepare(points, 3)?;
    linear_fit(
        &pts,
        &weights,
        shape.center,
        shape.width,
        (shape.covariance[2][2], shape.covariance[3][3]),
        false,
    )
}

/// Dip visibility `|b|/a` with its propagated error.
pub fn visibility(fit: &FitResult) -> Result<(f64, f64)> {
    if fit.amplitude > 0.0 {
        return Err(Error::WrongShape(format!(
            "visibility needs a dip fit, amplitude is {}",
            fit.amplitude
        )));
    }
    Ok((fit.visibility, fit.visibility_err))
}

/// `(eta1', eta2')` from the CWR of the heralded scan and of the unheralded
/// D2 singles scan.
pub fn estimate_efficiencies(
    cwr_peak: &FitResult,
    cwr_noherald: &FitResult,
    nu_max: f64,
) -> Result<(EffectiveEfficiency, EffectiveEfficiency)> {
    efficiencies_from_cwr(cwr_peak.cwr, cwr_noherald.cwr, nu_max)
}

pub fn efficiencies_from_cwr(
    cwr_peak: f64,
    cwr_noherald: f64,
    nu_max: f64,
) -> Result<(EffectiveEfficiency, EffectiveEfficiency)> {
    let eta2p = invert_cwr_unheralded_for_eta2(cwr_noherald, nu_max)?;
    let eta1p = invert_cwr_for_eta1(cwr_peak, eta2p, nu_max)?;
    let back = cwr_approx(eta1p, eta2p, nu_max);
    let back0 = cwr_approx(EffectiveEfficiency::new(0.0)?, eta2p, nu_max);
    if (back - cwr_peak).abs() > 1e-6 || (back0 - cwr_noherald).abs() > 1e-6 {
        return Err(Error::NoSolution(format!(
            "efficiencies ({}, {}) do not reproduce the measured ratios",
            eta1p.value(),
            eta2p.value()
        )));
    }
    Ok((eta1p, eta2p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub name: &'static str,
    pub measured: f64,
    pub predicted: f64,
    pub stderr: f64,
    pub z: f64,
    /// Zero standard error with a nonzero deviation.
    pub deterministic_mismatch: bool,
}

impl ZScore {
    fn new(name: &'static str, rate: Rate, predicted: f64) -> Self {
        let dev = rate.value - predicted;
        let (z, deterministic_mismatch) = if rate.stderr > 0.0 {
            (dev / rate.stderr, false)
        } else if dev.abs() <= 1e-15 {
            (0.0, false)
        } else {
            (dev.signum() * f64::INFINITY, true)
        };
        ZScore {
            name,
            measured: rate.value,
            predicted,
            stderr: rate.stderr,
            z,
            deterministic_mismatch,
        }
    }
}

/// z-scores of singles, coincidence and heralded rates against the model.
/// Predictions include dark counts; with `dark_prob = 0` they are exactly
/// the closed-form singles, coincidence and conditional expressions.
pub fn compare_to_model(
    summary: &RateSummary,
    src: &SourceParams,
    det1: &DetectorParams,
    det2: &DetectorParams,
    nu: f64,
) -> Result<[ZScore; 4]> {
    let st = click_statistics(src, det1, det2, nu)?;
    Ok([
        ZScore::new("singles1", summary.singles1, st.p_c1),
        ZScore::new("singles2", summary.singles2, st.p_c2),
        ZScore::new("coincidence", summary.coincidence, st.p_c1_and_c2),
        ZScore::new("heralded_rate", summary.heralded_rate, st.p_c2_given_nc1),
    ])
}

/// Fixed 17-significant-digit rendering used by every report.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "Infinity".into()
    } else {
        "-Infinity".into()
    }
}

fn json_num(v: f64) -> String {
    if v.is_finite() {
        fmt17(v)
    } else {
        "null".into()
    }
}

pub const RATES_CSV_HEADER: &str = "delta_t,n_rows,n_live,clicks1,clicks2,coincidences,nc1,heralded,\
singles1,singles1_err,singles2,singles2_err,coincidence,coincidence_err,\
heralded_rate,heralded_rate_err,heralding_success,heralding_success_err,\
singles1_per_s,singles2_per_s,coincidence_per_s,heralded_per_s";

impl RateSummary {
    pub fn csv_row(&self, rep_period_ps: u32) -> String {
        let c = &self.counts;
        let mut f = vec![fmt17(self.delta_t)];
        f.extend(
            [c.rows, c.live, c.clicks1, c.clicks2, c.coincidences, c.nc1, c.heralded]
                .iter()
                .map(u64::to_string),
        );
        for r in [
            self.singles1,
            self.singles2,
            self.coincidence,
            self.heralded_rate,
            self.heralding_success,
        ] {
            f.push(fmt17(r.value));
            f.push(fmt17(r.stderr));
        }
        for r in [self.singles1, self.singles2, self.coincidence, self.heralded_rate] {
            f.push(fmt17(per_second(r.value, rep_period_ps)));
        }
        f.join(",")
    }

    pub fn json_line(&self, rep_period_ps: u32) -> String {
        let c = &self.counts;
        let mut parts = vec![format!("\"delta_t\":{}", json_num(self.delta_t))];
        for (k, v) in [
            ("n_rows", c.rows),
            ("n_live", c.live),
            ("clicks1", c.clicks1),
            ("clicks2", c.clicks2),
            ("coincidences", c.coincidences),
            ("nc1", c.nc1),
            ("heralded", c.heralded),
        ] {
            parts.push(format!("\"{k}\":{v}"));
        }
        for (k, r) in [
            ("singles1", self.singles1),
            ("singles2", self.singles2),
            ("coincidence", self.coincidence),
            ("heralded_rate", self.heralded_rate),
            ("heralding_success", self.heralding_success),
        ] {
            parts.push(format!("\"{k}\":{}", json_num(r.value)));
            parts.push(format!("\"{k}_err\":{}", json_num(r.stderr)));
        }
        for (k, r) in [
            ("singles1_per_s", self.singles1),
            ("singles2_per_s", self.singles2),
            ("coincidence_per_s", self.coincidence),
            ("heralded_per_s", self.heralded_rate),
        ] {
            parts.push(format!("\"{k}\":{}", json_num(per_second(r.value, rep_period_ps))));
        }
        format!("{{{}}}", parts.join(","))
    }
}

impl FitResult {
    pub fn json_line(&self, series: &str) -> String {
        let fields = [
            ("baseline", self.baseline),
            ("baseline_err", self.baseline_err()),
            ("amplitude", self.amplitude),
            ("amplitude_err", self.amplitude_err()),
            ("center", self.center),
            ("center_err", self.center_err()),
            ("width", self.width),
            ("width_err", self.width_err()),
            ("cwr", self.cwr),
            ("cwr_err", self.cwr_err),
            ("visibility", self.visibility),
            ("visibility_err", self.visibility_err),
            ("residual_norm", self.residual_norm),
        ];
        let mut parts = vec![format!("\"series\":\"{series}\"")];
        parts.extend(fields.iter().map(|(k, v)| format!("\"{k}\":{}", json_num(*v))));
        parts.push(format!("\"dof\":{}", self.dof));
        parts.push(format!("\"iterations\":{}", self.iterations));
        format!("{{{}}}", parts.join(","))
    }
}

impl ZScore {
    pub fn json_line(&self, delta_t: f64) -> String {
        format!(
            "{{\"delta_t\":{},\"rate\":\"{}\",\"measured\":{},\"predicted\":{},\"stderr\":{},\"z\":{},\"deterministic_mismatch\":{}}}",
            json_num(delta_t),
            self.name,
            json_num(self.measured),
            json_num(self.predicted),
            json_num(self.stderr),
            json_num(self.z),
            self.deterministic_mismatch
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::ChannelState::{Click as C, Dead as X, NoClick as N};

    fn table(states: &[(ChannelState, ChannelState)]) -> PulseEventTable {
        let rows = states.iter().enumerate().map(|(i, &(d1, d2))| EventRow {
            pulse_index: i as u64,
            d1,
            d2,
        });
        PulseEventTable::from_rows(rows, 0).unwrap()
    }

    #[test]
    fn all_no_click_table() {
        let t = table(&[(N, N); 20]);
        let s = compute_rates(&t, 0.0).unwrap();
        assert_eq!(s.singles1.value, 0.0);
        assert_eq!(s.singles2.value, 0.0);
        assert_eq!(s.coincidence.value, 0.0);
        assert_eq!(s.heralded_rate.value, 0.0);
        assert_eq!(s.heralding_success.value, 1.0);
    }

    #[test]
    fn ten_row_fixture_heralded_rate() {
        // 6 of 10 rows are D1 no-click, 2 of those have a D2 click.
        let t = table(&[
            (N, C),
            (C, N),
            (N, N),
            (C, C),
            (N, N),
            (N, C),
            (C, N),
            (N, N),
            (C, N),
            (N, N),
        ]);
        let s = compute_rates(&t, 0.0).unwrap();
        assert_eq!(s.counts.nc1, 6);
        assert_eq!(s.counts.heralded, 2);
        assert_eq!(s.heralded_rate.value, 1.0 / 3.0);
        assert_eq!(s.heralding_success.value, 0.6);
        assert_eq!(s.coincidence.value, 0.1);
        assert!((s.heralded_rate.stderr - 2f64.sqrt() / 6.0).abs() < 1e-15);
        // singles2 = heralded + coincident clicks
        assert_eq!(s.counts.clicks2, s.counts.heralded + s.counts.coincidences);
    }

    #[test]
    fn dead_rows_leave_both_numerator_and_denominator() {
        let t = table(&[(C, N), (X, N), (X, C), (N, N), (N, C)]);
        let s = compute_rates(&t, 0.0).unwrap();
        assert_eq!(s.counts.live, 3);
        assert_eq!(s.counts.nc1, 2);
        assert_eq!(s.counts.heralded, 1);
        assert_eq!(s.counts.clicks2, 1);
    }

    #[test]
    fn empty_and_undefined_errors() {
        let t = table(&[(X, N), (N, X)]);
        assert!(matches!(compute_rates(&t, 0.0), Err(Error::EmptyInput(_))));
        let t = table(&[(C, N), (C, C)]);
        assert!(matches!(compute_rates(&t, 0.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn counts_merge_over_partitions() {
        let states = [(N, C), (C, N), (X, C), (C, C), (N, N), (N, C), (C, X)];
        let t = table(&states);
        let whole = RateCounts::from_table(&t);
        let marked = t.marked_rows();
        let left = RateCounts::from_marked(&marked[..3], 3);
        let right = RateCounts::from_marked(&marked[3..], 4);
        assert_eq!(left.merge(right), whole);
        assert_eq!(right.merge(left), whole);
    }

    #[test]
    fn lag_histogram_counts_consecutive_clicks() {
        let t = table(&[(C, N), (N, N), (C, N), (C, N), (N, N), (N, N), (N, N), (C, N)]);
        assert_eq!(click_lag_histogram(&t, Channel::D1, 5), vec![1, 1, 0, 1, 0]);
        assert_eq!(click_lag_histogram(&t, Channel::D2, 5), vec![0; 5]);
    }

    fn synthetic(a: f64, b: f64, t0: f64, s: f64) -> Vec<ScanPoint> {
        (-6..=6)
            .map(|i| {
                let x = i as f64 * 100.0;
                let v = a + b * (-(x - t0) * (x - t0) / (2.0 * s * s)).exp();
                ScanPoint {
                    delta_t: x,
                    value: v,
                    stderr: 0.01 * a,
                }
            })
            .collect()
    }

    #[test]
    fn exact_gaussian_is_recovered() {
        let fit = gaussian_fit(&synthetic(2.0, 0.7, 35.0, 180.0), ShapeHint::Peak).unwrap();
        for (got, want) in [
            (fit.baseline, 2.0),
            (fit.amplitude, 0.7),
            (fit.center, 35.0),
            (fit.width, 180.0),
        ] {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!((fit.cwr - 1.35).abs() < 1e-6);

        let fit = gaussian_fit(&synthetic(1.0, -0.975, 0.0, 250.0), ShapeHint::Dip).unwrap();
        assert!((fit.visibility - 0.975).abs() < 1e-6);
        let (v, _) = visibility(&fit).unwrap();
        assert!((v - 0.975).abs() < 1e-6);
        let auto = gaussian_fit(&synthetic(1.0, -0.975, 0.0, 250.0), ShapeHint::Auto).unwrap();
        assert!((auto.amplitude + 0.975).abs() < 1e-6);
    }

    #[test]
    fn flat_data_gives_unit_cwr() {
        let pts: Vec<ScanPoint> = (-6..=6)
            .map(|i| ScanPoint {
                delta_t: i as f64,
                value: 3.0,
                stderr: 0.1,
            })
            .collect();
        let fit = gaussian_fit(&pts, ShapeHint::Auto).unwrap();
        assert_eq!(fit.amplitude, 0.0);
        assert!((fit.cwr - 1.0).abs() < 1e-12);
        assert!(fit.cwr_err > 0.0 && fit.cwr_err.is_finite());
        assert_eq!(visibility(&fit).unwrap().0, 0.0);
    }

    #[test]
    fn fit_input_errors() {
        let few = &synthetic(1.0, 0.5, 0.0, 100.0)[..4];
        assert!(matches!(gaussian_fit(few, ShapeHint::Auto), Err(Error::EmptyInput(_))));
        let peak = gaussian_fit(&synthetic(1.0, 0.5, 0.0, 150.0), ShapeHint::Peak).unwrap();
        assert!(matches!(visibility(&peak), Err(Error::WrongShape(_))));
    }

    #[test]
    fn borrowed_shape_is_linear() {
        let shape = gaussian_fit(&synthetic(1.0, -0.9, 20.0, 220.0), ShapeHint::Dip).unwrap();
        let fit = gaussian_fit_with_shape(&synthetic(4.0, 1.2, 20.0, 220.0), &shape).unwrap();
        assert!((fit.baseline - 4.0).abs() < 1e-6 && (fit.amplitude - 1.2).abs() < 1e-6);
        assert_eq!((fit.center, fit.width), (shape.center, shape.width));
        assert_eq!(fit.iterations, 0);
        assert!(gaussian_fit_with_shape(&synthetic(1.0, 0.1, 0.0, 100.0)[..2], &shape).is_err());
    }

    // A dip buried in noise used to walk the width along its bound forever.
    #[test]
    fn weak_dip_terminates_inside_bounds() {
        let mut pts = synthetic(1.0, -0.005, 0.0, 200.0);
        for (i, p) in pts.iter_mut().enumerate() {
            p.value += if i % 3 == 0 { 0.012 } else { -0.006 };
        }
        match gaussian_fit(&pts, ShapeHint::Auto) {
            Ok(f) => assert!(f.width >= 25.0 && f.width <= 2400.0, "{}", f.width),
            Err(e) => assert!(matches!(e, Error::FitDiverged { .. } | Error::WrongShape(..)), "{e}"),
        }
    }

    #[test]
    fn efficiency_examples() {
        let e2 = invert_cwr_unheralded_for_eta2(0.962, 0.975).unwrap();
        assert!((e2.value() - 0.15).abs() < 1e-3);
        let e = |v| EffectiveEfficiency::new(v).unwrap();
        let peak = cwr_approx(e(0.3), e(0.2), 1.0);
        let dip = cwr_approx(e(0.0), e(0.2), 1.0);
        let (e1, e2) = efficiencies_from_cwr(peak, dip, 1.0).unwrap();
        assert!((e1.value() - 0.3).abs() < 1e-6);
        assert!((e2.value() - 0.2).abs() < 1e-6);
        assert!(efficiencies_from_cwr(1.2, 1.1, 1.0).is_err());
    }

    #[test]
    fn zero_pair_rate_has_zero_z() {
        let t = table(&[(N, N); 50]);
        let s = compute_rates(&t, 0.0).unwrap();
        let src = SourceParams::new(0.0, 0.5, 0.5).unwrap();
        let det = DetectorParams::ideal(0.3, 0.0);
        let z = compare_to_model(&s, &src, &det, &det, 0.5).unwrap();
        assert!(z.iter().all(|z| z.z == 0.0 && !z.deterministic_mismatch));

        let darkish = DetectorParams::ideal(0.3, 0.01);
        let z = compare_to_model(&s, &src, &darkish, &det, 0.5).unwrap();
        assert!(z[0].deterministic_mismatch);
    }

    #[test]
    fn report_lines_use_17_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        let t = table(&[(N, C), (C, N), (N, N)]);
        let s = compute_rates(&t, 5.0).unwrap();
        let row = s.csv_row(10_000);
        assert_eq!(row.split(',').count(), RATES_CSV_HEADER.split(',').count());
        assert!(s.json_line(10_000).starts_with("{\"delta_t\":5.0000000000000000e0"));
    }
}
