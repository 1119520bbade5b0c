//! Closed-form statistics for heralding on zero photons.
//!
//! Covers the single-mode heralding formulas (no-click probability, success
//! probability, heralded fidelity) and the two-photon HOM model: the output
//! photon-number table, singles and coincidence click probabilities, the
//! heralded `P(C2|NC1)` (exact Bayes form and the small-`gamma` balanced
//! approximation) and the center-to-wings ratio (CWR) with its inversions.
//!
//! Times are in picoseconds. Everything here is a pure function of its inputs.

use std::io::Write;

use crate::error::{check_unit, Error, Result};

/// Identity tolerance for probability sums.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Pair emission and input coupling of the PDC source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl SourceParams {
    pub fn new(gamma: f64, kappa1: f64, kappa2: f64) -> Result<Self> {
        let src = Self {
            gamma,
            kappa1,
            kappa2,
        };
        src.validate()?;
        Ok(src)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("gamma", self.gamma)?;
        check_unit("kappa1", self.kappa1)?;
        check_unit("kappa2", self.kappa2)
    }

    /// Arithmetic mean of the two couplings.
    pub fn kappa_mean(&self) -> f64 {
        0.5 * (self.kappa1 + self.kappa2)
    }

    /// Geometric mean of the two couplings.
    pub fn kappa_geo(&self) -> f64 {
        (self.kappa1 * self.kappa2).sqrt()
    }
}

/// A click detector observed once per pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub eta: f64,
    /// Dark-count probability per gate window.
    pub dark_prob: f64,
    /// Pulses ignored after each click.
    pub dead_pulses: u32,
    /// Probability that a click is followed by a spurious click on the first
    /// live pulse after the dead window.
    pub afterpulse_prob: f64,
}

impl DetectorParams {
    pub fn new(eta: f64, dark_prob: f64, dead_pulses: u32, afterpulse_prob: f64) -> Result<Self> {
        let det = Self {
            eta,
            dark_prob,
            dead_pulses,
            afterpulse_prob,
        };
        det.validate()?;
        Ok(det)
    }

    /// Perfect-timing detector with only an efficiency and a dark-count probability.
    pub fn ideal(eta: f64, dark_prob: f64) -> Self {
        Self {
            eta,
            dark_prob,
            dead_pulses: 0,
            afterpulse_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("eta", self.eta)?;
        check_unit("dark_prob", self.dark_prob)?;
        check_unit("afterpulse_prob", self.afterpulse_prob)
    }
}

/// Effective efficiency `sqrt(kappa1 kappa2) * eta` of one detection channel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EffectiveEfficiency(f64);

impl EffectiveEfficiency {
    pub fn new(value: f64) -> Result<Self> {
        check_unit("eta_prime", value)?;
        Ok(Self(value))
    }

    pub fn from_parts(src: &SourceParams, eta: f64) -> Result<Self> {
        Self::new(src.kappa_geo() * eta)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileShape {
    /// `nu_max * exp(-(dt/tau)^2)`
    Gaussian,
    /// `nu_max * max(0, 1 - |dt|/tau)`
    Triangular,
    /// Relative overlap in `[0, 1]` at sorted delays, linearly interpolated and
    /// scaled by `nu_max`. Delays outside the table are rejected.
    Tabulated(Vec<(f64, f64)>),
}

/// Delay-dependent two-photon overlap `nu(dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndistinguishabilityProfile {
    pub nu_max: f64,
    /// Coherence width in ps; unused by tabulated shapes.
    pub tau: f64,
    pub shape: ProfileShape,
}

impl IndistinguishabilityProfile {
    pub fn gaussian(nu_max: f64, tau: f64) -> Self {
        Self {
            nu_max,
            tau,
            shape: ProfileShape::Gaussian,
        }
    }

    pub fn triangular(nu_max: f64, tau: f64) -> Self {
        Self {
            nu_max,
            tau,
            shape: ProfileShape::Triangular,
        }
    }

    pub fn tabulated(nu_max: f64, table: Vec<(f64, f64)>) -> Result<Self> {
        let profile = Self {
            nu_max,
            tau: 0.0,
            shape: ProfileShape::Tabulated(table),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("nu_max", self.nu_max)?;
        match &self.shape {
            ProfileShape::Gaussian | ProfileShape::Triangular => {
                if !(self.tau > 0.0 && self.tau.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "tau",
                        value: self.tau,
                        reason: "must be positive and finite",
                    });
                }
            }
            ProfileShape::Tabulated(table) => {
                if table.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "tabulated profile needs at least 2 points".into(),
                    ));
                }
                if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidConfig(
                        "tabulated profile delays must be strictly increasing".into(),
                    ));
                }
                for &(_, v) in table {
                    check_unit("tabulated overlap", v)?;
                }
            }
        }
        Ok(())
    }

    /// Overlap at delay `delta_t` (ps).
    pub fn nu(&self, delta_t: f64) -> Result<f64> {
        match &self.shape {
            ProfileShape::Gaussian => {
                let x = delta_t / self.tau;
                Ok(self.nu_max * (-x * x).exp())
            }
            ProfileShape::Triangular => {
                Ok(self.nu_max * (1.0 - delta_t.abs() / self.tau).max(0.0))
            }
            ProfileShape::Tabulated(table) => {
                let (min, max) = (table[0].0, table[table.len() - 1].0);
                if !(min..=max).contains(&delta_t) {
                    return Err(Error::OutOfDomain { delta_t, min, max });
                }
                let hi = table.partition_point(|&(d, _)| d < delta_t).max(1);
                let (d0, v0) = table[hi - 1];
                let (d1, v1) = table[hi];
                let frac = (delta_t - d0) / (d1 - d0);
                Ok(self.nu_max * (v0 + frac * (v1 - v0)))
            }
        }
    }
}

/// Convenience wrapper over [`IndistinguishabilityProfile::nu`].
pub fn nu_of_delay(profile: &IndistinguishabilityProfile, delta_t: f64) -> Result<f64> {
    profile.nu(delta_t)
}

/// No-click probability of a detector receiving `n` photons: `(1-d)(1-eta)^n`.
pub fn p_noclick_given_n(det: &DetectorParams, n: u32) -> f64 {
    (1.0 - det.dark_prob) * (1.0 - det.eta).powi(n as i32)
}

fn check_distribution(dist: &[f64]) -> Result<()> {
    if let Some(&p) = dist.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "photon_dist",
            value: p,
            reason: "probabilities must be non-negative",
        });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized { sum });
    }
    Ok(())
}

fn weighted_miss(dist: &[f64], eta: f64) -> f64 {
    dist.iter()
        .enumerate()
        .map(|(n, p)| (1.0 - eta).powi(n as i32) * p)
        .sum()
}

/// Probability that the heralding detector reports no click, given the
/// photon-number distribution `dist[n]` of its mode.
pub fn success_probability(dist: &[f64], det: &DetectorParams) -> Result<f64> {
    check_distribution(dist)?;
    Ok((1.0 - det.dark_prob) * weighted_miss(dist, det.eta))
}

/// Probability that a no-click event heralds the vacuum in the heralding mode.
/// The dark-count factor cancels.
pub fn heralded_fidelity(dist: &[f64], det: &DetectorParams) -> Result<f64> {
    check_distribution(dist)?;
    let denom = weighted_miss(dist, det.eta);
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "no-click probability is zero (eta = 1 with an empty vacuum component)".into(),
        ));
    }
    Ok(dist.first().copied().unwrap_or(0.0) / denom)
}

/// Photon-number outcomes `(m, n)` at the two interferometer outputs,
/// truncated at one emitted pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputDistribution {
    pub p00: f64,
    pub p10: f64,
    pub p01: f64,
    pub p11: f64,
    pub p20: f64,
    pub p02: f64,
}

impl OutputDistribution {
    pub fn sum(&self) -> f64 {
        self.p00 + self.p10 + self.p01 + self.p11 + self.p20 + self.p02
    }

    /// `(m, n, probability)` for all six outcomes.
    pub fn outcomes(&self) -> [(u32, u32, f64); 6] {
        [
            (0, 0, self.p00),
            (1, 0, self.p10),
            (0, 1, self.p01),
            (1, 1, self.p11),
            (2, 0, self.p20),
            (0, 2, self.p02),
        ]
    }

    /// Photon-number distribution `[P0, P1, P2]` of output 1 (the heralding mode).
    pub fn output1_marginal(&self) -> [f64; 3] {
        [
            self.p00 + self.p01 + self.p02,
            self.p10 + self.p11,
            self.p20,
        ]
    }

    /// Photon-number distribution `[P0, P1, P2]` of output 2.
    pub fn output2_marginal(&self) -> [f64; 3] {
        [
            self.p00 + self.p10 + self.p20,
            self.p01 + self.p11,
            self.p02,
        ]
    }
}

fn check_nu(nu: f64) -> Result<()> {
    check_unit("nu", nu)
}

pub fn output_distribution(src: &SourceParams, nu: f64) -> Result<OutputDistribution> {
    src.validate()?;
    check_nu(nu)?;
    let SourceParams {
        gamma,
        kappa1: k1,
        kappa2: k2,
    } = *src;
    let p11 = gamma * k1 * k2 * (1.0 - nu) / 2.0;
    let p10 = gamma * (k1 * (1.0 - k2) + (1.0 - k1) * k2) / 2.0;
    let p20 = gamma * k1 * k2 * (1.0 + nu) / 4.0;
    Ok(OutputDistribution {
        p00: 1.0 - gamma * (k1 + k2 - k1 * k2),
        p10,
        p01: p10,
        p11,
        p20,
        p02: p20,
    })
}

/// Interferometer output, numbered as the detectors behind it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    One,
    Two,
}

/// Singles click probability at one output, dark counts neglected. The model
/// is symmetric under exchange of the outputs, so `which` only labels the call.
pub fn p_click_single(which: Output, src: &SourceParams, eta_i: f64, nu: f64) -> Result<f64> {
    let _ = which;
    src.validate()?;
    check_unit("eta", eta_i)?;
    check_nu(nu)?;
    let kg = src.kappa_geo();
    let km = src.kappa_mean();
    // gamma*eta*kg/4 * [4 km/kg - (1+nu) eta kg], expanded so kg = 0 stays finite.
    Ok(src.gamma * eta_i * km - src.gamma * eta_i * eta_i * kg * kg * (1.0 + nu) / 4.0)
}

/// Joint click probability, dark counts neglected.
pub fn p_coincidence(src: &SourceParams, eta1: f64, eta2: f64, nu: f64) -> Result<f64> {
    src.validate()?;
    check_unit("eta1", eta1)?;
    check_unit("eta2", eta2)?;
    check_nu(nu)?;
    let kg = src.kappa_geo();
    Ok(src.gamma * eta1 * eta2 * kg * kg * (1.0 - nu) / 2.0)
}

/// `P(C2|NC1) = (P(C2) - P(C1 ^ C2)) / (1 - P(C1))`, dark counts neglected.
pub fn p_c2_given_nc1_exact(src: &SourceParams, eta1: f64, eta2: f64, nu: f64) -> Result<f64> {
    let c1 = p_click_single(Output::One, src, eta1, nu)?;
    let c2 = p_click_single(Output::Two, src, eta2, nu)?;
    let c12 = p_coincidence(src, eta1, eta2, nu)?;
    if c1 >= 1.0 {
        return Err(Error::Degenerate(
            "detector 1 clicks with certainty; no-click events never occur".into(),
        ));
    }
    Ok((c2 - c12) / (1.0 - c1))
}

/// Balanced-coupling, small-`gamma` form of `P(C2|NC1)`. Only meaningful for
/// `gamma << 1`; this is not enforced.
pub fn p_c2_given_nc1_approx(
    eta1p: EffectiveEfficiency,
    eta2p: EffectiveEfficiency,
    gamma: f64,
    nu: f64,
) -> f64 {
    let (e1, e2) = (eta1p.value(), eta2p.value());
    gamma * e2 / 4.0 * (4.0 - e2 - 2.0 * e1 + nu * (2.0 * e1 - e2))
}

/// Center-to-wings ratio of the heralded D2 rate.
pub fn cwr_approx(eta1p: EffectiveEfficiency, eta2p: EffectiveEfficiency, nu_max: f64) -> f64 {
    let (e1, e2) = (eta1p.value(), eta2p.value());
    let wings = 4.0 - 2.0 * e1 - e2;
    (wings + nu_max * (2.0 * e1 - e2)) / wings
}

/// Solve the CWR relation for the heralding efficiency.
pub fn invert_cwr_for_eta1(
    cwr: f64,
    eta2p: EffectiveEfficiency,
    nu_max: f64,
) -> Result<EffectiveEfficiency> {
    check_unit("nu_max", nu_max)?;
    let e2 = eta2p.value();
    let r = cwr - 1.0;
    let denom = 2.0 * (nu_max + r);
    if nu_max == 0.0 || denom == 0.0 || !cwr.is_finite() {
        return Err(Error::NoSolution(format!(
            "cwr {cwr} cannot be produced with eta2' = {e2}, nu_max = {nu_max}"
        )));
    }
    let e1 = (r * (4.0 - e2) + nu_max * e2) / denom;
    clamp_solution(e1, "eta1'", cwr)
}

/// Solve the CWR relation with no heralding (`eta1' = 0`) for the output efficiency.
pub fn invert_cwr_unheralded_for_eta2(cwr: f64, nu_max: f64) -> Result<EffectiveEfficiency> {
    check_unit("nu_max", nu_max)?;
    let r = cwr - 1.0;
    if nu_max == 0.0 || r == nu_max || !cwr.is_finite() {
        return Err(Error::NoSolution(format!(
            "unheralded cwr {cwr} cannot be produced with nu_max = {nu_max}"
        )));
    }
    clamp_solution(4.0 * r / (r - nu_max), "eta2'", cwr)
}

fn clamp_solution(value: f64, what: &str, cwr: f64) -> Result<EffectiveEfficiency> {
    const SLACK: f64 = 1e-12;
    if !(-SLACK..=1.0 + SLACK).contains(&value) {
        return Err(Error::NoSolution(format!(
            "cwr {cwr} needs {what} = {value}, outside [0, 1]"
        )));
    }
    EffectiveEfficiency::new(value.clamp(0.0, 1.0))
}

/// Click statistics of both detectors for one pulse, dark counts included.
///
/// Built by summing the output table against per-detector no-click
/// probabilities; with zero dark counts it reduces to the closed forms above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickStatistics {
    pub p_c1: f64,
    pub p_c2: f64,
    pub p_c1_and_c2: f64,
    pub p_nc1: f64,
    pub p_c2_given_nc1: f64,
}

pub fn click_statistics(
    src: &SourceParams,
    det1: &DetectorParams,
    det2: &DetectorParams,
    nu: f64,
) -> Result<ClickStatistics> {
    det1.validate()?;
    det2.validate()?;
    let dist = output_distribution(src, nu)?;
    let (mut nc1, mut nc2, mut nc12) = (0.0, 0.0, 0.0);
    for (m, n, p) in dist.outcomes() {
        let a = p_noclick_given_n(det1, m);
        let b = p_noclick_given_n(det2, n);
        nc1 += p * a;
        nc2 += p * b;
        nc12 += p * a * b;
    }
    let p_c2_given_nc1 = if nc1 > 0.0 { (nc1 - nc12) / nc1 } else { f64::NAN };
    Ok(ClickStatistics {
        p_c1: 1.0 - nc1,
        p_c2: 1.0 - nc2,
        p_c1_and_c2: 1.0 - nc1 - nc2 + nc12,
        p_nc1: nc1,
        p_c2_given_nc1,
    })
}

/// One row of a model curve over delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub delta_t: f64,
    pub nu: f64,
    pub p_c1: f64,
    pub p_c2: f64,
    pub p_coinc: f64,
    pub p_c2_given_nc1_exact: f64,
    pub p_c2_given_nc1_approx: f64,
    /// Heralded rate relative to its large-delay asymptote.
    pub cwr: f64,
}

pub fn model_curve(
    src: &SourceParams,
    eta1: f64,
    eta2: f64,
    profile: &IndistinguishabilityProfile,
    delays: &[f64],
) -> Result<Vec<CurveRow>> {
    profile.validate()?;
    let e1p = EffectiveEfficiency::from_parts(src, eta1)?;
    let e2p = EffectiveEfficiency::from_parts(src, eta2)?;
    delays
        .iter()
        .map(|&delta_t| {
            let nu = profile.nu(delta_t)?;
            Ok(CurveRow {
                delta_t,
                nu,
                p_c1: p_click_single(Output::One, src, eta1, nu)?,
                p_c2: p_click_single(Output::Two, src, eta2, nu)?,
                p_coinc: p_coincidence(src, eta1, eta2, nu)?,
                p_c2_given_nc1_exact: p_c2_given_nc1_exact(src, eta1, eta2, nu)?,
                p_c2_given_nc1_approx: p_c2_given_nc1_approx(e1p, e2p, src.gamma, nu),
                cwr: cwr_approx(e1p, e2p, nu),
            })
        })
        .collect()
}

pub const CURVE_CSV_HEADER: &str =
    "delta_t,nu,p_c1,p_c2,p_coinc,p_c2_given_nc1_exact,p_c2_given_nc1_approx,cwr";

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.delta_t,
            r.nu,
            r.p_c1,
            r.p_c2,
            r.p_coinc,
            r.p_c2_given_nc1_exact,
            r.p_c2_given_nc1_approx,
            r.cwr
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eff(v: f64) -> EffectiveEfficiency {
        EffectiveEfficiency::new(v).unwrap()
    }

    #[test]
    fn gaussian_profile_values() {
        let p = IndistinguishabilityProfile::gaussian(0.975, 350.0);
        assert_eq!(p.nu(0.0).unwrap(), 0.975);
        let p = IndistinguishabilityProfile::gaussian(1.0, 350.0);
        assert!((p.nu(350.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(p.nu(1e6).unwrap() < 1e-300);
        assert_eq!(p.nu(120.0).unwrap(), p.nu(-120.0).unwrap());
    }

    #[test]
    fn triangular_profile_is_even_and_compact() {
        let p = IndistinguishabilityProfile::triangular(0.9, 100.0);
        assert_eq!(p.nu(0.0).unwrap(), 0.9);
        assert!((p.nu(50.0).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(p.nu(-50.0).unwrap(), p.nu(50.0).unwrap());
        assert_eq!(p.nu(150.0).unwrap(), 0.0);
    }

    #[test]
    fn tabulated_profile_interpolates_and_rejects_outside() {
        let p = IndistinguishabilityProfile::tabulated(
            0.5,
            vec![(-100.0, 0.0), (0.0, 1.0), (100.0, 0.0)],
        )
        .unwrap();
        assert_eq!(p.nu(0.0).unwrap(), 0.5);
        assert!((p.nu(-50.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(p.nu(100.0).unwrap(), 0.0);
        assert!(matches!(p.nu(100.5), Err(Error::OutOfDomain { .. })));
        assert!(IndistinguishabilityProfile::tabulated(1.0, vec![(0.0, 1.0), (0.0, 0.5)]).is_err());
    }

    #[test]
    fn noclick_examples() {
        assert_eq!(p_noclick_given_n(&DetectorParams::ideal(0.3, 0.0), 0), 1.0);
        assert_eq!(p_noclick_given_n(&DetectorParams::ideal(1.0, 0.0), 3), 0.0);
        // Two photons, each missed with 1/2, and no dark count with 0.99.
        let enumerated: f64 = 0.99 * 0.5 * 0.5;
        assert!((p_noclick_given_n(&DetectorParams::ideal(0.5, 0.01), 2) - enumerated).abs() < 1e-15);
        assert!((enumerated - 0.2475).abs() < 1e-15);
    }

    #[test]
    fn success_and_fidelity_examples() {
        let half = [0.5, 0.5];
        let s = success_probability(&half, &DetectorParams::ideal(0.5, 0.0)).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
        let s = success_probability(&[1.0], &DetectorParams::ideal(0.7, 0.0)).unwrap();
        assert_eq!(s, 1.0);
        let s = success_probability(&half, &DetectorParams::ideal(0.5, 0.1)).unwrap();
        assert!((s - (0.9 * 0.5 + 0.9 * 0.5 * 0.5)).abs() < 1e-15);
        assert!((s - 0.675).abs() < 1e-15);

        let f = heralded_fidelity(&half, &DetectorParams::ideal(1.0, 0.0)).unwrap();
        assert_eq!(f, 1.0);
        let f = heralded_fidelity(&half, &DetectorParams::ideal(0.5, 0.0)).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        let f = heralded_fidelity(&half, &DetectorParams::ideal(0.0, 0.0)).unwrap();
        assert_eq!(f, 0.5);
    }

    #[test]
    fn distribution_errors() {
        let det = DetectorParams::ideal(0.5, 0.0);
        assert!(matches!(
            success_probability(&[0.5, 0.4], &det),
            Err(Error::Unnormalized { .. })
        ));
        assert!(matches!(
            heralded_fidelity(&[0.0, 1.0], &DetectorParams::ideal(1.0, 0.0)),
            Err(Error::Degenerate(_))
        ));
        assert!(success_probability(&[1.5, -0.5], &det).is_err());
    }

    #[test]
    fn output_distribution_examples() {
        let src = SourceParams::new(1e-4, 1.0, 1.0).unwrap();
        assert_eq!(output_distribution(&src, 1.0).unwrap().p11, 0.0);
        let src = SourceParams::new(4e-4, 1.0, 1.0).unwrap();
        let d = output_distribution(&src, 0.0).unwrap();
        assert!((d.p20 - 1e-4).abs() < 1e-18);
        assert!((d.p02 - 1e-4).abs() < 1e-18);
        assert!((d.p11 - 2e-4).abs() < 1e-18);
        // TT, RR each give (1,1); TR, RT give (2,0)/(0,2): p11/p20 = 2 when distinguishable.
        assert!((d.p11 / d.p20 - 2.0).abs() < 1e-12);
        assert!((d.sum() - 1.0).abs() < 1e-12);
        assert!(output_distribution(&src, 1.2).is_err());
    }

    #[test]
    fn singles_and_coincidence_examples() {
        let src = SourceParams::new(1e-4, 1.0, 1.0).unwrap();
        assert_eq!(p_click_single(Output::One, &src, 0.0, 0.4).unwrap(), 0.0);
        let c = p_click_single(Output::One, &src, 1.0, 0.0).unwrap();
        assert!((c - 0.75e-4).abs() < 1e-18);
        let cc = p_coincidence(&src, 1.0, 1.0, 0.0).unwrap();
        assert!((cc - 0.5e-4).abs() < 1e-18);
        assert_eq!(p_coincidence(&src, 0.7, 0.3, 1.0).unwrap(), 0.0);
        let none = SourceParams::new(0.0, 0.6, 0.6).unwrap();
        assert_eq!(p_coincidence(&none, 0.7, 0.3, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn exact_conditional_examples() {
        let src = SourceParams::new(1e-4, 0.4, 0.7).unwrap();
        let exact = p_c2_given_nc1_exact(&src, 0.0, 0.5, 0.3).unwrap();
        let single = p_click_single(Output::Two, &src, 0.5, 0.3).unwrap();
        assert!((exact - single).abs() < 1e-18);

        let ideal = SourceParams::new(1e-4, 1.0, 1.0).unwrap();
        let v = p_c2_given_nc1_exact(&ideal, 1.0, 1.0, 1.0).unwrap();
        // Surviving NC1 outcomes: (0,0) and (0,2); only (0,2) clicks D2.
        let brute = 0.5e-4 / (1.0 - 0.5e-4);
        assert!((v - brute).abs() < 1e-18);
        assert!(((v - 0.5e-4) / 0.5e-4).abs() < 1e-4);

        let src = SourceParams::new(1e-4, 0.25, 0.25).unwrap();
        let exact = p_c2_given_nc1_exact(&src, 0.64, 0.60, 0.975).unwrap();
        let approx = p_c2_given_nc1_approx(eff(0.16), eff(0.15), 1e-4, 0.975);
        assert!(((exact - approx) / exact).abs() < 1e-3);
    }

    #[test]
    fn approx_examples() {
        let g = 1e-4;
        for nu in [0.0, 0.3, 1.0] {
            let ratio = p_c2_given_nc1_approx(eff(1.0), eff(0.4), g, nu)
                / p_c2_given_nc1_approx(eff(1.0), eff(0.4), g, 0.0);
            assert!((ratio - (1.0 + nu)).abs() < 1e-12);
        }
        assert_eq!(p_c2_given_nc1_approx(eff(0.5), eff(0.0), g, 0.5), 0.0);
        let ratio = p_c2_given_nc1_approx(eff(0.16), eff(0.15), g, 0.975)
            / p_c2_given_nc1_approx(eff(0.16), eff(0.15), g, 0.0);
        assert!((ratio - 1.047).abs() < 1e-3);
    }

    #[test]
    fn cwr_examples() {
        for e2 in [0.0, 0.15, 0.5, 1.0] {
            assert_eq!(cwr_approx(eff(1.0), eff(e2), 1.0), 2.0);
        }
        assert_eq!(cwr_approx(eff(0.075), eff(0.15), 0.975), 1.0);
        assert!((cwr_approx(eff(0.0), eff(1.0), 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((cwr_approx(eff(0.16), eff(0.15), 0.975) - 1.047).abs() < 1e-3);
        assert!((cwr_approx(eff(0.0), eff(0.15), 0.975) - 0.962).abs() < 1e-3);
    }

    #[test]
    fn cwr_inversion_examples() {
        let e1 = invert_cwr_for_eta1(1.0, eff(0.15), 0.975).unwrap();
        assert!((e1.value() - 0.075).abs() < 1e-12);
        let e1 = invert_cwr_for_eta1(2.0, eff(0.5), 1.0).unwrap();
        assert!((e1.value() - 1.0).abs() < 1e-12);
        let e1 = invert_cwr_for_eta1(1.047, eff(0.15), 0.975).unwrap();
        assert!((e1.value() - 0.16).abs() < 1e-3);
        let back = cwr_approx(e1, eff(0.15), 0.975);
        assert!((back - 1.047).abs() / 1.047 < 1e-9);

        assert!(matches!(
            invert_cwr_for_eta1(2.5, eff(0.15), 0.975),
            Err(Error::NoSolution(_))
        ));
        assert!(invert_cwr_for_eta1(1.02, eff(0.15), 0.0).is_err());

        let e2 = invert_cwr_unheralded_for_eta2(0.962, 0.975).unwrap();
        assert!((e2.value() - 0.15).abs() < 1e-3);
        assert!(invert_cwr_unheralded_for_eta2(1.1, 0.975).is_err());
    }

    #[test]
    fn click_statistics_match_closed_forms_without_darks() {
        let src = SourceParams::new(3e-3, 0.45, 0.62).unwrap();
        let d1 = DetectorParams::ideal(0.37, 0.0);
        let d2 = DetectorParams::ideal(0.81, 0.0);
        let st = click_statistics(&src, &d1, &d2, 0.6).unwrap();
        assert!((st.p_c1 - p_click_single(Output::One, &src, 0.37, 0.6).unwrap()).abs() < 1e-15);
        assert!((st.p_c2 - p_click_single(Output::Two, &src, 0.81, 0.6).unwrap()).abs() < 1e-15);
        assert!((st.p_c1_and_c2 - p_coincidence(&src, 0.37, 0.81, 0.6).unwrap()).abs() < 1e-15);
        let exact = p_c2_given_nc1_exact(&src, 0.37, 0.81, 0.6).unwrap();
        assert!((st.p_c2_given_nc1 - exact).abs() < 1e-14);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let src = SourceParams::new(1e-4, 1.0, 1.0).unwrap();
        let profile = IndistinguishabilityProfile::gaussian(1.0, 300.0);
        let rows = model_curve(&src, 1.0, 0.15, &profile, &[-300.0, 0.0, 300.0]).unwrap();
        assert_eq!(rows[1].cwr, 2.0);
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(CURVE_CSV_HEADER));
    }
}
