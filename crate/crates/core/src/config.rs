//! Flat `key = value` configuration files for simulation runs.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! Keys not present keep the [`SimConfig::default`] value. Time values are
//! picoseconds.
//!
//! ```text
//! gamma = 1e-4
//! kappa1 = 0.5
//! eta1 = 0.32
//! profile = gaussian        # gaussian | triangular | tabulated
//! tau_ps = 350
//! scan_delays_ps = -1050, -875, 0, 875, 1050
//! ```

use crate::error::{Error, Result};
use crate::model::{IndistinguishabilityProfile, ProfileShape};
use crate::sim::SimConfig;

/// Every accepted key, in the order [`RunConfig::to_kv_string`] writes them.
pub const KEYS: &[&str] = &[
    "gamma",
    "kappa1",
    "kappa2",
    "eta1",
    "eta2",
    "dark_prob1",
    "dark_prob2",
    "dead_pulses1",
    "dead_pulses2",
    "afterpulse_prob1",
    "afterpulse_prob2",
    "profile",
    "nu_max",
    "tau_ps",
    "profile_table",
    "delta_t_ps",
    "rep_period_ps",
    "timebin_ps",
    "divider",
    "n_pulses",
    "seed",
    "jitter_sigma_ps",
    "gate_window_ps",
    "click_offset_ps",
    "stray_dark_rate_hz",
    "shards",
    "scan_delays_ps",
];

/// A simulation configuration plus an optional delay grid for scans.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scan_delays_ps: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", lineno + 1));
                continue;
            };
            if let Err(e) = cfg.set(key.trim(), value.trim()) {
                problems.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems.join("; ")));
        }
        Ok(cfg)
    }

    /// Apply one setting; used by the file parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sim = &mut self.sim;
        match key {
            "gamma" => sim.source.gamma = parse_f64(key, value)?,
            "kappa1" => sim.source.kappa1 = parse_f64(key, value)?,
            "kappa2" => sim.source.kappa2 = parse_f64(key, value)?,
            "eta1" => sim.det1.eta = parse_f64(key, value)?,
            "eta2" => sim.det2.eta = parse_f64(key, value)?,
            "dark_prob1" => sim.det1.dark_prob = parse_f64(key, value)?,
            "dark_prob2" => sim.det2.dark_prob = parse_f64(key, value)?,
            "dead_pulses1" => sim.det1.dead_pulses = parse_int(key, value)?,
            "dead_pulses2" => sim.det2.dead_pulses = parse_int(key, value)?,
            "afterpulse_prob1" => sim.det1.afterpulse_prob = parse_f64(key, value)?,
            "afterpulse_prob2" => sim.det2.afterpulse_prob = parse_f64(key, value)?,
            "profile" => {
                sim.profile.shape = match value {
                    "gaussian" => ProfileShape::Gaussian,
                    "triangular" => ProfileShape::Triangular,
                    "tabulated" => match &sim.profile.shape {
                        ProfileShape::Tabulated(t) => ProfileShape::Tabulated(t.clone()),
                        _ => ProfileShape::Tabulated(Vec::new()),
                    },
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "profile must be gaussian, triangular or tabulated, got `{other}`"
                        )))
                    }
                }
            }
            "nu_max" => sim.profile.nu_max = parse_f64(key, value)?,
            "tau_ps" => sim.profile.tau = parse_f64(key, value)?,
            "profile_table" => {
                let table = value
                    .split(',')
                    .map(|pair| {
                        let (d, v) = pair.trim().split_once(':').ok_or_else(|| {
                            Error::InvalidConfig(format!(
                                "profile_table entries are `delay:overlap`, got `{pair}`"
                            ))
                        })?;
                        Ok((parse_f64(key, d.trim())?, parse_f64(key, v.trim())?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                sim.profile.shape = ProfileShape::Tabulated(table);
            }
            "delta_t_ps" => sim.delta_t_ps = parse_f64(key, value)?,
            "rep_period_ps" => sim.rep_period_ps = parse_int(key, value)?,
            "timebin_ps" => sim.timebin_ps = parse_int(key, value)?,
            "divider" => sim.divider = parse_int(key, value)?,
            "n_pulses" => sim.n_pulses = parse_count(key, value)?,
            "seed" => sim.seed = parse_int(key, value)?,
            "jitter_sigma_ps" => sim.jitter_sigma_ps = parse_f64(key, value)?,
            "gate_window_ps" => sim.gate_window_ps = parse_f64(key, value)?,
            "click_offset_ps" => sim.click_offset_ps = parse_f64(key, value)?,
            "stray_dark_rate_hz" => sim.stray_dark_rate_hz = parse_f64(key, value)?,
            "shards" => sim.shards = parse_int(key, value)?,
            "scan_delays_ps" => {
                self.scan_delays_ps = Some(
                    value
                        .split(',')
                        .map(|v| parse_f64(key, v.trim()))
                        .collect::<Result<_>>()?,
                )
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn to_kv_string(&self) -> String {
        let s = &self.sim;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("gamma", fmt(s.source.gamma));
        put("kappa1", fmt(s.source.kappa1));
        put("kappa2", fmt(s.source.kappa2));
        put("eta1", fmt(s.det1.eta));
        put("eta2", fmt(s.det2.eta));
        put("dark_prob1", fmt(s.det1.dark_prob));
        put("dark_prob2", fmt(s.det2.dark_prob));
        put("dead_pulses1", s.det1.dead_pulses.to_string());
        put("dead_pulses2", s.det2.dead_pulses.to_string());
        put("afterpulse_prob1", fmt(s.det1.afterpulse_prob));
        put("afterpulse_prob2", fmt(s.det2.afterpulse_prob));
        let IndistinguishabilityProfile { nu_max, tau, shape } = &s.profile;
        let kind = match shape {
            ProfileShape::Gaussian => "gaussian",
            ProfileShape::Triangular => "triangular",
            ProfileShape::Tabulated(_) => "tabulated",
        };
        put("profile", kind.into());
        put("nu_max", fmt(*nu_max));
        put("tau_ps", fmt(*tau));
        if let ProfileShape::Tabulated(table) = shape {
            let entries: Vec<String> = table
                .iter()
                .map(|(d, v)| format!("{}:{}", fmt(*d), fmt(*v)))
                .collect();
            put("profile_table", entries.join(", "));
        }
        put("delta_t_ps", fmt(s.delta_t_ps));
        put("rep_period_ps", s.rep_period_ps.to_string());
        put("timebin_ps", s.timebin_ps.to_string());
        put("divider", s.divider.to_string());
        put("n_pulses", s.n_pulses.to_string());
        put("seed", s.seed.to_string());
        put("jitter_sigma_ps", fmt(s.jitter_sigma_ps));
        put("gate_window_ps", fmt(s.gate_window_ps));
        put("click_offset_ps", fmt(s.click_offset_ps));
        put("stray_dark_rate_hz", fmt(s.stray_dark_rate_hz));
        put("shards", s.shards.to_string());
        if let Some(delays) = &self.scan_delays_ps {
            let v: Vec<String> = delays.iter().map(|d| fmt(*d)).collect();
            put("scan_delays_ps", v.join(", "));
        }
        out
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}`: `{value}` is not a finite number")))
}

fn parse_int<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .replace('_', "")
        .parse::<T>()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: `{value}` is not a valid integer")))
}

/// Integer that may also be written as an exact float like `1e8`.
fn parse_count(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = parse_int::<u64>(key, value) {
        return Ok(v);
    }
    let f = parse_f64(key, value)?;
    if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(Error::InvalidConfig(format!("`{key}`: `{value}` is not a whole count")))
    }
}
