//! Monte Carlo trial engine.
//!
//! Each pulse independently may emit a pair (`gamma`), fire an in-gate dark
//! count on either detector, or fire a stray (out-of-gate) dark count. Those
//! five Bernoulli processes are advanced with geometric gap sampling, so the
//! work done is proportional to the number of eventful pulses rather than to
//! `n_pulses`. Reference tags are laid down arithmetically at every
//! `divider`-th pulse.
//!
//! Pulse ranges can be split into shards. Every shard runs a ChaCha8 stream
//! selected by its shard index and starts with both detectors live, so dead
//! time and pending afterpulses do not cross shard boundaries. That biases
//! the dead fraction by at most `dead_pulses / shard_length`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DetectorParams, IndistinguishabilityProfile, SourceParams};
use crate::tags::{Channel, StreamHeader, TagStream, TimeTag};

pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(seed), stream = shard index";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub source: SourceParams,
    pub det1: DetectorParams,
    pub det2: DetectorParams,
    pub profile: IndistinguishabilityProfile,
    /// Interferometer delay in ps.
    pub delta_t_ps: f64,
    pub rep_period_ps: u32,
    pub timebin_ps: u32,
    /// One reference tag per `divider` pulses.
    pub divider: u32,
    pub n_pulses: u64,
    pub seed: u64,
    /// Gaussian timing jitter of photon clicks, ps.
    pub jitter_sigma_ps: f64,
    /// Gate the in-gate dark counts are confined to, ps. Should match the
    /// analysis gate.
    pub gate_window_ps: f64,
    /// Fixed delay of photon clicks after the pulse, ps.
    pub click_offset_ps: f64,
    /// Free-running dark rate outside the gate, per detector, counts/s.
    pub stray_dark_rate_hz: f64,
    pub shards: u32,
}

impl Default for SimConfig {
    /// 100 MHz pulses, 81 ps timebins, 1/512 reference division, balanced
    /// 50 % coupling and detector efficiencies giving `eta1' = 0.16`,
    /// `eta2' = 0.15`. Dark counts of 6e-7 per gate plus 240 counts/s outside
    /// the gate put ~60 counts/s through a 2 ns gate. The physical dead time
    /// (2 pulses) is shorter than the usual 5-pulse software dead time, so
    /// afterpulses land where the software dead time removes them.
    fn default() -> Self {
        let det = |eta| DetectorParams {
            eta,
            dark_prob: 6e-7,
            dead_pulses: 2,
            afterpulse_prob: 0.005,
        };
        Self {
            source: SourceParams {
                gamma: 1e-4,
                kappa1: 0.5,
                kappa2: 0.5,
            },
            det1: det(0.32),
            det2: det(0.30),
            profile: IndistinguishabilityProfile::gaussian(0.975, 350.0),
            delta_t_ps: 0.0,
            rep_period_ps: 10_000,
            timebin_ps: 81,
            divider: 512,
            n_pulses: 10_000_000,
            seed: 1,
            jitter_sigma_ps: 0.0,
            gate_window_ps: 2000.0,
            click_offset_ps: 0.0,
            stray_dark_rate_hz: 240.0,
            shards: 1,
        }
    }
}

impl SimConfig {
    /// Returns every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                out.push(e.to_string());
            }
        };
        check(self.source.validate());
        check(self.det1.validate());
        check(self.det2.validate());
        check(self.profile.validate());
        let mut push = |cond: bool, msg: String| {
            if !cond {
                out.push(msg);
            }
        };
        push(self.delta_t_ps.is_finite(), "delta_t_ps must be finite".into());
        push(self.rep_period_ps > 0, "rep_period_ps must be positive".into());
        push(self.timebin_ps > 0, "timebin_ps must be positive".into());
        push(self.divider >= 1, "divider must be at least 1".into());
        push(self.n_pulses >= 1, "n_pulses must be at least 1".into());
        push(self.shards >= 1, "shards must be at least 1".into());
        let period = self.rep_period_ps as f64;
        let timebin = self.timebin_ps as f64;
        push(
            self.gate_window_ps > 2.0 * timebin && self.gate_window_ps < period - 3.0 * timebin,
            format!(
                "gate_window_ps = {} must exceed two timebins and leave three timebins before the next pulse",
                self.gate_window_ps
            ),
        );
        push(
            self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps < self.gate_window_ps,
            format!(
                "jitter_sigma_ps = {} must be non-negative and smaller than the gate window",
                self.jitter_sigma_ps
            ),
        );
        push(
            self.click_offset_ps >= 0.0 && self.click_offset_ps < self.gate_window_ps,
            format!(
                "click_offset_ps = {} must lie inside the gate window",
                self.click_offset_ps
            ),
        );
        push(
            self.stray_dark_rate_hz >= 0.0 && self.stray_probability() <= 1.0,
            format!(
                "stray_dark_rate_hz = {} must be non-negative and below one count per out-of-gate interval",
                self.stray_dark_rate_hz
            ),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems.join("; ")));
        }
        self.check_capacity()
    }

    fn check_capacity(&self) -> Result<()> {
        let span_ps = (self.n_pulses as u128 + 1) * self.rep_period_ps as u128;
        let last_timebin = span_ps / self.timebin_ps as u128;
        if last_timebin > u64::MAX as u128 {
            return Err(Error::Capacity(format!(
                "{} pulses of {} ps overflow a 64-bit counter of {} ps timebins",
                self.n_pulses, self.rep_period_ps, self.timebin_ps
            )));
        }
        Ok(())
    }

    /// Probability of a stray dark count between two consecutive gates.
    pub fn stray_probability(&self) -> f64 {
        let outside_ps = self.rep_period_ps as f64 - self.gate_window_ps;
        self.stray_dark_rate_hz * outside_ps.max(0.0) * 1e-12
    }

    pub fn nu(&self) -> Result<f64> {
        self.profile.nu(self.delta_t_ps)
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(self.timebin_ps, self.rep_period_ps, self.divider)
    }

    pub fn provenance_note(&self) -> String {
        format!("{RNG_ALGORITHM}; seed = {}; shards = {}", self.seed, self.shards)
    }
}

/// Photon numbers `(m, n)` reaching outputs 1 and 2 in one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialOutcome {
    pub m: u8,
    pub n: u8,
}

impl TrialOutcome {
    pub const VACUUM: TrialOutcome = TrialOutcome { m: 0, n: 0 };

    /// Position in [`crate::model::OutputDistribution::outcomes`] order.
    pub fn index(self) -> usize {
        match (self.m, self.n) {
            (0, 0) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            (1, 1) => 3,
            (2, 0) => 4,
            (0, 2) => 5,
            _ => unreachable!("at most one pair per pulse"),
        }
    }
}

/// Outcome of one pulse, pair emission included.
pub fn sample_trial<R: Rng + ?Sized>(rng: &mut R, src: &SourceParams, nu: f64) -> TrialOutcome {
    if rng.random::<f64>() < src.gamma {
        sample_pair_outcome(rng, src, nu)
    } else {
        TrialOutcome::VACUUM
    }
}

/// Outcome of a pulse known to carry a pair: each photon survives its
/// coupling independently, then the beamsplitter sorts the survivors.
pub fn sample_pair_outcome<R: Rng + ?Sized>(rng: &mut R, src: &SourceParams, nu: f64) -> TrialOutcome {
    let first = rng.random::<f64>() < src.kappa1;
    let second = rng.random::<f64>() < src.kappa2;
    match (first, second) {
        (true, true) => {
            let u = rng.random::<f64>();
            let p11 = (1.0 - nu) / 2.0;
            if u < p11 {
                TrialOutcome { m: 1, n: 1 }
            } else if u < p11 + (1.0 + nu) / 4.0 {
                TrialOutcome { m: 2, n: 0 }
            } else {
                TrialOutcome { m: 0, n: 2 }
            }
        }
        (true, false) | (false, true) => {
            if rng.random::<f64>() < 0.5 {
                TrialOutcome { m: 1, n: 0 }
            } else {
                TrialOutcome { m: 0, n: 1 }
            }
        }
        (false, false) => TrialOutcome::VACUUM,
    }
}

/// Dead-time bookkeeping of one detector, in absolute pulse indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectorState {
    /// First pulse at which the detector can click again.
    pub live_from: u64,
    /// Pulse carrying a scheduled afterpulse.
    pub afterpulse_at: Option<u64>,
}

impl DetectorState {
    pub fn is_dead(&self, pulse: u64) -> bool {
        pulse < self.live_from
    }

    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R, pulse: u64, det: &DetectorParams) {
        self.live_from = pulse + 1 + det.dead_pulses as u64;
        self.afterpulse_at = (det.afterpulse_prob > 0.0 && rng.random::<f64>() < det.afterpulse_prob)
            .then_some(self.live_from);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClickCause {
    Photon,
    Dark,
    Afterpulse,
}

fn resolve_click<R: Rng + ?Sized>(
    rng: &mut R,
    pulse: u64,
    photons: u8,
    det: &DetectorParams,
    dark: bool,
    state: &mut DetectorState,
) -> Option<ClickCause> {
    let afterpulse = state.afterpulse_at == Some(pulse);
    if afterpulse {
        state.afterpulse_at = None;
    }
    if state.is_dead(pulse) {
        return None;
    }
    let photon = photons > 0 && rng.random::<f64>() >= (1.0 - det.eta).powi(photons as i32);
    let cause = if photon {
        ClickCause::Photon
    } else if dark {
        ClickCause::Dark
    } else if afterpulse {
        ClickCause::Afterpulse
    } else {
        return None;
    };
    state.fire(rng, pulse, det);
    Some(cause)
}

/// One detector observation at pulse `pulse`: a dead detector stays silent,
/// otherwise it clicks with probability `1 - (1-d)(1-eta)^photons` or when an
/// afterpulse is due.
pub fn detect_pulse<R: Rng + ?Sized>(
    rng: &mut R,
    pulse: u64,
    photons: u8,
    det: &DetectorParams,
    state: &mut DetectorState,
) -> bool {
    let dark = det.dark_prob > 0.0 && rng.random::<f64>() < det.dark_prob;
    resolve_click(rng, pulse, photons, det, dark, state).is_some()
}

/// Per-pulse truth for pulses that carried photons or produced an in-gate click.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthEvent {
    pub pulse: u64,
    pub m: u8,
    pub n: u8,
    /// Bit 0: D1 clicked in the gate; bit 1: D2 clicked in the gate.
    pub clicks: u8,
}

impl TruthEvent {
    pub fn clicked(&self, detector: usize) -> bool {
        self.clicks & (1 << detector) != 0
    }
}

/// Internal counters of a run, used as ground truth by tests and reports.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub n_pulses: u64,
    pub pairs_emitted: u64,
    /// Pulses per outcome, in [`crate::model::OutputDistribution::outcomes`] order.
    pub outcome_counts: [u64; 6],
    /// In-gate clicks per detector, whatever the cause.
    pub gate_clicks: [u64; 2],
    pub dark_clicks: [u64; 2],
    pub afterpulse_clicks: [u64; 2],
    pub stray_clicks: [u64; 2],
    /// Photon-bearing or dark-firing pulses that found the detector dead.
    pub blocked_by_dead: [u64; 2],
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    fn merge(&mut self, other: GroundTruth) {
        self.n_pulses += other.n_pulses;
        self.pairs_emitted += other.pairs_emitted;
        for i in 0..6 {
            self.outcome_counts[i] += other.outcome_counts[i];
        }
        for i in 0..2 {
            self.gate_clicks[i] += other.gate_clicks[i];
            self.dark_clicks[i] += other.dark_clicks[i];
            self.afterpulse_clicks[i] += other.afterpulse_clicks[i];
            self.stray_clicks[i] += other.stray_clicks[i];
            self.blocked_by_dead[i] += other.blocked_by_dead[i];
        }
        self.events.extend(other.events);
    }

    /// Pulses where output 1 carried at least one photon, ascending.
    pub fn occupied_output1(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter(|e| e.m > 0).map(|e| e.pulse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub stream: TagStream,
    pub truth: GroundTruth,
    pub nu: f64,
}

/// A Bernoulli-per-pulse process advanced by geometric gaps.
struct Sparse {
    gap: Option<Geometric>,
    next: u64,
}

impl Sparse {
    fn new<R: Rng + ?Sized>(rng: &mut R, p: f64, start: u64) -> Self {
        let gap = (p > 0.0).then(|| Geometric::new(p.min(1.0)).expect("probability in (0, 1]"));
        let mut s = Self { gap, next: u64::MAX };
        s.advance(rng, start);
        s
    }

    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R, from: u64) {
        self.next = match &self.gap {
            Some(g) => from.saturating_add(g.sample(rng)),
            None => u64::MAX,
        };
    }
}

struct TagClock {
    period: i128,
    timebin: i128,
}

impl TagClock {
    fn timestamp(&self, pulse: u64, offset_ps: i64) -> u64 {
        let t = pulse as i128 * self.period + offset_ps as i128;
        (t.max(0) / self.timebin) as u64
    }
}

fn shard_ranges(n_pulses: u64, shards: u32) -> Vec<(u64, u64)> {
    let shards = shards.max(1) as u64;
    let base = n_pulses / shards;
    let extra = n_pulses % shards;
    let mut start = 0;
    (0..shards)
        .map(|s| {
            let len = base + u64::from(s < extra);
            let range = (start, start + len);
            start += len;
            range
        })
        .filter(|(a, b)| a < b)
        .collect()
}

fn simulate_shard(cfg: &SimConfig, nu: f64, shard: u64, start: u64, end: u64) -> (Vec<TimeTag>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(shard);

    let clock = TagClock {
        period: cfg.rep_period_ps as i128,
        timebin: cfg.timebin_ps as i128,
    };
    let dets = [cfg.det1, cfg.det2];
    let timebin = cfg.timebin_ps as f64;
    let gate_span = (cfg.gate_window_ps - 2.0 * timebin).max(1.0);
    let stray_lo = cfg.gate_window_ps + timebin;
    let stray_span = (cfg.rep_period_ps as f64 - 2.0 * timebin - stray_lo).max(1.0);
    let jitter = (cfg.jitter_sigma_ps > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma_ps).expect("finite jitter"));
    let stray_p = cfg.stray_probability();

    // pair, dark D1, dark D2, stray D1, stray D2
    let mut procs = [
        Sparse::new(&mut rng, cfg.source.gamma, start),
        Sparse::new(&mut rng, dets[0].dark_prob, start),
        Sparse::new(&mut rng, dets[1].dark_prob, start),
        Sparse::new(&mut rng, stray_p, start),
        Sparse::new(&mut rng, stray_p, start),
    ];
    let mut states = [
        DetectorState {
            live_from: start,
            afterpulse_at: None,
        };
        2
    ];
    let mut tags = Vec::new();
    let mut truth = GroundTruth {
        n_pulses: end - start,
        ..GroundTruth::default()
    };

    let divider = cfg.divider as u64;
    let mut next_ref = start.div_ceil(divider) * divider;
    let channels = [Channel::D1, Channel::D2];

    loop {
        let mut k = procs.iter().map(|p| p.next).min().unwrap();
        for st in &states {
            if let Some(a) = st.afterpulse_at {
                k = k.min(a);
            }
        }
        while next_ref < end && next_ref <= k {
            tags.push(TimeTag::new(Channel::Ref, clock.timestamp(next_ref, 0)));
            next_ref += divider;
        }
        if k >= end {
            break;
        }
        let fired: [bool; 5] = std::array::from_fn(|i| procs[i].next == k);
        for (i, p) in procs.iter_mut().enumerate() {
            if fired[i] {
                p.advance(&mut rng, k + 1);
            }
        }

        let outcome = if fired[0] {
            truth.pairs_emitted += 1;
            sample_pair_outcome(&mut rng, &cfg.source, nu)
        } else {
            TrialOutcome::VACUUM
        };
        if outcome != TrialOutcome::VACUUM {
            truth.outcome_counts[outcome.index()] += 1;
        }

        let mut clicks = 0u8;
        for d in 0..2 {
            let photons = if d == 0 { outcome.m } else { outcome.n };
            let was_dead = states[d].is_dead(k);
            let cause = resolve_click(&mut rng, k, photons, &dets[d], fired[1 + d], &mut states[d]);
            if was_dead && (photons > 0 || fired[1 + d]) {
                truth.blocked_by_dead[d] += 1;
            }
            let Some(cause) = cause else { continue };
            clicks |= 1 << d;
            truth.gate_clicks[d] += 1;
            let offset = match cause {
                ClickCause::Photon => {
                    let j = jitter.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    (cfg.click_offset_ps + j).round() as i64
                }
                ClickCause::Dark | ClickCause::Afterpulse => {
                    if cause == ClickCause::Dark {
                        truth.dark_clicks[d] += 1;
                    } else {
                        truth.afterpulse_clicks[d] += 1;
                    }
                    (rng.random::<f64>() * gate_span).floor() as i64
                }
            };
            tags.push(TimeTag::new(channels[d], clock.timestamp(k, offset.max(0))));
        }
        if outcome != TrialOutcome::VACUUM || clicks != 0 {
            truth.events.push(TruthEvent {
                pulse: k,
                m: outcome.m,
                n: outcome.n,
                clicks,
            });
        }

        for d in 0..2 {
            // Stray counts arrive between pulse k's gate and pulse k + 1.
            if fired[3 + d] {
                if states[d].live_from <= k + 1 {
                    truth.stray_clicks[d] += 1;
                    let offset = (stray_lo + rng.random::<f64>() * stray_span).floor() as i64;
                    tags.push(TimeTag::new(channels[d], clock.timestamp(k, offset)));
                    states[d].fire(&mut rng, k, &dets[d]);
                } else {
                    truth.blocked_by_dead[d] += 1;
                }
            }
        }
    }
    (tags, truth)
}

/// Simulate `cfg.n_pulses` pulses and return the tag stream with ground truth.
/// Identical configurations yield identical streams.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let nu = cfg.nu()?;
    let ranges = shard_ranges(cfg.n_pulses, cfg.shards);
    let parts: Vec<(Vec<TimeTag>, GroundTruth)> = ranges
        .par_iter()
        .enumerate()
        .map(|(s, &(a, b))| simulate_shard(cfg, nu, s as u64, a, b))
        .collect();
    let mut tags = Vec::new();
    let mut truth = GroundTruth::default();
    for (t, g) in parts {
        tags.extend(t);
        truth.merge(g);
    }
    let photons: u64 = truth.outcome_counts[1..].iter().sum();
    truth.outcome_counts[0] = truth.n_pulses - photons;
    tags.sort_by_key(|t| (t.timestamp, t.channel));
    let stream = TagStream::new(cfg.header(), tags)?;
    Ok(SimOutput { stream, truth, nu })
}

/// SplitMix64 finalizer over `seed` and the delay index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent run per delay, seeded by [`derive_seed`]. Runs in parallel;
/// the result does not depend on scheduling.
pub fn scan_delays(cfg: &SimConfig, delays: &[f64]) -> Result<Vec<(f64, SimOutput)>> {
    if delays.is_empty() {
        return Err(Error::InvalidConfig("delay list is empty".into()));
    }
    delays
        .par_iter()
        .enumerate()
        .map(|(i, &delta_t_ps)| {
            let run = SimConfig {
                delta_t_ps,
                seed: derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            run_simulation(&run).map(|out| (delta_t_ps, out))
        })
        .collect()
}

/// `points` delays evenly spaced over `[-half_span, half_span]`.
pub fn symmetric_delays(half_span_ps: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| -half_span_ps + 2.0 * half_span_ps * i as f64 / (points - 1) as f64)
            .collect(),
    }
}
