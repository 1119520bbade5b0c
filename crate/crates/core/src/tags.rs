//! Time-tag streams and the post-processing pipeline that turns them into
//! per-pulse click/no-click tables.
//!
//! Pipeline: [`reconstruct_pulse_train`] rebuilds every laser pulse from the
//! divided reference channel, [`virtual_gate`] assigns detector tags to the
//! pulse whose gate `[t_pulse, t_pulse + window)` contains them, and
//! [`build_event_table`] applies the software dead time and records a
//! tri-state per pulse and detector.
//!
//! Binary layout (`ZHT1`, little-endian):
//!
//! ```text
//! magic "ZHT1" | u16 version | u32 timebin_ps | u32 rep_period_ps | u32 divider
//! then records: u8 channel | u64 timestamp (timebins)
//! ```

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ZHT1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Channel {
    Ref = 0,
    D1 = 1,
    D2 = 2,
}

impl Channel {
    pub const DETECTORS: [Channel; 2] = [Channel::D1, Channel::D2];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Ref),
            1 => Some(Channel::D1),
            2 => Some(Channel::D2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ref => "REF",
            Channel::D1 => "D1",
            Channel::D2 => "D2",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "REF" | "ref" => Some(Channel::Ref),
            "D1" | "d1" => Some(Channel::D1),
            "D2" | "d2" => Some(Channel::D2),
            other => other.parse::<u8>().ok().and_then(Self::from_code),
        }
    }

    /// Detector slot (0 for D1, 1 for D2).
    pub fn detector_index(self) -> Option<usize> {
        match self {
            Channel::Ref => None,
            Channel::D1 => Some(0),
            Channel::D2 => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub channel: Channel,
    /// Timebins since the start of acquisition.
    pub timestamp: u64,
}

impl TimeTag {
    pub fn new(channel: Channel, timestamp: u64) -> Self {
        Self { channel, timestamp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub timebin_ps: u32,
    pub rep_period_ps: u32,
    pub divider: u32,
}

impl StreamHeader {
    pub fn new(timebin_ps: u32, rep_period_ps: u32, divider: u32) -> Self {
        Self {
            version: FORMAT_VERSION,
            timebin_ps,
            rep_period_ps,
            divider,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.timebin_ps == 0 {
            return Err(Error::Format {
                offset: 6,
                message: "timebin must be positive".into(),
            });
        }
        if self.divider == 0 {
            return Err(Error::Format {
                offset: 14,
                message: "divider must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    pub header: StreamHeader,
    pub tags: Vec<TimeTag>,
}

impl TagStream {
    /// Checked constructor; timestamps must be non-decreasing.
    pub fn new(header: StreamHeader, tags: Vec<TimeTag>) -> Result<Self> {
        header.validate()?;
        if let Some(i) = tags.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::Integrity {
                index: i + 1,
                offset: (HEADER_LEN + (i + 1) * RECORD_LEN) as u64,
                message: "timestamps must be non-decreasing".into(),
            });
        }
        Ok(Self { header, tags })
    }

    pub fn channel(&self, channel: Channel) -> impl Iterator<Item = u64> + '_ {
        self.tags
            .iter()
            .filter(move |t| t.channel == channel)
            .map(|t| t.timestamp)
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }
}

pub fn write_tags<W: Write>(stream: &TagStream, mut sink: W) -> Result<()> {
    let h = &stream.header;
    let mut head = [0u8; HEADER_LEN];
    head[..4].copy_from_slice(MAGIC);
    head[4..6].copy_from_slice(&h.version.to_le_bytes());
    head[6..10].copy_from_slice(&h.timebin_ps.to_le_bytes());
    head[10..14].copy_from_slice(&h.rep_period_ps.to_le_bytes());
    head[14..18].copy_from_slice(&h.divider.to_le_bytes());
    sink.write_all(&head)?;
    let mut rec = [0u8; RECORD_LEN];
    for tag in &stream.tags {
        rec[0] = tag.channel.code();
        rec[1..].copy_from_slice(&tag.timestamp.to_le_bytes());
        sink.write_all(&rec)?;
    }
    sink.flush()?;
    Ok(())
}

/// Fill `buf` completely, or report how many bytes were available.
fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_tags<R: Read>(mut source: R) -> Result<TagStream> {
    let mut head = [0u8; HEADER_LEN];
    let got = read_full(&mut source, &mut head)?;
    if got < HEADER_LEN {
        return Err(Error::Format {
            offset: got as u64,
            message: format!("truncated header ({got} of {HEADER_LEN} bytes)"),
        });
    }
    if &head[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}", &head[..4]),
        });
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let word = |at: usize| u32::from_le_bytes(head[at..at + 4].try_into().unwrap());
    let header = StreamHeader {
        version,
        timebin_ps: word(6),
        rep_period_ps: word(10),
        divider: word(14),
    };
    header.validate()?;

    let mut body = Vec::new();
    source.read_to_end(&mut body)?;
    if body.len() % RECORD_LEN != 0 {
        let whole = body.len() / RECORD_LEN;
        return Err(Error::Format {
            offset: (HEADER_LEN + whole * RECORD_LEN) as u64,
            message: "truncated record".into(),
        });
    }
    let mut tags = Vec::with_capacity(body.len() / RECORD_LEN);
    let mut last = 0u64;
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + index * RECORD_LEN) as u64;
        let channel = Channel::from_code(rec[0]).ok_or_else(|| Error::Format {
            offset,
            message: format!("unknown channel code {}", rec[0]),
        })?;
        let timestamp = u64::from_le_bytes(rec[1..].try_into().unwrap());
        if timestamp < last {
            return Err(Error::Integrity {
                index,
                offset,
                message: format!("timestamp {timestamp} precedes {last}"),
            });
        }
        last = timestamp;
        tags.push(TimeTag { channel, timestamp });
    }
    Ok(TagStream { header, tags })
}

/// CSV form: one `#` metadata line, a column header, then `channel,timestamp`
/// rows with channel names `REF`, `D1`, `D2`. Extra `#` lines are comments.
pub fn write_tags_csv<W: Write>(stream: &TagStream, mut sink: W) -> Result<()> {
    let h = &stream.header;
    writeln!(
        sink,
        "# ZHT1 version={} timebin_ps={} rep_period_ps={} divider={}",
        h.version, h.timebin_ps, h.rep_period_ps, h.divider
    )?;
    writeln!(sink, "channel,timestamp")?;
    for tag in &stream.tags {
        writeln!(sink, "{},{}", tag.channel.name(), tag.timestamp)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_tags_csv<R: BufRead>(source: R) -> Result<TagStream> {
    let mut header: Option<StreamHeader> = None;
    let mut tags = Vec::new();
    let mut offset = 0u64;
    let mut last = 0u64;
    for line in source.lines() {
        let line = line?;
        let here = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == "channel,timestamp" {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            if header.is_none() {
                if let Some(h) = parse_csv_meta(meta.trim(), here)? {
                    header = Some(h);
                }
            }
            continue;
        }
        if header.is_none() {
            return Err(Error::Format {
                offset: here,
                message: "missing `# ZHT1 ...` metadata line".into(),
            });
        }
        let (ch, ts) = trimmed.split_once(',').ok_or_else(|| Error::Format {
            offset: here,
            message: format!("expected `channel,timestamp`, got `{trimmed}`"),
        })?;
        let channel = Channel::parse(ch.trim()).ok_or_else(|| Error::Format {
            offset: here,
            message: format!("unknown channel `{ch}`"),
        })?;
        let timestamp: u64 = ts.trim().parse().map_err(|_| Error::Format {
            offset: here,
            message: format!("bad timestamp `{ts}`"),
        })?;
        if timestamp < last {
            return Err(Error::Integrity {
                index: tags.len(),
                offset: here,
                message: format!("timestamp {timestamp} precedes {last}"),
            });
        }
        last = timestamp;
        tags.push(TimeTag { channel, timestamp });
    }
    let header = header.ok_or_else(|| Error::Format {
        offset: 0,
        message: "missing `# ZHT1 ...` metadata line".into(),
    })?;
    Ok(TagStream { header, tags })
}

fn parse_csv_meta(meta: &str, offset: u64) -> Result<Option<StreamHeader>> {
    let mut words = meta.split_whitespace();
    if words.next() != Some("ZHT1") {
        return Ok(None);
    }
    let bad = |message: String| Error::Format { offset, message };
    let (mut version, mut timebin, mut period, mut divider) = (None, None, None, None);
    for word in words {
        let (key, value) = word
            .split_once('=')
            .ok_or_else(|| bad(format!("bad metadata item `{word}`")))?;
        let parsed: u64 = value
            .parse()
            .map_err(|_| bad(format!("bad metadata value `{word}`")))?;
        match key {
            "version" => version = Some(parsed),
            "timebin_ps" => timebin = Some(parsed),
            "rep_period_ps" => period = Some(parsed),
            "divider" => divider = Some(parsed),
            _ => return Err(bad(format!("unknown metadata key `{key}`"))),
        }
    }
    let need = |v: Option<u64>, key: &str| -> Result<u32> {
        v.and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| bad(format!("missing or out-of-range `{key}`")))
    };
    let version = need(version, "version")?;
    if version != FORMAT_VERSION as u32 {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header = StreamHeader {
        version: FORMAT_VERSION,
        timebin_ps: need(timebin, "timebin_ps")?,
        rep_period_ps: need(period, "rep_period_ps")?,
        divider: need(divider, "divider")?,
    };
    header.validate().map_err(|_| bad("timebin and divider must be positive".into()))?;
    Ok(Some(header))
}

/// Every laser pulse, rebuilt from the divided reference tags.
///
/// Pulse `j` lies between reference tags `i = j / divider` and `i + 1` at
/// `ref[i] + floor((j mod divider) * spacing_i / divider)`, so synthesized
/// times never run ahead of the true (floored) pulse times.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    refs: Vec<u64>,
    divider: u64,
    /// Median reference spacing divided by the divider, in timebins.
    pub period_timebins: f64,
}

impl PulseTrain {
    pub fn len(&self) -> u64 {
        (self.refs.len() as u64 - 1) * self.divider + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn divider(&self) -> u64 {
        self.divider
    }

    pub fn reference_times(&self) -> &[u64] {
        &self.refs
    }

    /// Time of pulse `index` in timebins.
    pub fn time(&self, index: u64) -> u64 {
        let i = (index / self.divider) as usize;
        let r = index % self.divider;
        if r == 0 {
            return self.refs[i];
        }
        self.interval_time(i, r)
    }

    fn interval_time(&self, i: usize, r: u64) -> u64 {
        let spacing = (self.refs[i + 1] - self.refs[i]) as u128;
        self.refs[i] + (r as u128 * spacing / self.divider as u128) as u64
    }

    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len()).map(move |j| self.time(j))
    }

    /// Index of the last pulse at or before `t`, if any.
    pub fn pulse_at_or_before(&self, t: u64) -> Option<u64> {
        let first = *self.refs.first()?;
        if t < first {
            return None;
        }
        let i = self.refs.partition_point(|&r| r <= t) - 1;
        Some(self.pulse_in_interval(i, t))
    }

    fn pulse_in_interval(&self, i: usize, t: u64) -> u64 {
        let base = i as u64 * self.divider;
        if i + 1 == self.refs.len() {
            return base;
        }
        let spacing = (self.refs[i + 1] - self.refs[i]) as u128;
        let mut r = ((t - self.refs[i]) as u128 * self.divider as u128 / spacing) as u64;
        while r + 1 < self.divider && self.interval_time(i, r + 1) <= t {
            r += 1;
        }
        base + r
    }
}

pub fn reconstruct_pulse_train(stream: &TagStream) -> Result<PulseTrain> {
    let refs: Vec<u64> = stream.channel(Channel::Ref).collect();
    if refs.len() < 2 {
        return Err(Error::InsufficientReference { found: refs.len() });
    }
    let divider = stream.header.divider as u64;
    let spacings: Vec<u64> = refs.windows(2).map(|w| w[1] - w[0]).collect();
    let median = median_u64(&spacings);
    // Half a timebin of tolerance per synthesized pulse.
    let limit = 0.5 * divider as f64;
    let glitches: Vec<usize> = spacings
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s == 0 || (s as f64 - median).abs() > limit)
        .map(|(i, _)| i)
        .collect();
    if !glitches.is_empty() {
        return Err(Error::ClockGlitch { indices: glitches });
    }
    Ok(PulseTrain {
        refs,
        divider,
        period_timebins: median / divider as f64,
    })
}

fn median_u64(values: &[u64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        0.5 * (sorted[mid - 1] as f64 + sorted[mid] as f64)
    }
}

/// A detector tag that fell inside a pulse's gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AssignedEvent {
    pub pulse: u64,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GateResult {
    /// Sorted by pulse, then channel. Several tags on one pulse and channel
    /// produce repeated entries.
    pub assigned: Vec<AssignedEvent>,
    /// Detector tags seen, per detector (D1, D2).
    pub total: [u64; 2],
    /// Detector tags outside every gate, per detector.
    pub rejected: [u64; 2],
}

impl GateResult {
    pub fn assigned_count(&self, channel: Channel) -> u64 {
        self.assigned.iter().filter(|e| e.channel == channel).count() as u64
    }

    /// Distinct pulses with at least one assigned tag on `channel`, ascending.
    pub fn click_pulses(&self, channel: Channel) -> Vec<u64> {
        let mut pulses: Vec<u64> = self
            .assigned
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.pulse)
            .collect();
        pulses.dedup();
        pulses
    }
}

/// Assign detector tags to the pulse whose gate `[t_pulse, t_pulse + window)`
/// contains them. `window_ps` must be shorter than the pulse period.
pub fn virtual_gate(stream: &TagStream, train: &PulseTrain, window_ps: f64) -> Result<GateResult> {
    let window = window_ps / stream.header.timebin_ps as f64;
    if !(window > 0.0) || window >= train.period_timebins {
        return Err(Error::InvalidConfig(format!(
            "gate window {window_ps} ps must be positive and shorter than the pulse period ({} ps)",
            train.period_timebins * stream.header.timebin_ps as f64
        )));
    }
    let mut out = GateResult::default();
    for tag in &stream.tags {
        let Some(slot) = tag.channel.detector_index() else {
            continue;
        };
        out.total[slot] += 1;
        let hit = train
            .pulse_at_or_before(tag.timestamp)
            .filter(|&p| ((tag.timestamp - train.time(p)) as f64) < window);
        match hit {
            Some(pulse) => out.assigned.push(AssignedEvent {
                pulse,
                channel: tag.channel,
            }),
            None => out.rejected[slot] += 1,
        }
    }
    // Jittered tags can leave the body slightly out of pulse order.
    out.assigned.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeadTimeResult {
    pub accepted: Vec<u64>,
    pub suppressed: Vec<u64>,
}

/// Software dead time on one channel's click pulses (ascending). A click at
/// pulse `k` blanks pulses `k+1 ..= k+dead_pulses`; blanked clicks do not
/// extend the window.
pub fn apply_dead_time(clicks: &[u64], dead_pulses: u32) -> DeadTimeResult {
    let mut out = DeadTimeResult::default();
    let mut live_from = 0u64;
    for &k in clicks {
        if k >= live_from {
            out.accepted.push(k);
            live_from = k + 1 + dead_pulses as u64;
        } else {
            out.suppressed.push(k);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelState {
    Click,
    NoClick,
    Dead,
}

impl ChannelState {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelState::Click => "click",
            ChannelState::NoClick => "no-click",
            ChannelState::Dead => "dead",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "click" => Some(ChannelState::Click),
            "no-click" => Some(ChannelState::NoClick),
            "dead" => Some(ChannelState::Dead),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRow {
    pub pulse_index: u64,
    pub d1: ChannelState,
    pub d2: ChannelState,
}

impl EventRow {
    pub fn state(&self, channel: Channel) -> ChannelState {
        match channel {
            Channel::D1 => self.d1,
            Channel::D2 => self.d2,
            Channel::Ref => ChannelState::NoClick,
        }
    }

    /// A row carries information only when neither detector is dead.
    pub fn is_live(&self) -> bool {
        self.d1 != ChannelState::Dead && self.d2 != ChannelState::Dead
    }
}

/// Click / no-click / dead record for every reconstructed pulse.
///
/// Stored sparsely: only rows where some channel is not `NoClick` are kept,
/// every other row of `0..n_rows` is (no-click, no-click).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseEventTable {
    n_rows: u64,
    dead_pulses: u32,
    marked: Vec<EventRow>,
}

impl PulseEventTable {
    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    pub fn dead_pulses(&self) -> u32 {
        self.dead_pulses
    }

    /// Rows with at least one click or dead entry, ascending.
    pub fn marked_rows(&self) -> &[EventRow] {
        &self.marked
    }

    pub fn row(&self, pulse_index: u64) -> Option<EventRow> {
        if pulse_index >= self.n_rows {
            return None;
        }
        Some(
            match self.marked.binary_search_by_key(&pulse_index, |r| r.pulse_index) {
                Ok(i) => self.marked[i],
                Err(_) => EventRow {
                    pulse_index,
                    d1: ChannelState::NoClick,
                    d2: ChannelState::NoClick,
                },
            },
        )
    }

    /// All rows in order, materialized lazily.
    pub fn rows(&self) -> impl Iterator<Item = EventRow> + '_ {
        let mut marked = self.marked.iter().peekable();
        (0..self.n_rows).map(move |pulse_index| match marked.peek() {
            Some(r) if r.pulse_index == pulse_index => *marked.next().unwrap(),
            _ => EventRow {
                pulse_index,
                d1: ChannelState::NoClick,
                d2: ChannelState::NoClick,
            },
        })
    }

    /// Build from explicit rows, which must cover `0..n` in order.
    pub fn from_rows(rows: impl IntoIterator<Item = EventRow>, dead_pulses: u32) -> Result<Self> {
        let mut n_rows = 0u64;
        let mut marked = Vec::new();
        for row in rows {
            if row.pulse_index != n_rows {
                return Err(Error::Integrity {
                    index: n_rows as usize,
                    offset: 0,
                    message: format!(
                        "expected pulse_index {n_rows}, found {}",
                        row.pulse_index
                    ),
                });
            }
            n_rows += 1;
            if row.d1 != ChannelState::NoClick || row.d2 != ChannelState::NoClick {
                marked.push(row);
            }
        }
        Ok(Self {
            n_rows,
            dead_pulses,
            marked,
        })
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "pulse_index,d1,d2")?;
        for row in self.rows() {
            writeln!(
                sink,
                "{},{},{}",
                row.pulse_index,
                row.d1.as_str(),
                row.d2.as_str()
            )?;
        }
        sink.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). `dead_pulses` is recorded
    /// as given; the CSV itself does not carry it.
    pub fn read_csv<R: BufRead>(source: R, dead_pulses: u32) -> Result<Self> {
        let mut rows = Vec::new();
        let mut offset = 0u64;
        for line in source.lines() {
            let line = line?;
            let here = offset;
            offset += line.len() as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == "pulse_index,d1,d2" {
                continue;
            }
            let bad = || Error::Format {
                offset: here,
                message: format!("expected `pulse_index,d1,d2`, got `{trimmed}`"),
            };
            let mut fields = trimmed.split(',').map(str::trim);
            let (Some(idx), Some(d1), Some(d2), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            rows.push(EventRow {
                pulse_index: idx.parse().map_err(|_| bad())?,
                d1: ChannelState::parse(d1).ok_or_else(bad)?,
                d2: ChannelState::parse(d2).ok_or_else(bad)?,
            });
        }
        Self::from_rows(rows, dead_pulses)
    }
}

/// Tri-state table over every pulse of `train`, with `dead_pulses` of
/// software dead time applied per channel.
pub fn build_event_table(gate: &GateResult, train: &PulseTrain, dead_pulses: u32) -> PulseEventTable {
    let n_rows = train.len();
    // (pulse, channel slot, state) entries that differ from no-click.
    let mut entries: Vec<(u64, usize, ChannelState)> = Vec::new();
    for (slot, channel) in Channel::DETECTORS.into_iter().enumerate() {
        let clicks = gate.click_pulses(channel);
        let filtered = apply_dead_time(&clicks, dead_pulses);
        for &k in &filtered.accepted {
            entries.push((k, slot, ChannelState::Click));
            let end = (k + dead_pulses as u64).min(n_rows.saturating_sub(1));
            entries.extend((k + 1..=end).map(|p| (p, slot, ChannelState::Dead)));
        }
    }
    entries.sort_unstable_by_key(|&(p, slot, _)| (p, slot));
    let mut marked: Vec<EventRow> = Vec::new();
    for (pulse_index, slot, state) in entries {
        if marked.last().map(|r| r.pulse_index) != Some(pulse_index) {
            marked.push(EventRow {
                pulse_index,
                d1: ChannelState::NoClick,
                d2: ChannelState::NoClick,
            });
        }
        let row = marked.last_mut().unwrap();
        match slot {
            0 => row.d1 = state,
            _ => row.d2 = state,
        }
    }
    PulseEventTable {
        n_rows,
        dead_pulses,
        marked,
    }
}

/// Gate, dead-time and tabulate a stream in one call.
pub fn process_stream(stream: &TagStream, window_ps: f64, dead_pulses: u32) -> Result<(PulseEventTable, GateResult)> {
    let train = reconstruct_pulse_train(stream)?;
    let gate = virtual_gate(stream, &train, window_ps)?;
    let table = build_event_table(&gate, &train, dead_pulses);
    Ok((table, gate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ChannelState::{Click as C, Dead as X, NoClick as N};

    fn stream(divider: u32, tags: &[(Channel, u64)]) -> TagStream {
        let tags = tags.iter().map(|&(c, t)| TimeTag::new(c, t)).collect();
        TagStream::new(StreamHeader::new(10, 1000, divider), tags).unwrap()
    }

    #[test]
    fn header_only_file_is_18_bytes() {
        let s = stream(512, &[]);
        let mut buf = Vec::new();
        write_tags(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(&buf[..4], b"ZHT1");
        assert_eq!(read_tags(&buf[..]).unwrap(), s);
    }

    #[test]
    fn three_tags_round_trip_binary_and_csv() {
        let s = stream(512, &[(Channel::Ref, 0), (Channel::D1, 7), (Channel::D2, 7)]);
        let mut buf = Vec::new();
        write_tags(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * RECORD_LEN);
        assert_eq!(read_tags(&buf[..]).unwrap(), s);
        let mut text = Vec::new();
        write_tags_csv(&s, &mut text).unwrap();
        assert_eq!(read_tags_csv(&text[..]).unwrap(), s);
    }

    #[test]
    fn format_and_integrity_errors_carry_offsets() {
        let s = stream(4, &[(Channel::Ref, 5), (Channel::D1, 9)]);
        let mut buf = Vec::new();
        write_tags(&s, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tags(&bad[..]), Err(Error::Format { offset: 0, .. })));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_tags(&bad[..]), Err(Error::Format { offset: 4, .. })));

        let mut bad = buf.clone();
        bad[HEADER_LEN + RECORD_LEN] = 7;
        let at = (HEADER_LEN + RECORD_LEN) as u64;
        assert!(matches!(read_tags(&bad[..]), Err(Error::Format { offset, .. }) if offset == at));

        let mut bad = buf.clone();
        bad[HEADER_LEN + RECORD_LEN + 1..].copy_from_slice(&1u64.to_le_bytes());
        assert!(matches!(
            read_tags(&bad[..]),
            Err(Error::Integrity { index: 1, offset, .. }) if offset == at
        ));

        assert!(matches!(
            read_tags(&buf[..buf.len() - 1]),
            Err(Error::Format { offset, .. }) if offset == at
        ));
        assert!(matches!(read_tags(&buf[..10]), Err(Error::Format { offset: 10, .. })));

        let text = "# ZHT1 version=1 timebin_ps=10 rep_period_ps=1000 divider=4\nchannel,timestamp\nREF,5\nD1,3\n";
        assert!(matches!(read_tags_csv(text.as_bytes()), Err(Error::Integrity { index: 1, .. })));
        assert!(matches!(read_tags_csv("REF,5\n".as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn pulse_train_exact_arithmetic() {
        let s = stream(512, &[(Channel::Ref, 0), (Channel::Ref, 512 * 123)]);
        let train = reconstruct_pulse_train(&s).unwrap();
        assert_eq!(train.len(), 513);
        let times: Vec<u64> = train.times().collect();
        assert!(times.windows(2).all(|w| w[1] - w[0] == 123));
        assert_eq!(train.period_timebins, 123.0);
        assert_eq!(train.pulse_at_or_before(123 * 7 + 5), Some(7));
        assert_eq!(train.pulse_at_or_before(512 * 123 + 40), Some(512));
    }

    #[test]
    fn divider_one_train_is_the_reference_tags() {
        let refs = [3u64, 103, 203, 303, 403];
        let tags: Vec<_> = refs.iter().map(|&t| (Channel::Ref, t)).collect();
        let train = reconstruct_pulse_train(&stream(1, &tags)).unwrap();
        assert_eq!(train.times().collect::<Vec<_>>(), refs);
    }

    #[test]
    fn reference_errors() {
        let s = stream(2, &[(Channel::Ref, 0), (Channel::D1, 4)]);
        assert!(matches!(
            reconstruct_pulse_train(&s),
            Err(Error::InsufficientReference { found: 1 })
        ));
        let s = stream(
            2,
            &[(Channel::Ref, 0), (Channel::Ref, 100), (Channel::Ref, 200), (Channel::Ref, 350), (Channel::Ref, 450)],
        );
        match reconstruct_pulse_train(&s) {
            Err(Error::ClockGlitch { indices }) => assert_eq!(indices, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gate_is_half_open() {
        let refs: Vec<_> = (0..4).map(|i| (Channel::Ref, i * 100)).collect();
        let mut tags = refs.clone();
        tags.extend([(Channel::D1, 100), (Channel::D2, 220)]);
        tags.sort_by_key(|t| t.1);
        let s = stream(1, &tags);
        let train = reconstruct_pulse_train(&s).unwrap();
        // 200 ps window = 20 timebins
        let g = virtual_gate(&s, &train, 200.0).unwrap();
        assert_eq!(g.assigned, vec![AssignedEvent { pulse: 1, channel: Channel::D1 }]);
        assert_eq!(g.rejected, [0, 1]);
        assert_eq!(g.total, [1, 1]);
        assert!(virtual_gate(&s, &train, 1000.0).is_err());
        assert!(virtual_gate(&s, &train, 0.0).is_err());
    }

    #[test]
    fn dead_time_examples() {
        let r = apply_dead_time(&[0, 3, 10], 5);
        assert_eq!(r.accepted, vec![0, 10]);
        assert_eq!(r.suppressed, vec![3]);
        let clicks = [1, 2, 3, 9];
        assert_eq!(apply_dead_time(&clicks, 0).accepted, clicks);
        // non-extending: 4 is suppressed, 6 is not
        assert_eq!(apply_dead_time(&[0, 4, 6], 5).accepted, vec![0, 6]);
    }

    #[test]
    fn ref_only_stream_gives_all_no_click() {
        let refs: Vec<_> = (0..3).map(|i| (Channel::Ref, i * 400)).collect();
        let (table, _) = process_stream(&stream(4, &refs), 200.0, 5).unwrap();
        assert_eq!(table.n_rows(), 9);
        assert!(table.marked_rows().is_empty());
        assert!(table.rows().all(|r| r.d1 == N && r.d2 == N));
    }

    #[test]
    fn ten_pulse_fixture_table() {
        let mut tags: Vec<_> = (0..10).map(|i| (Channel::Ref, i * 100)).collect();
        tags.extend([
            (Channel::D2, 3),   // pulse 0
            (Channel::D1, 105), // pulse 1
            (Channel::D2, 450), // between gates
            (Channel::D2, 500), // pulse 5, on the gate opening
            (Channel::D2, 610), // pulse 6, D2 dead
            (Channel::D1, 819), // pulse 8, last timebin of the gate
            (Channel::D1, 920), // gate closed
        ]);
        tags.sort_by_key(|t| t.1);
        let (table, gate) = process_stream(&stream(1, &tags), 200.0, 2).unwrap();
        assert_eq!(gate.rejected, [1, 1]);
        let expected = [
            (N, C),
            (C, X),
            (X, X),
            (X, N),
            (N, N),
            (N, C),
            (N, X),
            (N, X),
            (C, N),
            (X, N),
        ];
        let got: Vec<_> = table.rows().map(|r| (r.d1, r.d2)).collect();
        assert_eq!(got, expected);

        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv.clone()).unwrap();
        assert!(text.starts_with("pulse_index,d1,d2\n0,no-click,click\n1,click,dead\n"));
        assert_eq!(PulseEventTable::read_csv(&csv[..], 2).unwrap(), table);
    }

    #[test]
    fn table_rows_must_be_contiguous() {
        let rows = [
            EventRow { pulse_index: 0, d1: N, d2: N },
            EventRow { pulse_index: 2, d1: C, d2: N },
        ];
        assert!(matches!(PulseEventTable::from_rows(rows, 0), Err(Error::Integrity { index: 1, .. })));
    }
}
