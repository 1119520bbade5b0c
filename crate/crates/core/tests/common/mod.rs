//! Strategies and checks shared by the property tests and the acceptance run.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use zherald::tags::{
    build_event_table, read_tags, read_tags_csv, reconstruct_pulse_train, virtual_gate, write_tags,
    write_tags_csv, AssignedEvent, Channel, ChannelState, GateResult, PulseTrain, StreamHeader,
    TagStream, TimeTag,
};

fn channel() -> impl Strategy<Value = Channel> {
    prop_oneof![Just(Channel::Ref), Just(Channel::D1), Just(Channel::D2)]
}

pub fn stream_strategy() -> impl Strategy<Value = TagStream> {
    (
        1u32..5000,
        1u32..2_000_000,
        1u32..4096,
        prop::collection::vec((channel(), 0u64..1 << 40), 0..64),
        any::<bool>(),
    )
        .prop_map(|(timebin, period, divider, steps, huge)| {
            // Cumulative gaps; optionally start near the top of the counter.
            let mut t = if huge { u64::MAX - (1 << 47) } else { 0 };
            let tags = steps
                .into_iter()
                .map(|(c, gap)| {
                    t += gap;
                    TimeTag::new(c, t)
                })
                .collect();
            TagStream::new(StreamHeader::new(timebin, period, divider), tags).unwrap()
        })
}

pub fn check_round_trip(stream: &TagStream) -> Result<(), TestCaseError> {
    let mut bin = Vec::new();
    write_tags(stream, &mut bin).unwrap();
    prop_assert_eq!(bin.len(), 18 + 9 * stream.tags.len());
    prop_assert_eq!(&read_tags(&bin[..]).unwrap(), stream);
    let mut again = Vec::new();
    write_tags(&read_tags(&bin[..]).unwrap(), &mut again).unwrap();
    prop_assert_eq!(&again, &bin);
    let mut csv = Vec::new();
    write_tags_csv(stream, &mut csv).unwrap();
    prop_assert_eq!(&read_tags_csv(&csv[..]).unwrap(), stream);
    Ok(())
}

/// A stream with a regular reference clock and random detector tags.
#[derive(Debug, Clone)]
pub struct GateCase {
    pub stream: TagStream,
    pub window_ps: f64,
}

pub fn gate_case_strategy() -> impl Strategy<Value = GateCase> {
    (1u32..9, 20u64..300, 2usize..8, 0u64..1000, 1u32..50, 0.01f64..0.99)
        .prop_flat_map(|(divider, period_bins, n_refs, t0, timebin, frac)| {
            let last = t0 + (n_refs as u64 - 1) * divider as u64 * period_bins;
            let detector = prop::collection::vec(
                (prop_oneof![Just(Channel::D1), Just(Channel::D2)], 0..last + 2 * period_bins),
                0..40,
            );
            (Just((divider, period_bins, n_refs, t0, timebin, frac)), detector)
        })
        .prop_map(|((divider, period_bins, n_refs, t0, timebin, frac), detector)| {
            let step = divider as u64 * period_bins;
            let mut tags: Vec<TimeTag> = (0..n_refs as u64)
                .map(|i| TimeTag::new(Channel::Ref, t0 + i * step))
                .chain(detector.into_iter().map(|(c, t)| TimeTag::new(c, t)))
                .collect();
            tags.sort_by_key(|t| (t.timestamp, t.channel));
            let header = StreamHeader::new(timebin, (period_bins * timebin as u64) as u32, divider);
            GateCase {
                stream: TagStream::new(header, tags).unwrap(),
                window_ps: frac * (period_bins * timebin as u64) as f64,
            }
        })
}

/// Brute-force gate: scan every pulse for each tag.
fn gate_oracle(case: &GateCase, train: &PulseTrain) -> (Vec<AssignedEvent>, [u64; 2]) {
    let window = case.window_ps / case.stream.header.timebin_ps as f64;
    let times: Vec<u64> = train.times().collect();
    let mut assigned = Vec::new();
    let mut rejected = [0u64; 2];
    for tag in case.stream.tags.iter().filter(|t| t.channel != Channel::Ref) {
        let hits: Vec<u64> = times
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p <= tag.timestamp && ((tag.timestamp - p) as f64) < window)
            .map(|(j, _)| j as u64)
            .collect();
        assert!(hits.len() <= 1, "gates overlap");
        match hits.first() {
            Some(&pulse) => assigned.push(AssignedEvent {
                pulse,
                channel: tag.channel,
            }),
            None => rejected[tag.channel as usize - 1] += 1,
        }
    }
    assigned.sort();
    (assigned, rejected)
}

pub fn check_gate_partition(case: &GateCase) -> Result<(), TestCaseError> {
    let train = reconstruct_pulse_train(&case.stream).unwrap();
    let gate = virtual_gate(&case.stream, &train, case.window_ps).unwrap();
    let detector_tags = case.stream.tags.iter().filter(|t| t.channel != Channel::Ref).count() as u64;
    prop_assert_eq!(gate.total[0] + gate.total[1], detector_tags);
    for slot in 0..2 {
        let ch = Channel::DETECTORS[slot];
        prop_assert_eq!(gate.assigned_count(ch) + gate.rejected[slot], gate.total[slot]);
    }
    let (assigned, rejected) = gate_oracle(case, &train);
    prop_assert_eq!(&gate.assigned, &assigned);
    prop_assert_eq!(gate.rejected, rejected);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DeadCase {
    pub n_pulses: u64,
    pub clicks: [Vec<u64>; 2],
    pub dead_pulses: u32,
}

pub fn dead_case_strategy() -> impl Strategy<Value = DeadCase> {
    (2u64..200, 0u32..12).prop_flat_map(|(n, dead)| {
        let set = || prop::collection::btree_set(0..n, 0..(n as usize).min(60));
        (set(), set()).prop_map(move |(a, b)| DeadCase {
            n_pulses: n,
            clicks: [a.into_iter().collect(), b.into_iter().collect()],
            dead_pulses: dead,
        })
    })
}

pub fn check_dead_time_safety(case: &DeadCase) -> Result<(), TestCaseError> {
    let refs: Vec<TimeTag> = (0..case.n_pulses).map(|i| TimeTag::new(Channel::Ref, i * 10)).collect();
    let stream = TagStream::new(StreamHeader::new(1, 10, 1), refs).unwrap();
    let train = reconstruct_pulse_train(&stream).unwrap();
    let mut assigned: Vec<AssignedEvent> = Channel::DETECTORS
        .iter()
        .zip(&case.clicks)
        .flat_map(|(&channel, ks)| ks.iter().map(move |&pulse| AssignedEvent { pulse, channel }))
        .collect();
    assigned.sort();
    let gate = GateResult {
        assigned,
        ..GateResult::default()
    };
    let table = build_event_table(&gate, &train, case.dead_pulses);
    let rows: Vec<_> = table.rows().collect();
    prop_assert_eq!(rows.len() as u64, case.n_pulses);
    let dead = case.dead_pulses as u64;
    for (slot, ch) in Channel::DETECTORS.into_iter().enumerate() {
        let states: Vec<ChannelState> = rows.iter().map(|r| r.state(ch)).collect();
        let click_rows: Vec<u64> = (0..case.n_pulses)
            .filter(|&i| states[i as usize] == ChannelState::Click)
            .collect();
        for w in click_rows.windows(2) {
            prop_assert!(w[1] - w[0] > dead, "clicks {} and {} within dead time", w[0], w[1]);
        }
        // Pulse-by-pulse replay: the table must equal a countdown automaton.
        let mut countdown = 0u64;
        for i in 0..case.n_pulses {
            let raw = case.clicks[slot].binary_search(&i).is_ok();
            let want = if countdown > 0 {
                countdown -= 1;
                ChannelState::Dead
            } else if raw {
                countdown = dead;
                ChannelState::Click
            } else {
                ChannelState::NoClick
            };
            prop_assert_eq!(states[i as usize], want, "pulse {} channel {:?}", i, ch);
        }
    }
    for r in &rows {
        if r.d1 == ChannelState::NoClick && r.is_live() {
            prop_assert!(r.d2 != ChannelState::Dead);
        }
    }
    Ok(())
}

/// Ten pulses 100 timebins (1000 ps) apart, one reference tag each, with a
/// 200 ps gate and a 2-pulse dead time. Returns the stream, gate (ps), dead
/// pulses and the expected (d1, d2) rows.
pub fn fixture_ten_pulses() -> (TagStream, f64, u32, Vec<(ChannelState, ChannelState)>) {
    use ChannelState::{Click as C, Dead as X, NoClick as N};
    let mut tags: Vec<TimeTag> = (0..10).map(|i| TimeTag::new(Channel::Ref, i * 100)).collect();
    for (c, t) in [
        (Channel::D2, 3),
        (Channel::D1, 105),
        (Channel::D2, 450),
        (Channel::D2, 500),
        (Channel::D2, 610),
        (Channel::D1, 819),
        (Channel::D1, 920),
    ] {
        tags.push(TimeTag::new(c, t));
    }
    tags.sort_by_key(|t| (t.timestamp, t.channel));
    let stream = TagStream::new(StreamHeader::new(10, 1000, 1), tags).unwrap();
    let expected = vec![
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
    (stream, 200.0, 2, expected)
}
