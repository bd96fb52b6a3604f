//! Glitch filtering, strict-order pulse pairing, trial segmentation and
//! record/pulse alignment.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Direction, EdgeCapture, EdgeEvent, InferenceRecord, TrialRecords};

/// Default gap separating two trials inside one capture (1 s).
pub const DEFAULT_GAP_THRESHOLD_NS: u64 = 1_000_000_000;
/// Default number of leading inferences per trial kept out of statistics.
pub const DEFAULT_WARMUP_EXCLUDE: usize = 1;

/// Removes sub-threshold dwells from a capture.
///
/// A dwell is the time between two consecutive events. While some interior
/// dwell is strictly shorter than `threshold_ns`, the shortest one (earliest
/// on ties) is deleted:
///
/// * opposite-direction bounds form a runt pulse; both edges go;
/// * same-direction bounds re-assert a level already held; the later,
///   redundant edge goes.
///
/// The level before the first event and after the last one are unbounded and
/// never considered. The removal order does not depend on the threshold, so a
/// larger threshold continues exactly where a smaller one stopped; this is
/// what makes the filter idempotent and monotone in the threshold.
pub fn glitch_filter(capture: &EdgeCapture, threshold_ns: u64) -> EdgeCapture {
    let events = &capture.events;
    let n = events.len();
    if threshold_ns == 0 || n < 2 {
        return capture.clone();
    }

    const NONE: usize = usize::MAX;
    let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
    prev[0] = NONE;
    let mut next: Vec<usize> = (1..=n).collect();
    next[n - 1] = NONE;
    let mut alive = vec![true; n];

    let gap = |l: usize, r: usize| events[r].timestamp_ns - events[l].timestamp_ns;
    // Min-heap on (dwell, left index); stale entries are skipped on pop.
    let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = (0..n - 1)
        .map(|i| (gap(i, i + 1), i, i + 1))
        .filter(|&(g, _, _)| g < threshold_ns)
        .map(Reverse)
        .collect();

    while let Some(Reverse((_, l, r))) = heap.pop() {
        if !alive[l] || !alive[r] || next[l] != r {
            continue;
        }
        if events[l].direction != events[r].direction {
            alive[l] = false;
            alive[r] = false;
            let before = prev[l];
            let after = next[r];
            if before != NONE {
                next[before] = after;
            }
            if after != NONE {
                prev[after] = before;
            }
            if before != NONE && after != NONE {
                let g = gap(before, after);
                if g < threshold_ns {
                    heap.push(Reverse((g, before, after)));
                }
            }
        } else {
            alive[r] = false;
            let after = next[r];
            next[l] = after;
            if after != NONE {
                prev[after] = l;
                let g = gap(l, after);
                if g < threshold_ns {
                    heap.push(Reverse((g, l, after)));
                }
            }
        }
    }

    let kept = events
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(e, _)| *e)
        .collect();
    capture.with_events(kept)
}

/// One inference as seen on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulsePair {
    pub rise_ns: u64,
    pub fall_ns: u64,
    pub width_ns: u64,
}

impl PulsePair {
    pub fn new(rise_ns: u64, fall_ns: u64) -> Self {
        assert!(fall_ns > rise_ns, "pulse must fall after it rises");
        PulsePair {
            rise_ns,
            fall_ns,
            width_ns: fall_ns - rise_ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    ConsecutiveSameDirection,
    LeadingFall,
    TrailingRise,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::ConsecutiveSameDirection => "consecutive-same-direction",
            ViolationKind::LeadingFall => "leading-fall",
            ViolationKind::TrailingRise => "trailing-rise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub timestamp_ns: u64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs: Vec<PulsePair>,
    pub pair_count: usize,
    pub violations: Vec<Violation>,
    pub status: Status,
}

/// Pairs edges in strict order.
///
/// Each rising edge closes with the next falling edge. A falling edge with no
/// open pulse is a leading fall and is skipped. A rising edge while a pulse
/// is open is recorded, closes nothing and reopens at its own time, so a pair
/// count is always available even for a failing capture.
pub fn pair_edges(capture: &EdgeCapture, expected_count: Option<usize>) -> PairingOutcome {
    pair_events(&capture.events, expected_count)
}

pub fn pair_events(events: &[EdgeEvent], expected_count: Option<usize>) -> PairingOutcome {
    let mut pairs = Vec::with_capacity(events.len() / 2);
    let mut violations = Vec::new();
    let mut open: Option<u64> = None;
    for e in events {
        match (e.direction, open) {
            (Direction::Rising, None) => open = Some(e.timestamp_ns),
            (Direction::Rising, Some(_)) => {
                violations.push(Violation {
                    timestamp_ns: e.timestamp_ns,
                    kind: ViolationKind::ConsecutiveSameDirection,
                });
                open = Some(e.timestamp_ns);
            }
            (Direction::Falling, Some(rise)) => {
                pairs.push(PulsePair::new(rise, e.timestamp_ns));
                open = None;
            }
            (Direction::Falling, None) => violations.push(Violation {
                timestamp_ns: e.timestamp_ns,
                kind: ViolationKind::LeadingFall,
            }),
        }
    }
    if let Some(rise) = open {
        violations.push(Violation {
            timestamp_ns: rise,
            kind: ViolationKind::TrailingRise,
        });
    }
    let pair_count = pairs.len();
    let count_ok = expected_count.is_none_or(|n| n == pair_count);
    let status = if violations.is_empty() && count_ok {
        Status::Pass
    } else {
        Status::Fail
    };
    PairingOutcome {
        pairs,
        pair_count,
        violations,
        status,
    }
}

/// Splits time-ordered pulses wherever the low time between two consecutive
/// pulses exceeds `gap_threshold_ns`.
pub fn segment_trials(pairs: &[PulsePair], gap_threshold_ns: u64) -> Vec<Vec<PulsePair>> {
    let mut segments: Vec<Vec<PulsePair>> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let split = i == 0 || p.rise_ns - pairs[i - 1].fall_ns > gap_threshold_ns;
        if split {
            segments.push(Vec::new());
        }
        segments.last_mut().expect("segment opened").push(*p);
    }
    segments
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedItem {
    pub record: InferenceRecord,
    pub pulse: PulsePair,
}

/// One trial with record `i` matched to pulse `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedTrial {
    pub trial_id: String,
    pub items: Vec<AlignedItem>,
    pub warmup_excluded: usize,
}

impl AlignedTrial {
    /// Items that count towards statistics.
    pub fn effective(&self) -> &[AlignedItem] {
        &self.items[self.warmup_excluded.min(self.items.len())..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("alignment FAIL: {trials} trials in the log but {segments} pulse segments in the capture")]
    TrialCountMismatch { trials: usize, segments: usize },
    #[error("alignment FAIL: trial {trial_id} has {records} records but {pulses} pulses")]
    PulseCountMismatch {
        trial_id: String,
        records: usize,
        pulses: usize,
    },
    #[error("trial {trial_id} has {records} records, not more than the {warmup} warm-up exclusions")]
    WarmupTooLarge {
        trial_id: String,
        records: usize,
        warmup: usize,
    },
}

/// Pairs trials with pulse segments in order, then records with pulses
/// within each trial.
pub fn align(
    trials: &[TrialRecords],
    segments: &[Vec<PulsePair>],
    warmup_exclude: usize,
) -> Result<Vec<AlignedTrial>, AlignError> {
    if trials.len() != segments.len() {
        return Err(AlignError::TrialCountMismatch {
            trials: trials.len(),
            segments: segments.len(),
        });
    }
    trials
        .iter()
        .zip(segments)
        .map(|(trial, pulses)| {
            if trial.records.len() != pulses.len() {
                return Err(AlignError::PulseCountMismatch {
                    trial_id: trial.trial_id.clone(),
                    records: trial.records.len(),
                    pulses: pulses.len(),
                });
            }
            if trial.records.len() <= warmup_exclude {
                return Err(AlignError::WarmupTooLarge {
                    trial_id: trial.trial_id.clone(),
                    records: trial.records.len(),
                    warmup: warmup_exclude,
                });
            }
            Ok(AlignedTrial {
                trial_id: trial.trial_id.clone(),
                items: trial
                    .records
                    .iter()
                    .zip(pulses)
                    .map(|(record, pulse)| AlignedItem {
                        record: record.clone(),
                        pulse: *pulse,
                    })
                    .collect(),
                warmup_excluded: warmup_exclude,
            })
        })
        .collect()
}
