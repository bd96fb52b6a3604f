//! Glitch filter against a quadratic rescan oracle on arbitrary (including
//! non-alternating) edge streams.

use gpiocal::ingest::{Direction, EdgeCapture, EdgeEvent};
use gpiocal::pulse::glitch_filter;
use proptest::prelude::*;

fn oracle(mut ev: Vec<EdgeEvent>, threshold: u64) -> Vec<EdgeEvent> {
    loop {
        // dwell i sits between ev[i] and ev[i + 1]; every one of them is interior
        let shortest = (0..ev.len().saturating_sub(1))
            .map(|i| (ev[i + 1].timestamp_ns - ev[i].timestamp_ns, i))
            .filter(|&(d, _)| d < threshold)
            .min();
        let Some((_, i)) = shortest else { return ev };
        if ev[i].direction == ev[i + 1].direction {
            ev.remove(i + 1);
        } else {
            ev.drain(i..=i + 1);
        }
    }
}

fn stream() -> impl Strategy<Value = Vec<EdgeEvent>> {
    prop::collection::vec((1u64..200, any::<bool>()), 0..80).prop_map(|steps| {
        let mut t = 0;
        steps
            .into_iter()
            .map(|(gap, rising)| {
                t += gap;
                EdgeEvent {
                    timestamp_ns: t,
                    direction: if rising { Direction::Rising } else { Direction::Falling },
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_rescan_oracle(ev in stream(), threshold in 0u64..400) {
        let cap = EdgeCapture::new(ev.clone(), 1_000_000_000, "o").unwrap();
        prop_assert_eq!(glitch_filter(&cap, threshold).events, oracle(ev, threshold));
    }
}

#[test]
fn hand_cases() {
    let e = |t, r: bool| EdgeEvent {
        timestamp_ns: t,
        direction: if r { Direction::Rising } else { Direction::Falling },
    };
    // R R F: the re-assertion 30 ns later is redundant
    let ev = vec![e(0, true), e(30, true), e(10_000, false)];
    assert_eq!(oracle(ev.clone(), 50), vec![e(0, true), e(10_000, false)]);
    // a runt pulse inside a low period
    let ev = vec![e(0, false), e(1_000, true), e(1_040, false), e(2_000, true)];
    assert_eq!(oracle(ev, 41), vec![e(0, false), e(2_000, true)]);
}
