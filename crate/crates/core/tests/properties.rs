use proptest::prelude::*;

use psr_core::filter::{fuse, run_filter, ConfidenceFrame, FilterConfig, FusionWeights, RecognitionFilter, StreamKind};
use psr_core::losses::{multilabel_bce, ProbBatch};
use psr_core::procedure::{
    cumulative_state, state_diff, ActionId, ComponentBits, EventSequence, Procedure, StepEvent, StepKind,
};
use psr_core::sampling::{kcas_pmf, sample_clip_ends};
use psr_core::{damerau_levenshtein, EditWeights};

fn bits_strategy(width: usize) -> impl Strategy<Value = ComponentBits> {
    proptest::collection::vec(any::<bool>(), width).prop_map(|v| {
        let mut b = ComponentBits::zeros(v.len());
        for (i, x) in v.into_iter().enumerate() {
            b.set(i, x);
        }
        b
    })
}

fn word() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..4, 0..7)
}

/// Streams where only install steps carry evidence, so each step emits at most once.
fn install_stream(frames: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 17), frames)
}

fn frames_from(rows: &[Vec<f64>]) -> Vec<ConfidenceFrame> {
    rows.iter()
        .enumerate()
        .map(|(f, row)| {
            let mut probs = vec![0.0; 34];
            probs[..row.len()].copy_from_slice(row);
            ConfidenceFrame::new(f as u64, probs, StreamKind::Temporal).unwrap()
        })
        .collect()
}

fn first_emissions(proc: &Procedure, frames: &[ConfidenceFrame], cfg: FilterConfig) -> Vec<Option<u64>> {
    let seq = run_filter(proc, "v", frames, cfg).unwrap();
    (0..17u32).map(|k| seq.events().iter().find(|e| e.action == ActionId(k)).map(|e| e.frame)).collect()
}

fn later_or_equal(a: Option<u64>, b: Option<u64>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

proptest! {
    #[test]
    fn dl_is_a_metric(a in word(), b in word(), c in word()) {
        let w = EditWeights::default();
        let ab = damerau_levenshtein(&a, &b, &w).unwrap();
        prop_assert_eq!(ab, damerau_levenshtein(&b, &a, &w).unwrap());
        prop_assert_eq!(damerau_levenshtein(&a, &a, &w).unwrap(), 0.0);
        prop_assert!(ab <= a.len().max(b.len()) as f64);
        prop_assert!(ab >= (a.len() as f64 - b.len() as f64).abs());
        let ac = damerau_levenshtein(&a, &c, &w).unwrap();
        let cb = damerau_levenshtein(&c, &b, &w).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn state_diff_round_trips(prev in bits_strategy(17), next in bits_strategy(17)) {
        let diff = state_diff(&prev, &next).unwrap();
        let mut replay = prev.clone();
        replay.apply(&diff).unwrap();
        prop_assert_eq!(&replay, &next);
        let back = state_diff(&next, &prev).unwrap();
        let flipped: Vec<_> = diff.iter().map(|&(c, k)| (c, k.opposite())).collect();
        prop_assert_eq!(back, flipped);
    }

    #[test]
    fn cumulative_state_changes_only_at_events(
        raw in proptest::collection::btree_map(0u64..200, (0usize..17, any::<bool>()), 0..12),
        probe in 0u64..220,
    ) {
        let proc = Procedure::meccano();
        let events: Vec<StepEvent> = raw
            .iter()
            .map(|(&f, &(c, install))| {
                let kind = if install { StepKind::Install } else { StepKind::Remove };
                StepEvent::new(&proc.actions()[proc.step_for(c, kind).unwrap()], f, true, proc.fps())
            })
            .collect();
        let seq = EventSequence::new("v", proc.fps(), events).unwrap();
        let prev_event = raw.keys().copied().filter(|&f| f <= probe).max();
        let anchor = prev_event.unwrap_or(0);
        let at_probe = cumulative_state(&seq, &proc, probe).unwrap();
        if prev_event.is_some() {
            prop_assert_eq!(&at_probe, &cumulative_state(&seq, &proc, anchor).unwrap());
        } else {
            prop_assert!(at_probe.is_zero());
        }
    }

    #[test]
    fn filter_dominance(rows in install_stream(40), bump in proptest::collection::vec(0.0f64..=0.5, 40)) {
        let proc = Procedure::meccano();
        let low = frames_from(&rows);
        let high_rows: Vec<Vec<f64>> =
            rows.iter().zip(&bump).map(|(r, b)| r.iter().map(|p| (p + b).min(1.0)).collect()).collect();
        let high = frames_from(&high_rows);
        let cfg = FilterConfig::new(2.0, 0.75);
        for (h, l) in first_emissions(&proc, &high, cfg).into_iter().zip(first_emissions(&proc, &low, cfg)) {
            prop_assert!(later_or_equal(h, l));
        }
    }

    #[test]
    fn filter_threshold_and_retention_monotone(rows in install_stream(40), t in 0.5f64..3.0, dt in 0.0f64..2.0) {
        let proc = Procedure::meccano();
        let frames = frames_from(&rows);
        let base = first_emissions(&proc, &frames, FilterConfig::new(t, 0.75));
        let stricter = first_emissions(&proc, &frames, FilterConfig::new(t + dt, 0.75));
        let forgetful = first_emissions(&proc, &frames, FilterConfig::new(t, 0.5));
        for k in 0..17 {
            prop_assert!(later_or_equal(base[k], stricter[k]));
            prop_assert!(later_or_equal(base[k], forgetful[k]));
        }
    }

    #[test]
    fn filter_chunking(rows in install_stream(30), cuts in proptest::collection::vec(1usize..8, 1..10)) {
        let proc = Procedure::meccano();
        let frames = frames_from(&rows);
        let cfg = FilterConfig::new(1.5, 0.75);
        let whole = run_filter(&proc, "v", &frames, cfg).unwrap();
        let mut filter = RecognitionFilter::new(&proc, cfg).unwrap();
        let mut rest = &frames[..];
        for c in cuts.iter().cycle() {
            if rest.is_empty() {
                break;
            }
            let (head, tail) = rest.split_at((*c).min(rest.len()));
            filter.push_chunk(head).unwrap();
            rest = tail;
        }
        prop_assert_eq!(filter.into_sequence("v").unwrap(), whole);
    }

    #[test]
    fn fusion_is_bounded_and_symmetric(
        a in proptest::collection::vec(0.0f64..=1.0, 34),
        b in proptest::collection::vec(0.0f64..=1.0, 34),
        w in 0.0f64..=1.0,
    ) {
        let fa = ConfidenceFrame::new(3, a.clone(), StreamKind::Asd).unwrap();
        let fb = ConfidenceFrame::new(3, b.clone(), StreamKind::Temporal).unwrap();
        let ab = fuse(&fa, &fb, FusionWeights { asd: w, temporal: 1.0 - w }).unwrap();
        let ba = fuse(&fb, &fa, FusionWeights { asd: 1.0 - w, temporal: w }).unwrap();
        for k in 0..34 {
            prop_assert!((ab.probs[k] - ba.probs[k]).abs() < 1e-12);
            prop_assert!(ab.probs[k] >= a[k].min(b[k]) - 1e-12 && ab.probs[k] <= a[k].max(b[k]) + 1e-12);
        }
    }

    #[test]
    fn bce_is_minimal_at_the_targets(
        targets in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 5), 1..6),
        noise in proptest::collection::vec(0.0f64..=1.0, 30),
    ) {
        let exact: Vec<Vec<f64>> = targets.iter().map(|r| r.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()).collect();
        let other: Vec<Vec<f64>> = targets.iter().enumerate().map(|(i, r)| (0..r.len()).map(|j| noise[i * 5 + j]).collect()).collect();
        let best = multilabel_bce(&ProbBatch::new(exact, targets.clone()).unwrap());
        let any = multilabel_bce(&ProbBatch::new(other, targets).unwrap());
        prop_assert!(best <= any + 1e-12);
    }

    #[test]
    fn clip_end_draws_are_reproducible(completions in proptest::collection::vec(300u64..1500, 1..5), seed: u64) {
        let dist = kcas_pmf(&completions, 1800, 45.0, 80.0, 256).unwrap();
        let a = sample_clip_ends(&dist, 200, seed);
        prop_assert_eq!(&a, &sample_clip_ends(&dist, 200, seed));
        prop_assert!(a.iter().all(|&x| (256..1800).contains(&x)));
    }
}
