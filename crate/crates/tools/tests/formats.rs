use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use psr_core::procedure::{ComponentBits, EventSequence, Procedure, StepEvent};
use psr_core::sampling::{FrameSource, KfsBatchSpec, KfsEntry};
use psr_tools::jsonl::{parse_jsonl_str, to_jsonl, ParseMode, Schema};
use psr_tools::records::{
    asd_from_records, asd_records, event_records, labels_from_records, temporal_from_records, temporal_records,
    AsdRecord, ClipRecord, EventRecord, KfsBatchRecord, TemporalRecord,
};

fn path() -> PathBuf {
    PathBuf::from("mem.jsonl")
}

fn reparse<T: serde::de::DeserializeOwned + serde::Serialize + Clone>(
    schema: Schema,
    records: &[T],
) -> (Vec<u8>, Vec<T>) {
    let bytes = to_jsonl(schema, records).unwrap();
    let parsed =
        parse_jsonl_str::<T>(std::str::from_utf8(&bytes).unwrap(), &path(), schema, ParseMode::Strict).unwrap();
    (bytes, parsed.records.into_iter().map(|(_, r)| r).collect())
}

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0]
}

fn sequences() -> impl Strategy<Value = Vec<EventSequence>> {
    let proc = Procedure::meccano();
    proptest::collection::btree_map(
        "[a-z]{1,4}",
        proptest::collection::btree_map((0u64..5000, 0usize..34), any::<bool>(), 0..20),
        0..4,
    )
    .prop_map(move |videos| {
        videos
            .into_iter()
            .map(|(video, events)| {
                let evs = events
                    .into_iter()
                    .map(|((frame, k), correct)| StepEvent::new(&proc.actions()[k], frame, correct, proc.fps()))
                    .collect();
                EventSequence::new(video, proc.fps(), evs).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn events_round_trip(seqs in sequences()) {
        let proc = Procedure::meccano();
        let records = event_records(&seqs);
        let (bytes, back) = reparse(Schema::Events, &records);
        prop_assert_eq!(&back, &records);
        let parsed = parse_jsonl_str(std::str::from_utf8(&bytes).unwrap(), &path(), Schema::Events, ParseMode::Strict).unwrap();
        let set = labels_from_records(parsed, &proc, ParseMode::Strict).unwrap();
        let expected: BTreeMap<String, EventSequence> =
            seqs.iter().filter(|s| !s.is_empty()).map(|s| (s.video_id.clone(), s.clone())).collect();
        prop_assert_eq!(&set.sequences, &expected);
        prop_assert_eq!(to_jsonl(Schema::Events, &event_records(set.sequences.values())).unwrap(), bytes);
    }

    #[test]
    fn asd_round_trip(raw in proptest::collection::btree_map(0u64..10_000, (0u32..12, prob()), 0..40)) {
        let proc = Procedure::meccano();
        let records: Vec<AsdRecord> = raw
            .iter()
            .map(|(&frame, &(state_id, confidence))| AsdRecord { video_id: "v".into(), frame, state_id, confidence })
            .collect();
        let (bytes, back) = reparse(Schema::AsdStream, &records);
        prop_assert_eq!(&back, &records);
        let parsed = parse_jsonl_str(std::str::from_utf8(&bytes).unwrap(), &path(), Schema::AsdStream, ParseMode::Strict).unwrap();
        let dets = asd_from_records(parsed, &proc, ParseMode::Strict).unwrap();
        prop_assert_eq!(asd_records(&dets), records);
    }

    #[test]
    fn temporal_round_trip(raw in proptest::collection::btree_map(0u64..10_000, proptest::collection::vec(prob(), 34), 0..20)) {
        let proc = Procedure::meccano();
        let records: Vec<TemporalRecord> = raw
            .into_iter()
            .filter(|(_, p)| p.iter().any(|&x| x != 0.0))
            .map(|(frame, probs)| TemporalRecord { video_id: "v".into(), frame, probs })
            .collect();
        let (bytes, back) = reparse(Schema::TemporalStream, &records);
        prop_assert_eq!(&back, &records);
        let parsed =
            parse_jsonl_str(std::str::from_utf8(&bytes).unwrap(), &path(), Schema::TemporalStream, ParseMode::Strict).unwrap();
        let frames = temporal_from_records(parsed, &proc, ParseMode::Strict).unwrap();
        prop_assert_eq!(temporal_records(&frames), records);
    }

    #[test]
    fn clip_round_trip(end in 255u64..100_000, bits in proptest::collection::vec(any::<bool>(), 17), draw in 0usize..100) {
        let mut label = ComponentBits::zeros(17);
        for (i, b) in bits.into_iter().enumerate() {
            label.set(i, b);
        }
        let indices: Vec<u64> = (0..64).map(|i| end - (63 - i) * 4).collect();
        let rec = ClipRecord { video_id: "v".into(), draw, start_frame: indices[0], end_frame: end, indices, label };
        let (_, back) = reparse(Schema::KcasClips, std::slice::from_ref(&rec));
        prop_assert_eq!(back, vec![rec]);
    }

    #[test]
    fn kfs_round_trip(frames in proptest::collection::vec((0u32..12, 0u64..5000), 0..30), seed: u64, t_f in 0.0f64..10.0) {
        let entries: Vec<KfsEntry> = frames
            .iter()
            .enumerate()
            .map(|(i, &(state_id, frame))| KfsEntry {
                state_id,
                source: if i % 5 == 4 {
                    FrameSource::Synthetic { reference: format!("syn/{state_id}/{i}.png") }
                } else {
                    FrameSource::Real { video_id: "v".into(), frame: frame + 3, occurrence_frame: frame }
                },
            })
            .collect();
        let spec = KfsBatchSpec { entries, t_f, n_sample: 16, n_syn: 0, states: vec![1, 2], skipped_states: vec![0] };
        let rec = KfsBatchRecord { batch: 0, seed, spec };
        let (_, back) = reparse(Schema::KfsBatch, std::slice::from_ref(&rec));
        prop_assert_eq!(back, vec![rec]);
    }
}

#[test]
fn meccano_scale_fixture_loads() {
    // 431 correct steps over 17 recordings, 25 or 26 per recording.
    let proc = Procedure::meccano();
    let mut records = Vec::new();
    let mut total = 0;
    for v in 0..17 {
        let n = if v < 6 { 26 } else { 25 };
        for i in 0..n {
            let k = i % 34;
            let a = &proc.actions()[k];
            records.push(EventRecord {
                video_id: format!("rec{v:02}"),
                frame: 100 * (i as u64 + 1),
                fps: proc.fps(),
                action: a.id,
                component: a.component,
                kind: a.kind,
                correct: true,
            });
            total += 1;
        }
    }
    assert_eq!(total, 431);
    let bytes = to_jsonl(Schema::Events, &records).unwrap();
    let parsed =
        parse_jsonl_str(std::str::from_utf8(&bytes).unwrap(), &path(), Schema::Events, ParseMode::Strict).unwrap();
    let set = labels_from_records(parsed, &proc, ParseMode::Strict).unwrap();
    assert_eq!(set.sequences.len(), 17);
    assert_eq!(set.event_count(), 431);
    let mean = 431.0 / 17.0;
    assert!((mean - 25.0f64).abs() <= 4.0);
}
