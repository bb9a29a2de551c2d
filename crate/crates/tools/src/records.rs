//! Line records for events, detector streams and sampling outputs, with their
//! conversions to and from the engine's types.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use psr_core::filter::{ConfidenceFrame, StreamKind};
use psr_core::procedure::{ActionId, ComponentBits, EventSequence, Fps, Procedure, StepEvent, StepKind};
use psr_core::sampling::KfsBatchSpec;
use psr_core::StateDetection;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::jsonl::{parse_jsonl, ParseMode, Parsed, Schema};

fn yes() -> bool {
    true
}

/// One step completion (a label or a prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub video_id: String,
    pub frame: u64,
    pub fps: Fps,
    pub action: ActionId,
    pub component: usize,
    pub kind: StepKind,
    #[serde(default = "yes")]
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsdRecord {
    pub video_id: String,
    pub frame: u64,
    pub state_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalRecord {
    pub video_id: String,
    pub frame: u64,
    pub probs: Vec<f64>,
}

/// A sampled training clip and its XOR label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub video_id: String,
    pub draw: usize,
    pub start_frame: u64,
    pub end_frame: u64,
    pub indices: Vec<u64>,
    pub label: ComponentBits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfsBatchRecord {
    pub batch: usize,
    pub seed: u64,
    pub spec: KfsBatchSpec,
}

#[derive(Debug, Clone)]
pub struct LabelSet {
    pub sequences: BTreeMap<String, EventSequence>,
    pub skipped: usize,
}

impl LabelSet {
    pub fn event_count(&self) -> usize {
        self.sequences.values().map(EventSequence::len).sum()
    }
}

pub fn parse_labels(path: &Path, proc: &Procedure, mode: ParseMode) -> Result<LabelSet> {
    let parsed: Parsed<EventRecord> = parse_jsonl(path, Schema::Events, mode)?;
    labels_from_records(parsed, proc, mode)
}

pub fn labels_from_records(mut parsed: Parsed<EventRecord>, proc: &Procedure, mode: ParseMode) -> Result<LabelSet> {
    let mut seen = BTreeSet::new();
    let mut fps_of: BTreeMap<String, Fps> = BTreeMap::new();
    let mut grouped: BTreeMap<String, Vec<StepEvent>> = BTreeMap::new();
    for (line, rec) in std::mem::take(&mut parsed.records) {
        let problem = match proc.action(rec.action) {
            None => Some(format!("unknown action {} (procedure has {} actions)", rec.action, proc.num_steps())),
            Some(a) if a.component != rec.component || a.kind != rec.kind => Some(format!(
                "action {} is {} of component {}, record says {} of component {}",
                rec.action,
                a.kind.as_str(),
                a.component,
                rec.kind.as_str(),
                rec.component
            )),
            Some(_) if !seen.insert((rec.video_id.clone(), rec.frame, rec.action)) => {
                Some(format!("duplicate event: video {} frame {} action {}", rec.video_id, rec.frame, rec.action))
            }
            Some(_) => match fps_of.get(&rec.video_id) {
                Some(&fps) if fps != rec.fps => {
                    Some(format!("video {} mixes frame rates {fps} and {}", rec.video_id, rec.fps))
                }
                _ => None,
            },
        };
        if let Some(message) = problem {
            parsed.reject(mode, line, message)?;
            continue;
        }
        fps_of.entry(rec.video_id.clone()).or_insert(rec.fps);
        let action = proc.action(rec.action).expect("checked above");
        grouped.entry(rec.video_id).or_default().push(StepEvent::new(action, rec.frame, rec.correct, rec.fps));
    }
    let mut sequences = BTreeMap::new();
    for (video, events) in grouped {
        let fps = fps_of[&video];
        sequences.insert(video.clone(), EventSequence::new(video, fps, events)?);
    }
    Ok(LabelSet { sequences, skipped: parsed.skipped.len() })
}

/// Canonical record order: by video id, then frame, then action id.
pub fn event_records<'a>(sequences: impl IntoIterator<Item = &'a EventSequence>) -> Vec<EventRecord> {
    let mut seqs: Vec<&EventSequence> = sequences.into_iter().collect();
    seqs.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    seqs.iter()
        .flat_map(|s| {
            s.events().iter().map(|e| EventRecord {
                video_id: s.video_id.clone(),
                frame: e.frame,
                fps: s.fps,
                action: e.action,
                component: e.component,
                kind: e.kind,
                correct: e.correct,
            })
        })
        .collect()
}

fn check_order<T>(
    parsed: &mut Parsed<T>,
    mode: ParseMode,
    last: &mut BTreeMap<String, u64>,
    video: &str,
    frame: u64,
    line: usize,
) -> Result<bool> {
    if let Some(&prev) = last.get(video) {
        if frame <= prev {
            parsed.reject(mode, line, format!("video {video}: frame {frame} is out of order (after frame {prev})"))?;
            return Ok(false);
        }
    }
    last.insert(video.to_string(), frame);
    Ok(true)
}

pub fn parse_asd(path: &Path, proc: &Procedure, mode: ParseMode) -> Result<BTreeMap<String, Vec<StateDetection>>> {
    let parsed: Parsed<AsdRecord> = parse_jsonl(path, Schema::AsdStream, mode)?;
    asd_from_records(parsed, proc, mode)
}

pub fn asd_from_records(
    mut parsed: Parsed<AsdRecord>,
    proc: &Procedure,
    mode: ParseMode,
) -> Result<BTreeMap<String, Vec<StateDetection>>> {
    let mut out: BTreeMap<String, Vec<StateDetection>> = BTreeMap::new();
    let mut last = BTreeMap::new();
    for (line, rec) in std::mem::take(&mut parsed.records) {
        let Some(state) = proc.state_by_id(rec.state_id) else {
            let known: Vec<String> = proc.state_ids().iter().map(u32::to_string).collect();
            parsed.reject(mode, line, format!("unknown state_id {}; known ids: {}", rec.state_id, known.join(", ")))?;
            continue;
        };
        if !(0.0..=1.0).contains(&rec.confidence) {
            parsed.reject(mode, line, format!("frame {}: confidence {} outside [0, 1]", rec.frame, rec.confidence))?;
            continue;
        }
        if !check_order(&mut parsed, mode, &mut last, &rec.video_id, rec.frame, line)? {
            continue;
        }
        let det = StateDetection::new(rec.frame, state.clone(), rec.confidence)?;
        out.entry(rec.video_id).or_default().push(det);
    }
    Ok(out)
}

pub fn asd_records(videos: &BTreeMap<String, Vec<StateDetection>>) -> Vec<AsdRecord> {
    videos
        .iter()
        .flat_map(|(video, dets)| {
            dets.iter().filter_map(move |d| {
                d.state.state_id.map(|state_id| AsdRecord {
                    video_id: video.clone(),
                    frame: d.frame,
                    state_id,
                    confidence: d.confidence,
                })
            })
        })
        .collect()
}

pub fn parse_temporal(
    path: &Path,
    proc: &Procedure,
    mode: ParseMode,
) -> Result<BTreeMap<String, Vec<ConfidenceFrame>>> {
    let parsed: Parsed<TemporalRecord> = parse_jsonl(path, Schema::TemporalStream, mode)?;
    temporal_from_records(parsed, proc, mode)
}

pub fn temporal_from_records(
    mut parsed: Parsed<TemporalRecord>,
    proc: &Procedure,
    mode: ParseMode,
) -> Result<BTreeMap<String, Vec<ConfidenceFrame>>> {
    let mut out: BTreeMap<String, Vec<ConfidenceFrame>> = BTreeMap::new();
    let mut last = BTreeMap::new();
    for (line, rec) in std::mem::take(&mut parsed.records) {
        if rec.probs.len() != proc.num_steps() {
            parsed.reject(
                mode,
                line,
                format!(
                    "frame {}: {} probabilities, procedure has {} steps",
                    rec.frame,
                    rec.probs.len(),
                    proc.num_steps()
                ),
            )?;
            continue;
        }
        if let Some(p) = rec.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            parsed.reject(mode, line, format!("frame {}: probability {p} outside [0, 1]", rec.frame))?;
            continue;
        }
        if !check_order(&mut parsed, mode, &mut last, &rec.video_id, rec.frame, line)? {
            continue;
        }
        out.entry(rec.video_id).or_default().push(ConfidenceFrame {
            frame: rec.frame,
            probs: rec.probs,
            stream: StreamKind::Temporal,
        });
    }
    Ok(out)
}

/// Temporal records for every frame with any evidence; silent frames are
/// left out because the filter treats missing frames as silent.
pub fn temporal_records(videos: &BTreeMap<String, Vec<ConfidenceFrame>>) -> Vec<TemporalRecord> {
    videos
        .iter()
        .flat_map(|(video, frames)| {
            frames.iter().filter(|f| !f.is_silent()).map(move |f| TemporalRecord {
                video_id: video.clone(),
                frame: f.frame,
                probs: f.probs.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jsonl::parse_jsonl_str;
    use std::path::PathBuf;

    fn parse_events(text: &str, mode: ParseMode) -> Result<LabelSet> {
        let proc = Procedure::meccano();
        let parsed = parse_jsonl_str(text, &PathBuf::from("labels.jsonl"), Schema::Events, mode)?;
        labels_from_records(parsed, &proc, mode)
    }

    #[test]
    fn empty_file_is_empty_map() {
        let set = parse_events("", ParseMode::Strict).unwrap();
        assert!(set.sequences.is_empty());
        assert_eq!(set.skipped, 0);
    }

    #[test]
    fn misspelled_kind_names_the_line() {
        let text = "{\"video_id\":\"a\",\"frame\":1,\"fps\":10,\"action\":0,\"component\":0,\"kind\":\"install\"}\n\
                    {\"video_id\":\"a\",\"frame\":2,\"fps\":10,\"action\":1,\"component\":1,\"kind\":\"installl\"}\n";
        let err = parse_events(text, ParseMode::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("labels.jsonl:2:"), "{msg}");
        assert!(msg.contains("installl"), "{msg}");
        assert_eq!(parse_events(text, ParseMode::Lenient).unwrap().event_count(), 1);
    }

    #[test]
    fn mismatched_action_and_duplicates() {
        let wrong = "{\"video_id\":\"a\",\"frame\":1,\"fps\":10,\"action\":0,\"component\":3,\"kind\":\"install\"}\n";
        assert!(parse_events(wrong, ParseMode::Strict).is_err());
        let line = "{\"video_id\":\"a\",\"frame\":1,\"fps\":10,\"action\":0,\"component\":0,\"kind\":\"install\"}\n";
        let err = parse_events(&format!("{line}{line}"), ParseMode::Strict).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn stream_validation() {
        let proc = Procedure::meccano();
        let path = PathBuf::from("asd.jsonl");
        let text = "{\"video_id\":\"a\",\"frame\":1,\"state_id\":42,\"confidence\":0.9}\n";
        let parsed = parse_jsonl_str(text, &path, Schema::AsdStream, ParseMode::Strict).unwrap();
        let err = asd_from_records(parsed, &proc, ParseMode::Strict).unwrap_err().to_string();
        assert!(err.contains("known ids: 0, 1, 2"), "{err}");

        let short = "{\"video_id\":\"a\",\"frame\":7,\"probs\":[0.1,0.2]}\n";
        let parsed = parse_jsonl_str(short, &path, Schema::TemporalStream, ParseMode::Strict).unwrap();
        let err = temporal_from_records(parsed, &proc, ParseMode::Strict).unwrap_err().to_string();
        assert!(err.contains("frame 7"), "{err}");

        let zeros = vec!["0"; 34].join(",");
        let order = format!(
            "{{\"video_id\":\"a\",\"frame\":5,\"probs\":[{zeros}]}}\n{{\"video_id\":\"a\",\"frame\":5,\"probs\":[{zeros}]}}\n"
        );
        let parsed = parse_jsonl_str(&order, &path, Schema::TemporalStream, ParseMode::Strict).unwrap();
        let err = temporal_from_records(parsed, &proc, ParseMode::Strict).unwrap_err().to_string();
        assert!(err.contains("out of order"), "{err}");
    }
}
