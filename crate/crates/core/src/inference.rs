//! Step inference from assembly-state detections.
//!
//! A newly detected state is compared with the last accepted state; every
//! component that changed maps to the procedure's install or remove action,
//! and those steps receive the detection's confidence on that frame.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};
use crate::filter::{ConfidenceFrame, StreamKind};
use crate::procedure::{state_diff, ActionId, AssemblyState, ComponentBits, Procedure, StepKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDetection {
    pub frame: u64,
    pub state: AssemblyState,
    pub confidence: f64,
}

impl StateDetection {
    pub fn new(frame: u64, state: AssemblyState, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(PsrError::arg("confidence", format!("frame {frame}: {confidence} outside [0, 1]")));
        }
        Ok(StateDetection { frame, state, confidence })
    }
}

/// Actions needed to turn `prev` (the all-zero initial state when `None`) into `next`,
/// ordered by component index.
pub fn infer_steps(
    prev: Option<&ComponentBits>,
    next: &ComponentBits,
    proc: &Procedure,
) -> Result<Vec<(ActionId, StepKind)>> {
    if next.width() != proc.num_components() {
        return Err(PsrError::Structural(format!(
            "detected state has width {} but the procedure has {} components",
            next.width(),
            proc.num_components()
        )));
    }
    let initial = ComponentBits::zeros(proc.num_components());
    let prev = prev.unwrap_or(&initial);
    state_diff(prev, next)?
        .into_iter()
        .map(|(component, kind)| {
            proc.step_for(component, kind)
                .map(|k| (proc.actions()[k].id, kind))
                .ok_or(PsrError::UnknownTransition { component, kind: kind.as_str() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// Inferred steps carry the detection's confidence.
    Detection,
    /// Inferred steps carry probability 1.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsdStreamConfig {
    /// Detections with confidence below this value are ignored.
    #[serde(default)]
    pub confidence_gate: f64,
    #[serde(default = "default_mode")]
    pub mode: ConfidenceMode,
}

fn default_mode() -> ConfidenceMode {
    ConfidenceMode::Detection
}

impl Default for AsdStreamConfig {
    fn default() -> Self {
        AsdStreamConfig { confidence_gate: 0.0, mode: ConfidenceMode::Detection }
    }
}

/// Per-video cursor remembering the last accepted state.
#[derive(Debug, Clone)]
pub struct AsdCursor<'p> {
    proc: &'p Procedure,
    config: AsdStreamConfig,
    accepted: ComponentBits,
    last_frame: Option<u64>,
}

impl<'p> AsdCursor<'p> {
    pub fn new(proc: &'p Procedure, config: AsdStreamConfig) -> Self {
        AsdCursor { proc, config, accepted: ComponentBits::zeros(proc.num_components()), last_frame: None }
    }

    pub fn accepted(&self) -> &ComponentBits {
        &self.accepted
    }

    /// Per-step probabilities contributed by one detection.
    pub fn observe(&mut self, det: &StateDetection) -> Result<Vec<f64>> {
        if let Some(last) = self.last_frame {
            if det.frame <= last {
                return Err(PsrError::Stream {
                    frame: det.frame,
                    reason: format!("detections must strictly increase in frame (previous {last})"),
                });
            }
        }
        self.last_frame = Some(det.frame);
        let mut probs = vec![0.0; self.proc.num_steps()];
        if det.confidence < self.config.confidence_gate {
            return Ok(probs);
        }
        let steps = infer_steps(Some(&self.accepted), &det.state.bits, self.proc)?;
        if steps.is_empty() {
            return Ok(probs);
        }
        let value = match self.config.mode {
            ConfidenceMode::Detection => det.confidence,
            ConfidenceMode::Constant => 1.0,
        };
        for (id, _) in steps {
            let k = self.proc.step_index(id).expect("inferred from the procedure");
            probs[k] = value;
        }
        self.accepted = det.state.bits.clone();
        Ok(probs)
    }
}

/// Dense ASD confidence stream over frames `0..num_frames` (extended to cover
/// the last detection). Frames without a detection are all-zero.
pub fn asd_stream_probs(
    detections: &[StateDetection],
    proc: &Procedure,
    num_frames: u64,
    config: AsdStreamConfig,
) -> Result<Vec<ConfidenceFrame>> {
    let end = detections.last().map_or(num_frames, |d| num_frames.max(d.frame + 1));
    let mut cursor = AsdCursor::new(proc, config);
    let mut out = Vec::with_capacity(end as usize);
    let mut next = detections.iter().peekable();
    for f in 0..end {
        match next.peek() {
            Some(d) if d.frame == f => {
                let probs = cursor.observe(d)?;
                out.push(ConfidenceFrame { frame: f, probs, stream: StreamKind::Asd });
                next.next();
                if let Some(d) = next.peek() {
                    if d.frame <= f {
                        return Err(PsrError::Stream {
                            frame: d.frame,
                            reason: format!("detections out of order after frame {f}"),
                        });
                    }
                }
            }
            _ => out.push(ConfidenceFrame::zeros(f, proc.num_steps(), StreamKind::Asd)),
        }
    }
    Ok(out)
}

/// Sparse variant: one frame per detection only. The filter treats the
/// missing frames as silent, so both variants filter identically.
pub fn asd_stream_sparse(
    detections: &[StateDetection],
    proc: &Procedure,
    config: AsdStreamConfig,
) -> Result<Vec<ConfidenceFrame>> {
    let mut cursor = AsdCursor::new(proc, config);
    detections
        .iter()
        .map(|d| Ok(ConfidenceFrame { frame: d.frame, probs: cursor.observe(d)?, stream: StreamKind::Asd }))
        .collect()
}
