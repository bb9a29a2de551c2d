//! Confidence-accumulation filter and late fusion of detector streams.
//!
//! Each step owns an accumulator. A frame that carries evidence for the step
//! (probability above the evidence floor) adds that probability; any other
//! frame multiplies the accumulator by the retention factor. Crossing the
//! threshold emits the step and resets its accumulator. After a step is
//! emitted it stays silent until the opposite action on the same component
//! has been emitted.
//!
//! Frames absent from a stream (gaps in frame numbers) behave exactly like
//! all-zero frames.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};
use crate::procedure::{EventSequence, Procedure, StepEvent};

/// Default retention per silent frame (a 25% decay rate).
pub const DEFAULT_RETENTION: f64 = 0.75;
/// Threshold used for IndustReal-style data.
pub const THRESHOLD_INDUSTREAL: f64 = 6.0;
/// Threshold used for MECCANO-style data.
pub const THRESHOLD_MECCANO: f64 = 1.0;
/// Absolute slack on threshold comparisons, absorbing summation round-off.
pub const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Asd,
    Temporal,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceFrame {
    pub frame: u64,
    pub probs: Vec<f64>,
    pub stream: StreamKind,
}

impl ConfidenceFrame {
    pub fn new(frame: u64, probs: Vec<f64>, stream: StreamKind) -> Result<Self> {
        let f = ConfidenceFrame { frame, probs, stream };
        f.check_probs()?;
        Ok(f)
    }

    pub fn zeros(frame: u64, steps: usize, stream: StreamKind) -> Self {
        ConfidenceFrame { frame, probs: vec![0.0; steps], stream }
    }

    fn check_probs(&self) -> Result<()> {
        if let Some((k, p)) = self.probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(PsrError::arg(
                "probs",
                format!("frame {}: step {k} has probability {p} outside [0, 1]", self.frame),
            ));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub threshold: f64,
    /// Multiplicative retention on frames without evidence, in (0, 1].
    #[serde(default = "default_retention")]
    pub retention: f64,
    /// Probabilities at or below this value count as "no evidence".
    #[serde(default)]
    pub evidence_floor: f64,
}

fn default_retention() -> f64 {
    DEFAULT_RETENTION
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { threshold: THRESHOLD_MECCANO, retention: DEFAULT_RETENTION, evidence_floor: 0.0 }
    }
}

impl FilterConfig {
    pub fn new(threshold: f64, retention: f64) -> Self {
        FilterConfig { threshold, retention, evidence_floor: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(PsrError::arg("threshold", format!("must be positive, got {}", self.threshold)));
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(PsrError::arg("retention", format!("must be in (0, 1], got {}", self.retention)));
        }
        if !(self.evidence_floor >= 0.0 && self.evidence_floor < 1.0) {
            return Err(PsrError::arg("evidence_floor", format!("must be in [0, 1), got {}", self.evidence_floor)));
        }
        Ok(())
    }
}

/// Streaming filter over one video.
#[derive(Debug, Clone)]
pub struct RecognitionFilter<'p> {
    proc: &'p Procedure,
    config: FilterConfig,
    accumulators: Vec<f64>,
    eligible: Vec<bool>,
    last_frame: Option<u64>,
    emitted: Vec<StepEvent>,
}

impl<'p> RecognitionFilter<'p> {
    pub fn new(proc: &'p Procedure, config: FilterConfig) -> Result<Self> {
        config.validate()?;
        let n = proc.num_steps();
        Ok(RecognitionFilter {
            proc,
            config,
            accumulators: vec![0.0; n],
            eligible: vec![true; n],
            last_frame: None,
            emitted: Vec::new(),
        })
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn is_eligible(&self, step: usize) -> bool {
        self.eligible[step]
    }

    pub fn emitted(&self) -> &[StepEvent] {
        &self.emitted
    }

    /// Processes one frame and returns the steps emitted on it, in ascending step index.
    pub fn push(&mut self, frame: &ConfidenceFrame) -> Result<Vec<StepEvent>> {
        if frame.probs.len() != self.proc.num_steps() {
            return Err(PsrError::Stream {
                frame: frame.frame,
                reason: format!("expected {} step probabilities, got {}", self.proc.num_steps(), frame.probs.len()),
            });
        }
        frame.check_probs()?;
        if let Some(last) = self.last_frame {
            if frame.frame <= last {
                return Err(PsrError::Stream {
                    frame: frame.frame,
                    reason: format!("frames must strictly increase (previous frame {last})"),
                });
            }
            self.decay_silent(frame.frame - last - 1);
        }
        self.last_frame = Some(frame.frame);

        for (k, &p) in frame.probs.iter().enumerate() {
            if !self.eligible[k] {
                self.accumulators[k] = 0.0;
            } else if p > self.config.evidence_floor {
                self.accumulators[k] += p;
            } else {
                self.accumulators[k] *= self.config.retention;
            }
        }

        let mut out = Vec::new();
        for k in 0..self.accumulators.len() {
            if self.eligible[k] && self.accumulators[k] + THRESHOLD_SLACK >= self.config.threshold {
                let action = &self.proc.actions()[k];
                out.push(StepEvent::new(action, frame.frame, true, self.proc.fps()));
                self.accumulators[k] = 0.0;
                for (j, other) in self.proc.actions().iter().enumerate() {
                    if other.component != action.component {
                        continue;
                    }
                    if other.kind == action.kind {
                        self.eligible[j] = false;
                        self.accumulators[j] = 0.0;
                    } else {
                        self.eligible[j] = true;
                    }
                }
            }
        }
        self.emitted.extend(out.iter().cloned());
        Ok(out)
    }

    pub fn push_chunk(&mut self, frames: &[ConfidenceFrame]) -> Result<Vec<StepEvent>> {
        let mut out = Vec::new();
        for f in frames {
            out.extend(self.push(f)?);
        }
        Ok(out)
    }

    // Same arithmetic as feeding `count` all-zero frames, stopping once everything reaches zero.
    fn decay_silent(&mut self, count: u64) {
        for _ in 0..count {
            if self.accumulators.iter().all(|&a| a == 0.0) {
                break;
            }
            for a in &mut self.accumulators {
                *a *= self.config.retention;
            }
        }
    }

    pub fn into_sequence(self, video_id: &str) -> Result<EventSequence> {
        EventSequence::new(video_id, self.proc.fps(), self.emitted)
    }
}

/// Runs the filter over a whole stream.
pub fn run_filter(
    proc: &Procedure,
    video_id: &str,
    frames: &[ConfidenceFrame],
    config: FilterConfig,
) -> Result<EventSequence> {
    let mut filter = RecognitionFilter::new(proc, config)?;
    filter.push_chunk(frames)?;
    filter.into_sequence(video_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub asd: f64,
    pub temporal: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { asd: 0.5, temporal: 0.5 }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.asd >= 0.0 && self.temporal >= 0.0 && ((self.asd + self.temporal) - 1.0).abs() <= 1e-9) {
            return Err(PsrError::arg(
                "fusion weights",
                format!("must be non-negative and sum to 1, got {} + {}", self.asd, self.temporal),
            ));
        }
        Ok(())
    }
}

/// Element-wise weighted average of two frames with the same index.
pub fn fuse(asd: &ConfidenceFrame, temporal: &ConfidenceFrame, weights: FusionWeights) -> Result<ConfidenceFrame> {
    weights.validate()?;
    if asd.frame != temporal.frame {
        return Err(PsrError::Alignment { asd: asd.frame, temporal: temporal.frame });
    }
    if asd.probs.len() != temporal.probs.len() {
        return Err(PsrError::Stream {
            frame: asd.frame,
            reason: format!("asd has {} steps, temporal has {}", asd.probs.len(), temporal.probs.len()),
        });
    }
    let probs = asd
        .probs
        .iter()
        .zip(&temporal.probs)
        .map(|(a, t)| (weights.asd * a + weights.temporal * t).clamp(0.0, 1.0))
        .collect();
    Ok(ConfidenceFrame { frame: asd.frame, probs, stream: StreamKind::Fused })
}

/// Fuses two streams over the union of their frames; a frame missing from
/// one stream counts as an all-zero frame of that stream.
pub fn fuse_streams(
    asd: &[ConfidenceFrame],
    temporal: &[ConfidenceFrame],
    steps: usize,
    weights: FusionWeights,
) -> Result<Vec<ConfidenceFrame>> {
    check_order(asd)?;
    check_order(temporal)?;
    let mut out = Vec::with_capacity(asd.len().max(temporal.len()));
    let (mut i, mut j) = (0, 0);
    while i < asd.len() || j < temporal.len() {
        let fa = asd.get(i).map(|f| f.frame).unwrap_or(u64::MAX);
        let ft = temporal.get(j).map(|f| f.frame).unwrap_or(u64::MAX);
        let frame = fa.min(ft);
        let a = if fa == frame {
            i += 1;
            asd[i - 1].clone()
        } else {
            ConfidenceFrame::zeros(frame, steps, StreamKind::Asd)
        };
        let t = if ft == frame {
            j += 1;
            temporal[j - 1].clone()
        } else {
            ConfidenceFrame::zeros(frame, steps, StreamKind::Temporal)
        };
        out.push(fuse(&a, &t, weights)?);
    }
    Ok(out)
}

fn check_order(frames: &[ConfidenceFrame]) -> Result<()> {
    for pair in frames.windows(2) {
        if pair[1].frame <= pair[0].frame {
            return Err(PsrError::Stream {
                frame: pair[1].frame,
                reason: format!("frames must strictly increase (previous frame {})", pair[0].frame),
            });
        }
    }
    Ok(())
}
