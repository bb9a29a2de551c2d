//! Training-time index generators: key-clip aware sampling (KCAS) of clip
//! end frames, equally spaced clip frame indices, XOR clip labels, and
//! key-frame sampling (KFS) mini-batches for contrastive pre-training.
//!
//! Samplers emit frame references only; they never touch pixels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};
use crate::procedure::{cumulative_state, ComponentBits, EventSequence, Procedure, StepKind};
use crate::rng::seeded;

/// Standard deviation of each KCAS Gaussian, in frames.
pub const KCAS_SIGMA: f64 = 45.0;
/// Offset of the two KCAS modes from the completion frame, in frames.
pub const KCAS_DELTA: f64 = 80.0;
pub const CLIP_WINDOW: u64 = 256;
pub const CLIP_SAMPLES: u64 = 64;

/// Normalized clip-end distribution over frames `first_frame..first_frame + pmf.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcasDistribution {
    pub first_frame: u64,
    pub pmf: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
    /// Completion frames after merging coincident completions.
    pub completion_frames: Vec<u64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl KcasDistribution {
    pub fn last_frame(&self) -> u64 {
        self.first_frame + self.pmf.len() as u64 - 1
    }

    /// Probability of a clip ending at `frame` (0 outside the support).
    pub fn prob(&self, frame: u64) -> f64 {
        if frame < self.first_frame {
            return 0.0;
        }
        self.pmf.get((frame - self.first_frame) as usize).copied().unwrap_or(0.0)
    }

    fn build_cdf(&mut self) {
        let mut acc = 0.0;
        self.cdf = self
            .pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = self.cdf.last_mut() {
            *last = 1.0;
        }
    }

    /// Frame whose cumulative mass first exceeds `u` in `[0, 1)`.
    pub fn inverse_cdf(&self, u: f64) -> u64 {
        let i = self.cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1);
        self.first_frame + i as u64
    }
}

fn gaussian(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    libm::exp(-0.5 * z * z) / (sigma * libm::sqrt(2.0 * core::f64::consts::PI))
}

/// Bimodal clip-end distribution: two Gaussians at `t - delta` and `t + delta`
/// around every distinct completion frame `t`, evaluated at every valid clip
/// end `x` in `[w, video_len - 1]` and normalized.
pub fn kcas_pmf(completions: &[u64], video_len: u64, sigma: f64, delta: f64, w: u64) -> Result<KcasDistribution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PsrError::arg("sigma", format!("must be positive, got {sigma}")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(PsrError::arg("delta", format!("must be non-negative, got {delta}")));
    }
    if video_len <= w {
        return Err(PsrError::arg("video_len", format!("video of {video_len} frames cannot hold a {w}-frame clip")));
    }
    let merged: Vec<u64> = completions.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n = (video_len - w) as usize;
    let mut pmf: Vec<f64> = (0..n)
        .map(|i| {
            let x = (w + i as u64) as f64;
            merged.iter().map(|&t| gaussian(x, t as f64 - delta, sigma) + gaussian(x, t as f64 + delta, sigma)).sum()
        })
        .collect();
    let total: f64 = pmf.iter().sum();
    if merged.is_empty() || !(total > 0.0) {
        log::warn!("kcas: no usable completion mass, falling back to a uniform distribution over {n} clip ends");
        pmf.iter_mut().for_each(|p| *p = 1.0 / n as f64);
    } else {
        pmf.iter_mut().for_each(|p| *p /= total);
    }
    let mut dist = KcasDistribution { first_frame: w, pmf, sigma, delta, completion_frames: merged, cdf: Vec::new() };
    dist.build_cdf();
    Ok(dist)
}

/// `n` i.i.d. clip-end frames drawn by inverse CDF.
pub fn sample_clip_ends(dist: &KcasDistribution, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| dist.inverse_cdf(rng.gen::<f64>())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub end_frame: u64,
    pub window: u64,
    pub indices: Vec<u64>,
}

/// `n_w` frame indices spread over the `w` frames ending at `end_frame`.
///
/// Index `i` sits `floor((n_w - 1 - i) * w / n_w)` frames before the end, so
/// the stride is exactly `w / n_w` whenever it divides and the indices stay
/// strictly increasing otherwise.
pub fn clip_indices(end_frame: u64, w: u64, n_w: u64) -> Result<ClipSpec> {
    if n_w == 0 {
        return Err(PsrError::arg("n_w", "must be at least 1"));
    }
    if n_w > w {
        return Err(PsrError::arg("n_w", format!("{n_w} samples do not fit a window of {w} frames")));
    }
    if end_frame + 1 < w {
        return Err(PsrError::arg(
            "end_frame",
            format!("clip ending at {end_frame} would start before frame 0 (w = {w})"),
        ));
    }
    let indices = (0..n_w).map(|i| end_frame - (n_w - 1 - i) * w / n_w).collect();
    Ok(ClipSpec { end_frame, window: w, indices })
}

/// Net component change between the first and last frame of a clip.
pub fn clip_label(events: &EventSequence, proc: &Procedure, start_frame: u64, end_frame: u64) -> Result<ComponentBits> {
    if start_frame > end_frame {
        return Err(PsrError::arg("start_frame", format!("{start_frame} is after end frame {end_frame}")));
    }
    let start = cumulative_state(events, proc, start_frame)?;
    let end = cumulative_state(events, proc, end_frame)?;
    start.xor(&end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfsParams {
    /// Window after each occurrence, in seconds.
    pub t_f: f64,
    /// Frame rate used to convert `t_f` into frames.
    #[serde(default = "default_kfs_fps")]
    pub fps: f64,
    pub n_sample: usize,
    #[serde(default)]
    pub n_syn: usize,
}

fn default_kfs_fps() -> f64 {
    10.0
}

impl KfsParams {
    /// Frames eligible after each occurrence; at least the occurrence frame itself.
    pub fn window_frames(&self) -> u64 {
        (libm::round(self.t_f * self.fps) as u64).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_f >= 0.0 && self.t_f.is_finite()) {
            return Err(PsrError::arg("t_f", format!("must be non-negative, got {}", self.t_f)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(PsrError::arg("fps", format!("must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum FrameSource {
    Real { video_id: String, frame: u64, occurrence_frame: u64 },
    Synthetic { reference: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KfsEntry {
    pub state_id: u32,
    #[serde(flatten)]
    pub source: FrameSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfsBatchSpec {
    pub entries: Vec<KfsEntry>,
    pub t_f: f64,
    pub n_sample: usize,
    pub n_syn: usize,
    /// States present in the batch, ascending.
    pub states: Vec<u32>,
    /// States with no occurrence in the labels.
    pub skipped_states: Vec<u32>,
}

/// Frames at which a video reaches a known assembly state, keyed by state id.
///
/// All events on a frame are applied before the state is looked up, so
/// coincident completions yield a single occurrence.
pub fn state_occurrences(labels: &[EventSequence], proc: &Procedure) -> Result<BTreeMap<u32, Vec<(String, u64)>>> {
    let mut out: BTreeMap<u32, Vec<(String, u64)>> = BTreeMap::new();
    for seq in labels {
        let mut bits = ComponentBits::zeros(proc.num_components());
        let events = seq.events();
        let mut i = 0;
        while i < events.len() {
            let frame = events[i].frame;
            while i < events.len() && events[i].frame == frame {
                let e = &events[i];
                if e.component >= bits.width() {
                    return Err(PsrError::Structural(format!(
                        "video {}: component {} out of range",
                        seq.video_id, e.component
                    )));
                }
                bits.set(e.component, e.kind == StepKind::Install);
                i += 1;
            }
            if let Some(id) = proc.state_id_of(&bits) {
                out.entry(id).or_default().push((seq.video_id.clone(), frame));
            }
        }
    }
    Ok(out)
}

/// Builds one KFS mini-batch: for every state with at least one occurrence,
/// `n_sample` real frames drawn from the windows following its occurrences
/// and `n_syn` references drawn from the state's synthetic pool.
///
/// Draws are without replacement unless the pool is smaller than requested.
pub fn kfs_batch(
    labels: &[EventSequence],
    proc: &Procedure,
    params: &KfsParams,
    synthetic_pool: &BTreeMap<u32, Vec<String>>,
    seed: u64,
) -> Result<KfsBatchSpec> {
    params.validate()?;
    let occurrences = state_occurrences(labels, proc)?;
    let window = params.window_frames();
    let mut rng = seeded(seed);
    let mut entries = Vec::new();
    let mut states = Vec::new();
    let mut skipped_states = Vec::new();

    let mut ids = proc.state_ids();
    ids.sort_unstable();
    for state_id in ids {
        let Some(occ) = occurrences.get(&state_id) else {
            log::warn!("kfs: state {state_id} never occurs in the labels, skipping it");
            skipped_states.push(state_id);
            continue;
        };
        let mut seen = BTreeSet::new();
        let mut pool = Vec::new();
        for (video, start) in occ {
            for frame in *start..*start + window {
                if seen.insert((video.clone(), frame)) {
                    pool.push(FrameSource::Real { video_id: video.clone(), frame, occurrence_frame: *start });
                }
            }
        }
        for src in draw(&mut rng, &pool, params.n_sample, state_id, "real") {
            entries.push(KfsEntry { state_id, source: src });
        }
        if params.n_syn > 0 {
            let refs = synthetic_pool.get(&state_id).filter(|r| !r.is_empty()).ok_or_else(|| {
                PsrError::arg(
                    "synthetic_pool",
                    format!("state {state_id} needs {} synthetic images but has none", params.n_syn),
                )
            })?;
            let refs: Vec<FrameSource> = refs.iter().map(|r| FrameSource::Synthetic { reference: r.clone() }).collect();
            for src in draw(&mut rng, &refs, params.n_syn, state_id, "synthetic") {
                entries.push(KfsEntry { state_id, source: src });
            }
        }
        states.push(state_id);
    }
    Ok(KfsBatchSpec {
        entries,
        t_f: params.t_f,
        n_sample: params.n_sample,
        n_syn: params.n_syn,
        states,
        skipped_states,
    })
}

fn draw<R: Rng>(rng: &mut R, pool: &[FrameSource], n: usize, state_id: u32, what: &str) -> Vec<FrameSource> {
    if n == 0 {
        return Vec::new();
    }
    if pool.len() >= n {
        index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect()
    } else {
        log::warn!(
            "kfs: state {state_id} has only {} {what} candidates for {n} draws, sampling with replacement",
            pool.len()
        );
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
    }
}
