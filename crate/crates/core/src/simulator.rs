//! Seeded generator of procedure executions and of the two detector streams.
//!
//! Occlusion follows a two-state Markov chain per frame. The assembly-state
//! detector only fires on unoccluded frames, while the temporal stream
//! responds to a completion with a triangular probability ramp whose hit
//! probability is lower, but not zero, under occlusion.
//!
//! Every video draws from independent child generators (ground truth,
//! occlusion, ASD, temporal response, temporal false positives), so changing
//! one model's parameters leaves the other draws untouched. The occlusion
//! chain uses one uniform per frame compared against a state-dependent
//! threshold, which makes the mask pointwise monotone in `p_occlude` whenever
//! `p_occlude + p_reveal <= 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};
use crate::filter::{
    fuse_streams, run_filter, ConfidenceFrame, FilterConfig, FusionWeights, StreamKind, DEFAULT_RETENTION,
};
use crate::inference::{asd_stream_sparse, AsdStreamConfig, ConfidenceMode, StateDetection};
use crate::metrics::{aggregate, evaluate, DatasetSummary, EvalOptions, EvaluationReport};
use crate::procedure::{state_diff, AssemblyState, ComponentBits, EventSequence, Fps, Procedure, StepEvent, StepKind};
use crate::rng::{mix_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionModel {
    /// Probability that a visible frame is followed by an occluded one.
    pub p_occlude: f64,
    /// Probability that an occluded frame is followed by a visible one.
    pub p_reveal: f64,
}

impl OcclusionModel {
    pub const NONE: OcclusionModel = OcclusionModel { p_occlude: 0.0, p_reveal: 1.0 };

    /// Long-run fraction of occluded frames.
    pub fn stationary_occluded(&self) -> f64 {
        let s = self.p_occlude + self.p_reveal;
        if s > 0.0 {
            self.p_occlude / s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsdModel {
    pub confidence: f64,
    /// Per visible frame, probability of reporting a wrong known state.
    #[serde(default)]
    pub false_detection_rate: f64,
    #[serde(default = "default_false_confidence")]
    pub false_confidence: f64,
}

fn default_false_confidence() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalModel {
    /// Response onset after a completion, uniform in `delay_min..=delay_max` frames.
    pub delay_min: u64,
    pub delay_max: u64,
    /// Length of the triangular response in frames.
    pub ramp_len: u64,
    /// Probability at the top of the ramp.
    pub peak: f64,
    pub hit_prob_visible: f64,
    pub hit_prob_occluded: f64,
    /// Background false positives per step per frame.
    pub fp_rate: f64,
    /// False-positive amplitudes are uniform in `[0, fp_peak)`.
    pub fp_peak: f64,
}

impl Default for TemporalModel {
    fn default() -> Self {
        TemporalModel {
            delay_min: 2,
            delay_max: 8,
            ramp_len: 9,
            peak: 0.8,
            hit_prob_visible: 1.0,
            hit_prob_occluded: 0.7,
            fp_rate: 1e-3,
            fp_peak: 0.5,
        }
    }
}

impl TemporalModel {
    fn ramp(&self, i: u64) -> f64 {
        let half = self.ramp_len.div_ceil(2);
        self.peak * ((i + 1).min(self.ramp_len - i) as f64 / half as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModel {
    /// Probability that a transition is preceded by an incorrect install of
    /// one of its components, which is then removed.
    pub p_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub procedure: Procedure,
    pub n_videos: usize,
    pub fps: Fps,
    /// Mean frames between consecutive state transitions.
    pub step_gap: f64,
    /// Minimum frames between consecutive state transitions.
    pub min_gap: u64,
    /// Frames recorded after the last completion.
    pub tail_frames: u64,
    pub occlusion: OcclusionModel,
    pub asd: AsdModel,
    pub temporal: TemporalModel,
    pub errors: ErrorModel,
    pub seed: u64,
}

impl SimConfig {
    /// Heavy egocentric occlusion on the MECCANO procedure.
    pub fn heavy_occlusion(seed: u64) -> SimConfig {
        SimConfig {
            procedure: Procedure::meccano(),
            n_videos: 4,
            fps: Fps::integer(10).expect("static"),
            step_gap: 300.0,
            min_gap: 40,
            tail_frames: 600,
            occlusion: OcclusionModel { p_occlude: 0.15, p_reveal: 0.02 },
            asd: AsdModel { confidence: 0.9, false_detection_rate: 0.0, false_confidence: 0.3 },
            temporal: TemporalModel::default(),
            errors: ErrorModel::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PsrError::config(field, format!("probability must be in [0, 1], got {v}")))
            }
        };
        unit("occlusion.p_occlude", self.occlusion.p_occlude)?;
        unit("occlusion.p_reveal", self.occlusion.p_reveal)?;
        unit("asd.confidence", self.asd.confidence)?;
        unit("asd.false_detection_rate", self.asd.false_detection_rate)?;
        unit("asd.false_confidence", self.asd.false_confidence)?;
        unit("temporal.peak", self.temporal.peak)?;
        unit("temporal.hit_prob_visible", self.temporal.hit_prob_visible)?;
        unit("temporal.hit_prob_occluded", self.temporal.hit_prob_occluded)?;
        unit("temporal.fp_rate", self.temporal.fp_rate)?;
        unit("temporal.fp_peak", self.temporal.fp_peak)?;
        unit("errors.p_error", self.errors.p_error)?;
        if self.occlusion.p_reveal == 0.0 && self.occlusion.p_occlude == 1.0 {
            return Err(PsrError::config(
                "occlusion.p_reveal",
                "p_reveal = 0 with p_occlude = 1 occludes the object forever",
            ));
        }
        if !(self.step_gap > 0.0 && self.step_gap.is_finite()) {
            return Err(PsrError::config("step_gap", format!("must be positive, got {}", self.step_gap)));
        }
        if self.min_gap == 0 {
            return Err(PsrError::config("min_gap", "must be at least 1 frame"));
        }
        if self.n_videos == 0 {
            return Err(PsrError::config("n_videos", "must be at least 1"));
        }
        if self.temporal.delay_min > self.temporal.delay_max {
            return Err(PsrError::config("temporal.delay_min", "must not exceed temporal.delay_max"));
        }
        if self.temporal.ramp_len == 0 {
            return Err(PsrError::config("temporal.ramp_len", "must be at least 1 frame"));
        }
        let states = self.procedure.states();
        if states.len() < 2 {
            return Err(PsrError::config("procedure", "needs a nominal sequence of at least two states"));
        }
        if states.iter().any(|s| s.state_id.is_none()) {
            return Err(PsrError::config("procedure", "every nominal state needs a state id"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub video_id: String,
    pub seed: u64,
    pub num_frames: u64,
    pub ground_truth: EventSequence,
    pub asd_detections: Vec<StateDetection>,
    pub temporal_frames: Vec<ConfidenceFrame>,
    pub occlusion_mask: Vec<bool>,
}

struct Streams {
    gt: ChaCha8Rng,
    occlusion: ChaCha8Rng,
    asd: ChaCha8Rng,
    temporal: ChaCha8Rng,
    false_pos: ChaCha8Rng,
}

impl Streams {
    fn new(video_seed: u64) -> Self {
        Streams {
            gt: seeded(mix_seed(video_seed, 1)),
            occlusion: seeded(mix_seed(video_seed, 2)),
            asd: seeded(mix_seed(video_seed, 3)),
            temporal: seeded(mix_seed(video_seed, 4)),
            false_pos: seeded(mix_seed(video_seed, 5)),
        }
    }
}

pub fn video_seed(config_seed: u64, video: usize) -> u64 {
    mix_seed(config_seed, 0x5EED_0000 + video as u64)
}

pub fn simulate(config: &SimConfig) -> Result<Vec<SimTrace>> {
    config.validate()?;
    (0..config.n_videos).map(|v| simulate_video(config, v)).collect()
}

fn simulate_video(config: &SimConfig, video: usize) -> Result<SimTrace> {
    let seed = video_seed(config.seed, video);
    let mut rng = Streams::new(seed);
    let proc = &config.procedure;
    let video_id = format!("sim-{video:03}");

    let ground_truth = generate_ground_truth(config, &video_id, &mut rng.gt)?;
    let last = ground_truth.events().last().map_or(0, |e| e.frame);
    let num_frames = last + config.tail_frames + 1;
    let occlusion_mask = occlusion_mask(&config.occlusion, num_frames, &mut rng.occlusion);
    let asd_detections = asd_detections(config, &ground_truth, &occlusion_mask, &mut rng.asd)?;
    let temporal_frames =
        temporal_stream(config, proc, &ground_truth, &occlusion_mask, &mut rng.temporal, &mut rng.false_pos);
    Ok(SimTrace { video_id, seed, num_frames, ground_truth, asd_detections, temporal_frames, occlusion_mask })
}

fn exp_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    -libm::log(1.0 - rng.gen::<f64>()) * mean
}

fn generate_ground_truth(config: &SimConfig, video_id: &str, rng: &mut ChaCha8Rng) -> Result<EventSequence> {
    let proc = &config.procedure;
    let states = proc.states();
    let extra_mean = (config.step_gap - config.min_gap as f64).max(0.0);
    let action = |component: usize, kind: StepKind| {
        proc.step_for(component, kind)
            .map(|k| &proc.actions()[k])
            .ok_or(PsrError::UnknownTransition { component, kind: kind.as_str() })
    };
    let mut events = Vec::new();
    let mut t = 0u64;
    for pair in states.windows(2) {
        let gap = config.min_gap + libm::floor(exp_draw(rng, extra_mean)) as u64;
        let (u_err, u_pick) = (rng.gen::<f64>(), rng.gen::<f64>());
        let prev = t;
        t += gap;
        let diff = state_diff(&pair[0].bits, &pair[1].bits)?;
        let installs: Vec<usize> = diff.iter().filter(|(_, k)| *k == StepKind::Install).map(|(c, _)| *c).collect();
        if u_err < config.errors.p_error && gap >= 3 && !installs.is_empty() {
            let c = installs[((u_pick * installs.len() as f64) as usize).min(installs.len() - 1)];
            events.push(StepEvent::new(action(c, StepKind::Install)?, prev + gap / 3, false, config.fps));
            events.push(StepEvent::new(action(c, StepKind::Remove)?, prev + 2 * gap / 3, true, config.fps));
        }
        for (c, kind) in diff {
            events.push(StepEvent::new(action(c, kind)?, t, true, config.fps));
        }
    }
    EventSequence::new(video_id, config.fps, events)
}

fn occlusion_mask(model: &OcclusionModel, num_frames: u64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = Vec::with_capacity(num_frames as usize);
    let mut occluded = rng.gen::<f64>() < model.stationary_occluded();
    mask.push(occluded);
    for _ in 1..num_frames {
        let stay_or_enter = if occluded { 1.0 - model.p_reveal } else { model.p_occlude };
        occluded = rng.gen::<f64>() < stay_or_enter;
        mask.push(occluded);
    }
    // The finished object is always shown once at the end of a recording.
    if let Some(last) = mask.last_mut() {
        *last = false;
    }
    mask
}

fn asd_detections(
    config: &SimConfig,
    gt: &EventSequence,
    mask: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StateDetection>> {
    let proc = &config.procedure;
    let known: Vec<&AssemblyState> = proc.states().iter().collect();
    let mut bits = ComponentBits::zeros(proc.num_components());
    let mut events = gt.events().iter().peekable();
    let mut out = Vec::new();
    for (f, &occluded) in mask.iter().enumerate() {
        let f = f as u64;
        while let Some(e) = events.next_if(|e| e.frame == f) {
            bits.set(e.component, e.kind == StepKind::Install);
        }
        let (u_false, u_pick) = (rng.gen::<f64>(), rng.gen::<f64>());
        if occluded {
            continue;
        }
        let current = proc.state_id_of(&bits);
        if u_false < config.asd.false_detection_rate {
            let wrong: Vec<&&AssemblyState> = known.iter().filter(|s| s.state_id != current).collect();
            if !wrong.is_empty() {
                let s = wrong[((u_pick * wrong.len() as f64) as usize).min(wrong.len() - 1)];
                out.push(StateDetection::new(f, (*s).clone(), config.asd.false_confidence)?);
            }
        } else if let Some(id) = current {
            let state = proc.state_by_id(id).expect("id from the procedure").clone();
            out.push(StateDetection::new(f, state, config.asd.confidence)?);
        }
    }
    Ok(out)
}

fn temporal_stream(
    config: &SimConfig,
    proc: &Procedure,
    gt: &EventSequence,
    mask: &[bool],
    rng: &mut ChaCha8Rng,
    fp_rng: &mut ChaCha8Rng,
) -> Vec<ConfidenceFrame> {
    let model = &config.temporal;
    let n = mask.len();
    let steps = proc.num_steps();
    let mut probs = vec![vec![0.0f64; steps]; n];

    let correct: Vec<&StepEvent> = gt.events().iter().filter(|e| e.correct).collect();
    let mut i = 0;
    while i < correct.len() {
        let t = correct[i].frame;
        let group: Vec<usize> =
            correct[i..].iter().take_while(|e| e.frame == t).filter_map(|e| proc.step_index(e.action)).collect();
        i += correct[i..].iter().take_while(|e| e.frame == t).count();
        let (u_hit, u_delay) = (rng.gen::<f64>(), rng.gen::<f64>());
        let hit_prob = if mask[t as usize] { model.hit_prob_occluded } else { model.hit_prob_visible };
        if u_hit >= hit_prob {
            continue;
        }
        let span = model.delay_max - model.delay_min + 1;
        let delay = model.delay_min + ((u_delay * span as f64) as u64).min(span - 1);
        for r in 0..model.ramp_len {
            let f = (t + delay + r) as usize;
            if f >= n {
                break;
            }
            for &k in &group {
                probs[f][k] = probs[f][k].max(model.ramp(r));
            }
        }
    }

    if model.fp_rate > 0.0 {
        let log_q = libm::log(1.0 - model.fp_rate);
        for k in 0..steps {
            let mut f = 0usize;
            loop {
                // Geometric skip to the next false positive.
                let skip =
                    if model.fp_rate >= 1.0 { 0.0 } else { libm::floor(libm::log(1.0 - fp_rng.gen::<f64>()) / log_q) };
                if skip >= (n - f) as f64 {
                    break;
                }
                f += skip as usize;
                let amp = fp_rng.gen::<f64>() * model.fp_peak;
                probs[f][k] = probs[f][k].max(amp);
                f += 1;
                if f >= n {
                    break;
                }
            }
        }
    }

    probs
        .into_iter()
        .enumerate()
        .map(|(f, p)| ConfidenceFrame { frame: f as u64, probs: p, stream: StreamKind::Temporal })
        .collect()
}

/// Thresholds and options for the three-pipeline comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub asd_threshold: f64,
    pub temporal_threshold: f64,
    pub fused_threshold: f64,
    pub retention: f64,
    /// ASD detections below this confidence are ignored.
    pub asd_gate: f64,
    pub fusion: FusionWeights,
    pub eval: EvalOptions,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            asd_threshold: 0.5,
            temporal_threshold: 1.0,
            fused_threshold: 0.4,
            retention: DEFAULT_RETENTION,
            asd_gate: 0.5,
            fusion: FusionWeights::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentSettings {
    pub fn asd_stream(&self) -> AsdStreamConfig {
        AsdStreamConfig { confidence_gate: self.asd_gate, mode: ConfidenceMode::Detection }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    AsdOnly,
    TemporalOnly,
    Fused,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::AsdOnly, Pipeline::TemporalOnly, Pipeline::Fused];
}

/// Predictions of one pipeline for one trace.
pub fn pipeline_predictions(
    trace: &SimTrace,
    proc: &Procedure,
    settings: &ExperimentSettings,
    pipeline: Pipeline,
) -> Result<EventSequence> {
    let cfg = |threshold| FilterConfig::new(threshold, settings.retention);
    match pipeline {
        Pipeline::AsdOnly => {
            let asd = asd_stream_sparse(&trace.asd_detections, proc, settings.asd_stream())?;
            run_filter(proc, &trace.video_id, &asd, cfg(settings.asd_threshold))
        }
        Pipeline::TemporalOnly => {
            run_filter(proc, &trace.video_id, &trace.temporal_frames, cfg(settings.temporal_threshold))
        }
        Pipeline::Fused => {
            let asd = asd_stream_sparse(&trace.asd_detections, proc, settings.asd_stream())?;
            let fused = fuse_streams(&asd, &trace.temporal_frames, proc.num_steps(), settings.fusion)?;
            run_filter(proc, &trace.video_id, &fused, cfg(settings.fused_threshold))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub seed: u64,
    pub report: EvaluationReport,
    pub predictions: EventSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub pipeline: Pipeline,
    pub summary: DatasetSummary,
    pub videos: Vec<VideoResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub seed: u64,
    pub video_seeds: Vec<u64>,
    pub settings: ExperimentSettings,
    pub pipelines: Vec<PipelineResult>,
}

impl ComparisonRecord {
    pub fn pipeline(&self, p: Pipeline) -> &PipelineResult {
        self.pipelines.iter().find(|r| r.pipeline == p).expect("all pipelines are evaluated")
    }
}

pub fn run_experiment(config: &SimConfig, settings: &ExperimentSettings) -> Result<ComparisonRecord> {
    let traces = simulate(config)?;
    compare_traces(&traces, config, settings)
}

/// Evaluates the three pipelines on already simulated traces.
pub fn compare_traces(
    traces: &[SimTrace],
    config: &SimConfig,
    settings: &ExperimentSettings,
) -> Result<ComparisonRecord> {
    let proc = &config.procedure;
    let mut pipelines = Vec::with_capacity(3);
    for pipeline in Pipeline::ALL {
        let mut videos = Vec::with_capacity(traces.len());
        for trace in traces {
            let predictions = pipeline_predictions(trace, proc, settings, pipeline)?;
            let report = evaluate(&trace.ground_truth, &predictions, &settings.eval)?;
            videos.push(VideoResult { video_id: trace.video_id.clone(), seed: trace.seed, report, predictions });
        }
        let summary = aggregate(videos.iter().map(|v| &v.report))?;
        log::info!("{pipeline:?}: pos={:.4} f1={:.4} tau={:?}", summary.pos, summary.f1, summary.tau_s);
        pipelines.push(PipelineResult { pipeline, summary, videos });
    }
    Ok(ComparisonRecord {
        seed: config.seed,
        video_seeds: traces.iter().map(|t| t.seed).collect(),
        settings: settings.clone(),
        pipelines,
    })
}
