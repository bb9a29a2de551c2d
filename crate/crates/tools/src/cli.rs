//! The `psr` command line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psr_core::filter::{fuse_streams, run_filter, ConfidenceFrame, FilterConfig, FusionWeights, THRESHOLD_MECCANO};
use psr_core::inference::{asd_stream_sparse, AsdStreamConfig, ConfidenceMode};
use psr_core::metrics::{EditWeights, EvalOptions, MatchStrategy};
use psr_core::procedure::{EventSequence, Fps, Procedure};
use psr_core::rng::mix_seed;
use psr_core::sampling::{
    clip_indices, clip_label, kcas_pmf, kfs_batch, sample_clip_ends, KfsParams, CLIP_SAMPLES, CLIP_WINDOW, KCAS_DELTA,
    KCAS_SIGMA,
};
use psr_core::simulator::{compare_traces, simulate, ComparisonRecord};
use psr_core::StateDetection;
use serde::Serialize;

use crate::error::{Result, ToolError};
use crate::jsonl::{read_text, sniff_schema, to_json_document, to_jsonl, OutputSet, ParseMode, Schema, SCHEMA_VERSION};
use crate::procedure_file::{load_procedure, ProcedureDoc};
use crate::records::{
    asd_records, event_records, parse_asd, parse_labels, parse_temporal, temporal_records, ClipRecord, KfsBatchRecord,
};
use crate::report::{build_report, confidence_series_csv, metrics_csv, ReportConfig};
use crate::sim_config::SimConfigFile;

#[derive(Debug, Parser)]
#[command(name = "psr", version, about = "Procedure step recognition from detector streams")]
pub struct Cli {
    /// Procedure definition: `meccano` or a procedure JSON file.
    #[arg(long, global = true, default_value = "meccano")]
    pub procedure: String,

    /// Skip malformed input lines instead of aborting.
    #[arg(long, global = true, conflicts_with = "strict")]
    pub lenient: bool,

    /// Abort on the first malformed input line (default).
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    fn mode(&self) -> ParseMode {
        if self.lenient {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against labels.
    Evaluate(EvaluateArgs),
    /// Turn detector streams into step predictions.
    Recognize(RecognizeArgs),
    /// Generate synthetic traces and compare the three pipelines.
    Simulate(SimulateArgs),
    /// Emit training-sample specifications.
    #[command(subcommand)]
    Sample(SampleCommand),
    /// Parse input files and report what they contain.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Matching {
    Greedy,
    Optimal,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Edit costs `insert,delete,substitute,transpose`.
    #[arg(long, default_value = "1,1,1,1")]
    pub weights: String,
    /// Keep incorrectly executed steps in the ground truth.
    #[arg(long)]
    pub include_incorrect: bool,
    #[arg(long, value_enum, default_value = "greedy")]
    pub matching: Matching,
    /// Streams to export as a confidence series (`asd:PATH`, `temporal:PATH` or PATH).
    #[arg(long)]
    pub streams: Vec<String>,
    /// Output directory for report.json, metrics.csv and confidence_series.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    /// `asd:PATH`, `temporal:PATH`, or PATH (kind taken from the file header).
    #[arg(long, required = true)]
    pub streams: Vec<String>,
    /// Average the two streams before filtering; needs one stream of each kind.
    #[arg(long)]
    pub fuse: bool,
    #[arg(long, default_value_t = THRESHOLD_MECCANO)]
    pub threshold: f64,
    /// Fraction of accumulated evidence lost on each silent frame.
    #[arg(long, default_value_t = 0.25)]
    pub decay: f64,
    /// Ignore ASD detections below this confidence.
    #[arg(long, default_value_t = 0.0)]
    pub gate: f64,
    /// Fusion weights `asd,temporal`.
    #[arg(long, default_value = "0.5,0.5")]
    pub weights: String,
    /// Frame rate of the streams (defaults to the procedure's).
    #[arg(long)]
    pub fps: Option<Fps>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SampleCommand {
    /// Clip ends drawn from the key-clip aware distribution, with XOR labels.
    Kcas(KcasArgs),
    /// Key-frame sampling mini-batches.
    Kfs(KfsArgs),
}

#[derive(Debug, Args)]
pub struct KcasArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Clips per video.
    #[arg(long, default_value_t = 64)]
    pub draws: usize,
    #[arg(long, default_value_t = KCAS_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = KCAS_DELTA)]
    pub delta: f64,
    /// Clip length in frames.
    #[arg(long, default_value_t = CLIP_WINDOW)]
    pub window: u64,
    /// Frames sampled per clip.
    #[arg(long, default_value_t = CLIP_SAMPLES)]
    pub clip_samples: u64,
    /// Video length in frames; by default the last event plus `delta + 4 sigma`.
    #[arg(long)]
    pub video_len: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KfsArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Window after each state occurrence, in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub t_f: f64,
    /// Frame rate for the window (defaults to the procedure's).
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub n_sample: usize,
    #[arg(long, default_value_t = 0)]
    pub n_syn: usize,
    /// JSON object mapping state ids to synthetic image references.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub asd: Option<PathBuf>,
    #[arg(long)]
    pub temporal: Option<PathBuf>,
    /// Simulator config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the resolved procedure as JSON.
    #[arg(long)]
    pub dump_procedure: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Recognize(a) => recognize(cli, a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Sample(SampleCommand::Kcas(a)) => sample_kcas(cli, a),
        Command::Sample(SampleCommand::Kfs(a)) => sample_kfs(cli, a),
        Command::Validate(a) => validate(cli, a),
    }
}

fn parse_list<const N: usize>(flag: &str, raw: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ToolError::Usage(format!("--{flag} `{raw}`: {e}")))?;
    values.try_into().map_err(|v: Vec<f64>| {
        ToolError::Usage(format!("--{flag} expects {N} comma-separated numbers, got {}", v.len()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StreamFile {
    Asd,
    Temporal,
}

fn resolve_stream(spec: &str) -> Result<(StreamFile, PathBuf)> {
    if let Some(p) = spec.strip_prefix("asd:") {
        return Ok((StreamFile::Asd, PathBuf::from(p)));
    }
    if let Some(p) = spec.strip_prefix("temporal:") {
        return Ok((StreamFile::Temporal, PathBuf::from(p)));
    }
    let path = PathBuf::from(spec);
    match sniff_schema(&path)?.and_then(|s| Schema::from_name(&s)) {
        Some(Schema::AsdStream) => Ok((StreamFile::Asd, path)),
        Some(Schema::TemporalStream) => Ok((StreamFile::Temporal, path)),
        _ => Err(ToolError::Usage(format!(
            "cannot tell the stream kind of {spec}; prefix it with `asd:` or `temporal:`"
        ))),
    }
}

#[derive(Default)]
struct Streams {
    asd: Option<BTreeMap<String, Vec<StateDetection>>>,
    temporal: Option<BTreeMap<String, Vec<ConfidenceFrame>>>,
}

fn load_streams(specs: &[String], proc: &Procedure, mode: ParseMode) -> Result<Streams> {
    let mut streams = Streams::default();
    for spec in specs {
        match resolve_stream(spec)? {
            (StreamFile::Asd, path) => {
                if streams.asd.replace(parse_asd(&path, proc, mode)?).is_some() {
                    return Err(ToolError::Usage("at most one ASD stream may be given".into()));
                }
            }
            (StreamFile::Temporal, path) => {
                if streams.temporal.replace(parse_temporal(&path, proc, mode)?).is_some() {
                    return Err(ToolError::Usage("at most one temporal stream may be given".into()));
                }
            }
        }
    }
    Ok(streams)
}

fn with_fps(proc: Procedure, fps: Option<Fps>) -> Result<Procedure> {
    match fps {
        Some(fps) if fps != proc.fps() => Ok(Procedure::new(
            proc.name(),
            proc.components().to_vec(),
            proc.actions().to_vec(),
            proc.states().to_vec(),
            fps,
        )?),
        _ => Ok(proc),
    }
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let proc = load_procedure(&cli.procedure)?;
    let mode = cli.mode();
    let [insert, delete, substitute, transpose] = parse_list::<4>("weights", &args.weights)?;
    let options = EvalOptions {
        weights: EditWeights { insert, delete, substitute, transpose },
        include_incorrect: args.include_incorrect,
        matching: match args.matching {
            Matching::Greedy => MatchStrategy::Greedy,
            Matching::Optimal => MatchStrategy::Optimal,
        },
    };
    options.weights.validate()?;
    let labels = parse_labels(&args.labels, &proc, mode)?;
    let predictions = parse_labels(&args.predictions, &proc, mode)?;
    let config = ReportConfig {
        procedure: proc.name().to_string(),
        options,
        labels_skipped: labels.skipped,
        predictions_skipped: predictions.skipped,
    };
    let doc = build_report(&labels.sequences, &predictions.sequences, config)?;

    let mut out = OutputSet::default();
    out.add(args.out.join("report.json"), to_json_document(&doc)?);
    out.add(args.out.join("metrics.csv"), metrics_csv(&doc)?);
    if !args.streams.is_empty() {
        let streams = load_streams(&args.streams, &proc, mode)?;
        let mut asd_series = BTreeMap::new();
        for (video, dets) in streams.asd.iter().flatten() {
            asd_series.insert(video.clone(), asd_stream_sparse(dets, &proc, AsdStreamConfig::default())?);
        }
        let mut series = Vec::new();
        if streams.asd.is_some() {
            series.push(("asd", &asd_series));
        }
        if let Some(temporal) = &streams.temporal {
            series.push(("temporal", temporal));
        }
        out.add(args.out.join("confidence_series.csv"), confidence_series_csv(&proc, &series)?);
    }
    out.commit()?;
    let s = &doc.summary;
    println!(
        "{} videos: pos={} precision={} recall={} f1={} tau_s={}",
        s.videos,
        s.pos,
        s.precision,
        s.recall,
        s.f1,
        s.tau_s.map_or_else(|| "undefined".to_string(), |t| t.to_string())
    );
    Ok(())
}

/// Predictions for every video in the given streams.
pub fn recognize_streams(
    proc: &Procedure,
    asd: Option<&BTreeMap<String, Vec<StateDetection>>>,
    temporal: Option<&BTreeMap<String, Vec<ConfidenceFrame>>>,
    filter: FilterConfig,
    asd_config: AsdStreamConfig,
    weights: FusionWeights,
) -> Result<BTreeMap<String, EventSequence>> {
    let mut videos: Vec<&String> =
        asd.iter().flat_map(|m| m.keys()).chain(temporal.iter().flat_map(|m| m.keys())).collect();
    videos.sort();
    videos.dedup();
    let mut out = BTreeMap::new();
    for video in videos {
        let asd_frames = match asd {
            Some(m) => Some(asd_stream_sparse(m.get(video).map_or(&[][..], Vec::as_slice), proc, asd_config)?),
            None => None,
        };
        let temporal_frames = temporal.map(|m| m.get(video).map_or(&[][..], Vec::as_slice));
        let frames = match (asd_frames, temporal_frames) {
            (Some(a), Some(t)) => fuse_streams(&a, t, proc.num_steps(), weights)?,
            (Some(a), None) => a,
            (None, Some(t)) => t.to_vec(),
            (None, None) => Vec::new(),
        };
        out.insert(video.clone(), run_filter(proc, video, &frames, filter)?);
    }
    Ok(out)
}

fn recognize(cli: &Cli, args: &RecognizeArgs) -> Result<()> {
    let proc = with_fps(load_procedure(&cli.procedure)?, args.fps)?;
    let streams = load_streams(&args.streams, &proc, cli.mode())?;
    let both = streams.asd.is_some() && streams.temporal.is_some();
    if both && !args.fuse {
        return Err(ToolError::Usage("an ASD and a temporal stream were given; pass --fuse to combine them".into()));
    }
    if args.fuse && !both {
        return Err(ToolError::Usage("--fuse needs one ASD stream and one temporal stream".into()));
    }
    if !(0.0..1.0).contains(&args.decay) {
        return Err(ToolError::Usage(format!("--decay must be in [0, 1), got {}", args.decay)));
    }
    let [asd_w, temporal_w] = parse_list::<2>("weights", &args.weights)?;
    let weights = FusionWeights { asd: asd_w, temporal: temporal_w };
    weights.validate()?;
    let filter = FilterConfig::new(args.threshold, 1.0 - args.decay);
    let asd_config = AsdStreamConfig { confidence_gate: args.gate, mode: ConfidenceMode::Detection };
    let predictions =
        recognize_streams(&proc, streams.asd.as_ref(), streams.temporal.as_ref(), filter, asd_config, weights)?;
    let records = event_records(predictions.values());
    let mut out = OutputSet::default();
    out.add(&args.out, to_jsonl(Schema::Events, &records)?);
    out.commit()?;
    println!("{} predicted steps over {} videos", records.len(), predictions.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ComparisonDocument<'a> {
    schema: &'static str,
    version: &'static str,
    config: &'a SimConfigFile,
    #[serde(flatten)]
    record: &'a ComparisonRecord,
}

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let mut file = SimConfigFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        file.seed = seed;
    }
    let mut config = file.to_sim_config()?;
    config.procedure = with_fps(config.procedure, Some(config.fps))?;
    let traces = simulate(&config)?;
    let record = compare_traces(&traces, &config, &file.settings)?;

    let labels: Vec<&EventSequence> = traces.iter().map(|t| &t.ground_truth).collect();
    let asd: BTreeMap<String, Vec<StateDetection>> =
        traces.iter().map(|t| (t.video_id.clone(), t.asd_detections.clone())).collect();
    let temporal: BTreeMap<String, Vec<ConfidenceFrame>> =
        traces.iter().map(|t| (t.video_id.clone(), t.temporal_frames.clone())).collect();
    let doc = ComparisonDocument {
        schema: Schema::Comparison.name(),
        version: SCHEMA_VERSION,
        config: &file,
        record: &record,
    };

    let mut out = OutputSet::default();
    out.add(args.out.join("labels.jsonl"), to_jsonl(Schema::Events, &event_records(labels))?);
    out.add(args.out.join("asd.jsonl"), to_jsonl(Schema::AsdStream, &asd_records(&asd))?);
    out.add(args.out.join("temporal.jsonl"), to_jsonl(Schema::TemporalStream, &temporal_records(&temporal))?);
    out.add(args.out.join("comparison.json"), to_json_document(&doc)?);
    out.commit()?;
    for p in &record.pipelines {
        let s = &p.summary;
        println!(
            "{:?}: pos={} f1={} tau_s={}",
            p.pipeline,
            s.pos,
            s.f1,
            s.tau_s.map_or_else(|| "undefined".to_string(), |t| t.to_string())
        );
    }
    println!("seed {} (videos: {:?})", record.seed, record.video_seeds);
    Ok(())
}

fn sample_kcas(cli: &Cli, args: &KcasArgs) -> Result<()> {
    let proc = load_procedure(&cli.procedure)?;
    let labels = parse_labels(&args.labels, &proc, cli.mode())?;
    let mut records = Vec::new();
    for (i, (video, seq)) in labels.sequences.iter().enumerate() {
        let correct = seq.correct_only();
        let completions: Vec<u64> = correct.events().iter().map(|e| e.frame).collect();
        let last = seq.events().last().map_or(0, |e| e.frame);
        let video_len = args
            .video_len
            .unwrap_or_else(|| (last + (args.delta + 4.0 * args.sigma).ceil() as u64 + 1).max(args.window + 1));
        let dist = kcas_pmf(&completions, video_len, args.sigma, args.delta, args.window)?;
        for (draw, end_frame) in
            sample_clip_ends(&dist, args.draws, mix_seed(args.seed, i as u64)).into_iter().enumerate()
        {
            let clip = clip_indices(end_frame, args.window, args.clip_samples)?;
            let start_frame = clip.indices[0];
            let label = clip_label(seq, &proc, start_frame, end_frame)?;
            records.push(ClipRecord {
                video_id: video.clone(),
                draw,
                start_frame,
                end_frame,
                indices: clip.indices,
                label,
            });
        }
    }
    let mut out = OutputSet::default();
    out.add(&args.out, to_jsonl(Schema::KcasClips, &records)?);
    out.commit()?;
    println!("{} clips over {} videos", records.len(), labels.sequences.len());
    Ok(())
}

fn sample_kfs(cli: &Cli, args: &KfsArgs) -> Result<()> {
    let proc = load_procedure(&cli.procedure)?;
    let labels = parse_labels(&args.labels, &proc, cli.mode())?;
    let pool: BTreeMap<u32, Vec<String>> = match &args.synthetic {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| ToolError::parse(path, e.line(), format!("invalid synthetic pool: {e}")))?,
        None => BTreeMap::new(),
    };
    let params = KfsParams {
        t_f: args.t_f,
        fps: args.fps.unwrap_or_else(|| proc.fps().as_f64()),
        n_sample: args.n_sample,
        n_syn: args.n_syn,
    };
    let sequences: Vec<EventSequence> = labels.sequences.values().cloned().collect();
    let mut records = Vec::with_capacity(args.batches);
    for batch in 0..args.batches {
        let seed = mix_seed(args.seed, batch as u64);
        let spec = kfs_batch(&sequences, &proc, &params, &pool, seed)?;
        records.push(KfsBatchRecord { batch, seed, spec });
    }
    let mut out = OutputSet::default();
    out.add(&args.out, to_jsonl(Schema::KfsBatch, &records)?);
    out.commit()?;
    let entries: usize = records.iter().map(|r| r.spec.entries.len()).sum();
    println!("{} batches, {entries} entries", records.len());
    Ok(())
}

fn validate(cli: &Cli, args: &ValidateArgs) -> Result<()> {
    let proc = load_procedure(&cli.procedure)?;
    let mode = cli.mode();
    println!(
        "procedure {}: {} components, {} actions, {} states, {} fps",
        proc.name(),
        proc.num_components(),
        proc.num_steps(),
        proc.states().len(),
        proc.fps()
    );
    if let Some(path) = &args.labels {
        let set = parse_labels(path, &proc, mode)?;
        println!(
            "{}: {} events over {} videos ({} skipped)",
            path.display(),
            set.event_count(),
            set.sequences.len(),
            set.skipped
        );
    }
    if let Some(path) = &args.asd {
        let asd = parse_asd(path, &proc, mode)?;
        let n: usize = asd.values().map(Vec::len).sum();
        println!("{}: {n} detections over {} videos", path.display(), asd.len());
    }
    if let Some(path) = &args.temporal {
        let t = parse_temporal(path, &proc, mode)?;
        let n: usize = t.values().map(Vec::len).sum();
        println!("{}: {n} frames over {} videos", path.display(), t.len());
    }
    if let Some(path) = &args.config {
        let cfg = SimConfigFile::load(path)?;
        cfg.to_sim_config()?;
        println!("{}: valid simulator config (seed {})", path.display(), cfg.seed);
    }
    if let Some(path) = &args.dump_procedure {
        let mut out = OutputSet::default();
        out.add(path, to_json_document(&ProcedureDoc::from_procedure(&proc))?);
        out.commit()?;
    }
    Ok(())
}
