//! Evaluation reports, flat metric tables and plot-ready confidence series.

use std::collections::BTreeMap;

use psr_core::filter::ConfidenceFrame;
use psr_core::metrics::{aggregate, evaluate, DatasetSummary, EvalOptions, EvaluationReport};
use psr_core::procedure::{EventSequence, Procedure};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};
use crate::jsonl::{Schema, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub procedure: String,
    pub options: EvalOptions,
    pub labels_skipped: usize,
    pub predictions_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub version: String,
    pub config: ReportConfig,
    pub videos: Vec<VideoReport>,
    pub summary: DatasetSummary,
}

/// Evaluates every labelled video; a video without predictions counts as an
/// empty prediction.
pub fn build_report(
    labels: &BTreeMap<String, EventSequence>,
    predictions: &BTreeMap<String, EventSequence>,
    config: ReportConfig,
) -> Result<ReportDocument> {
    if labels.is_empty() {
        return Err(psr_core::PsrError::UndefinedMetric("no labelled videos").into());
    }
    for video in predictions.keys().filter(|v| !labels.contains_key(*v)) {
        log::warn!("predictions for unlabelled video {video} are ignored");
    }
    let mut videos = Vec::with_capacity(labels.len());
    for (video, gt) in labels {
        let empty = EventSequence::empty(video.clone(), gt.fps);
        let pred = predictions.get(video).unwrap_or(&empty);
        let report = evaluate(gt, pred, &config.options).map_err(|e| {
            log::error!("video {video}: {e}");
            e
        })?;
        log::info!("{video}: {}", psr_core::metrics::describe(&report));
        videos.push(VideoReport { video_id: video.clone(), report });
    }
    let summary = aggregate(videos.iter().map(|v| &v.report))?;
    Ok(ReportDocument {
        schema: Schema::Report.name().to_string(),
        version: SCHEMA_VERSION.to_string(),
        config,
        videos,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per video plus a final `ALL` row with the dataset summary.
pub fn metrics_csv(doc: &ReportDocument) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ToolError::Usage(format!("csv: {e}"));
    w.write_record(["video_id", "pos", "precision", "recall", "f1", "tau_s", "tp", "fp", "fn"]).map_err(csv_err)?;
    for v in &doc.videos {
        let r = &v.report;
        w.write_record([
            v.video_id.clone(),
            r.pos.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            opt(r.tau_s),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let s = &doc.summary;
    w.write_record([
        "ALL".to_string(),
        s.pos.to_string(),
        s.precision.to_string(),
        s.recall.to_string(),
        s.f1.to_string(),
        opt(s.tau_s),
        s.tp.to_string(),
        s.fp.to_string(),
        s.fn_.to_string(),
    ])
    .map_err(csv_err)?;
    w.into_inner().map_err(|e| ToolError::Usage(format!("csv: {e}")))
}

/// Wide table: one row per stream frame, one column per step (named by action).
pub fn confidence_series_csv(
    proc: &Procedure,
    streams: &[(&str, &BTreeMap<String, Vec<ConfidenceFrame>>)],
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ToolError::Usage(format!("csv: {e}"));
    let mut header = vec!["video_id".to_string(), "stream".to_string(), "frame".to_string(), "time_s".to_string()];
    header.extend(proc.actions().iter().map(|a| a.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (stream, videos) in streams {
        for (video, frames) in *videos {
            for f in frames {
                let mut row = vec![
                    video.clone(),
                    stream.to_string(),
                    f.frame.to_string(),
                    proc.fps().seconds(f.frame).to_string(),
                ];
                row.extend(f.probs.iter().map(|p| p.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| ToolError::Usage(format!("csv: {e}")))
}
