//! Simulator configuration files.

use std::path::Path;

use psr_core::procedure::Fps;
use psr_core::simulator::{AsdModel, ErrorModel, ExperimentSettings, OcclusionModel, SimConfig, TemporalModel};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};
use crate::jsonl::{check_version, read_text, Schema, SCHEMA_VERSION};
use crate::procedure_file::{load_procedure, BUILTIN_MECCANO};

/// On-disk simulator config. Omitted fields take the heavy-occlusion defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfigFile {
    pub schema: String,
    pub version: String,
    /// `meccano` or a path to a procedure file.
    pub procedure: String,
    pub n_videos: usize,
    pub fps: Fps,
    pub step_gap: f64,
    pub min_gap: u64,
    pub tail_frames: u64,
    pub occlusion: OcclusionModel,
    pub asd: AsdModel,
    pub temporal: TemporalModel,
    pub errors: ErrorModel,
    pub seed: u64,
    pub settings: ExperimentSettings,
}

impl Default for SimConfigFile {
    fn default() -> Self {
        let base = SimConfig::heavy_occlusion(0);
        SimConfigFile {
            schema: Schema::SimConfig.name().to_string(),
            version: SCHEMA_VERSION.to_string(),
            procedure: BUILTIN_MECCANO.to_string(),
            n_videos: base.n_videos,
            fps: base.fps,
            step_gap: base.step_gap,
            min_gap: base.min_gap,
            tail_frames: base.tail_frames,
            occlusion: base.occlusion,
            asd: base.asd,
            temporal: base.temporal,
            errors: base.errors,
            seed: base.seed,
            settings: ExperimentSettings::default(),
        }
    }
}

impl SimConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_str(&text, path)
    }

    pub fn from_str(text: &str, path: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let line = e.inner().line();
            let field = e.path().to_string();
            ToolError::parse(path, line, format!("invalid config field `{field}`: {}", e.inner()))
        })?;
        check_version(path, Schema::SimConfig, &cfg.schema, &cfg.version)?;
        Ok(cfg)
    }

    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let config = SimConfig {
            procedure: load_procedure(&self.procedure)?,
            n_videos: self.n_videos,
            fps: self.fps,
            step_gap: self.step_gap,
            min_gap: self.min_gap,
            tail_frames: self.tail_frames,
            occlusion: self.occlusion,
            asd: self.asd,
            temporal: self.temporal,
            errors: self.errors,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}
