//! Procedure definitions on disk, plus the built-in MECCANO procedure.

use std::path::Path;

use psr_core::procedure::{Action, AssemblyState, Fps, Procedure};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};
use crate::jsonl::{check_version, read_text, Schema, SCHEMA_VERSION};

pub const BUILTIN_MECCANO: &str = "meccano";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureDoc {
    pub schema: String,
    pub version: String,
    pub name: String,
    pub fps: Fps,
    pub components: Vec<String>,
    pub actions: Vec<Action>,
    /// Nominal assembly states in execution order.
    #[serde(default)]
    pub states: Vec<AssemblyState>,
}

impl ProcedureDoc {
    pub fn from_procedure(proc: &Procedure) -> Self {
        ProcedureDoc {
            schema: Schema::Procedure.name().to_string(),
            version: SCHEMA_VERSION.to_string(),
            name: proc.name().to_string(),
            fps: proc.fps(),
            components: proc.components().to_vec(),
            actions: proc.actions().to_vec(),
            states: proc.states().to_vec(),
        }
    }

    pub fn into_procedure(self) -> Result<Procedure> {
        Ok(Procedure::new(self.name, self.components, self.actions, self.states, self.fps)?)
    }
}

/// Resolves `meccano` to the built-in procedure, anything else to a JSON file.
pub fn load_procedure(spec: &str) -> Result<Procedure> {
    if spec.eq_ignore_ascii_case(BUILTIN_MECCANO) {
        return Ok(Procedure::meccano());
    }
    let path = Path::new(spec);
    let text = read_text(path)?;
    let doc: ProcedureDoc =
        serde_json::from_str(&text).map_err(|e| ToolError::parse(path, e.line(), format!("invalid procedure: {e}")))?;
    check_version(path, Schema::Procedure, &doc.schema, &doc.version)?;
    doc.into_procedure().map_err(|e| ToolError::schema(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trips_through_json() {
        let proc = Procedure::meccano();
        let text = serde_json::to_string(&ProcedureDoc::from_procedure(&proc)).unwrap();
        let doc: ProcedureDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(doc.into_procedure().unwrap(), proc);
        assert_eq!(load_procedure("MECCANO").unwrap(), proc);
    }
}
