//! Schema-versioned JSON Lines files.
//!
//! Every file starts with a header line `{"schema":"psr.events","version":"1.0"}`.
//! Readers accept a missing header, reject a different schema, and reject any
//! major version other than the one they were built for.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};

pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Events,
    AsdStream,
    TemporalStream,
    KcasClips,
    KfsBatch,
    Report,
    Comparison,
    Procedure,
    SimConfig,
}

impl Schema {
    pub const ALL: [Schema; 9] = [
        Schema::Events,
        Schema::AsdStream,
        Schema::TemporalStream,
        Schema::KcasClips,
        Schema::KfsBatch,
        Schema::Report,
        Schema::Comparison,
        Schema::Procedure,
        Schema::SimConfig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Schema::Events => "psr.events",
            Schema::AsdStream => "psr.asd-stream",
            Schema::TemporalStream => "psr.temporal-stream",
            Schema::KcasClips => "psr.kcas-clips",
            Schema::KfsBatch => "psr.kfs-batch",
            Schema::Report => "psr.report",
            Schema::Comparison => "psr.comparison",
            Schema::Procedure => "psr.procedure",
            Schema::SimConfig => "psr.sim-config",
        }
    }

    pub fn from_name(name: &str) -> Option<Schema> {
        Schema::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub version: String,
}

impl Header {
    pub fn new(schema: Schema) -> Self {
        Header { schema: schema.name().to_string(), version: SCHEMA_VERSION.to_string() }
    }
}

/// Checks a schema name and version found in a file.
pub fn check_version(path: &Path, expected: Schema, schema: &str, version: &str) -> Result<()> {
    if schema != expected.name() {
        return Err(ToolError::schema(path, format!("expected schema `{}`, found `{schema}`", expected.name())));
    }
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| ToolError::schema(path, format!("malformed schema version `{version}`")))?;
    if major != SCHEMA_MAJOR {
        return Err(ToolError::schema(
            path,
            format!("unsupported {schema} version {version}; this build reads {SCHEMA_MAJOR}.x"),
        ));
    }
    Ok(())
}

/// Strict parsing aborts on the first bad line; lenient parsing skips it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub path: PathBuf,
    /// Records with their 1-based line numbers.
    pub records: Vec<(usize, T)>,
    pub skipped: Vec<Diagnostic>,
}

impl<T> Parsed<T> {
    /// Reports a record-level problem according to the parse mode.
    pub fn reject(&mut self, mode: ParseMode, line: usize, message: String) -> Result<()> {
        match mode {
            ParseMode::Strict => Err(ToolError::parse(&self.path, line, message)),
            ParseMode::Lenient => {
                log::warn!("{}:{line}: {message} (skipped)", self.path.display());
                self.skipped.push(Diagnostic { line, message });
                Ok(())
            }
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ToolError::io(path, e))
}

/// Schema named by a file's header line, if it has one.
pub fn sniff_schema(path: &Path) -> Result<Option<String>> {
    let text = read_text(path)?;
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(None);
    };
    Ok(serde_json::from_str::<Header>(first).ok().map(|h| h.schema))
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, schema: Schema, mode: ParseMode) -> Result<Parsed<T>> {
    let text = read_text(path)?;
    parse_jsonl_str(&text, path, schema, mode)
}

pub fn parse_jsonl_str<T: DeserializeOwned>(
    text: &str,
    path: &Path,
    schema: Schema,
    mode: ParseMode,
) -> Result<Parsed<T>> {
    let mut parsed = Parsed { path: path.to_path_buf(), records: Vec::new(), skipped: Vec::new() };
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Ok(h) = serde_json::from_str::<Header>(raw) {
                check_version(path, schema, &h.schema, &h.version).map_err(|e| match e {
                    ToolError::Schema { path, message } => ToolError::Parse { path, line, message },
                    other => other,
                })?;
                continue;
            }
        }
        match serde_json::from_str::<T>(raw) {
            Ok(rec) => parsed.records.push((line, rec)),
            Err(e) => parsed.reject(mode, line, format!("invalid {} record: {e}", schema.name()))?,
        }
    }
    Ok(parsed)
}

pub fn to_jsonl<T: Serialize>(schema: Schema, records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_line(&mut out, &Header::new(schema))?;
    for r in records {
        write_line(&mut out, r)?;
    }
    Ok(out)
}

fn write_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| ToolError::Usage(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(())
}

/// A JSON document (not JSON Lines) with the schema fields first.
pub fn to_json_document<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out =
        serde_json::to_vec_pretty(value).map_err(|e| ToolError::Usage(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// Files produced by one command. Nothing touches the disk until every
/// output has been computed, and each file is replaced atomically.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> Result<()> {
        for (path, _) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| ToolError::io(dir, e))?;
            }
        }
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let tmp = tmp_path(path);
            let written = fs::File::create(&tmp).and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()));
            if let Err(e) = written {
                for t in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(ToolError::io(path, e));
            }
            staged.push(tmp);
        }
        for ((path, _), tmp) in self.files.iter().zip(&staged) {
            fs::rename(tmp, path).map_err(|e| ToolError::io(path, e))?;
            log::info!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}
