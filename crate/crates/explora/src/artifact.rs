//! Run artifacts: machine-readable JSON summaries written by the CLI.
//!
//! Artifacts embed the exact resolved config and carry no volatile fields;
//! a run with fixed seeds and a simulator backend writes byte-identical
//! artifacts every time. Wall-clock timings go to a `.timing.txt` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{RankedSubset, RoundDiag, StopReason, SwapEvent};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalrun::{EvalRecord, EvalReport};
use crate::llm::CallSnapshot;
use crate::pool::UniverseProvenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Selection,
    Exhaustive,
    NoExploration,
    Evaluation,
    Transfer,
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArtifactKind::Selection => "selection",
            ArtifactKind::Exhaustive => "exhaustive",
            ArtifactKind::NoExploration => "no-exploration",
            ArtifactKind::Evaluation => "evaluation",
            ArtifactKind::Transfer => "transfer",
        };
        f.write_str(s)
    }
}

/// Selection-phase results (the bandit run or an ablation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSection {
    pub backend: String,
    pub universe_provenance: UniverseProvenance,
    pub features_fingerprint: String,
    pub rounds: Vec<RoundDiag>,
    pub swap_log: Vec<SwapEvent>,
    pub approx_errors: Vec<f64>,
    pub stop_reason: Option<StopReason>,
    /// Final low-loss set (the whole ranked universe for the exhaustive
    /// ablation; a single subset for the no-exploration ablation).
    pub final_set: Vec<RankedSubset>,
    pub best: RankedSubset,
    pub calls: CallSnapshot,
}

/// Evaluation-phase results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSection {
    pub report: EvalReport,
    pub selection_backend: String,
    pub evaluation_backend: String,
    /// Path of the per-example records file, relative to the artifact.
    pub records_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub kind: ArtifactKind,
    pub config: RunConfig,
    pub selection: Option<SelectionSection>,
    pub evaluation: Option<EvaluationSection>,
}

impl RunArtifact {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::validation(format!("artifact serialization: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::data(path, 0, format!("unreadable artifact: {e}")))
    }
}

/// Write per-example records as JSON lines next to an artifact.
pub fn save_records(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::validation(format!("record serialization: {e}")))?,
        );
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::data(path, idx + 1, format!("bad record: {e}")))
        })
        .collect()
}

/// Wall-clock sidecar path for an artifact.
pub fn timing_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    name.push_str(".timing.txt");
    artifact.with_file_name(name)
}

pub fn save_timing(artifact: &Path, seconds: f64) -> Result<()> {
    let path = timing_path(artifact);
    fs::write(&path, format!("{seconds:.3}\n")).map_err(|e| Error::io(path, e))
}

pub fn load_timing(artifact: &Path) -> Option<f64> {
    fs::read_to_string(timing_path(artifact))
        .ok()
        .and_then(|s| s.trim().parse().ok())
}
