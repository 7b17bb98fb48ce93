//! Persisted run output: one entry per drag step plus tracker traces.
//!
//! Wall-clock timings live in [`RunTimings`], kept apart from [`RunRecord`]
//! so that repeated runs serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Point;
use crate::scenario::ScenarioFile;
use crate::supervision::{LossKind, SupervisionConfig};
use crate::tracker::TrainingSnapshot;

pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Initializing,
    Running,
    Paused,
    Converged,
    MaxSteps,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Converged | Self::MaxSteps | Self::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Initializing => "initializing",
            Self::Running => "running",
            Self::Paused => "paused",
            Self::Converged => "converged",
            Self::MaxSteps => "max_steps",
            Self::Failed => "failed",
        }
    }
}

/// Step-level summary of the per-point gate decisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateChoice {
    L1,
    L2,
    Mixed,
    /// Every point had already converged.
    None,
}

impl GateChoice {
    pub fn summarize(kinds: impl IntoIterator<Item = LossKind>) -> Self {
        let (mut l1, mut l2) = (false, false);
        for k in kinds {
            match k {
                LossKind::L1 => l1 = true,
                LossKind::L2 => l2 = true,
            }
        }
        match (l1, l2) {
            (true, true) => Self::Mixed,
            (true, false) => Self::L1,
            (false, true) => Self::L2,
            (false, false) => Self::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStep {
    /// Handle position after this step's tracking.
    pub p: Point,
    /// Confidence from this step's tracking; `None` once frozen.
    pub s: Option<f64>,
    /// Gate decision for this step; `None` if the point was already frozen.
    pub gate: Option<LossKind>,
    /// Confidence that fed the gate (previous step's `s`).
    pub gate_s: Option<f64>,
    pub s1: Option<f64>,
    pub motion_loss: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub gate_choice: GateChoice,
    /// Total loss evaluated before the optimizer step.
    pub loss: f64,
    pub mask_loss: f64,
    pub points: Vec<PointStep>,
    /// Latent after the optimizer step.
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerTrace {
    pub point: usize,
    pub z: Vec<f64>,
    pub losses: Vec<f64>,
    pub snapshots: Vec<TrainingSnapshot>,
    /// Origin and size of the training patch: `[x0, y0, width, height]`.
    pub patch: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub record_version: u32,
    pub scenario: ScenarioFile,
    pub config: SupervisionConfig,
    pub trackers: Vec<TrackerTrace>,
    pub steps: Vec<StepRecord>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Handle trajectory of point `i`: `p0` then one position per step.
    pub fn trajectory(&self, i: usize) -> Vec<Point> {
        let mut out = vec![self.scenario.points[i].handle];
        out.extend(self.steps.iter().map(|s| s.points[i].p));
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub tracker_training_secs: Vec<f64>,
    pub step_secs: Vec<f64>,
}

impl RunTimings {
    pub fn training_total(&self) -> f64 {
        self.tracker_training_secs.iter().sum()
    }

    pub fn steps_total(&self) -> f64 {
        self.step_secs.iter().sum()
    }
}

/// Writes a little-endian f64 `.npy` array.
pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {dims}, }}");
    // magic (6) + version (2) + header length (2) + header, padded to 64 with a newline
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 8);
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
