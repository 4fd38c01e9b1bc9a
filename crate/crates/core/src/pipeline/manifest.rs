use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::StatsSnapshot;
use crate::refine::IterationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: EventStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space_version: Option<u64>,
    /// Gateway counters accumulated during the stage.
    pub calls: StatsSnapshot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationRecord>,
}

/// Append-only record of the stages executed in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    /// Run configuration (TOML) the directory was created with.
    pub config: String,
    pub events: Vec<StageEvent>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn open_or_create(dir: &Path, run_id: &str, config: &str) -> Result<Self> {
        let path = Self::path(dir);
        if path.exists() {
            let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: Manifest = serde_json::from_str(&body)?;
            if m.run_id != run_id {
                return Err(Error::Config(format!(
                    "run directory belongs to run {}, not {run_id}",
                    m.run_id
                )));
            }
            return Ok(m);
        }
        Ok(Manifest {
            run_id: run_id.to_string(),
            created_at: Utc::now(),
            config: config.to_string(),
            events: vec![],
        })
    }

    pub fn append(&mut self, dir: &Path, event: StageEvent) -> Result<()> {
        self.events.push(event);
        crate::write_atomic(
            &Self::path(dir),
            (serde_json::to_string_pretty(self)? + "\n").as_bytes(),
        )
    }

    pub fn last_ok(&self, stage: &str) -> Option<&StageEvent> {
        self.events
            .iter()
            .rev()
            .find(|e| e.stage == stage && e.status == EventStatus::Ok)
    }
}
