//! Trial persistence.
//!
//! Each trial lives in its own directory holding an append-only event log
//! (`events.jsonl`) and a snapshot of the current resource (`snapshot.json`).
//! The log is authoritative: loading replays it through the design, checks
//! every recorded decision, and compares the result with the snapshot.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use keyboard::rng::{derive_seed, stream, ReplayDraws};
use keyboard::trial::{CohortOutcome, HistoryEntry, MtdSelection};
use keyboard::{Design, DoseCoord, TrialConfig, TrialState, TrialStatus};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::error::{ApiError, ApiResult};

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

/// Stream index reserved for the final selection draws.
const FINALIZE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalization {
    pub seed: u64,
    pub forced: bool,
    pub selection: MtdSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResource {
    pub id: String,
    pub revision: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub config: TrialConfig,
    pub state: TrialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalization: Option<Finalization>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub id: String,
    pub revision: u64,
    pub status: TrialStatus,
    pub current: DoseCoord,
    pub patients: u32,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl TrialResource {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            id: self.id.clone(),
            revision: self.revision,
            status: self.state.status,
            current: self.state.current,
            patients: self.state.patients(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TrialEvent {
    Created {
        id: String,
        config: TrialConfig,
        idempotency_key: Option<String>,
        at: DateTime<Utc>,
    },
    Cohort {
        dlts: u32,
        entry: HistoryEntry,
        at: DateTime<Utc>,
    },
    Finalized {
        forced: bool,
        seed: u64,
        selection: MtdSelection,
        at: DateTime<Utc>,
    },
}

/// Seed of the tie-break stream for the cohort at `index`.
fn cohort_seed(trial_seed: u64, index: usize) -> u64 {
    derive_seed(trial_seed, index as u64)
}

fn finalize_seed(trial_seed: u64) -> u64 {
    derive_seed(trial_seed, FINALIZE_STREAM)
}

/// Applies one event to a resource. `None` is the state before creation.
fn apply_event(resource: Option<TrialResource>, event: &TrialEvent) -> Result<TrialResource, String> {
    match (resource, event) {
        (
            None,
            TrialEvent::Created {
                id,
                config,
                idempotency_key,
                at,
            },
        ) => {
            let design = Design::new(config.clone()).map_err(|e| e.to_string())?;
            Ok(TrialResource {
                id: id.clone(),
                revision: 1,
                created_at: *at,
                updated_at: *at,
                config: config.clone(),
                state: design.start(),
                idempotency_key: idempotency_key.clone(),
                finalization: None,
            })
        }
        (Some(mut r), TrialEvent::Cohort { dlts, entry, at }) => {
            let design = Design::new(r.config.clone()).map_err(|e| e.to_string())?;
            let mut draws = ReplayDraws::new(&entry.draws);
            design
                .apply_cohort(&mut r.state, *dlts, &mut draws)
                .map_err(|e| e.to_string())?;
            if r.state.history.last() != Some(entry) {
                return Err(format!("cohort {} does not replay", r.state.history.len()));
            }
            r.revision += 1;
            r.updated_at = *at;
            Ok(r)
        }
        (
            Some(mut r),
            TrialEvent::Finalized {
                forced,
                seed,
                selection,
                at,
            },
        ) => {
            let design = Design::new(r.config.clone()).map_err(|e| e.to_string())?;
            if *forced && r.state.status == TrialStatus::Active {
                design.close_early(&mut r.state).map_err(|e| e.to_string())?;
            }
            let replayed = design
                .select_mtd(&r.state, &mut stream(*seed))
                .map_err(|e| e.to_string())?;
            if &replayed != selection {
                return Err("final selection does not replay".into());
            }
            r.finalization = Some(Finalization {
                seed: *seed,
                forced: *forced,
                selection: selection.clone(),
            });
            r.revision += 1;
            r.updated_at = *at;
            Ok(r)
        }
        (Some(_), TrialEvent::Created { .. }) => Err("duplicate creation event".into()),
        (None, _) => Err("log does not start with a creation event".into()),
    }
}

/// One trial: a writer lock serializing mutations and the current snapshot,
/// which readers clone without waiting on writers.
struct TrialSlot {
    writer: Mutex<()>,
    current: RwLock<Arc<TrialResource>>,
    dir: PathBuf,
}

impl TrialSlot {
    fn snapshot(&self) -> Arc<TrialResource> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn publish(&self, resource: TrialResource) -> Arc<TrialResource> {
        let arc = Arc::new(resource);
        *self.current.write().expect("snapshot lock") = arc.clone();
        arc
    }

    fn append(&self, event: &TrialEvent) -> ApiResult<()> {
        let path = self.dir.join(EVENTS_FILE);
        let mut line = serde_json::to_string(event).map_err(keyboard::KeyboardError::from)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ApiError::io(&path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| ApiError::io(&path, e))?;
        file.sync_data().map_err(|e| ApiError::io(&path, e))
    }

    fn write_snapshot(&self, resource: &TrialResource) -> ApiResult<()> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = serde_json::to_string_pretty(resource).map_err(keyboard::KeyboardError::from)?;
        let mut file = File::create(&tmp).map_err(|e| ApiError::io(&tmp, e))?;
        file.write_all(text.as_bytes()).map_err(|e| ApiError::io(&tmp, e))?;
        file.sync_data().map_err(|e| ApiError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| ApiError::io(&path, e))
    }

    /// Logs the event, applies it, and persists the new snapshot.
    fn commit(&self, current: &TrialResource, event: TrialEvent) -> ApiResult<Arc<TrialResource>> {
        let next = apply_event(Some(current.clone()), &event).map_err(|reason| ApiError::Corrupt {
            id: current.id.clone(),
            reason,
        })?;
        self.append(&event)?;
        self.write_snapshot(&next)?;
        Ok(self.publish(next))
    }
}

/// What recording a cohort produced.
#[derive(Debug, Clone)]
pub struct CohortCommit {
    pub outcome: CohortOutcome,
    pub trial: Arc<TrialResource>,
}

pub struct TrialStore {
    root: PathBuf,
    trials: RwLock<HashMap<String, Arc<TrialSlot>>>,
    /// Idempotency key to trial id. Also serializes trial creation.
    idempotency: Mutex<HashMap<String, String>>,
}

impl TrialStore {
    /// Opens (or creates) a store rooted at `root`, loading and verifying
    /// every trial found there.
    pub fn open(root: impl Into<PathBuf>) -> ApiResult<Self> {
        let root = root.into();
        let trials_dir = root.join("trials");
        fs::create_dir_all(&trials_dir).map_err(|e| ApiError::io(&trials_dir, e))?;
        let mut trials = HashMap::new();
        let mut keys = HashMap::new();
        for entry in fs::read_dir(&trials_dir).map_err(|e| ApiError::io(&trials_dir, e))? {
            let entry = entry.map_err(|e| ApiError::io(&trials_dir, e))?;
            if !entry.path().is_dir() {
                continue;
            }
            let slot = load_slot(&entry.path())?;
            let resource = slot.snapshot();
            if let Some(key) = &resource.idempotency_key {
                keys.insert(key.clone(), resource.id.clone());
            }
            trials.insert(resource.id.clone(), Arc::new(slot));
        }
        Ok(TrialStore {
            root,
            trials: RwLock::new(trials),
            idempotency: Mutex::new(keys),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<TrialSlot>> {
        self.trials
            .read()
            .expect("trial map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("trial {id}")))
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<TrialResource>> {
        Ok(self.slot(id)?.snapshot())
    }

    /// Summaries ordered by creation time, then id.
    pub fn list(&self) -> Vec<TrialSummary> {
        let mut out: Vec<TrialSummary> = self
            .trials
            .read()
            .expect("trial map lock")
            .values()
            .map(|s| s.snapshot().summary())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Creates a trial, or returns the one already created under the same
    /// idempotency key. The flag is true for a new trial.
    pub async fn create(
        &self,
        config: TrialConfig,
        idempotency_key: Option<String>,
    ) -> ApiResult<(Arc<TrialResource>, bool)> {
        let errors = config.validation_errors();
        if !errors.is_empty() {
            return Err(ApiError::from_config_errors(errors));
        }
        let mut keys = self.idempotency.lock().await;
        if let Some(key) = &idempotency_key {
            if let Some(id) = keys.get(key) {
                return Ok((self.get(id)?, false));
            }
        }

        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.root.join("trials").join(&id);
        fs::create_dir_all(&dir).map_err(|e| ApiError::io(&dir, e))?;
        let event = TrialEvent::Created {
            id: id.clone(),
            config,
            idempotency_key: idempotency_key.clone(),
            at: Utc::now(),
        };
        let resource = apply_event(None, &event).map_err(|reason| ApiError::Corrupt { id: id.clone(), reason })?;
        let slot = TrialSlot {
            writer: Mutex::new(()),
            current: RwLock::new(Arc::new(resource.clone())),
            dir,
        };
        slot.append(&event)?;
        slot.write_snapshot(&resource)?;
        let slot = Arc::new(slot);
        self.trials
            .write()
            .expect("trial map lock")
            .insert(id.clone(), slot.clone());
        if let Some(key) = idempotency_key {
            keys.insert(key, id);
        }
        Ok((slot.snapshot(), true))
    }

    /// Records a cohort's DLT count at the trial's current dose.
    pub async fn record_cohort(&self, id: &str, dlts: u32, expected_revision: u64) -> ApiResult<CohortCommit> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().await;
        let current = slot.snapshot();
        if current.revision != expected_revision {
            return Err(ApiError::RevisionConflict {
                expected: expected_revision,
                current: current.revision,
            });
        }
        if current.state.status.is_terminal() {
            return Err(ApiError::Terminal {
                status: current.state.status,
                revision: current.revision,
            });
        }
        let design = Design::new(current.config.clone())?;
        let mut state = current.state.clone();
        let mut rng = stream(cohort_seed(current.config.seed, state.history.len()));
        let outcome = design.apply_cohort(&mut state, dlts, &mut rng)?;
        let entry = state.history.last().expect("entry just pushed").clone();
        let trial = slot.commit(
            &current,
            TrialEvent::Cohort {
                dlts,
                entry,
                at: Utc::now(),
            },
        )?;
        Ok(CohortCommit { outcome, trial })
    }

    /// Runs the final MTD selection once; later calls return the stored one.
    pub async fn finalize(&self, id: &str, force: bool) -> ApiResult<Arc<TrialResource>> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().await;
        let current = slot.snapshot();
        if current.finalization.is_some() {
            return Ok(current);
        }
        if current.state.status == TrialStatus::Active && !force {
            return Err(ApiError::StillActive {
                revision: current.revision,
            });
        }
        let design = Design::new(current.config.clone())?;
        let mut state = current.state.clone();
        if state.status == TrialStatus::Active {
            design.close_early(&mut state)?;
        }
        let seed = finalize_seed(current.config.seed);
        let selection = design.select_mtd(&state, &mut stream(seed))?;
        slot.commit(
            &current,
            TrialEvent::Finalized {
                forced: force && current.state.status == TrialStatus::Active,
                seed,
                selection,
                at: Utc::now(),
            },
        )
    }
}

fn load_slot(dir: &Path) -> ApiResult<TrialSlot> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let corrupt = |reason: String| ApiError::Corrupt { id: id.clone(), reason };

    let events_path = dir.join(EVENTS_FILE);
    let file = File::open(&events_path).map_err(|e| ApiError::io(&events_path, e))?;
    let mut resource: Option<TrialResource> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ApiError::io(&events_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: TrialEvent = serde_json::from_str(&line).map_err(|e| corrupt(format!("event {}: {e}", i + 1)))?;
        resource = Some(apply_event(resource, &event).map_err(|r| corrupt(format!("event {}: {r}", i + 1)))?);
    }
    let resource = resource.ok_or_else(|| corrupt("empty event log".into()))?;

    let slot = TrialSlot {
        writer: Mutex::new(()),
        current: RwLock::new(Arc::new(resource.clone())),
        dir: dir.to_path_buf(),
    };
    let snapshot_path = dir.join(SNAPSHOT_FILE);
    match fs::read_to_string(&snapshot_path) {
        Ok(text) => {
            let snapshot: TrialResource = serde_json::from_str(&text).map_err(|e| corrupt(format!("snapshot: {e}")))?;
            if snapshot == resource {
                return Ok(slot);
            }
            // A crash between appending an event and replacing the snapshot
            // leaves the snapshot exactly one revision behind.
            if snapshot.revision + 1 != resource.revision {
                return Err(corrupt(format!(
                    "snapshot at revision {} but log replays to {}",
                    snapshot.revision, resource.revision
                )));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(ApiError::io(&snapshot_path, e)),
    }
    slot.write_snapshot(&resource)?;
    Ok(slot)
}
