//! Background simulation jobs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use keyboard::sim::{export_results, run_study, SimSpec, StudyMetrics, StudyReport, REPORT_FILE, SUMMARY_FILE};
use serde::Serialize;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: String,
    pub status: JobStatus,
    pub submitted_at: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub spec: SimSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<StudyMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct JobRegistry {
    root: PathBuf,
    jobs: RwLock<HashMap<String, JobView>>,
}

impl JobRegistry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        JobRegistry {
            root: root.into(),
            jobs: RwLock::new(HashMap::new()),
        }
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join("simulations").join(id)
    }

    /// Validates the spec and starts the study on the blocking pool.
    pub fn submit(self: &Arc<Self>, spec: SimSpec) -> ApiResult<JobView> {
        let errors = spec.validation_errors();
        if !errors.is_empty() {
            return Err(ApiError::from_config_errors(errors));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let view = JobView {
            id: id.clone(),
            status: JobStatus::Running,
            submitted_at: Utc::now(),
            finished_at: None,
            spec: spec.clone(),
            metrics: None,
            error: None,
        };
        self.jobs.write().expect("job lock").insert(id.clone(), view.clone());

        let registry = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let dir = registry.dir(&id);
            let result = run_study(&spec).and_then(|report| {
                export_results(&report, &dir)?;
                Ok(report.metrics)
            });
            let mut jobs = registry.jobs.write().expect("job lock");
            if let Some(job) = jobs.get_mut(&id) {
                job.finished_at = Some(Utc::now());
                match result {
                    Ok(metrics) => {
                        job.status = JobStatus::Completed;
                        job.metrics = Some(metrics);
                    }
                    Err(e) => {
                        job.status = JobStatus::Failed;
                        job.error = Some(e.to_string());
                    }
                }
            }
        });
        Ok(view)
    }

    /// Looks the job up in memory, falling back to results exported by an
    /// earlier process.
    pub fn get(&self, id: &str) -> ApiResult<JobView> {
        if let Some(job) = self.jobs.read().expect("job lock").get(id) {
            return Ok(job.clone());
        }
        let path = self.dir(id).join(REPORT_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ApiError::NotFound(format!("simulation {id}")))
            }
            Err(e) => return Err(ApiError::io(path, e)),
        };
        let report = StudyReport::from_json(&text)?;
        let finished_at = std::fs::metadata(&path)
            .and_then(|m| m.modified())
            .ok()
            .map(DateTime::<Utc>::from);
        Ok(JobView {
            id: id.to_string(),
            status: JobStatus::Completed,
            submitted_at: finished_at.unwrap_or_else(Utc::now),
            finished_at,
            spec: report.spec,
            metrics: Some(report.metrics),
            error: None,
        })
    }

    pub fn summary_csv(&self, id: &str) -> ApiResult<String> {
        let job = self.get(id)?;
        if job.status != JobStatus::Completed {
            return Err(ApiError::NotFound(format!("summary for simulation {id}")));
        }
        let path = self.dir(id).join(SUMMARY_FILE);
        std::fs::read_to_string(&path).map_err(|e| ApiError::io(path, e))
    }
}
