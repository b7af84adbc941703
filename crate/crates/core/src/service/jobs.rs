use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::ApiError;
use crate::campaign::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, Self::Done | Self::Failed | Self::Cancelled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub campaign: String,
    pub q: usize,
    pub seed: u64,
    pub status: JobStatus,
    /// Every status the job has been in, oldest first.
    pub history: Vec<JobStatus>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<Batch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Proposal jobs: at most one unfinished job per campaign, finished jobs
/// written to `<store>/.jobs/<id>.json`.
pub(crate) struct JobRegistry {
    dir: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
    active: Mutex<HashMap<String, String>>,
    cancelled: Mutex<HashSet<String>>,
    committing: Mutex<HashSet<String>>,
    pub(crate) slots: tokio::sync::Semaphore,
    counter: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl JobRegistry {
    pub(crate) fn new(dir: PathBuf, slots: usize) -> Self {
        Self {
            dir,
            jobs: Mutex::new(HashMap::new()),
            active: Mutex::new(HashMap::new()),
            cancelled: Mutex::new(HashSet::new()),
            committing: Mutex::new(HashSet::new()),
            slots: tokio::sync::Semaphore::new(slots.max(1)),
            counter: AtomicU64::new(0),
        }
    }

    /// Registers a pending job, or returns the id of the campaign's
    /// unfinished one.
    pub(crate) fn start(&self, campaign: &str, q: usize, seed: u64) -> Result<Job, String> {
        let mut active = lock(&self.active);
        if let Some(existing) = active.get(campaign) {
            return Err(existing.clone());
        }
        let now = Utc::now();
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let job = Job {
            id: format!("job-{}-{n}", now.timestamp_millis()),
            campaign: campaign.to_string(),
            q,
            seed,
            status: JobStatus::Pending,
            history: vec![JobStatus::Pending],
            created_at: now,
            updated_at: now,
            batch: None,
            error: None,
        };
        active.insert(campaign.to_string(), job.id.clone());
        lock(&self.jobs).insert(job.id.clone(), job.clone());
        Ok(job)
    }

    pub(crate) fn set_status(&self, id: &str, status: JobStatus) {
        if let Some(job) = lock(&self.jobs).get_mut(id) {
            if job.status != status {
                job.status = status;
                job.history.push(status);
                job.updated_at = Utc::now();
            }
        }
    }

    pub(crate) fn finish(&self, id: &str, status: JobStatus, batch: Option<Batch>, error: Option<ApiError>) {
        let job = {
            let mut jobs = lock(&self.jobs);
            let Some(job) = jobs.get_mut(id) else { return };
            job.status = status;
            job.history.push(status);
            job.updated_at = Utc::now();
            job.batch = batch;
            job.error = error;
            job.clone()
        };
        if let Err(e) = self.persist(&job) {
            tracing::error!(job = %job.id, error = %e, "could not persist job result");
        }
        lock(&self.active).remove(&job.campaign);
        lock(&self.cancelled).remove(id);
    }

    fn persist(&self, job: &Job) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let bytes = serde_json::to_vec_pretty(job).map_err(std::io::Error::other)?;
        let tmp = self.dir.join(format!("{}.json.tmp", job.id));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, self.dir.join(format!("{}.json", job.id)))
    }

    pub(crate) fn get(&self, id: &str) -> Option<Job> {
        if let Some(j) = lock(&self.jobs).get(id) {
            return Some(j.clone());
        }
        if !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return None;
        }
        let bytes = std::fs::read(self.dir.join(format!("{id}.json"))).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Requests cancellation; takes effect before the job commits.
    pub(crate) fn cancel(&self, id: &str) -> Option<Job> {
        let job = self.get(id)?;
        if !job.status.is_finished() {
            lock(&self.cancelled).insert(id.to_string());
        }
        Some(job)
    }

    pub(crate) fn is_cancelled(&self, id: &str) -> bool {
        lock(&self.cancelled).contains(id)
    }

    pub(crate) fn set_committing(&self, campaign: &str, on: bool) {
        let mut c = lock(&self.committing);
        if on {
            c.insert(campaign.to_string());
        } else {
            c.remove(campaign);
        }
    }

    pub(crate) fn is_committing(&self, campaign: &str) -> bool {
        lock(&self.committing).contains(campaign)
    }
}
