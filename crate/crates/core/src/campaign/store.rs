//! On-disk campaign store.
//!
//! ```text
//! <root>/<campaign>/campaign.json        versioned campaign state
//! <root>/<campaign>/observations.jsonl   append-only, one record per line
//! <root>/<campaign>/snapshots/<sha256>.json
//! ```
//!
//! Writers for one campaign are serialized inside the process; a store
//! directory is meant to have a single owning process.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::IngestedRow;
use super::state::{validate_id, Campaign, ObservationRecord};
use crate::error::{Error, Result};
use crate::strength::StrengthModel;

pub const STORE_VERSION: u32 = 1;

const CAMPAIGN_FILE: &str = "campaign.json";
const OBSERVATIONS_FILE: &str = "observations.jsonl";
const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Serialize)]
struct CampaignFileOut<'a> {
    version: u32,
    #[serde(flatten)]
    campaign: &'a Campaign,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

#[derive(Deserialize)]
struct CampaignFileIn {
    #[serde(rename = "version")]
    _version: u32,
    #[serde(flatten)]
    campaign: Campaign,
}

/// Canonical snapshot bytes and their SHA-256 hex digest.
pub fn encode_snapshot(model: &StrengthModel) -> Result<(String, Vec<u8>)> {
    let bytes = serde_json::to_vec(model)?;
    Ok((sha256_hex(&bytes), bytes))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn lock_for(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    map.entry(dir.to_path_buf()).or_default().clone()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = path.with_extension(format!("{}.{n}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf> {
        validate_id(id)?;
        Ok(self.root.join(id))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).is_ok_and(|d| d.join(CAMPAIGN_FILE).is_file())
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if self.exists(&name) {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Creates a new campaign; fails if the id is taken.
    pub fn create(&self, campaign: &Campaign) -> Result<()> {
        campaign.validate()?;
        let dir = self.dir(&campaign.id)?;
        let lock = lock_for(&dir);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        if dir.join(CAMPAIGN_FILE).exists() {
            return Err(Error::Validation(format!("campaign '{}' already exists", campaign.id)));
        }
        fs::create_dir_all(dir.join(SNAPSHOT_DIR)).map_err(|e| Error::io(&dir, e))?;
        self.write_unlocked(&dir, campaign)
    }

    /// Writes campaign state. Observations already on disk must be a prefix
    /// of `campaign.observations`; only the new tail is appended.
    pub fn save(&self, campaign: &Campaign) -> Result<()> {
        let dir = self.dir(&campaign.id)?;
        let lock = lock_for(&dir);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        if !dir.join(CAMPAIGN_FILE).exists() {
            return Err(Error::NotFound(campaign.id.clone()));
        }
        self.write_unlocked(&dir, campaign)
    }

    fn write_unlocked(&self, dir: &Path, campaign: &Campaign) -> Result<()> {
        for s in &campaign.snapshots {
            if !dir.join(SNAPSHOT_DIR).join(format!("{}.json", s.digest)).is_file() {
                return Err(Error::Integrity {
                    digest: s.digest.clone(),
                    message: "snapshot must be saved before the campaign references it".into(),
                });
            }
        }
        let (on_disk, complete_len) = read_log(&dir.join(OBSERVATIONS_FILE))?;
        if on_disk.len() > campaign.observations.len() || on_disk[..] != campaign.observations[..on_disk.len()] {
            return Err(Error::Validation(
                "observation log is append-only; in-memory campaign diverges from disk".into(),
            ));
        }
        append_observations(
            &dir.join(OBSERVATIONS_FILE),
            complete_len,
            &campaign.observations[on_disk.len()..],
        )?;
        let bytes = serde_json::to_vec_pretty(&CampaignFileOut {
            version: STORE_VERSION,
            campaign,
        })?;
        write_atomic(&dir.join(CAMPAIGN_FILE), &bytes)
    }

    fn read_campaign_file(&self, dir: &Path, id: &str) -> Result<Campaign> {
        let path = dir.join(CAMPAIGN_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(id.to_string())),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let probe: VersionProbe = serde_json::from_str(&text)?;
        let found = probe.version.unwrap_or(0);
        if found != STORE_VERSION {
            return Err(Error::Migration {
                found,
                expected: STORE_VERSION,
            });
        }
        let file: CampaignFileIn = serde_json::from_str(&text)?;
        Ok(file.campaign)
    }

    /// Loads a campaign and verifies every referenced snapshot.
    pub fn load(&self, id: &str) -> Result<Campaign> {
        let dir = self.dir(id)?;
        let mut campaign = self.read_campaign_file(&dir, id)?;
        campaign.observations = read_observations(&dir.join(OBSERVATIONS_FILE))?;
        for s in &campaign.snapshots {
            self.verify_snapshot(&dir, &s.digest)?;
        }
        Ok(campaign)
    }

    /// The observation log alone; readable even when snapshots are damaged.
    pub fn load_observations(&self, id: &str) -> Result<Vec<ObservationRecord>> {
        let dir = self.dir(id)?;
        if !dir.join(CAMPAIGN_FILE).exists() {
            return Err(Error::NotFound(id.to_string()));
        }
        read_observations(&dir.join(OBSERVATIONS_FILE))
    }

    /// Appends ingested rows under the campaign lock and persists.
    pub fn append(&self, id: &str, rows: &[IngestedRow]) -> Result<Vec<ObservationRecord>> {
        let dir = self.dir(id)?;
        let lock = lock_for(&dir);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut campaign = self.read_campaign_file(&dir, id)?;
        campaign.observations = read_observations(&dir.join(OBSERVATIONS_FILE))?;
        let added = campaign.add_observations(rows, Utc::now());
        self.write_unlocked(&dir, &campaign)?;
        Ok(added)
    }

    /// Runs `f` on the freshly loaded campaign under its lock and persists
    /// the result, so concurrent updates cannot interleave.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut Campaign, &Store) -> Result<T>) -> Result<T> {
        let dir = self.dir(id)?;
        let lock = lock_for(&dir);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut campaign = self.read_campaign_file(&dir, id)?;
        campaign.observations = read_observations(&dir.join(OBSERVATIONS_FILE))?;
        let out = f(&mut campaign, self)?;
        self.write_unlocked(&dir, &campaign)?;
        Ok(out)
    }

    pub fn save_snapshot(&self, id: &str, model: &StrengthModel) -> Result<String> {
        let dir = self.dir(id)?.join(SNAPSHOT_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (digest, bytes) = encode_snapshot(model)?;
        let path = dir.join(format!("{digest}.json"));
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        Ok(digest)
    }

    fn verify_snapshot(&self, dir: &Path, digest: &str) -> Result<Vec<u8>> {
        let path = dir.join(SNAPSHOT_DIR).join(format!("{digest}.json"));
        let bytes = fs::read(&path).map_err(|e| Error::Integrity {
            digest: digest.to_string(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        if sha256_hex(&bytes) != digest {
            return Err(Error::Integrity {
                digest: digest.to_string(),
                message: "file content does not match its digest".into(),
            });
        }
        Ok(bytes)
    }

    pub fn load_snapshot(&self, id: &str, digest: &str) -> Result<StrengthModel> {
        let dir = self.dir(id)?;
        let bytes = self.verify_snapshot(&dir, digest)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
            digest: digest.to_string(),
            message: e.to_string(),
        })
    }
}

/// Parses the log. A trailing line without its newline is an append in
/// progress (or an interrupted one) and is ignored.
fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    Ok(read_log(path)?.0)
}

fn read_log(path: &Path) -> Result<(Vec<ObservationRecord>, u64)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut out = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: ObservationRecord = serde_json::from_slice(line).map_err(|e| Error::Row {
            line: i as u64 + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        if rec.seq != out.len() as u64 {
            return Err(Error::Row {
                line: i as u64 + 1,
                message: format!("observation seq {} out of order (expected {})", rec.seq, out.len()),
            });
        }
        out.push(rec);
    }
    Ok((out, complete as u64))
}

fn append_observations(path: &Path, complete_len: u64, records: &[ObservationRecord]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    // drop the remains of an interrupted append
    if f.metadata().map_err(|e| Error::io(path, e))?.len() != complete_len {
        f.set_len(complete_len).map_err(|e| Error::io(path, e))?;
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::Constraints;
    use crate::objectives::GwpTable;
    use crate::strength::{IngredientId, Mixture, StrengthObservation};

    fn campaign(id: &str) -> Campaign {
        let c = Constraints::default()
            .with_bound(IngredientId::Cement, 100.0, 400.0)
            .with_bound(IngredientId::Water, 120.0, 200.0);
        let t = GwpTable::new("t", IngredientId::ALL.map(|i| (i, 0.1))).unwrap();
        Campaign::new(id, c, t).unwrap()
    }

    fn row(c: f64, s: f64) -> IngestedRow {
        let m = Mixture::from_pairs([(IngredientId::Cement, c), (IngredientId::Water, 150.0)]).unwrap();
        IngestedRow {
            line: 2,
            observation: StrengthObservation::measured(m, 28.0, s).unwrap(),
            batch: Some("b1".into()),
        }
    }

    #[test]
    fn round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(&campaign("c1")).unwrap();
        assert!(store.create(&campaign("c1")).is_err());
        store.append("c1", &[row(300.0, 40.0), row(200.0, 30.0)]).unwrap();
        let c = store.load("c1").unwrap();
        assert_eq!(c.observations.len(), 2);
        assert_eq!(c.batches[0].mixtures.len(), 2);
        store.save(&c).unwrap();
        assert_eq!(store.load("c1").unwrap(), c);
        assert_eq!(store.list().unwrap(), vec!["c1".to_string()]);
    }

    #[test]
    fn rejects_bad_ids_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.load("../x"), Err(Error::Validation(_))));
        assert!(matches!(store.load("nope"), Err(Error::NotFound(_))));
        store.create(&campaign("c1")).unwrap();
        let path = dir.path().join("c1").join(CAMPAIGN_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(store.load("c1"), Err(Error::Migration { found: 99, .. })));
    }

    #[test]
    fn diverging_log_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(&campaign("c1")).unwrap();
        store.append("c1", &[row(300.0, 40.0)]).unwrap();
        let mut c = store.load("c1").unwrap();
        c.observations.clear();
        assert!(store.save(&c).is_err());
    }

    #[test]
    fn partial_trailing_line_is_ignored_then_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create(&campaign("c1")).unwrap();
        store.append("c1", &[row(300.0, 40.0)]).unwrap();
        let log = dir.path().join("c1").join(OBSERVATIONS_FILE);
        let mut f = fs::OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"seq\":1,").unwrap();
        assert_eq!(store.load_observations("c1").unwrap().len(), 1);
        store.append("c1", &[row(200.0, 30.0)]).unwrap();
        let obs = store.load_observations("c1").unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1].seq, 1);
    }
}
