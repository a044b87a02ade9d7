use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::runner::RunRecord;
use super::{ExperimentConfig, ExperimentError};

pub const LAYOUT: [&str; 5] = ["runs", "designs", "models", "grids", "diagnostics"];

/// A JSON artifact tagged with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub sim_hash: String,
    pub data: T,
}

pub fn stamp_csv(config_hash: &str, body: &str) -> String {
    format!("# config_hash={config_hash}\n{body}")
}

/// Splits the hash line off a stamped CSV; unstamped text passes through.
pub fn read_stamped_csv(text: &str) -> (Option<&str>, &str) {
    match text.strip_prefix("# config_hash=") {
        Some(rest) => {
            let (hash, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (Some(hash.trim()), body)
        }
        None => (None, text),
    }
}

/// Experiment directory with `runs/`, `designs/`, `models/`, `grids/` and
/// `diagnostics/`. Writes go through one lock and land atomically.
pub struct Store {
    root: PathBuf,
    config_hash: String,
    sim_hash: String,
    writer: Mutex<()>,
}

impl Store {
    pub fn open(root: &Path, config: &ExperimentConfig) -> Result<Store, ExperimentError> {
        for d in LAYOUT {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| ExperimentError::io(&p, e))?;
        }
        let store = Store { root: root.to_path_buf(), config_hash: config.hash(), sim_hash: config.sim_hash(), writer: Mutex::new(()) };
        // output and jobs do not shape the artifacts and are left out
        let canonical = ExperimentConfig { output: PathBuf::new(), jobs: 0, ..config.clone() };
        store.write(
            "config.toml",
            format!("# config_hash = \"{}\"\n{}", store.config_hash, canonical.to_toml()).as_bytes(),
        )?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn sim_hash(&self) -> &str {
        &self.sim_hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        let path = self.path(rel);
        let tmp = path.with_extension(format!(
            "{}.tmp",
            path.extension().and_then(|e| e.to_str()).unwrap_or("")
        ));
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        fs::write(&tmp, bytes).map_err(|e| ExperimentError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| ExperimentError::io(&path, e))
    }

    pub fn read(&self, rel: &str) -> Result<Option<String>, ExperimentError> {
        let path = self.path(rel);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ExperimentError::io(&path, e)),
        }
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, data: &T) -> Result<(), ExperimentError> {
        let s = Stamped { config_hash: self.config_hash.clone(), sim_hash: self.sim_hash.clone(), data };
        let text = serde_json::to_string_pretty(&s).map_err(|e| ExperimentError::Numeric(e.to_string()))?;
        self.write(rel, text.as_bytes())
    }

    /// Reads a stamped JSON artifact; artifacts from a different simulation
    /// setup are rejected.
    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<Option<Stamped<T>>, ExperimentError> {
        match self.read(rel)? {
            None => Ok(None),
            Some(text) => self.parse_stamped(&self.path(rel), &text).map(Some),
        }
    }

    pub fn parse_stamped<T: DeserializeOwned>(&self, path: &Path, text: &str) -> Result<Stamped<T>, ExperimentError> {
        let s: Stamped<T> = serde_json::from_str(text).map_err(|e| ExperimentError::io(path, e))?;
        if s.sim_hash != self.sim_hash {
            return Err(ExperimentError::Config(format!(
                "{} was written under a different configuration",
                path.display()
            )));
        }
        Ok(s)
    }

    pub fn write_csv(&self, rel: &str, body: &str) -> Result<(), ExperimentError> {
        self.write(rel, stamp_csv(&self.config_hash, body).as_bytes())
    }

    pub fn run_rel(id: &str) -> String {
        format!("runs/{id}.json")
    }

    /// Persisted record of a run, if any.
    pub fn load_run(&self, id: &str) -> Result<Option<RunRecord>, ExperimentError> {
        let rel = Self::run_rel(id);
        let Some(text) = self.read(&rel)? else { return Ok(None) };
        let r: RunRecord = serde_json::from_str(&text).map_err(|e| ExperimentError::io(&self.path(&rel), e))?;
        if r.sim_hash != self.sim_hash {
            return Err(ExperimentError::Config(format!(
                "run record {id} belongs to a different configuration"
            )));
        }
        Ok(Some(r))
    }

    pub fn save_run(&self, record: &RunRecord) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(record).map_err(|e| ExperimentError::Numeric(e.to_string()))?;
        self.write(&Self::run_rel(&record.run_id), text.as_bytes())
    }

    /// Every run record under `runs/`, sorted by id.
    pub fn all_runs(&self) -> Result<Vec<RunRecord>, ExperimentError> {
        let dir = self.path("runs");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| ExperimentError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(String::from))
            .collect();
        ids.sort();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(r) = self.load_run(&id)? {
                out.push(r);
            }
        }
        Ok(out)
    }
}
