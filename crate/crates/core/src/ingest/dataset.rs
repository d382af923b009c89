//! Dataset manifests, split assignment and task-specific episode selection.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_episode, EmbeddingTable, Episode, Task};
use crate::error::{Error, Result};
use crate::ingest::embeddings::read_embeddings;
use crate::ingest::episode_io::{read_episode, IngestOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    /// Paths relative to the dataset root.
    pub timeseries: String,
    pub notes: String,
    pub labels: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub feature_names: Vec<String>,
    pub normal_values: Vec<f64>,
    pub embeddings: String,
    #[serde(default)]
    pub signal_plan: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub episodes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Patient ids must be unique so no episode can sit in two splits.
    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.episodes {
            if !seen.insert(&e.patient_id) {
                return Err(Error::Validation(format!(
                    "patient `{}` listed more than once",
                    e.patient_id
                )));
            }
        }
        if self.normal_values.len() != self.feature_names.len() {
            return Err(Error::Validation(format!(
                "{} normal values for {} features",
                self.normal_values.len(),
                self.feature_names.len()
            )));
        }
        Ok(())
    }
}

/// Seeded partition: `test_fraction` of all ids go to test, then
/// `val_fraction` of the remainder to validation. Ids are sorted first so the
/// result does not depend on input order.
pub fn assign_splits(ids: &[String], test_fraction: f64, val_fraction: f64, seed: u64) -> BTreeMap<String, Split> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n = sorted.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = ((n - n_test) as f64 * val_fraction).round() as usize;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (id.clone(), split)
        })
        .collect()
}

/// All episodes of a dataset, sorted by patient id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub table: EmbeddingTable,
    pub episodes: Vec<(Episode, Split)>,
}

/// Episodes dropped for a task, with reasons.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exclusions {
    pub reasons: Vec<(String, String)>,
}

impl Exclusions {
    pub fn count(&self) -> usize {
        self.reasons.len()
    }
}

impl Dataset {
    pub fn load(root: &Path, max_note_tokens: usize) -> Result<Self> {
        let manifest = DatasetManifest::read(root)?;
        let table = read_embeddings(&root.join(&manifest.embeddings))?;
        let opts = IngestOptions {
            max_note_tokens,
            normal_values: manifest.normal_values.clone(),
        };
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for entry in &manifest.episodes {
            let ep = read_episode(
                &entry.patient_id,
                &root.join(&entry.timeseries),
                &root.join(&entry.notes),
                &root.join(&entry.labels),
                &table,
                &opts,
            )?;
            if ep.feature_dim() != manifest.feature_names.len() {
                return Err(Error::Validation(format!(
                    "{}: {} features, manifest lists {}",
                    entry.patient_id,
                    ep.feature_dim(),
                    manifest.feature_names.len()
                )));
            }
            episodes.push((ep, entry.split));
        }
        episodes.sort_by(|a, b| a.0.patient_id.cmp(&b.0.patient_id));
        info!("loaded {} episodes from {}", episodes.len(), root.display());
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            table,
            episodes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_names.len()
    }

    /// Episodes of `split` admissible for `task`; the rest are reported.
    pub fn select(&self, task: Task, split: Split) -> (Vec<&Episode>, Exclusions) {
        let mut kept = Vec::new();
        let mut excluded = Exclusions::default();
        for (ep, s) in &self.episodes {
            if *s != split {
                continue;
            }
            let v = validate_episode(ep, task);
            if v.is_empty() {
                kept.push(ep);
            } else {
                let msg = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                excluded.reasons.push((ep.patient_id.clone(), msg));
            }
        }
        if excluded.count() > 0 {
            warn!(
                "{task}/{split}: kept {}, excluded {} episodes",
                kept.len(),
                excluded.count()
            );
        }
        (kept, excluded)
    }
}
