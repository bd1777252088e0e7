//! Train/eval split manifests.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_root: PathBuf,
    pub split_seed: u64,
    /// Fraction of frames assigned to training.
    pub split_ratio: f64,
    pub frames: Vec<FrameEntry>,
}

pub const DEFAULT_SPLIT_RATIO: f64 = 0.7;

impl RunManifest {
    /// Split is a pure function of the sorted frame ids, the seed and the ratio.
    pub fn new(dataset_root: impl Into<PathBuf>, frame_ids: &[String], split_seed: u64, split_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&split_ratio) {
            return Err(Error::Config(format!("split ratio {split_ratio} outside [0, 1]")));
        }
        let mut ids = frame_ids.to_vec();
        ids.sort();
        ids.dedup();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let n_train = (ids.len() as f64 * split_ratio).round() as usize;
        let mut split = vec![Split::Eval; ids.len()];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        let frames = ids.into_iter().zip(split).map(|(id, split)| FrameEntry { id, split }).collect();
        Ok(Self { dataset_root: dataset_root.into(), split_seed, split_ratio, frames })
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.frames.iter().filter(|f| f.split == split).map(|f| f.id.as_str()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
