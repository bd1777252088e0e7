//! Per-point ground annotations and the `.gsl` label file.
//!
//! Layout: 16-byte header (`"GSL1"`, u32 LE version = 1, u32 LE point
//! count, 4 reserved bytes), then one byte per point: 0 = non-ground,
//! 1 = ground, 255 = unlabeled.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};

const MAGIC: &[u8; 4] = b"GSL1";
const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    NonGround,
    Ground,
    Unlabeled,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        match self {
            Label::NonGround => 0,
            Label::Ground => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::NonGround),
            1 => Some(Label::Ground),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Export binarization: anything not explicitly ground is non-ground.
    pub fn is_ground(self) -> bool {
        self == Label::Ground
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointLabels {
    pub labels: Vec<Label>,
    pub frame_id: String,
}

impl PointLabels {
    pub fn unlabeled(n: usize, frame_id: impl Into<String>) -> Self {
        Self { labels: vec![Label::Unlabeled; n], frame_id: frame_id.into() }
    }

    pub fn from_binary(ground: &[bool], frame_id: impl Into<String>) -> Self {
        let labels = ground.iter().map(|&g| if g { Label::Ground } else { Label::NonGround }).collect();
        Self { labels, frame_id: frame_id.into() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn binarize(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_ground()).collect()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let n = self.labels.iter().filter(|&&l| l != Label::Unlabeled).count();
        n as f64 / self.labels.len() as f64
    }

    pub fn body_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.to_byte()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.labels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        out.extend(self.labels.iter().map(|l| l.to_byte()));
        out
    }

    pub fn from_bytes(bytes: &[u8], frame_id: impl Into<String>) -> Result<Self> {
        let bad = |reason: String| Error::Format(format!("label file: {reason}"));
        let mut r = Reader::new(bytes);
        if r.take(4) != Some(MAGIC.as_slice()) {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        r.take(4).ok_or_else(|| bad("truncated header".into()))?;
        let body = r.take(count).ok_or_else(|| bad(format!("expected {count} label bytes")))?;
        if r.remaining() != 0 {
            return Err(bad("trailing bytes".into()));
        }
        let labels = body
            .iter()
            .map(|&b| Label::from_byte(b).ok_or_else(|| bad(format!("invalid label byte {b}"))))
            .collect::<Result<_>>()?;
        Ok(Self { labels, frame_id: frame_id.into() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_bytes(&bytes, id)
    }

    /// Atomic save (temporary file + rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        write_atomic(path.as_ref(), |w: &mut dyn Write| w.write_all(&bytes))
    }
}
