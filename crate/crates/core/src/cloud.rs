//! LiDAR frames in memory and on disk.
//!
//! Internal axes are `forward`/`left`/`up` with the origin at the sensor.
//! KITTI velodyne files store `(x, y, z, intensity)` in a z-up frame, which
//! maps directly onto `(forward, left, up, intensity)`.

use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_NUM_RINGS: usize = 64;

/// Azimuth jump (degrees) between consecutive returns that marks the start
/// of the next ring.
pub const WRAP_THRESHOLD_DEG: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub forward: f64,
    pub left: f64,
    pub up: f64,
    pub intensity: f64,
    pub ring: Option<u16>,
}

impl Point {
    pub fn new(forward: f64, left: f64, up: f64, intensity: f64) -> Self {
        Self { forward, left, up, intensity: intensity.clamp(0.0, 1.0), ring: None }
    }

    pub fn with_ring(mut self, ring: u16) -> Self {
        self.ring = Some(ring);
        self
    }

    /// Horizontal angle in degrees, in `(-180, 180]`. `None` on the sensor axis.
    pub fn azimuth_deg(&self) -> Option<f64> {
        if self.forward == 0.0 && self.left == 0.0 {
            None
        } else {
            Some(self.left.atan2(self.forward).to_degrees())
        }
    }

    fn is_finite(&self) -> bool {
        self.forward.is_finite()
            && self.left.is_finite()
            && self.up.is_finite()
            && self.intensity.is_finite()
    }
}

/// Euclidean norm of the horizontal coordinates (the depth channel).
pub fn horizontal_range(p: &Point) -> f64 {
    p.forward.hypot(p.left)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// Acquisition order, as read from the source.
    pub points: Vec<Point>,
    pub num_rings: usize,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, num_rings: usize, frame_id: impl Into<String>) -> Self {
        Self { points, num_rings, frame_id: frame_id.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Serialize as XYZIR records. Unassigned rings are written as `-1`.
    pub fn to_xyzir_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * Layout::Xyzir.stride());
        for p in &self.points {
            for v in [p.forward, p.left, p.up, p.intensity] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            let ring = p.ring.map_or(-1.0f32, |r| r as f32);
            out.extend_from_slice(&ring.to_le_bytes());
        }
        out
    }

    /// Serialize as plain KITTI XYZI records (rings are dropped).
    pub fn to_xyzi_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * Layout::Xyzi.stride());
        for p in &self.points {
            for v in [p.forward, p.left, p.up, p.intensity] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// 4 × f32: x, y, z, intensity.
    Xyzi,
    /// 5 × f32: x, y, z, intensity, ring.
    Xyzir,
}

impl Layout {
    pub fn stride(self) -> usize {
        match self {
            Layout::Xyzi => 16,
            Layout::Xyzir => 20,
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyzi" => Ok(Layout::Xyzi),
            "xyzir" => Ok(Layout::Xyzir),
            other => Err(Error::Config(format!("unknown point layout `{other}`"))),
        }
    }
}

/// Result of decoding a raw buffer.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub points: Vec<Point>,
    /// Records dropped because a coordinate was NaN or infinite.
    pub dropped_non_finite: usize,
}

/// Decode raw little-endian records. `origin` only labels error messages.
pub fn decode_points(bytes: &[u8], layout: Layout, num_rings: usize, origin: &Path) -> Result<Decoded> {
    let stride = layout.stride();
    if !bytes.len().is_multiple_of(stride) {
        return Err(Error::Malformed {
            path: origin.to_path_buf(),
            reason: format!("{} bytes is not a multiple of the {stride}-byte record", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / stride);
    let mut dropped = 0;
    for (i, rec) in bytes.chunks_exact(stride).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let mut p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            dropped += 1;
            continue;
        }
        if layout == Layout::Xyzir {
            let raw = f(4);
            if raw.is_finite() && raw >= 0.0 {
                let ring = raw.trunc() as usize;
                if ring >= num_rings {
                    return Err(Error::Malformed {
                        path: origin.to_path_buf(),
                        reason: format!("record {i}: ring {ring} exceeds {num_rings} rings"),
                    });
                }
                p.ring = Some(ring as u16);
            }
        }
        points.push(p);
    }
    Ok(Decoded { points, dropped_non_finite: dropped })
}

/// Load a KITTI-style `.bin` frame with the default 64 rings.
pub fn load_kitti_bin(path: impl AsRef<Path>, layout: Layout) -> Result<PointCloud> {
    load_kitti_bin_with(path, layout, DEFAULT_NUM_RINGS)
}

pub fn load_kitti_bin_with(path: impl AsRef<Path>, layout: Layout, num_rings: usize) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = decode_points(&bytes, layout, num_rings, path)?;
    if decoded.dropped_non_finite > 0 {
        log::warn!("{}: dropped {} non-finite points", path.display(), decoded.dropped_non_finite);
    }
    let frame_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(PointCloud::new(decoded.points, num_rings, frame_id))
}

/// Assign ring indices by counting azimuth wraps in acquisition order.
///
/// Points that already carry a ring keep it. Points on the sensor axis do
/// not take part in wrap detection and inherit the current ring.
pub fn derive_rings(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.points.iter().all(|p| p.ring.is_some()) {
        return Ok(cloud.clone());
    }
    let mut out = cloud.clone();
    let mut ring = 0usize;
    let mut prev_az: Option<f64> = None;
    for p in out.points.iter_mut() {
        if let Some(az) = p.azimuth_deg() {
            if let Some(prev) = prev_az {
                if (az - prev).abs() > WRAP_THRESHOLD_DEG {
                    ring += 1;
                }
            }
            prev_az = Some(az);
        }
        if p.ring.is_none() {
            if ring >= cloud.num_rings {
                return Err(Error::RingOverflow { wraps: ring, num_rings: cloud.num_rings });
            }
            p.ring = Some(ring as u16);
        }
    }
    Ok(out)
}
