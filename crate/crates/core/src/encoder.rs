//! Sparse-to-dense polar encoding.
//!
//! Points are grouped into polar bins keyed by `(ring, azimuth column)`.
//! Each occupied bin becomes one cell of a three-channel matrix holding the
//! mean height, mean horizontal range and mean intensity of its points.
//! Empty cells are then filled by linear interpolation (along the ring
//! first, across rings for rings with no returns at all), and finally the
//! height and depth channels are rescaled for the network.
//!
//! `.gsf` file layout: `"GSF1"`, u32 LE rows, u32 LE cols, u32 LE channel
//! count, then `channels × rows × cols` f32 LE (row-major per channel), then
//! `rows × cols` occupancy bytes, then one normalized-flag byte.

use std::io::Write;
use std::path::Path;

use crate::cloud::{horizontal_range, Point, PointCloud, DEFAULT_NUM_RINGS};
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};
use crate::labels::{Label, PointLabels};
use crate::nn::ProbabilityMap;

pub const NUM_CHANNELS: usize = 3;
pub const CH_HEIGHT: usize = 0;
pub const CH_DEPTH: usize = 1;
pub const CH_INTENSITY: usize = 2;

/// Depths are floored to this value (meters) before taking the logarithm.
pub const DEPTH_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Degrees of azimuth per column.
    pub bin_width_deg: f64,
    pub num_rings: usize,
    /// Height normalization constant in meters.
    pub height_norm: f64,
    /// Evaluation range limit in meters; `None` means unlimited.
    pub max_range: Option<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { bin_width_deg: 1.0, num_rings: DEFAULT_NUM_RINGS, height_norm: 3.0, max_range: Some(60.0) }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_deg > 0.0) {
            return Err(Error::Config("bin width must be positive".into()));
        }
        let cols = 360.0 / self.bin_width_deg;
        if (cols - cols.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("360 is not divisible by bin width {}", self.bin_width_deg)));
        }
        if !(self.height_norm > 0.0) {
            return Err(Error::Config("height normalization must be positive".into()));
        }
        if self.num_rings == 0 || self.num_rings > u16::MAX as usize {
            return Err(Error::Config(format!("unsupported ring count {}", self.num_rings)));
        }
        if let Some(r) = self.max_range {
            if !(r > 0.0) {
                return Err(Error::Config("max range must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn num_columns(&self) -> usize {
        (360.0 / self.bin_width_deg).round() as usize
    }
}

/// Azimuth column of a point.
pub fn polar_cone(p: &Point, cfg: &EncoderConfig) -> Result<usize> {
    let az = p.azimuth_deg().ok_or(Error::DegeneratePoint)?;
    let cols = cfg.num_columns();
    let c = ((az + 180.0) / cfg.bin_width_deg).floor() as i64;
    Ok(c.rem_euclid(cols as i64) as usize)
}

/// Partition of a cloud's points into `(ring, column)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells, each listing indices into the source cloud.
    pub cells: Vec<Vec<u32>>,
    /// Flat cell index per point; `None` for degenerate points.
    pub point_cell: Vec<Option<u32>>,
    pub skipped: usize,
}

impl BinGrid {
    pub fn cell(&self, row: usize, col: usize) -> &[u32] {
        &self.cells[row * self.cols + col]
    }

    pub fn num_points(&self) -> usize {
        self.point_cell.len()
    }
}

pub fn bin_points(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<BinGrid> {
    cfg.validate()?;
    let (rows, cols) = (cfg.num_rings, cfg.num_columns());
    let mut cells = vec![Vec::new(); rows * cols];
    let mut point_cell = Vec::with_capacity(cloud.points.len());
    let mut skipped = 0;
    for (i, p) in cloud.points.iter().enumerate() {
        let ring = p.ring.ok_or(Error::MissingRing { index: i })? as usize;
        if ring >= rows {
            return Err(Error::RingOutOfRange { ring, num_rings: rows });
        }
        match polar_cone(p, cfg) {
            Ok(c) => {
                let flat = ring * cols + c;
                cells[flat].push(i as u32);
                point_cell.push(Some(flat as u32));
            }
            Err(_) => {
                skipped += 1;
                point_cell.push(None);
            }
        }
    }
    if skipped > 0 {
        log::debug!("{}: skipped {skipped} points on the sensor axis", cloud.frame_id);
    }
    Ok(BinGrid { rows, cols, cells, point_cell, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseFrame {
    pub rows: usize,
    pub cols: usize,
    /// `NUM_CHANNELS × rows × cols`, channel-major.
    pub values: Vec<f64>,
    pub occupancy: Vec<bool>,
    pub normalized: bool,
}

impl DenseFrame {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; NUM_CHANNELS * rows * cols],
            occupancy: vec![false; rows * cols],
            normalized: false,
        }
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.values[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[(channel * self.rows + row) * self.cols + col]
    }

    pub fn occupied(&self, row: usize, col: usize) -> bool {
        self.occupancy[row * self.cols + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.rows * self.cols;
        let mut out = Vec::with_capacity(16 + 4 * NUM_CHANNELS * n + n + 1);
        out.extend_from_slice(b"GSF1");
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(NUM_CHANNELS as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(self.occupancy.iter().map(|&o| o as u8));
        out.push(self.normalized as u8);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::Format(format!("dense frame: {r}"));
        let mut rd = Reader::new(bytes);
        if rd.take(4) != Some(b"GSF1".as_slice()) {
            return Err(bad("bad magic"));
        }
        let rows = rd.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let cols = rd.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let channels = rd.u32().ok_or_else(|| bad("truncated header"))? as usize;
        if channels != NUM_CHANNELS {
            return Err(bad("unexpected channel count"));
        }
        let n = rows * cols;
        let expected = 4 * channels * n + n + 1;
        if rd.remaining() != expected {
            return Err(bad(&format!("expected {expected} payload bytes, found {}", rd.remaining())));
        }
        let values = (0..channels * n).map(|_| rd.f32().unwrap() as f64).collect();
        let occupancy = rd.take(n).unwrap().iter().map(|&b| b != 0).collect();
        let normalized = rd.u8().unwrap() != 0;
        Ok(Self { rows, cols, values, occupancy, normalized })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        write_atomic(path.as_ref(), |w: &mut dyn Write| w.write_all(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Per-bin means followed by interpolation of empty cells. Not normalized.
pub fn encode_frame(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<(DenseFrame, BinGrid)> {
    let grid = bin_points(cloud, cfg)?;
    let mut frame = DenseFrame::empty(grid.rows, grid.cols);
    let n = grid.rows * grid.cols;
    for (flat, cell) in grid.cells.iter().enumerate() {
        if cell.is_empty() {
            continue;
        }
        let mut sum = [0.0f64; NUM_CHANNELS];
        for &i in cell {
            let p = &cloud.points[i as usize];
            sum[CH_HEIGHT] += p.up;
            sum[CH_DEPTH] += horizontal_range(p);
            sum[CH_INTENSITY] += p.intensity;
        }
        let count = cell.len() as f64;
        for (ch, s) in sum.iter().enumerate() {
            frame.values[ch * n + flat] = s / count;
        }
        frame.occupancy[flat] = true;
    }
    let frame = interpolate_empty(&frame)?;
    Ok((frame, grid))
}

/// Fill unoccupied cells from occupied neighbours.
///
/// Each ring is treated as a circle and gaps are bridged linearly between
/// the nearest occupied cells on either side; a ring with one occupied
/// cell becomes constant. Rings without any occupied cell are then filled
/// per column by linear interpolation between the nearest filled rings
/// above and below (or copied from the only one available).
pub fn interpolate_empty(frame: &DenseFrame) -> Result<DenseFrame> {
    if !frame.occupancy.iter().any(|&o| o) {
        return Err(Error::EmptyFrame);
    }
    let (rows, cols) = (frame.rows, frame.cols);
    let mut out = frame.clone();
    let mut row_filled = vec![false; rows];

    for (r, filled) in row_filled.iter_mut().enumerate() {
        let occ = &frame.occupancy[r * cols..(r + 1) * cols];
        let anchors: Vec<usize> = (0..cols).filter(|&c| occ[c]).collect();
        if anchors.is_empty() {
            continue;
        }
        *filled = true;
        for ch in 0..NUM_CHANNELS {
            let row = &mut out.plane_mut(ch)[r * cols..(r + 1) * cols];
            if anchors.len() == 1 {
                let v = row[anchors[0]];
                row.iter_mut().for_each(|x| *x = v);
                continue;
            }
            for (k, &a) in anchors.iter().enumerate() {
                let b = anchors[(k + 1) % anchors.len()];
                let gap = (b + cols - a) % cols;
                let (va, vb) = (row[a], row[b]);
                for j in 1..gap {
                    let t = j as f64 / gap as f64;
                    row[(a + j) % cols] = va + (vb - va) * t;
                }
            }
        }
    }

    let filled_rows: Vec<usize> = (0..rows).filter(|&r| row_filled[r]).collect();
    for r in (0..rows).filter(|&r| !row_filled[r]) {
        let above = filled_rows.iter().rev().find(|&&f| f < r).copied();
        let below = filled_rows.iter().find(|&&f| f > r).copied();
        for ch in 0..NUM_CHANNELS {
            let plane = out.plane_mut(ch);
            for c in 0..cols {
                plane[r * cols + c] = match (above, below) {
                    (Some(a), Some(b)) => {
                        let t = (r - a) as f64 / (b - a) as f64;
                        let (va, vb) = (plane[a * cols + c], plane[b * cols + c]);
                        va + (vb - va) * t
                    }
                    (Some(a), None) => plane[a * cols + c],
                    (None, Some(b)) => plane[b * cols + c],
                    (None, None) => unreachable!("at least one ring is occupied"),
                };
            }
        }
    }
    Ok(out)
}

/// Rescale heights by `height_norm` and take the log of floored depths.
pub fn normalize(frame: &DenseFrame, cfg: &EncoderConfig) -> Result<DenseFrame> {
    if frame.normalized {
        return Err(Error::State("frame is already normalized".into()));
    }
    cfg.validate()?;
    let mut out = frame.clone();
    out.plane_mut(CH_HEIGHT).iter_mut().for_each(|h| *h /= cfg.height_norm);
    out.plane_mut(CH_DEPTH).iter_mut().for_each(|d| *d = d.max(DEPTH_FLOOR).ln());
    out.normalized = true;
    Ok(out)
}

/// Per-cell training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub rows: usize,
    pub cols: usize,
    pub ground: Vec<bool>,
    /// Cells that contribute to the loss.
    pub mask: Vec<bool>,
}

impl LabelGrid {
    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Majority vote of labeled points per cell; ties go to non-ground. Empty
/// cells and cells whose points are all unlabeled are masked out.
pub fn labels_to_grid(labels: &PointLabels, grid: &BinGrid) -> Result<LabelGrid> {
    if labels.len() != grid.num_points() {
        return Err(Error::Shape(format!(
            "{} labels for a cloud of {} points",
            labels.len(),
            grid.num_points()
        )));
    }
    let n = grid.rows * grid.cols;
    let mut ground = vec![false; n];
    let mut mask = vec![false; n];
    for (flat, cell) in grid.cells.iter().enumerate() {
        let (mut g, mut ng) = (0usize, 0usize);
        for &i in cell {
            match labels.labels[i as usize] {
                Label::Ground => g += 1,
                Label::NonGround => ng += 1,
                Label::Unlabeled => {}
            }
        }
        if g + ng > 0 {
            mask[flat] = true;
            ground[flat] = g > ng;
        }
    }
    Ok(LabelGrid { rows: grid.rows, cols: grid.cols, ground, mask })
}

/// Project cell probabilities back onto points; degenerate points get 0.
pub fn grid_to_point_probs(probs: &ProbabilityMap, grid: &BinGrid) -> Result<Vec<f64>> {
    if probs.rows != grid.rows || probs.cols != grid.cols {
        return Err(Error::Shape(format!(
            "probability map {}x{} vs grid {}x{}",
            probs.rows, probs.cols, grid.rows, grid.cols
        )));
    }
    Ok(grid
        .point_cell
        .iter()
        .map(|c| c.map_or(0.0, |flat| probs.p_ground[flat as usize]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig::default()
    }

    fn pt(forward: f64, left: f64) -> Point {
        Point::new(forward, left, 0.0, 0.0)
    }

    fn polar(az_deg: f64, range: f64, up: f64, intensity: f64, ring: u16) -> Point {
        let a = az_deg.to_radians();
        Point::new(range * a.cos(), range * a.sin(), up, intensity).with_ring(ring)
    }

    #[test]
    fn polar_cone_examples() {
        assert_eq!(polar_cone(&pt(1.0, 0.0), &cfg()).unwrap(), 180);
        assert_eq!(polar_cone(&pt(0.0, 1.0), &cfg()).unwrap(), 270);
        assert_eq!(polar_cone(&pt(-1.0, 0.0), &cfg()).unwrap(), 0);
        assert_eq!(polar_cone(&pt(-1.0, -0.0), &cfg()).unwrap(), 0);
        assert!(matches!(polar_cone(&pt(0.0, 0.0), &cfg()), Err(Error::DegeneratePoint)));
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { bin_width_deg: 0.7, ..cfg() }.validate().is_err());
        assert!(EncoderConfig { bin_width_deg: 0.5, ..cfg() }.validate().is_ok());
        assert_eq!(EncoderConfig { bin_width_deg: 0.5, ..cfg() }.num_columns(), 720);
        assert!(EncoderConfig { height_norm: 0.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn two_points_share_a_bin() {
        let cloud = PointCloud::new(vec![polar(10.2, 5.0, 0.0, 0.0, 5), polar(10.7, 5.0, 0.0, 0.0, 5)], 64, "b");
        let grid = bin_points(&cloud, &cfg()).unwrap();
        assert_eq!(grid.cell(5, 190), &[0, 1]);
    }

    #[test]
    fn empty_cloud_bins() {
        let grid = bin_points(&PointCloud::new(vec![], 64, "e"), &cfg()).unwrap();
        assert!(grid.cells.iter().all(|c| c.is_empty()));
        assert_eq!(grid.cells.len(), 64 * 360);
    }

    #[test]
    fn one_point_per_ring() {
        let pts = (0..64).map(|r| polar(0.0, 10.0, -1.0, 0.1, r)).collect();
        let grid = bin_points(&PointCloud::new(pts, 64, "r"), &cfg()).unwrap();
        let nonempty: Vec<usize> = (0..grid.cells.len()).filter(|&i| !grid.cells[i].is_empty()).collect();
        assert_eq!(nonempty.len(), 64);
        assert!(nonempty.iter().all(|&f| f % 360 == 180));
    }

    #[test]
    fn missing_ring_is_error() {
        let cloud = PointCloud::new(vec![pt(1.0, 1.0)], 64, "m");
        assert!(matches!(bin_points(&cloud, &cfg()), Err(Error::MissingRing { index: 0 })));
    }

    #[test]
    fn bin_mean_and_single_point() {
        let pts = vec![
            polar(45.3, 4.0, 1.0, 0.2, 0),
            polar(45.6, 6.0, 2.0, 0.4, 0),
            polar(100.5, 7.0, -1.0, 0.9, 3),
        ];
        let (frame, _) = encode_frame(&PointCloud::new(pts, 64, "m"), &cfg()).unwrap();
        let c = 225;
        assert!((frame.get(CH_HEIGHT, 0, c) - 1.5).abs() < 1e-9);
        assert!((frame.get(CH_DEPTH, 0, c) - 5.0).abs() < 1e-9);
        assert!((frame.get(CH_INTENSITY, 0, c) - 0.3).abs() < 1e-9);
        assert!((frame.get(CH_HEIGHT, 3, 280) + 1.0).abs() < 1e-9);
        assert!((frame.get(CH_DEPTH, 3, 280) - 7.0).abs() < 1e-9);
        assert!((frame.get(CH_INTENSITY, 3, 280) - 0.9).abs() < 1e-9);
        assert!(!frame.normalized);
    }

    fn frame_from_rows(rows: &[Vec<Option<f64>>]) -> DenseFrame {
        let (r, c) = (rows.len(), rows[0].len());
        let mut f = DenseFrame::empty(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    for ch in 0..NUM_CHANNELS {
                        f.plane_mut(ch)[i * c + j] = *v;
                    }
                    f.occupancy[i * c + j] = true;
                }
            }
        }
        f
    }

    #[test]
    fn row_midpoint() {
        let f = frame_from_rows(&[vec![Some(10.0), None, Some(14.0), Some(14.0)]]);
        let out = interpolate_empty(&f).unwrap();
        assert_eq!(out.get(CH_DEPTH, 0, 1), 12.0);
        assert_eq!(out.occupancy, f.occupancy);
    }

    #[test]
    fn single_occupied_cell_fills_ring() {
        let mut row = vec![None; 360];
        row[17] = Some(7.0);
        let out = interpolate_empty(&frame_from_rows(&[row])).unwrap();
        assert!(out.plane(CH_HEIGHT).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn circular_gap() {
        let mut row = vec![None; 360];
        row[358] = Some(2.0);
        row[2] = Some(6.0);
        let out = interpolate_empty(&frame_from_rows(&[row])).unwrap();
        assert_eq!(out.get(CH_DEPTH, 0, 0), 4.0);
        assert_eq!(out.get(CH_DEPTH, 0, 359), 3.0);
        assert_eq!(out.get(CH_DEPTH, 0, 1), 5.0);
        // the long way round goes from 6 at column 2 back down to 2 at 358
        assert!((out.get(CH_DEPTH, 0, 180) - (6.0 - 4.0 * 178.0 / 356.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_ring_between_constant_rings() {
        let out = interpolate_empty(&frame_from_rows(&[
            vec![Some(10.0); 8],
            vec![None; 8],
            vec![Some(12.0); 8],
        ]))
        .unwrap();
        for c in 0..8 {
            assert!((out.get(CH_DEPTH, 1, c) - 11.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_rings_copy_nearest() {
        let out = interpolate_empty(&frame_from_rows(&[vec![None; 4], vec![Some(3.0); 4], vec![None; 4]])).unwrap();
        assert!(out.plane(CH_HEIGHT).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn empty_frame_is_error() {
        assert!(matches!(interpolate_empty(&DenseFrame::empty(2, 4)), Err(Error::EmptyFrame)));
        let cloud = PointCloud::new(vec![], 64, "e");
        assert!(matches!(encode_frame(&cloud, &cfg()), Err(Error::EmptyFrame)));
    }

    #[test]
    fn normalize_examples() {
        let mut f = frame_from_rows(&[vec![Some(3.0), Some(1.0)]]);
        f.plane_mut(CH_DEPTH)[0] = 1.0;
        f.plane_mut(CH_DEPTH)[1] = std::f64::consts::E;
        f.plane_mut(CH_INTENSITY)[0] = 0.25;
        let n = normalize(&f, &cfg()).unwrap();
        assert_eq!(n.get(CH_HEIGHT, 0, 0), 1.0);
        assert_eq!(n.get(CH_DEPTH, 0, 0), 0.0);
        assert!((n.get(CH_DEPTH, 0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(n.get(CH_INTENSITY, 0, 0), 0.25);
        assert!(n.normalized);
        assert!(matches!(normalize(&n, &cfg()), Err(Error::State(_))));
    }

    #[test]
    fn depth_floor_applies() {
        let mut f = frame_from_rows(&[vec![Some(0.0)]]);
        f.plane_mut(CH_DEPTH)[0] = 0.0;
        let n = normalize(&f, &cfg()).unwrap();
        assert_eq!(n.get(CH_DEPTH, 0, 0), DEPTH_FLOOR.ln());
    }

    #[test]
    fn label_votes() {
        let pts = vec![
            polar(0.5, 5.0, 0.0, 0.0, 0),
            polar(0.5, 5.0, 0.0, 0.0, 0),
            polar(0.5, 5.0, 0.0, 0.0, 0),
            polar(20.5, 5.0, 0.0, 0.0, 1),
            polar(20.5, 5.0, 0.0, 0.0, 1),
            polar(40.5, 5.0, 0.0, 0.0, 2),
        ];
        let grid = bin_points(&PointCloud::new(pts, 64, "l"), &cfg()).unwrap();
        use Label::*;
        let labels = PointLabels { labels: vec![Ground, Ground, NonGround, Ground, NonGround, Unlabeled], frame_id: "l".into() };
        let lg = labels_to_grid(&labels, &grid).unwrap();
        let cell = |r: usize, c: usize| r * 360 + c;
        assert!(lg.ground[cell(0, 180)] && lg.mask[cell(0, 180)]);
        assert!(!lg.ground[cell(1, 200)] && lg.mask[cell(1, 200)]);
        assert!(!lg.mask[cell(2, 220)]);
        assert!(!lg.ground[cell(5, 5)] && !lg.mask[cell(5, 5)]);
        assert_eq!(lg.unmasked(), 2);

        let short = PointLabels::unlabeled(2, "l");
        assert!(matches!(labels_to_grid(&short, &grid), Err(Error::Shape(_))));
    }

    #[test]
    fn point_probs_lookup() {
        let pts = vec![polar(0.5, 5.0, 0.0, 0.0, 3), Point::new(0.0, 0.0, 1.0, 0.0).with_ring(3)];
        let grid = bin_points(&PointCloud::new(pts, 64, "p"), &cfg()).unwrap();
        let mut probs = ProbabilityMap { rows: 64, cols: 360, p_ground: vec![1.0; 64 * 360] };
        assert_eq!(grid_to_point_probs(&probs, &grid).unwrap(), vec![1.0, 0.0]);
        probs.p_ground[3 * 360 + 180] = 0.7;
        assert_eq!(grid_to_point_probs(&probs, &grid).unwrap()[0], 0.7);
        let wrong = ProbabilityMap { rows: 64, cols: 180, p_ground: vec![0.0; 64 * 180] };
        assert!(grid_to_point_probs(&wrong, &grid).is_err());
    }

    #[test]
    fn gsf_round_trip_and_layout() {
        let mut f = frame_from_rows(&[vec![Some(1.5), None], vec![None, Some(-2.0)]]);
        f = interpolate_empty(&f).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"GSF1");
        assert_eq!(bytes.len(), 16 + 3 * 4 * 4 + 4 + 1);
        let back = DenseFrame::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert!(DenseFrame::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    fn random_cloud(seed: u64, n: usize, rings: u16) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let p = polar(
                    rng.random_range(-180.0..180.0),
                    rng.random_range(0.5..80.0),
                    rng.random_range(-3.0..2.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0..rings),
                );
                if rng.random_bool(0.01) {
                    Point { forward: 0.0, left: 0.0, ..p }
                } else {
                    p
                }
            })
            .collect();
        PointCloud::new(pts, 64, "rand")
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn partition_and_means(seed in any::<u64>(), n in 1usize..3000) {
            let cloud = random_cloud(seed, n, 64);
            let (frame, grid) = encode_frame(&cloud, &cfg()).unwrap();
            let total: usize = grid.cells.iter().map(|c| c.len()).sum();
            prop_assert_eq!(total + grid.skipped, cloud.len());
            for (flat, cell) in grid.cells.iter().enumerate() {
                prop_assert_eq!(frame.occupancy[flat], !cell.is_empty());
                for &i in cell {
                    let p = &cloud.points[i as usize];
                    prop_assert_eq!(flat / 360, p.ring.unwrap() as usize);
                }
            }
        }

        #[test]
        fn interpolation_idempotent(seed in any::<u64>(), n in 1usize..500) {
            let (frame, _) = encode_frame(&random_cloud(seed, n, 64), &cfg()).unwrap();
            prop_assert_eq!(interpolate_empty(&frame).unwrap(), frame);
        }
    }
}
