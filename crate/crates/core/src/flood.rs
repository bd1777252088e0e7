//! Seed flooding along rings, the core of the semi-automatic annotator.
//!
//! Starting from a seed cell, the flood walks the ring in both directions
//! over occupied cells. A cell is a breakpoint when its height differs from
//! the previously flooded cell by more than `t1`, or from the seed by more
//! than `t2`; the walk stops in front of it. Empty cells also stop the walk.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{BinGrid, DenseFrame, CH_HEIGHT};
use crate::error::{Error, Result};
use crate::labels::{Label, PointLabels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloodConfig {
    /// Maximum height step between neighbouring cells (meters).
    pub t1: f64,
    /// Maximum height difference from the seed (meters).
    pub t2: f64,
}

impl Default for FloodConfig {
    fn default() -> Self {
        Self { t1: 0.03, t2: 0.07 }
    }
}

impl FloodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t1 > 0.0 && self.t1 <= self.t2 && self.t2.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("flood thresholds need 0 < t1 <= t2, got t1={} t2={}", self.t1, self.t2)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedPoint {
    pub ring: usize,
    pub column: usize,
}

/// Flood one circular ring from `seed_col`. Returns the flooded columns,
/// seed included.
pub fn flood_ring(heights: &[f64], occupied: &[bool], seed_col: usize, cfg: &FloodConfig) -> Result<BTreeSet<usize>> {
    let n = heights.len();
    if occupied.len() != n {
        return Err(Error::Shape(format!("{} heights vs {} occupancy flags", n, occupied.len())));
    }
    if seed_col >= n {
        return Err(Error::Index { index: seed_col, len: n });
    }
    if !occupied[seed_col] {
        return Err(Error::InvalidSeed { ring: 0, column: seed_col });
    }
    let seed_h = heights[seed_col];
    let mut flooded = vec![false; n];
    flooded[seed_col] = true;

    for step in [1, n - 1] {
        let mut prev_h = seed_h;
        let mut col = seed_col;
        loop {
            col = (col + step) % n;
            if flooded[col] || !occupied[col] {
                break;
            }
            let h = heights[col];
            if (h - prev_h).abs() > cfg.t1 || (h - seed_h).abs() > cfg.t2 {
                break;
            }
            flooded[col] = true;
            prev_h = h;
        }
    }
    Ok((0..n).filter(|&c| flooded[c]).collect())
}

/// Flood every seed on the raw height channel and mark all points of the
/// flooded cells as ground, on top of `base`.
pub fn apply_seeds(
    grid: &BinGrid,
    frame: &DenseFrame,
    seeds: &[SeedPoint],
    cfg: &FloodConfig,
    base: &PointLabels,
) -> Result<PointLabels> {
    if frame.normalized {
        return Err(Error::State("flooding needs raw (unnormalized) heights".into()));
    }
    if frame.rows != grid.rows || frame.cols != grid.cols {
        return Err(Error::Shape("frame and grid dimensions differ".into()));
    }
    if base.len() != grid.num_points() {
        return Err(Error::Shape(format!("{} labels for {} points", base.len(), grid.num_points())));
    }
    cfg.validate()?;
    let cols = grid.cols;
    let heights = frame.plane(CH_HEIGHT);
    let mut out = base.clone();
    for seed in seeds {
        if seed.ring >= grid.rows {
            return Err(Error::Index { index: seed.ring, len: grid.rows });
        }
        if seed.column >= cols {
            return Err(Error::Index { index: seed.column, len: cols });
        }
        let row = seed.ring * cols..(seed.ring + 1) * cols;
        let flooded = flood_ring(&heights[row.clone()], &frame.occupancy[row], seed.column, cfg).map_err(|e| match e {
            Error::InvalidSeed { column, .. } => Error::InvalidSeed { ring: seed.ring, column },
            other => other,
        })?;
        for c in flooded {
            for &i in grid.cell(seed.ring, c) {
                out.labels[i as usize] = Label::Ground;
            }
        }
    }
    Ok(out)
}

pub fn toggle_points(labels: &PointLabels, indices: &[usize], value: Label) -> Result<PointLabels> {
    let len = labels.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::Index { index: bad, len });
    }
    let mut out = labels.clone();
    for &i in indices {
        out.labels[i] = value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Point, PointCloud};
    use crate::encoder::{encode_frame, EncoderConfig};
    use proptest::prelude::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn stops_before_step_breakpoint() {
        let mut h = vec![0.5; 10];
        h[..4].copy_from_slice(&[0.0, 0.01, 0.02, 0.10]);
        let out = flood_ring(&h, &[true; 10], 0, &FloodConfig::default()).unwrap();
        assert_eq!(out, set(&[0, 1, 2]));
    }

    #[test]
    fn uniform_ring_fully_flooded() {
        let out = flood_ring(&[0.0; 360], &[true; 360], 42, &FloodConfig::default()).unwrap();
        assert_eq!(out.len(), 360);
    }

    #[test]
    fn seed_threshold_binds_on_ramp() {
        let mut h = vec![1.0; 8];
        h[..5].copy_from_slice(&[0.0, 0.02, 0.04, 0.06, 0.08]);
        let out = flood_ring(&h, &[true; 8], 0, &FloodConfig::default()).unwrap();
        assert_eq!(out, set(&[0, 1, 2, 3]));
    }

    #[test]
    fn empty_cells_stop_the_walk() {
        let occ = [true, true, false, true, true, false];
        let out = flood_ring(&[0.0; 6], &occ, 0, &FloodConfig::default()).unwrap();
        assert_eq!(out, set(&[0, 1]));
    }

    #[test]
    fn unoccupied_seed_rejected() {
        let err = flood_ring(&[0.0; 4], &[false, true, true, true], 0, &FloodConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidSeed { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(FloodConfig { t1: 0.08, t2: 0.07 }.validate().is_err());
        assert!(FloodConfig { t1: 0.0, t2: 0.07 }.validate().is_err());
        assert!(FloodConfig::default().validate().is_ok());
    }

    /// Two rings of 360 points each at 10 m; ring 0 flat except for a
    /// 20 cm wall spanning columns 100..110 (azimuth -80°..-70°).
    fn two_ring_scene() -> PointCloud {
        let mut pts = Vec::new();
        for ring in 0..2u16 {
            for c in 0..360 {
                let az = (c as f64 + 0.5 - 180.0).to_radians();
                let up = if ring == 0 && (100..110).contains(&c) { -1.5 } else { -1.7 };
                pts.push(Point::new(10.0 * az.cos(), 10.0 * az.sin(), up, 0.2).with_ring(ring));
            }
        }
        PointCloud::new(pts, 64, "scene")
    }

    #[test]
    fn apply_seeds_cases() {
        let cloud = two_ring_scene();
        let (frame, grid) = encode_frame(&cloud, &EncoderConfig::default()).unwrap();
        let base = PointLabels::unlabeled(cloud.len(), "scene");
        let cfg = FloodConfig::default();

        assert_eq!(apply_seeds(&grid, &frame, &[], &cfg, &base).unwrap(), base);

        let flat = apply_seeds(&grid, &frame, &[SeedPoint { ring: 1, column: 0 }], &cfg, &base).unwrap();
        for (i, l) in flat.labels.iter().enumerate() {
            assert_eq!(*l, if i >= 360 { Label::Ground } else { Label::Unlabeled });
        }

        // Seeds on both sides of the wall produce one run that wraps around
        // column 0 and stops at both faces of the wall.
        let seeds = [SeedPoint { ring: 0, column: 50 }, SeedPoint { ring: 0, column: 200 }];
        let walled = apply_seeds(&grid, &frame, &seeds, &cfg, &base).unwrap();
        for c in 0..360 {
            let expect = if (100..110).contains(&c) { Label::Unlabeled } else { Label::Ground };
            assert_eq!(walled.labels[c], expect, "column {c}");
        }
        assert!(walled.labels[360..].iter().all(|&l| l == Label::Unlabeled));

        let reversed = [seeds[1], seeds[0]];
        assert_eq!(apply_seeds(&grid, &frame, &reversed, &cfg, &base).unwrap(), walled);

        let oob = [SeedPoint { ring: 64, column: 0 }];
        assert!(matches!(apply_seeds(&grid, &frame, &oob, &cfg, &base), Err(Error::Index { .. })));
        let empty_cell = [SeedPoint { ring: 5, column: 0 }];
        assert!(matches!(
            apply_seeds(&grid, &frame, &empty_cell, &cfg, &base),
            Err(Error::InvalidSeed { ring: 5, column: 0 })
        ));
    }

    #[test]
    fn two_disjoint_runs_between_walls() {
        // ring of 12 cells: flat ground at 0..5 and 7..11, walls at 5,6 and 11
        let mut h = vec![0.0; 12];
        h[5] = 0.5;
        h[6] = 0.5;
        h[11] = 0.5;
        let cfg = FloodConfig::default();
        let occ = [true; 12];
        let a = flood_ring(&h, &occ, 2, &cfg).unwrap();
        let b = flood_ring(&h, &occ, 8, &cfg).unwrap();
        assert_eq!(a, set(&[0, 1, 2, 3, 4]));
        assert_eq!(b, set(&[7, 8, 9, 10]));
    }

    #[test]
    fn toggle_cases() {
        let base = PointLabels::unlabeled(4, "t");
        assert_eq!(toggle_points(&base, &[], Label::Ground).unwrap(), base);
        let one = toggle_points(&base, &[0], Label::Ground).unwrap();
        assert_eq!(one.labels, vec![Label::Ground, Label::Unlabeled, Label::Unlabeled, Label::Unlabeled]);
        assert_eq!(toggle_points(&one, &[0], Label::Unlabeled).unwrap(), base);
        assert!(matches!(toggle_points(&base, &[4], Label::Ground), Err(Error::Index { index: 4, len: 4 })));
    }

    fn ring_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, usize)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-0.1f64..0.1, n),
                proptest::collection::vec(proptest::bool::weighted(0.85), n),
                0..n,
            )
        })
    }

    proptest! {
        #[test]
        fn flood_is_monotone_in_thresholds(
            (h, occ, seed) in ring_strategy(), t1 in 0.005f64..0.05, dt in 0.0f64..0.05, g1 in 0.0f64..0.05, g2 in 0.0f64..0.05,
        ) {
            let mut occ = occ;
            occ[seed] = true;
            let small = FloodConfig { t1, t2: t1 + dt };
            let large = FloodConfig { t1: t1 + g1, t2: t1 + dt + g1 + g2 };
            let a = flood_ring(&h, &occ, seed, &small).unwrap();
            let b = flood_ring(&h, &occ, seed, &large).unwrap();
            prop_assert!(a.is_subset(&b));
        }

        #[test]
        fn flood_is_one_circular_run((h, occ, seed) in ring_strategy()) {
            let mut occ = occ;
            occ[seed] = true;
            let n = h.len();
            let out = flood_ring(&h, &occ, seed, &FloodConfig::default()).unwrap();
            prop_assert!(out.contains(&seed));
            if out.len() < n {
                // count starts of runs on the circle
                let starts = (0..n).filter(|&c| out.contains(&c) && !out.contains(&((c + n - 1) % n))).count();
                prop_assert_eq!(starts, 1);
            }
        }
    }
}
