//! Heuristic ground labels for pretraining.
//!
//! Points are hashed into a horizontal orthogonal grid. A cell is ground
//! when its mean height is low enough and its heights are both narrow
//! (max - min) and tightly spread (standard deviation).

use std::collections::HashMap;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::labels::PointLabels;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoLabelConfig {
    /// Side length of a grid cell (meters).
    pub cell_size: f64,
    /// Upper bound on the mean height relative to the sensor (meters).
    pub max_height_mean: f64,
    /// Upper bound on max - min height inside a cell (meters).
    pub max_height_spread: f64,
    /// Upper bound on the population standard deviation of height (meters).
    pub max_height_stddev: f64,
}

impl Default for AutoLabelConfig {
    fn default() -> Self {
        // Mean threshold assumes a sensor mounted about 1.7 m above the road.
        Self { cell_size: 0.5, max_height_mean: -1.4, max_height_spread: 0.15, max_height_stddev: 0.05 }
    }
}

impl AutoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cell_size > 0.0
            && self.max_height_spread > 0.0
            && self.max_height_stddev > 0.0
            && self.max_height_mean.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("auto-label thresholds must be positive (mean may be negative)".into()))
        }
    }
}

#[derive(Default)]
struct CellStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl CellStats {
    fn push(&mut self, h: f64) {
        if self.count == 0 {
            self.min = h;
            self.max = h;
        } else {
            self.min = self.min.min(h);
            self.max = self.max.max(h);
        }
        self.count += 1;
        self.sum += h;
        self.sum_sq += h * h;
    }

    fn is_ground(&self, cfg: &AutoLabelConfig) -> bool {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        mean <= cfg.max_height_mean
            && self.max - self.min <= cfg.max_height_spread
            && var.sqrt() <= cfg.max_height_stddev
    }
}

pub fn auto_label(cloud: &PointCloud, cfg: &AutoLabelConfig) -> Result<PointLabels> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot auto-label an empty cloud".into()));
    }
    let key = |forward: f64, left: f64| {
        ((forward / cfg.cell_size).floor() as i64, (left / cfg.cell_size).floor() as i64)
    };
    let mut cells: HashMap<(i64, i64), CellStats> = HashMap::new();
    for p in &cloud.points {
        cells.entry(key(p.forward, p.left)).or_default().push(p.up);
    }
    let ground: Vec<bool> = cloud
        .points
        .iter()
        .map(|p| cells[&key(p.forward, p.left)].is_ground(cfg))
        .collect();
    Ok(PointLabels::from_binary(&ground, cloud.frame_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use crate::labels::Label;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_plane_is_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = (0..2000)
            .map(|_| Point::new(rng.random_range(2.0..20.0), rng.random_range(-8.0..8.0), -1.7 + rng.random_range(-0.01..0.01), 0.2))
            .collect();
        let labels = auto_label(&PointCloud::new(pts, 64, "p"), &AutoLabelConfig::default()).unwrap();
        assert!(labels.labels.iter().all(|&l| l == Label::Ground));
    }

    #[test]
    fn wall_is_not_ground() {
        let pts = (0..23).map(|k| Point::new(5.1, 0.1, -1.7 + 0.1 * k as f64, 0.3)).collect();
        let labels = auto_label(&PointCloud::new(pts, 64, "w"), &AutoLabelConfig::default()).unwrap();
        assert!(labels.labels.iter().all(|&l| l == Label::NonGround));
    }

    #[test]
    fn conjunction_of_three_conditions() {
        // mean -1.5, spread 0.10, stddev ~0.035
        let heights = [-1.55, -1.5, -1.5, -1.45];
        let mk = |dz: f64| {
            let pts = heights.iter().map(|h| Point::new(3.2, 1.2, h + dz, 0.1)).collect();
            PointCloud::new(pts, 64, "c")
        };
        let cfg = AutoLabelConfig::default();
        assert!(auto_label(&mk(0.0), &cfg).unwrap().labels.iter().all(|&l| l == Label::Ground));
        assert!(auto_label(&mk(0.5), &cfg).unwrap().labels.iter().all(|&l| l == Label::NonGround));
    }

    #[test]
    fn empty_cloud_rejected() {
        let err = auto_label(&PointCloud::new(vec![], 64, "e"), &AutoLabelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    fn scene(seed: u64) -> Vec<Point> {
        // points placed well inside 0.5 m cells so shifts cannot move them across edges
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..400)
            .map(|_| {
                let cx = rng.random_range(-20i32..20) as f64 * 0.5 + 0.25;
                let cy = rng.random_range(-20i32..20) as f64 * 0.5 + 0.25;
                Point::new(
                    cx + rng.random_range(-0.2..0.2),
                    cy + rng.random_range(-0.2..0.2),
                    rng.random_range(-1.8..-1.0),
                    0.5,
                )
            })
            .collect()
    }

    proptest! {
        #[test]
        fn deterministic_and_shift_invariant(seed in any::<u64>(), kx in -10i32..10, ky in -10i32..10) {
            let cfg = AutoLabelConfig::default();
            let pts = scene(seed);
            let a = auto_label(&PointCloud::new(pts.clone(), 64, "a"), &cfg).unwrap();
            let again = auto_label(&PointCloud::new(pts.clone(), 64, "a"), &cfg).unwrap();
            prop_assert_eq!(&a, &again);
            let shifted: Vec<Point> = pts
                .iter()
                .map(|p| Point { forward: p.forward + kx as f64 * cfg.cell_size, left: p.left + ky as f64 * cfg.cell_size, ..*p })
                .collect();
            let b = auto_label(&PointCloud::new(shifted, 64, "a"), &cfg).unwrap();
            prop_assert_eq!(a.labels, b.labels);
        }
    }
}
