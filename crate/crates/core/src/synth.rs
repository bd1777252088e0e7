//! Ray-cast synthetic scenes with exact ground labels.
//!
//! A 64-beam spinning sensor sits above a ground surface that is either flat
//! or flat up to a line and then rises as a planar ramp. Boxes and vertical
//! cylinders stand on the ground. Every return is labeled ground exactly
//! when the ray hit the ground surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Point, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    /// Beam elevations in degrees, ring 0 first (highest beam).
    pub elevations_deg: Vec<f64>,
    pub mount_height: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
    pub range_noise: f64,
    pub dropout: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::hdl64(0.2)
    }
}

impl SensorModel {
    /// 64 beams spread linearly from +2° down to -24.8°, mounted 1.73 m up.
    pub fn hdl64(azimuth_step_deg: f64) -> Self {
        let elevations_deg = (0..64).map(|i| 2.0 - 26.8 * i as f64 / 63.0).collect();
        Self {
            elevations_deg,
            mount_height: 1.73,
            azimuth_step_deg,
            max_range: 100.0,
            min_range: 2.0,
            range_noise: 0.01,
            dropout: 0.02,
        }
    }

    pub fn num_rings(&self) -> usize {
        self.elevations_deg.len()
    }
}

/// Ground height field relative to the sensor origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ground {
    Flat,
    /// Flat until `start` meters along the horizontal unit direction
    /// `(dir_x, dir_y)`, then rising with `slope` (rise over run).
    Ramp { dir_x: f64, dir_y: f64, start: f64, slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    /// Box standing on the ground, rotated by `yaw` about the vertical axis.
    Box { x: f64, y: f64, half_len: f64, half_wid: f64, yaw: f64, height: f64, base: f64 },
    Cylinder { x: f64, y: f64, radius: f64, height: f64, base: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ground: Ground,
    pub obstacles: Vec<Obstacle>,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub cloud: PointCloud,
    pub truth: Vec<bool>,
}

impl Scene {
    pub fn ground_height(&self, x: f64, y: f64, mount: f64) -> f64 {
        match self.ground {
            Ground::Flat => -mount,
            Ground::Ramp { dir_x, dir_y, start, slope } => -mount + slope * (x * dir_x + y * dir_y - start).max(0.0),
        }
    }

    /// Random scene: half flat, half ramped ground; car-sized boxes, building
    /// facades, a few low curb-like blocks, and poles.
    pub fn random(rng: &mut impl Rng, mount: f64) -> Self {
        let ground = if rng.random_bool(0.5) {
            Ground::Flat
        } else {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let slope = rng.random_range(2.0f64..8.0).to_radians().tan();
            Ground::Ramp { dir_x: a.cos(), dir_y: a.sin(), start: rng.random_range(8.0..30.0), slope }
        };
        let mut scene = Scene { ground, obstacles: Vec::new() };
        let place = |rng: &mut dyn rand::RngCore, min_r: f64, max_r: f64| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(min_r..max_r);
            (r * a.cos(), r * a.sin())
        };
        for _ in 0..rng.random_range(3..8) {
            let half_len = rng.random_range(6.0..20.0);
            let half_wid = rng.random_range(2.0..6.0);
            let (x, y) = place(rng, 12.0 + half_wid, 50.0);
            let base = scene.ground_height(x, y, mount) - 0.3;
            let height = rng.random_range(4.0..12.0);
            scene.obstacles.push(Obstacle::Box { x, y, half_len, half_wid, yaw: rng.random_range(0.0..3.2), height: height + 0.3, base });
        }
        for _ in 0..rng.random_range(15..35) {
            let half_len = rng.random_range(0.5..4.0);
            let half_wid = rng.random_range(0.4..2.0);
            let (x, y) = place(rng, 4.0 + half_len, 55.0);
            let height = rng.random_range(0.6..3.5);
            let base = scene.ground_height(x, y, mount) - 0.3;
            scene.obstacles.push(Obstacle::Box { x, y, half_len, half_wid, yaw: rng.random_range(0.0..3.2), height: height + 0.3, base });
        }
        for _ in 0..rng.random_range(2..6) {
            let (x, y) = place(rng, 6.0, 40.0);
            let base = scene.ground_height(x, y, mount) - 0.3;
            scene.obstacles.push(Obstacle::Box {
                x,
                y,
                half_len: rng.random_range(2.0..6.0),
                half_wid: rng.random_range(0.1..0.3),
                yaw: rng.random_range(0.0..3.2),
                height: rng.random_range(0.15..0.3) + 0.3,
                base,
            });
        }
        for _ in 0..rng.random_range(4..12) {
            let (x, y) = place(rng, 4.0, 50.0);
            let base = scene.ground_height(x, y, mount) - 0.3;
            scene.obstacles.push(Obstacle::Cylinder {
                x,
                y,
                radius: rng.random_range(0.1..0.6),
                height: rng.random_range(1.0..6.0) + 0.3,
                base,
            });
        }
        scene
    }

    /// First hit along a unit ray from the origin: `(distance, is_ground)`.
    pub fn cast(&self, dir: [f64; 3], mount: f64, max_range: f64) -> Option<(f64, bool)> {
        let mut best: Option<(f64, bool)> = None;
        let mut consider = |t: Option<f64>, ground: bool| {
            if let Some(t) = t {
                if t > 1e-6 && t <= max_range && best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, ground));
                }
            }
        };
        consider(self.cast_ground(dir, mount), true);
        for o in &self.obstacles {
            consider(cast_obstacle(o, dir), false);
        }
        best
    }

    fn cast_ground(&self, dir: [f64; 3], mount: f64) -> Option<f64> {
        let [dx, dy, dz] = dir;
        match self.ground {
            Ground::Flat => (dz < 0.0).then(|| -mount / dz),
            Ground::Ramp { dir_x, dir_y, start, slope } => {
                let along = dx * dir_x + dy * dir_y;
                let mut hits = Vec::with_capacity(2);
                if dz < 0.0 {
                    let t = -mount / dz;
                    if t * along <= start {
                        hits.push(t);
                    }
                }
                let denom = dz - slope * along;
                if denom.abs() > 1e-12 {
                    let t = (-mount - slope * start) / denom;
                    if t > 0.0 && t * along >= start {
                        hits.push(t);
                    }
                }
                hits.into_iter().reduce(f64::min)
            }
        }
    }
}

fn cast_obstacle(o: &Obstacle, dir: [f64; 3]) -> Option<f64> {
    let [dx, dy, dz] = dir;
    match *o {
        Obstacle::Box { x, y, half_len, half_wid, yaw, height, base } => {
            // ray in the box frame: origin at -center, rotated by -yaw
            let (s, c) = yaw.sin_cos();
            let ox = -x * c - y * s;
            let oy = x * s - y * c;
            let rx = dx * c + dy * s;
            let ry = -dx * s + dy * c;
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for (o, d, lo, hi) in [(ox, rx, -half_len, half_len), (oy, ry, -half_wid, half_wid), (0.0, dz, base, base + height)] {
                if d.abs() < 1e-12 {
                    if o < lo || o > hi {
                        return None;
                    }
                    continue;
                }
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
            (t0 <= t1 && t0 > 0.0).then_some(t0)
        }
        Obstacle::Cylinder { x, y, radius, height, base } => {
            let a = dx * dx + dy * dy;
            let mut best: Option<f64> = None;
            if a > 1e-12 {
                let b = -2.0 * (dx * x + dy * y);
                let c = x * x + y * y - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / (2.0 * a);
                    let z = t * dz;
                    if t > 0.0 && z >= base && z <= base + height {
                        best = Some(t);
                    }
                }
            }
            if dz != 0.0 {
                let top = base + height;
                let t = top / dz;
                let (px, py) = (t * dx - x, t * dy - y);
                if t > 0.0 && px * px + py * py <= radius * radius && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
            best
        }
    }
}

/// Scan a scene. Points are emitted ring by ring, each ring sweeping
/// azimuth from -180° upwards, with rings and labels attached.
pub fn scan(scene: &Scene, sensor: &SensorModel, rng: &mut impl Rng, frame_id: &str) -> SynthFrame {
    let noise = Normal::new(0.0, sensor.range_noise.max(1e-12)).expect("valid sigma");
    let steps = (360.0 / sensor.azimuth_step_deg).round() as usize;
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (ring, &el) in sensor.elevations_deg.iter().enumerate() {
        let (se, ce) = el.to_radians().sin_cos();
        // per-ring azimuth offset keeps bins from aligning exactly with samples
        let offset = rng.random_range(0.0..sensor.azimuth_step_deg);
        for k in 0..steps {
            let az = -180.0 + offset + k as f64 * sensor.azimuth_step_deg;
            if az >= 180.0 {
                continue;
            }
            let (sa, ca) = az.to_radians().sin_cos();
            let dir = [ce * ca, ce * sa, se];
            let Some((t, ground)) = scene.cast(dir, sensor.mount_height, sensor.max_range) else {
                continue;
            };
            if t < sensor.min_range || rng.random_bool(sensor.dropout) {
                continue;
            }
            let t = t + noise.sample(rng);
            let intensity = if ground {
                rng.random_range(0.05..0.45)
            } else {
                rng.random_range(0.1..0.9)
            };
            points.push(Point::new(t * dir[0], t * dir[1], t * dir[2], intensity).with_ring(ring as u16));
            truth.push(ground);
        }
    }
    SynthFrame { cloud: PointCloud::new(points, sensor.num_rings(), frame_id), truth }
}

/// A random scene scanned with a seeded RNG.
pub fn generate_frame(seed: u64, sensor: &SensorModel) -> SynthFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng, sensor.mount_height);
    scan(&scene, sensor, &mut rng, &format!("synth_{seed:06}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::horizontal_range;

    #[test]
    fn flat_world_is_all_ground_at_mount_height() {
        let scene = Scene { ground: Ground::Flat, obstacles: vec![] };
        let sensor = SensorModel { range_noise: 0.0, dropout: 0.0, ..SensorModel::hdl64(1.0) };
        let f = scan(&scene, &sensor, &mut ChaCha8Rng::seed_from_u64(0), "flat");
        assert!(!f.cloud.is_empty());
        assert!(f.truth.iter().all(|&g| g));
        for p in &f.cloud.points {
            assert!((p.up + 1.73).abs() < 1e-9);
        }
    }

    #[test]
    fn wall_blocks_ground() {
        let wall = Obstacle::Box { x: 10.0, y: 0.0, half_len: 0.2, half_wid: 20.0, yaw: 0.0, height: 10.0, base: -2.0 };
        let scene = Scene { ground: Ground::Flat, obstacles: vec![wall] };
        let sensor = SensorModel { range_noise: 0.0, dropout: 0.0, ..SensorModel::hdl64(1.0) };
        let f = scan(&scene, &sensor, &mut ChaCha8Rng::seed_from_u64(0), "wall");
        for (p, &g) in f.cloud.points.iter().zip(&f.truth) {
            if !g {
                assert!((p.forward - 9.8).abs() < 1e-6, "hit wall face at {}", p.forward);
            } else if p.left.abs() < 15.0 {
                assert!(p.forward < 9.8 + 1e-9);
            }
        }
        assert!(f.truth.iter().any(|&g| !g));
    }

    #[test]
    fn ramp_rises() {
        let scene = Scene { ground: Ground::Ramp { dir_x: 1.0, dir_y: 0.0, start: 10.0, slope: 0.1 }, obstacles: vec![] };
        let sensor = SensorModel { range_noise: 0.0, dropout: 0.0, ..SensorModel::hdl64(1.0) };
        let f = scan(&scene, &sensor, &mut ChaCha8Rng::seed_from_u64(0), "ramp");
        for p in &f.cloud.points {
            let expect = scene.ground_height(p.forward, p.left, 1.73);
            assert!((p.up - expect).abs() < 1e-6);
        }
        assert!(f.cloud.points.iter().any(|p| p.up > -1.0));
    }

    #[test]
    fn cylinder_hit_distance() {
        let pole = Obstacle::Cylinder { x: 10.0, y: 0.0, radius: 0.5, height: 5.0, base: -2.0 };
        let scene = Scene { ground: Ground::Flat, obstacles: vec![pole] };
        let (t, g) = scene.cast([1.0, 0.0, 0.0], 1.73, 100.0).unwrap();
        assert!(!g);
        assert!((t - 9.5).abs() < 1e-9);
    }

    #[test]
    fn generated_frames_are_deterministic_and_sized() {
        let sensor = SensorModel::default();
        let a = generate_frame(3, &sensor);
        let b = generate_frame(3, &sensor);
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.truth, b.truth);
        assert!(a.cloud.len() > 60_000, "{} points", a.cloud.len());
        let ground = a.truth.iter().filter(|&&g| g).count();
        assert!(ground > a.cloud.len() / 4 && ground < a.cloud.len());
        assert!(a.cloud.points.iter().all(|p| horizontal_range(p) <= 100.5));
    }
}
