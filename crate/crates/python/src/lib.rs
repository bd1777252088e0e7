//! Python bindings: clouds, encoding, labels, flooding, networks and metrics.
//!
//! Heavy calls (encoding, inference, training) release the interpreter lock.

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use groundseg as gs;
use groundseg::encoder::{BinGrid, DenseFrame, CH_DEPTH, CH_HEIGHT, CH_INTENSITY};
use groundseg::eval::{EvalReport, ScoreTally};

fn err(e: gs::Error) -> PyErr {
    match e {
        gs::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        gs::Error::Index { .. } => PyIndexError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = gs::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(name = "PointCloud", module = "groundseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud {
    inner: gs::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    /// Build from `(forward, left, up, intensity)` or
    /// `(forward, left, up, intensity, ring)` tuples.
    #[new]
    #[pyo3(signature = (points, num_rings = 64, frame_id = "cloud"))]
    fn new(points: Vec<Vec<f64>>, num_rings: usize, frame_id: &str) -> PyResult<Self> {
        let mut pts = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let pt = match p.as_slice() {
                [f, l, u, it] => gs::Point::new(*f, *l, *u, *it),
                [f, l, u, it, r] if *r >= 0.0 && r.fract() == 0.0 && *r <= u16::MAX as f64 => {
                    gs::Point::new(*f, *l, *u, *it).with_ring(*r as u16)
                }
                _ => return Err(PyValueError::new_err(format!("point {i}: expected 4 values or 4 plus a ring index"))),
            };
            pts.push(pt);
        }
        Ok(Self { inner: gs::PointCloud::new(pts, num_rings, frame_id) })
    }

    /// Read a KITTI-style `.bin` scan (`layout` is "xyzi" or "xyzir").
    #[staticmethod]
    #[pyo3(signature = (path, layout = "xyzi", num_rings = 64))]
    fn load_bin(path: &str, layout: &str, num_rings: usize) -> PyResult<Self> {
        let layout: gs::Layout = parse(layout)?;
        let inner = gs::cloud::load_kitti_bin_with(path, layout, num_rings).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn frame_id(&self) -> String {
        self.inner.frame_id.clone()
    }

    #[getter]
    fn num_rings(&self) -> usize {
        self.inner.num_rings
    }

    /// `(forward, left, up, intensity, ring or None)` per point.
    fn points(&self) -> Vec<(f64, f64, f64, f64, Option<u16>)> {
        self.inner.points.iter().map(|p| (p.forward, p.left, p.up, p.intensity, p.ring)).collect()
    }

    /// Assign rings to ringless points from acquisition order.
    fn derive_rings(&self) -> PyResult<Self> {
        Ok(Self { inner: gs::derive_rings(&self.inner).map_err(err)? })
    }

    fn horizontal_ranges(&self) -> Vec<f64> {
        self.inner.points.iter().map(gs::horizontal_range).collect()
    }

    fn to_bin(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_xyzi_bytes()).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({:?}, {} points)", self.inner.frame_id, self.inner.len())
    }
}

#[pyclass(name = "Labels", module = "groundseg_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyLabels {
    inner: gs::PointLabels,
}

fn label_from(v: i64) -> PyResult<gs::Label> {
    u8::try_from(v)
        .ok()
        .and_then(gs::Label::from_byte)
        .ok_or_else(|| PyValueError::new_err(format!("label {v} is not 0, 1 or 255")))
}

#[pymethods]
impl PyLabels {
    /// Labels as bytes: 0 non-ground, 1 ground, 255 unlabeled.
    #[new]
    #[pyo3(signature = (labels, frame_id = "labels"))]
    fn new(labels: Vec<i64>, frame_id: &str) -> PyResult<Self> {
        let labels = labels.into_iter().map(label_from).collect::<PyResult<_>>()?;
        Ok(Self { inner: gs::PointLabels { labels, frame_id: frame_id.to_string() } })
    }

    #[staticmethod]
    #[pyo3(signature = (n, frame_id = "labels"))]
    fn unlabeled(n: usize, frame_id: &str) -> Self {
        Self { inner: gs::PointLabels::unlabeled(n, frame_id) }
    }

    #[staticmethod]
    #[pyo3(signature = (ground, frame_id = "labels"))]
    fn from_ground(ground: Vec<bool>, frame_id: &str) -> Self {
        Self { inner: gs::PointLabels::from_binary(&ground, frame_id) }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: gs::PointLabels::load(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Label bytes as a list of ints (a `Vec<u8>` would surface as `bytes`).
    fn values(&self) -> Vec<u32> {
        self.inner.body_bytes().into_iter().map(u32::from).collect()
    }

    /// Anything not explicitly ground counts as non-ground.
    fn ground(&self) -> Vec<bool> {
        self.inner.binarize()
    }

    #[getter]
    fn labeled_fraction(&self) -> f64 {
        self.inner.labeled_fraction()
    }

    /// Set the given points to `value` and return the indices that changed.
    fn toggle(&mut self, indices: Vec<usize>, value: i64) -> PyResult<Vec<usize>> {
        let next = gs::toggle_points(&self.inner, &indices, label_from(value)?).map_err(err)?;
        let changed = changed(&self.inner, &next);
        self.inner = next;
        Ok(changed)
    }

    fn __repr__(&self) -> String {
        format!("Labels({:?}, {} points, {:.1}% labeled)", self.inner.frame_id, self.inner.len(), 100.0 * self.inner.labeled_fraction())
    }
}

fn changed(a: &gs::PointLabels, b: &gs::PointLabels) -> Vec<usize> {
    (0..a.len()).filter(|&i| a.labels[i] != b.labels[i]).collect()
}

#[pyclass(name = "Encoder", module = "groundseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyEncoder {
    cfg: gs::EncoderConfig,
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (bin_width = 1.0, num_rings = 64, height_norm = 3.0, max_range = Some(60.0)))]
    fn new(bin_width: f64, num_rings: usize, height_norm: f64, max_range: Option<f64>) -> PyResult<Self> {
        let cfg = gs::EncoderConfig { bin_width_deg: bin_width, num_rings, height_norm, max_range };
        cfg.validate().map_err(err)?;
        Ok(Self { cfg })
    }

    /// Bin and interpolate a cloud (rings derived when missing). The result
    /// holds raw heights, ready for flooding; `save_normalized` writes the
    /// network input.
    fn encode(&self, py: Python<'_>, cloud: &PyPointCloud) -> PyResult<PyFrame> {
        let cfg = self.cfg;
        let cloud = cloud.inner.clone();
        py.detach(move || {
            let ringed = gs::derive_rings(&cloud)?;
            let (frame, grid) = gs::encode_frame(&ringed, &cfg)?;
            Ok(PyFrame { frame, grid, cfg })
        })
        .map_err(err)
    }
}

/// An encoded scan: the dense matrix plus the point-to-cell map.
#[pyclass(name = "Frame", module = "groundseg_py", frozen, skip_from_py_object)]
pub struct PyFrame {
    frame: DenseFrame,
    grid: BinGrid,
    cfg: gs::EncoderConfig,
}

#[pymethods]
impl PyFrame {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.frame.rows, self.frame.cols)
    }

    /// One channel ("height", "depth" or "intensity") as rows of floats.
    fn channel(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let c = match name {
            "height" => CH_HEIGHT,
            "depth" => CH_DEPTH,
            "intensity" => CH_INTENSITY,
            _ => return Err(PyValueError::new_err(format!("unknown channel `{name}`"))),
        };
        Ok(self.frame.plane(c).chunks(self.frame.cols).map(<[f64]>::to_vec).collect())
    }

    fn occupancy(&self) -> Vec<Vec<bool>> {
        self.frame.occupancy.chunks(self.frame.cols).map(<[bool]>::to_vec).collect()
    }

    /// `(ring, column)` of every point, or None outside the encoder's cone.
    fn point_cells(&self) -> Vec<Option<(usize, usize)>> {
        let cols = self.grid.cols;
        self.grid.point_cell.iter().map(|c| c.map(|c| (c as usize / cols, c as usize % cols))).collect()
    }

    /// Point indices binned into one cell.
    fn cell_points(&self, ring: usize, column: usize) -> PyResult<Vec<u32>> {
        if ring >= self.grid.rows || column >= self.grid.cols {
            return Err(PyIndexError::new_err(format!("cell ({ring}, {column}) outside {}x{}", self.grid.rows, self.grid.cols)));
        }
        Ok(self.grid.cell(ring, column).to_vec())
    }

    fn save_normalized(&self, path: &str) -> PyResult<()> {
        gs::normalize(&self.frame, &self.cfg).map_err(err)?.save(path).map_err(err)
    }

    /// Flood each `(ring, column)` seed along its ring and mark every point
    /// of the flooded cells ground, on top of `base`.
    #[pyo3(signature = (seeds, base, t1 = 0.03, t2 = 0.07))]
    fn flood(&self, seeds: Vec<(usize, usize)>, base: &PyLabels, t1: f64, t2: f64) -> PyResult<PyLabels> {
        let seeds: Vec<gs::SeedPoint> = seeds.into_iter().map(|(ring, column)| gs::SeedPoint { ring, column }).collect();
        let cfg = gs::FloodConfig { t1, t2 };
        let inner = gs::apply_seeds(&self.grid, &self.frame, &seeds, &cfg, &base.inner).map_err(err)?;
        Ok(PyLabels { inner })
    }
}

#[pyclass(name = "Network", module = "groundseg_py")]
pub struct PyNetwork {
    net: gs::NetworkSpec,
}

#[pymethods]
impl PyNetwork {
    /// Fresh seeded weights for one of `Network.topologies()`.
    #[new]
    #[pyo3(signature = (topology, seed = 0))]
    fn new(topology: &str, seed: u64) -> PyResult<Self> {
        Ok(Self { net: gs::build_topology(parse(topology)?, seed) })
    }

    #[staticmethod]
    fn topologies() -> Vec<&'static str> {
        gs::Topology::ALL.iter().map(|t| t.name()).collect()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { net: gs::load_model(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        gs::save_model(&self.net, path).map_err(err)
    }

    #[getter]
    fn topology(&self) -> &'static str {
        self.net.topology.name()
    }

    fn parameter_count(&self) -> usize {
        self.net.weights.iter().flatten().map(|w| w.kernel.data.len() + w.bias.len()).sum()
    }

    fn zero_weights(&mut self) {
        self.net.zero_weights();
    }

    /// Ground probability per point; points outside the cone score 0.
    #[pyo3(signature = (cloud, encoder = None))]
    fn predict(&self, py: Python<'_>, cloud: &PyPointCloud, encoder: Option<&PyEncoder>) -> PyResult<Vec<f64>> {
        let cfg = encoder.map_or_else(gs::EncoderConfig::default, |e| e.cfg);
        let net = &self.net;
        let cloud = &cloud.inner;
        py.detach(|| gs::predict_points(net, cloud, &cfg)).map_err(err)
    }

    /// Train in place on `(cloud, labels)` pairs; returns per-iteration loss.
    #[pyo3(signature = (clouds, labels, iterations = 1000, learning_rate = 0.01, momentum = 0.9,
                        batch_size = 4, lr_decay = 0.1, seed = 0, encoder = None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        clouds: Vec<PyRef<'_, PyPointCloud>>,
        labels: Vec<PyRef<'_, PyLabels>>,
        iterations: usize,
        learning_rate: f64,
        momentum: f64,
        batch_size: usize,
        lr_decay: f64,
        seed: u64,
        encoder: Option<&PyEncoder>,
    ) -> PyResult<Vec<f64>> {
        if clouds.len() != labels.len() {
            return Err(PyValueError::new_err(format!("{} clouds but {} label sets", clouds.len(), labels.len())));
        }
        let enc = encoder.map_or_else(gs::EncoderConfig::default, |e| e.cfg);
        let cfg = gs::TrainConfig { learning_rate, momentum, batch_size, iterations, lr_decay, decay_step: None, rng_seed: seed };
        let pairs: Vec<(gs::PointCloud, gs::PointLabels)> =
            clouds.iter().zip(&labels).map(|(c, l)| (c.inner.clone(), l.inner.clone())).collect();
        let net = &self.net;
        let (trained, history) = py
            .detach(move || -> gs::Result<_> {
                let samples =
                    pairs.iter().map(|(c, l)| gs::training_sample(c, l, &enc)).collect::<gs::Result<Vec<_>>>()?;
                gs::train(net, &samples, &cfg, None)
            })
            .map_err(err)?;
        self.net = trained;
        Ok(history)
    }

    fn __repr__(&self) -> String {
        format!("Network({}, {} parameters)", self.net.topology, self.parameter_count())
    }
}

/// Height-statistics ground labels for pretraining.
#[pyfunction]
#[pyo3(signature = (cloud, cell_size = 0.5, max_height_mean = -1.4, max_height_spread = 0.15, max_height_stddev = 0.05))]
fn auto_label(
    cloud: &PyPointCloud,
    cell_size: f64,
    max_height_mean: f64,
    max_height_spread: f64,
    max_height_stddev: f64,
) -> PyResult<PyLabels> {
    let cfg = gs::AutoLabelConfig { cell_size, max_height_mean, max_height_spread, max_height_stddev };
    Ok(PyLabels { inner: gs::auto_label(&cloud.inner, &cfg).map_err(err)? })
}

/// AP, best F-score and the fixed operating points of `scores` against
/// boolean `truth`, over the points where `mask` is true.
#[pyfunction]
#[pyo3(signature = (scores, truth, mask = None, target_recall = 0.992, target_precision = 0.924))]
fn evaluate<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    truth: Vec<bool>,
    mask: Option<Vec<bool>>,
    target_recall: f64,
    target_precision: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let tally = ScoreTally::from_points(&scores, &truth, mask.as_deref()).map_err(err)?;
    let curve = tally.curve().map_err(err)?;
    let r = EvalReport::from_curve(&curve, target_recall, target_precision);
    let d = PyDict::new(py);
    d.set_item("average_precision", r.average_precision)?;
    d.set_item("best_f_score", r.best_f_score)?;
    d.set_item("precision_at_recall", r.operating.precision_at_recall)?;
    d.set_item("recall_at_precision", r.operating.recall_at_precision)?;
    d.set_item("positives", r.positives)?;
    d.set_item("negatives", r.negatives)?;
    d.set_item("report", r.to_text())?;
    Ok(d)
}

/// Points within `max_range` meters horizontally (all when None).
#[pyfunction]
#[pyo3(signature = (cloud, max_range = Some(60.0)))]
fn range_mask(cloud: &PyPointCloud, max_range: Option<f64>) -> Vec<bool> {
    gs::range_mask(&cloud.inner, max_range)
}

/// A seeded ray-cast scan with exact per-point ground truth.
#[pyfunction]
#[pyo3(signature = (seed, azimuth_step = 0.16))]
fn synth_frame(py: Python<'_>, seed: u64, azimuth_step: f64) -> PyResult<(PyPointCloud, Vec<bool>)> {
    if !(azimuth_step > 0.0 && azimuth_step <= 10.0) {
        return Err(PyValueError::new_err("azimuth_step must lie in (0, 10]"));
    }
    let f = py.detach(|| gs::synth::generate_frame(seed, &gs::synth::SensorModel::hdl64(azimuth_step)));
    Ok((PyPointCloud { inner: f.cloud }, f.truth))
}

#[pymodule]
fn groundseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(auto_label, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(range_mask, m)?)?;
    m.add_function(wrap_pyfunction!(synth_frame, m)?)?;
    m.add("GROUND", 1)?;
    m.add("NON_GROUND", 0)?;
    m.add("UNLABELED", 255)?;
    Ok(())
}
