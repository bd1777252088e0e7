//! Ground segmentation for rotating multi-beam LiDAR.
//!
//! A sparse point cloud is aggregated into polar bins (one row per laser
//! ring, one column per azimuth sector), encoded as a dense three-channel
//! matrix of height, depth and intensity, and every cell is classified as
//! ground or non-ground by a shallow fully-convolutional network.
//!
//! The crate is organised by stage:
//!
//! - [`cloud`]: KITTI-style binary frames and ring derivation
//! - [`encoder`]: polar binning, dense encoding, interpolation, normalization
//! - [`labels`] / [`flood`]: per-point annotations and seed flooding along rings
//! - [`autolabel`]: heuristic labels for pretraining
//! - [`nn`]: tensors, (de)convolution, backprop, topologies and training
//! - [`eval`]: range masks, precision/recall curves, AP and F-score
//! - [`pipeline`]: cloud to network input and network output to point scores
//! - [`synth`]: a ray-cast synthetic world with exact labels
//! - [`manifest`]: reproducible train/eval splits

// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autolabel;
pub mod cloud;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod flood;
pub mod io_util;
pub mod labels;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use autolabel::{auto_label, AutoLabelConfig};
pub use cloud::{derive_rings, horizontal_range, load_kitti_bin, Layout, Point, PointCloud};
pub use encoder::{
    bin_points, encode_frame, grid_to_point_probs, interpolate_empty, labels_to_grid, normalize,
    polar_cone, BinGrid, DenseFrame, EncoderConfig, LabelGrid,
};
pub use error::{Error, Result};
pub use eval::{average_precision, best_f_score, fixed_operating_points, pr_curve, range_mask, PrCurve};
pub use flood::{apply_seeds, flood_ring, toggle_points, FloodConfig, SeedPoint};
pub use labels::{Label, PointLabels};
pub use pipeline::{encode_normalized, predict_points, training_sample};
pub use nn::{
    build_topology, forward, load_model, save_model, train, NetworkSpec, ProbabilityMap, Tensor,
    Topology, TrainConfig,
};
