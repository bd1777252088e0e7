//! Glue between the stages: cloud to network input, network output to
//! per-point scores.

use crate::cloud::{derive_rings, PointCloud};
use crate::encoder::{encode_frame, grid_to_point_probs, labels_to_grid, normalize, BinGrid, DenseFrame, EncoderConfig};
use crate::error::Result;
use crate::labels::PointLabels;
use crate::nn::{forward, NetworkSpec, Sample};

/// Normalized network input plus the point-to-cell map. Rings are derived
/// from acquisition order for points that lack one.
pub fn encode_normalized(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<(DenseFrame, BinGrid)> {
    let ringed = derive_rings(cloud)?;
    let (frame, grid) = encode_frame(&ringed, cfg)?;
    Ok((normalize(&frame, cfg)?, grid))
}

pub fn training_sample(cloud: &PointCloud, labels: &PointLabels, cfg: &EncoderConfig) -> Result<Sample> {
    let (frame, grid) = encode_normalized(cloud, cfg)?;
    Sample::new(&frame, labels_to_grid(labels, &grid)?)
}

/// Ground probability of every point; points outside the encoder's cone
/// score 0.
pub fn predict_points(net: &NetworkSpec, cloud: &PointCloud, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    let (frame, grid) = encode_normalized(cloud, cfg)?;
    grid_to_point_probs(&forward(net, &frame)?, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_topology, Topology};
    use crate::synth::{generate_frame, SensorModel};

    #[test]
    fn zero_net_scores_half_everywhere() {
        let f = generate_frame(4, &SensorModel::hdl64(1.0));
        let mut net = build_topology(Topology::L04ConvDec, 0);
        net.zero_weights();
        let cfg = EncoderConfig::default();
        let scores = predict_points(&net, &f.cloud, &cfg).unwrap();
        let grid = encode_normalized(&f.cloud, &cfg).unwrap().1;
        for (s, c) in scores.iter().zip(&grid.point_cell) {
            assert_eq!(*s, if c.is_some() { 0.5 } else { 0.0 });
        }
    }

    #[test]
    fn sample_masks_only_empty_cells() {
        let f = generate_frame(5, &SensorModel::hdl64(1.0));
        let labels = PointLabels::from_binary(&f.truth, "s");
        let cfg = EncoderConfig::default();
        let s = training_sample(&f.cloud, &labels, &cfg).unwrap();
        let (frame, _) = encode_normalized(&f.cloud, &cfg).unwrap();
        assert_eq!(s.target.mask, frame.occupancy);
    }
}
