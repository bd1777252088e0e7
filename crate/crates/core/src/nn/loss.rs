use crate::encoder::LabelGrid;
use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Output channel holding the ground logit; channel 1 is non-ground.
pub const GROUND_CHANNEL: usize = 0;

/// Per-cell probability of ground. The non-ground probability is implied
/// as `1 - p_ground`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub rows: usize,
    pub cols: usize,
    pub p_ground: Vec<f64>,
}

impl ProbabilityMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.p_ground[row * self.cols + col]
    }
}

/// Ground probability of a two-way softmax.
pub fn ground_probability(l_ground: f64, l_other: f64) -> f64 {
    let m = l_ground.max(l_other);
    let eg = (l_ground - m).exp();
    let eo = (l_other - m).exp();
    eg / (eg + eo)
}

/// Softmax over channels of a 2-channel logit batch.
pub fn softmax_probs(logits: &Tensor) -> Result<Vec<ProbabilityMap>> {
    let [n, c, h, w] = logits.shape;
    if c != 2 {
        return Err(Error::Shape(format!("expected 2 logit channels, got {c}")));
    }
    let hw = h * w;
    Ok((0..n)
        .map(|b| {
            let item = logits.item(b);
            let (g, o) = item.split_at(hw);
            ProbabilityMap { rows: h, cols: w, p_ground: g.iter().zip(o).map(|(&a, &b)| ground_probability(a, b)).collect() }
        })
        .collect())
}

pub struct LossOutput {
    /// Mean cross-entropy over unmasked cells of the whole batch.
    pub loss: f64,
    pub grad: Tensor,
    pub probs: Vec<ProbabilityMap>,
    pub unmasked: usize,
    /// Unmasked cells whose argmax matches the target.
    pub correct: usize,
}

/// Two-way softmax cross-entropy against per-cell targets, one target grid
/// per batch item.
pub fn softmax_xent(logits: &Tensor, targets: &[&LabelGrid]) -> Result<LossOutput> {
    let [n, c, h, w] = logits.shape;
    if c != 2 {
        return Err(Error::Shape(format!("expected 2 logit channels, got {c}")));
    }
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for a batch of {n}", targets.len())));
    }
    for t in targets {
        if t.rows != h || t.cols != w || t.ground.len() != h * w || t.mask.len() != h * w {
            return Err(Error::Shape(format!("target grid {}x{} vs logits {h}x{w}", t.rows, t.cols)));
        }
    }
    let unmasked: usize = targets.iter().map(|t| t.unmasked()).sum();
    if unmasked == 0 {
        return Err(Error::EmptyMask);
    }
    let hw = h * w;
    let scale = 1.0 / unmasked as f64;
    let mut grad = Tensor::zeros(logits.shape);
    let mut probs = Vec::with_capacity(n);
    let mut total = 0.0;
    let mut correct = 0;
    for (b, t) in targets.iter().enumerate() {
        let item = logits.item(b);
        let gi = grad.item_mut(b);
        let mut p_ground = Vec::with_capacity(hw);
        for i in 0..hw {
            let (lg, lo) = (item[i], item[hw + i]);
            let pg = ground_probability(lg, lo);
            p_ground.push(pg);
            if !t.mask[i] {
                continue;
            }
            let (l_target, l_other) = if t.ground[i] { (lg, lo) } else { (lo, lg) };
            // -ln softmax[target] = logsumexp - l_target, computed stably
            let m = l_target.max(l_other);
            let lse = m + (-(l_target - l_other).abs()).exp().ln_1p();
            total += lse - l_target;
            let target_g = if t.ground[i] { 1.0 } else { 0.0 };
            gi[i] = (pg - target_g) * scale;
            gi[hw + i] = ((1.0 - pg) - (1.0 - target_g)) * scale;
            if (pg >= 0.5) == t.ground[i] {
                correct += 1;
            }
        }
        probs.push(ProbabilityMap { rows: h, cols: w, p_ground });
    }
    Ok(LossOutput { loss: total * scale, grad, probs, unmasked, correct })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(ground: Vec<bool>, mask: Vec<bool>, cols: usize) -> LabelGrid {
        LabelGrid { rows: ground.len() / cols, cols, ground, mask }
    }

    #[test]
    fn symmetric_logits() {
        let logits = Tensor::from_vec([1, 2, 1, 1], vec![0.3, 0.3]).unwrap();
        let t = grid(vec![true], vec![true], 1);
        let out = softmax_xent(&logits, &[&t]).unwrap();
        assert_eq!(out.probs[0].p_ground[0], 0.5);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits() {
        let logits = Tensor::from_vec([1, 2, 1, 2], vec![20.0, 0.0, 0.0, 20.0]).unwrap();
        let t = grid(vec![true, false], vec![true, true], 2);
        let out = softmax_xent(&logits, &[&t]).unwrap();
        assert!(out.loss < 1e-8 && out.loss > 0.0);
        assert_eq!(out.correct, 2);
    }

    #[test]
    fn masked_cells_carry_no_gradient() {
        let logits = Tensor::from_vec([1, 2, 1, 2], vec![1.0, -1.0, 0.5, 0.2]).unwrap();
        let t = grid(vec![true, true], vec![true, false], 2);
        let out = softmax_xent(&logits, &[&t]).unwrap();
        assert_eq!(out.grad.data[1], 0.0);
        assert_eq!(out.grad.data[3], 0.0);
        assert_eq!(out.unmasked, 1);
    }

    #[test]
    fn empty_mask_and_channel_errors() {
        let logits = Tensor::zeros([1, 2, 1, 2]);
        let t = grid(vec![true, true], vec![false, false], 2);
        assert!(matches!(softmax_xent(&logits, &[&t]), Err(Error::EmptyMask)));
        let three = Tensor::zeros([1, 3, 1, 2]);
        assert!(matches!(softmax_xent(&three, &[&t]), Err(Error::Shape(_))));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::from_vec([1, 2, 1, 1], vec![800.0, -800.0]).unwrap();
        let t = grid(vec![false], vec![true], 1);
        let out = softmax_xent(&logits, &[&t]).unwrap();
        assert!((out.loss - 1600.0).abs() < 1e-9);
        assert!(out.grad.all_finite());
        assert_eq!(out.probs[0].p_ground[0] + (1.0 - out.probs[0].p_ground[0]), 1.0);
    }
}
