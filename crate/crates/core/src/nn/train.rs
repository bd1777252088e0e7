//! Mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{DenseFrame, LabelGrid};
use crate::error::{Error, Result};

use super::network::{frame_tensor, NetworkSpec};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Multiplicative learning-rate decay applied every `decay_step` iterations.
    pub lr_decay: f64,
    /// Defaults to half of `iterations` (rounded up).
    pub decay_step: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 4,
            iterations: 1000,
            lr_decay: 0.1,
            decay_step: None,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning-rate decay must be positive".into()));
        }
        if self.decay_step == Some(0) {
            return Err(Error::Config("decay step must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let step = self.decay_step.unwrap_or_else(|| self.iterations.div_ceil(2)).max(1);
        self.learning_rate * self.lr_decay.powi((iteration / step) as i32)
    }
}

/// One training frame with its per-cell targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub target: LabelGrid,
}

impl Sample {
    pub fn new(frame: &DenseFrame, target: LabelGrid) -> Result<Self> {
        if target.rows != frame.rows || target.cols != frame.cols {
            return Err(Error::Shape("target grid does not match the frame".into()));
        }
        Ok(Self { input: frame_tensor(frame)?, target })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationStats {
    pub iteration: usize,
    pub loss: f64,
    /// Fraction of unmasked cells classified correctly in this batch.
    pub accuracy: f64,
    pub learning_rate: f64,
}

/// Train with default progress handling (none).
pub fn train(
    net: &NetworkSpec,
    dataset: &[Sample],
    cfg: &TrainConfig,
    init: Option<&NetworkSpec>,
) -> Result<(NetworkSpec, Vec<f64>)> {
    train_with_progress(net, dataset, cfg, init, |_| {})
}

/// Train `net` (or `init`'s weights, when given) and return the final
/// network plus the loss of every iteration.
///
/// Batches are drawn from a stream of seeded per-epoch permutations of the
/// dataset, so a fixed seed reproduces the run bit for bit.
pub fn train_with_progress(
    net: &NetworkSpec,
    dataset: &[Sample],
    cfg: &TrainConfig,
    init: Option<&NetworkSpec>,
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<(NetworkSpec, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let mut net = match init {
        Some(init) => {
            if init.topology != net.topology || init.layers != net.layers {
                return Err(Error::Corruption(format!(
                    "initial weights are for {}, training {}",
                    init.topology, net.topology
                )));
            }
            init.clone()
        }
        None => net.clone(),
    };
    net.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut velocity: Vec<Option<(Vec<f64>, Vec<f64>)>> = net
        .weights
        .iter()
        .map(|w| w.as_ref().map(|w| (vec![0.0; w.kernel.len()], vec![0.0; w.bias.len()])))
        .collect();
    let mut history = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let inputs: Vec<&Tensor> = batch.iter().map(|&i| &dataset[i].input).collect();
        let targets: Vec<&LabelGrid> = batch.iter().map(|&i| &dataset[i].target).collect();
        let input = Tensor::stack(&inputs)?;

        let (logits, cache) = net.forward_cached(&input)?;
        let out = super::loss::softmax_xent(&logits, &targets)?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence { iteration, loss: out.loss });
        }
        let (grads, _) = net.backward(&cache, out.grad)?;

        let lr = cfg.learning_rate_at(iteration);
        for ((w, g), v) in net.weights.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
            let (Some(w), Some(g), Some((vk, vb))) = (w.as_mut(), g.as_ref(), v.as_mut()) else {
                continue;
            };
            sgd_step(&mut w.kernel.data, &g.kernel.data, vk, lr, cfg.momentum);
            sgd_step(&mut w.bias, &g.bias, vb, lr, cfg.momentum);
        }
        history.push(out.loss);
        on_iteration(&IterationStats {
            iteration,
            loss: out.loss,
            accuracy: out.correct as f64 / out.unmasked as f64,
            learning_rate: lr,
        });
    }
    Ok((net, history))
}

fn sgd_step(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + lr * g;
        *w -= *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{build_topology, Topology};

    fn toy_sample(seed: u64) -> Sample {
        let (rows, cols) = (4, 8);
        let mut frame = DenseFrame::empty(rows, cols);
        let mut ground = vec![false; rows * cols];
        for i in 0..rows * cols {
            let g = !(i + seed as usize).is_multiple_of(3);
            ground[i] = g;
            frame.values[i] = if g { -0.5 } else { 0.2 };
            frame.values[rows * cols + i] = 2.0;
            frame.values[2 * rows * cols + i] = 0.3;
        }
        frame.normalized = true;
        Sample::new(&frame, LabelGrid { rows, cols, ground, mask: vec![true; rows * cols] }).unwrap()
    }

    #[test]
    fn zero_iterations_returns_init() {
        let net = build_topology(Topology::L03DeconvInc, 1);
        let init = build_topology(Topology::L03DeconvInc, 2);
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        let (out, hist) = train(&net, &[toy_sample(0)], &cfg, Some(&init)).unwrap();
        assert_eq!(out, init);
        assert!(hist.is_empty());
    }

    #[test]
    fn empty_dataset_and_bad_init() {
        let net = build_topology(Topology::L03DeconvInc, 1);
        assert!(matches!(train(&net, &[], &TrainConfig::default(), None), Err(Error::EmptyInput(_))));
        let other = build_topology(Topology::L04ConvDec, 1);
        assert!(matches!(
            train(&net, &[toy_sample(0)], &TrainConfig::default(), Some(&other)),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let net = build_topology(Topology::L04ConvDec, 5);
        let data = vec![toy_sample(0), toy_sample(1), toy_sample(2)];
        let cfg = TrainConfig { iterations: 30, batch_size: 2, ..Default::default() };
        let (a, ha) = train(&net, &data, &cfg, None).unwrap();
        let (b, hb) = train(&net, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap() < &ha[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let net = build_topology(Topology::L04ConvDec, 5);
        let mut bad = toy_sample(0);
        bad.input.data[3] = f64::NAN;
        let cfg = TrainConfig { iterations: 5, batch_size: 1, ..Default::default() };
        match train(&net, &[bad], &cfg, None) {
            Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h)),
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig { iterations: 200, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(0), 0.01);
        assert_eq!(cfg.learning_rate_at(99), 0.01);
        assert!((cfg.learning_rate_at(100) - 0.001).abs() < 1e-15);
        assert!((cfg.learning_rate_at(199) - 0.001).abs() < 1e-15);
    }
}
