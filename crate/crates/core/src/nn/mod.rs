//! A small dense-tensor engine for fully-convolutional segmentation:
//! (transposed) convolutions with circular horizontal padding, ReLU, a
//! two-way softmax cross-entropy, back-propagation and SGD with momentum.

pub mod loss;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;

pub use loss::{softmax_probs, softmax_xent, LossOutput, ProbabilityMap};
pub use model_io::{load_model, load_model_as, model_from_bytes, model_to_bytes, save_model};
pub use network::{build_topology, forward, frame_tensor, LayerKind, LayerSpec, LayerWeights, NetworkSpec, Topology};
pub use ops::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, relu, relu_backward, Stride};
pub use tensor::Tensor;
pub use train::{train, train_with_progress, IterationStats, Sample, TrainConfig};
