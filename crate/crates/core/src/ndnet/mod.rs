//! Dense tensors, a ReLU multilayer perceptron with exact backprop, and losses.

pub mod loss;
pub mod mlp;
pub mod tensor;

pub use loss::{accuracy, loss_and_grad, loss_eval, per_sample_cross_entropy, per_sample_gradients, LossKind};
pub use mlp::{Dense, ForwardCache, MlpModel};
pub use tensor::Tensor2;
