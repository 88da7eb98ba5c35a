//! Numeric kernel: tensors, layer passes, loss, and the optimizer.

pub mod layers;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use layers::{
    conv1d_forward, dense_forward, dropout_apply, embedding_forward, maxpool1d_forward, softmax,
    Activation, Conv1dOp, DenseOp, DropoutMask, DropoutMode, DropoutOp, EmbeddingOp, LayerGrads,
    MaxPool1dOp,
};
pub use loss::{cce_loss, softmax_cce_backward, LOG_CLAMP};
pub use optim::{sgd_step, Parameterized};
pub use rng::Rng;
pub use tensor::Tensor;
