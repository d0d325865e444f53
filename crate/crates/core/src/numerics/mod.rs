//! Deterministic kernels and hand-written backward passes for the layer set
//! used by the sample-level networks and the song classifier.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod pool;

pub use activation::{relu, sigmoid, softmax, Activation, ActivationKind};
pub use conv::{conv1d, conv1d_backward, conv1d_output_len, Conv1d, Padding};
pub use dense::{dense, dense_backward, Dense};
pub use dropout::Dropout;
pub use gradcheck::{grad_check, FnObjective, GradCheckConfig, GradCheckReport, Objective};
pub use loss::{bce, bce_logit_grad, ce, ce_logit_grad, Targets};
pub use norm::{batchnorm1d, BatchNorm1d};
pub use optim::sgd_step;
pub use pool::{avgpool1d, maxpool1d, Pool1d, PoolKind};

/// Whether layers use batch statistics and stochastic units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
