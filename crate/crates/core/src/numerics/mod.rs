//! Dense tensors, convolution and softmax kernels, SGD with momentum,
//! deterministic random streams, and the finite-difference gradient checker.

mod gradcheck;
mod ops;
mod optim;
mod params;
mod records;
mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use ops::{
    argmax, conv2d_backward_raw, conv2d_forward_raw, conv2d_valid, conv2d_valid_backward,
    log_softmax_f64, logistic, logistic_backward_in_place, logistic_in_place,
    relu_backward_in_place, relu_in_place, softmax, softmax_cross_entropy, softmax_xent_raw,
    ConvGeom, ConvScratch,
};
pub use optim::{clip_global_norm, global_norm, sgd_momentum_step, OptimizerState, StepInfo};
pub use params::{accumulate, glorot, glorot_logistic, scale_all, HasParams, Param, ParamSet};
pub use records::{read_tensor_record, write_tensor_record};
pub use rng::{derive_seed, DetRng};
pub use scalar::{gemm, Mat, Scalar};
pub use tensor::Tensor;

/// Default global-norm clipping threshold.
pub const DEFAULT_CLIP: f64 = 5.0;
