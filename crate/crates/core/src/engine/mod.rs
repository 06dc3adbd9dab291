//! Differentiable computation, optimization, and metrics shared by every
//! trainable weight-space model.

pub mod log;
pub mod mat;
pub mod metrics;
pub mod optim;
pub mod tape;

pub use mat::{gemm, matmul, Mat};
pub use optim::{lr_schedule, AdamW, AdamWConfig, ScheduleTail};
pub use tape::{Gradients, Grads, ParamId, ParamSet, Tape, Var};
