//! Small f64 neural-network toolkit with explicit backward passes.
//!
//! Everything here works on flat row-major `Vec<f64>` buffers. Layers expose a
//! `forward` that returns whatever the matching `backward` needs, and gradients
//! accumulate into caller-owned buffers shaped like the parameters.

mod adam;
mod conv;
mod ops;
mod param;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv1d_backward, conv1d_forward, upsample2_backward, upsample2_forward, Conv1dShape};
pub use ops::{
    add_bias, bias_backward, gelu_backward, gelu_forward, gemm, layer_norm_backward,
    layer_norm_forward, linear_backward, linear_forward, log_softmax_row, relu_backward,
    relu_forward, softmax_row, LayerNormCache,
};
pub use param::{Param, ParamList};
pub use schedule::{LrSchedule, StepDecay, WarmupCosine};
