//! Hand-written differentiable kernels. Every forward function returns what
//! its backward needs; backward functions add parameter gradients into a
//! caller-owned buffer of the same type as the parameters.

pub mod activation;
pub mod adam;
pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod linear;
pub mod loss;
pub mod params;
pub mod tensor;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, tanh, tanh_backward};
pub use adam::{Adam, AdamConfig};
pub use attention::{self_attention, self_attention_backward, AttentionCache, AttentionParams};
pub use conv::{conv2d, conv2d_backward, maxpool2, maxpool2_backward, Conv2dParams, MaxPoolCache};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck};
pub use gru::{gru_cell, gru_cell_backward, gru_sequence, gru_sequence_backward, GruParams};
pub use linear::{linear, linear_backward, LinearParams};
pub use loss::{softmax_xent, softmax_xent_backward};
pub use params::Parameters;
pub use tensor::Tensor;
