//! Dense feature-map kernels for cross-level fusion and decoupled attention,
//! each with an exact backward pass.
//!
//! Layout is channels × rows × cols, row-major, `f64`. Every backward takes
//! the upstream gradient of the output and returns gradients for all inputs
//! and parameters; [`gradcheck`] verifies them by central differences.

mod blob;
mod bcfn;
pub mod gradcheck;
mod ldam;
mod ops;
mod tensor;

pub use blob::{BlobEntry, NamedParams, ParamBlob};
pub use bcfn::{bcf, bcf_backward, bcfn_backward, bcfn_forward, cim, cim_backward, BcfGrads, BcfParams};
pub use gradcheck::{finite_diff_check, rel_error, Coords, REL_FLOOR};
pub use ldam::{
    laa, laa_backward, ldam, ldam_backward, ssa, ssa_backward, LaaGrads, LaaParams, LdamParams, SsaParams,
    DEFAULT_LAYER_SCALE,
};
pub use ops::{
    channel_max_map, channel_max_map_backward, channel_mean_map, channel_mean_map_backward, conv1x1,
    conv1x1_backward, conv_kxk, conv_kxk_backward, gap, gap_backward, gmp, gmp_backward, sigmoid,
    upsample2x_nearest, upsample2x_nearest_backward, Conv1x1, ConvKxK,
};
pub use tensor::{Flat, Tensor};
