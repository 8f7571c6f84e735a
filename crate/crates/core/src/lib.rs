//! Algorithmic core of a two-stage oriented fine-grained detector.
//!
//! The crate covers everything that can be checked without training a
//! network:
//!
//! - [`geometry`]: oriented boxes, exact rotated IoU / GIoU, a Monte-Carlo
//!   IoU oracle.
//! - [`coding`]: anchor-point grids, `(l, t, r, b, θ)` box coding and ATSS
//!   label assignment.
//! - [`losses`]: Focal loss, the quality-weighted recognition loss and the
//!   rotated GIoU loss, with analytic gradients.
//! - [`fusion`]: a small dense tensor type with forward/backward kernels for
//!   cross-level bilinear fusion and decoupled attention.
//! - [`postproc`]: rotated / horizontal NMS and proposal selection.
//! - [`eval`]: VOC-style matching, AP (11-point and envelope area), average
//!   recall and confusion matrices.
//! - [`scene`] and [`dota`]: a seeded synthetic scene generator and DOTA
//!   annotation I/O used by the CLI and the ablation harness.

pub mod checks;
pub mod coding;
pub mod dota;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod postproc;
pub mod scene;

pub use coding::{
    assignment_oracle, atss_assign, decode_box, encode_box, generate_anchor_points, Assignment,
    AssignmentResult, BoxTarget, PointGrid,
};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport, GroundTruth, Metric};
pub use geometry::{Aabb, ConvexPolygon, OrientedBox, Point};
pub use losses::{LossParams, LossValue};
pub use postproc::Detection;
pub use scene::{SceneConfig, SceneSet};
