//! Probabilistic orientation estimation by soft classification over a
//! discretized rotation space.
//!
//! Quaternions are unit `(w, x, y, z)` and canonical (`w > 0`, or the first
//! nonzero of `x, y, z` positive). Distances are normalized geodesic angles
//! in `[0, 1]`.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod codec;
pub mod datakit;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod mixture;
pub mod rotation;
pub mod seeding;
pub mod toyhead;

pub use augment::{CameraIntrinsics, GrayImage, Sim2RealConfig};
pub use codec::{decode, encode, encode_multi, KernelParams, SoftAssignment};
pub use datakit::{FrustumRange, LabeledSample};
pub use error::{Error, Result};
pub use grid::{build_grid, default_merge_tolerance, GridId, OrientationGrid};
pub use losses::{LossWeights, PoseSample};
pub use metrics::EvalRecord;
pub use mixture::{fit_mixture, EmConfig, MixtureComponent, MixtureModel};
pub use rotation::{geodesic_angle, normalized_distance, EulerAngles, Quaternion, RotationMatrix, Vec3};
