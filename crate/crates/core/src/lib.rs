//! Core volumetric toolkit: grid data types, trilinear warping and
//! resampling kernels, the 3-scale pyramid, closed-form intermediate-field
//! synthesis, synthetic phantoms with exact ground-truth deformations,
//! image-quality metrics and the `.svv` serialization format.
//!
//! Everything here is a pure function over immutable values; all types are
//! safe to share across threads.

pub mod error;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pyramid;
pub mod resample;
pub mod synthesis;
pub mod volume;
pub mod warp;

pub use error::{CoreError, Result};
pub use phantom::{generate_phantom, preprocess, PhantomSpec, PhaseSample};
pub use pyramid::{build_pyramid, upsample_field_to_next, Pyramid, PYRAMID_LEVELS};
pub use resample::{resample_field, resample_volume};
pub use synthesis::{
    blend_linear, blend_weighted, consistent_intermediate_fields, linear_intermediate_fields,
    WeightMap, BLEND_EPSILON,
};
pub use volume::{PhaseIndex, VectorField, Volume};
pub use warp::{spatial_gradient, trilinear_sample, warp, warp_field, GradientStack};
