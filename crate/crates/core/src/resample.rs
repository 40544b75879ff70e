//! Trilinear grid resampling for volumes and displacement fields.
//!
//! Output voxel `o` along an axis with factor `f` samples the input at
//! `(o + 0.5) / f - 0.5` (pixel-center alignment), clamped at the grid
//! boundary. Spacing is rescaled by `1/f` so the physical extent of the
//! grid is preserved. Field resampling additionally multiplies each
//! displacement component by its axis factor, keeping vectors in
//! target-grid voxel units.

use ndarray::{Array3, Array4};

use crate::error::{CoreError, Result};
use crate::volume::{VectorField, Volume};
use crate::warp::trilinear_sample;

/// Map an output index to its source coordinate under `factor`.
#[inline]
pub fn source_coord(out_idx: usize, factor: f64) -> f64 {
    (out_idx as f64 + 0.5) / factor - 0.5
}

fn output_dims(dims: [usize; 3], factors: [f64; 3]) -> Result<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let f = factors[a];
        if !(f.is_finite() && f > 0.0) {
            return Err(CoreError::Validation(format!(
                "resampling factor must be positive, got {factors:?}"
            )));
        }
        let exact = dims[a] as f64 * f;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(CoreError::Validation(format!(
                "factor {f} on extent {} yields non-integer output dim {exact}",
                dims[a]
            )));
        }
        out[a] = rounded as usize;
    }
    Ok(out)
}

fn resample_scalar_grid(src: &Array3<f32>, out_dims: [usize; 3], factors: [f64; 3]) -> Array3<f32> {
    Array3::from_shape_fn((out_dims[0], out_dims[1], out_dims[2]), |(z, y, x)| {
        trilinear_sample(
            src,
            source_coord(x, factors[2]) as f32,
            source_coord(y, factors[1]) as f32,
            source_coord(z, factors[0]) as f32,
        )
    })
}

/// Resample a volume by a per-axis factor `[fz, fy, fx]`.
pub fn resample_volume(volume: &Volume, factors: [f64; 3]) -> Result<Volume> {
    let out_dims = output_dims(volume.dims(), factors)?;
    let data = resample_scalar_grid(volume.data(), out_dims, factors);
    let s = volume.spacing();
    let mut out = Volume::from_array(data);
    out.set_spacing([s[0] / factors[0], s[1] / factors[1], s[2] / factors[2]])?;
    Ok(out)
}

/// Resample a displacement field by a per-axis factor and rescale the
/// displacement components into the target grid's voxel units.
pub fn resample_field(field: &VectorField, factors: [f64; 3]) -> Result<VectorField> {
    let out_dims = output_dims(field.dims(), factors)?;
    let mut data = Array4::zeros((3, out_dims[0], out_dims[1], out_dims[2]));
    // Component c displaces along axis x/y/z; factors arrive as [fz, fy, fx].
    let comp_scale = [factors[2] as f32, factors[1] as f32, factors[0] as f32];
    for c in 0..3 {
        let comp = field.data().index_axis(ndarray::Axis(0), c).to_owned();
        let resampled = resample_scalar_grid(&comp, out_dims, factors);
        data.index_axis_mut(ndarray::Axis(0), c)
            .assign(&(&resampled * comp_scale[c]));
    }
    VectorField::new(data)
}
