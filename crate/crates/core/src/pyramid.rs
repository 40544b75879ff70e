//! The 3-level coarse-to-fine pyramid shared by both networks and their
//! losses. Level 0 of the stored list is the coarsest grid; the last level
//! is the full-resolution input. Downsampling is 2x2x2 average pooling,
//! which preserves mean intensity exactly on divisible grids.

use ndarray::Array3;

use crate::error::{CoreError, Result};
use crate::resample::resample_field;
use crate::volume::{VectorField, Volume};

/// Number of scales in the pyramid. Fixed.
pub const PYRAMID_LEVELS: usize = 3;

/// An ordered stack of 3 volumes, coarsest first.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Volume>,
}

impl Pyramid {
    /// Levels ordered coarse to fine; `levels()[2]` is the input grid.
    pub fn levels(&self) -> &[Volume] {
        &self.levels
    }

    /// Level by 1-based scale index `c in 1..=3` (1 = coarsest).
    pub fn level(&self, c: usize) -> &Volume {
        &self.levels[c - 1]
    }

    pub fn finest(&self) -> &Volume {
        &self.levels[PYRAMID_LEVELS - 1]
    }
}

/// 2x2x2 average pooling. Caller guarantees even extents.
pub(crate) fn avg_pool2(data: &Array3<f32>) -> Array3<f32> {
    let (d, h, w) = data.dim();
    Array3::from_shape_fn((d / 2, h / 2, w / 2), |(z, y, x)| {
        let mut acc = 0.0f32;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += data[[2 * z + dz, 2 * y + dy, 2 * x + dx]];
                }
            }
        }
        acc / 8.0
    })
}

fn require_divisible(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d % 4 != 0 || d == 0) {
        let padding: Vec<usize> = dims.iter().map(|&d| (4 - d % 4) % 4).collect();
        return Err(CoreError::Validation(format!(
            "pyramid needs every extent divisible by 4, got {dims:?}; pad by {padding:?} voxels"
        )));
    }
    Ok(())
}

/// Build the 3-scale pyramid of a volume by repeated average pooling.
///
/// Every extent must be divisible by 4 so that two halvings are exact; the
/// error message lists the padding that would fix an offending grid.
pub fn build_pyramid(volume: &Volume) -> Result<Pyramid> {
    require_divisible(volume.dims())?;
    let spacing = volume.spacing();
    let full = volume.clone();
    let mk = |data: Array3<f32>, scale: f64| -> Result<Volume> {
        let mut v = Volume::from_array(data);
        v.set_spacing([spacing[0] * scale, spacing[1] * scale, spacing[2] * scale])?;
        Ok(v)
    };
    let half = mk(avg_pool2(volume.data()), 2.0)?;
    let quarter = mk(avg_pool2(half.data()), 4.0)?;
    Ok(Pyramid {
        levels: vec![quarter, half, full],
    })
}

/// Upsample a field from pyramid level `c` (1-based, coarsest = 1) to level
/// `c + 1`: trilinear resampling with factor 2 and displacement vectors
/// doubled into the finer grid's units.
pub fn upsample_field_to_next(field: &VectorField, level: usize) -> Result<VectorField> {
    match level {
        1 | 2 => resample_field(field, [2.0; 3]),
        _ => Err(CoreError::Domain(format!(
            "upsample_field_to_next is defined for levels 1 and 2, got {level}"
        ))),
    }
}
