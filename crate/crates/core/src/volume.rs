//! Grid-aligned volumetric data types.
//!
//! A [`Volume`] is a 3D scalar intensity grid indexed `(z, y, x)` with
//! physical voxel spacing carried as metadata. A [`VectorField`] is a dense
//! per-voxel displacement field in voxel units, stored channel-first as
//! `(component, z, y, x)` with component order `(dx, dy, dz)`. Displacements
//! live in voxel units on purpose: all sampling math is grid-native, and
//! metric reporting converts through `spacing` when physical units matter.

use ndarray::{Array3, Array4};

use crate::error::{CoreError, Result};

/// A 3D scalar intensity grid with physical spacing.
#[derive(Debug, Clone)]
pub struct Volume {
    data: Array3<f32>,
    /// Millimetres per voxel along (z, y, x). Strictly positive.
    spacing: [f64; 3],
}

impl Volume {
    /// Wrap an existing array. Fails if any spacing component is not
    /// strictly positive.
    pub fn new(data: Array3<f32>, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CoreError::Validation(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(Self { data, spacing })
    }

    /// A volume with unit spacing.
    pub fn from_array(data: Array3<f32>) -> Self {
        Self {
            data,
            spacing: [1.0; 3],
        }
    }

    /// Evaluate `f(z, y, x)` at every voxel of a `dims` grid (unit spacing).
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let data = Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(z, y, x)| f(z, y, x));
        Self::from_array(data)
    }

    /// A constant-valued volume.
    pub fn constant(dims: [usize; 3], value: f32) -> Self {
        Self::from_array(Array3::from_elem((dims[0], dims[1], dims[2]), value))
    }

    /// Grid extents as `[D, H, W]`.
    pub fn dims(&self) -> [usize; 3] {
        let (d, h, w) = self.data.dim();
        [d, h, w]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: [f64; 3]) -> Result<()> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CoreError::Validation(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(())
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in self.data.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Min–max normalize intensities to `[0, 1]`.
    ///
    /// A constant volume maps to all zeros rather than erroring, so that
    /// degenerate inputs stay total.
    pub fn normalize(&self) -> Volume {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = if range > 0.0 && range.is_finite() {
            self.data.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
        } else {
            Array3::zeros(self.data.dim())
        };
        Volume {
            data,
            spacing: self.spacing,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A dense per-voxel displacement field in voxel units.
///
/// Stored as `[3, D, H, W]` with component 0 = `dx` (fastest-varying image
/// axis), 1 = `dy`, 2 = `dz`.
#[derive(Debug, Clone)]
pub struct VectorField {
    data: Array4<f32>,
}

impl VectorField {
    /// Wrap an existing `[3, D, H, W]` array. The component axis must hold
    /// exactly 3 entries.
    pub fn new(data: Array4<f32>) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(CoreError::Validation(format!(
                "vector field must have exactly 3 components, got {}",
                data.dim().0
            )));
        }
        Ok(Self { data })
    }

    /// The zero (identity) field on a `dims` grid.
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            data: Array4::zeros((3, dims[0], dims[1], dims[2])),
        }
    }

    /// A spatially uniform field with displacement `(dx, dy, dz)`.
    pub fn uniform(dims: [usize; 3], displacement: [f32; 3]) -> Self {
        let mut data = Array4::zeros((3, dims[0], dims[1], dims[2]));
        for (c, &v) in displacement.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), c).fill(v);
        }
        Self { data }
    }

    /// Evaluate `f(z, y, x) -> (dx, dy, dz)` at every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> [f32; 3]) -> Self {
        let mut data = Array4::zeros((3, dims[0], dims[1], dims[2]));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let v = f(z, y, x);
                    data[[0, z, y, x]] = v[0];
                    data[[1, z, y, x]] = v[1];
                    data[[2, z, y, x]] = v[2];
                }
            }
        }
        Self { data }
    }

    /// Grid extents as `[D, H, W]` (component axis excluded).
    pub fn dims(&self) -> [usize; 3] {
        let (_, d, h, w) = self.data.dim();
        [d, h, w]
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Componentwise scaling by a scalar.
    pub fn scaled(&self, s: f32) -> VectorField {
        VectorField {
            data: self.data.mapv(|v| v * s),
        }
    }

    /// Componentwise sum of two fields on the same grid.
    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        check_same_dims("VectorField::add", self.dims(), other.dims())?;
        Ok(VectorField {
            data: &self.data + &other.data,
        })
    }

    /// Largest absolute displacement component over the whole grid.
    pub fn linf_norm(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// A normalized phase in `[0, 1]`: 0 maps to ED, 1 maps to ES.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseIndex(f64);

impl PhaseIndex {
    pub fn new(t: f64) -> Result<Self> {
        if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
            return Err(CoreError::Validation(format!(
                "phase index must lie in [0, 1], got {t}"
            )));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `true` for the exact endpoints t = 0 or t = 1.
    pub fn is_endpoint(self) -> bool {
        self.0 == 0.0 || self.0 == 1.0
    }
}

pub(crate) fn check_same_dims(
    context: &'static str,
    expected: [usize; 3],
    got: [usize; 3],
) -> Result<()> {
    if expected != got {
        return Err(CoreError::ShapeMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
