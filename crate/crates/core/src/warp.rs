//! Trilinear warping, field composition and the discrete gradient operator.
//!
//! Sampling convention: `warp(volume, field)` produces
//! `out(z, y, x) = volume(x + dx, y + dy, z + dz)` by trilinear interpolation
//! at the displaced position, i.e. the field is a pull-back map living on the
//! output grid. Out-of-bounds coordinates clamp to the nearest boundary voxel
//! so the kernel never fabricates zero intensities at tissue borders and never
//! reads outside the grid regardless of field magnitude.

use ndarray::{Array3, Array5};

use crate::error::{CoreError, Result};
use crate::volume::{check_same_dims, VectorField, Volume};

/// Trilinear sample of `data` at a continuous `(x, y, z)` position, with
/// coordinates clamped to the grid.
#[inline]
pub fn trilinear_sample(data: &Array3<f32>, x: f32, y: f32, z: f32) -> f32 {
    let (d, h, w) = data.dim();
    let (x0, x1, fx) = clamp_axis(x, w);
    let (y0, y1, fy) = clamp_axis(y, h);
    let (z0, z1, fz) = clamp_axis(z, d);

    let c000 = data[[z0, y0, x0]];
    let c001 = data[[z0, y0, x1]];
    let c010 = data[[z0, y1, x0]];
    let c011 = data[[z0, y1, x1]];
    let c100 = data[[z1, y0, x0]];
    let c101 = data[[z1, y0, x1]];
    let c110 = data[[z1, y1, x0]];
    let c111 = data[[z1, y1, x1]];

    let c00 = c000 + (c001 - c000) * fx;
    let c01 = c010 + (c011 - c010) * fx;
    let c10 = c100 + (c101 - c100) * fx;
    let c11 = c110 + (c111 - c110) * fx;
    let c0 = c00 + (c01 - c00) * fy;
    let c1 = c10 + (c11 - c10) * fy;
    c0 + (c1 - c0) * fz
}

/// Clamp a continuous coordinate to `[0, n-1]` and split it into the lower
/// corner, upper corner and fractional weight.
#[inline]
pub(crate) fn clamp_axis(v: f32, n: usize) -> (usize, usize, f32) {
    let max = (n - 1) as f32;
    let v = v.clamp(0.0, max);
    let lo = v.floor();
    let i0 = lo as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, v - lo)
}

/// Warp a volume by a displacement field: `out(v) = volume(v + field(v))`.
///
/// Fails on mismatched grids or non-finite field values.
pub fn warp(volume: &Volume, field: &VectorField) -> Result<Volume> {
    check_same_dims("warp", volume.dims(), field.dims())?;
    if !field.is_finite() {
        return Err(CoreError::NonFinite("warp displacement field"));
    }
    let [d, h, w] = volume.dims();
    let src = volume.data();
    let f = field.data();
    let out = Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        trilinear_sample(
            src,
            x as f32 + f[[0, z, y, x]],
            y as f32 + f[[1, z, y, x]],
            z as f32 + f[[2, z, y, x]],
        )
    });
    let mut result = Volume::from_array(out);
    result.set_spacing(volume.spacing())?;
    Ok(result)
}

/// Resample each component of `field_a` at positions displaced by `field_b`:
/// `out_c(v) = field_a_c(v + field_b(v))`.
///
/// This is the field-composition kernel used by the bidirectionally
/// consistent intermediate-field formulas.
pub fn warp_field(field_a: &VectorField, field_b: &VectorField) -> Result<VectorField> {
    check_same_dims("warp_field", field_a.dims(), field_b.dims())?;
    if !field_b.is_finite() {
        return Err(CoreError::NonFinite("warp_field displacement field"));
    }
    let [d, h, w] = field_a.dims();
    let a = field_a.data();
    let b = field_b.data();
    let mut out = ndarray::Array4::zeros((3, d, h, w));
    for c in 0..3 {
        let comp = a.index_axis(ndarray::Axis(0), c);
        // index_axis returns a view; trilinear_sample wants an owned layout,
        // so sample through a contiguous copy per component.
        let comp = comp.to_owned();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    out[[c, z, y, x]] = trilinear_sample(
                        &comp,
                        x as f32 + b[[0, z, y, x]],
                        y as f32 + b[[1, z, y, x]],
                        z as f32 + b[[2, z, y, x]],
                    );
                }
            }
        }
    }
    VectorField::new(out)
}

/// Forward-difference gradients of a displacement field.
///
/// `data[[c, a, z, y, x]]` holds the difference of component `c` along axis
/// `a` (0 = z, 1 = y, 2 = x). The trailing slab along each axis carries the
/// replicated-edge difference of zero.
#[derive(Debug, Clone)]
pub struct GradientStack {
    data: Array5<f32>,
}

impl GradientStack {
    pub fn data(&self) -> &Array5<f32> {
        &self.data
    }

    /// Sum of absolute differences over all components and axes.
    pub fn l1_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs() as f64).sum()
    }
}

/// Forward differences of each field component along z, y and x (9 scalar
/// grids in a stack). Requires every extent to be at least 2.
pub fn spatial_gradient(field: &VectorField) -> Result<GradientStack> {
    let [d, h, w] = field.dims();
    if d < 2 || h < 2 || w < 2 {
        return Err(CoreError::Validation(format!(
            "spatial_gradient needs every extent >= 2, got {:?}",
            field.dims()
        )));
    }
    let f = field.data();
    let mut data = Array5::zeros((3, 3, d, h, w));
    for c in 0..3 {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let v = f[[c, z, y, x]];
                    if z + 1 < d {
                        data[[c, 0, z, y, x]] = f[[c, z + 1, y, x]] - v;
                    }
                    if y + 1 < h {
                        data[[c, 1, z, y, x]] = f[[c, z, y + 1, x]] - v;
                    }
                    if x + 1 < w {
                        data[[c, 2, z, y, x]] = f[[c, z, y, x + 1]] - v;
                    }
                }
            }
        }
    }
    Ok(GradientStack { data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bitwise_eq(a: &Volume, b: &Volume) -> bool {
        a.data()
            .iter()
            .zip(b.data().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn warp_zero_field_is_identity() {
        let v = Volume::from_fn([4, 5, 6], |z, y, x| (z * 100 + y * 10 + x) as f32 * 0.013);
        let out = warp(&v, &VectorField::zeros([4, 5, 6])).unwrap();
        assert!(bitwise_eq(&v, &out));
    }

    #[test]
    fn warp_shifts_linear_ramp() {
        // f(x) = x / W sampled one voxel to the right; last column clamps.
        let w = 6usize;
        let v = Volume::from_fn([4, 4, w], |_, _, x| x as f32 / w as f32);
        let out = warp(&v, &VectorField::uniform([4, 4, w], [1.0, 0.0, 0.0])).unwrap();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..w - 1 {
                    let expect = (x + 1) as f32 / w as f32;
                    assert!((out.data()[[z, y, x]] - expect).abs() < 1e-6);
                }
                let clamped = (w - 1) as f32 / w as f32;
                assert!((out.data()[[z, y, w - 1]] - clamped).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warp_constant_volume_is_invariant() {
        let v = Volume::constant([3, 3, 3], 0.42);
        let f = VectorField::uniform([3, 3, 3], [5.0, -7.0, 2.5]);
        let out = warp(&v, &f).unwrap();
        assert!(out.data().iter().all(|&x| (x - 0.42).abs() < 1e-6));
    }

    #[test]
    fn warp_rejects_mismatched_dims() {
        let v = Volume::constant([3, 3, 3], 1.0);
        let f = VectorField::zeros([3, 3, 4]);
        assert!(matches!(
            warp(&v, &f),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn warp_rejects_non_finite_field() {
        let v = Volume::constant([2, 2, 2], 1.0);
        let mut f = VectorField::zeros([2, 2, 2]);
        f.data_mut()[[1, 0, 0, 0]] = f32::NAN;
        assert!(matches!(warp(&v, &f), Err(CoreError::NonFinite(_))));
    }

    #[test]
    fn warp_field_zero_is_identity() {
        let f = VectorField::from_fn([3, 3, 3], |z, y, x| {
            [x as f32 * 0.1, y as f32 * 0.2, z as f32 * 0.3]
        });
        let out = warp_field(&f, &VectorField::zeros([3, 3, 3])).unwrap();
        assert_eq!(f.data(), out.data());
    }

    #[test]
    fn warp_field_uniform_is_resampling_invariant() {
        let u = VectorField::uniform([3, 3, 3], [1.5, -0.5, 2.0]);
        let w = VectorField::uniform([3, 3, 3], [-3.0, 8.0, 0.25]);
        let out = warp_field(&u, &w).unwrap();
        assert_eq!(u.data(), out.data());
    }

    #[test]
    fn warp_field_linear_plus_uniform_closed_form() {
        // F(v) = alpha * v sampled at v + w gives F(v) + alpha * w in the
        // interior (trilinear interpolation is exact on linear functions).
        let alpha = [0.05f32, -0.02, 0.03];
        let f = VectorField::from_fn([6, 6, 6], |z, y, x| {
            [
                alpha[0] * x as f32,
                alpha[1] * y as f32,
                alpha[2] * z as f32,
            ]
        });
        let shift = [0.5f32, 1.0, -0.5];
        let w = VectorField::uniform([6, 6, 6], shift);
        let out = warp_field(&f, &w).unwrap();
        for z in 1..5 {
            for y in 1..5 {
                for x in 1..5 {
                    let expect = [
                        alpha[0] * (x as f32 + shift[0]),
                        alpha[1] * (y as f32 + shift[1]),
                        alpha[2] * (z as f32 + shift[2]),
                    ];
                    for c in 0..3 {
                        assert!(
                            (out.data()[[c, z, y, x]] - expect[c]).abs() < 1e-5,
                            "component {c} at ({z},{y},{x})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_of_uniform_field_is_zero() {
        let f = VectorField::uniform([3, 4, 5], [1.0, 2.0, 3.0]);
        let g = spatial_gradient(&f).unwrap();
        assert_eq!(g.l1_sum(), 0.0);
    }

    #[test]
    fn gradient_of_coordinate_ramp() {
        // dx component equal to x: d/dx = 1 except on the last x slab.
        let f = VectorField::from_fn([4, 4, 4], |_, _, x| [x as f32, 0.0, 0.0]);
        let g = spatial_gradient(&f).unwrap();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let expect = if x < 3 { 1.0 } else { 0.0 };
                    assert_eq!(g.data()[[0, 2, z, y, x]], expect);
                }
            }
        }
        // Everything except (component 0, axis x) vanishes.
        let total = g.l1_sum();
        assert_eq!(total, (4 * 4 * 3) as f64);
    }

    #[test]
    fn gradient_rejects_degenerate_dims() {
        let f = VectorField::zeros([1, 4, 4]);
        assert!(spatial_gradient(&f).is_err());
    }

    #[test]
    fn l1_sum_of_zero_field_is_zero() {
        let g = spatial_gradient(&VectorField::zeros([2, 2, 2])).unwrap();
        assert_eq!(g.l1_sum(), 0.0);
    }

    #[test]
    fn warp_clamps_arbitrarily_large_fields() {
        let v = Volume::from_fn([4, 4, 4], |z, y, x| (z + y + x) as f32 / 9.0);
        let (lo, hi) = v.min_max();
        let f = VectorField::uniform([4, 4, 4], [40.0, -40.0, 40.0]);
        let out = warp(&v, &f).unwrap();
        for &val in out.data().iter() {
            assert!(val.is_finite());
            assert!(val >= lo && val <= hi);
        }
    }
}
