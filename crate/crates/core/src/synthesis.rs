//! Closed-form intermediate deformation fields and blended intermediate
//! volumes.
//!
//! Two synthesis paths are exposed and selectable. The plain linear path
//! scales the endpoint-to-endpoint fields by the phase. The bidirectionally
//! consistent path additionally composes each field with itself; it is
//! implemented exactly as printed in its source formulation, self-warp terms
//! and signs included, so its endpoint values differ from the linear path's.
//! Callers pick the variant; nothing is silently substituted.

use ndarray::Array3;

use crate::error::{CoreError, Result};
use crate::volume::{check_same_dims, PhaseIndex, VectorField, Volume};
use crate::warp::{warp, warp_field};

/// Guard added to the blend denominator when renormalizing.
pub const BLEND_EPSILON: f32 = 1e-8;

/// Per-voxel blend weight for the forward-warped candidate.
///
/// The backward weight is not stored: it is defined as `1 - gamma_ed`
/// exactly, enforced by construction.
#[derive(Debug, Clone)]
pub struct WeightMap {
    gamma_ed: Array3<f32>,
}

impl WeightMap {
    pub fn new(gamma_ed: Array3<f32>) -> Result<Self> {
        if gamma_ed.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(CoreError::Validation(
                "weight map values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { gamma_ed })
    }

    pub fn uniform(dims: [usize; 3], gamma: f32) -> Result<Self> {
        Self::new(Array3::from_elem((dims[0], dims[1], dims[2]), gamma))
    }

    pub fn dims(&self) -> [usize; 3] {
        let (d, h, w) = self.gamma_ed.dim();
        [d, h, w]
    }

    pub fn gamma_ed(&self) -> &Array3<f32> {
        &self.gamma_ed
    }

    /// The complementary weight, `1 - gamma_ed`.
    pub fn gamma_es(&self) -> Array3<f32> {
        self.gamma_ed.mapv(|g| 1.0 - g)
    }
}

fn check_phase_pair(
    fwd: &VectorField,
    bwd: &VectorField,
    context: &'static str,
) -> Result<()> {
    check_same_dims(context, fwd.dims(), bwd.dims())
}

/// Phase-scaled intermediate fields: `(t * fwd, (1 - t) * bwd)`.
pub fn linear_intermediate_fields(
    fwd: &VectorField,
    bwd: &VectorField,
    t: PhaseIndex,
) -> Result<(VectorField, VectorField)> {
    check_phase_pair(fwd, bwd, "linear_intermediate_fields")?;
    let t = t.value() as f32;
    Ok((fwd.scaled(t), bwd.scaled(1.0 - t)))
}

/// Bidirectionally consistent intermediate fields:
///
/// ```text
/// to_t_from_ed = t(1-t) * fwd - t^2        * (bwd o bwd)
/// to_t_from_es = t(1-t) * bwd - (1-t)^2    * (fwd o fwd)
/// ```
///
/// where `o` is componentwise self-composition via [`warp_field`].
pub fn consistent_intermediate_fields(
    fwd: &VectorField,
    bwd: &VectorField,
    t: PhaseIndex,
) -> Result<(VectorField, VectorField)> {
    check_phase_pair(fwd, bwd, "consistent_intermediate_fields")?;
    let t = t.value() as f32;
    let cross = t * (1.0 - t);
    let bwd_self = warp_field(bwd, bwd)?;
    let fwd_self = warp_field(fwd, fwd)?;
    let from_ed = fwd.scaled(cross).add(&bwd_self.scaled(-(t * t)))?;
    let from_es = bwd.scaled(cross).add(&fwd_self.scaled(-((1.0 - t) * (1.0 - t))))?;
    Ok((from_ed, from_es))
}

/// Linear blend of the two warped candidates:
/// `(1-t) * warp(ed, field_ed) + t * warp(es, field_es)`.
pub fn blend_linear(
    ed: &Volume,
    es: &Volume,
    field_ed: &VectorField,
    field_es: &VectorField,
    t: PhaseIndex,
) -> Result<Volume> {
    check_same_dims("blend_linear", ed.dims(), es.dims())?;
    check_same_dims("blend_linear", ed.dims(), field_ed.dims())?;
    check_same_dims("blend_linear", ed.dims(), field_es.dims())?;
    let t = t.value() as f32;
    let warped_ed = warp(ed, field_ed)?;
    let warped_es = warp(es, field_es)?;
    let data = warped_ed.data() * (1.0 - t) + warped_es.data() * t;
    let mut out = Volume::from_array(data);
    out.set_spacing(ed.spacing())?;
    Ok(out)
}

/// Weighted blend of the two warped candidates.
///
/// With `normalize` off this is the literal form
/// `(1-t) * g_ed * warp(ed, .) + t * (1-g_ed) * warp(es, .)`, whose weights
/// do not sum to one and darken mid-phase outputs. With `normalize` on (the
/// inference default) the same numerator is divided by
/// `(1-t) * g_ed + t * (1-g_ed) + epsilon`.
pub fn blend_weighted(
    ed: &Volume,
    es: &Volume,
    field_ed: &VectorField,
    field_es: &VectorField,
    t: PhaseIndex,
    gamma: &WeightMap,
    normalize: bool,
) -> Result<Volume> {
    check_same_dims("blend_weighted", ed.dims(), es.dims())?;
    check_same_dims("blend_weighted", ed.dims(), field_ed.dims())?;
    check_same_dims("blend_weighted", ed.dims(), field_es.dims())?;
    check_same_dims("blend_weighted", ed.dims(), gamma.dims())?;
    let t = t.value() as f32;
    let warped_ed = warp(ed, field_ed)?;
    let warped_es = warp(es, field_es)?;
    let g = gamma.gamma_ed();
    let [d, h, w] = ed.dims();
    let data = Array3::from_shape_fn((d, h, w), |idx| {
        let g_ed = g[idx];
        let w_ed = (1.0 - t) * g_ed;
        let w_es = t * (1.0 - g_ed);
        let num = w_ed * warped_ed.data()[idx] + w_es * warped_es.data()[idx];
        if normalize {
            num / (w_ed + w_es + BLEND_EPSILON)
        } else {
            num
        }
    });
    let mut out = Volume::from_array(data);
    out.set_spacing(ed.spacing())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase(t: f64) -> PhaseIndex {
        PhaseIndex::new(t).unwrap()
    }

    fn max_abs_diff_field(a: &VectorField, b: &VectorField) -> f32 {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn linear_fields_endpoints() {
        let fwd = VectorField::uniform([2, 2, 2], [2.0, 1.0, -1.0]);
        let bwd = VectorField::uniform([2, 2, 2], [-2.0, 0.5, 1.0]);
        let (a0, b0) = linear_intermediate_fields(&fwd, &bwd, phase(0.0)).unwrap();
        assert_eq!(a0.linf_norm(), 0.0);
        assert_eq!(max_abs_diff_field(&b0, &bwd), 0.0);
        let (a1, b1) = linear_intermediate_fields(&fwd, &bwd, phase(1.0)).unwrap();
        assert_eq!(max_abs_diff_field(&a1, &fwd), 0.0);
        assert_eq!(b1.linf_norm(), 0.0);
    }

    #[test]
    fn linear_fields_midpoint_arithmetic() {
        let fwd = VectorField::uniform([2, 2, 2], [2.0, 0.0, 0.0]);
        let bwd = VectorField::uniform([2, 2, 2], [-2.0, 0.0, 0.0]);
        let (a, b) = linear_intermediate_fields(&fwd, &bwd, phase(0.5)).unwrap();
        assert!((a.data()[[0, 0, 0, 0]] - 1.0).abs() < 1e-7);
        assert!((b.data()[[0, 0, 0, 0]] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn consistent_fields_endpoint_substitutions() {
        let fwd = VectorField::uniform([3, 3, 3], [1.0, -0.5, 0.25]);
        let bwd = VectorField::uniform([3, 3, 3], [-1.0, 0.5, 0.75]);
        // t = 0: (zero, -fwd o fwd)
        let (a0, b0) = consistent_intermediate_fields(&fwd, &bwd, phase(0.0)).unwrap();
        assert_eq!(a0.linf_norm(), 0.0);
        let fwd_self = warp_field(&fwd, &fwd).unwrap().scaled(-1.0);
        assert!(max_abs_diff_field(&b0, &fwd_self) < 1e-6);
        // t = 1: (-bwd o bwd, zero)
        let (a1, b1) = consistent_intermediate_fields(&fwd, &bwd, phase(1.0)).unwrap();
        let bwd_self = warp_field(&bwd, &bwd).unwrap().scaled(-1.0);
        assert!(max_abs_diff_field(&a1, &bwd_self) < 1e-6);
        assert_eq!(b1.linf_norm(), 0.0);
    }

    #[test]
    fn consistent_fields_uniform_closed_form() {
        // Uniform fields self-warp to themselves, so at t = 0.5 the pair is
        // (0.25u - 0.25w, -0.25u + 0.25w).
        let u = [1.2f32, -0.4, 0.8];
        let w = [-0.6f32, 1.0, 0.2];
        let fwd = VectorField::uniform([3, 3, 3], u);
        let bwd = VectorField::uniform([3, 3, 3], w);
        let (a, b) = consistent_intermediate_fields(&fwd, &bwd, phase(0.5)).unwrap();
        for c in 0..3 {
            let ea = 0.25 * u[c] - 0.25 * w[c];
            let eb = -0.25 * u[c] + 0.25 * w[c];
            assert!((a.data()[[c, 1, 1, 1]] - ea).abs() < 1e-6);
            assert!((b.data()[[c, 1, 1, 1]] - eb).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_linear_endpoints_are_bitwise_inputs() {
        let ed = Volume::from_fn([2, 2, 2], |z, y, x| (z + 2 * y + 4 * x) as f32 * 0.1);
        let es = Volume::from_fn([2, 2, 2], |z, y, x| 1.0 - (z + y + x) as f32 * 0.05);
        let zero = VectorField::zeros([2, 2, 2]);
        let at0 = blend_linear(&ed, &es, &zero, &zero, phase(0.0)).unwrap();
        let at1 = blend_linear(&ed, &es, &zero, &zero, phase(1.0)).unwrap();
        assert!(ed
            .data()
            .iter()
            .zip(at0.data().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(es
            .data()
            .iter()
            .zip(at1.data().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn blend_linear_midpoint_is_mean() {
        let ed = Volume::constant([2, 2, 2], 0.2);
        let es = Volume::constant([2, 2, 2], 0.8);
        let zero = VectorField::zeros([2, 2, 2]);
        let mid = blend_linear(&ed, &es, &zero, &zero, phase(0.5)).unwrap();
        assert!(mid.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn weighted_blend_all_forward_weight_returns_ed() {
        let ed = Volume::from_fn([2, 2, 2], |z, y, x| (z + y + x) as f32 * 0.1);
        let es = Volume::constant([2, 2, 2], 0.9);
        let zero = VectorField::zeros([2, 2, 2]);
        let gamma = WeightMap::uniform([2, 2, 2], 1.0).unwrap();
        let out = blend_weighted(&ed, &es, &zero, &zero, phase(0.3), &gamma, true).unwrap();
        for (a, b) in ed.data().iter().zip(out.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn weighted_blend_half_gamma_reduces_to_linear_when_normalized() {
        let ed = Volume::from_fn([2, 2, 2], |z, y, x| (z + y + x) as f32 * 0.07);
        let es = Volume::from_fn([2, 2, 2], |z, y, x| (4 * z + 2 * y + x) as f32 * 0.03);
        let zero = VectorField::zeros([2, 2, 2]);
        let gamma = WeightMap::uniform([2, 2, 2], 0.5).unwrap();
        for t in [0.25, 0.5, 0.8] {
            let weighted =
                blend_weighted(&ed, &es, &zero, &zero, phase(t), &gamma, true).unwrap();
            let linear = blend_linear(&ed, &es, &zero, &zero, phase(t)).unwrap();
            for (a, b) in weighted.data().iter().zip(linear.data().iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn weighted_blend_literal_form_darkens() {
        // Constant 1 inputs, gamma 0.5, t = 0.5, no renormalization:
        // 0.5*0.5*1 + 0.5*0.5*1 = 0.5, exposing the non-unity weight sum.
        let one = Volume::constant([2, 2, 2], 1.0);
        let zero = VectorField::zeros([2, 2, 2]);
        let gamma = WeightMap::uniform([2, 2, 2], 0.5).unwrap();
        let out = blend_weighted(&one, &one, &zero, &zero, phase(0.5), &gamma, false).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn weight_map_rejects_out_of_range() {
        let mut g = Array3::from_elem((2, 2, 2), 0.5f32);
        g[[0, 0, 0]] = 1.2;
        assert!(WeightMap::new(g).is_err());
        let mut g = Array3::from_elem((2, 2, 2), 0.5f32);
        g[[1, 1, 1]] = -0.01;
        assert!(WeightMap::new(g).is_err());
    }

    #[test]
    fn normalized_blend_depends_on_gamma_only_through_weight_ratio() {
        // gamma and its complement-swap give the same output when the ratio
        // (1-t) g_ed : t g_es is unchanged; at t = 0.5 swapping input roles
        // and gamma simultaneously leaves the blend fixed.
        let ed = Volume::from_fn([2, 2, 2], |z, y, x| (z + 3 * y + 2 * x) as f32 * 0.05);
        let es = Volume::from_fn([2, 2, 2], |z, y, x| (2 * z + y + 3 * x) as f32 * 0.04);
        let zero = VectorField::zeros([2, 2, 2]);
        let gamma = WeightMap::uniform([2, 2, 2], 0.3).unwrap();
        let swapped = WeightMap::uniform([2, 2, 2], 0.7).unwrap();
        let a = blend_weighted(&ed, &es, &zero, &zero, phase(0.5), &gamma, true).unwrap();
        let b = blend_weighted(&es, &ed, &zero, &zero, phase(0.5), &swapped, true).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
