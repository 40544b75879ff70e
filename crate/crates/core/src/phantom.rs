//! Synthetic 4D phantoms with analytically known deformation fields, plus
//! the preprocessing pipeline (resample, crop, pad, normalize).
//!
//! The phantom is an ellipsoidal shell (bright wall around a dimmer pool)
//! that contracts radially and twists about its long (z) axis as the phase
//! advances. The full-deformation pull-back field is closed form; the field
//! at phase `t` is `s(t)` times that field with `s(t) = t^p`, so the motion
//! follows a nonlinear time law for `p != 1` while intermediate fields stay
//! exact scalar multiples of the end-to-end field. Every phase volume is
//! produced by trilinearly warping the ED volume with its exact field, which
//! keeps the stored images and the stored fields consistent by construction.

use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::resample::resample_volume;
use crate::volume::{VectorField, Volume};
use crate::warp::warp;

/// Intensity of the pool enclosed by the shell (shell wall is 1.0).
const POOL_INTENSITY: f64 = 0.35;
/// Edge softness of the shell profile, in voxels.
const EDGE_WIDTH: f64 = 1.5;

/// Geometry and dynamics of one synthetic sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Grid extents `[D, H, W]`.
    pub dims: [usize; 3],
    /// Shell center in voxel coordinates `[z, y, x]`.
    pub center: [f64; 3],
    /// Outer semi-axes in voxels `[rz, ry, rx]`.
    pub radii: [f64; 3],
    /// Shell wall thickness in voxels.
    pub thickness: f64,
    /// Peak contraction fraction at ES; the object scale at ES is `1 - alpha`.
    pub alpha: f64,
    /// Time-law exponent `p`; the deformation magnitude follows `s(t) = t^p`.
    pub time_exponent: f64,
    /// Peak twist angle (radians) about the z axis, differential along z.
    pub twist_max: f64,
    /// Standard deviation of additive Gaussian noise applied after warping.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// A centered shell with proportions that leave the required margin on
    /// any grid of at least 16 voxels per axis.
    pub fn default_for(dims: [usize; 3], seed: u64) -> Self {
        let center = [
            (dims[0] as f64 - 1.0) / 2.0,
            (dims[1] as f64 - 1.0) / 2.0,
            (dims[2] as f64 - 1.0) / 2.0,
        ];
        let min_dim = *dims.iter().min().unwrap() as f64;
        let r = 0.34 * min_dim;
        Self {
            dims,
            center,
            // slightly anisotropic in-plane radii make the twist observable
            radii: [r, 0.92 * r, r],
            thickness: (0.16 * min_dim).max(2.5),
            alpha: 0.3,
            time_exponent: 2.0,
            twist_max: 0.3,
            noise_sigma: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(CoreError::Validation("phantom dims must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(CoreError::Validation(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.time_exponent > 0.0) {
            return Err(CoreError::Validation(format!(
                "time exponent must be positive, got {}",
                self.time_exponent
            )));
        }
        if !(self.thickness > 0.0) || self.radii.iter().any(|&r| r <= self.thickness) {
            return Err(CoreError::Validation(
                "thickness must be positive and smaller than every radius".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(CoreError::Validation("noise sigma must be >= 0".into()));
        }
        for a in 0..3 {
            let lo = self.center[a] - self.radii[a];
            let hi = self.center[a] + self.radii[a];
            if lo < 2.0 || hi > self.dims[a] as f64 - 3.0 {
                return Err(CoreError::Validation(format!(
                    "shell exceeds grid: axis {a} spans [{lo:.1}, {hi:.1}] on extent {} \
                     (margin of 2 voxels required)",
                    self.dims[a]
                )));
            }
        }
        Ok(())
    }

    /// Normalized radius against the outer ellipsoid at a real position.
    fn rho_outer(&self, p: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.radii[a];
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Normalized radius against the inner ellipsoid.
    fn rho_inner(&self, p: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / (self.radii[a] - self.thickness);
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Continuous ED intensity at a real position `[z, y, x]`.
    fn intensity(&self, p: [f64; 3]) -> f64 {
        let r_out = (self.radii[0] + self.radii[1] + self.radii[2]) / 3.0;
        let r_in = r_out - self.thickness;
        let d_out = (1.0 - self.rho_outer(p)) * r_out;
        let d_in = (self.rho_inner(p) - 1.0) * r_in;
        let shell = edge(d_out) * edge(d_in);
        let pool = POOL_INTENSITY * edge(-d_in);
        (shell + pool).min(1.0)
    }

    /// Crisp shell membership at a real position (used for masks).
    fn in_shell(&self, p: [f64; 3]) -> bool {
        self.rho_outer(p) <= 1.0 && self.rho_inner(p) >= 1.0
    }

    /// Pull-back displacement of the full (ES) deformation at voxel `v`:
    /// the source position in the ED frame minus `v`, in voxel units.
    fn full_field_at(&self, v: [f64; 3]) -> [f64; 3] {
        let scale = 1.0 - self.alpha;
        let rel_z = v[0] - self.center[0];
        let rel_y = v[1] - self.center[1];
        let rel_x = v[2] - self.center[2];
        // Differential twist: rotation angle grows linearly along z in the
        // source frame; z_src = cz + rel_z / scale.
        let theta = self.twist_max * rel_z / (scale * self.radii[0]);
        let (sin_t, cos_t) = theta.sin_cos();
        // Inverse rotation by theta in the (x, y) plane, then inverse scale.
        let src_x = (rel_x * cos_t + rel_y * sin_t) / scale;
        let src_y = (-rel_x * sin_t + rel_y * cos_t) / scale;
        let src_z = rel_z / scale;
        [src_x - rel_x, src_y - rel_y, src_z - rel_z] // (dx, dy, dz)
    }

    /// The exact pull-back field of the full deformation on the whole grid.
    pub fn full_field(&self) -> VectorField {
        VectorField::from_fn(self.dims, |z, y, x| {
            let d = self.full_field_at([z as f64, y as f64, x as f64]);
            [d[0] as f32, d[1] as f32, d[2] as f32]
        })
    }

    /// `s(t) = t^p`.
    pub fn time_law(&self, t: f64) -> f64 {
        t.powf(self.time_exponent)
    }
}

/// Smooth 0-to-1 ramp of width [`EDGE_WIDTH`] centered on d = 0.
fn edge(d: f64) -> f64 {
    let u = d / EDGE_WIDTH + 0.5;
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

/// A training record: the two endpoint volumes, the ordered intermediates,
/// and (when generated synthetically) per-phase masks and exact fields.
#[derive(Debug, Clone)]
pub struct PhaseSample {
    pub ed: Volume,
    pub es: Volume,
    /// Interior phases, strictly increasing in (0, 1).
    pub intermediates: Vec<(f64, Volume)>,
    /// One mask per phase (ED, interiors in order, ES).
    pub masks: Option<Vec<Volume>>,
    /// One exact pull-back field per phase; the ED entry is the zero field.
    pub true_fields: Option<Vec<VectorField>>,
}

impl PhaseSample {
    /// All phase values including the endpoints: `[0, t_1, .., t_k, 1]`.
    pub fn phases(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.intermediates.len() + 2);
        out.push(0.0);
        out.extend(self.intermediates.iter().map(|(t, _)| *t));
        out.push(1.0);
        out
    }

    /// Volume at phase slot `i` (0 = ED, last = ES).
    pub fn volume_at(&self, i: usize) -> &Volume {
        let n = self.intermediates.len() + 2;
        if i == 0 {
            &self.ed
        } else if i == n - 1 {
            &self.es
        } else {
            &self.intermediates[i - 1].1
        }
    }

    pub fn num_phases(&self) -> usize {
        self.intermediates.len() + 2
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.ed.dims();
        let mut prev = 0.0;
        for (t, v) in &self.intermediates {
            if !(*t > prev && *t < 1.0) {
                return Err(CoreError::Validation(format!(
                    "intermediate phases must be strictly increasing in (0, 1), got {t}"
                )));
            }
            prev = *t;
            crate::volume::check_same_dims("phase sample", dims, v.dims())?;
        }
        crate::volume::check_same_dims("phase sample", dims, self.es.dims())?;
        if let Some(masks) = &self.masks {
            for m in masks {
                crate::volume::check_same_dims("phase sample mask", dims, m.dims())?;
            }
        }
        if let Some(fields) = &self.true_fields {
            for f in fields {
                crate::volume::check_same_dims("phase sample field", dims, f.dims())?;
            }
        }
        Ok(())
    }
}

/// Generate one phantom sample with `n_phases` evenly spaced phases from ED
/// to ES (so `n_phases - 2` intermediates). Deterministic per seed.
pub fn generate_phantom(spec: &PhantomSpec, n_phases: usize) -> Result<PhaseSample> {
    spec.validate()?;
    if n_phases < 3 {
        return Err(CoreError::Validation(format!(
            "n_phases must be >= 3 so at least one intermediate exists, got {n_phases}"
        )));
    }
    let ed = Volume::from_fn(spec.dims, |z, y, x| {
        spec.intensity([z as f64, y as f64, x as f64]) as f32
    });
    let full = spec.full_field();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f64, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut apply_noise = |v: &mut Volume| {
        if spec.noise_sigma > 0.0 {
            for val in v.data_mut().iter_mut() {
                *val = (*val + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
    };

    let mut volumes = Vec::with_capacity(n_phases);
    let mut masks = Vec::with_capacity(n_phases);
    let mut fields = Vec::with_capacity(n_phases);
    let mut phases = Vec::with_capacity(n_phases);
    for i in 0..n_phases {
        let t = i as f64 / (n_phases - 1) as f64;
        let s = spec.time_law(t) as f32;
        let field = full.scaled(s);
        let mut vol = if i == 0 {
            ed.clone()
        } else {
            warp(&ed, &field)?
        };
        apply_noise(&mut vol);
        let mask = Volume::from_fn(spec.dims, |z, y, x| {
            let p = [
                z as f64 + field.data()[[2, z, y, x]] as f64,
                y as f64 + field.data()[[1, z, y, x]] as f64,
                x as f64 + field.data()[[0, z, y, x]] as f64,
            ];
            spec.in_shell(p) as u8 as f32
        });
        volumes.push(vol);
        masks.push(mask);
        fields.push(field);
        phases.push(t);
    }

    let es = volumes.pop().unwrap();
    let ed_vol = volumes.remove(0);
    let intermediates = phases[1..n_phases - 1]
        .iter()
        .cloned()
        .zip(volumes)
        .collect();
    let sample = PhaseSample {
        ed: ed_vol,
        es,
        intermediates,
        masks: Some(masks),
        true_fields: Some(fields),
    };
    sample.validate()?;
    Ok(sample)
}

/// Resample to `target_dims`, center-crop to `crop_dims`, zero-pad the z
/// axis to `pad_z_to` (split evenly, extra slab at the end), then min-max
/// normalize to `[0, 1]`.
pub fn preprocess(
    v: &Volume,
    target_dims: [usize; 3],
    crop_dims: [usize; 3],
    pad_z_to: usize,
) -> Result<Volume> {
    let dims = v.dims();
    let factors = [
        target_dims[0] as f64 / dims[0] as f64,
        target_dims[1] as f64 / dims[1] as f64,
        target_dims[2] as f64 / dims[2] as f64,
    ];
    let resampled = resample_volume(v, factors)?;
    let rd = resampled.dims();
    for a in 0..3 {
        if crop_dims[a] > rd[a] {
            return Err(CoreError::Validation(format!(
                "crop dims {crop_dims:?} exceed resampled dims {rd:?}"
            )));
        }
    }
    let start = [
        (rd[0] - crop_dims[0]) / 2,
        (rd[1] - crop_dims[1]) / 2,
        (rd[2] - crop_dims[2]) / 2,
    ];
    let cropped = resampled
        .data()
        .slice(ndarray::s![
            start[0]..start[0] + crop_dims[0],
            start[1]..start[1] + crop_dims[1],
            start[2]..start[2] + crop_dims[2]
        ])
        .to_owned();
    if pad_z_to < crop_dims[0] {
        return Err(CoreError::Validation(format!(
            "pad target {pad_z_to} is smaller than the cropped z extent {}",
            crop_dims[0]
        )));
    }
    let total = pad_z_to - crop_dims[0];
    let before = total / 2;
    let mut padded = Array3::zeros((pad_z_to, crop_dims[1], crop_dims[2]));
    padded
        .slice_mut(ndarray::s![before..before + crop_dims[0], .., ..])
        .assign(&cropped);
    let mut out = Volume::from_array(padded);
    out.set_spacing(resampled.spacing())?;
    Ok(out.normalize())
}
