//! Image-quality metrics: MSE, NRMSE, PSNR, SSIM and Dice.
//!
//! All metrics accumulate in f64. SSIM uses a 7x7x7 uniform window with the
//! standard constants C1 = (0.01 * peak)^2 and C2 = (0.03 * peak)^2,
//! population statistics per window, averaged over all centers where the
//! full window fits. A slicewise 2D variant is exposed for comparison with
//! per-slice evaluation protocols.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::{check_same_dims, Volume};

/// Mean squared voxel difference.
pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_same_dims("mse", a.dims(), b.dims())?;
    let n = a.num_voxels() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Root mean squared error normalized by the reference intensity range.
pub fn nrmse(pred: &Volume, reference: &Volume) -> Result<f64> {
    let err = mse(pred, reference)?;
    let (lo, hi) = reference.min_max();
    let range = hi as f64 - lo as f64;
    if !(range > 0.0) {
        return Err(CoreError::DegenerateRange(
            "nrmse reference volume has zero intensity range".into(),
        ));
    }
    Ok(err.sqrt() / range)
}

/// Peak signal-to-noise ratio in dB; identical volumes map to +infinity.
pub fn psnr(pred: &Volume, reference: &Volume, peak: f64) -> Result<f64> {
    let err = mse(pred, reference)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

const SSIM_WINDOW: usize = 7;

/// Native 3D SSIM with a 7^3 uniform window.
pub fn ssim(pred: &Volume, reference: &Volume) -> Result<f64> {
    ssim_with_peak(pred, reference, 1.0)
}

pub fn ssim_with_peak(pred: &Volume, reference: &Volume, peak: f64) -> Result<f64> {
    check_same_dims("ssim", pred.dims(), reference.dims())?;
    let [d, h, w] = pred.dims();
    if d < SSIM_WINDOW || h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Validation(format!(
            "ssim needs every extent >= {SSIM_WINDOW}, got {:?}",
            pred.dims()
        )));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);

    // Integral volumes over a, b, a^2, b^2 and ab make each window sum O(1).
    let ia = Integral::build(pred, |x, _| x);
    let ib = Integral::build(reference, |_, y| y);
    let iaa = Integral::build2(pred, reference, |x, _| x * x);
    let ibb = Integral::build2(pred, reference, |_, y| y * y);
    let iab = Integral::build2(pred, reference, |x, y| x * y);

    let n = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for z in 0..=d - SSIM_WINDOW {
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let sa = ia.window_sum(z, y, x, SSIM_WINDOW);
                let sb = ib.window_sum(z, y, x, SSIM_WINDOW);
                let saa = iaa.window_sum(z, y, x, SSIM_WINDOW);
                let sbb = ibb.window_sum(z, y, x, SSIM_WINDOW);
                let sab = iab.window_sum(z, y, x, SSIM_WINDOW);
                let mu_a = sa / n;
                let mu_b = sb / n;
                let var_a = saa / n - mu_a * mu_a;
                let var_b = sbb / n - mu_b * mu_b;
                let cov = sab / n - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                acc += num / den;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Slicewise 2D SSIM (7x7 windows per z-slice, averaged over all slices).
pub fn ssim_slicewise(pred: &Volume, reference: &Volume) -> Result<f64> {
    check_same_dims("ssim_slicewise", pred.dims(), reference.dims())?;
    let [d, h, w] = pred.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Validation(format!(
            "slicewise ssim needs in-plane extents >= {SSIM_WINDOW}, got {:?}",
            pred.dims()
        )));
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for z in 0..d {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let a = pred.data()[[z, y, x]] as f64;
                        let b = reference.data()[[z, y, x]] as f64;
                        sa += a;
                        sb += b;
                        saa += a * a;
                        sbb += b * b;
                        sab += a * b;
                    }
                }
                let mu_a = sa / n;
                let mu_b = sb / n;
                let var_a = saa / n - mu_a * mu_a;
                let var_b = sbb / n - mu_b * mu_b;
                let cov = sab / n - mu_a * mu_b;
                acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Dice overlap of an integer label in two mask volumes. Voxels are matched
/// by rounding to the nearest integer. Two empty masks agree perfectly and
/// score 1 by convention.
pub fn dice(a: &Volume, b: &Volume, label: u32) -> Result<f64> {
    check_same_dims("dice", a.dims(), b.dims())?;
    let mut count_a = 0usize;
    let mut count_b = 0usize;
    let mut inter = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let in_a = x.round() as i64 == label as i64;
        let in_b = y.round() as i64 == label as i64;
        count_a += in_a as usize;
        count_b += in_b as usize;
        inter += (in_a && in_b) as usize;
    }
    if count_a + count_b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (count_a + count_b) as f64)
}

struct Integral {
    // (d+1, h+1, w+1) prefix sums
    data: ndarray::Array3<f64>,
}

impl Integral {
    fn build(v: &Volume, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::build2(v, v, f)
    }

    fn build2(a: &Volume, b: &Volume, f: impl Fn(f64, f64) -> f64) -> Self {
        let [d, h, w] = a.dims();
        let mut data = ndarray::Array3::zeros((d + 1, h + 1, w + 1));
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let v = f(a.data()[[z, y, x]] as f64, b.data()[[z, y, x]] as f64);
                    data[[z + 1, y + 1, x + 1]] = v
                        + data[[z, y + 1, x + 1]]
                        + data[[z + 1, y, x + 1]]
                        + data[[z + 1, y + 1, x]]
                        - data[[z, y, x + 1]]
                        - data[[z, y + 1, x]]
                        - data[[z + 1, y, x]]
                        + data[[z, y, x]];
                }
            }
        }
        Self { data }
    }

    #[inline]
    fn window_sum(&self, z: usize, y: usize, x: usize, k: usize) -> f64 {
        let d = &self.data;
        let (z1, y1, x1) = (z + k, y + k, x + k);
        d[[z1, y1, x1]] - d[[z, y1, x1]] - d[[z1, y, x1]] - d[[z1, y1, x]]
            + d[[z, y, x1]]
            + d[[z, y1, x]]
            + d[[z1, y, x]]
            - d[[z, y, x]]
    }
}

/// One evaluated prediction/reference pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample: String,
    pub phase: String,
    pub mse: f64,
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
}

/// Per-phase rows plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregate: MetricRow,
}

impl MetricReport {
    /// Build a report from rows; the aggregate is the arithmetic mean of each
    /// metric (Dice only when present on every row).
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Validation("metric report needs >= 1 row".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let dice = if rows.iter().all(|r| r.dice.is_some()) {
            Some(rows.iter().map(|r| r.dice.unwrap()).sum::<f64>() / n)
        } else {
            None
        };
        let aggregate = MetricRow {
            sample: "aggregate".into(),
            phase: "all".into(),
            mse: mean(|r| r.mse),
            nrmse: mean(|r| r.nrmse),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            dice,
        };
        Ok(Self { rows, aggregate })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    /// Flat CSV with one row per sample/phase/metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,phase,metric,value\n");
        let mut push = |row: &MetricRow| {
            for (name, value) in [
                ("mse", Some(row.mse)),
                ("nrmse", Some(row.nrmse)),
                ("psnr", Some(row.psnr)),
                ("ssim", Some(row.ssim)),
                ("dice", row.dice),
            ] {
                if let Some(v) = value {
                    out.push_str(&format!("{},{},{},{}\n", row.sample, row.phase, name, v));
                }
            }
        };
        for row in &self.rows {
            push(row);
        }
        push(&self.aggregate);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random::<f32>())
    }

    /// Naive windowed SSIM used as an independent oracle.
    fn ssim_oracle(a: &Volume, b: &Volume) -> f64 {
        let [d, h, w] = a.dims();
        let k = SSIM_WINDOW;
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        let mut acc = 0.0;
        let mut count = 0;
        for z0 in 0..=d - k {
            for y0 in 0..=h - k {
                for x0 in 0..=w - k {
                    let mut va = Vec::new();
                    let mut vb = Vec::new();
                    for z in z0..z0 + k {
                        for y in y0..y0 + k {
                            for x in x0..x0 + k {
                                va.push(a.data()[[z, y, x]] as f64);
                                vb.push(b.data()[[z, y, x]] as f64);
                            }
                        }
                    }
                    let n = va.len() as f64;
                    let ma = va.iter().sum::<f64>() / n;
                    let mb = vb.iter().sum::<f64>() / n;
                    let var_a = va.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
                    let var_b = vb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
                    let cov = va
                        .iter()
                        .zip(&vb)
                        .map(|(x, y)| (x - ma) * (y - mb))
                        .sum::<f64>()
                        / n;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    #[test]
    fn mse_basics() {
        let a = random_volume([4, 4, 4], 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let zero = Volume::constant([4, 4, 4], 0.0);
        let one = Volume::constant([4, 4, 4], 1.0);
        assert!((mse(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
        // symmetric
        let b = random_volume([4, 4, 4], 2);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn mse_matches_loop_oracle() {
        let a = random_volume([8, 8, 8], 3);
        let b = random_volume([8, 8, 8], 4);
        let mut acc = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            acc += (*x as f64 - *y as f64).powi(2);
        }
        let expect = acc / 512.0;
        assert!((mse(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn nrmse_arithmetic() {
        let a = random_volume([4, 4, 4], 5);
        assert_eq!(nrmse(&a, &a).unwrap(), 0.0);
        // range-1 reference with mse 0.04 gives 0.2
        let mut reference = Volume::constant([4, 4, 4], 0.0);
        reference.data_mut()[[0, 0, 0]] = 1.0;
        let mut pred = reference.clone();
        for v in pred.data_mut().iter_mut() {
            *v += 0.2;
        }
        let got = nrmse(&pred, &reference).unwrap();
        assert!((got - 0.2).abs() < 1e-6);
    }

    #[test]
    fn nrmse_rejects_constant_reference() {
        let a = Volume::constant([4, 4, 4], 0.5);
        let b = Volume::constant([4, 4, 4], 0.5);
        assert!(matches!(
            nrmse(&a, &b),
            Err(CoreError::DegenerateRange(_))
        ));
    }

    #[test]
    fn psnr_20db_for_mse_hundredth() {
        // formula check in exact f64 arithmetic
        assert!((10.0f64 * (1.0f64 / 0.01).log10() - 20.0).abs() < 1e-12);
        // volume path: inputs are f32 so 0.1 is quantized; stay within 1e-6 dB
        let reference = Volume::constant([10, 10, 10], 0.0);
        let pred = Volume::constant([10, 10, 10], 0.1);
        let got = psnr(&pred, &reference, 1.0).unwrap();
        assert!((got - 20.0).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_volume([4, 4, 4], 6);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random_volume([8, 8, 8], 7);
        let got = ssim(&a, &a).unwrap();
        assert!((got - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_bruteforce_oracle() {
        for seed in 0..5 {
            let a = random_volume([8, 8, 8], 100 + seed);
            let b = random_volume([8, 8, 8], 200 + seed);
            let got = ssim(&a, &b).unwrap();
            let expect = ssim_oracle(&a, &b);
            assert!((got - expect).abs() < 1e-6, "seed {seed}: {got} vs {expect}");
        }
    }

    #[test]
    fn ssim_inverted_binary_pattern_matches_oracle() {
        let a = Volume::from_fn([8, 8, 8], |z, y, x| ((z + y + x) % 2) as f32);
        let b = Volume::from_fn([8, 8, 8], |z, y, x| 1.0 - ((z + y + x) % 2) as f32);
        let got = ssim(&a, &b).unwrap();
        let expect = ssim_oracle(&a, &b);
        assert!((got - expect).abs() < 1e-9);
        assert!(got < 0.0, "anti-correlated pattern should be negative: {got}");
    }

    #[test]
    fn ssim_constant_offset_matches_direct_formula() {
        // Constant windows: variances and covariance vanish, so ssim is
        // (2 mu_a mu_b + c1)(c2) / ((mu_a^2 + mu_b^2 + c1)(c2)).
        let a = Volume::constant([8, 8, 8], 0.4);
        let b = Volume::constant([8, 8, 8], 0.5);
        let (av, bv) = (0.4f32 as f64, 0.5f32 as f64);
        let c1 = 0.0001f64;
        let expect = (2.0 * av * bv + c1) / (av * av + bv * bv + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-7, "{got} vs {expect}");
    }

    #[test]
    fn ssim_rejects_small_volumes() {
        let a = Volume::constant([6, 8, 8], 0.0);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn slicewise_ssim_identical_is_one() {
        let a = random_volume([3, 8, 8], 8);
        let got = ssim_slicewise(&a, &a).unwrap();
        assert!((got - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dice_conventions() {
        let a = Volume::from_fn([4, 4, 4], |z, _, _| (z < 2) as u8 as f32);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = Volume::from_fn([4, 4, 4], |z, _, _| (z >= 2) as u8 as f32);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        let empty = Volume::constant([4, 4, 4], 0.0);
        assert_eq!(dice(&empty, &empty, 1).unwrap(), 1.0);
        // symmetry
        assert_eq!(dice(&a, &b, 1).unwrap(), dice(&b, &a, 1).unwrap());
    }

    #[test]
    fn dice_two_thirds_when_overlap_is_half_the_union() {
        // |A| = |B| = 6, intersection 4, union 8: dice = 8 / 12 = 2/3.
        // Flattened, A covers positions 0..6 and B covers 2..8.
        let mut a = Volume::constant([1, 2, 4], 0.0);
        let mut b = Volume::constant([1, 2, 4], 0.0);
        for i in 0..6usize {
            a.data_mut()[[0, i / 4, i % 4]] = 1.0;
        }
        for i in 2..8usize {
            b.data_mut()[[0, i / 4, i % 4]] = 1.0;
        }
        let got = dice(&a, &b, 1).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_consistency() {
        // Relabeling voxel order identically in both inputs changes nothing:
        // compare against an axis-permuted copy of both volumes.
        let a = random_volume([4, 4, 4], 9);
        let b = random_volume([4, 4, 4], 10);
        let perm = |v: &Volume| {
            Volume::from_fn([4, 4, 4], |z, y, x| v.data()[[x, z, y]])
        };
        let (pa, pb) = (perm(&a), perm(&b));
        assert!((mse(&a, &b).unwrap() - mse(&pa, &pb).unwrap()).abs() < 1e-12);
        assert!((nrmse(&a, &b).unwrap() - nrmse(&pa, &pb).unwrap()).abs() < 1e-12);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&pa, &pb, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip_and_csv_shape() {
        let rows = vec![
            MetricRow {
                sample: "s0".into(),
                phase: "0.25".into(),
                mse: 0.01,
                nrmse: 0.1,
                psnr: 20.0,
                ssim: 0.9,
                dice: Some(0.95),
            },
            MetricRow {
                sample: "s0".into(),
                phase: "0.50".into(),
                mse: 0.02,
                nrmse: 0.2,
                psnr: 17.0,
                ssim: 0.8,
                dice: Some(0.85),
            },
        ];
        let report = MetricReport::from_rows(rows).unwrap();
        assert!((report.aggregate.mse - 0.015).abs() < 1e-12);
        assert!((report.aggregate.dice.unwrap() - 0.9).abs() < 1e-12);
        let csv = report.to_csv();
        // 2 rows x 5 metrics + aggregate x 5 + header
        assert_eq!(csv.lines().count(), 1 + 15);
        let parsed: MetricReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed.rows.len(), 2);
    }
}
