//! Dense compute kernels behind the graph ops: im2col convolution,
//! trilinear warping and resizing, pooling and the L1 gradient penalty.
//!
//! All tensors are `[C, D, H, W]` in standard (row-major) layout; kernels
//! work on raw slices with explicit index math. Everything is sequential
//! and accumulation orders are fixed, so results are bitwise reproducible.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};

use crate::elem::Element;

/// Output extent of a 3x3x3 convolution with padding 1.
#[inline]
pub fn conv_out_dim(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

/// Unfold a padded volume into convolution columns `[C*27, L]`.
fn im2col<T: Element>(input: &ArrayView4<T>, stride: usize) -> Array2<T> {
    let (c_in, d, h, w) = input.dim();
    let (od, oh, ow) = (
        conv_out_dim(d, stride),
        conv_out_dim(h, stride),
        conv_out_dim(w, stride),
    );
    let l = od * oh * ow;
    let src = input.as_slice().expect("conv input must be contiguous");
    let mut cols = Array2::<T>::zeros((c_in * 27, l));
    let dst = cols.as_slice_mut().unwrap();
    for ci in 0..c_in {
        let base_in = ci * d * h * w;
        for kz in 0..3usize {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = ((ci * 3 + kz) * 3 + ky) * 3 + kx;
                    let row_off = row * l;
                    for oz in 0..od {
                        let iz = (oz * stride + kz) as isize - 1;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_off = base_in + (iz as usize * h + iy as usize) * w;
                            let out_off = row_off + (oz * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    dst[out_off + ox] = src[in_off + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add convolution columns back onto the input grid (transpose of
/// [`im2col`]).
fn col2im<T: Element>(
    cols: &Array2<T>,
    c_in: usize,
    dims: [usize; 3],
    stride: usize,
) -> Array4<T> {
    let [d, h, w] = dims;
    let (od, oh, ow) = (
        conv_out_dim(d, stride),
        conv_out_dim(h, stride),
        conv_out_dim(w, stride),
    );
    let l = od * oh * ow;
    let src = cols.as_slice().unwrap();
    let mut out = Array4::<T>::zeros((c_in, d, h, w));
    let dst = out.as_slice_mut().unwrap();
    for ci in 0..c_in {
        let base_in = ci * d * h * w;
        for kz in 0..3usize {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = ((ci * 3 + kz) * 3 + ky) * 3 + kx;
                    let row_off = row * l;
                    for oz in 0..od {
                        let iz = (oz * stride + kz) as isize - 1;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_off = base_in + (iz as usize * h + iy as usize) * w;
                            let out_off = row_off + (oz * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    dst[in_off + ix as usize] =
                                        dst[in_off + ix as usize] + src[out_off + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3x3x3 convolution, padding 1. `weight` is `[C_out, C_in * 27]` flattened
/// from `[C_out, C_in, 3, 3, 3]`.
pub fn conv3d_forward<T: Element>(
    input: &ArrayView4<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    stride: usize,
) -> Array4<T> {
    let (c_in, d, h, w) = input.dim();
    let (od, oh, ow) = (
        conv_out_dim(d, stride),
        conv_out_dim(h, stride),
        conv_out_dim(w, stride),
    );
    let cols = im2col(input, stride);
    let w_mat = ArrayView2::from_shape((c_out, c_in * 27), weight).unwrap();
    let mut out_mat = w_mat.dot(&cols);
    for (r, mut row) in out_mat.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v + bias[r]);
    }
    let (vec, _) = out_mat.into_raw_vec_and_offset();
    Array4::from_shape_vec((c_out, od, oh, ow), vec).unwrap()
}

/// Gradients of [`conv3d_forward`] with respect to input, weight and bias.
pub fn conv3d_backward<T: Element>(
    input: &ArrayView4<T>,
    weight: &[T],
    g_out: &ArrayView4<T>,
    stride: usize,
    need_input_grad: bool,
) -> (Option<Array4<T>>, Array2<T>, Array1<T>) {
    let (c_in, d, h, w) = input.dim();
    let (c_out, od, oh, ow) = g_out.dim();
    let l = od * oh * ow;
    let cols = im2col(input, stride);
    let g_mat =
        ArrayView2::from_shape((c_out, l), g_out.as_slice().expect("contiguous grad")).unwrap();
    let g_weight = g_mat.dot(&cols.t());
    let g_bias = g_mat.sum_axis(ndarray::Axis(1));
    let g_input = if need_input_grad {
        let w_mat = ArrayView2::from_shape((c_out, c_in * 27), weight).unwrap();
        let g_cols = w_mat.t().dot(&g_mat);
        Some(col2im(&g_cols, c_in, [d, h, w], stride))
    } else {
        None
    };
    (g_input, g_weight, g_bias)
}

/// Clamped trilinear corner data for one sample position.
struct Corners<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    z0: usize,
    z1: usize,
    fx: T,
    fy: T,
    fz: T,
    /// Whether the pre-clamp coordinate was inside the grid along each axis;
    /// clamped axes have zero derivative with respect to the coordinate.
    in_x: bool,
    in_y: bool,
    in_z: bool,
}

#[inline]
fn corners<T: Element>(x: T, y: T, z: T, d: usize, h: usize, w: usize) -> Corners<T> {
    let split = |v: T, n: usize| -> (usize, usize, T, bool) {
        let max = T::from_f64((n - 1) as f64);
        let inside = v >= T::zero() && v <= max;
        let v = if v < T::zero() {
            T::zero()
        } else if v > max {
            max
        } else {
            v
        };
        let lo = v.floor();
        let i0 = lo.to_float() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, v - lo, inside)
    };
    let (x0, x1, fx, in_x) = split(x, w);
    let (y0, y1, fy, in_y) = split(y, h);
    let (z0, z1, fz, in_z) = split(z, d);
    Corners {
        x0,
        x1,
        y0,
        y1,
        z0,
        z1,
        fx,
        fy,
        fz,
        in_x,
        in_y,
        in_z,
    }
}

#[inline]
fn vol_idx(c: usize, z: usize, y: usize, x: usize, d: usize, h: usize, w: usize) -> usize {
    ((c * d + z) * h + y) * w + x
}

/// Trilinear blend in the same lerp form as the core sampling kernel, so
/// graph resampling agrees bitwise with the core resampling operators.
#[inline]
fn lerp3<T: Element>(c: &Corners<T>, g: &impl Fn(usize, usize, usize) -> T) -> T {
    let c000 = g(c.z0, c.y0, c.x0);
    let c001 = g(c.z0, c.y0, c.x1);
    let c010 = g(c.z0, c.y1, c.x0);
    let c011 = g(c.z0, c.y1, c.x1);
    let c100 = g(c.z1, c.y0, c.x0);
    let c101 = g(c.z1, c.y0, c.x1);
    let c110 = g(c.z1, c.y1, c.x0);
    let c111 = g(c.z1, c.y1, c.x1);
    let c00 = c000 + (c001 - c000) * c.fx;
    let c01 = c010 + (c011 - c010) * c.fx;
    let c10 = c100 + (c101 - c100) * c.fx;
    let c11 = c110 + (c111 - c110) * c.fx;
    let c0 = c00 + (c01 - c00) * c.fy;
    let c1 = c10 + (c11 - c10) * c.fy;
    c0 + (c1 - c0) * c.fz
}

/// Warp every channel of `vol` by the displacement field (pull-back,
/// clamped trilinear): `out[c](v) = vol[c](v + field(v))`.
pub fn warp_forward<T: Element>(vol: &ArrayView4<T>, field: &ArrayView4<T>) -> Array4<T> {
    let (c_n, d, h, w) = vol.dim();
    let src = vol.as_slice().expect("contiguous volume");
    let f = field.as_slice().expect("contiguous field");
    let plane = d * h * w;
    let mut out = Array4::<T>::zeros((c_n, d, h, w));
    let dst = out.as_slice_mut().unwrap();
    let mut v = 0usize;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let cx = T::from_f64(x as f64) + f[v];
                let cy = T::from_f64(y as f64) + f[plane + v];
                let cz = T::from_f64(z as f64) + f[2 * plane + v];
                let c = corners(cx, cy, cz, d, h, w);
                for ch in 0..c_n {
                    let g = |zz, yy, xx| src[vol_idx(ch, zz, yy, xx, d, h, w)];
                    dst[ch * plane + v] = lerp3(&c, &g);
                }
                v += 1;
            }
        }
    }
    out
}

/// Gradients of [`warp_forward`] with respect to the volume (scatter of the
/// corner weights) and the field (inner product with the spatial derivative
/// of the trilinear interpolant; zero along clamped axes).
pub fn warp_backward<T: Element>(
    vol: &ArrayView4<T>,
    field: &ArrayView4<T>,
    g_out: &ArrayView4<T>,
    need_vol_grad: bool,
    need_field_grad: bool,
) -> (Option<Array4<T>>, Option<Array4<T>>) {
    let (c_n, d, h, w) = vol.dim();
    let src = vol.as_slice().unwrap();
    let f = field.as_slice().unwrap();
    let go = g_out.as_slice().unwrap();
    let plane = d * h * w;
    let mut g_vol = need_vol_grad.then(|| Array4::<T>::zeros((c_n, d, h, w)));
    let mut g_field = need_field_grad.then(|| Array4::<T>::zeros((3, d, h, w)));
    let one = T::one();
    let mut v = 0usize;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let cx = T::from_f64(x as f64) + f[v];
                let cy = T::from_f64(y as f64) + f[plane + v];
                let cz = T::from_f64(z as f64) + f[2 * plane + v];
                let c = corners(cx, cy, cz, d, h, w);
                let (wx0, wx1) = (one - c.fx, c.fx);
                let (wy0, wy1) = (one - c.fy, c.fy);
                let (wz0, wz1) = (one - c.fz, c.fz);
                let mut acc_x = T::zero();
                let mut acc_y = T::zero();
                let mut acc_z = T::zero();
                for ch in 0..c_n {
                    let g = go[ch * plane + v];
                    if g == T::zero() {
                        continue;
                    }
                    let s = |zz, yy, xx| src[vol_idx(ch, zz, yy, xx, d, h, w)];
                    let v000 = s(c.z0, c.y0, c.x0);
                    let v001 = s(c.z0, c.y0, c.x1);
                    let v010 = s(c.z0, c.y1, c.x0);
                    let v011 = s(c.z0, c.y1, c.x1);
                    let v100 = s(c.z1, c.y0, c.x0);
                    let v101 = s(c.z1, c.y0, c.x1);
                    let v110 = s(c.z1, c.y1, c.x0);
                    let v111 = s(c.z1, c.y1, c.x1);
                    if let Some(gv) = g_vol.as_mut() {
                        let gs = gv.as_slice_mut().unwrap();
                        let mut scatter = |zz: usize, yy: usize, xx: usize, wt: T| {
                            let i = vol_idx(ch, zz, yy, xx, d, h, w);
                            gs[i] = gs[i] + g * wt;
                        };
                        scatter(c.z0, c.y0, c.x0, wx0 * wy0 * wz0);
                        scatter(c.z0, c.y0, c.x1, wx1 * wy0 * wz0);
                        scatter(c.z0, c.y1, c.x0, wx0 * wy1 * wz0);
                        scatter(c.z0, c.y1, c.x1, wx1 * wy1 * wz0);
                        scatter(c.z1, c.y0, c.x0, wx0 * wy0 * wz1);
                        scatter(c.z1, c.y0, c.x1, wx1 * wy0 * wz1);
                        scatter(c.z1, c.y1, c.x0, wx0 * wy1 * wz1);
                        scatter(c.z1, c.y1, c.x1, wx1 * wy1 * wz1);
                    }
                    if g_field.is_some() {
                        if c.in_x {
                            acc_x = acc_x
                                + g * ((v001 - v000) * wy0 * wz0
                                    + (v011 - v010) * wy1 * wz0
                                    + (v101 - v100) * wy0 * wz1
                                    + (v111 - v110) * wy1 * wz1);
                        }
                        if c.in_y {
                            acc_y = acc_y
                                + g * ((v010 - v000) * wx0 * wz0
                                    + (v011 - v001) * wx1 * wz0
                                    + (v110 - v100) * wx0 * wz1
                                    + (v111 - v101) * wx1 * wz1);
                        }
                        if c.in_z {
                            acc_z = acc_z
                                + g * ((v100 - v000) * wx0 * wy0
                                    + (v101 - v001) * wx1 * wy0
                                    + (v110 - v010) * wx0 * wy1
                                    + (v111 - v011) * wx1 * wy1);
                        }
                    }
                }
                if let Some(gf) = g_field.as_mut() {
                    let gs = gf.as_slice_mut().unwrap();
                    gs[v] = gs[v] + acc_x;
                    gs[plane + v] = gs[plane + v] + acc_y;
                    gs[2 * plane + v] = gs[2 * plane + v] + acc_z;
                }
                v += 1;
            }
        }
    }
    (g_vol, g_field)
}

/// Isotropic trilinear resize by `factor`; when `scale_components` is set
/// every channel is additionally multiplied by `factor` (displacement-field
/// semantics: vectors move into the target grid's voxel units).
pub fn resize_trilinear<T: Element>(
    input: &ArrayView4<T>,
    factor: f64,
    scale_components: bool,
) -> Array4<T> {
    let (c_n, d, h, w) = input.dim();
    let (od, oh, ow) = (
        (d as f64 * factor).round() as usize,
        (h as f64 * factor).round() as usize,
        (w as f64 * factor).round() as usize,
    );
    let src = input.as_slice().unwrap();
    let gain = if scale_components {
        T::from_f64(factor)
    } else {
        T::one()
    };
    let mut out = Array4::<T>::zeros((c_n, od, oh, ow));
    let dst = out.as_slice_mut().unwrap();
    let mut o = 0usize;
    for z in 0..od {
        let cz = T::from_f64((z as f64 + 0.5) / factor - 0.5);
        for y in 0..oh {
            let cy = T::from_f64((y as f64 + 0.5) / factor - 0.5);
            for x in 0..ow {
                let cx = T::from_f64((x as f64 + 0.5) / factor - 0.5);
                let c = corners(cx, cy, cz, d, h, w);
                for ch in 0..c_n {
                    let g = |zz, yy, xx| src[vol_idx(ch, zz, yy, xx, d, h, w)];
                    dst[ch * od * oh * ow + o] = lerp3(&c, &g) * gain;
                }
                o += 1;
            }
        }
    }
    out
}

/// Transpose of [`resize_trilinear`]: scatter output gradients through the
/// corner weights back onto the input grid.
pub fn resize_trilinear_backward<T: Element>(
    in_dims: (usize, usize, usize, usize),
    g_out: &ArrayView4<T>,
    factor: f64,
    scale_components: bool,
) -> Array4<T> {
    let (c_n, d, h, w) = in_dims;
    let (_, od, oh, ow) = g_out.dim();
    let go = g_out.as_slice().unwrap();
    let gain = if scale_components {
        T::from_f64(factor)
    } else {
        T::one()
    };
    let mut out = Array4::<T>::zeros((c_n, d, h, w));
    let dst = out.as_slice_mut().unwrap();
    let one = T::one();
    let mut o = 0usize;
    for z in 0..od {
        let cz = T::from_f64((z as f64 + 0.5) / factor - 0.5);
        for y in 0..oh {
            let cy = T::from_f64((y as f64 + 0.5) / factor - 0.5);
            for x in 0..ow {
                let cx = T::from_f64((x as f64 + 0.5) / factor - 0.5);
                let c = corners(cx, cy, cz, d, h, w);
                let (wx0, wx1) = (one - c.fx, c.fx);
                let (wy0, wy1) = (one - c.fy, c.fy);
                let (wz0, wz1) = (one - c.fz, c.fz);
                for ch in 0..c_n {
                    let g = go[ch * od * oh * ow + o] * gain;
                    if g == T::zero() {
                        continue;
                    }
                    let mut scatter = |zz: usize, yy: usize, xx: usize, wt: T| {
                        let i = vol_idx(ch, zz, yy, xx, d, h, w);
                        dst[i] = dst[i] + g * wt;
                    };
                    scatter(c.z0, c.y0, c.x0, wx0 * wy0 * wz0);
                    scatter(c.z0, c.y0, c.x1, wx1 * wy0 * wz0);
                    scatter(c.z0, c.y1, c.x0, wx0 * wy1 * wz0);
                    scatter(c.z0, c.y1, c.x1, wx1 * wy1 * wz0);
                    scatter(c.z1, c.y0, c.x0, wx0 * wy0 * wz1);
                    scatter(c.z1, c.y0, c.x1, wx1 * wy0 * wz1);
                    scatter(c.z1, c.y1, c.x0, wx0 * wy1 * wz1);
                    scatter(c.z1, c.y1, c.x1, wx1 * wy1 * wz1);
                }
                o += 1;
            }
        }
    }
    out
}

/// 2x2x2 average pooling over the spatial axes.
pub fn avg_pool2<T: Element>(input: &ArrayView4<T>) -> Array4<T> {
    let (c_n, d, h, w) = input.dim();
    let eighth = T::from_f64(0.125);
    Array4::from_shape_fn((c_n, d / 2, h / 2, w / 2), |(c, z, y, x)| {
        let mut acc = T::zero();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    acc = acc + input[[c, 2 * z + dz, 2 * y + dy, 2 * x + dx]];
                }
            }
        }
        acc * eighth
    })
}

pub fn avg_pool2_backward<T: Element>(g_out: &ArrayView4<T>) -> Array4<T> {
    let (c_n, od, oh, ow) = g_out.dim();
    let eighth = T::from_f64(0.125);
    Array4::from_shape_fn((c_n, od * 2, oh * 2, ow * 2), |(c, z, y, x)| {
        g_out[[c, z / 2, y / 2, x / 2]] * eighth
    })
}

/// Nearest-neighbour 2x upsampling over the spatial axes.
pub fn upsample_nearest2<T: Element>(input: &ArrayView4<T>) -> Array4<T> {
    let (c_n, d, h, w) = input.dim();
    Array4::from_shape_fn((c_n, d * 2, h * 2, w * 2), |(c, z, y, x)| {
        input[[c, z / 2, y / 2, x / 2]]
    })
}

pub fn upsample_nearest2_backward<T: Element>(g_out: &ArrayView4<T>) -> Array4<T> {
    let (c_n, od, oh, ow) = g_out.dim();
    let mut out = Array4::<T>::zeros((c_n, od / 2, oh / 2, ow / 2));
    for c in 0..c_n {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let i = [c, z / 2, y / 2, x / 2];
                    out[i] = out[i] + g_out[[c, z, y, x]];
                }
            }
        }
    }
    out
}

/// Sum of absolute forward differences along z, y and x over all channels.
/// The trailing slab along each axis contributes zero.
pub fn grad_l1_forward<T: Element>(input: &ArrayView4<T>) -> f64 {
    let (c_n, d, h, w) = input.dim();
    let src = input.as_slice().unwrap();
    let mut acc = 0.0f64;
    for c in 0..c_n {
        for z in 0..d {
            for y in 0..h {
                let row = ((c * d + z) * h + y) * w;
                for x in 0..w {
                    let v = src[row + x];
                    if x + 1 < w {
                        acc += (src[row + x + 1] - v).abs().to_float();
                    }
                    if y + 1 < h {
                        acc += (src[row + w + x] - v).abs().to_float();
                    }
                    if z + 1 < d {
                        acc += (src[row + h * w + x] - v).abs().to_float();
                    }
                }
            }
        }
    }
    acc
}

/// Subgradient of [`grad_l1_forward`] scaled by `g`; sign(0) is taken as 0.
pub fn grad_l1_backward<T: Element>(input: &ArrayView4<T>, g: T) -> Array4<T> {
    let (c_n, d, h, w) = input.dim();
    let src = input.as_slice().unwrap();
    let mut out = Array4::<T>::zeros((c_n, d, h, w));
    let dst = out.as_slice_mut().unwrap();
    for c in 0..c_n {
        for z in 0..d {
            for y in 0..h {
                let row = ((c * d + z) * h + y) * w;
                for x in 0..w {
                    let v = src[row + x];
                    let mut push = |other: usize| {
                        let diff = src[other] - v;
                        if diff != T::zero() {
                            let s = if diff > T::zero() { g } else { T::zero() - g };
                            dst[other] = dst[other] + s;
                            dst[row + x] = dst[row + x] - s;
                        }
                    };
                    if x + 1 < w {
                        push(row + x + 1);
                    }
                    if y + 1 < h {
                        push(row + w + x);
                    }
                    if z + 1 < d {
                        push(row + h * w + x);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // single channel, weight = delta at kernel center
        let mut weight = vec![0.0f64; 27];
        weight[13] = 1.0; // (kz, ky, kx) = (1, 1, 1)
        let input = Array4::from_shape_fn((1, 4, 4, 4), |(_, z, y, x)| {
            (z * 16 + y * 4 + x) as f64 * 0.1
        });
        let out = conv3d_forward(&input.view(), &weight, &[0.0], 1, 1);
        assert_eq!(out.dim(), (1, 4, 4, 4));
        for (a, b) in input.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_stride2_halves_dims() {
        let input = Array4::<f64>::zeros((3, 8, 8, 8));
        let weight = vec![0.0f64; 2 * 3 * 27];
        let out = conv3d_forward(&input.view(), &weight, &[0.5, -0.5], 2, 2);
        assert_eq!(out.dim(), (2, 4, 4, 4));
        assert!((out[[0, 0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((out[[1, 3, 3, 3]] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn warp_kernel_matches_core_warp() {
        use svin_core::{warp, VectorField, Volume};
        let vol = Volume::from_fn([4, 4, 4], |z, y, x| ((z * 5 + y * 3 + x) % 7) as f32 * 0.13);
        let field = VectorField::from_fn([4, 4, 4], |z, y, x| {
            [
                ((x + 1) as f32 * 0.21).sin(),
                ((y + 2) as f32 * 0.17).cos() * 0.8,
                ((z + 1) as f32 * 0.4).sin() * 1.5,
            ]
        });
        let expect = warp(&vol, &field).unwrap();
        let vol4 = vol
            .data()
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let got = warp_forward(&vol4.view(), &field.data().view());
        for (a, b) in expect.data().iter().zip(got.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_matches_core_resample_field() {
        use svin_core::{resample_field, VectorField};
        let field = VectorField::from_fn([4, 4, 4], |z, y, x| {
            [x as f32 * 0.5 - 1.0, y as f32 * 0.25, (z as f32).sin()]
        });
        for factor in [2.0, 0.5] {
            let expect = resample_field(&field, [factor; 3]).unwrap();
            let got = resize_trilinear(&field.data().view(), factor, true);
            for (a, b) in expect.data().iter().zip(got.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn grad_l1_matches_core_spatial_gradient() {
        use svin_core::{spatial_gradient, VectorField};
        let field = VectorField::from_fn([4, 4, 4], |z, y, x| {
            [
                (x as f32 * 0.7).sin(),
                (y as f32 - 1.5) * 0.3,
                ((z * x) as f32 * 0.11).cos(),
            ]
        });
        let expect = spatial_gradient(&field).unwrap().l1_sum();
        let got = grad_l1_forward(&field.data().view());
        assert!((expect - got).abs() < 1e-6);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let input = Array4::<f32>::from_shape_fn((2, 4, 4, 4), |(c, z, y, x)| {
            (c * 64 + z * 16 + y * 4 + x) as f32
        });
        let pooled = avg_pool2(&input.view());
        assert_eq!(pooled.dim(), (2, 2, 2, 2));
        let up = upsample_nearest2(&pooled.view());
        assert_eq!(up.dim(), (2, 4, 4, 4));
        assert_eq!(up[[0, 0, 0, 0]], pooled[[0, 0, 0, 0]]);
        assert_eq!(up[[0, 1, 1, 1]], pooled[[0, 0, 0, 0]]);
    }
}
