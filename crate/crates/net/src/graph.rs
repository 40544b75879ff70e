//! A small eager tape for reverse-mode differentiation over dense tensors.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order for backpropagation. Values are `ArrayD`; volumes are
//! `[1, D, H, W]`, displacement fields `[3, D, H, W]`, scalars `[1]`.
//! The graph is generic over the element type: training runs in f32, the
//! finite-difference gradient checks instantiate the same code in f64.

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, Ix1, Ix2, Ix4, IxDyn};
use svin_core::{VectorField, Volume};

use crate::elem::Element;
use crate::kernels;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Affine { x: NodeId, mul: f64 },
    AddN(Vec<NodeId>),
    ConcatC(Vec<NodeId>),
    Conv3d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    LeakyRelu { x: NodeId, slope: f64 },
    SigmoidClamp(NodeId),
    AvgPool2(NodeId),
    UpNearest2(NodeId),
    Resize { x: NodeId, factor: f64, scale_components: bool },
    Warp { vol: NodeId, field: NodeId },
    GradL1(NodeId),
    Mse(NodeId, NodeId),
    Abs(NodeId),
    SumAll(NodeId),
    Gap(NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
}

struct Node<T: Element> {
    value: ArrayD<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<T> {
        &self.nodes[id].value
    }

    /// Scalar node value as f64 (shape `[1]`).
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.as_slice().unwrap()[0].to_float()
    }

    fn as4(&self, id: NodeId) -> ndarray::ArrayView4<'_, T> {
        self.nodes[id]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("expected a rank-4 tensor")
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, value: ArrayD<T>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn scalar_leaf(&mut self, v: f64, needs_grad: bool) -> NodeId {
        self.leaf(
            ArrayD::from_elem(IxDyn(&[1]), T::from_f64(v)),
            needs_grad,
        )
    }

    /// A `[1, D, H, W]` leaf from a volume.
    pub fn volume_leaf(&mut self, v: &Volume, needs_grad: bool) -> NodeId {
        let [d, h, w] = v.dims();
        let data: Vec<T> = v.data().iter().map(|&x| T::from_f64(x as f64)).collect();
        self.leaf(
            ArrayD::from_shape_vec(IxDyn(&[1, d, h, w]), data).unwrap(),
            needs_grad,
        )
    }

    /// A `[3, D, H, W]` leaf from a displacement field.
    pub fn field_leaf(&mut self, f: &VectorField, needs_grad: bool) -> NodeId {
        let [d, h, w] = f.dims();
        let data: Vec<T> = f.data().iter().map(|&x| T::from_f64(x as f64)).collect();
        self.leaf(
            ArrayD::from_shape_vec(IxDyn(&[3, d, h, w]), data).unwrap(),
            needs_grad,
        )
    }

    /// A constant `[1, D, H, W]` tensor filled with one value.
    pub fn constant_channel(&mut self, dims: [usize; 3], v: f64) -> NodeId {
        self.leaf(
            ArrayD::from_elem(IxDyn(&[1, dims[0], dims[1], dims[2]]), T::from_f64(v)),
            false,
        )
    }

    /// Extract a `[3, D, H, W]` node back into a core field (f32).
    pub fn node_to_field(&self, id: NodeId) -> VectorField {
        let v = self.as4(id);
        let (c, d, h, w) = v.dim();
        assert_eq!(c, 3, "node is not a displacement field");
        let data =
            ndarray::Array4::from_shape_vec(
                (3, d, h, w),
                v.iter().map(|&x| x.to_float() as f32).collect(),
            )
            .unwrap();
        VectorField::new(data).unwrap()
    }

    /// Extract a `[1, D, H, W]` node back into a core volume (f32).
    pub fn node_to_volume(&self, id: NodeId) -> Volume {
        let v = self.as4(id);
        let (c, d, h, w) = v.dim();
        assert_eq!(c, 1, "node is not a single-channel volume");
        let data = ndarray::Array3::from_shape_vec(
            (d, h, w),
            v.iter().map(|&x| x.to_float() as f32).collect(),
        )
        .unwrap();
        Volume::from_array(data)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value + &self.nodes[b].value;
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value - &self.nodes[b].value;
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value * &self.nodes[b].value;
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value / &self.nodes[b].value;
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Div(a, b), needs)
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let m = T::from_f64(mul);
        let a = T::from_f64(add);
        let value = self.nodes[x].value.mapv(|v| v * m + a);
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::Affine { x, mul }, needs)
    }

    pub fn scale(&mut self, x: NodeId, mul: f64) -> NodeId {
        self.affine(x, mul, 0.0)
    }

    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty());
        let mut value = self.nodes[ids[0]].value.clone();
        for &i in &ids[1..] {
            value += &self.nodes[i].value;
        }
        let needs = self.needs(ids);
        self.push(value, Op::AddN(ids.to_vec()), needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(|v| v.abs());
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::Abs(x), needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: T = self.nodes[x].value.iter().cloned().sum();
        let needs = self.nodes[x].needs_grad;
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::SumAll(x), needs)
    }

    // ---- structure ----------------------------------------------------

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, ids: &[NodeId]) -> NodeId {
        let views: Vec<_> = ids.iter().map(|&i| self.as4(i)).collect();
        let value = ndarray::concatenate(
            ndarray::Axis(0),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .unwrap()
        .into_dyn();
        let needs = self.needs(ids);
        self.push(value, Op::ConcatC(ids.to_vec()), needs)
    }

    // ---- neural ops ----------------------------------------------------

    /// 3x3x3 convolution with padding 1. `w` has shape
    /// `[C_out, C_in, 3, 3, 3]`, `b` has shape `[C_out]`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        let input = self.as4(x);
        let wshape = self.nodes[w].value.shape().to_vec();
        let c_out = wshape[0];
        assert_eq!(wshape[1], input.dim().0, "conv channel mismatch");
        let value = kernels::conv3d_forward(
            &input,
            self.nodes[w].value.as_slice().unwrap(),
            self.nodes[b].value.as_slice().unwrap(),
            c_out,
            stride,
        )
        .into_dyn();
        let needs = self.needs(&[x, w, b]);
        self.push(value, Op::Conv3d { x, w, b, stride }, needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::from_f64(slope);
        let value = self.nodes[x]
            .value
            .mapv(|v| if v > T::zero() { v } else { v * s });
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::LeakyRelu { x, slope }, needs)
    }

    /// Logistic squashing with the pre-activation clamped to [-10, 10] so the
    /// output stays strictly inside (0, 1) in f32.
    pub fn sigmoid_clamp(&mut self, x: NodeId) -> NodeId {
        let hi = T::from_f64(10.0);
        let value = self.nodes[x].value.mapv(|v| {
            let c = if v > hi {
                hi
            } else if v < -hi {
                -hi
            } else {
                v
            };
            T::one() / (T::one() + (-c).exp())
        });
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::SigmoidClamp(x), needs)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::avg_pool2(&self.as4(x)).into_dyn();
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::AvgPool2(x), needs)
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::upsample_nearest2(&self.as4(x)).into_dyn();
        let needs = self.nodes[x].needs_grad;
        self.push(value, Op::UpNearest2(x), needs)
    }

    /// Isotropic trilinear resize; `scale_components` applies the
    /// displacement-field unit rescaling.
    pub fn resize(&mut self, x: NodeId, factor: f64, scale_components: bool) -> NodeId {
        let value = kernels::resize_trilinear(&self.as4(x), factor, scale_components).into_dyn();
        let needs = self.nodes[x].needs_grad;
        self.push(
            value,
            Op::Resize {
                x,
                factor,
                scale_components,
            },
            needs,
        )
    }

    /// Warp every channel of `vol` by `field` (clamped trilinear pull-back).
    pub fn warp(&mut self, vol: NodeId, field: NodeId) -> NodeId {
        let value = kernels::warp_forward(&self.as4(vol), &self.as4(field)).into_dyn();
        let needs = self.needs(&[vol, field]);
        self.push(value, Op::Warp { vol, field }, needs)
    }

    /// Scalar sum of absolute forward differences of a field.
    pub fn grad_l1(&mut self, x: NodeId) -> NodeId {
        let s = kernels::grad_l1_forward(&self.as4(x));
        let needs = self.nodes[x].needs_grad;
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), T::from_f64(s)),
            Op::GradL1(x),
            needs,
        )
    }

    /// Scalar mean squared difference.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let mut acc = 0.0f64;
        for (x, y) in self.nodes[a].value.iter().zip(self.nodes[b].value.iter()) {
            let d = x.to_float() - y.to_float();
            acc += d * d;
        }
        let n = self.nodes[a].value.len() as f64;
        let needs = self.needs(&[a, b]);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), T::from_f64(acc / n)),
            Op::Mse(a, b),
            needs,
        )
    }

    /// Global average pooling `[C, D, H, W] -> [C]`.
    pub fn gap(&mut self, x: NodeId) -> NodeId {
        let v = self.as4(x);
        let (c_n, d, h, w) = v.dim();
        let n = T::from_f64((d * h * w) as f64);
        let mut out = Array1::<T>::zeros(c_n);
        for c in 0..c_n {
            let mut acc = T::zero();
            for val in v.index_axis(ndarray::Axis(0), c).iter() {
                acc = acc + *val;
            }
            out[c] = acc / n;
        }
        let needs = self.nodes[x].needs_grad;
        self.push(out.into_dyn(), Op::Gap(x), needs)
    }

    /// Dense layer `[C] -> [K]` with weight `[K, C]` and bias `[K]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xv = self.nodes[x]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        let wv = self.nodes[w]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let bv = self.nodes[b]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        let value = (wv.dot(&xv) + bv).into_dyn();
        let needs = self.needs(&[x, w, b]);
        self.push(value, Op::Linear { x, w, b }, needs)
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode gradients of a scalar node with respect to every node
    /// that needs gradients. Returns one slot per node.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<ArrayD<T>>> {
        assert_eq!(self.nodes[loss].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(ArrayD::from_elem(IxDyn(&[1]), T::one()));
        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
        }
        grads
    }

    fn propagate(&self, id: NodeId, g: &ArrayD<T>, grads: &mut Vec<Option<ArrayD<T>>>) {
        let scalar_g = || g.as_slice().unwrap()[0];
        match self.nodes[id].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_if_needed(grads, a, || g.clone());
                self.acc_if_needed(grads, b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_if_needed(grads, a, || g.clone());
                self.acc_if_needed(grads, b, || g.mapv(|v| T::zero() - v));
            }
            Op::Mul(a, b) => {
                self.acc_if_needed(grads, a, || g * &self.nodes[b].value);
                self.acc_if_needed(grads, b, || g * &self.nodes[a].value);
            }
            Op::Div(a, b) => {
                self.acc_if_needed(grads, a, || g / &self.nodes[b].value);
                self.acc_if_needed(grads, b, || {
                    let mut out = g * &self.nodes[a].value;
                    out.zip_mut_with(&self.nodes[b].value, |o, &bv| {
                        *o = T::zero() - *o / (bv * bv)
                    });
                    out
                });
            }
            Op::Affine { x, mul } => {
                let m = T::from_f64(mul);
                self.acc_if_needed(grads, x, || g.mapv(|v| v * m));
            }
            Op::AddN(ids) => {
                for i in ids {
                    self.acc_if_needed(grads, i, || g.clone());
                }
            }
            Op::ConcatC(ids) => {
                let mut offset = 0usize;
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                for i in ids {
                    let c = self.nodes[i].value.shape()[0];
                    let part = g4
                        .slice(ndarray::s![offset..offset + c, .., .., ..])
                        .to_owned()
                        .into_dyn();
                    offset += c;
                    self.acc_if_needed(grads, i, || part.clone());
                }
            }
            Op::Conv3d { x, w, b, stride } => {
                let need_input = self.nodes[x].needs_grad;
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (g_in, g_w, g_b) = kernels::conv3d_backward(
                    &self.as4(x),
                    self.nodes[w].value.as_slice().unwrap(),
                    &g4,
                    stride,
                    need_input,
                );
                if let Some(gi) = g_in {
                    self.acc_if_needed(grads, x, || gi.clone().into_dyn());
                }
                let wshape = self.nodes[w].value.shape().to_vec();
                self.acc_if_needed(grads, w, || {
                    g_w.clone()
                        .into_shape_with_order(IxDyn(&wshape))
                        .unwrap()
                });
                self.acc_if_needed(grads, b, || g_b.clone().into_dyn());
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64(slope);
                self.acc_if_needed(grads, x, || {
                    let mut out = g.clone();
                    out.zip_mut_with(&self.nodes[x].value, |o, &xv| {
                        if xv <= T::zero() {
                            *o = *o * s
                        }
                    });
                    out
                });
            }
            Op::SigmoidClamp(x) => {
                let hi = T::from_f64(10.0);
                let y = &self.nodes[id].value;
                self.acc_if_needed(grads, x, || {
                    let mut out = g * &y.mapv(|v| v * (T::one() - v));
                    out.zip_mut_with(&self.nodes[x].value, |o, &xv| {
                        if xv > hi || xv < -hi {
                            *o = T::zero()
                        }
                    });
                    out
                });
            }
            Op::AvgPool2(x) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                self.acc_if_needed(grads, x, || {
                    kernels::avg_pool2_backward(&g4).into_dyn()
                });
            }
            Op::UpNearest2(x) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                self.acc_if_needed(grads, x, || {
                    kernels::upsample_nearest2_backward(&g4).into_dyn()
                });
            }
            Op::Resize {
                x,
                factor,
                scale_components,
            } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let in_dims = self.as4(x).dim();
                self.acc_if_needed(grads, x, || {
                    kernels::resize_trilinear_backward(in_dims, &g4, factor, scale_components)
                        .into_dyn()
                });
            }
            Op::Warp { vol, field } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (g_vol, g_field) = kernels::warp_backward(
                    &self.as4(vol),
                    &self.as4(field),
                    &g4,
                    self.nodes[vol].needs_grad,
                    self.nodes[field].needs_grad,
                );
                if let Some(gv) = g_vol {
                    self.acc_if_needed(grads, vol, || gv.clone().into_dyn());
                }
                if let Some(gf) = g_field {
                    self.acc_if_needed(grads, field, || gf.clone().into_dyn());
                }
            }
            Op::GradL1(x) => {
                let gs = scalar_g();
                self.acc_if_needed(grads, x, || {
                    kernels::grad_l1_backward(&self.as4(x), gs).into_dyn()
                });
            }
            Op::Mse(a, b) => {
                let coeff = scalar_g()
                    * T::from_f64(2.0 / self.nodes[a].value.len() as f64);
                let diff = &self.nodes[a].value - &self.nodes[b].value;
                self.acc_if_needed(grads, a, || diff.mapv(|v| v * coeff));
                self.acc_if_needed(grads, b, || diff.mapv(|v| T::zero() - v * coeff));
            }
            Op::Abs(x) => {
                self.acc_if_needed(grads, x, || {
                    let mut out = g.clone();
                    out.zip_mut_with(&self.nodes[x].value, |o, &xv| {
                        if xv < T::zero() {
                            *o = T::zero() - *o
                        } else if xv == T::zero() {
                            *o = T::zero()
                        }
                    });
                    out
                });
            }
            Op::SumAll(x) => {
                let gs = scalar_g();
                let shape = self.nodes[x].value.raw_dim();
                self.acc_if_needed(grads, x, || ArrayD::from_elem(shape.clone(), gs));
            }
            Op::Gap(x) => {
                let v = self.as4(x);
                let (c_n, d, h, w) = v.dim();
                let n = T::from_f64((d * h * w) as f64);
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                self.acc_if_needed(grads, x, || {
                    ndarray::Array4::from_shape_fn((c_n, d, h, w), |(c, _, _, _)| g1[c] / n)
                        .into_dyn()
                });
            }
            Op::Linear { x, w, b } => {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let xv = self.nodes[x]
                    .value
                    .view()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let wv = self.nodes[w]
                    .value
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                self.acc_if_needed(grads, x, || wv.t().dot(&g1).into_dyn());
                self.acc_if_needed(grads, w, || {
                    let (k, c) = wv.dim();
                    let mut out = Array2::<T>::zeros((k, c));
                    for i in 0..k {
                        for j in 0..c {
                            out[[i, j]] = g1[i] * xv[j];
                        }
                    }
                    out.into_dyn()
                });
                self.acc_if_needed(grads, b, || g1.to_owned().into_dyn());
            }
        }
    }

    fn acc_if_needed(
        &self,
        grads: &mut Vec<Option<ArrayD<T>>>,
        id: NodeId,
        delta: impl Fn() -> ArrayD<T>,
    ) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => *g += &delta(),
            slot @ None => *slot = Some(delta()),
        }
    }
}

/// Convenience view of a rank-4 value for inspection in tests.
pub fn view4<T: Element>(v: &ArrayD<T>) -> ndarray::ArrayView4<'_, T> {
    v.view().into_dimensionality::<Ix4>().unwrap()
}

#[allow(dead_code)]
pub fn view_dyn<T: Element>(v: &ArrayD<T>) -> ArrayViewD<'_, T> {
    v.view()
}
