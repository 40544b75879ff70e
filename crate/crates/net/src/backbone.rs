//! Shared 3-stage encoder-decoder trunk with skip connections.
//!
//! Three resolutions (full, 1/2, 1/4) matching the 3-scale pyramid:
//! downsampling is by stride-2 convolution, upsampling by nearest-neighbour
//! resize followed by convolution over the concatenated skip features.
//! Activations are leaky rectifiers throughout.

use crate::elem::Element;
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamBuilder, ParamSet};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Trunk hyperparameters; channel widths per stage are `w`, `2w`, `4w`.
#[derive(Debug, Clone)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub width: usize,
    /// Extra stride-1 convolutions per encoder stage.
    pub extra_convs: usize,
}

impl BackboneSpec {
    /// Channels of the per-scale decoder features, coarse to fine.
    pub fn feature_channels(&self) -> [usize; 3] {
        [4 * self.width, 2 * self.width, self.width]
    }
}

/// Register every trunk block on a parameter builder.
pub fn register_backbone(b: &mut ParamBuilder, spec: &BackboneSpec) {
    let w = spec.width;
    b.conv("stem", spec.in_channels, w, false);
    b.conv("enc1.down", w, 2 * w, false);
    for i in 0..spec.extra_convs {
        b.conv(&format!("enc1.conv{i}"), 2 * w, 2 * w, false);
    }
    b.conv("enc2.down", 2 * w, 4 * w, false);
    for i in 0..spec.extra_convs {
        b.conv(&format!("enc2.conv{i}"), 4 * w, 4 * w, false);
    }
    b.conv("dec2.conv", 4 * w + 2 * w, 2 * w, false);
    b.conv("dec3.conv", 2 * w + w, w, false);
}

/// Per-scale decoder features, coarsest first: `[4w @ 1/4, 2w @ 1/2, w @ 1]`.
pub struct BackboneFeatures {
    pub levels: [NodeId; 3],
}

/// Run the trunk on an `[in_channels, D, H, W]` node.
pub fn backbone_nodes<T: Element>(
    g: &mut Graph<T>,
    params: &ParamSet,
    bound: &BoundParams,
    spec: &BackboneSpec,
    input: NodeId,
) -> BackboneFeatures {
    let conv = |g: &mut Graph<T>, name: &str, x: NodeId, stride: usize| -> NodeId {
        let w = bound.node(params, &format!("{name}.weight"));
        let b = bound.node(params, &format!("{name}.bias"));
        let y = g.conv3d(x, w, b, stride);
        g.leaky_relu(y, LEAKY_SLOPE)
    };

    let f3 = conv(g, "stem", input, 1);
    let mut f2 = conv(g, "enc1.down", f3, 2);
    for i in 0..spec.extra_convs {
        f2 = conv(g, &format!("enc1.conv{i}"), f2, 1);
    }
    let mut f1 = conv(g, "enc2.down", f2, 2);
    for i in 0..spec.extra_convs {
        f1 = conv(g, &format!("enc2.conv{i}"), f1, 1);
    }
    let up2 = g.upsample_nearest2(f1);
    let cat2 = g.concat_channels(&[up2, f2]);
    let d2 = conv(g, "dec2.conv", cat2, 1);
    let up3 = g.upsample_nearest2(d2);
    let cat3 = g.concat_channels(&[up3, f3]);
    let d3 = conv(g, "dec3.conv", cat3, 1);
    BackboneFeatures {
        levels: [f1, d2, d3],
    }
}
