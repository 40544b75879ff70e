//! The unsupervised spatiotemporal motion network: a 3D encoder-decoder
//! with skip connections emitting displacement fields at 3 scales.
//!
//! The coarse-to-fine integration is additive: the prediction at a scale is
//! the upsampled (vector-doubled) field from the scale below plus a residual
//! from a zero-initialized head, so a fresh network starts exactly at the
//! identity transform. One shared network serves both directions; training
//! evaluates it on (I_i, I_j) and (I_j, I_i) in every step.

use serde::{Deserialize, Serialize};
use svin_core::{build_pyramid, PhaseSample, Pyramid, VectorField, Volume, PYRAMID_LEVELS};

use crate::backbone::{backbone_nodes, register_backbone, BackboneSpec};
use crate::elem::Element;
use crate::error::{NetError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Adam, BoundParams, ParamBuilder, ParamSet};
use crate::train::{step_sample_index, TrainOptions};

/// Hyperparameters of the motion network and its training objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Channel width of the finest stage; stages below use 2x and 4x.
    pub base_width: usize,
    /// Extra stride-1 convolutions per encoder stage.
    pub encoder_convs: usize,
    pub learning_rate: f64,
    pub similarity_weight: f64,
    pub smoothness_weight: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            encoder_convs: 1,
            learning_rate: 1e-4,
            similarity_weight: 1.0,
            smoothness_weight: 0.01,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0) {
            problems.push(format!(
                "motion.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.base_width < 4 {
            problems.push(format!(
                "motion.base_width must be >= 4, got {}",
                self.base_width
            ));
        }
        if self.encoder_convs > 2 {
            problems.push(format!(
                "motion.encoder_convs must be <= 2, got {}",
                self.encoder_convs
            ));
        }
        if self.similarity_weight < 0.0 {
            problems.push("motion.similarity_weight must be >= 0".into());
        }
        if self.smoothness_weight < 0.0 {
            problems.push("motion.smoothness_weight must be >= 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NetError::Validation(problems.join("; ")))
        }
    }

    fn backbone(&self) -> BackboneSpec {
        BackboneSpec {
            in_channels: 2,
            width: self.base_width,
            extra_convs: self.encoder_convs,
        }
    }
}

/// The motion network: configuration plus named parameter blocks.
#[derive(Debug, Clone)]
pub struct MotionNet {
    pub config: MotionConfig,
    pub params: ParamSet,
}

impl MotionNet {
    /// Deterministic initialization; the three field heads start at zero so
    /// the initial transform is the identity.
    pub fn init(config: MotionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let mut b = ParamBuilder::new(&mut params, seed);
        let spec = config.backbone();
        register_backbone(&mut b, &spec);
        let [c1, c2, c3] = spec.feature_channels();
        b.conv("head1", c1, 3, true);
        b.conv("head2", c2, 3, true);
        b.conv("head3", c3, 3, true);
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Pure forward pass: the three fields, coarsest first.
    pub fn forward(&self, i: &Volume, j: &Volume) -> Result<Vec<VectorField>> {
        validate_pair(i, j)?;
        let mut g = Graph::<f32>::new();
        let bound = BoundParams::bind(&mut g, &self.params, false);
        let li = g.volume_leaf(i, false);
        let lj = g.volume_leaf(j, false);
        let input = g.concat_channels(&[li, lj]);
        let phis = motion_field_nodes(&mut g, self, &bound, input);
        Ok(phis.iter().map(|&p| g.node_to_field(p)).collect())
    }
}

fn validate_pair(i: &Volume, j: &Volume) -> Result<()> {
    if i.dims() != j.dims() {
        return Err(NetError::Validation(format!(
            "volume pair dims differ: {:?} vs {:?}",
            i.dims(),
            j.dims()
        )));
    }
    if i.dims().iter().any(|&d| d % 4 != 0) {
        return Err(NetError::Validation(format!(
            "motion network needs dims divisible by 4, got {:?}",
            i.dims()
        )));
    }
    if !i.is_finite() || !j.is_finite() {
        return Err(NetError::Validation("input volumes must be finite".into()));
    }
    Ok(())
}

/// Build the three per-scale field nodes from a `[2, D, H, W]` input node.
pub(crate) fn motion_field_nodes<T: Element>(
    g: &mut Graph<T>,
    net: &MotionNet,
    bound: &BoundParams,
    input: NodeId,
) -> [NodeId; 3] {
    let spec = net.config.backbone();
    let feats = backbone_nodes(g, &net.params, bound, &spec, input);
    let head = |g: &mut Graph<T>, name: &str, x: NodeId| -> NodeId {
        let w = bound.node(&net.params, &format!("{name}.weight"));
        let b = bound.node(&net.params, &format!("{name}.bias"));
        g.conv3d(x, w, b, 1)
    };
    let phi1 = head(g, "head1", feats.levels[0]);
    let r2 = head(g, "head2", feats.levels[1]);
    let up1 = g.resize(phi1, 2.0, true);
    let phi2 = g.add(up1, r2);
    let r3 = head(g, "head3", feats.levels[2]);
    let up2 = g.resize(phi2, 2.0, true);
    let phi3 = g.add(up2, r3);
    [phi1, phi2, phi3]
}

/// Per-scale fields for a volume pair, coarsest first.
pub fn motion_forward(net: &MotionNet, i: &Volume, j: &Volume) -> Result<Vec<VectorField>> {
    net.forward(i, j)
}

/// Sum over scales of the L1 norm of the forward-difference field gradients.
pub fn smoothness_loss(fields: &[VectorField]) -> Result<f64> {
    let mut acc = 0.0;
    for f in fields {
        acc += svin_core::spatial_gradient(f)?.l1_sum();
    }
    Ok(acc)
}

/// Sum over scales of the mean squared voxel difference between warped
/// sources and their targets.
pub fn similarity_loss(warped: &[Volume], targets: &[Volume]) -> Result<f64> {
    if warped.len() != targets.len() {
        return Err(NetError::Validation(format!(
            "similarity_loss needs matching level counts, got {} vs {}",
            warped.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    for (w, t) in warped.iter().zip(targets) {
        acc += svin_core::metrics::mse(w, t)?;
    }
    Ok(acc)
}

/// One step of the motion loss history.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MotionStepLoss {
    pub step: u64,
    pub total: f64,
    pub similarity: f64,
    pub smoothness: f64,
}

/// Owns a motion network, its optimizer state and loss history; resumable
/// from a checkpoint.
pub struct MotionTrainer {
    pub net: MotionNet,
    pub adam: Adam,
    pub history: Vec<MotionStepLoss>,
    pub seed: u64,
}

impl MotionTrainer {
    pub fn new(config: MotionConfig, seed: u64) -> Result<Self> {
        let adam = Adam::new(config.learning_rate);
        let net = MotionNet::init(config, seed)?;
        Ok(Self {
            net,
            adam,
            history: Vec::new(),
            seed,
        })
    }

    /// Append `steps` training steps. Step numbering continues from the
    /// existing history, so a 5+5 resumed run matches a 10-step run exactly.
    pub fn run(&mut self, dataset: &[PhaseSample], steps: u64) -> Result<()> {
        if dataset.is_empty() {
            return Err(NetError::Validation("training dataset is empty".into()));
        }
        for s in dataset {
            validate_pair(&s.ed, &s.es)?;
        }
        let pyramids: Vec<(Pyramid, Pyramid)> = dataset
            .iter()
            .map(|s| Ok((build_pyramid(&s.ed)?, build_pyramid(&s.es)?)))
            .collect::<Result<_>>()?;

        let start = self.history.len() as u64;
        for step in start..start + steps {
            let idx = step_sample_index(self.seed, step, dataset.len());
            let (pyr_ed, pyr_es) = &pyramids[idx];
            let (total, sim, smooth) = self.step(pyr_ed, pyr_es)?;
            if !total.is_finite() {
                return Err(NetError::Divergence {
                    step,
                    detail: format!("similarity {sim}, smoothness {smooth}"),
                });
            }
            self.history.push(MotionStepLoss {
                step,
                total,
                similarity: sim,
                smoothness: smooth,
            });
        }
        Ok(())
    }

    fn step(&mut self, pyr_ed: &Pyramid, pyr_es: &Pyramid) -> Result<(f64, f64, f64)> {
        let mut g = Graph::<f32>::new();
        let bound = BoundParams::bind(&mut g, &self.net.params, true);
        let ed = g.volume_leaf(pyr_ed.finest(), false);
        let es = g.volume_leaf(pyr_es.finest(), false);
        let ed_levels: Vec<NodeId> = pyr_ed
            .levels()
            .iter()
            .map(|v| g.volume_leaf(v, false))
            .collect();
        let es_levels: Vec<NodeId> = pyr_es
            .levels()
            .iter()
            .map(|v| g.volume_leaf(v, false))
            .collect();

        let mut sim_terms = Vec::with_capacity(2 * PYRAMID_LEVELS);
        let mut smooth_terms = Vec::with_capacity(2 * PYRAMID_LEVELS);
        for (src, dst, src_levels, dst_levels) in [
            (ed, es, &ed_levels, &es_levels),
            (es, ed, &es_levels, &ed_levels),
        ] {
            let input = g.concat_channels(&[src, dst]);
            let phis = motion_field_nodes(&mut g, &self.net, &bound, input);
            for c in 0..PYRAMID_LEVELS {
                let warped = g.warp(src_levels[c], phis[c]);
                sim_terms.push(g.mse(warped, dst_levels[c]));
                smooth_terms.push(g.grad_l1(phis[c]));
            }
        }
        let sim = g.add_n(&sim_terms);
        let smooth = g.add_n(&smooth_terms);
        let sim_w = g.scale(sim, self.net.config.similarity_weight);
        let smooth_w = g.scale(smooth, self.net.config.smoothness_weight);
        let total = g.add(sim_w, smooth_w);

        let sim_v = g.scalar(sim);
        let smooth_v = g.scalar(smooth);
        let total_v = g.scalar(total);
        let grads = g.backward(total);
        let grads = bound.gradients(&self.net.params, &grads);
        self.adam.step(&mut self.net.params, &grads)?;
        Ok((total_v, sim_v, smooth_v))
    }
}

/// Train a fresh motion network. Deterministic under a fixed seed.
pub fn train_motion(
    dataset: &[PhaseSample],
    config: &MotionConfig,
    opts: &TrainOptions,
) -> Result<MotionTrainer> {
    let mut trainer = MotionTrainer::new(config.clone(), opts.seed)?;
    trainer.run(dataset, opts.steps)?;
    Ok(trainer)
}
