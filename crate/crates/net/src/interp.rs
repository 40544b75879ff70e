//! The sequential volumetric interpolation network.
//!
//! For a phase t in (0, 1) the network starts from the bidirectionally
//! consistent closed-form scaffold built out of the endpoint motion fields,
//! warps both endpoint volumes by it, and feeds the originals, the warped
//! candidates, both scaffold fields and a broadcast phase channel into an
//! encoder-decoder trunk. The trunk emits per-scale additive volume
//! corrections, a blend-weight map squashed into (0, 1) (its complement is
//! formed exactly as one minus the map), and a pair of field residuals on
//! top of the scaffold. A small convolutional regression head maps the
//! residuals relative to the phase-scaled linear fields to a predicted
//! phase, which ties the learned deformations to the motion's time law.
//! The per-scale output volume is the renormalized weighted blend of the
//! warped candidates plus the learned correction.

use serde::{Deserialize, Serialize};
use svin_core::{
    build_pyramid, PhantomSpec, PhaseIndex, PhaseSample, Pyramid, VectorField, Volume,
    WeightMap, BLEND_EPSILON, PYRAMID_LEVELS,
};

use crate::backbone::{backbone_nodes, register_backbone, BackboneSpec, LEAKY_SLOPE};
use crate::elem::Element;
use crate::error::{NetError, Result};
use crate::graph::{Graph, NodeId};
use crate::motion::MotionNet;
use crate::params::{Adam, BoundParams, ParamBuilder, ParamSet};
use crate::train::{step_sample_index, TrainOptions};

/// Loss balance; defaults follow the published operating point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 500.0,
            lambda_r: 1.0,
            lambda_g: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_r", self.lambda_r),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v >= 0.0) {
                return Err(NetError::Validation(format!(
                    "loss_weights.{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpConfig {
    pub base_width: usize,
    pub encoder_convs: usize,
    /// Channel width of the regression encoder.
    pub regression_width: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            encoder_convs: 1,
            regression_width: 8,
            learning_rate: 1e-4,
            loss_weights: LossWeights::default(),
        }
    }
}

impl InterpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width < 4 {
            return Err(NetError::Validation(format!(
                "interp.base_width must be >= 4, got {}",
                self.base_width
            )));
        }
        if self.regression_width < 2 {
            return Err(NetError::Validation(format!(
                "interp.regression_width must be >= 2, got {}",
                self.regression_width
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NetError::Validation(format!(
                "interp.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.encoder_convs > 2 {
            return Err(NetError::Validation(format!(
                "interp.encoder_convs must be <= 2, got {}",
                self.encoder_convs
            )));
        }
        self.loss_weights.validate()
    }

    fn backbone(&self) -> BackboneSpec {
        BackboneSpec {
            // ED, ES, two warped candidates, two 3-component scaffold
            // fields, broadcast phase
            in_channels: 11,
            width: self.base_width,
            extra_convs: self.encoder_convs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InterpNet {
    pub config: InterpConfig,
    pub params: ParamSet,
}

impl InterpNet {
    pub fn init(config: InterpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let mut b = ParamBuilder::new(&mut params, seed);
        let spec = config.backbone();
        register_backbone(&mut b, &spec);
        let [c1, c2, c3] = spec.feature_channels();
        b.conv("corr1", c1, 1, true);
        b.conv("corr2", c2, 1, true);
        b.conv("corr3", c3, 1, true);
        b.conv("gamma", c3, 1, true);
        b.conv("resid_fwd", c3, 3, true);
        b.conv("resid_bwd", c3, 3, true);
        let rw = config.regression_width;
        b.conv("reg.enc1", 6, rw, false);
        b.conv("reg.enc2", rw, rw, false);
        b.linear("reg.fc", rw, 1, true);
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }
}

/// Everything the interpolation network emits for one phase.
#[derive(Debug, Clone)]
pub struct InterpOutput {
    /// Refined volumes, coarsest first; the last entry is full resolution.
    pub volumes: Vec<Volume>,
    /// Full-resolution blend-weight map, strictly inside (0, 1).
    pub gamma: WeightMap,
    /// Refined ED-to-t fields per scale, coarsest first.
    pub fields_ed: Vec<VectorField>,
    /// Refined ES-to-t fields per scale, coarsest first.
    pub fields_es: Vec<VectorField>,
    /// Predicted phase.
    pub t_hat: f64,
}

pub(crate) struct InterpNodes {
    pub volumes: [NodeId; 3],
    pub gamma: NodeId,
    pub fields_ed: [NodeId; 3],
    pub fields_es: [NodeId; 3],
    pub t_hat: NodeId,
}

fn head<T: Element>(
    g: &mut Graph<T>,
    params: &ParamSet,
    bound: &BoundParams,
    name: &str,
    x: NodeId,
    stride: usize,
) -> NodeId {
    let w = bound.node(params, &format!("{name}.weight"));
    let b = bound.node(params, &format!("{name}.bias"));
    g.conv3d(x, w, b, stride)
}

/// Build the full interpolation pass for one phase.
///
/// `ed_levels` / `es_levels` are pyramid leaves (coarsest first), `fwd` and
/// `bwd` the endpoint-to-endpoint motion fields at full resolution.
pub(crate) fn interp_forward_nodes<T: Element>(
    g: &mut Graph<T>,
    net: &InterpNet,
    bound: &BoundParams,
    ed_levels: &[NodeId; 3],
    es_levels: &[NodeId; 3],
    fwd: NodeId,
    bwd: NodeId,
    t: f64,
) -> InterpNodes {
    let params = &net.params;
    let cross = t * (1.0 - t);

    // Bidirectionally consistent scaffold: each direction mixes the
    // phase-scaled field with the self-composition of the opposite one.
    let self_b = g.warp(bwd, bwd);
    let self_f = g.warp(fwd, fwd);
    let a = g.scale(fwd, cross);
    let b = g.scale(self_b, -(t * t));
    let psi_f = g.add(a, b);
    let a = g.scale(bwd, cross);
    let b = g.scale(self_f, -((1.0 - t) * (1.0 - t)));
    let psi_b = g.add(a, b);

    let w_ed = g.warp(ed_levels[2], psi_f);
    let w_es = g.warp(es_levels[2], psi_b);
    let shape = g.value(ed_levels[2]).shape().to_vec();
    let t_map = g.constant_channel([shape[1], shape[2], shape[3]], t);
    let input = g.concat_channels(&[
        ed_levels[2],
        es_levels[2],
        w_ed,
        w_es,
        psi_f,
        psi_b,
        t_map,
    ]);

    let spec = net.config.backbone();
    let feats = backbone_nodes(g, params, bound, &spec, input);

    // refined fields: scaffold plus residual at full resolution, then
    // resampled down the pyramid
    let rf = head(g, params, bound, "resid_fwd", feats.levels[2], 1);
    let rb = head(g, params, bound, "resid_bwd", feats.levels[2], 1);
    let phi_f3 = g.add(psi_f, rf);
    let phi_b3 = g.add(psi_b, rb);
    let phi_f2 = g.resize(phi_f3, 0.5, true);
    let phi_f1 = g.resize(phi_f2, 0.5, true);
    let phi_b2 = g.resize(phi_b3, 0.5, true);
    let phi_b1 = g.resize(phi_b2, 0.5, true);
    let fields_ed = [phi_f1, phi_f2, phi_f3];
    let fields_es = [phi_b1, phi_b2, phi_b3];

    // blend weights: gamma at full resolution, pooled to the coarser scales
    let gamma_pre = head(g, params, bound, "gamma", feats.levels[2], 1);
    let gamma3 = g.sigmoid_clamp(gamma_pre);
    let gamma2 = g.avg_pool2(gamma3);
    let gamma1 = g.avg_pool2(gamma2);
    let gammas = [gamma1, gamma2, gamma3];

    let corr_names = ["corr1", "corr2", "corr3"];
    let mut volumes = [0usize; 3];
    for c in 0..PYRAMID_LEVELS {
        let wgt_ed = g.scale(gammas[c], 1.0 - t);
        let wgt_es = g.affine(gammas[c], -t, t); // t * (1 - gamma)
        let cand_ed = g.warp(ed_levels[c], fields_ed[c]);
        let cand_es = g.warp(es_levels[c], fields_es[c]);
        let lhs = g.mul(wgt_ed, cand_ed);
        let rhs = g.mul(wgt_es, cand_es);
        let num = g.add(lhs, rhs);
        let den_sum = g.add(wgt_ed, wgt_es);
        let den = g.affine(den_sum, 1.0, BLEND_EPSILON as f64);
        let blend = g.div(num, den);
        let corr = head(g, params, bound, corr_names[c], feats.levels[c], 1);
        volumes[c] = g.add(blend, corr);
    }

    // regression input: residuals relative to the phase-scaled linear fields
    let scaled_fwd = g.scale(fwd, t);
    let scaled_bwd = g.scale(bwd, 1.0 - t);
    let delta_f = g.sub(phi_f3, scaled_fwd);
    let delta_b = g.sub(phi_b3, scaled_bwd);
    let t_hat = regression_nodes(g, net, bound, delta_f, delta_b);

    InterpNodes {
        volumes,
        gamma: gamma3,
        fields_ed,
        fields_es,
        t_hat,
    }
}

fn regression_nodes<T: Element>(
    g: &mut Graph<T>,
    net: &InterpNet,
    bound: &BoundParams,
    delta_f: NodeId,
    delta_b: NodeId,
) -> NodeId {
    let params = &net.params;
    let rx = g.concat_channels(&[delta_f, delta_b]);
    let h1 = head(g, params, bound, "reg.enc1", rx, 2);
    let h1 = g.leaky_relu(h1, LEAKY_SLOPE);
    let h2 = head(g, params, bound, "reg.enc2", h1, 2);
    let h2 = g.leaky_relu(h2, LEAKY_SLOPE);
    let pooled = g.gap(h2);
    let w = bound.node(params, "reg.fc.weight");
    let b = bound.node(params, "reg.fc.bias");
    g.linear(pooled, w, b)
}

fn validate_interp_inputs(
    ed: &Volume,
    es: &Volume,
    fwd: &VectorField,
    bwd: &VectorField,
) -> Result<()> {
    if ed.dims() != es.dims() || ed.dims() != fwd.dims() || ed.dims() != bwd.dims() {
        return Err(NetError::Validation(format!(
            "interp inputs must share dims: volumes {:?}/{:?}, fields {:?}/{:?}",
            ed.dims(),
            es.dims(),
            fwd.dims(),
            bwd.dims()
        )));
    }
    if ed.dims().iter().any(|&d| d % 4 != 0) {
        return Err(NetError::Validation(format!(
            "interp network needs dims divisible by 4, got {:?}",
            ed.dims()
        )));
    }
    if !ed.is_finite() || !es.is_finite() || !fwd.is_finite() || !bwd.is_finite() {
        return Err(NetError::Validation("interp inputs must be finite".into()));
    }
    Ok(())
}

/// Full interpolation pass at phase `t` in the open interval (0, 1); the
/// endpoints are the inputs themselves and are rejected.
pub fn interp_forward(
    net: &InterpNet,
    ed: &Volume,
    es: &Volume,
    fwd: &VectorField,
    bwd: &VectorField,
    t: PhaseIndex,
) -> Result<InterpOutput> {
    if t.is_endpoint() {
        return Err(NetError::Domain(format!(
            "interp_forward is defined on the open interval (0, 1); \
             t = {} is an endpoint and equals an input volume",
            t.value()
        )));
    }
    validate_interp_inputs(ed, es, fwd, bwd)?;
    let pyr_ed = build_pyramid(ed)?;
    let pyr_es = build_pyramid(es)?;
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, &net.params, false);
    let ed_levels = bind_pyramid(&mut g, &pyr_ed);
    let es_levels = bind_pyramid(&mut g, &pyr_es);
    let fwd_leaf = g.field_leaf(fwd, false);
    let bwd_leaf = g.field_leaf(bwd, false);
    let nodes = interp_forward_nodes(
        &mut g,
        net,
        &bound,
        &ed_levels,
        &es_levels,
        fwd_leaf,
        bwd_leaf,
        t.value(),
    );
    let gamma_vol = g.node_to_volume(nodes.gamma);
    Ok(InterpOutput {
        volumes: nodes.volumes.iter().map(|&v| g.node_to_volume(v)).collect(),
        gamma: WeightMap::new(gamma_vol.into_data())?,
        fields_ed: nodes.fields_ed.iter().map(|&f| g.node_to_field(f)).collect(),
        fields_es: nodes.fields_es.iter().map(|&f| g.node_to_field(f)).collect(),
        t_hat: g.scalar(nodes.t_hat),
    })
}

fn bind_pyramid(g: &mut Graph<f32>, pyr: &Pyramid) -> [NodeId; 3] {
    let ids: Vec<NodeId> = pyr.levels().iter().map(|v| g.volume_leaf(v, false)).collect();
    [ids[0], ids[1], ids[2]]
}

/// Run only the regression head on a residual-field pair.
pub fn regression_forward(
    net: &InterpNet,
    delta_fwd: &VectorField,
    delta_bwd: &VectorField,
) -> Result<f64> {
    if delta_fwd.dims() != delta_bwd.dims() {
        return Err(NetError::Validation(format!(
            "residual fields must share dims, got {:?} vs {:?}",
            delta_fwd.dims(),
            delta_bwd.dims()
        )));
    }
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, &net.params, false);
    let df = g.field_leaf(delta_fwd, false);
    let db = g.field_leaf(delta_bwd, false);
    let t_hat = regression_nodes(&mut g, net, &bound, df, db);
    Ok(g.scalar(t_hat))
}

// ---- loss suite ---------------------------------------------------------

/// Multi-scale similarity: sum over phases and scales of the mean squared
/// difference between predicted and true intermediates.
pub fn loss_similar(pred: &[Vec<Volume>], truth: &[Vec<Volume>]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(NetError::Validation(format!(
            "loss_similar phase counts differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(NetError::Validation(format!(
                "loss_similar scale counts differ: {} vs {}",
                p.len(),
                t.len()
            )));
        }
        for (a, b) in p.iter().zip(t) {
            acc += svin_core::metrics::mse(a, b)?;
        }
    }
    Ok(acc)
}

/// Sum of absolute phase-prediction errors.
pub fn loss_regression(pred_t: &[f64], true_t: &[f64]) -> Result<f64> {
    if pred_t.len() != true_t.len() {
        return Err(NetError::Validation(format!(
            "loss_regression lengths differ: {} vs {}",
            pred_t.len(),
            true_t.len()
        )));
    }
    Ok(pred_t
        .iter()
        .zip(true_t)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Bidirectional consistency: L1 norm of the summed gradients of the two
/// intermediate fields, accumulated over scales (the gradient operator is
/// linear, so grad(f) + grad(b) = grad(f + b)).
pub fn loss_bidirectional(fields_ed: &[VectorField], fields_es: &[VectorField]) -> Result<f64> {
    if fields_ed.len() != fields_es.len() {
        return Err(NetError::Validation(format!(
            "loss_bidirectional scale counts differ: {} vs {}",
            fields_ed.len(),
            fields_es.len()
        )));
    }
    let mut acc = 0.0;
    for (f, b) in fields_ed.iter().zip(fields_es) {
        let sum = f.add(b)?;
        acc += svin_core::spatial_gradient(&sum)?.l1_sum();
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub similar: f64,
    pub regression: f64,
    pub bidirectional: f64,
}

/// Weighted total loss; rejects non-finite parts by name.
pub fn loss_total(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    if !parts.similar.is_finite() {
        return Err(NetError::NonFiniteTerm("similar"));
    }
    if !parts.regression.is_finite() {
        return Err(NetError::NonFiniteTerm("regression"));
    }
    if !parts.bidirectional.is_finite() {
        return Err(NetError::NonFiniteTerm("bidirectional"));
    }
    Ok(w.lambda_s * parts.similar + w.lambda_r * parts.regression + w.lambda_g * parts.bidirectional)
}

// ---- training ------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct InterpStepLoss {
    pub step: u64,
    pub total: f64,
    pub similar: f64,
    pub regression: f64,
    pub bidirectional: f64,
}

/// Endpoint motion fields for one sample, both directions, full resolution.
#[derive(Debug, Clone)]
pub struct SampleFields {
    pub fwd: VectorField,
    pub bwd: VectorField,
}

/// Compute frozen endpoint fields for every sample with the motion network.
pub fn precompute_fields(motion: &MotionNet, dataset: &[PhaseSample]) -> Result<Vec<SampleFields>> {
    dataset
        .iter()
        .map(|s| {
            let fwd = motion.forward(&s.ed, &s.es)?.pop().unwrap();
            let bwd = motion.forward(&s.es, &s.ed)?.pop().unwrap();
            Ok(SampleFields { fwd, bwd })
        })
        .collect()
}

pub struct InterpTrainer {
    pub net: InterpNet,
    pub adam: Adam,
    pub history: Vec<InterpStepLoss>,
    pub seed: u64,
}

struct SampleCache {
    pyr_ed: Pyramid,
    pyr_es: Pyramid,
    fields: SampleFields,
    /// (phase, truth pyramid) per intermediate.
    truths: Vec<(f64, Pyramid)>,
}

impl InterpTrainer {
    pub fn new(config: InterpConfig, seed: u64) -> Result<Self> {
        let adam = Adam::new(config.learning_rate);
        let net = InterpNet::init(config, seed)?;
        Ok(Self {
            net,
            adam,
            history: Vec::new(),
            seed,
        })
    }

    /// Train against a frozen motion network (its fields are computed once
    /// up front and never receive gradients).
    pub fn run(
        &mut self,
        dataset: &[PhaseSample],
        motion: &MotionNet,
        steps: u64,
    ) -> Result<()> {
        let fields = precompute_fields(motion, dataset)?;
        self.run_with_fields(dataset, &fields, steps)
    }

    /// Train with externally supplied (e.g. cached) endpoint fields.
    pub fn run_with_fields(
        &mut self,
        dataset: &[PhaseSample],
        fields: &[SampleFields],
        steps: u64,
    ) -> Result<()> {
        if dataset.is_empty() {
            return Err(NetError::Validation("training dataset is empty".into()));
        }
        if fields.len() != dataset.len() {
            return Err(NetError::Validation(format!(
                "field cache holds {} entries for {} samples",
                fields.len(),
                dataset.len()
            )));
        }
        let mut caches = Vec::with_capacity(dataset.len());
        for (sample, f) in dataset.iter().zip(fields) {
            if sample.intermediates.is_empty() {
                return Err(NetError::Validation(
                    "every sample needs at least one ground-truth intermediate".into(),
                ));
            }
            validate_interp_inputs(&sample.ed, &sample.es, &f.fwd, &f.bwd)?;
            let truths = sample
                .intermediates
                .iter()
                .map(|(t, v)| Ok((*t, build_pyramid(v)?)))
                .collect::<Result<Vec<_>>>()?;
            caches.push(SampleCache {
                pyr_ed: build_pyramid(&sample.ed)?,
                pyr_es: build_pyramid(&sample.es)?,
                fields: f.clone(),
                truths,
            });
        }

        let start = self.history.len() as u64;
        for step in start..start + steps {
            let idx = step_sample_index(self.seed, step, dataset.len());
            let record = self.step(step, &caches[idx])?;
            if !record.total.is_finite() {
                return Err(NetError::Divergence {
                    step,
                    detail: format!(
                        "similar {}, regression {}, bidirectional {}",
                        record.similar, record.regression, record.bidirectional
                    ),
                });
            }
            self.history.push(record);
        }
        Ok(())
    }

    fn step(&mut self, step: u64, cache: &SampleCache) -> Result<InterpStepLoss> {
        let w = self.net.config.loss_weights;
        let mut g = Graph::<f32>::new();
        let bound = BoundParams::bind(&mut g, &self.net.params, true);
        let ed_levels = bind_pyramid(&mut g, &cache.pyr_ed);
        let es_levels = bind_pyramid(&mut g, &cache.pyr_es);
        let fwd = g.field_leaf(&cache.fields.fwd, false);
        let bwd = g.field_leaf(&cache.fields.bwd, false);

        let mut sim_terms = Vec::new();
        let mut reg_terms = Vec::new();
        let mut bid_terms = Vec::new();
        for (t_k, truth_pyr) in &cache.truths {
            let nodes = interp_forward_nodes(
                &mut g,
                &self.net,
                &bound,
                &ed_levels,
                &es_levels,
                fwd,
                bwd,
                *t_k,
            );
            for c in 0..PYRAMID_LEVELS {
                let truth = g.volume_leaf(&truth_pyr.levels()[c], false);
                sim_terms.push(g.mse(nodes.volumes[c], truth));
                let fsum = g.add(nodes.fields_ed[c], nodes.fields_es[c]);
                bid_terms.push(g.grad_l1(fsum));
            }
            let t_leaf = g.scalar_leaf(*t_k, false);
            let diff = g.sub(nodes.t_hat, t_leaf);
            reg_terms.push(g.abs(diff));
        }
        let sim = g.add_n(&sim_terms);
        let reg = g.add_n(&reg_terms);
        let bid = g.add_n(&bid_terms);
        let sim_w = g.scale(sim, w.lambda_s);
        let reg_w = g.scale(reg, w.lambda_r);
        let bid_w = g.scale(bid, w.lambda_g);
        let partial = g.add(sim_w, reg_w);
        let total = g.add(partial, bid_w);

        let record = InterpStepLoss {
            step,
            total: g.scalar(total),
            similar: g.scalar(sim),
            regression: g.scalar(reg),
            bidirectional: g.scalar(bid),
        };
        let grads = g.backward(total);
        let grads = bound.gradients(&self.net.params, &grads);
        self.adam.step(&mut self.net.params, &grads)?;
        Ok(record)
    }
}

/// Train a fresh interpolation network against a frozen motion network.
pub fn train_interp(
    dataset: &[PhaseSample],
    motion: &MotionNet,
    config: &InterpConfig,
    opts: &TrainOptions,
) -> Result<InterpTrainer> {
    let mut trainer = InterpTrainer::new(config.clone(), opts.seed)?;
    trainer.run(dataset, motion, opts.steps)?;
    Ok(trainer)
}

/// Interpolate `count` evenly spaced phases between two endpoint volumes:
/// t_k = k / (count + 1). Returns full-resolution volumes in phase order.
pub fn infer_sequence(
    motion: &MotionNet,
    interp: &InterpNet,
    ed: &Volume,
    es: &Volume,
    count: usize,
) -> Result<Vec<(f64, Volume)>> {
    if count < 1 {
        return Err(NetError::Validation(format!(
            "intermediate count must be >= 1, got {count}"
        )));
    }
    let fwd = motion.forward(ed, es)?.pop().unwrap();
    let bwd = motion.forward(es, ed)?.pop().unwrap();
    let mut out = Vec::with_capacity(count);
    for k in 1..=count {
        let t = k as f64 / (count + 1) as f64;
        let result = interp_forward(interp, ed, es, &fwd, &bwd, PhaseIndex::new(t)?)?;
        out.push((t, result.volumes.last().unwrap().clone()));
    }
    Ok(out)
}

/// Phantom-matched default used by tests and the harness when no spec is
/// given; kept here so callers share one geometry.
pub fn default_phantom(dims: [usize; 3], seed: u64) -> PhantomSpec {
    PhantomSpec::default_for(dims, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use svin_core::{blend_weighted, consistent_intermediate_fields};

    fn tiny_config() -> InterpConfig {
        InterpConfig {
            base_width: 4,
            encoder_convs: 0,
            regression_width: 4,
            learning_rate: 1e-3,
            loss_weights: LossWeights {
                lambda_s: 100.0,
                lambda_r: 1.0,
                lambda_g: 1e-6,
            },
        }
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random::<f32>())
    }

    fn random_field(dims: [usize; 3], seed: u64, scale: f32) -> VectorField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        VectorField::from_fn(dims, |_, _, _| {
            [
                (rng.random::<f32>() - 0.5) * scale,
                (rng.random::<f32>() - 0.5) * scale,
                (rng.random::<f32>() - 0.5) * scale,
            ]
        })
    }

    #[test]
    fn zero_init_reduces_to_weighted_scaffold_blend() {
        let net = InterpNet::init(tiny_config(), 3).unwrap();
        let dims = [8, 8, 8];
        let ed = random_volume(dims, 1);
        let es = random_volume(dims, 2);
        let fwd = random_field(dims, 3, 2.0);
        let bwd = random_field(dims, 4, 2.0);
        let t = PhaseIndex::new(0.4).unwrap();
        let out = interp_forward(&net, &ed, &es, &fwd, &bwd, t).unwrap();
        let (psi_f, psi_b) = consistent_intermediate_fields(&fwd, &bwd, t).unwrap();
        let gamma = WeightMap::uniform(dims, 0.5).unwrap();
        let expect = blend_weighted(&ed, &es, &psi_f, &psi_b, t, &gamma, true).unwrap();
        let max_err = out.volumes[2]
            .data()
            .iter()
            .zip(expect.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-5, "zero-init output deviates by {max_err}");
        // refined fields equal the scaffold exactly at full resolution
        for (a, b) in out.fields_ed[2].data().iter().zip(psi_f.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn output_shapes_and_gamma_range() {
        let net = InterpNet::init(tiny_config(), 5).unwrap();
        let dims = [8, 8, 8];
        let out = interp_forward(
            &net,
            &random_volume(dims, 6),
            &random_volume(dims, 7),
            &random_field(dims, 8, 1.0),
            &random_field(dims, 9, 1.0),
            PhaseIndex::new(0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(out.volumes.len(), 3);
        assert_eq!(out.volumes[0].dims(), [2, 2, 2]);
        assert_eq!(out.volumes[1].dims(), [4, 4, 4]);
        assert_eq!(out.volumes[2].dims(), [8, 8, 8]);
        assert_eq!(out.fields_ed[2].dims(), dims);
        for &v in out.gamma.gamma_ed().iter() {
            assert!(v > 0.0 && v < 1.0);
        }
        assert!(out.t_hat.is_finite());
    }

    #[test]
    fn endpoints_are_rejected() {
        let net = InterpNet::init(tiny_config(), 10).unwrap();
        let dims = [8, 8, 8];
        let ed = random_volume(dims, 11);
        let es = random_volume(dims, 12);
        let f = VectorField::zeros(dims);
        for t in [0.0, 1.0] {
            let err = interp_forward(&net, &ed, &es, &f, &f, PhaseIndex::new(t).unwrap());
            assert!(matches!(err, Err(NetError::Domain(_))));
        }
    }

    #[test]
    fn regression_zero_init_outputs_bias() {
        let net = InterpNet::init(tiny_config(), 13).unwrap();
        let dims = [8, 8, 8];
        let df = random_field(dims, 14, 1.0);
        let db = random_field(dims, 15, 1.0);
        let t1 = regression_forward(&net, &df, &db).unwrap();
        assert_eq!(t1, 0.0, "zero-initialized scalar head must output 0");
        // determinism
        let t2 = regression_forward(&net, &df, &db).unwrap();
        assert_eq!(t1.to_bits(), t2.to_bits());
    }

    #[test]
    fn loss_similar_examples() {
        let zeros: Vec<Volume> = (0..3).map(|_| Volume::constant([4, 4, 4], 0.0)).collect();
        let ones: Vec<Volume> = (0..3).map(|_| Volume::constant([4, 4, 4], 1.0)).collect();
        assert_eq!(
            loss_similar(&[zeros.clone()], &[zeros.clone()]).unwrap(),
            0.0
        );
        assert!((loss_similar(&[zeros.clone()], &[ones]).unwrap() - 3.0).abs() < 1e-12);
        // random case equals brute force accumulation
        let a = vec![vec![
            random_volume([4, 4, 4], 20),
            random_volume([2, 2, 2], 21),
        ]];
        let b = vec![vec![
            random_volume([4, 4, 4], 22),
            random_volume([2, 2, 2], 23),
        ]];
        let mut expect = 0.0f64;
        for (x, y) in a[0].iter().zip(&b[0]) {
            let mut acc = 0.0f64;
            for (p, q) in x.data().iter().zip(y.data().iter()) {
                acc += (*p as f64 - *q as f64).powi(2);
            }
            expect += acc / x.num_voxels() as f64;
        }
        assert!((loss_similar(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_regression_examples() {
        assert_eq!(loss_regression(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let got = loss_regression(&[0.2, 0.6], &[0.25, 0.5]).unwrap();
        assert!((got - 0.15).abs() < 1e-12);
        // permutation symmetry of the sum
        let a = loss_regression(&[0.1, 0.9], &[0.2, 0.5]).unwrap();
        let b = loss_regression(&[0.9, 0.1], &[0.5, 0.2]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(loss_regression(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn loss_bidirectional_examples() {
        let dims = [4, 4, 4];
        let f = random_field(dims, 30, 2.0);
        let neg = f.scaled(-1.0);
        assert_eq!(
            loss_bidirectional(&[f.clone()], &[neg]).unwrap(),
            0.0,
            "opposite fields cancel"
        );
        let z = VectorField::zeros(dims);
        assert_eq!(loss_bidirectional(&[z.clone()], &[z.clone()]).unwrap(), 0.0);
        // F_x = x forward, zero backward on one 4^3 level: 3 * 16 = 48
        let ramp = VectorField::from_fn(dims, |_, _, x| [x as f32, 0.0, 0.0]);
        assert_eq!(loss_bidirectional(&[ramp], &[z]).unwrap(), 48.0);
    }

    #[test]
    fn loss_total_examples() {
        let w = LossWeights::default();
        let zero = LossParts {
            similar: 0.0,
            regression: 0.0,
            bidirectional: 0.0,
        };
        assert_eq!(loss_total(&zero, &w).unwrap(), 0.0);
        let ones = LossParts {
            similar: 1.0,
            regression: 1.0,
            bidirectional: 1.0,
        };
        assert_eq!(loss_total(&ones, &w).unwrap(), 551.0);
        // doubling lambda_s doubles only the similarity contribution
        let doubled = LossWeights {
            lambda_s: 1000.0,
            ..w
        };
        assert_eq!(loss_total(&ones, &doubled).unwrap(), 1051.0);
        let bad = LossParts {
            similar: f64::NAN,
            ..ones
        };
        assert!(matches!(
            loss_total(&bad, &w),
            Err(NetError::NonFiniteTerm("similar"))
        ));
    }

    fn tiny_dataset(dims: [usize; 3]) -> Vec<PhaseSample> {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            ..PhantomSpec::default_for(dims, 50)
        };
        vec![svin_core::generate_phantom(&spec, 5).unwrap()]
    }

    #[test]
    fn training_decreases_loss_and_freezes_motion() {
        let dims = [16, 16, 16];
        let dataset = tiny_dataset(dims);
        let motion = crate::motion::MotionNet::init(
            crate::motion::MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..crate::motion::MotionConfig::default()
            },
            60,
        )
        .unwrap();
        let motion_before = motion.params.clone();
        let trainer = train_interp(
            &dataset,
            &motion,
            &tiny_config(),
            &TrainOptions::new(40, 61),
        )
        .unwrap();
        assert!(motion.params.values_bitwise_eq(&motion_before));
        let h = &trainer.history;
        assert_eq!(h.len(), 40);
        let first = h[0].total;
        let last = h.last().unwrap().total;
        assert!(
            last < first,
            "loss should decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let dims = [8, 8, 8];
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            ..PhantomSpec::default_for(dims, 70)
        };
        let dataset = vec![svin_core::generate_phantom(&spec, 4).unwrap()];
        let motion = crate::motion::MotionNet::init(
            crate::motion::MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..crate::motion::MotionConfig::default()
            },
            71,
        )
        .unwrap();
        let run = || {
            train_interp(
                &dataset,
                &motion,
                &tiny_config(),
                &TrainOptions::new(8, 72),
            )
            .unwrap()
            .history
        };
        let h1 = run();
        let h2 = run();
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }

    #[test]
    fn infer_sequence_phases() {
        let dims = [8, 8, 8];
        let motion = crate::motion::MotionNet::init(
            crate::motion::MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..crate::motion::MotionConfig::default()
            },
            80,
        )
        .unwrap();
        let interp = InterpNet::init(tiny_config(), 81).unwrap();
        let ed = random_volume(dims, 82);
        let es = random_volume(dims, 83);
        let seq = infer_sequence(&motion, &interp, &ed, &es, 3).unwrap();
        let phases: Vec<f64> = seq.iter().map(|(t, _)| *t).collect();
        assert_eq!(phases, vec![0.25, 0.5, 0.75]);
        let single = infer_sequence(&motion, &interp, &ed, &es, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single[0].0 - 0.5).abs() < 1e-12);
        assert!(infer_sequence(&motion, &interp, &ed, &es, 0).is_err());
    }

    #[test]
    fn identity_inputs_with_zero_fields_return_input() {
        // fresh zero-init interp net on identical endpoints and zero fields:
        // the blend is exactly the input and corrections are zero
        let net = InterpNet::init(tiny_config(), 90).unwrap();
        let dims = [8, 8, 8];
        let v = random_volume(dims, 91);
        let z = VectorField::zeros(dims);
        let out = interp_forward(&net, &v, &v, &z, &z, PhaseIndex::new(0.5).unwrap()).unwrap();
        let max_err = out.volumes[2]
            .data()
            .iter()
            .zip(v.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
            / 1.0;
        assert!(max_err < 1e-5, "deviation {max_err}");
    }
}
