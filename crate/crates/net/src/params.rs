//! Named parameter blocks, deterministic initialization and the Adam
//! optimizer. Master weights and optimizer moments are f32; graphs bind
//! them as leaves in whichever element type they run in.

use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::elem::Element;
use crate::error::{NetError, Result};
use crate::graph::{Graph, NodeId};

/// One learnable tensor plus its Adam moments.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: ArrayD<f32>,
    pub m: ArrayD<f32>,
    pub v: ArrayD<f32>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            m,
            v,
        }
    }
}

/// An ordered set of named parameter blocks.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn push(&mut self, block: ParamBlock) {
        assert!(
            self.index_of(&block.name).is_none(),
            "duplicate parameter block {}",
            block.name
        );
        self.blocks.push(block);
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn get(&self, name: &str) -> &ParamBlock {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamBlock {
        self.blocks
            .iter_mut()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    /// Zero a block in place (used by the coarse-to-fine contract tests and
    /// ablations).
    pub fn zero_block(&mut self, name: &str) {
        self.get_mut(name).value.fill(0.0);
    }

    /// Bitwise equality of all values (moments excluded).
    pub fn values_bitwise_eq(&self, other: &ParamSet) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
                a.name == b.name
                    && a.value.len() == b.value.len()
                    && a.value
                        .iter()
                        .zip(b.value.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Helper that registers conv / linear blocks with deterministic init.
pub struct ParamBuilder<'a> {
    pub set: &'a mut ParamSet,
    pub rng: ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(set: &'a mut ParamSet, seed: u64) -> Self {
        Self {
            set,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// 3x3x3 conv block `[c_out, c_in, 3, 3, 3]` with uniform He-style init;
    /// `zero_init` heads start the network at the identity mapping.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, zero_init: bool) {
        let fan_in = (c_in * 27) as f64;
        let bound = (2.0 / fan_in).sqrt();
        let n = c_out * c_in * 27;
        let data: Vec<f32> = if zero_init {
            vec![0.0; n]
        } else {
            (0..n)
                .map(|_| ((self.rng.random::<f64>() * 2.0 - 1.0) * bound) as f32)
                .collect()
        };
        self.set.push(ParamBlock::new(
            format!("{name}.weight"),
            ArrayD::from_shape_vec(IxDyn(&[c_out, c_in, 3, 3, 3]), data).unwrap(),
        ));
        self.set.push(ParamBlock::new(
            format!("{name}.bias"),
            ArrayD::zeros(IxDyn(&[c_out])),
        ));
    }

    /// Dense block `[k, c]`.
    pub fn linear(&mut self, name: &str, c: usize, k: usize, zero_init: bool) {
        let bound = (1.0 / c as f64).sqrt();
        let data: Vec<f32> = if zero_init {
            vec![0.0; k * c]
        } else {
            (0..k * c)
                .map(|_| ((self.rng.random::<f64>() * 2.0 - 1.0) * bound) as f32)
                .collect()
        };
        self.set.push(ParamBlock::new(
            format!("{name}.weight"),
            ArrayD::from_shape_vec(IxDyn(&[k, c]), data).unwrap(),
        ));
        self.set.push(ParamBlock::new(
            format!("{name}.bias"),
            ArrayD::zeros(IxDyn(&[k])),
        ));
    }
}

/// Parameter blocks bound into a graph as leaves, in block order.
pub struct BoundParams {
    node_ids: Vec<NodeId>,
}

impl BoundParams {
    /// Bind every block of `params` into `g`; `trainable` controls whether
    /// gradients flow into them.
    pub fn bind<T: Element>(g: &mut Graph<T>, params: &ParamSet, trainable: bool) -> Self {
        let node_ids = params
            .blocks
            .iter()
            .map(|b| {
                let data: Vec<T> = b.value.iter().map(|&x| T::from_f64(x as f64)).collect();
                g.leaf(
                    ArrayD::from_shape_vec(b.value.raw_dim(), data).unwrap(),
                    trainable,
                )
            })
            .collect();
        Self { node_ids }
    }

    /// Node id of a block by its index in the owning `ParamSet`.
    pub fn node(&self, params: &ParamSet, name: &str) -> NodeId {
        self.node_ids[params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"))]
    }

    /// Harvest gradients (cast to f32) in block order; missing gradients
    /// come back as zeros.
    pub fn gradients<T: Element>(
        &self,
        params: &ParamSet,
        grads: &[Option<ArrayD<T>>],
    ) -> Vec<ArrayD<f32>> {
        self.node_ids
            .iter()
            .zip(&params.blocks)
            .map(|(&id, block)| match &grads[id] {
                Some(g) => {
                    let data: Vec<f32> = g.iter().map(|&x| x.to_float() as f32).collect();
                    ArrayD::from_shape_vec(g.raw_dim(), data).unwrap()
                }
                None => ArrayD::zeros(block.value.raw_dim()),
            })
            .collect()
    }
}

/// Adam with the standard moment estimates; all arithmetic in f32 so that
/// fixed-seed runs and checkpoint resumes are bitwise reproducible.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Number of updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate: learning_rate as f32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[ArrayD<f32>]) -> Result<()> {
        if grads.len() != params.blocks.len() {
            return Err(NetError::Validation(format!(
                "gradient count {} does not match block count {}",
                grads.len(),
                params.blocks.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (block, g) in params.blocks.iter_mut().zip(grads) {
            let m = block.m.as_slice_mut().unwrap();
            let v = block.v.as_slice_mut().unwrap();
            let w = block.value.as_slice_mut().unwrap();
            let gs = g.as_slice().unwrap();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gs[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let m_hat = m[i] / b1t;
                let v_hat = v[i] / b2t;
                w[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_is_config_function() {
        let mut set = ParamSet::default();
        let mut b = ParamBuilder::new(&mut set, 1);
        b.conv("stem", 2, 8, false);
        b.conv("head", 8, 3, true);
        assert_eq!(set.param_count(), 2 * 8 * 27 + 8 + 8 * 3 * 27 + 3);
    }

    #[test]
    fn init_is_deterministic() {
        let build = |seed| {
            let mut set = ParamSet::default();
            let mut b = ParamBuilder::new(&mut set, seed);
            b.conv("a", 4, 4, false);
            b.linear("fc", 4, 1, false);
            set
        };
        assert!(build(7).values_bitwise_eq(&build(7)));
        assert!(!build(7).values_bitwise_eq(&build(8)));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // single scalar parameter, loss = (w - 3)^2
        let mut set = ParamSet::default();
        set.push(ParamBlock::new(
            "w",
            ArrayD::zeros(IxDyn(&[1])),
        ));
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = set.blocks[0].value[[0]];
            let g = ArrayD::from_elem(IxDyn(&[1]), 2.0 * (w - 3.0));
            adam.step(&mut set, &[g]).unwrap();
        }
        assert!((set.blocks[0].value[[0]] - 3.0).abs() < 0.05);
    }

    #[test]
    fn zero_init_heads_are_zero() {
        let mut set = ParamSet::default();
        let mut b = ParamBuilder::new(&mut set, 3);
        b.conv("head", 8, 3, true);
        assert!(set.get("head.weight").value.iter().all(|&v| v == 0.0));
        assert!(set.get("head.bias").value.iter().all(|&v| v == 0.0));
    }
}
