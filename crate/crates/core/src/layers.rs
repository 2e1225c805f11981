//! Parameterised building blocks shared by the encoder, attention units and decoder.

use hfc_tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// How a parameter tensor is filled at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Draws the initial value. Each parameter gets its own stream derived from
    /// `(seed, name)`, so values do not depend on construction order and a
    /// parameter shared between two model variants starts out identical.
    pub fn initial<T: Real>(&self, seed: u64) -> Tensor<T> {
        match self.init {
            Init::Constant(v) => Tensor::full(&self.shape, T::of(v)),
            Init::He { fan_in } => {
                let mut rng = param_rng(seed, &self.name);
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(&self.shape, |_| T::of(normal.sample(&mut rng)))
            }
        }
    }
}

fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the name, folded into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

pub fn init_store<T: Real>(specs: &[ParamSpec], seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for spec in specs {
        store.insert(spec.name.clone(), spec.initial(seed))?;
    }
    Ok(store)
}

/// Square-kernel 2D convolution with "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub bias: bool,
    /// Start from zero weights instead of He initialisation.
    pub zero_init: bool,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Conv {
            name: name.into(),
            cin,
            cout,
            k,
            stride: 1,
            bias: true,
            zero_init: false,
        }
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn zero_initialised(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: self.weight_name(),
            shape: vec![self.cout, self.cin, self.k, self.k],
            init: if self.zero_init {
                Init::Constant(0.0)
            } else {
                Init::He {
                    fan_in: self.cin * self.k * self.k,
                }
            },
        });
        if self.bias {
            out.push(ParamSpec {
                name: self.bias_name(),
                shape: vec![self.cout],
                init: Init::Constant(0.0),
            });
        }
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(ps, &self.weight_name())?;
        let b = if self.bias {
            Some(g.param(ps, &self.bias_name())?)
        } else {
            None
        };
        Ok(g.conv2d(x, w, b, self.stride, self.k / 2)?)
    }
}

/// Largest group count not above 4 that divides `channels`.
pub fn norm_groups(channels: usize) -> usize {
    (1..=4.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Convolution (no bias) followed by group normalisation and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub groups: usize,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

impl ConvBlock {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        ConvBlock {
            conv: Conv::new(name, cin, cout, k).without_bias(),
            groups: norm_groups(cout),
        }
    }

    fn gamma_name(&self) -> String {
        format!("{}.gn.gamma", self.conv.name)
    }

    fn beta_name(&self) -> String {
        format!("{}.gn.beta", self.conv.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv.specs(out);
        let c = self.conv.cout;
        out.push(ParamSpec {
            name: self.gamma_name(),
            shape: vec![c],
            init: Init::Constant(1.0),
        });
        out.push(ParamSpec {
            name: self.beta_name(),
            shape: vec![c],
            init: Init::Constant(0.0),
        });
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let y = self.conv.apply(g, ps, x)?;
        let gamma = g.param(ps, &self.gamma_name())?;
        let beta = g.param(ps, &self.beta_name())?;
        let y = g.group_norm(y, gamma, beta, self.groups, NORM_EPS)?;
        Ok(g.relu(y))
    }
}
