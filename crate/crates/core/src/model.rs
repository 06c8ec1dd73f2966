//! GLU layers and the embedding → GLU stack → readout classifier.
//!
//! Weights are stored row-major as `[out × in]`, so a layer computes
//! `x · Wᵀ` on a `[batch × in]` input and row `a` of the readout is the
//! contiguous vector that weights hidden units for logit `a`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{GateKind, GateSpec};
use crate::tensor::{Graph, Tensor, Var};

/// Architecture and seed of a [`GluMlpModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    /// Output width of each GLU layer; its length is the layer count.
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    pub gate: GateSpec,
    pub biases: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub const MNIST_INPUT: usize = 784;
    pub const MNIST_CLASSES: usize = 10;

    /// Single bias-free GLU between embedding and readout, for eigen-analysis.
    pub fn interp(gate: GateSpec, seed: u64) -> Self {
        ModelConfig {
            input_dim: Self::MNIST_INPUT,
            model_dim: 128,
            hidden_dims: vec![128],
            class_count: Self::MNIST_CLASSES,
            gate,
            biases: false,
            seed,
        }
    }

    /// Two GLU layers of width 128 with biases, for the accuracy comparisons.
    pub fn perf(gate: GateSpec, seed: u64) -> Self {
        ModelConfig {
            input_dim: Self::MNIST_INPUT,
            model_dim: 128,
            hidden_dims: vec![128, 128],
            class_count: Self::MNIST_CLASSES,
            gate,
            biases: true,
            seed,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.model_dim == 0 || self.class_count == 0 {
            return Err(Error::Config(format!(
                "dimensions must be ≥ 1 (input {}, model {}, classes {})",
                self.input_dim, self.model_dim, self.class_count
            )));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("at least one GLU layer is required".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("hidden dims must be ≥ 1, got {:?}", self.hidden_dims)));
        }
        self.gate.validate()
    }
}

/// `(x·Wᵀ + b) ⊙ σ(x·Vᵀ + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GluLayer {
    pub w: Tensor,
    pub v: Tensor,
    pub b: Option<Tensor>,
    pub c_bias: Option<Tensor>,
    pub gate: GateSpec,
}

impl GluLayer {
    pub fn new(w: Tensor, v: Tensor, b: Option<Tensor>, c_bias: Option<Tensor>, gate: GateSpec) -> Result<Self> {
        let (h, _) = w.dims2()?;
        if w.shape() != v.shape() {
            return Err(Error::dims("GluLayer", w.shape(), v.shape()));
        }
        for bias in [&b, &c_bias].into_iter().flatten() {
            if bias.shape() != [h] {
                return Err(Error::dims("GluLayer bias", &[h], bias.shape()));
            }
        }
        gate.validate()?;
        Ok(GluLayer { w, v, b, c_bias, gate })
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    /// Evaluate on a `[batch × in]` input without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = LayerVars::bind(self, &mut g, false);
        let xv = g.constant(x.clone());
        let y = glu_forward(&mut g, &vars, &self.gate, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Graph handles of one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub w: Var,
    pub v: Var,
    pub b: Option<Var>,
    pub c_bias: Option<Var>,
}

impl LayerVars {
    fn bind(layer: &GluLayer, g: &mut Graph, trainable: bool) -> Self {
        let mut put = |t: &Tensor| {
            if trainable {
                g.param(t)
            } else {
                g.constant(t.clone())
            }
        };
        LayerVars {
            w: put(&layer.w),
            v: put(&layer.v),
            b: layer.b.as_ref().map(&mut put),
            c_bias: layer.c_bias.as_ref().map(&mut put),
        }
    }
}

/// Record one GLU layer on `g`.
pub fn glu_forward(g: &mut Graph, layer: &LayerVars, gate: &GateSpec, x: Var) -> Result<Var> {
    let mut value = g.matmul_bt(x, layer.w)?;
    if let Some(b) = layer.b {
        value = g.add_row_bias(value, b)?;
    }
    let mut pre = g.matmul_bt(x, layer.v)?;
    if let Some(c) = layer.c_bias {
        pre = g.add_row_bias(pre, c)?;
    }
    let gated = if gate.kind == GateKind::Identity {
        pre
    } else {
        g.gate(pre, gate)
    };
    g.mul(value, gated)
}

/// Embedding projection, GLU stack, and per-class readout.
#[derive(Clone, Debug, PartialEq)]
pub struct GluMlpModel {
    pub config: ModelConfig,
    /// `[model_dim × input_dim]`
    pub embed: Tensor,
    pub layers: Vec<GluLayer>,
    /// `[class_count × last hidden dim]`
    pub out_proj: Tensor,
}

/// Graph handles for every parameter of a model, in [`GluMlpModel::params`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed: Var,
    pub layers: Vec<LayerVars>,
    pub out_proj: Var,
}

impl ModelVars {
    pub fn list(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        for l in &self.layers {
            out.push(l.w);
            out.push(l.v);
            out.extend(l.b);
            out.extend(l.c_bias);
        }
        out.push(self.out_proj);
        out
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (cols as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// Weights uniform in `±1/√fan_in`, biases zero, deterministic per seed.
pub fn init_model(config: &ModelConfig) -> Result<GluMlpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embed = uniform_matrix(config.model_dim, config.input_dim, &mut rng);
    let mut layers = Vec::with_capacity(config.layer_count());
    let mut d_in = config.model_dim;
    for &h in &config.hidden_dims {
        let w = uniform_matrix(h, d_in, &mut rng);
        let v = uniform_matrix(h, d_in, &mut rng);
        let (b, c) = if config.biases {
            (Some(Tensor::zeros(&[h])), Some(Tensor::zeros(&[h])))
        } else {
            (None, None)
        };
        layers.push(GluLayer::new(w, v, b, c, config.gate)?);
        d_in = h;
    }
    let out_proj = uniform_matrix(config.class_count, d_in, &mut rng);
    Ok(GluMlpModel {
        config: config.clone(),
        embed,
        layers,
        out_proj,
    })
}

impl GluMlpModel {
    /// Check that stored tensors agree with the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.embed.shape() != [c.model_dim, c.input_dim] {
            return Err(Error::dims("embed", &[c.model_dim, c.input_dim], self.embed.shape()));
        }
        if self.layers.len() != c.layer_count() {
            return Err(Error::Config(format!(
                "config lists {} layers, model has {}",
                c.layer_count(),
                self.layers.len()
            )));
        }
        let mut d_in = c.model_dim;
        for (layer, &h) in self.layers.iter().zip(&c.hidden_dims) {
            if layer.w.shape() != [h, d_in] {
                return Err(Error::dims("glu", &[h, d_in], layer.w.shape()));
            }
            if layer.b.is_some() != c.biases || layer.c_bias.is_some() != c.biases {
                return Err(Error::Config("layer bias presence disagrees with config".into()));
            }
            d_in = h;
        }
        if self.out_proj.shape() != [c.class_count, d_in] {
            return Err(Error::dims("out_proj", &[c.class_count, d_in], self.out_proj.shape()));
        }
        Ok(())
    }

    /// Named parameters in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("glu{i}.w"), &l.w));
            out.push((format!("glu{i}.v"), &l.v));
            if let Some(b) = &l.b {
                out.push((format!("glu{i}.b"), b));
            }
            if let Some(c) = &l.c_bias {
                out.push((format!("glu{i}.c"), c));
            }
        }
        out.push(("out_proj".to_string(), &self.out_proj));
        out
    }

    /// Mutable counterpart of [`params`](Self::params), same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("glu{i}.w"), &mut l.w));
            out.push((format!("glu{i}.v"), &mut l.v));
            if let Some(b) = &mut l.b {
                out.push((format!("glu{i}.b"), b));
            }
            if let Some(c) = &mut l.c_bias {
                out.push((format!("glu{i}.c"), c));
            }
        }
        out.push(("out_proj".to_string(), &mut self.out_proj));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Put every parameter on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let put = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t)
            } else {
                g.constant(t.clone())
            }
        };
        let embed = put(g, &self.embed);
        let layers = self.layers.iter().map(|l| LayerVars::bind(l, g, trainable)).collect();
        let out_proj = put(g, &self.out_proj);
        ModelVars { embed, layers, out_proj }
    }

    /// Record the forward pass on `g`, returning the logits node.
    pub fn forward_graph(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != self.config.input_dim {
            return Err(Error::dims("model_forward", &xs, &[0, self.config.input_dim]));
        }
        let mut h = g.matmul_bt(x, vars.embed)?;
        for (layer, lv) in self.layers.iter().zip(&vars.layers) {
            h = glu_forward(g, lv, &layer.gate, h)?;
        }
        g.matmul_bt(h, vars.out_proj)
    }

    /// Logits `[batch × class_count]` for a `[batch × input_dim]` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward_graph(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }

    /// One GLU layer and no biases: the form the interaction-matrix analysis needs.
    pub fn is_interpretable(&self) -> bool {
        self.layers.len() == 1 && !self.config.biases
    }
}
