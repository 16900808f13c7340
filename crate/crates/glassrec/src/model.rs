//! Graph encoders over material networks: a shared input projection followed
//! by message-passing layers in one of three flavours (spectral convolution,
//! interaction-aware embedding propagation, or attention with neighbourhood
//! aggregation), all built on the gradient tape.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MaterialNetwork;
use crate::tensor::{GradientTape, Tensor, TensorId};

/// Epsilon inside every layer-normalisation denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which encoder family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Ngcf,
    TransGnn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Architecture::Gcn => "gcn",
            Architecture::Ngcf => "ngcf",
            Architecture::TransGnn => "transgnn",
        };
        f.write_str(name)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Architecture::Gcn),
            "ngcf" => Ok(Architecture::Ngcf),
            "transgnn" => Ok(Architecture::TransGnn),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected gcn, ngcf, or transgnn)"
            ))),
        }
    }
}

/// Hyperparameters of an encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of message-passing layers, 1 to 3.
    pub layers: usize,
    /// Width of the raw element embeddings fed in.
    pub input_dim: usize,
    /// Width of every hidden representation.
    pub hidden_dim: usize,
    /// Attention heads (TransGNN only); must divide `hidden_dim`.
    pub num_heads: usize,
    /// Dropout rate applied after the projection and after each layer.
    pub dropout: f64,
    /// Negative slope of the leaky rectifier (NGCF only).
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, input_dim: usize) -> Self {
        ModelConfig {
            architecture,
            layers: 2,
            input_dim,
            hidden_dim: 64,
            num_heads: 4,
            dropout: 0.1,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers) {
            return Err(Error::Config(format!(
                "layers must be 1, 2, or 3, got {}",
                self.layers
            )));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.architecture == Architecture::TransGnn {
            if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "hidden dimension {} is not divisible by {} attention heads",
                    self.hidden_dim, self.num_heads
                )));
            }
        }
        Ok(())
    }
}

/// Handle to one named parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    tensor: Tensor,
}

/// Ordered collection of trainable tensors. Construction order is the
/// canonical parameter order used for binding, gradient updates, and
/// serialization, so it must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Param {
            name: name.to_string(),
            tensor: tensor.requires_grad(true),
        });
        ParamId(self.entries.len() - 1)
    }

    /// Matrix with Xavier-uniform entries: `U(-l, l)` where
    /// `l = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let tensor = Tensor::new(vec![rows, cols], data).expect("shape matches data");
        self.add(name, tensor)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let tensor = Tensor::zeros(shape);
        self.add(name, tensor)
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let n: usize = shape.iter().product();
        let tensor = Tensor::new(shape, vec![1.0; n]).expect("shape matches data");
        self.add(name, tensor)
    }

    /// Insert a pre-built tensor under `name` (checkpoint restore). The
    /// caller is responsible for supplying names in canonical order.
    pub fn load(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.add(name, tensor)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|p| (p.name.as_str(), &p.tensor))
    }

    /// Mutable view of every parameter tensor, in canonical order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|p| &mut p.tensor)
    }

    /// Push every parameter onto a tape, in order, as gradient-tracked
    /// inputs.
    pub fn bind(&self, tape: &mut GradientTape) -> ParamBinding {
        let ids = self
            .entries
            .iter()
            .map(|p| tape.input(p.tensor.clone()))
            .collect();
        ParamBinding { ids }
    }
}

/// Tape ids of one [`ParamSet::bind`] call, indexable by [`ParamId`].
#[derive(Debug, Clone)]
pub struct ParamBinding {
    ids: Vec<TensorId>,
}

impl ParamBinding {
    /// Wrap raw tape ids that were pushed in canonical parameter order.
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        ParamBinding { ids }
    }

    pub fn id(&self, param: ParamId) -> TensorId {
        self.ids[param.0]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Constant graph operators shared by every forward pass on one network.
#[derive(Debug, Clone)]
pub struct GraphOps {
    /// Symmetrically normalised adjacency with self-loops.
    pub norm_adj: Tensor,
    /// Row-stochastic neighbour averaging operator (no self-loops).
    pub neigh_mean: Tensor,
    /// Diagonal inverse-square-root degree operator (no self-loops).
    pub inv_sqrt_deg: Tensor,
}

impl GraphOps {
    pub fn from_network(net: &MaterialNetwork) -> Self {
        GraphOps {
            norm_adj: net.normalized_adjacency(),
            neigh_mean: net.neighbor_mean_operator(),
            inv_sqrt_deg: net.inv_sqrt_degree_operator(),
        }
    }

    pub fn new(norm_adj: Tensor, neigh_mean: Tensor, inv_sqrt_deg: Tensor) -> Self {
        GraphOps {
            norm_adj,
            neigh_mean,
            inv_sqrt_deg,
        }
    }
}

struct AttentionHead {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

enum LayerParams {
    Gcn {
        w: ParamId,
    },
    Ngcf {
        w1: ParamId,
        w2: ParamId,
    },
    Trans {
        heads: Vec<AttentionHead>,
        wo: ParamId,
        ln1_gain: ParamId,
        ln1_bias: ParamId,
        ffn_w1: ParamId,
        ffn_w2: ParamId,
        ln2_gain: ParamId,
        ln2_bias: ParamId,
        agg_w2: ParamId,
        fuse_w1: ParamId,
        ln3_gain: ParamId,
        ln3_bias: ParamId,
    },
}

/// A configured encoder: the parameter layout plus the forward recipe.
/// The weights themselves live in the [`ParamSet`] so training, checkpoint
/// I/O, and scoring heads can share one flat parameter list.
pub struct Encoder {
    config: ModelConfig,
    proj_w: ParamId,
    proj_b: ParamId,
    layers: Vec<LayerParams>,
}

impl Encoder {
    /// Allocate all parameters for `config` into `params`, reading
    /// initial values from `rng` in a fixed order.
    pub fn new(config: ModelConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let proj_w = params.xavier("proj.w", config.input_dim, h, rng);
        let proj_b = params.zeros("proj.b", vec![h]);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let layer = match config.architecture {
                Architecture::Gcn => LayerParams::Gcn {
                    w: params.xavier(&format!("layer{l}.w"), h, h, rng),
                },
                Architecture::Ngcf => LayerParams::Ngcf {
                    w1: params.xavier(&format!("layer{l}.w1"), h, h, rng),
                    w2: params.xavier(&format!("layer{l}.w2"), h, h, rng),
                },
                Architecture::TransGnn => {
                    let d_head = h / config.num_heads;
                    let heads = (0..config.num_heads)
                        .map(|a| AttentionHead {
                            wq: params.xavier(&format!("layer{l}.attn{a}.wq"), h, d_head, rng),
                            wk: params.xavier(&format!("layer{l}.attn{a}.wk"), h, d_head, rng),
                            wv: params.xavier(&format!("layer{l}.attn{a}.wv"), h, d_head, rng),
                        })
                        .collect();
                    LayerParams::Trans {
                        heads,
                        wo: params.xavier(&format!("layer{l}.attn.wo"), h, h, rng),
                        ln1_gain: params.ones(&format!("layer{l}.ln1.gain"), vec![h]),
                        ln1_bias: params.zeros(&format!("layer{l}.ln1.bias"), vec![h]),
                        ffn_w1: params.xavier(&format!("layer{l}.ffn.w1"), h, 4 * h, rng),
                        ffn_w2: params.xavier(&format!("layer{l}.ffn.w2"), 4 * h, h, rng),
                        ln2_gain: params.ones(&format!("layer{l}.ln2.gain"), vec![h]),
                        ln2_bias: params.zeros(&format!("layer{l}.ln2.bias"), vec![h]),
                        agg_w2: params.xavier(&format!("layer{l}.agg.w2"), h, h, rng),
                        fuse_w1: params.xavier(&format!("layer{l}.fuse.w1"), 2 * h, h, rng),
                        ln3_gain: params.ones(&format!("layer{l}.ln3.gain"), vec![h]),
                        ln3_bias: params.zeros(&format!("layer{l}.ln3.bias"), vec![h]),
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Encoder {
            config,
            proj_w,
            proj_b,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Input projection: `dropout(relu(X W + b))`.
    pub fn project(
        &self,
        tape: &mut GradientTape,
        binding: &ParamBinding,
        x: TensorId,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let lin = tape.matmul(x, binding.id(self.proj_w))?;
        let shifted = tape.add_row(lin, binding.id(self.proj_b))?;
        let act = tape.relu(shifted);
        tape.dropout(act, self.config.dropout, training, rng)
    }

    /// Spectral convolution layer: `dropout(relu(A_hat H W))`.
    pub fn gcn_layer(
        &self,
        tape: &mut GradientTape,
        w: TensorId,
        h: TensorId,
        norm_adj: TensorId,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let mixed = tape.matmul(norm_adj, h)?;
        let lin = tape.matmul(mixed, w)?;
        let act = tape.relu(lin);
        tape.dropout(act, self.config.dropout, training, rng)
    }

    /// Embedding-propagation layer with an explicit feature-interaction
    /// term:
    /// `dropout(leaky_relu(H W1 + (D^-1/2 H ⊙ P D^-1/2 H) W2))`.
    pub fn ngcf_layer(
        &self,
        tape: &mut GradientTape,
        w1: TensorId,
        w2: TensorId,
        h: TensorId,
        neigh_mean: TensorId,
        inv_sqrt_deg: TensorId,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let own = tape.matmul(h, w1)?;
        let scaled = tape.matmul(inv_sqrt_deg, h)?;
        let mixed = tape.matmul(neigh_mean, scaled)?;
        let interact = tape.mul(scaled, mixed)?;
        let interact = tape.matmul(interact, w2)?;
        let combined = tape.add(own, interact)?;
        let act = tape.leaky_relu(combined, self.config.leaky_slope);
        tape.dropout(act, self.config.dropout, training, rng)
    }

    /// Attention layer: multi-head self-attention with residuals and layer
    /// norms, a position-wise feed-forward block, then fusion of the
    /// transformer stream with a neighbourhood-aggregation stream.
    #[allow(clippy::too_many_arguments)]
    pub fn transgnn_layer(
        &self,
        tape: &mut GradientTape,
        layer: usize,
        binding: &ParamBinding,
        h: TensorId,
        neigh_mean: TensorId,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let LayerParams::Trans {
            heads,
            wo,
            ln1_gain,
            ln1_bias,
            ffn_w1,
            ffn_w2,
            ln2_gain,
            ln2_bias,
            agg_w2,
            fuse_w1,
            ln3_gain,
            ln3_bias,
        } = &self.layers[layer]
        else {
            return Err(Error::Contract(format!(
                "layer {layer} is not an attention layer"
            )));
        };
        let d_head = self.config.hidden_dim / self.config.num_heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let rate = self.config.dropout;

        // Multi-head self-attention over all nodes.
        let mut contexts = Vec::with_capacity(heads.len());
        for head in heads {
            let q = tape.matmul(h, binding.id(head.wq))?;
            let k = tape.matmul(h, binding.id(head.wk))?;
            let v = tape.matmul(h, binding.id(head.wv))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.mul_scalar(scores, scale);
            let attn = tape.softmax_rows(scores);
            contexts.push(tape.matmul(attn, v)?);
        }
        let context = tape.concat_columns(&contexts)?;
        let context = tape.matmul(context, binding.id(*wo))?;
        let context = tape.dropout(context, rate, training, rng)?;
        let residual = tape.add(h, context)?;
        let attended = tape.layer_norm(
            residual,
            binding.id(*ln1_gain),
            binding.id(*ln1_bias),
            LAYER_NORM_EPS,
        )?;

        // Position-wise feed-forward with its own residual.
        let inner = tape.matmul(attended, binding.id(*ffn_w1))?;
        let inner = tape.relu(inner);
        let ffn = tape.matmul(inner, binding.id(*ffn_w2))?;
        let residual = tape.add(attended, ffn)?;
        let transformed = tape.layer_norm(
            residual,
            binding.id(*ln2_gain),
            binding.id(*ln2_bias),
            LAYER_NORM_EPS,
        )?;

        // Neighbourhood aggregation stream fused with the attention stream.
        let messages = tape.matmul(transformed, binding.id(*agg_w2))?;
        let gathered = tape.matmul(neigh_mean, messages)?;
        let gathered = tape.dropout(gathered, rate, training, rng)?;
        let fused = tape.concat_columns(&[transformed, gathered])?;
        let fused = tape.matmul(fused, binding.id(*fuse_w1))?;
        let fused = tape.relu(fused);
        let fused = tape.layer_norm(
            fused,
            binding.id(*ln3_gain),
            binding.id(*ln3_bias),
            LAYER_NORM_EPS,
        )?;
        tape.dropout(fused, rate, training, rng)
    }

    /// Full forward pass: project the raw features, then apply every layer.
    /// Returns the tape id of the final `[n, hidden_dim]` representation.
    pub fn forward(
        &self,
        tape: &mut GradientTape,
        binding: &ParamBinding,
        x: &Tensor,
        ops: &GraphOps,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if x.last_dim() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "encoder expects {}-dimensional features, got {}",
                self.config.input_dim,
                x.last_dim()
            )));
        }
        let x = tape.constant(x.clone());
        let mut h = self.project(tape, binding, x, training, rng)?;
        match self.config.architecture {
            Architecture::Gcn => {
                let adj = tape.constant(ops.norm_adj.clone());
                for layer in &self.layers {
                    let LayerParams::Gcn { w } = layer else {
                        unreachable!("gcn encoder holds gcn layers");
                    };
                    h = self.gcn_layer(tape, binding.id(*w), h, adj, training, rng)?;
                }
            }
            Architecture::Ngcf => {
                let mean = tape.constant(ops.neigh_mean.clone());
                let deg = tape.constant(ops.inv_sqrt_deg.clone());
                for layer in &self.layers {
                    let LayerParams::Ngcf { w1, w2 } = layer else {
                        unreachable!("ngcf encoder holds ngcf layers");
                    };
                    h = self.ngcf_layer(
                        tape,
                        binding.id(*w1),
                        binding.id(*w2),
                        h,
                        mean,
                        deg,
                        training,
                        rng,
                    )?;
                }
            }
            Architecture::TransGnn => {
                let mean = tape.constant(ops.neigh_mean.clone());
                for l in 0..self.layers.len() {
                    h = self.transgnn_layer(tape, l, binding, h, mean, training, rng)?;
                }
            }
        }
        Ok(h)
    }

    /// Convenience eval-mode pass returning the representation by value.
    pub fn embed(&self, params: &ParamSet, x: &Tensor, ops: &GraphOps) -> Result<Tensor> {
        let mut tape = GradientTape::new();
        let binding = params.bind(&mut tape);
        // Dropout is inactive in eval mode, so this rng is never drawn from.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let h = self.forward(&mut tape, &binding, x, ops, false, &mut rng)?;
        Ok(tape.value(h).clone())
    }
}
