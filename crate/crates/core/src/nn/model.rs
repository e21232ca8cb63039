use crate::autodiff::{Graph, Var};
use crate::embed::PieceTensor;
use crate::error::{CheckpointError, ConfigError, ShapeError};
use crate::nn::config::{ModelConfig, Nonlinearity, NormOrder};
use crate::nn::layers::{
    apply_activation, eq_activation, eq_layer_norm, eq_linear, eq_positional_encoding, eq_self_attention, featurize,
    norm_gated_activation, output_head, AttentionWeights, Basis, ChannelVars,
};
use crate::nn::params::{init_params, Dense, EqLayout, Layout, ModelParams, ParamId, PlainLayout};
use crate::nn::plain::{self, DenseVars, PlainAttention};
use crate::tensor::Tensor;

/// A configured model with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    pub params: ModelParams,
}

/// Graph nodes produced by one forward pass.
pub struct Forward {
    /// 12×T chord logits
    pub logits: Var,
    /// Attention score matrices, layer-major then head.
    pub scores: Vec<Var>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let (layout, params) = init_params(&config, seed);
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self, CheckpointError> {
        config.validate().map_err(|e| CheckpointError::Config(e.0))?;
        let (layout, mut fresh) = init_params(&config, 0);
        if fresh.len() != params.len() {
            return Err(CheckpointError::Incompatible(format!(
                "config declares {} parameter blocks, found {}",
                fresh.len(),
                params.len()
            )));
        }
        for (slot, tensor) in fresh.entries.iter_mut().zip(params) {
            if slot.tensor.shape() != tensor.shape() {
                return Err(CheckpointError::Incompatible(format!(
                    "{} expects shape {:?}, found {:?}",
                    slot.name,
                    slot.tensor.shape(),
                    tensor.shape()
                )));
            }
            slot.tensor = tensor;
        }
        Ok(Self { config, layout, params: fresh })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Adds every parameter to `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.tensors().map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) }).collect()
    }

    /// Builds the forward pass on a 12×T melody node. `key_valid` marks
    /// non-padding positions for the attention mask.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        melody: Var,
        key_valid: Option<&[bool]>,
    ) -> Result<Forward, ShapeError> {
        match &self.layout {
            Layout::Equivariant(layout) => self.forward_equivariant(g, vars, layout, melody, key_valid),
            Layout::Plain(layout) => self.forward_plain(g, vars, layout, melody, key_valid),
        }
    }

    fn forward_equivariant(
        &self,
        g: &mut Graph,
        vars: &[Var],
        layout: &EqLayout,
        melody: Var,
        key_valid: Option<&[bool]>,
    ) -> Result<Forward, ShapeError> {
        let c = &self.config;
        let p = |ids: &[ParamId]| ids.iter().map(|i| vars[i.0]).collect::<Vec<_>>();
        let basis = Basis::new(g);
        let h = featurize(g, &basis, melody, &p(&layout.feat_bias))?;
        let h = eq_linear(g, &h, &p(&layout.embed))?;
        let mut h = eq_positional_encoding(g, &h, c.pe_base)?;
        let mut scores = Vec::new();
        for block in &layout.blocks {
            let (q, k, v, o) = (p(&block.query), p(&block.key), p(&block.value), p(&block.out));
            let weights = AttentionWeights { query: &q, key: &k, value: &v, out: &o };
            let ln1 = |g: &mut Graph, x: &ChannelVars| {
                eq_layer_norm(g, &basis, x, &p(&block.ln1_gamma), &p(&block.ln1_beta), c.ln_eps)
            };
            let ln2 = |g: &mut Graph, x: &ChannelVars| {
                eq_layer_norm(g, &basis, x, &p(&block.ln2_gamma), &p(&block.ln2_beta), c.ln_eps)
            };
            let ff = |g: &mut Graph, x: &ChannelVars| -> Result<ChannelVars, ShapeError> {
                let inner = eq_linear(g, x, &p(&block.ff_in))?;
                let act = match c.nonlinearity {
                    Nonlinearity::Pullback => eq_activation(g, &basis, &inner, c.activation)?,
                    Nonlinearity::NormGated(gate) => norm_gated_activation(g, &inner, gate)?,
                };
                eq_linear(g, &act, &p(&block.ff_out))
            };
            h = match c.norm_order {
                NormOrder::Post => {
                    let (a, s) = eq_self_attention(g, &h, &weights, c.heads, key_valid)?;
                    scores.extend(s);
                    let sum = h.add(g, &a)?;
                    let h1 = ln1(g, &sum)?;
                    let f = ff(g, &h1)?;
                    let sum = h1.add(g, &f)?;
                    ln2(g, &sum)?
                }
                NormOrder::Pre => {
                    let n1 = ln1(g, &h)?;
                    let (a, s) = eq_self_attention(g, &n1, &weights, c.heads, key_valid)?;
                    scores.extend(s);
                    let h1 = h.add(g, &a)?;
                    let n2 = ln2(g, &h1)?;
                    let f = ff(g, &n2)?;
                    h1.add(g, &f)?
                }
            };
        }
        let logits = output_head(g, &basis, &h, &p(&layout.head), vars[layout.head_bias.0])?;
        Ok(Forward { logits, scores })
    }

    fn forward_plain(
        &self,
        g: &mut Graph,
        vars: &[Var],
        layout: &PlainLayout,
        melody: Var,
        key_valid: Option<&[bool]>,
    ) -> Result<Forward, ShapeError> {
        let c = &self.config;
        let dv = |d: &Dense| DenseVars { weight: vars[d.weight.0], bias: vars[d.bias.0] };
        let x = g.transpose(melody)?;
        let x = plain::dense(g, x, vars[layout.embed.weight.0], vars[layout.embed.bias.0])?;
        let mut h = plain::positional_encoding(g, x, c.pe_base)?;
        let mut scores = Vec::new();
        for block in &layout.blocks {
            let weights = PlainAttention {
                query: dv(&block.query),
                key: dv(&block.key),
                value: dv(&block.value),
                out: dv(&block.out),
            };
            let ln1 =
                |g: &mut Graph, x| plain::layer_norm(g, x, vars[block.ln1_gamma.0], vars[block.ln1_beta.0], c.ln_eps);
            let ln2 =
                |g: &mut Graph, x| plain::layer_norm(g, x, vars[block.ln2_gamma.0], vars[block.ln2_beta.0], c.ln_eps);
            let ff = |g: &mut Graph, x| -> Result<Var, ShapeError> {
                let inner = plain::dense(g, x, vars[block.ff_in.weight.0], vars[block.ff_in.bias.0])?;
                let act = apply_activation(g, inner, c.activation);
                plain::dense(g, act, vars[block.ff_out.weight.0], vars[block.ff_out.bias.0])
            };
            h = match c.norm_order {
                NormOrder::Post => {
                    let (a, s) = plain::self_attention(g, h, &weights, c.heads, key_valid)?;
                    scores.extend(s);
                    let sum = g.add(h, a)?;
                    let h1 = ln1(g, sum)?;
                    let f = ff(g, h1)?;
                    let sum = g.add(h1, f)?;
                    ln2(g, sum)?
                }
                NormOrder::Pre => {
                    let n1 = ln1(g, h)?;
                    let (a, s) = plain::self_attention(g, n1, &weights, c.heads, key_valid)?;
                    scores.extend(s);
                    let h1 = g.add(h, a)?;
                    let n2 = ln2(g, h1)?;
                    let f = ff(g, n2)?;
                    g.add(h1, f)?
                }
            };
        }
        let out = plain::dense(g, h, vars[layout.head.weight.0], vars[layout.head.bias.0])?;
        let logits = g.transpose(out)?;
        Ok(Forward { logits, scores })
    }

    /// 12×T logits for a 12×T melody matrix.
    pub fn forward(&self, melody: &Tensor) -> Result<Tensor, ShapeError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let m = g.constant(melody.clone());
        let out = self.forward_graph(&mut g, &vars, m, None)?;
        Ok(g.value(out.logits).clone())
    }

    /// Attention score matrices (layer-major, then head).
    pub fn attention_scores(&self, melody: &Tensor) -> Result<Vec<Tensor>, ShapeError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let m = g.constant(melody.clone());
        let out = self.forward_graph(&mut g, &vars, m, None)?;
        Ok(out.scores.iter().map(|s| g.value(*s).clone()).collect())
    }

    /// Summed weighted BCE of one piece and its gradient for every
    /// parameter, in declaration order.
    pub fn loss_and_grads(&self, piece: &PieceTensor) -> Result<(f64, Vec<Tensor>), ShapeError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, true);
        let m = g.constant(piece.melody.clone());
        let out = self.forward_graph(&mut g, &vars, m, None)?;
        let loss = g.weighted_bce(out.logits, &piece.chords, &piece.weights)?;
        let mut grads = g.backward(loss)?;
        let loss_value = g.value(loss).item();
        let tensors = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((loss_value, tensors))
    }

    /// Summed weighted BCE of one piece.
    pub fn loss(&self, piece: &PieceTensor) -> Result<f64, ShapeError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let m = g.constant(piece.melody.clone());
        let out = self.forward_graph(&mut g, &vars, m, None)?;
        let loss = g.weighted_bce(out.logits, &piece.chords, &piece.weights)?;
        Ok(g.value(loss).item())
    }
}
