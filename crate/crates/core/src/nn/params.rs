use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::group::channels;
use crate::nn::config::{ModelConfig, ModelMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Every trainable tensor, in declaration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    pub entries: Vec<Param>,
}

impl ModelParams {
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct Builder {
    params: ModelParams,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, tensor: Tensor) -> ParamId {
        self.params.entries.push(Param { name, tensor });
        ParamId(self.params.entries.len() - 1)
    }

    /// Uniform in `±1/√s_in`.
    fn weight(&mut self, name: String, s_in: usize, s_out: usize) -> ParamId {
        let bound = 1.0 / (s_in as f64).sqrt();
        let data = (0..s_in * s_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.push(name, Tensor::from_parts(vec![s_in, s_out], data))
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.push(name, Tensor::full(shape, value))
    }
}

/// Per-channel parameters of one encoder block; each vector is indexed like
/// [`channels`].
#[derive(Clone, Debug)]
pub struct EqBlock {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub out: Vec<ParamId>,
    pub ff_in: Vec<ParamId>,
    pub ff_out: Vec<ParamId>,
    pub ln1_gamma: Vec<ParamId>,
    pub ln1_beta: Vec<ParamId>,
    pub ln2_gamma: Vec<ParamId>,
    pub ln2_beta: Vec<ParamId>,
}

#[derive(Clone, Debug)]
pub struct EqLayout {
    pub feat_bias: Vec<ParamId>,
    pub embed: Vec<ParamId>,
    pub blocks: Vec<EqBlock>,
    pub head: Vec<ParamId>,
    pub head_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct PlainBlock {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub out: Dense,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct PlainLayout {
    pub embed: Dense,
    pub blocks: Vec<PlainBlock>,
    pub head: Dense,
}

#[derive(Clone, Debug)]
pub enum Layout {
    Equivariant(EqLayout),
    Plain(PlainLayout),
}

/// Declares every parameter for `config` and initializes it from `seed`:
/// linear weights uniform in `±1/√s_in`, biases 0, γ = 1, β = 0.
pub fn init_params(config: &ModelConfig, seed: u64) -> (Layout, ModelParams) {
    let mut b = Builder { params: ModelParams::default(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let layout = match config.mode {
        ModelMode::Equivariant => Layout::Equivariant(eq_layout(config, &mut b)),
        ModelMode::Plain => Layout::Plain(plain_layout(config, &mut b)),
    };
    (layout, b.params)
}

fn eq_layout(config: &ModelConfig, b: &mut Builder) -> EqLayout {
    let chans = channels();
    let s = |i: usize| config.multiplicity(chans[i].label);
    let per = |b: &mut Builder, f: &mut dyn FnMut(&mut Builder, usize, String) -> ParamId| {
        (0..chans.len()).map(|i| f(b, i, chans[i].label.to_string())).collect::<Vec<_>>()
    };
    let feat_bias = per(b, &mut |b, _, l| b.fill(format!("featurize.{l}.bias"), &[1, 1], 0.0));
    let embed = per(b, &mut |b, i, l| b.weight(format!("embed.{l}"), 1, s(i)));
    let blocks = (0..config.layers)
        .map(|n| {
            let lin = |b: &mut Builder, name: &str, expand_in: usize, expand_out: usize| {
                per(b, &mut |b, i, l| b.weight(format!("block{n}.{name}.{l}"), s(i) * expand_in, s(i) * expand_out))
            };
            let query = lin(b, "query", 1, 1);
            let key = lin(b, "key", 1, 1);
            let value = lin(b, "value", 1, 1);
            let out = lin(b, "out", 1, 1);
            let ff_in = lin(b, "ff_in", 1, config.ff_expansion);
            let ff_out = lin(b, "ff_out", config.ff_expansion, 1);
            let norm = |b: &mut Builder, name: &str, v: f64| {
                per(b, &mut |b, i, l| b.fill(format!("block{n}.{name}.{l}"), &[1, 1, s(i)], v))
            };
            EqBlock {
                query,
                key,
                value,
                out,
                ff_in,
                ff_out,
                ln1_gamma: norm(b, "ln1.gamma", 1.0),
                ln1_beta: norm(b, "ln1.beta", 0.0),
                ln2_gamma: norm(b, "ln2.gamma", 1.0),
                ln2_beta: norm(b, "ln2.beta", 0.0),
            }
        })
        .collect();
    let head = per(b, &mut |b, i, l| b.weight(format!("head.{l}"), s(i), 1));
    let head_bias = b.fill("head.bias".into(), &[1, 1], 0.0);
    EqLayout { feat_bias, embed, blocks, head, head_bias }
}

fn plain_layout(config: &ModelConfig, b: &mut Builder) -> PlainLayout {
    let d = config.plain_width;
    let dense = |b: &mut Builder, name: String, d_in: usize, d_out: usize| Dense {
        weight: b.weight(format!("{name}.weight"), d_in, d_out),
        bias: b.fill(format!("{name}.bias"), &[1, d_out], 0.0),
    };
    let embed = dense(b, "embed".into(), 12, d);
    let blocks = (0..config.layers)
        .map(|n| {
            let ff = d * config.ff_expansion;
            PlainBlock {
                query: dense(b, format!("block{n}.query"), d, d),
                key: dense(b, format!("block{n}.key"), d, d),
                value: dense(b, format!("block{n}.value"), d, d),
                out: dense(b, format!("block{n}.out"), d, d),
                ff_in: dense(b, format!("block{n}.ff_in"), d, ff),
                ff_out: dense(b, format!("block{n}.ff_out"), ff, d),
                ln1_gamma: b.fill(format!("block{n}.ln1.gamma"), &[1, d], 1.0),
                ln1_beta: b.fill(format!("block{n}.ln1.beta"), &[1, d], 0.0),
                ln2_gamma: b.fill(format!("block{n}.ln2.gamma"), &[1, d], 1.0),
                ln2_beta: b.fill(format!("block{n}.ln2.beta"), &[1, d], 0.0),
            }
        })
        .collect();
    let head = dense(b, "head".into(), d, 12);
    PlainLayout { embed, blocks, head }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialization_is_deterministic() {
        let c = ModelConfig::default();
        assert_eq!(init_params(&c, 7).1, init_params(&c, 7).1);
        assert_ne!(init_params(&c, 7).1, init_params(&c, 8).1);
    }

    #[test]
    fn equivariant_parameter_count_matches_hand_count() {
        // per channel: embed s, 4 attention s², feed-forward 2·2s², four LN vectors of s,
        // head s, featurization bias 1; plus the global head bias
        let (s, layers, chans) = (16usize, 4usize, 7usize);
        let per_block = 4 * s * s + 4 * s * s + 4 * s;
        let expected = chans * (1 + s + layers * per_block + s) + 1;
        let (_, p) = init_params(&ModelConfig::default(), 0);
        assert_eq!(p.count(), expected);
    }

    #[test]
    fn default_equivariant_model_is_smaller_than_plain_baseline() {
        let (_, eq) = init_params(&ModelConfig::default(), 0);
        let (_, plain) = init_params(&ModelConfig::plain_default(), 0);
        assert!(eq.count() < plain.count(), "{} vs {}", eq.count(), plain.count());
    }

    #[test]
    fn init_bounds() {
        let (_, p) = init_params(&ModelConfig::default(), 3);
        for e in &p.entries {
            if e.name.contains("gamma") {
                assert!(e.tensor.data().iter().all(|&x| x == 1.0));
            } else if e.name.contains("beta") || e.name.contains("bias") {
                assert!(e.tensor.data().iter().all(|&x| x == 0.0));
            } else {
                let bound = 1.0 / (e.tensor.shape()[0] as f64).sqrt();
                assert!(e.tensor.data().iter().all(|x| x.abs() <= bound), "{}", e.name);
            }
        }
    }
}
