//! D12-equivariant layers acting on irrep channels.
//!
//! A hidden state is one `(L, l_a, s_a)` tensor per surviving channel, in
//! [`channels`] order. Linear maps only mix the multiplicity axis; every
//! nonlinear step pulls a channel back to the 12-dim permutation
//! representation with `Uᵀ`, acts elementwise or on permutation-invariant
//! statistics there, and pushes forward again with `U`.

use crate::autodiff::{Gate, Graph, Var};
use crate::error::ShapeError;
use crate::group::{channels, GroupElement};
use crate::nn::config::Activation;
use crate::tensor::Tensor;

/// Plain-value hidden state: one `(L, l_a, s_a)` tensor per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    pub channels: Vec<Tensor>,
}

impl ChannelTensor {
    /// Applies `D^(a)(g)` along the irrep axis of every channel.
    pub fn transform(&self, g: GroupElement) -> Self {
        let channels = self
            .channels
            .iter()
            .zip(channels())
            .map(|(x, c)| {
                let d = c.label.matrix(g);
                let &[len, dim, mult] = x.shape() else { panic!("channel tensor must be rank 3") };
                let mut out = vec![0.0; x.len()];
                for t in 0..len {
                    for i in 0..dim {
                        for k in 0..mult {
                            out[(t * dim + i) * mult + k] = (0..dim).map(|j| d.at(i, j) * x.at3(t, j, k)).sum();
                        }
                    }
                }
                Tensor::from_parts(vec![len, dim, mult], out)
            })
            .collect();
        Self { channels }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.channels.iter().zip(&other.channels).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    pub fn constants(&self, g: &mut Graph) -> ChannelVars {
        ChannelVars(self.channels.iter().map(|t| g.constant(t.clone())).collect())
    }

    pub fn leaves(&self, g: &mut Graph) -> ChannelVars {
        ChannelVars(self.channels.iter().map(|t| g.leaf(t.clone())).collect())
    }
}

/// Graph-resident hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVars(pub Vec<Var>);

impl ChannelVars {
    pub fn values(&self, g: &Graph) -> ChannelTensor {
        ChannelTensor { channels: self.0.iter().map(|v| g.value(*v).clone()).collect() }
    }

    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.0[0])[0]
    }

    fn zip_with(
        &self,
        g: &mut Graph,
        other: &Self,
        f: fn(&mut Graph, Var, Var) -> Result<Var, ShapeError>,
    ) -> Result<Self, ShapeError> {
        self.0.iter().zip(&other.0).map(|(a, b)| f(g, *a, *b)).collect::<Result<_, _>>().map(ChannelVars)
    }

    /// Channelwise sum (residual connections).
    pub fn add(&self, g: &mut Graph, other: &Self) -> Result<Self, ShapeError> {
        self.zip_with(g, other, Graph::add)
    }
}

/// The change-of-basis matrices as graph constants.
pub struct Basis {
    /// `U^(a)`, l_a × 12
    pub u: Vec<Var>,
    /// `(U^(a))ᵀ`, 12 × l_a
    pub u_t: Vec<Var>,
}

impl Basis {
    pub fn new(g: &mut Graph) -> Self {
        let u = channels().iter().map(|c| g.constant(c.u.clone())).collect();
        let u_t = channels().iter().map(|c| g.constant(c.u_t.clone())).collect();
        Self { u, u_t }
    }

    /// `(L, l_a, s) → (L, 12, s)`
    pub fn pull_back(&self, g: &mut Graph, a: usize, x: Var) -> Result<Var, ShapeError> {
        g.matmul(self.u_t[a], x)
    }

    /// `(L, 12, s) → (L, l_a, s)`
    pub fn push_forward(&self, g: &mut Graph, a: usize, x: Var) -> Result<Var, ShapeError> {
        g.matmul(self.u[a], x)
    }
}

fn check_channels(x: &ChannelVars, n: usize, what: &str) -> Result<(), ShapeError> {
    if x.0.len() != channels().len() || n != channels().len() {
        return Err(ShapeError::new(format!(
            "{what}: expected {} channels, got {} inputs and {n} parameters",
            channels().len(),
            x.0.len()
        )));
    }
    Ok(())
}

/// `h^(a) = U^(a)(m + b_a·1)` for every column of the 12×T melody.
pub fn featurize(g: &mut Graph, basis: &Basis, melody: Var, biases: &[Var]) -> Result<ChannelVars, ShapeError> {
    let shape = g.shape(melody).to_vec();
    if shape.len() != 2 || shape[0] != 12 {
        return Err(ShapeError::new(format!("melody must be 12×T, got {shape:?}")));
    }
    let steps = shape[1];
    let columns = g.transpose(melody)?;
    let mut out = Vec::with_capacity(channels().len());
    for (a, c) in channels().iter().enumerate() {
        let shifted = g.add(columns, biases[a])?;
        let h = g.matmul(shifted, basis.u_t[a])?;
        out.push(g.reshape(h, &[steps, c.dim(), 1])?);
    }
    Ok(ChannelVars(out))
}

/// Right-multiplies each channel's multiplicity axis by its own weight.
pub fn eq_linear(g: &mut Graph, x: &ChannelVars, weights: &[Var]) -> Result<ChannelVars, ShapeError> {
    check_channels(x, weights.len(), "eq_linear")?;
    x.0.iter()
        .zip(weights)
        .map(|(&h, &w)| {
            let s_in = g.shape(h)[2];
            if g.shape(w)[0] != s_in {
                return Err(ShapeError::new(format!("eq_linear: input multiplicity {s_in}, weight {:?}", g.shape(w))));
            }
            g.matmul(h, w)
        })
        .collect::<Result<_, _>>()
        .map(ChannelVars)
}

pub(crate) fn apply_activation(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// `h ↦ U σ(Uᵀ h)` per channel and multiplicity column.
pub fn eq_activation(
    g: &mut Graph,
    basis: &Basis,
    x: &ChannelVars,
    act: Activation,
) -> Result<ChannelVars, ShapeError> {
    let mut out = Vec::with_capacity(x.0.len());
    for (a, &h) in x.0.iter().enumerate() {
        let pulled = basis.pull_back(g, a, h)?;
        let activated = apply_activation(g, pulled, act);
        out.push(basis.push_forward(g, a, activated)?);
    }
    Ok(ChannelVars(out))
}

/// `v ↦ gate(‖v‖)·v/‖v‖` on every irrep vector.
pub fn norm_gated_activation(g: &mut Graph, x: &ChannelVars, gate: Gate) -> Result<ChannelVars, ShapeError> {
    x.0.iter().map(|&h| g.norm_gate(h, gate)).collect::<Result<_, _>>().map(ChannelVars)
}

/// The sinusoid table `S_{t,k}`: `sin(w_i t)` at k = 2i, `cos(w_i t)` at
/// k = 2i+1, `w_i = base^(−2i/d)`.
pub fn sinusoid_table(len: usize, d: usize, base: f64) -> Tensor {
    let mut s = Tensor::zeros(&[len, d]);
    for t in 0..len {
        for i in 0..d / 2 {
            let w = base.powf(-((2 * i) as f64) / d as f64);
            let (sin, cos) = (w * t as f64).sin_cos();
            s.set(t, 2 * i, sin);
            s.set(t, 2 * i + 1, cos);
        }
    }
    s
}

/// The per-channel encoding `U^(a) S_t`, where `S_t` repeats the sinusoid
/// row along all 12 pitch classes. Shape `(L, l_a, s_a)`.
pub fn channel_positional_table(a: usize, len: usize, mult: usize, base: f64) -> Tensor {
    let table = sinusoid_table(len, mult, base);
    let u = &channels()[a].u;
    let dim = u.rows();
    let mut out = vec![0.0; len * dim * mult];
    for t in 0..len {
        // U·(1_12 ⊗ S_t) = (U·1_12) ⊗ S_t
        for i in 0..dim {
            let row_sum: f64 = u.row(i).iter().sum();
            for k in 0..mult {
                out[(t * dim + i) * mult + k] = row_sum * table.at(t, k);
            }
        }
    }
    Tensor::from_parts(vec![len, dim, mult], out)
}

pub fn eq_positional_encoding(g: &mut Graph, x: &ChannelVars, base: f64) -> Result<ChannelVars, ShapeError> {
    let mut out = Vec::with_capacity(x.0.len());
    for (a, &h) in x.0.iter().enumerate() {
        let &[len, _, mult] = g.shape(h) else {
            return Err(ShapeError::new("positional encoding needs rank-3 channels"));
        };
        let table = g.constant(channel_positional_table(a, len, mult, base));
        out.push(g.add(h, table)?);
    }
    Ok(ChannelVars(out))
}

/// Standardizes over rows of a `(rows, n)` node.
pub(crate) fn standardize_rows(g: &mut Graph, x: Var, eps: f64) -> Result<Var, ShapeError> {
    let mean = g.mean_axis(x, 1)?;
    let centered = g.sub(x, mean)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_axis(sq, 1)?;
    let shifted = g.add_scalar(var, eps);
    let sd = g.sqrt(shifted);
    g.div(centered, sd)
}

/// Pulls back, standardizes over all 12·s_a entries of each time step,
/// scales column k by γ_k, shifts by β_k, pushes forward.
pub fn eq_layer_norm(
    g: &mut Graph,
    basis: &Basis,
    x: &ChannelVars,
    gamma: &[Var],
    beta: &[Var],
    eps: f64,
) -> Result<ChannelVars, ShapeError> {
    check_channels(x, gamma.len(), "eq_layer_norm")?;
    let mut out = Vec::with_capacity(x.0.len());
    for (a, &h) in x.0.iter().enumerate() {
        let &[len, _, mult] = g.shape(h) else {
            return Err(ShapeError::new("layer norm needs rank-3 channels"));
        };
        let pulled = basis.pull_back(g, a, h)?;
        let flat = g.reshape(pulled, &[len, 12 * mult])?;
        let z = standardize_rows(g, flat, eps)?;
        let z = g.reshape(z, &[len, 12, mult])?;
        let scaled = g.mul(z, gamma[a])?;
        let shifted = g.add(scaled, beta[a])?;
        out.push(basis.push_forward(g, a, shifted)?);
    }
    Ok(ChannelVars(out))
}

pub struct AttentionWeights<'a> {
    pub query: &'a [Var],
    pub key: &'a [Var],
    pub value: &'a [Var],
    pub out: &'a [Var],
}

/// Additive key mask: 0 for valid positions, −∞ for padding.
pub(crate) fn key_mask_tensor(valid: &[bool]) -> Tensor {
    let data = valid.iter().map(|&v| if v { 0.0 } else { f64::NEG_INFINITY }).collect();
    Tensor::from_parts(vec![1, valid.len()], data)
}

/// Bidirectional multihead self-attention with invariant scores.
///
/// Each head takes a `s_a/N_h` slice of every channel's multiplicity axis,
/// flattens and concatenates the query and key slices over channels, and
/// scores with `softmax(QKᵀ/√d)`, `d = Σ_a l_a s_a / N_h`. Returns the
/// output and the per-head `L×L` score matrices.
pub fn eq_self_attention(
    g: &mut Graph,
    x: &ChannelVars,
    w: &AttentionWeights<'_>,
    heads: usize,
    key_valid: Option<&[bool]>,
) -> Result<(ChannelVars, Vec<Var>), ShapeError> {
    check_channels(x, w.query.len(), "eq_self_attention")?;
    let q = eq_linear(g, x, w.query)?;
    let k = eq_linear(g, x, w.key)?;
    let v = eq_linear(g, x, w.value)?;
    let len = x.len(g);
    let mults: Vec<usize> = v.0.iter().map(|&h| g.shape(h)[2]).collect();
    if heads == 0 || mults.iter().any(|s| s % heads != 0) {
        return Err(ShapeError::new(format!("{heads} heads do not divide multiplicities {mults:?}")));
    }
    let d: usize = channels().iter().zip(&mults).map(|(c, s)| c.dim() * s / heads).sum();
    let mask = match key_valid {
        Some(valid) if valid.len() != len => {
            return Err(ShapeError::new(format!("mask of length {} for sequence of {len}", valid.len())))
        }
        Some(valid) => Some(g.constant(key_mask_tensor(valid))),
        None => None,
    };
    let flat_head = |g: &mut Graph, src: &ChannelVars, h: usize| -> Result<Vec<Var>, ShapeError> {
        src.0
            .iter()
            .zip(&mults)
            .zip(channels())
            .map(|((&t, &s), c)| {
                let width = s / heads;
                let part = g.slice(t, 2, h * width, width)?;
                g.reshape(part, &[len, c.dim() * width])
            })
            .collect()
    };
    let mut scores = Vec::with_capacity(heads);
    let mut head_outputs: Vec<Vec<Var>> = vec![Vec::with_capacity(heads); mults.len()];
    for h in 0..heads {
        let qs = flat_head(g, &q, h)?;
        let ks = flat_head(g, &k, h)?;
        let qh = g.concat(&qs, 1)?;
        let kh = g.concat(&ks, 1)?;
        let kt = g.transpose(kh)?;
        let raw = g.matmul(qh, kt)?;
        let mut logits = g.scale(raw, 1.0 / (d as f64).sqrt());
        if let Some(m) = mask {
            logits = g.add(logits, m)?;
        }
        let alpha = g.softmax(logits);
        scores.push(alpha);
        for (a, vs) in flat_head(g, &v, h)?.into_iter().enumerate() {
            let mixed = g.matmul(alpha, vs)?;
            let width = mults[a] / heads;
            head_outputs[a].push(g.reshape(mixed, &[len, channels()[a].dim(), width])?);
        }
    }
    let merged = head_outputs.iter().map(|parts| g.concat(parts, 2)).collect::<Result<Vec<_>, _>>()?;
    let out = eq_linear(g, &ChannelVars(merged), w.out)?;
    Ok((out, scores))
}

/// `ĉ_t = Σ_a (U^(a))ᵀ X_t^(a) w^(a) + β·1_12`, returned as 12×L.
pub fn output_head(
    g: &mut Graph,
    basis: &Basis,
    x: &ChannelVars,
    weights: &[Var],
    bias: Var,
) -> Result<Var, ShapeError> {
    check_channels(x, weights.len(), "output_head")?;
    let len = x.len(g);
    let mut total: Option<Var> = None;
    for (a, (&h, &w)) in x.0.iter().zip(weights).enumerate() {
        let collapsed = g.matmul(h, w)?;
        let flat = g.reshape(collapsed, &[len, channels()[a].dim()])?;
        let pulled = g.matmul(flat, basis.u[a])?;
        total = Some(match total {
            Some(t) => g.add(t, pulled)?,
            None => pulled,
        });
    }
    let total = total.ok_or_else(|| ShapeError::new("output head without channels"))?;
    let shifted = g.add(total, bias)?;
    g.transpose(shifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-10;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, len: usize, mult: usize) -> ChannelTensor {
        ChannelTensor { channels: channels().iter().map(|c| random_tensor(rng, &[len, c.dim(), mult])).collect() }
    }

    /// Runs `layer` on X and on g.X for every g and returns the worst
    /// residual `|L(g.X) − g.L(X)|`.
    fn equivariance_residual(x: &ChannelTensor, layer: impl Fn(&mut Graph, &ChannelVars) -> ChannelVars) -> f64 {
        let run = |input: &ChannelTensor| {
            let mut g = Graph::new();
            let vars = input.constants(&mut g);
            let out = layer(&mut g, &vars);
            out.values(&g)
        };
        let base = run(x);
        GroupElement::all().map(|e| run(&x.transform(e)).max_abs_diff(&base.transform(e))).fold(0.0, f64::max)
    }

    #[test]
    fn transform_is_an_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_state(&mut rng, 3, 2);
        for a in GroupElement::all() {
            for b in GroupElement::all() {
                let lhs = x.transform(b).transform(a);
                assert!(lhs.max_abs_diff(&x.transform(a.compose(b))) < 1e-12);
            }
        }
    }

    #[test]
    fn featurize_examples() {
        let mut g = Graph::new();
        let basis = Basis::new(&mut g);
        let mut m = Tensor::zeros(&[12, 1]);
        m.set(0, 0, 1.0);
        let mv = g.constant(m.clone());
        let zero = channels().iter().map(|_| g.constant(Tensor::zeros(&[1, 1]))).collect::<Vec<_>>();
        let h = featurize(&mut g, &basis, mv, &zero).unwrap();
        assert!((g.value(h.0[0]).item() - 1.0 / 12f64.sqrt()).abs() < 1e-15);
        // non-A1 channels ignore the bias because U·1 = 0
        let biased = channels().iter().map(|_| g.constant(Tensor::full(&[1, 1], 3.5))).collect::<Vec<_>>();
        let hb = featurize(&mut g, &basis, mv, &biased).unwrap();
        for a in 1..channels().len() {
            assert!(g.value(hb.0[a]).max_abs_diff(g.value(h.0[a])) < 1e-13);
        }
        assert!((g.value(hb.0[0]).item() - g.value(h.0[0]).item() - 3.5 * 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn eq_linear_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_state(&mut rng, 4, 1);
        let mut g = Graph::new();
        let xv = x.constants(&mut g);
        let ident: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::identity(1))).collect();
        assert_eq!(eq_linear(&mut g, &xv, &ident).unwrap().values(&g), x);
        let dup: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::full(&[1, 2], 1.0))).collect();
        let y = eq_linear(&mut g, &xv, &dup).unwrap().values(&g);
        for (yc, xc) in y.channels.iter().zip(&x.channels) {
            let s = yc.shape();
            for t in 0..s[0] {
                for i in 0..s[1] {
                    assert_eq!(yc.at3(t, i, 0), xc.at3(t, i, 0));
                    assert_eq!(yc.at3(t, i, 1), xc.at3(t, i, 0));
                }
            }
        }
        let bad: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::zeros(&[2, 2]))).collect();
        assert!(eq_linear(&mut g, &xv, &bad).is_err());
    }

    #[test]
    fn identity_activation_is_identity_on_channel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_state(&mut rng, 3, 4);
        let mut g = Graph::new();
        let basis = Basis::new(&mut g);
        let xv = x.constants(&mut g);
        let y = eq_activation(&mut g, &basis, &xv, Activation::Identity).unwrap().values(&g);
        assert!(y.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn trivial_channel_relu_reduces_to_scalar_relu() {
        // A1: U = 1ᵀ/√12, so U·relu(Uᵀx) = 12·relu(x/√12)/√12 = relu(x)
        for x in [-1.3, 0.0, 0.7, 2.5] {
            let mut g = Graph::new();
            let basis = Basis::new(&mut g);
            let xv = g.constant(Tensor::full(&[1, 1, 1], x));
            let pulled = basis.pull_back(&mut g, 0, xv).unwrap();
            let r = g.relu(pulled);
            let y = basis.push_forward(&mut g, 0, r).unwrap();
            assert!((g.value(y).item() - x.max(0.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn norm_gate_examples() {
        let mut g = Graph::new();
        let zero = ChannelVars(vec![g.constant(Tensor::zeros(&[1, 2, 1]))]);
        let out = norm_gated_activation(&mut g, &zero, Gate::Sigmoid).unwrap();
        assert_eq!(g.value(out.0[0]).max_abs(), 0.0);
        let unit = Tensor::new(&[1, 2, 1], vec![0.6, 0.8]).unwrap();
        let uv = ChannelVars(vec![g.constant(unit.clone())]);
        let out = norm_gated_activation(&mut g, &uv, Gate::Identity).unwrap();
        assert!(g.value(out.0[0]).max_abs_diff(&unit) < 1e-15);
    }

    #[test]
    fn norm_gate_gradient_explodes_near_zero() {
        // finite-difference oracle on the tangential direction at ‖v‖ = 1e-8
        let v = [1e-8, 0.0];
        let f = |y: f64| {
            let n = (v[0] * v[0] + y * y).sqrt();
            crate::autodiff::sigmoid(n) * y / n
        };
        let h = 1e-12;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!(fd > 1e6, "finite difference {fd}");
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1, 2, 1], v.to_vec()).unwrap());
        let y = g.norm_gate(x, Gate::Sigmoid).unwrap();
        let second = g.slice(y, 1, 1, 1).unwrap();
        let s = g.sum_all(second);
        let grads = g.backward(s).unwrap();
        let analytic = grads.get(x).unwrap().data()[1];
        assert!(analytic > 1e6);
        assert!((analytic - fd).abs() / fd < 1e-3);
    }

    #[test]
    fn positional_encoding_examples() {
        // t = 0: sin columns vanish; cos columns carry U·1, which is zero off A1
        for (a, c) in channels().iter().enumerate() {
            let p = channel_positional_table(a, 64, 8, 10000.0);
            for i in 0..c.dim() {
                for k in 0..8 {
                    let v = p.at3(0, i, k);
                    if k % 2 == 0 || a != 0 {
                        assert!(v.abs() < 1e-12);
                    } else {
                        assert!((v - 12f64.sqrt()).abs() < 1e-12);
                    }
                }
            }
        }
        let s = sinusoid_table(64, 2, 10000.0);
        for t in 0..64 {
            for u in 0..t {
                assert!((s.at(t, 0) - s.at(u, 0)).abs() + (s.at(t, 1) - s.at(u, 1)).abs() > 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let basis = Basis::new(&mut g);
        // a constant pulled-back tensor lives in A1: x = U^(A1)·c·1
        let c = 0.7;
        let mut chans: Vec<Tensor> = channels().iter().map(|ch| Tensor::zeros(&[2, ch.dim(), 2])).collect();
        chans[0] = Tensor::full(&[2, 1, 2], c * 12f64.sqrt());
        let x = ChannelTensor { channels: chans }.constants(&mut g);
        let gamma: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::full(&[1, 1, 2], 1.0))).collect();
        let beta: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::zeros(&[1, 1, 2]))).collect();
        let y = eq_layer_norm(&mut g, &basis, &x, &gamma, &beta, 1e-5).unwrap().values(&g);
        assert!(y.channels.iter().all(|t| t.max_abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_state(&mut rng, 3, 4);
        let xv = x.constants(&mut g);
        let gamma: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::full(&[1, 1, 4], 1.0))).collect();
        let beta: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::zeros(&[1, 1, 4]))).collect();
        let y = eq_layer_norm(&mut g, &basis, &xv, &gamma, &beta, 1e-12).unwrap();
        for (a, &h) in y.0.iter().enumerate() {
            let pulled = basis.pull_back(&mut g, a, h).unwrap();
            let p = g.value(pulled);
            for t in 0..3 {
                let vals: Vec<f64> = p.data()[t * 48..(t + 1) * 48].to_vec();
                let mean = vals.iter().sum::<f64>() / 48.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 48.0;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-9, "channel {a} var {var}");
            }
        }
    }

    fn random_weights(g: &mut Graph, rng: &mut ChaCha8Rng, s_in: usize, s_out: usize) -> Vec<Var> {
        channels().iter().map(|_| g.constant(random_tensor(rng, &[s_in, s_out]))).collect()
    }

    #[test]
    fn attention_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // L = 1: softmax of a singleton
        let x = random_state(&mut rng, 1, 4);
        let mut g = Graph::new();
        let xv = x.constants(&mut g);
        let ws: Vec<Vec<Var>> = (0..4).map(|_| random_weights(&mut g, &mut rng, 4, 4)).collect();
        let aw = AttentionWeights { query: &ws[0], key: &ws[1], value: &ws[2], out: &ws[3] };
        let (out, scores) = eq_self_attention(&mut g, &xv, &aw, 2, None).unwrap();
        for s in &scores {
            assert_eq!(g.value(*s).item(), 1.0);
        }
        let v = eq_linear(&mut g, &xv, &ws[2]).unwrap();
        let expected = eq_linear(&mut g, &v, &ws[3]).unwrap().values(&g);
        assert!(out.values(&g).max_abs_diff(&expected) < 1e-14);

        // uniform values across positions pass through unchanged
        let row = random_state(&mut rng, 1, 4);
        let repeated = ChannelTensor {
            channels: row
                .channels
                .iter()
                .map(|t| Tensor::new(&[5, t.shape()[1], 4], t.data().repeat(5)).unwrap())
                .collect(),
        };
        let rv = repeated.constants(&mut g);
        let (out, _) = eq_self_attention(&mut g, &rv, &aw, 2, None).unwrap();
        let v = eq_linear(&mut g, &rv, &ws[2]).unwrap();
        let expected = eq_linear(&mut g, &v, &ws[3]).unwrap().values(&g);
        assert!(out.values(&g).max_abs_diff(&expected) < 1e-12);

        assert!(eq_self_attention(&mut g, &rv, &aw, 3, None).is_err());
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_state(&mut rng, 4, 2);
        let mut g = Graph::new();
        let xv = x.constants(&mut g);
        let ws: Vec<Vec<Var>> = (0..4).map(|_| random_weights(&mut g, &mut rng, 2, 2)).collect();
        let aw = AttentionWeights { query: &ws[0], key: &ws[1], value: &ws[2], out: &ws[3] };
        let (_, scores) = eq_self_attention(&mut g, &xv, &aw, 1, Some(&[true, true, true, false])).unwrap();
        let s = g.value(scores[0]);
        for t in 0..4 {
            assert_eq!(s.at(t, 3), 0.0);
            assert!((s.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn output_head_examples() {
        let mut g = Graph::new();
        let basis = Basis::new(&mut g);
        let zero = ChannelTensor { channels: channels().iter().map(|c| Tensor::zeros(&[3, c.dim(), 2])).collect() };
        let zv = zero.constants(&mut g);
        let w: Vec<Var> = channels().iter().map(|_| g.constant(Tensor::full(&[2, 1], 0.5))).collect();
        let b0 = g.constant(Tensor::zeros(&[1, 1]));
        let y = output_head(&mut g, &basis, &zv, &w, b0).unwrap();
        assert_eq!(g.shape(y), &[12, 3]);
        assert_eq!(g.value(y).max_abs(), 0.0);

        let mut only_a1 = zero.clone();
        only_a1.channels[0] = Tensor::full(&[3, 1, 2], 1.0);
        let av = only_a1.constants(&mut g);
        let y = output_head(&mut g, &basis, &av, &w, b0).unwrap();
        let v = g.value(y);
        for t in 0..3 {
            for i in 0..12 {
                assert!((v.at(i, t) - 1.0 / 12f64.sqrt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn every_layer_commutes_with_the_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mult = 4;
        for _ in 0..3 {
            let x = random_state(&mut rng, 5, mult);
            let w: Vec<Tensor> = channels().iter().map(|_| random_tensor(&mut rng, &[mult, 6])).collect();
            let r = equivariance_residual(&x, |g, xv| {
                let wv: Vec<Var> = w.iter().map(|t| g.constant(t.clone())).collect();
                eq_linear(g, xv, &wv).unwrap()
            });
            assert!(r < TOL, "eq_linear {r}");
            let r = equivariance_residual(&x, |g, xv| {
                let basis = Basis::new(g);
                eq_activation(g, &basis, xv, Activation::Relu).unwrap()
            });
            assert!(r < TOL, "activation {r}");
            let r = equivariance_residual(&x, |g, xv| norm_gated_activation(g, xv, Gate::Sigmoid).unwrap());
            assert!(r < TOL, "norm gate {r}");
            let r = equivariance_residual(&x, |g, xv| eq_positional_encoding(g, xv, 10000.0).unwrap());
            assert!(r < TOL, "positional {r}");
            let gamma: Vec<Tensor> = channels().iter().map(|_| random_tensor(&mut rng, &[1, 1, mult])).collect();
            let beta: Vec<Tensor> = channels().iter().map(|_| random_tensor(&mut rng, &[1, 1, mult])).collect();
            let r = equivariance_residual(&x, |g, xv| {
                let basis = Basis::new(g);
                let gv: Vec<Var> = gamma.iter().map(|t| g.constant(t.clone())).collect();
                let bv: Vec<Var> = beta.iter().map(|t| g.constant(t.clone())).collect();
                eq_layer_norm(g, &basis, xv, &gv, &bv, 1e-5).unwrap()
            });
            assert!(r < TOL, "layer norm {r}");
            let ws: Vec<Vec<Tensor>> =
                (0..4).map(|_| channels().iter().map(|_| random_tensor(&mut rng, &[mult, mult])).collect()).collect();
            let r = equivariance_residual(&x, |g, xv| {
                let wv: Vec<Vec<Var>> =
                    ws.iter().map(|set| set.iter().map(|t| g.constant(t.clone())).collect()).collect();
                let aw = AttentionWeights { query: &wv[0], key: &wv[1], value: &wv[2], out: &wv[3] };
                eq_self_attention(g, xv, &aw, 2, None).unwrap().0
            });
            assert!(r < TOL, "attention {r}");
        }
    }
}
