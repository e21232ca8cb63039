//! Ordinary (non-equivariant) transformer layers on `(L, d)` states.

use crate::autodiff::{Graph, Var};
use crate::error::ShapeError;
use crate::nn::layers::{key_mask_tensor, sinusoid_table, standardize_rows};

pub fn dense(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var, ShapeError> {
    let y = g.matmul(x, weight)?;
    g.add(y, bias)
}

pub fn positional_encoding(g: &mut Graph, x: Var, base: f64) -> Result<Var, ShapeError> {
    let &[len, d] = g.shape(x) else {
        return Err(ShapeError::new("positional encoding needs rank 2"));
    };
    let table = g.constant(sinusoid_table(len, d, base));
    g.add(x, table)
}

pub fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, ShapeError> {
    let z = standardize_rows(g, x, eps)?;
    let scaled = g.mul(z, gamma)?;
    g.add(scaled, beta)
}

pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

pub struct PlainAttention {
    pub query: DenseVars,
    pub key: DenseVars,
    pub value: DenseVars,
    pub out: DenseVars,
}

/// Standard multihead self-attention; returns the output and per-head scores.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    w: &PlainAttention,
    heads: usize,
    key_valid: Option<&[bool]>,
) -> Result<(Var, Vec<Var>), ShapeError> {
    let q = dense(g, x, w.query.weight, w.query.bias)?;
    let k = dense(g, x, w.key.weight, w.key.bias)?;
    let v = dense(g, x, w.value.weight, w.value.bias)?;
    let &[len, d] = g.shape(q) else {
        return Err(ShapeError::new("attention needs rank 2"));
    };
    if heads == 0 || d % heads != 0 {
        return Err(ShapeError::new(format!("{heads} heads do not divide width {d}")));
    }
    let width = d / heads;
    let mask = match key_valid {
        Some(valid) if valid.len() != len => {
            return Err(ShapeError::new(format!("mask of length {} for sequence of {len}", valid.len())))
        }
        Some(valid) => Some(g.constant(key_mask_tensor(valid))),
        None => None,
    };
    let mut scores = Vec::with_capacity(heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * width, width)?;
        let kh = g.slice(k, 1, h * width, width)?;
        let vh = g.slice(v, 1, h * width, width)?;
        let kt = g.transpose(kh)?;
        let raw = g.matmul(qh, kt)?;
        let mut logits = g.scale(raw, 1.0 / (width as f64).sqrt());
        if let Some(m) = mask {
            logits = g.add(logits, m)?;
        }
        let alpha = g.softmax(logits);
        scores.push(alpha);
        outs.push(g.matmul(alpha, vh)?);
    }
    let merged = g.concat(&outs, 1)?;
    let out = dense(g, merged, w.out.weight, w.out.bias)?;
    Ok((out, scores))
}
