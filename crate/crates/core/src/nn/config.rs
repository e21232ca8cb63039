use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gate;
use crate::error::ConfigError;
use crate::group::{channels, IrrepLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// D12-equivariant layers on irrep channels.
    Equivariant,
    /// Ordinary transformer layers on raw 12-dim columns.
    Plain,
}

/// Elementwise activation. In equivariant mode it is applied after pulling
/// each channel back to the permutation representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "gate")]
pub enum Nonlinearity {
    /// `h ↦ U σ(Uᵀ h)` per channel.
    Pullback,
    /// `v ↦ gate(‖v‖) v/‖v‖` per channel vector; numerically fragile.
    NormGated(Gate),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    /// `LN(x + f(x))`
    Post,
    /// `x + f(LN(x))`
    Pre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// `s_a` for every surviving channel (equivariant mode).
    pub multiplicities: BTreeMap<IrrepLabel, usize>,
    /// Hidden width (plain mode).
    pub plain_width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_expansion: usize,
    pub pe_base: f64,
    pub ln_eps: f64,
    pub activation: Activation,
    pub nonlinearity: Nonlinearity,
    pub norm_order: NormOrder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::equivariant(16, 4, 4)
    }
}

impl ModelConfig {
    /// Equivariant model with the same multiplicity on every channel.
    pub fn equivariant(multiplicity: usize, layers: usize, heads: usize) -> Self {
        Self {
            mode: ModelMode::Equivariant,
            multiplicities: channels().iter().map(|c| (c.label, multiplicity)).collect(),
            plain_width: 64,
            layers,
            heads,
            ff_expansion: 2,
            pe_base: 10000.0,
            ln_eps: 1e-5,
            activation: Activation::Relu,
            nonlinearity: Nonlinearity::Pullback,
            norm_order: NormOrder::Post,
        }
    }

    pub fn plain(width: usize, layers: usize, heads: usize) -> Self {
        Self { mode: ModelMode::Plain, plain_width: width, ..Self::equivariant(16, layers, heads) }
    }

    /// Default baseline: width 64, 4 layers, 4 heads.
    pub fn plain_default() -> Self {
        Self::plain(64, 4, 4)
    }

    pub fn multiplicity(&self, label: IrrepLabel) -> usize {
        self.multiplicities.get(&label).copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.heads == 0 {
            return err("head count must be positive".into());
        }
        if self.ff_expansion == 0 {
            return err("feed-forward expansion must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return err(format!("layer-norm epsilon must be positive, got {}", self.ln_eps));
        }
        if !(self.pe_base > 1.0) {
            return err(format!("positional-encoding base must exceed 1, got {}", self.pe_base));
        }
        match self.mode {
            ModelMode::Equivariant => {
                for c in channels() {
                    let s = self.multiplicity(c.label);
                    if s == 0 {
                        return err(format!("channel {} needs a positive multiplicity", c.label));
                    }
                    if !s.is_multiple_of(self.heads) {
                        return err(format!(
                            "{} heads do not divide multiplicity {s} of channel {}",
                            self.heads, c.label
                        ));
                    }
                    if !s.is_multiple_of(2) {
                        return err(format!("multiplicity {s} of channel {} must be even", c.label));
                    }
                }
                if let Some(extra) = self.multiplicities.keys().find(|l| channels().iter().all(|c| c.label != **l)) {
                    return err(format!("channel {extra} does not occur in the permutation representation"));
                }
            }
            ModelMode::Plain => {
                let d = self.plain_width;
                if d == 0 || !d.is_multiple_of(2) {
                    return err(format!("plain width must be positive and even, got {d}"));
                }
                if !d.is_multiple_of(self.heads) {
                    return err(format!("{} heads do not divide width {d}", self.heads));
                }
            }
        }
        Ok(())
    }
}
