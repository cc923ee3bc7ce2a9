//! Architecture and training hyperparameters.
//!
//! The on-disk form is a flat TOML table whose keys are the field names of
//! [`ModelConfig`]; missing keys take their defaults, unknown keys are
//! rejected. [`ModelConfig::set`] applies a single `key = value` override and
//! is what both the CLI flags and ablation grids go through.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::AdaBeliefConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of series (C).
    pub channels: usize,
    /// Lookback length (I).
    pub input_len: usize,
    /// Horizon (O).
    pub output_len: usize,
    /// Number of basis vectors (N).
    pub n_basis: usize,
    /// Attention / coefficient heads (H). Must divide `output_len`.
    pub heads: usize,
    /// Stacked bidirectional cross-attention layers (M).
    pub layers: usize,
    /// Per-head hidden width of the coefficient network (D_c).
    pub d_c: usize,
    /// Middle width of the projection and fusion MLPs.
    pub bottleneck: usize,
    /// Hidden width of the basis network.
    pub basis_hidden: usize,
    pub activation: Activation,
    pub basis_kind: BasisKind,
    /// InfoNCE temperature.
    pub temperature: f64,
    pub w_pred: f64,
    pub w_align: f64,
    pub w_smooth: f64,
    pub layernorm_eps: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Chronological train/val/test fractions.
    pub split: [f64; 3],
    pub stride: usize,
    pub eval_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            input_len: 96,
            output_len: 96,
            n_basis: 10,
            heads: 16,
            layers: 2,
            d_c: 100,
            bottleneck: 48,
            basis_hidden: 512,
            activation: Activation::Relu,
            basis_kind: BasisKind::Learnable,
            temperature: 1.0,
            w_pred: 1.0,
            w_align: 1.0,
            w_smooth: 1.0,
            layernorm_eps: 1e-5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            epochs: 30,
            patience: 3,
            batch_size: 32,
            split: [0.7, 0.1, 0.2],
            stride: 1,
            eval_stride: 1,
        }
    }
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }

    /// Overrides one key from its textual value, parsed according to the
    /// key's type (`split` takes `a,b,c`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = self.to_table();
        let current = table
            .get(key)
            .ok_or_else(|| Error::config(format!("unknown config key `{key}`")))?;
        let bad = |e: &dyn std::fmt::Display| Error::config(format!("`{key}`: cannot parse `{value}`: {e}"));
        let parsed = match current {
            toml::Value::Integer(_) => toml::Value::Integer(value.trim().parse().map_err(|e| bad(&e))?),
            toml::Value::Float(_) => toml::Value::Float(value.trim().parse().map_err(|e| bad(&e))?),
            toml::Value::String(_) => toml::Value::String(value.trim().to_string()),
            toml::Value::Array(_) => {
                let items: std::result::Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                toml::Value::Array(items.map_err(|e| bad(&e))?.into_iter().map(toml::Value::Float).collect())
            }
            other => return Err(bad(&format!("unsupported value type {}", other.type_str()))),
        };
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| bad(&e.message().to_string()))?;
        Ok(())
    }

    /// Name of the first key whose value differs from `other`, if any.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<String> {
        let (a, b) = (self.to_table(), other.to_table());
        a.iter().find(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone())
    }

    /// Every violated constraint, or `Ok` if none.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        need(self.channels >= 1, "channels (C) must be >= 1".into());
        need(self.input_len >= 1, "input_len (I) must be >= 1".into());
        need(self.output_len >= 1, "output_len (O) must be >= 1".into());
        need(self.input_len + self.output_len >= 3, "I + O must be >= 3 for the smoothness penalty".into());
        need(self.n_basis >= 1, "n_basis (N) must be >= 1".into());
        need(self.layers >= 1, "layers (M) must be >= 1".into());
        need(self.d_c >= 1, "d_c must be >= 1".into());
        need(self.basis_hidden >= 1, "basis_hidden must be >= 1".into());
        if self.heads == 0 {
            need(false, "heads (H) must be >= 1".into());
        } else {
            need(
                self.output_len % self.heads == 0,
                format!("H must divide O (H={}, O={})", self.heads, self.output_len),
            );
        }
        need(
            self.bottleneck >= 1 && self.bottleneck < self.output_len,
            format!("bottleneck must be in 1..O (bottleneck={}, O={})", self.bottleneck, self.output_len),
        );
        if self.basis_kind == BasisKind::FixedSineGrid {
            need(
                self.n_basis % 2 == 0,
                format!("fixed-sine-grid needs an even N, got {}", self.n_basis),
            );
        }
        need(
            self.temperature > 0.0 && self.temperature.is_finite(),
            format!("temperature must be > 0, got {}", self.temperature),
        );
        for (name, w) in [("w_pred", self.w_pred), ("w_align", self.w_align), ("w_smooth", self.w_smooth)] {
            need(w >= 0.0 && w.is_finite(), format!("{name} must be a nonnegative finite weight, got {w}"));
        }
        need(self.layernorm_eps >= 0.0, "layernorm_eps must be >= 0".into());
        need(self.lr >= 0.0 && self.lr.is_finite(), format!("lr must be >= 0, got {}", self.lr));
        need((0.0..1.0).contains(&self.beta1), format!("beta1 must be in [0,1), got {}", self.beta1));
        need((0.0..1.0).contains(&self.beta2), format!("beta2 must be in [0,1), got {}", self.beta2));
        need(self.adam_eps > 0.0, "adam_eps must be > 0".into());
        need(self.weight_decay >= 0.0, "weight_decay must be >= 0".into());
        need(self.epochs >= 1, "epochs must be >= 1".into());
        need(self.patience >= 1, "patience must be >= 1".into());
        need(self.batch_size >= 1, "batch_size must be >= 1".into());
        need(self.stride >= 1 && self.eval_stride >= 1, "strides must be >= 1".into());
        need(
            self.split.iter().all(|&r| r > 0.0) && (self.split.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            format!("split ratios must be positive and sum to 1, got {:?}", self.split),
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            pred: self.w_pred,
            align: self.w_align,
            smooth: self.w_smooth,
        }
    }

    pub fn optimizer(&self) -> AdaBeliefConfig {
        AdaBeliefConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn head_len(&self) -> usize {
        self.output_len / self.heads
    }

    /// One-line summary used as the report header.
    pub fn echo(&self) -> String {
        format!(
            "C={} I={} O={} N={} H={} M={} Dc={} bottleneck={} basis_hidden={} basis_kind={} activation={:?} \
             epsilon={} w_pred={} w_align={} w_smooth={} lr={} batch={} epochs={} patience={} seed={}",
            self.channels,
            self.input_len,
            self.output_len,
            self.n_basis,
            self.heads,
            self.layers,
            self.d_c,
            self.bottleneck,
            self.basis_hidden,
            self.basis_kind,
            self.activation,
            self.temperature,
            self.w_pred,
            self.w_align,
            self.w_smooth,
            self.lr,
            self.batch_size,
            self.epochs,
            self.patience,
            self.seed,
        )
    }
}
