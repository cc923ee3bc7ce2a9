//! Coefficients between series and basis vectors.
//!
//! Both sets are embedded to width `D_c`, exchanged through `M` bidirectional
//! cross-attention layers (attention runs over the series/basis axis, never
//! over time), mapped to `H` heads of width `D_c`, and compared by plain dot
//! products per head.

use crate::autodiff::{Activation, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNorm, Linear, ParamStore};

/// One cross-attention block: multi-head attention of `a` over `b`, residual,
/// layernorm, feed-forward, residual, layernorm.
#[derive(Clone, Debug)]
pub struct CabParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Concatenated heads back to model width.
    pub restore: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
    pub heads: usize,
    pub width: usize,
    pub activation: Activation,
}

impl CabParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        heads: usize,
        activation: Activation,
        eps: f64,
    ) -> Self {
        let hd = heads * width;
        Self {
            query: Linear::new(store, init, &format!("{name}.query"), width, hd),
            key: Linear::new(store, init, &format!("{name}.key"), width, hd),
            value: Linear::new(store, init, &format!("{name}.value"), width, hd),
            restore: Linear::new(store, init, &format!("{name}.restore"), hd, width),
            ffn_in: Linear::new(store, init, &format!("{name}.ffn_in"), width, 2 * width),
            ffn_out: Linear::new(store, init, &format!("{name}.ffn_out"), 2 * width, width),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width, eps),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width, eps),
            heads,
            width,
            activation,
        }
    }
}

/// `[B, R, H·D]` → `[B·H, R, D]`.
fn split_head_axis<'g>(x: Var<'g>, heads: usize, width: usize) -> Result<Var<'g>> {
    let s = x.shape();
    let (batch, rows) = (s[0], s[1]);
    x.reshape(&[batch, rows, heads, width])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch * heads, rows, width])
}

/// `[B·H, R, D]` → `[B, R, H·D]`.
fn merge_head_axis<'g>(x: Var<'g>, batch: usize, heads: usize) -> Result<Var<'g>> {
    let s = x.shape();
    let (rows, width) = (s[1], s[2]);
    x.reshape(&[batch, heads, rows, width])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch, rows, heads * width])
}

fn check_rank3(op: &'static str, a: Var<'_>, width: usize) -> Result<()> {
    let s = a.shape();
    if s.len() != 3 || s[2] != width {
        return Err(Error::shape(op, &s, &[width]));
    }
    Ok(())
}

/// Cross attention of `a: [B, A, D]` over `b: [B, Bn, D]`; returns the new
/// `a` and the attention weights `[B, H, A, Bn]`.
pub fn cab_forward_with_attention<'g>(
    a: Var<'g>,
    b: Var<'g>,
    params: &CabParams,
    p: &Bound<'g>,
) -> Result<(Var<'g>, Var<'g>)> {
    check_rank3("cab_forward", a, params.width)?;
    check_rank3("cab_forward", b, params.width)?;
    let (h, d) = (params.heads, params.width);
    let batch = a.shape()[0];
    if b.shape()[0] != batch {
        return Err(Error::shape("cab_forward", &a.shape(), &b.shape()));
    }
    let q = split_head_axis(params.query.forward(a, p)?, h, d)?;
    let k = split_head_axis(params.key.forward(b, p)?, h, d)?;
    let v = split_head_axis(params.value.forward(b, p)?, h, d)?;
    let attn = q.bmm_nt(k)?.scale(1.0 / (d as f64).sqrt()).softmax(2)?;
    let heads_out = merge_head_axis(attn.bmm(v)?, batch, h)?;
    let attended = params.restore.forward(heads_out, p)?;
    let a_hat = params.norm_attn.forward(attended.add(a)?, p)?;
    let ffn = params
        .ffn_out
        .forward(params.ffn_in.forward(a_hat, p)?.activate(params.activation), p)?;
    let out = params.norm_ffn.forward(ffn.add(a_hat)?, p)?;
    let s = attn.shape();
    let attn = attn.reshape(&[batch, h, s[1], s[2]])?;
    Ok((out, attn))
}

pub fn cab_forward<'g>(a: Var<'g>, b: Var<'g>, params: &CabParams, p: &Bound<'g>) -> Result<Var<'g>> {
    Ok(cab_forward_with_attention(a, b, params, p)?.0)
}

/// A bidirectional layer: two independently parameterized blocks.
#[derive(Clone, Debug)]
pub struct BcabParams {
    /// Updates the series side from the basis side.
    pub series_from_basis: CabParams,
    /// Updates the basis side from the series side.
    pub basis_from_series: CabParams,
}

/// Both outputs are computed from the same layer inputs.
pub fn bcab_forward<'g>(
    a: Var<'g>,
    b: Var<'g>,
    params_ab: &CabParams,
    params_ba: &CabParams,
    p: &Bound<'g>,
) -> Result<(Var<'g>, Var<'g>)> {
    let a_next = cab_forward(a, b, params_ab, p)?;
    let b_next = cab_forward(b, a, params_ba, p)?;
    Ok((a_next, b_next))
}

/// Affine projection of each series (or basis row) from length `L` to `D_c`.
pub fn embed_series<'g>(x: Var<'g>, proj: &Linear, p: &Bound<'g>) -> Result<Var<'g>> {
    let s = x.shape();
    if *s.last().unwrap() != proj.fan_in {
        return Err(Error::shape("embed_series", &s, &[proj.fan_in, proj.fan_out]));
    }
    proj.forward(x, p)
}

/// Which pairing of series and basis is being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    /// `(x, z_x)`, length `I`.
    History,
    /// `(y, z_y)`, length `O`.
    Future,
}

/// The coefficient network. The attention stack and head mapping are shared
/// by both views; only the input projections are view-specific.
#[derive(Clone, Debug)]
pub struct CoefNet {
    pub series_history: Linear,
    pub series_future: Linear,
    pub basis_history: Linear,
    pub basis_future: Linear,
    pub layers: Vec<BcabParams>,
    pub head_map: Linear,
    pub heads: usize,
    pub width: usize,
}

/// Outputs of one coefficient pass.
pub struct CoefOutput<'g> {
    /// `[B, C, N, H]`.
    pub coef: Var<'g>,
    /// Final-layer attention of series over basis, `[B, H, C, N]`.
    pub series_attention: Var<'g>,
    /// Final-layer attention of basis over series, `[B, H, N, C]`.
    pub basis_attention: Var<'g>,
}

impl CoefNet {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Self {
        let (d, h) = (config.d_c, config.heads);
        let (i, o) = (config.input_len, config.output_len);
        let act = config.activation;
        let eps = config.layernorm_eps;
        let series_history = Linear::new(store, init, "coef.series_history", i, d);
        let series_future = Linear::new(store, init, "coef.series_future", o, d);
        let basis_history = Linear::new(store, init, "coef.basis_history", i, d);
        let basis_future = Linear::new(store, init, "coef.basis_future", o, d);
        let layers = (0..config.layers)
            .map(|m| BcabParams {
                series_from_basis: CabParams::new(store, init, &format!("coef.{m}.series"), d, h, act, eps),
                basis_from_series: CabParams::new(store, init, &format!("coef.{m}.basis"), d, h, act, eps),
            })
            .collect();
        let head_map = Linear::new(store, init, "coef.head_map", d, h * d);
        Self {
            series_history,
            series_future,
            basis_history,
            basis_future,
            layers,
            head_map,
            heads: h,
            width: d,
        }
    }

    /// `series: [B, C, L]`, `basis: [B, N, L]` → coefficients `[B, C, N, H]`.
    pub fn forward<'g>(&self, series: Var<'g>, basis: Var<'g>, view: View, p: &Bound<'g>) -> Result<CoefOutput<'g>> {
        let (sp, bp) = match view {
            View::History => (&self.series_history, &self.basis_history),
            View::Future => (&self.series_future, &self.basis_future),
        };
        let mut a = embed_series(series, sp, p)?;
        let mut b = embed_series(basis, bp, p)?;
        let mut attention = None;
        for layer in &self.layers {
            let (a_next, attn_ab) = cab_forward_with_attention(a, b, &layer.series_from_basis, p)?;
            let (b_next, attn_ba) = cab_forward_with_attention(b, a, &layer.basis_from_series, p)?;
            attention = Some((attn_ab, attn_ba));
            (a, b) = (a_next, b_next);
        }
        let (series_attention, basis_attention) = attention.expect("at least one layer");
        let batch = a.shape()[0];
        let (h, d) = (self.heads, self.width);
        let (c, n) = (a.shape()[1], b.shape()[1]);
        let a_heads = split_head_axis(self.head_map.forward(a, p)?, h, d)?;
        let b_heads = split_head_axis(self.head_map.forward(b, p)?, h, d)?;
        let coef = a_heads
            .bmm_nt(b_heads)?
            .reshape(&[batch, h, c, n])?
            .permute(&[0, 2, 3, 1])?;
        Ok(CoefOutput {
            coef,
            series_attention,
            basis_attention,
        })
    }

    /// Single-window form: `x: [C, L]`, `z: [N, L]` → `[C, N, H]`.
    pub fn compute_coef<'g>(&self, x: Var<'g>, z: Var<'g>, view: View, p: &Bound<'g>) -> Result<Var<'g>> {
        let (xs, zs) = (x.shape(), z.shape());
        if xs.len() != 2 || zs.len() != 2 || xs[1] != zs[1] {
            return Err(Error::shape("compute_coef", &xs, &zs));
        }
        let out = self.forward(x.reshape(&[1, xs[0], xs[1]])?, z.reshape(&[1, zs[0], zs[1]])?, view, p)?;
        out.coef.reshape(&[xs[0], zs[0], self.heads])
    }
}
