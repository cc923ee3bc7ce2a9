//! Turns coefficients and the future part of the basis into a forecast:
//! project the basis, split it into heads, take the coefficient-weighted sum
//! per head, then fuse the heads.

use crate::autodiff::Var;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Mlp, ParamStore};

#[derive(Clone, Debug)]
pub struct ForecastHead {
    /// Row-wise map of `z_y`, widths `[O, bottleneck, bottleneck, O]`.
    pub projection: Mlp,
    /// Row-wise map of the merged heads, same widths.
    pub fusion: Mlp,
    pub heads: usize,
    pub output_len: usize,
}

impl ForecastHead {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Self {
        let (o, b) = (config.output_len, config.bottleneck);
        let widths = [o, b, b, o];
        Self {
            projection: Mlp::new(store, init, "forecast.projection", &widths, config.activation),
            fusion: Mlp::new(store, init, "forecast.fusion", &widths, config.activation),
            heads: config.heads,
            output_len: o,
        }
    }

    pub fn head_len(&self) -> usize {
        self.output_len / self.heads
    }

    /// `z_y: [.., N, O]` → `[.., N, O]`.
    pub fn project_future_basis<'g>(&self, z_y: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        if z_y.shape().last() != Some(&self.output_len) {
            return Err(Error::shape("project_future_basis", &z_y.shape(), &[self.output_len]));
        }
        self.projection.forward(z_y, p)
    }

    /// `[.., O]` → `[.., H, O/H]` as contiguous chunks.
    pub fn split_heads<'g>(&self, v: Var<'g>) -> Result<Var<'g>> {
        split_heads(v, self.heads)
    }

    /// `ỹ: [.., H, O/H]` → `[.., O]`, then the fusion MLP.
    pub fn fuse_heads<'g>(&self, y: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        self.fusion.forward(merge_heads(y)?, p)
    }

    /// `coef: [B, C, N, H]`, `z_y: [B, N, O]` → `ŷ: [B, C, O]`.
    pub fn forward<'g>(&self, coef: Var<'g>, z_y: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        let heads = self.split_heads(self.project_future_basis(z_y, p)?)?;
        self.fuse_heads(aggregate(coef, heads)?, p)
    }
}

pub fn split_heads(v: Var<'_>, heads: usize) -> Result<Var<'_>> {
    let mut shape = v.shape();
    let o = *shape.last().expect("non-empty shape");
    if heads == 0 || o % heads != 0 {
        return Err(Error::config(format!("H must divide O (H={heads}, O={o})")));
    }
    shape.pop();
    shape.extend([heads, o / heads]);
    v.reshape(&shape)
}

pub fn merge_heads(v: Var<'_>) -> Result<Var<'_>> {
    let mut shape = v.shape();
    if shape.len() < 2 {
        return Err(Error::shape("merge_heads", &shape, &[]));
    }
    let p = shape.pop().unwrap();
    *shape.last_mut().unwrap() *= p;
    v.reshape(&shape)
}

/// `ỹ[b, i, h, :] = Σ_j c[b, i, j, h] · z̃[b, j, h, :]`.
///
/// `c: [B, C, N, H]` and `z̃: [B, N, H, P]` give `[B, C, H, P]`; the
/// unbatched forms `[C, N, H]` and `[N, H, P]` give `[C, H, P]`.
pub fn aggregate<'g>(coef: Var<'g>, heads: Var<'g>) -> Result<Var<'g>> {
    let (cs, zs) = (coef.shape(), heads.shape());
    let unbatched = cs.len() == 3 && zs.len() == 3;
    let (coef, heads) = if unbatched {
        (coef.reshape(&[1, cs[0], cs[1], cs[2]])?, heads.reshape(&[1, zs[0], zs[1], zs[2]])?)
    } else {
        (coef, heads)
    };
    let (c4, z4) = (coef.shape(), heads.shape());
    if c4.len() != 4 || z4.len() != 4 || c4[0] != z4[0] || c4[2] != z4[1] || c4[3] != z4[2] {
        return Err(Error::shape("aggregate", &cs, &zs));
    }
    let (b, c, n, h, p) = (c4[0], c4[1], c4[2], c4[3], z4[3]);
    let w = coef.permute(&[0, 3, 1, 2])?.reshape(&[b * h, c, n])?;
    let z = heads.permute(&[0, 2, 1, 3])?.reshape(&[b * h, n, p])?;
    let out = w.bmm(z)?.reshape(&[b, h, c, p])?.permute(&[0, 2, 1, 3])?;
    if unbatched {
        out.reshape(&[c, h, p])
    } else {
        Ok(out)
    }
}
