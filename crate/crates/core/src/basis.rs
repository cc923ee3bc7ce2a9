//! Basis generation: a learned network mapping the window's normalized
//! timestamp to `N` reference sequences of length `I + O`, plus fixed
//! sinusoidal alternatives with no trainable parameters.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Linear, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    #[default]
    #[serde(alias = "none")]
    Learnable,
    FixedSineGrid,
    RandomSine,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::Learnable => "learnable",
            BasisKind::FixedSineGrid => "fixed-sine-grid",
            BasisKind::RandomSine => "random-sine",
        })
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable" | "none" => Ok(BasisKind::Learnable),
            "fixed-sine-grid" => Ok(BasisKind::FixedSineGrid),
            "random-sine" => Ok(BasisKind::RandomSine),
            other => Err(Error::config(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// `τ = t / T` for the first history point of a window.
pub fn normalize_timestamp(t: usize, total: usize) -> Result<f64> {
    if t >= total {
        return Err(Error::Input(format!("timestamp {t} outside series of length {total}")));
    }
    Ok(t as f64 / total as f64)
}

/// A basis for one window: `z` is `N × (I + O)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisTensor {
    z: Tensor,
    input_len: usize,
}

impl BasisTensor {
    pub fn new(z: Tensor, input_len: usize) -> Result<Self> {
        if z.shape().len() != 2 || input_len == 0 || input_len >= z.shape()[1] {
            return Err(Error::shape("basis", z.shape(), &[input_len]));
        }
        Ok(Self { z, input_len })
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn n_basis(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.z.shape()[1] - self.input_len
    }
}

/// Splits `z` at column `I` into the history part `z_x` and future part `z_y`.
pub fn split_basis(basis: &BasisTensor) -> (Tensor, Tensor) {
    let (n, total) = (basis.n_basis(), basis.z.shape()[1]);
    let i = basis.input_len;
    let mut zx = Vec::with_capacity(n * i);
    let mut zy = Vec::with_capacity(n * (total - i));
    for row in basis.z.data().chunks_exact(total) {
        zx.extend_from_slice(&row[..i]);
        zy.extend_from_slice(&row[i..]);
    }
    (
        Tensor::new([n, i], zx).expect("split"),
        Tensor::new([n, total - i], zy).expect("split"),
    )
}

/// Four affine layers `1 → h → h → h → N·(I+O)`. The output of layer 1 is
/// added to the output of layer 2 before layer 3.
#[derive(Clone, Debug)]
pub struct BasisNet {
    pub layers: [Linear; 4],
    pub activation: Activation,
    pub n_basis: usize,
    pub total_len: usize,
}

impl BasisNet {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Self {
        let h = config.basis_hidden;
        let total_len = config.input_len + config.output_len;
        let out = config.n_basis * total_len;
        let layers = [
            Linear::new(store, init, "basis.0", 1, h),
            Linear::new(store, init, "basis.1", h, h),
            Linear::new(store, init, "basis.2", h, h),
            Linear::new(store, init, "basis.3", h, out),
        ];
        Self {
            layers,
            activation: config.activation,
            n_basis: config.n_basis,
            total_len,
        }
    }

    /// `tau: [B, 1]` → `z: [B, N, I+O]`.
    pub fn forward<'g>(&self, tau: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
        let act = self.activation;
        let h1 = self.layers[0].forward(tau, p)?.activate(act);
        let h2 = self.layers[1].forward(h1, p)?.activate(act);
        let skip = h2.add(h1)?;
        let h3 = self.layers[2].forward(skip, p)?.activate(act);
        let out = self.layers[3].forward(h3, p)?;
        let batch = tau.shape()[0];
        out.reshape(&[batch, self.n_basis, self.total_len])
    }
}

/// Basis for a single timestamp from the learned network.
pub fn generate_basis(tau: f64, net: &BasisNet, store: &ParamStore, input_len: usize) -> Result<BasisTensor> {
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    let z = net.forward(g.constant(Tensor::new([1, 1], vec![tau])?), &p)?;
    let z = z.value().reshape([net.n_basis, net.total_len])?;
    BasisTensor::new(z, input_len)
}

/// A constant basis shared by every window.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedBasis {
    basis: BasisTensor,
}

impl FixedBasis {
    pub fn basis(&self) -> &BasisTensor {
        &self.basis
    }

    /// The basis repeated over a batch, as a graph constant `[B, N, I+O]`.
    pub fn forward<'g>(&self, graph: &'g Graph, batch: usize) -> Result<Var<'g>> {
        let z = self.basis.z();
        let data = z.data().repeat(batch);
        Ok(graph.constant(Tensor::new([batch, z.shape()[0], z.shape()[1]], data)?))
    }
}

/// Builds the fixed generator for `kind`, or `None` for the learnable basis.
///
/// `fixed-sine-grid`: `N/2` frequencies evenly spaced over `[1/I, 1/2)`
/// cycles per step (periods from `I` down towards 2); rows `0..N/2` are
/// `sin(2π f t)` and rows `N/2..N` the matching cosines.
///
/// `random-sine`: each of the `⌈N/2⌉` frequencies is drawn uniformly from
/// `[1/(I+O), 1/2)` with a uniform phase; rows are laid out as for the grid,
/// with an odd `N` dropping the last cosine.
pub fn build_fixed_basis(kind: BasisKind, config: &ModelConfig, seed: u64) -> Result<Option<FixedBasis>> {
    let (n, i, total) = (
        config.n_basis,
        config.input_len,
        config.input_len + config.output_len,
    );
    let (freqs, phases): (Vec<f64>, Vec<f64>) = match kind {
        BasisKind::Learnable => return Ok(None),
        BasisKind::FixedSineGrid => {
            if n % 2 != 0 {
                return Err(Error::config(format!("fixed-sine-grid needs an even N, got {n}")));
            }
            let half = n / 2;
            let lo = 1.0 / i as f64;
            let step = (0.5 - lo) / half as f64;
            ((0..half).map(|k| lo + k as f64 * step).collect(), vec![0.0; half])
        }
        BasisKind::RandomSine => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lo = 1.0 / total as f64;
            (0..n.div_ceil(2))
                .map(|_| (rng.random_range(lo..0.5), rng.random_range(0.0..2.0 * PI)))
                .unzip()
        }
    };
    let half = freqs.len();
    let mut data = Vec::with_capacity(n * total);
    for row in 0..n {
        let (k, wave): (usize, fn(f64) -> f64) = if row < half { (row, f64::sin) } else { (row - half, f64::cos) };
        data.extend((0..total).map(|t| wave(2.0 * PI * freqs[k] * t as f64 + phases[k])));
    }
    let basis = BasisTensor::new(Tensor::new([n, total], data)?, i)?;
    Ok(Some(FixedBasis { basis }))
}

/// Either the learned network or a fixed basis.
#[derive(Clone, Debug)]
pub enum BasisGenerator {
    Learned(BasisNet),
    Fixed(FixedBasis),
}

impl BasisGenerator {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        Ok(match build_fixed_basis(config.basis_kind, config, config.seed)? {
            Some(fixed) => BasisGenerator::Fixed(fixed),
            None => BasisGenerator::Learned(BasisNet::new(config, store, init)),
        })
    }

    /// `taus` → `[B, N, I+O]`.
    pub fn forward<'g>(&self, graph: &'g Graph, taus: &[f64], p: &Bound<'g>) -> Result<Var<'g>> {
        match self {
            BasisGenerator::Learned(net) => {
                let tau = graph.constant(Tensor::new([taus.len(), 1], taus.to_vec())?);
                net.forward(tau, p)
            }
            BasisGenerator::Fixed(fixed) => fixed.forward(graph, taus.len()),
        }
    }
}
