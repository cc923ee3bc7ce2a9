//! Dense row-major `f64` arrays and the raw kernels the graph ops are built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Self::new([rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rows of `a` per microkernel tile.
const MR: usize = 12;
/// Columns of `b` per microkernel tile.
const NR: usize = 16;

/// `c = op(a) · op(b)` where `op(a)[i][p] = a[i·rsa + p·csa]` and
/// `op(b)[p][j] = b[p·rsb + j·csb]`.
///
/// Every output element is accumulated as `((0 + a0·b0) + a1·b1) + …` in
/// ascending `p` with a separate multiply and add, so results are bitwise
/// identical to the textbook triple loop whatever the tiling.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let panels = n.div_ceil(NR);
    let mut bp = vec![0.0; panels * k * NR];
    for (jp, dst) in bp.chunks_exact_mut(k * NR).enumerate() {
        let j0 = jp * NR;
        let w = NR.min(n - j0);
        for p in 0..k {
            for j in 0..w {
                dst[p * NR + j] = b[p * rsb + (j0 + j) * csb];
            }
        }
    }
    let kernel = microkernel();
    let mut ap = vec![0.0; k * MR];
    let mut tile = [0.0; MR * NR];
    for i0 in (0..m).step_by(MR) {
        let h = MR.min(m - i0);
        if h < MR {
            ap.fill(0.0);
        }
        for r in 0..h {
            for p in 0..k {
                ap[p * MR + r] = a[(i0 + r) * rsa + p * csa];
            }
        }
        for (jp, panel) in bp.chunks_exact(k * NR).enumerate() {
            let j0 = jp * NR;
            let w = NR.min(n - j0);
            kernel(k, &ap, panel, &mut tile);
            for r in 0..h {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w].copy_from_slice(&tile[r * NR..r * NR + w]);
            }
        }
    }
    c
}

type Microkernel = fn(usize, &[f64], &[f64], &mut [f64; MR * NR]);

fn microkernel() -> Microkernel {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return avx512::kernel;
        }
    }
    portable_kernel
}

/// `tile[r][j] = Σ_p ap[p][r] · bp[p][j]` over packed `k × MR` and `k × NR`
/// panels.
fn portable_kernel(k: usize, ap: &[f64], bp: &[f64], tile: &mut [f64; MR * NR]) {
    let mut acc = [[0.0f64; NR]; MR];
    for (arow, brow) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(k) {
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = arow[r];
            for (c, &bv) in acc_row.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
    for (dst, row) in tile.chunks_exact_mut(NR).zip(&acc) {
        dst.copy_from_slice(row);
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{MR, NR};

    const LANES: usize = 8;
    const VECS: usize = NR / LANES;

    pub(super) fn kernel(k: usize, ap: &[f64], bp: &[f64], tile: &mut [f64; MR * NR]) {
        assert!(ap.len() >= k * MR && bp.len() >= k * NR);
        // SAFETY: only installed after avx512f was detected; the assert keeps
        // every packed read in bounds and `tile` holds MR·NR values.
        unsafe { run(k, ap.as_ptr(), bp.as_ptr(), tile.as_mut_ptr()) }
    }

    /// Separate `mul` and `add`, never fused, so rounding matches scalar code.
    #[target_feature(enable = "avx512f")]
    unsafe fn run(k: usize, ap: *const f64, bp: *const f64, out: *mut f64) {
        let mut acc = [[_mm512_setzero_pd(); VECS]; MR];
        for p in 0..k {
            let mut bv = [_mm512_setzero_pd(); VECS];
            for (q, v) in bv.iter_mut().enumerate() {
                *v = _mm512_loadu_pd(bp.add(p * NR + q * LANES));
            }
            for (r, acc_row) in acc.iter_mut().enumerate() {
                let a = _mm512_set1_pd(*ap.add(p * MR + r));
                for q in 0..VECS {
                    acc_row[q] = _mm512_add_pd(acc_row[q], _mm512_mul_pd(a, bv[q]));
                }
            }
        }
        for (r, acc_row) in acc.iter().enumerate() {
            for (q, v) in acc_row.iter().enumerate() {
                _mm512_storeu_pd(out.add(r * NR + q * LANES), *v);
            }
        }
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "gemm lhs");
    assert_eq!(b.len(), k * n, "gemm rhs");
    gemm_strided(m, k, n, a, k, 1, b, n, 1)
}

pub fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    const BLK: usize = 32;
    for i0 in (0..rows).step_by(BLK) {
        for j0 in (0..cols).step_by(BLK) {
            for i in i0..(i0 + BLK).min(rows) {
                for j in j0..(j0 + BLK).min(cols) {
                    out[j * rows + i] = a[i * cols + j];
                }
            }
        }
    }
    out
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "gemm_nt lhs");
    assert_eq!(b.len(), n * k, "gemm_nt rhs");
    gemm_strided(m, k, n, a, k, 1, b, 1, k)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), k * m, "gemm_tn lhs");
    assert_eq!(b.len(), k * n, "gemm_tn rhs");
    gemm_strided(m, k, n, a, 1, m, b, n, 1)
}

/// Strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute(shape: &[usize], perm: &[usize], data: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    'outer: loop {
        let base: usize = idx[..rank - 1]
            .iter()
            .zip(&src_strides)
            .map(|(i, s)| i * s)
            .sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                break 'outer;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, extent, inner) counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
