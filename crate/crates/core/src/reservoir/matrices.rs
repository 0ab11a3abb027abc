use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Feedback gain, placed on the diagonal of the interconnection matrix.
    pub alpha: f64,
    /// Input gain.
    pub beta: f64,
    /// Interconnection gain (scale of the off-diagonal weights).
    pub gamma: f64,
    /// Interconnection density: `round(rho * n^2)` off-diagonal nonzeros.
    pub rho: f64,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::Config("reservoir needs n >= 1 and k >= 1".into()));
        }
        let finite = [self.alpha, self.beta, self.gamma, self.rho]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    pub fn offdiag_nonzeros(&self) -> u64 {
        let n = self.n as f64;
        (self.rho * n * n).round() as u64
    }
}

/// Fixed reservoir weights: diagonal feedback, sparse off-diagonal
/// interconnections (CSR) and a dense input mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirMatrices {
    n: usize,
    k: usize,
    alpha: f64,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<f64>,
    /// Input mask stored transposed (`k x n`, row-major) so that a column
    /// of the mask is contiguous.
    mask_t: Vec<f64>,
}

impl ReservoirMatrices {
    /// Builds matrices from explicit parts. `offdiag` holds
    /// `(row, col, weight)` triplets with `row != col`; `mask` is `n x k`.
    pub fn from_parts(
        alpha: f64,
        n: usize,
        offdiag: &[(usize, usize, f64)],
        mask: &[Vec<f64>],
    ) -> Result<Self> {
        if n == 0 || mask.len() != n {
            return Err(Error::Dimension(format!("mask has {} rows, n = {n}", mask.len())));
        }
        let k = mask[0].len();
        if k == 0 || mask.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged or empty input mask".into()));
        }
        let mut entries = offdiag.to_vec();
        if entries.iter().any(|&(r, c, _)| r >= n || c >= n || r == c) {
            return Err(Error::Dimension("off-diagonal entry out of range".into()));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut mask_t = vec![0.0; k * n];
        for (i, row) in mask.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                mask_t[j * n + i] = b;
            }
        }
        Ok(ReservoirMatrices {
            n,
            k,
            alpha,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1 as u32).collect(),
            weights: entries.iter().map(|e| e.2).collect(),
            mask_t,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offdiag_nnz(&self) -> usize {
        self.weights.len()
    }

    /// `(col, weight)` pairs of row `i`, excluding the diagonal.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// Entry `(i, j)` of the full interconnection matrix.
    pub fn interconnect(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.alpha;
        }
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, w)| w)
    }

    pub fn input_weight(&self, i: usize, j: usize) -> f64 {
        self.mask_t[j * self.n + i]
    }

    pub(crate) fn mask_t(&self) -> &[f64] {
        &self.mask_t
    }

    /// `alpha * x_i + sum_j W_ij x_j` over the off-diagonal entries in
    /// column order.
    #[inline]
    pub(crate) fn recurrent(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = self.alpha * x[i];
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        for (&c, &w) in self.col_idx[r.clone()].iter().zip(&self.weights[r]) {
            acc += w * x[c as usize];
        }
        acc
    }
}

/// Draws the reservoir matrices for `params`.
///
/// Random stream order (see [`crate::rng`]): the `n x k` input mask
/// row by row as `beta * symmetric()`; then `round(rho * n^2)` distinct
/// off-diagonal positions by Floyd's algorithm over the `n^2 - n`
/// off-diagonal slots (slot `s` is row `s / (n-1)`, column
/// `s % (n-1)` shifted past the diagonal); then one `gamma * symmetric()`
/// weight per position in row-major position order.
pub fn generate_matrices(params: &HyperParams) -> Result<ReservoirMatrices> {
    params.validate()?;
    let (n, k) = (params.n, params.k);
    let mut rng = SeededRng::new(params.seed);

    let mut mask_t = vec![0.0; k * n];
    for i in 0..n {
        for j in 0..k {
            mask_t[j * n + i] = params.beta * rng.symmetric();
        }
    }

    let slots = (n as u64) * (n as u64 - 1);
    let nnz = params.offdiag_nonzeros();
    if nnz > slots {
        return Err(Error::Overflow {
            requested: nnz,
            available: slots,
        });
    }
    let mut chosen: HashSet<u64> = HashSet::with_capacity(nnz as usize);
    for j in (slots - nnz)..slots {
        let t = rng.below(j + 1);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut positions: Vec<u64> = chosen.into_iter().collect();
    positions.sort_unstable();

    let mut row_ptr = vec![0usize; n + 1];
    let mut col_idx = Vec::with_capacity(positions.len());
    let mut weights = Vec::with_capacity(positions.len());
    let width = (n - 1).max(1) as u64;
    for &s in &positions {
        let r = (s / width) as usize;
        let mut c = (s % width) as usize;
        if c >= r {
            c += 1;
        }
        row_ptr[r + 1] += 1;
        col_idx.push(c as u32);
        weights.push(params.gamma * rng.symmetric());
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    Ok(ReservoirMatrices {
        n,
        k,
        alpha: params.alpha,
        row_ptr,
        col_idx,
        weights,
        mask_t,
    })
}
