//! Covariance-method principal component analysis.
//!
//! With more samples than features the `D x D` sample covariance is
//! diagonalised directly. Otherwise the `n x n` Gram matrix of the centred
//! data is diagonalised and its eigenvectors are mapped back to feature
//! space, which yields the same leading components at a fraction of the
//! memory. Components beyond the data rank are completed with an
//! orthonormal basis of the remaining space.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::reborrow::ReborrowMut;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::cache::FeatureMatrix;
use crate::error::{Error, Result};

const CHUNK: usize = 512;
const MAGIC: &[u8; 8] = b"ORCPCA\0\0";
const VERSION: u32 = 1;

/// A row-major sample source that can be copied out in `f64` chunks.
pub trait Rows {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Copies rows `start..start + out.nrows()` into `out`.
    fn copy_rows(&self, start: usize, out: MatMut<'_, f64>);
}

impl Rows for FeatureMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn copy_rows(&self, start: usize, mut out: MatMut<'_, f64>) {
        for i in 0..out.nrows() {
            let row = self.row(start + i);
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = v as f64;
            }
        }
    }
}

impl Rows for MatRef<'_, f64> {
    fn nrows(&self) -> usize {
        MatRef::nrows(self)
    }
    fn ncols(&self) -> usize {
        MatRef::ncols(self)
    }
    fn copy_rows(&self, start: usize, mut out: MatMut<'_, f64>) {
        let n = out.nrows();
        out.copy_from(self.subrows(start, n));
    }
}

impl Rows for Mat<f64> {
    fn nrows(&self) -> usize {
        Mat::nrows(self)
    }
    fn ncols(&self) -> usize {
        Mat::ncols(self)
    }
    fn copy_rows(&self, start: usize, out: MatMut<'_, f64>) {
        self.as_ref().copy_rows(start, out)
    }
}

/// A subset of another source's rows, in the given order.
pub struct RowSubset<'a, R> {
    pub inner: &'a R,
    pub indices: &'a [usize],
}

impl<R: Rows> Rows for RowSubset<'_, R> {
    fn nrows(&self) -> usize {
        self.indices.len()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn copy_rows(&self, start: usize, mut out: MatMut<'_, f64>) {
        for i in 0..out.nrows() {
            let src = self.indices[start + i];
            self.inner.copy_rows(src, out.rb_mut().subrows_mut(i, 1));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `K x D`, orthonormal rows.
    pub components: Mat<f64>,
    /// Nonincreasing, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            0.0
        }
    }

    /// Maps projections back into feature space.
    pub fn reconstruct(&self, projected: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = Mat::from_fn(projected.nrows(), self.dim(), |_, j| self.mean[j]);
        matmul(
            out.as_mut(),
            Accum::Add,
            projected,
            self.components.as_ref(),
            1.0,
            Par::Seq,
        );
        out
    }
}

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(CHUNK).map(move |s| (s, CHUNK.min(n - s)))
}

fn centred_chunk(data: &impl Rows, mean: &[f64], start: usize, len: usize) -> Mat<f64> {
    let mut m = Mat::zeros(len, data.ncols());
    data.copy_rows(start, m.as_mut());
    for i in 0..len {
        for (j, mu) in mean.iter().enumerate() {
            m[(i, j)] -= mu;
        }
    }
    m
}

pub fn fit_pca(data: &impl Rows, k: usize) -> Result<PcaModel> {
    let (n, d) = (data.nrows(), data.ncols());
    if n < 2 {
        return Err(Error::Rank(format!("{n} samples; at least 2 are needed")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Dimension(format!(
            "K = {k} outside 1..={} for {n} samples of dimension {d}",
            n.min(d)
        )));
    }

    let mut mean = vec![0.0; d];
    let mut buf = Mat::zeros(CHUNK.min(n), d);
    for (s, len) in chunks(n) {
        data.copy_rows(s, buf.as_mut().subrows_mut(0, len));
        for i in 0..len {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += buf[(i, j)];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    drop(buf);

    let denom = (n - 1) as f64;
    let (mut eigenvalues, components, total_variance) = if n > d {
        covariance_route(data, &mean, k, denom)?
    } else {
        gram_route(data, &mean, k, denom)?
    };
    if !total_variance.is_finite() || eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite variance in PCA".into()));
    }
    eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut model = PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance,
    };
    fix_signs(&mut model.components);
    Ok(model)
}

fn covariance_route(
    data: &impl Rows,
    mean: &[f64],
    k: usize,
    denom: f64,
) -> Result<(Vec<f64>, Mat<f64>, f64)> {
    let (n, d) = (data.nrows(), data.ncols());
    let mut cov = Mat::<f64>::zeros(d, d);
    for (s, len) in chunks(n) {
        let c = centred_chunk(data, mean, s, len);
        matmul(
            cov.as_mut(),
            Accum::Add,
            c.transpose(),
            c.as_ref(),
            1.0 / denom,
            Par::Seq,
        );
    }
    let total: f64 = (0..d).map(|j| cov[(j, j)]).sum();
    let evd = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let eig: Vec<f64> = (0..k).map(|r| vals[d - 1 - r]).collect();
    let comps = Mat::from_fn(k, d, |r, j| vecs[(j, d - 1 - r)]);
    Ok((eig, comps, total))
}

fn gram_route(
    data: &impl Rows,
    mean: &[f64],
    k: usize,
    denom: f64,
) -> Result<(Vec<f64>, Mat<f64>, f64)> {
    let (n, d) = (data.nrows(), data.ncols());
    let xc = centred_chunk(data, mean, 0, n);
    let mut gram = Mat::<f64>::zeros(n, n);
    matmul(
        gram.as_mut(),
        Accum::Replace,
        xc.as_ref(),
        xc.transpose(),
        1.0 / denom,
        Par::Seq,
    );
    let total: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let top = vals[n - 1].max(0.0);
    let tol = top * 1e-12 * n as f64;

    let eig: Vec<f64> = (0..k).map(|r| vals[n - 1 - r]).collect();
    let rank = eig.iter().take_while(|&&v| v > tol && v > 0.0).count();

    // Scaled Gram eigenvectors: V_r / sqrt(denom * lambda_r).
    let v = Mat::from_fn(n, rank, |i, r| {
        vecs[(i, n - 1 - r)] / (denom * eig[r]).sqrt()
    });
    let mut comps = Mat::<f64>::zeros(k, d);
    matmul(
        comps.as_mut().subrows_mut(0, rank),
        Accum::Replace,
        v.transpose(),
        xc.as_ref(),
        1.0,
        Par::Seq,
    );
    complete_basis(&mut comps, rank);
    let mut eig = eig;
    eig[rank..].iter_mut().for_each(|v| *v = 0.0);
    Ok((eig, comps, total))
}

/// Fills rows `filled..` with unit vectors orthogonal to all previous rows,
/// drawn from the standard basis by modified Gram-Schmidt.
fn complete_basis(comps: &mut Mat<f64>, filled: usize) {
    let (k, d) = (comps.nrows(), comps.ncols());
    let mut row = filled;
    let mut candidate = 0;
    while row < k && candidate < d {
        let mut v = vec![0.0; d];
        v[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for r in 0..row {
                let dot: f64 = (0..d).map(|j| comps[(r, j)] * v[j]).sum();
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj -= dot * comps[(r, j)];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for (j, vj) in v.iter().enumerate() {
            comps[(row, j)] = vj / norm;
        }
        row += 1;
    }
}

/// Makes the largest-magnitude entry of every row positive.
fn fix_signs(comps: &mut Mat<f64>) {
    for r in 0..comps.nrows() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for j in 0..comps.ncols() {
            let v = comps[(r, j)];
            if v.abs() > best.abs() {
                best = v;
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            for j in 0..comps.ncols() {
                comps[(r, j)] = -comps[(r, j)];
            }
        }
    }
}

/// Projects centred rows onto the components, returning `m x K`.
pub fn transform(model: &PcaModel, data: &impl Rows) -> Result<Mat<f64>> {
    check_dim(model, data)?;
    let mut out = Mat::zeros(data.nrows(), model.k());
    for (s, len) in chunks(data.nrows()) {
        let c = centred_chunk(data, &model.mean, s, len);
        matmul(
            out.as_mut().subrows_mut(s, len),
            Accum::Replace,
            c.as_ref(),
            model.components.transpose(),
            1.0,
            Par::Seq,
        );
    }
    Ok(out)
}

/// Like [`transform`], producing an `f32` feature matrix chunk by chunk.
pub fn transform_features(model: &PcaModel, data: &impl Rows) -> Result<FeatureMatrix> {
    check_dim(model, data)?;
    let k = model.k();
    let mut out = FeatureMatrix::zeros(data.nrows(), k);
    let mut proj = Mat::zeros(CHUNK, k);
    for (s, len) in chunks(data.nrows()) {
        let c = centred_chunk(data, &model.mean, s, len);
        matmul(
            proj.as_mut().subrows_mut(0, len),
            Accum::Replace,
            c.as_ref(),
            model.components.transpose(),
            1.0,
            Par::Seq,
        );
        for i in 0..len {
            for (j, v) in out.row_mut(s + i).iter_mut().enumerate() {
                *v = proj[(i, j)] as f32;
            }
        }
    }
    Ok(out)
}

fn check_dim(model: &PcaModel, data: &impl Rows) -> Result<()> {
    if data.ncols() != model.dim() {
        return Err(Error::Dimension(format!(
            "data has {} columns, model expects {}",
            data.ncols(),
            model.dim()
        )));
    }
    Ok(())
}

/// Binary model file: magic `ORCPCA\0\0`, `u32` version, `u64` D, `u64` K,
/// `f64` total variance, then mean (D), eigenvalues (K) and components
/// (K x D, row-major), all little-endian `f64`.
pub fn save_model(path: &Path, model: &PcaModel) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(model.dim() as u64).to_le_bytes())?;
    put(&(model.k() as u64).to_le_bytes())?;
    put(&model.total_variance.to_le_bytes())?;
    for v in &model.mean {
        put(&v.to_le_bytes())?;
    }
    for v in &model.eigenvalues {
        put(&v.to_le_bytes())?;
    }
    for r in 0..model.k() {
        for j in 0..model.dim() {
            put(&model.components[(r, j)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks magic, version and length of a model file; returns `(D, K)`.
pub fn inspect_model(path: &Path) -> Result<(usize, usize)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 36];
    f.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let d = u64::from_le_bytes(head[12..20].try_into().unwrap());
    let k = u64::from_le_bytes(head[20..28].try_into().unwrap());
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let expect = d
        .checked_add(k)
        .and_then(|n| k.checked_mul(d).and_then(|kd| n.checked_add(kd)))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(36));
    if expect != Some(len) {
        return Err(Error::format(path, "file length does not match header"));
    }
    Ok((d as usize, k as usize))
}

pub fn load_model(path: &Path) -> Result<PcaModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut head = [0u8; 36];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let d = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(head[20..28].try_into().unwrap()) as usize;
    let total_variance = f64::from_le_bytes(head[28..36].try_into().unwrap());
    let expected = d
        .checked_add(k)
        .and_then(|n| k.checked_mul(d).and_then(|kd| n.checked_add(kd)))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {}", bytes.len(), expected * 8),
        ));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mean = vals[..d].to_vec();
    let eigenvalues = vals[d..d + k].to_vec();
    let comp = &vals[d + k..];
    Ok(PcaModel {
        mean,
        components: Mat::from_fn(k, d, |i, j| comp[i * d + j]),
        eigenvalues,
        total_variance,
    })
}
