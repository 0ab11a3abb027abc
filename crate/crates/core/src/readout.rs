//! Linear readout trained by ridge regression.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::reborrow::{Reborrow, ReborrowMut};
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Action, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pca::Rows;
use crate::reservoir::QuantizerSpec;

const CHUNK: usize = 512;
const MAGIC: &[u8; 8] = b"ORCREAD\0";
const VERSION: u32 = 1;
/// Relative residual bound on the regularised normal equations.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEncoding {
    /// `T x 6` one-hot rows.
    pub targets: Mat<f64>,
    pub class_of_frame: Vec<usize>,
}

impl TargetEncoding {
    pub fn from_actions(actions: &[Action]) -> Self {
        let class_of_frame: Vec<usize> = actions.iter().map(|a| a.index()).collect();
        let targets = Mat::from_fn(actions.len(), NUM_CLASSES, |t, c| {
            if class_of_frame[t] == c {
                1.0
            } else {
                0.0
            }
        });
        TargetEncoding {
            targets,
            class_of_frame,
        }
    }
}

/// One-hot encodes a stream of action names.
pub fn encode_targets<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Result<TargetEncoding> {
    let actions = labels
        .into_iter()
        .map(|s| s.as_ref().parse::<Action>())
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetEncoding::from_actions(&actions))
}

/// Which quantity the readout weights multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTransform {
    /// The state itself.
    Raw,
    /// The camera response `qI(sin^2(x))` of a phase state.
    NonlinearPhase,
}

/// Ridge strength: explicit, or `1e-4 * trace(X^T X) / N`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RidgeLambda {
    #[default]
    Auto,
    Value(f64),
}

impl RidgeLambda {
    pub const AUTO_SCALE: f64 = 1e-4;

    pub fn resolve(self, gram_trace: f64, n: usize) -> f64 {
        match self {
            RidgeLambda::Auto => Self::AUTO_SCALE * gram_trace / n as f64,
            RidgeLambda::Value(v) => v,
        }
    }
}

impl fmt::Display for RidgeLambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RidgeLambda::Auto => f.write_str("auto"),
            RidgeLambda::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for RidgeLambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RidgeLambda::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(RidgeLambda::Value(v)),
            _ => Err(Error::Config(format!("lambda must be `auto` or a non-negative number, got `{s}`"))),
        }
    }
}

impl Serialize for RidgeLambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RidgeLambda::Auto => s.serialize_str("auto"),
            RidgeLambda::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for RidgeLambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Int(i64),
            Str(String),
        }
        let v = match Repr::deserialize(d)? {
            Repr::Num(v) => v.to_string(),
            Repr::Int(v) => v.to_string(),
            Repr::Str(s) => s,
        };
        v.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// `M x N`.
    pub w_out: Mat<f64>,
    pub ridge_lambda: f64,
    pub feature_transform: FeatureTransform,
    /// Intensity levels used by [`FeatureTransform::NonlinearPhase`].
    pub intensity_levels: u32,
}

impl ReadoutModel {
    pub fn outputs(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w_out.ncols()
    }
}

/// Applies the readout's feature transform on the fly.
pub struct Transformed<'a, R> {
    inner: &'a R,
    transform: FeatureTransform,
    quantizer: QuantizerSpec,
}

impl<'a, R: Rows> Transformed<'a, R> {
    pub fn new(inner: &'a R, transform: FeatureTransform, intensity_levels: u32) -> Self {
        Transformed {
            inner,
            transform,
            quantizer: QuantizerSpec {
                intensity_levels,
                ..QuantizerSpec::default()
            },
        }
    }
}

impl<R: Rows> Rows for Transformed<'_, R> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn copy_rows(&self, start: usize, mut out: MatMut<'_, f64>) {
        self.inner.copy_rows(start, out.rb_mut());
        if self.transform == FeatureTransform::NonlinearPhase {
            for j in 0..out.ncols() {
                for i in 0..out.nrows() {
                    out[(i, j)] = self.quantizer.phase_readout(out[(i, j)]);
                }
            }
        }
    }
}

/// `X^T X` and `X^T D`, accumulated over fixed row blocks in order.
pub fn normal_equations(states: &impl Rows, targets: MatRef<'_, f64>) -> Result<(Mat<f64>, Mat<f64>)> {
    let (t, n) = (states.nrows(), states.ncols());
    if targets.nrows() != t {
        return Err(Error::Dimension(format!(
            "{t} state rows but {} target rows",
            targets.nrows()
        )));
    }
    if t == 0 {
        return Err(Error::Dimension("no training rows".into()));
    }
    let m = targets.ncols();
    let mut gram = Mat::<f64>::zeros(n, n);
    let mut cross = Mat::<f64>::zeros(n, m);
    let mut buf = Mat::<f64>::zeros(CHUNK.min(t), n);
    for s in (0..t).step_by(CHUNK) {
        let len = CHUNK.min(t - s);
        let mut x = buf.as_mut().subrows_mut(0, len);
        states.copy_rows(s, x.rb_mut());
        let x = x.rb();
        for i in 0..len {
            for j in 0..n {
                if !x[(i, j)].is_finite() {
                    return Err(Error::Numerical(format!("non-finite state at row {}", s + i)));
                }
            }
        }
        matmul(gram.as_mut(), Accum::Add, x.transpose(), x, 1.0, Par::Seq);
        matmul(
            cross.as_mut(),
            Accum::Add,
            x.transpose(),
            targets.subrows(s, len),
            1.0,
            Par::Seq,
        );
    }
    Ok((gram, cross))
}

/// Solves `(G + lambda I) W = C` by Cholesky and checks the residual.
pub fn solve_ridge(gram: &Mat<f64>, cross: &Mat<f64>, lambda: f64) -> Result<Mat<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = gram.nrows();
    let mut a = gram.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let singular = |why: String| {
        if lambda == 0.0 {
            Error::Singular(why)
        } else {
            Error::Numerical(why)
        }
    };
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| singular(format!("Cholesky factorization failed: {e:?}")))?;
    let l = llt.L();
    let pivots: Vec<f64> = (0..n).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let (lo, hi) = pivots
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if lambda == 0.0 && lo <= hi * n as f64 * f64::EPSILON {
        return Err(Error::Singular(format!(
            "normal equations are rank-deficient (pivot ratio {:.3e})",
            lo / hi
        )));
    }
    let w = llt.solve(cross);
    let mut resid = cross.clone();
    matmul(resid.as_mut(), Accum::Add, a.as_ref(), w.as_ref(), -1.0, Par::Seq);
    let scale = cross.norm_l2();
    let r = resid.norm_l2();
    if !r.is_finite() || r > RESIDUAL_TOLERANCE * scale.max(f64::MIN_POSITIVE) && r > 0.0 {
        return Err(singular(format!(
            "ridge residual {r:.3e} exceeds {RESIDUAL_TOLERANCE:e} x {scale:.3e}"
        )));
    }
    Ok(w)
}

/// Solves for `W` (`N x M`) and returns it with the resolved lambda.
///
/// With at least as many rows as columns this factors `X^T X + lambda I`.
/// With fewer rows it uses the equivalent dual system
/// `W = X^T (X X^T + lambda I)^-1 D`, which for `lambda = 0` is the
/// minimum-norm interpolating solution of the same normal equations.
fn fit_weights(states: &impl Rows, targets: MatRef<'_, f64>, lambda: RidgeLambda) -> Result<(Mat<f64>, f64)> {
    let (t, n) = (states.nrows(), states.ncols());
    if t == 0 || t >= n {
        let (gram, cross) = normal_equations(states, targets)?;
        let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();
        let lambda = lambda.resolve(trace, n);
        return Ok((solve_ridge(&gram, &cross, lambda)?, lambda));
    }
    if targets.nrows() != t {
        return Err(Error::Dimension(format!(
            "{t} state rows but {} target rows",
            targets.nrows()
        )));
    }
    let mut x = Mat::<f64>::zeros(t, n);
    states.copy_rows(0, x.as_mut());
    for i in 0..t {
        for j in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::Numerical(format!("non-finite state at row {i}")));
            }
        }
    }
    let mut kernel = Mat::<f64>::zeros(t, t);
    matmul(kernel.as_mut(), Accum::Replace, x.as_ref(), x.transpose(), 1.0, Par::Seq);
    let trace: f64 = (0..t).map(|i| kernel[(i, i)]).sum();
    let lambda = lambda.resolve(trace, n);
    let dual = solve_ridge(&kernel, &targets.to_owned(), lambda)?;
    let mut w = Mat::<f64>::zeros(n, targets.ncols());
    matmul(w.as_mut(), Accum::Replace, x.transpose(), dual.as_ref(), 1.0, Par::Seq);
    Ok((w, lambda))
}

/// Ridge regression on raw states: `W_out^T = (X^T X + lambda I)^-1 X^T D`.
pub fn train_ridge(states: &impl Rows, targets: MatRef<'_, f64>, lambda: f64) -> Result<ReadoutModel> {
    let (w, ridge_lambda) = fit_weights(states, targets, RidgeLambda::Value(lambda))?;
    Ok(ReadoutModel {
        w_out: w.transpose().to_owned(),
        ridge_lambda,
        feature_transform: FeatureTransform::Raw,
        intensity_levels: QuantizerSpec::default().intensity_levels,
    })
}

/// Ridge regression through a feature transform with a possibly automatic
/// lambda.
pub fn train_readout(
    states: &impl Rows,
    targets: MatRef<'_, f64>,
    lambda: RidgeLambda,
    transform: FeatureTransform,
    intensity_levels: u32,
) -> Result<ReadoutModel> {
    let view = Transformed::new(states, transform, intensity_levels);
    let (w, ridge_lambda) = fit_weights(&view, targets, lambda)?;
    Ok(ReadoutModel {
        w_out: w.transpose().to_owned(),
        ridge_lambda,
        feature_transform: transform,
        intensity_levels,
    })
}

/// `y = f(states) W_out^T`, `T x M`.
pub fn apply_readout(model: &ReadoutModel, states: &impl Rows) -> Result<Mat<f64>> {
    if states.ncols() != model.inputs() {
        return Err(Error::Dimension(format!(
            "states have {} columns, readout expects {}",
            states.ncols(),
            model.inputs()
        )));
    }
    let view = Transformed::new(states, model.feature_transform, model.intensity_levels);
    let t = states.nrows();
    let mut y = Mat::zeros(t, model.outputs());
    let mut buf = Mat::<f64>::zeros(CHUNK.min(t.max(1)), model.inputs());
    for s in (0..t).step_by(CHUNK) {
        let len = CHUNK.min(t - s);
        let mut x = buf.as_mut().subrows_mut(0, len);
        view.copy_rows(s, x.rb_mut());
        matmul(
            y.as_mut().subrows_mut(s, len),
            Accum::Replace,
            x.rb(),
            model.w_out.transpose(),
            1.0,
            Par::Seq,
        );
    }
    Ok(y)
}

/// `<(y - d)^2> / <(d - <d>)^2>`.
pub fn nmse(y: &[f64], d: &[f64]) -> Result<f64> {
    if y.len() != d.len() || d.len() < 2 {
        return Err(Error::Dimension(format!(
            "nmse needs equal lengths >= 2, got {} and {}",
            y.len(),
            d.len()
        )));
    }
    let t = d.len() as f64;
    let mean = d.iter().sum::<f64>() / t;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
    if var == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let mse = y.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t;
    Ok(mse / var)
}

/// NMSE of each output column; NaN where the target column is constant.
pub fn nmse_per_output(y: MatRef<'_, f64>, d: MatRef<'_, f64>) -> Vec<f64> {
    (0..d.ncols())
        .map(|c| {
            let yc: Vec<f64> = (0..y.nrows()).map(|i| y[(i, c)]).collect();
            let dc: Vec<f64> = (0..d.nrows()).map(|i| d[(i, c)]).collect();
            nmse(&yc, &dc).unwrap_or(f64::NAN)
        })
        .collect()
}

/// Binary model file: magic `ORCREAD\0`, `u32` version, `u64` M, `u64` N,
/// `f64` lambda, `u8` transform (0 raw, 1 nonlinear phase), `u32`
/// intensity levels, then `W_out` row-major `f64`, all little-endian.
pub fn save_model(path: &Path, model: &ReadoutModel) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(model.outputs() as u64).to_le_bytes())?;
    put(&(model.inputs() as u64).to_le_bytes())?;
    put(&model.ridge_lambda.to_le_bytes())?;
    put(&[match model.feature_transform {
        FeatureTransform::Raw => 0u8,
        FeatureTransform::NonlinearPhase => 1u8,
    }])?;
    put(&model.intensity_levels.to_le_bytes())?;
    for i in 0..model.outputs() {
        for j in 0..model.inputs() {
            put(&model.w_out[(i, j)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks magic and length of a model file; returns `(M, N)`.
pub fn inspect_model(path: &Path) -> Result<(usize, usize)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 41];
    f.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let m = u64::from_le_bytes(head[12..20].try_into().unwrap());
    let n = u64::from_le_bytes(head[20..28].try_into().unwrap());
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if m.checked_mul(n).and_then(|v| v.checked_mul(8)).and_then(|v| v.checked_add(41)) != Some(len) {
        return Err(Error::format(path, "file length does not match header"));
    }
    Ok((m as usize, n as usize))
}

pub fn load_model(path: &Path) -> Result<ReadoutModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut head = [0u8; 41];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(head[20..28].try_into().unwrap()) as usize;
    let ridge_lambda = f64::from_le_bytes(head[28..36].try_into().unwrap());
    let feature_transform = match head[36] {
        0 => FeatureTransform::Raw,
        1 => FeatureTransform::NonlinearPhase,
        t => return Err(Error::format(path, format!("unknown transform tag {t}"))),
    };
    let intensity_levels = u32::from_le_bytes(head[37..41].try_into().unwrap());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if Some(bytes.len()) != m.checked_mul(n).and_then(|v| v.checked_mul(8)) {
        return Err(Error::format(path, "payload size does not match header"));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ReadoutModel {
        w_out: Mat::from_fn(m, n, |i, j| vals[i * n + j]),
        ridge_lambda,
        feature_transform,
        intensity_levels,
    })
}
