use faer::Mat;
use serde::{Deserialize, Serialize};

use super::matrices::ReservoirMatrices;
use super::quantize::QuantizerSpec;
use crate::cache::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// State is the quantized camera intensity:
    /// `x' = qI(sin^2(qphi(W x + B u)))`.
    Intensity,
    /// State is the quantized SLM phase:
    /// `x' = qphi(W qI(sin^2(x)) + B u)`.
    Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: Vec<f64>,
    pub variant: Variant,
    pub time_step: u64,
}

impl ReservoirState {
    pub fn zeros(n: usize, variant: Variant) -> Self {
        ReservoirState {
            x: vec![0.0; n],
            variant,
            time_step: 0,
        }
    }
}

/// `B u` with each component summed over inputs in increasing order.
pub fn input_drive(m: &ReservoirMatrices, u: &[f64], out: &mut [f64]) {
    let n = m.n();
    out.fill(0.0);
    for (col, &uj) in m.mask_t().chunks_exact(n).zip(u) {
        for (o, &b) in out.iter_mut().zip(col) {
            *o += b * uj;
        }
    }
}

/// Row-blocked [`input_drive`] over many inputs; every output element is
/// accumulated in the same order, so results are bit-identical to the
/// single-input path.
pub fn input_drive_batch(m: &ReservoirMatrices, inputs: &FeatureMatrix, out: &mut [f64]) {
    const TT: usize = 16;
    const TI: usize = 256;
    let (n, k) = (m.n(), m.k());
    debug_assert_eq!(inputs.cols, k);
    debug_assert_eq!(out.len(), inputs.rows * n);
    out.fill(0.0);
    let mask = m.mask_t();
    let mut u = vec![0.0f64; TT * k];
    for t0 in (0..inputs.rows).step_by(TT) {
        let tn = TT.min(inputs.rows - t0);
        for t in 0..tn {
            for (d, &s) in u[t * k..(t + 1) * k].iter_mut().zip(inputs.row(t0 + t)) {
                *d = s as f64;
            }
        }
        for i0 in (0..n).step_by(TI) {
            let iw = TI.min(n - i0);
            for j in 0..k {
                let col = &mask[j * n + i0..j * n + i0 + iw];
                for t in 0..tn {
                    let uj = u[t * k + j];
                    let acc = &mut out[(t0 + t) * n + i0..(t0 + t) * n + i0 + iw];
                    for (a, &b) in acc.iter_mut().zip(col) {
                        *a += b * uj;
                    }
                }
            }
        }
    }
}

/// One update given the precomputed input drive.
fn advance(
    m: &ReservoirMatrices,
    q: &QuantizerSpec,
    variant: Variant,
    x: &[f64],
    drive: &[f64],
    scratch: &mut Vec<f64>,
    next: &mut [f64],
) {
    match variant {
        Variant::Intensity => {
            for (i, out) in next.iter_mut().enumerate() {
                *out = q.intensity_nonlinearity(m.recurrent(i, x) + drive[i]);
            }
        }
        Variant::Phase => {
            scratch.clear();
            scratch.extend(x.iter().map(|&v| q.phase_readout(v)));
            for (i, out) in next.iter_mut().enumerate() {
                *out = q.phase(m.recurrent(i, scratch) + drive[i]);
            }
        }
    }
}

fn check(m: &ReservoirMatrices, state: &ReservoirState, u: &[f64]) -> Result<()> {
    if state.x.len() != m.n() || u.len() != m.k() {
        return Err(Error::Dimension(format!(
            "state {} / input {} against reservoir n = {}, k = {}",
            state.x.len(),
            u.len(),
            m.n(),
            m.k()
        )));
    }
    Ok(())
}

fn step(
    variant: Variant,
    state: &ReservoirState,
    m: &ReservoirMatrices,
    q: &QuantizerSpec,
    u: &[f64],
) -> Result<ReservoirState> {
    if state.variant != variant {
        return Err(Error::Config(format!(
            "{:?} step applied to a {:?} state",
            variant, state.variant
        )));
    }
    check(m, state, u)?;
    let mut drive = vec![0.0; m.n()];
    input_drive(m, u, &mut drive);
    let mut next = vec![0.0; m.n()];
    advance(m, q, variant, &state.x, &drive, &mut Vec::new(), &mut next);
    Ok(ReservoirState {
        x: next,
        variant,
        time_step: state.time_step + 1,
    })
}

pub fn step_intensity(
    state: &ReservoirState,
    m: &ReservoirMatrices,
    q: &QuantizerSpec,
    u: &[f64],
) -> Result<ReservoirState> {
    step(Variant::Intensity, state, m, q, u)
}

pub fn step_phase(
    state: &ReservoirState,
    m: &ReservoirMatrices,
    q: &QuantizerSpec,
    u: &[f64],
) -> Result<ReservoirState> {
    step(Variant::Phase, state, m, q, u)
}

/// Drives the reservoir with `inputs`; row `t` of the result is the state
/// after consuming input `t`.
pub fn run_reservoir<I, U>(
    m: &ReservoirMatrices,
    q: &QuantizerSpec,
    inputs: I,
    initial: &ReservoirState,
) -> Result<Mat<f64>>
where
    I: IntoIterator<Item = U>,
    U: AsRef<[f64]>,
{
    let mut rows = Vec::new();
    let mut state = initial.clone();
    for u in inputs {
        state = step(initial.variant, &state, m, q, u.as_ref())?;
        rows.push(state.x.clone());
    }
    Ok(Mat::from_fn(rows.len(), m.n(), |t, i| rows[t][i]))
}

/// A reservoir ready to be driven by whole feature matrices.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub matrices: ReservoirMatrices,
    pub quantizer: QuantizerSpec,
    pub variant: Variant,
}

impl Reservoir {
    /// Runs over every row of `inputs`, starting from zero. Rows listed in
    /// `resets` (sorted) start again from the zero state before being
    /// consumed. States are returned rounded to `f32`.
    pub fn run_features(&self, inputs: &FeatureMatrix, resets: &[usize]) -> Result<FeatureMatrix> {
        const CHUNK: usize = 256;
        let m = &self.matrices;
        let n = m.n();
        if inputs.cols != m.k() {
            return Err(Error::Dimension(format!(
                "inputs have {} features, reservoir expects {}",
                inputs.cols,
                m.k()
            )));
        }
        let mut out = FeatureMatrix::zeros(inputs.rows, n);
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut scratch = Vec::with_capacity(n);
        let mut drive = vec![0.0; CHUNK * n];
        let mut reset_iter = resets.iter().peekable();
        for s in (0..inputs.rows).step_by(CHUNK) {
            let len = CHUNK.min(inputs.rows - s);
            let idx: Vec<usize> = (s..s + len).collect();
            let chunk = inputs.select_rows(&idx);
            input_drive_batch(m, &chunk, &mut drive[..len * n]);
            for t in 0..len {
                while reset_iter.peek().is_some_and(|&&r| r < s + t) {
                    reset_iter.next();
                }
                if reset_iter.peek() == Some(&&(s + t)) {
                    x.fill(0.0);
                }
                advance(
                    m,
                    &self.quantizer,
                    self.variant,
                    &x,
                    &drive[t * n..(t + 1) * n],
                    &mut scratch,
                    &mut next,
                );
                std::mem::swap(&mut x, &mut next);
                for (o, &v) in out.row_mut(s + t).iter_mut().zip(&x) {
                    *o = v as f32;
                }
            }
        }
        Ok(out)
    }
}
