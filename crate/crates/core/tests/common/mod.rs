//! Independent reference implementations used by the integration, property
//! and acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use optorc::dataset::Frame;
use optorc::rng::SeededRng;

pub fn random_frame(h: usize, w: usize, rng: &mut SeededRng) -> Frame {
    let pixels = (0..h * w).map(|_| rng.below(256) as u8).collect();
    Frame::new(h, w, pixels)
}

/// Brute-force HOG: for every output entry, loop over the pixels of its
/// cell and add each pixel's magnitude weighted by a triangular kernel on
/// the circular distance between its orientation and the bin centre.
pub fn hog_oracle(frame: &Frame, cell: usize, block: usize, bins: usize, stride: usize, eps: f64) -> Vec<f64> {
    let (h, w) = (frame.height, frame.width);
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        frame.pixels[y * w + x] as f64
    };
    let width = 180.0 / bins as f64;
    let vote = |y: usize, x: usize, b: usize| -> f64 {
        let (yi, xi) = (y as isize, x as isize);
        let gx = at(yi, xi + 1) - at(yi, xi - 1);
        let gy = at(yi + 1, xi) - at(yi - 1, xi);
        let mag = gx.hypot(gy);
        if mag == 0.0 {
            return 0.0;
        }
        let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
        let centre = (b as f64 + 0.5) * width;
        let d = (theta - centre).abs();
        let d = d.min(180.0 - d);
        mag * (1.0 - d / width).max(0.0)
    };
    let (cells_y, cells_x) = (h / cell, w / cell);
    let blocks_y = (cells_y - block) / stride + 1;
    let blocks_x = (cells_x - block) / stride + 1;
    let mut out = Vec::new();
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let mut v = Vec::new();
            for cy in 0..block {
                for cx in 0..block {
                    let (y0, x0) = ((by * stride + cy) * cell, (bx * stride + cx) * cell);
                    for b in 0..bins {
                        let mut s = 0.0;
                        for y in y0..y0 + cell {
                            for x in x0..x0 + cell {
                                s += vote(y, x, b);
                            }
                        }
                        v.push(s);
                    }
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            out.extend(v.iter().map(|a| a / (norm + eps)));
        }
    }
    out
}

/// Row-major dense matrix helpers.
pub type Dense = Vec<Vec<f64>>;

pub fn random_dense(rows: usize, cols: usize, rng: &mut SeededRng) -> Dense {
    (0..rows).map(|_| (0..cols).map(|_| rng.normal()).collect()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, |r| r.len());
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|r| {
            (0..cols)
                .map(|j| (0..inner).map(|k| r[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Solves `A Z = R` by Gaussian elimination with partial pivoting.
/// `None` if a pivot falls below `1e-12` of the largest diagonal entry.
pub fn gauss_solve(a: &Dense, r: &Dense) -> Option<Dense> {
    let n = a.len();
    let m = r[0].len();
    let mut aug: Dense = a
        .iter()
        .zip(r)
        .map(|(ar, rr)| ar.iter().chain(rr).copied().collect())
        .collect();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))?;
        if aug[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        aug.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / aug[col][col];
                if f != 0.0 {
                    for k in col..n + m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| (0..m).map(|j| aug[i][n + j] / aug[i][i]).collect()).collect())
}

/// Ridge oracle: forms `XᵀX + λI` and `XᵀD` explicitly and solves them.
/// Returns `W_out` (`M x N`).
pub fn ridge_oracle(x: &Dense, d: &Dense, lambda: f64) -> Option<Dense> {
    let xt = transpose(x);
    let mut g = matmul(&xt, x);
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let c = matmul(&xt, d);
    gauss_solve(&g, &c).map(|w| transpose(&w))
}

/// `n x d` data whose sample covariance (divisor `n - 1`) is exactly
/// `diag(variances)` up to rounding: orthonormal centred columns, scaled.
pub fn diagonal_covariance_data(n: usize, variances: &[f64], rng: &mut SeededRng) -> Dense {
    let d = variances.len();
    assert!(n > d);
    let ones = 1.0 / (n as f64).sqrt();
    let mut basis: Vec<Vec<f64>> = vec![vec![ones; n]];
    while basis.len() < d + 1 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    let shift: Vec<f64> = (0..d).map(|_| rng.symmetric() * 10.0).collect();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| basis[j + 1][i] * (variances[j] * (n - 1) as f64).sqrt() + shift[j])
                .collect()
        })
        .collect()
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
