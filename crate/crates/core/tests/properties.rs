mod common;

use faer::Mat;
use proptest::prelude::*;

use common::{hog_oracle, max_abs_diff, ridge_oracle};
use optorc::classify::{classify_frames, classify_sequence, confusion, FrameDecision, SequenceDecision};
use optorc::dataset::{Action, Frame};
use optorc::hog::{cell_histograms, compute_gradients, compute_hog, HogConfig};
use optorc::pca::{fit_pca, transform};
use optorc::readout::{apply_readout, nmse, train_ridge};
use optorc::reservoir::{
    generate_matrices, run_reservoir, step_intensity, step_phase, HyperParams, QuantizerSpec, ReservoirState, Variant,
};
use optorc::rng::SeededRng;

fn frame_strategy(min: usize, max: usize) -> impl Strategy<Value = Frame> {
    (min..=max, min..=max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<u8>(), h * w).prop_map(move |px| Frame::new(h, w, px))
    })
}

fn hog_config() -> impl Strategy<Value = HogConfig> {
    (2usize..=8, 1usize..=3, 2usize..=12, 1usize..=2).prop_map(|(cell, block, bins, stride)| HogConfig {
        cell_size: cell,
        block_size: block,
        num_bins: bins,
        block_stride: stride,
        normalization_epsilon: 1e-12,
    })
}

fn mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = SeededRng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

fn to_dense(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn hog_matches_brute_force(frame in frame_strategy(16, 40), cfg in hog_config()) {
        let Ok(layout) = cfg.layout(frame.height, frame.width) else { return Ok(()); };
        let d = compute_hog(&frame, &cfg).unwrap();
        prop_assert_eq!(d.values.len(), layout.len());
        let cells_y = frame.height / cfg.cell_size;
        let cells_x = frame.width / cfg.cell_size;
        let expect_len = ((cells_y - cfg.block_size) / cfg.block_stride + 1)
            * ((cells_x - cfg.block_size) / cfg.block_stride + 1)
            * cfg.block_size * cfg.block_size * cfg.num_bins;
        prop_assert_eq!(d.values.len(), expect_len);
        let oracle = hog_oracle(&frame, cfg.cell_size, cfg.block_size, cfg.num_bins, cfg.block_stride, 1e-12);
        prop_assert!(max_abs_diff(&d.values, &oracle) < 1e-9);
    }

    #[test]
    fn hog_cells_conserve_vote_mass(frame in frame_strategy(8, 40), cell in 2usize..=8) {
        let cfg = HogConfig { cell_size: cell, ..HogConfig::default() };
        let field = compute_gradients(&frame).unwrap();
        let (cy, cx, hist) = cell_histograms(&field, &cfg);
        for y in 0..cy {
            for x in 0..cx {
                let bins = &hist[(y * cx + x) * cfg.num_bins..][..cfg.num_bins];
                prop_assert!(bins.iter().all(|&v| v >= 0.0));
                let mut mass = 0.0;
                for py in y * cell..(y + 1) * cell {
                    for px in x * cell..(x + 1) * cell {
                        mass += field.magnitude[py * frame.width + px];
                    }
                }
                let total: f64 = bins.iter().sum();
                prop_assert!((total - mass).abs() <= 1e-9 * mass.max(1.0));
            }
        }
    }

    #[test]
    fn hog_scale_invariance(
        (h, w, px) in (16usize..=32, 16usize..=32)
            .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(0u8..=63, h * w))),
        c in 2u8..=4,
    ) {
        let cfg = HogConfig::default();
        let base = Frame::new(h, w, px.clone());
        let scaled = Frame::new(h, w, px.iter().map(|&v| v * c).collect());
        let fa = compute_gradients(&base).unwrap();
        let fb = compute_gradients(&scaled).unwrap();
        let (_, _, ha) = cell_histograms(&fa, &cfg);
        let (_, _, hb) = cell_histograms(&fb, &cfg);
        for (a, b) in ha.iter().zip(&hb) {
            prop_assert!((b - c as f64 * a).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let da = compute_hog(&base, &cfg).unwrap().values;
        let db = compute_hog(&scaled, &cfg).unwrap().values;
        prop_assert!(max_abs_diff(&da, &db) < 1e-6);
        let block = 4 * cfg.num_bins;
        for chunk in db.chunks(block) {
            prop_assert!(chunk.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn hog_transpose_swaps_gradients(frame in frame_strategy(3, 24)) {
        let a = compute_gradients(&frame).unwrap();
        let b = compute_gradients(&frame.transposed()).unwrap();
        for y in 0..frame.height {
            for x in 0..frame.width {
                let i = y * frame.width + x;
                let j = x * frame.height + y;
                prop_assert_eq!(a.magnitude[i], b.magnitude[j]);
                if a.magnitude[i] > 0.0 {
                    prop_assert!(circular_gap(b.orientation[j], 90.0 - a.orientation[i]) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pca_variance_ordering_and_idempotence(n in 12usize..60, d in 3usize..12, seed in any::<u64>()) {
        let x = mat(n, d, seed);
        let kmax = d.min(n - 1);
        let model = fit_pca(&x, kmax).unwrap();
        for w in model.eigenvalues.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(model.eigenvalues.iter().all(|&v| v >= 0.0));
        // Orthonormal rows.
        for r in 0..kmax {
            for s in 0..kmax {
                let dot: f64 = (0..d).map(|j| model.components[(r, j)] * model.components[(s, j)]).sum();
                let expect = if r == s { 1.0 } else { 0.0 };
                prop_assert!((dot - expect).abs() < 1e-8);
            }
        }
        // Projected training data has variance equal to the eigenvalues.
        let y = transform(&model, &x).unwrap();
        for c in 0..kmax {
            let mean: f64 = (0..n).map(|i| y[(i, c)]).sum::<f64>() / n as f64;
            let var: f64 = (0..n).map(|i| (y[(i, c)] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            prop_assert!((var - model.eigenvalues[c]).abs() <= 1e-6 * model.eigenvalues[0].max(1e-300));
        }
        // Total variance equals the covariance trace.
        let mut trace = 0.0;
        for j in 0..d {
            let mean: f64 = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
            trace += (0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        }
        prop_assert!((model.total_variance - trace).abs() <= 1e-6 * trace);
        if n > d {
            prop_assert!((model.eigenvalues.iter().sum::<f64>() - trace).abs() <= 1e-6 * trace);
        }
        // Explained variance is nondecreasing in K.
        let mut last = 0.0;
        for k in 1..=kmax {
            let r = fit_pca(&x, k).unwrap().explained_variance_ratio();
            prop_assert!(r >= last - 1e-12);
            last = r;
        }
        // Projection idempotence through reconstruction.
        let k = (kmax / 2).max(1);
        let m = fit_pca(&x, k).unwrap();
        let p = transform(&m, &x).unwrap();
        let back = m.reconstruct(p.as_ref());
        let p2 = transform(&m, &back).unwrap();
        for i in 0..n {
            for c in 0..k {
                prop_assert!((p[(i, c)] - p2[(i, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ridge_matches_normal_equations(t in 1usize..30, n in 1usize..10, li in 0usize..3, seed in any::<u64>()) {
        let lambda = [0.0, 0.01, 1.0][li];
        let x = mat(t, n, seed);
        let d = mat(t, 3, seed ^ 0x5555);
        let oracle = ridge_oracle(&to_dense(&x), &to_dense(&d), lambda);
        match (train_ridge(&x, d.as_ref(), lambda), oracle) {
            (Ok(model), Some(w)) => {
                let got: Vec<f64> = to_dense(&model.w_out).concat();
                let scale = w.concat().iter().fold(1.0f64, |a, v| a.max(v.abs()));
                prop_assert!(max_abs_diff(&got, &w.concat()) <= 1e-8 * scale);
            }
            (Err(_), None) => {}
            // Fewer rows than columns with lambda = 0 takes the dual route,
            // which the primal oracle cannot represent.
            (Ok(_), None) => prop_assert!(lambda == 0.0 && t < n),
            (Err(e), Some(_)) => prop_assert!(false, "solver failed where the oracle did not: {e}"),
        }
    }

    #[test]
    fn ridge_solution_is_a_minimum(t in 5usize..30, n in 1usize..8, lambda in 0.001f64..10.0, seed in any::<u64>()) {
        let x = mat(t, n, seed);
        let d = mat(t, 2, seed.wrapping_add(1));
        let model = train_ridge(&x, d.as_ref(), lambda).unwrap();
        let cost = |w: &Mat<f64>| {
            let y = &x * w.transpose();
            let mut c = 0.0;
            for i in 0..t {
                for j in 0..2 {
                    c += (y[(i, j)] - d[(i, j)]).powi(2);
                }
            }
            c + lambda * w.norm_l2().powi(2)
        };
        let best = cost(&model.w_out);
        let mut rng = SeededRng::new(seed ^ 0xabc);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..2 * n).map(|_| rng.normal()).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dir = Mat::from_fn(2, n, |i, j| raw[i * n + j] * 1e-3 / norm);
            let perturbed = &model.w_out + &dir;
            prop_assert!(cost(&perturbed) >= best - 1e-12 * best.max(1.0));
        }
    }

    #[test]
    fn ridge_shrinks_monotonically(seed in any::<u64>(), l1 in 0.0f64..5.0, dl in 0.0f64..5.0) {
        let x = mat(25, 6, seed);
        let d = mat(25, 6, seed ^ 7);
        let a = train_ridge(&x, d.as_ref(), l1).unwrap().w_out.norm_l2();
        let b = train_ridge(&x, d.as_ref(), l1 + dl).unwrap().w_out.norm_l2();
        prop_assert!(a >= b - 1e-12);
    }

    #[test]
    fn readout_is_linear(seed in any::<u64>(), t in 1usize..20) {
        let model = train_ridge(&mat(30, 5, seed), mat(30, 6, seed ^ 1).as_ref(), 0.1).unwrap();
        let a = mat(t, 5, seed ^ 2);
        let b = mat(t, 5, seed ^ 3);
        let sum = &a + &b;
        let ya = apply_readout(&model, &a).unwrap();
        let yb = apply_readout(&model, &b).unwrap();
        let ys = apply_readout(&model, &sum).unwrap();
        for i in 0..t {
            for j in 0..6 {
                prop_assert!((ys[(i, j)] - ya[(i, j)] - yb[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nmse_laws(
        d in proptest::collection::vec(-10.0f64..10.0, 2..50),
        noise in proptest::collection::vec(-1.0f64..1.0, 50),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -5.0f64..5.0,
        c in -3.0f64..3.0,
    ) {
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        prop_assume!(var > 1e-6);
        let y: Vec<f64> = d.iter().zip(&noise).map(|(v, e)| v + e).collect();
        let base = nmse(&y, &d).unwrap();
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let da: Vec<f64> = d.iter().map(|v| a * v + b).collect();
        prop_assert!((nmse(&ya, &da).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        let shifted: Vec<f64> = d.iter().map(|v| v + c).collect();
        prop_assert!((nmse(&shifted, &d).unwrap() - c * c / var).abs() <= 1e-9 * (c * c / var).max(1.0));
        prop_assert_eq!(nmse(&d, &d).unwrap(), 0.0);
        prop_assert!((nmse(&vec![mean; d.len()], &d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_is_invariant_under_monotone_maps_and_shifts(
        rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 6), 1..20),
        scale in 0.01f64..10.0,
        shift in proptest::collection::vec(-50.0f64..50.0, 1),
    ) {
        let m = Mat::from_fn(rows.len(), 6, |i, j| rows[i][j]);
        let base: Vec<usize> = classify_frames(m.as_ref()).unwrap().iter().map(|f| f.class_index).collect();
        let maps: [&dyn Fn(f64) -> f64; 3] = [&|v| v.atan(), &|v| scale * v + shift[0], &|v| v * v * v];
        for f in maps {
            let mm = Mat::from_fn(rows.len(), 6, |i, j| f(rows[i][j]));
            let got: Vec<usize> = classify_frames(mm.as_ref()).unwrap().iter().map(|d| d.class_index).collect();
            prop_assert_eq!(&got, &base);
        }
        // Shared per-sequence constant vector added to every row leaves
        // decisions unchanged only when it is constant across classes.
        let mm = Mat::from_fn(rows.len(), 6, |i, j| rows[i][j] + shift[0]);
        let got: Vec<usize> = classify_frames(mm.as_ref()).unwrap().iter().map(|d| d.class_index).collect();
        prop_assert_eq!(got, base);
    }

    #[test]
    fn confusion_is_row_stochastic_and_permutation_equivariant(
        pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..80),
        perm_seed in any::<u64>(),
    ) {
        let mut perm: Vec<usize> = (0..6).collect();
        SeededRng::new(perm_seed).shuffle(&mut perm);
        let mk = |pairs: &[(usize, usize)], p: &[usize]| {
            let truths: Vec<Action> = pairs.iter().map(|&(t, _)| Action::from_index(p[t]).unwrap()).collect();
            let decisions: Vec<SequenceDecision> = pairs
                .iter()
                .map(|&(_, d)| SequenceDecision { sequence_id: String::new(), class_index: p[d], frame_fractions: [0.0; 6] })
                .collect();
            confusion(&decisions, &truths).unwrap()
        };
        let identity: Vec<usize> = (0..6).collect();
        let cm = mk(&pairs, &identity);
        let pm = mk(&pairs, &perm);
        prop_assert!((0.0..=600.0).contains(&cm.score));
        prop_assert!((cm.score - pm.score).abs() < 1e-9);
        for i in 0..6 {
            let s: f64 = cm.p[i].iter().sum();
            let populated = cm.counts[i].iter().sum::<u64>() > 0;
            let ok = if populated { (s - 100.0).abs() < 1e-9 } else { s == 0.0 };
            prop_assert!(ok);
            for j in 0..6 {
                prop_assert_eq!(cm.p[i][j], pm.p[perm[i]][perm[j]]);
            }
        }
        let diagonal = (0..6).all(|i| (0..6).all(|j| i == j || cm.counts[i][j] == 0));
        let populated = cm.populated_rows() as f64;
        prop_assert_eq!(diagonal, (cm.score - 100.0 * populated).abs() < 1e-9);
    }

    #[test]
    fn sequence_vote_fractions_sum_to_one(classes in proptest::collection::vec(0usize..6, 1..200)) {
        let frames: Vec<FrameDecision> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| FrameDecision { frame_index: i, class_index: c, outputs: [0.0; 6] })
            .collect();
        let s = classify_sequence("s", &frames).unwrap();
        prop_assert!((s.frame_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = s.frame_fractions[s.class_index];
        prop_assert!(s.frame_fractions.iter().all(|&f| f <= best));
        prop_assert!(s.frame_fractions[..s.class_index].iter().all(|&f| f < best));
    }

    #[test]
    fn quantizers_are_idempotent_and_on_grid(x in -100.0f64..100.0, y in -2.0f64..3.0) {
        let q = QuantizerSpec::default();
        let p = q.phase(x);
        prop_assert_eq!(q.phase(p), p);
        prop_assert!((0.0..std::f64::consts::TAU).contains(&p));
        prop_assert_eq!(p, q.phase_level(x) as f64 * q.phase_step());
        let i = q.intensity(y);
        prop_assert_eq!(q.intensity(i), i);
        prop_assert_eq!(i * 1023.0, (i * 1023.0).round());
    }

    #[test]
    fn steps_stay_on_grid_and_compose(seed in any::<u64>(), phase in any::<bool>()) {
        let params = HyperParams { alpha: 0.8, beta: 0.5, gamma: 0.4, rho: 0.3, n: 6, k: 3, seed };
        let m = generate_matrices(&params).unwrap();
        let q = QuantizerSpec::default();
        let variant = if phase { Variant::Phase } else { Variant::Intensity };
        let mut rng = SeededRng::new(seed);
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.symmetric() * 3.0).collect()).collect();
        let start = ReservoirState::zeros(6, variant);
        let traj = run_reservoir(&m, &q, &inputs, &start).unwrap();
        let mut s = start;
        for (t, u) in inputs.iter().enumerate() {
            s = if phase { step_phase(&s, &m, &q, u) } else { step_intensity(&s, &m, &q, u) }.unwrap();
            for (i, &v) in s.x.iter().enumerate() {
                prop_assert_eq!(traj[(t, i)], v);
                if phase {
                    prop_assert_eq!(q.phase(v), v);
                } else {
                    prop_assert_eq!(q.intensity(v), v);
                }
            }
        }
        prop_assert_eq!(s.time_step, 3);
        // Sparsity and diagonal are untouched by simulation.
        prop_assert!((0..6).all(|i| m.interconnect(i, i) == 0.8));
    }
}

#[test]
fn ridge_interpolates_when_rows_are_fewer_than_columns() {
    let x = mat(100, 1024, 1);
    let d = mat(100, 6, 2);
    let model = train_ridge(&x, d.as_ref(), 0.0).unwrap();
    let y = apply_readout(&model, &x).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100 {
        for j in 0..6 {
            worst = worst.max((y[(i, j)] - d[(i, j)]).abs());
        }
    }
    assert!(worst <= 1e-6, "max |y - d| = {worst}");
}

#[test]
fn ridge_oracle_on_a_50_by_20_system() {
    let x = mat(50, 20, 3);
    let d = mat(50, 6, 4);
    let model = train_ridge(&x, d.as_ref(), 0.1).unwrap();
    let w = ridge_oracle(&to_dense(&x), &to_dense(&d), 0.1).unwrap();
    assert!(max_abs_diff(&to_dense(&model.w_out).concat(), &w.concat()) < 1e-8);
}
