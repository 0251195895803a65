use proptest::prelude::*;
use sessioncast::features::{FeatureId, N_FEATURES};
use sessioncast::matrix::Matrix;
use sessioncast::regressors::svr::{solve_dual, DualSolution};
use sessioncast::regressors::tree::Node;
use sessioncast::regressors::*;

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // adjugate: cofactor of (j, i)
            let r0: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let minor = m[r0[0]][c[0]] * m[r0[1]][c[1]] - m[r0[0]][c[1]] * m[r0[1]][c[0]];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[i][j] = sign * minor / det;
        }
    }
    inv
}

#[test]
fn ols_matches_explicit_normal_equations() {
    let rows = [
        [0.3, 1.7],
        [1.1, -0.4],
        [2.6, 0.9],
        [-0.8, 2.2],
        [1.9, 1.4],
        [0.4, -1.3],
    ];
    let y = [2.1, 0.7, 3.9, 1.2, 3.3, -0.6];
    // oracle: [1 x] design, beta = (A'A)^-1 A'y
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (r, t) in rows.iter().zip(&y) {
        let a = [1.0, r[0], r[1]];
        for i in 0..3 {
            aty[i] += a[i] * t;
            for j in 0..3 {
                ata[i][j] += a[i] * a[j];
            }
        }
    }
    let inv = invert3(ata);
    let beta: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv[i][j] * aty[j]).sum()).collect();

    let m = ols_fit(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
    let (b0, b) = m.raw_coefficients();
    assert!((b0 - beta[0]).abs() < 1e-8, "{b0} vs {}", beta[0]);
    assert!((b[0] - beta[1]).abs() < 1e-8);
    assert!((b[1] - beta[2]).abs() < 1e-8);
}

#[test]
fn linear_model_at_standardized_origin_returns_intercept() {
    let x = Matrix::from_rows(&[[1.0, 4.0], [2.0, 1.0], [5.0, 2.0], [3.0, 3.0]]).unwrap();
    let m = ols_fit(&x, &[1.0, 2.0, 6.0, 3.5]).unwrap();
    let origin = m.mean.clone();
    assert!((m.predict_row(&origin) - m.intercept).abs() < 1e-12);
}

/// Projected accelerated gradient on the (alpha, alpha*) dual. The projection
/// onto the box intersected with the balance hyperplane is found by bisection
/// on the hyperplane multiplier.
fn dual_oracle(k: &Matrix, y: &[f64], c: f64, eps: f64) -> f64 {
    let n = y.len();
    let a = |t: usize| if t < n { 1.0 } else { -1.0 };
    let objective = |u: &[f64]| {
        let beta: Vec<f64> = (0..n).map(|i| u[i] - u[i + n]).collect();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += beta[i] * k.get(i, j) * beta[j];
            }
        }
        0.5 * q + eps * u.iter().sum::<f64>() - y.iter().zip(&beta).map(|(t, b)| t * b).sum::<f64>()
    };
    let grad = |u: &[f64]| {
        let beta: Vec<f64> = (0..n).map(|i| u[i] - u[i + n]).collect();
        let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * beta[j]).sum()).collect();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = kb[i] + eps - y[i];
            g[i + n] = -kb[i] + eps + y[i];
        }
        g
    };
    let project = |v: &[f64]| {
        let at = |nu: f64| -> (Vec<f64>, f64) {
            let u: Vec<f64> = (0..2 * n).map(|t| (v[t] - nu * a(t)).clamp(0.0, c)).collect();
            let s = (0..2 * n).map(|t| a(t) * u[t]).sum();
            (u, s)
        };
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi)).0
    };
    let lipschitz = 2.0
        * (0..n)
            .map(|i| (0..n).map(|j| k.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let mut u = vec![0.0; 2 * n];
    let mut z = u.clone();
    let mut t = 1.0f64;
    for _ in 0..50_000 {
        let g = grad(&z);
        let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / lipschitz).collect();
        let next = project(&step);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = next
            .iter()
            .zip(&u)
            .map(|(nx, ux)| nx + (t - 1.0) / t_next * (nx - ux))
            .collect();
        u = next;
        t = t_next;
    }
    objective(&u)
}

fn rbf_fixture() -> (Matrix, Vec<f64>) {
    let xs: Vec<f64> = (0..20).map(|i| -2.0 + 0.2 * i as f64).collect();
    let y: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin() + 0.3 * x).collect();
    let gamma = 0.7;
    let mut k = Matrix::zeros(20, 20);
    for i in 0..20 {
        for j in 0..20 {
            k.set(i, j, (-gamma * (xs[i] - xs[j]).powi(2)).exp());
        }
    }
    (k, y)
}

fn direct_objective(k: &Matrix, y: &[f64], eps: f64, s: &DualSolution) -> f64 {
    let beta = s.coef();
    let n = y.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += beta[i] * k.get(i, j) * beta[j];
        }
    }
    0.5 * q + eps * (s.alpha.iter().sum::<f64>() + s.alpha_star.iter().sum::<f64>())
        - y.iter().zip(&beta).map(|(t, b)| t * b).sum::<f64>()
}

#[test]
fn smo_objective_matches_projected_gradient_oracle() {
    let (k, y) = rbf_fixture();
    for (c, eps) in [(1.0, 0.1), (10.0, 0.05), (0.5, 0.2)] {
        let sol = solve_dual(&k, &y, c, eps, 1e-3, 1_000_000);
        assert!(sol.converged);
        let oracle = dual_oracle(&k, &y, c, eps);
        let direct = direct_objective(&k, &y, eps, &sol);
        assert!((direct - sol.objective).abs() <= 1e-9 * direct.abs().max(1.0));
        let rel = (sol.objective - oracle).abs() / oracle.abs();
        assert!(rel <= 1e-3, "C={c} eps={eps}: smo {} oracle {oracle}", sol.objective);
        let balance: f64 = sol.coef().iter().sum();
        assert!(balance.abs() < 1e-9);
    }
}

#[test]
fn one_round_boosting_equals_single_cart_on_centered_target() {
    let rows: Vec<[f64; 2]> = (0..25).map(|i| [(i % 6) as f64, ((i * 11) % 7) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1] - 2.0 * r[0] + 0.1 * (r[1] * 3.0).cos()).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = BoostParams {
        n_rounds: 1,
        learning_rate: 1.0,
        max_depth: None,
        subsample: 1.0,
        colsample: 1.0,
        min_split_loss: 0.0,
    };
    let b = gbdt_fit(&x, &y, &p, 0).unwrap();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let t = dt_fit(&x, &centered, &TreeParams::default()).unwrap();
    for (r, (yv, cv)) in x.iter_rows().zip(y.iter().zip(&centered)) {
        let boost_resid = yv - b.predict_row(r);
        let cart_resid = cv - t.predict_row(r);
        assert!((boost_resid - cart_resid).abs() < 1e-9);
    }
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum()
}

/// Exhaustive best split: returns (feature, threshold, left mean, right mean).
fn best_stump(rows: &[Vec<f64>], y: &[f64]) -> (usize, f64, f64, f64) {
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<f64>, Vec<f64>) = {
                let mut l = Vec::new();
                let mut r = Vec::new();
                for (row, t) in rows.iter().zip(y) {
                    if row[f] <= thr {
                        l.push(*t)
                    } else {
                        r.push(*t)
                    }
                }
                (l, r)
            };
            let cost = sse(&l) + sse(&r);
            if best.is_none_or(|b| cost < b.0 - 1e-12) {
                best = Some((cost, f, thr));
            }
        }
    }
    let (_, f, thr) = best.unwrap();
    let mean = |sel: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| sel(r[f])).map(|(_, t)| *t).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (f, thr, mean(&|v| v <= thr), mean(&|v| v > thr))
}

#[test]
fn dt_root_threshold_matches_exhaustive_search() {
    let xs = [0.5, 3.2, 1.1, 7.4, 2.8, 6.0, 4.4, 9.3];
    let y = [1.0, 4.0, 1.5, 9.0, 3.7, 8.2, 4.1, 12.0];
    let rows: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
    let (_, thr, _, _) = best_stump(&rows, &y);
    let t = dt_fit(&Matrix::new(8, 1, xs.to_vec()).unwrap(), &y, &TreeParams::default()).unwrap();
    match &t.nodes[0] {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(*feature, 0);
            assert!((threshold - thr).abs() < 1e-12, "{threshold} vs {thr}");
        }
        Node::Leaf { .. } => panic!("root should split"),
    }
}

#[test]
fn two_round_stump_boosting_matches_hand_trace() {
    let rows = vec![
        vec![1.0, 5.0],
        vec![2.0, 3.0],
        vec![3.0, 6.0],
        vec![4.0, 1.0],
        vec![5.0, 4.0],
        vec![6.0, 2.0],
    ];
    let y = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0];
    let eta = 0.5;
    let base = y.iter().sum::<f64>() / 6.0;
    let mut pred = vec![base; 6];
    for _ in 0..2 {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let (f, thr, lm, rm) = best_stump(&rows, &resid);
        for (p, r) in pred.iter_mut().zip(&rows) {
            *p += eta * if r[f] <= thr { lm } else { rm };
        }
    }
    let p = BoostParams {
        n_rounds: 2,
        learning_rate: eta,
        max_depth: Some(1),
        subsample: 1.0,
        colsample: 1.0,
        min_split_loss: 0.0,
    };
    let m = gbdt_fit(&Matrix::from_rows(&rows).unwrap(), &y, &p, 3).unwrap();
    for (r, want) in rows.iter().zip(&pred) {
        let got = m.predict_row(r);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let traced = m.base_score + eta * m.trees.iter().map(|t| t.predict_row(r)).sum::<f64>();
        assert!((got - traced).abs() < 1e-12);
    }
}

#[test]
fn importance_matches_hand_computed_reductions() {
    let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
    let y = [0.0, 2.0, 10.0, 10.0];
    // root on column 0 removes 81 of the 83 total SSE, the left child split removes 2
    let data = TrainData::new(&x, &y).unwrap();
    let m = fit_family(&FamilyParams::Tree(TreeParams::default()), &data, &[1.0; 4], &[0, 1], 0).unwrap();
    let imp = m.feature_importance().unwrap();
    assert!((imp[0] - 81.0 / 83.0).abs() < 1e-12);
    assert!((imp[1] - 2.0 / 83.0).abs() < 1e-12);
}

#[test]
fn single_feature_tree_has_full_importance() {
    let x = Matrix::new(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let data = TrainData::new(&x, &[1.0, 1.0, 2.0, 5.0, 5.0]).unwrap();
    let m = fit_family(&FamilyParams::Tree(TreeParams::default()), &data, &[1.0; 5], &[0], 0).unwrap();
    assert_eq!(m.feature_importance().unwrap(), vec![1.0]);
}

#[test]
fn stump_boosting_on_hour_only() {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let mut r = vec![1.0; N_FEATURES];
        r[FeatureId::Hour.index()] = (i % 24) as f64;
        y.push(if i % 24 < 12 { 4.0 } else { 10.0 } + (i % 3) as f64 * 0.1);
        rows.push(r);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let data = TrainData::new(&x, &y).unwrap();
    let p = BoostParams {
        n_rounds: 10,
        learning_rate: 0.3,
        max_depth: Some(1),
        subsample: 1.0,
        colsample: 1.0,
        min_split_loss: 0.0,
    };
    let all: Vec<usize> = (0..N_FEATURES).collect();
    let m = fit_family(&FamilyParams::Boosted(p), &data, &vec![1.0; 40], &all, 0).unwrap();
    let imp = m.importance_by_feature().unwrap();
    assert!((imp[&FeatureId::Hour] - 1.0).abs() < 1e-12);
    assert_eq!(imp.values().filter(|v| **v > 0.0).count(), 1);
}

#[test]
fn unsplit_model_has_zero_importance() {
    let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
    let data = TrainData::new(&x, &[2.0, 2.0, 2.0]).unwrap();
    let m = fit_family(&FamilyParams::Tree(TreeParams::default()), &data, &[1.0; 3], &[0], 0).unwrap();
    assert_eq!(m.feature_importance().unwrap(), vec![0.0]);
}

#[test]
fn forest_batch_equals_loop() {
    let rows: Vec<[f64; 3]> = (0..50)
        .map(|i| [(i % 5) as f64, (i % 7) as f64 * 0.5, ((i * 13) % 17) as f64])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] + r[1] * r[2]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = ForestParams {
        n_trees: 7,
        max_depth: Some(4),
        min_samples_split: 2,
        min_samples_leaf: 2,
        bootstrap: true,
    };
    let m = Model::Forest(rf_fit(&x, &y, &p, 5).unwrap());
    let batch = m.predict(&x).unwrap();
    for (r, b) in x.iter_rows().zip(batch) {
        assert_eq!(m.predict_row(r).unwrap(), b);
    }
}

fn leaf_counts(t: &TreeModel, x: &Matrix) -> Vec<usize> {
    let mut counts = vec![0; t.nodes.len()];
    for r in x.iter_rows() {
        let mut i = 0;
        loop {
            match &t.nodes[i] {
                Node::Leaf { .. } => break,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if r[*feature] <= *threshold { *left } else { *right },
            }
        }
        counts[i] += 1;
    }
    t.nodes
        .iter()
        .zip(counts)
        .filter(|(n, _)| matches!(n, Node::Leaf { .. }))
        .map(|(_, c)| c)
        .collect()
}

fn dataset(max_rows: usize, cols: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (3..max_rows).prop_flat_map(move |n| {
        (
            proptest::collection::vec(proptest::collection::vec(-5i32..6, cols), n),
            proptest::collection::vec(-20.0f64..20.0, n),
        )
            .prop_map(|(rows, y)| {
                (
                    rows.into_iter()
                        .map(|r| r.into_iter().map(f64::from).collect())
                        .collect(),
                    y,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ols_residuals_are_orthogonal_to_standardized_columns((rows, y) in dataset(30, 3)) {
        let x = Matrix::from_rows(&rows).unwrap();
        let m = ols_fit(&x, &y).unwrap();
        let n = y.len() as f64;
        for (k, &c) in m.features.iter().enumerate() {
            let dot: f64 = x
                .iter_rows()
                .zip(&y)
                .map(|(r, t)| (t - m.predict_row(r)) * (r[c] - m.mean[k]) / m.scale[k])
                .sum();
            prop_assert!(dot.abs() <= 1e-6 * n, "column {c}: {dot}");
        }
    }

    #[test]
    fn cart_respects_min_samples_leaf_and_depth(
        (rows, y) in dataset(40, 2),
        leaf in 1usize..5,
        depth in 0usize..5,
    ) {
        let x = Matrix::from_rows(&rows).unwrap();
        for criterion in [Criterion::SquaredError, Criterion::FriedmanMse, Criterion::AbsoluteError] {
            let p = TreeParams { criterion, max_depth: Some(depth), min_samples_split: 2, min_samples_leaf: leaf };
            let t = dt_fit(&x, &y, &p).unwrap();
            prop_assert!(t.depth() <= depth);
            // the root is a leaf regardless of size; children must respect the limit
            if t.nodes.len() > 1 {
                for c in leaf_counts(&t, &x) {
                    prop_assert!(c >= leaf);
                }
            }
        }
    }

    #[test]
    fn boosting_loss_is_monotone((rows, y) in dataset(40, 3), seed in 0u64..1000) {
        let x = Matrix::from_rows(&rows).unwrap();
        let p = BoostParams {
            n_rounds: 8,
            learning_rate: 0.3,
            max_depth: Some(2),
            subsample: 1.0,
            colsample: 1.0,
            min_split_loss: 0.0,
        };
        let m = gbdt_fit(&x, &y, &p, seed).unwrap();
        for w in m.train_mse.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn seeded_fits_are_bit_reproducible((rows, y) in dataset(30, 2), seed in 0u64..1000) {
        let x = Matrix::from_rows(&rows).unwrap();
        let f = ForestParams { n_trees: 4, max_depth: Some(3), min_samples_split: 2, min_samples_leaf: 1, bootstrap: true };
        prop_assert_eq!(rf_fit(&x, &y, &f, seed).unwrap(), rf_fit(&x, &y, &f, seed).unwrap());
        let b = BoostParams { n_rounds: 5, learning_rate: 0.2, max_depth: Some(2), subsample: 0.8, colsample: 0.5, min_split_loss: 0.0 };
        prop_assert_eq!(gbdt_fit(&x, &y, &b, seed).unwrap(), gbdt_fit(&x, &y, &b, seed).unwrap());
    }

    #[test]
    fn svr_satisfies_kkt_conditions(
        (rows, y) in dataset(25, 2),
        c in prop_oneof![Just(0.5), Just(5.0)],
        eps in prop_oneof![Just(0.1), Just(1.0)],
        rbf in any::<bool>(),
    ) {
        let x = Matrix::from_rows(&rows).unwrap();
        let p = SvrParams {
            c,
            gamma: 0.5,
            epsilon: eps,
            kernel: if rbf { Kernel::Rbf } else { Kernel::Linear },
            row_cap: 1000,
        };
        let m = svr_fit(&x, &y, &p, 0).unwrap();
        prop_assert!(m.converged);
        let tol = 2e-3;
        let mut coef = vec![0.0; y.len()];
        for (&i, &a) in m.support_indices.iter().zip(&m.dual_coef) {
            coef[i] = a;
            prop_assert!(a.abs() <= c + 1e-12);
        }
        for (i, r) in x.iter_rows().enumerate() {
            let resid = (y[i] - m.predict_row(r)).abs();
            if coef[i].abs() < c - 1e-12 {
                prop_assert!(resid <= eps + tol, "row {i}: |r|={resid} coef={}", coef[i]);
            }
            if coef[i].abs() >= c - 1e-12 {
                prop_assert!(resid >= eps - tol, "row {i}: |r|={resid} at bound");
            }
        }
    }
}
