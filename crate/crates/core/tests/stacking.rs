use rand::Rng;
use sessioncast::matrix::Matrix;
use sessioncast::regressors::*;
use sessioncast::seeding;
use sessioncast::stacking::*;
use sessioncast::tuning::{CvPlan, HyperGrid};

fn fixture(seed: u64, n: usize, cols: usize) -> (Matrix, Vec<f64>) {
    let mut rng = seeding::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r[0] * 2.0 + (r[1] * 2.0).sin() + rng.random_range(-0.2..0.2))
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn small_boost_grid() -> HyperGrid {
    HyperGrid::Boosted {
        n_rounds: vec![20],
        learning_rate: vec![0.2],
        max_depth: vec![2],
        subsample: vec![1.0],
        colsample: vec![1.0],
        min_split_loss: vec![0.0],
    }
}

fn bases(columns: &[usize]) -> Vec<BaseSpec> {
    let c = columns.to_vec();
    vec![
        BaseSpec {
            params: FamilyParams::Linear,
            columns: c.clone(),
        },
        BaseSpec {
            params: FamilyParams::Svr(SvrParams {
                c: 10.0,
                gamma: 0.1,
                epsilon: 0.1,
                kernel: Kernel::Rbf,
                row_cap: 500,
            }),
            columns: c.clone(),
        },
        BaseSpec {
            params: FamilyParams::Tree(TreeParams {
                max_depth: Some(4),
                ..TreeParams::default()
            }),
            columns: c.clone(),
        },
        BaseSpec {
            params: FamilyParams::Forest(ForestParams {
                n_trees: 10,
                max_depth: Some(4),
                min_samples_split: 2,
                min_samples_leaf: 1,
                bootstrap: true,
            }),
            columns: c.clone(),
        },
        BaseSpec {
            params: FamilyParams::Boosted(BoostParams {
                n_rounds: 20,
                learning_rate: 0.2,
                max_depth: Some(2),
                subsample: 1.0,
                colsample: 1.0,
                min_split_loss: 0.0,
            }),
            columns: c,
        },
    ]
}

#[test]
fn perfect_base_forecasts_give_a_perfect_meta_model() {
    let (x, y) = fixture(1, 120, 3);
    let data = TrainData::new(&x, &y).unwrap();
    let oracle = Matrix::from_rows(&y.iter().map(|v| [*v; 5]).collect::<Vec<_>>()).unwrap();
    let grid = HyperGrid::Boosted {
        n_rounds: vec![100],
        learning_rate: vec![1.0],
        max_depth: vec![8],
        subsample: vec![1.0],
        colsample: vec![1.0],
        min_split_loss: vec![0.0],
    };
    let meta = fit_meta(&oracle, &data, &[0, 1, 2], &grid, 5, None, 0).unwrap();
    let meta_x = oracle.hstack(&x).unwrap();
    let pred: Vec<f64> = meta_x.iter_rows().map(|r| meta.predict_row(r).unwrap()).collect();
    let mse: f64 = pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64;
    assert!(mse < 1e-6, "{mse}");
}

#[test]
fn meta_layout_width() {
    let (x, y) = fixture(2, 80, 9);
    let data = TrainData::new(&x, &y).unwrap();
    let plan = CvPlan::contiguous(80, 5).unwrap();
    let mut specs = bases(&[0, 1, 2, 3]);
    specs[2].columns = vec![2, 5, 6];
    specs[4].columns = vec![7];
    let e = stack_fit(&data, &plan, &specs, &small_boost_grid(), None, 3).unwrap();
    assert_eq!(e.original_columns, vec![0, 1, 2, 3, 5, 6, 7]);
    assert_eq!(e.meta_width(), 12);
    assert_eq!(e.summary().layout.len(), 12);
}

#[test]
fn out_of_fold_forecasts_ignore_own_target() {
    let (x, mut y) = fixture(3, 60, 2);
    let plan = CvPlan::contiguous(60, 5).unwrap();
    let specs = bases(&[0, 1]);
    let before = out_of_fold(&TrainData::new(&x, &y).unwrap(), &plan, &specs, 5).unwrap();
    for i in [0, 17, 33, 59] {
        let saved = y[i];
        y[i] += 250.0;
        let after = out_of_fold(&TrainData::new(&x, &y).unwrap(), &plan, &specs, 5).unwrap();
        assert_eq!(before.row(i), after.row(i), "row {i}");
        y[i] = saved;
    }
}

#[test]
fn constant_data_predicts_the_constant() {
    let (x, _) = fixture(4, 60, 2);
    let y = vec![7.5; 60];
    let data = TrainData::new(&x, &y).unwrap();
    let plan = CvPlan::contiguous(60, 5).unwrap();
    let e = stack_fit(&data, &plan, &bases(&[0, 1]), &small_boost_grid(), None, 0).unwrap();
    for r in x.iter_rows().take(10) {
        assert!((e.predict_row(r).unwrap() - 7.5).abs() < 1e-6);
    }
}

#[test]
fn prediction_is_the_manually_assembled_meta_forecast() {
    let (x, y) = fixture(5, 80, 3);
    let data = TrainData::new(&x, &y).unwrap();
    let plan = CvPlan::contiguous(80, 5).unwrap();
    let e = stack_fit(&data, &plan, &bases(&[0, 2]), &small_boost_grid(), Some(60), 8).unwrap();
    let batch = e.predict(&x).unwrap();
    for (r, b) in x.iter_rows().zip(batch) {
        let forecasts: Vec<f64> = e.bases.iter().map(|m| m.predict_row(r).unwrap()).collect();
        let mut meta_row = forecasts.clone();
        meta_row.extend(e.original_columns.iter().map(|&c| r[c]));
        let blend: f64 = forecasts.iter().zip(&e.meta.weights).map(|(f, w)| f * w).sum();
        let correction = if e.meta.corrects { e.meta.model.predict_row(&meta_row).unwrap() } else { 0.0 };
        let manual = blend + correction;
        assert_eq!(manual, b);
        assert_eq!(e.predict_row(r).unwrap(), b);
    }
    assert!(matches!(
        e.predict_row(&[1.0]),
        Err(sessioncast::Error::DimensionMismatch { .. })
    ));
}
