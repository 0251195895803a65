//! Forecast error metrics and closest-model credit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regressors::Family;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub n: usize,
}

/// R² is `1 - SS_res / SS_tot`, unbounded below. A constant `y_true` scores 0.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    Ok(metrics(y_true, y_pred)?.r2)
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "{} targets but {} forecasts",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Data("metrics need at least one forecast".into()));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let (mut ss_res, mut ss_tot, mut abs) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - mean) * (t - mean);
        abs += (t - p).abs();
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    Ok(Metrics {
        rmse: (ss_res / n).sqrt(),
        mae: abs / n,
        r2,
        n: y_true.len(),
    })
}

/// Share of rows (in percent) on which each family had the smallest absolute
/// error. Ties split the row's credit equally.
pub fn closest_model_stats(forecasts: &BTreeMap<Family, Vec<f64>>, y_true: &[f64]) -> Result<BTreeMap<Family, f64>> {
    if let Some((f, v)) = forecasts.iter().find(|(_, v)| v.len() != y_true.len()) {
        return Err(Error::Data(format!(
            "{f} has {} forecasts for {} rows",
            v.len(),
            y_true.len()
        )));
    }
    let mut credit: BTreeMap<Family, f64> = forecasts.keys().map(|&f| (f, 0.0)).collect();
    if y_true.is_empty() || forecasts.is_empty() {
        return Ok(credit);
    }
    for (i, t) in y_true.iter().enumerate() {
        let best = forecasts
            .values()
            .map(|v| (v[i] - t).abs())
            .fold(f64::INFINITY, f64::min);
        let winners: Vec<Family> = forecasts
            .iter()
            .filter(|(_, v)| (v[i] - t).abs() == best)
            .map(|(f, _)| *f)
            .collect();
        let share = 1.0 / winners.len() as f64;
        for f in winners {
            *credit.get_mut(&f).unwrap() += share;
        }
    }
    let n = y_true.len() as f64;
    credit.values_mut().for_each(|c| *c *= 100.0 / n);
    Ok(credit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean_forecasts() {
        let y = [1.0, 4.0, 2.0, 8.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, 1.0));
        let mean = [3.75; 4];
        assert!(metrics(&y, &mean).unwrap().r2.abs() < 1e-15);
    }

    #[test]
    fn three_point_fixture() {
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.r2, 0.0);
    }

    #[test]
    fn constant_truth_and_errors() {
        assert_eq!(metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap().r2, 0.0);
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn closest_model_credit() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let mut f = BTreeMap::new();
        f.insert(Family::Linear, vec![1.0, 2.5, 3.0, 0.0]);
        f.insert(Family::Svr, vec![0.0, 2.5, 3.5, 4.0]);
        f.insert(Family::Tree, vec![5.0, 0.0, 3.0, 9.0]);
        // row 0: LR; row 1: LR/SVR tie; row 2: LR/DT tie; row 3: SVR
        let c = closest_model_stats(&f, &y).unwrap();
        assert!((c[&Family::Linear] - 50.0).abs() < 1e-12);
        assert!((c[&Family::Svr] - 37.5).abs() < 1e-12);
        assert!((c[&Family::Tree] - 12.5).abs() < 1e-12);

        let same: BTreeMap<Family, Vec<f64>> = Family::ALL.iter().map(|&k| (k, vec![0.0; 4])).collect();
        let c = closest_model_stats(&same, &y).unwrap();
        assert!(c.values().all(|v| (v - 20.0).abs() < 1e-12));
    }
}
