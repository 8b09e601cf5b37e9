//! Regression metrics: coefficient of determination, recall within ±k
//! years, signed bias, and the per-run [`MetricsReport`].

use serde::{Deserialize, Serialize};

use crate::dataset::{stack_pixels, LabeledImage, ViewSelector, MAX_AGE_YEARS};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::real::Real;

fn check_pairs(op: &'static str, a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    if a.len() < min_len {
        return Err(Error::invalid(
            op,
            format!("need at least {min_len} pairs, got {}", a.len()),
        ));
    }
    Ok(())
}

/// `1 − SS_residual / SS_total`, using the targets' own mean.
pub fn r_squared(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs("r_squared", preds, targets, 2)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r_squared", "targets are all equal (SS_total = 0)"));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of pairs with `|pred − real| ≤ k` (inclusive bound).
pub fn recall_within(pred_ages: &[f64], real_ages: &[f64], k: f64) -> Result<f64> {
    check_pairs("recall_within", pred_ages, real_ages, 1)?;
    if k.is_nan() || k <= 0.0 {
        return Err(Error::invalid("recall_within", format!("band {k} must be positive")));
    }
    let hits = pred_ages
        .iter()
        .zip(real_ages)
        .filter(|(p, r)| (*p - *r).abs() <= k)
        .count();
    Ok(hits as f64 / pred_ages.len() as f64)
}

/// Mean of `pred − real`; positive means the model overestimates.
pub fn mean_signed_error(pred_ages: &[f64], real_ages: &[f64]) -> Result<f64> {
    check_pairs("mean_signed_error", pred_ages, real_ages, 1)?;
    Ok(pred_ages.iter().zip(real_ages).map(|(p, r)| p - r).sum::<f64>() / pred_ages.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mse_normalized: f64,
    pub r_squared: f64,
    pub recall_pm4: f64,
    pub recall_pm9: f64,
    pub mean_signed_error_years: f64,
    pub view: ViewSelector,
}

impl MetricsReport {
    /// Builds a report from normalized predictions and real ages in years.
    pub fn from_predictions(pred_normalized: &[f64], real_years: &[f64], view: ViewSelector) -> Result<Self> {
        check_pairs("evaluate", pred_normalized, real_years, 1)?;
        let n = real_years.len();
        let real_norm: Vec<f64> = real_years.iter().map(|a| a / MAX_AGE_YEARS).collect();
        let pred_years: Vec<f64> = pred_normalized.iter().map(|p| p * MAX_AGE_YEARS).collect();
        let mse_normalized = pred_normalized
            .iter()
            .zip(&real_norm)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64;
        Ok(MetricsReport {
            n,
            mse_normalized,
            r_squared: r_squared(pred_normalized, &real_norm)?,
            recall_pm4: recall_within(&pred_years, real_years, 4.0)?,
            recall_pm9: recall_within(&pred_years, real_years, 9.0)?,
            mean_signed_error_years: mean_signed_error(&pred_years, real_years)?,
            view,
        })
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "view={} n={} mse={:.6} r2={:.4} recall±4={:.4} recall±9={:.4} bias={:+.2}y",
            self.view.as_str(),
            self.n,
            self.mse_normalized,
            self.r_squared,
            self.recall_pm4,
            self.recall_pm9,
            self.mean_signed_error_years
        )
    }
}

/// Sigmoid outputs (normalized ages) for `items`, in order, evaluated in
/// batches of `batch_size`.
pub fn predict_normalized<T: Real>(net: &Network<T>, items: &[LabeledImage<T>], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let refs: Vec<&LabeledImage<T>> = chunk.iter().collect();
        let batch = stack_pixels(&refs)?;
        out.extend(net.forward(&batch)?.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Runs the network over `items` and assembles every metric.
pub fn evaluate<T: Real>(net: &Network<T>, items: &[LabeledImage<T>], view: ViewSelector) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::invalid("evaluate", "empty slice"));
    }
    let preds = predict_normalized(net, items, 64)?;
    let real: Vec<f64> = items.iter().map(|i| i.age_years).collect();
    MetricsReport::from_predictions(&preds, &real, view)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn r_squared_examples() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &t).unwrap(), 0.0);
        assert!((r_squared(&[1.0, 2.0, 4.0], &t).unwrap() - 0.5).abs() < 1e-15);
        assert!(r_squared(&[1.0, 1.0], &[5.0, 5.0]).is_err());
        assert!(r_squared(&[1.0], &[5.0]).is_err());
        assert!(r_squared(&[1.0, 2.0], &[5.0]).is_err());
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_within(&[30.0, 50.0], &[33.0, 60.0], 4.0).unwrap(), 0.5);
        assert_eq!(recall_within(&[12.0, 70.5], &[12.0, 70.5], 0.1).unwrap(), 1.0);
        assert_eq!(recall_within(&[30.0], &[39.0], 9.0).unwrap(), 1.0);
        assert!(recall_within(&[], &[], 4.0).is_err());
    }

    #[test]
    fn bias_examples() {
        assert_eq!(mean_signed_error(&[40.0], &[40.0]).unwrap(), 0.0);
        assert_eq!(mean_signed_error(&[50.0, 50.0], &[40.0, 60.0]).unwrap(), 0.0);
        assert_eq!(mean_signed_error(&[55.0], &[50.0]).unwrap(), 5.0);
        assert!(mean_signed_error(&[], &[]).is_err());
    }

    #[test]
    fn report_json_field_names() {
        let r = MetricsReport::from_predictions(&[0.5, 0.25], &[45.0, 22.5], ViewSelector::Both).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "mean_signed_error_years",
                "mse_normalized",
                "n",
                "r_squared",
                "recall_pm4",
                "recall_pm9",
                "view"
            ]
        );
        assert_eq!(v["view"], "BOTH");
        assert_eq!(r.r_squared, 1.0);
    }

    proptest! {
        #[test]
        fn recall_is_monotone_in_k(
            pairs in prop::collection::vec((0.0f64..90.0, 0.0f64..90.0), 1..60),
            mut ks in prop::collection::vec(0.01f64..100.0, 2..10),
        ) {
            ks.sort_by(f64::total_cmp);
            let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let recalls: Vec<f64> = ks.iter().map(|&k| recall_within(&p, &r, k).unwrap()).collect();
            prop_assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(recall_within(&p, &r, 4.0).unwrap() <= recall_within(&p, &r, 9.0).unwrap());
        }

        #[test]
        fn r_squared_is_affine_invariant(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..50),
            a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
            b in -20.0f64..20.0,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            prop_assume!(t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() > 1e-3);
            let base = r_squared(&p, &t).unwrap();
            let p2: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            let t2: Vec<f64> = t.iter().map(|x| a * x + b).collect();
            let scaled = r_squared(&p2, &t2).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-10 * base.abs().max(1.0));
            prop_assert!(base <= 1.0);
            if p != t {
                prop_assert!(base < 1.0);
            }
        }
    }
}
