//! Model confidence, the correct/incorrect partition it induces, and
//! KL-based bias and variance over model replicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::MlpModel;
use crate::types::{LabeledDataset, ProbVector};

/// Margin of the labelled class over the mean of the others:
/// `p_y - (1 / (K - 1)) sum_{i != y} p_i`. For `K = 2` this is
/// `p_y - p_{1-y}`.
pub fn model_confidence(p: &ProbVector, y: usize) -> f64 {
    let k = p.num_classes();
    let rest: f64 = p.as_slice().iter().sum::<f64>() - p[y];
    p[y] - rest / (k - 1) as f64
}

/// Log-odds of the labelled class, `ce(p, 1 - y) - ce(p, y)`.
pub fn loss_confidence(p: &ProbVector, y: usize) -> Result<f64> {
    if p.num_classes() != 2 {
        return Err(Error::ClassCount {
            required: 2,
            actual: p.num_classes(),
        });
    }
    Ok((p[y] / p[1 - y]).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub mc: Vec<f64>,
    pub expected_mc: f64,
    /// Mean over samples with `mc > 0`; zero when there are none.
    pub mc_correct_mean: f64,
    /// Mean over samples with `mc <= 0`; zero when there are none.
    pub mc_wrong_mean: f64,
    pub n_plus: usize,
    pub n_minus: usize,
}

/// Confidence of `model` on every row of `ds`, scored against the clean
/// labels when present.
pub fn confidence_report(model: &MlpModel, ds: &LabeledDataset) -> Result<ConfidenceReport> {
    let preds = model.predict_proba(ds)?;
    Ok(confidence_from_predictions(&preds, ds.reference_labels()))
}

pub fn confidence_from_predictions(preds: &[ProbVector], labels: &[usize]) -> ConfidenceReport {
    let mc: Vec<f64> = preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| model_confidence(p, y))
        .collect();
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (if n == 0 { 0.0 } else { s / n as f64 }, n)
    };
    let (expected_mc, _) = mean(&mut mc.iter().copied());
    let (mc_correct_mean, n_plus) = mean(&mut mc.iter().copied().filter(|v| *v > 0.0));
    let (mc_wrong_mean, n_minus) = mean(&mut mc.iter().copied().filter(|v| *v <= 0.0));
    ConfidenceReport {
        mc,
        expected_mc,
        mc_correct_mean,
        mc_wrong_mean,
        n_plus,
        n_minus,
    }
}

/// Splits row indices into `mc > 0` (plus) and `mc <= 0` (minus).
pub fn partition_by_confidence(model: &MlpModel, ds: &LabeledDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let preds = model.predict_proba(ds)?;
    Ok(partition_predictions(&preds, ds.reference_labels()))
}

pub fn partition_predictions(preds: &[ProbVector], labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    (0..preds.len()).partition(|&i| model_confidence(&preds[i], labels[i]) > 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub bias: f64,
    pub variance: f64,
    pub num_replicates: usize,
}

/// Bias and variance of replicate predictions.
///
/// `preds[m][i]` is replicate `m`'s prediction for sample `i`. The mean
/// prediction is the normalized geometric mean `exp(mean_m log p) / Z`;
/// bias is the mean of `-log pbar_y` (the KL from a one-hot target) and
/// variance the mean over replicates and samples of `KL(pbar || p_m)`.
pub fn bias_variance_from_predictions(preds: &[Vec<ProbVector>], labels: &[usize], eps: f64) -> Result<BiasVarianceReport> {
    let m = preds.len();
    if m < 2 {
        return Err(Error::TooFewReplicates(m));
    }
    let n = labels.len();
    if preds.iter().any(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: preds.iter().map(Vec::len).find(|&l| l != n).unwrap(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidDataset("no evaluation samples".into()));
    }
    let mut bias = 0.0;
    let mut variance = 0.0;
    for i in 0..n {
        let k = preds[0][i].num_classes();
        let mut log_mean = vec![0.0; k];
        for rep in preds {
            for (c, lm) in log_mean.iter_mut().enumerate() {
                *lm += rep[i][c].max(eps).ln();
            }
        }
        log_mean.iter_mut().for_each(|v| *v /= m as f64);
        let mx = log_mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = mx + log_mean.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let log_bar: Vec<f64> = log_mean.iter().map(|v| v - log_z).collect();
        bias += -log_bar[labels[i]];
        for rep in preds {
            variance += log_bar
                .iter()
                .enumerate()
                .map(|(c, lb)| lb.exp() * (lb - rep[i][c].max(eps).ln()))
                .sum::<f64>();
        }
    }
    Ok(BiasVarianceReport {
        bias: bias / n as f64,
        // KL is nonnegative; clip rounding noise around exact agreement
        variance: (variance / (n * m) as f64).max(0.0),
        num_replicates: m,
    })
}

pub fn bias_variance(replicates: &[MlpModel], eval_ds: &LabeledDataset) -> Result<BiasVarianceReport> {
    if replicates.len() < 2 {
        return Err(Error::TooFewReplicates(replicates.len()));
    }
    let eps = replicates[0].epsilon_clamp();
    let preds: Vec<Vec<ProbVector>> = replicates
        .iter()
        .map(|m| m.predict_proba(eval_ds))
        .collect::<Result<_>>()?;
    bias_variance_from_predictions(&preds, eval_ds.reference_labels(), eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DEFAULT_EPS_CLAMP;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn confidence_examples() {
        assert!((model_confidence(&pv(&[0.8, 0.2]), 0) - 0.6).abs() < 1e-15);
        for k in 2..9 {
            for y in 0..k {
                assert!(model_confidence(&ProbVector::uniform(k), y).abs() < 1e-15);
            }
        }
        assert!((model_confidence(&pv(&[0.7, 0.2, 0.1]), 0) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn loss_confidence_examples() {
        assert_eq!(loss_confidence(&pv(&[0.5, 0.5]), 1).unwrap(), 0.0);
        let p = pv(&[0.8, 0.2]);
        assert!((loss_confidence(&p, 0).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(loss_confidence(&p, 1).unwrap(), -loss_confidence(&p, 0).unwrap());
        assert!(loss_confidence(&ProbVector::uniform(3), 0).is_err());
    }

    #[test]
    fn partition_examples() {
        let preds = vec![pv(&[0.9, 0.1]), pv(&[0.4, 0.6]), pv(&[0.5, 0.5]), pv(&[0.3, 0.7])];
        let labels = [0, 0, 1, 1];
        // mc = 0.8, -0.2, 0.0, 0.4
        let (plus, minus) = partition_predictions(&preds, &labels);
        assert_eq!(plus, vec![0, 3]);
        assert_eq!(minus, vec![1, 2]);

        let uniform = vec![ProbVector::uniform(2); 3];
        let (plus, minus) = partition_predictions(&uniform, &[0, 1, 0]);
        assert!(plus.is_empty());
        assert_eq!(minus.len(), 3);

        let confident = vec![pv(&[0.99, 0.01]), pv(&[0.01, 0.99])];
        assert!(partition_predictions(&confident, &[0, 1]).1.is_empty());

        let rep = confidence_from_predictions(&preds, &labels);
        assert_eq!((rep.n_plus, rep.n_minus), (2, 2));
        assert!(rep.mc_correct_mean > 0.0);
        assert!((rep.expected_mc - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bias_variance_identical_replicates() {
        let preds = vec![vec![pv(&[0.7, 0.3]), pv(&[0.2, 0.8])]; 3];
        let r = bias_variance_from_predictions(&preds, &[0, 1], DEFAULT_EPS_CLAMP).unwrap();
        assert_eq!(r.variance, 0.0);
        let want = (-(0.7f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((r.bias - want).abs() < 1e-12);
    }

    #[test]
    fn bias_variance_two_replicates() {
        let preds = vec![vec![pv(&[0.8, 0.2])], vec![pv(&[0.2, 0.8])]];
        let r = bias_variance_from_predictions(&preds, &[0], DEFAULT_EPS_CLAMP).unwrap();
        let kl = 0.5 * (0.5f64 / 0.8).ln() + 0.5 * (0.5f64 / 0.2).ln();
        assert!((r.variance - kl).abs() < 1e-12);
        assert!((r.variance - 0.223144).abs() < 1e-6);
        assert!((r.bias - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bias_variance_clamp_limit() {
        let eps = DEFAULT_EPS_CLAMP;
        let p = ProbVector::clamped(vec![1.0, 0.0, 0.0], eps);
        let preds = vec![vec![p.clone()], vec![p]];
        let r = bias_variance_from_predictions(&preds, &[0], eps).unwrap();
        assert!(r.bias <= -(1.0 - eps * 2.0).ln() + 1e-15);
        assert!(bias_variance_from_predictions(&preds[..1], &[0], eps).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn multiclass_definition_reduces_to_binary(a in 1e-6f64..1.0, y in 0usize..2) {
                let p = ProbVector::clamped(vec![a, 1.0 - a], 1e-7);
                prop_assert!((model_confidence(&p, y) - (p[y] - p[1 - y])).abs() <= 1e-12);
            }

            #[test]
            fn confidence_orderings_agree(a in 1e-4f64..1.0 - 1e-4, b in 1e-4f64..1.0 - 1e-4, y in 0usize..2) {
                let pa = ProbVector::clamped(vec![a, 1.0 - a], 1e-7);
                let pb = ProbVector::clamped(vec![b, 1.0 - b], 1e-7);
                let d_mc = model_confidence(&pa, y) - model_confidence(&pb, y);
                let d_lc = loss_confidence(&pa, y).unwrap() - loss_confidence(&pb, y).unwrap();
                if d_mc.abs() > 1e-12 {
                    prop_assert_eq!(d_mc > 0.0, d_lc > 0.0);
                }
            }

            #[test]
            fn bias_and_variance_nonnegative(
                raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 2..6),
                y in 0usize..3,
            ) {
                let preds: Vec<Vec<ProbVector>> = raw
                    .into_iter()
                    .map(|v| vec![ProbVector::clamped(v, 1e-7)])
                    .collect();
                let r = bias_variance_from_predictions(&preds, &[y], 1e-7).unwrap();
                prop_assert!(r.bias >= 0.0);
                prop_assert!(r.variance >= 0.0);
            }
        }
    }
}
