//! Cross-entropy on soft targets and the noise-robust losses that reduce to
//! generalized label smoothing.
//!
//! Every loss here except forward correction is linear in `log p`: it can be
//! written as `-sum_k w_k log p_k` for a per-label weight vector `w` whose
//! entries may be negative. [`ResolvedLoss`] exploits that for training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    build_transition, check_rate, make_gls_label, normalized_extreme_label, LabeledDataset,
    NoiseSpec, ProbVector, TransitionMatrix,
};

const PRIOR_TOL: f64 = 1e-9;

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::InvalidLabel {
            label: y,
            num_classes: k,
        });
    }
    Ok(())
}

fn require_binary(k: usize) -> Result<()> {
    if k != 2 {
        return Err(Error::ClassCount {
            required: 2,
            actual: k,
        });
    }
    Ok(())
}

/// Hard-label cross-entropy `-log p_y`.
pub fn ce(p: &ProbVector, y: usize) -> f64 {
    -p[y].ln()
}

/// `-sum_k q_k log p_k` for an arbitrary target vector `q`.
///
/// `q` need not be a distribution; negative entries give negative
/// contributions.
pub fn ce_soft(p: &ProbVector, q: &[f64]) -> Result<f64> {
    if q.len() != p.num_classes() {
        return Err(Error::LengthMismatch {
            expected: p.num_classes(),
            actual: q.len(),
        });
    }
    Ok(-p
        .as_slice()
        .iter()
        .zip(q)
        .map(|(pk, qk)| qk * pk.ln())
        .sum::<f64>())
}

/// Generalized label smoothing loss, evaluated through its linear form
/// `(1 - r) ce(p, y) + (r / K) sum_j ce(p, j)`.
pub fn gls_loss(p: &ProbVector, y: usize, r: f64) -> Result<f64> {
    check_rate(r)?;
    let k = p.num_classes();
    check_label(y, k)?;
    let all: f64 = (0..k).map(|j| ce(p, j)).sum();
    Ok((1.0 - r) * ce(p, y) + r / k as f64 * all)
}

/// Backward correction: `sum_j (T^-1)[y~, j] ce(p, j)`.
pub fn backward_loss(p: &ProbVector, y_tilde: usize, t: &TransitionMatrix) -> Result<f64> {
    let k = p.num_classes();
    if t.num_classes() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: t.num_classes(),
        });
    }
    check_label(y_tilde, k)?;
    let inv = t.inverse()?;
    Ok((0..k).map(|j| inv[y_tilde * k + j] * ce(p, j)).sum())
}

/// Forward correction: `-log (p^T T)[y~]`.
pub fn forward_loss(p: &ProbVector, y_tilde: usize, t: &TransitionMatrix) -> Result<f64> {
    let k = p.num_classes();
    if t.num_classes() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: t.num_classes(),
        });
    }
    check_label(y_tilde, k)?;
    let q: f64 = (0..k).map(|i| p[i] * t.get(i, y_tilde)).sum();
    if q <= 0.0 {
        return Err(Error::NonPositiveProbability(q));
    }
    Ok(-q.ln())
}

/// Binary complementary-label loss `ce(p, y~) - ce(p, 1 - y~)`.
pub fn complementary_loss(p: &ProbVector, y_tilde: usize) -> Result<f64> {
    require_binary(p.num_classes())?;
    check_label(y_tilde, 2)?;
    Ok(ce(p, y_tilde) - ce(p, 1 - y_tilde))
}

fn check_prior(prior: &[f64], k: usize) -> Result<()> {
    if prior.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: prior.len(),
        });
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > PRIOR_TOL || prior.iter().any(|v| *v < 0.0) {
        return Err(Error::PriorNotNormalized(s));
    }
    Ok(())
}

/// Peer loss with the peer label integrated out against `noisy_prior`:
/// `ce(p, y~) - sum_k prior_k ce(p, k)`.
pub fn peer_loss_expected(p: &ProbVector, y_tilde: usize, noisy_prior: &[f64]) -> Result<f64> {
    let k = p.num_classes();
    check_label(y_tilde, k)?;
    check_prior(noisy_prior, k)?;
    let peer: f64 = (0..k).map(|j| noisy_prior[j] * ce(p, j)).sum();
    Ok(ce(p, y_tilde) - peer)
}

/// Two independent uniform permutations of `0..n` drawn from `seed`.
pub fn peer_pairing(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feat: Vec<usize> = (0..n).collect();
    let mut lab: Vec<usize> = (0..n).collect();
    feat.shuffle(&mut rng);
    lab.shuffle(&mut rng);
    (feat, lab)
}

/// Peer loss on a batch with the literal random pairing: the mean over `i`
/// of `ce(p_i, y_i) - ce(p_{a(i)}, y_{b(i)})` for independent permutations
/// `a`, `b`.
pub fn peer_loss_sampled(batch_p: &[ProbVector], batch_y: &[usize], seed: u64) -> Result<f64> {
    let n = batch_p.len();
    if batch_y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: batch_y.len(),
        });
    }
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    for (p, &y) in batch_p.iter().zip(batch_y) {
        check_label(y, p.num_classes())?;
    }
    let (feat, lab) = peer_pairing(n, seed);
    let total: f64 = (0..n)
        .map(|i| ce(&batch_p[i], batch_y[i]) - ce(&batch_p[feat[i]], batch_y[lab[i]]))
        .sum();
    Ok(total / n as f64)
}

/// Confidence-correction penalty added by GLS-C:
/// `(e1 - e0) (1 - r) mean_{clean y = 1} [ce(p, 1) - ce(p, 0)]`.
pub fn gls_c_penalty(
    clean_preds: &[ProbVector],
    clean_labels: &[usize],
    r: f64,
    e0_hat: f64,
    e1_hat: f64,
) -> Result<f64> {
    if clean_preds.len() != clean_labels.len() {
        return Err(Error::LengthMismatch {
            expected: clean_preds.len(),
            actual: clean_labels.len(),
        });
    }
    check_rate(r)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &y) in clean_preds.iter().zip(clean_labels) {
        require_binary(p.num_classes())?;
        if y == 1 {
            sum += ce(p, 1) - ce(p, 0);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCleanSubset);
    }
    Ok((e1_hat - e0_hat) * (1.0 - r) * sum / n as f64)
}

/// Training objective selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Gls {
        rate: f64,
    },
    /// The `r -> -inf` limit with targets `onehot(y) - 1/K`.
    GlsExtreme,
    Backward {
        noise: NoiseSpec,
    },
    Forward {
        noise: NoiseSpec,
    },
    Complementary,
    /// Expectation-form peer loss. Without an explicit prior the empirical
    /// label frequencies of the training set are used.
    PeerExpected {
        #[serde(default)]
        prior: Option<Vec<f64>>,
    },
    /// Literal peer loss with a fresh random pairing per mini-batch.
    PeerSampled,
    /// GLS plus the confidence-correction penalty, computed over the
    /// training rows listed in `clean_indices` using their clean labels.
    GlsC {
        rate: f64,
        e0_hat: f64,
        e1_hat: f64,
        clean_indices: Vec<usize>,
    },
}

impl LossSpec {
    pub fn gls(rate: f64) -> Self {
        LossSpec::Gls { rate }
    }

    pub fn ce() -> Self {
        LossSpec::Gls { rate: 0.0 }
    }

    /// Validates parameters and precomputes everything that does not
    /// depend on model predictions.
    pub fn resolve(&self, train: &LabeledDataset) -> Result<ResolvedLoss> {
        let k = train.num_classes();
        let linear = |rows: Vec<Vec<f64>>| ResolvedLoss::Linear { weights: rows };
        Ok(match self {
            LossSpec::Gls { rate } => {
                check_rate(*rate)?;
                linear(
                    (0..k)
                        .map(|y| make_gls_label(y, *rate, k).map(|l| l.weights().to_vec()))
                        .collect::<Result<_>>()?,
                )
            }
            LossSpec::GlsExtreme => linear(
                (0..k)
                    .map(|y| normalized_extreme_label(y, k))
                    .collect::<Result<_>>()?,
            ),
            LossSpec::Backward { noise } => {
                let t = build_transition(noise, k)?;
                let inv = t.inverse()?;
                linear(inv.chunks(k).map(<[f64]>::to_vec).collect())
            }
            LossSpec::Forward { noise } => ResolvedLoss::Forward {
                t: build_transition(noise, k)?,
            },
            LossSpec::Complementary => {
                require_binary(k)?;
                linear(vec![vec![1.0, -1.0], vec![-1.0, 1.0]])
            }
            LossSpec::PeerExpected { prior } => {
                let prior = match prior {
                    Some(p) => p.clone(),
                    None => {
                        let n = train.len() as f64;
                        train.class_counts().iter().map(|&c| c as f64 / n).collect()
                    }
                };
                check_prior(&prior, k)?;
                linear(
                    (0..k)
                        .map(|y| {
                            let mut w: Vec<f64> = prior.iter().map(|v| -v).collect();
                            w[y] += 1.0;
                            w
                        })
                        .collect(),
                )
            }
            LossSpec::PeerSampled => ResolvedLoss::PeerSampled,
            LossSpec::GlsC {
                rate,
                e0_hat,
                e1_hat,
                clean_indices,
            } => {
                check_rate(*rate)?;
                require_binary(k)?;
                let clean = train.reference_labels();
                let ones: Vec<usize> = clean_indices
                    .iter()
                    .copied()
                    .filter(|&i| i < train.len() && clean[i] == 1)
                    .collect();
                if let Some(&bad) = clean_indices.iter().find(|&&i| i >= train.len()) {
                    return Err(Error::InvalidConfig(format!(
                        "clean index {bad} out of range for {} training rows",
                        train.len()
                    )));
                }
                if ones.is_empty() {
                    return Err(Error::EmptyCleanSubset);
                }
                ResolvedLoss::GlsC {
                    weights: (0..2)
                        .map(|y| make_gls_label(y, *rate, 2).map(|l| l.weights().to_vec()))
                        .collect::<Result<_>>()?,
                    penalty_scale: (e1_hat - e0_hat) * (1.0 - rate),
                    positives: ones,
                }
            }
        })
    }
}

/// A [`LossSpec`] with its data-independent pieces precomputed.
#[derive(Clone, Debug)]
pub enum ResolvedLoss {
    /// `loss(p, y) = -sum_k weights[y][k] log p_k`.
    Linear { weights: Vec<Vec<f64>> },
    Forward { t: TransitionMatrix },
    PeerSampled,
    GlsC {
        weights: Vec<Vec<f64>>,
        penalty_scale: f64,
        /// Training rows whose clean label is 1.
        positives: Vec<usize>,
    },
}

/// Loss value and its gradient with respect to the probability vector.
pub(crate) fn linear_loss_grad(p: &[f64], w: &[f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for k in 0..p.len() {
        loss -= w[k] * p[k].ln();
        grad[k] += -w[k] / p[k];
    }
    loss
}

pub(crate) fn forward_loss_grad(p: &[f64], y: usize, t: &TransitionMatrix, grad: &mut [f64]) -> Result<f64> {
    let q: f64 = (0..p.len()).map(|i| p[i] * t.get(i, y)).sum();
    if q <= 0.0 {
        return Err(Error::NonPositiveProbability(q));
    }
    for (i, g) in grad.iter_mut().enumerate() {
        *g += -t.get(i, y) / q;
    }
    Ok(-q.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::make_onehot;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    const L08: f64 = 0.223_143_551_314_209_7; // -ln 0.8
    const L02: f64 = 1.609_437_912_434_100_3; // -ln 0.2

    #[test]
    fn ce_soft_examples() {
        let p = pv(&[0.5, 0.5]);
        assert!((ce_soft(&p, &[0.3, 0.7]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = pv(&[0.8, 0.2]);
        let q = make_onehot(0, 2).unwrap();
        assert!((ce_soft(&p, q.weights()).unwrap() - 0.223144).abs() < 1e-6);
        // direct sum and the two-term linear form must agree
        let q = make_gls_label(0, -1.0, 2).unwrap();
        let direct = ce_soft(&p, q.weights()).unwrap();
        let linear = 1.5 * L08 - 0.5 * L02;
        assert!((direct - linear).abs() < 1e-14);
        assert!((direct - -0.470004).abs() < 1e-6);
        assert!(matches!(
            ce_soft(&p, &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gls_examples() {
        let u = pv(&[0.5, 0.5]);
        for r in [-5.0, 0.0, 0.7] {
            assert!((gls_loss(&u, 1, r).unwrap() - 2f64.ln()).abs() < 1e-14);
        }
        let p = pv(&[0.8, 0.2]);
        let want = 0.85 * L08 + 0.15 * L02;
        assert!((gls_loss(&p, 0, 0.3).unwrap() - want).abs() < 1e-14);
        assert!((want - 0.431088).abs() < 1e-6);
        assert!((gls_loss(&p, 0, -1.0).unwrap() - -0.470004).abs() < 1e-6);
        assert!(gls_loss(&p, 0, 1.01).is_err());
    }

    #[test]
    fn backward_examples() {
        let p = pv(&[0.8, 0.2]);
        let id = TransitionMatrix::identity(2);
        assert!((backward_loss(&p, 1, &id).unwrap() - ce(&p, 1)).abs() < 1e-15);
        let t = build_transition(&NoiseSpec::symmetric(0.25), 2).unwrap();
        let want = (0.75 * L08 - 0.25 * L02) / 0.5;
        let got = backward_loss(&p, 0, &t).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - gls_loss(&p, 0, -1.0).unwrap()).abs() < 1e-14);
        let t = build_transition(&NoiseSpec::symmetric(0.5), 2).unwrap();
        assert!(matches!(
            backward_loss(&p, 0, &t),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn forward_examples() {
        let p = pv(&[0.8, 0.2]);
        let id = TransitionMatrix::identity(2);
        assert!((forward_loss(&p, 0, &id).unwrap() - L08).abs() < 1e-15);
        let t = build_transition(&NoiseSpec::symmetric(0.25), 2).unwrap();
        assert!((forward_loss(&p, 0, &t).unwrap() - 0.430783).abs() < 1e-6);
        for k in [2, 3, 7] {
            let t = build_transition(&NoiseSpec::symmetric(0.3), k).unwrap();
            let u = ProbVector::uniform(k);
            assert!((forward_loss(&u, 1, &t).unwrap() - (k as f64).ln()).abs() < 1e-14);
        }
        let zero = build_transition(
            &NoiseSpec::Custom {
                rows: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            },
            2,
        )
        .unwrap();
        assert!(matches!(
            forward_loss(&p, 1, &zero),
            Err(Error::NonPositiveProbability(_))
        ));
    }

    #[test]
    fn complementary_examples() {
        assert_eq!(complementary_loss(&pv(&[0.5, 0.5]), 0).unwrap(), 0.0);
        let p = pv(&[0.8, 0.2]);
        let v = complementary_loss(&p, 0).unwrap();
        assert!((v - -1.386294).abs() < 1e-6);
        assert_eq!(complementary_loss(&p, 1).unwrap(), -v);
        assert!(complementary_loss(&ProbVector::uniform(3), 0).is_err());
    }

    #[test]
    fn peer_expected_examples() {
        let p = pv(&[0.8, 0.2]);
        let v = peer_loss_expected(&p, 0, &[0.5, 0.5]).unwrap();
        assert!((v - -0.693147).abs() < 1e-6);
        let u = ProbVector::uniform(3);
        assert!(peer_loss_expected(&u, 2, &[0.2, 0.3, 0.5]).unwrap().abs() < 1e-15);
        assert_eq!(peer_loss_expected(&p, 1, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            peer_loss_expected(&p, 1, &[0.3, 0.3]),
            Err(Error::PriorNotNormalized(_))
        ));
    }

    #[test]
    fn peer_sampled_examples() {
        let u = vec![ProbVector::uniform(2); 5];
        assert_eq!(peer_loss_sampled(&u, &[0, 1, 1, 0, 1], 3).unwrap(), 0.0);
        let same = vec![pv(&[0.7, 0.3]); 4];
        assert_eq!(peer_loss_sampled(&same, &[1; 4], 9).unwrap(), 0.0);
        assert!(matches!(
            peer_loss_sampled(&same[..1], &[1], 0),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn gls_c_examples() {
        let preds = vec![pv(&[0.2, 0.8]), pv(&[0.6, 0.4])];
        assert_eq!(gls_c_penalty(&preds, &[1, 0], 0.3, 0.2, 0.2).unwrap(), 0.0);
        assert_eq!(gls_c_penalty(&preds, &[1, 1], 1.0, 0.1, 0.3).unwrap(), 0.0);
        let v = gls_c_penalty(&preds[..1], &[1], 0.0, 0.1, 0.3).unwrap();
        assert!((v - 0.2 * (L08 - L02)).abs() < 1e-14);
        assert!((v - -0.277259).abs() < 1e-6);
        assert!(matches!(
            gls_c_penalty(&preds, &[0, 0], 0.0, 0.1, 0.3),
            Err(Error::EmptyCleanSubset)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn binary_p() -> impl Strategy<Value = ProbVector> {
            (1e-3f64..1.0 - 1e-3).prop_map(|a| ProbVector::new(vec![a, 1.0 - a]).unwrap())
        }

        fn simplex(k: usize) -> impl Strategy<Value = ProbVector> {
            proptest::collection::vec(0.01f64..1.0, k).prop_map(|v| {
                let s: f64 = v.iter().sum();
                ProbVector::clamped(v.into_iter().map(|x| x / s).collect(), 1e-7)
            })
        }

        proptest! {
            #[test]
            fn gls_matches_soft_target_ce(k in 2usize..8, seed in 0usize..1000, r in -20.0f64..=1.0) {
                let y = seed % k;
                let p = ProbVector::clamped((0..k).map(|i| 1.0 + ((i * 7 + seed) % 5) as f64).collect(), 1e-7);
                let a = gls_loss(&p, y, r).unwrap();
                let b = ce_soft(&p, make_gls_label(y, r, k).unwrap().weights()).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + r.abs()));
            }

            #[test]
            fn binary_linear_form(p in binary_p(), y in 0usize..2, r in -10.0f64..=1.0) {
                let lhs = gls_loss(&p, y, r).unwrap();
                let rhs = (1.0 - r / 2.0) * ce(&p, y) + r / 2.0 * ce(&p, 1 - y);
                prop_assert!((lhs - rhs).abs() <= 1e-10);
            }

            #[test]
            fn negative_rate_mirror(p in binary_p(), y in 0usize..2, r in 0.0f64..=1.0) {
                let lhs = gls_loss(&p, y, -r).unwrap();
                let rhs = 2.0 * ce(&p, y) - gls_loss(&p, y, r).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10);
            }

            #[test]
            fn negative_rate_mirror_multiclass(p in simplex(5), y in 0usize..5, r in 0.0f64..=1.0) {
                let lhs = gls_loss(&p, y, -r).unwrap();
                let rhs = 2.0 * ce(&p, y) - gls_loss(&p, y, r).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10);
            }

            #[test]
            fn backward_is_gls_under_symmetric_noise(p in binary_p(), y in 0usize..2, e in 0.0f64..0.49) {
                let t = build_transition(&NoiseSpec::symmetric(e), 2).unwrap();
                let r_lc = 2.0 * e / (2.0 * e - 1.0);
                let a = backward_loss(&p, y, &t).unwrap();
                let b = gls_loss(&p, y, r_lc).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }

            #[test]
            fn ce_minus_gls_is_scaled_complementary(p in binary_p(), y in 0usize..2, r in -50.0f64..=1.0) {
                let lhs = ce(&p, y) - gls_loss(&p, y, r).unwrap();
                let rhs = r / 2.0 * complementary_loss(&p, y).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + r.abs()));
            }

            #[test]
            fn all_losses_finite_at_clamp_floor(y in 0usize..2, r in -1e6f64..=1.0) {
                let p = ProbVector::clamped(vec![1.0, 0.0], 1e-7);
                prop_assert!(gls_loss(&p, y, r).unwrap().is_finite());
                prop_assert!(complementary_loss(&p, y).unwrap().is_finite());
                let t = build_transition(&NoiseSpec::BinaryAsym { e0: 0.1, e1: 0.3 }, 2).unwrap();
                prop_assert!(backward_loss(&p, y, &t).unwrap().is_finite());
                prop_assert!(forward_loss(&p, y, &t).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn complementary_limit_rate() {
        // normalized GLS approaches the complementary loss like 1/|r|
        let p = pv(&[0.3, 0.7]);
        let resid = |r: f64| (gls_loss(&p, 0, r).unwrap() / (1.0 - r / 2.0) - complementary_loss(&p, 0).unwrap()).abs();
        let c = resid(-1e3) * 1e3;
        assert!(resid(-1e6) <= c / 1e6 * 1.01);
        assert!(resid(-1e6) < resid(-1e3));
    }

    #[test]
    fn peer_sampled_matches_expected_form_on_average() {
        // Monte-Carlo over pairings on a fixed 8-sample batch
        let probs = [0.9, 0.7, 0.55, 0.4, 0.35, 0.2, 0.15, 0.6];
        let ys = [0, 0, 1, 1, 0, 1, 1, 0];
        let batch: Vec<ProbVector> = probs.iter().map(|&a| pv(&[a, 1.0 - a])).collect();
        let n_seeds = 100_000u64;
        let samples: Vec<f64> = (0..n_seeds)
            .map(|s| peer_loss_sampled(&batch, &ys, s).unwrap())
            .collect();
        let mean = samples.iter().sum::<f64>() / n_seeds as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_seeds - 1) as f64;
        let se = (var / n_seeds as f64).sqrt();

        let ones = ys.iter().filter(|&&y| y == 1).count() as f64 / 8.0;
        let prior = [1.0 - ones, ones];
        // expectation over independent uniform permutations: every (feature,
        // label) pair is equally likely
        let expected: f64 = batch
            .iter()
            .zip(ys)
            .map(|(p, y)| peer_loss_expected(p, y, &prior).unwrap())
            .sum::<f64>()
            / 8.0;
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean}, expected {expected}, se {se}"
        );
    }
}
