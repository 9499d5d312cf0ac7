//! Closed-form smooth rates and risk-decomposition coefficients, plus
//! class-conditional noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_rate, LabeledDataset, NoiseSpec, TransitionMatrix};

/// Resamples every label from its row of `t`.
///
/// One uniform draw per sample, mapped through the inverse CDF of the row.
pub fn inject_noise(ds: &LabeledDataset, t: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    if ds.clean_labels().is_some() {
        return Err(Error::DoubleInjection);
    }
    if t.num_classes() != ds.num_classes() {
        return Err(Error::LengthMismatch {
            expected: ds.num_classes(),
            actual: t.num_classes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = t.num_classes();
    let noisy = ds
        .labels()
        .iter()
        .map(|&y| {
            let u: f64 = rng.gen();
            let row = t.row(y);
            let mut acc = 0.0;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return j;
                }
            }
            // u landed in the rounding slack above the cumulative sum
            (0..k).rev().find(|&j| row[j] > 0.0).unwrap_or(y)
        })
        .collect();
    let mut out = ds.clone().with_clean_labels(ds.labels().to_vec())?;
    out.replace_labels(noisy);
    Ok(out)
}

fn check_binary_regime(e: f64) -> Result<()> {
    if !(0.0..0.5).contains(&e) {
        return Err(Error::UndefinedRegime(e));
    }
    Ok(())
}

/// Smooth rate that cancels the first bias term under symmetric binary
/// noise `e`: `(r* - 2e) / (1 - 2e)`.
pub fn r_opt_binary(r_star: f64, e: f64) -> Result<f64> {
    check_binary_regime(e)?;
    check_rate(r_star)?;
    Ok((r_star - 2.0 * e) / (1.0 - 2.0 * e))
}

/// Multi-class analogue under symmetric noise `epsilon`:
/// `((K-1) r* - K eps) / ((K-1) - K eps)`.
pub fn r_opt_multiclass(r_star: f64, epsilon: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::ClassCount {
            required: 2,
            actual: k,
        });
    }
    check_rate(r_star)?;
    let km1 = (k - 1) as f64;
    let kf = k as f64;
    if !(0.0..km1 / kf).contains(&epsilon) {
        return Err(Error::UndefinedRegime(epsilon));
    }
    Ok((km1 * r_star - kf * epsilon) / (km1 - kf * epsilon))
}

/// `eps' = K eps / (K - 1)`, the symmetric-noise mass written against the
/// uniform vector.
pub fn effective_noise(epsilon: f64, k: usize) -> f64 {
    k as f64 * epsilon / (k - 1) as f64
}

/// Loss-correction equivalent rate `2e / (2e - 1)` and the factor
/// `1 / (1 - 2e)` that multiplies `e1 - e0` in the residual bias weight.
pub fn correction_rate_r_lc(e: f64) -> Result<(f64, f64)> {
    check_binary_regime(e)?;
    Ok((2.0 * e / (2.0 * e - 1.0), 1.0 / (1.0 - 2.0 * e)))
}

/// Peer-loss equivalent rate `2 P(noisy = 1)` and residual weight `1 - r`.
pub fn peer_rate_r_pl(noisy_prior_1: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&noisy_prior_1) {
        return Err(Error::NoiseRateOutOfRange {
            name: "P(noisy=1)",
            value: noisy_prior_1,
        });
    }
    let r = 2.0 * noisy_prior_1;
    Ok((r, 1.0 - r))
}

/// Coefficients of the binary noisy-risk decomposition
/// `E~[gls(r)] = TrueRisk(r*) + lambda1 * MInc1 + lambda2 * MInc2`.
///
/// Two candidate `lambda1` forms are carried. They coincide when
/// `e0 == e1`; for asymmetric rates only one makes the decomposition exact
/// with the second bias term taken over the clean class-1 sub-population
/// (see [`crate::verify::check_decomposition_binary`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCoeffs {
    /// `(e1 - r*/2) + (1 - 2 e1) r / 2`.
    pub lambda1_e1_form: f64,
    /// `(e0 - r*/2) + (1 - 2 e0) r / 2`.
    pub lambda1_e0_form: f64,
    /// `(e1 - e0)(1 - r)`.
    pub lambda2: f64,
    /// Scale on the true-risk term; 1 for the binary decomposition.
    pub true_risk_scale: f64,
}

pub fn decomposition_coeffs_binary(e0: f64, e1: f64, r: f64, r_star: f64) -> Result<DecompositionCoeffs> {
    for (name, v) in [("e0", e0), ("e1", e1)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::NoiseRateOutOfRange { name, value: v });
        }
    }
    check_rate(r)?;
    check_rate(r_star)?;
    let l1 = |e: f64| (e - r_star / 2.0) + (1.0 - 2.0 * e) * r / 2.0;
    Ok(DecompositionCoeffs {
        lambda1_e1_form: l1(e1),
        lambda1_e0_form: l1(e0),
        lambda2: (e1 - e0) * (1.0 - r),
        true_risk_scale: 1.0,
    })
}

/// Constants of the multi-class symmetric-noise decomposition
/// `E~[gls(r)] = true_risk_scale * E[ce(Y*)] + minc1_scale * E_X[sum_j ce(j)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassCoeffs {
    pub epsilon_prime: f64,
    /// `(1 - r)(1 - eps')`.
    pub c3: f64,
    /// `((1 - r) eps' + r) / K`.
    pub c4: f64,
    /// `c3 / (1 - r*)`.
    pub true_risk_scale: f64,
    /// `c4 - c3 r* / ((1 - r*) K)`; zero at the optimal rate.
    pub minc1_scale: f64,
}

pub fn decomposition_coeffs_multiclass(epsilon: f64, r: f64, r_star: f64, k: usize) -> Result<MulticlassCoeffs> {
    if k < 2 {
        return Err(Error::ClassCount {
            required: 2,
            actual: k,
        });
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::NoiseRateOutOfRange {
            name: "epsilon",
            value: epsilon,
        });
    }
    check_rate(r)?;
    check_rate(r_star)?;
    if r_star >= 1.0 {
        return Err(Error::InvalidRate(r_star));
    }
    let kf = k as f64;
    let ep = effective_noise(epsilon, k);
    let c3 = (1.0 - r) * (1.0 - ep);
    let c4 = ((1.0 - r) * ep + r) / kf;
    Ok(MulticlassCoeffs {
        epsilon_prime: ep,
        c3,
        c4,
        true_risk_scale: c3 / (1.0 - r_star),
        minc1_scale: c4 - c3 * r_star / ((1.0 - r_star) * kf),
    })
}

/// Predicted optimal smooth rate for a noise model, given the clean-optimal
/// rate `r_star`.
///
/// Sparse noise is treated as independent binary tasks per pair, which is
/// only well defined when the within-pair rates agree.
pub fn predict_r_opt(r_star: f64, noise: &NoiseSpec, k: usize) -> Result<f64> {
    match noise {
        NoiseSpec::Symmetric { epsilon } => {
            if k == 2 {
                r_opt_binary(r_star, *epsilon)
            } else {
                r_opt_multiclass(r_star, *epsilon, k)
            }
        }
        NoiseSpec::BinaryAsym { e0, e1 } | NoiseSpec::Sparse { e0, e1, .. } => {
            if (e0 - e1).abs() > 1e-12 {
                return Err(Error::InvalidNoiseSpec(format!(
                    "no closed-form optimal rate for asymmetric rates ({e0}, {e1})"
                )));
            }
            r_opt_binary(r_star, *e0)
        }
        NoiseSpec::Custom { .. } => Err(Error::InvalidNoiseSpec(
            "no closed-form optimal rate for a custom transition matrix".into(),
        )),
    }
}
