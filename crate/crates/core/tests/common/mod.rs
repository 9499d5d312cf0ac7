//! Finite-difference gradient oracle shared by the integration tests.
//!
//! The loss value is recomputed from scratch through the public forward pass
//! and the scalar loss functions, so it shares no code with the analytic
//! backward pass under test.

#![allow(dead_code)]

use gls_lab::datagen::{gen_synthetic, SyntheticKind, SyntheticSpec};
use gls_lab::trainer::loss_and_grad;
use gls_lab::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Scalar batch loss evaluated independently of the trainer.
pub type Oracle = fn(&[ProbVector], &[usize]) -> f64;

pub fn mean_of(preds: &[ProbVector], labels: &[usize], f: impl Fn(&ProbVector, usize) -> f64) -> f64 {
    preds.iter().zip(labels).map(|(p, &y)| f(p, y)).sum::<f64>() / preds.len() as f64
}

pub fn empirical_prior(labels: &[usize], k: usize) -> Vec<f64> {
    let mut prior = vec![0.0; k];
    for &y in labels {
        prior[y] += 1.0 / labels.len() as f64;
    }
    prior
}

/// A batch of `n` points from the disk/annulus data, with labels mapped to
/// `k` classes by angle when `k > 2`.
pub fn batch(n: usize, k: usize, seed: u64) -> LabeledDataset {
    let mut spec = SyntheticSpec::new(SyntheticKind::Type1, seed);
    spec.n_per_class = n;
    let full = gen_synthetic(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..full.len())).collect();
    let sub = full.subset(&idx);
    // spread the inputs so the ReLU units see a range of signs
    let feats: Vec<f64> = (0..n).flat_map(|i| sub.row(i).iter().map(|v| 4.0 * v).collect::<Vec<_>>()).collect();
    let labels: Vec<usize> = if k == 2 {
        sub.labels().to_vec()
    } else {
        (0..n)
            .map(|i| {
                let r = sub.row(i);
                let a = r[1].atan2(r[0]) + std::f64::consts::PI;
                ((a / std::f64::consts::TAU * k as f64) as usize).min(k - 1)
            })
            .collect()
    };
    LabeledDataset::new(feats, 2, labels, k).unwrap()
}

fn oracle_loss(model: &MlpModel, ds: &LabeledDataset, oracle: Oracle) -> f64 {
    let preds = model.predict_proba(ds).unwrap();
    oracle(&preds, ds.labels())
}

pub struct FdOutcome {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Draws rejected because the one-sided slopes disagree (a ReLU kink or
    /// clamp boundary inside the stencil).
    pub skipped_kinks: usize,
    /// Analytic loss value minus the oracle's, at the unperturbed point.
    pub value_gap: f64,
}

/// Compares `loss_and_grad` against central differences of `oracle` on
/// `draws` randomly chosen parameters. Each draw uses a fresh model and
/// batch so parameters can repeat without repeating a check.
pub fn fd_check(dims: &[usize], spec: &LossSpec, oracle: Oracle, draws: usize, seed: u64) -> FdOutcome {
    fd_check_with(dims, spec, oracle, draws, seed, |_| true)
}

/// [`fd_check`] restricted to batches accepted by `usable`.
pub fn fd_check_with(
    dims: &[usize],
    spec: &LossSpec,
    oracle: Oracle,
    draws: usize,
    seed: u64,
    usable: fn(&LabeledDataset) -> bool,
) -> FdOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FdOutcome {
        max_rel_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
        value_gap: 0.0,
    };
    let k = *dims.last().unwrap();
    let mut attempts = 0;
    while out.checked < draws {
        attempts += 1;
        assert!(attempts < 20 * draws, "too many kinked draws");
        let mut model = MlpModel::new(dims, rng.gen()).unwrap();
        let ds = batch(16, k, rng.gen());
        if !usable(&ds) {
            continue;
        }
        let (value, grad) = loss_and_grad(&model, &ds, spec).unwrap();
        out.value_gap = out.value_gap.max((value - oracle_loss(&model, &ds, oracle)).abs());
        let j = rng.gen_range(0..model.num_params());
        let theta = model.params()[j];
        let f0 = oracle_loss(&model, &ds, oracle);
        model.params_mut()[j] = theta + FD_STEP;
        let fp = oracle_loss(&model, &ds, oracle);
        model.params_mut()[j] = theta - FD_STEP;
        let fm = oracle_loss(&model, &ds, oracle);
        model.params_mut()[j] = theta;
        let fwd = (fp - f0) / FD_STEP;
        let bwd = (f0 - fm) / FD_STEP;
        let fd = (fp - fm) / (2.0 * FD_STEP);
        let scale = fwd.abs().max(bwd.abs()).max(1e-6);
        if (fwd - bwd).abs() > 1e-3 * scale + 1e-7 {
            out.skipped_kinks += 1;
            continue;
        }
        // Relative error with a 1e-4 floor: central differences at h = 1e-5
        // carry ~1e-11 of roundoff, which would dominate a relative error on
        // near-zero gradients (dead units, balanced peer terms).
        let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-4);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}

pub fn noise() -> NoiseSpec {
    NoiseSpec::symmetric(0.2)
}

pub fn t2() -> TransitionMatrix {
    build_transition(&noise(), 2).unwrap()
}

/// The seven loss kinds of the gradient acceptance check.
pub fn acceptance_kinds() -> Vec<(&'static str, LossSpec, Oracle)> {
    vec![
        ("gls(-2)", LossSpec::gls(-2.0), |p, y| mean_of(p, y, |p, y| gls_loss(p, y, -2.0).unwrap())),
        ("gls(0)", LossSpec::gls(0.0), |p, y| mean_of(p, y, ce)),
        ("gls(0.6)", LossSpec::gls(0.6), |p, y| mean_of(p, y, |p, y| gls_loss(p, y, 0.6).unwrap())),
        ("backward", LossSpec::Backward { noise: noise() }, |p, y| {
            mean_of(p, y, |p, y| backward_loss(p, y, &t2()).unwrap())
        }),
        ("forward", LossSpec::Forward { noise: noise() }, |p, y| {
            mean_of(p, y, |p, y| forward_loss(p, y, &t2()).unwrap())
        }),
        ("complementary", LossSpec::Complementary, |p, y| {
            mean_of(p, y, |p, y| complementary_loss(p, y).unwrap())
        }),
        ("peer-expected", LossSpec::PeerExpected { prior: None }, |p, y| {
            let prior = empirical_prior(y, 2);
            mean_of(p, y, |p, y| peer_loss_expected(p, y, &prior).unwrap())
        }),
    ]
}
