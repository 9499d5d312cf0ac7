//! Labels, smoothed labels, probability vectors, transition matrices and
//! datasets.
//!
//! Classes are 0-indexed throughout: a `K`-class problem uses labels
//! `0..K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to every predicted probability before a log is taken.
pub const DEFAULT_EPS_CLAMP: f64 = 1e-7;

const SUM_TOL: f64 = 1e-9;

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::InvalidLabel {
            label: y,
            num_classes: k,
        });
    }
    Ok(())
}

/// Rejects NaN and rates above one. There is no lower bound.
pub fn check_rate(r: f64) -> Result<()> {
    if r.is_nan() || r > 1.0 || r == f64::INFINITY {
        return Err(Error::InvalidRate(r));
    }
    Ok(())
}

/// A (generalized) smoothed label: `(1 - r) * onehot(y) + (r / K) * 1`.
///
/// Entries may be negative when `r < 0`; they always sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    weights: Vec<f64>,
    rate: f64,
    source_class: usize,
}

impl SoftLabel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn source_class(&self) -> usize {
        self.source_class
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }
}

impl AsRef<[f64]> for SoftLabel {
    fn as_ref(&self) -> &[f64] {
        &self.weights
    }
}

pub fn make_onehot(y: usize, k: usize) -> Result<SoftLabel> {
    make_gls_label(y, 0.0, k)
}

pub fn make_gls_label(y: usize, r: f64, k: usize) -> Result<SoftLabel> {
    check_label(y, k)?;
    check_rate(r)?;
    let off = r / k as f64;
    let mut weights = vec![off; k];
    weights[y] = 1.0 - r + off;
    Ok(SoftLabel {
        weights,
        rate: r,
        source_class: y,
    })
}

/// The `r -> -inf` limit of `gls(y, r) / (1 - r)`, i.e. `onehot(y) - 1/K`.
pub fn normalized_extreme_label(y: usize, k: usize) -> Result<Vec<f64>> {
    check_label(y, k)?;
    let mut v = vec![-1.0 / k as f64; k];
    v[y] += 1.0;
    Ok(v)
}

/// A model prediction on the probability simplex with every entry at or
/// above the clamp floor.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps an already-normalized vector. Entries must be in `(0, 1]` and
    /// sum to one within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidDataset(format!(
                "probabilities must lie in (0, 1]: {probs:?}"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::PriorNotNormalized(s));
        }
        Ok(Self(probs))
    }

    /// Clamps every entry to `[eps, 1]` and renormalizes.
    pub fn clamped(mut probs: Vec<f64>, eps: f64) -> Self {
        for p in probs.iter_mut() {
            *p = p.clamp(eps, 1.0);
        }
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        Self(probs)
    }

    /// Softmax of `logits`, clamped and renormalized.
    pub fn from_logits(logits: &[f64], eps: f64) -> Self {
        Self::clamped(softmax(logits), eps)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Class-conditional noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Binary flips: `e0 = P(noisy=1 | clean=0)`, `e1 = P(noisy=0 | clean=1)`.
    BinaryAsym { e0: f64, e1: f64 },
    /// Flip to each other class with probability `epsilon / (K - 1)`.
    Symmetric { epsilon: f64 },
    /// Disjoint class pairs `(a, b)`: `a -> b` with `e0`, `b -> a` with `e1`.
    Sparse {
        pairs: Vec<(usize, usize)>,
        e0: f64,
        e1: f64,
    },
    /// Arbitrary row-stochastic matrix, row `i` being `P(noisy | clean=i)`.
    Custom { rows: Vec<Vec<f64>> },
}

impl NoiseSpec {
    /// Symmetric noise at rate `e`, the common case in the experiments.
    pub fn symmetric(e: f64) -> Self {
        NoiseSpec::Symmetric { epsilon: e }
    }

    /// A short stable name, used as a column key in reports.
    pub fn label(&self) -> String {
        match self {
            NoiseSpec::BinaryAsym { e0, e1 } => format!("asym({e0},{e1})"),
            NoiseSpec::Symmetric { epsilon } => format!("{epsilon}"),
            NoiseSpec::Sparse { e0, e1, .. } => format!("sparse({e0},{e1})"),
            NoiseSpec::Custom { .. } => "custom".to_string(),
        }
    }
}

/// `K x K` row-stochastic matrix with `T[i][j] = P(noisy = j | clean = i)`.
///
/// The full matrix is stored for every kind so that expected-risk algebra
/// has a single code path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
    spec: NoiseSpec,
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::NoiseRateOutOfRange { name, value });
    }
    Ok(())
}

pub fn build_transition(spec: &NoiseSpec, k: usize) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::ClassCount {
            required: 2,
            actual: k,
        });
    }
    let mut t = vec![0.0; k * k];
    match spec {
        NoiseSpec::BinaryAsym { e0, e1 } => {
            if k != 2 {
                return Err(Error::ClassCount {
                    required: 2,
                    actual: k,
                });
            }
            check_unit("e0", *e0)?;
            check_unit("e1", *e1)?;
            t.copy_from_slice(&[1.0 - e0, *e0, *e1, 1.0 - e1]);
        }
        NoiseSpec::Symmetric { epsilon } => {
            check_unit("epsilon", *epsilon)?;
            let off = epsilon / (k - 1) as f64;
            for i in 0..k {
                for j in 0..k {
                    t[i * k + j] = if i == j { 1.0 - epsilon } else { off };
                }
            }
        }
        NoiseSpec::Sparse { pairs, e0, e1 } => {
            if k % 2 != 0 {
                return Err(Error::InvalidNoiseSpec(format!(
                    "sparse noise needs an even class count, got {k}"
                )));
            }
            check_unit("e0", *e0)?;
            check_unit("e1", *e1)?;
            let mut used = vec![false; k];
            for i in 0..k {
                t[i * k + i] = 1.0;
            }
            for &(a, b) in pairs {
                check_label(a, k)?;
                check_label(b, k)?;
                if a == b || used[a] || used[b] {
                    return Err(Error::InvalidNoiseSpec(format!(
                        "sparse pairs must be disjoint; ({a}, {b}) overlaps"
                    )));
                }
                used[a] = true;
                used[b] = true;
                t[a * k + a] = 1.0 - e0;
                t[a * k + b] = *e0;
                t[b * k + b] = 1.0 - e1;
                t[b * k + a] = *e1;
            }
        }
        NoiseSpec::Custom { rows } => {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidNoiseSpec(format!(
                    "custom matrix must be {k}x{k}"
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    check_unit("T_ij", *v)?;
                    t[i * k + j] = *v;
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidNoiseSpec(format!(
                        "row {i} sums to {s}, not 1"
                    )));
                }
            }
        }
    }
    Ok(TransitionMatrix {
        k,
        entries: t,
        spec: spec.clone(),
    })
}

impl TransitionMatrix {
    pub fn identity(k: usize) -> Self {
        build_transition(&NoiseSpec::Symmetric { epsilon: 0.0 }, k)
            .expect("k >= 2 checked by caller")
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    /// `(e0, e1)` for a binary matrix.
    pub fn binary_rates(&self) -> Option<(f64, f64)> {
        (self.k == 2).then(|| (self.get(0, 1), self.get(1, 0)))
    }

    /// `e1 - e0` for a binary matrix.
    pub fn delta(&self) -> Option<f64> {
        self.binary_rates().map(|(e0, e1)| e1 - e0)
    }

    pub fn determinant(&self) -> f64 {
        crate::linalg::determinant(&self.entries, self.k)
    }

    /// Inverse via closed form (K = 2) or partially pivoted Gaussian
    /// elimination. Fails when `|det| <= 1e-9`.
    pub fn inverse(&self) -> Result<Vec<f64>> {
        crate::linalg::invert(&self.entries, self.k)
    }
}

/// Feature matrix plus hard labels, and the hidden clean labels once noise
/// has been injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    clean_labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes,
            });
        }
        Ok(Self {
            features,
            dim,
            labels,
            clean_labels: None,
            num_classes,
        })
    }

    pub fn with_clean_labels(mut self, clean: Vec<usize>) -> Result<Self> {
        if clean.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                expected: self.labels.len(),
                actual: clean.len(),
            });
        }
        if let Some(&y) = clean.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: self.num_classes,
            });
        }
        self.clean_labels = Some(clean);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    /// Clean labels when known, otherwise the observed labels.
    pub fn reference_labels(&self) -> &[usize] {
        self.clean_labels.as_deref().unwrap_or(&self.labels)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub(crate) fn replace_labels(&mut self, labels: Vec<usize>) {
        self.labels = labels;
    }
}
