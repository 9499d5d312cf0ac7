//! Generalized label smoothing (GLS) for learning with noisy labels.
//!
//! GLS trains against the soft label `(1 - r) onehot(y) + (r / K) 1` with a
//! smooth rate `r <= 1`. Positive rates are ordinary label smoothing;
//! negative rates push probability mass away from the other classes. The
//! crate provides the losses, the noise-model arithmetic that links GLS to
//! loss correction, peer loss and complementary labels, a small MLP trainer,
//! confidence and bias/variance metrics, synthetic data, numerical
//! certification of the identities, and a sweep harness.
//!
//! ```
//! use gls_lab::{gls_loss, ce, ProbVector};
//!
//! let p = ProbVector::new(vec![0.8, 0.2]).unwrap();
//! // r = 0 is plain cross-entropy
//! assert_eq!(gls_loss(&p, 0, 0.0).unwrap(), ce(&p, 0));
//! // negative rates mirror positive ones around 2 ce
//! let mirror = 2.0 * ce(&p, 0) - gls_loss(&p, 0, 0.6).unwrap();
//! assert!((gls_loss(&p, 0, -0.6).unwrap() - mirror).abs() < 1e-12);
//! ```

pub mod datagen;
pub mod error;
pub mod harness;
mod linalg;
pub mod losses;
pub mod metrics;
pub mod noise_math;
pub mod seeding;
pub mod trainer;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use losses::{
    backward_loss, ce, ce_soft, complementary_loss, forward_loss, gls_c_penalty, gls_loss, peer_loss_expected,
    peer_loss_sampled, peer_pairing, LossSpec,
};
pub use metrics::{bias_variance, confidence_report, loss_confidence, model_confidence, BiasVarianceReport, ConfidenceReport};
pub use noise_math::{
    correction_rate_r_lc, effective_noise, inject_noise, peer_rate_r_pl, predict_r_opt, r_opt_binary, r_opt_multiclass,
};
pub use trainer::{train, MlpModel, TrainConfig, TrainReport};
pub use types::{
    build_transition, make_gls_label, make_onehot, LabeledDataset, NoiseSpec, ProbVector, SoftLabel, TransitionMatrix,
};

// The guide's and README's snippets run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gls-labels.md")]
    mod gls_labels {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/connections.md")]
    mod connections {}
    #[doc = include_str!("../../../book/src/confidence.md")]
    mod confidence {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
