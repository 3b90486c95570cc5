//! weakenlab: a desk-scale lab for feature-weakening data augmentation.
//!
//! Training a classifier on samples whose features are uniformly scaled
//! toward the origin (`x_hat = (1 - ws) * x`, applied to the raw input or to
//! the representation just before the decision layer) builds a vicinal
//! training distribution that keeps every sample's direction (cosine
//! similarity 1 with the original) while shrinking its magnitude and, with
//! it, the back-propagated gradient. This crate implements that transform
//! alongside Mixup, Cutout, CutMix and Dropout baselines, on top of a small
//! reverse-mode autodiff engine, with a deterministic training harness and an
//! FGSM / I-FGSM robustness evaluation.
//!
//! The `book/` directory holds a guide with runnable examples; its code
//! blocks are compiled as doc-tests.

pub mod adversarial;
pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(feature_weaken, "../../../book/src/feature-weaken.md");
    chapter!(autodiff, "../../../book/src/autodiff.md");
    chapter!(augmentation, "../../../book/src/augmentation.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(robustness, "../../../book/src/robustness.md");
    chapter!(cli, "../../../book/src/cli.md");
}
