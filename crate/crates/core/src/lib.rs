//! Concept interventions on embeddings and the counterfactual texts they
//! induce.
//!
//! The pipeline is `T' = inv(f(enc(T)))`: encode a text, apply an affine
//! intervention `f`, and invert the result back to text. Three families of
//! `f` are provided:
//!
//! * [`intervention::fit_erase`]: least-squares concept erasure, after which
//!   no linear probe beats the majority rate on the concept;
//! * [`intervention::fit_mimic`]: the Gaussian transport map that moves one
//!   class's mean and covariance onto the other's;
//! * [`intervention::fit_mimic_plus`]: the same map followed by a push of
//!   `α (μ_target − μ_source)`.
//!
//! [`world`] supplies a synthetic generator with an exactly invertible
//! encoder, [`text`] measures word-frequency shifts between corpora, and
//! [`fairness`] measures TPR gaps and runs the augmentation experiment.
//!
//! ```
//! use repcf::data::{gaussian_two_class, GaussianSpec};
//! use repcf::intervention::{apply, fit_erase};
//! use repcf::linalg::compute_moments;
//!
//! let data = gaussian_two_class(&GaussianSpec { dim: 4, per_class: 200, ..Default::default() });
//! let eraser = fit_erase(&data)?;
//! let moved = apply(&eraser, &data.embeddings, None)?;
//! let m0 = compute_moments(&moved, &data.mask(0))?.mean;
//! let m1 = compute_moments(&moved, &data.mask(1))?.mean;
//! assert!(m0.iter().zip(&m1).all(|(a, b)| (a - b).abs() < 1e-9));
//! # Ok::<(), repcf::Error>(())
//! ```

mod binio;
pub mod data;
pub mod error;
pub mod fairness;
pub mod intervention;
pub mod io;
pub mod linalg;
pub mod probe;
pub mod text;
pub mod world;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests so the book cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/moments.md")]
    mod moments {}
    #[doc = include_str!("../../../book/src/erasure.md")]
    mod erasure {}
    #[doc = include_str!("../../../book/src/steering.md")]
    mod steering {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/delta.md")]
    mod delta {}
    #[doc = include_str!("../../../book/src/fairness.md")]
    mod fairness {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
