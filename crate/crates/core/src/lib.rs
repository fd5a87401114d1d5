//! Fréchet and kernel distances between sets of feature embeddings, per-image
//! sensitivity heatmaps for the Fréchet distance, and the resampling attacks
//! that expose how much of the distance can be moved without changing what a
//! set of images looks like.
//!
//! Everything operates on plain feature matrices, so the numeric core can be
//! exercised with the synthetic mixtures in [`synth`] instead of a pretrained
//! network. Feature files produced by an external extractor are read and
//! written through [`feature_io`].

pub mod error;
pub mod feature_io;
pub mod frechet;
pub mod kernel;
pub mod resampling;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use frechet::{
    fid_grad_sample, fid_gradients, frechet_diagonal, frechet_distance, sqrtm_psd, FrechetGradients,
};
pub use kernel::{kid_polynomial, kid_rbf, KidConfig};
pub use stats::{
    compute_stats, downdate_stats, update_stats, weighted_stats, FeatureMatrix, GaussianStats,
    SampleWeights,
};
