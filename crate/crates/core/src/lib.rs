//! Speaker diarization with ClusterGAN latent embeddings.
//!
//! The pipeline trains a generator/discriminator/encoder trio on fixed-length
//! speaker embeddings, encodes test segments into a discrete-continuous
//! latent space, clusters them with k-means (speaker count given or estimated
//! by eigen-gap analysis), and scores hypotheses against references with a
//! collar-aware diarization error rate.

pub mod adam;
pub mod clustergan;
pub mod clustering;
pub mod error;
pub mod mlp;
pub mod pipeline;
pub mod scoring;
pub mod tensor;

pub use error::{Error, Result};
