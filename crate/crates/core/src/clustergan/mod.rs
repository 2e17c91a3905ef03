//! ClusterGAN: generator/discriminator/encoder trio over speaker embeddings,
//! a discrete-continuous latent sampler, the adversarial / latent-recovery /
//! cluster-classification losses, and the joint training loop.

mod losses;
mod train;

pub use losses::{
    cluster_ce_from_logits, cluster_ce_loss, cosine_recovery_loss, critic_loss, CriticLoss,
};
pub use train::{train, TrainRecord, Trained};

use crate::adam::AdamParams;
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::tensor::{Scalar, Tensor};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGanConfig {
    /// Continuous latent dimension.
    pub d_n: usize,
    /// Categorical latent dimension = number of training speakers.
    pub d_c: usize,
    pub embedding_dim: usize,
    /// Width of the hidden layers in G, D and E.
    pub hidden_dim: usize,
    /// Std-dev of the continuous latent prior.
    pub sigma: f64,
    /// Gradient penalty coefficient.
    pub lambda_gp: f64,
    pub batch_size: usize,
    pub n_critic: usize,
    pub iterations: usize,
    /// Loss weights: adversarial, cosine recovery, cross-entropy.
    pub weight_adv: f64,
    pub weight_cos: f64,
    pub weight_ce: f64,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for ClusterGanConfig {
    fn default() -> Self {
        ClusterGanConfig {
            d_n: 30,
            d_c: 2,
            embedding_dim: 512,
            hidden_dim: 512,
            sigma: 0.1,
            lambda_gp: 10.0,
            batch_size: 64,
            n_critic: 5,
            iterations: 30_000,
            weight_adv: 1.0,
            weight_cos: 2.0,
            weight_ce: 10.0,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

impl ClusterGanConfig {
    pub fn latent_dim(&self) -> usize {
        self.d_n + self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_n < 1 {
            return Err(Error::Config("d_n must be >= 1".into()));
        }
        if self.d_c < 2 {
            return Err(Error::Config("d_c must be >= 2".into()));
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("dims and batch size must be positive".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        if self.lambda_gp < 0.0
            || self.weight_adv < 0.0
            || self.weight_cos < 0.0
            || self.weight_ce < 0.0
        {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generator input: continuous noise concatenated with a one-hot speaker code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z_n: Vec<f64>,
    pub speaker_index: usize,
    pub d_c: usize,
}

impl LatentCode {
    pub fn z_c_one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.d_c];
        v[self.speaker_index] = 1.0;
        v
    }

    /// Concatenated [z_n, z_c] as a row of scalars.
    pub fn to_row<T: Scalar>(&self) -> Vec<T> {
        let mut row: Vec<T> = self.z_n.iter().map(|&v| T::from_f64(v)).collect();
        row.extend(self.z_c_one_hot().iter().map(|&v| T::from_f64(v)));
        row
    }
}

/// Samples latent codes: z_n ~ N(0, sigma² I), z_c one-hot of a given index
/// or of one drawn from the empirical training-label distribution.
pub struct LatentSampler {
    d_n: usize,
    d_c: usize,
    sigma: f64,
    label_dist: WeightedIndex<u64>,
}

impl LatentSampler {
    /// `label_counts` is the per-speaker segment count of the training set;
    /// pass uniform counts when no empirical distribution applies.
    pub fn new(d_n: usize, d_c: usize, sigma: f64, label_counts: &[u64]) -> Result<Self> {
        if label_counts.len() != d_c {
            return Err(Error::Config(format!(
                "label counts cover {} speakers, expected {}",
                label_counts.len(),
                d_c
            )));
        }
        if label_counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("empty speaker class in training labels".into()));
        }
        let label_dist = WeightedIndex::new(label_counts.iter().copied())
            .map_err(|e| Error::Config(format!("bad label distribution: {e}")))?;
        Ok(LatentSampler {
            d_n,
            d_c,
            sigma,
            label_dist,
        })
    }

    pub fn uniform(d_n: usize, d_c: usize, sigma: f64) -> Self {
        Self::new(d_n, d_c, sigma, &vec![1; d_c]).unwrap()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, speaker_index: Option<usize>) -> LatentCode {
        let normal = rand_distr::Normal::new(0.0f64, self.sigma).unwrap();
        let z_n: Vec<f64> = (0..self.d_n).map(|_| normal.sample(rng)).collect();
        let speaker_index = match speaker_index {
            Some(i) => {
                assert!(i < self.d_c, "speaker index {i} out of range {}", self.d_c);
                i
            }
            None => self.label_dist.sample(rng),
        };
        LatentCode {
            z_n,
            speaker_index,
            d_c: self.d_c,
        }
    }

    /// Sample a whole batch as an m×(d_n+d_c) tensor plus the speaker indices
    /// and the raw z_n block.
    pub fn sample_batch<T: Scalar, R: Rng>(
        &self,
        rng: &mut R,
        m: usize,
    ) -> (Tensor<T>, Tensor<T>, Vec<usize>) {
        let d = self.d_n + self.d_c;
        let mut z = Tensor::zeros(&[m, d]);
        let mut z_n = Tensor::zeros(&[m, self.d_n]);
        let mut indices = Vec::with_capacity(m);
        for i in 0..m {
            let code = self.sample(rng, None);
            let row = code.to_row::<T>();
            z.row_mut(i).copy_from_slice(&row);
            z_n.row_mut(i).copy_from_slice(&row[..self.d_n]);
            indices.push(code.speaker_index);
        }
        (z, z_n, indices)
    }
}

/// The trained trio plus the speaker table defining the one-hot index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGanModel<T: Scalar> {
    pub config: ClusterGanConfig,
    pub generator: MlpModel<T>,
    pub discriminator: MlpModel<T>,
    pub encoder: MlpModel<T>,
    pub speaker_table: Vec<String>,
    /// Completed training iterations.
    pub iteration: usize,
}

impl<T: Scalar> ClusterGanModel<T> {
    /// Freshly initialized networks: G one hidden layer, D two, E one.
    pub fn init<R: Rng>(config: &ClusterGanConfig, speaker_table: Vec<String>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if speaker_table.len() != config.d_c {
            return Err(Error::Config(format!(
                "speaker table has {} entries, expected d_c = {}",
                speaker_table.len(),
                config.d_c
            )));
        }
        let d = config.latent_dim();
        let (e, h) = (config.embedding_dim, config.hidden_dim);
        let generator = MlpModel::new_mlp(&[d, h, e], rng);
        let discriminator = MlpModel::new_mlp(&[e, h, h, 1], rng);
        let encoder = MlpModel::new_mlp(&[e, h, d], rng);
        Ok(ClusterGanModel {
            config: config.clone(),
            generator,
            discriminator,
            encoder,
            speaker_table,
            iteration: 0,
        })
    }

    /// Encoder inference: rows are [ẑ_n, softmax(ẑ_c logits)]. Processed one
    /// row at a time so the result is independent of batch partitioning.
    pub fn encode(&self, embeddings: &Tensor<T>) -> Result<Tensor<T>> {
        if embeddings.cols() != self.config.embedding_dim {
            return Err(Error::Dimension(format!(
                "embedding width {} does not match model dim {}",
                embeddings.cols(),
                self.config.embedding_dim
            )));
        }
        let d_n = self.config.d_n;
        let d = self.config.latent_dim();
        let n = embeddings.rows();
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let row = Tensor::from_vec(&[1, embeddings.cols()], embeddings.row(i).to_vec())?;
            let trace = self.encoder.forward(&row)?;
            let e = trace.output().row(0);
            let dst = out.row_mut(i);
            dst[..d_n].copy_from_slice(&e[..d_n]);
            softmax_into(&e[d_n..], &mut dst[d_n..]);
        }
        Ok(out)
    }

    /// Argmax of the encoder's categorical block, for diagnostics.
    pub fn encode_argmax(&self, embeddings: &Tensor<T>) -> Result<Vec<usize>> {
        let latent = self.encode(embeddings)?;
        let d_n = self.config.d_n;
        Ok((0..latent.rows())
            .map(|i| {
                let row = &latent.row(i)[d_n..];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(k, _)| k)
                    .unwrap()
            })
            .collect())
    }
}

/// Numerically shifted softmax.
pub(crate) fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// On-disk checkpoint: topology, parameters, seed and iteration count.
/// JSON keeps the container self-describing; floats round-trip exactly.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: ClusterGanModel<f32>,
}

pub fn save_checkpoint(model: &ClusterGanModel<f32>, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: "clustergan-checkpoint-v1".into(),
        model: model.clone(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &ck)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ClusterGanModel<f32>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ck: Checkpoint = serde_json::from_reader(file)?;
    if ck.format != "clustergan-checkpoint-v1" {
        return Err(Error::Data(format!("unknown checkpoint format {}", ck.format)));
    }
    Ok(ck.model)
}
