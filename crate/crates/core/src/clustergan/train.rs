//! Joint training loop: n_critic discriminator updates per iteration, then
//! one generator+encoder update on the combined objective.

use super::losses::{cluster_ce_from_logits, cosine_recovery_loss, critic_loss};
use super::{ClusterGanConfig, ClusterGanModel, LatentSampler};
use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One training-log line, serialized as JSON-lines by callers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean critic loss over the n_critic updates of this iteration.
    pub critic_loss: f64,
    /// Combined generator+encoder loss.
    pub generator_loss: f64,
    pub cos_loss: f64,
    pub ce_loss: f64,
    pub wall_time_s: f64,
    pub critic_updates: usize,
    pub generator_updates: usize,
}

pub struct Trained {
    pub model: ClusterGanModel<f32>,
    pub log: Vec<TrainRecord>,
    /// Set when training aborted on a non-finite loss; the model is the last
    /// state before the failed update.
    pub diverged_at: Option<usize>,
}

/// Train a ClusterGAN on `embeddings` (N×embedding_dim, 32-bit) with speaker
/// `labels` in 0..d_c. Deterministic given `config.seed`.
pub fn train(
    config: &ClusterGanConfig,
    embeddings: &Tensor<f32>,
    labels: &[usize],
    speaker_table: Vec<String>,
) -> Result<Trained> {
    config.validate()?;
    let n = embeddings.rows();
    if n < config.batch_size {
        return Err(Error::Data(format!(
            "{} training rows but batch size is {}",
            n, config.batch_size
        )));
    }
    if labels.len() != n {
        return Err(Error::Data("labels do not align with embeddings".into()));
    }
    if embeddings.cols() != config.embedding_dim {
        return Err(Error::Dimension(format!(
            "embedding width {} vs configured {}",
            embeddings.cols(),
            config.embedding_dim
        )));
    }
    if !embeddings.all_finite() {
        return Err(Error::Data("non-finite training embeddings".into()));
    }
    let mut counts = vec![0u64; config.d_c];
    for &l in labels {
        if l >= config.d_c {
            return Err(Error::Data(format!("label {l} out of range {}", config.d_c)));
        }
        counts[l] += 1;
    }
    let sampler = LatentSampler::new(config.d_n, config.d_c, config.sigma, &counts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ClusterGanModel::init(config, speaker_table, &mut rng)?;

    let mut adam_d = AdamState::new(config.adam, &model.discriminator.params());
    let mut ge_params: Vec<&Tensor<f32>> = model.generator.params();
    ge_params.extend(model.encoder.params());
    let mut adam_ge = AdamState::new(config.adam, &ge_params);
    drop(ge_params);

    let a = config.weight_adv as f32;
    let b = config.weight_cos as f32;
    let c = config.weight_ce as f32;
    let lambda = config.lambda_gp as f32;
    let m = config.batch_size;
    let d_n = config.d_n;

    let mut log = Vec::with_capacity(config.iterations);
    let start = Instant::now();
    let mut critic_updates = 0usize;
    let mut generator_updates = 0usize;

    for it in 1..=config.iterations {
        let mut critic_sum = 0.0f64;
        for _ in 0..config.n_critic {
            // sample a real batch and an independent latent batch
            let real = sample_rows(embeddings, m, &mut rng);
            let (z, _, _) = sampler.sample_batch::<f32, _>(&mut rng, m);
            let fake = model.generator.forward(&z)?.output().clone();

            let step = critic_loss(&model.discriminator, &real, &fake, lambda, &mut rng);
            let (loss, mut grads) = match step {
                Ok(v) => v,
                Err(Error::Divergence { .. }) => {
                    return Ok(Trained {
                        model,
                        log,
                        diverged_at: Some(it),
                    })
                }
                Err(e) => return Err(e),
            };
            grads.scale(a);
            let grad_refs: Vec<&Tensor<f32>> =
                grads.layers.iter().flat_map(|(w, bb)| [w, bb]).collect();
            if apply_adam(&mut adam_d, model.discriminator.params_mut(), &grad_refs)? {
                return Ok(Trained {
                    model,
                    log,
                    diverged_at: Some(it),
                });
            }
            critic_updates += 1;
            critic_sum += (a * loss.total) as f64;
        }

        // generator + encoder joint update
        let (z, z_n, z_indices) = sampler.sample_batch::<f32, _>(&mut rng, m);
        let g_trace = model.generator.forward(&z)?;
        let fake = g_trace.output();

        // adversarial term: -a * mean D(G(z))
        let d_trace = model.discriminator.forward(fake)?;
        let adv = -(a as f64)
            * d_trace.output().data().iter().map(|&v| v as f64).sum::<f64>()
            / m as f64;
        let neg = Tensor::from_vec(&[m, 1], vec![-a / m as f32; m])?;
        let d_back = model.discriminator.backward(&d_trace, &neg)?;

        // encoder on fakes
        let e_trace = model.encoder.forward(fake)?;
        let e_out = e_trace.output();
        let (e_n, e_logits) = split_columns(e_out, d_n);
        let (cos, d_cos) = match cosine_recovery_loss(&z_n, &e_n) {
            Ok(v) => v,
            Err(Error::DegenerateVector(_)) => {
                return Ok(Trained {
                    model,
                    log,
                    diverged_at: Some(it),
                })
            }
            Err(e) => return Err(e),
        };
        let (ce, d_ce) = cluster_ce_from_logits(&z_indices, &e_logits)?;

        // assemble dL/d(encoder output)
        let mut grad_e_out = Tensor::zeros(e_out.shape());
        for i in 0..m {
            let row = grad_e_out.row_mut(i);
            for (k, v) in d_cos.row(i).iter().enumerate() {
                row[k] = b * *v;
            }
            for (k, v) in d_ce.row(i).iter().enumerate() {
                row[d_n + k] = c * *v;
            }
        }
        let e_back = model.encoder.backward(&e_trace, &grad_e_out)?;

        // total gradient into the generator output
        let mut grad_fake = d_back.input;
        grad_fake.axpy(1.0, &e_back.input);
        let g_back = model.generator.backward(&g_trace, &grad_fake)?;

        let gen_loss = adv + (b * cos) as f64 + (c * ce) as f64;
        if !gen_loss.is_finite() {
            return Ok(Trained {
                model,
                log,
                diverged_at: Some(it),
            });
        }

        let grad_refs: Vec<&Tensor<f32>> = g_back
            .layers
            .iter()
            .chain(e_back.layers.iter())
            .flat_map(|(w, bb)| [w, bb])
            .collect();
        let mut params = model.generator.params_mut();
        params.extend(model.encoder.params_mut());
        if apply_adam_vec(&mut adam_ge, params, &grad_refs)? {
            return Ok(Trained {
                model,
                log,
                diverged_at: Some(it),
            });
        }
        generator_updates += 1;
        model.iteration = it;

        log.push(TrainRecord {
            iteration: it,
            critic_loss: critic_sum / config.n_critic as f64,
            generator_loss: gen_loss,
            cos_loss: cos as f64,
            ce_loss: ce as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
            critic_updates,
            generator_updates,
        });
    }

    Ok(Trained {
        model,
        log,
        diverged_at: None,
    })
}

/// Returns Ok(true) when the step was refused for non-finite gradients.
fn apply_adam(
    state: &mut AdamState<f32>,
    params: Vec<&mut Tensor<f32>>,
    grads: &[&Tensor<f32>],
) -> Result<bool> {
    apply_adam_vec(state, params, grads)
}

fn apply_adam_vec(
    state: &mut AdamState<f32>,
    mut params: Vec<&mut Tensor<f32>>,
    grads: &[&Tensor<f32>],
) -> Result<bool> {
    match state.step(&mut params, grads) {
        Ok(()) => Ok(false),
        Err(Error::Divergence { .. }) => Ok(true),
        Err(e) => Err(e),
    }
}

fn sample_rows<R: Rng>(data: &Tensor<f32>, m: usize, rng: &mut R) -> Tensor<f32> {
    let n = data.rows();
    let mut out = Tensor::zeros(&[m, data.cols()]);
    for i in 0..m {
        let j = rng.random_range(0..n);
        out.row_mut(i).copy_from_slice(data.row(j));
    }
    out
}

fn split_columns<T: Scalar>(t: &Tensor<T>, at: usize) -> (Tensor<T>, Tensor<T>) {
    let (m, w) = (t.rows(), t.cols());
    let mut left = Tensor::zeros(&[m, at]);
    let mut right = Tensor::zeros(&[m, w - at]);
    for i in 0..m {
        left.row_mut(i).copy_from_slice(&t.row(i)[..at]);
        right.row_mut(i).copy_from_slice(&t.row(i)[at..]);
    }
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(iterations: usize) -> ClusterGanConfig {
        ClusterGanConfig {
            d_n: 3,
            d_c: 2,
            embedding_dim: 6,
            hidden_dim: 8,
            batch_size: 4,
            n_critic: 2,
            iterations,
            seed: 7,
            ..Default::default()
        }
    }

    fn tiny_data() -> (Tensor<f32>, Vec<usize>) {
        let n = 16;
        let data: Vec<f32> = (0..n * 6).map(|i| ((i * 31 % 17) as f32 * 0.1) - 0.5).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        (Tensor::from_vec(&[n, 6], data).unwrap(), labels)
    }

    #[test]
    fn zero_iterations_returns_initialized_model() {
        let cfg = tiny_config(0);
        let (x, y) = tiny_data();
        let out = train(&cfg, &x, &y, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(out.model.iteration, 0);
        assert!(out.log.is_empty());
        assert!(out.diverged_at.is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh: ClusterGanModel<f32> =
            ClusterGanModel::init(&cfg, vec!["a".into(), "b".into()], &mut rng).unwrap();
        assert_eq!(out.model, fresh);
    }

    #[test]
    fn update_counts_match_contract() {
        let cfg = tiny_config(5);
        let (x, y) = tiny_data();
        let out = train(&cfg, &x, &y, vec!["a".into(), "b".into()]).unwrap();
        let last = out.log.last().unwrap();
        assert_eq!(last.critic_updates, cfg.iterations * cfg.n_critic);
        assert_eq!(last.generator_updates, cfg.iterations);
        assert_eq!(out.log.len(), cfg.iterations);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = tiny_config(3);
        let (x, y) = tiny_data();
        let a = train(&cfg, &x, &y, vec!["a".into(), "b".into()]).unwrap();
        let b = train(&cfg, &x, &y, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let cfg = tiny_config(1);
        let (x, mut y) = tiny_data();
        y[3] = 9;
        assert!(train(&cfg, &x, &y, vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let cfg = tiny_config(1);
        let x = Tensor::zeros(&[2, 6]);
        assert!(train(&cfg, &x, &[0, 1], vec!["a".into(), "b".into()]).is_err());
    }
}
