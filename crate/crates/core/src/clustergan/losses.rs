//! The three training losses and their analytic gradients.

use crate::error::{Error, Result};
use crate::mlp::{MlpModel, ModelGradients};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// Critic loss split into its parts, in minimization form:
/// mean[D(fake)] - mean[D(real)] + lambda * GP.
#[derive(Debug, Clone, Copy)]
pub struct CriticLoss<T> {
    pub total: T,
    pub adversarial: T,
    pub gradient_penalty: T,
}

/// Wasserstein critic loss with two-sided gradient penalty on per-row
/// interpolates x̂ = eps*real + (1-eps)*fake, eps ~ U(0,1). Returns the loss
/// parts and the gradients w.r.t. every discriminator parameter.
pub fn critic_loss<T: Scalar, R: Rng>(
    discriminator: &MlpModel<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda_gp: T,
    rng: &mut R,
) -> Result<(CriticLoss<T>, ModelGradients<T>)> {
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "real batch {:?} vs fake batch {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let m = real.rows();
    let inv_m = T::from_f64(1.0 / m as f64);

    let fake_trace = discriminator.forward(fake)?;
    let real_trace = discriminator.forward(real)?;
    let mean_fake = mean(fake_trace.output());
    let mean_real = mean(real_trace.output());
    let adversarial = mean_fake - mean_real;

    let ones = Tensor::from_vec(&[m, 1], vec![inv_m; m])?;
    let neg_ones = Tensor::from_vec(&[m, 1], vec![T::zero() - inv_m; m])?;
    let mut grads = discriminator.backward(&fake_trace, &ones)?;
    let real_grads = discriminator.backward(&real_trace, &neg_ones)?;
    grads.accumulate(T::one(), &real_grads);

    // interpolates
    let mut interp = Tensor::zeros(real.shape());
    for i in 0..m {
        let eps = T::from_f64(rng.random::<f64>());
        let (r, f, o) = (real.row(i), fake.row(i), interp.row_mut(i));
        for k in 0..o.len() {
            o[k] = eps * r[k] + (T::one() - eps) * f[k];
        }
    }
    let interp_trace = discriminator.forward(&interp)?;
    let (input_grad, deltas) = discriminator.input_gradient_with_deltas(&interp_trace);

    // GP = mean[(||g_i|| - 1)^2]; dGP/dg_i = (2/m)(||g_i|| - 1) g_i / ||g_i||
    let mut gp = T::zero();
    let mut grad_wrt_g = Tensor::zeros(input_grad.shape());
    let two_over_m = T::from_f64(2.0 / m as f64);
    for i in 0..m {
        let g = input_grad.row(i);
        let norm = g.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let dev = norm - T::one();
        gp = gp + dev * dev * inv_m;
        if norm > T::from_f64(1e-30) {
            let coeff = two_over_m * dev / norm;
            for (o, &v) in grad_wrt_g.row_mut(i).iter_mut().zip(g) {
                *o = coeff * v;
            }
        }
    }
    discriminator.backprop_through_input_gradient(
        &interp_trace,
        &deltas,
        &grad_wrt_g,
        lambda_gp,
        &mut grads,
    );

    let total = adversarial + lambda_gp * gp;
    if !total.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            detail: "non-finite critic loss".into(),
        });
    }
    Ok((
        CriticLoss {
            total,
            adversarial,
            gradient_penalty: gp,
        },
        grads,
    ))
}

/// Mean over the batch of (1 - cosine similarity) between target z_n rows and
/// recovered rows. Returns the loss and its gradient w.r.t. the recovered
/// batch. Rows with norm below 1e-12 are refused.
pub fn cosine_recovery_loss<T: Scalar>(
    z_n: &Tensor<T>,
    recovered: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    if z_n.shape() != recovered.shape() {
        return Err(Error::Dimension(format!(
            "z_n {:?} vs recovered {:?}",
            z_n.shape(),
            recovered.shape()
        )));
    }
    let m = z_n.rows();
    let inv_m = T::from_f64(1.0 / m as f64);
    let floor = T::from_f64(1e-12);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(recovered.shape());
    for i in 0..m {
        let (z, e) = (z_n.row(i), recovered.row(i));
        let nz = z.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let ne = e.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if nz < floor || ne < floor {
            return Err(Error::DegenerateVector(format!(
                "row {i} has near-zero norm in cosine loss"
            )));
        }
        let dot = z.iter().zip(e).fold(T::zero(), |a, (&a1, &b1)| a + a1 * b1);
        let cos = dot / (nz * ne);
        loss = loss + (T::one() - cos) * inv_m;
        // d(1-cos)/de = -(z/(|e||z|) - dot*e/(|e|^3 |z|))
        let c1 = T::one() / (ne * nz);
        let c2 = dot / (ne * ne * ne * nz);
        for ((g, &zv), &ev) in grad.row_mut(i).iter_mut().zip(z).zip(e) {
            *g = (c2 * ev - c1 * zv) * inv_m;
        }
    }
    Ok((loss, grad))
}

/// Cross-entropy against one-hot targets given encoder softmax outputs, per
/// the module contract: rows must sum to 1 within 1e-5; a zero predicted
/// probability at the true class is clamped at log(1e-30) and counted, not a
/// crash. Returns (loss, clamp count).
pub fn cluster_ce_loss<T: Scalar>(z_c: &Tensor<T>, probs: &Tensor<T>) -> Result<(T, u64)> {
    if z_c.shape() != probs.shape() {
        return Err(Error::Dimension(format!(
            "z_c {:?} vs probs {:?}",
            z_c.shape(),
            probs.shape()
        )));
    }
    let m = probs.rows();
    let tol = T::from_f64(1e-5);
    let log_floor = T::from_f64(1e-30).ln();
    let mut clamped = 0u64;
    let mut loss = T::zero();
    for i in 0..m {
        let row_sum = probs.row(i).iter().fold(T::zero(), |a, &v| a + v);
        if (row_sum - T::one()).abs() > tol {
            return Err(Error::Data(format!(
                "softmax row {i} sums to {:?}, not 1",
                row_sum.to_f64()
            )));
        }
        for (&t, &p) in z_c.row(i).iter().zip(probs.row(i)) {
            if t > T::zero() {
                let lp = if p <= T::zero() {
                    clamped += 1;
                    log_floor
                } else {
                    p.ln().max(log_floor)
                };
                loss = loss - t * lp;
            }
        }
    }
    Ok((loss / T::from_f64(m as f64), clamped))
}

/// Fused log-softmax cross-entropy from logits: the numerically stable path
/// used in training. Returns the loss and its gradient w.r.t. the logits,
/// (softmax - one_hot)/m.
pub fn cluster_ce_from_logits<T: Scalar>(
    targets: &[usize],
    logits: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let m = logits.rows();
    if targets.len() != m {
        return Err(Error::Dimension("targets do not match logits rows".into()));
    }
    let d_c = logits.cols();
    let inv_m = T::from_f64(1.0 / m as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..m {
        let t = targets[i];
        if t >= d_c {
            return Err(Error::Data(format!("target {t} out of range {d_c}")));
        }
        let row = logits.row(i);
        let max = row
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let log_sum = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - max).exp())
            .ln()
            + max;
        loss = loss + (log_sum - row[t]) * inv_m;
        let g = grad.row_mut(i);
        for k in 0..d_c {
            let p = (row[k] - log_sum).exp();
            g[k] = p * inv_m;
        }
        g[t] = g[t] - inv_m;
    }
    Ok((loss, grad))
}

fn mean<T: Scalar>(t: &Tensor<T>) -> T {
    t.data().iter().fold(T::zero(), |a, &v| a + v) / T::from_f64(t.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, Layer, MlpModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_gp() {
        // D(x) = w·x with ||w|| = 1: gradient norm is exactly 1 everywhere
        let w = vec![0.6, 0.8];
        let d = MlpModel::from_layers(vec![Layer {
            weight: tensor(&[1, 2], w),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Linear,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let real = tensor(&[4, 2], vec![1.0, 2.0, -3.0, 0.5, 2.2, -1.1, 0.0, 4.0]);
        let fake = tensor(&[4, 2], vec![0.3, -0.2, 1.0, 1.0, -2.0, 2.0, 5.0, -5.0]);
        let (loss, _) = critic_loss(&d, &real, &fake, 10.0, &mut rng).unwrap();
        assert!(loss.gradient_penalty.abs() < 1e-10);
    }

    #[test]
    fn identical_batches_cancel_adversarial_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d: MlpModel<f64> = MlpModel::new_mlp(&[3, 5, 1], &mut rng);
        let batch = tensor(&[4, 3], (0..12).map(|i| (i as f64).sin()).collect());
        let (loss, _) = critic_loss(&d, &batch, &batch.clone(), 0.0, &mut rng).unwrap();
        assert!(loss.adversarial.abs() < 1e-12);
    }

    #[test]
    fn nonlinear_critic_has_positive_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: MlpModel<f64> = MlpModel::new_mlp(&[4, 6, 1], &mut rng);
        let real = tensor(&[6, 4], (0..24).map(|i| (i as f64 * 0.7).sin()).collect());
        let fake = tensor(&[6, 4], (0..24).map(|i| (i as f64 * 1.3).cos()).collect());
        let (loss, _) = critic_loss(&d, &real, &fake, 10.0, &mut rng).unwrap();
        assert!(loss.gradient_penalty > 0.0);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        // includes the gradient penalty's second-order path
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d: MlpModel<f64> = MlpModel::new_mlp(&[4, 2, 1], &mut rng);
            let real = tensor(&[3, 4], (0..12).map(|i| (i as f64 * 0.31 + seed as f64).sin()).collect());
            let fake = tensor(&[3, 4], (0..12).map(|i| (i as f64 * 0.73).cos()).collect());
            let lambda = 10.0;
            // freeze eps draws so FD evaluates the same function
            let eps_rng = ChaCha8Rng::seed_from_u64(99 + seed);
            let (_, analytic) = critic_loss(&d, &real, &fake, lambda, &mut eps_rng.clone()).unwrap();
            crate::mlp::tests::finite_diff_check(
                &d,
                &real,
                |m| {
                    let (l, _) = critic_loss(m, &real, &fake, lambda, &mut eps_rng.clone()).unwrap();
                    l.total
                },
                &analytic,
                1e-4,
            );
        }
    }

    #[test]
    fn cosine_loss_trivial_cases() {
        let z = tensor(&[1, 3], vec![1.0, 2.0, 3.0]);
        // identical
        let (l, _) = cosine_recovery_loss(&z, &z.clone()).unwrap();
        assert!(l.abs() < 1e-12);
        // orthogonal
        let e = tensor(&[1, 3], vec![-2.0, 1.0, 0.0]);
        let (l, _) = cosine_recovery_loss(&z, &e).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        // antipodal
        let e = z.map(|v| -v);
        let (l, _) = cosine_recovery_loss(&z, &e).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_loss_refuses_zero_rows() {
        let z = tensor(&[1, 2], vec![1.0, 0.0]);
        let e = tensor(&[1, 2], vec![0.0, 0.0]);
        assert!(matches!(
            cosine_recovery_loss(&z, &e),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn cosine_loss_is_scale_invariant_in_prediction() {
        let z = tensor(&[2, 3], vec![1.0, -2.0, 0.5, 0.3, 0.3, -1.0]);
        let e = tensor(&[2, 3], vec![0.2, 1.0, -0.7, 1.5, -0.5, 0.25]);
        let (l1, _) = cosine_recovery_loss(&z, &e).unwrap();
        let (l2, _) = cosine_recovery_loss(&z, &e.map(|v| v * 7.3)).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let z = tensor(&[3, 4], (0..12).map(|i| (i as f64 * 0.9).sin() + 0.1).collect());
        let e = tensor(&[3, 4], (0..12).map(|i| (i as f64 * 0.4).cos() + 0.2).collect());
        let (_, grad) = cosine_recovery_loss(&z, &e).unwrap();
        let h = 1e-6;
        for idx in 0..12 {
            let mut ep = e.clone();
            ep.data_mut()[idx] += h;
            let (lp, _) = cosine_recovery_loss(&z, &ep).unwrap();
            let mut em = e.clone();
            em.data_mut()[idx] -= h;
            let (lm, _) = cosine_recovery_loss(&z, &em).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.data()[idx]).abs() < 1e-6, "idx {idx}");
        }
    }

    #[test]
    fn ce_perfect_prediction_is_zero() {
        let z = tensor(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let (l, clamped) = cluster_ce_loss(&z, &z.clone()).unwrap();
        assert!(l.abs() < 1e-12);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn ce_uniform_prediction_is_ln_k() {
        let z = tensor(&[1, 4], vec![0.0, 1.0, 0.0, 0.0]);
        let p = tensor(&[1, 4], vec![0.25; 4]);
        let (l, _) = cluster_ce_loss(&z, &p).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_clamps_zero_probability_with_counter() {
        let z = tensor(&[1, 2], vec![1.0, 0.0]);
        let p = tensor(&[1, 2], vec![0.0, 1.0]);
        let (l, clamped) = cluster_ce_loss(&z, &p).unwrap();
        assert_eq!(clamped, 1);
        assert!((l - (-(1e-30f64.ln()))).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_unnormalized_rows() {
        let z = tensor(&[1, 2], vec![1.0, 0.0]);
        let p = tensor(&[1, 2], vec![0.9, 0.3]);
        assert!(cluster_ce_loss(&z, &p).is_err());
    }

    #[test]
    fn fused_ce_agrees_with_probability_path() {
        let logits = tensor(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.7]);
        let targets = vec![2usize, 0];
        let (fused, _) = cluster_ce_from_logits(&targets, &logits).unwrap();
        let mut probs = Tensor::zeros(&[2, 3]);
        for i in 0..2 {
            crate::clustergan::softmax_into(logits.row(i), probs.row_mut(i));
        }
        let mut one_hot = Tensor::zeros(&[2, 3]);
        one_hot.row_mut(0)[2] = 1.0;
        one_hot.row_mut(1)[0] = 1.0;
        let (plain, _) = cluster_ce_loss(&one_hot, &probs).unwrap();
        assert!((fused - plain).abs() < 1e-12);
    }

    #[test]
    fn fused_ce_gradient_matches_finite_differences() {
        let logits = tensor(&[3, 4], (0..12).map(|i| (i as f64 * 1.7).sin()).collect());
        let targets = vec![1usize, 3, 0];
        let (_, grad) = cluster_ce_from_logits(&targets, &logits).unwrap();
        let h = 1e-6;
        for idx in 0..12 {
            let mut lp = logits.clone();
            lp.data_mut()[idx] += h;
            let (fp, _) = cluster_ce_from_logits(&targets, &lp).unwrap();
            let mut lm = logits.clone();
            lm.data_mut()[idx] -= h;
            let (fm, _) = cluster_ce_from_logits(&targets, &lm).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad.data()[idx]).abs() < 1e-6, "idx {idx}");
        }
    }
}
