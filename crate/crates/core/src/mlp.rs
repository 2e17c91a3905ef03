//! Fixed-topology feed-forward networks with reverse-mode gradients.
//!
//! The networks here are plain affine + ReLU stacks. `forward` retains the
//! activations needed by `backward`, and `input_gradient_with_deltas` exposes
//! the extra state needed to differentiate through an input gradient (the
//! gradient-penalty term needs second-order information w.r.t. parameters).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T: Scalar> {
    /// out×in weight matrix.
    pub weight: Tensor<T>,
    /// Bias vector, length out.
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A feed-forward network: ordered affine layers with per-layer activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T: Scalar> {
    layers: Vec<Layer<T>>,
}

/// Activations retained by a forward pass, keyed to the batch it ran on.
pub struct ForwardTrace<T: Scalar> {
    /// Input batch, m×in.
    pub input: Tensor<T>,
    /// Pre-activation z_l = a_{l-1} W_l^T + b_l, one per layer, m×out_l.
    pub pre_activations: Vec<Tensor<T>>,
    /// Post-activation a_l, one per layer; last is the network output.
    pub activations: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().unwrap()
    }
}

/// Per-parameter gradients plus the gradient w.r.t. the input batch.
pub struct ModelGradients<T: Scalar> {
    /// (dW, db) per layer, shaped like the layer parameters.
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
    /// m×in gradient w.r.t. the forward input.
    pub input: Tensor<T>,
}

impl<T: Scalar> ModelGradients<T> {
    pub fn zeros_like(model: &MlpModel<T>, batch_rows: usize) -> Self {
        ModelGradients {
            layers: model
                .layers
                .iter()
                .map(|l| (Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())))
                .collect(),
            input: Tensor::zeros(&[batch_rows, model.input_dim()]),
        }
    }

    /// self += other * s (parameter gradients only).
    pub fn accumulate(&mut self, s: T, other: &ModelGradients<T>) {
        for ((dw, db), (ow, ob)) in self.layers.iter_mut().zip(other.layers.iter()) {
            dw.axpy(s, ow);
            db.axpy(s, ob);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (dw, db) in &mut self.layers {
            dw.scale_in_place(s);
            db.scale_in_place(s);
        }
        self.input.scale_in_place(s);
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.all_finite() && b.all_finite())
    }
}

impl<T: Scalar> MlpModel<T> {
    /// He-style uniform init scaled by fan-in for the weights, zero biases.
    /// `dims` is [in, h1, ..., out]; hidden layers are ReLU, final is linear.
    pub fn new_mlp<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = T::from_f64((6.0 / fan_in as f64).sqrt());
            let data: Vec<T> = (0..fan_in * fan_out)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    bound * T::from_f64(u)
                })
                .collect();
            let activation = if layers.len() + 2 == dims.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight: Tensor::from_vec(&[fan_out, fan_in], data).unwrap(),
                bias: Tensor::zeros(&[fan_out]),
                activation,
            });
        }
        MlpModel { layers }
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer chain mismatch: {} -> {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flattened views of all parameter tensors, weight then bias per layer.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch width {} does not match model input dim {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let m = batch.rows();
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let mut z = current.matmul_nt(&layer.weight);
            for i in 0..m {
                let row = z.row_mut(i);
                for (v, &b) in row.iter_mut().zip(layer.bias.data()) {
                    *v = *v + b;
                }
            }
            let a = match layer.activation {
                Activation::Linear => z.clone(),
                Activation::Relu => z.map(|v| if v > T::zero() { v } else { T::zero() }),
            };
            pre_activations.push(z);
            current = a.clone();
            activations.push(a);
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            pre_activations,
            activations,
        })
    }

    /// Reverse pass. `grad_output` is dL/d(output), m×out. Returns parameter
    /// gradients and the gradient w.r.t. the input batch.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: &Tensor<T>,
    ) -> Result<ModelGradients<T>> {
        if trace.activations.len() != self.layers.len() {
            return Err(Error::State(
                "forward trace does not match model topology".into(),
            ));
        }
        if grad_output.shape() != trace.output().shape() {
            return Err(Error::Dimension(
                "grad_output shape does not match forward output".into(),
            ));
        }
        let n_layers = self.layers.len();
        let mut grads: Vec<(Tensor<T>, Tensor<T>)> = Vec::with_capacity(n_layers);
        // delta at pre-activation of the current layer
        let mut delta = apply_activation_grad(grad_output, &trace.pre_activations[n_layers - 1], self.layers[n_layers - 1].activation);
        for l in (0..n_layers).rev() {
            let prev_act: &Tensor<T> = if l == 0 {
                &trace.input
            } else {
                &trace.activations[l - 1]
            };
            // dW_l = delta^T @ prev_act, db_l = column sums of delta
            let mut dw = Tensor::zeros(self.layers[l].weight.shape());
            delta.matmul_tn_into(prev_act, T::one(), &mut dw);
            let mut db = Tensor::zeros(self.layers[l].bias.shape());
            for i in 0..delta.rows() {
                let row = delta.row(i);
                for (b, &d) in db.data_mut().iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
            grads.push((dw, db));
            // propagate to previous layer
            let grad_prev = delta.matmul(&self.layers[l].weight); // m×in_l
            delta = if l == 0 {
                grad_prev
            } else {
                apply_activation_grad(&grad_prev, &trace.pre_activations[l - 1], self.layers[l - 1].activation)
            };
        }
        grads.reverse();
        Ok(ModelGradients {
            layers: grads,
            input: delta,
        })
    }

    /// Input gradient of `sum(outputs)` plus the per-layer pre-activation
    /// deltas of that backward pass. The deltas let a caller backpropagate a
    /// function of the input gradient to the parameters (ReLU masks treated
    /// as locally constant).
    pub fn input_gradient_with_deltas(
        &self,
        trace: &ForwardTrace<T>,
    ) -> (Tensor<T>, Vec<Tensor<T>>) {
        let n_layers = self.layers.len();
        let m = trace.input.rows();
        let ones = Tensor::from_vec(
            &[m, self.output_dim()],
            vec![T::one(); m * self.output_dim()],
        )
        .unwrap();
        let mut deltas: Vec<Tensor<T>> = vec![Tensor::zeros(&[0]); n_layers];
        let mut delta = apply_activation_grad(&ones, &trace.pre_activations[n_layers - 1], self.layers[n_layers - 1].activation);
        for l in (0..n_layers).rev() {
            deltas[l] = delta.clone();
            let grad_prev = delta.matmul(&self.layers[l].weight);
            delta = if l == 0 {
                grad_prev
            } else {
                apply_activation_grad(&grad_prev, &trace.pre_activations[l - 1], self.layers[l - 1].activation)
            };
        }
        (delta, deltas)
    }

    /// Given `grad_wrt_input_gradient` (dP/dg, m×in) for a scalar function P
    /// of the input gradient g computed by `input_gradient_with_deltas`,
    /// accumulate dP/dW_l into `grads`. Bias gradients of this path are zero
    /// almost everywhere (biases reach g only through ReLU masks).
    pub fn backprop_through_input_gradient(
        &self,
        trace: &ForwardTrace<T>,
        deltas: &[Tensor<T>],
        grad_wrt_input_gradient: &Tensor<T>,
        scale: T,
        grads: &mut ModelGradients<T>,
    ) {
        // c_l = dP/ds_l where s_l = W_l^T t_l per row; c_1 = dP/dg.
        let mut c = grad_wrt_input_gradient.clone();
        for l in 0..self.layers.len() {
            // dP/dW_l += t_l^T-outer-c_l summed over rows
            deltas[l].matmul_tn_into(&c, scale, &mut grads.layers[l].0);
            if l + 1 < self.layers.len() {
                let wc = c.matmul_nt(&self.layers[l].weight); // m×out_l
                c = mask_like(&wc, &trace.pre_activations[l], self.layers[l].activation);
            }
        }
    }
}

fn apply_activation_grad<T: Scalar>(
    upstream: &Tensor<T>,
    pre: &Tensor<T>,
    act: Activation,
) -> Tensor<T> {
    match act {
        Activation::Linear => upstream.clone(),
        Activation::Relu => mask_like(upstream, pre, act),
    }
}

/// Elementwise upstream * relu'(pre). ReLU subgradient at exactly 0 is 0.
fn mask_like<T: Scalar>(upstream: &Tensor<T>, pre: &Tensor<T>, act: Activation) -> Tensor<T> {
    match act {
        Activation::Linear => upstream.clone(),
        Activation::Relu => {
            let mut out = upstream.clone();
            for (v, &p) in out.data_mut().iter_mut().zip(pre.data()) {
                if p <= T::zero() {
                    *v = T::zero();
                }
            }
            out
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize, act: Activation) -> Layer<f64> {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        Layer {
            weight: w,
            bias: Tensor::zeros(&[dim]),
            activation: act,
        }
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let model = MlpModel::from_layers(vec![identity_layer(3, Activation::Linear)]).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let trace = model.forward(&x).unwrap();
        assert_eq!(trace.output(), &x);
    }

    #[test]
    fn identity_relu_layer_clamps_negatives() {
        let model = MlpModel::from_layers(vec![identity_layer(2, Activation::Relu)]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap();
        let trace = model.forward(&x).unwrap();
        assert_eq!(trace.output().data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_forward_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model: MlpModel<f64> = MlpModel::new_mlp(&[3, 4, 2], &mut rng);
        let x = Tensor::from_vec(&[1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let trace = model.forward(&x).unwrap();

        // straight-line: W2·relu(W1·x + b1) + b2
        let l1 = &model.layers()[0];
        let l2 = &model.layers()[1];
        let mut h = vec![0.0f64; 4];
        for o in 0..4 {
            let mut s = l1.bias.data()[o];
            for i in 0..3 {
                s += l1.weight.data()[o * 3 + i] * x.data()[i];
            }
            h[o] = s.max(0.0);
        }
        for o in 0..2 {
            let mut s = l2.bias.data()[o];
            for i in 0..4 {
                s += l2.weight.data()[o * 4 + i] * h[i];
            }
            assert!((trace.output().data()[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_linear_backward_is_product_rule() {
        // y = w·x with w = [2, -3], x = [5, 7]
        let layer = Layer {
            weight: Tensor::from_vec(&[1, 2], vec![2.0, -3.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Linear,
        };
        let model = MlpModel::from_layers(vec![layer]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![5.0, 7.0]).unwrap();
        let trace = model.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let grads = model.backward(&trace, &g).unwrap();
        assert_eq!(grads.layers[0].0.data(), &[5.0, 7.0]); // dW = x
        assert_eq!(grads.input.data(), &[2.0, -3.0]); // dx = w
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: MlpModel<f64> = MlpModel::new_mlp(&[4, 5, 3], &mut rng);
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
        let trace = model.forward(&x).unwrap();
        let g = Tensor::zeros(&[2, 3]);
        let grads = model.backward(&trace, &g).unwrap();
        for (dw, db) in &grads.layers {
            assert!(dw.data().iter().all(|&v| v == 0.0));
            assert!(db.data().iter().all(|&v| v == 0.0));
        }
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model: MlpModel<f32> = MlpModel::new_mlp(&[6, 8, 2], &mut rng);
        let x = Tensor::from_vec(&[3, 6], (0..18).map(|i| (i as f32).sin()).collect()).unwrap();
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn backward_rejects_mismatched_grad_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model: MlpModel<f64> = MlpModel::new_mlp(&[2, 2], &mut rng);
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let trace = model.forward(&x).unwrap();
        let bad = Tensor::zeros(&[2, 2]);
        assert!(model.backward(&trace, &bad).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model: MlpModel<f64> = MlpModel::new_mlp(&[3, 2], &mut rng);
        let x = Tensor::zeros(&[1, 4]);
        assert!(model.forward(&x).is_err());
    }

    /// Central finite differences over every parameter of a scalar loss.
    pub fn finite_diff_check(
        model: &MlpModel<f64>,
        x: &Tensor<f64>,
        loss_fn: impl Fn(&MlpModel<f64>) -> f64,
        analytic: &ModelGradients<f64>,
        tol: f64,
    ) {
        let h = 1e-4;
        let mut m = model.clone();
        for l in 0..model.layers().len() {
            for which in 0..2 {
                let len = if which == 0 {
                    m.layers()[l].weight.len()
                } else {
                    m.layers()[l].bias.len()
                };
                for idx in 0..len {
                    let get = |mm: &mut MlpModel<f64>| -> *mut f64 {
                        if which == 0 {
                            &mut mm.layers_mut()[l].weight.data_mut()[idx]
                        } else {
                            &mut mm.layers_mut()[l].bias.data_mut()[idx]
                        }
                    };
                    let orig = unsafe { *get(&mut m) };
                    unsafe { *get(&mut m) = orig + h };
                    let fp = loss_fn(&m);
                    unsafe { *get(&mut m) = orig - h };
                    let fm = loss_fn(&m);
                    unsafe { *get(&mut m) = orig };
                    let fd = (fp - fm) / (2.0 * h);
                    let an = if which == 0 {
                        analytic.layers[l].0.data()[idx]
                    } else {
                        analytic.layers[l].1.data()[idx]
                    };
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / denom < tol,
                        "layer {l} p{which} idx {idx}: fd {fd} vs analytic {an} (x rows {})",
                        x.rows()
                    );
                }
            }
        }
    }

    /// True when every ReLU pre-activation is at least `margin` away from its
    /// kink, so finite differences with step << margin stay on one linear piece.
    pub fn clear_of_relu_kinks(model: &MlpModel<f64>, x: &Tensor<f64>, margin: f64) -> bool {
        let trace = model.forward(x).unwrap();
        model
            .layers()
            .iter()
            .zip(&trace.pre_activations)
            .filter(|(layer, _)| layer.activation == Activation::Relu)
            .all(|(_, pre)| pre.data().iter().all(|v| v.abs() > margin))
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut trials = 0;
        while trials < 5 {
            let model: MlpModel<f64> = MlpModel::new_mlp(&[4, 6, 5, 2], &mut rng);
            let x = Tensor::from_vec(
                &[3, 4],
                (0..12).map(|i| ((i * 7 + trials) as f64).sin()).collect(),
            )
            .unwrap();
            // a pre-activation within the FD step of a ReLU kink makes the
            // difference quotient meaningless there; redraw such cases
            if !clear_of_relu_kinks(&model, &x, 1e-3) {
                continue;
            }
            trials += 1;
            // loss = sum of squares of outputs
            let trace = model.forward(&x).unwrap();
            let grad_out = trace.output().map(|v| 2.0 * v);
            let analytic = model.backward(&trace, &grad_out).unwrap();
            finite_diff_check(
                &model,
                &x,
                |m| {
                    let t = m.forward(&x).unwrap();
                    t.output().data().iter().map(|v| v * v).sum()
                },
                &analytic,
                1e-4,
            );
        }
    }
}
