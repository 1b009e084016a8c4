//! Supervised probes: softmax regression and a ReLU network, trained with
//! Adam on standardized inputs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::num::Scalar;
use crate::rng;

use super::metrics::ConfusionMatrix;
use super::{ProbeData, ProbeError, ProbeScore};

/// Hidden widths of the non-linear probe: D -> 512 -> 256 -> k.
pub const NN_HIDDEN: [usize; 2] = [512, 256];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 penalty on weight matrices (biases are not penalized).
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 50,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
struct Dense<T> {
    weights: Array2<T>,
    bias: Array1<T>,
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m_w: Array2<T>,
    v_w: Array2<T>,
    m_b: Array1<T>,
    v_b: Array1<T>,
}

/// Per-dimension standardization fitted on the training split.
#[derive(Debug, Clone)]
pub struct Standardizer<T> {
    mean: Array1<T>,
    inv_std: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: ArrayView2<T>) -> Self {
        let n = T::from_usize_lossy(x.nrows().max(1));
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<T>::zeros(x.ncols());
        for row in x.outer_iter() {
            for ((v, &a), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = a - mu;
                *v += d * d;
            }
        }
        let floor = T::lit(1e-12);
        let inv_std = var.mapv(|v| {
            let sd = (v / n).sqrt();
            if sd > floor { T::one() / sd } else { T::one() }
        });
        Standardizer { mean, inv_std }
    }

    pub fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            row -= &self.mean;
            row *= &self.inv_std;
        }
        out
    }
}

/// A trained probe classifier.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    layers: Vec<Dense<T>>,
    standardizer: Standardizer<T>,
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() { v } else { T::zero() }
}

/// Row-wise softmax in place.
fn softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for mut row in logits.outer_iter_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Cross-entropy of one row of logits against `label`, via log-sum-exp.
fn log_softmax_loss<T: Scalar>(logits: ndarray::ArrayView1<T>, label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    lse - logits[label]
}

impl<T: Scalar> Classifier<T> {
    fn init<R: Rng>(widths: &[usize], zero: bool, rng: &mut R) -> Vec<Dense<T>> {
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                if zero {
                    return Dense { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) };
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || T::lit(rng.random_range(-bound..bound));
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw),
                    bias: Array1::from_shape_simple_fn(fan_out, &mut draw),
                }
            })
            .collect()
    }

    /// Pre-activations of every layer for standardized input.
    fn forward(&self, x: &Array2<T>) -> Vec<Array2<T>> {
        let mut outputs: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x.clone() } else { outputs[i - 1].mapv(relu) };
            let z = input.dot(&layer.weights) + &layer.bias;
            outputs.push(z);
        }
        outputs
    }

    fn logits(&self, x: &Array2<T>) -> Array2<T> {
        self.forward(x).pop().expect("at least one layer")
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Vec<usize> {
        let logits = self.logits(&self.standardizer.apply(x));
        logits
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }

    /// Trains a network with the given hidden widths (empty = softmax
    /// regression, zero-initialized).
    pub fn train(
        x: ArrayView2<T>,
        y: &[usize],
        k: usize,
        hidden: &[usize],
        seed: u64,
        config: &TrainConfig,
    ) -> Result<Self, ProbeError> {
        let m = x.nrows();
        if y.len() != m {
            return Err(ProbeError::LengthMismatch { left: m, right: y.len() });
        }
        if m == 0 || k == 0 {
            return Err(ProbeError::Empty);
        }
        if let Some(&label) = y.iter().find(|&&l| l >= k) {
            return Err(ProbeError::LabelOutOfRange { label, k });
        }
        let standardizer = Standardizer::fit(x);
        let xs = standardizer.apply(x);

        let mut widths = vec![x.ncols()];
        widths.extend_from_slice(hidden);
        widths.push(k);
        let mut init_rng = rng::stream(seed, &[rng::tags::INIT]);
        let layers = Self::init(&widths, hidden.is_empty(), &mut init_rng);
        let mut moments: Vec<Moments<T>> = layers
            .iter()
            .map(|l| Moments {
                m_w: Array2::zeros(l.weights.raw_dim()),
                v_w: Array2::zeros(l.weights.raw_dim()),
                m_b: Array1::zeros(l.bias.len()),
                v_b: Array1::zeros(l.bias.len()),
            })
            .collect();
        let mut net = Classifier { layers, standardizer };

        let (lr, b1, b2, eps, l2) = (
            T::lit(config.learning_rate),
            T::lit(config.beta1),
            T::lit(config.beta2),
            T::lit(config.epsilon),
            T::lit(config.l2),
        );
        let half = T::lit(0.5);
        let batch = config.batch_size.max(1);
        let mut order: Vec<usize> = (0..m).collect();
        let mut step = 0i32;

        for epoch in 0..config.epochs {
            let mut epoch_rng = rng::stream(seed, &[rng::tags::EPOCH, epoch as u64]);
            order.shuffle(&mut epoch_rng);
            let mut epoch_loss = T::zero();
            for chunk in order.chunks(batch) {
                step += 1;
                let xb = xs.select(Axis(0), chunk);
                let n = T::from_usize_lossy(chunk.len());
                let pre = net.forward(&xb);
                let mut grad = pre.last().expect("output layer").clone();
                let mut batch_loss = T::zero();
                for (r, &idx) in chunk.iter().enumerate() {
                    batch_loss += log_softmax_loss(grad.row(r), y[idx]);
                }
                softmax_rows(&mut grad);
                for (r, &idx) in chunk.iter().enumerate() {
                    grad[[r, y[idx]]] -= T::one();
                }
                let penalty: T = net.layers.iter().map(|l| l.weights.iter().map(|&w| w * w).sum::<T>()).sum();
                epoch_loss += batch_loss / n + half * l2 * penalty;
                grad.mapv_inplace(|g| g / n);

                // backward pass, last layer first
                let bias_correction1 = T::one() - b1.powi(step);
                let bias_correction2 = T::one() - b2.powi(step);
                for li in (0..net.layers.len()).rev() {
                    let input = if li == 0 { xb.clone() } else { pre[li - 1].mapv(relu) };
                    let mut g_w = input.t().dot(&grad);
                    g_w.scaled_add(l2, &net.layers[li].weights);
                    let g_b = grad.sum_axis(Axis(0));
                    if li > 0 {
                        let mut next = grad.dot(&net.layers[li].weights.t());
                        next.zip_mut_with(&pre[li - 1], |g, &z| {
                            if z <= T::zero() {
                                *g = T::zero();
                            }
                        });
                        grad = next;
                    }
                    let mo = &mut moments[li];
                    let layer = &mut net.layers[li];
                    adam_update(&mut layer.weights, &mut mo.m_w, &mut mo.v_w, &g_w, [lr, b1, b2, eps, bias_correction1, bias_correction2]);
                    adam_update(&mut layer.bias, &mut mo.m_b, &mut mo.v_b, &g_b, [lr, b1, b2, eps, bias_correction1, bias_correction2]);
                }
            }
            if !epoch_loss.is_finite() {
                return Err(ProbeError::NonFiniteLoss { epoch });
            }
        }
        Ok(net)
    }
}

fn adam_update<T: Scalar, D: ndarray::Dimension>(
    param: &mut ndarray::Array<T, D>,
    m: &mut ndarray::Array<T, D>,
    v: &mut ndarray::Array<T, D>,
    grad: &ndarray::Array<T, D>,
    [lr, b1, b2, eps, c1, c2]: [T; 6],
) {
    ndarray::Zip::from(param).and(m).and(v).and(grad).for_each(|p, m, v, &g| {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

fn evaluate<T: Scalar>(net: &Classifier<T>, data: &ProbeData<T>) -> Result<ProbeScore, ProbeError> {
    let predictions = net.predict(data.x_test.view());
    let confusion = ConfusionMatrix::new(&data.y_test, &predictions, data.k)?;
    Ok(ProbeScore::from_confusion(confusion, data.y_train.len(), data.y_test.len()))
}

/// Multinomial logistic regression probe; F1 on the test split.
pub fn linear_probe<T: Scalar>(data: &ProbeData<T>, seed: u64, config: &TrainConfig) -> Result<ProbeScore, ProbeError> {
    data.check()?;
    let net = Classifier::train(data.x_train.view(), &data.y_train, data.k, &[], seed, config)?;
    evaluate(&net, data)
}

/// Two-hidden-layer ReLU network probe (D -> 512 -> 256 -> k).
pub fn nn_probe<T: Scalar>(data: &ProbeData<T>, seed: u64, config: &TrainConfig) -> Result<ProbeScore, ProbeError> {
    nn_probe_with(data, seed, config, &NN_HIDDEN)
}

pub fn nn_probe_with<T: Scalar>(
    data: &ProbeData<T>,
    seed: u64,
    config: &TrainConfig,
    hidden: &[usize],
) -> Result<ProbeScore, ProbeError> {
    data.check()?;
    let net = Classifier::train(data.x_train.view(), &data.y_train, data.k, hidden, seed, config)?;
    evaluate(&net, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn threshold_data() -> ProbeData<f64> {
        let xs: Vec<f64> = (0..80).map(|i| i as f64 / 10.0).collect();
        let y: Vec<usize> = xs.iter().map(|&v| usize::from(v >= 4.0)).collect();
        let x = Array2::from_shape_vec((80, 1), xs).unwrap();
        ProbeData { x_train: x.clone(), y_train: y.clone(), x_test: x, y_test: y, k: 2 }
    }

    #[test]
    fn one_dimensional_threshold() {
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let score = linear_probe(&threshold_data(), 1, &cfg).unwrap();
        assert_eq!(score.weighted_f1, 1.0);
    }

    #[test]
    fn non_finite_input_reports_epoch() {
        let mut data = threshold_data();
        data.x_train[[3, 0]] = f64::NAN;
        let err = linear_probe(&data, 1, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ProbeError::NonFiniteLoss { epoch: 0 }));
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::<f64>::fit(x.view());
        let z = s.apply(x.view());
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = threshold_data();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let a = Classifier::train(data.x_train.view(), &data.y_train, 2, &[8], 5, &cfg).unwrap();
        let b = Classifier::train(data.x_train.view(), &data.y_train, 2, &[8], 5, &cfg).unwrap();
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
        assert_eq!(a.layers[1].bias, b.layers[1].bias);
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Array2::<f64>::zeros((2, 1));
        assert!(matches!(
            Classifier::train(x.view(), &[0, 2], 2, &[], 0, &TrainConfig::default()),
            Err(ProbeError::LabelOutOfRange { label: 2, k: 2 })
        ));
    }
}
