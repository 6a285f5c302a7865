//! Small dense networks with manual backprop and an adaptive-moment
//! optimizer. Everything is f64 and deterministic given the seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Smooth ramp `x * sigmoid(x)`.
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        let s = 1.0 / (1.0 + (-x).exp());
        x * s
    }

    fn derivative(self, x: f64) -> f64 {
        let s = 1.0 / (1.0 + (-x).exp());
        s * (1.0 + x * (1.0 - s))
    }
}

/// Fully connected network; the last layer is linear, all earlier layers get
/// the activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// Layer `l` maps `dims[l] -> dims[l+1]`; weights are `(out, in)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

/// Per-layer gradients in the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Cached forward pass: inputs to every layer plus pre-activations.
pub struct MlpCache {
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Xavier-normal initialization.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| std * standard_normal(rng));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        let mut a = input.clone();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let mut z = a.dot(&self.weights[l].t());
            for mut row in z.rows_mut() {
                row += &self.biases[l];
            }
            a = if l < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z
            };
        }
        a
    }

    pub fn forward_cached(&self, input: &Array2<f64>) -> MlpCache {
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        let mut a = input.clone();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            layer_inputs.push(a.clone());
            let mut z = a.dot(&self.weights[l].t());
            for mut row in z.rows_mut() {
                row += &self.biases[l];
            }
            pre_activations.push(z.clone());
            a = if l < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z
            };
        }
        MlpCache {
            layer_inputs,
            pre_activations,
            output: a,
        }
    }

    /// Backpropagate `dL/d(output)` through the cached pass.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> MlpGrads {
        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        let mut delta = grad_out.clone();
        for l in (0..layers).rev() {
            if l < layers - 1 {
                // delta currently holds dL/dA_l; convert to dL/dZ_l.
                let dz = cache.pre_activations[l].mapv(|v| self.activation.derivative(v));
                delta = &delta * &dz;
            }
            gw[l] = delta.t().dot(&cache.layer_inputs[l]);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.weights[l]);
            }
        }
        MlpGrads {
            weights: gw,
            biases: gb,
        }
    }

    /// Flatten all parameters (weights then bias per layer, in layer order).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in 0..self.weights.len() {
            out.extend(self.weights[l].iter());
            out.extend(self.biases[l].iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut idx = 0;
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
            for v in self.biases[l].iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        assert_eq!(idx, flat.len());
    }
}

/// Rows of `x` augmented with `sin(w t), cos(w t)` features per frequency.
pub fn append_time_features(
    x: &Array2<f64>,
    t: &Array1<f64>,
    freqs: &[f64],
) -> Array2<f64> {
    let (b, d) = x.dim();
    let f = freqs.len();
    let mut out = Array2::zeros((b, d + 2 * f));
    out.slice_mut(ndarray::s![.., ..d]).assign(x);
    for (row, &tv) in t.iter().enumerate() {
        for (l, &w) in freqs.iter().enumerate() {
            out[(row, d + 2 * l)] = (w * tv).sin();
            out[(row, d + 2 * l + 1)] = (w * tv).cos();
        }
    }
    out
}

/// One standard normal via Box-Muller; exactly two uniforms per draw so
/// every sampling site has a fixed draw count.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        for l in 0..net.weights.len() {
            if grads.weights[l].iter().any(|g| !g.is_finite())
                || grads.biases[l].iter().any(|g| !g.is_finite())
            {
                return Err(Error::Numerical {
                    iter: self.t as usize,
                    msg: "non-finite gradient".into(),
                });
            }
            ndarray::Zip::from(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.weights[l])
                .and(&mut net.weights[l])
                .for_each(|mi, vi, &gi, wi| {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    *wi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                });
            for i in 0..net.biases[l].len() {
                let g = grads.biases[l][i];
                self.m_b[l][i] = b1 * self.m_b[l][i] + (1.0 - b1) * g;
                self.v_b[l][i] = b2 * self.v_b[l][i] + (1.0 - b2) * g * g;
                net.biases[l][i] -= lr * (self.m_b[l][i] / bc1) / ((self.v_b[l][i] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Domain};

    #[test]
    fn forward_shapes_and_cache_agree() {
        let mut rng = stream_rng(0, Domain::ScoreInit, 0);
        let net = Mlp::init(&[3, 8, 8, 2], Activation::Silu, &mut rng);
        let x = Array2::from_shape_fn((5, 3), |_| standard_normal(&mut rng));
        let y = net.forward(&x);
        assert_eq!(y.dim(), (5, 2));
        let cache = net.forward_cached(&x);
        assert_eq!(cache.output, y);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream_rng(1, Domain::ScoreInit, 0);
        let mut net = Mlp::init(&[2, 5, 2], Activation::Silu, &mut rng);
        let x = Array2::from_shape_fn((4, 2), |_| standard_normal(&mut rng));
        let target = Array2::from_shape_fn((4, 2), |_| standard_normal(&mut rng));
        let cache = net.forward_cached(&x);
        let grad_out = (&cache.output - &target).mapv(|v| 2.0 * v / 4.0);
        let grads = net.backward(&cache, &grad_out);

        let flat = net.flat_params();
        let mut flat_grads = Vec::new();
        for l in 0..net.weights.len() {
            flat_grads.extend(grads.weights[l].iter().copied());
            flat_grads.extend(grads.biases[l].iter().copied());
        }
        let step = 1e-5;
        for idx in 0..flat.len() {
            let mut up = flat.clone();
            up[idx] += step;
            net.set_flat_params(&up);
            let lp = (&net.forward(&x) - &target).mapv(|v| v * v).sum() / 4.0;
            let mut dn = flat.clone();
            dn[idx] -= step;
            net.set_flat_params(&dn);
            let lm = (&net.forward(&x) - &target).mapv(|v| v * v).sum() / 4.0;
            net.set_flat_params(&flat);
            let fd = (lp - lm) / (2.0 * step);
            let ga: f64 = flat_grads[idx];
            let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-5, "param {idx}: analytic {ga} vs fd {fd}");
        }
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut rng = stream_rng(2, Domain::ScoreInit, 0);
        let mut net = Mlp::init(&[2, 4, 1], Activation::Silu, &mut rng);
        let before = net.flat_params();
        let mut opt = Adam::new(&net, 0.0, 0.9, 0.999);
        let x = Array2::from_shape_fn((3, 2), |_| standard_normal(&mut rng));
        let cache = net.forward_cached(&x);
        let grads = net.backward(&cache, &cache.output.clone());
        opt.step(&mut net, &grads).unwrap();
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = stream_rng(3, Domain::ScoreInit, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
