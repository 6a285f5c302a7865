//! Score-based diffusion on K-dimensional embeddings.
//!
//! Forward process: the Ornstein-Uhlenbeck SDE `dX_t = -X_t dt + sqrt(2)
//! dW_t`, whose marginal is available in closed form. A small dense network
//! is trained by denoising score matching to predict the injected noise; the
//! score is recovered as `-prediction / sqrt(1 - e^{-2t})`. The reverse
//! sampler freezes the score inside each step and applies the exact update
//! of the resulting linear SDE (an Euler-Maruyama stepper is kept behind a
//! flag for comparison).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::net::{standard_normal, Activation, Adam, Mlp};
use crate::rng::{stream_rng, Domain};

/// Reverse-time discretization: `n_steps` steps of size `h = t_end /
/// n_steps`, stopping early at forward time `t_min` to avoid the score
/// singularity at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_end: f64,
    pub n_steps: usize,
    pub t_min: f64,
}

impl DiffusionSchedule {
    pub fn new(t_end: f64, n_steps: usize, t_min: f64) -> Result<Self> {
        let sched = Self {
            t_end,
            n_steps,
            t_min,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_end <= 0.0 || self.n_steps == 0 {
            return Err(Error::Config(
                "schedule needs t_end > 0 and at least one step".into(),
            ));
        }
        if !(0.0..self.step_size()).contains(&self.t_min) {
            return Err(Error::Config(format!(
                "t_min {} must lie in [0, h = {})",
                self.t_min,
                self.step_size()
            )));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            t_end: 5.0,
            n_steps: 500,
            t_min: 1e-3,
        }
    }
}

/// Training settings for denoising score matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr < 0.0 {
            return Err(Error::Config(
                "training needs positive epochs and batch size, nonnegative lr".into(),
            ));
        }
        Ok(())
    }
}

/// Noise standard deviation of the forward marginal at time `t`.
pub fn marginal_sigma(t: f64) -> f64 {
    (1.0 - (-2.0 * t).exp()).sqrt()
}

/// Closed-form forward marginal: `x_t = e^{-t} x0 + sqrt(1 - e^{-2t}) eps`
/// with `eps ~ N(0, I)`. Returns both the diffused point and the noise.
pub fn forward_marginal(
    x0: ndarray::ArrayView1<f64>,
    t: f64,
    rng: &mut impl Rng,
) -> (Array1<f64>, Array1<f64>) {
    let decay = f64::exp(-t);
    let sigma = marginal_sigma(t);
    let eps = Array1::from_shape_fn(x0.len(), |_| standard_normal(rng));
    let x_t = x0.mapv(|v| decay * v) + &(sigma * &eps);
    (x_t, eps)
}

/// Anything that can evaluate a score estimate on a batch of states at one
/// forward time; implemented by [`ScoreNet`] and by closures for exact
/// scores in tests.
pub trait ScoreFn: Sync {
    fn score_batch(&self, x: &Array2<f64>, t: f64) -> Array2<f64>;
}

impl<F> ScoreFn for F
where
    F: Fn(&Array2<f64>, f64) -> Array2<f64> + Sync,
{
    fn score_batch(&self, x: &Array2<f64>, t: f64) -> Array2<f64> {
        self(x, t)
    }
}

/// Noise-prediction network: the input is the state concatenated with
/// sinusoidal time features of log-spaced frequencies; the output is the
/// predicted noise, and the score estimate is `-output / sigma(t)`.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    pub k: usize,
    pub freqs: Vec<f64>,
    pub mlp: Mlp,
}

/// Eight log-spaced frequencies spanning slow and fast time scales.
pub fn default_time_freqs() -> Vec<f64> {
    (0..8).map(|l| 0.25 * 2f64.powi(l)).collect()
}

impl ScoreNet {
    /// Default architecture: two hidden layers of width 128 over the state
    /// plus 16 sinusoidal time features.
    pub fn new(k: usize, rng: &mut impl Rng) -> Self {
        Self::with_shape(k, &[128, 128], default_time_freqs(), rng)
    }

    pub fn with_shape(
        k: usize,
        hidden: &[usize],
        freqs: Vec<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![k + 2 * freqs.len()];
        dims.extend_from_slice(hidden);
        dims.push(k);
        let mlp = Mlp::init(&dims, Activation::Silu, rng);
        Self { k, freqs, mlp }
    }

    /// State rows augmented with `sin(w t), cos(w t)` features.
    pub fn features(&self, x: &Array2<f64>, t: &Array1<f64>) -> Array2<f64> {
        crate::net::append_time_features(x, t, &self.freqs)
    }

    /// Predicted noise for a batch at per-row times.
    pub fn predict_noise(&self, x: &Array2<f64>, t: &Array1<f64>) -> Array2<f64> {
        self.mlp.forward(&self.features(x, t))
    }

    /// Serialize as a JSON header line followed by one CSV line per tensor.
    pub fn save(&self, path: impl AsRef<Path>, sched: Option<&DiffusionSchedule>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::json!({
            "k": self.k,
            "widths": self.mlp.dims,
            "activation": self.mlp.activation,
            "freqs": self.freqs,
            "schedule": sched,
        });
        writeln!(w, "{header}")?;
        for l in 0..self.mlp.weights.len() {
            let cells: Vec<String> = self.mlp.weights[l].iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
            let cells: Vec<String> = self.mlp.biases[l].iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<DiffusionSchedule>)> {
        #[derive(Deserialize)]
        struct Header {
            k: usize,
            widths: Vec<usize>,
            activation: Activation,
            freqs: Vec<f64>,
            schedule: Option<DiffusionSchedule>,
        }
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header_line = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty score net file".into(),
        })??;
        let header: Header = serde_json::from_str(&header_line)?;
        let mut rng = stream_rng(0, Domain::ScoreInit, 0);
        let mut net = Mlp::init(&header.widths, header.activation, &mut rng);
        let parse_line = |line: String, lineno: usize| -> Result<Vec<f64>> {
            line.split(',')
                .map(|tok| {
                    tok.trim().parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("expected float, got {tok:?}"),
                    })
                })
                .collect()
        };
        for l in 0..net.weights.len() {
            let wline = lines.next().ok_or_else(|| Error::Parse {
                line: 2 + 2 * l,
                msg: "missing weight row".into(),
            })??;
            let vals = parse_line(wline, 2 + 2 * l)?;
            let dim = net.weights[l].dim();
            net.weights[l] = Array2::from_shape_vec(dim, vals)
                .map_err(|e| Error::Validation(e.to_string()))?;
            let bline = lines.next().ok_or_else(|| Error::Parse {
                line: 3 + 2 * l,
                msg: "missing bias row".into(),
            })??;
            let vals = parse_line(bline, 3 + 2 * l)?;
            net.biases[l] = Array1::from_vec(vals);
        }
        Ok((
            Self {
                k: header.k,
                freqs: header.freqs,
                mlp: net,
            },
            header.schedule,
        ))
    }
}

impl ScoreFn for ScoreNet {
    fn score_batch(&self, x: &Array2<f64>, t: f64) -> Array2<f64> {
        let tv = Array1::from_elem(x.nrows(), t);
        let noise = self.predict_noise(x, &tv);
        noise.mapv(|v| -v / marginal_sigma(t))
    }
}

/// Train by denoising score matching: minimize the mean squared error
/// between the predicted and injected noise over uniformly drawn times in
/// `(t_min, T]`. Returns the per-epoch loss trace.
pub fn train_score(
    data: &EmbeddingSet,
    net: &mut ScoreNet,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    sched.validate()?;
    if data.m() == 0 {
        return Err(Error::EmptyInput("no embeddings to train on".into()));
    }
    if data.k() != net.k {
        return Err(Error::DimensionMismatch(format!(
            "data dim {} vs net dim {}",
            data.k(),
            net.k
        )));
    }
    let m = data.m();
    let k = data.k();
    let mut opt = Adam::new(&net.mlp, cfg.lr, cfg.beta1, cfg.beta2);
    let mut rng = stream_rng(cfg.seed, Domain::ScoreTrain, 0);
    let mut order: Vec<usize> = (0..m).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x_t = Array2::zeros((b, k));
            let mut eps = Array2::zeros((b, k));
            let mut times = Array1::zeros(b);
            for (row, &idx) in chunk.iter().enumerate() {
                let u: f64 = rng.random();
                let t = sched.t_end - u * (sched.t_end - sched.t_min);
                times[row] = t;
                let (xt, e) = forward_marginal(data.matrix().row(idx), t, &mut rng);
                x_t.row_mut(row).assign(&xt);
                eps.row_mut(row).assign(&e);
            }
            let feats = net.features(&x_t, &times);
            let cache = net.mlp.forward_cached(&feats);
            let diff = &cache.output - &eps;
            let loss = diff.mapv(|v| v * v).sum() / b as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    msg: format!("training loss became {loss}"),
                });
            }
            epoch_loss += loss;
            batches += 1;
            let grad_out = diff.mapv(|v| 2.0 * v / b as f64);
            let grads = net.mlp.backward(&cache, &grad_out);
            opt.step(&mut net.mlp, &grads).map_err(|e| match e {
                Error::Numerical { msg, .. } => Error::Divergence { epoch, msg },
                other => other,
            })?;
        }
        trace.push(epoch_loss / batches as f64);
    }
    Ok(trace)
}

/// Empirical DSM loss of an arbitrary score estimate on held-out noise
/// draws: `E || s(x_t, t) * sigma_t + eps ||^2`.
pub fn dsm_loss(
    score: &dyn ScoreFn,
    data: &EmbeddingSet,
    sched: &DiffusionSchedule,
    n_draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = stream_rng(seed, Domain::ScoreTrain, 7777);
    let k = data.k();
    let mut total = 0.0;
    for d in 0..n_draws {
        let idx = d % data.m();
        let u: f64 = rng.random();
        let t = sched.t_end - u * (sched.t_end - sched.t_min);
        let (x_t, eps) = forward_marginal(data.matrix().row(idx), t, &mut rng);
        let x_row = x_t.insert_axis(Axis(0));
        let s = score.score_batch(&x_row, t);
        let sigma = marginal_sigma(t);
        let mut err = 0.0;
        for c in 0..k {
            let v = s[(0, c)] * sigma + eps[c];
            err += v * v;
        }
        total += err;
    }
    total / n_draws as f64
}

/// Compare analytic parameter gradients of the DSM loss against central
/// finite differences on up to `max_params` randomly chosen parameters;
/// returns the largest relative error.
pub fn net_backprop_check(
    net: &ScoreNet,
    x_t: &Array2<f64>,
    times: &Array1<f64>,
    eps: &Array2<f64>,
    max_params: usize,
    seed: u64,
) -> f64 {
    let b = x_t.nrows() as f64;
    let feats = net.features(x_t, times);
    let loss_of = |mlp: &Mlp| {
        let out = mlp.forward(&feats);
        (&out - eps).mapv(|v| v * v).sum() / b
    };
    let cache = net.mlp.forward_cached(&feats);
    let grad_out = (&cache.output - eps).mapv(|v| 2.0 * v / b);
    let grads = net.mlp.backward(&cache, &grad_out);
    let mut flat_grads = Vec::new();
    for l in 0..net.mlp.weights.len() {
        flat_grads.extend(grads.weights[l].iter().copied());
        flat_grads.extend(grads.biases[l].iter().copied());
    }

    let flat = net.mlp.flat_params();
    let total = flat.len();
    let mut idxs: Vec<usize> = (0..total).collect();
    if total > max_params {
        let mut rng = stream_rng(seed, Domain::ScoreInit, 4242);
        idxs.shuffle(&mut rng);
        idxs.truncate(max_params);
        idxs.sort_unstable();
    }

    let mut probe = net.mlp.clone();
    let step = 1e-4;
    let mut worst = 0.0f64;
    for &idx in &idxs {
        let mut up = flat.clone();
        up[idx] += step;
        probe.set_flat_params(&up);
        let lp = loss_of(&probe);
        let mut dn = flat.clone();
        dn[idx] -= step;
        probe.set_flat_params(&dn);
        let lm = loss_of(&probe);
        let fd = (lp - lm) / (2.0 * step);
        let ga = flat_grads[idx];
        let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Reverse-step discretization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Exact update of the linear SDE with the score frozen per step.
    ExponentialIntegrator,
    EulerMaruyama,
}

/// Run the reverse sampler from `N(0, I)` initial states. Trajectory `r`
/// draws from its own generator stream, so results are independent of the
/// parallel schedule. Each step freezes the score at its start; with the
/// exponential integrator the state update is
/// `x <- e^d x + 2 (e^d - 1) s + sqrt(e^{2d} - 1) xi`.
pub fn sample(
    score: &dyn ScoreFn,
    sched: &DiffusionSchedule,
    k: usize,
    m_tilde: usize,
    seed: u64,
    stepper: Stepper,
) -> Result<EmbeddingSet> {
    sched.validate()?;
    if m_tilde == 0 {
        return EmbeddingSet::new(Array2::zeros((0, k)));
    }
    let mut rngs: Vec<_> = (0..m_tilde)
        .map(|r| stream_rng(seed, Domain::Trajectory, r as u64))
        .collect();
    let mut states = Array2::zeros((m_tilde, k));
    for (r, rng) in rngs.iter_mut().enumerate() {
        for c in 0..k {
            states[(r, c)] = standard_normal(rng);
        }
    }

    let h = sched.step_size();
    let horizon = sched.t_end - sched.t_min;
    for step in 0..sched.n_steps {
        let start = step as f64 * h;
        let delta = (horizon - start).min(h);
        if delta <= 0.0 {
            break;
        }
        let tau = sched.t_end - start;
        let s = score_batch_parallel(score, &states, tau);

        let (growth, drift_gain, noise_sd) = match stepper {
            Stepper::ExponentialIntegrator => {
                let g = delta.exp();
                (g, 2.0 * (g - 1.0), ((2.0 * delta).exp() - 1.0).sqrt())
            }
            Stepper::EulerMaruyama => (1.0 + delta, 2.0 * delta, (2.0 * delta).sqrt()),
        };

        let rows: Vec<Vec<f64>> = states
            .rows()
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                let rng = &mut rngs[r];
                (0..k)
                    .map(|c| {
                        growth * row[c] + drift_gain * s[(r, c)] + noise_sd * standard_normal(rng)
                    })
                    .collect()
            })
            .collect();
        for (r, row) in rows.iter().enumerate() {
            for c in 0..k {
                states[(r, c)] = row[c];
            }
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDivergence { step });
        }
    }
    EmbeddingSet::new(states)
}

/// Evaluate the score on row chunks in parallel; chunk outputs are written
/// to disjoint slices so the result is deterministic.
fn score_batch_parallel(score: &dyn ScoreFn, states: &Array2<f64>, tau: f64) -> Array2<f64> {
    let (rows, k) = states.dim();
    const CHUNK: usize = 1024;
    if rows <= CHUNK {
        return score.score_batch(states, tau);
    }
    let chunks: Vec<Array2<f64>> = (0..rows)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(rows);
            let block = states.slice(ndarray::s![start..end, ..]).to_owned();
            score.score_batch(&block, tau)
        })
        .collect();
    let mut out = Array2::zeros((rows, k));
    let mut cursor = 0;
    for block in chunks {
        let b = block.nrows();
        out.slice_mut(ndarray::s![cursor..cursor + b, ..]).assign(&block);
        cursor += b;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_invariants() {
        let sched = DiffusionSchedule::default();
        assert!((sched.step_size() * sched.n_steps as f64 - sched.t_end).abs() < 1e-12);
        assert!(DiffusionSchedule::new(5.0, 500, 0.02).is_err()); // t_min >= h
        assert!(DiffusionSchedule::new(0.0, 10, 0.0).is_err());
    }

    #[test]
    fn forward_marginal_at_zero_time() {
        let mut rng = stream_rng(0, Domain::ScoreTrain, 1);
        let x0 = array![1.5, -2.0];
        let (x_t, _) = forward_marginal(x0.view(), 0.0, &mut rng);
        assert_eq!(x_t, x0);
    }

    #[test]
    fn forward_marginal_converges_to_standard_gaussian() {
        let mut rng = stream_rng(1, Domain::ScoreTrain, 2);
        let x0 = array![2.0];
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| forward_marginal(x0.view(), 50.0, &mut rng).0[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "var {var}");
    }

    #[test]
    fn forward_marginal_variance_multiplier() {
        // At t = 0.5 the noise variance is 1 - e^{-1}.
        let mut rng = stream_rng(2, Domain::ScoreTrain, 3);
        let x0 = array![0.7];
        let (x_t, eps) = forward_marginal(x0.view(), 0.5, &mut rng);
        let sigma = ((x_t[0] - (-0.5f64).exp() * x0[0]) / eps[0]).abs();
        assert!((sigma * sigma - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((marginal_sigma(0.5).powi(2) - 0.6321205588285577).abs() < 1e-12);
    }

    #[test]
    fn forward_marginal_second_moment_identity() {
        // Var(x_t) = e^{-2t} Var(x0) + (1 - e^{-2t}) for Gaussian x0.
        let mut rng = stream_rng(3, Domain::ScoreTrain, 4);
        let t = 0.7;
        let var0 = 2.25;
        let n = 100_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let x0 = array![1.5 * standard_normal(&mut rng)];
            let (x_t, _) = forward_marginal(x0.view(), t, &mut rng);
            acc += x_t[0];
            acc2 += x_t[0] * x_t[0];
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        let expect = (-2.0 * t).exp() * var0 + 1.0 - (-2.0 * t).exp();
        assert!((var - expect).abs() / expect < 0.02, "var {var} vs {expect}");
    }

    #[test]
    fn zero_lr_training_is_a_no_op() {
        let mut rng = stream_rng(4, Domain::ScoreInit, 0);
        let mut net = ScoreNet::with_shape(2, &[8], default_time_freqs(), &mut rng);
        let before = net.mlp.flat_params();
        let data = EmbeddingSet::new(Array2::from_shape_fn((16, 2), |_| {
            standard_normal(&mut rng)
        }))
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train_score(&data, &mut net, &DiffusionSchedule::default(), &cfg).unwrap();
        assert_eq!(net.mlp.flat_params(), before);
    }

    #[test]
    fn backprop_check_on_fresh_and_degenerate_nets() {
        let mut rng = stream_rng(5, Domain::ScoreInit, 1);
        let net = ScoreNet::with_shape(2, &[16, 16], default_time_freqs(), &mut rng);
        let x_t = Array2::from_shape_fn((8, 2), |_| standard_normal(&mut rng));
        let times = Array1::from_shape_fn(8, |_| 0.1 + rng.random::<f64>());
        let eps = Array2::from_shape_fn((8, 2), |_| standard_normal(&mut rng));
        let err = net_backprop_check(&net, &x_t, &times, &eps, 200, 7);
        assert!(err < 1e-4, "fresh net rel err {err}");

        let mut zero_net = net.clone();
        for w in zero_net.mlp.weights.iter_mut() {
            w.fill(0.0);
        }
        for b in zero_net.mlp.biases.iter_mut() {
            b.fill(0.0);
        }
        let err = net_backprop_check(&zero_net, &x_t, &times, &eps, 200, 7);
        assert!(err < 1e-4, "zero net rel err {err}");
    }

    #[test]
    fn backprop_check_single_hidden_unit_exact() {
        let mut rng = stream_rng(6, Domain::ScoreInit, 2);
        let net = ScoreNet::with_shape(1, &[1], vec![], &mut rng);
        let x_t = Array2::from_shape_fn((4, 1), |_| standard_normal(&mut rng));
        let times = Array1::from_elem(4, 0.5);
        let eps = Array2::from_shape_fn((4, 1), |_| standard_normal(&mut rng));
        let err = net_backprop_check(&net, &x_t, &times, &eps, 200, 7);
        assert!(err < 1e-6, "micro net rel err {err}");
    }

    #[test]
    fn trained_net_matches_standard_gaussian_score() {
        // Data from N(0, I): the diffused score is -x at every time.
        let mut rng = stream_rng(7, Domain::ScoreInit, 3);
        let k = 2;
        let data = EmbeddingSet::new(Array2::from_shape_fn((4000, k), |_| {
            standard_normal(&mut rng)
        }))
        .unwrap();
        let mut net = ScoreNet::new(k, &mut rng);
        let sched = DiffusionSchedule::default();
        let cfg = TrainConfig {
            epochs: 60,
            seed: 9,
            ..TrainConfig::default()
        };
        let trace = train_score(&data, &mut net, &sched, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);

        for &t in &[0.1, 0.5, 1.0] {
            let mut err_acc = 0.0;
            let mut count = 0;
            for ix in -2..=2 {
                for iy in -2..=2 {
                    let x = array![[ix as f64 * 0.8, iy as f64 * 0.8]];
                    let s = net.score_batch(&x, t);
                    let num = ((s[(0, 0)] + x[(0, 0)]).powi(2)
                        + (s[(0, 1)] + x[(0, 1)]).powi(2))
                    .sqrt();
                    let den = 1.0 + (x[(0, 0)].powi(2) + x[(0, 1)].powi(2)).sqrt();
                    err_acc += num / den;
                    count += 1;
                }
            }
            let mean_err = err_acc / count as f64;
            assert!(mean_err < 0.15, "t={t}: probe-grid score error {mean_err}");
        }
    }

    #[test]
    fn trained_net_matches_shifted_gaussian_score() {
        // Data from N(mu, I): score of the diffused marginal is
        // -(x - e^{-t} mu).
        let mut rng = stream_rng(8, Domain::ScoreInit, 4);
        let k = 2;
        let mu = [2.0, 0.0];
        let data = EmbeddingSet::new(Array2::from_shape_fn((4000, k), |(_, c)| {
            mu[c] + standard_normal(&mut rng)
        }))
        .unwrap();
        let mut net = ScoreNet::new(k, &mut rng);
        let sched = DiffusionSchedule::default();
        let cfg = TrainConfig {
            epochs: 60,
            seed: 10,
            ..TrainConfig::default()
        };
        train_score(&data, &mut net, &sched, &cfg).unwrap();

        for &t in &[0.1, 0.5, 1.0] {
            let decay = f64::exp(-t);
            let mut err_acc = 0.0;
            let mut count = 0;
            for ix in -2..=2 {
                for iy in -2..=2 {
                    let x = array![[mu[0] * decay + ix as f64 * 0.8, iy as f64 * 0.8]];
                    let s = net.score_batch(&x, t);
                    let want = [-(x[(0, 0)] - decay * mu[0]), -(x[(0, 1)] - decay * mu[1])];
                    let num = ((s[(0, 0)] - want[0]).powi(2) + (s[(0, 1)] - want[1]).powi(2))
                        .sqrt();
                    let den = 1.0 + (x[(0, 0)].powi(2) + x[(0, 1)].powi(2)).sqrt();
                    err_acc += num / den;
                    count += 1;
                }
            }
            let mean_err = err_acc / count as f64;
            assert!(mean_err < 0.15, "t={t}: probe-grid score error {mean_err}");
        }
    }

    #[test]
    fn exact_score_sampler_recovers_standard_gaussian() {
        // With the exact N(0, I) score the sampler's output must match the
        // stationary moments.
        // The frozen-score scheme has an O(h) variance bias (fixed point
        // e^h), so the default 500 steps keep it near 1.01.
        let exact = |x: &Array2<f64>, _t: f64| x.mapv(|v| -v);
        let sched = DiffusionSchedule::default();
        let out = sample(&exact, &sched, 2, 10_000, 77, Stepper::ExponentialIntegrator).unwrap();
        let mat = out.matrix();
        for c in 0..2 {
            let col = mat.column(c);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / col.len() as f64;
            assert!(mean.abs() < 4.0 / (col.len() as f64).sqrt(), "mean {mean}");
            assert!((0.95..=1.05).contains(&var), "var {var}");
        }
    }

    #[test]
    fn single_step_zero_score_closed_form() {
        // One step of length h from N(0, I) with s = 0:
        // x1 = e^h x0 + sqrt(e^{2h} - 1) xi, so Var = 2 e^{2h} - 1.
        let zero = |x: &Array2<f64>, _t: f64| x.mapv(|_| 0.0);
        let h = 0.25;
        let sched = DiffusionSchedule {
            t_end: h,
            n_steps: 1,
            t_min: 0.0,
        };
        let out = sample(&zero, &sched, 1, 10_000, 5, Stepper::ExponentialIntegrator).unwrap();
        let col = out.matrix().column(0).to_owned();
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        let expect = 2.0 * (2.0 * h).exp() - 1.0;
        let band = 4.0 * expect * (2.0 / col.len() as f64).sqrt();
        assert!((var - expect).abs() < band, "var {var} vs {expect}");
    }

    #[test]
    fn empty_sample_request() {
        let zero = |x: &Array2<f64>, _t: f64| x.mapv(|_| 0.0);
        let out = sample(
            &zero,
            &DiffusionSchedule::default(),
            3,
            0,
            1,
            Stepper::ExponentialIntegrator,
        )
        .unwrap();
        assert_eq!(out.m(), 0);
        assert_eq!(out.k(), 3);
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let exact = |x: &Array2<f64>, _t: f64| x.mapv(|v| -v);
        let sched = DiffusionSchedule {
            t_end: 2.0,
            n_steps: 20,
            t_min: 1e-3,
        };
        let a = sample(&exact, &sched, 2, 64, 9, Stepper::ExponentialIntegrator).unwrap();
        let b = sample(&exact, &sched, 2, 64, 9, Stepper::ExponentialIntegrator).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn euler_stepper_agrees_on_moments() {
        let exact = |x: &Array2<f64>, _t: f64| x.mapv(|v| -v);
        let sched = DiffusionSchedule {
            t_end: 5.0,
            n_steps: 400,
            t_min: 1e-3,
        };
        let out = sample(&exact, &sched, 1, 8_000, 21, Stepper::EulerMaruyama).unwrap();
        let col = out.matrix().column(0).to_owned();
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 5.0 / (col.len() as f64).sqrt(), "mean {mean}");
        assert!((0.93..=1.07).contains(&var), "var {var}");
    }

    #[test]
    fn exact_score_dominates_trained_net_on_dsm_loss() {
        let mut rng = stream_rng(11, Domain::ScoreInit, 5);
        let k = 1;
        let data = EmbeddingSet::new(Array2::from_shape_fn((2000, k), |_| {
            standard_normal(&mut rng)
        }))
        .unwrap();
        let mut net = ScoreNet::with_shape(k, &[64, 64], default_time_freqs(), &mut rng);
        let sched = DiffusionSchedule::default();
        let cfg = TrainConfig {
            epochs: 40,
            seed: 3,
            ..TrainConfig::default()
        };
        train_score(&data, &mut net, &sched, &cfg).unwrap();
        let exact = |x: &Array2<f64>, _t: f64| x.mapv(|v| -v);
        let loss_exact = dsm_loss(&exact, &data, &sched, 4000, 99);
        let loss_net = dsm_loss(&net, &data, &sched, 4000, 99);
        assert!(
            loss_exact <= loss_net + 0.05,
            "exact {loss_exact} vs net {loss_net}"
        );
    }

    #[test]
    fn score_net_round_trips_through_file() {
        let mut rng = stream_rng(12, Domain::ScoreInit, 6);
        let net = ScoreNet::new(2, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.sn");
        let sched = DiffusionSchedule::default();
        net.save(&path, Some(&sched)).unwrap();
        let (back, sched_back) = ScoreNet::load(&path).unwrap();
        assert_eq!(back.mlp.flat_params(), net.mlp.flat_params());
        assert_eq!(back.freqs, net.freqs);
        assert_eq!(sched_back.unwrap().n_steps, sched.n_steps);
    }
}
