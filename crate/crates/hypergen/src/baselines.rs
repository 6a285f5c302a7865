//! Competing generators operating directly on n-bit incidence vectors:
//! continuous diffusion with calibrated thresholding, and Bernoulli
//! diffusion with a learned reverse flip network.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{cooccurrence_stats, Hypergraph};
use crate::net::{append_time_features, Activation, Adam, Mlp};
use crate::rng::{stream_rng, Domain};
use crate::scorediff::{
    default_time_freqs, sample, train_score, DiffusionSchedule, ScoreNet, Stepper, TrainConfig,
};
use crate::EmbeddingSet;

const GAU_TRAIN_SALT: u64 = 0x6761_7564_6966_6601;
const GAU_SAMPLE_SALT: u64 = 0x6761_7564_6966_6602;
const BER_TRAIN_SALT: u64 = 0x6265_7264_6966_6601;

/// Continuous-diffusion baseline state: a score net over dimension `n` and
/// the per-node calibration thresholds.
#[derive(Debug, Clone)]
pub struct GauDiffModel {
    pub net: ScoreNet,
    pub thresholds: Array1<f64>,
}

/// Train a score net on the binary incidence rows as continuous vectors,
/// sample `m_tilde` continuous rows, and threshold column `i` at the
/// `(1 - mean_i)`-quantile of its generated values so generated node
/// frequencies match the training frequencies.
pub fn gau_diff_fit_sample(
    h: &Hypergraph,
    sched: &DiffusionSchedule,
    train: &TrainConfig,
    m_tilde: usize,
    seed: u64,
) -> Result<(Hypergraph, GauDiffModel)> {
    if h.m() == 0 {
        return Err(Error::EmptyInput("no hyperlinks to train on".into()));
    }
    let n = h.n();
    let rows = EmbeddingSet::new(h.incidence_matrix())?;
    let mut rng = stream_rng(seed ^ GAU_TRAIN_SALT, Domain::BaselineInit, 0);
    let mut net = ScoreNet::new(n, &mut rng);
    let mut cfg = train.clone();
    cfg.seed = seed ^ GAU_TRAIN_SALT;
    train_score(&rows, &mut net, sched, &cfg)?;

    let generated = sample(
        &net,
        sched,
        n,
        m_tilde,
        seed ^ GAU_SAMPLE_SALT,
        Stepper::ExponentialIntegrator,
    )?;
    let means = cooccurrence_stats(h)?.mean;

    let mut thresholds = Array1::zeros(n);
    for i in 0..n {
        thresholds[i] = calibration_threshold(generated.matrix().column(i), means[i], m_tilde);
    }

    let mut links = Vec::with_capacity(m_tilde);
    for j in 0..m_tilde {
        let mut link = Vec::new();
        for i in 0..n {
            if generated.matrix()[(j, i)] >= thresholds[i] {
                link.push(i as u32);
            }
        }
        links.push(link);
    }
    let out = Hypergraph::new(n, links)?;
    Ok((out, GauDiffModel { net, thresholds }))
}

/// Empirical `(1 - mean)`-quantile rule: keep the top `round(mean * m_tilde)`
/// generated values for the node. Boundary frequencies get infinite
/// sentinels so the node is never (or always) generated.
fn calibration_threshold(
    column: ndarray::ArrayView1<f64>,
    mean: f64,
    m_tilde: usize,
) -> f64 {
    if mean <= 0.0 {
        return f64::INFINITY;
    }
    if mean >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let want = ((mean * m_tilde as f64).round() as usize).clamp(1, m_tilde);
    let mut vals: Vec<f64> = column.to_vec();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals[want - 1]
}

/// Uniform-mixing flip schedule `beta_k = 1 / (N - k + 2)` for `k = 1..=N`;
/// the cumulative keep probability telescopes to `(N - k + 1) / (N + 1)`,
/// so step-N marginals approach fair coins.
pub fn uniform_mixing_schedule(n_steps: usize) -> Vec<f64> {
    (1..=n_steps).map(|k| 1.0 / (n_steps - k + 2) as f64).collect()
}

/// Bernoulli-diffusion settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BerDiffConfig {
    pub n_steps: usize,
    /// Override for the flip schedule; defaults to uniform mixing.
    pub betas: Option<Vec<f64>>,
    pub train: TrainConfig,
}

impl Default for BerDiffConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            betas: None,
            train: TrainConfig::default(),
        }
    }
}

/// Bernoulli-diffusion model: flip schedule plus a reverse network mapping
/// `(bit vector, step)` to per-node probabilities that the previous-step bit
/// was 1.
#[derive(Debug, Clone)]
pub struct BerDiffModel {
    pub betas: Vec<f64>,
    /// Cumulative keep probabilities; `abar[k]` covers steps `1..=k`.
    pub abar: Vec<f64>,
    pub net: Mlp,
    pub freqs: Vec<f64>,
    pub n_nodes: usize,
}

impl BerDiffModel {
    fn n_steps(&self) -> usize {
        self.betas.len()
    }

    /// Forward marginal `P(b_k = 1 | b_0)` per bit.
    fn forward_marginal_prob(&self, b0: f64, k: usize) -> f64 {
        let a = self.abar[k];
        a * b0 + (1.0 - a) / 2.0
    }

    /// Posterior `q(b_{k-1} = 1 | b_k, b_0)` of the forward chain.
    fn forward_posterior(&self, bk: f64, b0: f64, k: usize) -> f64 {
        let beta = self.betas[k - 1];
        let q_prev = self.forward_marginal_prob(b0, k - 1);
        let like = |prev: f64| {
            if bk == prev {
                1.0 - beta + beta / 2.0
            } else {
                beta / 2.0
            }
        };
        let w1 = like(1.0) * q_prev;
        let w0 = like(0.0) * (1.0 - q_prev);
        w1 / (w0 + w1)
    }

    /// Per-node probabilities in (0, 1) for the reverse draw at step `k`.
    pub fn predict_probs(&self, bits: &Array2<f64>, k: usize) -> Array2<f64> {
        let t = Array1::from_elem(bits.nrows(), k as f64 / self.n_steps() as f64);
        let feats = append_time_features(bits, &t, &self.freqs);
        self.net.forward(&feats).mapv(crate::logistic::sigmoid)
    }
}

/// One forward flip: with probability `beta` the bit is resampled to a fair
/// coin, otherwise kept.
pub fn ber_forward_step(bit: u8, beta: f64, rng: &mut impl Rng) -> u8 {
    let u: f64 = rng.random();
    if u < beta {
        let v: f64 = rng.random();
        u8::from(v < 0.5)
    } else {
        bit
    }
}

/// Train the reverse network by cross-entropy against the closed-form
/// forward posterior on the observed rows.
pub fn ber_diff_fit(h: &Hypergraph, cfg: &BerDiffConfig, seed: u64) -> Result<BerDiffModel> {
    if h.m() == 0 {
        return Err(Error::EmptyInput("no hyperlinks to train on".into()));
    }
    cfg.train.validate()?;
    let betas = match &cfg.betas {
        Some(b) => {
            if b.len() != cfg.n_steps {
                return Err(Error::Config(format!(
                    "{} betas for {} steps",
                    b.len(),
                    cfg.n_steps
                )));
            }
            if b.iter().any(|&v| !(0.0..1.0).contains(&v)) {
                return Err(Error::Config("flip probabilities must lie in [0, 1)".into()));
            }
            b.clone()
        }
        None => uniform_mixing_schedule(cfg.n_steps),
    };
    let mut abar = vec![1.0];
    for &b in &betas {
        abar.push(abar.last().unwrap() * (1.0 - b));
    }

    let n = h.n();
    let data = h.incidence_matrix();
    let freqs = default_time_freqs();
    let mut init_rng = stream_rng(seed ^ BER_TRAIN_SALT, Domain::BaselineInit, 1);
    let dims = [n + 2 * freqs.len(), 128, 128, n];
    let net = Mlp::init(&dims, Activation::Silu, &mut init_rng);
    let mut model = BerDiffModel {
        betas,
        abar,
        net,
        freqs,
        n_nodes: n,
    };

    let mut opt = Adam::new(&model.net, cfg.train.lr, cfg.train.beta1, cfg.train.beta2);
    let mut rng = stream_rng(seed ^ BER_TRAIN_SALT, Domain::BaselineTrain, 0);
    let m = h.m();
    let mut order: Vec<usize> = (0..m).collect();
    let n_steps = model.n_steps();

    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let b = chunk.len();
            let mut bk = Array2::zeros((b, n));
            let mut target = Array2::zeros((b, n));
            let mut steps = vec![0usize; b];
            for (row, &idx) in chunk.iter().enumerate() {
                let k = rng.random_range(1..=n_steps);
                steps[row] = k;
                for i in 0..n {
                    let b0 = data[(idx, i)];
                    let p1 = model.forward_marginal_prob(b0, k);
                    let u: f64 = rng.random();
                    let bit = f64::from(u < p1);
                    bk[(row, i)] = bit;
                    target[(row, i)] = model.forward_posterior(bit, b0, k);
                }
            }
            // One forward/backward per distinct step value in the batch; all
            // rows with the same k share the step feature.
            let mut grads_total: Option<crate::net::MlpGrads> = None;
            let mut loss = 0.0;
            let mut uniq: Vec<usize> = steps.clone();
            uniq.sort_unstable();
            uniq.dedup();
            for &k in &uniq {
                let rows: Vec<usize> = (0..b).filter(|&r| steps[r] == k).collect();
                let sub_bk = ndarray::Array2::from_shape_fn((rows.len(), n), |(r, c)| {
                    bk[(rows[r], c)]
                });
                let sub_t = ndarray::Array2::from_shape_fn((rows.len(), n), |(r, c)| {
                    target[(rows[r], c)]
                });
                let t = Array1::from_elem(rows.len(), k as f64 / n_steps as f64);
                let feats = append_time_features(&sub_bk, &t, &model.freqs);
                let cache = model.net.forward_cached(&feats);
                let probs = cache.output.mapv(crate::logistic::sigmoid);
                for (r, _) in rows.iter().enumerate() {
                    for c in 0..n {
                        let p = probs[(r, c)];
                        let tg = sub_t[(r, c)];
                        loss -= (tg * p.ln() + (1.0 - tg) * (1.0 - p).ln())
                            / (b as f64 * n as f64);
                    }
                }
                let grad_out = (&probs - &sub_t).mapv(|v| v / (b as f64 * n as f64));
                let g = model.net.backward(&cache, &grad_out);
                grads_total = Some(match grads_total {
                    None => g,
                    Some(mut acc) => {
                        for l in 0..acc.weights.len() {
                            acc.weights[l] += &g.weights[l];
                            acc.biases[l] += &g.biases[l];
                        }
                        acc
                    }
                });
            }
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    msg: format!("cross-entropy became {loss}"),
                });
            }
            opt.step(&mut model.net, &grads_total.expect("nonempty batch"))
                .map_err(|e| match e {
                    Error::Numerical { msg, .. } => Error::Divergence { epoch, msg },
                    other => other,
                })?;
        }
    }
    Ok(model)
}

/// Run the reverse chain from fair-coin bits, drawing every bit from the
/// network's predicted probabilities at each step.
pub fn ber_diff_sample(model: &BerDiffModel, m_tilde: usize, seed: u64) -> Result<Hypergraph> {
    let n = model.n_nodes;
    let n_steps = model.n_steps();
    let mut bits = Array2::zeros((m_tilde, n));
    let mut rngs: Vec<_> = (0..m_tilde)
        .map(|r| stream_rng(seed, Domain::BaselineSample, r as u64))
        .collect();
    for (r, rng) in rngs.iter_mut().enumerate() {
        for i in 0..n {
            let u: f64 = rng.random();
            bits[(r, i)] = f64::from(u < 0.5);
        }
    }
    for k in (1..=n_steps).rev() {
        let probs = model.predict_probs(&bits, k);
        for (r, rng) in rngs.iter_mut().enumerate() {
            for i in 0..n {
                let u: f64 = rng.random();
                bits[(r, i)] = f64::from(u < probs[(r, i)]);
            }
        }
    }
    let links: Vec<Vec<u32>> = (0..m_tilde)
        .map(|r| {
            (0..n as u32)
                .filter(|&i| bits[(r, i as usize)] > 0.5)
                .collect()
        })
        .collect();
    Hypergraph::new(n, links)
}

pub fn ber_diff_fit_sample(
    h: &Hypergraph,
    cfg: &BerDiffConfig,
    m_tilde: usize,
    seed: u64,
) -> Result<(Hypergraph, BerDiffModel)> {
    let model = ber_diff_fit(h, cfg, seed)?;
    let out = ber_diff_sample(&model, m_tilde, seed)?;
    Ok((out, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_hypergraph(m: usize, n: usize, seed: u64) -> Hypergraph {
        // Two node blocks with different frequencies plus in-block pairing.
        let mut rng = stream_rng(seed, Domain::LinkRealization, 500);
        let links: Vec<Vec<u32>> = (0..m)
            .map(|_| {
                let heavy = rng.random::<f64>() < 0.5;
                (0..n as u32)
                    .filter(|&i| {
                        let p = if (i as usize) < n / 2 {
                            if heavy {
                                0.6
                            } else {
                                0.1
                            }
                        } else if heavy {
                            0.1
                        } else {
                            0.4
                        };
                        rng.random::<f64>() < p
                    })
                    .collect()
            })
            .collect();
        Hypergraph::new(n, links).unwrap()
    }

    #[test]
    fn calibration_matches_training_frequencies() {
        let h = block_hypergraph(120, 12, 1);
        let sched = DiffusionSchedule {
            t_end: 5.0,
            n_steps: 60,
            t_min: 1e-3,
        };
        let train = TrainConfig {
            epochs: 40,
            seed: 2,
            ..TrainConfig::default()
        };
        let m_tilde = 600;
        let (gen, model) = gau_diff_fit_sample(&h, &sched, &train, m_tilde, 3).unwrap();
        assert_eq!(gen.m(), m_tilde);
        let train_means = cooccurrence_stats(&h).unwrap().mean;
        let gen_means = cooccurrence_stats(&gen).unwrap().mean;
        let tol = 2.0 / (m_tilde as f64).sqrt() + 1.0 / m_tilde as f64;
        for i in 0..h.n() {
            assert!(
                (gen_means[i] - train_means[i]).abs() <= tol,
                "node {i}: {} vs {} (tol {tol})",
                gen_means[i],
                train_means[i]
            );
        }
        assert!(model.thresholds.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn calibration_boundary_sentinels() {
        // Node 2 never appears; node 0 always does.
        let links = vec![vec![0u32], vec![0, 1], vec![0], vec![0, 1]];
        let h = Hypergraph::new(3, links).unwrap();
        let sched = DiffusionSchedule {
            t_end: 3.0,
            n_steps: 30,
            t_min: 1e-3,
        };
        let train = TrainConfig {
            epochs: 5,
            seed: 4,
            ..TrainConfig::default()
        };
        let (gen, model) = gau_diff_fit_sample(&h, &sched, &train, 200, 5).unwrap();
        assert!(model.thresholds[2].is_infinite() && model.thresholds[2] > 0.0);
        assert!(model.thresholds[0].is_infinite() && model.thresholds[0] < 0.0);
        let gen_means = cooccurrence_stats(&gen).unwrap().mean;
        assert_eq!(gen_means[2], 0.0);
        assert_eq!(gen_means[0], 1.0);
    }

    #[test]
    fn forward_step_keep_probability() {
        let beta = 0.3;
        let trials = 100_000;
        let mut rng = stream_rng(6, Domain::BaselineSample, 9999);
        let mut unchanged = 0u32;
        for _ in 0..trials {
            if ber_forward_step(1, beta, &mut rng) == 1 {
                unchanged += 1;
            }
        }
        let p = 1.0 - beta / 2.0;
        let freq = unchanged as f64 / trials as f64;
        let band = 4.0 * (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < band, "freq {freq} vs {p}");
    }

    #[test]
    fn full_forward_pass_mixes_to_fair_coins() {
        let n_steps = 30;
        let betas = uniform_mixing_schedule(n_steps);
        assert!(betas.iter().all(|&b| (0.0..1.0).contains(&b)));
        let trials = 10_000;
        let mut rng = stream_rng(7, Domain::BaselineSample, 10000);
        let mut ones = 0u32;
        for _ in 0..trials {
            let mut bit = 1u8;
            for &b in &betas {
                bit = ber_forward_step(bit, b, &mut rng);
            }
            ones += u32::from(bit);
        }
        let freq = ones as f64 / trials as f64;
        assert!((0.45..=0.55).contains(&freq), "terminal marginal {freq}");
        // closed-form cumulative keep probability telescopes
        let abar: f64 = betas.iter().map(|b| 1.0 - b).product();
        assert!((abar - 1.0 / (n_steps as f64 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_schedule_reproduces_repeated_vector() {
        // N = 1 with beta_1 = 0: the forward pass is the identity, and the
        // trained reverse net must reproduce the single repeated vector.
        let links = vec![vec![0u32, 2]; 16];
        let h = Hypergraph::new(4, links).unwrap();
        let cfg = BerDiffConfig {
            n_steps: 1,
            betas: Some(vec![0.0]),
            train: TrainConfig {
                epochs: 300,
                lr: 3e-3,
                seed: 8,
                ..TrainConfig::default()
            },
        };
        let model = ber_diff_fit(&h, &cfg, 9).unwrap();
        let bits = ndarray::array![[1.0, 0.0, 1.0, 0.0]];
        let probs = model.predict_probs(&bits, 1);
        assert!(probs[(0, 0)] >= 0.99, "p0 {}", probs[(0, 0)]);
        assert!(probs[(0, 2)] >= 0.99, "p2 {}", probs[(0, 2)]);
        assert!(probs[(0, 1)] <= 0.01, "p1 {}", probs[(0, 1)]);
        assert!(probs[(0, 3)] <= 0.01, "p3 {}", probs[(0, 3)]);
    }

    #[test]
    fn converged_two_node_model_separates_frequencies() {
        let links = vec![vec![0u32]; 40];
        let h = Hypergraph::new(2, links).unwrap();
        let cfg = BerDiffConfig {
            n_steps: 8,
            betas: None,
            train: TrainConfig {
                epochs: 250,
                lr: 3e-3,
                seed: 10,
                ..TrainConfig::default()
            },
        };
        let (gen, _) = ber_diff_fit_sample(&h, &cfg, 400, 11).unwrap();
        let means = cooccurrence_stats(&gen).unwrap().mean;
        assert!(means[0] >= 0.9, "node 0 freq {}", means[0]);
        assert!(means[1] <= 0.1, "node 1 freq {}", means[1]);
    }
}
