//! Synthetic ground truth: truncated Gaussian-mixture embeddings, uniform
//! degree parameters, and hypergraph realization through the logistic link
//! model.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::embedding::{EmbeddingSet, NodeParams};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::logistic::sample_hyperlink;
use crate::rng::{stream_rng, Domain};

/// Simulation design: latent dimension, sizes, degree-parameter range, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// `[lo, hi]` for the i.i.d. uniform degree parameters.
    pub alpha_range: [f64; 2],
    pub seed: u64,
}

impl SimConfig {
    pub fn new(k: usize, m: usize, n: usize, alpha_range: [f64; 2], seed: u64) -> Result<Self> {
        let cfg = Self { k, m, n, alpha_range, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.m < 1 || self.n < 1 {
            return Err(Error::Config("K, m, n must all be at least 1".into()));
        }
        if self.alpha_range[0] > self.alpha_range[1] {
            return Err(Error::Config(format!(
                "alpha_range lo {} exceeds hi {}",
                self.alpha_range[0], self.alpha_range[1]
            )));
        }
        Ok(())
    }
}

/// One draw from a unit-variance normal truncated to `[lo, hi]`, via the
/// inverse CDF on the truncated interval (exact, one uniform per draw).
pub fn truncated_normal(mu: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    let std = Normal::standard();
    let fa = std.cdf(lo - mu);
    let fb = std.cdf(hi - mu);
    let u: f64 = rng.random();
    let v = mu + std.inverse_cdf(fa + u * (fb - fa));
    v.clamp(lo, hi)
}

/// Uniform component pick for a K-component mixture.
pub fn component_choice(rng: &mut impl Rng, k: usize) -> usize {
    rng.random_range(0..k)
}

fn sample_mixture_row(
    k: usize,
    mean_for: impl Fn(usize, usize) -> f64,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let comp = component_choice(rng, k);
    (0..k)
        .map(|c| truncated_normal(mean_for(comp, c), lo, hi, rng))
        .collect()
}

/// Hyperlink embeddings: each row picks a component `k` uniformly, then draws
/// coordinate-wise from `N(1/(K*sqrt(K)) - e_k/sqrt(K), 1)` truncated to
/// `[-2/sqrt(K), 0]`.
pub fn sample_hyperlink_embeddings(cfg: &SimConfig) -> Result<EmbeddingSet> {
    cfg.validate()?;
    let k = cfg.k;
    let rk = (k as f64).sqrt();
    let (lo, hi) = (-2.0 / rk, 0.0);
    let mean = move |comp: usize, c: usize| 1.0 / (k as f64 * rk) - f64::from(c == comp) / rk;
    let mut x = Array2::zeros((cfg.m, k));
    for j in 0..cfg.m {
        let mut rng = stream_rng(cfg.seed, Domain::HyperlinkEmbedding, j as u64);
        let row = sample_mixture_row(k, mean, lo, hi, &mut rng);
        x.row_mut(j).assign(&Array1::from(row));
    }
    EmbeddingSet::new(x)
}

/// Node embeddings: component `k` has mean `1/sqrt(K) + e_k/sqrt(K)` with
/// coordinate support `[0, 2/sqrt(K)]`.
pub fn sample_node_embeddings(cfg: &SimConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let k = cfg.k;
    let rk = (k as f64).sqrt();
    let (lo, hi) = (0.0, 2.0 / rk);
    let mean = move |comp: usize, c: usize| 1.0 / rk + f64::from(c == comp) / rk;
    let mut z = Array2::zeros((cfg.n, k));
    for i in 0..cfg.n {
        let mut rng = stream_rng(cfg.seed, Domain::NodeEmbedding, i as u64);
        let row = sample_mixture_row(k, mean, lo, hi, &mut rng);
        z.row_mut(i).assign(&Array1::from(row));
    }
    Ok(z)
}

/// i.i.d. degree parameters on `[lo, hi]`.
pub fn sample_alphas(cfg: &SimConfig) -> Result<Array1<f64>> {
    cfg.validate()?;
    let [lo, hi] = cfg.alpha_range;
    let mut rng = stream_rng(cfg.seed, Domain::Alpha, 0);
    Ok(Array1::from_shape_fn(cfg.n, |_| {
        let u: f64 = rng.random();
        lo + u * (hi - lo)
    }))
}

/// Draw embeddings and parameters, then realize the hypergraph one hyperlink
/// per embedding row. All three pieces are returned for oracle evaluation.
pub fn generate_ground_truth(
    cfg: &SimConfig,
) -> Result<(Hypergraph, EmbeddingSet, NodeParams)> {
    let x = sample_hyperlink_embeddings(cfg)?;
    let z = sample_node_embeddings(cfg)?;
    let alpha = sample_alphas(cfg)?;
    let params = NodeParams::new(z, alpha)?;
    let mut links = Vec::with_capacity(cfg.m);
    for j in 0..cfg.m {
        let mut rng = stream_rng(cfg.seed, Domain::LinkRealization, j as u64);
        links.push(sample_hyperlink(x.matrix().row(j), &params, &mut rng)?);
    }
    let h = Hypergraph::new(cfg.n, links)?;
    Ok((h, x, params))
}
