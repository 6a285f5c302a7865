//! Conditional hyperlink likelihood under linear (logistic) generation.
//!
//! A hyperlink with embedding `x` includes node `i` independently with
//! probability `sigmoid(x . z_i + alpha_i)`. This module provides the exact
//! log-likelihood of an observed hypergraph, its analytic gradients,
//! Bernoulli sampling of new hyperlinks, and a thresholded deterministic
//! decoder.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::embedding::{EmbeddingSet, NodeParams};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;

/// Per-node inclusion probabilities for one hyperlink embedding; entries lie
/// strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct LinkProbVector {
    pub p: Array1<f64>,
}

/// Overflow-safe sigmoid, clamped into the open unit interval so downstream
/// log/odds computations never see an exact 0 or 1.
pub fn sigmoid(a: f64) -> f64 {
    let p = if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - 0.5 * f64::EPSILON)
}

/// `log(1 + exp(a))` without overflow: `a + log1p(exp(-a))` for positive `a`.
pub fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn check_dim(x: ArrayView1<f64>, params: &NodeParams) -> Result<()> {
    if x.len() != params.k() {
        return Err(Error::DimensionMismatch(format!(
            "embedding has dim {} but node embeddings have dim {}",
            x.len(),
            params.k()
        )));
    }
    Ok(())
}

/// Inclusion probabilities `p_i = sigmoid(x . z_i + alpha_i)`.
pub fn link_probs(x: ArrayView1<f64>, params: &NodeParams) -> Result<LinkProbVector> {
    check_dim(x, params)?;
    let mut logits = params.z().dot(&x);
    logits += params.alpha();
    Ok(LinkProbVector {
        p: logits.mapv(sigmoid),
    })
}

/// Draw one hyperlink: node `i` is included independently with probability
/// `p_i`. Consumes exactly `n` uniforms from `rng`, in node-id order.
pub fn sample_hyperlink(
    x: ArrayView1<f64>,
    params: &NodeParams,
    rng: &mut impl Rng,
) -> Result<Vec<u32>> {
    let probs = link_probs(x, params)?;
    let mut link = Vec::new();
    for (i, &p) in probs.p.iter().enumerate() {
        let u: f64 = rng.random();
        if u < p {
            link.push(i as u32);
        }
    }
    Ok(link)
}

/// Thresholded decoder: the nodes whose inclusion probability reaches
/// `threshold`. Ties at the threshold are included.
pub fn deterministic_hyperlink(
    x: ArrayView1<f64>,
    params: &NodeParams,
    threshold: f64,
) -> Result<Vec<u32>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let probs = link_probs(x, params)?;
    Ok(probs
        .p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i as u32)
        .collect())
}

fn check_shapes(h: &Hypergraph, x: &EmbeddingSet, params: &NodeParams) -> Result<()> {
    if x.m() != h.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} embeddings for {} hyperlinks",
            x.m(),
            h.m()
        )));
    }
    if x.k() != params.k() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dim {} vs node embedding dim {}",
            x.k(),
            params.k()
        )));
    }
    if h.n() != params.n() {
        return Err(Error::DimensionMismatch(format!(
            "hypergraph has {} nodes but params have {}",
            h.n(),
            params.n()
        )));
    }
    Ok(())
}

/// Exact log-likelihood of the observed hypergraph:
/// sum over links j and nodes i of `b_ji * theta_ji - log(1 + exp(theta_ji))`
/// with `theta_ji = x_j . z_i + alpha_i`.
pub fn log_likelihood(h: &Hypergraph, x: &EmbeddingSet, params: &NodeParams) -> Result<f64> {
    check_shapes(h, x, params)?;
    let z = params.z();
    let alpha = params.alpha();
    // Per-row contributions computed in parallel, then summed in row order
    // so the reduction is bit-reproducible.
    let per_row: Vec<f64> = (0..h.m())
        .into_par_iter()
        .map(|j| {
            let xj = x.matrix().row(j);
            let mut theta = z.dot(&xj);
            theta += alpha;
            let mut ll = 0.0;
            for &i in h.link(j) {
                ll += theta[i as usize];
            }
            ll - theta.iter().map(|&t| softplus(t)).sum::<f64>()
        })
        .collect();
    Ok(per_row.iter().sum())
}

/// Analytic gradients of [`log_likelihood`]. With residuals
/// `r_ji = b_ji - sigmoid(theta_ji)`:
/// `dL/dx_j = sum_i r_ji z_i`, `dL/dz_i = sum_j r_ji x_j`,
/// `dL/dalpha_i = sum_j r_ji`.
pub fn grad_log_likelihood(
    h: &Hypergraph,
    x: &EmbeddingSet,
    params: &NodeParams,
) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    check_shapes(h, x, params)?;
    let (m, n, k) = (h.m(), h.n(), x.k());
    let z = params.z();
    let alpha = params.alpha();

    // Residual matrix R = B - sigma(X Z^T + 1 alpha^T), m x n.
    let mut r = x.matrix().dot(&z.t());
    for mut row in r.rows_mut() {
        row += alpha;
    }
    r.mapv_inplace(|t| -sigmoid(t));
    for (j, link) in h.links().iter().enumerate() {
        for &i in link {
            r[(j, i as usize)] += 1.0;
        }
    }

    let grad_x = r.dot(z);
    let grad_z = r.t().dot(x.matrix());
    let grad_alpha = r.sum_axis(Axis(0));
    debug_assert_eq!(grad_x.dim(), (m, k));
    debug_assert_eq!(grad_z.dim(), (n, k));
    Ok((grad_x, grad_z, grad_alpha))
}
