//! Generative modeling for continuous data on an unknown K-dimensional
//! linear subspace: recover the subspace by truncated SVD, run the diffusion
//! sampler on the latent coordinates, and decode linearly.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scorediff::{sample, DiffusionSchedule, ScoreFn, Stepper};

/// Rank-K factorization `Y ~ X_hat Z_hat^T` with orthonormal `Z_hat`
/// (right singular vectors) and latent coordinates `X_hat = U Sigma`.
#[derive(Debug, Clone)]
pub struct LowRankFit {
    pub z_hat: Array2<f64>,
    pub x_hat: Array2<f64>,
}

/// Top-K singular value decomposition. Singular values are taken in
/// descending order and each column of `Z_hat` is signed so its
/// largest-magnitude entry is positive.
pub fn svd_embed(y: &Array2<f64>, k: usize) -> Result<LowRankFit> {
    let (m, n) = y.dim();
    if k == 0 || k > m.min(n) {
        return Err(Error::Config(format!(
            "rank {k} out of range for a {m} x {n} matrix"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("input matrix has non-finite entries".into()));
    }
    let na = DMatrix::from_fn(m, n, |r, c| y[(r, c)]);
    let svd = na.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });

    let mut z_hat = Array2::zeros((n, k));
    let mut x_hat = Array2::zeros((m, k));
    for c in 0..k {
        let idx = order[c];
        let s = svd.singular_values[idx];
        // Sign rule on the right singular vector.
        let mut best = 0usize;
        for i in 0..n {
            if vt[(idx, i)].abs() > vt[(idx, best)].abs() {
                best = i;
            }
        }
        let flip = if vt[(idx, best)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            z_hat[(i, c)] = flip * vt[(idx, i)];
        }
        for j in 0..m {
            x_hat[(j, c)] = flip * u[(j, idx)] * s;
        }
    }
    Ok(LowRankFit { z_hat, x_hat })
}

impl LowRankFit {
    pub fn k(&self) -> usize {
        self.z_hat.ncols()
    }

    /// Rank-K reconstruction `X_hat Z_hat^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.x_hat.dot(&self.z_hat.t())
    }
}

/// Sample latent coordinates from the trained diffusion model and decode
/// each as `y = Z_hat x`. Every output row lies in the column space of
/// `Z_hat` by construction.
pub fn lowrank_generate(
    fit: &LowRankFit,
    score: &dyn ScoreFn,
    sched: &DiffusionSchedule,
    m_tilde: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let latent = sample(
        score,
        sched,
        fit.k(),
        m_tilde,
        seed,
        Stepper::ExponentialIntegrator,
    )?;
    Ok(latent.matrix().dot(&fit.z_hat.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::standard_normal;
    use crate::rng::{stream_rng, Domain};
    use ndarray::array;

    fn orthonormal_cols(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, Domain::ScoreInit, 50);
        let mut q = Array2::from_shape_fn((n, k), |_| standard_normal(&mut rng));
        for c in 0..k {
            for prev in 0..c {
                let proj = q.column(c).dot(&q.column(prev));
                let prev_col = q.column(prev).to_owned();
                q.column_mut(c).scaled_add(-proj, &prev_col);
            }
            let norm = q.column(c).dot(&q.column(c)).sqrt();
            q.column_mut(c).mapv_inplace(|v| v / norm);
        }
        q
    }

    #[test]
    fn exact_rank_recovery() {
        let (m, n, k) = (25, 18, 3);
        let z = orthonormal_cols(n, k, 1);
        let mut rng = stream_rng(2, Domain::ScoreInit, 51);
        let x = Array2::from_shape_fn((m, k), |_| 2.0 * standard_normal(&mut rng));
        let y = x.dot(&z.t());
        let fit = svd_embed(&y, k).unwrap();
        let err = (&fit.reconstruct() - &y)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-9, "reconstruction err {err}");
        // orthonormal columns
        let gram = fit.z_hat.t().dot(&fit.z_hat);
        for r in 0..k {
            for c in 0..k {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((gram[(r, c)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn keeps_only_top_component() {
        let y = array![[3.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let fit = svd_embed(&y, 1).unwrap();
        let rec = fit.reconstruct();
        let expect = array![[3.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        for (a, b) in rec.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_rank_two_recovery() {
        let (m, n, k) = (30, 20, 2);
        let z = orthonormal_cols(n, k, 3);
        let mut rng = stream_rng(4, Domain::ScoreInit, 52);
        let x = Array2::from_shape_fn((m, k), |_| standard_normal(&mut rng));
        let mut y = x.dot(&z.t());
        y.mapv_inplace(|v| v + 1e-8 * standard_normal(&mut rng));
        let fit = svd_embed(&y, k).unwrap();
        let err = (&fit.reconstruct() - &y)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-6, "reconstruction err {err}");
    }

    #[test]
    fn rejects_bad_rank() {
        let y = Array2::<f64>::zeros((4, 3));
        assert!(svd_embed(&y, 0).is_err());
        assert!(svd_embed(&y, 4).is_err());
    }

    #[test]
    fn generated_rows_stay_in_subspace() {
        let (m, n, k) = (40, 15, 2);
        let z = orthonormal_cols(n, k, 5);
        let mut rng = stream_rng(6, Domain::ScoreInit, 53);
        let x = Array2::from_shape_fn((m, k), |_| standard_normal(&mut rng));
        let y = x.dot(&z.t());
        let fit = svd_embed(&y, k).unwrap();
        let exact = |s: &Array2<f64>, _t: f64| s.mapv(|v| -v);
        let sched = DiffusionSchedule {
            t_end: 3.0,
            n_steps: 60,
            t_min: 1e-3,
        };
        let gen = lowrank_generate(&fit, &exact, &sched, 50, 11).unwrap();
        assert_eq!(gen.dim(), (50, n));
        // || (I - Z Z^T) y_row || per row
        let proj = fit.z_hat.dot(&fit.z_hat.t());
        for row in gen.rows() {
            let projected = proj.dot(&row);
            let resid = (&row - &projected)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(resid <= 1e-9, "subspace residual {resid}");
        }
    }

    #[test]
    fn empty_generation() {
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let fit = svd_embed(&y, 2).unwrap();
        let zero = |s: &Array2<f64>, _t: f64| s.mapv(|_| 0.0);
        let gen = lowrank_generate(&fit, &zero, &DiffusionSchedule::default(), 0, 1).unwrap();
        assert_eq!(gen.dim(), (0, 2));
    }

    #[test]
    fn latent_covariance_spectrum_matches_up_to_rotation() {
        // X ~ N(0, I_K) ground truth: the generated row covariance is the
        // projector Z Z^T; rotation-invariant check through eigenvalues.
        let (m, n, k) = (4000, 10, 2);
        let z = orthonormal_cols(n, k, 7);
        let mut rng = stream_rng(8, Domain::ScoreInit, 54);
        let x = Array2::from_shape_fn((m, k), |_| standard_normal(&mut rng));
        let y = x.dot(&z.t());
        let fit = svd_embed(&y, k).unwrap();
        // Sample covariance of the latent coordinates vs Cov(X) = I: compare
        // spectra within Monte Carlo tolerance.
        let xc = {
            let mu = fit.x_hat.mean_axis(ndarray::Axis(0)).unwrap();
            let mut xc = fit.x_hat.clone();
            for mut row in xc.rows_mut() {
                row -= &mu;
            }
            xc
        };
        let cov = xc.t().dot(&xc) / m as f64;
        let eig = DMatrix::from_fn(k, k, |r, c| cov[(r, c)]).symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for v in vals {
            assert!((v - 1.0).abs() < 0.05, "latent spectrum eigenvalue {v}");
        }
    }
}
