//! RMSE metrics, the end-to-end generation pipeline, and the experiment
//! grid used for method comparisons.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{ber_diff_fit_sample, gau_diff_fit_sample, BerDiffConfig};
use crate::embedding::NodeParams;
use crate::error::{Error, Result};
use crate::hypergraph::{cooccurrence_stats, Hypergraph, HypergraphFormat};
use crate::logistic::sample_hyperlink;
use crate::mle::{self, MleConfig, MleFit};
use crate::rng::{stream_rng, Domain};
use crate::scorediff::{
    sample, train_score, DiffusionSchedule, ScoreNet, Stepper, TrainConfig,
};
use crate::simulate::{
    sample_alphas, sample_hyperlink_embeddings, sample_node_embeddings, SimConfig,
};

const DDE_INIT_SALT: u64 = 0x6464_6501;
const DDE_TRAIN_SALT: u64 = 0x6464_6502;
const DDE_SAMPLE_SALT: u64 = 0x6464_6503;
const DDE_DECODE_SALT: u64 = 0x6464_6504;
const ORACLE_SALT: u64 = 0x6464_6505;
const BASELINE_SALT: u64 = 0x6464_6506;

/// Root mean squared difference of normalized node frequencies.
pub fn rmse_means(gen: &Hypergraph, reference: &Hypergraph) -> Result<f64> {
    if gen.n() != reference.n() {
        return Err(Error::DimensionMismatch(format!(
            "node counts differ: {} vs {}",
            gen.n(),
            reference.n()
        )));
    }
    let a = cooccurrence_stats(gen)?.mean;
    let b = cooccurrence_stats(reference)?.mean;
    let n = gen.n() as f64;
    Ok(((&a - &b).mapv(|v| v * v).sum() / n).sqrt())
}

/// RMSE over the upper triangle (diagonal included) of the two indicator
/// covariance matrices: n(n+1)/2 entries, each distinct covariance counted
/// once.
pub fn rmse_covs(gen: &Hypergraph, reference: &Hypergraph) -> Result<f64> {
    if gen.n() != reference.n() {
        return Err(Error::DimensionMismatch(format!(
            "node counts differ: {} vs {}",
            gen.n(),
            reference.n()
        )));
    }
    let a = cooccurrence_stats(gen)?.cov;
    let b = cooccurrence_stats(reference)?.cov;
    let n = gen.n();
    let mut acc = 0.0;
    for i in 0..n {
        for k in i..n {
            let d = a[(i, k)] - b[(i, k)];
            acc += d * d;
        }
    }
    let entries = (n * (n + 1) / 2) as f64;
    Ok((acc / entries).sqrt())
}

/// Fraction of generated hyperlinks whose node set exactly matches some
/// training hyperlink.
pub fn duplicate_rate(gen: &Hypergraph, train: &Hypergraph) -> f64 {
    if gen.m() == 0 {
        return 0.0;
    }
    let seen: HashSet<&[u32]> = train.links().iter().map(|l| l.as_slice()).collect();
    let hits = gen
        .links()
        .iter()
        .filter(|l| seen.contains(l.as_slice()))
        .count();
    hits as f64 / gen.m() as f64
}

/// Which statistics the generated hypergraph is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// The observed training hypergraph's sample statistics.
    TrainSample,
    /// A fresh size-m_tilde draw from the known simulation truth.
    OracleSample,
}

/// Comparison artifact for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub rmse_mean: f64,
    pub rmse_cov: f64,
    pub duplicate_rate: f64,
    pub m_tilde: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

/// End-to-end pipeline settings. The master `seed` derives every stage's
/// generator streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Simulated input (mutually exclusive with `input_path`).
    pub sim: Option<SimConfig>,
    pub input_path: Option<String>,
    pub input_format: Option<HypergraphFormat>,
    pub mle: MleConfig,
    pub sched: DiffusionSchedule,
    pub train: TrainConfig,
    pub m_tilde_multiplier: usize,
    pub reference: ReferenceMode,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn simulated(sim: SimConfig, seed: u64) -> Self {
        let k = sim.k;
        Self {
            sim: Some(sim),
            input_path: None,
            input_format: None,
            mle: MleConfig::new(k),
            sched: DiffusionSchedule::default(),
            train: TrainConfig::default(),
            m_tilde_multiplier: 32,
            reference: ReferenceMode::TrainSample,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_tilde_multiplier == 0 {
            return Err(Error::Config("m_tilde multiplier must be at least 1".into()));
        }
        match (&self.sim, &self.input_path) {
            (Some(_), Some(_)) => Err(Error::Config(
                "configure either a simulation or an input path, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "configure a simulation or an input path".into(),
            )),
            (None, Some(_)) if self.reference == ReferenceMode::OracleSample => {
                Err(Error::Config(
                    "oracle-sample reference requires a simulated source".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Everything a pipeline run produces.
pub struct PipelineOutput {
    pub observed: Hypergraph,
    pub generated: Hypergraph,
    pub report: EvalReport,
    pub fit: MleFit,
    pub net: ScoreNet,
    pub loss_trace: Vec<f64>,
}

/// Decode embeddings into hyperlinks through the fitted node parameters,
/// one generator stream per hyperlink.
pub fn decode_embeddings(
    embeddings: &Array2<f64>,
    params: &NodeParams,
    seed: u64,
) -> Result<Hypergraph> {
    let mut links = Vec::with_capacity(embeddings.nrows());
    for j in 0..embeddings.nrows() {
        let mut rng = stream_rng(seed, Domain::LinkRealization, j as u64);
        links.push(sample_hyperlink(embeddings.row(j), params, &mut rng)?);
    }
    Hypergraph::new(params.n(), links)
}

fn load_observed(cfg: &PipelineConfig) -> Result<Hypergraph> {
    if let Some(sim) = &cfg.sim {
        let (h, _, _) = crate::simulate::generate_ground_truth(sim)?;
        return Ok(h);
    }
    let path = cfg.input_path.as_ref().expect("validated");
    let format = cfg.input_format.unwrap_or(HypergraphFormat::Lines);
    crate::hypergraph::load_hypergraph(path, format)
}

/// Fresh hyperlinks from the simulation truth: the same node parameters,
/// new hyperlink embeddings, new link realizations.
pub fn oracle_sample(sim: &SimConfig, m_tilde: usize, seed: u64) -> Result<Hypergraph> {
    let params = NodeParams::new(sample_node_embeddings(sim)?, sample_alphas(sim)?)?;
    let fresh_cfg = SimConfig {
        m: m_tilde,
        seed: seed ^ ORACLE_SALT,
        ..sim.clone()
    };
    let x = sample_hyperlink_embeddings(&fresh_cfg)?;
    decode_embeddings(x.matrix(), &params, seed ^ ORACLE_SALT)
}

fn reference_hypergraph(cfg: &PipelineConfig, observed: &Hypergraph, m_tilde: usize) -> Result<Hypergraph> {
    match cfg.reference {
        ReferenceMode::TrainSample => Ok(observed.clone()),
        ReferenceMode::OracleSample => {
            oracle_sample(cfg.sim.as_ref().expect("validated"), m_tilde, cfg.seed)
        }
    }
}

/// Fit embeddings, train the score model on them, sample new embeddings,
/// decode into hyperlinks, and score against the configured reference.
pub fn run_dde_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let observed = load_observed(cfg).map_err(|e| e.in_stage("load-observed"))?;

    let mut mle_cfg = cfg.mle.clone();
    mle_cfg.seed = cfg.seed;
    let fit = mle::fit(&observed, &mle_cfg).map_err(|e| e.in_stage("mle-fit"))?;

    let k = mle_cfg.k;
    let mut init_rng = stream_rng(cfg.seed ^ DDE_INIT_SALT, Domain::ScoreInit, 0);
    let mut net = ScoreNet::new(k, &mut init_rng);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed ^ DDE_TRAIN_SALT;
    let loss_trace = train_score(&fit.x_hat, &mut net, &cfg.sched, &train_cfg)
        .map_err(|e| e.in_stage("train-score"))?;

    let m_tilde = cfg.m_tilde_multiplier * observed.m();
    let embeddings = sample(
        &net,
        &cfg.sched,
        k,
        m_tilde,
        cfg.seed ^ DDE_SAMPLE_SALT,
        Stepper::ExponentialIntegrator,
    )
    .map_err(|e| e.in_stage("sample-embeddings"))?;

    let generated = decode_embeddings(
        embeddings.matrix(),
        &fit.params_hat,
        cfg.seed ^ DDE_DECODE_SALT,
    )
    .map_err(|e| e.in_stage("decode"))?;

    let reference = reference_hypergraph(cfg, &observed, m_tilde)
        .map_err(|e| e.in_stage("reference"))?;
    let report = EvalReport {
        method: "dde".into(),
        rmse_mean: rmse_means(&generated, &reference)?,
        rmse_cov: rmse_covs(&generated, &reference)?,
        duplicate_rate: duplicate_rate(&generated, &observed),
        m_tilde,
        m: observed.m(),
        n: observed.n(),
        k,
        seed: cfg.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineOutput {
        observed,
        generated,
        report,
        fit,
        net,
        loss_trace,
    })
}

/// Generation method for grid comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dde,
    GauDiff,
    BerDiff,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dde => "dde",
            Method::GauDiff => "gau-diff",
            Method::BerDiff => "ber-diff",
        }
    }
}

/// Experiment grid over methods, latent dimensions, sizes, and repetitions.
/// Training epochs and batch size are shared across methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub alpha_range: [f64; 2],
    pub repetitions: usize,
    pub base_seed: u64,
    pub m_tilde_multiplier: usize,
    pub sched: DiffusionSchedule,
    pub train: TrainConfig,
    pub ber_steps: usize,
    pub reference: ReferenceMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Dde, Method::GauDiff],
            ks: vec![2],
            ms: vec![200],
            ns: vec![200],
            alpha_range: [-1.0, 0.0],
            repetitions: 5,
            base_seed: 1,
            m_tilde_multiplier: 32,
            sched: DiffusionSchedule::default(),
            train: TrainConfig::default(),
            ber_steps: 50,
            reference: ReferenceMode::TrainSample,
        }
    }
}

/// One grid cell result; failed cells carry the error text instead of a
/// report.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub method: Method,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Run one (method, K, m, n, seed) cell against the shared settings.
pub fn run_grid_cell(
    spec: &GridSpec,
    method: Method,
    k: usize,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    let sim = SimConfig::new(k, m, n, spec.alpha_range, seed)?;
    match method {
        Method::Dde => {
            let mut cfg = PipelineConfig::simulated(sim, seed);
            cfg.sched = spec.sched.clone();
            cfg.train = spec.train.clone();
            cfg.m_tilde_multiplier = spec.m_tilde_multiplier;
            cfg.reference = spec.reference;
            run_dde_pipeline(&cfg).map(|out| out.report)
        }
        Method::GauDiff => {
            let start = Instant::now();
            let (observed, _, _) = crate::simulate::generate_ground_truth(&sim)?;
            let m_tilde = spec.m_tilde_multiplier * observed.m();
            let (generated, _) = gau_diff_fit_sample(
                &observed,
                &spec.sched,
                &spec.train,
                m_tilde,
                seed ^ BASELINE_SALT,
            )?;
            let reference = match spec.reference {
                ReferenceMode::TrainSample => observed.clone(),
                ReferenceMode::OracleSample => oracle_sample(&sim, m_tilde, seed)?,
            };
            Ok(EvalReport {
                method: method.name().into(),
                rmse_mean: rmse_means(&generated, &reference)?,
                rmse_cov: rmse_covs(&generated, &reference)?,
                duplicate_rate: duplicate_rate(&generated, &observed),
                m_tilde,
                m: observed.m(),
                n: observed.n(),
                k,
                seed,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            })
        }
        Method::BerDiff => {
            let start = Instant::now();
            let (observed, _, _) = crate::simulate::generate_ground_truth(&sim)?;
            let m_tilde = spec.m_tilde_multiplier * observed.m();
            let cfg = BerDiffConfig {
                n_steps: spec.ber_steps,
                betas: None,
                train: spec.train.clone(),
            };
            let (generated, _) =
                ber_diff_fit_sample(&observed, &cfg, m_tilde, seed ^ BASELINE_SALT)?;
            let reference = match spec.reference {
                ReferenceMode::TrainSample => observed.clone(),
                ReferenceMode::OracleSample => oracle_sample(&sim, m_tilde, seed)?,
            };
            Ok(EvalReport {
                method: method.name().into(),
                rmse_mean: rmse_means(&generated, &reference)?,
                rmse_cov: rmse_covs(&generated, &reference)?,
                duplicate_rate: duplicate_rate(&generated, &observed),
                m_tilde,
                m: observed.m(),
                n: observed.n(),
                k,
                seed,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            })
        }
    }
}

/// Run every cell; failures are recorded and the grid continues. Rows come
/// back in deterministic grid order.
pub fn run_experiment_grid(spec: &GridSpec) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &k in &spec.ks {
            for &m in &spec.ms {
                for &n in &spec.ns {
                    for rep in 0..spec.repetitions {
                        cells.push((method, k, m, n, spec.base_seed + rep as u64));
                    }
                }
            }
        }
    }
    cells
        .into_iter()
        .map(|(method, k, m, n, seed)| match run_grid_cell(spec, method, k, m, n, seed) {
            Ok(report) => GridCell {
                method,
                k,
                m,
                n,
                seed,
                report: Some(report),
                error: None,
            },
            Err(e) => GridCell {
                method,
                k,
                m,
                n,
                seed,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str =
    "method,K,m,n,m_tilde,seed,rmse_mean,rmse_cov,duplicate_rate,wall_clock_secs,error";

/// Write per-cell rows (header always present, even for an empty grid).
pub fn write_grid_csv(path: impl AsRef<Path>, cells: &[GridCell]) -> Result<()> {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for cell in cells {
        match (&cell.report, &cell.error) {
            (Some(r), _) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},\n",
                r.method,
                r.k,
                r.m,
                r.n,
                r.m_tilde,
                r.seed,
                r.rmse_mean,
                r.rmse_cov,
                r.duplicate_rate,
                r.wall_clock_secs
            )),
            (None, Some(err)) => out.push_str(&format!(
                "{},{},{},{},,{},,,,,{}\n",
                cell.method.name(),
                cell.k,
                cell.m,
                cell.n,
                cell.seed,
                err.replace(',', ";")
            )),
            (None, None) => {}
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let cells: Vec<GridCell> = reports
        .iter()
        .map(|r| GridCell {
            method: match r.method.as_str() {
                "gau-diff" => Method::GauDiff,
                "ber-diff" => Method::BerDiff,
                _ => Method::Dde,
            },
            k: r.k,
            m: r.m,
            n: r.n,
            seed: r.seed,
            report: Some(r.clone()),
            error: None,
        })
        .collect();
    write_grid_csv(path, &cells)
}

/// Median metric rows per (method, K, m, n) over the seeds that succeeded.
#[derive(Debug, Clone, Serialize)]
pub struct MedianRow {
    pub method: String,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub seeds_used: usize,
    pub rmse_mean_median: f64,
    pub rmse_cov_median: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if values.is_empty() {
        f64::NAN
    } else {
        values[values.len() / 2]
    }
}

pub fn median_summary(cells: &[GridCell]) -> Vec<MedianRow> {
    let mut keys: Vec<(Method, usize, usize, usize)> = cells
        .iter()
        .map(|c| (c.method, c.k, c.m, c.n))
        .collect();
    keys.dedup();
    let mut rows = Vec::new();
    for key in keys {
        let mut means: Vec<f64> = Vec::new();
        let mut covs: Vec<f64> = Vec::new();
        for c in cells {
            if (c.method, c.k, c.m, c.n) == key {
                if let Some(r) = &c.report {
                    means.push(r.rmse_mean);
                    covs.push(r.rmse_cov);
                }
            }
        }
        rows.push(MedianRow {
            method: key.0.name().into(),
            k: key.1,
            m: key.2,
            n: key.3,
            seeds_used: means.len(),
            rmse_mean_median: median(&mut means),
            rmse_cov_median: median(&mut covs),
        });
    }
    rows
}
