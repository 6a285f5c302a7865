//! Command-line interface: simulation, estimation, diffusion training and
//! sampling, hyperlink generation, baselines, and the evaluation harness.
//! Every run writes its outputs plus a `meta.json` (config echo, version,
//! timings) into the `--out` directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hypergen::baselines::{ber_diff_fit_sample, gau_diff_fit_sample, BerDiffConfig};
use hypergen::embedding::{read_matrix_csv, write_matrix_csv, EmbeddingSet};
use hypergen::error::Result;
use hypergen::eval::{
    duplicate_rate, rmse_covs, rmse_means, run_dde_pipeline, run_experiment_grid, write_grid_csv,
    write_reports_csv, EvalReport, GridSpec, median_summary, PipelineConfig,
};
use hypergen::hypergraph::{load_hypergraph, save_hypergraph, HypergraphFormat};
use hypergen::lowrank::{lowrank_generate, svd_embed};
use hypergen::mle::{fit, load_fit_dir, MleConfig};
use hypergen::rng::{stream_rng, Domain};
use hypergen::scorediff::{
    sample, train_score, DiffusionSchedule, ScoreNet, Stepper, TrainConfig,
};
use hypergen::simulate::{generate_ground_truth, SimConfig};

#[derive(Parser)]
#[command(name = "hypergen", version, about = "Hypergraph generation through diffused latent embeddings")]
struct Cli {
    /// Master seed; overrides the seed found in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground-truth hypergraph plus embeddings from the simulation
    /// design (config: SimConfig JSON).
    Simulate,
    /// Fit hyperlink/node embeddings to an observed hypergraph by
    /// constrained maximum likelihood (config: MleConfig JSON).
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "lines")]
        format: FormatArg,
        /// Latent dimension when no config file is given.
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Train the score network on fitted embeddings (config: {sched, train}).
    Train {
        /// Directory written by `fit` (uses X.csv).
        #[arg(long)]
        fit_dir: PathBuf,
    },
    /// Sample embeddings from a trained score network.
    Sample {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        count: usize,
        /// Use the Euler-Maruyama stepper instead of the exponential
        /// integrator.
        #[arg(long)]
        euler: bool,
    },
    /// Decode sampled embeddings into hyperlinks with fitted node
    /// parameters.
    Generate {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        fit_dir: PathBuf,
    },
    /// RMSE metrics plus duplicate rate between two hypergraphs.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Training hypergraph for the duplicate rate (defaults to the
        /// reference).
        #[arg(long)]
        train_graph: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lines")]
        format: FormatArg,
    },
    /// End-to-end pipeline: fit, train, sample, decode, evaluate
    /// (config: PipelineConfig JSON).
    Pipeline,
    /// Experiment grid over methods and sizes (config: GridSpec JSON).
    Grid,
    /// Baseline generators operating on incidence vectors.
    Baseline {
        #[command(subcommand)]
        which: BaselineCommand,
    },
    /// Low-rank continuous pipeline: SVD embedding, diffusion in the latent
    /// space, linear decoding.
    Lowrank {
        /// CSV matrix of observed rows.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        count: usize,
    },
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Continuous diffusion on incidence rows with calibrated thresholds.
    GauDiff {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "lines")]
        format: FormatArg,
        /// Generated hyperlinks per observed hyperlink.
        #[arg(long, default_value_t = 32)]
        multiplier: usize,
    },
    /// Bernoulli diffusion on incidence bits.
    BerDiff {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "lines")]
        format: FormatArg,
        #[arg(long, default_value_t = 32)]
        multiplier: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Lines,
    Jsonl,
}

impl From<FormatArg> for HypergraphFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Lines => HypergraphFormat::Lines,
            FormatArg::Jsonl => HypergraphFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct DiffusionFileConfig {
    #[serde(default)]
    sched: DiffusionSchedule,
    #[serde(default)]
    train: TrainConfig,
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(Some(serde_json::from_str(&text)?))
        }
        None => Ok(None),
    }
}

fn write_meta(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    started: Instant,
    outputs: &[&str],
) -> Result<()> {
    let meta = serde_json::json!({
        "command": command,
        "config": config,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_secs": started.elapsed().as_secs_f64(),
        "outputs": outputs,
    });
    std::fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn report_csv_line(out: &Path, report: &EvalReport) -> Result<()> {
    write_reports_csv(out.join("report.csv"), std::slice::from_ref(report))
}

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.clone();
    let started = Instant::now();

    match cli.command {
        Command::Simulate => {
            let mut cfg: SimConfig = read_config(&cli.config)?
                .unwrap_or_else(|| SimConfig::new(2, 300, 300, [-1.0, 0.0], 0).unwrap());
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let (h, x, params) = generate_ground_truth(&cfg)?;
            save_hypergraph(&h, out.join("hypergraph.lines"), HypergraphFormat::Lines)?;
            write_matrix_csv(out.join("X.csv"), x.matrix(), "m")?;
            write_matrix_csv(out.join("Z.csv"), params.z(), "n")?;
            hypergen::embedding::write_vector_csv(out.join("alpha.csv"), params.alpha(), "n")?;
            write_meta(
                &out,
                "simulate",
                serde_json::to_value(&cfg)?,
                cfg.seed,
                started,
                &["hypergraph.lines", "X.csv", "Z.csv", "alpha.csv"],
            )?;
            println!(
                "simulated hypergraph: n={} m={} mean order {:.2}",
                h.n(),
                h.m(),
                h.total_order() as f64 / h.m() as f64
            );
        }
        Command::Fit { input, format, k } => {
            let mut cfg: MleConfig = read_config(&cli.config)?.unwrap_or_else(|| MleConfig::new(k));
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let h = load_hypergraph(&input, format.into())?;
            let fit = fit(&h, &cfg)?;
            fit.save_dir(&out, &cfg)?;
            write_meta(
                &out,
                "fit",
                serde_json::to_value(&cfg)?,
                cfg.seed,
                started,
                &["X.csv", "Z.csv", "alpha.csv", "trace.csv", "meta.json"],
            )?;
            println!(
                "fit: {} outer iterations, final log-likelihood {:.3}, max constraint residual {:.2e}",
                fit.loglik_trace.len() - 1,
                fit.loglik_trace.last().unwrap(),
                fit.constraint_residuals.max_violation()
            );
        }
        Command::Train { fit_dir } => {
            let mut cfg: DiffusionFileConfig = read_config(&cli.config)?.unwrap_or_default();
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            let x = EmbeddingSet::new(read_matrix_csv(fit_dir.join("X.csv"))?)?;
            let mut rng = stream_rng(cfg.train.seed, Domain::ScoreInit, 0);
            let mut net = ScoreNet::new(x.k(), &mut rng);
            let trace = train_score(&x, &mut net, &cfg.sched, &cfg.train)?;
            net.save(out.join("scorenet.txt"), Some(&cfg.sched))?;
            let mut loss_csv = String::from("epoch,loss\n");
            for (i, l) in trace.iter().enumerate() {
                loss_csv.push_str(&format!("{i},{l}\n"));
            }
            std::fs::write(out.join("loss.csv"), loss_csv)?;
            write_meta(
                &out,
                "train",
                serde_json::to_value(&cfg)?,
                cfg.train.seed,
                started,
                &["scorenet.txt", "loss.csv"],
            )?;
            println!(
                "trained score net on {} embeddings: final loss {:.5}",
                x.m(),
                trace.last().unwrap()
            );
        }
        Command::Sample { net, count, euler } => {
            let (net, sched) = ScoreNet::load(&net)?;
            let sched = sched.unwrap_or_default();
            let seed = cli.seed.unwrap_or(0);
            let stepper = if euler {
                Stepper::EulerMaruyama
            } else {
                Stepper::ExponentialIntegrator
            };
            let emb = sample(&net, &sched, net.k, count, seed, stepper)?;
            write_matrix_csv(out.join("embeddings.csv"), emb.matrix(), "m")?;
            write_meta(
                &out,
                "sample",
                serde_json::json!({"count": count, "sched": sched, "euler": euler}),
                seed,
                started,
                &["embeddings.csv"],
            )?;
            println!("sampled {count} embeddings of dimension {}", net.k);
        }
        Command::Generate {
            embeddings,
            fit_dir,
        } => {
            let emb = read_matrix_csv(&embeddings)?;
            let (_, params) = load_fit_dir(&fit_dir)?;
            let seed = cli.seed.unwrap_or(0);
            let h = hypergen::eval::decode_embeddings(&emb, &params, seed)?;
            save_hypergraph(&h, out.join("generated.lines"), HypergraphFormat::Lines)?;
            write_meta(
                &out,
                "generate",
                serde_json::json!({"embeddings": embeddings, "fit_dir": fit_dir}),
                seed,
                started,
                &["generated.lines"],
            )?;
            println!("generated {} hyperlinks over {} nodes", h.m(), h.n());
        }
        Command::Evaluate {
            generated,
            reference,
            train_graph,
            format,
        } => {
            let format: HypergraphFormat = format.into();
            let gen = load_hypergraph(&generated, format)?;
            let reference = load_hypergraph(&reference, format)?;
            let train = match train_graph {
                Some(p) => load_hypergraph(&p, format)?,
                None => reference.clone(),
            };
            let report = EvalReport {
                method: "evaluate".into(),
                rmse_mean: rmse_means(&gen, &reference)?,
                rmse_cov: rmse_covs(&gen, &reference)?,
                duplicate_rate: duplicate_rate(&gen, &train),
                m_tilde: gen.m(),
                m: reference.m(),
                n: gen.n(),
                k: 0,
                seed: cli.seed.unwrap_or(0),
                wall_clock_secs: started.elapsed().as_secs_f64(),
            };
            report_csv_line(&out, &report)?;
            write_meta(
                &out,
                "evaluate",
                serde_json::json!({"generated": generated, "reference": reference_path_str(&report)}),
                report.seed,
                started,
                &["report.csv"],
            )?;
            println!(
                "rmse_mean={:.6} rmse_cov={:.6} duplicate_rate={:.4}",
                report.rmse_mean, report.rmse_cov, report.duplicate_rate
            );
        }
        Command::Pipeline => {
            let mut cfg: PipelineConfig = read_config(&cli.config)?.ok_or_else(|| {
                hypergen::Error::Config("pipeline requires --config <json>".into())
            })?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
                if let Some(sim) = cfg.sim.as_mut() {
                    sim.seed = seed;
                }
            }
            let output = run_dde_pipeline(&cfg)?;
            save_hypergraph(
                &output.generated,
                out.join("generated.lines"),
                HypergraphFormat::Lines,
            )?;
            output.fit.save_dir(out.join("fit"), &cfg.mle)?;
            output.net.save(out.join("scorenet.txt"), Some(&cfg.sched))?;
            report_csv_line(&out, &output.report)?;
            write_meta(
                &out,
                "pipeline",
                serde_json::to_value(&cfg)?,
                cfg.seed,
                started,
                &["generated.lines", "fit/", "scorenet.txt", "report.csv"],
            )?;
            println!(
                "pipeline done: rmse_mean={:.6} rmse_cov={:.6} duplicate_rate={:.4} ({:.1}s)",
                output.report.rmse_mean,
                output.report.rmse_cov,
                output.report.duplicate_rate,
                output.report.wall_clock_secs
            );
        }
        Command::Grid => {
            let mut spec: GridSpec = read_config(&cli.config)?.unwrap_or_default();
            if let Some(seed) = cli.seed {
                spec.base_seed = seed;
            }
            let cells = run_experiment_grid(&spec);
            write_grid_csv(out.join("grid.csv"), &cells)?;
            let medians = median_summary(&cells);
            let mut summary = String::from("method,K,m,n,seeds_used,rmse_mean_median,rmse_cov_median\n");
            for row in &medians {
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.method, row.k, row.m, row.n, row.seeds_used,
                    row.rmse_mean_median, row.rmse_cov_median
                ));
            }
            std::fs::write(out.join("grid_medians.csv"), summary)?;
            write_meta(
                &out,
                "grid",
                serde_json::to_value(&spec)?,
                spec.base_seed,
                started,
                &["grid.csv", "grid_medians.csv"],
            )?;
            let failures = cells.iter().filter(|c| c.error.is_some()).count();
            println!("grid done: {} cells, {failures} failures", cells.len());
        }
        Command::Baseline { which } => match which {
            BaselineCommand::GauDiff {
                input,
                format,
                multiplier,
            } => {
                let cfg: DiffusionFileConfig = read_config(&cli.config)?.unwrap_or_default();
                let seed = cli.seed.unwrap_or(0);
                let h = load_hypergraph(&input, format.into())?;
                let m_tilde = multiplier * h.m();
                let (gen, model) = gau_diff_fit_sample(&h, &cfg.sched, &cfg.train, m_tilde, seed)?;
                save_hypergraph(&gen, out.join("generated.lines"), HypergraphFormat::Lines)?;
                let report = EvalReport {
                    method: "gau-diff".into(),
                    rmse_mean: rmse_means(&gen, &h)?,
                    rmse_cov: rmse_covs(&gen, &h)?,
                    duplicate_rate: duplicate_rate(&gen, &h),
                    m_tilde,
                    m: h.m(),
                    n: h.n(),
                    k: 0,
                    seed,
                    wall_clock_secs: started.elapsed().as_secs_f64(),
                };
                report_csv_line(&out, &report)?;
                let meta_cfg = serde_json::json!({
                    "sched": cfg.sched,
                    "train": cfg.train,
                    "multiplier": multiplier,
                    "thresholds": model.thresholds.to_vec(),
                });
                write_meta(&out, "baseline gau-diff", meta_cfg, seed, started,
                    &["generated.lines", "report.csv"])?;
                println!(
                    "gau-diff: rmse_mean={:.6} rmse_cov={:.6}",
                    report.rmse_mean, report.rmse_cov
                );
            }
            BaselineCommand::BerDiff {
                input,
                format,
                multiplier,
            } => {
                let cfg: BerDiffConfig = read_config(&cli.config)?.unwrap_or_default();
                let seed = cli.seed.unwrap_or(0);
                let h = load_hypergraph(&input, format.into())?;
                let m_tilde = multiplier * h.m();
                let (gen, model) = ber_diff_fit_sample(&h, &cfg, m_tilde, seed)?;
                save_hypergraph(&gen, out.join("generated.lines"), HypergraphFormat::Lines)?;
                let report = EvalReport {
                    method: "ber-diff".into(),
                    rmse_mean: rmse_means(&gen, &h)?,
                    rmse_cov: rmse_covs(&gen, &h)?,
                    duplicate_rate: duplicate_rate(&gen, &h),
                    m_tilde,
                    m: h.m(),
                    n: h.n(),
                    k: 0,
                    seed,
                    wall_clock_secs: started.elapsed().as_secs_f64(),
                };
                report_csv_line(&out, &report)?;
                let meta_cfg = serde_json::json!({
                    "config": cfg,
                    "multiplier": multiplier,
                    "betas": model.betas,
                });
                write_meta(&out, "baseline ber-diff", meta_cfg, seed, started,
                    &["generated.lines", "report.csv"])?;
                println!(
                    "ber-diff: rmse_mean={:.6} rmse_cov={:.6}",
                    report.rmse_mean, report.rmse_cov
                );
            }
        },
        Command::Lowrank { input, k, count } => {
            let cfg: DiffusionFileConfig = read_config(&cli.config)?.unwrap_or_default();
            let seed = cli.seed.unwrap_or(0);
            let y = read_matrix_csv(&input)?;
            let fit = svd_embed(&y, k)?;
            let latents = EmbeddingSet::new(fit.x_hat.clone())?;
            let mut rng = stream_rng(seed, Domain::ScoreInit, 0);
            let mut net = ScoreNet::new(k, &mut rng);
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            train_score(&latents, &mut net, &cfg.sched, &train_cfg)?;
            let gen = lowrank_generate(&fit, &net, &cfg.sched, count, seed)?;
            write_matrix_csv(out.join("generated.csv"), &gen, "m")?;
            write_matrix_csv(out.join("Z_hat.csv"), &fit.z_hat, "n")?;
            // worst-case subspace residual of the generated rows
            let proj = fit.z_hat.dot(&fit.z_hat.t());
            let mut resid = 0.0f64;
            for row in gen.rows() {
                let p = proj.dot(&row);
                resid = (&row - &p).iter().fold(resid, |a, v| a.max(v.abs()));
            }
            write_meta(
                &out,
                "lowrank",
                serde_json::json!({"k": k, "count": count, "sched": cfg.sched, "train": cfg.train, "max_subspace_residual": resid}),
                seed,
                started,
                &["generated.csv", "Z_hat.csv"],
            )?;
            println!("lowrank: generated {count} rows, max subspace residual {resid:.2e}");
        }
    }
    Ok(())
}

fn reference_path_str(report: &EvalReport) -> String {
    format!("m={} n={}", report.m, report.n)
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
