use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bethe_cli::config::{ExperimentConfig, ExperimentKind, Profile};
use bethe_cli::experiment::{
    crf_corpus, draw_samples, exact_covariance, random_spin_model, run_crf_experiment,
    run_grid_experiment, run_strength_sweep, ExperimentReport, SAMPLE_METHODS,
};
use bethe_cli::io;
use bethe_cli::report::{digest, write_report};
use bethe_core::exact::exact_sample;
use bethe_core::fit::{fit_map, Backend, FitOptions};
use bethe_core::graph::grid_graph;
use bethe_core::posterior::assemble_posterior;
use bethe_core::response::lr_covariance;
use bethe_core::{cvm_score, BpOptions, GaussianPrior, Graph};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(
    name = "bethe",
    version,
    about = "Bethe-Laplace posteriors for binary random fields and chain CRFs"
)]
struct Cli {
    /// Flat `key = value` experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "smoke")]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Smoke,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Bp,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    /// Linear response at the MAP point.
    Lr,
    /// Exact feature covariance at the MAP point.
    Exact,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Data file, one configuration per line.
    #[arg(long)]
    data: PathBuf,
    /// Model file whose graph is used (its parameters are ignored).
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    model: Option<PathBuf>,
    /// Grid graph `ROWSxCOLS`.
    #[arg(long)]
    grid: Option<String>,
    /// Prior variance; overrides the configuration.
    #[arg(long)]
    prior_variance: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// MAP parameters.
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "exact")]
        backend: BackendArg,
    },
    /// Gaussian posterior mean and covariance.
    Posterior {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "exact")]
        backend: BackendArg,
        #[arg(long, value_enum, default_value = "lr")]
        covariance: CovarianceArg,
    },
    /// Posterior samples from one method.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        /// bl-mp, bl-bp, lv-cd, mc-bp, hmc-exact or mh-exact.
        #[arg(long, default_value = "bl-mp")]
        method: String,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
    },
    /// CVM score between two sample files.
    Compare { first: PathBuf, second: PathBuf },
    /// Posterior accuracy on random grid models over data sizes.
    GridExp,
    /// Posterior accuracy over interaction strengths.
    SweepExp,
    /// Chain CRF posterior accuracy and prediction error.
    CrfExp,
    /// Writes a random model with exact samples, or a synthetic sequence corpus.
    GenSynthetic {
        #[arg(value_enum)]
        kind: SyntheticKind,
        /// Samples for `mrf`.
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticKind {
    Mrf,
    Crf,
}

fn parse_grid(spec: &str) -> Result<Graph> {
    let (r, c) = spec
        .split_once(['x', 'X'])
        .with_context(|| format!("grid `{spec}` is not ROWSxCOLS"))?;
    Ok(grid_graph(r.trim().parse()?, c.trim().parse()?)?)
}

fn load_graph(args: &ModelArgs) -> Result<Graph> {
    match (&args.model, &args.grid) {
        (Some(path), _) => Ok(io::read_model(path)
            .with_context(|| format!("reading {}", path.display()))?
            .graph()
            .clone()),
        (None, Some(spec)) => parse_grid(spec),
        (None, None) => bail!("pass --model or --grid"),
    }
}

fn config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let profile = match cli.profile {
        ProfileArg::Smoke => Profile::Smoke,
        ProfileArg::Paper => Profile::Paper,
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, kind, profile)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::for_profile(kind, profile),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn prior_for(cfg: &ExperimentConfig, args: &ModelArgs) -> Result<GaussianPrior> {
    Ok(GaussianPrior::isotropic(
        args.prior_variance.unwrap_or(cfg.prior_variance),
    )?)
}

fn bp_options(cfg: &ExperimentConfig) -> BpOptions {
    BpOptions {
        max_iters: cfg.bp_max_iters,
        tol: cfg.bp_tol,
        damping: cfg.bp_damping,
        ..BpOptions::default()
    }
}

fn fit_options(cfg: &ExperimentConfig, graph: &Graph, backend: BackendArg) -> FitOptions {
    let backend = match backend {
        BackendArg::Exact => Backend::exact_for(graph),
        BackendArg::Bp => Backend::Bp,
    };
    FitOptions {
        bp_options: bp_options(cfg),
        ..FitOptions::with_backend(backend)
    }
}

fn written(path: &Path) {
    println!("wrote {}", path.display());
}

fn finish(report: &ExperimentReport, cfg: &ExperimentConfig) -> Result<ExitCode> {
    for p in write_report(report, &cfg.out)? {
        written(&p);
    }
    print!("{}", digest(report));
    if report.any_failed() {
        eprintln!("some cells failed; see the notes column of the summary");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Fit { model, backend } => {
            let cfg = config(cli, ExperimentKind::GridPosterior)?;
            let graph = load_graph(model)?;
            let data = io::read_dataset(&model.data, Some(graph.node_count()))?;
            let fit = fit_map(
                &graph,
                &data,
                &prior_for(&cfg, model)?,
                &fit_options(&cfg, &graph, *backend),
            )?;
            let path = cfg.out.join("fit.csv");
            io::write_text(&path, &io::format_fit_csv(&graph.feature_names(), &fit))?;
            written(&path);
            if !fit.converged {
                eprintln!(
                    "fit stopped after {} iterations with gradient norm {:e}",
                    fit.iterations, fit.grad_norm
                );
                return Ok(ExitCode::from(1));
            }
        }
        Command::Posterior {
            model,
            backend,
            covariance,
        } => {
            let cfg = config(cli, ExperimentKind::GridPosterior)?;
            let graph = load_graph(model)?;
            let data = io::read_dataset(&model.data, Some(graph.node_count()))?;
            let prior = prior_for(&cfg, model)?;
            let fit = fit_map(&graph, &data, &prior, &fit_options(&cfg, &graph, *backend))?;
            let at_map =
                bethe_core::PairwiseBinaryModel::from_lambda(graph.clone(), &fit.lambda_map)?;
            let c = match covariance {
                CovarianceArg::Lr => lr_covariance(&at_map, &bp_options(&cfg))?.lr.covariance,
                CovarianceArg::Exact => exact_covariance(&at_map)?,
            };
            let post = assemble_posterior(&fit.lambda_map, &c, &prior, data.len())?;
            let names = graph.feature_names();
            let mean = DMatrix::from_row_slice(1, post.mean.len(), &post.mean);
            let mean_path = cfg.out.join("posterior_mean.csv");
            let cov_path = cfg.out.join("posterior_covariance.csv");
            io::write_text(&mean_path, &io::format_matrix_csv(&names, &mean))?;
            io::write_text(&cov_path, &io::format_matrix_csv(&names, &post.covariance))?;
            written(&mean_path);
            written(&cov_path);
        }
        Command::Sample {
            model,
            method,
            count,
        } => {
            if !SAMPLE_METHODS.contains(&method.as_str()) {
                bail!(
                    "unknown method `{method}`; expected one of {}",
                    SAMPLE_METHODS.join(", ")
                );
            }
            let mut cfg = config(cli, ExperimentKind::GridPosterior)?;
            if let Some(v) = model.prior_variance {
                cfg.prior_variance = v;
            }
            let graph = load_graph(model)?;
            let data = io::read_dataset(&model.data, Some(graph.node_count()))?;
            let (set, notes) = draw_samples(&cfg, &graph, &data, method, *count)?;
            let path = cfg.out.join("samples.csv");
            io::write_text(&path, &io::format_samples_csv(&graph.feature_names(), &set))?;
            written(&path);
            if !notes.is_empty() {
                println!("notes: {}", notes.join("; "));
            }
        }
        Command::Compare { first, second } => {
            let cfg = config(cli, ExperimentKind::GridPosterior)?;
            let a = io::read_samples_csv(first)
                .with_context(|| format!("reading {}", first.display()))?;
            let b = io::read_samples_csv(second)
                .with_context(|| format!("reading {}", second.display()))?;
            let report = cvm_score(&a, &b)?;
            let names = io::parse_matrix_csv(&std::fs::read_to_string(first)?)?.0;
            let path = cfg.out.join("cvm.csv");
            io::write_text(&path, &io::format_cvm_csv(&names, &report))?;
            written(&path);
            println!("cvm {}", report.total);
        }
        Command::GridExp => {
            let cfg = config(cli, ExperimentKind::GridPosterior)?;
            return finish(&run_grid_experiment(&cfg)?, &cfg);
        }
        Command::SweepExp => {
            let cfg = config(cli, ExperimentKind::StrengthSweep)?;
            return finish(&run_strength_sweep(&cfg)?, &cfg);
        }
        Command::CrfExp => {
            let cfg = config(cli, ExperimentKind::Crf)?;
            return finish(&run_crf_experiment(&cfg)?, &cfg);
        }
        Command::GenSynthetic {
            kind: SyntheticKind::Mrf,
            count,
        } => {
            let cfg = config(cli, ExperimentKind::GridPosterior)?;
            let graph = grid_graph(cfg.rows, cfg.cols)?;
            let model = random_spin_model(&graph, cfg.param_variance, cfg.seed)?;
            let data = exact_sample(&model, *count, cfg.seed.wrapping_add(1))?;
            let model_path = cfg.out.join("model.txt");
            let data_path = cfg.out.join("data.txt");
            io::write_text(&model_path, &io::format_model(&model))?;
            io::write_text(&data_path, &io::format_dataset(&data))?;
            written(&model_path);
            written(&data_path);
        }
        Command::GenSynthetic {
            kind: SyntheticKind::Crf,
            ..
        } => {
            let mut cfg = config(cli, ExperimentKind::Crf)?;
            cfg.crf_corpus = None;
            let (train, _) = crf_corpus(&cfg)?;
            let path = cfg.out.join("sequences.txt");
            io::write_text(&path, &io::format_sequences(&train))?;
            written(&path);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
