//! `gca` command line: dataset generation, training, evaluation, sweeps and
//! the identifiability checker.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gca_core::ebm::train_ebm;
use gca_core::eval::mean_abs_corr;
use gca_core::gca::{train_gca, TrainConfig};
use gca_core::harness::{
    emit_plot_data, parse_experiment_config, run_sweep, write_aggregate_csv, write_rows_csv,
    ExperimentConfig, Method, SweepAxis,
};
use gca_core::io::{
    load_dataset, load_ebm_model, load_gca_model, save_dataset, save_ebm_model, save_gca_model,
};
use gca_core::rng::{stream_rng, stream_seed};
use gca_core::synthdata::{build_link_model, generate_dataset, LatentConfig, MixingNetwork};
use gca_core::theory::check_identifiability;
use gca_core::{Error, LatentKind};

#[derive(Parser)]
#[command(name = "gca", about = "Graph component analysis experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Latent distribution: laplace | gauss
    #[arg(long, default_value = "laplace")]
    latent: String,
    /// Latent dimension
    #[arg(long, default_value_t = 4)]
    d_s: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 4)]
    d_x: usize,
    /// Maximum link state
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Number of nodes
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Permit d_s > d_x
    #[arg(long)]
    allow_dim_mismatch: bool,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Dataset file produced by `generate`
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    minibatch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV path for the recorded loss trace
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph dataset file
    Generate {
        #[command(flatten)]
        data: DataArgs,
        /// Output dataset path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GCA estimator on a dataset
    TrainGca {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the EBM baseline (link weights are ignored)
    TrainEbm {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint against a dataset's held-out latents
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Sweep the latent dimension or the maximum link state
    Sweep {
        /// Axis: latent-dim | max-link-state
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Comma-separated methods (gca, ebm)
        #[arg(long, value_delimiter = ',', default_value = "gca,ebm")]
        methods: Vec<String>,
        /// Output directory (overridden by $GCA_OUTPUT_DIR)
        #[arg(long, default_value = "sweep-out")]
        out_dir: PathBuf,
        /// Optional key=value config file for the base experiment
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
        #[arg(long, default_value_t = 10_000)]
        n_test: usize,
    },
    /// Check the identifiability conditions of a link model
    CheckIdentifiability {
        /// Read the link model from a dataset file
        #[arg(long, conflicts_with_all = ["d_s", "k", "seed"])]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        d_s: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_latent(s: &str) -> Result<LatentKind, Error> {
    match s.to_ascii_lowercase().as_str() {
        "laplace" | "independent-laplace" => Ok(LatentKind::IndependentLaplace),
        "gauss" | "correlated-gauss" => Ok(LatentKind::CorrelatedGauss),
        other => Err(Error::InvalidConfig(format!("unknown latent kind '{other}'"))),
    }
}

fn build_dataset(args: &DataArgs) -> Result<gca_core::GraphDataset, Error> {
    if args.d_s > args.d_x && !args.allow_dim_mismatch {
        return Err(Error::InvalidConfig(format!(
            "d_s {} > d_x {}; pass --allow-dim-mismatch to proceed",
            args.d_s, args.d_x
        )));
    }
    let kind = parse_latent(&args.latent)?;
    let latent_cfg = LatentConfig::new(kind, args.d_s, args.n)?;
    let mixing = MixingNetwork::init(args.d_s, args.d_x, &mut stream_rng(args.seed, "mixing-init"))?;
    let link_model = build_link_model(args.d_s, args.k, &mut stream_rng(args.seed, "links-model"))?;
    generate_dataset(
        &latent_cfg,
        &mixing,
        link_model,
        &mut stream_rng(args.seed, "latents"),
        stream_seed(args.seed, "links"),
    )
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        minibatch_size: args.minibatch,
        iterations: args.iterations,
        lr: args.lr,
        seed: args.seed,
        eval_every: args.eval_every,
    }
}

fn write_loss_trace(trace: &gca_core::gca::LossTrace, path: &Path) -> Result<(), Error> {
    let mut out = String::from("iteration,loss\n");
    for (it, loss) in trace.iterations.iter().zip(&trace.losses) {
        out.push_str(&format!("{it},{loss:?}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn output_dir(flag: &Path) -> PathBuf {
    std::env::var_os("GCA_OUTPUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| flag.to_path_buf())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { data, out } => {
            let ds = build_dataset(&data)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote dataset: n={} d_s={} d_x={} K={} -> {}",
                ds.n(),
                ds.d_s(),
                ds.d_x(),
                ds.k_max(),
                out.display()
            );
        }
        Command::TrainGca { train } => {
            let ds = load_dataset(&train.data)?;
            let (model, trace) = train_gca(&ds, &train_config(&train))?;
            save_gca_model(&model, &train.out)?;
            if let Some(path) = &train.loss_out {
                write_loss_trace(&trace, path)?;
            }
            println!(
                "trained GCA for {} iterations, final loss {:.6} -> {}",
                train.iterations,
                trace.losses.last().copied().unwrap_or(f64::NAN),
                train.out.display()
            );
        }
        Command::TrainEbm { train } => {
            let ds = load_dataset(&train.data)?;
            let (model, trace) = train_ebm(ds.features(), ds.d_s(), &train_config(&train))?;
            save_ebm_model(&model, &train.out)?;
            if let Some(path) = &train.loss_out {
                write_loss_trace(&trace, path)?;
            }
            println!(
                "trained EBM for {} iterations, final loss {:.6} -> {}",
                train.iterations,
                trace.losses.last().copied().unwrap_or(f64::NAN),
                train.out.display()
            );
        }
        Command::Eval { data, model } => {
            let ds = load_dataset(&data)?;
            let encoder = match load_gca_model(&model) {
                Ok(m) => m.encoder,
                Err(_) => load_ebm_model(&model)?.encoder,
            };
            let h = encoder.encode(&ds.x)?;
            let report = mean_abs_corr(&ds.s_true, &h)?;
            println!("n_test: {}", report.n_test);
            println!("mcc:    {:.6}", report.mcc);
            for (i, (&j, &c)) in report
                .assignment
                .iter()
                .zip(&report.per_component_abs_corr)
                .enumerate()
            {
                println!("  latent {i} -> estimate {j}: |corr| = {c:.6}");
            }
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            methods,
            out_dir,
            config,
            data,
            iterations,
            n_test,
        } => {
            let axis = SweepAxis::parse(&axis)?;
            let mut base = match &config {
                Some(path) => parse_experiment_config(&std::fs::read_to_string(path)?)?,
                None => {
                    let mut cfg = ExperimentConfig::desk_default();
                    cfg.latent_kind = parse_latent(&data.latent)?;
                    cfg.d_s = data.d_s;
                    cfg.d_x = data.d_x;
                    cfg.k_max = data.k;
                    cfg.n = data.n;
                    cfg.n_test = n_test;
                    cfg.train.iterations = iterations;
                    cfg.allow_dim_mismatch = data.allow_dim_mismatch;
                    cfg
                }
            };
            if axis == SweepAxis::LatentDim {
                base.allow_dim_mismatch = true;
            }
            let methods = methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>, _>>()?;
            let out = run_sweep(&base, axis, &values, &seeds, &methods)?;
            let dir = output_dir(&out_dir);
            std::fs::create_dir_all(&dir)?;
            write_rows_csv(&out.rows, &dir.join("runs.csv"))?;
            write_aggregate_csv(&out.aggregate, axis, &dir.join("aggregate.csv"))?;
            emit_plot_data(&out.aggregate, axis, &dir)?;
            for p in &out.aggregate {
                println!(
                    "{} {}={}: mean mcc {:.4} ± {:.4} ({} runs)",
                    p.method.as_str(),
                    axis.as_str(),
                    p.axis_value,
                    p.mean_mcc,
                    p.std_mcc,
                    p.n_runs
                );
            }
            let failures = out.rows.iter().filter(|r| r.error.is_some()).count();
            if failures > 0 {
                eprintln!("{failures} run(s) failed; see runs.csv");
            }
            println!("results in {}", dir.display());
        }
        Command::CheckIdentifiability { data, d_s, k, seed } => {
            let model = match data {
                Some(path) => load_dataset(&path)?.link_model,
                None => build_link_model(d_s, k, &mut stream_rng(seed, "links-model"))?,
            };
            let report = check_identifiability(&model)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
