//! Experiment orchestration: single runs, parameter sweeps over the latent
//! dimension or the maximum link state, CSV emission and aggregation.
//!
//! Every run is a pure function of (config, seed): the root seed is split
//! into named streams (latents, mixing init, links, training, test latents)
//! so that rerunning any CSV row's inputs reproduces its numbers bitwise.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::ebm::train_ebm;
use crate::error::{Error, Result};
use crate::eval::mean_abs_corr;
use crate::gca::{train_gca, EncoderNetwork, TrainConfig};
use crate::rng::{stream_rng, stream_seed};
use crate::synthdata::{
    build_link_model, generate_dataset, sample_latents, LatentConfig, LatentKind, MixingNetwork,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gca,
    Ebm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gca => "gca",
            Method::Ebm => "ebm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gca" => Ok(Method::Gca),
            "ebm" => Ok(Method::Ebm),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    LatentDim,
    MaxLinkState,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::LatentDim => "latent-dim",
            SweepAxis::MaxLinkState => "max-link-state",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "latent-dim" | "d_s" => Ok(SweepAxis::LatentDim),
            "max-link-state" | "k" => Ok(SweepAxis::MaxLinkState),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub latent_kind: LatentKind,
    pub d_s: usize,
    pub d_x: usize,
    pub k_max: usize,
    pub n: usize,
    pub method: Method,
    pub train: TrainConfig,
    pub n_test: usize,
    /// Permit d_s > d_x (the latent-dimension sweep crosses this on purpose).
    pub allow_dim_mismatch: bool,
}

impl ExperimentConfig {
    /// CI-runnable profile: small data, short training.
    pub fn desk_default() -> Self {
        Self {
            latent_kind: LatentKind::IndependentLaplace,
            d_s: 4,
            d_x: 4,
            k_max: 4,
            n: 2000,
            method: Method::Gca,
            train: TrainConfig {
                minibatch_size: 100,
                iterations: 20_000,
                lr: 1e-4,
                seed: 0,
                eval_every: 100,
            },
            n_test: 10_000,
            allow_dim_mismatch: false,
        }
    }

    /// The original experiment scale.
    pub fn paper_profile() -> Self {
        Self {
            d_s: 6,
            d_x: 6,
            k_max: 10,
            n: 10_000,
            train: TrainConfig {
                iterations: 100_000,
                ..Self::desk_default().train
            },
            ..Self::desk_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_x == 0 || self.k_max == 0 || self.n < 2 || self.n_test < 3 {
            return Err(Error::InvalidConfig(
                "d_s, d_x, K must be >= 1, n >= 2, n_test >= 3".into(),
            ));
        }
        if self.d_s > self.d_x && !self.allow_dim_mismatch {
            return Err(Error::InvalidConfig(format!(
                "d_s {} > d_x {}; pass allow_dim_mismatch to run anyway",
                self.d_s, self.d_x
            )));
        }
        self.train.validate()
    }
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResultRow {
    pub method: Method,
    pub d_s: usize,
    pub d_x: usize,
    pub k_max: usize,
    pub n: usize,
    pub seed: u64,
    pub mcc: f64,
    pub loss_final: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "method,d_s,d_x,k_max,n,seed,mcc,loss_final,wall_time_s,error";

impl SweepResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:?},{:?},{:?},{}",
            self.method.as_str(),
            self.d_s,
            self.d_x,
            self.k_max,
            self.n,
            self.seed,
            self.mcc,
            self.loss_final,
            self.wall_time_s,
            self.error.as_deref().unwrap_or("")
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Format(format!(
                "expected 10 CSV fields, got {}",
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad {what}: '{s}'")))
        };
        let parse_u = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad {what}: '{s}'")))
        };
        Ok(Self {
            method: Method::parse(fields[0])?,
            d_s: parse_u(fields[1], "d_s")?,
            d_x: parse_u(fields[2], "d_x")?,
            k_max: parse_u(fields[3], "k_max")?,
            n: parse_u(fields[4], "n")?,
            seed: fields[5]
                .parse()
                .map_err(|_| Error::Format(format!("bad seed: '{}'", fields[5])))?,
            mcc: parse_f(fields[6], "mcc")?,
            loss_final: parse_f(fields[7], "loss_final")?,
            wall_time_s: parse_f(fields[8], "wall_time_s")?,
            error: if fields[9].is_empty() {
                None
            } else {
                Some(fields[9].to_string())
            },
        })
    }
}

/// Generate data, train the configured method, evaluate MCC on fresh test
/// latents pushed through the same mixing network.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<SweepResultRow> {
    let start = Instant::now();
    let inner = || -> Result<(f64, f64)> {
        cfg.validate()?;
        let latent_cfg = LatentConfig::new(cfg.latent_kind, cfg.d_s, cfg.n)?;
        let mixing = MixingNetwork::init(cfg.d_s, cfg.d_x, &mut stream_rng(seed, "mixing-init"))?;
        let link_model = build_link_model(cfg.d_s, cfg.k_max, &mut stream_rng(seed, "links-model"))?;
        let link_seed = stream_seed(seed, "links");
        let ds = generate_dataset(
            &latent_cfg,
            &mixing,
            link_model,
            &mut stream_rng(seed, "latents"),
            link_seed,
        )?;

        let train_cfg = TrainConfig {
            seed: stream_seed(seed, "train"),
            ..cfg.train.clone()
        };
        let (encoder, trace): (EncoderNetwork, _) = match cfg.method {
            Method::Gca => {
                let (model, trace) = train_gca(&ds, &train_cfg)?;
                (model.encoder, trace)
            }
            Method::Ebm => {
                // EBM never sees link weights; it trains on features alone.
                let (model, trace) = train_ebm(ds.features(), cfg.d_s, &train_cfg)?;
                (model.encoder, trace)
            }
        };
        let loss_final = trace.losses.last().copied().unwrap_or(f64::NAN);

        let test_cfg = LatentConfig::new(cfg.latent_kind, cfg.d_s, cfg.n_test)?;
        let s_test = sample_latents(&test_cfg, &mut stream_rng(seed, "test-latents"));
        let x_test = mixing.apply(&s_test)?;
        let h_test = encoder.encode(&x_test)?;
        let report = mean_abs_corr(&s_test, &h_test)?;
        Ok((report.mcc, loss_final))
    };
    let (mcc, loss_final) = inner().map_err(|e| Error::Experiment {
        context: format!(
            "{} d_s={} d_x={} K={} n={} seed={}",
            cfg.method.as_str(),
            cfg.d_s,
            cfg.d_x,
            cfg.k_max,
            cfg.n,
            seed
        ),
        source: Box::new(e),
    })?;
    Ok(SweepResultRow {
        method: cfg.method,
        d_s: cfg.d_s,
        d_x: cfg.d_x,
        k_max: cfg.k_max,
        n: cfg.n,
        seed,
        mcc,
        loss_final,
        wall_time_s: start.elapsed().as_secs_f64(),
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub method: Method,
    pub axis_value: usize,
    pub mean_mcc: f64,
    pub std_mcc: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub axis: SweepAxis,
    pub rows: Vec<SweepResultRow>,
    pub aggregate: Vec<AggregatePoint>,
}

fn config_for_point(base: &ExperimentConfig, axis: SweepAxis, value: usize, method: Method) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.method = method;
    match axis {
        SweepAxis::LatentDim => {
            cfg.d_s = value;
            // The latent-dimension sweep deliberately crosses d_s > d_x.
            cfg.allow_dim_mismatch = true;
        }
        SweepAxis::MaxLinkState => cfg.k_max = value,
    }
    cfg
}

/// Cross product of values × methods × seeds, executed on a worker pool.
/// Failures are recorded per row and do not abort the sweep.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
    methods: &[Method],
) -> Result<SweepOutput> {
    if values.is_empty() || seeds.is_empty() || methods.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs nonempty values, seeds and methods".into(),
        ));
    }
    let points: Vec<(usize, Method, u64)> = values
        .iter()
        .flat_map(|&v| {
            methods
                .iter()
                .flat_map(move |&m| seeds.iter().map(move |&s| (v, m, s)))
        })
        .collect();

    let rows: Vec<SweepResultRow> = points
        .par_iter()
        .map(|&(value, method, seed)| {
            let cfg = config_for_point(base, axis, value, method);
            run_experiment(&cfg, seed).unwrap_or_else(|e| SweepResultRow {
                method,
                d_s: cfg.d_s,
                d_x: cfg.d_x,
                k_max: cfg.k_max,
                n: cfg.n,
                seed,
                mcc: f64::NAN,
                loss_final: f64::NAN,
                wall_time_s: f64::NAN,
                error: Some(e.to_string().replace(',', ";")),
            })
        })
        .collect();

    let aggregate = aggregate_rows(&rows, axis);
    Ok(SweepOutput {
        axis,
        rows,
        aggregate,
    })
}

fn axis_value(row: &SweepResultRow, axis: SweepAxis) -> usize {
    match axis {
        SweepAxis::LatentDim => row.d_s,
        SweepAxis::MaxLinkState => row.k_max,
    }
}

/// Per-(method, axis value) mean and standard deviation of MCC over seeds.
pub fn aggregate_rows(rows: &[SweepResultRow], axis: SweepAxis) -> Vec<AggregatePoint> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for row in rows {
        let key = (row.method, axis_value(row, axis));
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by_key(|&(m, v)| (m != Method::Gca, v));
    keys.into_iter()
        .map(|(method, value)| {
            let mut seeded: Vec<(u64, f64)> = rows
                .iter()
                .filter(|r| r.method == method && axis_value(r, axis) == value && r.error.is_none())
                .map(|r| (r.seed, r.mcc))
                .collect();
            // Fixed summation order makes aggregation seed-order invariant.
            seeded.sort_by_key(|&(seed, _)| seed);
            let mccs: Vec<f64> = seeded.into_iter().map(|(_, m)| m).collect();
            let n = mccs.len();
            let mean = if n > 0 {
                mccs.iter().sum::<f64>() / n as f64
            } else {
                f64::NAN
            };
            let var = if n > 0 {
                mccs.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n as f64
            } else {
                f64::NAN
            };
            AggregatePoint {
                method,
                axis_value: value,
                mean_mcc: mean,
                std_mcc: var.sqrt(),
                n_runs: n,
            }
        })
        .collect()
}

pub fn write_rows_csv(rows: &[SweepResultRow], path: &Path) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<SweepResultRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad CSV header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    lines.map(SweepResultRow::from_csv_line).collect()
}

pub fn write_aggregate_csv(aggregate: &[AggregatePoint], axis: SweepAxis, path: &Path) -> Result<()> {
    let mut out = format!("method,{},mean_mcc,std_mcc,n_runs\n", axis.as_str());
    for p in aggregate {
        writeln!(
            out,
            "{},{},{:?},{:?},{}",
            p.method.as_str(),
            p.axis_value,
            p.mean_mcc,
            p.std_mcc,
            p.n_runs
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One plot-ready file per method: `x mean std` lines at 6 significant
/// digits, preceded by a header line.
pub fn emit_plot_data(aggregate: &[AggregatePoint], axis: SweepAxis, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for method in [Method::Gca, Method::Ebm] {
        let points: Vec<&AggregatePoint> =
            aggregate.iter().filter(|p| p.method == method).collect();
        if points.is_empty() && !aggregate.is_empty() {
            continue;
        }
        let mut out = format!("# {} mean_mcc std_mcc\n", axis.as_str());
        for p in &points {
            writeln!(out, "{} {:.6} {:.6}", p.axis_value, p.mean_mcc, p.std_mcc).unwrap();
        }
        let path = dir.join(format!("plot_{}.dat", method.as_str()));
        std::fs::write(&path, out)?;
        written.push(path);
        if aggregate.is_empty() {
            break; // emit a single header-only file for an empty aggregate
        }
    }
    Ok(written)
}

/// Line-oriented `key=value` config format; `#` starts a comment. Unset keys
/// keep their defaults from the desk profile.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::desk_default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: bad {what} '{value}'", lineno + 1));
        match key {
            "latent" => {
                cfg.latent_kind = match value.to_ascii_lowercase().as_str() {
                    "laplace" | "independent-laplace" => LatentKind::IndependentLaplace,
                    "gauss" | "correlated-gauss" => LatentKind::CorrelatedGauss,
                    _ => return Err(bad("latent kind")),
                }
            }
            "d_s" => cfg.d_s = value.parse().map_err(|_| bad("d_s"))?,
            "d_x" => cfg.d_x = value.parse().map_err(|_| bad("d_x"))?,
            "k" => cfg.k_max = value.parse().map_err(|_| bad("k"))?,
            "n" => cfg.n = value.parse().map_err(|_| bad("n"))?,
            "n_test" => cfg.n_test = value.parse().map_err(|_| bad("n_test"))?,
            "method" => cfg.method = Method::parse(value)?,
            "iterations" => cfg.train.iterations = value.parse().map_err(|_| bad("iterations"))?,
            "minibatch" => cfg.train.minibatch_size = value.parse().map_err(|_| bad("minibatch"))?,
            "lr" => cfg.train.lr = value.parse().map_err(|_| bad("lr"))?,
            "eval_every" => cfg.train.eval_every = value.parse().map_err(|_| bad("eval_every"))?,
            "allow_dim_mismatch" => {
                cfg.allow_dim_mismatch = value.parse().map_err(|_| bad("allow_dim_mismatch"))?
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(cfg)
}
