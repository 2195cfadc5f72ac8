//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{OracleKind, RunConfig};
use crate::data::measurement_batch;
use crate::error::{Error, Result};
use crate::net::{Batch, BnNetwork, Checkpoint, LossOracle};
use crate::optimizer::{compare, fmt_f64, train, write_compare_csv, write_metrics_csv};
use crate::params::{scale_transform, ParamVector};
use crate::regularizer::{
    h1_raw, h2, quadrature_grad_theta, quadrature_grad_v, relative_error, BatchTriple, H1Form,
};
use crate::sharpness::{
    bn_sharpness, init_direction, lp_ball_sharpness_mc, lp_ball_sharpness_mc_with,
    search_direction, trace_sharpness, trace_sharpness_scoped, BallConfig, LpMcReport, LpOrder,
    MeasurementReport, TraceReport, TraceScope,
};

#[derive(Debug, Parser)]
#[command(name = "bn-sharp", version, about = "Scale-invariant sharpness for batch-normalized networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes metrics.csv, checkpoint.json and config.toml.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Print the sharpness report of a checkpoint as JSON.
    Measure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare sharpness measures at theta and at a rescaled theta.
    Invariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated per-block factors (one value applies to every BN
        /// block), or `collapse` to shrink the BN blocks into the ball of
        /// radius `mc_delta`.
        #[arg(long, default_value = "1")]
        scale: String,
    },
    /// Relative errors of the two-point penalty gradients over a delta grid.
    ApproxCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train SGD and SGDS over several seeds and summarize.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => cmd_train(&common.config, &out_dir(&common)),
        Command::Measure { common, checkpoint } => {
            let report = cmd_measure(&common.config, checkpoint.as_deref())?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            print!("{text}");
            if let Some(out) = &common.out {
                write_file(out, "report.json", &text)?;
            }
            Ok(())
        }
        Command::Invariance {
            common,
            checkpoint,
            scale,
        } => {
            let text = cmd_invariance(&common.config, checkpoint.as_deref(), &scale)?;
            print!("{text}");
            if let Some(out) = &common.out {
                write_file(out, "invariance.csv", &text)?;
            }
            Ok(())
        }
        Command::ApproxCheck { common, checkpoint } => {
            let text = cmd_approx_check(&common.config, checkpoint.as_deref())?;
            print!("{text}");
            if let Some(out) = &common.out {
                write_file(out, "approx_check.csv", &text)?;
            }
            Ok(())
        }
        Command::Compare { common, seeds } => {
            let out = out_dir(&common);
            cmd_compare(&common.config, seeds, &out)?;
            print!(
                "{}",
                fs::read_to_string(out.join("compare.csv")).map_err(|e| Error::io(&out, e))?
            );
            Ok(())
        }
    }
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn require_bn_mlp(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.network.oracle != OracleKind::BnMlp {
        return Err(Error::Config(format!("{what} needs [network] oracle = \"bn_mlp\"")));
    }
    Ok(())
}

/// Train as configured. On a numeric failure the metrics so far and the
/// last good parameters are still written before the error is returned.
pub fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    require_bn_mlp(&cfg, "train")?;
    let data = cfg.dataset()?;
    let net = cfg.network()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(out, "config.toml", &cfg.to_toml())?;
    let spec = Some(net.spec().clone());
    match train(&net, &data, &cfg.train_config()) {
        Ok(done) => {
            write_metrics_csv(&out.join("metrics.csv"), &done.metrics)?;
            Checkpoint::new(spec, &done.state.theta, Some(done.running_stats))
                .save(&out.join("checkpoint.json"))
        }
        Err(failure) => {
            write_metrics_csv(&out.join("metrics.csv"), &failure.metrics)?;
            Checkpoint::new(spec, &failure.last_good.theta, Some(failure.running_stats.clone()))
                .save(&out.join("checkpoint.json"))?;
            Err(Error::NonFinite(failure.to_string()))
        }
    }
}

/// The model a command operates on: oracle, parameters and the batch that
/// losses are evaluated on.
struct Subject {
    oracle: Box<dyn LossOracle>,
    theta: ParamVector,
    batch: Batch,
}

/// Parameters come from the checkpoint if given, otherwise from the
/// config (seeded initialization or the analytic `theta`). A checkpoint's
/// own network spec takes precedence over `[network]`.
fn load_subject(cfg: &RunConfig, checkpoint: Option<&Path>, force_zero_eps: bool) -> Result<Subject> {
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let spec = match &ck {
        Some(c) => c.network.clone(),
        None if cfg.network.oracle == OracleKind::BnMlp => Some(cfg.network.spec()),
        None => None,
    };
    if let Some(mut spec) = spec {
        if force_zero_eps {
            spec.eps = 0.0;
        }
        let net = BnNetwork::new(spec)?;
        let theta = match &ck {
            Some(c) => c.params()?,
            None => net.init(cfg.network.init_seed),
        };
        let data = cfg.dataset()?;
        let batch = measurement_batch(&data, cfg.train.batch_size, cfg.train.seed)?;
        return Ok(Subject {
            oracle: Box::new(net),
            theta,
            batch,
        });
    }
    if cfg.network.oracle == OracleKind::BnMlp {
        return Err(Error::Checkpoint(
            "checkpoint has no network but the config asks for bn_mlp".into(),
        ));
    }
    let theta = match &ck {
        Some(c) => c.params()?,
        None => cfg.network.analytic_theta()?,
    };
    Ok(Subject {
        oracle: cfg.oracle(&theta)?,
        theta,
        batch: Batch::none(),
    })
}

pub fn cmd_measure(config: &Path, checkpoint: Option<&Path>) -> Result<MeasurementReport> {
    let cfg = RunConfig::load(config)?;
    let s = load_subject(&cfg, checkpoint, false)?;
    let m = &cfg.measure;
    let search = search_direction(&*s.oracle, &s.theta, &cfg.sharpness, &s.batch, m.seed)?;
    let ball = BallConfig {
        delta: m.mc_delta,
        p: m.mc_p,
        n_samples: m.mc_samples,
        relative: m.mc_relative,
    };
    let mc = lp_ball_sharpness_mc_with(&*s.oracle, &s.theta, &ball, &s.batch, m.seed)?;
    let tr = trace_sharpness(&*s.oracle, &s.theta, &s.batch, m.trace_probes, m.seed)?;
    Ok(MeasurementReport {
        delta: cfg.sharpness.delta,
        p: cfg.sharpness.p,
        k1: cfg.sharpness.k1,
        bn_sharpness: search.norm,
        inner: search.inner,
        lp_mc: LpMcReport {
            p: m.mc_p,
            value: mc,
            n_samples: m.mc_samples,
        },
        trace: TraceReport {
            estimate: tr.estimate,
            n_probes: m.trace_probes,
        },
        seed: m.seed,
    })
}

/// Per-block factors from `--scale`.
pub fn parse_scale(spec: &str, theta: &ParamVector, delta: f64) -> Result<Vec<f64>> {
    let n1 = theta.n1();
    if spec.trim() == "collapse" {
        return Ok(vec![collapse_factor(theta, delta); n1]);
    }
    let values = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--scale: {s:?} is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; n1]),
        n if n == n1 => Ok(values),
        n => Err(Error::Structural(format!(
            "--scale has {n} factors, the parameters have {n1} BN blocks"
        ))),
    }
}

/// `delta / (sqrt(N) * max_i |theta_i|)` over all `N` blocks: after this
/// rescaling, zeroing every BN block is a move of length at most `delta`.
pub fn collapse_factor(theta: &ParamVector, delta: f64) -> f64 {
    let max_norm = (0..theta.num_blocks())
        .map(|i| theta.block_norm(i))
        .fold(0.0, f64::max);
    delta / ((theta.num_blocks() as f64).sqrt() * max_norm)
}

/// Rows `measure,at_theta,at_scaled,ratio`. BN networks are evaluated with
/// a zero variance floor so the loss is exactly scale invariant.
pub fn cmd_invariance(config: &Path, checkpoint: Option<&Path>, scale: &str) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let s = load_subject(&cfg, checkpoint, true)?;
    let m = &cfg.measure;
    let a = parse_scale(scale, &s.theta, m.mc_delta)?;
    let scaled = scale_transform(&s.theta, &a)?;
    let o = &*s.oracle;
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();
    let bn = |t: &ParamVector| bn_sharpness(o, t, &cfg.sharpness, &s.batch, m.seed);
    rows.push(("bn_sharpness", bn(&s.theta)?, bn(&scaled)?));
    let mc = |t: &ParamVector| {
        lp_ball_sharpness_mc(o, t, m.mc_delta, LpOrder::Infinity, m.mc_samples, &s.batch, m.seed)
    };
    rows.push(("lp_mc_inf", mc(&s.theta)?, mc(&scaled)?));
    let scope = TraceScope::bn_blocks(&s.theta);
    let tr = |t: &ParamVector| {
        trace_sharpness_scoped(o, t, &s.batch, m.trace_probes, m.seed, &scope).map(|e| e.estimate)
    };
    rows.push(("trace_bn_blocks", tr(&s.theta)?, tr(&scaled)?));
    let mut text = String::from("measure,at_theta,at_scaled,ratio\n");
    for (name, x, y) in rows {
        let ratio = if x == 0.0 && y == 0.0 { 1.0 } else { y / x };
        writeln!(text, "{name},{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(ratio)).unwrap();
    }
    Ok(text)
}

/// CSV `delta,h1_rel_err,h2_rel_err,h1_second_diff_rel_err` against the
/// quadrature gradients, with `v` the gradient-aligned direction.
pub fn cmd_approx_check(config: &Path, checkpoint: Option<&Path>) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let s = load_subject(&cfg, checkpoint, false)?;
    let sc = &cfg.sharpness;
    let o = &*s.oracle;
    let v = init_direction(o, &s.theta, &s.batch, cfg.measure.seed)?;
    let same = BatchTriple::same(&s.batch);
    let mut text = String::from("delta,h1_rel_err,h2_rel_err,h1_second_diff_rel_err\n");
    for &delta in &cfg.measure.approx_deltas {
        let q_theta = quadrature_grad_theta(o, &s.theta, v.params(), delta, sc.p, sc.quad_points, &s.batch)?;
        let q_v = quadrature_grad_v(o, &s.theta, v.params(), delta, sc.p, sc.quad_points, &s.batch)?;
        let h1d = h1_raw(o, &s.theta, &v, delta, sc.p, 1.0, H1Form::Difference, same)?;
        let h1s = h1_raw(o, &s.theta, &v, delta, sc.p, 1.0, H1Form::SecondDifference, same)?;
        let h2v = h2(o, &s.theta, &v, delta, sc.p, &s.batch)?;
        writeln!(
            text,
            "{},{},{},{}",
            fmt_f64(delta),
            fmt_f64(relative_error(&h1d, &q_theta)),
            fmt_f64(relative_error(&h2v, &q_v)),
            fmt_f64(relative_error(&h1s, &q_theta)),
        )
        .unwrap();
    }
    Ok(text)
}

pub fn cmd_compare(config: &Path, n_seeds: usize, out: &Path) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let cfg = RunConfig::load(config)?;
    require_bn_mlp(&cfg, "compare")?;
    let data = cfg.dataset()?;
    let net = cfg.network()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(out, "config.toml", &cfg.to_toml())?;
    let rows = compare(&net, &data, &cfg.train_config(), n_seeds)?;
    write_compare_csv(&out.join("compare.csv"), &rows)
}
