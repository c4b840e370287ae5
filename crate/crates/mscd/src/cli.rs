//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use mscd_core::detectors::{DetectorConfig, LcshConfig, Scheme, Setting};
use mscd_core::dp::{
    default_threshold_candidates, value_iterate, DpInformation, DpPolicy, SimplexGrid, ValueIterationOptions,
};
use mscd_core::model::{DensityPair, ModelParams};
use mscd_core::quantizer::{induced_pmfs, kl_pmf, optimize_thresholds, QuantizerSpec};
use mscd_core::stats::beta_for_alpha;

use crate::config::{keys_help, ConfigError, ExperimentConfig, LcshSection};
use crate::harness::{
    calibrate_delta, run_trial_multi, simulate_dp_risk, sweep_alpha, DpChannel, RunOptions, TraceStep, TrialSpec,
};
use crate::io::{read_value_table, write_tradeoff_csv, write_value_table, CurveKey, TraceWriter, TradeoffRow};

#[derive(Debug, Parser)]
#[command(name = "mscd", version, about = "Multi-sensor sequential change detection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file; CSV goes to stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<String>,
    /// Comma-separated false-alarm levels.
    #[arg(long, global = true, value_name = "A,B,...")]
    pub alpha: Option<String>,
    /// Override any configuration key, e.g. `--set lcsh.delta=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Trace ADD-vs-PFA curves over the alpha grid.
    Sweep,
    /// Find the LCSH level spacing that meets the target rate.
    CalibrateDelta,
    /// Maximize the K-L divergence of the induced message pmfs.
    OptimizeQuantizer,
    /// Solve the small-network dynamic program and export its value table.
    DpOffline,
    /// Trace one seeded trial slot by slot.
    SimulateOne,
}

/// Failure classes with their exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

/// Parses the process arguments with the key listing attached to `--help`.
pub fn parse_args() -> Cli {
    let matches = Cli::command().after_help(keys_help()).get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

impl Cli {
    /// Overrides in application order: `--set` first, then dedicated flags.
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(t) = self.trials {
            o.push(format!("trials={t}"));
        }
        if let Some(w) = self.workers {
            o.push(format!("workers={w}"));
        }
        if let Some(p) = &self.out {
            o.push(format!("out={}", toml::Value::String(p.clone())));
        }
        if let Some(a) = &self.alpha {
            o.push(format!("alpha=[{a}]"));
        }
        o
    }

    pub fn load_config(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides())
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.load_config()?;
    match cli.command {
        Command::Sweep => cmd_sweep(&cfg)?,
        Command::CalibrateDelta => cmd_calibrate_delta(&cfg)?,
        Command::OptimizeQuantizer => cmd_optimize_quantizer(&cfg)?,
        Command::DpOffline => cmd_dp_offline(&cfg)?,
        Command::SimulateOne => cmd_simulate_one(&cfg)?,
    }
    Ok(())
}

/// CSV sink and the stream that carries human-readable reports: stdout
/// when the CSV goes to a file, stderr otherwise.
fn sinks(cfg: &ExperimentConfig) -> Result<(Box<dyn Write>, Box<dyn Write>)> {
    Ok(match &cfg.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {p}"))?;
            (Box::new(BufWriter::new(f)), Box::new(io::stdout()))
        }
        None => (Box::new(io::stdout().lock()), Box::new(io::stderr())),
    })
}

fn run_options(cfg: &ExperimentConfig) -> RunOptions {
    RunOptions {
        trials: cfg.trials,
        seed: cfg.seed,
        workers: cfg.workers,
    }
}

fn densities(cfg: &ExperimentConfig) -> Result<DensityPair> {
    Ok(DensityPair::gaussian_shift(cfg.mu)?)
}

fn quantizer(cfg: &ExperimentConfig) -> Result<QuantizerSpec> {
    let d = densities(cfg)?;
    Ok(match &cfg.threshold {
        Some(t) => QuantizerSpec::from_observation_thresholds(t, &d)?,
        None => optimize_thresholds(cfg.alphabet, &d)?,
    })
}

fn lcsh_config(cfg: &ExperimentConfig, delta: f64) -> Result<LcshConfig> {
    let mut c = LcshConfig::new(delta);
    c.eps = cfg.lcsh.eps;
    if let Some(e) = cfg.lcsh.eps_cusum {
        c.eps_cusum = e;
    }
    c.mode = cfg.lcsh.ratio_mode()?;
    Ok(c)
}

/// Trial spec for one curve, calibrating the LCSH spacing when it is not
/// fixed in the configuration. Returns the spacing used, if any.
fn curve_spec(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    setting: Setting,
    lambda: f64,
    quantizer: Option<&QuantizerSpec>,
) -> Result<(TrialSpec, Option<f64>)> {
    let params = ModelParams::new(cfg.sensors, cfg.rho, lambda, densities(cfg)?)?;
    let mut det = DetectorConfig::new(scheme, setting, 0.0);
    det.xi = cfg.xi;
    if setting == Setting::Us {
        det.quantizer = quantizer.cloned();
    }
    let mut spec = TrialSpec::new(params, det);
    if let Some(h) = cfg.horizon {
        spec.horizon = h;
    }
    if setting != Setting::Lcsh {
        return Ok((spec, None));
    }
    let delta = match cfg.lcsh.delta {
        Some(d) => d,
        None => calibrate(cfg, &spec)?.0,
    };
    spec.detector.lcsh = Some(lcsh_config(cfg, delta)?);
    Ok((spec, Some(delta)))
}

/// Calibrates at the threshold of `lcsh.calibration_alpha`.
fn calibrate(cfg: &ExperimentConfig, spec: &TrialSpec) -> Result<(f64, f64, usize)> {
    let mut s = spec.clone();
    s.detector.setting = Setting::Lcsh;
    s.detector.beta = beta_for_alpha(cfg.rho, cfg.lcsh.calibration_alpha)?;
    s.detector.lcsh = Some(lcsh_config(cfg, 1.0)?);
    let c = calibrate_delta(&s, cfg.lcsh.target_rate, cfg.lcsh.rate_tol, &run_options(cfg))?;
    Ok((c.delta, c.rate, c.evaluations))
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let q = cfg.setting.contains(&Setting::Us).then(|| quantizer(cfg)).transpose()?;
    let mut rows = Vec::new();
    for &lambda in &cfg.lambda {
        for &scheme in &cfg.scheme {
            for &setting in &cfg.setting {
                let (spec, delta) = curve_spec(cfg, scheme, setting, lambda, q.as_ref())?;
                let points = sweep_alpha(&spec, &cfg.alpha, &run_options(cfg))
                    .with_context(|| format!("{scheme}/{setting} at lambda={lambda}"))?;
                let key = CurveKey {
                    scheme,
                    setting,
                    sensors: cfg.sensors,
                    rho: cfg.rho,
                    lambda,
                    mu: cfg.mu,
                    delta,
                    seed: cfg.seed,
                };
                rows.extend(points.iter().map(|p| TradeoffRow::new(&key, p)));
            }
        }
    }
    let (mut csv, mut report) = sinks(cfg)?;
    write_tradeoff_csv(&mut csv, &rows)?;
    csv.flush()?;
    summary_table(&mut report, &rows)?;
    Ok(())
}

fn summary_table(w: &mut dyn Write, rows: &[TradeoffRow]) -> io::Result<()> {
    writeln!(
        w,
        "{:<18} {:<12} {:>7} {:>9} {:>16} {:>16} {:>8} {:>5}",
        "scheme", "setting", "lambda", "alpha", "pfa", "add", "rate", "cens"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:<18} {:<12} {:>7} {:>9.2e} {:>16} {:>16} {:>8.3} {:>5}",
            r.scheme,
            r.setting,
            r.lambda,
            r.alpha,
            format!("{:.4} ± {:.4}", r.pfa, r.pfa_ci),
            format!("{:.3} ± {:.3}", r.add, r.add_ci),
            r.comm_rate,
            r.censored
        )?;
    }
    w.flush()
}

pub fn cmd_calibrate_delta(cfg: &ExperimentConfig) -> Result<()> {
    let (spec, _) = curve_spec(
        &ExperimentConfig {
            lcsh: LcshSection {
                delta: Some(1.0),
                ..cfg.lcsh.clone()
            },
            ..cfg.clone()
        },
        cfg.scheme[0],
        Setting::Lcsh,
        cfg.lambda[0],
        None,
    )?;
    let (delta, rate, evaluations) = calibrate(cfg, &spec)?;
    let mut out = io::stdout();
    writeln!(out, "scheme = {}", cfg.scheme[0])?;
    writeln!(out, "lambda = {}", cfg.lambda[0])?;
    writeln!(out, "target_rate = {}", cfg.lcsh.target_rate)?;
    writeln!(out, "delta = {delta}")?;
    writeln!(out, "rate = {rate}")?;
    writeln!(out, "evaluations = {evaluations}")?;
    Ok(())
}

pub fn cmd_optimize_quantizer(cfg: &ExperimentConfig) -> Result<()> {
    let d = densities(cfg)?;
    let q = optimize_thresholds(cfg.alphabet, &d)?;
    let kl = kl_pmf(&induced_pmfs(&q, &d)?)?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    let mut out = io::stdout();
    writeln!(out, "alphabet = {}", cfg.alphabet)?;
    writeln!(out, "lr_thresholds = {}", join(q.lr_thresholds()))?;
    writeln!(out, "observation_thresholds = {}", join(&q.observation_thresholds(&d)))?;
    writeln!(out, "kl = {kl:.6}")?;
    writeln!(out, "kl_continuous = {:.6}", d.kl())?;
    Ok(())
}

pub fn cmd_dp_offline(cfg: &ExperimentConfig) -> Result<()> {
    let dp = &cfg.dp;
    let d = densities(cfg)?;
    let params = ModelParams::new(dp.sensors, dp.rho, dp.lambda, d)?;
    let centralized = dp.centralized()?;
    let table = match &dp.table {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("cannot open {path}"))?;
            let mut t = read_value_table(f).with_context(|| format!("reading {path}"))?;
            t.grid = t.grid.clone().with_lookup(dp.lookup_mode()?);
            t
        }
        None => {
            let grid = SimplexGrid::new(dp.sensors, dp.resolution)?.with_lookup(dp.lookup_mode()?);
            let info = if centralized {
                DpInformation::Centralized {
                    samples: dp.samples,
                    seed: cfg.seed,
                }
            } else {
                DpInformation::Decentralized {
                    candidates: default_threshold_candidates(&d),
                }
            };
            let mut opts = ValueIterationOptions::new(dp.cost, dp.epsilon);
            opts.max_iterations = dp.max_iterations;
            value_iterate(&params, &grid, &info, &opts)?
        }
    };
    let mut vertex = vec![0u32; dp.sensors + 1];
    vertex[0] = table.grid.resolution() as u32;
    let j0 = table.j[table.grid.position(&vertex).expect("vertex is on the grid")];
    let (mut csv, mut report) = sinks(cfg)?;
    write_value_table(&mut csv, &table)?;
    csv.flush()?;
    if dp.table.is_none() {
        writeln!(report, "iterations = {}", table.iterations)?;
        writeln!(report, "gap = {:e}", table.gap)?;
    }
    writeln!(report, "grid_points = {}", table.grid.len())?;
    writeln!(report, "J_vertex = {j0}")?;
    if dp.risk_trials > 0 {
        let policy = DpPolicy::new(table, &params, dp.cost)?;
        let channel = if centralized {
            DpChannel::Centralized
        } else {
            DpChannel::Quantized
        };
        let opts = RunOptions {
            trials: dp.risk_trials,
            ..run_options(cfg)
        };
        let r = simulate_dp_risk(&policy, &params, dp.cost, channel, dp.process_kind()?, &opts)?;
        writeln!(report, "risk = {} ± {}", r.risk, r.ci)?;
        writeln!(report, "pfa = {}", r.pfa)?;
        writeln!(report, "add = {}", r.add)?;
        writeln!(report, "censored = {}", r.censored)?;
    }
    report.flush()?;
    Ok(())
}

pub fn cmd_simulate_one(cfg: &ExperimentConfig) -> Result<()> {
    let (scheme, setting, lambda) = (cfg.scheme[0], cfg.setting[0], cfg.lambda[0]);
    let q = (setting == Setting::Us).then(|| quantizer(cfg)).transpose()?;
    let (spec, delta) = curve_spec(cfg, scheme, setting, lambda, q.as_ref())?;
    let beta = beta_for_alpha(cfg.rho, cfg.alpha[0])?;
    let (mut csv, mut report) = sinks(cfg)?;
    let mut writer = TraceWriter::new(&mut csv, scheme, setting)?;
    let mut failure = None;
    let mut trace = |step: &TraceStep| {
        if failure.is_none() {
            failure = writer.write(step).err();
        }
    };
    let result = run_trial_multi(&spec, &[beta], cfg.seed, cfg.trial, Some(&mut trace))?[0];
    if let Some(e) = failure {
        return Err(e.into());
    }
    writer.finish()?;
    csv.flush()?;
    writeln!(report, "beta = {beta}")?;
    if let Some(d) = delta {
        writeln!(report, "delta = {d}")?;
    }
    writeln!(report, "gamma1 = {}", result.gamma1)?;
    writeln!(report, "tau = {}", result.tau)?;
    writeln!(report, "censored = {}", result.censored)?;
    writeln!(report, "false_alarm = {}", result.false_alarm)?;
    writeln!(report, "delay = {}", result.delay)?;
    report.flush()?;
    Ok(())
}
