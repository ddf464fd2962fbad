//! Command-line entry point.
//!
//! Subcommands: `run` (one Monte-Carlo experiment), `sweep` (β-bias or
//! ε-privacy grids), `oracle` (stable/fixed points for a config),
//! `calibrate` (privacy noise and optimal hyperparameters), and
//! `check-bounds` (run plus bound-curve overlay).
//!
//! Exit codes: 0 success, 2 config/input error, 3 numerical failure, 4 i/o.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clipshift::bounds::{EfScvxBoundParams, ScvxBoundParams};
use clipshift::error::{Error, Result};
use clipshift::harness::{
    self, bias_sweep, emit_results, privacy_tradeoff_sweep, ExperimentConfig,
};
use clipshift::optimizers::Algorithm;
use clipshift::oracles::{
    quadratic_bias, solve_clipped_fixed_point, solve_ps_rrm, theta_inf_quadratic,
    theta_ps_quadratic, FixedPointOptions, RrmOptions,
};
use clipshift::privacy::{dp_sigma, optimal_clip_threshold, PrivacyBudget};

#[derive(Parser)]
#[command(
    name = "clipshift",
    about = "Clipped SGD under decision-dependent distributions: experiments, oracles and bound checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<u64>,
    /// Worker threads for trial-level parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Dotted-path config override, e.g. --set optimizer.clip=2.0.
    /// Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Increase log verbosity on stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV + metadata + resolved config.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Basename for output files.
        #[arg(long, default_value = "results")]
        name: String,
    },
    /// Run the sweep described by the config's [sweep] section.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sweep")]
        name: String,
    },
    /// Print stable point, clipped fixed point and bias for a config.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the values and the resolved config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the calibrated privacy noise and optimal hyperparameters.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment and overlay the matching distance-bound curve.
    CheckBounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bounds")]
        name: String,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {item:?}")))
        })
        .collect()
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut overrides = parse_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        overrides.push(("experiment.seed".into(), seed.to_string()));
    }
    if let Some(trials) = common.trials {
        overrides.push(("experiment.trials".into(), trials.to_string()));
    }
    ExperimentConfig::load(&common.config, &overrides)
}

fn install_pool(workers: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    match workers {
        None => Ok(None),
        Some(0) => Err(Error::config("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| Error::config(format!("cannot build worker pool: {e}"))),
    }
}

fn with_pool<T>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match install_pool(workers)? {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_resolved_config(config: &ExperimentConfig, dir: &std::path::Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_text(&dir.join(format!("{name}.config.toml")), &config.to_toml_string()?)
}

fn cmd_run(common: &CommonArgs, out: &PathBuf, name: &str) -> Result<()> {
    let config = load_config(common)?;
    let output = with_pool(common.workers, || harness::run_trials(&config))?;
    let files = emit_results(&output, out, name, None)?;
    if common.verbose > 0 {
        eprintln!(
            "ran {} trials x {} steps ({} diverged)",
            config.experiment.trials, config.experiment.steps, output.aggregate.diverged
        );
    }
    println!("final_mean = {}", output.aggregate.final_mean);
    println!("csv = {}", files.csv.display());
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, out: &PathBuf, name: &str) -> Result<()> {
    let config = load_config(common)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep needs a [sweep] section in the config"))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let csv_path = out.join(format!("{name}.csv"));
    match sweep.kind.as_str() {
        "bias" => {
            let rows = with_pool(common.workers, || bias_sweep(&config, &sweep.grid))?;
            let mut text =
                String::from("beta,plateau,closed_form_bias,bias_upper,stable,diverged\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.beta,
                    r.plateau.map_or(String::from("nan"), |v| v.to_string()),
                    r.closed_form_bias,
                    r.bias_upper,
                    r.stable,
                    r.diverged
                ));
            }
            write_text(&csv_path, &text)?;
        }
        "privacy" => {
            let rows = with_pool(common.workers, || privacy_tradeoff_sweep(&config, &sweep.grid))?;
            let mut text = String::from(
                "epsilon,sigma_dp,gamma_optimal,gamma_naive,final_optimal,final_naive\n",
            );
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.epsilon, r.sigma_dp, r.gamma_optimal, r.gamma_naive, r.final_optimal,
                    r.final_naive
                ));
            }
            write_text(&csv_path, &text)?;
        }
        other => {
            return Err(Error::config(format!(
                "unknown sweep.kind {other:?} (expected bias or privacy)"
            )))
        }
    }
    write_resolved_config(&config, out, name)?;
    println!("csv = {}", csv_path.display());
    Ok(())
}

fn cmd_oracle(common: &CommonArgs, out: &Option<PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let resolved = harness::resolve(&config)?;
    let mut report = serde_json::Map::new();
    match &resolved.quadratic {
        Some(inst) => {
            let ps = theta_ps_quadratic(inst)?;
            let inf = theta_inf_quadratic(inst)?;
            let bias = quadratic_bias(inst)?;
            println!("theta_ps = {ps}");
            println!("theta_inf = {inf}");
            println!("bias = {bias}");
            report.insert("theta_ps".into(), ps.into());
            report.insert("theta_inf".into(), inf.into());
            report.insert("bias".into(), bias.into());
        }
        None => {
            // No closed form: solve for the stable point and the clipped
            // fixed point numerically.
            let rrm = solve_ps_rrm(
                resolved.loss.as_ref(),
                resolved.dist.as_ref(),
                &resolved.theta0,
                &RrmOptions {
                    seed: config.experiment.seed,
                    ..Default::default()
                },
            )?;
            println!("theta_ps = {:?}", rrm.theta.as_slice());
            println!("rrm_residual = {}", rrm.residual_norm);
            report.insert(
                "theta_ps".into(),
                serde_json::to_value(rrm.theta.as_slice()).unwrap(),
            );
            report.insert("rrm_residual".into(), rrm.residual_norm.into());
            if let Some(clip) = config.optimizer.clip {
                let fp = solve_clipped_fixed_point(
                    resolved.loss.as_ref(),
                    resolved.dist.as_ref(),
                    clip,
                    &resolved.theta0,
                    &FixedPointOptions {
                        seed: config.experiment.seed,
                        ..Default::default()
                    },
                )?;
                let bias = fp.theta.dist_sq(&rrm.theta);
                println!("theta_inf = {:?}", fp.theta.as_slice());
                println!("bias = {bias}");
                report.insert(
                    "theta_inf".into(),
                    serde_json::to_value(fp.theta.as_slice()).unwrap(),
                );
                report.insert("bias".into(), bias.into());
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(
            &dir.join("oracle.json"),
            &serde_json::to_string_pretty(&report).unwrap(),
        )?;
        write_resolved_config(&resolved.config, dir, "oracle")?;
    }
    Ok(())
}

fn cmd_calibrate(common: &CommonArgs, out: &Option<PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let privacy = config
        .privacy
        .clone()
        .ok_or_else(|| Error::config("calibrate needs a [privacy] section"))?;
    let epsilon = privacy
        .epsilon
        .ok_or_else(|| Error::config("calibrate needs privacy.epsilon"))?;
    let clip = config
        .optimizer
        .clip
        .ok_or_else(|| Error::config("calibrate needs optimizer.clip"))?;
    let dim = config.experiment.theta0.len();
    let budget = PrivacyBudget::new(
        epsilon,
        privacy.delta,
        privacy.samples,
        config.experiment.steps,
        dim,
    )?;
    let sigma = dp_sigma(clip, &budget)?;
    let phi = budget.phi();
    println!("sigma_dp = {sigma}");
    println!("phi = {phi}");
    let mut report = serde_json::Map::new();
    report.insert("sigma_dp".into(), sigma.into());
    report.insert("phi".into(), phi.into());

    if let Some(grad_bound) = privacy.grad_bound {
        let cal = optimal_clip_threshold(grad_bound, privacy.samples, epsilon, privacy.delta, dim)?;
        println!("clip_star = {}", cal.threshold);
        report.insert("clip_star".into(), cal.threshold.into());

        // The optimal step size additionally needs the initial gap, hence a
        // resolvable oracle; report it when the config provides one.
        if config.oracle.kind != "none" {
            let resolved = harness::resolve(&config)?;
            if let Some(oracle) = &resolved.oracle_point {
                if resolved.mu_tilde > 0.0 && grad_bound > clip {
                    let gamma = clipshift::privacy::optimal_step_size(
                        resolved.mu_tilde,
                        config.experiment.steps,
                        clip,
                        grad_bound,
                        dim,
                        sigma,
                        resolved.theta0.dist_sq(oracle),
                    )?;
                    println!("gamma_star = {gamma}");
                    report.insert("gamma_star".into(), gamma.into());
                }
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(
            &dir.join("calibration.json"),
            &serde_json::to_string_pretty(&report).unwrap(),
        )?;
        write_resolved_config(&config, dir, "calibrate")?;
    }
    Ok(())
}

fn cmd_check_bounds(common: &CommonArgs, out: &PathBuf, name: &str) -> Result<()> {
    let config = load_config(common)?;
    let resolved = harness::resolve(&config)?;
    if !(resolved.mu_tilde > 0.0) {
        return Err(Error::config(format!(
            "bound curves need mu - L*beta > 0, got {}",
            resolved.mu_tilde
        )));
    }
    let oracle = resolved
        .oracle_point
        .clone()
        .ok_or_else(|| Error::config("bound curves need an oracle for the initial gap"))?;
    let bounds_cfg = config.bounds.clone().unwrap_or(
        clipshift::harness::config::BoundsSection {
            grad_bound: None,
            growth: None,
            e_bound: None,
            step_b: None,
            step_b_bar: None,
        },
    );

    let output = with_pool(common.workers, || harness::run_trials_resolved(&resolved))?;
    let ts: Vec<u64> = output.aggregate.points.iter().map(|p| p.t).collect();

    let curve = match config.experiment.algorithm {
        Algorithm::Pcsgd => {
            let grad_bound = bounds_cfg
                .grad_bound
                .or(resolved.grad_bound)
                .ok_or_else(|| Error::config("bound curves need a gradient bound"))?;
            let params = ScvxBoundParams {
                mu_tilde: resolved.mu_tilde,
                clip: config.optimizer.clip.unwrap_or(f64::INFINITY),
                grad_bound,
                dim: resolved.theta0.dim(),
                sigma_dp: config.optimizer.sigma_dp,
                initial_gap_sq: resolved.theta0.dist_sq(&oracle),
                schedule: resolved.optimizer.schedule.clone(),
            };
            params.curve(&ts)?
        }
        Algorithm::Dicesgd => {
            let need = |v: Option<f64>, what: &str| {
                v.ok_or_else(|| Error::config(format!("bounds.{what} is required for the error-feedback bound")))
            };
            let e_bound = match bounds_cfg.e_bound {
                Some(m) => m,
                None => output.measured.e_bound.ok_or_else(|| {
                    Error::config("no measured error bound available; set bounds.e_bound")
                })?,
            };
            let params = EfScvxBoundParams {
                mu_tilde: resolved.mu_tilde,
                grad_bound: need(bounds_cfg.grad_bound, "grad_bound")?,
                growth: need(bounds_cfg.growth, "growth")?,
                dim: resolved.theta0.dim(),
                sigma_dp: resolved.optimizer.dp_multiplier * config.optimizer.sigma_dp,
                lipschitz: resolved.lipschitz,
                beta: resolved.dist.sensitivity(),
                e_bound,
                step_b: need(bounds_cfg.step_b, "step_b")?,
                step_b_bar: need(bounds_cfg.step_b_bar, "step_b_bar")?,
                initial_dist_sq: resolved.theta0.dist_sq(&oracle),
                schedule: resolved.optimizer.schedule.clone(),
            };
            params.curve(&ts)?
        }
        Algorithm::Sgd => {
            return Err(Error::config(
                "bound curves cover the clipped algorithms; use pcsgd or dicesgd",
            ))
        }
    };

    let files = emit_results(&output, out, name, Some(&curve))?;
    println!("csv = {}", files.csv.display());
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { common, out, name } => cmd_run(common, out, name),
        Command::Sweep { common, out, name } => cmd_sweep(common, out, name),
        Command::Oracle { common, out } => cmd_oracle(common, out),
        Command::Calibrate { common, out } => cmd_calibrate(common, out),
        Command::CheckBounds { common, out, name } => cmd_check_bounds(common, out, name),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = match e.exit_code() {
                2 => "config",
                3 => "numerical",
                _ => "io",
            };
            eprintln!("error[{category}]: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
