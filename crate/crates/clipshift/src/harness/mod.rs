//! Monte-Carlo experiment orchestration: resolving a config into concrete
//! loss/distribution/optimizer objects, running independent trials in
//! parallel, aggregating trajectories, fitting decay rates, parameter
//! sweeps, and CSV/JSON emission.
//!
//! Determinism contract: trial i draws from a stream keyed by
//! (seed, trial i), and aggregation reduces in trial order, so (config,
//! seed) fully determines every output byte no matter how many workers run
//! the trials. Sweeps reuse the same trial seeds row by row, which makes
//! row comparisons paired (common random numbers).

pub mod config;
mod synth;

pub use config::ExperimentConfig;
pub use synth::SyntheticCredit;

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{
    scalar_linear_shift, BernoulliLinearShift, DecisionDistribution, FiniteDatabase,
    StrategicFeatureShift, TwoPointWeightShift,
};
use crate::error::{Error, Result};
use crate::losses::{
    BoundedNonconvexLoss, Loss, QuadraticScalarLoss, RegularizedLogisticLoss, Sample,
};
use crate::optimizers::{
    run_trajectory, Algorithm, ClipRule, OptimizerConfig, RecordSpec, TrialResult,
};
use crate::oracles::{
    solve_ps_rrm, theta_ps_quadratic, QuadraticInstance, RrmOptions,
};
use crate::privacy::{dp_sigma, optimal_step_size, PrivacyBudget};
use crate::rng::TrialRng;
use crate::schedule::StepSchedule;
use crate::vector::{BoxRegion, ParamVector};

// ---------------------------------------------------------------------------
// Resolution: config -> concrete objects
// ---------------------------------------------------------------------------

/// A config resolved into runnable objects, with derived constants recorded.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub loss: Arc<dyn Loss>,
    pub dist: Arc<dyn DecisionDistribution>,
    pub optimizer: OptimizerConfig,
    pub theta0: ParamVector,
    pub oracle_point: Option<ParamVector>,
    /// Strong convexity modulus μ of the loss.
    pub mu: f64,
    /// Joint Lipschitz constant L (NaN when unknown and not needed).
    pub lipschitz: f64,
    /// μ̃ = μ − Lβ.
    pub mu_tilde: f64,
    /// Gradient bound over the box for the quadratic family, or the value
    /// supplied via the schedule/privacy sections.
    pub grad_bound: Option<f64>,
    /// The quadratic instance, when the experiment is the scalar family.
    pub quadratic: Option<QuadraticInstance>,
}

impl std::fmt::Debug for Resolved {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolved")
            .field("algorithm", &self.config.experiment.algorithm)
            .field("mu", &self.mu)
            .field("lipschitz", &self.lipschitz)
            .field("mu_tilde", &self.mu_tilde)
            .field("grad_bound", &self.grad_bound)
            .field("oracle_point", &self.oracle_point)
            .finish_non_exhaustive()
    }
}

fn require<T: Copy>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(format!("missing required field {what}")))
}

fn forbid<T>(value: &Option<T>, what: &str, context: &str) -> Result<()> {
    if value.is_some() {
        return Err(Error::config(format!("{what} is not used by {context}")));
    }
    Ok(())
}

/// Gradient bound for the scalar quadratic family over a symmetric box of
/// the given radius: sup over corners and both Bernoulli atoms of
/// |(1 − aβ)θ + a·b·z̃|.
pub fn quadratic_grad_bound(inst: &QuadraticInstance, radius: f64) -> f64 {
    let slope = 1.0 - inst.a * inst.beta;
    let mut best = 0.0f64;
    for theta in [-radius, radius] {
        for z in [0.0, 1.0] {
            best = best.max((slope * theta + inst.a * inst.b * z).abs());
        }
    }
    best
}

/// Resolves a config. All validation that can fail does so here, before any
/// trial runs.
pub fn resolve(config: &ExperimentConfig) -> Result<Resolved> {
    let mut config = config.clone();
    let dim = config.experiment.theta0.len();
    let theta0 = ParamVector::new(config.experiment.theta0.clone())
        .map_err(|e| Error::config(format!("experiment.theta0: {e}")))?;

    // Distribution first: the logistic default for eta needs the dataset
    // size, and database-backed losses need the records.
    let dist_section = config.distribution.clone();
    let mut database: Option<Arc<FiniteDatabase>> = None;
    let mut db_size: Option<u64> = None;
    let dist: Arc<dyn DecisionDistribution> = match dist_section.kind.as_str() {
        "bernoulli_shift" => {
            let p = require(dist_section.p, "distribution.p")?;
            let b = require(dist_section.b, "distribution.b")?;
            let beta = require(dist_section.beta, "distribution.beta")?;
            Arc::new(BernoulliLinearShift::new(p, b, beta)?)
        }
        "weight_shift" => {
            let z_low = require(dist_section.z_low, "distribution.z_low")?;
            let z_high = require(dist_section.z_high, "distribution.z_high")?;
            let p0 = require(dist_section.p0, "distribution.p0")?;
            let slope = require(dist_section.slope, "distribution.slope")?;
            Arc::new(TwoPointWeightShift::new(z_low, z_high, p0, slope)?)
        }
        "synthetic_credit" => {
            let m = require(dist_section.m, "distribution.m")?;
            let d = require(dist_section.dim, "distribution.dim")?;
            let beta = require(dist_section.beta, "distribution.beta")?;
            let generator = SyntheticCredit {
                m,
                dim: d,
                positive_rate: dist_section.positive_rate.unwrap_or(0.066),
                feature_scale: dist_section.feature_scale.unwrap_or(1.0),
                separation: dist_section.separation.unwrap_or(2.0),
                seed: dist_section.data_seed.unwrap_or(config.experiment.seed),
            };
            config.distribution.positive_rate = Some(generator.positive_rate);
            config.distribution.feature_scale = Some(generator.feature_scale);
            config.distribution.separation = Some(generator.separation);
            config.distribution.data_seed = Some(generator.seed);
            let db = Arc::new(generator.generate()?);
            db_size = Some(db.len() as u64);
            database = Some(db.clone());
            Arc::new(StrategicFeatureShift::new(db, beta)?)
        }
        "csv" => {
            let path = dist_section
                .path
                .as_deref()
                .ok_or_else(|| Error::config("missing required field distribution.path"))?;
            let beta = require(dist_section.beta, "distribution.beta")?;
            let db = Arc::new(FiniteDatabase::from_csv(std::path::Path::new(path))?);
            db_size = Some(db.len() as u64);
            let labeled = matches!(db.records()[0], Sample::Labeled { .. });
            database = Some(db.clone());
            if labeled {
                Arc::new(StrategicFeatureShift::new(db, beta)?)
            } else {
                Arc::new(scalar_linear_shift(db, beta)?)
            }
        }
        other => {
            return Err(Error::config(format!(
                "unknown distribution.kind {other:?} (expected bernoulli_shift, weight_shift, synthetic_credit or csv)"
            )))
        }
    };

    let loss: Arc<dyn Loss> = match config.loss.kind.as_str() {
        "quadratic" => {
            forbid(&config.loss.eta, "loss.eta", "the quadratic loss")?;
            let a = require(config.loss.a, "loss.a")?;
            Arc::new(QuadraticScalarLoss::new(a)?)
        }
        "logistic" => {
            forbid(&config.loss.a, "loss.a", "the logistic loss")?;
            let eta = match config.loss.eta {
                Some(eta) => eta,
                None => {
                    let m = db_size.ok_or_else(|| {
                        Error::config(
                            "loss.eta must be given explicitly when the distribution has no database",
                        )
                    })?;
                    100.0 / m as f64
                }
            };
            config.loss.eta = Some(eta);
            // Data-dependent curvature bound: eta + max ||x||^2 / 2.
            let lipschitz = database
                .as_ref()
                .map(|db| {
                    let max_sq = db
                        .records()
                        .iter()
                        .map(|r| match r {
                            Sample::Labeled { x, .. } => x.iter().map(|v| v * v).sum::<f64>(),
                            Sample::Point(_) => 0.0,
                        })
                        .fold(0.0f64, f64::max);
                    eta + 0.5 * max_sq
                })
                .unwrap_or(f64::NAN);
            Arc::new(RegularizedLogisticLoss::new(eta, dim)?.with_lipschitz(lipschitz))
        }
        "bounded_nonconvex" => {
            forbid(&config.loss.a, "loss.a", "the bounded non-convex loss")?;
            forbid(&config.loss.eta, "loss.eta", "the bounded non-convex loss")?;
            Arc::new(BoundedNonconvexLoss::new())
        }
        other => {
            return Err(Error::config(format!(
                "unknown loss.kind {other:?} (expected quadratic, logistic or bounded_nonconvex)"
            )))
        }
    };
    if loss.dim() != dim {
        return Err(Error::config(format!(
            "theta0 has dimension {dim} but the loss expects {}",
            loss.dim()
        )));
    }

    let mu = loss.constants().mu;
    let lipschitz = loss.constants().lipschitz;
    let mu_tilde = mu - lipschitz * dist.sensitivity();

    let quadratic = match (config.loss.kind.as_str(), config.distribution.kind.as_str()) {
        ("quadratic", "bernoulli_shift") => Some(QuadraticInstance::new(
            config.distribution.p.unwrap(),
            config.loss.a.unwrap(),
            config.distribution.b.unwrap(),
            config.distribution.beta.unwrap(),
            config.optimizer.clip.unwrap_or(1.0),
        )?),
        _ => None,
    };

    let region = match (config.optimizer.lower, config.optimizer.upper) {
        (Some(lo), Some(hi)) => BoxRegion::new(vec![lo; dim], vec![hi; dim])?,
        _ => BoxRegion::unbounded(),
    };

    // Oracle before the schedule: the optimal step size needs the gap.
    let oracle_point = match config.oracle.kind.as_str() {
        "none" => None,
        "closed_form" => {
            let inst = quadratic.as_ref().ok_or_else(|| {
                Error::config(
                    "oracle.kind = \"closed_form\" needs the quadratic loss with the bernoulli_shift distribution",
                )
            })?;
            Some(ParamVector::scalar(theta_ps_quadratic(inst)?)?)
        }
        "rrm" => {
            let opts = RrmOptions {
                tol: config.oracle.tol.unwrap_or(1e-10),
                seed: config.experiment.seed,
                ..Default::default()
            };
            let sol = solve_ps_rrm(loss.as_ref(), dist.as_ref(), &theta0, &opts)?;
            Some(sol.theta)
        }
        other => {
            return Err(Error::config(format!(
                "unknown oracle.kind {other:?} (expected none, closed_form or rrm)"
            )))
        }
    };

    let grad_bound = config
        .optimizer
        .schedule
        .grad_bound
        .or_else(|| config.privacy.as_ref().and_then(|p| p.grad_bound))
        .or_else(|| {
            quadratic.as_ref().and_then(|inst| {
                region
                    .bounds()
                    .map(|(lo, hi)| quadratic_grad_bound(inst, hi[0].abs().max(lo[0].abs())))
            })
        });

    let schedule = match config.optimizer.schedule.kind.as_str() {
        "constant" => {
            let gamma = require(config.optimizer.schedule.gamma, "optimizer.schedule.gamma")?;
            StepSchedule::constant(gamma)?
        }
        "polynomial" => {
            let a0 = require(config.optimizer.schedule.a0, "optimizer.schedule.a0")?;
            let a1 = require(config.optimizer.schedule.a1, "optimizer.schedule.a1")?;
            StepSchedule::polynomial(a0, a1)?
        }
        "optimal" => {
            let g = grad_bound.ok_or_else(|| {
                Error::config(
                    "optimizer.schedule.grad_bound is required for the optimal step size",
                )
            })?;
            let oracle = oracle_point.as_ref().ok_or_else(|| {
                Error::config("the optimal step size needs an oracle for the initial gap")
            })?;
            let clip = require(config.optimizer.clip, "optimizer.clip")?;
            if !(mu_tilde > 0.0) {
                return Err(Error::config(format!(
                    "the optimal step size needs mu - L*beta > 0, got {mu_tilde}"
                )));
            }
            StepSchedule::theoretical_optimal(
                mu_tilde,
                config.experiment.steps,
                clip,
                g,
                dim,
                config.optimizer.sigma_dp,
                theta0.dist_sq(oracle),
            )?
        }
        other => {
            return Err(Error::config(format!(
                "unknown optimizer.schedule.kind {other:?} (expected constant, polynomial or optimal)"
            )))
        }
    };

    let clip_rule = match config.experiment.algorithm {
        Algorithm::Sgd => {
            forbid(&config.optimizer.clip, "optimizer.clip", "plain sgd")?;
            forbid(&config.optimizer.error_clip, "optimizer.error_clip", "plain sgd")?;
            ClipRule::None
        }
        Algorithm::Pcsgd => {
            forbid(
                &config.optimizer.error_clip,
                "optimizer.error_clip",
                "the singly clipped algorithm",
            )?;
            ClipRule::Threshold(require(config.optimizer.clip, "optimizer.clip")?)
        }
        Algorithm::Dicesgd => {
            let c1 = require(config.optimizer.clip, "optimizer.clip")?;
            let c2 = config.optimizer.error_clip.unwrap_or(c1);
            config.optimizer.error_clip = Some(c2);
            ClipRule::Double { grad: c1, error: c2 }
        }
    };

    let mut optimizer = OptimizerConfig::new(
        schedule,
        clip_rule,
        config.optimizer.sigma_dp,
        region,
    )?;
    if let Some(mult) = config.optimizer.dp_multiplier {
        optimizer = optimizer.with_dp_multiplier(mult)?;
    }
    config.optimizer.dp_multiplier = Some(optimizer.dp_multiplier);

    Ok(Resolved {
        config,
        loss,
        dist,
        optimizer,
        theta0,
        oracle_point,
        mu,
        lipschitz,
        mu_tilde,
        grad_bound,
        quadratic,
    })
}

// ---------------------------------------------------------------------------
// Trials and aggregation
// ---------------------------------------------------------------------------

/// One aggregated trajectory point across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggPoint {
    pub t: u64,
    pub mean: f64,
    pub stderr: f64,
    /// Number of (non-diverged) trials contributing.
    pub n: u64,
    pub e_norm_sq_mean: Option<f64>,
}

/// Monte-Carlo aggregate of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    pub points: Vec<AggPoint>,
    /// Mean over trials of the final-iterate metric.
    pub final_mean: f64,
    /// Standard error of `final_mean`.
    pub final_stderr: f64,
    pub diverged: u64,
}

/// Constants measured along the runs and reported in output metadata.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeasuredConstants {
    /// Largest stochastic-gradient norm observed across all trials.
    pub grad_bound: f64,
    /// Exact gradient variance at probe points (initial point and oracle),
    /// when the support is enumerable: a measured σ₀², with σ₁ = 0.
    pub sigma0_sq: Option<f64>,
    pub sigma1: f64,
    /// Largest ‖e_t‖ observed, with a 2x safety factor applied: a measured
    /// stand-in for the error-accumulator bound M.
    pub e_bound: Option<f64>,
}

/// Everything an experiment run produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub aggregate: AggregateMetrics,
    pub measured: MeasuredConstants,
    /// Final iterate of each trial, `None` for diverged trials.
    #[serde(skip)]
    pub final_thetas: Vec<Option<ParamVector>>,
}

fn trial_metric(
    resolved: &Resolved,
    theta: &ParamVector,
) -> Result<f64> {
    match &resolved.oracle_point {
        Some(oracle) => Ok(theta.dist_sq(oracle)),
        None => {
            let g = crate::distributions::expected_gradient(
                resolved.dist.as_ref(),
                resolved.loss.as_ref(),
                theta,
            )?;
            Ok(g.iter().map(|v| v * v).sum())
        }
    }
}

fn gradient_variance_at(resolved: &Resolved, theta: &ParamVector) -> Option<f64> {
    let support = resolved.dist.support(theta)?;
    let d = resolved.loss.dim();
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    let mut grad = vec![0.0; d];
    for (z, p) in &support {
        resolved.loss.grad_into(theta.as_slice(), z, &mut grad);
        second += p * grad.iter().map(|g| g * g).sum::<f64>();
        for (m, g) in mean.iter_mut().zip(grad.iter()) {
            *m += p * g;
        }
    }
    Some((second - mean.iter().map(|m| m * m).sum::<f64>()).max(0.0))
}

/// Runs `trials` independent trajectories (in parallel when a rayon pool is
/// active) and aggregates them. Deterministic for a fixed (config, seed)
/// regardless of worker count.
pub fn run_trials(config: &ExperimentConfig) -> Result<RunOutput> {
    let resolved = resolve(config)?;
    run_trials_resolved(&resolved)
}

/// As [`run_trials`], reusing an existing resolution.
pub fn run_trials_resolved(resolved: &Resolved) -> Result<RunOutput> {
    let config = &resolved.config;
    let mut spec = RecordSpec::every(config.experiment.thin);
    match &resolved.oracle_point {
        Some(oracle) => spec = spec.with_oracle(oracle.clone()),
        None => spec = spec.with_grad_norm(),
    }
    // Fail early if the stationarity metric is requested but unavailable.
    if spec.grad_norm && resolved.dist.support(&resolved.theta0).is_none() {
        return Err(Error::config(
            "recording the stationarity measure needs an enumerable distribution; supply an oracle instead",
        ));
    }

    let trials: Vec<(TrialResult, Option<f64>)> = (0..config.experiment.trials)
        .into_par_iter()
        .map(|trial| -> Result<(TrialResult, Option<f64>)> {
            let mut rng = TrialRng::new(config.experiment.seed, trial);
            let result = run_trajectory(
                config.experiment.algorithm,
                &resolved.optimizer,
                resolved.loss.as_ref(),
                resolved.dist.as_ref(),
                &resolved.theta0,
                config.experiment.steps,
                &mut rng,
                &spec,
            )?;
            let final_metric = if result.diverged_at.is_none() {
                Some(trial_metric(resolved, &result.final_theta)?)
            } else {
                None
            };
            Ok((result, final_metric))
        })
        .collect::<Result<_>>()?;

    let aggregate = aggregate_trials(&trials)?;

    let mut grad_bound_seen: f64 = 0.0;
    let mut e_norm_seen: Option<f64> = None;
    for (trial, _) in &trials {
        grad_bound_seen = grad_bound_seen.max(trial.max_grad_norm);
        if let Some(e) = trial.max_e_norm {
            e_norm_seen = Some(e_norm_seen.unwrap_or(0.0).max(e));
        }
    }
    let sigma0_sq = {
        let mut probes = vec![gradient_variance_at(resolved, &resolved.theta0)];
        if let Some(oracle) = &resolved.oracle_point {
            probes.push(gradient_variance_at(resolved, oracle));
        }
        probes.into_iter().flatten().fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        })
    };

    let final_thetas = trials
        .iter()
        .map(|(t, _)| t.diverged_at.is_none().then(|| t.final_theta.clone()))
        .collect();
    Ok(RunOutput {
        config: config.clone(),
        aggregate,
        measured: MeasuredConstants {
            grad_bound: grad_bound_seen,
            sigma0_sq,
            sigma1: 0.0,
            e_bound: e_norm_seen.map(|m| 2.0 * m),
        },
        final_thetas,
    })
}

fn aggregate_trials(trials: &[(TrialResult, Option<f64>)]) -> Result<AggregateMetrics> {
    let survivors: Vec<&(TrialResult, Option<f64>)> =
        trials.iter().filter(|(t, _)| t.diverged_at.is_none()).collect();
    let diverged = (trials.len() - survivors.len()) as u64;
    if survivors.is_empty() {
        return Err(Error::Numerical {
            step: 0,
            message: "every trial diverged; nothing to aggregate".into(),
        });
    }
    let len = survivors[0].0.series.len();
    let n = survivors.len() as f64;
    let mut points = Vec::with_capacity(len);
    for j in 0..len {
        let t = survivors[0].0.series[j].t;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut e_sum = 0.0;
        let mut has_e = true;
        for (trial, _) in &survivors {
            let point = &trial.series[j];
            debug_assert_eq!(point.t, t);
            let value = point
                .dist_sq
                .or(point.grad_norm_sq)
                .ok_or_else(|| Error::config("recorded series carries no metric"))?;
            sum += value;
            sum_sq += value * value;
            match point.e_norm_sq {
                Some(e) => e_sum += e,
                None => has_e = false,
            }
        }
        let mean = sum / n;
        let var = ((sum_sq / n) - mean * mean).max(0.0);
        let stderr = if survivors.len() > 1 {
            (var / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        points.push(AggPoint {
            t,
            mean,
            stderr,
            n: survivors.len() as u64,
            e_norm_sq_mean: has_e.then_some(e_sum / n),
        });
    }

    let finals: Vec<f64> = survivors.iter().filter_map(|(_, m)| *m).collect();
    let final_mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let final_var = (finals.iter().map(|v| (v - final_mean) * (v - final_mean)).sum::<f64>()
        / finals.len() as f64)
        .max(0.0);
    let final_stderr = if finals.len() > 1 {
        (final_var / (finals.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };

    Ok(AggregateMetrics {
        points,
        final_mean,
        final_stderr,
        diverged,
    })
}

// ---------------------------------------------------------------------------
// Rate fitting and plateau estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Least-squares slope of log(value) against log(t).
    pub slope: f64,
    pub stderr: f64,
}

/// Fits the decay exponent of a positive series over the final
/// `tail_fraction` of its points (t = 0 entries are skipped). Needs at least
/// 10 tail points; nonpositive values in the window are a fit error, which
/// usually means the series has plateaued and a bias test is the right tool.
pub fn fit_decay_exponent(series: &[(u64, f64)], tail_fraction: f64) -> Result<DecayFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::invalid("tail_fraction must lie in (0, 1]"));
    }
    let positive_t: Vec<(u64, f64)> = series.iter().copied().filter(|(t, _)| *t > 0).collect();
    let take = ((positive_t.len() as f64) * tail_fraction).ceil() as usize;
    let window = &positive_t[positive_t.len().saturating_sub(take)..];
    if window.len() < 10 {
        return Err(Error::Precondition(format!(
            "need at least 10 tail points for a rate fit, got {}",
            window.len()
        )));
    }
    if let Some((t, v)) = window.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Numerical {
            step: *t,
            message: format!("nonpositive value {v} in the fit window"),
        });
    }
    let n = window.len() as f64;
    let xs: Vec<f64> = window.iter().map(|(t, _)| (*t as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|(_, v)| v.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::Precondition("degenerate fit window (single t)".into()));
    }
    let slope = sxy / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| {
            let fit = y_mean + slope * (x - x_mean);
            (y - fit) * (y - fit)
        })
        .sum();
    let stderr = if n > 2.0 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(DecayFit { slope, stderr })
}

/// Plateau estimate: the mean of the final 10% of recorded aggregate points.
pub fn plateau(points: &[AggPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Precondition("no recorded points".into()));
    }
    let take = ((points.len() as f64) * 0.1).ceil().max(1.0) as usize;
    let window = &points[points.len() - take..];
    Ok(window.iter().map(|p| p.mean).sum::<f64>() / window.len() as f64)
}

/// The (t, mean) view of an aggregate, for rate fitting.
pub fn mean_series(metrics: &AggregateMetrics) -> Vec<(u64, f64)> {
    metrics.points.iter().map(|p| (p.t, p.mean)).collect()
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One row of the bias-amplification sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BiasRow {
    pub beta: f64,
    /// Empirical plateau of the mean squared distance; absent for rows
    /// flagged unstable.
    pub plateau: Option<f64>,
    pub closed_form_bias: f64,
    pub bias_upper: f64,
    /// False when β ≥ μ/L and the row was skipped.
    pub stable: bool,
    pub diverged: u64,
}

/// Runs the clipped algorithm with σ_DP = 0 across a β grid, pairing the
/// empirical plateau with the closed-form bias and its upper level.
pub fn bias_sweep(base: &ExperimentConfig, betas: &[f64]) -> Result<Vec<BiasRow>> {
    if base.experiment.algorithm != Algorithm::Pcsgd {
        return Err(Error::config("the bias sweep runs the clipped algorithm (pcsgd)"));
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut config = base.clone();
        config.distribution.beta = Some(beta);
        config.optimizer.sigma_dp = 0.0;
        let resolved = resolve(&config)?;
        let inst = resolved.quadratic.as_ref().ok_or_else(|| {
            Error::config("the bias sweep needs the quadratic/bernoulli experiment")
        })?;
        let closed_form_bias = crate::oracles::quadratic_bias(inst)?;
        if resolved.mu_tilde <= 0.0 {
            rows.push(BiasRow {
                beta,
                plateau: None,
                closed_form_bias,
                bias_upper: f64::INFINITY,
                stable: false,
                diverged: 0,
            });
            continue;
        }
        let grad_bound = resolved.grad_bound.ok_or_else(|| {
            Error::config("the bias sweep needs a gradient bound (bounded region)")
        })?;
        let bias_upper =
            crate::bounds::clipping_bias_upper(resolved.mu_tilde, grad_bound, inst.clip)?;
        let output = run_trials_resolved(&resolved)?;
        rows.push(BiasRow {
            beta,
            plateau: Some(plateau(&output.aggregate.points)?),
            closed_form_bias,
            bias_upper,
            stable: true,
            diverged: output.aggregate.diverged,
        });
    }
    Ok(rows)
}

/// One row of the privacy-bias tradeoff sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffRow {
    pub epsilon: f64,
    pub sigma_dp: f64,
    pub gamma_optimal: f64,
    pub gamma_naive: f64,
    /// Mean final squared distance under the shift-aware optimal step.
    pub final_optimal: f64,
    /// Mean final squared distance under the shift-unaware step.
    pub final_naive: f64,
}

/// For each ε: calibrates σ_DP, then runs the clipped algorithm with both
/// the shift-aware optimal constant step (using μ̃) and the shift-unaware
/// one (same formula with μ). Rows share trial seeds, so the comparison is
/// paired.
pub fn privacy_tradeoff_sweep(
    base: &ExperimentConfig,
    epsilons: &[f64],
) -> Result<Vec<TradeoffRow>> {
    if base.experiment.algorithm != Algorithm::Pcsgd {
        return Err(Error::config("the tradeoff sweep runs the clipped algorithm (pcsgd)"));
    }
    let privacy = base
        .privacy
        .as_ref()
        .ok_or_else(|| Error::config("the tradeoff sweep needs a [privacy] section"))?
        .clone();
    let probe = resolve(base)?;
    let oracle = probe
        .oracle_point
        .as_ref()
        .ok_or_else(|| Error::config("the tradeoff sweep needs an oracle"))?;
    let gap_sq = probe.theta0.dist_sq(oracle);
    let grad_bound = probe
        .grad_bound
        .ok_or_else(|| Error::config("the tradeoff sweep needs a gradient bound"))?;
    let clip = require(base.optimizer.clip, "optimizer.clip")?;
    if !(probe.mu_tilde > 0.0) {
        return Err(Error::config("the tradeoff sweep needs mu - L*beta > 0"));
    }
    let dim = probe.theta0.dim();

    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let budget = PrivacyBudget::new(
            epsilon,
            privacy.delta,
            privacy.samples,
            base.experiment.steps,
            dim,
        )?;
        let sigma = dp_sigma(clip, &budget)?;
        let gamma_optimal = optimal_step_size(
            probe.mu_tilde,
            base.experiment.steps,
            clip,
            grad_bound,
            dim,
            sigma,
            gap_sq,
        )?;
        let gamma_naive = optimal_step_size(
            probe.mu,
            base.experiment.steps,
            clip,
            grad_bound,
            dim,
            sigma,
            gap_sq,
        )?;

        let run_with = |gamma: f64| -> Result<f64> {
            let mut config = base.clone();
            config.optimizer.sigma_dp = sigma;
            config.optimizer.schedule = config::ScheduleSection {
                kind: "constant".into(),
                gamma: Some(gamma),
                a0: None,
                a1: None,
                grad_bound: Some(grad_bound),
            };
            Ok(run_trials(&config)?.aggregate.final_mean)
        };
        rows.push(TradeoffRow {
            epsilon,
            sigma_dp: sigma,
            gamma_optimal,
            gamma_naive,
            final_optimal: run_with(gamma_optimal)?,
            final_naive: run_with(gamma_naive)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    diverged: u64,
    final_mean: f64,
    final_stderr: f64,
    measured: &'a MeasuredConstants,
    config: &'a ExperimentConfig,
}

/// Emitted file set for one run.
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub csv: std::path::PathBuf,
    pub metadata: std::path::PathBuf,
    pub resolved_config: std::path::PathBuf,
}

/// Writes the aggregate as CSV (column order: t, mean, stderr, n, then
/// `bound` and `e_norm_sq_mean` when present) plus a JSON metadata sidecar
/// and the resolved config. Floats are printed in shortest round-trip form,
/// so parsing the CSV back reproduces the values exactly.
pub fn emit_results(
    output: &RunOutput,
    dir: &std::path::Path,
    name: &str,
    bound_curve: Option<&[(u64, f64)]>,
) -> Result<EmittedFiles> {
    if output.aggregate.points.is_empty() {
        return Err(Error::invalid(
            "refusing to emit an aggregate with zero recorded points",
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    if let Some(curve) = bound_curve {
        if curve.len() != output.aggregate.points.len() {
            return Err(Error::invalid(format!(
                "bound curve has {} points but the aggregate has {}",
                curve.len(),
                output.aggregate.points.len()
            )));
        }
    }

    let csv_path = dir.join(format!("{name}.csv"));
    let mut text = String::new();
    let has_e = output.aggregate.points.iter().all(|p| p.e_norm_sq_mean.is_some());
    text.push_str("t,mean,stderr,n");
    if bound_curve.is_some() {
        text.push_str(",bound");
    }
    if has_e {
        text.push_str(",e_norm_sq_mean");
    }
    text.push('\n');
    for (i, p) in output.aggregate.points.iter().enumerate() {
        text.push_str(&format!("{},{},{},{}", p.t, p.mean, p.stderr, p.n));
        if let Some(curve) = bound_curve {
            debug_assert_eq!(curve[i].0, p.t);
            text.push_str(&format!(",{}", curve[i].1));
        }
        if has_e {
            text.push_str(&format!(",{}", p.e_norm_sq_mean.unwrap()));
        }
        text.push('\n');
    }
    write_file(&csv_path, text.as_bytes())?;

    let metadata_path = dir.join(format!("{name}.meta.json"));
    let metadata = Metadata {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: output.config.experiment.seed,
        diverged: output.aggregate.diverged,
        final_mean: output.aggregate.final_mean,
        final_stderr: output.aggregate.final_stderr,
        measured: &output.measured,
        config: &output.config,
    };
    let json = serde_json::to_string_pretty(&metadata)
        .map_err(|e| Error::config(format!("metadata serialization: {e}")))?;
    write_file(&metadata_path, json.as_bytes())?;

    let config_path = dir.join(format!("{name}.config.toml"));
    write_file(&config_path, output.config.to_toml_string()?.as_bytes())?;

    Ok(EmittedFiles {
        csv: csv_path,
        metadata: metadata_path,
        resolved_config: config_path,
    })
}

fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
