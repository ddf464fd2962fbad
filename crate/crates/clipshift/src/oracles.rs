//! Ground-truth solvers used as independent references by the tests and the
//! harness: closed forms for the scalar quadratic family, repeated risk
//! minimization for performative stable points, and fixed-point solvers for
//! the clipped-gradient stationarity condition.
//!
//! For the quadratic family ℓ(θ; z) = ½(θ + a·z)² with Z = b·Z̃ − βθ and
//! Z̃ ~ Bernoulli(p), the stochastic gradient is (1 − aβ)θ + ab·Z̃, giving
//!
//!   θ_PS = −p·a·b / (1 − aβ)                    (unclipped stable point)
//!   θ_∞  = −p·c / ((1 − p)(1 − aβ))             (clipped fixed point, ab ≥ 2c)
//!   (θ_∞ − θ_PS)² = p²/(1 − aβ)² · (ab − c/(1 − p))².

use rand::RngCore;

use crate::distributions::DecisionDistribution;
use crate::error::{Error, Result};
use crate::losses::{Loss, Sample};
use crate::rng::TrialRng;
use crate::vector::{clip_in_place, l2_norm, ParamVector};

/// Parameters of the scalar quadratic instance with a Bernoulli shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticInstance {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub clip: f64,
}

impl QuadraticInstance {
    pub fn new(p: f64, a: f64, b: f64, beta: f64, clip: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::invalid(format!("need p in (0, 1/2), got {p}")));
        }
        if !(a > 0.0) {
            return Err(Error::invalid(format!("need a > 0, got {a}")));
        }
        if !(clip > 0.0) {
            return Err(Error::invalid(format!("need clip > 0, got {clip}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!("need beta >= 0, got {beta}")));
        }
        if !b.is_finite() {
            return Err(Error::invalid("b must be finite"));
        }
        Ok(QuadraticInstance { p, a, b, beta, clip })
    }

    /// Strong convexity modulus of the loss in θ.
    pub fn mu(&self) -> f64 {
        1.0
    }

    /// Joint Lipschitz constant of the gradient map.
    pub fn lipschitz(&self) -> f64 {
        self.a.max(1.0)
    }

    /// μ̃ = μ − Lβ.
    pub fn mu_tilde(&self) -> f64 {
        self.mu() - self.lipschitz() * self.beta
    }
}

/// Performative stable point θ_PS = −p·a·b/(1 − aβ).
///
/// Satisfies E_{Z~D(θ_PS)}[∇ℓ(θ_PS; Z)] = 0 exactly.
pub fn theta_ps_quadratic(inst: &QuadraticInstance) -> Result<f64> {
    let slope = 1.0 - inst.a * inst.beta;
    if slope <= 0.0 {
        return Err(Error::Precondition(format!(
            "stable point needs a*beta < 1, got a*beta = {}",
            inst.a * inst.beta
        )));
    }
    Ok(-inst.p * inst.a * inst.b / slope)
}

/// Clipped fixed point θ_∞ = −p·c/((1 − p)(1 − aβ)), the unique zero of
/// E[clip_c(∇ℓ(θ; Z))] when ab ≥ 2c.
pub fn theta_inf_quadratic(inst: &QuadraticInstance) -> Result<f64> {
    let slope = 1.0 - inst.a * inst.beta;
    if slope <= 0.0 {
        return Err(Error::Precondition(format!(
            "fixed point needs a*beta < 1, got a*beta = {}",
            inst.a * inst.beta
        )));
    }
    if inst.a * inst.b < 2.0 * inst.clip {
        return Err(Error::Precondition(format!(
            "fixed-point construction needs a*b >= 2c, got a*b = {} and 2c = {}",
            inst.a * inst.b,
            2.0 * inst.clip
        )));
    }
    Ok(-inst.p * inst.clip / ((1.0 - inst.p) * slope))
}

/// Closed-form squared clipping bias p²/(1−aβ)²·(ab − c/(1−p))².
///
/// Equals (θ_∞ − θ_PS)² whenever ab ≥ 2c makes θ_∞ the unique clipped fixed
/// point; the algebraic expression itself only needs aβ < 1, so thresholds
/// past that regime (e.g. the zero-bias point c = ab(1−p)) still evaluate.
pub fn quadratic_bias(inst: &QuadraticInstance) -> Result<f64> {
    let slope = 1.0 - inst.a * inst.beta;
    if slope <= 0.0 {
        return Err(Error::Precondition(format!(
            "bias formula needs a*beta < 1, got a*beta = {}",
            inst.a * inst.beta
        )));
    }
    let inner = inst.a * inst.b - inst.clip / (1.0 - inst.p);
    Ok(inst.p * inst.p / (slope * slope) * inner * inner)
}

/// Knobs for the repeated-risk-minimization solver.
#[derive(Debug, Clone, Copy)]
pub struct RrmOptions {
    /// Outer fixed-point tolerance on ‖θ̄_{k+1} − θ̄_k‖; the inner solver
    /// drives ‖∇f‖ below a tenth of this.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Sample budget per outer iteration when the support is not enumerable.
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for RrmOptions {
    fn default() -> Self {
        RrmOptions {
            tol: 1e-10,
            max_outer: 500,
            max_inner: 20_000,
            sample_budget: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RrmSolution {
    pub theta: ParamVector,
    pub outer_iterations: usize,
    /// ‖∇f(θ̄; θ̄)‖ at the returned point.
    pub residual_norm: f64,
}

/// Mean gradient of f(·; θ̄) over an explicit list of (sample, weight) pairs.
fn weighted_gradient(loss: &dyn Loss, theta: &[f64], batch: &[(Sample, f64)]) -> Vec<f64> {
    let mut acc = vec![0.0; loss.dim()];
    let mut grad = vec![0.0; loss.dim()];
    for (z, w) in batch {
        loss.grad_into(theta, z, &mut grad);
        for (a, g) in acc.iter_mut().zip(grad.iter()) {
            *a += w * g;
        }
    }
    acc
}

/// Minimizes θ ↦ Σ w_k ℓ(θ; z_k) by gradient descent with a safeguarded
/// secant (Barzilai-Borwein) step, to gradient norm at most `grad_tol`.
///
/// The line search accepts a move only when the gradient norm does not
/// increase, and the secant step adapts to the local curvature, so strongly
/// convex inner problems converge linearly without ever comparing function
/// values (whose differences underflow long before the gradient does).
fn minimize_weighted(
    loss: &dyn Loss,
    start: &ParamVector,
    batch: &[(Sample, f64)],
    grad_tol: f64,
    max_inner: usize,
) -> Result<ParamVector> {
    let mut theta = start.clone();
    let mut grad = weighted_gradient(loss, theta.as_slice(), batch);
    let mut gnorm = l2_norm(&grad);
    let mut step = 1.0f64;
    for _ in 0..max_inner {
        if gnorm <= grad_tol {
            return Ok(theta);
        }
        let mut s = step;
        loop {
            let mut cand = theta.clone();
            cand.axpy(-s, &grad);
            let grad_cand = weighted_gradient(loss, cand.as_slice(), batch);
            let gnorm_cand = l2_norm(&grad_cand);
            if gnorm_cand <= gnorm || gnorm_cand <= grad_tol {
                // Secant estimate of the inverse curvature along the move.
                let mut dg_dg = 0.0;
                let mut dx_dg = 0.0;
                for (g_new, g_old) in grad_cand.iter().zip(grad.iter()) {
                    let dg = g_new - g_old;
                    dg_dg += dg * dg;
                    dx_dg += (-s * g_old) * dg;
                }
                theta = cand;
                grad = grad_cand;
                gnorm = gnorm_cand;
                step = if dg_dg > 0.0 && dx_dg > 0.0 {
                    (dx_dg / dg_dg).clamp(1e-12, 1e12)
                } else {
                    (s * 2.0).min(1e12)
                };
                break;
            }
            s *= 0.5;
            if s < 1e-18 {
                return Err(Error::NonConvergence {
                    iterations: max_inner,
                    residual: gnorm,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: max_inner,
        residual: gnorm,
    })
}

fn deployment_batch(
    dist: &dyn DecisionDistribution,
    theta: &ParamVector,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Vec<(Sample, f64)> {
    match dist.support(theta) {
        Some(support) => support,
        None => {
            let w = 1.0 / budget as f64;
            (0..budget).map(|_| (dist.sample(theta, rng), w)).collect()
        }
    }
}

/// Repeated risk minimization: iterate θ̄_{k+1} = argmin_θ f(θ; θ̄_k) until
/// the outer gap drops below `opts.tol`. Requires a strongly convex loss.
///
/// Expected to fail with `NonConvergence` when β ≥ μ/L, where the outer map
/// stops being a contraction.
pub fn solve_ps_rrm(
    loss: &dyn Loss,
    dist: &dyn DecisionDistribution,
    init: &ParamVector,
    opts: &RrmOptions,
) -> Result<RrmSolution> {
    if !(loss.constants().mu > 0.0) {
        return Err(Error::Precondition(
            "repeated risk minimization needs a strongly convex loss (mu > 0)".into(),
        ));
    }
    if init.dim() != loss.dim() {
        return Err(Error::DimensionMismatch {
            expected: loss.dim(),
            got: init.dim(),
        });
    }
    let mut rng = TrialRng::new(opts.seed, 0);
    let mut theta = init.clone();
    let mut last_gap = f64::INFINITY;
    for k in 1..=opts.max_outer {
        let batch = deployment_batch(dist, &theta, opts.sample_budget, rng.aux());
        let next = minimize_weighted(loss, &theta, &batch, opts.tol / 10.0, opts.max_inner)?;
        last_gap = next.dist_sq(&theta).sqrt();
        theta = next;
        if last_gap <= opts.tol {
            let residual_batch = deployment_batch(dist, &theta, opts.sample_budget, rng.aux());
            let residual = l2_norm(&weighted_gradient(loss, theta.as_slice(), &residual_batch));
            return Ok(RrmSolution {
                theta,
                outer_iterations: k,
                residual_norm: residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_outer,
        residual: last_gap,
    })
}

/// Knobs for the clipped fixed-point solver.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    /// Residual tolerance on ‖E[clip_c(∇ℓ)]‖.
    pub tol: f64,
    pub max_iter: usize,
    /// Sample budget per expectation when the support is not enumerable.
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-11,
            max_iter: 20_000,
            sample_budget: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    pub theta: ParamVector,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn clipped_mean(
    loss: &dyn Loss,
    dist: &dyn DecisionDistribution,
    theta: &ParamVector,
    clip: f64,
    budget: usize,
    rng: &mut TrialRng,
) -> Result<Vec<f64>> {
    let batch = deployment_batch(dist, theta, budget, rng.aux());
    let mut acc = vec![0.0; loss.dim()];
    let mut grad = vec![0.0; loss.dim()];
    for (z, w) in &batch {
        loss.grad_into(theta.as_slice(), z, &mut grad);
        clip_in_place(&mut grad, clip)?;
        for (a, g) in acc.iter_mut().zip(grad.iter()) {
            *a += w * g;
        }
    }
    Ok(acc)
}

/// Solves E_{Z~D(θ)}[clip_c(∇ℓ(θ; Z))] = 0.
///
/// Scalar problems with enumerable support use bisection on the monotone map
/// h(θ); anything else falls back to the damped iteration θ ← θ − η·h(θ)
/// with η = 1/(2L).
pub fn solve_clipped_fixed_point(
    loss: &dyn Loss,
    dist: &dyn DecisionDistribution,
    clip: f64,
    init: &ParamVector,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution> {
    if !(clip > 0.0) {
        return Err(Error::invalid("clipping threshold must be positive"));
    }
    let mut rng = TrialRng::new(opts.seed, 1);
    let scalar_exact = loss.dim() == 1 && dist.support(init).is_some();
    if scalar_exact {
        let h = |x: f64, rng: &mut TrialRng| -> Result<f64> {
            let theta = ParamVector::scalar(x)?;
            Ok(clipped_mean(loss, dist, &theta, clip, opts.sample_budget, rng)?[0])
        };
        // Expand a bracket around the initial point until the sign changes.
        let x0 = init[0];
        let mut lo = x0 - 1.0;
        let mut hi = x0 + 1.0;
        let mut f_lo = h(lo, &mut rng)?;
        let mut f_hi = h(hi, &mut rng)?;
        let mut expansions = 0usize;
        while f_lo.signum() == f_hi.signum() && f_lo != 0.0 && f_hi != 0.0 {
            let width = hi - lo;
            lo -= width;
            hi += width;
            f_lo = h(lo, &mut rng)?;
            f_hi = h(hi, &mut rng)?;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::NonConvergence {
                    iterations: expansions,
                    residual: f_lo.abs().min(f_hi.abs()),
                });
            }
        }
        if f_lo == 0.0 {
            return Ok(FixedPointSolution {
                theta: ParamVector::scalar(lo)?,
                residual_norm: 0.0,
                iterations: expansions,
            });
        }
        if f_hi == 0.0 {
            return Ok(FixedPointSolution {
                theta: ParamVector::scalar(hi)?,
                residual_norm: 0.0,
                iterations: expansions,
            });
        }
        for it in 0..opts.max_iter {
            let mid = 0.5 * (lo + hi);
            let f_mid = h(mid, &mut rng)?;
            if f_mid.abs() <= opts.tol || (hi - lo) <= f64::EPSILON * (1.0 + mid.abs()) {
                return Ok(FixedPointSolution {
                    theta: ParamVector::scalar(mid)?,
                    residual_norm: f_mid.abs(),
                    iterations: it + 1,
                });
            }
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual: h(mid, &mut rng)?.abs(),
        });
    }

    // Damped fixed-point iteration for the general case.
    let lipschitz = loss.constants().lipschitz;
    let eta = if lipschitz.is_finite() && lipschitz > 0.0 {
        1.0 / (2.0 * lipschitz)
    } else {
        0.5
    };
    let mut theta = init.clone();
    for it in 0..opts.max_iter {
        let h = clipped_mean(loss, dist, &theta, clip, opts.sample_budget, &mut rng)?;
        let norm = l2_norm(&h);
        if norm <= opts.tol {
            return Ok(FixedPointSolution {
                theta,
                residual_norm: norm,
                iterations: it,
            });
        }
        theta.axpy(-eta, &h);
        if !theta.is_finite() {
            return Err(Error::Numerical {
                step: it as u64,
                message: "fixed-point iterate became non-finite".into(),
            });
        }
    }
    let h = clipped_mean(loss, dist, &theta, clip, opts.sample_budget, &mut rng)?;
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: l2_norm(&h),
    })
}
