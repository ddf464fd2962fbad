//! Evaluators for the convergence-bound right-hand sides, used to check that
//! theory dominates the Monte-Carlo estimates.
//!
//! Constants are never defaulted: every physical quantity (μ̃, L, G, σ₀, σ₁,
//! ℓ_max, M, B, b, b̄) must be supplied or measured by the harness, otherwise
//! dominance tests would be meaningless. `sigma_dp` always means the noise
//! standard deviation actually injected per step by the algorithm under
//! test (so for the error-feedback algorithm it includes its multiplier).

use crate::error::{Error, Result};
use crate::schedule::{validate_schedule_scvx, StepSchedule};

fn clip_excess_sq(grad_bound: f64, clip: f64) -> f64 {
    let excess = (grad_bound - clip).max(0.0);
    excess * excess
}

/// Asymptotic clipping bias level 8·(max{G−c, 0})²/μ̃² of the strongly
/// convex distance bound; the non-vanishing term no step size removes.
pub fn clipping_bias_upper(mu_tilde: f64, grad_bound: f64, clip: f64) -> Result<f64> {
    if !(mu_tilde > 0.0) {
        return Err(Error::Precondition(format!(
            "bias level needs mu_tilde > 0, got {mu_tilde}"
        )));
    }
    Ok(8.0 * clip_excess_sq(grad_bound, clip) / (mu_tilde * mu_tilde))
}

/// Inputs of the strongly convex distance bound for the projected clipped
/// algorithm:
///
///   E‖θ̂_{t+1}‖² ≤ Π_{i=1}^{t+1}(1 − μ̃γ_i)·‖θ̂_0‖²
///                 + (2c₁/μ̃)·γ_{t+1} + 8C₁/μ̃²,
///
/// with c₁ = 2(c² + G²) + d·σ_DP² and C₁ = (max{G−c, 0})².
#[derive(Debug, Clone)]
pub struct ScvxBoundParams {
    pub mu_tilde: f64,
    pub clip: f64,
    pub grad_bound: f64,
    pub dim: usize,
    pub sigma_dp: f64,
    pub initial_gap_sq: f64,
    pub schedule: StepSchedule,
}

impl ScvxBoundParams {
    fn noise_level(&self) -> f64 {
        2.0 * (self.clip * self.clip + self.grad_bound * self.grad_bound)
            + self.dim as f64 * self.sigma_dp * self.sigma_dp
    }

    fn check(&self, horizon: u64) -> Result<()> {
        let report = validate_schedule_scvx(&self.schedule, self.mu_tilde, horizon)?;
        if let crate::schedule::ScheduleValidation::Violation { t, condition, detail } = report {
            return Err(Error::Precondition(format!(
                "schedule fails the strongly convex step conditions at t = {t} (condition {condition}): {detail}"
            )));
        }
        Ok(())
    }

    /// Bound value at iteration t (i.e. on E‖θ_{t+1} − θ_PS‖²).
    pub fn eval(&self, t: u64) -> Result<f64> {
        Ok(self.curve(&[t])?[0].1)
    }

    /// Bound values at the given sorted iteration indices, sharing one pass
    /// over the contraction product.
    pub fn curve(&self, ts: &[u64]) -> Result<Vec<(u64, f64)>> {
        let horizon = ts.iter().copied().max().unwrap_or(0) + 1;
        self.check(horizon)?;
        debug_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        let c1 = self.noise_level();
        let bias = 8.0 * clip_excess_sq(self.grad_bound, self.clip)
            / (self.mu_tilde * self.mu_tilde);
        let mut out = Vec::with_capacity(ts.len());
        let mut product = 1.0f64;
        let mut i = 1u64;
        for &t in ts {
            while i <= t + 1 {
                product *= 1.0 - self.mu_tilde * self.schedule.value(i);
                i += 1;
            }
            let gamma_next = self.schedule.value(t + 1);
            out.push((
                t,
                product * self.initial_gap_sq + 2.0 * c1 / self.mu_tilde * gamma_next + bias,
            ));
        }
        Ok(out)
    }

    /// The t → ∞ limit with vanishing steps: the clipping bias alone.
    pub fn asymptotic_bias(&self) -> f64 {
        8.0 * clip_excess_sq(self.grad_bound, self.clip) / (self.mu_tilde * self.mu_tilde)
    }
}

/// Inputs of the non-convex stationarity bound for the clipped algorithm:
///
///   Σ_{t=0}^{T−1} γ_{t+1}·E‖∇f(θ_t; θ_t)‖²
///     ≤ 8Δ₀ + 4L(σ₀² + σ_DP²)·Σγ² + 8·b(β, c)·Σγ,
///
/// with b(β, c) = ℓ_max·β·(√(σ₀² + σ_DP²) + 8(1 + σ₁²)·ℓ_max·β)
///                + 2(max{G−c, 0})².
#[derive(Debug, Clone)]
pub struct NcvxBoundParams {
    /// Δ₀: upper bound on the initial optimality gap E[f(θ₀; θ₀) − ℓ*].
    pub delta0: f64,
    pub lipschitz: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_dp: f64,
    pub loss_max: f64,
    pub beta: f64,
    pub clip: f64,
    pub grad_bound: f64,
    pub schedule: StepSchedule,
}

impl NcvxBoundParams {
    /// The additive bias term b(β, c).
    pub fn bias_term(&self) -> f64 {
        let noise = (self.sigma0 * self.sigma0 + self.sigma_dp * self.sigma_dp).sqrt();
        self.loss_max
            * self.beta
            * (noise + 8.0 * (1.0 + self.sigma1 * self.sigma1) * self.loss_max * self.beta)
            + 2.0 * clip_excess_sq(self.grad_bound, self.clip)
    }

    fn step_cap(&self) -> f64 {
        1.0 / (2.0 * (1.0 + self.sigma1 * self.sigma1))
    }

    fn check_steps(&self, horizon: u64) -> Result<()> {
        let cap = self.step_cap();
        for t in 1..=horizon {
            let g = self.schedule.value(t);
            if g > cap {
                return Err(Error::Precondition(format!(
                    "step condition gamma_t <= 1/(2(1+sigma1^2)) fails at t = {t}: {g} > {cap}"
                )));
            }
        }
        Ok(())
    }

    /// Right side of the summed bound over T steps.
    pub fn summed(&self, horizon: u64) -> Result<f64> {
        self.check_steps(horizon)?;
        let mut sum_g = 0.0;
        let mut sum_g2 = 0.0;
        for t in 1..=horizon {
            let g = self.schedule.value(t);
            sum_g += g;
            sum_g2 += g * g;
        }
        Ok(8.0 * self.delta0
            + 4.0 * self.lipschitz * (self.sigma0 * self.sigma0 + self.sigma_dp * self.sigma_dp)
                * sum_g2
            + 8.0 * self.bias_term() * sum_g)
    }

    /// The constant-step specialization γ = 1/√T: a bound on the uniformly
    /// sampled (equivalently, best) stationarity measure,
    /// 8(Δ₀ + L(σ₀² + σ_DP²)/2)/√T + 8·b(β, c).
    pub fn mean_at_sqrt_horizon(&self, horizon: u64) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::Precondition("horizon must be positive".into()));
        }
        let sqrt_t = (horizon as f64).sqrt();
        let gamma = 1.0 / sqrt_t;
        if gamma > self.step_cap() {
            return Err(Error::Precondition(format!(
                "gamma = 1/sqrt(T) = {gamma} exceeds 1/(2(1+sigma1^2)) = {}",
                self.step_cap()
            )));
        }
        let var = self.sigma0 * self.sigma0 + self.sigma_dp * self.sigma_dp;
        Ok(8.0 * (self.delta0 + 0.5 * self.lipschitz * var) / sqrt_t + 8.0 * self.bias_term())
    }
}

/// Inputs of the strongly convex distance bound for the error-feedback
/// algorithm, stated on θ̄_t = θ_t − γ_t·e_t − θ_PS:
///
///   E‖θ̄_{t+1}‖² ≤ Π_{i=1}^{t+1}(1 − (μ̃/4)γ_i)·‖θ̄_0‖²
///     + (8(G² + d·σ_DP²)/μ̃)·γ_{t+1}
///     + (16L²M²(1+β)²/μ̃²)·γ²_{t+1}
///     + (24·b²M²/μ̃)·γ³_{t+1}
///     + (16L²M²·b̄·(1+β)²/μ̃²)·γ⁴_{t+1},
///
/// where (G, B) bound the gradient second moment via
/// E‖∇ℓ(θ; Z)‖² ≤ G² + B²‖θ − θ_PS‖², M bounds E‖e_t‖², and (b, b̄) are the
/// schedule-regularity constants of conditions (i) and (iii).
#[derive(Debug, Clone)]
pub struct EfScvxBoundParams {
    pub mu_tilde: f64,
    pub grad_bound: f64,
    /// B in the gradient growth bound.
    pub growth: f64,
    pub dim: usize,
    pub sigma_dp: f64,
    pub lipschitz: f64,
    pub beta: f64,
    /// M: bound on √E‖e_t‖².
    pub e_bound: f64,
    /// b: schedule constant with γ_t − γ_{t+1} ≤ b·γ²_{t+1} and a₀ ≥ 1/b.
    pub step_b: f64,
    /// b̄: schedule constant with γ²_t/γ²_{t+1} ≤ 1 + b̄·γ²_{t+1}.
    pub step_b_bar: f64,
    pub initial_dist_sq: f64,
    pub schedule: StepSchedule,
}

impl EfScvxBoundParams {
    /// Checks the three step-size conditions over a finite horizon and
    /// reports every failing one.
    pub fn validate(&self, horizon: u64) -> Result<()> {
        let mut failures = Vec::new();
        match &self.schedule {
            StepSchedule::Polynomial { a0, .. } => {
                if *a0 < 1.0 / self.step_b {
                    failures.push(format!(
                        "(i) a0 = {a0} below 1/b = {}",
                        1.0 / self.step_b
                    ));
                }
            }
            _ => failures.push("(i) schedule must be polynomial a0/(a1+t)".into()),
        }
        let cap = (self.mu_tilde / (16.0 * self.step_b))
            .min(8.0 / self.mu_tilde)
            .min(self.mu_tilde / (4.0 * self.growth * self.growth));
        let mut cap_failure = None;
        let mut ratio_failure = None;
        for t in 1..=horizon {
            let g = self.schedule.value(t);
            if g > cap && cap_failure.is_none() {
                cap_failure = Some(format!(
                    "(ii) gamma_{t} = {g} exceeds min(mu/16b, 8/mu, mu/4B^2) = {cap}"
                ));
            }
            if t < horizon {
                let g_next = self.schedule.value(t + 1);
                let lhs = (g * g) / (g_next * g_next);
                let rhs = 1.0 + self.step_b_bar * g_next * g_next;
                if lhs > rhs && ratio_failure.is_none() {
                    ratio_failure = Some(format!(
                        "(iii) gamma_{t}^2/gamma_{}^2 = {lhs} exceeds 1 + b_bar gamma^2 = {rhs}",
                        t + 1
                    ));
                }
            }
        }
        failures.extend(cap_failure);
        failures.extend(ratio_failure);
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(failures.join("; ")))
        }
    }

    pub fn eval(&self, t: u64) -> Result<f64> {
        Ok(self.curve(&[t])?[0].1)
    }

    pub fn curve(&self, ts: &[u64]) -> Result<Vec<(u64, f64)>> {
        let horizon = ts.iter().copied().max().unwrap_or(0) + 1;
        self.validate(horizon)?;
        debug_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        let mu = self.mu_tilde;
        let m2 = self.e_bound * self.e_bound;
        let l2 = self.lipschitz * self.lipschitz;
        let one_plus_beta_sq = (1.0 + self.beta) * (1.0 + self.beta);
        let noise = self.grad_bound * self.grad_bound
            + self.dim as f64 * self.sigma_dp * self.sigma_dp;
        let mut out = Vec::with_capacity(ts.len());
        let mut product = 1.0f64;
        let mut i = 1u64;
        for &t in ts {
            while i <= t + 1 {
                product *= 1.0 - 0.25 * mu * self.schedule.value(i);
                i += 1;
            }
            let g = self.schedule.value(t + 1);
            let value = product * self.initial_dist_sq
                + 8.0 * noise / mu * g
                + 16.0 * l2 * m2 * one_plus_beta_sq / (mu * mu) * g * g
                + 24.0 * self.step_b * self.step_b * m2 / mu * g * g * g
                + 16.0 * l2 * m2 * self.step_b_bar * one_plus_beta_sq / (mu * mu) * g * g * g * g;
            out.push((t, value));
        }
        Ok(out)
    }

    /// The O(γ_{t+1}) term that dominates as t → ∞.
    pub fn dominant_term(&self, t: u64) -> f64 {
        let noise = self.grad_bound * self.grad_bound
            + self.dim as f64 * self.sigma_dp * self.sigma_dp;
        8.0 * noise / self.mu_tilde * self.schedule.value(t + 1)
    }
}

/// Inputs of the non-convex stationarity bound for the error-feedback
/// algorithm at constant step γ = 1/√T:
///
///   min_t E‖∇f(θ_t; θ_t)‖² ≤ 4Δ₀/(Tγ) + b·β + 2Lγ(σ_DP² + σ₀²) + 2L²M²γ²,
///   b = 4·ℓ_max·(C1 + C2 + √d·σ_DP).
#[derive(Debug, Clone)]
pub struct EfNcvxBoundParams {
    pub clip_grad: f64,
    pub clip_error: f64,
    pub sigma_dp: f64,
    pub loss_max: f64,
    pub beta: f64,
    pub dim: usize,
    pub delta0: f64,
    pub lipschitz: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// M: bound on √E‖e_t‖².
    pub e_bound: f64,
}

impl EfNcvxBoundParams {
    /// The shift-bias coefficient b.
    pub fn bias_coefficient(&self) -> f64 {
        4.0 * self.loss_max
            * (self.clip_grad + self.clip_error + (self.dim as f64).sqrt() * self.sigma_dp)
    }

    pub fn eval(&self, horizon: u64) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::Precondition("horizon must be positive".into()));
        }
        let gamma = 1.0 / (horizon as f64).sqrt();
        let cap = 1.0 / (2.0 * self.lipschitz * (1.0 + self.sigma1 * self.sigma1));
        if gamma > cap {
            return Err(Error::Precondition(format!(
                "gamma = 1/sqrt(T) = {gamma} exceeds 1/(2L(1+sigma1^2)) = {cap}"
            )));
        }
        let var = self.sigma_dp * self.sigma_dp + self.sigma0 * self.sigma0;
        Ok(4.0 * self.delta0 / (horizon as f64 * gamma)
            + self.bias_coefficient() * self.beta
            + 2.0 * self.lipschitz * gamma * var
            + 2.0 * self.lipschitz * self.lipschitz * self.e_bound * self.e_bound * gamma * gamma)
    }
}
