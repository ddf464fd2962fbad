//! Loss functions ℓ(θ; z) with analytic gradients and their declared
//! smoothness/convexity constants.
//!
//! Three instances cover the experiment families:
//!
//! * [`QuadraticScalarLoss`] — ℓ(θ; z) = ½(θ + a·z)², the scalar strongly
//!   convex family with closed-form stable points.
//! * [`RegularizedLogisticLoss`] — weighted logistic loss with ridge penalty,
//!   label weight α(z) = y + 1.
//! * [`BoundedNonconvexLoss`] — ℓ(θ; z) = 1 − exp(−(θ−z)²/2), a smooth loss
//!   bounded in [0, 1) that is non-convex in θ.
//!
//! Constants that a loss cannot know on its own (the gradient bound G over a
//! reachable set, variance levels σ₀/σ₁) stay `None` here and are measured or
//! supplied by the experiment harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One data point: a scalar for the quadratic family, or a feature vector
/// with a binary label for classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Point(f64),
    Labeled { x: Vec<f64>, y: bool },
}

impl Sample {
    pub fn point(&self) -> f64 {
        match self {
            Sample::Point(z) => *z,
            Sample::Labeled { .. } => panic!("expected a scalar sample, got a labeled one"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Sample::Point(z) => z.is_finite(),
            Sample::Labeled { x, .. } => x.iter().all(|v| v.is_finite()),
        }
    }
}

/// Declared constants of a loss model. `mu` is the strong convexity modulus
/// of f(·; θ̄) (zero for non-convex losses) and `lipschitz` the joint
/// Lipschitz constant of ∇ℓ in (θ, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub mu: f64,
    pub lipschitz: f64,
    pub grad_bound: Option<f64>,
    pub loss_max: Option<f64>,
    pub loss_floor: f64,
    pub sigma0: Option<f64>,
    pub sigma1: Option<f64>,
}

/// A differentiable loss ℓ(θ; z). Implementations are immutable after
/// construction; evaluation is reentrant and freely concurrent.
pub trait Loss: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64], z: &Sample) -> f64;
    fn grad_into(&self, theta: &[f64], z: &Sample, out: &mut [f64]);
    fn constants(&self) -> &LossConstants;

    fn grad(&self, theta: &[f64], z: &Sample) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(theta, z, &mut out);
        out
    }
}

/// ℓ(θ; z) = ½(θ + a·z)², d = 1, with ∇ℓ = θ + a·z.
///
/// For each fixed z the curvature in θ is exactly 1, so μ = 1. The gradient
/// map has ∂²ℓ/∂θ∂z = a, so the joint Lipschitz constant is max(1, a); both
/// values are exposed (`constants().mu` and [`Self::data_sensitivity`]).
#[derive(Debug, Clone)]
pub struct QuadraticScalarLoss {
    a: f64,
    constants: LossConstants,
}

impl QuadraticScalarLoss {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::invalid(format!(
                "quadratic loss needs a > 0, got {a}"
            )));
        }
        Ok(QuadraticScalarLoss {
            a,
            constants: LossConstants {
                mu: 1.0,
                lipschitz: a.max(1.0),
                grad_bound: None,
                loss_max: None,
                loss_floor: 0.0,
                sigma0: None,
                sigma1: None,
            },
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// ∂²ℓ/∂θ∂z = a, the gradient's sensitivity to the data coordinate.
    pub fn data_sensitivity(&self) -> f64 {
        self.a
    }
}

impl Loss for QuadraticScalarLoss {
    fn dim(&self) -> usize {
        1
    }

    fn loss(&self, theta: &[f64], z: &Sample) -> f64 {
        let r = theta[0] + self.a * z.point();
        0.5 * r * r
    }

    fn grad_into(&self, theta: &[f64], z: &Sample, out: &mut [f64]) {
        out[0] = theta[0] + self.a * z.point();
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Weighted ridge-regularized logistic loss
///
///   ℓ(θ; (x, y)) = (y+1)·(log(1 + exp(xᵀθ)) − y·xᵀθ) + (η/2)‖θ‖²,
///   ∇ℓ = (y+1)·(sigmoid(xᵀθ) − y)·x + ηθ,
///
/// with μ = η. The Lipschitz constant depends on the feature scale and must
/// be supplied by the harness via [`Self::with_lipschitz`] when a bound
/// evaluator needs it.
#[derive(Debug, Clone)]
pub struct RegularizedLogisticLoss {
    eta: f64,
    dim: usize,
    constants: LossConstants,
}

impl RegularizedLogisticLoss {
    pub fn new(eta: f64, dim: usize) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!(
                "logistic loss needs eta > 0, got {eta}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("logistic loss needs dim >= 1"));
        }
        Ok(RegularizedLogisticLoss {
            eta,
            dim,
            constants: LossConstants {
                mu: eta,
                lipschitz: f64::NAN,
                grad_bound: None,
                loss_max: None,
                loss_floor: 0.0,
                sigma0: None,
                sigma1: None,
            },
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Records a data-dependent Lipschitz constant, e.g.
    /// η + max_i ‖x_i‖²/2 for a known feature set.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.constants.lipschitz = lipschitz;
        self
    }
}

impl Loss for RegularizedLogisticLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64], z: &Sample) -> f64 {
        match z {
            Sample::Labeled { x, y } => {
                let u: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                let yf = if *y { 1.0 } else { 0.0 };
                let weight = yf + 1.0;
                let ridge = 0.5 * self.eta * theta.iter().map(|v| v * v).sum::<f64>();
                weight * (softplus(u) - yf * u) + ridge
            }
            Sample::Point(_) => panic!("logistic loss needs labeled samples"),
        }
    }

    fn grad_into(&self, theta: &[f64], z: &Sample, out: &mut [f64]) {
        match z {
            Sample::Labeled { x, y } => {
                let u: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                let yf = if *y { 1.0 } else { 0.0 };
                let coeff = (yf + 1.0) * (sigmoid(u) - yf);
                for ((o, xi), ti) in out.iter_mut().zip(x.iter()).zip(theta.iter()) {
                    *o = coeff * xi + self.eta * ti;
                }
            }
            Sample::Point(_) => panic!("logistic loss needs labeled samples"),
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// ℓ(θ; z) = 1 − exp(−(θ−z)²/2): smooth, bounded in [0, 1), non-convex in θ.
///
/// ∇ℓ = (θ−z)·exp(−(θ−z)²/2), whose magnitude is globally at most e^{-1/2},
/// and the curvature (1−u²)e^{-u²/2} lies in [−2e^{-3/2}, 1], so L = 1.
#[derive(Debug, Clone)]
pub struct BoundedNonconvexLoss {
    constants: LossConstants,
}

impl Default for BoundedNonconvexLoss {
    fn default() -> Self {
        Self::new()
    }
}

impl BoundedNonconvexLoss {
    pub fn new() -> Self {
        BoundedNonconvexLoss {
            constants: LossConstants {
                mu: 0.0,
                lipschitz: 1.0,
                grad_bound: Some((-0.5f64).exp()),
                loss_max: Some(1.0),
                loss_floor: 0.0,
                sigma0: None,
                sigma1: None,
            },
        }
    }
}

impl Loss for BoundedNonconvexLoss {
    fn dim(&self) -> usize {
        1
    }

    fn loss(&self, theta: &[f64], z: &Sample) -> f64 {
        let u = theta[0] - z.point();
        1.0 - (-0.5 * u * u).exp()
    }

    fn grad_into(&self, theta: &[f64], z: &Sample, out: &mut [f64]) {
        let u = theta[0] - z.point();
        out[0] = u * (-0.5 * u * u).exp();
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// Central-difference gradient check: the maximum over coordinates of
///
///   |(ℓ(θ+h·e_i) − ℓ(θ−h·e_i))/(2h) − grad_i| / (1 + |grad_i|).
pub fn grad_check_fd(loss: &dyn Loss, theta: &[f64], z: &Sample, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let grad = loss.grad(theta, z);
    let mut bumped = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        bumped[i] = theta[i] + h;
        let up = loss.loss(&bumped, z);
        bumped[i] = theta[i] - h;
        let down = loss.loss(&bumped, z);
        bumped[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::l2_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_example_values() {
        let loss = QuadraticScalarLoss::new(10.0).unwrap();
        let z = Sample::Point(0.1);
        assert!((loss.loss(&[0.5], &z) - 1.125).abs() < 1e-15);
        assert!((loss.grad(&[0.5], &z)[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_inner_minimizer() {
        let loss = QuadraticScalarLoss::new(3.0).unwrap();
        let z = Sample::Point(0.7);
        let theta = [-3.0 * 0.7];
        assert_eq!(loss.loss(&theta, &z), 0.0);
        assert_eq!(loss.grad(&theta, &z)[0], 0.0);
    }

    #[test]
    fn quadratic_rejects_nonpositive_a() {
        assert!(QuadraticScalarLoss::new(0.0).is_err());
        assert!(QuadraticScalarLoss::new(-1.0).is_err());
    }

    #[test]
    fn quadratic_curvature_is_one() {
        // Second difference of the loss in theta equals 1 for any fixed z.
        let loss = QuadraticScalarLoss::new(10.0).unwrap();
        let z = Sample::Point(0.3);
        let h = 1e-4;
        let f = |t: f64| loss.loss(&[t], &z);
        let second = (f(0.2 + h) - 2.0 * f(0.2) + f(0.2 - h)) / (h * h);
        assert!((second - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_fd_check() {
        let loss = QuadraticScalarLoss::new(1.0).unwrap();
        let err = grad_check_fd(&loss, &[0.3], &Sample::Point(0.7), 1e-6).unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn fd_error_zero_at_origin() {
        let loss = QuadraticScalarLoss::new(1.0).unwrap();
        let err = grad_check_fd(&loss, &[0.0], &Sample::Point(0.0), 1e-6).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn logistic_at_zero_theta() {
        let d = 3;
        let loss = RegularizedLogisticLoss::new(0.5, d).unwrap();
        let theta = vec![0.0; d];
        for y in [false, true] {
            let x = vec![0.3, -1.2, 0.8];
            let z = Sample::Labeled { x: x.clone(), y };
            let yf = if y { 1.0 } else { 0.0 };
            let expect = (yf + 1.0) * (2.0f64).ln();
            assert!((loss.loss(&theta, &z) - expect).abs() < 1e-14);
            let g = loss.grad(&theta, &z);
            for i in 0..d {
                assert!((g[i] - (yf + 1.0) * (0.5 - yf) * x[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn logistic_reference_regularization() {
        // eta = 100/m at the reference dataset size m = 15776.
        let eta: f64 = 100.0 / 15776.0;
        assert!((eta - 0.0063388).abs() < 1e-7);
        assert!(RegularizedLogisticLoss::new(eta, 10).is_ok());
    }

    #[test]
    fn logistic_fd_check_random_points() {
        let loss = RegularizedLogisticLoss::new(0.01, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z = Sample::Labeled { x, y: rng.gen_bool(0.5) };
            let err = grad_check_fd(&loss, &theta, &z, 1e-6).unwrap();
            assert!(err <= 1e-6, "relative error {err}");
        }
    }

    #[test]
    fn logistic_grad_lipschitz_numerically() {
        // On bounded features the gradient map is Lipschitz; sample pairs and
        // compare against eta + max ||x||^2 / 2 (+1 slack for the x-direction).
        let loss = RegularizedLogisticLoss::new(0.1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z = Sample::Labeled { x: x.clone(), y: rng.gen_bool(0.5) };
            let t1: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let t2: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g1 = loss.grad(&t1, &z);
            let g2 = loss.grad(&t2, &z);
            let num = l2_norm(&g1.iter().zip(g2.iter()).map(|(a, b)| a - b).collect::<Vec<_>>());
            let den = l2_norm(&t1.iter().zip(t2.iter()).map(|(a, b)| a - b).collect::<Vec<_>>());
            if den > 1e-9 {
                worst = worst.max(num / den);
            }
        }
        let bound = 0.1 + 0.5 * 3.0;
        assert!(worst <= bound, "ratio {worst} above {bound}");
    }

    #[test]
    fn bounded_loss_examples() {
        let loss = BoundedNonconvexLoss::new();
        assert_eq!(loss.loss(&[0.4], &Sample::Point(0.4)), 0.0);
        assert_eq!(loss.grad(&[0.4], &Sample::Point(0.4))[0], 0.0);
        let v = loss.loss(&[1.0], &Sample::Point(0.0));
        assert!((v - 0.39347).abs() < 1e-5);
    }

    #[test]
    fn bounded_loss_stays_in_unit_interval() {
        let loss = BoundedNonconvexLoss::new();
        let mut max_loss: f64 = 0.0;
        let mut max_grad: f64 = 0.0;
        let mut u = -10.0;
        while u <= 10.0 {
            let v = loss.loss(&[u], &Sample::Point(0.0));
            // sup |l| <= l_max = 1; the strict inequality saturates in f64
            // once exp(-u^2/2) drops below half an ulp of 1.
            assert!((0.0..=1.0).contains(&v));
            if u.abs() <= 8.0 {
                assert!(v < 1.0);
            }
            max_loss = max_loss.max(v.abs());
            max_grad = max_grad.max(loss.grad(&[u], &Sample::Point(0.0))[0].abs());
            u += 1e-3;
        }
        assert!(max_loss <= 1.0);
        // Declared gradient bound e^{-1/2} is respected on the grid.
        assert!(max_grad <= loss.constants().grad_bound.unwrap() + 1e-12);
    }

    #[test]
    fn bounded_loss_fd_check() {
        let loss = BoundedNonconvexLoss::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta = [rng.gen_range(-3.0..3.0)];
            let z = Sample::Point(rng.gen_range(-3.0..3.0));
            let err = grad_check_fd(&loss, &theta, &z, 1e-6).unwrap();
            assert!(err <= 1e-6);
        }
    }

    #[test]
    fn fd_rejects_nonpositive_step() {
        let loss = BoundedNonconvexLoss::new();
        assert!(grad_check_fd(&loss, &[0.0], &Sample::Point(0.0), 0.0).is_err());
    }
}
