//! Decision-dependent samplers z ~ D(θ) with declared sensitivity β, plus
//! exact expectation support for enumerable distributions.
//!
//! β is always a declared constructor parameter, never estimated from draws:
//! it is a property of the distribution map, and every family here realizes
//! it in closed form (rigid translations for the Wasserstein-Lipschitz
//! families, mixture-weight slopes for the total-variation one).
//!
//! Sampling takes an exclusive RNG stream supplied by the caller; the
//! distribution objects themselves are immutable and shareable.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::losses::{Loss, Sample};
use crate::vector::{clip_in_place, ParamVector};

/// A sampler for z ~ D(θ) with known sensitivity.
pub trait DecisionDistribution: Send + Sync {
    fn sample(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> Sample;

    /// The declared Lipschitz constant β of θ ↦ D(θ).
    fn sensitivity(&self) -> f64;

    /// Finite support of D(θ) as (sample, probability) pairs, when the
    /// distribution is enumerable; `None` otherwise (callers fall back to
    /// Monte-Carlo).
    fn support(&self, theta: &ParamVector) -> Option<Vec<(Sample, f64)>>;
}

/// Z = b·Z̃ − β·θ with Z̃ ~ Bernoulli(p), p ∈ (0, ½).
///
/// A rigid translation of a two-point law, so its Wasserstein-1 sensitivity
/// is exactly the declared β.
#[derive(Debug, Clone)]
pub struct BernoulliLinearShift {
    p: f64,
    b: f64,
    beta: f64,
}

impl BernoulliLinearShift {
    pub fn new(p: f64, b: f64, beta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::invalid(format!(
                "bernoulli shift needs p in (0, 1/2), got {p}"
            )));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!(
                "sensitivity must be nonnegative, got {beta}"
            )));
        }
        if !b.is_finite() {
            return Err(Error::invalid("b must be finite"));
        }
        Ok(BernoulliLinearShift { p, b, beta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl DecisionDistribution for BernoulliLinearShift {
    fn sample(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> Sample {
        let z_tilde = rng.gen_bool(self.p);
        let base = if z_tilde { self.b } else { 0.0 };
        Sample::Point(base - self.beta * theta[0])
    }

    fn sensitivity(&self) -> f64 {
        self.beta
    }

    fn support(&self, theta: &ParamVector) -> Option<Vec<(Sample, f64)>> {
        let shift = -self.beta * theta[0];
        Some(vec![
            (Sample::Point(shift), 1.0 - self.p),
            (Sample::Point(self.b + shift), self.p),
        ])
    }
}

/// A fixed, finite database D₀ = {z̄_i}, immutable for the life of a run.
#[derive(Debug, Clone)]
pub struct FiniteDatabase {
    records: Vec<Sample>,
}

impl FiniteDatabase {
    pub fn new(records: Vec<Sample>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("database must contain at least one record"));
        }
        if records.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("database records must be finite"));
        }
        Ok(FiniteDatabase { records })
    }

    /// Loads records from a CSV file with a header row. A single numeric
    /// column yields scalar records; with several columns the final one is
    /// the binary label and the rest are features.
    pub fn from_csv(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (line, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::config(format!("csv parse error: {e}")))?;
            let values: Vec<f64> = row
                .iter()
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!(
                            "non-numeric field {:?} on data line {}",
                            field,
                            line + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let sample = match values.len() {
                0 => return Err(Error::config(format!("empty data line {}", line + 1))),
                1 => Sample::Point(values[0]),
                _ => {
                    let label = values[values.len() - 1];
                    let y = if label == 0.0 {
                        false
                    } else if label == 1.0 {
                        true
                    } else {
                        return Err(Error::config(format!(
                            "label column must be 0 or 1, got {} on data line {}",
                            label,
                            line + 1
                        )));
                    };
                    Sample::Labeled {
                        x: values[..values.len() - 1].to_vec(),
                        y,
                    }
                }
            };
            records.push(sample);
        }
        FiniteDatabase::new(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Sample] {
        &self.records
    }

    /// Sample mean of scalar records (errors on labeled records).
    pub fn scalar_mean(&self) -> Result<f64> {
        let mut sum = 0.0;
        for r in &self.records {
            match r {
                Sample::Point(z) => sum += z,
                Sample::Labeled { .. } => {
                    return Err(Error::Unsupported(
                        "scalar mean is only defined for scalar records".into(),
                    ))
                }
            }
        }
        Ok(sum / self.records.len() as f64)
    }
}

/// Z = z̄_i + s_i(θ) with i ~ Unif([m]) and a deterministic shift map.
///
/// The shift closure maps (record, index, θ) to the shifted sample, so each
/// record may respond differently to the deployed model. Deterministic
/// shifts keep the support enumerable (m equally weighted points).
pub struct FiniteDatabaseShift<F>
where
    F: Fn(&Sample, usize, &ParamVector) -> Sample + Send + Sync,
{
    db: Arc<FiniteDatabase>,
    shift: F,
    beta: f64,
}

impl<F> FiniteDatabaseShift<F>
where
    F: Fn(&Sample, usize, &ParamVector) -> Sample + Send + Sync,
{
    pub fn new(db: Arc<FiniteDatabase>, beta: f64, shift: F) -> Result<Self> {
        if db.is_empty() {
            return Err(Error::invalid("database must contain at least one record"));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid("sensitivity must be nonnegative"));
        }
        Ok(FiniteDatabaseShift { db, shift, beta })
    }
}

/// Uniform resampling of the database with no decision dependence.
pub fn identity_resampler(
    db: Arc<FiniteDatabase>,
) -> Result<FiniteDatabaseShift<impl Fn(&Sample, usize, &ParamVector) -> Sample + Send + Sync>> {
    FiniteDatabaseShift::new(db, 0.0, |record, _, _| record.clone())
}

/// Scalar records shifted by s_i(θ) = −β·θ.
pub fn scalar_linear_shift(
    db: Arc<FiniteDatabase>,
    beta: f64,
) -> Result<FiniteDatabaseShift<impl Fn(&Sample, usize, &ParamVector) -> Sample + Send + Sync>> {
    FiniteDatabaseShift::new(db, beta, move |record, _, theta| {
        Sample::Point(record.point() - beta * theta[0])
    })
}

impl<F> DecisionDistribution for FiniteDatabaseShift<F>
where
    F: Fn(&Sample, usize, &ParamVector) -> Sample + Send + Sync,
{
    fn sample(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> Sample {
        let i = rng.gen_range(0..self.db.len());
        (self.shift)(&self.db.records()[i], i, theta)
    }

    fn sensitivity(&self) -> f64 {
        self.beta
    }

    fn support(&self, theta: &ParamVector) -> Option<Vec<(Sample, f64)>> {
        let w = 1.0 / self.db.len() as f64;
        Some(
            self.db
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| ((self.shift)(r, i, theta), w))
                .collect(),
        )
    }
}

/// Strategic feature response: a record (x̄, y) is drawn uniformly and its
/// features move to x = x̄ − β·y·θ, the best response of the quadratic
/// utility −y⟨θ, x⟩ − ‖x − x̄‖²/(2β). Only positive-label records move.
pub struct StrategicFeatureShift {
    db: Arc<FiniteDatabase>,
    beta: f64,
    dim: usize,
}

impl StrategicFeatureShift {
    pub fn new(db: Arc<FiniteDatabase>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!(
                "sensitivity must be nonnegative, got {beta}"
            )));
        }
        let dim = match db.records().first() {
            Some(Sample::Labeled { x, .. }) => x.len(),
            _ => {
                return Err(Error::invalid(
                    "strategic shift needs labeled (x, y) records",
                ))
            }
        };
        for r in db.records() {
            match r {
                Sample::Labeled { x, .. } if x.len() == dim => {}
                _ => {
                    return Err(Error::invalid(
                        "strategic shift needs labeled records of equal dimension",
                    ))
                }
            }
        }
        Ok(StrategicFeatureShift { db, beta, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn respond(&self, record: &Sample, theta: &ParamVector) -> Sample {
        match record {
            Sample::Labeled { x, y } => {
                if *y {
                    let shifted: Vec<f64> = x
                        .iter()
                        .zip(theta.as_slice())
                        .map(|(xi, ti)| xi - self.beta * ti)
                        .collect();
                    Sample::Labeled { x: shifted, y: true }
                } else {
                    record.clone()
                }
            }
            Sample::Point(_) => unreachable!("validated at construction"),
        }
    }
}

impl DecisionDistribution for StrategicFeatureShift {
    fn sample(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> Sample {
        debug_assert_eq!(theta.dim(), self.dim);
        let i = rng.gen_range(0..self.db.len());
        self.respond(&self.db.records()[i], theta)
    }

    fn sensitivity(&self) -> f64 {
        self.beta
    }

    fn support(&self, theta: &ParamVector) -> Option<Vec<(Sample, f64)>> {
        let w = 1.0 / self.db.len() as f64;
        Some(
            self.db
                .records()
                .iter()
                .map(|r| (self.respond(r, theta), w))
                .collect(),
        )
    }
}

/// Two fixed atoms whose mixture weight depends on θ:
/// P(z_high) = clamp(p0 + slope·θ, 0, 1).
///
/// The atom locations never move, so the total-variation distance between
/// D(θ) and D(θ′) is |P(θ) − P(θ′)| ≤ |slope|·|θ − θ′|: a family that is
/// Lipschitz in total variation with β = |slope|, as the non-convex analysis
/// requires.
#[derive(Debug, Clone)]
pub struct TwoPointWeightShift {
    z_low: f64,
    z_high: f64,
    p0: f64,
    slope: f64,
}

impl TwoPointWeightShift {
    pub fn new(z_low: f64, z_high: f64, p0: f64, slope: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p0) {
            return Err(Error::invalid(format!(
                "base weight must lie in [0, 1], got {p0}"
            )));
        }
        if !z_low.is_finite() || !z_high.is_finite() || !slope.is_finite() {
            return Err(Error::invalid("atoms and slope must be finite"));
        }
        Ok(TwoPointWeightShift {
            z_low,
            z_high,
            p0,
            slope,
        })
    }

    fn weight_high(&self, theta: &ParamVector) -> f64 {
        (self.p0 + self.slope * theta[0]).clamp(0.0, 1.0)
    }
}

impl DecisionDistribution for TwoPointWeightShift {
    fn sample(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> Sample {
        let p = self.weight_high(theta);
        let high = rng.gen_bool(p);
        Sample::Point(if high { self.z_high } else { self.z_low })
    }

    fn sensitivity(&self) -> f64 {
        self.slope.abs()
    }

    fn support(&self, theta: &ParamVector) -> Option<Vec<(Sample, f64)>> {
        let p = self.weight_high(theta);
        Some(vec![
            (Sample::Point(self.z_low), 1.0 - p),
            (Sample::Point(self.z_high), p),
        ])
    }
}

/// Exact E_{Z~D(θ)}[ℓ(θ; Z)] over an enumerable support.
pub fn expected_loss(
    dist: &dyn DecisionDistribution,
    loss: &dyn Loss,
    theta: &ParamVector,
) -> Result<f64> {
    let support = dist.support(theta).ok_or_else(|| {
        Error::Unsupported("distribution support is not enumerable".into())
    })?;
    Ok(support
        .iter()
        .map(|(z, p)| p * loss.loss(theta.as_slice(), z))
        .sum())
}

/// Exact E_{Z~D(θ)}[∇ℓ(θ; Z)] over an enumerable support.
pub fn expected_gradient(
    dist: &dyn DecisionDistribution,
    loss: &dyn Loss,
    theta: &ParamVector,
) -> Result<Vec<f64>> {
    let support = dist.support(theta).ok_or_else(|| {
        Error::Unsupported("distribution support is not enumerable".into())
    })?;
    let mut acc = vec![0.0; loss.dim()];
    let mut grad = vec![0.0; loss.dim()];
    for (z, p) in &support {
        loss.grad_into(theta.as_slice(), z, &mut grad);
        for (a, g) in acc.iter_mut().zip(grad.iter()) {
            *a += p * g;
        }
    }
    Ok(acc)
}

/// Exact E_{Z~D(θ)}[clip_c(∇ℓ(θ; Z))] over an enumerable support, to machine
/// precision. Errors with `Unsupported` when the support is unavailable so
/// callers can fall back to Monte-Carlo.
pub fn exact_expected_clipped_grad(
    dist: &dyn DecisionDistribution,
    loss: &dyn Loss,
    theta: &ParamVector,
    clip_threshold: f64,
) -> Result<Vec<f64>> {
    let support = dist.support(theta).ok_or_else(|| {
        Error::Unsupported("distribution support is not enumerable".into())
    })?;
    let mut acc = vec![0.0; loss.dim()];
    let mut grad = vec![0.0; loss.dim()];
    for (z, p) in &support {
        loss.grad_into(theta.as_slice(), z, &mut grad);
        clip_in_place(&mut grad, clip_threshold)?;
        for (a, g) in acc.iter_mut().zip(grad.iter()) {
            *a += p * g;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::QuadraticScalarLoss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta(v: f64) -> ParamVector {
        ParamVector::scalar(v).unwrap()
    }

    #[test]
    fn bernoulli_support_at_origin() {
        let d = BernoulliLinearShift::new(0.2, 1.5, 0.3).unwrap();
        let s = d.support(&theta(0.0)).unwrap();
        assert_eq!(s[0], (Sample::Point(0.0), 0.8));
        assert_eq!(s[1], (Sample::Point(1.5), 0.2));
    }

    #[test]
    fn bernoulli_support_shifted() {
        let d = BernoulliLinearShift::new(0.1, 1.0, 0.01).unwrap();
        let s = d.support(&theta(5.0)).unwrap();
        match (&s[0].0, &s[1].0) {
            (Sample::Point(a), Sample::Point(b)) => {
                assert!((a + 0.05).abs() < 1e-15);
                assert!((b - 0.95).abs() < 1e-15);
            }
            _ => panic!("scalar support expected"),
        }
        assert!((s[0].1 - 0.9).abs() < 1e-15);
        assert!((s[1].1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_rejects_bad_p() {
        assert!(BernoulliLinearShift::new(0.0, 1.0, 0.0).is_err());
        assert!(BernoulliLinearShift::new(0.5, 1.0, 0.0).is_err());
        assert!(BernoulliLinearShift::new(0.7, 1.0, 0.0).is_err());
    }

    #[test]
    fn bernoulli_empirical_mean_matches_analytic() {
        let d = BernoulliLinearShift::new(0.1, 1.0, 0.01).unwrap();
        let t = theta(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += d.sample(&t, &mut rng).point();
        }
        let mean = sum / n as f64;
        // E[Z] = b p - beta theta = 0.05; atom variance 0.09, so three
        // standard errors of the mean is ~9e-4.
        let analytic = 0.1 - 0.05;
        let se = (0.09f64 / n as f64).sqrt();
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "mean {mean} vs {analytic} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn support_probabilities_sum_to_one() {
        let d = BernoulliLinearShift::new(0.37, 2.0, 1.0).unwrap();
        let total: f64 = d.support(&theta(1.23)).unwrap().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(d.support(&theta(1.23)).unwrap().iter().all(|(_, p)| *p >= 0.0));
    }

    // Chi-square goodness of fit of 1e5 draws against the declared support.
    // Critical value for 1 degree of freedom at p = 0.001 is 10.828.
    #[test]
    fn draws_follow_support_chi_square() {
        let d = BernoulliLinearShift::new(0.1, 1.0, 0.0).unwrap();
        let t = theta(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000usize;
        let mut high = 0usize;
        for _ in 0..n {
            if d.sample(&t, &mut rng).point() > 0.5 {
                high += 1;
            }
        }
        let expected_high = 0.1 * n as f64;
        let expected_low = 0.9 * n as f64;
        let low = (n - high) as f64;
        let chi2 = (high as f64 - expected_high).powi(2) / expected_high
            + (low - expected_low).powi(2) / expected_low;
        assert!(chi2 < 10.828, "chi-square statistic {chi2}");
    }

    #[test]
    fn identity_shift_resamples_database() {
        let db = Arc::new(
            FiniteDatabase::new(vec![Sample::Point(0.0), Sample::Point(1.0)]).unwrap(),
        );
        let d = identity_resampler(db).unwrap();
        let s = d.support(&theta(3.0)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], (Sample::Point(0.0), 0.5));
        assert_eq!(s[1], (Sample::Point(1.0), 0.5));
    }

    #[test]
    fn linear_shift_support_enumeration() {
        let db = Arc::new(
            FiniteDatabase::new(vec![Sample::Point(0.0), Sample::Point(1.0)]).unwrap(),
        );
        let beta = 0.25;
        let d = scalar_linear_shift(db, beta).unwrap();
        let s = d.support(&theta(2.0)).unwrap();
        assert_eq!(s[0], (Sample::Point(-0.5), 0.5));
        assert_eq!(s[1], (Sample::Point(0.5), 0.5));
    }

    #[test]
    fn uniform_index_frequencies() {
        let m = 5;
        let db = Arc::new(
            FiniteDatabase::new((0..m).map(|i| Sample::Point(i as f64)).collect()).unwrap(),
        );
        let d = identity_resampler(db).unwrap();
        let t = theta(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000usize;
        let mut counts = vec![0usize; m];
        for _ in 0..n {
            counts[d.sample(&t, &mut rng).point() as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn empty_database_is_rejected() {
        assert!(FiniteDatabase::new(vec![]).is_err());
    }

    #[test]
    fn strategic_shift_examples() {
        let db = Arc::new(
            FiniteDatabase::new(vec![
                Sample::Labeled { x: vec![1.0, 1.0], y: true },
                Sample::Labeled { x: vec![0.5, -0.5], y: false },
            ])
            .unwrap(),
        );
        let d = StrategicFeatureShift::new(db.clone(), 0.1).unwrap();
        let t = ParamVector::new(vec![2.0, 0.0]).unwrap();
        let s = d.support(&t).unwrap();
        match &s[0].0 {
            Sample::Labeled { x, y } => {
                assert!(*y);
                assert!((x[0] - 0.8).abs() < 1e-15);
                assert!((x[1] - 1.0).abs() < 1e-15);
            }
            _ => panic!(),
        }
        // Negative-label records never move.
        assert_eq!(s[1].0, db.records()[1]);

        // beta = 0 is the identity for every record.
        let id = StrategicFeatureShift::new(db.clone(), 0.0).unwrap();
        let s = id.support(&t).unwrap();
        assert_eq!(s[0].0, db.records()[0]);
        assert_eq!(s[1].0, db.records()[1]);
    }

    #[test]
    fn strategic_shift_rejects_negative_beta_and_scalars() {
        let labeled = Arc::new(
            FiniteDatabase::new(vec![Sample::Labeled { x: vec![1.0], y: true }]).unwrap(),
        );
        assert!(StrategicFeatureShift::new(labeled, -0.1).is_err());
        let scalars =
            Arc::new(FiniteDatabase::new(vec![Sample::Point(1.0)]).unwrap());
        assert!(StrategicFeatureShift::new(scalars, 0.1).is_err());
    }

    #[test]
    fn weight_shift_tv_sensitivity() {
        let d = TwoPointWeightShift::new(-1.0, 1.0, 0.3, 0.05).unwrap();
        assert_eq!(d.sensitivity(), 0.05);
        let s0 = d.support(&theta(0.0)).unwrap();
        let s1 = d.support(&theta(2.0)).unwrap();
        // TV distance between the two supports is the weight difference.
        let tv = (s0[1].1 - s1[1].1).abs();
        assert!((tv - 0.1).abs() < 1e-12);
        assert!(tv <= d.sensitivity() * 2.0 + 1e-12);
    }

    #[test]
    fn clipped_expectation_with_inactive_threshold_equals_plain_mean() {
        let loss = QuadraticScalarLoss::new(10.0).unwrap();
        let d = BernoulliLinearShift::new(0.1, 1.0, 0.01).unwrap();
        let t = theta(0.7);
        let clipped = exact_expected_clipped_grad(&d, &loss, &t, 1e9).unwrap();
        let plain = expected_gradient(&d, &loss, &t).unwrap();
        assert!((clipped[0] - plain[0]).abs() < 1e-12);
    }

    #[test]
    fn clipped_expectation_vanishes_at_fixed_point() {
        // theta_inf = -p c / ((1-p)(1-a beta)) zeroes the clipped mean.
        let (p, a, b, beta, c) = (0.1, 10.0, 1.0, 0.01, 1.0);
        let loss = QuadraticScalarLoss::new(a).unwrap();
        let d = BernoulliLinearShift::new(p, b, beta).unwrap();
        let t_inf = theta(-p * c / ((1.0 - p) * (1.0 - a * beta)));
        let h = exact_expected_clipped_grad(&d, &loss, &t_inf, c).unwrap();
        assert!(h[0].abs() <= 1e-12, "residual {}", h[0]);
    }

    #[test]
    fn symmetric_two_point_gradients_cancel() {
        // Atoms at ±z with equal weight and theta = 0 give ±g; any clip level
        // preserves the symmetry, so the expectation is exactly zero.
        let loss = QuadraticScalarLoss::new(1.0).unwrap();
        let d = TwoPointWeightShift::new(-3.0, 3.0, 0.5, 0.0).unwrap();
        let h = exact_expected_clipped_grad(&d, &loss, &theta(0.0), 0.5).unwrap();
        assert_eq!(h[0], 0.0);
    }

    #[test]
    fn monte_carlo_matches_exact_clipped_expectation() {
        let loss = QuadraticScalarLoss::new(10.0).unwrap();
        let d = BernoulliLinearShift::new(0.1, 1.0, 0.01).unwrap();
        let t = theta(0.5);
        let c = 1.0;
        let exact = exact_expected_clipped_grad(&d, &loss, &t, c).unwrap()[0];

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = d.sample(&t, &mut rng);
            let g = crate::vector::clip(&loss.grad(t.as_slice(), &z), c).unwrap()[0];
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 4.0 * se,
            "mc {mean} vs exact {exact} (4se = {})",
            4.0 * se
        );
    }

    // Wasserstein-1 distance between 1-d discrete laws via the quantile
    // coupling: integral of |F^{-1} - G^{-1}|.
    fn w1_discrete(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        b.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (mut ia, mut ib) = (0usize, 0usize);
        let (mut ra, mut rb) = (a[0].1, b[0].1);
        let mut total = 0.0;
        loop {
            let mass = ra.min(rb);
            total += mass * (a[ia].0 - b[ib].0).abs();
            ra -= mass;
            rb -= mass;
            if ra <= 1e-15 {
                ia += 1;
                if ia >= a.len() {
                    break;
                }
                ra = a[ia].1;
            }
            if rb <= 1e-15 {
                ib += 1;
                if ib >= b.len() {
                    break;
                }
                rb = b[ib].1;
            }
        }
        total
    }

    #[test]
    fn bernoulli_shift_is_exactly_wasserstein_lipschitz() {
        let beta = 0.37;
        let d = BernoulliLinearShift::new(0.2, 1.0, beta).unwrap();
        for (t1, t2) in [(0.0, 1.0), (-2.0, 3.5), (0.1, 0.1000001)] {
            let s1: Vec<(f64, f64)> = d
                .support(&theta(t1))
                .unwrap()
                .into_iter()
                .map(|(z, p)| (z.point(), p))
                .collect();
            let s2: Vec<(f64, f64)> = d
                .support(&theta(t2))
                .unwrap()
                .into_iter()
                .map(|(z, p)| (z.point(), p))
                .collect();
            let w1 = w1_discrete(&s1, &s2);
            let expected = beta * (t1 - t2).abs();
            assert!(
                (w1 - expected).abs() <= 1e-9 * (1.0 + expected),
                "w1 {w1} vs beta|dt| {expected}"
            );
        }
    }

    #[test]
    fn csv_loader_roundtrip() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();

        let scalar_path = dir.path().join("scalars.csv");
        let mut f = std::fs::File::create(&scalar_path).unwrap();
        writeln!(f, "z\n0.5\n-1.25\n3.0").unwrap();
        let db = FiniteDatabase::from_csv(&scalar_path).unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.records()[1], Sample::Point(-1.25));
        assert!((db.scalar_mean().unwrap() - 0.75).abs() < 1e-15);

        let labeled_path = dir.path().join("labeled.csv");
        let mut f = std::fs::File::create(&labeled_path).unwrap();
        writeln!(f, "x1,x2,y\n0.5,1.5,1\n-0.25,2.0,0").unwrap();
        let db = FiniteDatabase::from_csv(&labeled_path).unwrap();
        assert_eq!(
            db.records()[0],
            Sample::Labeled { x: vec![0.5, 1.5], y: true }
        );

        let bad_path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad_path).unwrap();
        writeln!(f, "x,y\n1.0,2.0").unwrap();
        assert!(FiniteDatabase::from_csv(&bad_path).is_err());
    }
}
