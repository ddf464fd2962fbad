//! Dense parameter vectors, the gradient clipping operator, and Euclidean
//! projection onto axis-aligned boxes.
//!
//! Clipping rescales a vector to Euclidean norm at most `c` while keeping its
//! direction: `clip_c(g) = min{1, c/‖g‖₂}·g`. Projection is coordinate-wise
//! clamping, which for a box is the exact Euclidean projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense model vector θ ∈ R^d.
///
/// Entries are finite by construction; the dimension is fixed for the life of
/// a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(ParamVector(values))
    }

    /// All-zero vector of dimension `d`.
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    /// Scalar convenience constructor (d = 1).
    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean distance to another vector of the same dimension.
    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.dim(), other.len());
        for (a, b) in self.0.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Vec<f64> {
        v.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `clip_c(g) = min{1, c/‖g‖₂}·g`.
///
/// The result has norm at most `c` and is a nonnegative scalar multiple of
/// `g`; vectors already within the ball (including the zero vector) pass
/// through unchanged, bit for bit.
pub fn clip(g: &[f64], c: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c)?;
    Ok(out)
}

/// In-place variant of [`clip`] for hot loops.
pub fn clip_in_place(g: &mut [f64], c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!(
            "clipping threshold must be positive, got {c}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot clip a non-finite vector"));
    }
    let norm = l2_norm(g);
    if norm > c {
        let scale = c / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// A closed axis-aligned box, or the whole space.
///
/// Unconstrained problems use the [`BoxRegion::unbounded`] sentinel instead
/// of infinite bounds so that no ±∞ ever enters projection arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::invalid("box must have at least one coordinate"));
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid("box bounds must be finite"));
            }
            if lo > hi {
                return Err(Error::invalid(format!(
                    "box lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        Ok(BoxRegion {
            bounds: Some((lower, upper)),
        })
    }

    /// Sentinel for X = R^d (projection is the identity).
    pub fn unbounded() -> Self {
        BoxRegion { bounds: None }
    }

    /// The symmetric box [-r, r]^d.
    pub fn symmetric(r: f64, d: usize) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid("box radius must be positive"));
        }
        Self::new(vec![-r; d], vec![r; d])
    }

    pub fn is_unbounded(&self) -> bool {
        self.bounds.is_none()
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        self.bounds.as_ref().map(|(lo, hi)| (&lo[..], &hi[..]))
    }

    pub fn contains(&self, theta: &ParamVector) -> bool {
        match &self.bounds {
            None => true,
            Some((lo, hi)) => theta
                .as_slice()
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }
}

/// Euclidean projection of θ onto the region: coordinate-wise
/// `median(lower, θ, upper)`. Idempotent and nonexpansive.
pub fn project(theta: &ParamVector, region: &BoxRegion) -> Result<ParamVector> {
    let mut out = theta.clone();
    project_in_place(&mut out, region)?;
    Ok(out)
}

/// In-place variant of [`project`].
pub fn project_in_place(theta: &mut ParamVector, region: &BoxRegion) -> Result<()> {
    match &region.bounds {
        None => Ok(()),
        Some((lo, hi)) => {
            if lo.len() != theta.dim() {
                return Err(Error::DimensionMismatch {
                    expected: lo.len(),
                    got: theta.dim(),
                });
            }
            for (v, (l, h)) in theta.as_mut_slice().iter_mut().zip(lo.iter().zip(hi.iter())) {
                *v = v.clamp(*l, *h);
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_identity_inside_ball() {
        let out = clip(&[0.3, 0.4], 1.0).unwrap();
        assert_eq!(out, vec![0.3, 0.4]);
    }

    #[test]
    fn clip_rescales_to_threshold() {
        let out = clip(&[3.0, 4.0], 1.0).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
        assert!((l2_norm(&out) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clip_fixes_zero_vector() {
        let out = clip(&[0.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn clip_rejects_non_finite() {
        assert!(clip(&[f64::NAN], 1.0).is_err());
        assert!(clip(&[f64::INFINITY, 0.0], 1.0).is_err());
    }

    #[test]
    fn clip_rejects_bad_threshold() {
        assert!(clip(&[1.0], 0.0).is_err());
        assert!(clip(&[1.0], -2.0).is_err());
        assert!(clip(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn project_interior_point_unchanged() {
        let region = BoxRegion::symmetric(10.0, 1).unwrap();
        let theta = ParamVector::scalar(0.5).unwrap();
        assert_eq!(project(&theta, &region).unwrap(), theta);
    }

    #[test]
    fn project_clamps_each_coordinate() {
        let region = BoxRegion::symmetric(10.0, 2).unwrap();
        let theta = ParamVector::new(vec![12.0, -11.0]).unwrap();
        let out = project(&theta, &region).unwrap();
        assert_eq!(out.as_slice(), &[10.0, -10.0]);
    }

    #[test]
    fn project_dimension_mismatch_errors() {
        let region = BoxRegion::symmetric(10.0, 2).unwrap();
        let theta = ParamVector::scalar(1.0).unwrap();
        assert!(matches!(
            project(&theta, &region),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unbounded_region_is_identity() {
        let region = BoxRegion::unbounded();
        let theta = ParamVector::new(vec![1e9, -1e9]).unwrap();
        assert_eq!(project(&theta, &region).unwrap(), theta);
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(BoxRegion::new(vec![1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn clip_norm_never_exceeds_threshold(
            g in proptest::collection::vec(-1e3f64..1e3, 1..6),
            c in 1e-3f64..1e3,
        ) {
            let out = clip(&g, c).unwrap();
            prop_assert!(l2_norm(&out) <= c * (1.0 + 1e-12));
            // Identity exactly when already inside the ball.
            if l2_norm(&g) <= c {
                prop_assert_eq!(&out, &g);
            }
        }

        #[test]
        fn clip_is_positively_collinear(
            g in proptest::collection::vec(-1e2f64..1e2, 1..5),
            c in 1e-2f64..10.0,
            lambda in 1e-2f64..1e2,
        ) {
            let a = clip(&g, c).unwrap();
            let scaled: Vec<f64> = g.iter().map(|v| lambda * v).collect();
            let b = clip(&scaled, c).unwrap();
            // a and b point the same way: their dot product is >= 0 and the
            // cross terms vanish coordinate-wise up to round-off.
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            prop_assert!(dot >= -1e-12);
            let na = l2_norm(&a);
            let nb = l2_norm(&b);
            if na > 1e-9 && nb > 1e-9 {
                let cos = dot / (na * nb);
                prop_assert!((cos - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn projection_nonexpansive_and_idempotent(
            x in proptest::collection::vec(-50.0f64..50.0, 3),
            y in proptest::collection::vec(-50.0f64..50.0, 3),
        ) {
            let region = BoxRegion::symmetric(10.0, 3).unwrap();
            let px = project(&ParamVector::new(x.clone()).unwrap(), &region).unwrap();
            let py = project(&ParamVector::new(y.clone()).unwrap(), &region).unwrap();
            let d_orig: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let d_proj = px.dist_sq(&py).sqrt();
            prop_assert!(d_proj <= d_orig + 1e-12);
            prop_assert_eq!(project(&px, &region).unwrap(), px);
        }
    }
}
