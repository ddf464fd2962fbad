//! Synthetic strategic-classification data: Gaussian class-conditional
//! features with a configurable (small) positive rate, standing in for the
//! credit-scoring dataset the logistic experiments are modeled on.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::FiniteDatabase;
use crate::error::{Error, Result};
use crate::losses::Sample;
use crate::rng::TrialRng;

/// Parameters of the generator. Labels are Bernoulli(positive_rate);
/// features are N(0, scale²·I) for negatives and shifted by
/// `separation/√d · 1` for positives, so the classes are linearly separable
/// in expectation along the all-ones direction.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticCredit {
    pub m: u64,
    pub dim: usize,
    pub positive_rate: f64,
    pub feature_scale: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticCredit {
    fn default() -> Self {
        SyntheticCredit {
            m: 1000,
            dim: 10,
            // Mirrors the heavy class imbalance of the credit dataset.
            positive_rate: 0.066,
            feature_scale: 1.0,
            separation: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticCredit {
    pub fn generate(&self) -> Result<FiniteDatabase> {
        if self.m == 0 || self.dim == 0 {
            return Err(Error::invalid("need m >= 1 and dim >= 1"));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::invalid("positive_rate must lie in (0, 1)"));
        }
        if !(self.feature_scale > 0.0) {
            return Err(Error::invalid("feature_scale must be positive"));
        }
        let mut rng = TrialRng::new(self.seed, u64::MAX);
        let rng = rng.aux();
        let shift = self.separation / (self.dim as f64).sqrt();
        let mut records = Vec::with_capacity(self.m as usize);
        let mut positives = 0u64;
        for _ in 0..self.m {
            let y = rng.gen_bool(self.positive_rate);
            let x: Vec<f64> = (0..self.dim)
                .map(|_| {
                    let n: f64 = rng.sample(StandardNormal);
                    self.feature_scale * n + if y { shift } else { 0.0 }
                })
                .collect();
            if y {
                positives += 1;
            }
            records.push(Sample::Labeled { x, y });
        }
        // Degenerate draws (no positives at all) would make the logistic
        // experiments vacuous; resample the last record to guarantee one.
        if positives == 0 {
            if let Some(Sample::Labeled { x, y }) = records.last_mut() {
                *y = true;
                for v in x.iter_mut() {
                    *v += shift;
                }
            }
        }
        FiniteDatabase::new(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_imbalanced() {
        let gen = SyntheticCredit {
            m: 2000,
            dim: 5,
            seed: 11,
            ..Default::default()
        };
        let a = gen.generate().unwrap();
        let b = gen.generate().unwrap();
        assert_eq!(a.records(), b.records());
        let positives = a
            .records()
            .iter()
            .filter(|r| matches!(r, Sample::Labeled { y: true, .. }))
            .count();
        let rate = positives as f64 / 2000.0;
        assert!(rate > 0.03 && rate < 0.12, "positive rate {rate}");
    }

    #[test]
    fn classes_are_separated_along_the_ones_direction() {
        let gen = SyntheticCredit {
            m: 4000,
            dim: 4,
            separation: 2.0,
            seed: 3,
            ..Default::default()
        };
        let db = gen.generate().unwrap();
        let mut pos_mean = 0.0;
        let mut neg_mean = 0.0;
        let (mut np, mut nn) = (0.0, 0.0);
        for r in db.records() {
            if let Sample::Labeled { x, y } = r {
                let proj: f64 = x.iter().sum::<f64>() / (x.len() as f64).sqrt();
                if *y {
                    pos_mean += proj;
                    np += 1.0;
                } else {
                    neg_mean += proj;
                    nn += 1.0;
                }
            }
        }
        pos_mean /= np;
        neg_mean /= nn;
        assert!(pos_mean - neg_mean > 1.0, "separation {}", pos_mean - neg_mean);
    }
}
