//! Experiment configuration: a TOML file with one section per module, plus
//! dotted-path overrides.
//!
//! Unknown keys anywhere in the file or in an override are hard errors, so a
//! typo like `optimzer.clip` fails loudly instead of being ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_thin() -> u64 {
    100
}

fn default_sigma_dp() -> f64 {
    0.0
}

fn default_oracle() -> OracleSection {
    OracleSection {
        kind: "none".into(),
        tol: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub loss: LossSection,
    pub distribution: DistributionSection,
    pub optimizer: OptimizerSection,
    #[serde(default = "default_oracle")]
    pub oracle: OracleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub algorithm: crate::optimizers::Algorithm,
    /// Iteration count T.
    pub steps: u64,
    pub trials: u64,
    pub seed: u64,
    /// Record every `thin`-th step.
    #[serde(default = "default_thin")]
    pub thin: u64,
    pub theta0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    /// "quadratic" | "logistic" | "bounded_nonconvex"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Regularization weight; defaults to 100/m for database-backed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    /// "bernoulli_shift" | "weight_shift" | "synthetic_credit" | "csv"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Synthetic dataset size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Seed for synthetic data generation; defaults to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// Clipping threshold: c for the clipped algorithm, C1 for the
    /// error-feedback one. Must be absent for plain sgd.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    /// Error-accumulator threshold C2 (error-feedback only); defaults to C1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_clip: Option<f64>,
    #[serde(default = "default_sigma_dp")]
    pub sigma_dp: f64,
    /// Noise multiplier for the error-feedback algorithm; default √96.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_multiplier: Option<f64>,
    /// Box bounds; omit both for an unconstrained run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub schedule: ScheduleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// "constant" | "polynomial" | "optimal"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<f64>,
    /// Gradient-bound G used by the optimal step-size formula.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// "none" | "closed_form" | "rrm"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub delta: f64,
    /// Database size m entering the noise formula.
    pub samples: u64,
    /// Gradient-bound G for threshold calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// "bias" | "privacy"
    pub kind: String,
    pub grid: Vec<f64>,
}

/// User-supplied constants for bound-curve evaluation. The error-feedback
/// distance bound cannot run without them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_bound: Option<f64>,
    /// B in E‖∇ℓ(θ; Z)‖² ≤ G² + B²‖θ − θ_PS‖².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    /// M, the error-accumulator bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_b_bar: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate_shape()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Parses a config file and applies `key=value` overrides (dotted paths)
    /// before schema validation, so unknown override keys fail like unknown
    /// file keys.
    pub fn load(path: &std::path::Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut doc: toml::Table =
            toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let config: ExperimentConfig = toml::Table::try_into(doc)
            .map_err(|e| Error::config(format!("after overrides: {e}")))?;
        config.validate_shape()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Cheap structural checks that do not need any resolution.
    fn validate_shape(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(Error::config("experiment.trials must be >= 1"));
        }
        if e.steps == 0 {
            return Err(Error::config("experiment.steps must be >= 1"));
        }
        if e.thin == 0 {
            return Err(Error::config("experiment.thin must be >= 1"));
        }
        if e.theta0.is_empty() {
            return Err(Error::config("experiment.theta0 must be non-empty"));
        }
        match (self.optimizer.lower, self.optimizer.upper) {
            (Some(lo), Some(hi)) if lo > hi => {
                return Err(Error::config("optimizer.lower exceeds optimizer.upper"))
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::config(
                    "optimizer.lower and optimizer.upper must be given together",
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses an override value: TOML scalar syntax first (numbers, booleans,
/// arrays), bare text as a string.
fn parse_override_value(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    if let Ok(table) = toml::from_str::<toml::Table>(&wrapped) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(value.to_string())
}

fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::config(format!("override {key:?} descends into a non-table value"))
            })?;
    }
    table.insert(
        parts[parts.len() - 1].to_string(),
        parse_override_value(value),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUADRATIC: &str = r#"
        [experiment]
        algorithm = "pcsgd"
        steps = 1000
        trials = 4
        seed = 7
        thin = 100
        theta0 = [5.0]

        [loss]
        kind = "quadratic"
        a = 10.0

        [distribution]
        kind = "bernoulli_shift"
        p = 0.1
        b = 1.0
        beta = 0.01

        [optimizer]
        clip = 1.0
        lower = -10.0
        upper = 10.0

        [optimizer.schedule]
        kind = "polynomial"
        a0 = 10.0
        a1 = 100.0

        [oracle]
        kind = "closed_form"
    "#;

    #[test]
    fn parses_reference_config() {
        let config = ExperimentConfig::from_toml_str(QUADRATIC).unwrap();
        assert_eq!(config.experiment.steps, 1000);
        assert_eq!(config.optimizer.sigma_dp, 0.0);
        assert_eq!(config.oracle.kind, "closed_form");
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let bad = QUADRATIC.replace("[optimizer]", "[optimzer]");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("optimzer"), "got: {err}");

        let bad = format!("{QUADRATIC}\n[experiment.extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn overrides_apply_and_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, QUADRATIC).unwrap();

        let config = ExperimentConfig::load(
            &path,
            &[("optimizer.clip".into(), "2.5".into()), ("experiment.seed".into(), "99".into())],
        )
        .unwrap();
        assert_eq!(config.optimizer.clip, Some(2.5));
        assert_eq!(config.experiment.seed, 99);

        let err = ExperimentConfig::load(&path, &[("optimzer.clip".into(), "1".into())])
            .unwrap_err()
            .to_string();
        assert!(err.contains("optimzer"), "got: {err}");
    }

    #[test]
    fn roundtrips_through_toml() {
        let config = ExperimentConfig::from_toml_str(QUADRATIC).unwrap();
        let text = config.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.experiment.seed, config.experiment.seed);
        assert_eq!(back.loss.a, config.loss.a);
    }

    #[test]
    fn rejects_half_open_region() {
        let bad = QUADRATIC.replace("upper = 10.0", "");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }
}
