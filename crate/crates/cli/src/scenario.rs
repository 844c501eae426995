//! Scenario files: a versioned JSON description of one experiment family.
//!
//! Experiments are referenced by preset name plus a JSON patch that is
//! merged field by field into the preset, so scenario files only spell out
//! what differs.

use std::path::Path;

use pwdpd_core::complexity::ComplexityParams;
use pwdpd_core::pipeline::{ExperimentConfig, Method, PartitionMethod};
use pwdpd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Scenarios compiled into the binary.
pub const BUILTIN: &[(&str, &str)] = &[
    ("array8-deep", include_str!("../scenarios/array8-deep.json")),
    ("array8-backoff", include_str!("../scenarios/array8-backoff.json")),
    ("doherty-n3", include_str!("../scenarios/doherty-n3.json")),
    ("linear-sanity", include_str!("../scenarios/linear-sanity.json")),
    ("learning-rules", include_str!("../scenarios/learning-rules.json")),
    ("powersweep", include_str!("../scenarios/powersweep.json")),
    ("beam-steering", include_str!("../scenarios/beam-steering.json")),
    ("pruning", include_str!("../scenarios/pruning.json")),
    ("partition-demo", include_str!("../scenarios/partition-demo.json")),
    ("complexity-reference", include_str!("../scenarios/complexity-reference.json")),
];

pub const EXPERIMENT_PRESETS: &[&str] = &["array8-deep", "doherty-n3", "linear-sanity"];

pub fn experiment_preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "array8-deep" => Ok(ExperimentConfig::array8_deep()),
        "doherty-n3" => Ok(ExperimentConfig::doherty_n3()),
        "linear-sanity" => Ok(ExperimentConfig::linear_sanity()),
        other => Err(Error::config(format!(
            "unknown experiment preset '{other}' (known: {})",
            EXPERIMENT_PRESETS.join(", ")
        ))),
    }
}

/// Recursive merge; objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if v.is_object() && slot.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRef {
    pub preset: String,
    #[serde(default)]
    pub overrides: Value,
}

impl ExperimentRef {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: name.to_string(),
            overrides: Value::Null,
        }
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.resolve_with(&Value::Null)
    }

    /// Preset, then the scenario overrides, then `extra`.
    pub fn resolve_with(&self, extra: &Value) -> Result<ExperimentConfig> {
        let mut v = serde_json::to_value(experiment_preset(&self.preset)?)?;
        merge(&mut v, &self.overrides);
        merge(&mut v, extra);
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::config(format!("experiment: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub method: Method,
    #[serde(default)]
    pub overrides: Value,
}

impl RunSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.label().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Methods side by side on one plant.
    Compare { experiment: ExperimentRef, runs: Vec<RunSpec> },
    PowerSweep {
        experiment: ExperimentRef,
        drive_db: Vec<f64>,
        methods: Vec<Method>,
    },
    /// PW-CL trained at the configured angle, then evaluated while steering.
    Steering {
        experiment: ExperimentRef,
        steer_deg: Vec<f64>,
        #[serde(default)]
        coupling_strength: Vec<f64>,
    },
    Pruning {
        experiment: ExperimentRef,
        thresholds_db: Vec<f64>,
    },
    Partition {
        experiment: ExperimentRef,
        methods: Vec<PartitionMethod>,
    },
    Complexity {
        params: ComplexityParams,
        #[serde(default)]
        uncapped: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        match v.get("schema_version").and_then(Value::as_u64) {
            Some(n) if n == u64::from(SCHEMA_VERSION) => {}
            Some(n) => return Err(Error::config(format!("schema_version {n} unsupported (expected {SCHEMA_VERSION})"))),
            None => return Err(Error::config("scenario lacks schema_version")),
        }
        let s: Scenario = serde_json::from_value(v).map_err(|e| Error::config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn builtin(name: &str) -> Option<Result<Self>> {
        BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| Self::parse(text))
    }

    /// Built-in name or path to a JSON file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(name_or_path) {
            return s;
        }
        let p = Path::new(name_or_path);
        if !p.exists() {
            return Err(Error::config(format!("'{name_or_path}' is neither a built-in scenario nor a file")));
        }
        Self::parse(&std::fs::read_to_string(p)?)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("invalid scenario name '{}'", self.name)));
        }
        match &self.kind {
            ScenarioKind::Compare { experiment, runs } => {
                if runs.is_empty() {
                    return Err(Error::config("compare scenario needs at least one run"));
                }
                let mut labels: Vec<String> = runs.iter().map(RunSpec::label).collect();
                labels.sort();
                labels.dedup();
                if labels.len() != runs.len() {
                    return Err(Error::config("run labels must be unique"));
                }
                for r in runs {
                    experiment.resolve_with(&r.overrides)?;
                }
            }
            ScenarioKind::PowerSweep {
                experiment,
                drive_db,
                methods,
            } => {
                experiment.resolve()?;
                if drive_db.is_empty() || methods.is_empty() {
                    return Err(Error::config("power sweep needs drive levels and methods"));
                }
                if drive_db.iter().any(|d| !d.is_finite()) {
                    return Err(Error::config("drive levels must be finite"));
                }
            }
            ScenarioKind::Steering { experiment, steer_deg, .. } => {
                experiment.resolve()?;
                if steer_deg.is_empty() || steer_deg.iter().any(|a| !(a.abs() < 90.0)) {
                    return Err(Error::config("steering angles must lie in (-90, 90)"));
                }
            }
            ScenarioKind::Pruning {
                experiment,
                thresholds_db,
            } => {
                experiment.resolve()?;
                if thresholds_db.is_empty() {
                    return Err(Error::config("pruning scenario needs thresholds"));
                }
            }
            ScenarioKind::Partition { experiment, methods } => {
                experiment.resolve()?;
                if methods.is_empty() {
                    return Err(Error::config("partition scenario needs methods"));
                }
            }
            ScenarioKind::Complexity { params, .. } => params.validate()?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_recursive() {
        let mut a = json!({"x": {"y": 1, "z": 2}, "w": [1, 2]});
        merge(&mut a, &json!({"x": {"y": 5}, "w": [3]}));
        assert_eq!(a, json!({"x": {"y": 5, "z": 2}, "w": [3]}));
    }

    #[test]
    fn every_builtin_parses() {
        for (name, _) in BUILTIN {
            let s = Scenario::builtin(name).unwrap().unwrap();
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn overrides_reach_the_config() {
        let r = ExperimentRef {
            preset: "array8-deep".into(),
            overrides: json!({"plant": {"drive_db": -2.0}, "learn": {"mu": 0.3}}),
        };
        let c = r.resolve().unwrap();
        assert_eq!(c.plant.drive_db, Some(-2.0));
        assert_eq!(c.learn.mu, 0.3);
        assert_eq!(c.basis, ExperimentConfig::array8_deep().basis);
    }

    #[test]
    fn wrong_schema_version_is_a_config_error() {
        let e = Scenario::parse(r#"{"schema_version": 9, "name": "x", "kind": "complexity"}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        let e = Scenario::parse(r#"{"name": "x"}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
    }

    #[test]
    fn unknown_field_value_is_rejected() {
        let r = ExperimentRef {
            preset: "array8-deep".into(),
            overrides: json!({"learn": {"mu": "fast"}}),
        };
        assert!(matches!(r.resolve(), Err(Error::Config(_))));
    }
}
