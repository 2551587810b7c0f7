use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Pass iff margin >= -budget.
    Assertion,
    /// Recorded for context; always passes.
    Measurement,
}

/// What a check computes before it is stamped with its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kind: CheckKind,
    pub samples: usize,
    pub measured: Vec<(String, f64)>,
    pub bound: Option<f64>,
    /// None when there was nothing to measure.
    pub margin: Option<f64>,
    pub budget: f64,
    pub note: String,
}

impl Outcome {
    pub fn assertion(samples: usize, margin: f64, budget: f64) -> Self {
        Self {
            kind: CheckKind::Assertion,
            samples,
            measured: Vec::new(),
            bound: None,
            margin: Some(margin),
            budget,
            note: String::new(),
        }
    }

    /// `value <= bound` with rounding budget `budget`.
    pub fn at_most(samples: usize, value: f64, bound: f64, budget: f64) -> Self {
        Self::assertion(samples, bound - value, budget)
            .with_bound(bound)
            .with("value", value)
    }

    /// `value >= bound` with budget `budget`.
    pub fn at_least(samples: usize, value: f64, bound: f64, budget: f64) -> Self {
        Self::assertion(samples, value - bound, budget)
            .with_bound(bound)
            .with("value", value)
    }

    pub fn holds(flag: bool) -> Self {
        Self::assertion(1, if flag { 0.0 } else { -1.0 }, 0.0)
    }

    pub fn measurement() -> Self {
        Self {
            kind: CheckKind::Measurement,
            samples: 0,
            measured: Vec::new(),
            bound: None,
            margin: None,
            budget: 0.0,
            note: String::new(),
        }
    }

    /// A sampled check whose sample count was scaled to zero.
    pub fn no_samples() -> Self {
        Self {
            note: "warning: zero samples".into(),
            kind: CheckKind::Assertion,
            ..Self::measurement()
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.measured.push((key.to_string(), value));
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn passes(&self) -> bool {
        match (self.kind, self.margin) {
            (CheckKind::Measurement, _) | (_, None) => true,
            (CheckKind::Assertion, Some(m)) => m.is_finite() && m >= -self.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub suite: String,
    pub check: String,
    pub config_hash: String,
    pub inputs_digest: String,
    pub kind: CheckKind,
    pub samples: usize,
    /// Non-finite values are written as null.
    pub measured: BTreeMap<String, Option<f64>>,
    pub bound: Option<f64>,
    pub margin: Option<f64>,
    pub budget: f64,
    pub pass: bool,
    pub note: String,
    /// Kept out of reports.json so that it stays reproducible; see metadata.json.
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl DeficitReport {
    pub fn new(
        suite: &str,
        check: &str,
        config_hash: &str,
        inputs_digest: String,
        outcome: Outcome,
        wall_time_s: f64,
    ) -> Self {
        let pass = outcome.passes();
        Self {
            suite: suite.into(),
            check: check.into(),
            config_hash: config_hash.into(),
            inputs_digest,
            kind: outcome.kind,
            samples: outcome.samples,
            measured: outcome.measured.into_iter().map(|(k, v)| (k, finite(v))).collect(),
            bound: outcome.bound.and_then(finite),
            margin: outcome.margin.map(|m| if m.is_nan() { f64::NEG_INFINITY } else { m }).and_then(finite),
            budget: outcome.budget,
            pass,
            note: outcome.note,
            wall_time_s,
        }
    }

    /// A check that returned an error.
    pub fn failed(suite: &str, check: &str, config_hash: &str, inputs_digest: String, err: &CliError, wall: f64) -> Self {
        Self {
            suite: suite.into(),
            check: check.into(),
            config_hash: config_hash.into(),
            inputs_digest,
            kind: CheckKind::Assertion,
            samples: 0,
            measured: BTreeMap::new(),
            bound: None,
            margin: None,
            budget: 0.0,
            pass: false,
            note: format!("error: {err}"),
            wall_time_s: wall,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// reports.json and summary.csv, rewritten in full after every suite.
pub fn write_reports(dir: &Path, reports: &[DeficitReport]) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(reports).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join("reports.json"), json + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["config_hash", "suite", "check", "kind", "samples", "min_margin", "budget", "pass"])?;
    for r in reports {
        let kind = match r.kind {
            CheckKind::Assertion => "assertion",
            CheckKind::Measurement => "measurement",
        };
        w.write_record([
            r.config_hash.clone(),
            r.suite.clone(),
            r.check.clone(),
            kind.to_string(),
            r.samples.to_string(),
            fmt_opt(r.margin),
            format!("{:e}", r.budget),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub version: String,
    pub suite: String,
    pub seed: u64,
    pub samples_multiplier: f64,
    pub config_hash: String,
    pub threads: usize,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub wall_time_s: BTreeMap<String, f64>,
}

pub fn write_metadata(dir: &Path, meta: &Metadata) -> Result<(), CliError> {
    let mut f = std::fs::File::create(dir.join("metadata.json"))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(f, "{json}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_iff_margin_within_budget() {
        assert!(Outcome::assertion(1, -0.5, 0.5).passes());
        assert!(!Outcome::assertion(1, -0.6, 0.5).passes());
        assert!(!Outcome::assertion(1, f64::NAN, 1.0).passes());
        assert!(Outcome::no_samples().passes());
        assert!(Outcome::measurement().with("x", -1.0).passes());
        assert!(Outcome::at_most(3, 1.0, 2.0, 0.0).passes());
        assert!(!Outcome::at_least(3, 1.0, 2.0, 0.5).passes());
    }

    #[test]
    fn nan_margin_is_reported_as_failure() {
        let r = DeficitReport::new("s", "c", "h", "d".into(), Outcome::assertion(1, f64::NAN, 0.0), 0.0);
        assert!(!r.pass && r.margin.is_none());
    }
}
