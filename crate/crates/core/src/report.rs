//! Scenario reports and CSV helpers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::CheckName;
use crate::error::Result;
use crate::geometry::fmt;
use crate::kato::ConditionReport;
use crate::time_change::BEParameters;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIPPED",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: CheckName,
    pub status: Status,
    pub reason: Option<String>,
    /// Worst-offending node, time or pair.
    pub worst: Option<String>,
    /// Scalar results, also used for sweep tables.
    pub summary: BTreeMap<String, f64>,
    pub details: serde_json::Value,
}

impl CheckReport {
    pub fn skipped(name: CheckName, reason: impl Into<String>) -> Self {
        Self {
            name,
            status: Status::Skipped,
            reason: Some(reason.into()),
            worst: None,
            summary: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn failed(name: CheckName, reason: impl Into<String>) -> Self {
        Self {
            name,
            status: Status::Fail,
            reason: Some(reason.into()),
            worst: None,
            summary: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub kind: String,
    pub kato: f64,
    pub certificate: Option<BEParameters>,
    pub hypothesis_violation: Option<String>,
    pub conditions: Option<ConditionReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub geometry: String,
    pub dimension: usize,
    pub resolution: usize,
    pub nodes: usize,
    pub modes: usize,
    pub spacing: f64,
    pub t_final: f64,
    pub seed: u64,
    pub refinement_resolutions: Vec<usize>,
    pub settings: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub scenario: String,
    pub status: Status,
    pub provenance: Provenance,
    pub regime: RegimeReport,
    pub checks: Vec<CheckReport>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn overall(checks: &[CheckReport]) -> Status {
        if checks.iter().any(|c| c.status == Status::Fail) {
            Status::Fail
        } else {
            Status::Pass
        }
    }

    /// 0 when nothing failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Fail => 1,
            _ => 0,
        }
    }

    pub fn check(&self, name: CheckName) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `section.key → value` map of the scalar results.
    pub fn flat_summary(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("regime.k_T".into(), self.regime.kato);
        if let Some(c) = &self.regime.certificate {
            for (k, v) in [
                ("K", c.k),
                ("N", c.n_upper),
                ("C", c.c),
                ("lambda", c.lambda),
                ("beta", c.beta),
                ("q", c.q),
                ("T", c.t_final),
            ] {
                out.insert(format!("regime.{k}"), v);
            }
        }
        for check in &self.checks {
            for (k, v) in &check.summary {
                out.insert(format!("{}.{k}", check.name.as_str()), *v);
            }
        }
        out
    }

    /// One line per check, as printed by the command line tool.
    pub fn status_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let mut line = format!("{:8} {}", c.status.as_str(), c.name.as_str());
                if let Some(r) = &c.reason {
                    line.push_str(&format!(" ({r})"));
                }
                line
            })
            .collect()
    }
}

/// Write a numeric table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Observed convergence order between two measurements at spacings
/// `h_coarse > h_fine`; infinite when the fine value vanishes.
pub fn observed_order(coarse: f64, fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    if fine == 0.0 {
        return f64::INFINITY;
    }
    (coarse / fine).ln() / (h_coarse / h_fine).ln()
}
