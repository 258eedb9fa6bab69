//! Machine-readable sweep reports: a versioned JSON schema with one record
//! per lambda point, plus a flat CSV export for plotting. Unknown fields
//! are rejected on load so schema drift fails loudly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Wall-clock seconds per pipeline stage at one lambda point. Excluded
/// from reproducibility comparisons (see [`CvReport::canonical_json`]).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageTimes {
    pub fit: f64,
    pub acv: f64,
    pub saacv: f64,
    pub literal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LambdaRecord {
    pub lambda_tilde: f64,
    /// Solver convergence at this point; estimates are still recorded for
    /// failed points but argmins skip them.
    pub converged: bool,
    pub training_error: f64,
    pub eps_acv: Option<f64>,
    pub eps_saacv: Option<f64>,
    pub eps_literal: Option<f64>,
    pub ned_acv: Option<f64>,
    pub ned_saacv: Option<f64>,
    pub active_set_size: usize,
    pub zero_modes_removed: usize,
    pub acv_op_count: Option<u64>,
    pub saacv_op_count: Option<u64>,
    pub flags: Vec<String>,
    pub wall: StageTimes,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArgminEntry {
    pub index: usize,
    pub lambda_tilde: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArgminSummary {
    pub training: Option<ArgminEntry>,
    pub acv: Option<ArgminEntry>,
    pub saacv: Option<ArgminEntry>,
    pub literal: Option<ArgminEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_digest: String,
    pub tol_delta: f64,
    pub tol_kkt: f64,
    pub theta: f64,
    /// Extra notes such as applied per-class rescale factors.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CvReport {
    pub version: u32,
    pub eta: f64,
    pub lambda_grid: Vec<f64>,
    pub provenance: Provenance,
    pub records: Vec<LambdaRecord>,
    pub argmin: ArgminSummary,
}

fn argmin_by<F: Fn(&LambdaRecord) -> Option<f64>>(
    records: &[LambdaRecord],
    get: F,
) -> Option<ArgminEntry> {
    let mut best: Option<ArgminEntry> = None;
    for (index, rec) in records.iter().enumerate() {
        if !rec.converged {
            continue;
        }
        let Some(value) = get(rec) else { continue };
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(ArgminEntry {
                index,
                lambda_tilde: rec.lambda_tilde,
                value,
            });
        }
    }
    best
}

impl CvReport {
    /// Fills the per-estimator argmins over converged records.
    pub fn compute_argmins(&mut self) {
        self.argmin = ArgminSummary {
            training: argmin_by(&self.records, |r| Some(r.training_error)),
            acv: argmin_by(&self.records, |r| r.eps_acv),
            saacv: argmin_by(&self.records, |r| r.eps_saacv),
            literal: argmin_by(&self.records, |r| r.eps_literal),
        };
    }

    /// True when no lambda point produced a converged fit.
    pub fn all_points_failed(&self) -> bool {
        self.records.iter().all(|r| !r.converged)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))
    }

    /// JSON with wall times zeroed: everything else in a report is a pure
    /// function of (dataset digest, seed, tolerances), so this form is
    /// diffable across runs.
    pub fn canonical_json(&self) -> Result<String> {
        let mut c = self.clone();
        for r in &mut c.records {
            r.wall = StageTimes::default();
        }
        c.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: CvReport =
            serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
        if report.version != REPORT_VERSION {
            return Err(Error::Report(format!(
                "report version {} not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        if report.lambda_grid.is_empty() || report.records.is_empty() {
            return Err(Error::Report("report has an empty lambda grid".into()));
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Flat CSV export of the per-lambda columns, suitable for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "lambda_tilde,converged,training_error,eps_acv,eps_saacv,eps_literal,\
             ned_acv,ned_saacv,active_set_size,zero_modes_removed,flags\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.lambda_tilde,
                r.converged,
                r.training_error,
                opt(r.eps_acv),
                opt(r.eps_saacv),
                opt(r.eps_literal),
                opt(r.ned_acv),
                opt(r.ned_saacv),
                r.active_set_size,
                r.zero_modes_removed,
                r.flags.join(";"),
            ));
        }
        out
    }

    /// Human-readable table of the same columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>12} {:>5} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10} {:>6}\n",
            "lambda", "conv", "train", "acv", "saacv", "literal", "ned_acv", "ned_sa", "|A|"
        ));
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        for r in &self.records {
            out.push_str(&format!(
                "{:>12.6e} {:>5} {:>12.6} {:>12} {:>12} {:>12} {:>10} {:>10} {:>6}\n",
                r.lambda_tilde,
                r.converged,
                r.training_error,
                fmt(r.eps_acv),
                fmt(r.eps_saacv),
                fmt(r.eps_literal),
                fmt(r.ned_acv.map(|v| (v * 1e4).round() / 1e4)),
                fmt(r.ned_saacv.map(|v| (v * 1e4).round() / 1e4)),
                r.active_set_size,
            ));
        }
        let arg = |name: &str, e: &Option<ArgminEntry>| match e {
            Some(e) => format!(
                "argmin {name}: lambda = {:.6e} (index {}, value {:.6})\n",
                e.lambda_tilde, e.index, e.value
            ),
            None => format!("argmin {name}: -\n"),
        };
        out.push_str(&arg("training", &self.argmin.training));
        out.push_str(&arg("acv", &self.argmin.acv));
        out.push_str(&arg("saacv", &self.argmin.saacv));
        out.push_str(&arg("literal", &self.argmin.literal));
        out
    }
}
