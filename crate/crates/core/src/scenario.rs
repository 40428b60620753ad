//! Scenario files and comparison reports.
//!
//! Scenario files are TOML documents carrying a `schema_version`. Units are
//! bytes, bytes per second and seconds throughout; a megabyte is 10^6 bytes.
//! Unknown keys are rejected. See `fixtures/table2.scenario` for a commented
//! example.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_scenario, Calibration, DynamicContext, LinkPath, NodeId, NodeProfile, RequestSpec, ResourceWeights,
    Scenario, Violation,
};
use crate::sim::{compare_with, Case, SimError, SimReport, UplinkMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error{}: {message}", location.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Parse {
        location: Option<(usize, usize)>,
        message: String,
    },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no reports to render")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

/// On-disk layout of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub delegator: NodeId,
    pub request: RequestSpec,
    pub calibration: Calibration,
    pub weights: ResourceWeights,
    pub nodes: Vec<NodeProfile>,
    pub contexts: Vec<DynamicContext>,
    pub links: Vec<LinkPath>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            delegator: s.delegator.clone(),
            request: s.request.clone(),
            calibration: s.calibration.clone(),
            weights: s.weights.clone(),
            nodes: s.nodes.clone(),
            contexts: s.contexts.clone(),
            links: s.links.clone(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    if text.trim().is_empty() {
        return Err(ScenarioError::Parse {
            location: Some((1, 1)),
            message: "empty scenario document".into(),
        });
    }
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        location: e.span().map(|r| line_col(text, r.start)),
        message: e.message().to_owned(),
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::Schema(file.schema_version));
    }
    let s = Scenario {
        delegator: file.delegator,
        nodes: file.nodes,
        contexts: file.contexts,
        links: file.links,
        request: file.request,
        calibration: file.calibration,
        weights: file.weights,
    };
    let violations = validate_scenario(&s);
    if violations.is_empty() {
        Ok(s)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn scenario_to_string(s: &Scenario) -> String {
    toml::to_string(&ScenarioFile::from(s)).expect("scenario serializes to TOML")
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_string(s)).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

fn excluded_column(r: &SimReport) -> String {
    r.excluded.iter().map(NodeId::as_str).collect::<Vec<_>>().join(";")
}

/// Renders reports one row per case, in input order. The deploy and
/// process-and-response columns describe the worker that finishes last, so
/// they add up to the makespan.
pub fn emit_report(reports: &[SimReport], format: ReportFormat) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            let csv_err = |e: csv::Error| ReportError::Csv(e.to_string());
            w.write_record(["case_label", "deploy_s", "proc_resp_s", "makespan_s", "excluded_nodes"])
                .map_err(csv_err)?;
            for r in reports {
                w.write_record([
                    r.case_label.clone(),
                    format!("{:.6}", r.deploy_span()),
                    format!("{:.6}", r.proc_resp_span()),
                    format!("{:.6}", r.makespan),
                    excluded_column(r),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Table => {
            let width = reports.iter().map(|r| r.case_label.len()).max().unwrap_or(0).max(4);
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{:<width$}  {:>12}  {:>12}  {:>12}  excluded",
                "case", "deploy (s)", "proc+resp (s)", "makespan (s)"
            );
            for r in reports {
                let excl = excluded_column(r);
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>12.6}  {:>12.6}  {:>12.6}  {}",
                    r.case_label,
                    r.deploy_span(),
                    r.proc_resp_span(),
                    r.makespan,
                    if excl.is_empty() { "-".to_owned() } else { excl },
                );
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    NumObjects,
    ObjectBytes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: u64,
    pub reports: Vec<SimReport>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("sweep values must be non-empty and positive")]
    BadValues,
    #[error("sweep value {0} does not fit the object count")]
    TooLarge(u64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Re-runs `compare` on a copy of the scenario for each value of the axis.
pub fn sweep(
    s: &Scenario,
    axis: SweepAxis,
    values: &[u64],
    cases: &[Case],
    uplink: UplinkMode,
) -> Result<Vec<SweepPoint>, SweepError> {
    if values.is_empty() || values.contains(&0) {
        return Err(SweepError::BadValues);
    }
    values
        .iter()
        .map(|&value| {
            let mut point = s.clone();
            match axis {
                SweepAxis::NumObjects => {
                    point.request.num_objects = u32::try_from(value).map_err(|_| SweepError::TooLarge(value))?
                }
                SweepAxis::ObjectBytes => point.request.byte_d = value,
            }
            Ok(SweepPoint {
                value,
                reports: compare_with(&point, cases, uplink)?,
            })
        })
        .collect()
}
