//! Runner wire protocol v1: newline-delimited JSON frames over a child
//! process's stdin/stdout.

pub mod client;
pub mod fixture;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assembly::{Phase, PhaseSpan, PropertyAssertion, TestMode};
use crate::prompts::TargetApi;

pub use client::{exec_mutant, list_mutants, parse_instrument, run_generator, run_suite, RunnerCommand, RunnerHandle};

pub const PROTOCOL_VERSION: &str = "1";
pub const DEFAULT_PER_RUN_TIMEOUT_MS: u64 = 2_000;
/// Rendered inputs longer than this are cut and marked.
pub const MAX_RENDERING_BYTES: usize = 4096;
pub const TRUNCATION_MARKER: &str = "...<truncated>";
/// How a run is defined; written into every report.
pub const RUN_SEMANTICS: &str = "one-example-per-run";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunnerError {
    #[error("could not start runner: {0}")]
    SpawnFailure(String),
    #[error("runner did not answer the handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("runner speaks protocol version {found}, expected {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("runner exited unexpectedly; stderr: {stderr}")]
    RunnerCrashed { stderr: String },
    #[error("malformed frame from runner ({reason}): {raw}")]
    ProtocolError { raw: String, reason: String },
    #[error("request {id} timed out after {after:?}")]
    RequestTimeout { id: String, after: Duration },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("runner reported {error_type}: {message}")]
    Remote { error_type: String, message: String },
    #[error("inconsistent report: {0}")]
    InconsistentReport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    ExecGenerator,
    ExecPbt,
    ListMutants,
    ExecMutant,
    ParseInstrument,
    Ping,
    Pong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationOperator {
    ArithmeticOpReplace,
    RelationalOpReplace,
    BooleanOpReplace,
    ConstantPerturb,
    NegateCondition,
    StatementDelete,
}

impl MutationOperator {
    pub const ALL: [MutationOperator; 6] = [
        MutationOperator::ArithmeticOpReplace,
        MutationOperator::RelationalOpReplace,
        MutationOperator::BooleanOpReplace,
        MutationOperator::ConstantPerturb,
        MutationOperator::NegateCondition,
        MutationOperator::StatementDelete,
    ];
}

fn default_n_runs() -> u32 {
    1
}

fn default_timeout_ms() -> u64 {
    DEFAULT_PER_RUN_TIMEOUT_MS
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub id: String,
    pub kind: FrameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetApi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TestMode>,
    #[serde(default = "default_n_runs")]
    pub n_runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout_ms")]
    pub per_run_timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operators: Option<Vec<MutationOperator>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub collect_coverage: bool,
}

impl RunnerRequest {
    pub fn new(kind: FrameKind) -> Self {
        Self {
            id: String::new(),
            kind,
            code: None,
            target: None,
            generator_name: None,
            mode: None,
            n_runs: 1,
            seed: 0,
            per_run_timeout_ms: DEFAULT_PER_RUN_TIMEOUT_MS,
            mutant_id: None,
            operators: None,
            collect_coverage: false,
        }
    }

    pub fn ping() -> Self {
        Self::new(FrameKind::Ping)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let missing = |field: &str| {
            Err(RunnerError::InvalidRequest(format!(
                "{:?} requires `{field}`",
                self.kind
            )))
        };
        if self.n_runs == 0 {
            return Err(RunnerError::InvalidRequest("n_runs must be at least 1".into()));
        }
        match self.kind {
            FrameKind::Pong => Err(RunnerError::InvalidRequest("Pong is a response kind".into())),
            FrameKind::ExecGenerator | FrameKind::ExecPbt | FrameKind::ParseInstrument if self.code.is_none() => {
                missing("code")
            }
            FrameKind::ExecGenerator if self.generator_name.is_none() => missing("generator_name"),
            FrameKind::ExecMutant if self.mutant_id.is_none() => missing("mutant_id"),
            FrameKind::ExecMutant if self.code.is_none() => missing("code"),
            FrameKind::ListMutants if self.target.is_none() => missing("target"),
            _ => Ok(()),
        }
    }

    /// Whole-request budget: n_runs x per-run timeout x 1.5, at least 5 s.
    pub fn deadline(&self) -> Duration {
        let runs = match self.kind {
            FrameKind::ExecGenerator | FrameKind::ExecPbt | FrameKind::ExecMutant => self.n_runs,
            _ => 1,
        };
        let ms = (runs as u64).saturating_mul(self.per_run_timeout_ms).saturating_mul(3) / 2;
        Duration::from_millis(ms.max(5_000))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    #[serde(rename = "type")]
    pub error_type: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerResponse {
    pub id: String,
    pub kind: FrameKind,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl RunnerResponse {
    pub fn success(id: &str, kind: FrameKind, payload: Value) -> Self {
        Self {
            id: id.to_string(),
            kind,
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn failure(id: &str, kind: FrameKind, error_type: &str, message: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            kind,
            ok: false,
            payload: None,
            error: Some(WireError {
                error_type: error_type.to_string(),
                message: message.into(),
            }),
        }
    }

    /// Checks frame shape and decodes the payload.
    pub fn into_payload<T: serde::de::DeserializeOwned>(self) -> Result<T, RunnerError> {
        if !self.ok {
            let e = self.error.unwrap_or(WireError {
                error_type: "Unknown".into(),
                message: "runner reported failure without detail".into(),
            });
            return Err(RunnerError::Remote {
                error_type: e.error_type,
                message: e.message,
            });
        }
        let payload = self.payload.ok_or_else(|| RunnerError::ProtocolError {
            raw: String::new(),
            reason: "ok response without payload".into(),
        })?;
        serde_json::from_value(payload.clone()).map_err(|e| RunnerError::ProtocolError {
            raw: payload.to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PongPayload {
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunStatus {
    Ok,
    GeneratorError,
    ApiException,
    AssertionFailure,
    PropertyError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_index: u32,
    pub status: RunStatus,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default)]
    pub failed_property_ids: Vec<String>,
    /// Properties whose check raised a non-assertion error.
    #[serde(default)]
    pub errored_property_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rendering: Option<String>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl RunOutcome {
    pub fn ok(run_index: u32, phase: Phase) -> Self {
        Self {
            run_index,
            status: RunStatus::Ok,
            phase,
            error_type: None,
            error_message: None,
            failed_property_ids: Vec::new(),
            errored_property_ids: Vec::new(),
            input_rendering: None,
            elapsed_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::InconsistentReport(format!("run {}: {m}", self.run_index)));
        match self.status {
            RunStatus::Ok => {
                if self.error_type.is_some() || self.error_message.is_some() {
                    return bad("Ok run carries error fields");
                }
                if !self.failed_property_ids.is_empty() || !self.errored_property_ids.is_empty() {
                    return bad("Ok run lists failing properties");
                }
            }
            RunStatus::AssertionFailure if self.failed_property_ids.is_empty() => {
                return bad("AssertionFailure without failed property ids");
            }
            RunStatus::PropertyError if self.errored_property_ids.is_empty() => {
                return bad("PropertyError without errored property ids");
            }
            _ => {}
        }
        Ok(())
    }

    /// Properties whose check ran in this run. Soft checks evaluate every
    /// property once the Check stage is entered; strict checks stop at the
    /// first failing one.
    pub fn reached<'a>(&self, property_ids: &'a [String], strict: bool) -> Vec<&'a str> {
        let upto = |id: &str| {
            let stop = property_ids.iter().position(|p| p == id);
            property_ids[..stop.map_or(0, |i| i + 1)]
                .iter()
                .map(String::as_str)
                .collect()
        };
        match (self.status, &self.phase) {
            (RunStatus::Ok, _) => property_ids.iter().map(String::as_str).collect(),
            (RunStatus::AssertionFailure | RunStatus::PropertyError, Phase::Check(id)) if strict => upto(id),
            (RunStatus::AssertionFailure | RunStatus::PropertyError, _) => {
                property_ids.iter().map(String::as_str).collect()
            }
            // A hang inside a check means the earlier checks completed.
            (RunStatus::Timeout, Phase::Check(id)) => upto(id),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageData {
    pub scope: String,
    pub statements_hit: u32,
    pub statements_total: u32,
    pub branches_hit: u32,
    pub branches_total: u32,
    #[serde(default)]
    pub hit_lines: BTreeSet<u32>,
    /// Branch arcs never taken, as "from->to" line pairs.
    #[serde(default)]
    pub missed_branches: Vec<String>,
}

impl CoverageData {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.statements_hit > self.statements_total || self.branches_hit > self.branches_total {
            return Err(RunnerError::InconsistentReport(format!(
                "coverage hit exceeds total for {}",
                self.scope
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecPayload {
    pub outcomes: Vec<RunOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageData>,
    #[serde(default)]
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantLocation {
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutant {
    pub mutant_id: String,
    pub operator: MutationOperator,
    pub location: MutantLocation,
    pub diff: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListMutantsPayload {
    pub mutants: Vec<Mutant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutantClassification {
    KilledByAssertion,
    KilledByCrash,
    Survived,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantResult {
    pub mutant_id: String,
    pub classification: MutantClassification,
    #[serde(default)]
    pub killing_property_ids: Vec<String>,
    pub runs_executed: u32,
}

impl MutantResult {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let killed = self.classification == MutantClassification::KilledByAssertion;
        if killed == self.killing_property_ids.is_empty() {
            return Err(RunnerError::InconsistentReport(format!(
                "mutant {} is {:?} with killing properties {:?}",
                self.mutant_id, self.classification, self.killing_property_ids
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseInstrumentPayload {
    pub source: String,
    pub phase_map: Vec<PhaseSpan>,
    pub properties: Vec<PropertyAssertion>,
}

/// Aggregated outcomes of one suite execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_semantics: String,
    pub n_runs_requested: u32,
    pub seed: u64,
    pub property_ids: Vec<String>,
    #[serde(default)]
    pub strict: bool,
    pub outcomes: Vec<RunOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageData>,
    pub per_property_failure_counts: BTreeMap<String, u32>,
    pub per_property_error_counts: BTreeMap<String, u32>,
    pub per_property_reached_counts: BTreeMap<String, u32>,
    /// The runner stopped before `n_runs_requested` outcomes.
    #[serde(default)]
    pub partial: bool,
}

impl RunReport {
    /// Builds a report and its per-property tallies from raw outcomes.
    pub fn from_outcomes(
        n_runs_requested: u32,
        seed: u64,
        property_ids: Vec<String>,
        strict: bool,
        outcomes: Vec<RunOutcome>,
        coverage: Option<CoverageData>,
        partial: bool,
    ) -> Result<Self, RunnerError> {
        let zeroes = || -> BTreeMap<String, u32> { property_ids.iter().map(|id| (id.clone(), 0)).collect() };
        let mut failures = zeroes();
        let mut errors = zeroes();
        let mut reached = zeroes();
        for (i, o) in outcomes.iter().enumerate() {
            o.validate()?;
            if o.run_index as usize != i {
                return Err(RunnerError::InconsistentReport(format!(
                    "outcome {i} carries run_index {}",
                    o.run_index
                )));
            }
            for id in o.reached(&property_ids, strict) {
                *reached.get_mut(id).expect("known id") += 1;
            }
            for (ids, tally) in [
                (&o.failed_property_ids, &mut failures),
                (&o.errored_property_ids, &mut errors),
            ] {
                for id in ids {
                    *tally.get_mut(id).ok_or_else(|| {
                        RunnerError::InconsistentReport(format!("run {} names unknown property {id}", o.run_index))
                    })? += 1;
                }
            }
        }
        if !partial && outcomes.len() != n_runs_requested as usize {
            return Err(RunnerError::InconsistentReport(format!(
                "{} outcomes for {n_runs_requested} requested runs",
                outcomes.len()
            )));
        }
        if let Some(c) = &coverage {
            c.validate()?;
        }
        Ok(Self {
            run_semantics: RUN_SEMANTICS.to_string(),
            n_runs_requested,
            seed,
            property_ids,
            strict,
            outcomes,
            coverage,
            per_property_failure_counts: failures,
            per_property_error_counts: errors,
            per_property_reached_counts: reached,
            partial,
        })
    }

    pub fn n_runs(&self) -> usize {
        self.outcomes.len()
    }

    /// First rendered input on which `property_id` failed.
    pub fn first_counterexample(&self, property_id: &str) -> Option<&str> {
        self.outcomes
            .iter()
            .find(|o| o.failed_property_ids.iter().any(|p| p == property_id))
            .and_then(|o| o.input_rendering.as_deref())
    }

    /// First error message recorded for a property's check.
    pub fn first_property_error(&self, property_id: &str) -> Option<&RunOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.errored_property_ids.iter().any(|p| p == property_id))
    }
}

/// Per-run seed: the `run_index`-th output of a splitmix64 stream seeded
/// with `seed`.
pub fn derived_seed(seed: u64, run_index: u32) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = seed.wrapping_add((run_index as u64 + 1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn truncate_rendering(text: &str) -> String {
    if text.len() <= MAX_RENDERING_BYTES {
        return text.to_string();
    }
    let mut cut = MAX_RENDERING_BYTES - TRUNCATION_MARKER.len();
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..cut])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_field_presence() {
        let mut r = RunnerRequest::new(FrameKind::ExecMutant);
        r.code = Some("x".into());
        assert!(r.validate().is_err());
        r.mutant_id = Some("m1".into());
        assert!(r.validate().is_ok());
        let r = RunnerRequest::new(FrameKind::ExecPbt);
        assert!(r.validate().is_err());
        assert!(RunnerRequest::ping().validate().is_ok());
        assert!(RunnerRequest::new(FrameKind::Pong).validate().is_err());
    }

    #[test]
    fn deadline_scales_with_runs() {
        let mut r = RunnerRequest::new(FrameKind::ExecPbt);
        r.n_runs = 100;
        assert_eq!(r.deadline(), Duration::from_millis(300_000));
        assert_eq!(RunnerRequest::ping().deadline(), Duration::from_secs(5));
    }

    #[test]
    fn derived_seeds_match_reference_splitmix() {
        // First outputs of splitmix64 seeded with 0.
        assert_eq!(derived_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derived_seed(0, 1), 0x6E78_9E6A_A1B9_65F4);
        assert_ne!(derived_seed(7, 3), derived_seed(8, 3));
    }

    #[test]
    fn outcome_invariants() {
        let mut o = RunOutcome::ok(0, Phase::Check("P1".into()));
        assert!(o.validate().is_ok());
        o.error_type = Some("X".into());
        assert!(o.validate().is_err());
        let mut f = RunOutcome::ok(0, Phase::Check("P1".into()));
        f.status = RunStatus::AssertionFailure;
        assert!(f.validate().is_err());
        f.failed_property_ids.push("P1".into());
        assert!(f.validate().is_ok());
    }

    #[test]
    fn reached_depends_on_check_mode() {
        let ids: Vec<String> = ["P1", "P2", "P3"].iter().map(|s| s.to_string()).collect();
        let mut f = RunOutcome::ok(0, Phase::Check("P2".into()));
        f.status = RunStatus::AssertionFailure;
        f.failed_property_ids.push("P2".into());
        assert_eq!(f.reached(&ids, false), vec!["P1", "P2", "P3"]);
        assert_eq!(f.reached(&ids, true), vec!["P1", "P2"]);
        let mut g = RunOutcome::ok(0, Phase::Generate);
        g.status = RunStatus::GeneratorError;
        assert!(g.reached(&ids, false).is_empty());
    }

    #[test]
    fn report_tallies() {
        let ids = vec!["P1".to_string(), "P2".to_string()];
        let mut fail = RunOutcome::ok(1, Phase::Check("P2".into()));
        fail.status = RunStatus::AssertionFailure;
        fail.failed_property_ids.push("P1".into());
        let mut gen = RunOutcome::ok(2, Phase::Generate);
        gen.status = RunStatus::GeneratorError;
        let outcomes = vec![RunOutcome::ok(0, Phase::Check("P2".into())), fail, gen];
        let r = RunReport::from_outcomes(3, 1, ids.clone(), false, outcomes.clone(), None, false).unwrap();
        assert_eq!(r.per_property_failure_counts["P1"], 1);
        assert_eq!(r.per_property_reached_counts["P1"], 2);
        assert_eq!(r.per_property_error_counts["P2"], 0);
        assert!(RunReport::from_outcomes(4, 1, ids.clone(), false, outcomes.clone(), None, false).is_err());
        assert!(RunReport::from_outcomes(4, 1, ids, false, outcomes, None, true).is_ok());
    }

    #[test]
    fn rendering_truncation() {
        let long = "x".repeat(5000);
        let t = truncate_rendering(&long);
        assert_eq!(t.len(), MAX_RENDERING_BYTES);
        assert!(t.ends_with(TRUNCATION_MARKER));
        assert_eq!(truncate_rendering("[[0]]"), "[[0]]");
    }
}
