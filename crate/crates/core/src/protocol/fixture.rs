//! A protocol-conforming runner that answers from recorded fixtures
//! instead of executing code. Used for offline tests and demos.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    derived_seed, truncate_rendering, CoverageData, ExecPayload, FrameKind, MutantClassification, MutantResult,
    ParseInstrumentPayload, RunOutcome, RunStatus, RunnerRequest, RunnerResponse, WireError, PROTOCOL_VERSION,
};
use crate::assembly::{self, Phase, PhaseSpan, TestMode};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid fixture file {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FrameKind>,
    /// Matches the request target's qualname.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub code_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub code_excludes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<u32>,
}

impl FixtureMatch {
    pub fn matches(&self, req: &RunnerRequest) -> bool {
        let code = req.code.as_deref().unwrap_or("");
        self.kind.is_none_or(|k| k == req.kind)
            && self
                .target
                .as_ref()
                .is_none_or(|t| req.target.as_ref().is_some_and(|rt| &rt.qualname == t))
            && self.code_contains.iter().all(|s| code.contains(s.as_str()))
            && !self.code_excludes.iter().any(|s| code.contains(s.as_str()))
            && self
                .mutant_id
                .as_ref()
                .is_none_or(|m| req.mutant_id.as_ref() == Some(m))
            && self.n_runs.is_none_or(|n| n == req.n_runs)
    }
}

/// Outcome shape used to stamp out per-run outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTemplate {
    pub status: RunStatus,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_property_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errored_property_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rendering: Option<String>,
    /// Consecutive runs this template covers within the cycle.
    #[serde(default = "one")]
    pub repeat: u32,
}

fn one() -> u32 {
    1
}

impl OutcomeTemplate {
    fn stamp(&self, run_index: u32) -> RunOutcome {
        RunOutcome {
            run_index,
            status: self.status,
            phase: self.phase.clone(),
            error_type: self.error_type.clone(),
            error_message: self.error_message.clone(),
            failed_property_ids: self.failed_property_ids.clone(),
            errored_property_ids: self.errored_property_ids.clone(),
            input_rendering: self.input_rendering.as_deref().map(truncate_rendering),
            elapsed_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureResponse {
    /// Run i uses the template at position i modulo the expanded cycle.
    Cycle {
        outcomes_cycle: Vec<OutcomeTemplate>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coverage: Option<CoverageData>,
        /// Stop after this many runs and mark the payload partial.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop_after: Option<u32>,
    },
    /// Each run draws an integer uniformly from `0..range` using its
    /// derived seed and errors iff the draw is at least `error_from`.
    Synthetic {
        synthetic: SyntheticDraw,
    },
    /// ExecMutant answers by mutant id; unlisted mutants survive.
    MutantTable {
        mutant_table: BTreeMap<String, MutantVerdict>,
    },
    Payload {
        payload: Value,
    },
    Error {
        error: WireError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantVerdict {
    pub classification: MutantClassification,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub killing_property_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDraw {
    pub range: u64,
    pub error_from: u64,
    pub ok: OutcomeTemplate,
    pub error: OutcomeTemplate,
}

impl SyntheticDraw {
    pub fn draw(&self, seed: u64, run_index: u32) -> u64 {
        ChaCha8Rng::seed_from_u64(derived_seed(seed, run_index)).gen_range(0..self.range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match", default)]
    pub matcher: FixtureMatch,
    pub response: FixtureResponse,
}

/// Runner-level misbehaviour, for exercising client error paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Directives {
    /// Version reported in Pong.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    /// Never answer Ping.
    #[serde(default)]
    pub silent_handshake: bool,
    /// Exit (after writing `stderr_message`) on the first request of this kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_on: Option<FrameKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed_on: Option<FrameKind>,
    /// Read requests of this kind without ever answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hang_on: Option<FrameKind>,
    /// Buffer this many non-Ping requests and answer them in reverse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_batches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr_message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureSet {
    #[serde(default)]
    pub directives: Directives,
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
}

impl FixtureSet {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| FixtureError::Invalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Loads and concatenates several fixture files; directives come from
    /// the first file.
    pub fn load_all(paths: &[impl AsRef<Path>]) -> Result<Self, FixtureError> {
        let mut merged = FixtureSet::default();
        for (i, p) in paths.iter().enumerate() {
            let set = Self::load(p.as_ref())?;
            if i == 0 {
                merged.directives = set.directives;
            }
            merged.entries.extend(set.entries);
        }
        Ok(merged)
    }

    /// Computes the response to one request.
    pub fn respond(&self, req: &RunnerRequest) -> RunnerResponse {
        if req.kind == FrameKind::Ping {
            let version = self.directives.version.as_deref().unwrap_or(PROTOCOL_VERSION);
            return RunnerResponse::success(&req.id, FrameKind::Pong, json!({ "version": version }));
        }
        if let Err(e) = req.validate() {
            return RunnerResponse::failure(&req.id, req.kind, "InvalidRequest", e.to_string());
        }
        let Some(entry) = self.entries.iter().find(|e| e.matcher.matches(req)) else {
            if req.kind == FrameKind::ParseInstrument {
                return native_parse_instrument(req);
            }
            return RunnerResponse::failure(
                &req.id,
                req.kind,
                "NoFixture",
                format!("no recorded response for this {:?} request", req.kind),
            );
        };
        match &entry.response {
            FixtureResponse::Payload { payload } => RunnerResponse::success(&req.id, req.kind, payload.clone()),
            FixtureResponse::MutantTable { mutant_table } => {
                let id = req.mutant_id.clone().unwrap_or_default();
                let result = match mutant_table.get(&id) {
                    Some(v) => MutantResult {
                        mutant_id: id,
                        classification: v.classification,
                        killing_property_ids: v.killing_property_ids.clone(),
                        runs_executed: if v.classification == MutantClassification::Survived {
                            req.n_runs
                        } else {
                            1
                        },
                    },
                    None => MutantResult {
                        mutant_id: id,
                        classification: MutantClassification::Survived,
                        killing_property_ids: Vec::new(),
                        runs_executed: req.n_runs,
                    },
                };
                RunnerResponse::success(&req.id, req.kind, serde_json::to_value(result).unwrap())
            }
            FixtureResponse::Error { error } => {
                RunnerResponse::failure(&req.id, req.kind, &error.error_type, error.message.clone())
            }
            FixtureResponse::Cycle {
                outcomes_cycle,
                coverage,
                stop_after,
            } => {
                let expanded: Vec<&OutcomeTemplate> = outcomes_cycle
                    .iter()
                    .flat_map(|t| std::iter::repeat_n(t, t.repeat as usize))
                    .collect();
                if expanded.is_empty() {
                    return RunnerResponse::failure(&req.id, req.kind, "NoFixture", "empty outcome cycle");
                }
                let n = stop_after.map_or(req.n_runs, |k| k.min(req.n_runs));
                let outcomes = (0..n).map(|i| expanded[i as usize % expanded.len()].stamp(i)).collect();
                let payload = ExecPayload {
                    outcomes,
                    coverage: coverage.clone().filter(|_| req.collect_coverage),
                    partial: n < req.n_runs,
                };
                RunnerResponse::success(&req.id, req.kind, serde_json::to_value(payload).unwrap())
            }
            FixtureResponse::Synthetic { synthetic } => {
                let outcomes = (0..req.n_runs)
                    .map(|i| {
                        let t = if synthetic.draw(req.seed, i) >= synthetic.error_from {
                            &synthetic.error
                        } else {
                            &synthetic.ok
                        };
                        t.stamp(i)
                    })
                    .collect();
                let payload = ExecPayload {
                    outcomes,
                    coverage: None,
                    partial: false,
                };
                RunnerResponse::success(&req.id, req.kind, serde_json::to_value(payload).unwrap())
            }
        }
    }

    /// Serves requests from `input` until EOF. Returns the process exit code.
    pub fn serve(&self, input: impl BufRead, mut output: impl Write, mut errout: impl Write) -> i32 {
        let d = &self.directives;
        let mut batch: VecDeque<RunnerResponse> = VecDeque::new();
        for line in input.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let req: RunnerRequest = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    let id = serde_json::from_str::<Value>(&line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string))
                        .unwrap_or_default();
                    let resp = RunnerResponse::failure(&id, FrameKind::Ping, "BadRequest", e.to_string());
                    if write_frame(&mut output, &resp).is_err() {
                        return 1;
                    }
                    continue;
                }
            };
            if req.kind == FrameKind::Ping && d.silent_handshake {
                continue;
            }
            if d.crash_on == Some(req.kind) {
                let msg = d.stderr_message.as_deref().unwrap_or("fixture runner: simulated crash");
                let _ = writeln!(errout, "{msg}");
                let _ = errout.flush();
                return 3;
            }
            if d.hang_on == Some(req.kind) {
                continue;
            }
            if d.malformed_on == Some(req.kind) {
                if writeln!(output, "{{not json").and_then(|_| output.flush()).is_err() {
                    return 1;
                }
                continue;
            }
            let resp = self.respond(&req);
            match d.reverse_batches {
                Some(n) if n > 1 && req.kind != FrameKind::Ping => {
                    batch.push_front(resp);
                    if batch.len() == n {
                        for r in batch.drain(..) {
                            if write_frame(&mut output, &r).is_err() {
                                return 1;
                            }
                        }
                    }
                }
                _ => {
                    if write_frame(&mut output, &resp).is_err() {
                        return 1;
                    }
                }
            }
        }
        0
    }
}

fn write_frame(out: &mut impl Write, resp: &RunnerResponse) -> std::io::Result<()> {
    let line = serde_json::to_string(resp).expect("response serializes");
    writeln!(out, "{line}")?;
    out.flush()
}

/// ParseInstrument answered with the in-process assembler: Combined
/// fragments are instrumented in full, Separate fragments are treated as a
/// property block whose groups are mapped to their checks.
fn native_parse_instrument(req: &RunnerRequest) -> RunnerResponse {
    let code = req.code.as_deref().unwrap_or("");
    let fail = |e: assembly::AssemblyError| {
        let kind = match &e {
            assembly::AssemblyError::UnparseableFragment(_) => "UnparseableFragment",
            assembly::AssemblyError::TargetCallNotFound(_) => "TargetCallNotFound",
            _ => "AssemblyError",
        };
        RunnerResponse::failure(&req.id, req.kind, kind, e.to_string())
    };
    let payload = match req.mode.unwrap_or(TestMode::Separate) {
        TestMode::Combined => {
            let Some(target) = &req.target else {
                return RunnerResponse::failure(&req.id, req.kind, "InvalidRequest", "Combined mode needs a target");
            };
            match assembly::instrument_combined(code, target, &Default::default()) {
                Ok(t) => ParseInstrumentPayload {
                    source: t.source_text,
                    phase_map: t.phase_map,
                    properties: t.properties,
                },
                Err(e) => return fail(e),
            }
        }
        TestMode::Separate => match assembly::enumerate_properties(code) {
            Ok(properties) => ParseInstrumentPayload {
                phase_map: property_block_phases(code, &properties),
                source: code.to_string(),
                properties,
            },
            Err(e) => return fail(e),
        },
    };
    RunnerResponse::success(&req.id, req.kind, serde_json::to_value(payload).unwrap())
}

/// Lines up to and including each property's last line belong to its
/// check; lines after the last property join it.
fn property_block_phases(code: &str, properties: &[assembly::PropertyAssertion]) -> Vec<PhaseSpan> {
    let n_lines = code.lines().count();
    if n_lines == 0 {
        return Vec::new();
    }
    let Ok(parsed) = assembly::pysrc::PySource::parse(code) else {
        return Vec::new();
    };
    let ends: Vec<usize> = parsed
        .stmts
        .iter()
        .filter(|s| s.contains_assertion())
        .map(|s| s.end + 1)
        .collect();
    if properties.is_empty() {
        return vec![PhaseSpan {
            start_line: 1,
            end_line: n_lines,
            phase: Phase::Generate,
        }];
    }
    let mut spans = Vec::new();
    let mut start = 1;
    for (i, (p, end)) in properties.iter().zip(&ends).enumerate() {
        let end = if i + 1 == properties.len() { n_lines } else { *end };
        spans.push(PhaseSpan {
            start_line: start,
            end_line: end,
            phase: Phase::Check(p.id.clone()),
        });
        start = end + 1;
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(status: RunStatus, phase: &str) -> OutcomeTemplate {
        OutcomeTemplate {
            status,
            phase: phase.parse().unwrap(),
            error_type: None,
            error_message: None,
            failed_property_ids: Vec::new(),
            errored_property_ids: Vec::new(),
            input_rendering: None,
            repeat: 1,
        }
    }

    fn exec(n_runs: u32, seed: u64) -> RunnerRequest {
        let mut r = RunnerRequest::new(FrameKind::ExecPbt);
        r.id = "x".into();
        r.code = Some("def test(): pass".into());
        r.n_runs = n_runs;
        r.seed = seed;
        r
    }

    #[test]
    fn cycle_expands_repeats() {
        let mut ok = template(RunStatus::Ok, "Check(P1)");
        ok.repeat = 3;
        let mut bad = template(RunStatus::GeneratorError, "Generate");
        bad.error_type = Some("OverflowError".into());
        let set = FixtureSet {
            directives: Directives::default(),
            entries: vec![FixtureEntry {
                matcher: FixtureMatch::default(),
                response: FixtureResponse::Cycle {
                    outcomes_cycle: vec![ok, bad],
                    coverage: None,
                    stop_after: None,
                },
            }],
        };
        let payload: ExecPayload = set.respond(&exec(8, 1)).into_payload().unwrap();
        let statuses: Vec<_> = payload.outcomes.iter().map(|o| o.status).collect();
        assert_eq!(statuses[3], RunStatus::GeneratorError);
        assert_eq!(statuses[7], RunStatus::GeneratorError);
        assert_eq!(statuses.iter().filter(|s| **s == RunStatus::Ok).count(), 6);
    }

    #[test]
    fn unmatched_request_is_a_remote_error() {
        let set = FixtureSet::default();
        let resp = set.respond(&exec(1, 0));
        assert!(!resp.ok);
        assert_eq!(resp.error.unwrap().error_type, "NoFixture");
    }

    #[test]
    fn parse_instrument_falls_back_to_assembler() {
        let set = FixtureSet::default();
        let mut r = RunnerRequest::new(FrameKind::ParseInstrument);
        r.id = "p".into();
        r.code = Some("assert True\n".into());
        r.mode = Some(TestMode::Separate);
        let p: ParseInstrumentPayload = set.respond(&r).into_payload().unwrap();
        assert_eq!(p.properties.len(), 1);
        assert!(p.properties[0].guard.is_none());
        r.code = Some("assert (\n".into());
        let resp = set.respond(&r);
        assert_eq!(resp.error.unwrap().error_type, "UnparseableFragment");
    }

    #[test]
    fn serve_handles_ping_and_garbage() {
        let set = FixtureSet::default();
        let input = b"{\"id\":\"a\",\"kind\":\"Ping\"}\nnot json\n".as_slice();
        let mut out = Vec::new();
        let code = set.serve(input, &mut out, Vec::new());
        assert_eq!(code, 0);
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"id":"a","kind":"Pong","ok":true,"payload":{"version":"1"}}"#
        );
        assert!(lines[1].contains("\"ok\":false"));
    }
}
