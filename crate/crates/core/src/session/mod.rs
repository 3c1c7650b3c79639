//! Human-in-the-loop refinement sessions: synthesis, evaluation, issue
//! review and mitigation rounds, persisted as an append-only journal.

mod ops;
mod store;

pub use ops::{default_payload, mitigation_kind_for, EvaluationRecord, OpenOptions, Workbench};
pub(crate) use store::validate_id;
pub use store::{AuditReport, SessionStore};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assembly::{
    assemble_separate, instrument_combined, AssembledTest, AssemblyError, AssemblyOptions, GeneratorArtifact,
};
use crate::llm::{extract_code, LlmError, ProviderConfig, Transcript};
use crate::metrics::{Issue, IssueThresholds, MetricsError, QualityScorecard, Ratio};
use crate::prompts::{MitigationAction, PromptError, PromptMessage, Role, TargetApi};
use crate::protocol::{MutationOperator, RunnerError};

pub const JOURNAL_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("{op} is not allowed in state {state}")]
    InvalidState { op: &'static str, state: SessionState },
    #[error("synthesis failed for session {session_id}: {message}")]
    SynthesisFailed { session_id: String, message: String },
    #[error("issue {0} is not part of the latest evaluation")]
    StaleIssue(String),
    #[error("invalid evaluation plan: {0}")]
    InvalidPlan(String),
    #[error("corrupt journal: {0}")]
    Journal(String),
    #[error("replay of artifact v{version} does not reproduce the recorded bytes")]
    AuditMismatch { version: u32 },
    #[error("storage: {0}")]
    Io(String),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Independent,
    Consecutive,
    Together,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Independent, Strategy::Consecutive, Strategy::Together];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::Consecutive => "consecutive",
            Strategy::Together => "together",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown strategy `{s}` (independent, consecutive, together)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Drafting,
    Synthesized,
    Evaluating,
    Reviewed,
    AwaitingChoice,
    Mitigating,
    Closed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl SessionState {
    pub fn can_move_to(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Drafting, Synthesized)
                | (Synthesized, Evaluating)
                | (Evaluating, Reviewed)
                | (Evaluating, Synthesized)
                | (Reviewed, Evaluating)
                | (Reviewed, AwaitingChoice)
                | (AwaitingChoice, Mitigating)
                | (AwaitingChoice, Reviewed)
                | (Mitigating, Synthesized)
                | (Mitigating, Reviewed)
        ) || (self != Closed && to == Closed)
    }
}

fn default_n_runs() -> u32 {
    200
}

fn yes() -> bool {
    true
}

fn default_operators() -> Vec<MutationOperator> {
    MutationOperator::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlanConfig {
    #[serde(default = "default_n_runs")]
    pub n_runs: u32,
    #[serde(default = "yes")]
    pub collect_coverage: bool,
    #[serde(default = "yes")]
    pub mutation: bool,
    /// When absent, the previous evaluation's seed (or 0) is reused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_thresholds")]
    pub thresholds: IssueThresholds,
    #[serde(default = "default_operators")]
    pub operators: Vec<MutationOperator>,
}

fn default_thresholds() -> IssueThresholds {
    IssueThresholds::default()
}

impl Default for EvaluationPlanConfig {
    fn default() -> Self {
        Self {
            n_runs: default_n_runs(),
            collect_coverage: true,
            mutation: true,
            seed: None,
            thresholds: IssueThresholds::default(),
            operators: default_operators(),
        }
    }
}

impl EvaluationPlanConfig {
    /// The evaluation scale used for reported results: 10,000 runs.
    pub fn full_scale() -> Self {
        Self {
            n_runs: 10_000,
            ..Self::default()
        }
    }

    pub fn soundness_threshold(&self) -> Ratio {
        self.thresholds.soundness
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.n_runs == 0 {
            return Err(SessionError::InvalidPlan("n_runs must be at least 1".into()));
        }
        let t = self.thresholds.soundness;
        if t.num() == 0 || t.num() >= t.den() {
            return Err(SessionError::InvalidPlan(format!(
                "soundness threshold {t} must lie strictly between 0 and 1"
            )));
        }
        for (name, r) in [
            ("min_generator_validity", self.thresholds.min_generator_validity),
            ("min_branch_coverage", self.thresholds.min_branch_coverage),
            ("min_strength", self.thresholds.min_strength),
        ] {
            if !r.is_unit_interval() {
                return Err(SessionError::InvalidPlan(format!("{name} {r} exceeds 1")));
            }
        }
        Ok(())
    }
}

/// Position of an assistant reply inside a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRef {
    pub transcript: String,
    pub index: usize,
}

/// Which replies an artifact version was extracted from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactSources {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<MessageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties: Option<MessageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<MessageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactVersion {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_text: Option<String>,
    pub test: AssembledTest,
    pub test_sha256: String,
    pub sources: ArtifactSources,
    pub options: AssemblyOptions,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    pub artifact_version: u32,
    pub plan: EvaluationPlanConfig,
    pub seed: u64,
    pub scorecard: QualityScorecard,
    /// Path of the raw report, relative to the session directory.
    pub report_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingMitigation {
    pub issue: Issue,
    pub action: MitigationAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationLogEntry {
    pub issue: Issue,
    pub action: MitigationAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resulting_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisFailure {
    pub stage: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub target: TargetApi,
    pub strategy: Strategy,
    pub provider: ProviderConfig,
    pub assembly: AssemblyOptions,
    pub state: SessionState,
    pub transcripts: BTreeMap<String, Transcript>,
    pub artifacts: Vec<ArtifactVersion>,
    pub evaluations: Vec<Evaluation>,
    pub mitigation_log: Vec<MitigationLogEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingMitigation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_failure: Option<SynthesisFailure>,
}

/// Transcript keys used by each strategy.
pub const GENERATOR_TRANSCRIPT: &str = "generator";
pub const PROPERTIES_TRANSCRIPT: &str = "properties";
pub const MAIN_TRANSCRIPT: &str = "main";

impl Session {
    pub fn latest_artifact(&self) -> Option<&ArtifactVersion> {
        self.artifacts.last()
    }

    pub fn latest_evaluation(&self) -> Option<&Evaluation> {
        self.evaluations.last()
    }

    pub fn next_version(&self) -> u32 {
        self.artifacts.last().map_or(1, |a| a.version + 1)
    }

    /// Key of the transcript a generator (or property) step talks to.
    pub fn transcript_for(&self, generator_side: bool) -> &'static str {
        match (self.strategy, generator_side) {
            (Strategy::Independent, true) => GENERATOR_TRANSCRIPT,
            (Strategy::Independent, false) => PROPERTIES_TRANSCRIPT,
            _ => MAIN_TRANSCRIPT,
        }
    }

    /// Replay-visible name of a transcript: `<id>.<key>` for the
    /// two-conversation strategy, otherwise the session id.
    pub fn transcript_session_id(&self, key: &str) -> String {
        match self.strategy {
            Strategy::Independent => format!("{}.{key}", self.session_id),
            _ => self.session_id.clone(),
        }
    }

    fn message(&self, r: &MessageRef) -> Result<&PromptMessage, SessionError> {
        let m = self
            .transcripts
            .get(&r.transcript)
            .and_then(|t| t.messages.get(r.index))
            .ok_or_else(|| SessionError::Journal(format!("no message {} in transcript {}", r.index, r.transcript)))?;
        if m.role != Role::Assistant {
            return Err(SessionError::Journal(format!(
                "message {} of {} is not a reply",
                r.index, r.transcript
            )));
        }
        Ok(m)
    }

    fn code_at(&self, r: &MessageRef) -> Result<String, BuildError> {
        let m = self.message(r).map_err(|e| BuildError::Session(Box::new(e)))?;
        extract_code(m).map(|c| c.source_text).map_err(|e| BuildError::Extract {
            message: e.to_string(),
            raw: m.text.clone(),
        })
    }

    /// Extracts and assembles the artifact that `sources` describe.
    pub fn derive_artifact(
        &self,
        version: u32,
        sources: &ArtifactSources,
        options: &AssemblyOptions,
    ) -> Result<ArtifactVersion, BuildError> {
        let mut out = ArtifactVersion {
            version,
            generator: None,
            properties_text: None,
            combined_text: None,
            test: AssembledTest {
                source_text: String::new(),
                mode: crate::assembly::TestMode::Combined,
                target: self.target.clone(),
                test_name: String::new(),
                generator_name: None,
                properties: Vec::new(),
                phase_map: Vec::new(),
                strict: options.strict,
            },
            test_sha256: String::new(),
            sources: sources.clone(),
            options: options.clone(),
        };
        match (&sources.generator, &sources.properties, &sources.combined) {
            (Some(g), Some(p), None) => {
                let gen_code = self.code_at(g)?;
                let props = self.code_at(p)?;
                let generator = GeneratorArtifact::from_source(&gen_code).map_err(BuildError::Assembly)?;
                out.test =
                    assemble_separate(&generator, &props, &self.target, options).map_err(BuildError::Assembly)?;
                out.generator = Some(generator);
                out.properties_text = Some(props);
            }
            (None, None, Some(c)) => {
                let code = self.code_at(c)?;
                out.test = instrument_combined(&code, &self.target, options).map_err(BuildError::Assembly)?;
                out.combined_text = Some(code);
            }
            _ => {
                return Err(BuildError::Session(Box::new(SessionError::Journal(
                    "artifact sources must name a generator and properties, or one combined reply".into(),
                ))))
            }
        }
        out.test_sha256 = sha256_hex(&out.test.source_text);
        Ok(out)
    }

    /// Applies one journal event. Live operations and journal replay both
    /// go through here, so a replayed session equals the live one.
    pub fn apply(&mut self, event: &Event) -> Result<(), SessionError> {
        match event {
            Event::Opened { .. } => {
                return Err(SessionError::Journal("duplicate Opened event".into()));
            }
            Event::StateChanged { from, to } => {
                if *from != self.state || !from.can_move_to(*to) {
                    return Err(SessionError::Journal(format!(
                        "transition {from} -> {to} recorded while in {}",
                        self.state
                    )));
                }
                self.state = *to;
                if matches!(
                    to,
                    SessionState::Reviewed | SessionState::Synthesized | SessionState::Closed
                ) {
                    self.pending = None;
                }
            }
            Event::MessagesAppended {
                transcript,
                transcript_session_id,
                messages,
            } => {
                let t = self
                    .transcripts
                    .entry(transcript.clone())
                    .or_insert_with(|| Transcript::new(transcript_session_id.clone(), Vec::new()));
                t.messages.extend(messages.iter().cloned());
                t.validate()?;
            }
            Event::SynthesisFailed(f) => self.last_failure = Some(f.clone()),
            Event::ArtifactCreated {
                version,
                sources,
                options,
                test_sha256,
            } => {
                if *version != self.next_version() {
                    return Err(SessionError::Journal(format!(
                        "artifact v{version} recorded after v{}",
                        self.next_version() - 1
                    )));
                }
                let artifact = self
                    .derive_artifact(*version, sources, options)
                    .map_err(|_| SessionError::AuditMismatch { version: *version })?;
                if &artifact.test_sha256 != test_sha256 {
                    return Err(SessionError::AuditMismatch { version: *version });
                }
                self.artifacts.push(artifact);
                self.last_failure = None;
            }
            Event::EvaluationRecorded(e) => {
                if e.index != self.evaluations.len() || !self.artifacts.iter().any(|a| a.version == e.artifact_version)
                {
                    return Err(SessionError::Journal(format!(
                        "evaluation {} references unknown artifact v{}",
                        e.index, e.artifact_version
                    )));
                }
                self.evaluations.push((**e).clone());
            }
            Event::MitigationChosen(p) => self.pending = Some(p.clone()),
            Event::MitigationLogged(entry) => {
                if let Some(v) = entry.resulting_version {
                    if self.latest_artifact().map(|a| a.version) != Some(v) {
                        return Err(SessionError::Journal(format!(
                            "mitigation result v{v} is not the latest artifact"
                        )));
                    }
                }
                self.mitigation_log.push(entry.clone());
            }
        }
        Ok(())
    }

    pub fn from_events(events: &[Event]) -> Result<Self, SessionError> {
        let mut iter = events.iter();
        let mut session = match iter.next() {
            Some(Event::Opened {
                format,
                session_id,
                target,
                strategy,
                provider,
                assembly,
            }) => {
                if *format != JOURNAL_FORMAT {
                    return Err(SessionError::Journal(format!("unsupported journal format {format}")));
                }
                Session {
                    session_id: session_id.clone(),
                    target: target.clone(),
                    strategy: *strategy,
                    provider: provider.clone(),
                    assembly: assembly.clone(),
                    state: SessionState::Drafting,
                    transcripts: BTreeMap::new(),
                    artifacts: Vec::new(),
                    evaluations: Vec::new(),
                    mitigation_log: Vec::new(),
                    pending: None,
                    last_failure: None,
                }
            }
            _ => return Err(SessionError::Journal("journal must start with Opened".into())),
        };
        for e in iter {
            session.apply(e)?;
        }
        Ok(session)
    }

    /// Unified diff of assembled test sources between two versions.
    pub fn diff(&self, from: u32, to: u32) -> Option<String> {
        let a = self.artifacts.iter().find(|a| a.version == from)?;
        let b = self.artifacts.iter().find(|a| a.version == to)?;
        Some(
            similar::TextDiff::from_lines(&a.test.source_text, &b.test.source_text)
                .unified_diff()
                .header(&format!("v{from}"), &format!("v{to}"))
                .to_string(),
        )
    }
}

/// Why an artifact could not be built from its replies.
#[derive(Debug)]
pub enum BuildError {
    Extract { message: String, raw: String },
    Assembly(AssemblyError),
    Session(Box<SessionError>),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::Extract { message, .. } => write!(f, "extraction: {message}"),
            BuildError::Assembly(e) => write!(f, "assembly: {e}"),
            BuildError::Session(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum Event {
    Opened {
        format: u32,
        session_id: String,
        target: TargetApi,
        strategy: Strategy,
        provider: ProviderConfig,
        assembly: AssemblyOptions,
    },
    StateChanged {
        from: SessionState,
        to: SessionState,
    },
    MessagesAppended {
        transcript: String,
        transcript_session_id: String,
        messages: Vec<PromptMessage>,
    },
    SynthesisFailed(SynthesisFailure),
    ArtifactCreated {
        version: u32,
        sources: ArtifactSources,
        options: AssemblyOptions,
        test_sha256: String,
    },
    EvaluationRecorded(Box<Evaluation>),
    MitigationChosen(PendingMitigation),
    MitigationLogged(MitigationLogEntry),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use SessionState::*;
        assert!(Reviewed.can_move_to(AwaitingChoice));
        assert!(!Synthesized.can_move_to(Mitigating));
        assert!(!Closed.can_move_to(Closed));
        assert!(Drafting.can_move_to(Closed));
        assert!(!Drafting.can_move_to(Evaluating));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("Together".parse::<Strategy>().unwrap(), Strategy::Together);
        assert!("both".parse::<Strategy>().is_err());
    }

    #[test]
    fn plan_validation() {
        let mut p = EvaluationPlanConfig::default();
        assert!(p.validate().is_ok());
        p.thresholds.soundness = Ratio::one();
        assert!(p.validate().is_err());
        p = EvaluationPlanConfig {
            n_runs: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let parsed: EvaluationPlanConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, EvaluationPlanConfig::default());
    }
}
