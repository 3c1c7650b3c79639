use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::store::SessionStore;
use super::{
    ArtifactSources, BuildError, Evaluation, EvaluationPlanConfig, Event, MessageRef, MitigationLogEntry,
    PendingMitigation, Session, SessionError, SessionState, Strategy, SynthesisFailure, JOURNAL_FORMAT,
};
use crate::assembly::AssemblyOptions;
use crate::llm::{provider_from_config, ProviderConfig, Transcript};
use crate::metrics::{compute_scorecard, Evidence, Issue, IssueKind, QualityScorecard, ScoringInput};
use crate::prompts::{
    build_followup_prompt, build_mitigation_prompt_with, build_synthesis_prompt_with, MitigationAction, MitigationKind,
    PromptMessage, PromptTask, TemplateSet,
};
use crate::protocol::client::{exec_mutant, list_mutants, run_suite};
use crate::protocol::{Mutant, MutantResult, RunReport, RunnerHandle};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenOptions {
    /// Explicit id; a random one is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default)]
    pub assembly: AssemblyOptions,
}

/// Raw execution results of one evaluation, stored next to the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub report: RunReport,
    #[serde(default)]
    pub mutants: Vec<Mutant>,
    #[serde(default)]
    pub mutant_results: Vec<MutantResult>,
}

/// Session operations over a store. Each operation loads the session from
/// its journal under the session's lock, checks the pre-state, and appends
/// the resulting events.
#[derive(Debug, Clone)]
pub struct Workbench {
    store: Arc<SessionStore>,
    templates: Arc<TemplateSet>,
}

/// Events produced by an operation, applied to the in-memory session as
/// they are recorded.
struct Tx<'a> {
    store: &'a SessionStore,
    session: Session,
    seq: usize,
    pending: Vec<Event>,
}

impl<'a> Tx<'a> {
    fn record(&mut self, event: Event) -> Result<(), SessionError> {
        self.session.apply(&event)?;
        self.pending.push(event);
        Ok(())
    }

    fn move_to(&mut self, to: SessionState) -> Result<(), SessionError> {
        let from = self.session.state;
        self.record(Event::StateChanged { from, to })
    }

    fn commit(&mut self) -> Result<(), SessionError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        self.store.append(&self.session.session_id, self.seq, &self.pending)?;
        self.seq += self.pending.len();
        self.pending.clear();
        Ok(())
    }
}

fn require(session: &Session, op: &'static str, allowed: &[SessionState]) -> Result<(), SessionError> {
    if allowed.contains(&session.state) {
        Ok(())
    } else {
        Err(SessionError::InvalidState {
            op,
            state: session.state,
        })
    }
}

/// Prompt text the human starts from when mitigating `issue`.
pub fn default_payload(session: &Session, issue: &Issue) -> String {
    let property_source = |id: &str| {
        session
            .latest_artifact()
            .and_then(|a| a.test.properties.iter().find(|p| p.id == id))
            .map(|p| p.source_text.trim_end().to_string())
            .unwrap_or_default()
    };
    match &issue.evidence {
        Evidence::GeneratorErrors {
            error_type,
            message,
            input_rendering,
            ..
        } => match input_rendering {
            Some(input) => format!("{error_type}: {message}\nwhile generating: {input}"),
            None => format!("{error_type}: {message}"),
        },
        Evidence::UncoveredBranches { branches, .. } => {
            let list = if branches.is_empty() {
                "some branches".to_string()
            } else {
                format!("the branches {}", branches.join(", "))
            };
            format!(
                "Generated inputs never reach {list} of `{}`. Also generate inputs that reach them.",
                session.target.qualname
            )
        }
        Evidence::PropertyErrors {
            error_type, message, ..
        } => format!("{}\n\n{error_type}: {message}", property_source(&issue.subject)),
        Evidence::Counterexample { input_rendering, .. } => format!(
            "{}\n\nfailing input: {input_rendering}",
            property_source(&issue.subject)
        ),
        Evidence::SurvivingMutants { mutants, .. } => mutants
            .iter()
            .find(|m| !m.diff.trim().is_empty())
            .map(|m| m.diff.trim_end().to_string())
            .or_else(|| mutants.first().map(|m| format!("mutant {}", m.mutant_id)))
            .unwrap_or_default(),
    }
}

pub fn mitigation_kind_for(kind: IssueKind) -> MitigationKind {
    match kind {
        IssueKind::InvalidGenerator => MitigationKind::FixGeneratorError,
        IssueKind::LowDiversityGenerator => MitigationKind::EnrichGenerator,
        IssueKind::InvalidProperty => MitigationKind::FixPropertyError,
        IssueKind::UnsoundProperty => MitigationKind::FixUnsoundProperty,
        IssueKind::WeakProperty => MitigationKind::StrengthenProperty,
    }
}

impl Workbench {
    pub fn new(store: Arc<SessionStore>) -> Self {
        Self {
            store,
            templates: Arc::new(TemplateSet::builtin()),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        self.store.load(id)
    }

    fn begin(&self, id: &str) -> Result<Tx<'_>, SessionError> {
        let events = self.store.read_events(id)?;
        Ok(Tx {
            store: &self.store,
            session: Session::from_events(&events)?,
            seq: events.len(),
            pending: Vec::new(),
        })
    }

    /// Creates a session and synthesizes artifact v1. On synthesis failure
    /// the session stays in Drafting with the failure recorded.
    pub fn open_session(
        &self,
        target: crate::prompts::TargetApi,
        strategy: Strategy,
        provider: ProviderConfig,
        opts: OpenOptions,
    ) -> Result<Session, SessionError> {
        target.validate()?;
        provider.validate()?;
        let id = opts
            .session_id
            .clone()
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let lock = self.store.lock(&id);
        let _guard = lock.lock().unwrap();
        self.store.create(&id)?;
        let opened = Event::Opened {
            format: JOURNAL_FORMAT,
            session_id: id.clone(),
            target,
            strategy,
            provider,
            assembly: opts.assembly,
        };
        let mut tx = Tx {
            store: &self.store,
            session: Session::from_events(std::slice::from_ref(&opened))?,
            seq: 0,
            pending: vec![opened],
        };
        tx.commit()?;
        match self.synthesize(&mut tx) {
            Ok(()) => {
                tx.move_to(SessionState::Synthesized)?;
                tx.commit()?;
                Ok(tx.session)
            }
            Err(failure) => {
                let message = format!("{}: {}", failure.stage, failure.message);
                tx.record(Event::SynthesisFailed(failure))?;
                tx.commit()?;
                Err(SessionError::SynthesisFailed {
                    session_id: id,
                    message,
                })
            }
        }
    }

    /// Sends `messages` as the next user turn(s) of `key`, records the
    /// exchange, and returns a reference to the reply.
    fn converse(
        &self,
        tx: &mut Tx<'_>,
        key: &str,
        outgoing: Vec<PromptMessage>,
    ) -> Result<MessageRef, SynthesisFailure> {
        let fail = |stage: &str, message: String| SynthesisFailure {
            stage: stage.to_string(),
            message,
            raw_reply: None,
        };
        let session_key = tx.session.transcript_session_id(key);
        let mut transcript = tx
            .session
            .transcripts
            .get(key)
            .cloned()
            .unwrap_or_else(|| Transcript::new(session_key.clone(), Vec::new()));
        transcript.messages.extend(outgoing.iter().cloned());
        let provider = provider_from_config(&tx.session.provider).map_err(|e| fail("provider", e.to_string()))?;
        let reply = provider
            .complete(&transcript)
            .map_err(|e| fail("completion", e.to_string()))?;
        let mut messages = outgoing;
        messages.push(reply);
        let index = transcript.messages.len();
        tx.record(Event::MessagesAppended {
            transcript: key.to_string(),
            transcript_session_id: session_key,
            messages,
        })
        .map_err(|e| fail("journal", e.to_string()))?;
        tx.commit().map_err(|e| fail("journal", e.to_string()))?;
        Ok(MessageRef {
            transcript: key.to_string(),
            index,
        })
    }

    fn synthesize(&self, tx: &mut Tx<'_>) -> Result<(), SynthesisFailure> {
        let prompt_fail = |e: crate::prompts::PromptError| SynthesisFailure {
            stage: "prompt".into(),
            message: e.to_string(),
            raw_reply: None,
        };
        let target = tx.session.target.clone();
        let io = tx.session.assembly.io_names.clone();
        let t = &self.templates;
        let sources = match tx.session.strategy {
            Strategy::Independent => {
                let g = build_synthesis_prompt_with(t, &target, &PromptTask::generator()).map_err(prompt_fail)?;
                let p = build_synthesis_prompt_with(t, &target, &PromptTask::properties(io)).map_err(prompt_fail)?;
                let generator = self.converse(tx, super::GENERATOR_TRANSCRIPT, g)?;
                let properties = self.converse(tx, super::PROPERTIES_TRANSCRIPT, p)?;
                ArtifactSources {
                    generator: Some(generator),
                    properties: Some(properties),
                    combined: None,
                }
            }
            Strategy::Consecutive => {
                let g = build_synthesis_prompt_with(t, &target, &PromptTask::generator()).map_err(prompt_fail)?;
                let generator = self.converse(tx, super::MAIN_TRANSCRIPT, g)?;
                let gen_code = tx
                    .session
                    .code_at(&generator)
                    .map_err(|e| build_failure(e, "generator"))?;
                let gen = crate::assembly::GeneratorArtifact::from_source(&gen_code)
                    .map_err(|e| build_failure(BuildError::Assembly(e), "generator"))?;
                let follow = build_followup_prompt(t, &target, &gen.generator_name, &gen.source_text, &io)
                    .map_err(prompt_fail)?;
                let properties = self.converse(tx, super::MAIN_TRANSCRIPT, vec![follow])?;
                ArtifactSources {
                    generator: Some(generator),
                    properties: Some(properties),
                    combined: None,
                }
            }
            Strategy::Together => {
                let c = build_synthesis_prompt_with(t, &target, &PromptTask::combined()).map_err(prompt_fail)?;
                let combined = self.converse(tx, super::MAIN_TRANSCRIPT, c)?;
                ArtifactSources {
                    generator: None,
                    properties: None,
                    combined: Some(combined),
                }
            }
        };
        self.create_artifact(tx, sources)
    }

    fn create_artifact(&self, tx: &mut Tx<'_>, sources: ArtifactSources) -> Result<(), SynthesisFailure> {
        let version = tx.session.next_version();
        let options = tx.session.assembly.clone();
        let artifact = tx
            .session
            .derive_artifact(version, &sources, &options)
            .map_err(|e| build_failure(e, "assembly"))?;
        let io_fail = |e: SessionError| SynthesisFailure {
            stage: "journal".into(),
            message: e.to_string(),
            raw_reply: None,
        };
        self.store
            .write_file(
                &tx.session.session_id,
                &SessionStore::artifact_file(&artifact.test_sha256),
                &artifact.test.source_text,
            )
            .map_err(io_fail)?;
        tx.record(Event::ArtifactCreated {
            version,
            sources,
            options,
            test_sha256: artifact.test_sha256,
        })
        .map_err(io_fail)
    }

    /// Runs the latest artifact under `plan` and records a scorecard.
    pub fn evaluate(
        &self,
        id: &str,
        plan: &EvaluationPlanConfig,
        runner: &RunnerHandle,
    ) -> Result<QualityScorecard, SessionError> {
        plan.validate()?;
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        require(
            &tx.session,
            "evaluate",
            &[SessionState::Synthesized, SessionState::Reviewed],
        )?;
        let prior = tx.session.state;
        let seed = plan
            .seed
            .or_else(|| tx.session.latest_evaluation().map(|e| e.seed))
            .unwrap_or(0);
        let artifact = tx
            .session
            .latest_artifact()
            .cloned()
            .ok_or_else(|| SessionError::Journal("synthesized session without artifacts".into()))?;
        tx.move_to(SessionState::Evaluating)?;
        tx.commit()?;

        let run = || -> Result<(EvaluationRecord, QualityScorecard), SessionError> {
            let test = &artifact.test;
            let report = run_suite(runner, test, plan.n_runs, seed, plan.collect_coverage)?;
            let (mutants, results) = if plan.mutation {
                let mutants = list_mutants(runner, &test.target, &plan.operators)?;
                let results = mutants
                    .iter()
                    .map(|m| exec_mutant(runner, test, &m.mutant_id, plan.n_runs, seed))
                    .collect::<Result<Vec<_>, _>>()?;
                (mutants, results)
            } else {
                (Vec::new(), Vec::new())
            };
            let card = compute_scorecard(ScoringInput {
                report: &report,
                mutation: plan.mutation.then_some((mutants.as_slice(), results.as_slice())),
                generator_name: test.generator_name.as_deref(),
                thresholds: plan.thresholds,
                evaluation_index: tx.session.evaluations.len(),
            })?;
            Ok((
                EvaluationRecord {
                    report,
                    mutants,
                    mutant_results: results,
                },
                card,
            ))
        };
        match run() {
            Ok((record, card)) => {
                let index = tx.session.evaluations.len();
                let report_file = format!("reports/eval-{index}.json");
                self.store.write_file(
                    id,
                    &report_file,
                    &serde_json::to_string_pretty(&record).map_err(|e| SessionError::Io(e.to_string()))?,
                )?;
                tx.record(Event::EvaluationRecorded(Box::new(Evaluation {
                    index,
                    artifact_version: artifact.version,
                    plan: plan.clone(),
                    seed,
                    scorecard: card.clone(),
                    report_file,
                })))?;
                tx.move_to(SessionState::Reviewed)?;
                tx.commit()?;
                Ok(card)
            }
            Err(e) => {
                tx.move_to(prior)?;
                tx.commit()?;
                Err(e)
            }
        }
    }

    pub fn read_evaluation_record(&self, id: &str, index: usize) -> Result<EvaluationRecord, SessionError> {
        let session = self.load(id)?;
        let eval = session
            .evaluations
            .get(index)
            .ok_or_else(|| SessionError::NotFound(format!("{id} evaluation {index}")))?;
        let text = self.store.read_file(id, &eval.report_file)?;
        serde_json::from_str(&text).map_err(|e| SessionError::Journal(e.to_string()))
    }

    fn find_issue(session: &Session, issue_id: &str) -> Result<Issue, SessionError> {
        session
            .latest_evaluation()
            .and_then(|e| e.scorecard.issue(issue_id))
            .cloned()
            .ok_or_else(|| SessionError::StaleIssue(issue_id.to_string()))
    }

    /// Moves to AwaitingChoice and returns the default action for `issue_id`.
    pub fn propose_mitigation(&self, id: &str, issue_id: &str) -> Result<MitigationAction, SessionError> {
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        require(&tx.session, "propose_mitigation", &[SessionState::Reviewed])?;
        let issue = Self::find_issue(&tx.session, issue_id)?;
        let action = MitigationAction::new(mitigation_kind_for(issue.kind), default_payload(&tx.session, &issue))?;
        tx.move_to(SessionState::AwaitingChoice)?;
        tx.record(Event::MitigationChosen(PendingMitigation {
            issue,
            action: action.clone(),
        }))?;
        tx.commit()?;
        Ok(action)
    }

    /// Returns from AwaitingChoice to Reviewed without mitigating.
    pub fn cancel_mitigation(&self, id: &str) -> Result<(), SessionError> {
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        require(&tx.session, "cancel_mitigation", &[SessionState::AwaitingChoice])?;
        tx.move_to(SessionState::Reviewed)?;
        tx.commit()
    }

    /// Fixes the action for an issue of the latest evaluation, optionally
    /// with a human-edited payload, and enters Mitigating.
    pub fn choose_mitigation(
        &self,
        id: &str,
        issue: &Issue,
        edited_payload: Option<String>,
    ) -> Result<MitigationAction, SessionError> {
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        require(
            &tx.session,
            "choose_mitigation",
            &[SessionState::Reviewed, SessionState::AwaitingChoice],
        )?;
        let latest = tx.session.latest_evaluation().map(|e| e.index);
        if latest != Some(issue.evaluation_index) {
            return Err(SessionError::StaleIssue(issue.id.clone()));
        }
        let current = Self::find_issue(&tx.session, &issue.id)?;
        let payload = edited_payload.unwrap_or_else(|| default_payload(&tx.session, &current));
        let action = MitigationAction::new(mitigation_kind_for(current.kind), payload)?;
        if tx.session.state == SessionState::Reviewed {
            tx.move_to(SessionState::AwaitingChoice)?;
        }
        tx.record(Event::MitigationChosen(PendingMitigation {
            issue: current,
            action: action.clone(),
        }))?;
        tx.move_to(SessionState::Mitigating)?;
        tx.commit()?;
        Ok(action)
    }

    /// Looks up an issue of the latest evaluation by id.
    pub fn issue(&self, id: &str, issue_id: &str) -> Result<Issue, SessionError> {
        Self::find_issue(&self.load(id)?, issue_id)
    }

    /// Sends the chosen mitigation, re-extracts and re-assembles. Returns
    /// the new artifact version.
    pub fn apply_mitigation(&self, id: &str) -> Result<u32, SessionError> {
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        require(&tx.session, "apply_mitigation", &[SessionState::Mitigating])?;
        let pending = tx
            .session
            .pending
            .clone()
            .ok_or_else(|| SessionError::Journal("Mitigating without a chosen action".into()))?;
        let artifact = tx
            .session
            .latest_artifact()
            .cloned()
            .ok_or_else(|| SessionError::Journal("no artifact to mitigate".into()))?;
        let generator_side = pending.action.kind.targets_generator();
        let key = tx.session.transcript_for(generator_side);
        let artifact_name = match (&artifact.generator, generator_side) {
            (Some(g), true) => g.generator_name.clone(),
            _ => artifact.test.test_name.clone(),
        };

        let attempt = (|| -> Result<u32, SynthesisFailure> {
            let prompt = build_mitigation_prompt_with(
                &self.templates,
                &pending.action,
                &artifact_name,
                &tx.session.target.qualname,
            )
            .map_err(|e| SynthesisFailure {
                stage: "prompt".into(),
                message: e.to_string(),
                raw_reply: None,
            })?;
            let reply = self.converse(&mut tx, key, vec![prompt])?;
            let mut sources = artifact.sources.clone();
            match tx.session.strategy {
                Strategy::Together => sources.combined = Some(reply),
                _ if generator_side => sources.generator = Some(reply),
                _ => sources.properties = Some(reply),
            }
            self.create_artifact(&mut tx, sources)?;
            Ok(tx.session.next_version() - 1)
        })();

        match attempt {
            Ok(version) => {
                tx.record(Event::MitigationLogged(MitigationLogEntry {
                    issue: pending.issue,
                    action: pending.action,
                    resulting_version: Some(version),
                    failure: None,
                }))?;
                tx.move_to(SessionState::Synthesized)?;
                tx.commit()?;
                Ok(version)
            }
            Err(failure) => {
                let message = format!("{}: {}", failure.stage, failure.message);
                tx.record(Event::SynthesisFailed(failure))?;
                tx.record(Event::MitigationLogged(MitigationLogEntry {
                    issue: pending.issue,
                    action: pending.action,
                    resulting_version: None,
                    failure: Some(message.clone()),
                }))?;
                tx.move_to(SessionState::Reviewed)?;
                tx.commit()?;
                Err(SessionError::SynthesisFailed {
                    session_id: id.to_string(),
                    message,
                })
            }
        }
    }

    /// Chooses and applies in one step (the non-interactive path).
    pub fn mitigate(&self, id: &str, issue_id: &str, edited_payload: Option<String>) -> Result<u32, SessionError> {
        let issue = self.issue(id, issue_id)?;
        self.choose_mitigation(id, &issue, edited_payload)?;
        self.apply_mitigation(id)
    }

    pub fn close(&self, id: &str) -> Result<(), SessionError> {
        let lock = self.store.lock(id);
        let _guard = lock.lock().unwrap();
        let mut tx = self.begin(id)?;
        if tx.session.state == SessionState::Closed {
            return Err(SessionError::InvalidState {
                op: "close",
                state: SessionState::Closed,
            });
        }
        tx.move_to(SessionState::Closed)?;
        tx.commit()
    }
}

fn build_failure(e: BuildError, stage: &str) -> SynthesisFailure {
    match e {
        BuildError::Extract { message, raw } => SynthesisFailure {
            stage: format!("{stage} extraction"),
            message,
            raw_reply: Some(raw),
        },
        other => SynthesisFailure {
            stage: stage.to_string(),
            message: other.to_string(),
            raw_reply: None,
        },
    }
}
