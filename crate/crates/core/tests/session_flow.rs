mod common;

use std::sync::Arc;

use pbt_workbench::metrics::{IssueKind, Ratio};
use pbt_workbench::prompts::{MitigationKind, Role};
use pbt_workbench::session::{
    EvaluationPlanConfig, OpenOptions, SessionError, SessionState, SessionStore, Strategy, Workbench,
};

fn workbench() -> (tempfile::TempDir, Workbench) {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    (dir, Workbench::new(Arc::new(store)))
}

fn named(id: &str) -> OpenOptions {
    OpenOptions {
        session_id: Some(id.into()),
        ..Default::default()
    }
}

fn plan() -> EvaluationPlanConfig {
    EvaluationPlanConfig {
        n_runs: 100,
        seed: Some(7),
        ..Default::default()
    }
}

#[test]
fn independent_open_records_two_transcripts() {
    let (_dir, wb) = workbench();
    let s = wb
        .open_session(
            common::total_seconds(),
            Strategy::Independent,
            common::replay(),
            named("ts-demo"),
        )
        .unwrap();
    assert_eq!(s.state, SessionState::Synthesized);
    assert_eq!(s.artifacts.len(), 1);
    let gen = &s.transcripts["generator"];
    let props = &s.transcripts["properties"];
    assert_eq!(gen.session_id, "ts-demo.generator");
    let roles: Vec<Role> = gen.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::System, Role::User, Role::Assistant]);
    assert_eq!(props.messages.len(), 3);
    let v1 = &s.artifacts[0];
    assert_eq!(v1.test.generator_name.as_deref(), Some("generate_timedelta"));
    assert_eq!(v1.test.property_ids(), ["P1"]);
    assert!(v1
        .test
        .source_text
        .contains("result = datetime.timedelta.total_seconds(input_args)"));
}

#[test]
fn scripted_refinement_flow_replays_byte_for_byte() {
    let (_dir, wb) = workbench();
    let runner = common::workbench_runner();
    let id = "ts-demo";
    wb.open_session(
        common::total_seconds(),
        Strategy::Independent,
        common::replay(),
        named(id),
    )
    .unwrap();

    let card = wb.evaluate(id, &plan(), &runner).unwrap();
    assert_eq!(card.generator_validity, Ratio::new(98, 100).unwrap());
    let gen_issue = "invalid-generator-generate_timedelta";
    assert!(card.issue(gen_issue).is_some());
    assert!(card.issue("weak-properties").is_some());
    assert_eq!(card.property_strength.unwrap(), Ratio::new(1, 3).unwrap());

    let action = wb.propose_mitigation(id, gen_issue).unwrap();
    assert_eq!(action.kind, MitigationKind::FixGeneratorError);
    assert!(action.context.text().starts_with("OverflowError: days=1000000000"));
    let issue = wb.issue(id, gen_issue).unwrap();
    wb.choose_mitigation(id, &issue, None).unwrap();
    assert_eq!(wb.apply_mitigation(id).unwrap(), 2);

    let card = wb
        .evaluate(id, &EvaluationPlanConfig { seed: None, ..plan() }, &runner)
        .unwrap();
    assert_eq!(card.generator_validity, Ratio::one());
    assert!(!card.issues.iter().any(|i| i.kind == IssueKind::InvalidGenerator));
    assert!(card.issue("weak-properties").is_some());

    assert_eq!(wb.mitigate(id, "weak-properties", None).unwrap(), 3);
    let card = wb.evaluate(id, &plan(), &runner).unwrap();
    assert!(card.issues.is_empty(), "{:?}", card.issues);
    assert_eq!(card.property_strength.unwrap(), Ratio::one());

    let s = wb.load(id).unwrap();
    assert_eq!(s.artifacts.len(), 3);
    assert_eq!(s.evaluations.iter().map(|e| e.seed).collect::<Vec<_>>(), [7, 7, 7]);
    assert_eq!(s.mitigation_log.len(), 2);
    assert!(s.mitigation_log.iter().all(|m| m.resulting_version.is_some()));
    // The weak-property mitigation continued the properties conversation only.
    assert_eq!(s.transcripts["generator"].user_turns(), 2);
    assert_eq!(s.transcripts["properties"].user_turns(), 2);
    assert_eq!(s.artifacts[1].generator, s.artifacts[2].generator);

    let audit = wb.store().audit(id).unwrap();
    assert!(audit.is_clean(), "{audit:?}");
    assert_eq!(audit.versions_checked, [1, 2, 3]);

    let diff = s.diff(1, 2).unwrap();
    assert!(diff.contains("-    seconds = draw(st.integers(min_value=0, max_value=86400 * 10))"));
    assert!(diff.contains("+    seconds = draw(st.integers(min_value=0, max_value=86399))"));

    let record = wb.read_evaluation_record(id, 0).unwrap();
    assert_eq!(record.report.outcomes.len(), 100);
    assert_eq!(record.mutants.len(), 4);
}

#[test]
fn operations_outside_their_pre_state_are_rejected() {
    let (_dir, wb) = workbench();
    let runner = common::workbench_runner();
    let id = "ts-demo";
    wb.open_session(
        common::total_seconds(),
        Strategy::Independent,
        common::replay(),
        named(id),
    )
    .unwrap();
    let invalid = |r: Result<_, SessionError>| matches!(r, Err(SessionError::InvalidState { .. }));

    // Synthesized
    assert!(invalid(wb.propose_mitigation(id, "weak-properties").map(|_| ())));
    assert!(invalid(wb.apply_mitigation(id).map(|_| ())));
    assert!(invalid(wb.cancel_mitigation(id)));

    wb.evaluate(id, &plan(), &runner).unwrap();
    // Reviewed
    assert!(invalid(wb.apply_mitigation(id).map(|_| ())));
    assert!(invalid(wb.cancel_mitigation(id)));

    wb.propose_mitigation(id, "weak-properties").unwrap();
    // AwaitingChoice
    assert!(invalid(wb.evaluate(id, &plan(), &runner).map(|_| ())));
    assert!(invalid(wb.propose_mitigation(id, "weak-properties").map(|_| ())));
    assert!(invalid(wb.apply_mitigation(id).map(|_| ())));
    wb.cancel_mitigation(id).unwrap();
    assert_eq!(wb.load(id).unwrap().state, SessionState::Reviewed);

    let old_issue = wb.issue(id, "weak-properties").unwrap();
    wb.evaluate(id, &plan(), &runner).unwrap();
    assert!(matches!(
        wb.choose_mitigation(id, &old_issue, None),
        Err(SessionError::StaleIssue(_))
    ));
    assert!(matches!(
        wb.propose_mitigation(id, "unsound-P9"),
        Err(SessionError::StaleIssue(_))
    ));

    wb.close(id).unwrap();
    assert!(invalid(wb.evaluate(id, &plan(), &runner).map(|_| ())));
    assert!(invalid(wb.close(id)));
    assert!(wb.store().audit(id).unwrap().is_clean());
}

#[test]
fn missing_replay_fixture_leaves_session_drafting() {
    let (_dir, wb) = workbench();
    let err = wb
        .open_session(
            common::cumsum(),
            Strategy::Together,
            common::replay(),
            named("no-such-fixture"),
        )
        .unwrap_err();
    assert!(matches!(err, SessionError::SynthesisFailed { .. }));
    let s = wb.load("no-such-fixture").unwrap();
    assert_eq!(s.state, SessionState::Drafting);
    assert!(s.artifacts.is_empty());
    assert!(s.last_failure.is_some());
    assert!(s.transcripts.values().all(|t| t.messages.is_empty()));
}

#[test]
fn failed_mitigation_returns_to_reviewed() {
    let (_dir, wb) = workbench();
    let runner = common::workbench_runner();
    // No reply is recorded for a second generator turn of this session.
    let id = "ts-nofix";
    wb.open_session(
        common::total_seconds(),
        Strategy::Independent,
        common::replay(),
        named(id),
    )
    .unwrap();
    wb.evaluate(id, &plan(), &runner).unwrap();
    let issue = wb.issue(id, "invalid-generator-generate_timedelta").unwrap();
    let action = wb.choose_mitigation(id, &issue, Some("edited by hand".into())).unwrap();
    assert_eq!(action.context.text(), "edited by hand");
    assert!(matches!(
        wb.apply_mitigation(id),
        Err(SessionError::SynthesisFailed { .. })
    ));
    let s = wb.load(id).unwrap();
    assert_eq!(s.state, SessionState::Reviewed);
    assert_eq!(s.artifacts.len(), 1);
    let entry = s.mitigation_log.last().unwrap();
    assert!(entry.resulting_version.is_none());
    assert!(entry.failure.as_deref().unwrap().contains("ts-nofix.generator-2"));
    assert_eq!(s.transcripts["generator"].user_turns(), 1);
    assert!(wb.store().audit(id).unwrap().is_clean());
}

#[test]
fn enrich_generator_reaches_every_branch() {
    let (_dir, wb) = workbench();
    let runner = common::workbench_runner();
    let id = "fc-demo";
    wb.open_session(common::find_cycle(), Strategy::Independent, common::replay(), named(id))
        .unwrap();
    let card = wb.evaluate(id, &plan(), &runner).unwrap();
    assert_eq!(card.generator_diversity.unwrap().branch, Ratio::new(1, 2).unwrap());
    let issue = wb.issue(id, "low-diversity-generate_graph").unwrap();
    let action = wb.choose_mitigation(id, &issue, None).unwrap();
    assert_eq!(action.kind, MitigationKind::EnrichGenerator);
    assert!(action.context.text().contains("5->6"));
    wb.apply_mitigation(id).unwrap();
    let card = wb.evaluate(id, &plan(), &runner).unwrap();
    assert_eq!(card.generator_diversity.unwrap().branch, Ratio::one());
    assert!(card.issues.is_empty(), "{:?}", card.issues);
}

#[test]
fn consecutive_followup_carries_generator_source() {
    let (_dir, wb) = workbench();
    let s = wb
        .open_session(
            common::cumsum(),
            Strategy::Consecutive,
            common::replay(),
            named("cumsum-consecutive"),
        )
        .unwrap();
    let main = &s.transcripts["main"];
    assert_eq!(main.user_turns(), 2);
    let followup = &main.messages[3];
    assert_eq!(followup.role, Role::User);
    assert!(followup.text.contains("def generate_cumsum_inputs(draw):"));
    assert_eq!(s.artifacts[0].test.property_ids(), ["P1", "P2"]);
}
