#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;
use std::sync::Arc;

use pbt_workbench::llm::{ProviderConfig, ReplayMode};
use pbt_workbench::prompts::{render_messages, PromptMessage, Role, TargetApi};
use pbt_workbench::protocol::{RunnerCommand, RunnerHandle};
use pbt_workbench::session::{OpenOptions, SessionStore, Strategy, Workbench};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn doc(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("docfix").join(format!("{name}.txt"))).unwrap()
}

pub fn cumsum() -> TargetApi {
    TargetApi::from_qualname("numpy.cumsum", doc("cumsum")).unwrap()
}

pub fn find_cycle() -> TargetApi {
    TargetApi::from_qualname("networkx.find_cycle", doc("find_cycle"))
        .unwrap()
        .with_input_object("networkx.Graph")
}

pub fn total_seconds() -> TargetApi {
    TargetApi::from_qualname("datetime.timedelta.total_seconds", doc("total_seconds"))
        .unwrap()
        .with_module_path("datetime")
        .with_input_object("datetime.timedelta")
}

pub fn replay() -> ProviderConfig {
    ProviderConfig::replay(fixtures().join("replay"), ReplayMode::Ordinal)
}

pub fn runner_command(fixture_files: &[PathBuf]) -> RunnerCommand {
    let mut cmd = RunnerCommand::new(env!("CARGO_BIN_EXE_pbt-fixture-runner"));
    for f in fixture_files {
        cmd = cmd.arg(f.display().to_string());
    }
    cmd
}

pub fn workbench_runner() -> RunnerHandle {
    RunnerHandle::start(&runner_command(&[fixtures().join("runner/workbench.json")])).unwrap()
}

/// Writes a fixture-runner config into `dir` and returns its path.
pub fn runner_config(dir: &std::path::Path, name: &str, json: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    path
}

pub fn golden_prompts_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

pub fn golden_targets() -> [(&'static str, TargetApi); 3] {
    [
        ("cumsum", cumsum()),
        ("find_cycle", find_cycle()),
        ("total_seconds", total_seconds()),
    ]
}

/// Every prompt a strategy sends while opening a session, grouped by
/// transcript. Replies are left out.
pub fn opening_prompts(doc: &str, target: TargetApi, strategy: Strategy) -> String {
    let dir = tempfile::tempdir().unwrap();
    let wb = Workbench::new(Arc::new(SessionStore::open(dir.path()).unwrap()));
    let id = format!("golden-{doc}-{strategy}");
    let opts = OpenOptions {
        session_id: Some(id.clone()),
        ..Default::default()
    };
    let s = wb
        .open_session(target, strategy, replay(), opts)
        .unwrap_or_else(|e| panic!("{id}: {e}"));
    let mut out = String::new();
    for (name, t) in &s.transcripts {
        let sent: Vec<PromptMessage> = t
            .messages
            .iter()
            .filter(|m| m.role != Role::Assistant)
            .cloned()
            .collect();
        out.push_str(&format!("##### transcript: {name}\n"));
        out.push_str(&render_messages(&sent));
    }
    out
}
