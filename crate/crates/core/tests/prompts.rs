mod common;

use std::path::{Path, PathBuf};

use pbt_workbench::llm::extract_code;
use pbt_workbench::prompts::{PromptMessage, Role};
use pbt_workbench::session::Strategy;

fn golden_dir() -> PathBuf {
    common::golden_prompts_dir()
}

#[test]
fn strategy_prompts_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (doc, target) in common::golden_targets() {
        for strategy in [Strategy::Independent, Strategy::Consecutive, Strategy::Together] {
            let text = common::opening_prompts(doc, target.clone(), strategy);
            assert!(
                text.contains(target.doc_text.trim_end()),
                "{doc}/{strategy}: doc not verbatim"
            );
            let path = golden_dir().join(format!("{doc}-{strategy}.txt"));
            if update {
                std::fs::create_dir_all(golden_dir()).unwrap();
                std::fs::write(&path, &text).unwrap();
            }
            let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(text, golden, "{doc}/{strategy} differs from {}", path.display());
        }
    }
}

#[test]
fn consecutive_followup_quotes_generator_verbatim() {
    let text = std::fs::read_to_string(golden_dir().join("total_seconds-consecutive.txt")).unwrap();
    assert_eq!(text.matches("=== user ===").count(), 2);
    assert!(text.contains("def generate_timedelta(draw):"));
    let independent = std::fs::read_to_string(golden_dir().join("total_seconds-independent.txt")).unwrap();
    assert!(independent.contains("##### transcript: generator"));
    assert!(independent.contains("##### transcript: properties"));
}

#[test]
fn two_fenced_blocks_are_joined() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/extract");
    let reply = PromptMessage::new(
        Role::Assistant,
        std::fs::read_to_string(dir.join("two_blocks.md")).unwrap(),
    );
    let code = extract_code(&reply).unwrap();
    assert_eq!(
        code.source_text,
        std::fs::read_to_string(dir.join("two_blocks.py")).unwrap()
    );
    let again = extract_code(&PromptMessage::new(Role::Assistant, code.source_text.clone())).unwrap();
    assert_eq!(again.source_text, code.source_text);
}
