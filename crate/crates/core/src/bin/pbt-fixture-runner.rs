//! Protocol v1 runner that answers from recorded fixture files.
//!
//! Usage: pbt-fixture-runner FIXTURES.json [MORE.json ...]

use std::io;
use std::process::ExitCode;

use pbt_workbench::protocol::fixture::FixtureSet;

fn main() -> ExitCode {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let set = if paths.is_empty() {
        FixtureSet::default()
    } else {
        match FixtureSet::load_all(&paths) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        }
    };
    let stdin = io::stdin();
    let code = set.serve(stdin.lock(), io::stdout().lock(), io::stderr().lock());
    ExitCode::from(code as u8)
}
