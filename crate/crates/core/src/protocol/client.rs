use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    ExecPayload, FrameKind, ListMutantsPayload, Mutant, MutantResult, MutationOperator, ParseInstrumentPayload,
    PongPayload, RunReport, RunnerError, RunnerRequest, RunnerResponse, PROTOCOL_VERSION,
};
use crate::assembly::{validate_phase_map, AssembledTest, GeneratorArtifact, TestMode};
use crate::prompts::TargetApi;

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_dir: Option<PathBuf>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            ..Default::default()
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    /// Parses a shell-like "program arg arg" line (whitespace split).
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let program = parts.next()?;
        Some(Self {
            program: program.into(),
            args: parts.map(str::to_string).collect(),
            ..Default::default()
        })
    }

    pub fn describe(&self) -> String {
        std::iter::once(self.program.display().to_string())
            .chain(self.args.iter().cloned())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

type Pending = Arc<Mutex<HashMap<String, Sender<Result<RunnerResponse, RunnerError>>>>>;

/// A live runner subprocess. Writes are serialized; any number of
/// requests may be outstanding and are matched to responses by id.
pub struct RunnerHandle {
    child: Mutex<Child>,
    stdin: Mutex<ChildStdin>,
    pending: Pending,
    /// Set once the reader sees EOF or an unrecoverable frame.
    dead: Arc<Mutex<Option<RunnerError>>>,
    next_id: AtomicU64,
    version: String,
    command: RunnerCommand,
}

impl std::fmt::Debug for RunnerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunnerHandle")
            .field("command", &self.command.describe())
            .field("version", &self.version)
            .finish()
    }
}

impl RunnerHandle {
    pub fn start(cmd: &RunnerCommand) -> Result<Self, RunnerError> {
        let mut command = Command::new(&cmd.program);
        command
            .args(&cmd.args)
            .envs(&cmd.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &cmd.working_dir {
            command.current_dir(dir);
        }
        let mut child = command
            .spawn()
            .map_err(|e| RunnerError::SpawnFailure(format!("{}: {e}", cmd.describe())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let stderr_buf = Arc::new(Mutex::new(String::new()));
        let (stderr_done_tx, stderr_done_rx) = mpsc::channel::<()>();
        {
            let buf = Arc::clone(&stderr_buf);
            thread::spawn(move || {
                let mut reader = BufReader::new(stderr);
                let mut chunk = [0u8; 4096];
                while let Ok(n) = reader.read(&mut chunk) {
                    if n == 0 {
                        break;
                    }
                    buf.lock().unwrap().push_str(&String::from_utf8_lossy(&chunk[..n]));
                }
                let _ = stderr_done_tx.send(());
            });
        }

        let pending: Pending = Arc::default();
        let dead = Arc::new(Mutex::new(None));
        {
            let pending = Arc::clone(&pending);
            let dead = Arc::clone(&dead);
            thread::spawn(move || read_frames(stdout, &pending, &dead, &stderr_buf, stderr_done_rx));
        }

        let mut handle = Self {
            child: Mutex::new(child),
            stdin: Mutex::new(stdin),
            pending,
            dead,
            next_id: AtomicU64::new(1),
            version: String::new(),
            command: cmd.clone(),
        };
        let pong = match handle.request_with_timeout(RunnerRequest::ping(), HANDSHAKE_TIMEOUT) {
            Ok(r) => r,
            Err(RunnerError::RequestTimeout { .. }) => return Err(RunnerError::HandshakeTimeout(HANDSHAKE_TIMEOUT)),
            Err(e) => return Err(e),
        };
        let version = pong.into_payload::<PongPayload>()?.version;
        if version != PROTOCOL_VERSION {
            return Err(RunnerError::VersionMismatch {
                expected: PROTOCOL_VERSION.into(),
                found: version,
            });
        }
        handle.version = version;
        Ok(handle)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn command(&self) -> &RunnerCommand {
        &self.command
    }

    pub fn is_alive(&self) -> bool {
        self.dead.lock().unwrap().is_none() && matches!(self.child.lock().unwrap().try_wait(), Ok(None))
    }

    /// Sends `req` and waits for its response within `req.deadline()`.
    /// An empty id is replaced by a fresh one.
    pub fn request(&self, req: RunnerRequest) -> Result<RunnerResponse, RunnerError> {
        let deadline = req.deadline();
        self.request_with_timeout(req, deadline)
    }

    pub fn request_with_timeout(
        &self,
        mut req: RunnerRequest,
        timeout: Duration,
    ) -> Result<RunnerResponse, RunnerError> {
        req.validate()?;
        if req.id.is_empty() {
            req.id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        }
        let rx = self.send(&req)?;
        let result = match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(RunnerError::RequestTimeout {
                id: req.id.clone(),
                after: timeout,
            }),
            Err(RecvTimeoutError::Disconnected) => Err(self
                .dead
                .lock()
                .unwrap()
                .clone()
                .unwrap_or(RunnerError::RunnerCrashed { stderr: String::new() })),
        };
        self.pending.lock().unwrap().remove(&req.id);
        let resp = result?;
        let expected_kind = match req.kind {
            FrameKind::Ping => FrameKind::Pong,
            k => k,
        };
        if resp.kind != expected_kind {
            return Err(RunnerError::ProtocolError {
                raw: serde_json::to_string(&resp).unwrap_or_default(),
                reason: format!("expected a {expected_kind:?} response"),
            });
        }
        Ok(resp)
    }

    fn send(&self, req: &RunnerRequest) -> Result<Receiver<Result<RunnerResponse, RunnerError>>, RunnerError> {
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().unwrap();
            // Checked under the pending lock: the reader marks the runner
            // dead before draining, so a request is either seen here or
            // drained there.
            if let Some(e) = self.dead.lock().unwrap().clone() {
                return Err(e);
            }
            if pending.contains_key(&req.id) {
                return Err(RunnerError::InvalidRequest(format!(
                    "request id {} is already outstanding",
                    req.id
                )));
            }
            pending.insert(req.id.clone(), tx);
        }
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let written = {
            let mut stdin = self.stdin.lock().unwrap();
            stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush())
        };
        if written.is_err() {
            self.pending.lock().unwrap().remove(&req.id);
            // The reader thread records the crash with stderr; give it a
            // moment to notice EOF.
            for _ in 0..50 {
                if let Some(e) = self.dead.lock().unwrap().clone() {
                    return Err(e);
                }
                thread::sleep(Duration::from_millis(10));
            }
            return Err(RunnerError::RunnerCrashed {
                stderr: "write to runner stdin failed".into(),
            });
        }
        Ok(rx)
    }

    pub fn ping(&self) -> Result<String, RunnerError> {
        Ok(self
            .request(RunnerRequest::ping())?
            .into_payload::<PongPayload>()?
            .version)
    }

    pub fn kill(&self) {
        let mut child = self.child.lock().unwrap();
        let _ = child.kill();
        let _ = child.wait();
    }
}

impl Drop for RunnerHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

fn read_frames(
    stdout: impl Read,
    pending: &Pending,
    dead: &Mutex<Option<RunnerError>>,
    stderr_buf: &Mutex<String>,
    stderr_done: Receiver<()>,
) {
    let mut reader = BufReader::new(stdout);
    let mut raw = Vec::new();
    loop {
        raw.clear();
        match reader.read_until(b'\n', &mut raw) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let text = String::from_utf8_lossy(&raw).trim_end().to_string();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<RunnerResponse>(&text) {
            Ok(resp) => {
                let sender = pending.lock().unwrap().remove(&resp.id);
                // Responses for abandoned (timed out) ids are dropped.
                if let Some(tx) = sender {
                    let _ = tx.send(Ok(resp));
                }
            }
            Err(e) => {
                let err = RunnerError::ProtocolError {
                    raw: text.clone(),
                    reason: e.to_string(),
                };
                // Without a readable id the frame cannot be attributed, so
                // every outstanding request fails with it.
                for (_, tx) in pending.lock().unwrap().drain() {
                    let _ = tx.send(Err(err.clone()));
                }
            }
        }
    }
    let _ = stderr_done.recv_timeout(Duration::from_millis(500));
    let err = RunnerError::RunnerCrashed {
        stderr: stderr_buf.lock().unwrap().clone(),
    };
    *dead.lock().unwrap() = Some(err.clone());
    for (_, tx) in pending.lock().unwrap().drain() {
        let _ = tx.send(Err(err.clone()));
    }
}

/// Runs an assembled test `n_runs` times (one example per run) and
/// aggregates the outcomes.
pub fn run_suite(
    handle: &RunnerHandle,
    test: &AssembledTest,
    n_runs: u32,
    seed: u64,
    collect_coverage: bool,
) -> Result<RunReport, RunnerError> {
    if n_runs == 0 {
        return Err(RunnerError::InvalidRequest("n_runs must be at least 1".into()));
    }
    let mut req = RunnerRequest::new(FrameKind::ExecPbt);
    req.code = Some(test.source_text.clone());
    req.target = Some(test.target.clone());
    req.mode = Some(test.mode);
    req.generator_name = test.generator_name.clone();
    req.n_runs = n_runs;
    req.seed = seed;
    req.collect_coverage = collect_coverage;
    let payload: ExecPayload = handle.request(req)?.into_payload()?;
    let coverage = if collect_coverage { payload.coverage } else { None };
    RunReport::from_outcomes(
        n_runs,
        seed,
        test.property_ids(),
        test.strict,
        payload.outcomes,
        coverage,
        payload.partial,
    )
}

/// Draws from a generator alone, `n_runs` times.
pub fn run_generator(
    handle: &RunnerHandle,
    generator: &GeneratorArtifact,
    n_runs: u32,
    seed: u64,
) -> Result<RunReport, RunnerError> {
    let mut req = RunnerRequest::new(FrameKind::ExecGenerator);
    req.code = Some(generator.source_text.clone());
    req.generator_name = Some(generator.generator_name.clone());
    req.n_runs = n_runs;
    req.seed = seed;
    let payload: ExecPayload = handle.request(req)?.into_payload()?;
    RunReport::from_outcomes(n_runs, seed, Vec::new(), false, payload.outcomes, None, payload.partial)
}

pub fn list_mutants(
    handle: &RunnerHandle,
    target: &TargetApi,
    operators: &[MutationOperator],
) -> Result<Vec<Mutant>, RunnerError> {
    let mut req = RunnerRequest::new(FrameKind::ListMutants);
    req.target = Some(target.clone());
    req.operators = Some(operators.to_vec());
    let payload: ListMutantsPayload = handle.request(req)?.into_payload()?;
    Ok(payload.mutants)
}

pub fn exec_mutant(
    handle: &RunnerHandle,
    test: &AssembledTest,
    mutant_id: &str,
    n_runs: u32,
    seed: u64,
) -> Result<MutantResult, RunnerError> {
    let mut req = RunnerRequest::new(FrameKind::ExecMutant);
    req.code = Some(test.source_text.clone());
    req.target = Some(test.target.clone());
    req.mode = Some(test.mode);
    req.mutant_id = Some(mutant_id.to_string());
    req.n_runs = n_runs;
    req.seed = seed;
    let result: MutantResult = handle.request(req)?.into_payload()?;
    result.validate()?;
    if result.mutant_id != mutant_id {
        return Err(RunnerError::InconsistentReport(format!(
            "asked for mutant {mutant_id}, got {}",
            result.mutant_id
        )));
    }
    let known = test.property_ids();
    if let Some(bad) = result.killing_property_ids.iter().find(|p| !known.contains(p)) {
        return Err(RunnerError::InconsistentReport(format!(
            "mutant {mutant_id} killed by unknown property {bad}"
        )));
    }
    Ok(result)
}

/// Asks the runner to instrument a fragment and validates its phase map.
pub fn parse_instrument(
    handle: &RunnerHandle,
    fragment: &str,
    mode: TestMode,
    target: &TargetApi,
) -> Result<ParseInstrumentPayload, RunnerError> {
    let mut req = RunnerRequest::new(FrameKind::ParseInstrument);
    req.code = Some(fragment.to_string());
    req.mode = Some(mode);
    req.target = Some(target.clone());
    let payload: ParseInstrumentPayload = handle.request(req)?.into_payload()?;
    let ids: Vec<String> = payload.properties.iter().map(|p| p.id.clone()).collect();
    validate_phase_map(&payload.source, &payload.phase_map, &ids)
        .map_err(|e| RunnerError::InconsistentReport(e.to_string()))?;
    Ok(payload)
}
