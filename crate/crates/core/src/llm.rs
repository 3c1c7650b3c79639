//! Model providers and code extraction from replies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::{PromptMessage, Role};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no replay fixture for key {key} in {dir}")]
    FixtureMissing { key: String, dir: String },
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("no code found in reply")]
    NoCodeFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Replay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Key is the SHA-256 of the whole transcript.
    #[default]
    Hash,
    /// Key is `<session id>-<user turn number>`.
    Ordinal,
}

fn default_api_key_env() -> String {
    "PBT_LLM_API_KEY".to_string()
}
fn default_auth_header() -> String {
    "Authorization".to_string()
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Header carrying the key. `Authorization` gets a `Bearer ` prefix.
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default)]
    pub replay_mode: ReplayMode,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Decoding parameters (temperature, top_p, ...) copied into the request
    /// body as-is.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl ProviderConfig {
    pub fn replay(fixture_dir: impl Into<PathBuf>, mode: ReplayMode) -> Self {
        Self {
            kind: ProviderKind::Replay,
            endpoint: None,
            model_name: None,
            api_key_env: default_api_key_env(),
            auth_header: default_auth_header(),
            fixture_dir: Some(fixture_dir.into()),
            replay_mode: mode,
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            extra: BTreeMap::new(),
        }
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            api_key_env: default_api_key_env(),
            auth_header: default_auth_header(),
            fixture_dir: None,
            replay_mode: ReplayMode::Hash,
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            extra: BTreeMap::new(),
        }
    }

    /// Parses the CLI shorthand `replay:<dir>`, `replay-ordinal:<dir>` or
    /// `http:<url>`; the model name for http comes from `model`.
    pub fn parse_spec(spec: &str, model: Option<&str>) -> Result<Self, LlmError> {
        let (scheme, rest) = spec
            .split_once(':')
            .ok_or_else(|| LlmError::InvalidConfig(format!("`{spec}` has no scheme")))?;
        let cfg = match scheme {
            "replay" => Self::replay(rest, ReplayMode::Hash),
            "replay-ordinal" => Self::replay(rest, ReplayMode::Ordinal),
            "http" | "https" => {
                let model = model.ok_or_else(|| LlmError::InvalidConfig("http provider needs a model name".into()))?;
                let url = if scheme == "https" {
                    format!("https:{rest}")
                } else if rest.starts_with("//") {
                    format!("http:{rest}")
                } else {
                    rest.to_string()
                };
                Self::http(url, model)
            }
            other => return Err(LlmError::InvalidConfig(format!("unknown provider scheme `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            ProviderKind::Http if self.endpoint.is_none() || self.model_name.is_none() => Err(LlmError::InvalidConfig(
                "http provider needs endpoint and model_name".into(),
            )),
            ProviderKind::Replay if self.fixture_dir.is_none() => {
                Err(LlmError::InvalidConfig("replay provider needs fixture_dir".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short provenance label for reports; replay directories are named
    /// by their last component so labels do not depend on the checkout.
    pub fn describe(&self) -> String {
        match self.kind {
            ProviderKind::Http => format!(
                "http:{}#{}",
                self.endpoint.as_deref().unwrap_or("?"),
                self.model_name.as_deref().unwrap_or("?")
            ),
            ProviderKind::Replay => format!(
                "replay-{}:{}",
                match self.replay_mode {
                    ReplayMode::Hash => "hash",
                    ReplayMode::Ordinal => "ordinal",
                },
                self.fixture_dir
                    .as_deref()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub messages: Vec<PromptMessage>,
}

impl Transcript {
    pub fn new(session_id: impl Into<String>, messages: Vec<PromptMessage>) -> Self {
        Self {
            session_id: session_id.into(),
            messages,
        }
    }

    /// System first, then strictly alternating user/assistant turns.
    pub fn validate(&self) -> Result<(), LlmError> {
        let mut iter = self.messages.iter();
        match iter.next() {
            Some(m) if m.role == Role::System => {}
            _ => {
                return Err(LlmError::InvalidTranscript(
                    "first message must be a system message".into(),
                ))
            }
        }
        for (i, m) in iter.enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(LlmError::InvalidTranscript(format!(
                    "message {} has role {}, expected {}",
                    i + 1,
                    m.role,
                    expected
                )));
            }
        }
        Ok(())
    }

    pub fn user_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::User).count()
    }

    pub fn last_assistant(&self) -> Option<&PromptMessage> {
        self.messages.iter().rev().find(|m| m.role == Role::Assistant)
    }
}

/// Lowercase hex SHA-256 over `role:text\n` for every message.
pub fn transcript_hash(messages: &[PromptMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update(b":");
        h.update(m.text.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn replay_key(transcript: &Transcript, mode: ReplayMode) -> String {
    match mode {
        ReplayMode::Hash => transcript_hash(&transcript.messages),
        ReplayMode::Ordinal => format!("{}-{}", transcript.session_id, transcript.user_turns()),
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, transcript: &Transcript) -> Result<PromptMessage, LlmError>;
}

/// Reads replies from `<fixture_dir>/<key>.md`, or from the file that
/// `<fixture_dir>/index.json` maps the key to.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    dir: PathBuf,
    mode: ReplayMode,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<PathBuf>, mode: ReplayMode) -> Self {
        Self { dir: dir.into(), mode }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lookup(&self, key: &str) -> Result<String, LlmError> {
        let direct = self.dir.join(format!("{key}.md"));
        if let Ok(text) = std::fs::read_to_string(&direct) {
            return Ok(text);
        }
        let index = self.dir.join("index.json");
        if let Ok(raw) = std::fs::read_to_string(&index) {
            let map: BTreeMap<String, String> =
                serde_json::from_str(&raw).map_err(|e| LlmError::InvalidConfig(format!("{}: {e}", index.display())))?;
            if let Some(file) = map.get(key) {
                return std::fs::read_to_string(self.dir.join(file))
                    .map_err(|e| LlmError::InvalidConfig(format!("index entry {key} -> {file}: {e}")));
            }
        }
        Err(LlmError::FixtureMissing {
            key: key.to_string(),
            dir: self.dir.display().to_string(),
        })
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, transcript: &Transcript) -> Result<PromptMessage, LlmError> {
        check_ready(transcript)?;
        let key = replay_key(transcript, self.mode);
        tracing::debug!(%key, session = %transcript.session_id, "replay lookup");
        Ok(PromptMessage::new(Role::Assistant, self.lookup(&key)?))
    }
}

/// Chat-completion over HTTP: POSTs `{model, messages: [{role, content}]}`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    cfg: ProviderConfig,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn request_body(&self, transcript: &Transcript) -> Value {
        let messages: Vec<Value> = transcript
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.text}))
            .collect();
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.cfg.model_name));
        body.insert("messages".into(), Value::Array(messages));
        for (k, v) in &self.cfg.extra {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body)
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl ChatProvider for HttpProvider {
    fn complete(&self, transcript: &Transcript) -> Result<PromptMessage, LlmError> {
        check_ready(transcript)?;
        let key = std::env::var(&self.cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::AuthMissing(self.cfg.api_key_env.clone()))?;
        let header_value = if self.cfg.auth_header.eq_ignore_ascii_case("authorization") {
            format!("Bearer {key}")
        } else {
            key
        };
        let endpoint = self.cfg.endpoint.as_deref().unwrap_or_default();
        let body = self.request_body(transcript);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.cfg.request_timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();

        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << (attempt - 1).min(6)));
            }
            let outcome = agent
                .post(endpoint)
                .header(self.cfg.auth_header.as_str(), header_value.as_str())
                .send_json(&body);
            let result = match outcome {
                Err(e) => Err(Attempt::Retry(e.to_string())),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        Err(Attempt::Retry(format!("HTTP {status}: {text}")))
                    } else if status >= 400 {
                        Err(Attempt::Fatal(LlmError::ProviderUnavailable(format!(
                            "HTTP {status}: {text}"
                        ))))
                    } else {
                        parse_reply(&text).map_err(Attempt::Fatal)
                    }
                }
            };
            match result {
                Ok(reply) => return Ok(PromptMessage::new(Role::Assistant, reply)),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, error = %msg, "provider request failed");
                    last_err = msg;
                }
            }
        }
        Err(LlmError::ProviderUnavailable(format!(
            "{} attempts failed, last error: {last_err}",
            self.cfg.max_retries + 1
        )))
    }
}

fn parse_reply(text: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| LlmError::ProviderUnavailable(format!("malformed response body: {e}")))?;
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/message/content"),
        v.pointer("/content/0/text"),
        v.get("content"),
    ];
    let found = candidates
        .into_iter()
        .flatten()
        .find_map(|c| c.as_str().map(str::to_string));
    found.ok_or_else(|| LlmError::ProviderUnavailable("response carries no assistant text".into()))
}

fn check_ready(transcript: &Transcript) -> Result<(), LlmError> {
    transcript.validate()?;
    match transcript.messages.last() {
        Some(m) if m.role == Role::User => Ok(()),
        _ => Err(LlmError::InvalidTranscript(
            "a completion needs a transcript ending in a user message".into(),
        )),
    }
}

pub fn provider_from_config(cfg: &ProviderConfig) -> Result<Box<dyn ChatProvider>, LlmError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Http => Box::new(HttpProvider::new(cfg.clone())?),
        ProviderKind::Replay => Box::new(ReplayProvider::new(
            cfg.fixture_dir.clone().unwrap_or_default(),
            cfg.replay_mode,
        )),
    })
}

/// One-shot completion through the provider described by `cfg`.
pub fn complete(transcript: &Transcript, cfg: &ProviderConfig) -> Result<PromptMessage, LlmError> {
    provider_from_config(cfg)?.complete(transcript)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub source_text: String,
    pub origin_response_id: String,
}

pub const END_SENTINEL: &str = "# End program";

/// Pulls the code out of a reply: all fenced regions joined by a blank
/// line, or the whole reply when it has no fences. Everything from a
/// `# End program` line onwards is dropped.
pub fn extract_code(reply: &PromptMessage) -> Result<CodeBlock, LlmError> {
    let text = reply.text.as_str();
    if text.trim().is_empty() {
        return Err(LlmError::NoCodeFound);
    }
    let source = match fenced_regions(text) {
        Some(blocks) => {
            let parts: Vec<String> = blocks
                .iter()
                .map(|b| {
                    let cut = cut_at_sentinel(b);
                    cut.trim_end_matches(['\n', ' ', '\t']).to_string()
                })
                .filter(|b| !b.trim().is_empty())
                .collect();
            if parts.is_empty() {
                String::new()
            } else {
                let mut joined = parts.join("\n\n");
                joined.push('\n');
                joined
            }
        }
        None => cut_at_sentinel(text).to_string(),
    };
    if source.trim().is_empty() {
        return Err(LlmError::NoCodeFound);
    }
    let id = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(CodeBlock {
        source_text: source,
        origin_response_id: id[..16].to_string(),
    })
}

fn is_fence(line: &str) -> bool {
    let indent = line.len() - line.trim_start_matches(' ').len();
    indent <= 3 && line.trim_start().starts_with("```")
}

/// Contents of every ``` fenced region, or `None` if the text has none.
/// An unterminated fence runs to the end of the text.
fn fenced_regions(text: &str) -> Option<Vec<String>> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        match current.as_mut() {
            None if is_fence(line) => current = Some(Vec::new()),
            None => {}
            Some(_) if is_fence(line) && line.trim() == "```" => {
                blocks.push(current.take().unwrap_or_default().join("\n"));
            }
            Some(lines) => lines.push(line),
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    if blocks.is_empty() && !text.lines().any(is_fence) {
        None
    } else {
        Some(blocks)
    }
}

fn cut_at_sentinel(text: &str) -> &str {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim() == END_SENTINEL {
            return &text[..offset];
        }
        offset += line.len();
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn assistant(text: &str) -> PromptMessage {
        PromptMessage::new(Role::Assistant, text)
    }

    fn transcript() -> Transcript {
        Transcript::new(
            "s1",
            vec![
                PromptMessage::new(Role::System, "sys"),
                PromptMessage::new(Role::User, "write a test"),
            ],
        )
    }

    #[test]
    fn single_fence_with_sentinel() {
        let reply = "Here you go:\n```python\nimport numpy as np\nx = 1\n# End program\n```\nHope it helps.";
        let block = extract_code(&assistant(reply)).unwrap();
        assert_eq!(block.source_text, "import numpy as np\nx = 1\n");
    }

    #[test]
    fn unfenced_code_is_returned_verbatim() {
        let code = "def f(x):\n    return x + 1\n";
        assert_eq!(extract_code(&assistant(code)).unwrap().source_text, code);
    }

    #[test]
    fn unfenced_sentinel_truncates() {
        let code = "x = 1\n# End program\ntrailing prose\n";
        assert_eq!(extract_code(&assistant(code)).unwrap().source_text, "x = 1\n");
    }

    #[test]
    fn blank_or_empty_fences_have_no_code() {
        assert_eq!(extract_code(&assistant("  \n")), Err(LlmError::NoCodeFound));
        assert_eq!(
            extract_code(&assistant("prose\n```\n\n```\nmore prose")),
            Err(LlmError::NoCodeFound)
        );
    }

    #[test]
    fn transcript_shape_is_checked() {
        let mut t = transcript();
        t.messages.push(PromptMessage::new(Role::User, "again"));
        assert!(t.validate().is_err());
        let t = Transcript::new("s", vec![PromptMessage::new(Role::User, "hi")]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn replay_uses_hash_key_then_index() {
        let dir = tempfile::tempdir().unwrap();
        let t = transcript();
        let key = transcript_hash(&t.messages);
        std::fs::write(dir.path().join("named.md"), "```python\nx = 2\n```\n").unwrap();
        std::fs::write(dir.path().join("index.json"), format!("{{\"{key}\": \"named.md\"}}")).unwrap();
        let p = ReplayProvider::new(dir.path(), ReplayMode::Hash);
        assert_eq!(p.complete(&t).unwrap().text, "```python\nx = 2\n```\n");
        std::fs::write(dir.path().join(format!("{key}.md")), "direct").unwrap();
        assert_eq!(p.complete(&t).unwrap().text, "direct");
    }

    #[test]
    fn replay_ordinal_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s1-1.md"), "first").unwrap();
        let cfg = ProviderConfig::replay(dir.path(), ReplayMode::Ordinal);
        assert_eq!(complete(&transcript(), &cfg).unwrap().text, "first");
        let mut t = transcript();
        t.messages.push(assistant("first"));
        t.messages.push(PromptMessage::new(Role::User, "more"));
        assert!(matches!(
            complete(&t, &cfg),
            Err(LlmError::FixtureMissing { key, .. }) if key == "s1-2"
        ));
    }

    #[test]
    fn completion_requires_trailing_user_message() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = transcript();
        t.messages.push(assistant("done"));
        let cfg = ProviderConfig::replay(dir.path(), ReplayMode::Hash);
        assert!(matches!(complete(&t, &cfg), Err(LlmError::InvalidTranscript(_))));
    }

    #[test]
    fn http_without_key_is_auth_missing() {
        let mut cfg = ProviderConfig::http("http://127.0.0.1:9/v1", "m");
        cfg.api_key_env = "PBT_TEST_SURELY_UNSET_KEY".into();
        assert_eq!(
            complete(&transcript(), &cfg),
            Err(LlmError::AuthMissing("PBT_TEST_SURELY_UNSET_KEY".into()))
        );
    }

    #[test]
    fn provider_spec_parsing() {
        let cfg = ProviderConfig::parse_spec("replay:fixtures/", None).unwrap();
        assert_eq!(cfg.kind, ProviderKind::Replay);
        assert_eq!(cfg.fixture_dir.as_deref(), Some(Path::new("fixtures/")));
        let cfg = ProviderConfig::parse_spec("http://localhost:8000/v1/chat", Some("gpt")).unwrap();
        assert_eq!(cfg.endpoint.as_deref(), Some("http://localhost:8000/v1/chat"));
        assert!(ProviderConfig::parse_spec("http://x", None).is_err());
        assert!(ProviderConfig::parse_spec("ftp:x", None).is_err());
    }

    /// Serves `responses` in order, one per connection, and returns the
    /// request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    #[test]
    fn http_provider_retries_server_errors() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"```python\nx=1\n```"}}]}"#;
        let (url, server) = serve(vec![(503, "{}".into()), (200, ok.into())]);
        let mut cfg = ProviderConfig::http(url, "test-model");
        cfg.api_key_env = "PBT_TEST_HTTP_KEY_RETRY".into();
        cfg.extra.insert("temperature".into(), json!(0.2));
        std::env::set_var("PBT_TEST_HTTP_KEY_RETRY", "k");
        let reply = complete(&transcript(), &cfg).unwrap();
        assert_eq!(reply.text, "```python\nx=1\n```");
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.2);
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["messages"][1]["content"], "write a test");
    }

    #[test]
    fn http_provider_gives_up_after_retries() {
        let (url, server) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
        let mut cfg = ProviderConfig::http(url, "m");
        cfg.max_retries = 1;
        cfg.api_key_env = "PBT_TEST_HTTP_KEY_FAIL".into();
        std::env::set_var("PBT_TEST_HTTP_KEY_FAIL", "k");
        assert!(matches!(
            complete(&transcript(), &cfg),
            Err(LlmError::ProviderUnavailable(_))
        ));
        server.join().unwrap();
    }
}
