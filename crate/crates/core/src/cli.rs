//! `pbtw` command line. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::assembly::AssemblyOptions;
use crate::campaign::{render_report, run_campaign, sample_targets, CampaignFile, CampaignReport, ReportFormat};
use crate::llm::ProviderConfig;
use crate::metrics::render_scorecard_text;
use crate::prompts::TargetApi;
use crate::protocol::{RunnerCommand, RunnerHandle};
use crate::service::{serve, ApiError, ServiceConfig};
use crate::session::{
    default_payload, mitigation_kind_for, EvaluationPlanConfig, OpenOptions, SessionError, SessionStore, Strategy,
    Workbench,
};

#[derive(Debug, Parser)]
#[command(
    name = "pbtw",
    version,
    about = "Synthesize and score property-based tests from API documentation"
)]
pub struct Cli {
    /// Session and campaign storage.
    #[arg(long, global = true, env = "PBT_DATA_DIR", default_value = "pbt-data")]
    pub data_dir: PathBuf,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Open a session and synthesize its first test.
    Synth(SynthArgs),
    /// Run the latest test of a session and score it.
    Evaluate(EvaluateArgs),
    /// Mitigate an issue of the latest evaluation.
    Mitigate(MitigateArgs),
    /// Run a batch of targets and strategies, or sample targets.
    #[command(subcommand)]
    Campaign(CampaignCommand),
    /// Show a scorecard or a campaign report.
    Report(ReportArgs),
    /// Replay a session journal and check every stored artifact.
    Audit(SessionArg),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Talk to a test runner directly.
    #[command(subcommand)]
    Runner(RunnerCommandArgs),
}

#[derive(Debug, Args)]
pub struct SessionArg {
    #[arg(long)]
    pub session: String,
}

#[derive(Debug, Args)]
pub struct RunnerArg {
    /// Runner command line, e.g. "python -m pbt_runner".
    #[arg(long, env = "PBT_RUNNER")]
    pub runner: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dotted name of the API method, e.g. numpy.cumsum.
    #[arg(long)]
    pub target: String,
    /// File holding the method's documentation.
    #[arg(long)]
    pub docs: PathBuf,
    /// Import path of the target's module; defaults to the qualname prefix.
    #[arg(long)]
    pub module_path: Option<String>,
    /// Type the generator must produce, for methods on objects.
    #[arg(long)]
    pub input_object: Option<String>,
    /// Defaults to the first qualname segment.
    #[arg(long)]
    pub library: Option<String>,
    /// independent, consecutive or together.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// `replay:<dir>`, `replay-ordinal:<dir>` or `http:<url>`.
    #[arg(long, env = "PBT_PROVIDER")]
    pub provider: String,
    /// Model name for the http provider.
    #[arg(long)]
    pub model: Option<String>,
    /// Defaults to a random id.
    #[arg(long)]
    pub session_id: Option<String>,
    /// Abort a test at its first failing property.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub session: String,
    #[arg(long, default_value_t = 200)]
    pub runs: u32,
    /// Defaults to the previous evaluation's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip mutant enumeration and strength.
    #[arg(long)]
    pub no_mutation: bool,
    /// Skip coverage and diversity.
    #[arg(long)]
    pub no_coverage: bool,
    #[command(flatten)]
    pub runner: RunnerArg,
}

#[derive(Debug, Args)]
pub struct MitigateArgs {
    #[arg(long)]
    pub session: String,
    #[arg(long)]
    pub issue: String,
    /// Replaces the default payload.
    #[arg(long, conflicts_with = "payload_file")]
    pub payload: Option<String>,
    /// Reads the replacement payload from a file.
    #[arg(long)]
    pub payload_file: Option<PathBuf>,
    /// Print the default action without sending it.
    #[arg(long)]
    pub show: bool,
}

#[derive(Debug, Subcommand)]
pub enum CampaignCommand {
    /// Run a campaign config.
    Run(CampaignRunArgs),
    /// Sample target names per library with a fixed seed.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct CampaignRunArgs {
    /// Campaign config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Apply one default mitigation round per flagged issue kind.
    #[arg(long)]
    pub auto_mitigate: bool,
    /// Cells run at once.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Runs per evaluation; overrides the config.
    #[arg(long)]
    pub runs: Option<u32>,
    #[command(flatten)]
    pub runner: RunnerArg,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON object mapping each library to candidate qualified names.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub per_library: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, conflicts_with = "campaign", required_unless_present = "campaign")]
    pub session: Option<String>,
    #[arg(long)]
    pub evaluation: Option<usize>,
    /// Campaign output directory.
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    /// json, text or markdown.
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "PBT_PROVIDER")]
    pub provider: String,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, env = "PBT_RUNNER")]
    pub runner: Option<String>,
    /// Allowed browser origin; repeatable.
    #[arg(long)]
    pub cors: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum RunnerCommandArgs {
    /// Start the runner and complete the handshake.
    Check(RunnerArg),
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Domain(ApiError),
    Usage(String),
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Domain(e.into())
    }
}

impl From<crate::campaign::CampaignError> for CliError {
    fn from(e: crate::campaign::CampaignError) -> Self {
        CliError::Domain(e.into())
    }
}

fn domain(kind: &str, message: impl Into<String>) -> CliError {
    CliError::Domain(ApiError::new(
        axum::http::StatusCode::UNPROCESSABLE_ENTITY,
        kind,
        message,
    ))
}

fn runner_cmd(line: &str) -> Result<RunnerCommand, CliError> {
    RunnerCommand::parse(line).ok_or_else(|| CliError::Usage("--runner must not be empty".into()))
}

fn provider(spec: &str, model: Option<&str>) -> Result<ProviderConfig, CliError> {
    ProviderConfig::parse_spec(spec, model).map_err(|e| CliError::Usage(e.to_string()))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| domain("Io", format!("{}: {e}", path.display())))
}

fn workbench(data_dir: &Path) -> Result<Workbench, CliError> {
    Ok(Workbench::new(Arc::new(SessionStore::open(data_dir)?)))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    let json = cli.json;
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(CliError::Domain(e)) => {
            if json {
                let _ = writeln!(out, "{}", to_json(&json!({ "error": e })));
            }
            let _ = writeln!(err, "error: {}: {}", e.error_type, e.message);
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let json = cli.json;
    let data_dir = cli.data_dir;
    let mut emit = |text: String| {
        let _ = writeln!(out, "{}", text.trim_end_matches('\n'));
    };
    match cli.command {
        Command::Synth(a) => {
            let doc = read(&a.docs)?;
            let mut target = TargetApi::from_qualname(&a.target, doc).map_err(SessionError::from)?;
            if let Some(m) = a.module_path {
                target = target.with_module_path(m);
            }
            if let Some(l) = a.library {
                target.library = l;
            }
            if let Some(o) = a.input_object {
                target = target.with_input_object(o);
            }
            target.validate().map_err(SessionError::from)?;
            let provider = provider(&a.provider, a.model.as_deref())?;
            let opts = OpenOptions {
                session_id: a.session_id,
                assembly: AssemblyOptions {
                    strict: a.strict,
                    ..Default::default()
                },
            };
            let s = workbench(&data_dir)?.open_session(target, a.strategy, provider, opts)?;
            let v = s.latest_artifact().expect("synthesized session has an artifact");
            if json {
                emit(to_json(&json!({
                    "session_id": s.session_id,
                    "state": s.state,
                    "version": v.version,
                    "test_sha256": v.test_sha256,
                    "properties": v.test.property_ids(),
                })));
            } else {
                emit(s.session_id.clone());
            }
        }
        Command::Evaluate(a) => {
            let plan = EvaluationPlanConfig {
                n_runs: a.runs,
                seed: a.seed,
                mutation: !a.no_mutation,
                collect_coverage: !a.no_coverage,
                ..Default::default()
            };
            let wb = workbench(&data_dir)?;
            let runner = RunnerHandle::start(&runner_cmd(&a.runner.runner)?)
                .map_err(|e| domain("RunnerUnavailable", e.to_string()))?;
            let card = wb.evaluate(&a.session, &plan, &runner)?;
            emit(if json {
                to_json(&card)
            } else {
                render_scorecard_text(&card)
            });
        }
        Command::Mitigate(a) => {
            let wb = workbench(&data_dir)?;
            let payload = match (&a.payload, &a.payload_file) {
                (Some(p), _) => Some(p.clone()),
                (None, Some(f)) => Some(read(f)?),
                (None, None) => None,
            };
            if a.show {
                let session = wb.load(&a.session)?;
                let issue = wb.issue(&a.session, &a.issue)?;
                let kind = mitigation_kind_for(issue.kind);
                let text = default_payload(&session, &issue);
                emit(if json {
                    to_json(&json!({ "issue": issue, "action": kind, "payload": text }))
                } else {
                    format!("{kind:?}\n\n{text}")
                });
                return Ok(());
            }
            let version = wb.mitigate(&a.session, &a.issue, payload)?;
            emit(if json {
                to_json(&json!({ "session_id": a.session, "version": version }))
            } else {
                format!("v{version}")
            });
        }
        Command::Campaign(CampaignCommand::Run(a)) => {
            let file = CampaignFile::load(&a.config)?;
            let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
            let output = a.output.or_else(|| {
                file.output_dir
                    .is_none()
                    .then(|| data_dir.join("campaigns").join(config_stem(&a.config)))
            });
            let mut cfg = file.resolve(&base, output)?;
            if a.auto_mitigate {
                cfg.auto_mitigate = true;
            }
            if let Some(p) = a.parallelism {
                cfg.parallelism = p;
            }
            if let Some(n) = a.runs {
                cfg.plan.n_runs = n;
            }
            let report = run_campaign(&cfg, &runner_cmd(&a.runner.runner)?)?;
            emit(render_report(
                &report,
                if json {
                    ReportFormat::JsonDoc
                } else {
                    ReportFormat::TextTable
                },
            ));
        }
        Command::Campaign(CampaignCommand::Sample(a)) => {
            let candidates: BTreeMap<String, Vec<String>> =
                serde_json::from_str(&read(&a.candidates)?).map_err(|e| domain("ConfigInvalid", e.to_string()))?;
            emit(to_json(&sample_targets(&candidates, a.per_library, a.seed)));
        }
        Command::Report(a) => {
            let format = if json { ReportFormat::JsonDoc } else { a.format };
            if let Some(dir) = a.campaign {
                let report: CampaignReport = serde_json::from_str(&read(&dir.join("campaign.json"))?)
                    .map_err(|e| domain("CorruptReport", e.to_string()))?;
                emit(render_report(&report, format));
                return Ok(());
            }
            let id = a.session.expect("clap requires --session or --campaign");
            let s = workbench(&data_dir)?.load(&id)?;
            let eval = match a.evaluation {
                Some(i) => s.evaluations.get(i),
                None => s.evaluations.last(),
            }
            .ok_or_else(|| domain("NotFound", format!("session {id} has no such evaluation")))?;
            emit(match format {
                ReportFormat::JsonDoc => to_json(&eval.scorecard),
                _ => render_scorecard_text(&eval.scorecard),
            });
        }
        Command::Audit(a) => {
            let store = SessionStore::open(&data_dir)?;
            let report = store.audit(&a.session)?;
            emit(if json {
                to_json(&report)
            } else {
                format!(
                    "{}: {} events, versions {:?}, {}",
                    report.session_id,
                    report.events,
                    report.versions_checked,
                    if report.is_clean() { "clean" } else { "MISMATCH" }
                )
            });
            if !report.is_clean() {
                return Err(domain(
                    "AuditMismatch",
                    format!("stored artifacts differ for versions {:?}", report.file_mismatches),
                ));
            }
        }
        Command::Serve(a) => {
            let cfg = ServiceConfig {
                listen: a.listen,
                data_dir,
                runner_cmd: a.runner.as_deref().map(runner_cmd).transpose()?,
                provider: provider(&a.provider, a.model.as_deref())?,
                cors: a.cors,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| domain("Io", e.to_string()))?;
            rt.block_on(serve(cfg))
                .map_err(|e| domain("ServiceError", e.to_string()))?;
        }
        Command::Runner(RunnerCommandArgs::Check(a)) => {
            let cmd = runner_cmd(&a.runner)?;
            let h = RunnerHandle::start(&cmd).map_err(|e| domain("RunnerUnavailable", e.to_string()))?;
            emit(if json {
                to_json(&json!({ "runner": cmd.describe(), "version": h.version() }))
            } else {
                format!("runner ok: protocol v{}", h.version())
            });
        }
    }
    Ok(())
}

fn config_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "campaign".into())
}
