//! Batch evaluation over targets × strategies × repeated promptings.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ProviderConfig, ProviderKind};
use crate::metrics::{aggregate, AggregateMetrics, IssueKind, QualityScorecard, Summary};
use crate::prompts::TargetApi;
use crate::protocol::{RunnerCommand, RunnerHandle};
use crate::session::{EvaluationPlanConfig, OpenOptions, SessionError, SessionStore, Strategy, Workbench};

pub const CAMPAIGN_FORMAT: &str = "pbt-workbench.campaign/1";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    ConfigInvalid(String),
    #[error("output directory {0} already holds sessions")]
    OutputNotEmpty(PathBuf),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CampaignError {
    fn from(e: std::io::Error) -> Self {
        CampaignError::Io(e.to_string())
    }
}

/// A target as written in a config file; documentation may come from a
/// file relative to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub qualname: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_object: Option<String>,
}

impl TargetSpec {
    pub fn resolve(&self, base: &Path) -> Result<TargetApi, CampaignError> {
        let doc = match (&self.doc_text, &self.doc_file) {
            (Some(text), _) => text.clone(),
            (None, Some(file)) => std::fs::read_to_string(base.join(file))
                .map_err(|e| CampaignError::ConfigInvalid(format!("doc_file {}: {e}", file.display())))?,
            (None, None) => {
                return Err(CampaignError::ConfigInvalid(format!(
                    "target {} has neither doc_text nor doc_file",
                    self.qualname
                )))
            }
        };
        let invalid =
            |e: crate::prompts::PromptError| CampaignError::ConfigInvalid(format!("target {}: {e}", self.qualname));
        let mut target = TargetApi::from_qualname(&self.qualname, doc).map_err(invalid)?;
        if let Some(m) = &self.module_path {
            target = target.with_module_path(m.clone());
        }
        if let Some(l) = &self.library {
            target.library = l.clone();
        }
        if let Some(o) = &self.input_object {
            target = target.with_input_object(o.clone());
        }
        target.validate().map_err(invalid)?;
        Ok(target)
    }
}

fn default_promptings() -> u32 {
    3
}

fn default_parallelism() -> usize {
    1
}

fn default_format() -> u32 {
    1
}

/// Campaign config file, format 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignFile {
    #[serde(default = "default_format")]
    pub format: u32,
    pub targets: Vec<TargetSpec>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_promptings")]
    pub promptings_per_target: u32,
    #[serde(default)]
    pub plan: EvaluationPlanConfig,
    pub provider: ProviderConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Relative to the config file; overridable on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub auto_mitigate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub targets: Vec<TargetApi>,
    pub strategies: Vec<Strategy>,
    pub promptings_per_target: u32,
    pub plan: EvaluationPlanConfig,
    pub provider: ProviderConfig,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    /// One mitigation round per flagged issue kind, applied with the
    /// default payload, each followed by a re-evaluation.
    pub auto_mitigate: bool,
}

impl CampaignFile {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CampaignError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CampaignError::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    /// Resolves doc files, a relative replay directory and the output
    /// directory against `base`.
    pub fn resolve(&self, base: &Path, output_dir: Option<PathBuf>) -> Result<CampaignConfig, CampaignError> {
        if self.format != 1 {
            return Err(CampaignError::ConfigInvalid(format!(
                "unsupported config format {}",
                self.format
            )));
        }
        let targets = self
            .targets
            .iter()
            .map(|t| t.resolve(base))
            .collect::<Result<Vec<_>, _>>()?;
        let mut provider = self.provider.clone();
        if provider.kind == ProviderKind::Replay {
            if let Some(dir) = &provider.fixture_dir {
                if dir.is_relative() {
                    provider.fixture_dir = Some(base.join(dir));
                }
            }
        }
        let output_dir = output_dir
            .or_else(|| self.output_dir.as_ref().map(|d| base.join(d)))
            .ok_or_else(|| CampaignError::ConfigInvalid("no output_dir given".into()))?;
        let cfg = CampaignConfig {
            targets,
            strategies: self.strategies.clone(),
            promptings_per_target: self.promptings_per_target,
            plan: self.plan.clone(),
            provider,
            parallelism: self.parallelism,
            output_dir,
            auto_mitigate: self.auto_mitigate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        let invalid = |m: &str| Err(CampaignError::ConfigInvalid(m.to_string()));
        if self.targets.is_empty() {
            return invalid("targets must not be empty");
        }
        if self.strategies.is_empty() {
            return invalid("strategies must not be empty");
        }
        if self.promptings_per_target == 0 {
            return invalid("promptings_per_target must be at least 1");
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1");
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.targets {
            if !seen.insert(&t.qualname) {
                return invalid(&format!("target {} listed twice", t.qualname));
            }
        }
        let mut strategies = self.strategies.clone();
        strategies.sort_by_key(|s| s.as_str());
        strategies.dedup();
        if strategies.len() != self.strategies.len() {
            return invalid("strategies listed twice");
        }
        self.plan
            .validate()
            .map_err(|e| CampaignError::ConfigInvalid(e.to_string()))?;
        self.provider
            .validate()
            .map_err(|e| CampaignError::ConfigInvalid(e.to_string()))
    }

    pub fn session_id(target: &TargetApi, strategy: Strategy, k: u32) -> String {
        format!("{}-{}-{k}", target.qualname, strategy)
    }

    fn seed(&self) -> u64 {
        self.plan.seed.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedMitigation {
    pub issue_id: String,
    pub kind: IssueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resulting_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorecard: Option<QualityScorecard>,
    /// Latest scorecard after auto-mitigation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_scorecard: Option<QualityScorecard>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mitigations: Vec<AppliedMitigation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Complete,
    /// Some sessions failed; metrics cover the others.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub library: String,
    pub target: String,
    pub strategy: Strategy,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AggregateMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_mitigation: Option<AggregateMetrics>,
    pub sessions: Vec<SessionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub targets: usize,
    pub strategies: Vec<Strategy>,
    pub promptings_per_target: u32,
    pub n_runs: u32,
    pub mutation: bool,
    pub auto_mitigate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub seed: u64,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRow {
    pub library: String,
    pub target: String,
    pub strategy: Strategy,
    pub generator_validity: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement_coverage: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_coverage: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRow {
    pub library: String,
    pub target: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_validity: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_soundness: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_soundness: Option<crate::metrics::Ratio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_strength: Option<Summary>,
    pub free_of_unsound: usize,
    pub n_scorecards: usize,
}

/// Mean before and after auto-mitigation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub library: String,
    pub target: String,
    pub strategy: Strategy,
    pub mitigations_applied: usize,
    pub mitigations_failed: usize,
    pub metrics: BTreeMap<String, Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTotals {
    pub cells: usize,
    pub failed_cells: usize,
    pub sessions: usize,
    pub failed_sessions: usize,
    pub total_runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub format: String,
    pub provenance: Provenance,
    pub cells: Vec<CellReport>,
    pub generator_table: Vec<GeneratorRow>,
    pub property_table: Vec<PropertyRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mitigation_table: Vec<MitigationRow>,
    pub totals: CampaignTotals,
}

struct CellJob {
    index: usize,
    target: TargetApi,
    strategy: Strategy,
}

/// Runs every cell over a pool of `parallelism` workers, each owning one
/// runner process, then writes `campaign.json` and `campaign.md` into the
/// output directory.
pub fn run_campaign(cfg: &CampaignConfig, runner: &RunnerCommand) -> Result<CampaignReport, CampaignError> {
    cfg.validate()?;
    let sessions_dir = cfg.output_dir.join("sessions");
    if sessions_dir.is_dir() && std::fs::read_dir(&sessions_dir)?.next().is_some() {
        return Err(CampaignError::OutputNotEmpty(cfg.output_dir.clone()));
    }
    let store = SessionStore::open(&cfg.output_dir).map_err(|e| CampaignError::Io(e.to_string()))?;
    let workbench = Workbench::new(Arc::new(store));

    let jobs: VecDeque<CellJob> = cfg
        .targets
        .iter()
        .flat_map(|t| cfg.strategies.iter().map(move |s| (t, *s)))
        .enumerate()
        .map(|(index, (t, s))| CellJob {
            index,
            target: t.clone(),
            strategy: s,
        })
        .collect();
    let n_cells = jobs.len();
    let queue = Mutex::new(jobs);
    let results: Mutex<Vec<Option<CellReport>>> = Mutex::new(vec![None; n_cells]);
    let workers = cfg.parallelism.min(n_cells);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let handle = RunnerHandle::start(runner);
                loop {
                    let Some(job) = queue.lock().unwrap().pop_front() else {
                        break;
                    };
                    let cell = match &handle {
                        Ok(h) => run_cell(cfg, &workbench, h, &job),
                        Err(e) => failed_cell(&job, format!("runner unavailable: {e}")),
                    };
                    results.lock().unwrap()[job.index] = Some(cell);
                }
            });
        }
    });

    let cells: Vec<CellReport> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|c| c.expect("every cell is scheduled"))
        .collect();
    let report = assemble_report(cfg, cells);
    std::fs::write(
        cfg.output_dir.join("campaign.json"),
        render_report(&report, ReportFormat::JsonDoc),
    )?;
    std::fs::write(
        cfg.output_dir.join("campaign.md"),
        render_report(&report, ReportFormat::Markdown),
    )?;
    Ok(report)
}

fn failed_cell(job: &CellJob, cause: String) -> CellReport {
    CellReport {
        library: job.target.library.clone(),
        target: job.target.qualname.clone(),
        strategy: job.strategy,
        status: CellStatus::Failed,
        metrics: None,
        post_mitigation: None,
        sessions: Vec::new(),
        failure: Some(cause),
    }
}

fn run_cell(cfg: &CampaignConfig, wb: &Workbench, runner: &RunnerHandle, job: &CellJob) -> CellReport {
    let sessions: Vec<SessionOutcome> = (1..=cfg.promptings_per_target)
        .map(|k| run_session(cfg, wb, runner, job, k))
        .collect();
    let initial: Vec<QualityScorecard> = sessions.iter().filter_map(|s| s.scorecard.clone()).collect();
    let finals: Vec<QualityScorecard> = sessions
        .iter()
        .filter_map(|s| s.final_scorecard.clone().or_else(|| s.scorecard.clone()))
        .collect();
    let failures: Vec<&str> = sessions.iter().filter_map(|s| s.error.as_deref()).collect();
    let status = if initial.is_empty() {
        CellStatus::Failed
    } else if failures.is_empty() {
        CellStatus::Complete
    } else {
        CellStatus::Partial
    };
    CellReport {
        library: job.target.library.clone(),
        target: job.target.qualname.clone(),
        strategy: job.strategy,
        status,
        metrics: aggregate(&initial).ok(),
        post_mitigation: if cfg.auto_mitigate {
            aggregate(&finals).ok()
        } else {
            None
        },
        failure: (status == CellStatus::Failed).then(|| {
            failures
                .first()
                .map_or_else(|| "no session completed".to_string(), |f| f.to_string())
        }),
        sessions,
    }
}

fn run_session(cfg: &CampaignConfig, wb: &Workbench, runner: &RunnerHandle, job: &CellJob, k: u32) -> SessionOutcome {
    let id = CampaignConfig::session_id(&job.target, job.strategy, k);
    let plan = EvaluationPlanConfig {
        seed: Some(cfg.seed()),
        ..cfg.plan.clone()
    };
    let mut outcome = SessionOutcome {
        session_id: id.clone(),
        seed: cfg.seed(),
        scorecard: None,
        final_scorecard: None,
        mitigations: Vec::new(),
        error: None,
    };
    let opts = OpenOptions {
        session_id: Some(id.clone()),
        ..Default::default()
    };
    let first = wb
        .open_session(job.target.clone(), job.strategy, cfg.provider.clone(), opts)
        .and_then(|_| wb.evaluate(&id, &plan, runner));
    match first {
        Ok(card) => outcome.scorecard = Some(card),
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    }
    if !cfg.auto_mitigate {
        return outcome;
    }
    let mut latest = outcome.scorecard.clone().expect("set above");
    for kind in IssueKind::ALL {
        let Some(issue) = latest.issues.iter().find(|i| i.kind == kind).cloned() else {
            continue;
        };
        let applied = wb.mitigate(&id, &issue.id, None);
        let mut record = AppliedMitigation {
            issue_id: issue.id.clone(),
            kind,
            resulting_version: None,
            failure: None,
        };
        match applied {
            Ok(version) => {
                record.resulting_version = Some(version);
                match wb.evaluate(&id, &plan, runner) {
                    Ok(card) => latest = card,
                    Err(e) => {
                        record.failure = Some(format!("re-evaluation failed: {e}"));
                        outcome.mitigations.push(record);
                        break;
                    }
                }
            }
            Err(SessionError::SynthesisFailed { message, .. }) => record.failure = Some(message),
            Err(e) => record.failure = Some(e.to_string()),
        }
        outcome.mitigations.push(record);
    }
    outcome.final_scorecard = Some(latest);
    outcome
}

fn assemble_report(cfg: &CampaignConfig, cells: Vec<CellReport>) -> CampaignReport {
    let generator_table = cells
        .iter()
        .filter_map(|c| {
            let m = c.metrics.as_ref()?;
            Some(GeneratorRow {
                library: c.library.clone(),
                target: c.target.clone(),
                strategy: c.strategy,
                generator_validity: m.generator_validity,
                statement_coverage: m.statement_coverage,
                branch_coverage: m.branch_coverage,
            })
        })
        .collect();
    let property_table = cells
        .iter()
        .filter_map(|c| {
            let m = c.metrics.as_ref()?;
            Some(PropertyRow {
                library: c.library.clone(),
                target: c.target.clone(),
                strategy: c.strategy,
                property_validity: m.property_validity,
                property_soundness: m.property_soundness,
                pooled_soundness: m.pooled_soundness,
                property_strength: m.property_strength,
                free_of_unsound: m.free_of.get(&IssueKind::UnsoundProperty).copied().unwrap_or(0),
                n_scorecards: m.n_scorecards,
            })
        })
        .collect();
    let mitigation_table = if cfg.auto_mitigate {
        cells.iter().filter_map(mitigation_row).collect()
    } else {
        Vec::new()
    };
    let sessions: Vec<&SessionOutcome> = cells.iter().flat_map(|c| &c.sessions).collect();
    let totals = CampaignTotals {
        cells: cells.len(),
        failed_cells: cells.iter().filter(|c| c.status == CellStatus::Failed).count(),
        sessions: sessions.len(),
        failed_sessions: sessions.iter().filter(|s| s.error.is_some()).count(),
        total_runs: cells
            .iter()
            .filter_map(|c| c.metrics.as_ref())
            .map(|m| m.total_runs)
            .sum(),
    };
    CampaignReport {
        format: CAMPAIGN_FORMAT.to_string(),
        provenance: Provenance {
            provider: cfg.provider.describe(),
            seed: cfg.seed(),
            scale: Scale {
                targets: cfg.targets.len(),
                strategies: cfg.strategies.clone(),
                promptings_per_target: cfg.promptings_per_target,
                n_runs: cfg.plan.n_runs,
                mutation: cfg.plan.mutation,
                auto_mitigate: cfg.auto_mitigate,
            },
        },
        cells,
        generator_table,
        property_table,
        mitigation_table,
        totals,
    }
}

fn mitigation_row(cell: &CellReport) -> Option<MitigationRow> {
    let before = cell.metrics.as_ref()?;
    let after = cell.post_mitigation.as_ref()?;
    let mut metrics = BTreeMap::new();
    let mut put = |name: &str, b: Option<Summary>, a: Option<Summary>| {
        if let (Some(b), Some(a)) = (b, a) {
            metrics.insert(
                name.to_string(),
                Delta {
                    before: b.mean,
                    after: a.mean,
                },
            );
        }
    };
    put(
        "generator_validity",
        Some(before.generator_validity),
        Some(after.generator_validity),
    );
    put(
        "statement_coverage",
        before.statement_coverage,
        after.statement_coverage,
    );
    put("branch_coverage", before.branch_coverage, after.branch_coverage);
    put("property_validity", before.property_validity, after.property_validity);
    put(
        "property_soundness",
        before.property_soundness,
        after.property_soundness,
    );
    put("property_strength", before.property_strength, after.property_strength);
    let all: Vec<&AppliedMitigation> = cell.sessions.iter().flat_map(|s| &s.mitigations).collect();
    Some(MitigationRow {
        library: cell.library.clone(),
        target: cell.target.clone(),
        strategy: cell.strategy,
        mitigations_applied: all.iter().filter(|m| m.resulting_version.is_some()).count(),
        mitigations_failed: all.iter().filter(|m| m.failure.is_some()).count(),
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    JsonDoc,
    TextTable,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "jsondoc" => Ok(Self::JsonDoc),
            "text" | "table" | "texttable" => Ok(Self::TextTable),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

fn pct(s: Option<&Summary>) -> String {
    s.map_or_else(|| "-".to_string(), |s| format!("{:.1}%", s.mean * 100.0))
}

fn status_str(s: CellStatus) -> &'static str {
    match s {
        CellStatus::Complete => "complete",
        CellStatus::Partial => "partial",
        CellStatus::Failed => "failed",
    }
}

const TABLE_HEADER: [&str; 10] = [
    "target", "strategy", "n", "validity", "stmt", "branch", "p.valid", "sound", "strength", "status",
];

fn cell_row(c: &CellReport) -> [String; 10] {
    let m = c.metrics.as_ref();
    [
        c.target.clone(),
        c.strategy.to_string(),
        m.map_or(0, |m| m.n_scorecards).to_string(),
        pct(m.map(|m| &m.generator_validity)),
        pct(m.and_then(|m| m.statement_coverage.as_ref())),
        pct(m.and_then(|m| m.branch_coverage.as_ref())),
        pct(m.and_then(|m| m.property_validity.as_ref())),
        pct(m.and_then(|m| m.property_soundness.as_ref())),
        pct(m.and_then(|m| m.property_strength.as_ref())),
        status_str(c.status).to_string(),
    ]
}

/// Deterministic rendering; the same report always yields the same bytes.
pub fn render_report(report: &CampaignReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::JsonDoc => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::TextTable => render_text(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_text(report: &CampaignReport) -> String {
    let rows: Vec<[String; 10]> = report.cells.iter().map(cell_row).collect();
    let mut widths: Vec<usize> = TABLE_HEADER.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, v) in widths.iter_mut().zip(r) {
            *w = (*w).max(v.len());
        }
    }
    let line = |cols: Vec<&str>| {
        cols.iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    out.push_str(&line(TABLE_HEADER.to_vec()));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn md_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", header.iter().map(|_| "---|").collect::<String>());
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

fn render_markdown(report: &CampaignReport) -> String {
    let p = &report.provenance;
    let mut out = String::new();
    let _ = writeln!(out, "# Campaign report\n");
    let _ = writeln!(out, "- provider: `{}`", p.provider);
    let _ = writeln!(out, "- seed: {}", p.seed);
    let _ = writeln!(
        out,
        "- scale: {} targets x {} strategies x {} promptings, {} runs per evaluation, mutation {}",
        p.scale.targets,
        p.scale.strategies.len(),
        p.scale.promptings_per_target,
        p.scale.n_runs,
        if p.scale.mutation { "on" } else { "off" }
    );
    let t = &report.totals;
    let _ = writeln!(
        out,
        "- sessions: {} ({} failed), cells: {} ({} failed), runs: {}\n",
        t.sessions, t.failed_sessions, t.cells, t.failed_cells, t.total_runs
    );

    let _ = writeln!(out, "## Generators\n");
    let rows: Vec<Vec<String>> = report
        .generator_table
        .iter()
        .map(|r| {
            vec![
                format!("`{}`", r.target),
                r.strategy.to_string(),
                pct(Some(&r.generator_validity)),
                pct(r.statement_coverage.as_ref()),
                pct(r.branch_coverage.as_ref()),
            ]
        })
        .collect();
    md_table(
        &mut out,
        &["target", "strategy", "validity", "statement cov.", "branch cov."],
        &rows,
    );

    let _ = writeln!(out, "\n## Properties\n");
    let rows: Vec<Vec<String>> = report
        .property_table
        .iter()
        .map(|r| {
            vec![
                format!("`{}`", r.target),
                r.strategy.to_string(),
                pct(r.property_validity.as_ref()),
                pct(r.property_soundness.as_ref()),
                r.pooled_soundness.map_or_else(|| "-".to_string(), |x| x.to_string()),
                pct(r.property_strength.as_ref()),
                format!("{}/{}", r.free_of_unsound, r.n_scorecards),
            ]
        })
        .collect();
    md_table(
        &mut out,
        &[
            "target",
            "strategy",
            "validity",
            "soundness",
            "sound/judged",
            "strength",
            "no unsound",
        ],
        &rows,
    );

    if !report.mitigation_table.is_empty() {
        let _ = writeln!(out, "\n## Mitigations\n");
        let rows: Vec<Vec<String>> = report
            .mitigation_table
            .iter()
            .flat_map(|r| {
                r.metrics.iter().map(move |(name, d)| {
                    vec![
                        format!("`{}`", r.target),
                        r.strategy.to_string(),
                        name.clone(),
                        format!("{:.1}%", d.before * 100.0),
                        format!("{:.1}%", d.after * 100.0),
                        format!("{:+.1}", (d.after - d.before) * 100.0),
                    ]
                })
            })
            .collect();
        md_table(
            &mut out,
            &["target", "strategy", "metric", "before", "after", "change"],
            &rows,
        );
    }

    let failed: Vec<&CellReport> = report
        .cells
        .iter()
        .filter(|c| c.status != CellStatus::Complete)
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\n## Failures\n");
        for c in failed {
            let _ = writeln!(out, "- `{}` / {}: {}", c.target, c.strategy, status_str(c.status));
            for s in c.sessions.iter().filter(|s| s.error.is_some()) {
                let _ = writeln!(out, "  - {}: {}", s.session_id, s.error.as_deref().unwrap_or_default());
            }
            if let Some(f) = &c.failure {
                let _ = writeln!(out, "  - cause: {f}");
            }
        }
    }
    out
}

/// Draws `per_library` qualnames from each library's candidate list with a
/// seeded shuffle; the result is sorted so it can be pasted into a config.
pub fn sample_targets(
    candidates: &BTreeMap<String, Vec<String>>,
    per_library: usize,
    seed: u64,
) -> BTreeMap<String, Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates
        .iter()
        .map(|(lib, names)| {
            let mut names = names.clone();
            names.sort();
            names.dedup();
            names.shuffle(&mut rng);
            names.truncate(per_library);
            names.sort();
            (lib.clone(), names)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let mut c = BTreeMap::new();
        c.insert("json".to_string(), (0..20).map(|i| format!("json.f{i}")).collect());
        c.insert("decimal".to_string(), vec!["decimal.Decimal.sqrt".to_string()]);
        let a = sample_targets(&c, 10, 3);
        assert_eq!(a, sample_targets(&c, 10, 3));
        assert_eq!(a["json"].len(), 10);
        assert_eq!(a["decimal"].len(), 1);
        assert_ne!(a, sample_targets(&c, 10, 4));
    }

    #[test]
    fn format_names_parse() {
        assert_eq!("json".parse::<ReportFormat>(), Ok(ReportFormat::JsonDoc));
        assert_eq!("Markdown".parse::<ReportFormat>(), Ok(ReportFormat::Markdown));
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
