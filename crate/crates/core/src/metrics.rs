//! Generator and property quality metrics, issue flagging and
//! aggregation across repeated promptings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::protocol::{CoverageData, Mutant, MutantClassification, MutantResult, RunReport, RunStatus};

pub const SCORECARD_FORMAT: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("report has no runs")]
    EmptyReport,
    #[error("coverage scope `{0}` was not resolved (no statements)")]
    UnresolvedScope(String),
    #[error("no mutants remain after excluding crash-killed and timed-out ones")]
    NoMutants,
    #[error("no properties to score")]
    NoProperties,
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("invalid ratio: {0}")]
    InvalidRatio(String),
    #[error("evidence does not fit issue kind {0:?}")]
    EvidenceMismatch(IssueKind),
}

/// Exact non-negative fraction with a non-zero denominator. Equality is
/// by value; the unreduced counts are kept for display.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self, MetricsError> {
        if den == 0 {
            return Err(MetricsError::InvalidRatio(format!("{num}/0")));
        }
        Ok(Self { num, den })
    }

    pub const fn one() -> Self {
        Self { num: 1, den: 1 }
    }

    pub const fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_unit_interval(&self) -> bool {
        self.num <= self.den
    }

    /// Parses "0.10", "1", "3/4" exactly.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let bad = || MetricsError::InvalidRatio(text.to_string());
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(bad)?;
        Self::new(num, den)
    }

    /// Exact comparison by cross-multiplication.
    pub fn cmp_exact(&self, other: &Ratio) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }

    pub fn reduced(&self) -> Self {
        let g = gcd(self.num, self.den).max(1);
        Self {
            num: self.num / g,
            den: self.den / g,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_exact(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl std::hash::Hash for Ratio {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        let r = self.reduced();
        (r.num, r.den).hash(state);
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_exact(other)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Serialize, Deserialize)]
struct RatioRepr {
    num: u64,
    den: u64,
    #[serde(default)]
    value: f64,
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RatioRepr {
            num: self.num,
            den: self.den,
            value: self.value(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Any {
            Repr(RatioRepr),
            Number(f64),
            Text(String),
        }
        let parsed = match Any::deserialize(d)? {
            Any::Repr(r) => Ratio::new(r.num, r.den),
            // Shortest round-trip decimal, so 0.1 becomes exactly 1/10.
            Any::Number(v) => Ratio::parse(&format!("{v}")),
            Any::Text(t) => Ratio::parse(&t),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Runs without a generator error over all runs.
pub fn generator_validity(report: &RunReport) -> Result<Ratio, MetricsError> {
    let total = report.outcomes.len() as u64;
    if total == 0 {
        return Err(MetricsError::EmptyReport);
    }
    let errors = report
        .outcomes
        .iter()
        .filter(|o| o.status == RunStatus::GeneratorError)
        .count() as u64;
    Ratio::new(total - errors, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diversity {
    pub statement: Ratio,
    pub branch: Ratio,
}

/// Statement and branch coverage of the target function. A target with
/// statements but no branches counts as fully branch-covered.
pub fn generator_diversity(cov: &CoverageData) -> Result<Diversity, MetricsError> {
    if cov.statements_total == 0 {
        return Err(MetricsError::UnresolvedScope(cov.scope.clone()));
    }
    let statement = Ratio::new(cov.statements_hit as u64, cov.statements_total as u64)?;
    let branch = if cov.branches_total == 0 {
        Ratio::one()
    } else {
        Ratio::new(cov.branches_hit as u64, cov.branches_total as u64)?
    };
    if !statement.is_unit_interval() || !branch.is_unit_interval() {
        return Err(MetricsError::InvalidRatio(format!(
            "coverage of {} exceeds its totals",
            cov.scope
        )));
    }
    Ok(Diversity { statement, branch })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyValidity {
    pub ratio: Ratio,
    /// Ids of properties whose check raised a non-assertion error.
    pub invalid: Vec<String>,
}

pub fn property_validity(report: &RunReport) -> Result<PropertyValidity, MetricsError> {
    if report.outcomes.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    if report.property_ids.is_empty() {
        return Err(MetricsError::NoProperties);
    }
    let invalid: Vec<String> = report
        .property_ids
        .iter()
        .filter(|id| report.per_property_error_counts.get(*id).copied().unwrap_or(0) > 0)
        .cloned()
        .collect();
    let total = report.property_ids.len() as u64;
    Ok(PropertyValidity {
        ratio: Ratio::new(total - invalid.len() as u64, total)?,
        invalid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Sound,
    Unsound,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoundnessVerdict {
    pub property_id: String,
    /// Absent when no run reached the check.
    pub failure_rate: Option<Ratio>,
    pub failures: u64,
    pub runs_reached: u64,
    pub verdict: Verdict,
}

/// Unsound iff failure rate is strictly above `threshold`.
pub fn verdict_for(failures: u64, runs_reached: u64, threshold: Ratio) -> SoundnessVerdict {
    verdict_named(String::new(), failures, runs_reached, threshold)
}

fn verdict_named(property_id: String, failures: u64, runs_reached: u64, threshold: Ratio) -> SoundnessVerdict {
    let failure_rate = Ratio::new(failures, runs_reached).ok();
    let verdict = match failure_rate {
        None => Verdict::Indeterminate,
        Some(r) if r.cmp_exact(&threshold) == Ordering::Greater => Verdict::Unsound,
        Some(_) => Verdict::Sound,
    };
    SoundnessVerdict {
        property_id,
        failure_rate,
        failures,
        runs_reached,
        verdict,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Soundness {
    pub verdicts: Vec<SoundnessVerdict>,
    /// Sound over Sound + Unsound among valid properties; absent when that
    /// set is empty.
    pub ratio: Option<Ratio>,
}

pub fn property_soundness(report: &RunReport, threshold: Ratio, invalid: &[String]) -> Result<Soundness, MetricsError> {
    if report.outcomes.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    let verdicts: Vec<SoundnessVerdict> = report
        .property_ids
        .iter()
        .map(|id| {
            let failures = report.per_property_failure_counts.get(id).copied().unwrap_or(0);
            let reached = report.per_property_reached_counts.get(id).copied().unwrap_or(0);
            verdict_named(id.clone(), failures as u64, reached as u64, threshold)
        })
        .collect();
    let counted = verdicts.iter().filter(|v| !invalid.contains(&v.property_id));
    let (sound, unsound) = counted.fold((0u64, 0u64), |(s, u), v| match v.verdict {
        Verdict::Sound => (s + 1, u),
        Verdict::Unsound => (s, u + 1),
        Verdict::Indeterminate => (s, u),
    });
    Ok(Soundness {
        ratio: Ratio::new(sound, sound + unsound).ok(),
        verdicts,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantCounts {
    pub total: u64,
    pub killed_by_assertion: u64,
    /// Assertion kills where every killing property is sound.
    pub killed_by_sound_assertion: u64,
    pub killed_by_crash: u64,
    pub survived: u64,
    pub timeout: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strength {
    pub score: Ratio,
    /// Scored mutants not credited to a sound property.
    pub surviving: Vec<String>,
    pub counts: MutantCounts,
}

pub fn property_strength(mutants: &[MutantResult], verdicts: &[SoundnessVerdict]) -> Result<Strength, MetricsError> {
    let is_sound = |id: &String| {
        verdicts
            .iter()
            .any(|v| &v.property_id == id && v.verdict == Verdict::Sound)
    };
    let mut counts = MutantCounts {
        total: mutants.len() as u64,
        ..Default::default()
    };
    let mut surviving = Vec::new();
    for m in mutants {
        match m.classification {
            MutantClassification::KilledByCrash => counts.killed_by_crash += 1,
            MutantClassification::Timeout => counts.timeout += 1,
            MutantClassification::Survived => {
                counts.survived += 1;
                surviving.push(m.mutant_id.clone());
            }
            MutantClassification::KilledByAssertion => {
                counts.killed_by_assertion += 1;
                if !m.killing_property_ids.is_empty() && m.killing_property_ids.iter().all(is_sound) {
                    counts.killed_by_sound_assertion += 1;
                } else {
                    surviving.push(m.mutant_id.clone());
                }
            }
        }
    }
    let den = counts.total - counts.killed_by_crash - counts.timeout;
    if den == 0 {
        return Err(MetricsError::NoMutants);
    }
    Ok(Strength {
        score: Ratio::new(counts.killed_by_sound_assertion, den)?,
        surviving,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueKind {
    InvalidGenerator,
    LowDiversityGenerator,
    InvalidProperty,
    UnsoundProperty,
    WeakProperty,
}

impl IssueKind {
    pub const ALL: [IssueKind; 5] = [
        IssueKind::InvalidGenerator,
        IssueKind::LowDiversityGenerator,
        IssueKind::InvalidProperty,
        IssueKind::UnsoundProperty,
        IssueKind::WeakProperty,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            IssueKind::InvalidGenerator => "invalid-generator",
            IssueKind::LowDiversityGenerator => "low-diversity",
            IssueKind::InvalidProperty => "invalid",
            IssueKind::UnsoundProperty => "unsound",
            IssueKind::WeakProperty => "weak",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantEvidence {
    pub mutant_id: String,
    #[serde(default)]
    pub diff: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Evidence {
    GeneratorErrors {
        error_type: String,
        message: String,
        occurrences: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_rendering: Option<String>,
    },
    UncoveredBranches {
        branches: Vec<String>,
        statement: Ratio,
        branch: Ratio,
    },
    PropertyErrors {
        error_type: String,
        message: String,
        occurrences: u64,
    },
    Counterexample {
        input_rendering: String,
        failure_rate: Ratio,
    },
    SurvivingMutants {
        mutants: Vec<MutantEvidence>,
        score: Ratio,
    },
}

impl Evidence {
    pub fn matches(&self, kind: IssueKind) -> bool {
        matches!(
            (self, kind),
            (Evidence::GeneratorErrors { .. }, IssueKind::InvalidGenerator)
                | (Evidence::UncoveredBranches { .. }, IssueKind::LowDiversityGenerator)
                | (Evidence::PropertyErrors { .. }, IssueKind::InvalidProperty)
                | (Evidence::Counterexample { .. }, IssueKind::UnsoundProperty)
                | (Evidence::SurvivingMutants { .. }, IssueKind::WeakProperty)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub id: String,
    pub kind: IssueKind,
    pub subject: String,
    pub evidence: Evidence,
    /// Index of the evaluation that raised the issue.
    pub evaluation_index: usize,
}

impl Issue {
    pub fn new(
        kind: IssueKind,
        subject: impl Into<String>,
        evidence: Evidence,
        evaluation_index: usize,
    ) -> Result<Self, MetricsError> {
        if !evidence.matches(kind) {
            return Err(MetricsError::EvidenceMismatch(kind));
        }
        let subject = subject.into();
        Ok(Self {
            id: format!("{}-{subject}", kind.slug()),
            kind,
            subject,
            evidence,
            evaluation_index,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueThresholds {
    /// Flag InvalidGenerator below this validity.
    pub min_generator_validity: Ratio,
    /// Flag LowDiversityGenerator below this branch ratio.
    pub min_branch_coverage: Ratio,
    /// Flag WeakProperty below this strength.
    pub min_strength: Ratio,
    /// Flag UnsoundProperty above this failure rate.
    pub soundness: Ratio,
}

impl Default for IssueThresholds {
    fn default() -> Self {
        Self {
            min_generator_validity: Ratio { num: 99, den: 100 },
            min_branch_coverage: Ratio { num: 8, den: 10 },
            min_strength: Ratio { num: 1, den: 2 },
            soundness: Ratio { num: 1, den: 10 },
        }
    }
}

/// Everything one evaluation produced, ready for scoring.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInput<'a> {
    pub report: &'a RunReport,
    /// Enumerated mutants and their results, when mutation ran.
    pub mutation: Option<(&'a [Mutant], &'a [MutantResult])>,
    pub generator_name: Option<&'a str>,
    pub thresholds: IssueThresholds,
    pub evaluation_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScorecard {
    pub format: u32,
    pub run_semantics: String,
    pub seed: u64,
    pub generator_validity: Ratio,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_diversity: Option<Diversity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_validity: Option<Ratio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_soundness: Option<Ratio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_strength: Option<Ratio>,
    pub verdicts: Vec<SoundnessVerdict>,
    pub invalid_properties: Vec<String>,
    pub indeterminate_properties: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant_counts: Option<MutantCounts>,
    pub surviving_mutants: Vec<String>,
    pub issues: Vec<Issue>,
    pub n_runs: u64,
    pub n_mutants: u64,
    pub n_properties: u64,
    #[serde(default)]
    pub partial: bool,
    pub thresholds: IssueThresholds,
}

impl QualityScorecard {
    pub fn issue(&self, id: &str) -> Option<&Issue> {
        self.issues.iter().find(|i| i.id == id)
    }

    pub fn has_issue(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }

    pub fn unsound_count(&self) -> u64 {
        self.verdicts
            .iter()
            .filter(|v| v.verdict == Verdict::Unsound && !self.invalid_properties.contains(&v.property_id))
            .count() as u64
    }

    pub fn sound_count(&self) -> u64 {
        self.verdicts
            .iter()
            .filter(|v| v.verdict == Verdict::Sound && !self.invalid_properties.contains(&v.property_id))
            .count() as u64
    }
}

pub fn compute_scorecard(input: ScoringInput<'_>) -> Result<QualityScorecard, MetricsError> {
    let report = input.report;
    let th = input.thresholds;
    let validity = generator_validity(report)?;
    let diversity = report.coverage.as_ref().map(generator_diversity).transpose()?;
    let pv = if report.property_ids.is_empty() {
        None
    } else {
        Some(property_validity(report)?)
    };
    let invalid = pv.as_ref().map(|p| p.invalid.clone()).unwrap_or_default();
    let soundness = property_soundness(report, th.soundness, &invalid)?;
    let strength = match input.mutation {
        Some((_, results)) => match property_strength(results, &soundness.verdicts) {
            Ok(s) => Some(s),
            Err(MetricsError::NoMutants) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };

    let idx = input.evaluation_index;
    let generator_subject = input.generator_name.unwrap_or("generator");
    let mut issues = Vec::new();
    if validity.cmp_exact(&th.min_generator_validity) == Ordering::Less {
        let errors: Vec<_> = report
            .outcomes
            .iter()
            .filter(|o| o.status == RunStatus::GeneratorError)
            .collect();
        let first = errors.first();
        issues.push(Issue::new(
            IssueKind::InvalidGenerator,
            generator_subject,
            Evidence::GeneratorErrors {
                error_type: first.and_then(|o| o.error_type.clone()).unwrap_or_default(),
                message: first.and_then(|o| o.error_message.clone()).unwrap_or_default(),
                occurrences: errors.len() as u64,
                input_rendering: first.and_then(|o| o.input_rendering.clone()),
            },
            idx,
        )?);
    }
    if let (Some(d), Some(cov)) = (&diversity, &report.coverage) {
        if d.branch.cmp_exact(&th.min_branch_coverage) == Ordering::Less {
            issues.push(Issue::new(
                IssueKind::LowDiversityGenerator,
                generator_subject,
                Evidence::UncoveredBranches {
                    branches: cov.missed_branches.clone(),
                    statement: d.statement,
                    branch: d.branch,
                },
                idx,
            )?);
        }
    }
    for id in &invalid {
        let first = report.first_property_error(id);
        issues.push(Issue::new(
            IssueKind::InvalidProperty,
            id.clone(),
            Evidence::PropertyErrors {
                error_type: first.and_then(|o| o.error_type.clone()).unwrap_or_default(),
                message: first.and_then(|o| o.error_message.clone()).unwrap_or_default(),
                occurrences: report.per_property_error_counts.get(id).copied().unwrap_or(0) as u64,
            },
            idx,
        )?);
    }
    for v in soundness.verdicts.iter().filter(|v| v.verdict == Verdict::Unsound) {
        if invalid.contains(&v.property_id) {
            continue;
        }
        issues.push(Issue::new(
            IssueKind::UnsoundProperty,
            v.property_id.clone(),
            Evidence::Counterexample {
                input_rendering: report
                    .first_counterexample(&v.property_id)
                    .unwrap_or_default()
                    .to_string(),
                failure_rate: v.failure_rate.expect("unsound implies reached"),
            },
            idx,
        )?);
    }
    if let (Some(s), Some((mutants, _))) = (&strength, input.mutation) {
        if s.score.cmp_exact(&th.min_strength) == Ordering::Less {
            let evidence = s
                .surviving
                .iter()
                .map(|id| MutantEvidence {
                    mutant_id: id.clone(),
                    diff: mutants
                        .iter()
                        .find(|m| &m.mutant_id == id)
                        .map(|m| m.diff.clone())
                        .unwrap_or_default(),
                })
                .collect();
            issues.push(Issue::new(
                IssueKind::WeakProperty,
                "properties",
                Evidence::SurvivingMutants {
                    mutants: evidence,
                    score: s.score,
                },
                idx,
            )?);
        }
    }

    Ok(QualityScorecard {
        format: SCORECARD_FORMAT,
        run_semantics: report.run_semantics.clone(),
        seed: report.seed,
        generator_validity: validity,
        generator_diversity: diversity,
        property_validity: pv.map(|p| p.ratio),
        property_soundness: soundness.ratio,
        property_strength: strength.as_ref().map(|s| s.score),
        indeterminate_properties: soundness
            .verdicts
            .iter()
            .filter(|v| v.verdict == Verdict::Indeterminate)
            .map(|v| v.property_id.clone())
            .collect(),
        verdicts: soundness.verdicts,
        invalid_properties: invalid,
        mutant_counts: strength.as_ref().map(|s| s.counts),
        surviving_mutants: strength.map(|s| s.surviving).unwrap_or_default(),
        issues,
        n_runs: report.outcomes.len() as u64,
        n_mutants: input.mutation.map_or(0, |(_, r)| r.len() as u64),
        n_properties: report.property_ids.len() as u64,
        partial: report.partial,
        thresholds: th,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Scorecards contributing a value.
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(Self {
            // Rounding can push the mean a hair outside its range.
            mean: mean.clamp(min, max),
            min,
            max,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_scorecards: usize,
    pub generator_validity: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement_coverage: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_coverage: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_validity: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_soundness: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_strength: Option<Summary>,
    /// Sound over Sound + Unsound across all scorecards' properties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_soundness: Option<Ratio>,
    /// Scorecards without any issue of each kind.
    pub free_of: BTreeMap<IssueKind, usize>,
    pub total_runs: u64,
}

pub fn aggregate(cards: &[QualityScorecard]) -> Result<AggregateMetrics, MetricsError> {
    if cards.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let summary =
        |f: &dyn Fn(&QualityScorecard) -> Option<Ratio>| Summary::of(cards.iter().filter_map(f).map(|r| r.value()));
    let (sound, unsound) = cards
        .iter()
        .fold((0, 0), |(s, u), c| (s + c.sound_count(), u + c.unsound_count()));
    Ok(AggregateMetrics {
        n_scorecards: cards.len(),
        generator_validity: summary(&|c| Some(c.generator_validity)).expect("non-empty"),
        statement_coverage: summary(&|c| c.generator_diversity.map(|d| d.statement)),
        branch_coverage: summary(&|c| c.generator_diversity.map(|d| d.branch)),
        property_validity: summary(&|c| c.property_validity),
        property_soundness: summary(&|c| c.property_soundness),
        property_strength: summary(&|c| c.property_strength),
        pooled_soundness: Ratio::new(sound, sound + unsound).ok(),
        free_of: IssueKind::ALL
            .iter()
            .map(|k| (*k, cards.iter().filter(|c| !c.has_issue(*k)).count()))
            .collect(),
        total_runs: cards.iter().map(|c| c.n_runs).sum(),
    })
}

fn pct(r: Option<Ratio>) -> String {
    r.map_or_else(|| "-".to_string(), |r| format!("{:.1}% ({r})", r.value() * 100.0))
}

/// Plain-text summary table of one scorecard.
pub fn render_scorecard_text(card: &QualityScorecard) -> String {
    let rows = [
        ("generator validity", pct(Some(card.generator_validity))),
        ("statement coverage", pct(card.generator_diversity.map(|d| d.statement))),
        ("branch coverage", pct(card.generator_diversity.map(|d| d.branch))),
        ("property validity", pct(card.property_validity)),
        ("property soundness", pct(card.property_soundness)),
        ("property strength", pct(card.property_strength)),
    ];
    let mut out = String::new();
    for (name, value) in rows {
        out.push_str(&format!("{name:<20} {value}\n"));
    }
    out.push_str(&format!(
        "{:<20} {} runs, {} properties, {} mutants{}\n",
        "scale",
        card.n_runs,
        card.n_properties,
        card.n_mutants,
        if card.partial { " (partial)" } else { "" }
    ));
    for v in &card.verdicts {
        let rate = v
            .failure_rate
            .map_or("-".to_string(), |r| format!("{:.1}%", r.value() * 100.0));
        out.push_str(&format!("  {:<6} {:?} failure rate {rate}\n", v.property_id, v.verdict));
    }
    if card.issues.is_empty() {
        out.push_str("no issues\n");
    }
    for i in &card.issues {
        out.push_str(&format!("issue {} ({:?})\n", i.id, i.kind));
    }
    out
}
