//! Random run reports and a brute-force recount of their metrics that
//! shares no code with the library's tallies.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pbt_workbench::assembly::Phase;
use pbt_workbench::metrics::Verdict;
use pbt_workbench::protocol::{MutantClassification, MutantResult, RunOutcome, RunReport, RunStatus};

pub struct Sample {
    pub report: RunReport,
    pub mutants: Vec<MutantResult>,
    /// Soundness threshold as num/den.
    pub threshold: (u64, u64),
}

fn nonempty_subset(rng: &mut ChaCha8Rng, ids: &[String]) -> Vec<String> {
    loop {
        let picked: Vec<String> = ids.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect();
        if !picked.is_empty() {
            return picked;
        }
    }
}

fn check(id: &str) -> Phase {
    Phase::Check(id.to_string())
}

pub fn random_outcome(rng: &mut ChaCha8Rng, run_index: u32, ids: &[String], strict: bool) -> RunOutcome {
    let mut o = RunOutcome::ok(run_index, Phase::Invoke);
    let roll = rng.gen_range(0..100);
    let has_props = !ids.is_empty();
    match roll {
        0..=11 => {
            o.status = RunStatus::GeneratorError;
            o.phase = Phase::Generate;
            o.error_type = Some("ValueError".into());
        }
        12..=21 => {
            o.status = RunStatus::ApiException;
            o.error_type = Some("TypeError".into());
        }
        22..=41 if has_props => {
            o.status = RunStatus::AssertionFailure;
            if strict {
                let id = ids.choose(rng).unwrap().clone();
                o.phase = check(&id);
                o.failed_property_ids = vec![id];
            } else {
                o.failed_property_ids = nonempty_subset(rng, ids);
                o.phase = check(&o.failed_property_ids[0]);
                o.errored_property_ids = ids
                    .iter()
                    .filter(|id| !o.failed_property_ids.contains(id) && rng.gen_bool(0.1))
                    .cloned()
                    .collect();
            }
        }
        42..=51 if has_props => {
            o.status = RunStatus::PropertyError;
            o.error_type = Some("AttributeError".into());
            if strict {
                let id = ids.choose(rng).unwrap().clone();
                o.phase = check(&id);
                o.errored_property_ids = vec![id];
            } else {
                o.errored_property_ids = nonempty_subset(rng, ids);
                o.phase = check(&o.errored_property_ids[0]);
            }
        }
        52..=59 => {
            o.status = RunStatus::Timeout;
            o.phase = match rng.gen_range(0..3) {
                0 => Phase::Generate,
                1 if has_props => check(ids.choose(rng).unwrap()),
                _ => Phase::Invoke,
            };
        }
        _ => {
            if let Some(last) = ids.last() {
                o.phase = check(last);
            }
        }
    }
    o
}

pub fn random_mutants(rng: &mut ChaCha8Rng, ids: &[String]) -> Vec<MutantResult> {
    (0..rng.gen_range(0..=12))
        .map(|i| {
            let mut classification = match rng.gen_range(0..4) {
                0 => MutantClassification::KilledByAssertion,
                1 => MutantClassification::KilledByCrash,
                2 => MutantClassification::Survived,
                _ => MutantClassification::Timeout,
            };
            if ids.is_empty() && classification == MutantClassification::KilledByAssertion {
                classification = MutantClassification::Survived;
            }
            let killing_property_ids = if classification == MutantClassification::KilledByAssertion {
                nonempty_subset(rng, ids)
            } else {
                Vec::new()
            };
            MutantResult {
                mutant_id: format!("m{i}"),
                classification,
                killing_property_ids,
                runs_executed: 1,
            }
        })
        .collect()
}

pub fn random_sample(rng: &mut ChaCha8Rng, max_runs: u32) -> Sample {
    let n = rng.gen_range(1..=max_runs);
    let k = rng.gen_range(0..=4);
    let ids: Vec<String> = (1..=k).map(|i| format!("P{i}")).collect();
    let strict = rng.gen_bool(0.3);
    let outcomes = (0..n).map(|i| random_outcome(rng, i, &ids, strict)).collect();
    let report = RunReport::from_outcomes(n, rng.gen(), ids.clone(), strict, outcomes, None, false)
        .expect("generated report is consistent");
    let den = rng.gen_range(1..=20);
    let threshold = if rng.gen_bool(0.5) {
        (1, 10)
    } else {
        (rng.gen_range(0..=den), den)
    };
    Sample {
        mutants: random_mutants(rng, &ids),
        report,
        threshold,
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct Recount {
    pub validity: (u64, u64),
    pub invalid: Vec<String>,
    pub failures: Vec<u64>,
    pub reached: Vec<u64>,
    pub verdicts: Vec<Verdict>,
    /// Sound over Sound + Unsound among valid properties.
    pub soundness: Option<(u64, u64)>,
    /// None when no mutant is scoreable.
    pub strength: Option<(u64, u64)>,
}

fn index_of(ids: &[String], id: &str) -> usize {
    ids.iter().position(|p| p == id).unwrap()
}

/// Did property `j` get checked in this run?
fn was_checked(o: &RunOutcome, ids: &[String], strict: bool, j: usize) -> bool {
    let stopped_at = match &o.phase {
        Phase::Check(id) => Some(index_of(ids, id)),
        _ => None,
    };
    match o.status {
        RunStatus::Ok => true,
        RunStatus::GeneratorError | RunStatus::ApiException => false,
        RunStatus::Timeout => stopped_at.is_some_and(|s| j <= s),
        RunStatus::AssertionFailure | RunStatus::PropertyError => match stopped_at {
            Some(s) if strict => j <= s,
            _ => true,
        },
    }
}

pub fn recount(report: &RunReport, mutants: &[MutantResult], threshold: (u64, u64)) -> Recount {
    let ids = &report.property_ids;
    let runs = &report.outcomes;
    let total = runs.len() as u64;
    let mut gen_errors = 0;
    for o in runs {
        if o.status == RunStatus::GeneratorError {
            gen_errors += 1;
        }
    }
    let mut failures = vec![0u64; ids.len()];
    let mut errors = vec![0u64; ids.len()];
    let mut reached = vec![0u64; ids.len()];
    for o in runs {
        for (j, id) in ids.iter().enumerate() {
            if o.failed_property_ids.contains(id) {
                failures[j] += 1;
            }
            if o.errored_property_ids.contains(id) {
                errors[j] += 1;
            }
            if was_checked(o, ids, report.strict, j) {
                reached[j] += 1;
            }
        }
    }
    let (t_num, t_den) = threshold;
    let verdicts: Vec<Verdict> = (0..ids.len())
        .map(|j| {
            if reached[j] == 0 {
                Verdict::Indeterminate
            } else if failures[j] * t_den > t_num * reached[j] {
                Verdict::Unsound
            } else {
                Verdict::Sound
            }
        })
        .collect();
    let invalid: Vec<String> = (0..ids.len())
        .filter(|&j| errors[j] > 0)
        .map(|j| ids[j].clone())
        .collect();
    let (mut sound, mut unsound) = (0, 0);
    for j in 0..ids.len() {
        if errors[j] > 0 {
            continue;
        }
        match verdicts[j] {
            Verdict::Sound => sound += 1,
            Verdict::Unsound => unsound += 1,
            Verdict::Indeterminate => {}
        }
    }
    let mut credited = 0;
    let mut scoreable = 0;
    for m in mutants {
        match m.classification {
            MutantClassification::Survived => scoreable += 1,
            MutantClassification::KilledByAssertion => {
                scoreable += 1;
                let mut all_sound = !m.killing_property_ids.is_empty();
                for id in &m.killing_property_ids {
                    if verdicts[index_of(ids, id)] != Verdict::Sound {
                        all_sound = false;
                    }
                }
                if all_sound {
                    credited += 1;
                }
            }
            MutantClassification::KilledByCrash | MutantClassification::Timeout => {}
        }
    }
    Recount {
        validity: (total - gen_errors, total),
        invalid,
        failures,
        reached,
        verdicts,
        soundness: (sound + unsound > 0).then_some((sound, sound + unsound)),
        strength: (scoreable > 0).then_some((credited, scoreable)),
    }
}
