//! Monte Carlo operating characteristics.
//!
//! Scenario `i` is drawn from its own stream and trial `t` of scenario `i`
//! from another, both derived from the master seed, so a study gives the same
//! records on any number of threads. Metrics are computed per scenario and
//! then averaged over scenarios in index order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KeyboardError, Result};
use crate::grid::{DoseCoord, Grid};
use crate::rng::{derive_seed, stream};
use crate::scenario::{classify, generate_with_mtd_count, GeneratorConfig, PMaxMode, ToxBand, ToxScenario};
use crate::trial::{Design, TrialConfig, TrialStatus};

pub const SPEC_VERSION: u32 = 1;

pub const SUMMARY_HEADER: &str = "scenario_id,pcs,pca,overdose_pct,underdose_pct,incoherent_pct,safety_stop_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Fixed toxicity matrices, each `rows x cols` as row vectors.
    Explicit { matrices: Vec<Vec<Vec<f64>>> },
    /// Random scenarios, optionally conditioned on the number of doses in the
    /// target band.
    Generated {
        #[serde(default)]
        target_mtd_count: Option<usize>,
        #[serde(default)]
        p_max_mode: PMaxMode,
        #[serde(default = "default_max_attempts")]
        max_attempts: usize,
    },
}

fn default_max_attempts() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub trial: TrialConfig,
    pub scenarios: ScenarioSource,
    /// Number of generated scenarios; explicit lists use their own length.
    #[serde(default)]
    pub n_scenarios: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials_per_scenario: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_version() -> u32 {
    SPEC_VERSION
}

fn default_trials() -> usize {
    100
}

impl SimSpec {
    pub fn generated(trial: TrialConfig, target_mtd_count: Option<usize>, n_scenarios: usize) -> Self {
        SimSpec {
            version: SPEC_VERSION,
            trial,
            scenarios: ScenarioSource::Generated {
                target_mtd_count,
                p_max_mode: PMaxMode::default(),
                max_attempts: default_max_attempts(),
            },
            n_scenarios: Some(n_scenarios),
            trials_per_scenario: default_trials(),
            seed: 0,
            threads: None,
        }
    }

    pub fn explicit(trial: TrialConfig, matrices: Vec<Vec<Vec<f64>>>) -> Self {
        SimSpec {
            version: SPEC_VERSION,
            trial,
            scenarios: ScenarioSource::Explicit { matrices },
            n_scenarios: None,
            trials_per_scenario: default_trials(),
            seed: 0,
            threads: None,
        }
    }

    pub fn scenario_count(&self) -> usize {
        match &self.scenarios {
            ScenarioSource::Explicit { matrices } => matrices.len(),
            ScenarioSource::Generated { .. } => self.n_scenarios.unwrap_or(0),
        }
    }

    pub fn validation_errors(&self) -> Vec<KeyboardError> {
        let mut errs = Vec::new();
        if self.version != SPEC_VERSION {
            errs.push(KeyboardError::UnsupportedVersion(self.version));
        }
        errs.extend(self.trial.validation_errors());
        if self.scenario_count() == 0 {
            errs.push(KeyboardError::config("n_scenarios", "must be at least 1"));
        }
        if self.trials_per_scenario == 0 {
            errs.push(KeyboardError::config("trials_per_scenario", "must be at least 1"));
        }
        if self.threads == Some(0) {
            errs.push(KeyboardError::config("threads", "must be at least 1"));
        }
        match &self.scenarios {
            ScenarioSource::Explicit { matrices } => {
                if self.n_scenarios.is_some_and(|n| n != matrices.len()) {
                    errs.push(KeyboardError::config(
                        "n_scenarios",
                        "does not match the number of matrices",
                    ));
                }
                for (i, m) in matrices.iter().enumerate() {
                    let shape_ok = m.len() == self.trial.rows && m.iter().all(|r| r.len() == self.trial.cols);
                    if !shape_ok {
                        errs.push(KeyboardError::config(
                            "scenarios",
                            format!("matrix {i} is not {}x{}", self.trial.rows, self.trial.cols),
                        ));
                    } else if m.iter().flatten().any(|&p| !(p > 0.0 && p < 1.0)) {
                        errs.push(KeyboardError::config(
                            "scenarios",
                            format!("matrix {i} has entries outside (0, 1)"),
                        ));
                    }
                }
            }
            ScenarioSource::Generated {
                target_mtd_count,
                max_attempts,
                ..
            } => {
                if *target_mtd_count == Some(0) {
                    errs.push(KeyboardError::config("target_mtd_count", "must be at least 1"));
                }
                if let Some(t) = target_mtd_count {
                    if *t > self.trial.rows * self.trial.cols {
                        errs.push(KeyboardError::config("target_mtd_count", "exceeds the number of doses"));
                    }
                }
                if *max_attempts == 0 {
                    errs.push(KeyboardError::config("max_attempts", "must be at least 1"));
                }
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn scenario_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, 2 * index as u64)
    }

    /// Seed of trial `trial` within scenario `scenario`.
    pub fn trial_seed(&self, scenario: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 2 * scenario as u64 + 1), trial as u64)
    }

    /// Builds (or draws) the study's scenarios in index order.
    pub fn build_scenarios(&self) -> Result<Vec<ToxScenario>> {
        let t = &self.trial;
        match &self.scenarios {
            ScenarioSource::Explicit { matrices } => matrices
                .iter()
                .map(|m| {
                    let grid = Grid::from_rows(m.clone())
                        .ok_or_else(|| KeyboardError::config("scenarios", "ragged matrix"))?;
                    ToxScenario::from_matrix(grid, t.phi)
                })
                .collect(),
            ScenarioSource::Generated {
                target_mtd_count,
                p_max_mode,
                max_attempts,
            } => (0..self.scenario_count())
                .into_par_iter()
                .map(|i| {
                    let config = GeneratorConfig {
                        rows: t.rows,
                        cols: t.cols,
                        phi: t.phi,
                        eps1: t.eps1,
                        eps2: t.eps2,
                        target_mtd_count: *target_mtd_count,
                        max_attempts: *max_attempts,
                        seed: self.scenario_seed(i),
                        p_max_mode: *p_max_mode,
                    };
                    generate_with_mtd_count(&config, &mut stream(config.seed))
                })
                .collect(),
        }
    }
}

/// Raw outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario_id: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub selected: Option<DoseCoord>,
    /// Patients treated at each dose.
    pub patients: Grid<u32>,
    pub dlts: u32,
    pub cohorts: usize,
    pub escalations: u32,
    pub incoherent_escalations: u32,
}

impl TrialRecord {
    pub fn total_patients(&self) -> u32 {
        self.patients.values().iter().sum()
    }
}

/// Runs one trial to termination with Bernoulli outcomes drawn from the
/// scenario's true toxicity probabilities.
pub fn simulate_trial(design: &Design, scenario: &ToxScenario, scenario_id: usize, seed: u64) -> Result<TrialRecord> {
    let config = design.config();
    if (scenario.rows(), scenario.cols()) != (config.rows, config.cols) {
        return Err(KeyboardError::domain(format!(
            "scenario is {}x{} but the trial is {}x{}",
            scenario.rows(),
            scenario.cols(),
            config.rows,
            config.cols
        )));
    }
    let mut rng = stream(seed);
    let mut state = design.start();
    while state.status == TrialStatus::Active {
        let p = *scenario.p.get(state.current);
        let dlts = (0..config.cohort_size).filter(|_| rng.random::<f64>() < p).count() as u32;
        design.apply_cohort(&mut state, dlts, &mut rng)?;
    }
    let selection = design.select_mtd(&state, &mut rng)?;

    let escalations = state.history.iter().filter(|h| h.moved_up()).count() as u32;
    let incoherent_escalations = state
        .history
        .iter()
        .filter(|h| h.is_incoherent_escalation(config.phi))
        .count() as u32;
    Ok(TrialRecord {
        scenario_id,
        seed,
        status: state.status,
        selected: selection.selected,
        patients: state.tallies.map(|d| d.n),
        dlts: state.tallies.values().iter().map(|d| d.y).sum(),
        cohorts: state.history.len(),
        escalations,
        incoherent_escalations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario_id: usize,
    pub pcs: f64,
    pub pca: f64,
    pub overdose_pct: f64,
    pub underdose_pct: f64,
    pub incoherent_escalation_pct: f64,
    pub safety_stop_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub pcs: f64,
    pub pca: f64,
    pub overdose_pct: f64,
    pub underdose_pct: f64,
    pub incoherent_escalation_pct: f64,
    pub safety_stop_pct: f64,
    pub per_scenario: Vec<ScenarioMetrics>,
}

fn pct(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        100.0 * num / den
    } else {
        0.0
    }
}

/// Metrics of one scenario from its trial records.
pub fn scenario_metrics(
    scenario_id: usize,
    scenario: &ToxScenario,
    records: &[TrialRecord],
    config: &TrialConfig,
) -> ScenarioMetrics {
    let band = |c: DoseCoord| classify(*scenario.p.get(c), config.phi, config.eps1, config.eps2);
    let mut correct = 0u64;
    let mut stopped = 0u64;
    let mut escalations = 0u64;
    let mut incoherent = 0u64;
    let mut patients = [0u64; 3];
    for r in records {
        if r.selected.is_some_and(|c| band(c) == ToxBand::Target) {
            correct += 1;
        }
        if r.status == TrialStatus::StoppedSafety {
            stopped += 1;
        }
        escalations += u64::from(r.escalations);
        incoherent += u64::from(r.incoherent_escalations);
        for (c, &n) in r.patients.iter() {
            let slot = match band(c) {
                ToxBand::Target => 0,
                ToxBand::Over => 1,
                ToxBand::Under => 2,
            };
            patients[slot] += u64::from(n);
        }
    }
    let trials = records.len() as f64;
    let treated = patients.iter().sum::<u64>() as f64;
    ScenarioMetrics {
        scenario_id,
        pcs: pct(correct as f64, trials),
        pca: pct(patients[0] as f64, treated),
        overdose_pct: pct(patients[1] as f64, treated),
        underdose_pct: pct(patients[2] as f64, treated),
        incoherent_escalation_pct: pct(incoherent as f64, escalations as f64),
        safety_stop_pct: pct(stopped as f64, trials),
    }
}

/// Averages per-scenario metrics in index order.
pub fn aggregate(per_scenario: Vec<ScenarioMetrics>) -> StudyMetrics {
    let n = per_scenario.len().max(1) as f64;
    let mean = |f: fn(&ScenarioMetrics) -> f64| per_scenario.iter().map(f).sum::<f64>() / n;
    StudyMetrics {
        pcs: mean(|m| m.pcs),
        pca: mean(|m| m.pca),
        overdose_pct: mean(|m| m.overdose_pct),
        underdose_pct: mean(|m| m.underdose_pct),
        incoherent_escalation_pct: mean(|m| m.incoherent_escalation_pct),
        safety_stop_pct: mean(|m| m.safety_stop_pct),
        per_scenario,
    }
}

/// Everything a study produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: SimSpec,
    pub scenarios: Vec<ToxScenario>,
    pub metrics: StudyMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<TrialRecord>>,
}

impl StudyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.metrics)
    }

    pub fn without_records(mut self) -> Self {
        self.records = None;
        self
    }
}

/// Runs a full study. Fails on an invalid spec, generator exhaustion, or any
/// incoherent escalation.
pub fn run_study(spec: &SimSpec) -> Result<StudyReport> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads.unwrap_or(0))
        .build()
        .map_err(|e| KeyboardError::domain(format!("thread pool: {e}")))?;
    pool.install(|| run_study_in_pool(spec))
}

fn run_study_in_pool(spec: &SimSpec) -> Result<StudyReport> {
    let design = Design::new(spec.trial.clone())?;
    let scenarios = spec.build_scenarios()?;
    let per = spec.trials_per_scenario;

    let records: Vec<TrialRecord> = (0..scenarios.len() * per)
        .into_par_iter()
        .map(|idx| {
            let (s, t) = (idx / per, idx % per);
            simulate_trial(&design, &scenarios[s], s, spec.trial_seed(s, t))
        })
        .collect::<Result<_>>()?;

    if let Some(bad) = records.iter().find(|r| r.incoherent_escalations > 0) {
        return Err(coherence_error(&design, &scenarios[bad.scenario_id], bad));
    }

    let per_scenario = scenarios
        .iter()
        .enumerate()
        .map(|(i, sc)| scenario_metrics(i, sc, &records[i * per..(i + 1) * per], &spec.trial))
        .collect();
    Ok(StudyReport {
        spec: spec.clone(),
        scenarios,
        metrics: aggregate(per_scenario),
        records: Some(records),
    })
}

/// Re-runs an offending trial to report where it went wrong.
fn coherence_error(design: &Design, scenario: &ToxScenario, record: &TrialRecord) -> KeyboardError {
    let config = design.config();
    let mut rng = stream(record.seed);
    let mut state = design.start();
    while state.status == TrialStatus::Active {
        let p = *scenario.p.get(state.current);
        let dlts = (0..config.cohort_size).filter(|_| rng.random::<f64>() < p).count() as u32;
        if design.apply_cohort(&mut state, dlts, &mut rng).is_err() {
            break;
        }
        let last = state.history.last().expect("entry just pushed");
        if last.is_incoherent_escalation(config.phi) {
            return KeyboardError::CoherenceViolation {
                dose: last.dose,
                n: last.tally.n,
                y: last.tally.y,
            };
        }
    }
    KeyboardError::domain("incoherent escalation recorded but not reproduced")
}

/// One row per scenario followed by an `all` row with the study means.
pub fn summary_csv(metrics: &StudyMetrics) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let mut row = |id: &str, v: [f64; 6]| {
        let _ = writeln!(out, "{id},{},{},{},{},{},{}", v[0], v[1], v[2], v[3], v[4], v[5]);
    };
    for m in &metrics.per_scenario {
        row(
            &m.scenario_id.to_string(),
            [
                m.pcs,
                m.pca,
                m.overdose_pct,
                m.underdose_pct,
                m.incoherent_escalation_pct,
                m.safety_stop_pct,
            ],
        );
    }
    row(
        "all",
        [
            metrics.pcs,
            metrics.pca,
            metrics.overdose_pct,
            metrics.underdose_pct,
            metrics.incoherent_escalation_pct,
            metrics.safety_stop_pct,
        ],
    );
    out
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.json";

/// Writes `summary.csv` and `report.json` into `dir`, creating it if needed.
pub fn export_results(report: &StudyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| KeyboardError::io(dir, e))?;
    let summary = dir.join(SUMMARY_FILE);
    fs::write(&summary, report.summary_csv()).map_err(|e| KeyboardError::io(&summary, e))?;
    let json = dir.join(REPORT_FILE);
    fs::write(&json, report.to_json()?).map_err(|e| KeyboardError::io(&json, e))?;
    Ok(())
}
