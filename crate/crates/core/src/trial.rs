//! The combination trial state machine.
//!
//! A trial starts at `(1, 1)`. After each cohort the keyboard decision at the
//! current dose picks a direction; the admissible set of the chosen algorithm
//! then picks the neighbour. Doses whose overdose probability reaches the
//! cutoff are eliminated together with every dose above them, and the trial
//! stops when `(1, 1)` is eliminated. At the end the MTD is the tried,
//! non-eliminated dose whose isotonic toxicity estimate is closest to `phi`.
//!
//! Every random draw is logged in the history so a trial replays exactly.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::beta::DoseData;
use crate::error::{KeyboardError, Result};
use crate::grid::{DoseCoord, Grid};
use crate::isotonic::{matrix_isotonic, WeightedMatrix};
use crate::keys::{is_tied, should_eliminate, Decision, KeyPartition};
use crate::rng::{pick_uniform, pick_weighted, Entropy, Recorder, ReplayDraws};

pub const DOCUMENT_VERSION: u32 = 1;

/// Largest per-dose sample size whose rules are precomputed.
const RULE_CACHE_N: u32 = 200;

/// Estimates within this distance of the best are tied at selection.
pub const SELECTION_TIE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Fixed moves, no diagonals.
    Key1,
    /// Fixed moves, diagonal de-escalation.
    Key2,
    /// Fixed moves, diagonal escalation and de-escalation.
    Key3,
    /// Randomized moves, no diagonals.
    Key4,
    /// Randomized moves with diagonals.
    Key5,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Key1,
        Algorithm::Key2,
        Algorithm::Key3,
        Algorithm::Key4,
        Algorithm::Key5,
    ];

    fn diagonal_escalation(self) -> bool {
        matches!(self, Algorithm::Key3 | Algorithm::Key5)
    }

    fn diagonal_deescalation(self) -> bool {
        matches!(self, Algorithm::Key2 | Algorithm::Key3 | Algorithm::Key5)
    }

    fn randomized(self) -> bool {
        matches!(self, Algorithm::Key4 | Algorithm::Key5)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Algorithm::Key1 => "key1",
            Algorithm::Key2 => "key2",
            Algorithm::Key3 => "key3",
            Algorithm::Key4 => "key4",
            Algorithm::Key5 => "key5",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = KeyboardError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "key1" => Ok(Algorithm::Key1),
            "key2" => Ok(Algorithm::Key2),
            "key3" => Ok(Algorithm::Key3),
            "key4" => Ok(Algorithm::Key4),
            "key5" => Ok(Algorithm::Key5),
            other => Err(KeyboardError::config(
                "algorithm",
                format!("unknown algorithm {other:?}"),
            )),
        }
    }
}

/// Beta prior used only for the final toxicity estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for SelectionPrior {
    fn default() -> Self {
        SelectionPrior { a: 0.05, b: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub rows: usize,
    pub cols: usize,
    pub phi: f64,
    pub eps1: f64,
    pub eps2: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Apply the elimination and early-stopping rule. Without it the trial
    /// follows the keyboard assignment rule alone.
    #[serde(default = "default_overdose_control")]
    pub overdose_control: bool,
    pub max_n: u32,
    #[serde(default = "default_cohort_size")]
    pub cohort_size: u32,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub selection_prior: SelectionPrior,
}

fn default_cutoff() -> f64 {
    0.95
}

fn default_overdose_control() -> bool {
    true
}

fn default_cohort_size() -> u32 {
    1
}

fn default_algorithm() -> Algorithm {
    Algorithm::Key1
}

impl TrialConfig {
    /// Defaults used throughout: `c = 0.95`, cohorts of one, key1.
    pub fn new(rows: usize, cols: usize, phi: f64, eps1: f64, eps2: f64, max_n: u32) -> Self {
        TrialConfig {
            rows,
            cols,
            phi,
            eps1,
            eps2,
            cutoff: default_cutoff(),
            overdose_control: true,
            max_n,
            cohort_size: default_cohort_size(),
            algorithm: default_algorithm(),
            seed: 0,
            selection_prior: SelectionPrior::default(),
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    /// Every field-level problem, in declaration order.
    pub fn validation_errors(&self) -> Vec<KeyboardError> {
        let mut errs = Vec::new();
        if self.rows == 0 {
            errs.push(KeyboardError::config("rows", "must be at least 1"));
        }
        if self.cols == 0 {
            errs.push(KeyboardError::config("cols", "must be at least 1"));
        }
        if let Err(e) = KeyPartition::build(self.phi, self.eps1, self.eps2) {
            errs.push(e);
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            errs.push(KeyboardError::config(
                "cutoff",
                format!("{} outside (0, 1)", self.cutoff),
            ));
        }
        if self.cohort_size == 0 {
            errs.push(KeyboardError::config("cohort_size", "must be at least 1"));
        }
        if self.max_n < self.cohort_size.max(1) {
            errs.push(KeyboardError::config("max_n", "must be at least the cohort size"));
        }
        let prior = self.selection_prior;
        if !(prior.a > 0.0 && prior.b > 0.0) {
            errs.push(KeyboardError::config(
                "selection_prior",
                "shape parameters must be positive",
            ));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Active,
    StoppedSafety,
    CompletedMaxN,
    /// Closed by the investigator before reaching the maximum sample size.
    ClosedEarly,
}

impl TrialStatus {
    pub fn is_terminal(self) -> bool {
        self != TrialStatus::Active
    }
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrialStatus::Active => "active",
            TrialStatus::StoppedSafety => "stopped_safety",
            TrialStatus::CompletedMaxN => "completed_max_n",
            TrialStatus::ClosedEarly => "closed_early",
        };
        f.write_str(s)
    }
}

/// One treated cohort and what the design did with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub dose: DoseCoord,
    pub cohort_size: u32,
    pub dlts: u32,
    /// Cumulative tally at `dose` after this cohort.
    pub tally: DoseData,
    /// Keyboard decision from the tally; absent when the trial stopped.
    pub decision: Option<Decision>,
    /// Doses newly eliminated after this cohort.
    pub eliminated: Vec<DoseCoord>,
    pub next: Option<DoseCoord>,
    /// Uniform draws consumed choosing `next`.
    pub draws: Vec<f64>,
}

impl HistoryEntry {
    pub fn moved_up(&self) -> bool {
        matches!(self.next, Some(n) if n != self.dose && n.dominates(&self.dose))
    }

    /// A move to a higher dose while the cumulative observed rate at the
    /// current dose exceeds `phi`.
    pub fn is_incoherent_escalation(&self, phi: f64) -> bool {
        self.moved_up() && self.tally.rate().is_some_and(|r| r > phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub tallies: Grid<DoseData>,
    pub current: DoseCoord,
    pub eliminated: BTreeSet<DoseCoord>,
    pub status: TrialStatus,
    pub history: Vec<HistoryEntry>,
}

impl TrialState {
    pub fn new(rows: usize, cols: usize) -> Self {
        TrialState {
            tallies: Grid::filled(rows, cols, DoseData::default()),
            current: DoseCoord::LOWEST,
            eliminated: BTreeSet::new(),
            status: TrialStatus::Active,
            history: Vec::new(),
        }
    }

    pub fn patients(&self) -> u32 {
        self.tallies.values().iter().map(|d| d.n).sum()
    }

    pub fn is_eliminated(&self, c: DoseCoord) -> bool {
        self.eliminated.contains(&c)
    }
}

/// What [`Design::apply_cohort`] did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub decision: Option<Decision>,
    pub next: Option<DoseCoord>,
    pub eliminated: Vec<DoseCoord>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy)]
struct Rule {
    decision: Decision,
    target_prob: f64,
    eliminate: bool,
}

/// A validated configuration with its key partition and precomputed
/// per-dose rules.
#[derive(Debug, Clone)]
pub struct Design {
    config: TrialConfig,
    partition: KeyPartition,
    rules: Vec<Vec<Rule>>,
}

impl Design {
    pub fn new(config: TrialConfig) -> Result<Self> {
        config.validate()?;
        let partition = KeyPartition::build(config.phi, config.eps1, config.eps2)?;
        let cache_n = config.max_n.min(RULE_CACHE_N);
        let mut rules = Vec::with_capacity(cache_n as usize + 1);
        for n in 0..=cache_n {
            let row = (0..=n)
                .map(|y| Self::compute_rule(&partition, &config, DoseData { n, y }))
                .collect::<Result<Vec<_>>>()?;
            rules.push(row);
        }
        Ok(Design {
            config,
            partition,
            rules,
        })
    }

    fn compute_rule(partition: &KeyPartition, config: &TrialConfig, data: DoseData) -> Result<Rule> {
        Ok(Rule {
            decision: partition.decide(data)?,
            target_prob: partition.target_prob(data)?,
            eliminate: should_eliminate(data, config.phi, config.cutoff)?,
        })
    }

    fn rule(&self, data: DoseData) -> Rule {
        match self.rules.get(data.n as usize) {
            Some(row) => row[data.y as usize],
            None => Self::compute_rule(&self.partition, &self.config, data).expect("validated design parameters"),
        }
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn partition(&self) -> &KeyPartition {
        &self.partition
    }

    pub fn start(&self) -> TrialState {
        TrialState::new(self.config.rows, self.config.cols)
    }

    pub fn decide(&self, data: DoseData) -> Decision {
        self.rule(data).decision
    }

    /// `Pr(p in target key | data)`.
    pub fn target_prob(&self, data: DoseData) -> f64 {
        self.rule(data).target_prob
    }

    fn neighbours(&self, coord: DoseCoord, up: bool, diagonal: bool, state: &TrialState) -> Vec<DoseCoord> {
        let (j, k) = (coord.j as isize, coord.k as isize);
        let s: isize = if up { 1 } else { -1 };
        let mut out = vec![(j + s, k), (j, k + s)];
        if diagonal {
            out.push((j + s, k + s));
        }
        out.into_iter()
            .filter(|&(a, b)| a >= 1 && b >= 1)
            .map(|(a, b)| DoseCoord::new(a as usize, b as usize))
            .filter(|&c| state.tallies.contains(c) && !state.is_eliminated(c))
            .collect()
    }

    /// Escalation candidates of the configured algorithm, in bounds and not
    /// eliminated.
    pub fn admissible_escalation(&self, coord: DoseCoord, state: &TrialState) -> Vec<DoseCoord> {
        self.neighbours(coord, true, self.config.algorithm.diagonal_escalation(), state)
    }

    pub fn admissible_deescalation(&self, coord: DoseCoord, state: &TrialState) -> Vec<DoseCoord> {
        self.neighbours(coord, false, self.config.algorithm.diagonal_deescalation(), state)
    }

    /// Chooses among `candidates` by target-key probability: the best one for
    /// fixed algorithms (uniform among ties), proportional for randomized ones.
    fn choose(&self, candidates: &[DoseCoord], state: &TrialState, entropy: &mut dyn Entropy) -> DoseCoord {
        let probs: Vec<f64> = candidates
            .iter()
            .map(|&c| self.target_prob(*state.tallies.get(c)))
            .collect();
        if self.config.algorithm.randomized() {
            return candidates[pick_weighted(entropy, &probs)];
        }
        let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<DoseCoord> = candidates
            .iter()
            .zip(&probs)
            .filter(|(_, &p)| is_tied(p, best))
            .map(|(&c, _)| c)
            .collect();
        tied[pick_uniform(entropy, tied.len())]
    }

    /// Next dose given the keyboard decision at the current dose.
    pub fn next_dose(&self, state: &TrialState, decision: Decision, entropy: &mut dyn Entropy) -> DoseCoord {
        let current = state.current;
        if state.is_eliminated(current) {
            let mut candidates = self.admissible_deescalation(current, state);
            if candidates.is_empty() {
                candidates = nearest_safe_below(current, state);
            }
            return self.choose(&candidates, state, entropy);
        }
        let candidates = match decision {
            Decision::Retain => return current,
            Decision::Escalate => self.admissible_escalation(current, state),
            Decision::Deescalate => self.admissible_deescalation(current, state),
        };
        if candidates.is_empty() {
            current
        } else {
            self.choose(&candidates, state, entropy)
        }
    }

    /// Records a cohort's DLT count at the current dose and advances the trial.
    pub fn apply_cohort(&self, state: &mut TrialState, dlts: u32, entropy: &mut dyn Entropy) -> Result<CohortOutcome> {
        if state.status != TrialStatus::Active {
            return Err(KeyboardError::NotActive(state.status.to_string()));
        }
        let size = self.config.cohort_size;
        if dlts > size {
            return Err(KeyboardError::OutcomeRange {
                dlts,
                cohort_size: size,
            });
        }
        if state.patients() + size > self.config.max_n {
            return Err(KeyboardError::SampleSizeExceeded {
                cohort_size: size,
                max_n: self.config.max_n,
            });
        }

        let dose = state.current;
        state.tallies.get_mut(dose).add_cohort(size, dlts);
        let tally = *state.tallies.get(dose);

        let mut newly = Vec::new();
        if self.config.overdose_control && self.rule(tally).eliminate {
            for c in state.tallies.coords() {
                if c.dominates(&dose) && state.eliminated.insert(c) {
                    newly.push(c);
                }
            }
        }

        let mut entry = HistoryEntry {
            dose,
            cohort_size: size,
            dlts,
            tally,
            decision: None,
            eliminated: newly.clone(),
            next: None,
            draws: Vec::new(),
        };

        if state.is_eliminated(DoseCoord::LOWEST) {
            state.status = TrialStatus::StoppedSafety;
        } else {
            let decision = self.decide(tally);
            let mut rec = Recorder::new(entropy);
            let next = self.next_dose(state, decision, &mut rec);
            entry.decision = Some(decision);
            entry.next = Some(next);
            entry.draws = rec.log;
            state.current = next;
            if state.patients() + size > self.config.max_n {
                state.status = TrialStatus::CompletedMaxN;
            }
        }
        let outcome = CohortOutcome {
            decision: entry.decision,
            next: entry.next,
            eliminated: newly,
            status: state.status,
        };
        state.history.push(entry);
        Ok(outcome)
    }

    /// Rebuilds a state from a recorded history, checking every step.
    pub fn replay(&self, history: &[HistoryEntry]) -> Result<TrialState> {
        let mut state = self.start();
        for (index, recorded) in history.iter().enumerate() {
            if recorded.dose != state.current {
                return Err(KeyboardError::ReplayMismatch {
                    index,
                    reason: format!("recorded dose {} but trial is at {}", recorded.dose, state.current),
                });
            }
            let mut draws = ReplayDraws::new(&recorded.draws);
            self.apply_cohort(&mut state, recorded.dlts, &mut draws)
                .map_err(|e| KeyboardError::ReplayMismatch {
                    index,
                    reason: e.to_string(),
                })?;
            let produced = state.history.last().expect("entry just pushed");
            if produced != recorded {
                return Err(KeyboardError::ReplayMismatch {
                    index,
                    reason: "entry differs from the recorded one".into(),
                });
            }
        }
        Ok(state)
    }

    /// Closes an active trial at its current sample size.
    pub fn close_early(&self, state: &mut TrialState) -> Result<()> {
        if state.status != TrialStatus::Active {
            return Err(KeyboardError::NotActive(state.status.to_string()));
        }
        state.status = TrialStatus::ClosedEarly;
        Ok(())
    }

    /// Isotonic toxicity estimates over tried, non-eliminated doses.
    pub fn isotonic_estimates(&self, state: &TrialState) -> Result<Grid<Option<f64>>> {
        let prior = self.config.selection_prior;
        let mask = Grid::from_fn(state.tallies.rows(), state.tallies.cols(), |c| {
            state.tallies.get(c).n > 0 && !state.is_eliminated(c)
        });
        if !mask.values().iter().any(|&m| m) {
            return Err(KeyboardError::EmptyCandidates);
        }
        let values = state
            .tallies
            .map(|d| (f64::from(d.y) + prior.a) / (f64::from(d.n) + prior.a + prior.b));
        let weights = state.tallies.map(|d| f64::from(d.n) + prior.a + prior.b);
        matrix_isotonic(&WeightedMatrix { values, weights, mask })
    }

    /// Final MTD selection.
    pub fn select_mtd(&self, state: &TrialState, entropy: &mut dyn Entropy) -> Result<MtdSelection> {
        match state.status {
            TrialStatus::Active => return Err(KeyboardError::NotFinished(state.status.to_string())),
            TrialStatus::StoppedSafety => {
                return Ok(MtdSelection {
                    selected: None,
                    isotonic_estimates: None,
                    reason: Some("safety_stop".into()),
                    draws: Vec::new(),
                })
            }
            TrialStatus::CompletedMaxN | TrialStatus::ClosedEarly => {}
        }
        let estimates = self.isotonic_estimates(state)?;
        let phi = self.config.phi;
        let best = estimates
            .values()
            .iter()
            .flatten()
            .map(|e| (e - phi).abs())
            .fold(f64::INFINITY, f64::min);
        let tied: Vec<DoseCoord> = estimates
            .iter()
            .filter_map(|(c, e)| e.filter(|e| (e - phi).abs() <= best + SELECTION_TIE).map(|_| c))
            .collect();
        let mut rec = Recorder::new(entropy);
        let selected = tied[pick_uniform(&mut rec, tied.len())];
        Ok(MtdSelection {
            selected: Some(selected),
            isotonic_estimates: Some(estimates),
            reason: None,
            draws: rec.log,
        })
    }
}

/// Non-eliminated doses below `current` at the largest combined level.
fn nearest_safe_below(current: DoseCoord, state: &TrialState) -> Vec<DoseCoord> {
    let below: Vec<DoseCoord> = state
        .tallies
        .coords()
        .filter(|c| current.dominates(c) && *c != current && !state.is_eliminated(*c))
        .collect();
    let top = below.iter().map(|c| c.j + c.k).max().unwrap_or(2);
    let nearest: Vec<DoseCoord> = below.into_iter().filter(|c| c.j + c.k == top).collect();
    if nearest.is_empty() {
        vec![DoseCoord::LOWEST]
    } else {
        nearest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtdSelection {
    pub selected: Option<DoseCoord>,
    pub isotonic_estimates: Option<Grid<Option<f64>>>,
    pub reason: Option<String>,
    pub draws: Vec<f64>,
}

/// Versioned persistence format of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDocument {
    pub version: u32,
    pub config: TrialConfig,
    pub state: TrialState,
}

impl TrialDocument {
    pub fn new(config: TrialConfig, state: TrialState) -> Self {
        TrialDocument {
            version: DOCUMENT_VERSION,
            config,
            state,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a document and verifies that its history reproduces its state.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TrialDocument = serde_json::from_str(text)?;
        if doc.version != DOCUMENT_VERSION {
            return Err(KeyboardError::UnsupportedVersion(doc.version));
        }
        let design = Design::new(doc.config.clone())?;
        let mut replayed = design.replay(&doc.state.history)?;
        if doc.state.status == TrialStatus::ClosedEarly && replayed.status == TrialStatus::Active {
            replayed.status = TrialStatus::ClosedEarly;
        }
        if replayed != doc.state {
            return Err(KeyboardError::ReplayMismatch {
                index: doc.state.history.len(),
                reason: "stored state differs from replayed history".into(),
            });
        }
        Ok(doc)
    }
}
