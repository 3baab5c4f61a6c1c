//! Key partitions and the keyboard dose-transition rule.
//!
//! The target interval `(phi - eps1, phi + eps2)` is replicated to the left
//! and right in equal-width keys until no further full key fits in `(0, 1)`.
//! The next-cohort decision depends only on where the posterior mass is
//! largest relative to the target key, so it can be tabulated in advance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::beta::{
    posterior_cdf, posterior_exceed_prob, posterior_interval_prob, posterior_mean, posterior_sf, DoseData,
};
use crate::error::{KeyboardError, Result};

/// Key probabilities within this fraction of the largest are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Slack when testing whether another key fits inside (0, 1).
const FIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Key {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Escalate,
    Retain,
    Deescalate,
}

impl Decision {
    fn rank(self) -> u8 {
        match self {
            Decision::Escalate => 0,
            Decision::Retain => 1,
            Decision::Deescalate => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Escalate => "escalate",
            Decision::Retain => "retain",
            Decision::Deescalate => "deescalate",
        }
    }
}

impl PartialOrd for Decision {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.rank().cmp(&other.rank()))
    }
}

/// Target key plus every full-width key on either side of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPartition {
    pub phi: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub keys: Vec<Key>,
    pub target_index: usize,
}

impl KeyPartition {
    pub fn build(phi: f64, eps1: f64, eps2: f64) -> Result<Self> {
        check_target(phi, eps1, eps2)?;
        let width = eps1 + eps2;
        let target = Key {
            lo: phi - eps1,
            hi: phi + eps2,
        };
        let n_left = (target.lo / width + FIT_SLACK).floor() as usize;
        let n_right = ((1.0 - target.hi) / width + FIT_SLACK).floor() as usize;

        let mut keys = Vec::with_capacity(n_left + n_right + 1);
        for i in (1..=n_left).rev() {
            let i = i as f64;
            keys.push(Key {
                lo: (target.lo - i * width).max(0.0),
                hi: target.lo - (i - 1.0) * width,
            });
        }
        keys.push(target);
        for i in 1..=n_right {
            let i = i as f64;
            keys.push(Key {
                lo: target.hi + (i - 1.0) * width,
                hi: (target.hi + i * width).min(1.0),
            });
        }
        Ok(KeyPartition {
            phi,
            eps1,
            eps2,
            keys,
            target_index: n_left,
        })
    }

    pub fn width(&self) -> f64 {
        self.eps1 + self.eps2
    }

    pub fn target(&self) -> Key {
        self.keys[self.target_index]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Posterior probability of each key.
    ///
    /// Boundaries below the posterior mean use the CDF and those above it the
    /// upper tail, so keys far from the data keep their relative precision.
    pub fn key_probs(&self, data: DoseData) -> Result<Vec<f64>> {
        let mean = posterior_mean(data);
        let mut bounds = Vec::with_capacity(self.keys.len() + 1);
        bounds.push(self.keys[0].lo);
        bounds.extend(self.keys.iter().map(|k| k.hi));
        // (lower tail, upper tail) at each boundary; only one is evaluated.
        let tails = bounds
            .iter()
            .map(|&x| {
                if x < mean {
                    Ok((Some(posterior_cdf(x, data)?), None))
                } else {
                    Ok((None, Some(posterior_sf(x, data)?)))
                }
            })
            .collect::<Result<Vec<(Option<f64>, Option<f64>)>>>()?;
        Ok(tails
            .windows(2)
            .map(|w| {
                let p = match (w[0], w[1]) {
                    ((Some(lo), _), (Some(hi), _)) => hi - lo,
                    ((_, Some(lo)), (_, Some(hi))) => lo - hi,
                    ((Some(lo), _), (_, Some(hi))) => 1.0 - lo - hi,
                    _ => unreachable!("boundaries are increasing"),
                };
                p.clamp(0.0, 1.0)
            })
            .collect())
    }

    /// Posterior probability of the target key.
    pub fn target_prob(&self, data: DoseData) -> Result<f64> {
        let t = self.target();
        posterior_interval_prob(t.lo, t.hi, data)
    }

    /// Index of the key with the largest posterior probability.
    pub fn strongest_key(&self, data: DoseData) -> Result<usize> {
        let probs = self.key_probs(data)?;
        Ok(argmax_toward(&probs, self.target_index))
    }

    pub fn decide(&self, data: DoseData) -> Result<Decision> {
        let strongest = self.strongest_key(data)?;
        Ok(decision_for(strongest, self.target_index))
    }

    pub fn decision_table(&self, n_max: u32) -> Result<DecisionTable> {
        if n_max == 0 {
            return Err(KeyboardError::domain("decision table needs n_max >= 1"));
        }
        let mut escalate_if_at_most = Vec::with_capacity(n_max as usize);
        let mut deescalate_if_at_least = Vec::with_capacity(n_max as usize);
        for n in 1..=n_max {
            let mut esc = -1i64;
            let mut de = i64::from(n) + 1;
            for y in 0..=n {
                match self.decide(DoseData { n, y })? {
                    Decision::Escalate => esc = esc.max(i64::from(y)),
                    Decision::Deescalate => de = de.min(i64::from(y)),
                    Decision::Retain => {}
                }
            }
            escalate_if_at_most.push(esc);
            deescalate_if_at_least.push(de);
        }
        Ok(DecisionTable {
            phi: self.phi,
            eps1: self.eps1,
            eps2: self.eps2,
            n_max,
            escalate_if_at_most,
            deescalate_if_at_least,
        })
    }
}

fn check_target(phi: f64, eps1: f64, eps2: f64) -> Result<()> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(KeyboardError::config("phi", format!("{phi} outside (0, 1)")));
    }
    if !(eps1 > 0.0) {
        return Err(KeyboardError::config("eps1", format!("{eps1} must be positive")));
    }
    if !(eps2 > 0.0) {
        return Err(KeyboardError::config("eps2", format!("{eps2} must be positive")));
    }
    if !(phi - eps1 > 0.0) {
        return Err(KeyboardError::config(
            "eps1",
            format!("target key lower bound {} is not above 0", phi - eps1),
        ));
    }
    if !(phi + eps2 < 1.0) {
        return Err(KeyboardError::config(
            "eps2",
            format!("target key upper bound {} is not below 1", phi + eps2),
        ));
    }
    Ok(())
}

/// Argmax with near-ties resolved toward `target`, and between two
/// equidistant keys toward the higher one.
/// Whether `p` ties with the maximum `best`, relative to the size of `best`.
pub fn is_tied(p: f64, best: f64) -> bool {
    p >= best - TIE_TOLERANCE * best
}

fn argmax_toward(probs: &[f64], target: usize) -> usize {
    let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut choice = None::<usize>;
    for (i, &p) in probs.iter().enumerate() {
        if !is_tied(p, best) {
            continue;
        }
        choice = match choice {
            None => Some(i),
            Some(c) => {
                let (dc, di) = (c.abs_diff(target), i.abs_diff(target));
                if di < dc || (di == dc && i > c) {
                    Some(i)
                } else {
                    Some(c)
                }
            }
        };
    }
    choice.expect("at least one key")
}

fn decision_for(index: usize, target: usize) -> Decision {
    match index.cmp(&target) {
        std::cmp::Ordering::Less => Decision::Escalate,
        std::cmp::Ordering::Equal => Decision::Retain,
        std::cmp::Ordering::Greater => Decision::Deescalate,
    }
}

pub fn build_keys(phi: f64, eps1: f64, eps2: f64) -> Result<KeyPartition> {
    KeyPartition::build(phi, eps1, eps2)
}

/// Decision from the three keys adjacent to and including the target key.
/// Used to cross-check [`KeyPartition::decide`].
pub fn decide_three_key(data: DoseData, phi: f64, eps1: f64, eps2: f64) -> Result<Decision> {
    check_target(phi, eps1, eps2)?;
    let lower = phi - 2.0 * eps1 - eps2;
    let upper = phi + eps1 + 2.0 * eps2;
    if !(lower > 0.0 && upper < 1.0) {
        return Err(KeyboardError::domain(format!(
            "three-key rule needs ({lower}, {upper}) inside (0, 1)"
        )));
    }
    let probs = [
        posterior_interval_prob(lower, phi - eps1, data)?,
        posterior_interval_prob(phi - eps1, phi + eps2, data)?,
        posterior_interval_prob(phi + eps2, upper, data)?,
    ];
    Ok(decision_for(argmax_toward(&probs, 1), 1))
}

/// Overdose control: drop the dose once `Pr(p > phi | data) >= cutoff`.
pub fn should_eliminate(data: DoseData, phi: f64, cutoff: f64) -> Result<bool> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(KeyboardError::domain(format!("cutoff {cutoff} outside (0, 1)")));
    }
    Ok(posterior_exceed_prob(phi, data)? >= cutoff)
}

/// Pre-tabulated escalation and de-escalation boundaries for `n = 1..=n_max`.
///
/// A boundary of `-1` means escalation is never allowed at that `n`; `n + 1`
/// means de-escalation never happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub phi: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub n_max: u32,
    pub escalate_if_at_most: Vec<i64>,
    pub deescalate_if_at_least: Vec<i64>,
}

impl DecisionTable {
    pub fn build(phi: f64, eps1: f64, eps2: f64, n_max: u32) -> Result<Self> {
        KeyPartition::build(phi, eps1, eps2)?.decision_table(n_max)
    }

    /// Looks up the decision for `y` DLTs among `n` patients, `1 <= n <= n_max`.
    pub fn lookup(&self, n: u32, y: u32) -> Option<Decision> {
        if n == 0 || n > self.n_max || y > n {
            return None;
        }
        let i = (n - 1) as usize;
        let y = i64::from(y);
        Some(if y <= self.escalate_if_at_most[i] {
            Decision::Escalate
        } else if y >= self.deescalate_if_at_least[i] {
            Decision::Deescalate
        } else {
            Decision::Retain
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,escalate_le,deescalate_ge\n");
        for (i, (e, d)) in self
            .escalate_if_at_most
            .iter()
            .zip(&self.deescalate_if_at_least)
            .enumerate()
        {
            let _ = writeln!(out, "{},{},{}", i + 1, e, d);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let fmt_row = |label: &str, vals: &[i64], never: &dyn Fn(usize, i64) -> bool| {
            let cells: Vec<String> = vals
                .iter()
                .enumerate()
                .map(|(i, &v)| if never(i, v) { "NA".to_string() } else { v.to_string() })
                .collect();
            format!("| {} | {} |\n", label, cells.join(" | "))
        };
        let mut out = format!(
            "Target key ({:.4}, {:.4})\n\n| Patients treated | {} |\n|---|{}\n",
            self.phi - self.eps1,
            self.phi + self.eps2,
            (1..=self.n_max).map(|n| n.to_string()).collect::<Vec<_>>().join(" | "),
            "---|".repeat(self.n_max as usize),
        );
        out.push_str(&fmt_row("Escalate if DLTs <=", &self.escalate_if_at_most, &|_, v| {
            v < 0
        }));
        out.push_str(&fmt_row(
            "De-escalate if DLTs >=",
            &self.deescalate_if_at_least,
            &|i, v| v > i as i64 + 1,
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn nine_keys_for_phi_02() {
        let p = build_keys(0.2, 0.05, 0.05).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p.target_index, 1);
        assert!(approx(p.keys[0].lo, 0.05) && approx(p.keys[0].hi, 0.15));
        assert!(approx(p.target().lo, 0.15) && approx(p.target().hi, 0.25));
        assert!(approx(p.keys[8].lo, 0.85) && approx(p.keys[8].hi, 0.95));
    }

    #[test]
    fn narrow_keys_for_phi_02() {
        let p = build_keys(0.2, 0.03, 0.03).unwrap();
        // Enumerate the tiling independently: walk outward from the target.
        let (mut left, mut lo) = (0, 0.17);
        while lo - 0.06 > -1e-9 {
            lo -= 0.06;
            left += 1;
        }
        let (mut right, mut hi) = (0, 0.23);
        while hi + 0.06 < 1.0 + 1e-9 {
            hi += 0.06;
            right += 1;
        }
        assert_eq!(p.len(), left + right + 1);
        assert_eq!(p.target_index, left);
        assert!(approx(p.keys[0].lo, 0.05) && approx(p.keys[0].hi, 0.11));
        assert!(approx(p.target().lo, 0.17) && approx(p.target().hi, 0.23));
        let last = p.keys.last().unwrap();
        assert!(approx(last.lo, 0.89) && approx(last.hi, 0.95));
    }

    #[test]
    fn partition_invariants() {
        for &(phi, e1, e2) in &[(0.3, 0.05, 0.05), (0.25, 0.05, 0.05), (0.33, 0.02, 0.07)] {
            let p = build_keys(phi, e1, e2).unwrap();
            let w = e1 + e2;
            assert!(approx(p.target().lo, phi - e1) && approx(p.target().hi, phi + e2));
            for pair in p.keys.windows(2) {
                assert!(approx(pair[0].hi, pair[1].lo));
            }
            for k in &p.keys {
                assert!(approx(k.hi - k.lo, w));
            }
            assert!(p.keys[0].lo < w + 1e-9);
            assert!(1.0 - p.keys.last().unwrap().hi < w + 1e-9);
        }
        // Exact tiling: (0.25, 0.35) leaves no residual below 0.05.
        let p = build_keys(0.25, 0.05, 0.05).unwrap();
        assert_eq!(p.keys[0].lo, 0.0);
    }

    #[test]
    fn target_must_be_inside_unit_interval() {
        assert!(build_keys(0.05, 0.06, 0.05).is_err());
        assert!(build_keys(0.95, 0.05, 0.05).is_err());
        assert!(build_keys(0.3, 0.0, 0.05).is_err());
    }

    #[test]
    fn strongest_key_examples() {
        let p = build_keys(0.2, 0.05, 0.05).unwrap();
        let k = p.strongest_key(DoseData::new(5, 2).unwrap()).unwrap();
        assert!(approx(p.keys[k].lo, 0.35) && approx(p.keys[k].hi, 0.45));
        assert_eq!(p.strongest_key(DoseData::default()).unwrap(), p.target_index);
        assert_eq!(p.strongest_key(DoseData::new(20, 0).unwrap()).unwrap(), 0);
    }

    #[test]
    fn decide_examples() {
        let p3 = build_keys(0.3, 0.05, 0.05).unwrap();
        assert_eq!(p3.decide(DoseData::new(3, 0).unwrap()).unwrap(), Decision::Escalate);
        assert_eq!(p3.decide(DoseData::new(3, 1).unwrap()).unwrap(), Decision::Retain);
        let p2 = build_keys(0.2, 0.05, 0.05).unwrap();
        assert_eq!(p2.decide(DoseData::new(5, 2).unwrap()).unwrap(), Decision::Deescalate);
    }

    #[test]
    fn three_key_examples() {
        let d = |n, y| DoseData::new(n, y).unwrap();
        assert_eq!(decide_three_key(d(3, 0), 0.3, 0.05, 0.05).unwrap(), Decision::Escalate);
        assert_eq!(decide_three_key(d(0, 0), 0.3, 0.05, 0.05).unwrap(), Decision::Retain);
        assert_eq!(decide_three_key(d(0, 0), 0.2, 0.03, 0.03).unwrap(), Decision::Retain);
        assert_eq!(
            decide_three_key(d(16, 6), 0.3, 0.05, 0.05).unwrap(),
            Decision::Deescalate
        );
        // phi - 2 eps1 - eps2 <= 0
        assert!(decide_three_key(d(1, 0), 0.1, 0.04, 0.04).is_err());
    }

    #[test]
    fn elimination_examples() {
        let d = |n, y| DoseData::new(n, y).unwrap();
        assert!(should_eliminate(d(3, 3), 0.3, 0.95).unwrap());
        assert!(!should_eliminate(d(3, 2), 0.3, 0.95).unwrap());
        for phi in [0.1, 0.2, 0.3, 0.5] {
            assert!(!should_eliminate(d(0, 0), phi, 0.95).unwrap());
        }
        assert!(should_eliminate(d(0, 0), 0.3, 1.0).is_err());
    }

    #[test]
    fn table_lookup_and_csv() {
        let t = DecisionTable::build(0.3, 0.05, 0.05, 4).unwrap();
        assert_eq!(t.lookup(3, 0), Some(Decision::Escalate));
        assert_eq!(t.lookup(3, 1), Some(Decision::Retain));
        assert_eq!(t.lookup(3, 2), Some(Decision::Deescalate));
        assert_eq!(t.lookup(5, 0), None);
        let csv = t.to_csv();
        assert!(csv.starts_with("n,escalate_le,deescalate_ge\n1,0,1\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(t.to_markdown().contains("| Escalate if DLTs <= | 0 | 0 | 0 | 0 |"));
        assert!(DecisionTable::build(0.3, 0.05, 0.05, 0).is_err());
    }

    #[test]
    fn decision_order() {
        assert!(Decision::Escalate < Decision::Retain);
        assert!(Decision::Retain < Decision::Deescalate);
    }
}
