//! Random dose-toxicity matrices that respect the combination partial order.
//!
//! Construction:
//!
//! 1. pick the MTD cell `(j, k)` uniformly and set it to `phi`;
//! 2. the pivotal path runs down column 1 to row `j`, across row `j`, then
//!    down column `K` to `(J, K)`;
//! 3. the `j + k - 2` path cells before the MTD get sorted `Unif(0, phi)`
//!    draws, the `J + K - j - k` cells after it sorted `Unif(phi, p_max)`;
//! 4. cells above the path are filled from row `j - 1` up to row 1, left to
//!    right, each `Unif(left, below)`; cells below the path from row `j + 1`
//!    down to row `J`, right to left, each `Unif(above, right)`.
//!
//! Draws are consumed in exactly that order (cell, `p_max`, lower path, upper
//! path, upper block, lower block), so a [`ScriptedDraws`] source reproduces a
//! matrix draw for draw.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::error::{KeyboardError, Result};
use crate::grid::{DoseCoord, Grid};

/// Band membership slack for closed-interval checks on true probabilities.
pub const BAND_SLACK: f64 = 1e-12;

/// Lower clamp margin for `p_max` above `phi`.
pub const P_MAX_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxScenario {
    pub p: Grid<f64>,
    pub mtd_location: DoseCoord,
}

impl ToxScenario {
    /// Wraps a user-supplied matrix. The MTD location is taken as the cell
    /// closest to `phi`.
    pub fn from_matrix(p: Grid<f64>, phi: f64) -> Result<Self> {
        for (c, &v) in p.iter() {
            if !(v > 0.0 && v < 1.0) {
                return Err(KeyboardError::domain(format!("p{c} = {v} outside (0, 1)")));
            }
        }
        let mtd_location = p
            .iter()
            .min_by(|a, b| (a.1 - phi).abs().total_cmp(&(b.1 - phi).abs()))
            .map(|(c, _)| c)
            .expect("non-empty grid");
        Ok(ToxScenario { p, mtd_location })
    }

    pub fn rows(&self) -> usize {
        self.p.rows()
    }

    pub fn cols(&self) -> usize {
        self.p.cols()
    }

    /// Nondecreasing along every row and every column.
    pub fn is_monotone(&self) -> bool {
        is_monotone(&self.p)
    }
}

pub fn is_monotone(p: &Grid<f64>) -> bool {
    p.coords().all(|c| {
        let right = DoseCoord::new(c.j, c.k + 1);
        let down = DoseCoord::new(c.j + 1, c.k);
        (!p.contains(right) || p.get(c) <= p.get(right)) && (!p.contains(down) || p.get(c) <= p.get(down))
    })
}

/// Where a true toxicity probability falls relative to the acceptable band
/// `[phi - eps1, phi + eps2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToxBand {
    Under,
    Target,
    Over,
}

pub fn classify(p: f64, phi: f64, eps1: f64, eps2: f64) -> ToxBand {
    if p < phi - eps1 - BAND_SLACK {
        ToxBand::Under
    } else if p > phi + eps2 + BAND_SLACK {
        ToxBand::Over
    } else {
        ToxBand::Target
    }
}

/// Number of cells whose true probability lies in `[phi - eps1, phi + eps2]`.
pub fn count_mtds(scenario: &ToxScenario, phi: f64, eps1: f64, eps2: f64) -> usize {
    scenario
        .p
        .values()
        .iter()
        .filter(|&&v| classify(v, phi, eps1, eps2) == ToxBand::Target)
        .count()
}

/// Mean of the `p_max` law for a `rows x cols` matrix.
pub fn p_max_mean(rows: usize, cols: usize) -> f64 {
    1.0 - (-((rows * cols) as f64) / 8.0).exp()
}

/// The draws consumed by [`generate_scenario`].
pub trait ScenarioDraws {
    /// 1-based MTD cell, uniform over the grid.
    fn mtd_cell(&mut self, rows: usize, cols: usize) -> DoseCoord;
    /// Upper bound for the toxicity probabilities after the MTD on the path.
    fn p_max(&mut self, mean: f64) -> f64;
    /// Ascending sample of `len` draws from `Unif(lo, hi)`.
    fn ordered_uniforms(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64>;
    /// One draw from `Unif(lo, hi)`.
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMaxMode {
    /// `Beta(mu, 1 - mu)`, whose mean is `mu`.
    #[default]
    Beta,
    /// `p_max = mu` for every scenario.
    Mean,
}

/// Draws from a seeded generator.
pub struct RandomDraws<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    mode: PMaxMode,
}

impl<'a, R: Rng + ?Sized> RandomDraws<'a, R> {
    pub fn new(rng: &'a mut R, mode: PMaxMode) -> Self {
        RandomDraws { rng, mode }
    }

    fn open01(&mut self) -> f64 {
        Open01.sample(self.rng)
    }
}

impl<R: Rng + ?Sized> ScenarioDraws for RandomDraws<'_, R> {
    fn mtd_cell(&mut self, rows: usize, cols: usize) -> DoseCoord {
        let i = self.rng.random_range(0..rows * cols);
        DoseCoord::new(i / cols + 1, i % cols + 1)
    }

    fn p_max(&mut self, mean: f64) -> f64 {
        match self.mode {
            PMaxMode::Mean => mean,
            PMaxMode::Beta => Beta::new(mean, 1.0 - mean).expect("mean in (0, 1)").sample(self.rng),
        }
    }

    fn ordered_uniforms(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..len).map(|_| lo + (hi - lo) * self.open01()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.open01()
    }
}

/// Replays a fixed list of draws. Panics if the script runs short.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDraws {
    pub cell: DoseCoord,
    pub p_max: f64,
    pub lower_path: Vec<f64>,
    pub upper_path: Vec<f64>,
    pub fills: Vec<f64>,
    next_fill: usize,
}

impl ScriptedDraws {
    pub fn new(cell: DoseCoord, p_max: f64, lower_path: Vec<f64>, upper_path: Vec<f64>, fills: Vec<f64>) -> Self {
        ScriptedDraws {
            cell,
            p_max,
            lower_path,
            upper_path,
            fills,
            next_fill: 0,
        }
    }
}

impl ScenarioDraws for ScriptedDraws {
    fn mtd_cell(&mut self, _rows: usize, _cols: usize) -> DoseCoord {
        self.cell
    }

    fn p_max(&mut self, _mean: f64) -> f64 {
        self.p_max
    }

    fn ordered_uniforms(&mut self, len: usize, lo: f64, _hi: f64) -> Vec<f64> {
        // The lower path always starts at 0; the upper path at phi > 0.
        let src = if lo == 0.0 { &self.lower_path } else { &self.upper_path };
        assert_eq!(src.len(), len, "scripted path segment length");
        src.clone()
    }

    fn uniform(&mut self, _lo: f64, _hi: f64) -> f64 {
        let v = self.fills[self.next_fill];
        self.next_fill += 1;
        v
    }
}

/// One random partially ordered toxicity matrix with `p = phi` at a uniformly
/// chosen cell.
pub fn generate_scenario(rows: usize, cols: usize, phi: f64, draws: &mut impl ScenarioDraws) -> Result<ToxScenario> {
    if rows == 0 || cols == 0 {
        return Err(KeyboardError::config(
            "rows",
            "matrix needs at least one row and column",
        ));
    }
    if !(phi > 0.0 && phi < 1.0) {
        return Err(KeyboardError::config("phi", format!("{phi} outside (0, 1)")));
    }

    let mtd = draws.mtd_cell(rows, cols);
    let j = mtd.j;
    let p_max = draws.p_max(p_max_mean(rows, cols)).max(phi + P_MAX_MARGIN).min(1.0);

    let mut p = Grid::filled(rows, cols, f64::NAN);
    p.set(mtd, phi);

    let path = pivotal_path(rows, cols, mtd);
    let split = path.iter().position(|&c| c == mtd).expect("path visits the MTD");
    let below = draws.ordered_uniforms(split, 0.0, phi);
    let above = draws.ordered_uniforms(path.len() - split - 1, phi, p_max);
    for (c, v) in path[..split].iter().zip(below) {
        p.set(*c, v);
    }
    for (c, v) in path[split + 1..].iter().zip(above) {
        p.set(*c, v);
    }

    for jj in (1..j).rev() {
        for kk in 2..=cols {
            let left = *p.get(DoseCoord::new(jj, kk - 1));
            let below = *p.get(DoseCoord::new(jj + 1, kk));
            let v = draws.uniform(left, below);
            p.set(DoseCoord::new(jj, kk), v);
        }
    }
    for jj in j + 1..=rows {
        for kk in (1..cols).rev() {
            let above = *p.get(DoseCoord::new(jj - 1, kk));
            let right = *p.get(DoseCoord::new(jj, kk + 1));
            let v = draws.uniform(above, right);
            p.set(DoseCoord::new(jj, kk), v);
        }
    }
    debug_assert!(p.values().iter().all(|v| v.is_finite()));
    Ok(ToxScenario { p, mtd_location: mtd })
}

/// Cells of the pivotal path from `(1, 1)` to `(rows, cols)` through `mtd`.
pub fn pivotal_path(rows: usize, cols: usize, mtd: DoseCoord) -> Vec<DoseCoord> {
    let mut path = Vec::with_capacity(rows + cols - 1);
    path.extend((1..=mtd.j).map(|j| DoseCoord::new(j, 1)));
    path.extend((2..=cols).map(|k| DoseCoord::new(mtd.j, k)));
    path.extend((mtd.j + 1..=rows).map(|j| DoseCoord::new(j, cols)));
    path
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rows: usize,
    pub cols: usize,
    pub phi: f64,
    pub eps1: f64,
    pub eps2: f64,
    #[serde(default)]
    pub target_mtd_count: Option<usize>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub p_max_mode: PMaxMode,
}

fn default_max_attempts() -> usize {
    100_000
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(KeyboardError::config("rows", "must be at least 1"));
        }
        if self.cols == 0 {
            return Err(KeyboardError::config("cols", "must be at least 1"));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(KeyboardError::config("phi", format!("{} outside (0, 1)", self.phi)));
        }
        if !(self.eps1 >= 0.0 && self.eps2 >= 0.0) {
            return Err(KeyboardError::config("eps1", "tolerances must be nonnegative"));
        }
        if self.target_mtd_count == Some(0) {
            return Err(KeyboardError::config("target_mtd_count", "must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(KeyboardError::config("max_attempts", "must be at least 1"));
        }
        Ok(())
    }
}

/// Rejection-samples scenarios until the MTD count matches the target (or
/// returns the first draw when no target is set).
pub fn generate_with_mtd_count<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<ToxScenario> {
    config.validate()?;
    let mut draws = RandomDraws::new(rng, config.p_max_mode);
    for _ in 0..config.max_attempts {
        let s = generate_scenario(config.rows, config.cols, config.phi, &mut draws)?;
        match config.target_mtd_count {
            None => return Ok(s),
            Some(t) if count_mtds(&s, config.phi, config.eps1, config.eps2) == t => return Ok(s),
            Some(_) => {}
        }
    }
    Err(KeyboardError::GeneratorExhausted {
        target: config.target_mtd_count.unwrap_or(0),
        attempts: config.max_attempts,
    })
}
