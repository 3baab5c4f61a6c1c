//! Weighted isotonic regression under the matrix partial order.
//!
//! The feasible set is the intersection of two cones: rows nondecreasing and
//! columns nondecreasing. Each cone is a product of chains, so its weighted
//! projection is a pool-adjacent-violators pass per row (or column). Dykstra's
//! alternating projections with correction terms converge to the projection
//! onto the intersection.
//!
//! Inactive cells take no part in the fit. Within a row or column the active
//! cells form a chain in index order, skipping inactive ones.

use crate::error::{KeyboardError, Result};
use crate::grid::{DoseCoord, Grid};

pub const CONVERGENCE_TOL: f64 = 1e-11;
pub const MAX_CYCLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMatrix {
    pub values: Grid<f64>,
    pub weights: Grid<f64>,
    pub mask: Grid<bool>,
}

impl WeightedMatrix {
    /// All cells active with unit weights.
    pub fn unit(values: Grid<f64>) -> Self {
        let weights = values.map(|_| 1.0);
        let mask = values.map(|_| true);
        WeightedMatrix { values, weights, mask }
    }

    fn validate(&self) -> Result<()> {
        let (r, c) = (self.values.rows(), self.values.cols());
        if (self.weights.rows(), self.weights.cols()) != (r, c) || (self.mask.rows(), self.mask.cols()) != (r, c) {
            return Err(KeyboardError::domain("values, weights and mask differ in shape"));
        }
        for (coord, &active) in self.mask.iter() {
            if !active {
                continue;
            }
            let w = *self.weights.get(coord);
            let v = *self.values.get(coord);
            if !(w > 0.0 && w.is_finite()) {
                return Err(KeyboardError::domain(format!("weight {w} at {coord} must be positive")));
            }
            if !v.is_finite() {
                return Err(KeyboardError::domain(format!("value at {coord} is not finite")));
            }
        }
        Ok(())
    }
}

/// Weighted pool-adjacent-violators on one chain. Returns fitted values.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Blocks of (weighted sum, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v * w, w, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (s1, w1, _) = blocks[n - 2];
            let (s2, w2, _) = blocks[n - 1];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            let (_, _, l2) = blocks.pop().unwrap();
            let last = blocks.last_mut().unwrap();
            last.0 += s2;
            last.1 += w2;
            last.2 += l2;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, w, len) in blocks {
        if len == 1 {
            // Untouched cells keep their exact input value.
            out.push(values[out.len()]);
        } else {
            out.extend(std::iter::repeat_n(s / w, len));
        }
    }
    out
}

/// Index chains (rows, then columns) over active cells.
fn chains(mask: &Grid<bool>) -> (Vec<Vec<DoseCoord>>, Vec<Vec<DoseCoord>>) {
    let rows = (1..=mask.rows())
        .map(|j| {
            (1..=mask.cols())
                .map(|k| DoseCoord::new(j, k))
                .filter(|&c| *mask.get(c))
                .collect::<Vec<_>>()
        })
        .filter(|c| c.len() > 1)
        .collect();
    let cols = (1..=mask.cols())
        .map(|k| {
            (1..=mask.rows())
                .map(|j| DoseCoord::new(j, k))
                .filter(|&c| *mask.get(c))
                .collect::<Vec<_>>()
        })
        .filter(|c| c.len() > 1)
        .collect();
    (rows, cols)
}

fn project_chains(x: &Grid<f64>, weights: &Grid<f64>, chains: &[Vec<DoseCoord>]) -> Grid<f64> {
    let mut out = x.clone();
    for chain in chains {
        let v: Vec<f64> = chain.iter().map(|&c| *x.get(c)).collect();
        let w: Vec<f64> = chain.iter().map(|&c| *weights.get(c)).collect();
        for (&c, fit) in chain.iter().zip(pava(&v, &w)) {
            out.set(c, fit);
        }
    }
    out
}

/// Weighted least-squares projection onto matrices nondecreasing along rows
/// and columns. Inactive cells come back as `None`.
pub fn matrix_isotonic(input: &WeightedMatrix) -> Result<Grid<Option<f64>>> {
    input.validate()?;
    let (row_chains, col_chains) = chains(&input.mask);
    let active: Vec<DoseCoord> = input.mask.iter().filter(|(_, &a)| a).map(|(c, _)| c).collect();

    let mut x = input.values.clone();
    let mut row_corr = input.values.map(|_| 0.0);
    let mut col_corr = input.values.map(|_| 0.0);

    let mut converged = row_chains.is_empty() || col_chains.is_empty();
    if converged {
        // A single family of chains is solved exactly in one pass.
        x = project_chains(&x, &input.weights, &row_chains);
        x = project_chains(&x, &input.weights, &col_chains);
    }

    let mut cycles = 0;
    while !converged {
        if cycles == MAX_CYCLES {
            return Err(KeyboardError::NonConvergence {
                what: "matrix isotonic regression",
                iterations: MAX_CYCLES,
            });
        }
        cycles += 1;

        let shifted = Grid::from_fn(x.rows(), x.cols(), |c| x.get(c) + row_corr.get(c));
        let y = project_chains(&shifted, &input.weights, &row_chains);
        for &c in &active {
            row_corr.set(c, shifted.get(c) - y.get(c));
        }

        let shifted = Grid::from_fn(y.rows(), y.cols(), |c| y.get(c) + col_corr.get(c));
        let z = project_chains(&shifted, &input.weights, &col_chains);
        for &c in &active {
            col_corr.set(c, shifted.get(c) - z.get(c));
        }

        let mut change = 0.0f64;
        let mut gap = 0.0f64;
        for &c in &active {
            change = change.max((z.get(c) - x.get(c)).abs());
            gap = gap.max((z.get(c) - y.get(c)).abs());
        }
        x = z;
        converged = change < CONVERGENCE_TOL && gap < CONVERGENCE_TOL;
    }

    Ok(Grid::from_fn(x.rows(), x.cols(), |c| {
        input.mask.get(c).then(|| *x.get(c))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let out = matrix_isotonic(&WeightedMatrix::unit(Grid::from_rows(rows).unwrap())).unwrap();
        out.map(|v| v.unwrap()).to_rows()
    }

    #[test]
    fn feasible_input_unchanged() {
        let out = fit(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert_eq!(out, vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
    }

    #[test]
    fn adjacent_violators_pool() {
        let out = fit(vec![vec![0.3, 0.1]]);
        assert!((out[0][0] - 0.2).abs() < 1e-12 && (out[0][1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn weighted_pava() {
        let out = pava(&[0.5, 0.1, 0.9], &[1.0, 3.0, 1.0]);
        assert!((out[0] - 0.2).abs() < 1e-12);
        assert!((out[1] - 0.2).abs() < 1e-12);
        assert_eq!(out[2], 0.9);
    }

    #[test]
    fn inactive_cells_are_skipped() {
        let values = Grid::from_rows(vec![vec![0.5, 9.0, 0.1]]).unwrap();
        let mut m = WeightedMatrix::unit(values);
        m.mask.set(DoseCoord::new(1, 2), false);
        let out = matrix_isotonic(&m).unwrap();
        assert_eq!(*out.get(DoseCoord::new(1, 2)), None);
        let a = out.get(DoseCoord::new(1, 1)).unwrap();
        let b = out.get(DoseCoord::new(1, 3)).unwrap();
        assert!((a - 0.3).abs() < 1e-12 && (b - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut m = WeightedMatrix::unit(Grid::from_rows(vec![vec![0.1, 0.2]]).unwrap());
        m.weights.set(DoseCoord::new(1, 1), 0.0);
        assert!(matrix_isotonic(&m).is_err());
        // inactive cells may carry any weight
        m.mask.set(DoseCoord::new(1, 1), false);
        assert!(matrix_isotonic(&m).is_ok());
    }
}
