use std::fmt;

use serde::{Deserialize, Serialize};

/// A dose combination: level `j` of drug A and level `k` of drug B, both
/// counted from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DoseCoord {
    pub j: usize,
    pub k: usize,
}

impl DoseCoord {
    pub const LOWEST: DoseCoord = DoseCoord { j: 1, k: 1 };

    pub const fn new(j: usize, k: usize) -> Self {
        DoseCoord { j, k }
    }

    /// Partial order of combination doses: both agents at least as high.
    pub fn dominates(&self, other: &DoseCoord) -> bool {
        self.j >= other.j && self.k >= other.k
    }
}

impl Default for DoseCoord {
    fn default() -> Self {
        DoseCoord::LOWEST
    }
}

impl fmt::Display for DoseCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.j, self.k)
    }
}

/// Row-major `rows x cols` matrix addressed by [`DoseCoord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            cells: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    /// Builds a grid from row vectors; `None` if the rows are ragged or empty.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Option<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first()?.len();
        if n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return None;
        }
        Some(Grid {
            rows: n_rows,
            cols: n_cols,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(DoseCoord) -> T) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for j in 1..=rows {
            for k in 1..=cols {
                cells.push(f(DoseCoord::new(j, k)));
            }
        }
        Grid { rows, cols, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn contains(&self, c: DoseCoord) -> bool {
        (1..=self.rows).contains(&c.j) && (1..=self.cols).contains(&c.k)
    }

    fn offset(&self, c: DoseCoord) -> usize {
        assert!(self.contains(c), "{c} outside {}x{} grid", self.rows, self.cols);
        (c.j - 1) * self.cols + (c.k - 1)
    }

    pub fn get(&self, c: DoseCoord) -> &T {
        &self.cells[self.offset(c)]
    }

    pub fn get_mut(&mut self, c: DoseCoord) -> &mut T {
        let i = self.offset(c);
        &mut self.cells[i]
    }

    pub fn set(&mut self, c: DoseCoord, value: T) {
        *self.get_mut(c) = value;
    }

    /// Coordinates in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = DoseCoord> + '_ {
        (1..=self.rows).flat_map(move |j| (1..=self.cols).map(move |k| DoseCoord::new(j, k)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (DoseCoord, &T)> {
        self.coords().zip(self.cells.iter())
    }

    pub fn values(&self) -> &[T] {
        &self.cells
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(&mut f).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>>
    where
        T: Clone,
    {
        self.cells.chunks(self.cols).map(|r| r.to_vec()).collect()
    }
}
