//! Sparse controlled transition kernels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continue = 0,
    Replace = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Continue, Action::Replace];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Row-major compressed sparse matrix. Within a row, entries are stored in
/// increasing column order so products accumulate in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(col, value)` lists. Duplicate columns are summed
    /// and exact zeros dropped.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= n_cols {
                    return Err(Error::Index(format!("row {r}: column {c} >= {n_cols}")));
                }
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c as u32);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut m = Self {
            n_rows: row_ptr.len() - 1,
            n_cols,
            row_ptr,
            cols,
            vals,
        };
        m.drop_zeros();
        Ok(m)
    }

    pub fn from_dense(n: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n * n {
            return Err(Error::Index(format!("dense matrix has {} entries, expected {}", dense.len(), n * n)));
        }
        let rows = dense
            .chunks(n)
            .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n as u32).collect(),
            vals: vec![1.0; n],
        }
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = Vec::with_capacity(self.row_ptr.len());
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        row_ptr.push(0);
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(cols.len());
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.vals[k] * x[self.cols[k] as usize];
        }
        acc
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n_rows) {
            *o = self.row_dot(r, x);
        }
    }

    /// Rows with identical stored entries share a representative. Returns
    /// the representative index of every row and the list of representatives.
    pub fn distinct_rows(&self) -> (Vec<usize>, Vec<usize>) {
        let mut seen: std::collections::HashMap<(&[u32], Vec<u64>), usize> = std::collections::HashMap::new();
        let mut reps = Vec::new();
        let mut of_row = Vec::with_capacity(self.n_rows);
        for r in 0..self.n_rows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let key = (&self.cols[span.clone()], self.vals[span].iter().map(|v| v.to_bits()).collect());
            let id = *seen.entry(key).or_insert_with(|| {
                reps.push(r);
                reps.len() - 1
            });
            of_row.push(id);
        }
        (of_row, reps)
    }

    /// Value lookup; linear in the row length.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn set_value_for_test(&mut self, r: usize, c: usize, v: f64) {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.cols[k] as usize == c {
                self.vals[k] = v;
                return;
            }
        }
        panic!("entry ({r}, {c}) is not stored");
    }
}

/// Per-action transition matrix over a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledKernel {
    pub action: Action,
    pub matrix: CsrMatrix,
}

impl ControlledKernel {
    pub fn size(&self) -> usize {
        self.matrix.n_rows()
    }
}

/// Continue and replace kernels over the same space.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub continue_: ControlledKernel,
    pub replace: ControlledKernel,
}

impl KernelPair {
    pub fn get(&self, action: Action) -> &ControlledKernel {
        match action {
            Action::Continue => &self.continue_,
            Action::Replace => &self.replace,
        }
    }

    pub fn size(&self) -> usize {
        self.continue_.size()
    }

    /// Sparse triplet CSV: `state_id,next_state_id,action,prob`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state_id", "next_state_id", "action", "prob"])?;
        for action in Action::ALL {
            let m = &self.get(action).matrix;
            for r in 0..m.n_rows() {
                for (c, p) in m.row(r) {
                    w.write_record([
                        r.to_string(),
                        c.to_string(),
                        action.index().to_string(),
                        p.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub n_states: usize,
    pub max_row_deviation: f64,
    /// Rows whose sum deviates from 1 by more than the row tolerance.
    pub bad_rows: Vec<usize>,
    pub negative_entries: Vec<(usize, usize, f64)>,
    /// States with no incoming mass from any other state.
    pub unreachable: Vec<usize>,
    pub valid: bool,
}

pub const ROW_TOLERANCE: f64 = 1e-12;

/// Report row-sum deviations, negative entries and unreachable states.
pub fn validate_kernel(kernel: &ControlledKernel) -> KernelReport {
    let m = &kernel.matrix;
    let n = m.n_rows();
    let mut max_dev = 0.0f64;
    let mut bad_rows = Vec::new();
    let mut negative = Vec::new();
    let mut reached = vec![false; m.n_cols()];
    for r in 0..n {
        let mut sum = 0.0;
        for (c, p) in m.row(r) {
            sum += p;
            if p < 0.0 {
                negative.push((r, c, p));
            }
            if c != r && p > 0.0 {
                reached[c] = true;
            }
        }
        let dev = (sum - 1.0).abs();
        if dev > ROW_TOLERANCE {
            bad_rows.push(r);
        }
        max_dev = max_dev.max(dev);
    }
    let unreachable = (0..m.n_cols()).filter(|&c| !reached[c]).collect();
    KernelReport {
        n_states: n,
        max_row_deviation: max_dev,
        valid: bad_rows.is_empty() && negative.is_empty(),
        bad_rows,
        negative_entries: negative,
        unreachable,
    }
}
