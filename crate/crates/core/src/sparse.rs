//! Coordinate-format matrices for the constructed weights.
//!
//! The compiled network has hundreds of thousands of heads whose Q/K/V
//! matrices carry a handful of nonzeros each; dense `d × d` storage would not
//! fit in memory for `D = 100, n = 2048`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse `rows × cols` matrix with entries sorted row-major and no
/// duplicate coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    /// Builds from arbitrary triplets; duplicates are summed in input order,
    /// exact zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::Parameter(format!(
                    "entry ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Parameter(format!("non-finite weight at ({r}, {c})")));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != 0.0);
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "dense matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        let triplets = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, data[r * cols + c]))
            .collect();
        Self::from_triplets(rows, cols, triplets)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(usize, usize, f64)] {
        &mut self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(r, c), |&(er, ec, _)| (er, ec))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// Contiguous slice of the entries of row `r`.
    pub fn row(&self, r: usize) -> &[(usize, usize, f64)] {
        let lo = self.entries.partition_point(|e| e.0 < r);
        let hi = self.entries.partition_point(|e| e.0 <= r);
        &self.entries[lo..hi]
    }

    /// Iterates `(row, entries)` over nonempty rows in increasing order.
    pub fn nonempty_rows(&self) -> impl Iterator<Item = (usize, &[(usize, usize, f64)])> {
        let mut rest = &self.entries[..];
        std::iter::from_fn(move || {
            let r = rest.first()?.0;
            let k = rest.partition_point(|e| e.0 == r);
            let (head, tail) = rest.split_at(k);
            rest = tail;
            Some((r, head))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.2 *= s;
        }
        out
    }

    /// `y = A x` with each row accumulated left to right in column order.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (r, row) in self.nonempty_rows() {
            y[r] = row_dot(row, x);
        }
        y
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            d[r * self.cols + c] = v;
        }
        d
    }
}

/// Dot product of one sparse row with a dense vector, in column order.
///
/// Every score and FFN pre-activation goes through this routine so the fast
/// and reference forward paths round identically.
#[inline]
pub fn row_dot(row: &[(usize, usize, f64)], x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(_, c, w) in row {
        acc += w * x[c];
    }
    acc
}
