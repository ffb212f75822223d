use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Prompt;

/// Number of static rows (two positional rows and the ones row) at the
/// bottom of every token.
pub const STATIC_ROWS: usize = 3;

/// `(cos(jπ/2ℓ), sin(jπ/2ℓ))` for the 1-based position `j ∈ 1..=ℓ`.
pub fn positional_encoding(j: usize, len: usize) -> Result<(f64, f64)> {
    if j == 0 || j > len {
        return Err(Error::Parameter(format!("position {j} outside 1..={len}")));
    }
    Ok(encoding_unchecked(j, len))
}

#[inline]
pub(crate) fn position_angle(j: usize, len: usize) -> f64 {
    j as f64 * FRAC_PI_2 / len as f64
}

/// Never inlined: LLVM may fuse `cos` and `sin` into `sincos` at some call
/// sites and not others, and the two disagree in the last bit. Weights built
/// against one rounding would then miss cancellations against the other.
#[inline(never)]
pub(crate) fn encoding_unchecked(j: usize, len: usize) -> (f64, f64) {
    let a = position_angle(j, len);
    (a.cos(), a.sin())
}

/// `d_embed × ℓ` token matrix, stored column-major so that tokenwise maps
/// see contiguous columns. Columns are 0-based: column `c` is position
/// `c + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Zero data rows with the canonical static rows for `ℓ = cols`.
    pub fn with_static_rows(rows: usize, cols: usize) -> Result<Self> {
        if rows <= STATIC_ROWS || cols == 0 {
            return Err(Error::Parameter(format!(
                "token matrix needs more than {STATIC_ROWS} rows and ≥ 1 column, got {rows}x{cols}"
            )));
        }
        let mut h = Self::zeros(rows, cols);
        for c in 0..cols {
            let (cs, sn) = encoding_unchecked(c + 1, cols);
            h.set(rows - 3, c, cs);
            h.set(rows - 2, c, sn);
            h.set(rows - 1, c, 1.0);
        }
        Ok(h)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] += v;
    }

    #[inline]
    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &TokenMatrix) -> Result<TokenMatrix> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(TokenMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn check_same_shape(&self, other: &TokenMatrix) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension {
                what: "token matrix entries",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(())
    }

    /// Largest `|H_rc|` over the data rows (everything above the static rows).
    pub fn data_max_abs(&self) -> f64 {
        let data_rows = self.rows.saturating_sub(STATIC_ROWS);
        (0..self.cols)
            .flat_map(|c| self.column(c)[..data_rows].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when the static rows are exactly the canonical positional
    /// encodings and ones for this length.
    pub fn has_canonical_static_rows(&self) -> bool {
        if self.rows <= STATIC_ROWS {
            return false;
        }
        (0..self.cols).all(|c| {
            let col = self.column(c);
            let (cs, sn) = encoding_unchecked(c + 1, self.cols);
            col[self.rows - 3] == cs && col[self.rows - 2] == sn && col[self.rows - 1] == 1.0
        })
    }

    pub fn max_abs_diff(&self, other: &TokenMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Writes the matrix as CSV: a `c1..cℓ` header, then one line per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record((1..=self.cols).map(|c| format!("c{c}")))?;
        for r in 0..self.rows {
            out.write_record((0..self.cols).map(|c| format!("{:e}", self.get(r, c))))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Lays the prompt out as `(D+5) × (2n+1)` tokens: columns `1..n` carry
/// `(x_i; y_i; 0)`, column `n+1` carries `(x_{n+1}; 0; 0)` and the remaining
/// `n` columns are blank scratch space; every column ends with its positional
/// encoding and a one.
pub fn embed_prompt(prompt: &Prompt) -> TokenMatrix {
    let n = prompt.n();
    let dim = prompt.ambient_dim();
    let mut h = TokenMatrix::with_static_rows(dim + 5, 2 * n + 1)
        .expect("prompt dimensions are positive");
    for (c, x) in prompt.all_points().iter().enumerate() {
        h.column_mut(c)[..dim].copy_from_slice(x);
    }
    for (c, &y) in prompt.labels().iter().enumerate() {
        h.set(dim, c, y);
    }
    h
}
