use serde::{Deserialize, Serialize};

use super::token::TokenMatrix;
use crate::error::{Error, Result};
use crate::sparse::{row_dot, SparseMatrix};

/// One affine layer `x ↦ W x + b`; `W` may be rectangular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnLayer {
    pub weight: SparseMatrix,
    pub bias: Vec<f64>,
}

impl FfnLayer {
    pub fn new(weight: SparseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension {
                what: "FFN bias",
                expected: weight.rows(),
                found: bias.len(),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Parameter("non-finite FFN bias".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zero(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: SparseMatrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], relu: bool) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (r, row) in self.weight.nonempty_rows() {
            y[r] = row_dot(row, x) + self.bias[r];
        }
        if relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        y
    }
}

/// Tokenwise ReLU network: ReLU between layers, none after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnStack {
    pub layers: Vec<FfnLayer>,
    pub residual: bool,
}

impl FfnStack {
    pub fn new(layers: Vec<FfnLayer>, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an FFN stack needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::Dimension {
                    what: "FFN layer input",
                    expected: w[0].weight.rows(),
                    found: w[1].weight.cols(),
                });
            }
        }
        Ok(Self { layers, residual })
    }

    /// Single all-zero layer: with the residual flag this is the identity.
    pub fn identity(d: usize) -> Self {
        Self {
            layers: vec![FfnLayer::zero(d, d)],
            residual: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows()).max().unwrap_or(0)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| {
            l.bias
                .iter()
                .fold(m.max(l.weight.max_abs()), |m, b| m.max(b.abs()))
        })
    }

    /// Network output for one token, without the residual.
    pub fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.apply(&cur, i < last);
        }
        cur
    }

    /// Network output for one token, plus the input if residual.
    pub fn apply_token(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_raw(x);
        if self.residual {
            for (a, b) in y.iter_mut().zip(x) {
                *a = b + *a;
            }
        }
        y
    }

    pub fn apply(&self, h: &TokenMatrix) -> Result<TokenMatrix> {
        if self.in_dim() != h.rows() || self.out_dim() != h.rows() {
            return Err(Error::Dimension {
                what: "FFN width vs token dimension",
                expected: h.rows(),
                found: if self.in_dim() != h.rows() {
                    self.in_dim()
                } else {
                    self.out_dim()
                },
            });
        }
        let mut out = TokenMatrix::zeros(h.rows(), h.cols());
        for c in 0..h.cols() {
            out.column_mut(c).copy_from_slice(&self.apply_token(h.column(c)));
        }
        Ok(out)
    }
}

pub fn ffn_apply(stack: &FfnStack, h: &TokenMatrix) -> Result<TokenMatrix> {
    stack.apply(h)
}
