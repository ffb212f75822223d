use serde::{Deserialize, Serialize};

use super::attention::{head_accumulate, AttentionHead, Context};
use super::ffn::FfnStack;
use super::token::{embed_prompt, TokenMatrix};
use crate::error::{Error, Result};
use crate::manifold::Prompt;

/// `B(H) = FFN(MHA(H) + H) + MHA(H) + H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub heads: Vec<AttentionHead>,
    pub ffn: FfnStack,
}

impl Block {
    pub fn validate(&self, d: usize, len: usize) -> Result<()> {
        for head in &self.heads {
            head.validate(d, len)?;
        }
        if !self.ffn.residual {
            return Err(Error::Config("block FFN stacks must be residual".into()));
        }
        if self.ffn.in_dim() != d || self.ffn.out_dim() != d {
            return Err(Error::Config(format!(
                "block FFN maps {} → {}, expected {d} → {d}",
                self.ffn.in_dim(),
                self.ffn.out_dim()
            )));
        }
        Ok(())
    }

    /// Sum of all head outputs, accumulated in head order.
    pub fn attention(&self, h: &TokenMatrix) -> TokenMatrix {
        let ctx = Context::new(h);
        let mut out = TokenMatrix::zeros(h.rows(), h.cols());
        for head in &self.heads {
            head_accumulate(head, h, &ctx, &mut out, false);
        }
        out
    }

    /// `(MHA(H) + H, B(H))`.
    pub fn apply_traced(&self, h: &TokenMatrix) -> Result<(TokenMatrix, TokenMatrix)> {
        let x = self.attention(h).add(h)?;
        let y = self.ffn.apply(&x)?;
        Ok((x, y))
    }
}

pub fn block_apply(block: &Block, h: &TokenMatrix) -> Result<TokenMatrix> {
    block.validate(h.rows(), h.cols())?;
    Ok(block.apply_traced(h)?.1)
}

/// Size and weight-magnitude summary of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `L_T`
    pub num_blocks: usize,
    /// `m_T`: largest head count in a block.
    pub max_heads: usize,
    pub d_embed: usize,
    /// `ℓ`
    pub len: usize,
    /// `L_FFN`
    pub ffn_depth: usize,
    /// `w_FFN`
    pub ffn_width: usize,
    /// Output clip bound `R`.
    pub output_bound: f64,
    /// `κ`: largest absolute weight or bias.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub blocks: Vec<Block>,
    /// `(row, column)` read after the last block, both 0-based.
    pub decoder: (usize, usize),
    pub arch: Architecture,
}

/// Intermediate matrices of a forward pass: `stages[0]` is the embedding,
/// `stages[k]` the output of block `k`; `attended[k-1]` is `MHA + H` inside
/// block `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub stages: Vec<TokenMatrix>,
    pub attended: Vec<TokenMatrix>,
    pub output: f64,
}

impl TransformerSpec {
    /// Assembles a spec, computing the architecture descriptor.
    pub fn new(
        blocks: Vec<Block>,
        decoder: (usize, usize),
        d_embed: usize,
        len: usize,
        output_bound: f64,
    ) -> Result<Self> {
        let arch = Architecture {
            num_blocks: blocks.len(),
            max_heads: blocks.iter().map(|b| b.heads.len()).max().unwrap_or(0),
            d_embed,
            len,
            ffn_depth: blocks.iter().map(|b| b.ffn.depth()).max().unwrap_or(0),
            ffn_width: blocks.iter().map(|b| b.ffn.width()).max().unwrap_or(0),
            output_bound,
            kappa: max_abs_weight(&blocks),
        };
        let spec = Self {
            blocks,
            decoder,
            arch,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, len) = (self.arch.d_embed, self.arch.len);
        for block in &self.blocks {
            block.validate(d, len)?;
        }
        if self.decoder.0 >= d || self.decoder.1 >= len {
            return Err(Error::Config(format!(
                "decoder ({}, {}) outside {d}x{len}",
                self.decoder.0, self.decoder.1
            )));
        }
        let kappa = max_abs_weight(&self.blocks);
        if kappa > self.arch.kappa {
            return Err(Error::Config(format!(
                "recorded κ = {} below the largest weight {kappa}",
                self.arch.kappa
            )));
        }
        Ok(())
    }

    pub fn num_heads(&self) -> usize {
        self.blocks.iter().map(|b| b.heads.len()).sum()
    }

    fn check_prompt(&self, prompt: &Prompt) -> Result<()> {
        if prompt.ambient_dim() + 5 != self.arch.d_embed {
            return Err(Error::Dimension {
                what: "token dimension D + 5",
                expected: self.arch.d_embed,
                found: prompt.ambient_dim() + 5,
            });
        }
        if 2 * prompt.n() + 1 != self.arch.len {
            return Err(Error::Dimension {
                what: "sequence length 2n + 1",
                expected: self.arch.len,
                found: 2 * prompt.n() + 1,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn max_abs_weight(blocks: &[Block]) -> f64 {
    blocks.iter().fold(0.0, |m, b| {
        b.heads
            .iter()
            .fold(m.max(b.ffn.max_abs_weight()), |m, h| m.max(h.max_abs_weight()))
    })
}

/// Embeds the prompt, applies every block and reads the decoder cell.
pub fn forward(spec: &TransformerSpec, prompt: &Prompt) -> Result<f64> {
    spec.check_prompt(prompt)?;
    let mut h = embed_prompt(prompt);
    for block in &spec.blocks {
        h = block.apply_traced(&h)?.1;
    }
    Ok(h.get(spec.decoder.0, spec.decoder.1))
}

pub fn forward_traced(spec: &TransformerSpec, prompt: &Prompt) -> Result<Trace> {
    spec.check_prompt(prompt)?;
    let mut stages = vec![embed_prompt(prompt)];
    let mut attended = Vec::with_capacity(spec.blocks.len());
    for block in &spec.blocks {
        let (x, y) = block.apply_traced(stages.last().expect("nonempty"))?;
        attended.push(x);
        stages.push(y);
    }
    let output = stages.last().expect("nonempty").get(spec.decoder.0, spec.decoder.1);
    Ok(Trace {
        stages,
        attended,
        output,
    })
}
