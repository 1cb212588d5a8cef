//! Flat parameter vectors.
//!
//! Every trainable model in this crate stores its weights in one flat
//! `Vec<f64>` ("theta"). A [`ParamLayout`] names the blocks inside that
//! vector — matrices and bias vectors — so that model code, optimizers,
//! checkpoints and gradient checks all agree on what lives where.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Index of a block within its layout.
pub type BlockId = usize;

/// Role marker for blocks that receive special treatment at weight
/// initialization time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockTag {
    Generic,
    /// Forget-gate bias of a memory cell; initialized to +1 so cells start
    /// out remembering.
    ForgetBias,
}

/// One named block of a flat parameter vector. `cols == 1` for vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub tag: BlockTag,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, non-overlapping description of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a `rows x cols` block and return its id. Blocks are laid out
    /// back to back in push order.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> BlockId {
        self.push_tagged(name, rows, cols, BlockTag::Generic)
    }

    pub fn push_vec(&mut self, name: impl Into<String>, len: usize) -> BlockId {
        self.push(name, len, 1)
    }

    pub fn push_tagged(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        tag: BlockTag,
    ) -> BlockId {
        let block = Block {
            name: name.into(),
            offset: self.total,
            rows,
            cols,
            tag,
        };
        self.total += block.len();
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    /// Total parameter count.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id]
    }

    pub fn find(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Borrow one block of `theta`.
    pub fn view<'a>(&self, theta: &'a [f64], id: BlockId) -> Result<&'a [f64]> {
        self.check_len(theta.len())?;
        Ok(&theta[self.blocks[id].range()])
    }

    /// Split `theta` into per-block slices, in block order.
    pub fn unpack<'a>(&self, theta: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        self.check_len(theta.len())?;
        Ok(self.blocks.iter().map(|b| &theta[b.range()]).collect())
    }

    /// Reassemble a flat vector from per-block slices. Inverse of
    /// [`unpack`](Self::unpack); round-trips bit-exactly.
    pub fn pack(&self, parts: &[&[f64]]) -> Result<Vec<f64>> {
        if parts.len() != self.blocks.len() {
            return Err(Error::Dim {
                op: "ParamLayout::pack",
                expected: format!("{} blocks", self.blocks.len()),
                got: format!("{}", parts.len()),
            });
        }
        let mut theta = vec![0.0; self.total];
        for (block, part) in self.blocks.iter().zip(parts) {
            if part.len() != block.len() {
                return Err(Error::Dim {
                    op: "ParamLayout::pack",
                    expected: format!("{} values for block `{}`", block.len(), block.name),
                    got: format!("{}", part.len()),
                });
            }
            theta[block.range()].copy_from_slice(part);
        }
        Ok(theta)
    }

    /// Copy one block out of `theta` as a matrix.
    pub fn mat(&self, theta: &[f64], id: BlockId) -> Result<super::Mat> {
        let b = &self.blocks[id];
        super::Mat::from_vec(b.rows, b.cols, self.view(theta, id)?.to_vec())
    }

    /// FNV-1a hash over block names, offsets and shapes. Two models whose
    /// parameter vectors are interchangeable hash identically; checkpoints
    /// store this to detect config mismatches before any compute happens.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for b in &self.blocks {
            eat(b.name.as_bytes());
            eat(&(b.offset as u64).to_le_bytes());
            eat(&(b.rows as u64).to_le_bytes());
            eat(&(b.cols as u64).to_le_bytes());
        }
        eat(&(self.total as u64).to_le_bytes());
        h
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.total {
            return Err(Error::Dim {
                op: "ParamLayout",
                expected: format!("theta of length {}", self.total),
                got: format!("{got}"),
            });
        }
        Ok(())
    }
}

/// Draw a fresh parameter vector: every entry uniform in
/// `[-scale, scale]`, then forget-gate biases shifted by +1.
pub fn init_theta(layout: &ParamLayout, scale: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..layout.total())
        .map(|_| rng.gen_range(-scale..=scale))
        .collect();
    for block in layout.blocks() {
        if block.tag == BlockTag::ForgetBias {
            for v in &mut theta[block.range()] {
                *v += 1.0;
            }
        }
    }
    theta
}
