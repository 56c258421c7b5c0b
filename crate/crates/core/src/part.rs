//! Partition-size vectors describing the community block layout.

use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Community sizes `(L_1, ..., L_G)` defining the block layout of an `R x R`
/// uniform-block matrix, with `R = L_1 + ... + L_G` and every `L_g > 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PartitionVector {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl PartitionVector {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidPartition("no community sizes given".into()));
        }
        if let Some(&bad) = sizes.iter().find(|&&l| l < 2) {
            return Err(Error::InvalidPartition(format!(
                "every community size must exceed 1, got {bad}"
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0usize;
        for &l in &sizes {
            offsets.push(total);
            total += l;
        }
        Ok(Self { sizes, offsets, total })
    }

    /// Number of communities `G`.
    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `R`.
    pub fn total_dim(&self) -> usize {
        self.total
    }

    /// Number of dependence parameters `G(G+1)/2`.
    pub fn num_params(&self) -> usize {
        let g = self.num_blocks();
        g * (g + 1) / 2
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, g: usize) -> usize {
        self.sizes[g]
    }

    pub fn offset(&self, g: usize) -> usize {
        self.offsets[g]
    }

    /// Column (and row) range of block `g` in the dense expansion.
    pub fn block_range(&self, g: usize) -> Range<usize> {
        let start = self.offsets[g];
        start..start + self.sizes[g]
    }

    /// Community containing feature index `r` (0-based).
    pub fn block_of(&self, r: usize) -> usize {
        debug_assert!(r < self.total);
        match self.offsets.binary_search(&r) {
            Ok(g) => g,
            Err(g) => g - 1,
        }
    }

    /// Sizes as a float vector, the `l` in closed-form trace identities.
    pub fn sizes_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.sizes.len(), self.sizes.iter().map(|&l| l as f64))
    }

    pub fn same_as(&self, other: &Self) -> Result<()> {
        if self.sizes == other.sizes {
            Ok(())
        } else {
            Err(Error::PartitionMismatch { left: self.sizes.clone(), right: other.sizes.clone() })
        }
    }
}

impl TryFrom<Vec<usize>> for PartitionVector {
    type Error = Error;
    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<PartitionVector> for Vec<usize> {
    fn from(p: PartitionVector) -> Self {
        p.sizes
    }
}
