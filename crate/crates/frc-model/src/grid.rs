//! Discrete tenor grid.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::Result;

/// Grid of traded tenors, contiguous integers `1..=n` in units of 3 months.
///
/// The integer tenor value enters the string operator directly, so the grid
/// is fixed-step by construction; only its length varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenorGrid {
    n: usize,
}

impl TenorGrid {
    /// Builds a grid with `n >= 2` contiguous tenors.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(ModelError::Grid(format!("need at least 2 tenors, got {n}")));
        }
        Ok(Self { n })
    }

    /// Number of tenors.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Tenor values `1..=n` (units of 3 months).
    pub fn tenors(&self) -> impl Iterator<Item = usize> + '_ {
        1..=self.n
    }

    /// Tenor in months for column labels (`3, 6, ..., 3n`).
    pub fn tenor_months(&self, index: usize) -> usize {
        3 * (index + 1)
    }
}
