//! In-memory computing primitives built from subarray micro-ops.

mod arith;
pub mod conv;
mod tensor;
pub mod workspace;

pub use arith::{
    add_schedule, bitserial_add, bitserial_compare, bitserial_mul, compare_schedule, mul_schedule,
    select_extreme, select_schedule, shift_by_row_placement, Extreme, Overflow,
};
pub use conv::{bitwise_convolution, ConvGeometry, ConvPlan};
pub use tensor::{BitPlaneTensor, FixedPointTensor, Signedness};
pub use workspace::{GroupAllocator, Region, Value, Workspace};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::subarray::{BitRow, SubarrayGeometry};

/// Number of bits needed to hold `v` (zero needs none).
pub fn bit_length(v: u128) -> u32 {
    128 - v.leading_zeros()
}

/// A value stored element-by-element down a column: `rows[b]` holds bit
/// `b`, and the whole operand is weighted by `2^shift`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerticalOperand {
    pub rows: Vec<usize>,
    pub shift: usize,
}

impl VerticalOperand {
    pub fn new(rows: Vec<usize>) -> Self {
        Self { rows, shift: 0 }
    }

    pub fn shifted(rows: Vec<usize>, shift: usize) -> Self {
        Self { rows, shift }
    }

    pub fn contiguous(start: usize, width: usize) -> Self {
        Self::new((start..start + width).collect())
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    /// Row holding the bit of absolute significance `s`, if any.
    pub fn bit_at(&self, s: usize) -> Option<usize> {
        s.checked_sub(self.shift).and_then(|i| self.rows.get(i).copied())
    }

    /// Exclusive upper bound of the significances this operand covers.
    pub fn top(&self) -> usize {
        self.shift + self.rows.len()
    }
}

/// Placement of the rows a primitive works on inside one subarray.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnVectorLayout {
    /// Columns taking part in the computation.
    pub mask: BitRow,
    pub operands: Vec<VerticalOperand>,
    /// Reserved rows receiving the result, LSB first.
    pub result: Vec<usize>,
    pub tag_row: Option<usize>,
    pub result_row: Option<usize>,
}

impl ColumnVectorLayout {
    pub fn new(mask: BitRow, operands: Vec<VerticalOperand>, result: Vec<usize>) -> Self {
        Self {
            mask,
            operands,
            result,
            tag_row: None,
            result_row: None,
        }
    }

    pub fn with_flags(mut self, tag_row: usize, result_row: usize) -> Self {
        self.tag_row = Some(tag_row);
        self.result_row = Some(result_row);
        self
    }

    fn operand_rows(&self) -> BTreeSet<usize> {
        self.operands.iter().flat_map(|o| o.rows.iter().copied()).collect()
    }

    /// Checks ranges and that operand, result, Tag and Result rows are
    /// pairwise disjoint.
    pub fn validate(&self, geometry: &SubarrayGeometry) -> Result<()> {
        if self.mask.len() != geometry.columns {
            return Err(Error::GeometryMismatch(format!(
                "layout mask has {} bits, subarray has {} columns",
                self.mask.len(),
                geometry.columns
            )));
        }
        let limit = geometry.bit_rows();
        let operands = self.operand_rows();
        let mut written = BTreeSet::new();
        let flags = self.tag_row.iter().chain(self.result_row.iter());
        for &r in operands.iter().chain(self.result.iter()).chain(flags.clone()) {
            if r >= limit {
                return Err(Error::RowOutOfRange { row: r, limit });
            }
        }
        for &r in self.result.iter().chain(flags) {
            if operands.contains(&r) || !written.insert(r) {
                return Err(Error::InvalidLayout(format!("row {r} is used for more than one role")));
            }
        }
        Ok(())
    }

    /// Device rows that must be erased before the written rows are programmed.
    pub(crate) fn groups_to_erase(&self, rows: &[usize], geometry: &SubarrayGeometry) -> Result<Vec<usize>> {
        let g = geometry.group_size;
        let groups: BTreeSet<usize> = rows.iter().map(|r| r / g).collect();
        for r in self.operand_rows() {
            if groups.contains(&(r / g)) {
                return Err(Error::InvalidLayout(format!(
                    "operand row {r} shares an erase group with rows the primitive writes"
                )));
            }
        }
        Ok(groups.into_iter().collect())
    }
}
