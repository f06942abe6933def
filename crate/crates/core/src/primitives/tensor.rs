use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subarray::{bits_from_fn, BitRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signedness {
    #[default]
    Unsigned,
    TwosComplement,
}

/// Integer tensor with a declared bit width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointTensor {
    pub dims: Vec<usize>,
    pub bits: u32,
    pub signedness: Signedness,
    pub values: Vec<i64>,
}

impl FixedPointTensor {
    pub fn new(dims: Vec<usize>, bits: u32, signedness: Signedness, values: Vec<i64>) -> Result<Self> {
        let t = Self {
            dims,
            bits,
            signedness,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn unsigned(dims: Vec<usize>, bits: u32, values: Vec<i64>) -> Result<Self> {
        Self::new(dims, bits, Signedness::Unsigned, values)
    }

    pub fn range(&self) -> (i64, i64) {
        match self.signedness {
            Signedness::Unsigned => (0, (1i64 << self.bits) - 1),
            Signedness::TwosComplement => (-(1i64 << (self.bits - 1)), (1i64 << (self.bits - 1)) - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 32 {
            return Err(Error::InvalidTensor(format!("bit width {} not in 1..=32", self.bits)));
        }
        let n: usize = self.dims.iter().product();
        if n != self.values.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} needs {n} values, got {}",
                self.dims,
                self.values.len()
            )));
        }
        let (lo, hi) = self.range();
        if let Some((i, v)) = self.values.iter().enumerate().find(|(_, v)| **v < lo || **v > hi) {
            return Err(Error::InvalidTensor(format!(
                "value {v} at index {i} does not fit in {} {:?} bits",
                self.bits, self.signedness
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// (rows, cols) when the tensor is viewed as a matrix over its last axis.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.dims.split_last() {
            None => (1, 1),
            Some((&cols, rest)) => (rest.iter().product(), cols),
        }
    }
}

/// One bit-significance slice of a [`FixedPointTensor`] viewed as a matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneTensor {
    pub plane_index: u32,
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<BitRow>,
}

impl BitPlaneTensor {
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r][c]
    }

    /// Splits `t` into `t.bits` planes, LSB first. Signed values use their
    /// two's complement pattern.
    pub fn decompose(t: &FixedPointTensor) -> Vec<BitPlaneTensor> {
        let (rows, cols) = t.matrix_dims();
        (0..t.bits)
            .map(|n| BitPlaneTensor {
                plane_index: n,
                rows,
                cols,
                bits: (0..rows)
                    .map(|r| bits_from_fn(cols, |c| (t.values[r * cols + c] >> n) & 1 == 1))
                    .collect(),
            })
            .collect()
    }

    /// Inverse of [`BitPlaneTensor::decompose`].
    pub fn reconstruct(planes: &[BitPlaneTensor], dims: Vec<usize>, signedness: Signedness) -> Result<FixedPointTensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidTensor("no bit planes".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        if planes.iter().any(|p| p.rows != rows || p.cols != cols) {
            return Err(Error::DimMismatch("bit planes have different dimensions".into()));
        }
        let bits = planes.len() as u32;
        let mut values = vec![0i64; rows * cols];
        for p in planes {
            for r in 0..rows {
                for c in p.bits[r].iter_ones() {
                    values[r * cols + c] += 1i64 << p.plane_index;
                }
            }
        }
        if signedness == Signedness::TwosComplement {
            let half = 1i64 << (bits - 1);
            for v in &mut values {
                if *v >= half {
                    *v -= 2 * half;
                }
            }
        }
        FixedPointTensor::new(dims, bits, signedness, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn range_checks() {
        assert!(FixedPointTensor::unsigned(vec![2], 2, vec![0, 4]).is_err());
        assert!(FixedPointTensor::new(vec![2], 3, Signedness::TwosComplement, vec![-4, 3]).is_ok());
        assert!(FixedPointTensor::unsigned(vec![3], 2, vec![0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn decompose_reconstruct_round_trip(
            bits in 1u32..=8,
            signed in any::<bool>(),
            seed in prop::collection::vec(any::<u8>(), 12),
        ) {
            let signedness = if signed { Signedness::TwosComplement } else { Signedness::Unsigned };
            let mask = (1i64 << bits) - 1;
            let values: Vec<i64> = seed
                .iter()
                .map(|&v| {
                    let u = v as i64 & mask;
                    if signed && u >= 1 << (bits - 1) { u - (1 << bits) } else { u }
                })
                .collect();
            let t = FixedPointTensor::new(vec![3, 4], bits, signedness, values).unwrap();
            let planes = BitPlaneTensor::decompose(&t);
            prop_assert_eq!(planes.len() as u32, bits);
            let back = BitPlaneTensor::reconstruct(&planes, vec![3, 4], signedness).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
