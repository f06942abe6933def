//! Fixed-point forms of quantization, batch normalization and average
//! pooling, plus their real-valued counterparts.
//!
//! Every stage is `y = floor((mult * x + offset) / 2^shift)` with integer
//! constants computed once per channel. The in-memory executor evaluates
//! that expression through bit-serial multiply/add and the integer oracle
//! evaluates it directly, so both agree bit for bit.

use serde::Serialize;

use crate::error::{Error, Result};

/// Fractional bits kept after batch normalization.
pub const BN_FRAC_BITS: u32 = 8;
/// Precision of the batch-norm scale before the result is truncated.
pub const BN_SCALE_BITS: u32 = 24;

const QUANT_MIN_SHIFT: u32 = 16;
const QUANT_MIN_PRECISION: f64 = (1u64 << 20) as f64;
const QUANT_MAX_SHIFT: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FixedAffine {
    pub mult: i64,
    pub offset: i128,
    pub shift: u32,
}

impl FixedAffine {
    pub fn apply(&self, x: i128) -> i128 {
        (self.mult as i128 * x + self.offset).div_euclid(1i128 << self.shift)
    }
}

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

fn to_i64(x: f64, what: &str) -> Result<i64> {
    let r = x.round();
    if !r.is_finite() || r.abs() >= 2f64.powi(62) {
        return Err(Error::InvalidModel(format!("{what} {x} is out of the fixed-point range")));
    }
    Ok(r as i64)
}

fn to_i128(x: f64, what: &str) -> Result<i128> {
    let r = x.round();
    if !r.is_finite() || r.abs() >= 2f64.powi(100) {
        return Err(Error::InvalidModel(format!("{what} {x} is out of the fixed-point range")));
    }
    Ok(r as i128)
}

/// Per-channel batch-norm parameters. `sigma` is the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eps: f64,
}

impl BatchNorm {
    /// Plain bias `b` expressed as a normalization that only shifts.
    pub fn bias(b: f64) -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
            gamma: 1.0,
            beta: b,
            eps: 0.0,
        }
    }

    pub fn scale(&self) -> Result<f64> {
        let var = self.sigma * self.sigma + self.eps;
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::InvalidModel(format!(
                "batch norm needs sigma^2 + eps > 0, got sigma {} eps {}",
                self.sigma, self.eps
            )));
        }
        Ok(self.gamma / var.sqrt())
    }

    /// `((x - mu) / sqrt(sigma^2 + eps)) * gamma + beta`.
    pub fn apply_real(&self, x: f64) -> Result<f64> {
        Ok((x - self.mu) * self.scale()? + self.beta)
    }

    /// The same map scaled by `2^BN_FRAC_BITS` and rounded half up, with
    /// an extra `bias` added to the input first.
    pub fn affine(&self, bias: f64) -> Result<FixedAffine> {
        let g = self.scale()?;
        let shift = BN_SCALE_BITS - BN_FRAC_BITS;
        Ok(FixedAffine {
            mult: to_i64(g * 2f64.powi(BN_SCALE_BITS as i32), "batch norm scale")?,
            offset: to_i128(
                (self.beta + g * (bias - self.mu)) * 2f64.powi(BN_SCALE_BITS as i32),
                "batch norm offset",
            )? + (1i128 << (shift - 1)),
            shift,
        })
    }
}

fn check_range(qmin: f64, qmax: f64, k: u32) -> Result<f64> {
    if !qmin.is_finite() || !qmax.is_finite() {
        return Err(Error::InvalidModel(format!("quantization range [{qmin}, {qmax}] is not finite")));
    }
    if qmax == qmin {
        return Err(Error::DegenerateRange(qmin));
    }
    if qmax < qmin {
        return Err(Error::InvalidModel(format!("qmax {qmax} is below qmin {qmin}")));
    }
    if !(1..=16).contains(&k) {
        return Err(Error::InvalidModel(format!("quantization width {k} not in 1..=16")));
    }
    Ok(((1u64 << k) - 1) as f64 / (qmax - qmin))
}

/// `round((q - qmin) * (2^k - 1) / (qmax - qmin))` clamped to `0..2^k`.
pub fn quantize(q: f64, qmin: f64, qmax: f64, k: u32) -> Result<i64> {
    let s = check_range(qmin, qmax, k)?;
    Ok(round_half_up((q - qmin) * s).clamp(0, (1i64 << k) - 1))
}

/// Fixed-point quantization of an input carrying `frac_bits` fractional
/// bits. The caller clamps the result to `k` bits.
pub fn quantize_affine(qmin: f64, qmax: f64, k: u32, frac_bits: u32) -> Result<FixedAffine> {
    let s = check_range(qmin, qmax, k)?;
    let mut q = QUANT_MIN_SHIFT;
    while s * 2f64.powi(q as i32) < QUANT_MIN_PRECISION && q < QUANT_MAX_SHIFT {
        q += 1;
    }
    let shift = q + frac_bits;
    Ok(FixedAffine {
        mult: to_i64(s * 2f64.powi(q as i32), "quantization scale")?,
        offset: to_i128(-qmin * s * 2f64.powi(shift as i32), "quantization offset")? + (1i128 << (shift - 1)),
        shift,
    })
}

/// Turns a window sum of `d` values (each `k` bits) into the window
/// average rounded half up. The reciprocal is exact for every reachable sum.
pub fn avg_pool_affine(d: usize, k: u32) -> FixedAffine {
    let d = d as u128;
    let need = (d * d) << (k + 2);
    let mut f = 1u32;
    while (1u128 << f) <= need {
        f += 1;
    }
    let m = (1u128 << f).div_ceil(2 * d);
    FixedAffine {
        mult: (2 * m) as i64,
        offset: (d * m) as i128,
        shift: f,
    }
}
