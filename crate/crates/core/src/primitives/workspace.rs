//! Row management for one subarray and the composite column-parallel
//! operations built from the primitives (affine maps, ReLU, clamping).

use super::arith::{add_schedule, compare_schedule, mul_schedule, select_schedule, Extreme, Overflow};
use super::{bit_length, ColumnVectorLayout, VerticalOperand};
use crate::error::{Error, Result};
use crate::meter::Meter;
use crate::schedule::{execute, RowSource, Schedule};
use crate::subarray::{BitRow, Subarray};

/// A run of whole erase groups, `len` rows of which are in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub start: usize,
    pub len: usize,
    groups: usize,
}

impl Region {
    pub fn row(&self, i: usize) -> usize {
        debug_assert!(i < self.len);
        self.start + i
    }

    pub fn rows(&self) -> Vec<usize> {
        (self.start..self.start + self.len).collect()
    }

    pub fn operand(&self) -> VerticalOperand {
        VerticalOperand::new(self.rows())
    }
}

/// First-fit allocator over device rows (erase groups).
#[derive(Debug, Clone)]
pub struct GroupAllocator {
    group_size: usize,
    used: Vec<bool>,
}

impl GroupAllocator {
    pub fn new(device_rows: usize, group_size: usize) -> Self {
        Self {
            group_size,
            used: vec![false; device_rows],
        }
    }

    pub fn alloc(&mut self, rows: usize) -> Option<Region> {
        let groups = rows.div_ceil(self.group_size).max(1);
        let mut run = 0;
        for i in 0..self.used.len() {
            run = if self.used[i] { 0 } else { run + 1 };
            if run == groups {
                let first = i + 1 - groups;
                self.used[first..=i].iter_mut().for_each(|u| *u = true);
                return Some(Region {
                    start: first * self.group_size,
                    len: rows,
                    groups,
                });
            }
        }
        None
    }

    pub fn release(&mut self, region: Region) {
        let first = region.start / self.group_size;
        self.used[first..first + region.groups].iter_mut().for_each(|u| *u = false);
    }

    pub fn free_groups(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }
}

/// An integer per column held in memory, together with the regions that
/// back it and a bound on its range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Value {
    pub operand: VerticalOperand,
    pub regions: Vec<Region>,
    pub signed: bool,
    pub lo: i128,
    pub hi: i128,
}

impl Value {
    pub fn unsigned(operand: VerticalOperand, regions: Vec<Region>, hi: i128) -> Self {
        Self {
            operand,
            regions,
            signed: false,
            lo: 0,
            hi,
        }
    }

    pub fn width(&self) -> usize {
        self.operand.width()
    }

    fn pieces(&self, coef: i128) -> Vec<(Vec<usize>, i128, i128)> {
        let rows = &self.operand.rows;
        if !self.signed {
            return vec![(rows.clone(), coef, self.hi)];
        }
        let w = rows.len();
        let half = 1i128 << (w - 1);
        vec![
            (rows[..w - 1].to_vec(), coef, half - 1),
            (vec![rows[w - 1]], -coef * half, 1),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineOut {
    /// Two's complement result.
    Signed,
    /// max(y, 0).
    Relu,
    /// min(max(y, 0), 2^k - 1) in exactly k rows.
    Clamp(u32),
    /// y is known to lie in 0..2^k; keep k rows.
    Exact(u32),
}

pub struct Term<'a> {
    pub value: &'a Value,
    pub coef: i64,
}

/// One subarray together with the bookkeeping needed to run a sequence of
/// primitives on it.
#[derive(Debug, Clone)]
pub struct Workspace {
    sub: Subarray,
    alloc: GroupAllocator,
    mask: BitRow,
    consts: Option<Region>,
    layer: usize,
    kind: &'static str,
}

fn floor_div(a: i128, shift: u32) -> i128 {
    a.div_euclid(1i128 << shift)
}

impl Workspace {
    pub fn new(sub: Subarray) -> Self {
        let g = sub.geometry();
        let alloc = GroupAllocator::new(g.device_rows, g.group_size);
        let mask = crate::subarray::ones(g.columns);
        Self {
            sub,
            alloc,
            mask,
            consts: None,
            layer: 0,
            kind: "",
        }
    }

    /// Forgets every allocation and starts a new context; stored data stays
    /// until the rows are erased again.
    pub fn reset(&mut self, layer: usize, kind: &'static str, mask: BitRow) {
        let g = self.sub.geometry();
        self.alloc = GroupAllocator::new(g.device_rows, g.group_size);
        self.mask = mask;
        self.consts = None;
        self.layer = layer;
        self.kind = kind;
    }

    pub fn subarray(&self) -> &Subarray {
        &self.sub
    }

    pub fn subarray_mut(&mut self) -> &mut Subarray {
        &mut self.sub
    }

    pub fn into_subarray(self) -> Subarray {
        self.sub
    }

    pub fn mask(&self) -> &BitRow {
        &self.mask
    }

    pub fn free_groups(&self) -> usize {
        self.alloc.free_groups()
    }

    pub fn alloc(&mut self, rows: usize) -> Result<Region> {
        self.alloc.alloc(rows).ok_or_else(|| {
            Error::capacity(
                self.layer,
                self.kind,
                format!(
                    "subarray ran out of rows: {rows} more needed, {} free groups of {}",
                    self.alloc.free_groups(),
                    self.sub.geometry().group_size
                ),
            )
        })
    }

    pub fn release(&mut self, region: Region) {
        self.alloc.release(region);
    }

    pub fn release_value(&mut self, value: Value) {
        for r in value.regions {
            self.release(r);
        }
    }

    /// All-ones row and all-zero row, created on first use.
    pub fn const_rows(&mut self, meter: &mut Meter) -> Result<(usize, usize)> {
        if let Some(r) = self.consts {
            return Ok((r.row(0), r.row(1)));
        }
        let region = self.alloc(2)?;
        let g = self.sub.geometry().group_size;
        let mut s = Schedule::new("const_rows", meter.category(), self.mask.clone());
        s.erase(region.start / g);
        s.program(region.row(0), RowSource::Literal(self.mask.clone()));
        execute(&mut self.sub, &s, meter)?;
        self.consts = Some(region);
        Ok((region.row(0), region.row(1)))
    }

    /// Memory-mode write of `rows` into a fresh region (whole groups).
    pub fn write_rows(&mut self, rows: &[BitRow], meter: &mut Meter) -> Result<Region> {
        let region = self.alloc(rows.len())?;
        let g = self.sub.geometry().group_size;
        let cols = self.sub.columns();
        for gi in 0..region.groups {
            let data: Vec<BitRow> = (0..g)
                .map(|i| rows.get(gi * g + i).cloned().unwrap_or_else(|| crate::subarray::zeros(cols)))
                .collect();
            self.sub.write_row_group(region.start / g + gi, &data, meter)?;
        }
        Ok(region)
    }

    /// Writes one unsigned value per column (LSB first, `width` rows).
    pub fn write_values(&mut self, values: &[u64], width: usize, meter: &mut Meter) -> Result<Value> {
        let cols = self.sub.columns();
        if values.len() > cols {
            return Err(Error::GeometryMismatch(format!("{} values for {cols} columns", values.len())));
        }
        let rows: Vec<BitRow> = (0..width)
            .map(|b| (0..cols).map(|c| values.get(c).is_some_and(|v| (v >> b) & 1 == 1)).collect())
            .collect();
        let region = self.write_rows(&rows, meter)?;
        let hi = values.iter().copied().max().unwrap_or(0) as i128;
        Ok(Value::unsigned(region.operand(), vec![region], hi))
    }

    /// Reads an operand back row by row and reassembles the per-column values.
    pub fn read_values(&mut self, operand: &VerticalOperand, meter: &mut Meter) -> Result<Vec<u64>> {
        let mut out = vec![0u64; self.sub.columns()];
        for (b, &r) in operand.rows.iter().enumerate() {
            let row = self.sub.read_bit_row(r, meter)?;
            for c in row.iter_ones() {
                out[c] |= 1 << (b + operand.shift);
            }
        }
        Ok(out)
    }

    fn layout(&self, operands: Vec<VerticalOperand>, result: Vec<usize>) -> ColumnVectorLayout {
        ColumnVectorLayout::new(self.mask.clone(), operands, result)
    }

    fn run(&mut self, schedule: &Schedule, meter: &mut Meter, what: &str) -> Result<()> {
        execute(&mut self.sub, schedule, meter)?;
        if !self.sub.counters_are_zero() {
            self.sub.reset_counters(meter);
            return Err(Error::InsufficientResultRows(format!(
                "{what} left a carry beyond the last result row"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, operands: Vec<VerticalOperand>, width: usize, overflow: Overflow, meter: &mut Meter) -> Result<Region> {
        let region = self.alloc(width)?;
        let layout = self.layout(operands, region.rows());
        let s = add_schedule(&layout, overflow, self.sub.geometry(), meter.category())?;
        self.run(&s, meter, "addition")?;
        Ok(region)
    }

    pub fn mul(
        &mut self,
        operand: &VerticalOperand,
        multiplier: u64,
        width: usize,
        overflow: Overflow,
        meter: &mut Meter,
    ) -> Result<Region> {
        let region = self.alloc(width)?;
        let layout = self.layout(vec![operand.clone()], region.rows());
        let s = mul_schedule(&layout, multiplier, overflow, self.sub.geometry(), meter.category())?;
        self.run(&s, meter, "multiplication")?;
        Ok(region)
    }

    /// Bitwise complement of `rows` on the active columns.
    pub fn invert(&mut self, rows: &[usize], meter: &mut Meter) -> Result<Region> {
        let region = self.alloc(rows.len())?;
        let g = self.sub.geometry().group_size;
        let mut s = Schedule::new("invert", meter.category(), self.mask.clone());
        for gi in 0..region.groups {
            s.erase(region.start / g + gi);
        }
        for (i, &r) in rows.iter().enumerate() {
            s.read(r);
            s.program(region.row(i), RowSource::SenseInverted);
        }
        execute(&mut self.sub, &s, meter)?;
        Ok(region)
    }

    /// Tag and Result rows of comparing `a` with `b`; Result is row 1.
    pub fn compare(&mut self, a: &VerticalOperand, b: &VerticalOperand, meter: &mut Meter) -> Result<Region> {
        let flags = self.alloc(2)?;
        let layout = self
            .layout(vec![a.clone(), b.clone()], vec![])
            .with_flags(flags.row(0), flags.row(1));
        let s = compare_schedule(&layout, self.sub.geometry(), meter.category())?;
        self.run(&s, meter, "comparison")?;
        Ok(flags)
    }

    pub fn select(
        &mut self,
        a: &VerticalOperand,
        b: &VerticalOperand,
        flag_row: usize,
        width: usize,
        which: Extreme,
        meter: &mut Meter,
    ) -> Result<Region> {
        let region = self.alloc(width)?;
        let mut layout = self.layout(vec![a.clone(), b.clone()], region.rows());
        layout.result_row = Some(flag_row);
        let s = select_schedule(&layout, which, self.sub.geometry(), meter.category())?;
        self.run(&s, meter, "selection")?;
        Ok(region)
    }

    /// Elementwise max/min of two unsigned values of equal width.
    pub fn extreme(&mut self, a: &Value, b: &Value, which: Extreme, meter: &mut Meter) -> Result<Value> {
        let flags = self.compare(&a.operand, &b.operand, meter)?;
        let out = self.select(&a.operand, &b.operand, flags.row(1), a.width(), which, meter);
        self.release(flags);
        let region = out?;
        let (lo, hi) = match which {
            Extreme::Max => (a.lo.max(b.lo), a.hi.max(b.hi)),
            Extreme::Min => (a.lo.min(b.lo), a.hi.min(b.hi)),
        };
        Ok(Value {
            operand: region.operand(),
            regions: vec![region],
            signed: false,
            lo,
            hi,
        })
    }

    /// max(v, 0) for a two's complement value: the sign row gates every
    /// magnitude bit through the buffer.
    pub fn relu(&mut self, v: &Value, meter: &mut Meter) -> Result<Value> {
        if !v.signed {
            return Ok(v.clone());
        }
        let w = v.width();
        let hi = v.hi.max(0);
        if w == 1 || hi == 0 {
            let (_, zero) = self.const_rows(meter)?;
            return Ok(Value::unsigned(VerticalOperand::new(vec![zero]), vec![], 0));
        }
        let region = self.alloc(w - 1)?;
        let g = self.sub.geometry().group_size;
        let mut s = Schedule::new("relu", meter.category(), self.mask.clone());
        for gi in 0..region.groups {
            s.erase(region.start / g + gi);
        }
        s.read(v.operand.rows[w - 1]);
        s.load(0, RowSource::SenseInverted);
        for b in 0..w - 1 {
            s.and(v.operand.rows[b], 0);
            s.program(region.row(b), RowSource::Sense);
        }
        execute(&mut self.sub, &s, meter)?;
        Ok(Value::unsigned(region.operand(), vec![region], hi))
    }

    /// min(v, 2^k - 1) in exactly `k` rows; `v` must be unsigned.
    pub fn clamp_max(&mut self, v: Value, k: u32, meter: &mut Meter) -> Result<Value> {
        let k = k as usize;
        let cap = (1i128 << k) - 1;
        if v.hi <= cap {
            return self.pad(v, k, meter);
        }
        let (one, zero) = self.const_rows(meter)?;
        let limit: Vec<usize> = (0..v.width()).map(|b| if b < k { one } else { zero }).collect();
        let limit = VerticalOperand::new(limit);
        let flags = self.compare(&v.operand, &limit, meter)?;
        let out = self.select(&v.operand, &limit, flags.row(1), k, Extreme::Min, meter);
        self.release(flags);
        let region = out?;
        let lo = v.lo.clamp(0, cap);
        self.release_value(v);
        Ok(Value {
            operand: region.operand(),
            regions: vec![region],
            signed: false,
            lo,
            hi: cap,
        })
    }

    /// Views `v` through exactly `k` rows, padding with the zero row.
    fn pad(&mut self, mut v: Value, k: usize, meter: &mut Meter) -> Result<Value> {
        if v.width() < k {
            let (_, zero) = self.const_rows(meter)?;
            v.operand.rows.resize(k, zero);
        } else {
            v.operand.rows.truncate(k);
        }
        Ok(v)
    }

    /// `floor((sum(coef * value) + constant) / 2^shift)` with the requested
    /// output treatment. Negative coefficients are folded in as inverted
    /// rows plus a correction in the constant; all arithmetic is modulo
    /// `2^W` where `W` covers the exact range of the sum.
    pub fn affine(&mut self, terms: &[Term<'_>], constant: i128, shift: u32, out: AffineOut, meter: &mut Meter) -> Result<Value> {
        let mut pieces = Vec::new();
        let (mut lo, mut hi) = (constant, constant);
        for t in terms {
            for (rows, coef, max) in t.value.pieces(t.coef as i128) {
                let (a, b) = (coef * max, 0);
                lo += a.min(b);
                hi += a.max(b);
                if coef != 0 && !rows.is_empty() {
                    pieces.push((rows, coef));
                }
            }
        }
        let magnitude = hi.max(-lo - 1).max(0) as u128;
        let w = (bit_length(magnitude) as usize + 1).max(shift as usize + 2);
        if w > 120 {
            return Err(Error::capacity(self.layer, self.kind, "fixed-point intermediate wider than 120 bits"));
        }
        let modulus = 1i128 << w;

        let mut temps: Vec<Region> = Vec::new();
        let mut operands = Vec::new();
        let mut correction: i128 = 0;
        let result = (|| -> Result<Region> {
            for (rows, coef) in &pieces {
                let t = coef.unsigned_abs().trailing_zeros() as usize;
                if t >= w {
                    continue;
                }
                let odd = (coef.unsigned_abs() >> t) as u64;
                let room = w - t;
                let (prod_rows, prod_region) = if odd == 1 {
                    (rows[..rows.len().min(room)].to_vec(), None)
                } else {
                    let exact = rows.len() + bit_length(odd as u128) as usize;
                    let width = exact.min(room);
                    let overflow = if width < exact { Overflow::Wrap } else { Overflow::Error };
                    let r = self.mul(&VerticalOperand::new(rows.clone()), odd, width, overflow, meter)?;
                    temps.push(r);
                    (r.rows(), Some(r))
                };
                if *coef > 0 {
                    operands.push(VerticalOperand::shifted(prod_rows, t));
                } else {
                    let inv = self.invert(&prod_rows, meter)?;
                    temps.push(inv);
                    if let Some(p) = prod_region {
                        temps.retain(|r| *r != p);
                        self.release(p);
                    }
                    let wq = prod_rows.len();
                    correction += (1i128 << t) + modulus - (1i128 << (wq + t));
                    operands.push(VerticalOperand::shifted(inv.rows(), t));
                }
            }
            let folded = (constant + correction).rem_euclid(modulus);
            if folded != 0 {
                let (one, _) = self.const_rows(meter)?;
                for b in 0..w {
                    if (folded >> b) & 1 == 1 {
                        operands.push(VerticalOperand::shifted(vec![one], b));
                    }
                }
            }
            self.add(std::mem::take(&mut operands), w, Overflow::Wrap, meter)
        })();
        for r in temps {
            self.release(r);
        }
        let sum = result?;
        let y = Value {
            operand: VerticalOperand::new(sum.rows()[shift as usize..].to_vec()),
            regions: vec![sum],
            signed: true,
            lo: floor_div(lo, shift),
            hi: floor_div(hi, shift),
        };
        match out {
            AffineOut::Signed => Ok(y),
            AffineOut::Relu | AffineOut::Clamp(_) => {
                let r = self.relu(&y, meter);
                self.release_value(y);
                let r = r?;
                match out {
                    AffineOut::Clamp(k) => self.clamp_max(r, k, meter),
                    _ => Ok(r),
                }
            }
            AffineOut::Exact(k) => {
                if y.lo < 0 || y.hi >= 1i128 << k {
                    self.release_value(y);
                    return Err(Error::Invariant(format!("affine result range does not fit {k} unsigned bits")));
                }
                let v = Value { signed: false, ..y };
                self.pad(v, k as usize, meter)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subarray::SubarrayGeometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ws() -> (Workspace, Meter) {
        (Workspace::new(Subarray::new(SubarrayGeometry::default()).unwrap()), Meter::scratch(8))
    }

    fn signed_of(raw: u64, w: usize) -> i128 {
        let raw = raw as i128;
        if w > 0 && raw >= 1 << (w - 1) {
            raw - (1 << w)
        } else {
            raw
        }
    }

    #[test]
    fn allocator_is_first_fit_and_reuses() {
        let mut a = GroupAllocator::new(4, 8);
        let r1 = a.alloc(9).unwrap();
        assert_eq!((r1.start, r1.len), (0, 9));
        let r2 = a.alloc(3).unwrap();
        assert_eq!(r2.start, 16);
        assert!(a.alloc(9).is_none());
        a.release(r1);
        assert_eq!(a.alloc(16).unwrap().start, 0);
        assert_eq!(a.free_groups(), 1);
    }

    #[test]
    fn capacity_error_names_layer() {
        let (mut w, _) = ws();
        w.reset(3, "conv", crate::subarray::ones(128));
        assert!(w.alloc(256).is_ok());
        match w.alloc(1) {
            Err(Error::CapacityExceeded { layer: 3, kind, .. }) => assert_eq!(kind, "conv"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relu_and_clamp() {
        let (mut w, mut m) = ws();
        let vals: Vec<u64> = vec![0b0111, 0b1000, 0b1111, 0b0011];
        let mut v = w.write_values(&vals, 4, &mut m).unwrap();
        v.signed = true;
        v.lo = -8;
        v.hi = 7;
        let r = w.relu(&v, &mut m).unwrap();
        assert_eq!(&w.read_values(&r.operand, &mut m).unwrap()[..4], &[7, 0, 0, 3]);
        let c = w.clamp_max(r, 2, &mut m).unwrap();
        assert_eq!(c.width(), 2);
        assert_eq!(&w.read_values(&c.operand, &mut m).unwrap()[..4], &[3, 0, 0, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn affine_matches_integer_formula(
            seed in any::<u64>(),
            c1 in -300i64..300,
            c2 in -300i64..300,
            constant in -5000i64..5000,
            shift in 0u32..6,
            mode in 0usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut w, mut m) = ws();
            let xs: Vec<u64> = (0..128).map(|_| rng.gen_range(0..64)).collect();
            let ys: Vec<u64> = (0..128).map(|_| rng.gen_range(0..16)).collect();
            let mut x = w.write_values(&xs, 6, &mut m).unwrap();
            x.hi = 63;
            let mut y = w.write_values(&ys, 4, &mut m).unwrap();
            y.signed = true;
            y.lo = -8;
            y.hi = 7;
            let out = match mode {
                0 => AffineOut::Signed,
                1 => AffineOut::Relu,
                2 => AffineOut::Clamp(5),
                _ => AffineOut::Clamp(12),
            };
            let terms = [Term { value: &x, coef: c1 }, Term { value: &y, coef: c2 }];
            let v = w.affine(&terms, constant as i128, shift, out, &mut m).unwrap();
            let got = w.read_values(&v.operand, &mut m).unwrap();
            for c in 0..128 {
                let full = xs[c] as i128 * c1 as i128 + signed_of(ys[c], 4) * c2 as i128 + constant as i128;
                let e = full.div_euclid(1 << shift);
                let expect = match out {
                    AffineOut::Signed => e,
                    AffineOut::Relu => e.max(0),
                    AffineOut::Clamp(k) => e.clamp(0, (1 << k) - 1),
                    AffineOut::Exact(_) => unreachable!(),
                };
                let g = if v.signed { signed_of(got[c], v.width()) } else { got[c] as i128 };
                prop_assert_eq!(g, expect, "column {}", c);
                prop_assert!(expect >= v.lo && expect <= v.hi);
            }
        }
    }
}
