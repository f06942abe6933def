//! Bit-serial addition, multiplication, comparison and selection.

use super::{bit_length, ColumnVectorLayout, VerticalOperand};
use crate::cost::Category;
use crate::error::{Error, Result};
use crate::meter::Meter;
use crate::schedule::{execute, RowSource, Schedule, ShiftDest};
use crate::subarray::{BitRow, Subarray, SubarrayGeometry};

/// What to do when the result rows cannot hold the full value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overflow {
    /// Fail with `InsufficientResultRows`.
    #[default]
    Error,
    /// Keep the low bits (arithmetic modulo `2^rows`).
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Max,
    Min,
}

const COMPARE_NOTE: &str =
    "per-bit staging uses sense/count/shift to form (A xor B) and not Tag; micro-op count differs from the textbook step sequence";

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        bit_length((n - 1) as u128) as usize
    }
}

fn erase_ops(schedule: &mut Schedule, groups: Vec<usize>) {
    for g in groups {
        schedule.erase(g);
    }
}

/// Column-parallel sum of every operand into `layout.result`.
///
/// Step `s` senses and counts each operand bit of significance `s`, then
/// writes the counters' LSBs to result row `s`. The halved counters carry
/// into the next step.
pub fn add_schedule(
    layout: &ColumnVectorLayout,
    overflow: Overflow,
    geometry: &SubarrayGeometry,
    category: Category,
) -> Result<Schedule> {
    layout.validate(geometry)?;
    let width = layout.result.len();
    if overflow == Overflow::Error {
        if let Some(op) = layout.operands.iter().find(|o| o.top() > width) {
            return Err(Error::InsufficientResultRows(format!(
                "operand spanning {} bits does not fit {width} result rows",
                op.top()
            )));
        }
        let uniform = layout.operands.first().map(VerticalOperand::width);
        if let Some(k) = uniform {
            if layout.operands.iter().all(|o| o.shift == 0 && o.width() == k) {
                let need = k + ceil_log2(layout.operands.len());
                if width < need {
                    return Err(Error::InsufficientResultRows(format!(
                        "{} operands of {k} bits need {need} result rows, got {width}",
                        layout.operands.len()
                    )));
                }
            }
        }
    }
    let mut s = Schedule::new("bitserial_add", category, layout.mask.clone());
    erase_ops(&mut s, layout.groups_to_erase(&layout.result, geometry)?);
    for (step, &dest) in layout.result.iter().enumerate() {
        for op in &layout.operands {
            if let Some(row) = op.bit_at(step) {
                s.read(row);
                s.count();
            }
        }
        s.shift_to(ShiftDest::Row(dest));
    }
    if overflow == Overflow::Wrap {
        s.reset();
    }
    Ok(s)
}

fn finish(sub: &mut Subarray, meter: &mut Meter, what: &str) -> Result<()> {
    if sub.counters_are_zero() {
        return Ok(());
    }
    sub.reset_counters(meter);
    Err(Error::InsufficientResultRows(format!("{what} left a carry beyond the last result row")))
}

pub fn bitserial_add(sub: &mut Subarray, layout: &ColumnVectorLayout, overflow: Overflow, meter: &mut Meter) -> Result<()> {
    let s = add_schedule(layout, overflow, sub.geometry(), meter.category())?;
    execute(sub, &s, meter)?;
    finish(sub, meter, "addition")
}

/// Product of the single operand in `layout` with a scalar held in the
/// buffer. Slot 0 holds the broadcast multiplier bit; since the multiplier
/// is shared by every column, bit pairs whose multiplier bit is 0 are not
/// issued.
pub fn mul_schedule(
    layout: &ColumnVectorLayout,
    multiplier: u64,
    overflow: Overflow,
    geometry: &SubarrayGeometry,
    category: Category,
) -> Result<Schedule> {
    layout.validate(geometry)?;
    let [a] = layout.operands.as_slice() else {
        return Err(Error::InvalidLayout("multiplication takes exactly one multiplicand".into()));
    };
    if a.shift != 0 {
        return Err(Error::InvalidLayout("multiplicand must not be shifted".into()));
    }
    let wa = a.width();
    let wm = bit_length(multiplier as u128).max(1) as usize;
    let width = layout.result.len();
    if overflow == Overflow::Error && width < wa + wm {
        return Err(Error::InsufficientResultRows(format!(
            "{wa}-bit by {wm}-bit product needs {} result rows, got {width}",
            wa + wm
        )));
    }
    let mut s = Schedule::new("bitserial_mul", category, layout.mask.clone());
    erase_ops(&mut s, layout.groups_to_erase(&layout.result, geometry)?);
    if multiplier != 0 {
        s.load(0, RowSource::Literal(layout.mask.clone()));
    }
    for (p, &dest) in layout.result.iter().enumerate() {
        for j in 0..wm.min(p + 1) {
            let i = p - j;
            if i < wa && (multiplier >> j) & 1 == 1 {
                s.and(a.rows[i], 0);
                s.count();
            }
        }
        s.shift_to(ShiftDest::Row(dest));
    }
    if overflow == Overflow::Wrap {
        s.reset();
    }
    Ok(s)
}

pub fn bitserial_mul(
    sub: &mut Subarray,
    layout: &ColumnVectorLayout,
    multiplier: u64,
    overflow: Overflow,
    meter: &mut Meter,
) -> Result<()> {
    let s = mul_schedule(layout, multiplier, overflow, sub.geometry(), meter.category())?;
    execute(sub, &s, meter)?;
    finish(sub, meter, "multiplication")
}

fn pair(layout: &ColumnVectorLayout) -> Result<(&VerticalOperand, &VerticalOperand)> {
    match layout.operands.as_slice() {
        [a, b] if a.width() == b.width() && a.shift == 0 && b.shift == 0 => Ok((a, b)),
        _ => Err(Error::InvalidLayout(
            "comparison takes two unshifted operands of equal width".into(),
        )),
    }
}

/// MSB-to-LSB comparison. Afterwards the Result row is 1 exactly in the
/// columns where A > B and the Tag row marks every column with A != B.
pub fn compare_schedule(layout: &ColumnVectorLayout, geometry: &SubarrayGeometry, category: Category) -> Result<Schedule> {
    layout.validate(geometry)?;
    let (a, b) = pair(layout)?;
    let (Some(tag), Some(result)) = (layout.tag_row, layout.result_row) else {
        return Err(Error::InvalidLayout("comparison needs Tag and Result rows".into()));
    };
    let mut s = Schedule::new("bitserial_compare", category, layout.mask.clone()).with_note(COMPARE_NOTE);
    erase_ops(&mut s, layout.groups_to_erase(&[tag, result], geometry)?);
    for bit in (0..a.width()).rev() {
        s.read(tag);
        s.load(0, RowSource::SenseInverted);
        s.and(a.rows[bit], 0);
        s.count();
        s.and(b.rows[bit], 0);
        s.count();
        s.shift_to(ShiftDest::Discard);
        s.reset();
        s.program(tag, RowSource::Lsb);
        s.load(0, RowSource::Lsb);
        s.and(a.rows[bit], 0);
        s.program(result, RowSource::Sense);
    }
    Ok(s)
}

pub fn bitserial_compare(sub: &mut Subarray, layout: &ColumnVectorLayout, meter: &mut Meter) -> Result<()> {
    let s = compare_schedule(layout, sub.geometry(), meter.category())?;
    execute(sub, &s, meter).map(drop)
}

/// Copies the winner of each column into `layout.result` (which may be
/// narrower than the operands when the winner is known to fit).
pub fn select_schedule(
    layout: &ColumnVectorLayout,
    which: Extreme,
    geometry: &SubarrayGeometry,
    category: Category,
) -> Result<Schedule> {
    layout.validate(geometry)?;
    let (a, b) = pair(layout)?;
    let Some(flag) = layout.result_row else {
        return Err(Error::InvalidLayout("selection needs the comparison Result row".into()));
    };
    if layout.result.len() > a.width() {
        return Err(Error::InvalidLayout("selection destination wider than its operands".into()));
    }
    let g = geometry.group_size;
    if layout.result.iter().any(|r| r / g == flag / g) {
        return Err(Error::InvalidLayout("selection destination shares a group with the Result row".into()));
    }
    let mut s = Schedule::new("select", category, layout.mask.clone());
    erase_ops(&mut s, layout.groups_to_erase(&layout.result, geometry)?);
    s.read(flag);
    s.load(0, RowSource::Sense);
    s.load(1, RowSource::SenseInverted);
    // slot 0 marks A > B
    let (slot_a, slot_b) = match which {
        Extreme::Max => (0, 1),
        Extreme::Min => (1, 0),
    };
    for (bit, &dest) in layout.result.iter().enumerate() {
        s.and(a.rows[bit], slot_a);
        s.count();
        s.and(b.rows[bit], slot_b);
        s.count();
        s.shift_to(ShiftDest::Row(dest));
    }
    Ok(s)
}

pub fn select_extreme(sub: &mut Subarray, layout: &ColumnVectorLayout, which: Extreme, meter: &mut Meter) -> Result<()> {
    let s = select_schedule(layout, which, sub.geometry(), meter.category())?;
    execute(sub, &s, meter)?;
    finish(sub, meter, "selection")
}

/// Programs bit `i` of an LSB-first stream into row `base + i`, which
/// weights it by `2^i`. The rows must already be erased.
pub fn shift_by_row_placement(sub: &mut Subarray, stream: &[BitRow], base: usize, meter: &mut Meter) -> Result<()> {
    if base + stream.len() > sub.bit_rows() {
        return Err(Error::InsufficientResultRows(format!(
            "{} stream rows from row {base} exceed {} rows",
            stream.len(),
            sub.bit_rows()
        )));
    }
    let mut s = Schedule::new("shift_by_row_placement", meter.category(), crate::subarray::ones(sub.columns()));
    for (i, row) in stream.iter().enumerate() {
        s.program(base + i, RowSource::Literal(row.clone()));
    }
    execute(sub, &s, meter).map(drop)
}
