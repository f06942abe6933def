//! Micro-op schedules and their interpreter.
//!
//! Every in-memory primitive is lowered to a [`Schedule`] and replayed by
//! [`execute`] against one subarray. The interpreter keeps two latches:
//! the SA output of the last `Sense` and the LSB row of the last
//! `ShiftOut`.

use crate::cost::Category;
use crate::error::{Error, Result};
use crate::meter::Meter;
use crate::subarray::{BitRow, Routing, Subarray};

/// Where a row written to memory or to the buffer comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowSource {
    Sense,
    /// Complement of the SA latch, restricted to the schedule's active columns.
    SenseInverted,
    Lsb,
    Literal(BitRow),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FuSource {
    /// FU held high on every column: a plain read.
    Read,
    Buffer { slot: usize, routing: Routing },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShiftDest {
    Discard,
    Row(usize),
    /// Sent out through the column multiplexers; collected by [`execute`].
    Export,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MicroOp {
    EraseGroup { device_row: usize },
    WriteGroup { device_row: usize, data: Vec<BitRow> },
    ProgramRow { row: usize, source: RowSource },
    Sense { row: usize, fu: FuSource },
    /// Adds the SA latch into the bit-counters.
    Count,
    ShiftOut { dest: ShiftDest },
    ResetCounters,
    LoadBuffer { slot: usize, source: RowSource },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub label: &'static str,
    pub note: Option<&'static str>,
    pub category: Category,
    pub mask: BitRow,
    pub ops: Vec<MicroOp>,
}

impl Schedule {
    pub fn new(label: &'static str, category: Category, mask: BitRow) -> Self {
        Self {
            label,
            note: None,
            category,
            mask,
            ops: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: &'static str) -> Self {
        self.note = Some(note);
        self
    }

    pub fn push(&mut self, op: MicroOp) {
        self.ops.push(op);
    }

    pub fn extend(&mut self, ops: impl IntoIterator<Item = MicroOp>) {
        self.ops.extend(ops);
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn erase(&mut self, device_row: usize) {
        self.push(MicroOp::EraseGroup { device_row });
    }

    pub fn read(&mut self, row: usize) {
        self.push(MicroOp::Sense { row, fu: FuSource::Read });
    }

    pub fn and(&mut self, row: usize, slot: usize) {
        self.push(MicroOp::Sense {
            row,
            fu: FuSource::Buffer {
                slot,
                routing: Routing::Direct,
            },
        });
    }

    pub fn count(&mut self) {
        self.push(MicroOp::Count);
    }

    pub fn shift_to(&mut self, dest: ShiftDest) {
        self.push(MicroOp::ShiftOut { dest });
    }

    pub fn program(&mut self, row: usize, source: RowSource) {
        self.push(MicroOp::ProgramRow { row, source });
    }

    pub fn load(&mut self, slot: usize, source: RowSource) {
        self.push(MicroOp::LoadBuffer { slot, source });
    }

    pub fn reset(&mut self) {
        self.push(MicroOp::ResetCounters);
    }
}

#[derive(Debug, Default)]
struct Latches {
    sa: Option<BitRow>,
    lsb: Option<BitRow>,
}

impl Latches {
    fn resolve(&self, source: &RowSource, mask: &BitRow) -> Result<BitRow> {
        match source {
            RowSource::Sense => self.sa.clone().ok_or(Error::LatchEmpty),
            RowSource::SenseInverted => {
                let sa = self.sa.clone().ok_or(Error::LatchEmpty)?;
                Ok(!sa & mask)
            }
            RowSource::Lsb => self.lsb.clone().ok_or(Error::LatchEmpty),
            RowSource::Literal(bits) => Ok(bits.clone()),
        }
    }
}

/// Runs `schedule` on `sub`, charging `meter` under the schedule's
/// category. Returns the rows sent out by `ShiftOut { dest: Export }` in
/// order.
pub fn execute(sub: &mut Subarray, schedule: &Schedule, meter: &mut Meter) -> Result<Vec<BitRow>> {
    if schedule.mask.len() != sub.columns() {
        return Err(Error::GeometryMismatch(format!(
            "schedule mask of {} bits for {} columns",
            schedule.mask.len(),
            sub.columns()
        )));
    }
    let saved = meter.category();
    meter.set_category(schedule.category);
    if schedule.note.is_some() {
        meter.annotate(schedule.label, schedule.note);
    }
    let result = run(sub, schedule, meter);
    meter.set_category(saved);
    result
}

fn run(sub: &mut Subarray, schedule: &Schedule, meter: &mut Meter) -> Result<Vec<BitRow>> {
    let mut latches = Latches::default();
    let mut exported = Vec::new();
    for op in &schedule.ops {
        match op {
            MicroOp::EraseGroup { device_row } => sub.erase_group(*device_row, meter)?,
            MicroOp::WriteGroup { device_row, data } => sub.write_row_group(*device_row, data, meter)?,
            MicroOp::ProgramRow { row, source } => {
                let bits = latches.resolve(source, &schedule.mask)?;
                sub.program_bit_row(*row, &bits, meter)?;
            }
            MicroOp::Sense { row, fu } => {
                let out = match fu {
                    FuSource::Read => sub.read_bit_row(*row, meter)?,
                    FuSource::Buffer { slot, routing } => sub.and_bit_row_routed(*row, *slot, routing, meter)?,
                };
                latches.sa = Some(out);
            }
            MicroOp::Count => {
                let sa = latches.sa.as_ref().ok_or(Error::LatchEmpty)?;
                sub.accumulate_counters(sa, meter)?;
            }
            MicroOp::ShiftOut { dest } => {
                let lsb = sub.counter_lsb_and_shift(meter);
                match dest {
                    ShiftDest::Discard => {}
                    ShiftDest::Row(row) => sub.program_bit_row(*row, &lsb, meter)?,
                    ShiftDest::Export => exported.push(lsb.clone()),
                }
                latches.lsb = Some(lsb);
            }
            MicroOp::ResetCounters => sub.reset_counters(meter),
            MicroOp::LoadBuffer { slot, source } => {
                let bits = latches.resolve(source, &schedule.mask)?;
                sub.load_buffer_row(*slot, &bits, meter)?;
            }
        }
    }
    Ok(exported)
}
