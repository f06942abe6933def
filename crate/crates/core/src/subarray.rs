//! One subarray: a grid of NAND-SPIN devices with per-column sense
//! amplifiers and bit-counters, plus a small weight buffer.
//!
//! The MTJs of a device stack along the row axis, so device row `d` covers
//! bit rows `d * G .. (d + 1) * G`. Writes therefore happen a row group at
//! a time (one erase followed by up to G program pulses) while reads and
//! ANDs return a single bit row.

use std::fmt::Write as _;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::OpKind;
use crate::device::{NandSpinDevice, ProgramCheck, DEFAULT_GROUP_SIZE};
use crate::error::{Error, Result};
use crate::meter::Meter;

pub type BitRow = BitVec<u64, Lsb0>;

pub fn zeros(len: usize) -> BitRow {
    BitVec::repeat(false, len)
}

pub fn ones(len: usize) -> BitRow {
    BitVec::repeat(true, len)
}

pub fn bits_from_fn(len: usize, f: impl FnMut(usize) -> bool) -> BitRow {
    (0..len).map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubarrayGeometry {
    pub device_rows: usize,
    pub columns: usize,
    pub group_size: usize,
    pub buffer_rows: usize,
    pub counter_width: u32,
}

impl Default for SubarrayGeometry {
    fn default() -> Self {
        Self {
            device_rows: 32,
            columns: 128,
            group_size: DEFAULT_GROUP_SIZE,
            buffer_rows: 4,
            counter_width: 16,
        }
    }
}

impl SubarrayGeometry {
    pub fn bit_rows(&self) -> usize {
        self.device_rows * self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        NandSpinDevice::new(self.group_size)?;
        if self.device_rows == 0 || self.columns == 0 || self.buffer_rows == 0 {
            return Err(Error::GeometryMismatch(format!("all geometry values must be positive: {self:?}")));
        }
        if self.counter_width == 0 || self.counter_width > 31 {
            return Err(Error::GeometryMismatch(format!(
                "counter width must be in 1..=31, got {}",
                self.counter_width
            )));
        }
        Ok(())
    }
}

/// Per-column counter of non-zero SA outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitCounter {
    value: u32,
}

impl BitCounter {
    pub fn value(&self) -> u32 {
        self.value
    }

    fn add(&mut self, by: u32, width: u32, column: usize) -> Result<()> {
        let next = self.value + by;
        if next >> width != 0 {
            return Err(Error::CounterOverflow { column, width });
        }
        self.value = next;
        Ok(())
    }

    fn lsb_and_shift(&mut self) -> bool {
        let lsb = self.value & 1 == 1;
        self.value >>= 1;
        lsb
    }
}

/// Temporary weight rows, each `columns` bits wide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferRows {
    rows: Vec<Option<BitRow>>,
}

impl BufferRows {
    fn new(capacity: usize) -> Self {
        Self {
            rows: vec![None; capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, index: usize) -> Option<&BitRow> {
        self.rows.get(index).and_then(Option::as_ref)
    }
}

/// How a buffer row is driven onto the FU lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routing {
    /// Buffer bit `c` drives column `c`.
    Direct,
    /// The first `width` buffer bits are replicated at each offset; columns
    /// outside every window see FU low. Used to slide a weight row across
    /// the input without rewriting the buffer.
    Windows { offsets: Vec<usize>, width: usize },
}

impl Routing {
    pub fn apply(&self, buffer: &BitRow, columns: usize) -> Result<BitRow> {
        match self {
            Routing::Direct => Ok(buffer.clone()),
            Routing::Windows { offsets, width } => {
                let mut fu = zeros(columns);
                let mut prev_end = 0;
                let mut sorted = offsets.clone();
                sorted.sort_unstable();
                for (i, &off) in sorted.iter().enumerate() {
                    if (i > 0 && off < prev_end) || off + width > columns {
                        return Err(Error::InvalidLayout(format!(
                            "window routing offsets {offsets:?} (width {width}) overlap or exceed {columns} columns"
                        )));
                    }
                    for k in 0..*width {
                        fu.set(off + k, buffer[k]);
                    }
                    prev_end = off + width;
                }
                Ok(fu)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subarray {
    geometry: SubarrayGeometry,
    devices: Vec<NandSpinDevice>,
    buffer: BufferRows,
    counters: Vec<BitCounter>,
    check: ProgramCheck,
}

impl Subarray {
    pub fn new(geometry: SubarrayGeometry) -> Result<Self> {
        geometry.validate()?;
        let dev = NandSpinDevice::new(geometry.group_size)?;
        Ok(Self {
            geometry,
            devices: vec![dev; geometry.device_rows * geometry.columns],
            buffer: BufferRows::new(geometry.buffer_rows),
            counters: vec![BitCounter::default(); geometry.columns],
            check: ProgramCheck::Strict,
        })
    }

    pub fn with_check(mut self, check: ProgramCheck) -> Self {
        self.check = check;
        self
    }

    pub fn geometry(&self) -> &SubarrayGeometry {
        &self.geometry
    }

    pub fn columns(&self) -> usize {
        self.geometry.columns
    }

    pub fn bit_rows(&self) -> usize {
        self.geometry.bit_rows()
    }

    pub fn buffer(&self) -> &BufferRows {
        &self.buffer
    }

    pub fn counters(&self) -> Vec<u32> {
        self.counters.iter().map(BitCounter::value).collect()
    }

    pub fn device(&self, device_row: usize, column: usize) -> Result<&NandSpinDevice> {
        self.check_device_row(device_row)?;
        self.devices
            .get(device_row * self.geometry.columns + column)
            .ok_or(Error::RowOutOfRange {
                row: column,
                limit: self.geometry.columns,
            })
    }

    fn check_device_row(&self, device_row: usize) -> Result<()> {
        if device_row >= self.geometry.device_rows {
            return Err(Error::RowOutOfRange {
                row: device_row,
                limit: self.geometry.device_rows,
            });
        }
        Ok(())
    }

    fn check_bit_row(&self, bit_row: usize) -> Result<()> {
        if bit_row >= self.bit_rows() {
            return Err(Error::RowOutOfRange {
                row: bit_row,
                limit: self.bit_rows(),
            });
        }
        Ok(())
    }

    fn check_width(&self, bits: &BitRow) -> Result<()> {
        if bits.len() != self.geometry.columns {
            return Err(Error::GeometryMismatch(format!(
                "row of {} bits for a subarray with {} columns",
                bits.len(),
                self.geometry.columns
            )));
        }
        Ok(())
    }

    fn row_slice(&self, device_row: usize) -> &[NandSpinDevice] {
        let c = self.geometry.columns;
        &self.devices[device_row * c..(device_row + 1) * c]
    }

    fn row_slice_mut(&mut self, device_row: usize) -> &mut [NandSpinDevice] {
        let c = self.geometry.columns;
        &mut self.devices[device_row * c..(device_row + 1) * c]
    }

    /// Erases one device row (all of its G bit rows) with a single pulse.
    pub fn erase_group(&mut self, device_row: usize, meter: &mut Meter) -> Result<()> {
        self.check_device_row(device_row)?;
        self.row_slice_mut(device_row).iter_mut().for_each(NandSpinDevice::erase);
        meter.charge(OpKind::DeviceErase, self.geometry.columns as u64, 1);
        let g = self.geometry.group_size;
        meter.close("erase_group", &[device_row * g]);
        Ok(())
    }

    fn program_inner(&mut self, bit_row: usize, bits: &BitRow, meter: &mut Meter) -> Result<()> {
        let g = self.geometry.group_size;
        let (device_row, mtj) = (bit_row / g, bit_row % g);
        let check = self.check;
        let row = self.row_slice_mut(device_row);
        // validate first so a rejected pulse leaves the row untouched
        if check == ProgramCheck::Strict {
            for c in bits.iter_ones() {
                if row[c].read(mtj)? {
                    return Err(Error::ProgramWithoutErase { index: mtj });
                }
            }
        }
        for c in bits.iter_ones() {
            row[c].program(mtj, true, check)?;
        }
        let ones = bits.count_ones() as u64;
        // an all-zero pattern blocks every column, so no pulse is issued
        meter.charge(OpKind::BitProgram, ones, (ones > 0) as u64);
        Ok(())
    }

    /// Program-only write of one bit row: `1` bits switch AP -> P.
    pub fn program_bit_row(&mut self, bit_row: usize, bits: &BitRow, meter: &mut Meter) -> Result<()> {
        self.check_bit_row(bit_row)?;
        self.check_width(bits)?;
        self.program_inner(bit_row, bits, meter)?;
        meter.close("program_row", &[bit_row]);
        Ok(())
    }

    /// Memory-mode write: erase a device row, then program its G bit rows.
    pub fn write_row_group(&mut self, device_row: usize, data: &[BitRow], meter: &mut Meter) -> Result<()> {
        self.check_device_row(device_row)?;
        let g = self.geometry.group_size;
        if data.len() != g {
            return Err(Error::GeometryMismatch(format!(
                "row group write needs {g} bit rows, got {}",
                data.len()
            )));
        }
        for row in data {
            self.check_width(row)?;
        }
        self.row_slice_mut(device_row).iter_mut().for_each(NandSpinDevice::erase);
        meter.charge(OpKind::DeviceErase, self.geometry.columns as u64, 1);
        for (i, row) in data.iter().enumerate() {
            self.program_inner(device_row * g + i, row, meter)?;
        }
        let rows: Vec<usize> = (device_row * g..(device_row + 1) * g).collect();
        meter.close("write_row_group", &rows);
        Ok(())
    }

    fn sense(&self, bit_row: usize, fu: Option<&BitRow>) -> BitRow {
        let g = self.geometry.group_size;
        let (device_row, mtj) = (bit_row / g, bit_row % g);
        self.row_slice(device_row)
            .iter()
            .enumerate()
            .map(|(c, d)| {
                let w = fu.is_none_or(|f| f[c]);
                d.and_sense(mtj, w).expect("mtj index within group")
            })
            .collect()
    }

    /// Stored bits of one row without charging any cost (debug access).
    pub fn peek_bit_row(&self, bit_row: usize) -> Result<BitRow> {
        self.check_bit_row(bit_row)?;
        Ok(self.sense(bit_row, None))
    }

    pub fn read_bit_row(&mut self, bit_row: usize, meter: &mut Meter) -> Result<BitRow> {
        self.check_bit_row(bit_row)?;
        let out = self.sense(bit_row, None);
        meter.charge(OpKind::RowRead, 1, 1);
        meter.close("read_row", &[bit_row]);
        Ok(out)
    }

    /// Column-wise AND of a stored row and a buffer row.
    pub fn and_bit_row(&mut self, bit_row: usize, buffer_row: usize, meter: &mut Meter) -> Result<BitRow> {
        self.and_bit_row_routed(bit_row, buffer_row, &Routing::Direct, meter)
    }

    pub fn and_bit_row_routed(
        &mut self,
        bit_row: usize,
        buffer_row: usize,
        routing: &Routing,
        meter: &mut Meter,
    ) -> Result<BitRow> {
        self.check_bit_row(bit_row)?;
        if buffer_row >= self.buffer.capacity() {
            return Err(Error::BufferIndexOutOfRange {
                index: buffer_row,
                capacity: self.buffer.capacity(),
            });
        }
        let buf = self.buffer.row(buffer_row).ok_or(Error::BufferRowEmpty(buffer_row))?;
        let fu = routing.apply(buf, self.geometry.columns)?;
        let out = self.sense(bit_row, Some(&fu));
        meter.charge(OpKind::RowAnd, 1, 1);
        meter.close("and_row", &[bit_row]);
        Ok(out)
    }

    /// `counters[c] += bits[c]` for every column.
    pub fn accumulate_counters(&mut self, bits: &BitRow, meter: &mut Meter) -> Result<()> {
        self.check_width(bits)?;
        let width = self.geometry.counter_width;
        for c in bits.iter_ones() {
            self.counters[c].add(1, width, c)?;
        }
        meter.charge(OpKind::CounterAccumulate, 1, 1);
        meter.close("count", &[]);
        Ok(())
    }

    /// Emits every counter's LSB and halves the counters.
    pub fn counter_lsb_and_shift(&mut self, meter: &mut Meter) -> BitRow {
        let out = self.counters.iter_mut().map(BitCounter::lsb_and_shift).collect();
        meter.charge(OpKind::CounterShift, 1, 1);
        meter.close("counter_shift", &[]);
        out
    }

    pub fn reset_counters(&mut self, meter: &mut Meter) {
        self.counters.iter_mut().for_each(|c| *c = BitCounter::default());
        meter.charge(OpKind::CounterReset, 1, 1);
        meter.close("counter_reset", &[]);
    }

    pub fn counters_are_zero(&self) -> bool {
        self.counters.iter().all(|c| c.value == 0)
    }

    pub fn load_buffer_row(&mut self, buffer_row: usize, bits: &BitRow, meter: &mut Meter) -> Result<()> {
        if buffer_row >= self.buffer.capacity() {
            return Err(Error::BufferIndexOutOfRange {
                index: buffer_row,
                capacity: self.buffer.capacity(),
            });
        }
        self.check_width(bits)?;
        self.buffer.rows[buffer_row] = Some(bits.clone());
        meter.charge(OpKind::BufferWrite, 1, 1);
        meter.close("load_buffer", &[buffer_row]);
        Ok(())
    }

    /// Text grid of the stored bits, one line per bit row.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in 0..self.bit_rows() {
            let row = self.sense(r, None);
            for b in row.iter() {
                out.push(if *b { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Like [`Subarray::dump`] restricted to `rows` bit rows and `cols` columns,
    /// with a row index prefix.
    pub fn dump_window(&self, rows: usize, cols: usize) -> String {
        let mut out = String::new();
        for r in 0..rows.min(self.bit_rows()) {
            let row = self.sense(r, None);
            let _ = write!(out, "{r:4} ");
            for b in row.iter().take(cols) {
                out.push(if *b { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}
