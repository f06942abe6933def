//! Discrete model of a single NAND-SPIN device.
//!
//! A device is one heavy-metal strip carrying a group of MTJs. The strip is
//! erased in bulk (every MTJ to AP) and individual MTJs are then programmed
//! AP -> P. Data is stored complementary to the resistance label: AP holds a
//! `0`, P holds a `1`. The sense amplifier is reduced to its truth table.

use crate::error::{Error, Result};

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const MAX_GROUP_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MtjState {
    /// Anti-parallel, high resistance. Post-erase state, stores `0`.
    Ap,
    /// Parallel, low resistance, stores `1`.
    P,
}

impl MtjState {
    pub fn data_bit(self) -> bool {
        self == MtjState::P
    }
}

/// Behaviour of a program pulse aimed at an MTJ that is already in P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProgramCheck {
    /// Reject it as a scheduling bug.
    #[default]
    Strict,
    /// Treat it as a no-op.
    Permissive,
}

/// Sense-amplifier decision: `1` only when FU is high and the MTJ is in P.
pub fn sense(fu: bool, state: MtjState) -> bool {
    fu && state == MtjState::P
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct NandSpinDevice {
    group_size: u8,
    // bit i set <=> MTJ i is in P
    parallel: u64,
}

impl std::fmt::Debug for NandSpinDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let states: String = (0..self.group_size())
            .map(|i| if self.parallel >> i & 1 == 1 { 'P' } else { 'A' })
            .collect();
        write!(f, "NandSpinDevice[{states}]")
    }
}

impl Default for NandSpinDevice {
    fn default() -> Self {
        Self {
            group_size: DEFAULT_GROUP_SIZE as u8,
            parallel: 0,
        }
    }
}

impl NandSpinDevice {
    /// A freshly erased device with `group_size` MTJs.
    pub fn new(group_size: usize) -> Result<Self> {
        if group_size == 0 || group_size > MAX_GROUP_SIZE {
            return Err(Error::GeometryMismatch(format!(
                "group size must be in 1..={MAX_GROUP_SIZE}, got {group_size}"
            )));
        }
        Ok(Self {
            group_size: group_size as u8,
            parallel: 0,
        })
    }

    /// Builds a device from explicit MTJ states (index 0 first).
    pub fn from_states(states: &[MtjState]) -> Result<Self> {
        let mut dev = Self::new(states.len())?;
        for (i, s) in states.iter().enumerate() {
            if *s == MtjState::P {
                dev.parallel |= 1 << i;
            }
        }
        Ok(dev)
    }

    pub fn group_size(&self) -> usize {
        self.group_size as usize
    }

    pub fn mtj(&self, index: usize) -> Result<MtjState> {
        self.check_index(index)?;
        Ok(if self.parallel >> index & 1 == 1 {
            MtjState::P
        } else {
            MtjState::Ap
        })
    }

    pub fn states(&self) -> Vec<MtjState> {
        (0..self.group_size())
            .map(|i| self.mtj(i).expect("index within group"))
            .collect()
    }

    /// Stored data bits, MTJ `i` at bit `i`.
    pub fn data(&self) -> u64 {
        self.parallel
    }

    pub fn erase(&mut self) {
        self.parallel = 0;
    }

    /// STT program pulse. `d = 0` blocks the current and leaves the MTJ in AP.
    pub fn program(&mut self, index: usize, d: bool, check: ProgramCheck) -> Result<()> {
        self.check_index(index)?;
        if !d {
            return Ok(());
        }
        let mask = 1u64 << index;
        if self.parallel & mask != 0 && check == ProgramCheck::Strict {
            return Err(Error::ProgramWithoutErase { index });
        }
        self.parallel |= mask;
        Ok(())
    }

    pub fn read(&self, index: usize) -> Result<bool> {
        self.and_sense(index, true)
    }

    /// AND between the FU operand `w` and the stored bit.
    pub fn and_sense(&self, index: usize, w: bool) -> Result<bool> {
        Ok(sense(w, self.mtj(index)?))
    }

    /// Applies one decoded operation; `column` selects this device's `C_x`.
    /// Returns the SA output for sensing operations.
    pub fn apply(&mut self, op: &DeviceOp, column: usize, check: ProgramCheck) -> Result<Option<bool>> {
        match op {
            DeviceOp::Erase => {
                self.erase();
                Ok(None)
            }
            DeviceOp::Program { mtj, data } => {
                let d = *data.get(column).ok_or(Error::RowOutOfRange {
                    row: column,
                    limit: data.len(),
                })?;
                self.program(*mtj, d, check)?;
                Ok(None)
            }
            DeviceOp::Sense { mtj, fu } => self.and_sense(*mtj, *fu).map(Some),
        }
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.group_size() {
            return Err(Error::MtjIndexOutOfRange {
                index,
                group_size: self.group_size(),
            });
        }
        Ok(())
    }
}

/// Control-signal snapshot for a row of devices: `c` holds the column
/// selects, `r` the MTJ (row) selects within the group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlSignals {
    pub we: bool,
    pub er: bool,
    pub c: Vec<bool>,
    pub r: Vec<bool>,
    pub fu: bool,
    pub reference: bool,
}

/// Operation selected by a control-signal pattern.
///
/// Read and AND share a current path and differ only in FU, so a read is
/// decoded as `Sense { fu: true }`: an AND with `W = 1` is electrically the
/// same operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceOp {
    Erase,
    Program { mtj: usize, data: Vec<bool> },
    Sense { mtj: usize, fu: bool },
}

impl ControlSignals {
    pub fn erase(columns: usize, group_size: usize) -> Self {
        Self {
            we: true,
            er: true,
            c: vec![false; columns],
            r: vec![false; group_size],
            fu: false,
            reference: false,
        }
    }

    pub fn program(mtj: usize, data: Vec<bool>, group_size: usize) -> Self {
        let mut r = vec![false; group_size];
        if let Some(sel) = r.get_mut(mtj) {
            *sel = true;
        }
        Self {
            we: true,
            er: false,
            c: data,
            r,
            fu: false,
            reference: false,
        }
    }

    pub fn read(mtj: usize, columns: usize, group_size: usize) -> Self {
        Self::and(mtj, true, columns, group_size)
    }

    pub fn and(mtj: usize, w: bool, columns: usize, group_size: usize) -> Self {
        let mut r = vec![false; group_size];
        if let Some(sel) = r.get_mut(mtj) {
            *sel = true;
        }
        Self {
            we: false,
            er: true,
            c: vec![false; columns],
            r,
            fu: w,
            reference: true,
        }
    }

    /// Exact match against the four operation rows; anything else is rejected.
    pub fn decode(&self) -> Result<DeviceOp> {
        let selected: Vec<usize> = self
            .r
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect();
        let no_columns = self.c.iter().all(|&x| !x);
        match (self.we, self.er, self.reference) {
            (true, true, false) if !self.fu && no_columns && selected.is_empty() => Ok(DeviceOp::Erase),
            (true, false, false) if !self.fu && selected.len() == 1 => Ok(DeviceOp::Program {
                mtj: selected[0],
                data: self.c.clone(),
            }),
            (false, true, true) if no_columns && selected.len() == 1 => Ok(DeviceOp::Sense {
                mtj: selected[0],
                fu: self.fu,
            }),
            _ => Err(Error::AmbiguousSignals(format!(
                "WE={} ER={} C={} R={:?} FU={} REF={}",
                self.we as u8,
                self.er as u8,
                if no_columns { "0" } else { "D" },
                selected,
                self.fu as u8,
                self.reference as u8
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use MtjState::{Ap, P};

    fn programmed(group: usize, byte: u64) -> NandSpinDevice {
        let mut d = NandSpinDevice::new(group).unwrap();
        for i in 0..group {
            d.program(i, byte >> i & 1 == 1, ProgramCheck::Strict).unwrap();
        }
        d
    }

    #[test]
    fn erase_resets_every_mtj_to_ap() {
        let mut d = NandSpinDevice::from_states(&[P, P, Ap, P, Ap, Ap, P, P]).unwrap();
        d.erase();
        assert_eq!(d.states(), vec![Ap; 8]);
        assert_eq!(d.data(), 0x00);
        d.erase();
        assert_eq!(d.states(), vec![Ap; 8]);
    }

    #[test]
    fn program_one_switches_to_p_and_zero_blocks() {
        let mut d = NandSpinDevice::new(8).unwrap();
        d.program(0, true, ProgramCheck::Strict).unwrap();
        assert_eq!(d.mtj(0).unwrap(), P);
        let before = d;
        d.program(3, false, ProgramCheck::Strict).unwrap();
        assert_eq!(d, before);
        assert_eq!(d.mtj(3).unwrap(), Ap);
    }

    #[test]
    fn byte_round_trip() {
        let d = programmed(8, 0b1011_0001);
        assert_eq!(d.data(), 0b1011_0001);
        let bits: u64 = (0..8).map(|i| (d.read(i).unwrap() as u64) << i).sum();
        assert_eq!(bits, 0b1011_0001);
    }

    #[test]
    fn reprogramming_p_is_rejected_in_strict_mode_only() {
        let mut d = programmed(4, 0b0100);
        assert_eq!(
            d.program(2, true, ProgramCheck::Strict),
            Err(Error::ProgramWithoutErase { index: 2 })
        );
        d.program(2, true, ProgramCheck::Permissive).unwrap();
        assert_eq!(d.data(), 0b0100);
    }

    #[test]
    fn read_and_sense_are_non_destructive() {
        let d = NandSpinDevice::from_states(&[Ap, Ap, P, Ap]).unwrap();
        assert!(d.read(2).unwrap());
        assert!(d.read(2).unwrap());
        assert!(!d.read(1).unwrap());
        assert!(!d.and_sense(2, false).unwrap());
        assert_eq!(d.states(), vec![Ap, Ap, P, Ap]);
    }

    #[test]
    fn and_truth_table_matches_boolean_and() {
        for stored in [false, true] {
            for w in [false, true] {
                let d = programmed(1, stored as u64);
                assert_eq!(d.and_sense(0, w).unwrap(), stored && w);
            }
        }
    }

    #[test]
    fn index_out_of_range() {
        let d = NandSpinDevice::new(4).unwrap();
        assert!(matches!(d.read(4), Err(Error::MtjIndexOutOfRange { .. })));
        assert!(NandSpinDevice::new(0).is_err());
        assert!(NandSpinDevice::new(65).is_err());
    }

    #[test]
    fn decode_rejects_mixed_patterns() {
        let mut s = ControlSignals::erase(4, 8);
        s.fu = true;
        assert!(s.decode().is_err());
        let mut s = ControlSignals::read(0, 4, 8);
        s.r[1] = true;
        assert!(s.decode().is_err());
        let mut s = ControlSignals::program(0, vec![true; 4], 8);
        s.er = true;
        // WE=ER=1 with column data is neither erase nor program
        assert!(s.decode().is_err());
        let s = ControlSignals {
            we: false,
            er: false,
            c: vec![false; 4],
            r: vec![true, false],
            fu: true,
            reference: true,
        };
        assert!(s.decode().is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_round_trip(group in prop::sample::select(vec![1usize, 4, 8]), seed in any::<u64>(), idx in 0usize..8, d in any::<bool>()) {
            let idx = idx % group;
            let mut dev = NandSpinDevice::new(group).unwrap();
            for i in 0..group {
                dev.program(i, seed >> i & 1 == 1, ProgramCheck::Permissive).unwrap();
            }
            dev.erase();
            dev.program(idx, d, ProgramCheck::Strict).unwrap();
            prop_assert_eq!(dev.read(idx).unwrap(), d);
        }

        #[test]
        fn and_with_fu_high_is_read(group in prop::sample::select(vec![1usize, 4, 8]), seed in any::<u64>()) {
            let dev = programmed(group, seed & ((1u64 << group) - 1));
            for i in 0..group {
                prop_assert_eq!(dev.and_sense(i, true).unwrap(), dev.read(i).unwrap());
            }
        }

        #[test]
        fn program_zero_is_identity(group in prop::sample::select(vec![1usize, 4, 8]), seed in any::<u64>(), idx in 0usize..8) {
            let mut dev = programmed(group, seed & ((1u64 << group) - 1));
            let before = dev;
            dev.program(idx % group, false, ProgramCheck::Strict).unwrap();
            prop_assert_eq!(dev, before);
        }
    }
}
