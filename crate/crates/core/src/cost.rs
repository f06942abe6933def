//! Energy/latency accounting.
//!
//! Costs are accumulated in integer attojoules and femtoseconds so that
//! ledger merges are exact, associative and commutative regardless of the
//! order in which concurrent lanes are joined. Latency follows a lane-max
//! model: within a phase every lane serializes its own operations, lanes
//! run concurrently, and a barrier commits the slowest lane.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const AJ_PER_FJ: f64 = 1_000.0;
pub const FS_PER_NS: f64 = 1_000_000.0;

/// Breakdown categories used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Load,
    Convolution,
    Transfer,
    PoolingCompare,
    BatchNorm,
    Quantization,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Load,
        Category::Convolution,
        Category::Transfer,
        Category::PoolingCompare,
        Category::BatchNorm,
        Category::Quantization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Load => "load",
            Category::Convolution => "convolution",
            Category::Transfer => "transfer",
            Category::PoolingCompare => "pooling_compare",
            Category::BatchNorm => "batch_norm",
            Category::Quantization => "quantization",
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// Units: devices erased. Steps: row-parallel erase pulses.
    DeviceErase,
    /// Units: bits switched AP->P. Steps: row-parallel program pulses.
    BitProgram,
    RowRead,
    RowAnd,
    BufferWrite,
    CounterAccumulate,
    CounterShift,
    CounterReset,
    BusBeat,
    HostCompute,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::DeviceErase,
        OpKind::BitProgram,
        OpKind::RowRead,
        OpKind::RowAnd,
        OpKind::BufferWrite,
        OpKind::CounterAccumulate,
        OpKind::CounterShift,
        OpKind::CounterReset,
        OpKind::BusBeat,
        OpKind::HostCompute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::DeviceErase => "device_erase",
            OpKind::BitProgram => "bit_program",
            OpKind::RowRead => "row_read",
            OpKind::RowAnd => "row_and",
            OpKind::BufferWrite => "buffer_write",
            OpKind::CounterAccumulate => "counter_accumulate",
            OpKind::CounterShift => "counter_shift",
            OpKind::CounterReset => "counter_reset",
            OpKind::BusBeat => "bus_beat",
            OpKind::HostCompute => "host_compute",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOpKind(s.to_string()))
    }
}

/// Per-operation cost parameters in fJ / ns.
///
/// Device-level defaults are measured values: 180 fJ per device erase at
/// 0.3 ns per MTJ, 840 fJ per device program at 5 ns per bit, and 4.0 fJ /
/// 0.17 ns per row read. Everything else is an estimate (see
/// [`CostParams::ESTIMATED`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub erase_energy_per_device_fj: f64,
    pub erase_latency_per_mtj_ns: f64,
    pub program_energy_per_device_fj: f64,
    pub program_latency_per_bit_ns: f64,
    pub read_energy_fj: f64,
    pub read_latency_ns: f64,
    pub and_energy_fj: f64,
    pub and_latency_ns: f64,
    pub buffer_write_energy_fj: f64,
    pub buffer_write_latency_ns: f64,
    pub counter_accumulate_energy_fj: f64,
    pub counter_accumulate_latency_ns: f64,
    pub counter_shift_energy_fj: f64,
    pub counter_shift_latency_ns: f64,
    pub counter_reset_energy_fj: f64,
    pub counter_reset_latency_ns: f64,
    pub bus_beat_energy_fj: f64,
    pub bus_beat_latency_ns: f64,
    pub host_compute_energy_fj: f64,
    pub host_compute_latency_ns: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            erase_energy_per_device_fj: 180.0,
            erase_latency_per_mtj_ns: 0.3,
            program_energy_per_device_fj: 840.0,
            program_latency_per_bit_ns: 5.0,
            read_energy_fj: 4.0,
            read_latency_ns: 0.17,
            and_energy_fj: 4.0,
            and_latency_ns: 0.17,
            buffer_write_energy_fj: 8.0,
            buffer_write_latency_ns: 0.5,
            counter_accumulate_energy_fj: 2.0,
            counter_accumulate_latency_ns: 0.1,
            counter_shift_energy_fj: 1.0,
            counter_shift_latency_ns: 0.1,
            counter_reset_energy_fj: 0.5,
            counter_reset_latency_ns: 0.05,
            bus_beat_energy_fj: 40.0,
            bus_beat_latency_ns: 1.0,
            host_compute_energy_fj: 0.0,
            host_compute_latency_ns: 0.0,
        }
    }
}

impl CostParams {
    /// Parameters whose defaults are estimates rather than measurements.
    pub const ESTIMATED: [&'static str; 12] = [
        "and_energy_fj",
        "and_latency_ns",
        "buffer_write_energy_fj",
        "buffer_write_latency_ns",
        "counter_accumulate_energy_fj",
        "counter_accumulate_latency_ns",
        "counter_shift_energy_fj",
        "counter_shift_latency_ns",
        "counter_reset_energy_fj",
        "counter_reset_latency_ns",
        "bus_beat_energy_fj",
        "bus_beat_latency_ns",
    ];

    fn fields(&self) -> [(&'static str, f64); 20] {
        [
            ("erase_energy_per_device_fj", self.erase_energy_per_device_fj),
            ("erase_latency_per_mtj_ns", self.erase_latency_per_mtj_ns),
            ("program_energy_per_device_fj", self.program_energy_per_device_fj),
            ("program_latency_per_bit_ns", self.program_latency_per_bit_ns),
            ("read_energy_fj", self.read_energy_fj),
            ("read_latency_ns", self.read_latency_ns),
            ("and_energy_fj", self.and_energy_fj),
            ("and_latency_ns", self.and_latency_ns),
            ("buffer_write_energy_fj", self.buffer_write_energy_fj),
            ("buffer_write_latency_ns", self.buffer_write_latency_ns),
            ("counter_accumulate_energy_fj", self.counter_accumulate_energy_fj),
            ("counter_accumulate_latency_ns", self.counter_accumulate_latency_ns),
            ("counter_shift_energy_fj", self.counter_shift_energy_fj),
            ("counter_shift_latency_ns", self.counter_shift_latency_ns),
            ("counter_reset_energy_fj", self.counter_reset_energy_fj),
            ("counter_reset_latency_ns", self.counter_reset_latency_ns),
            ("bus_beat_energy_fj", self.bus_beat_energy_fj),
            ("bus_beat_latency_ns", self.bus_beat_latency_ns),
            ("host_compute_energy_fj", self.host_compute_energy_fj),
            ("host_compute_latency_ns", self.host_compute_latency_ns),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.fields() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidModel(format!("cost parameter {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = *self;
        for v in [
            &mut p.erase_energy_per_device_fj,
            &mut p.erase_latency_per_mtj_ns,
            &mut p.program_energy_per_device_fj,
            &mut p.program_latency_per_bit_ns,
            &mut p.read_energy_fj,
            &mut p.read_latency_ns,
            &mut p.and_energy_fj,
            &mut p.and_latency_ns,
            &mut p.buffer_write_energy_fj,
            &mut p.buffer_write_latency_ns,
            &mut p.counter_accumulate_energy_fj,
            &mut p.counter_accumulate_latency_ns,
            &mut p.counter_shift_energy_fj,
            &mut p.counter_shift_latency_ns,
            &mut p.counter_reset_energy_fj,
            &mut p.counter_reset_latency_ns,
            &mut p.bus_beat_energy_fj,
            &mut p.bus_beat_latency_ns,
            &mut p.host_compute_energy_fj,
            &mut p.host_compute_latency_ns,
        ] {
            *v *= factor;
        }
        p
    }

    /// Integer rates for a device group size `group_size`.
    pub fn rates(&self, group_size: usize) -> CostRates {
        let aj = |fj: f64| (fj * AJ_PER_FJ).round() as u64;
        let fs = |ns: f64| (ns * FS_PER_NS).round() as u64;
        let g = group_size.max(1) as u64;
        let mut table = [(0u64, 0u64); 10];
        table[OpKind::DeviceErase as usize] = (aj(self.erase_energy_per_device_fj), fs(self.erase_latency_per_mtj_ns) * g);
        table[OpKind::BitProgram as usize] = (aj(self.program_energy_per_device_fj) / g, fs(self.program_latency_per_bit_ns));
        table[OpKind::RowRead as usize] = (aj(self.read_energy_fj), fs(self.read_latency_ns));
        table[OpKind::RowAnd as usize] = (aj(self.and_energy_fj), fs(self.and_latency_ns));
        table[OpKind::BufferWrite as usize] = (aj(self.buffer_write_energy_fj), fs(self.buffer_write_latency_ns));
        table[OpKind::CounterAccumulate as usize] = (
            aj(self.counter_accumulate_energy_fj),
            fs(self.counter_accumulate_latency_ns),
        );
        table[OpKind::CounterShift as usize] = (aj(self.counter_shift_energy_fj), fs(self.counter_shift_latency_ns));
        table[OpKind::CounterReset as usize] = (aj(self.counter_reset_energy_fj), fs(self.counter_reset_latency_ns));
        table[OpKind::BusBeat as usize] = (aj(self.bus_beat_energy_fj), fs(self.bus_beat_latency_ns));
        table[OpKind::HostCompute as usize] = (aj(self.host_compute_energy_fj), fs(self.host_compute_latency_ns));
        CostRates { table }
    }
}

/// Integer cost table: (aJ per unit, fs per serial step) per op kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostRates {
    table: [(u64, u64); 10],
}

impl CostRates {
    pub fn energy_per_unit(&self, kind: OpKind) -> u64 {
        self.table[kind as usize].0
    }

    pub fn latency_per_step(&self, kind: OpKind) -> u64 {
        self.table[kind as usize].1
    }
}

/// Execution lane. Operations on one lane serialize; distinct lanes overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneId {
    Subarray { mat: u32, index: u32 },
    Bus { mat: u32 },
    Host,
}

impl LaneId {
    pub fn subarray(mat: usize, index: usize) -> Self {
        LaneId::Subarray {
            mat: mat as u32,
            index: index as u32,
        }
    }

    pub fn bus(mat: usize) -> Self {
        LaneId::Bus { mat: mat as u32 }
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaneId::Subarray { mat, index } => write!(f, "m{mat}.s{index}"),
            LaneId::Bus { mat } => write!(f, "m{mat}.bus"),
            LaneId::Host => f.write_str("host"),
        }
    }
}

impl Serialize for LaneId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostEvent {
    pub kind: OpKind,
    pub category: Category,
    pub lane: LaneId,
    /// Energy multiplicity.
    pub units: u64,
    /// Latency multiplicity (serial steps on the lane).
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindCount {
    pub events: u64,
    pub units: u64,
}

type PerCat = [u64; 6];

fn add_cat(a: &mut PerCat, b: &PerCat) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    energy_aj: PerCat,
    committed_fs: PerCat,
    open_lanes: BTreeMap<LaneId, PerCat>,
    counts: BTreeMap<OpKind, KindCount>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charges one event. Zero-multiplicity events leave the ledger unchanged.
    pub fn charge(&mut self, rates: &CostRates, event: &CostEvent) {
        if event.units == 0 && event.steps == 0 {
            return;
        }
        let c = event.category.idx();
        self.energy_aj[c] += rates.energy_per_unit(event.kind) * event.units;
        let lane = self.open_lanes.entry(event.lane).or_default();
        lane[c] += rates.latency_per_step(event.kind) * event.steps;
        let count = self.counts.entry(event.kind).or_default();
        count.events += 1;
        count.units += event.units;
    }

    /// Parses the op kind by name before charging.
    pub fn charge_named(
        &mut self,
        rates: &CostRates,
        kind: &str,
        category: Category,
        lane: LaneId,
        units: u64,
        steps: u64,
    ) -> Result<()> {
        let kind = kind.parse()?;
        self.charge(
            rates,
            &CostEvent {
                kind,
                category,
                lane,
                units,
                steps,
            },
        );
        Ok(())
    }

    /// Joins a ledger produced by a concurrent lane (or any other ledger).
    pub fn merge(&mut self, other: &CostLedger) {
        add_cat(&mut self.energy_aj, &other.energy_aj);
        add_cat(&mut self.committed_fs, &other.committed_fs);
        for (lane, t) in &other.open_lanes {
            add_cat(self.open_lanes.entry(*lane).or_default(), t);
        }
        for (kind, c) in &other.counts {
            let e = self.counts.entry(*kind).or_default();
            e.events += c.events;
            e.units += c.units;
        }
    }

    /// Closes the current phase: the slowest lane (lowest id on ties) sets
    /// the phase latency and its per-category split.
    pub fn barrier(&mut self) {
        if let Some(slowest) = critical_lane(&self.open_lanes) {
            add_cat(&mut self.committed_fs, &slowest);
        }
        self.open_lanes.clear();
    }

    fn latency_split(&self) -> PerCat {
        let mut total = self.committed_fs;
        if let Some(open) = critical_lane(&self.open_lanes) {
            add_cat(&mut total, &open);
        }
        total
    }

    pub fn energy_aj(&self, cat: Category) -> u64 {
        self.energy_aj[cat.idx()]
    }

    pub fn latency_fs(&self, cat: Category) -> u64 {
        self.latency_split()[cat.idx()]
    }

    pub fn total_energy_aj(&self) -> u64 {
        self.energy_aj.iter().sum()
    }

    pub fn total_latency_fs(&self) -> u64 {
        self.latency_split().iter().sum()
    }

    pub fn energy_fj(&self, cat: Category) -> f64 {
        self.energy_aj(cat) as f64 / AJ_PER_FJ
    }

    pub fn total_energy_fj(&self) -> f64 {
        self.total_energy_aj() as f64 / AJ_PER_FJ
    }

    pub fn total_latency_ns(&self) -> f64 {
        self.total_latency_fs() as f64 / FS_PER_NS
    }

    /// Serial time accumulated on `lane` in the open phase.
    pub fn lane_time_fs(&self, lane: LaneId) -> u64 {
        self.open_lanes.get(&lane).map(|t| t.iter().sum()).unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<OpKind, KindCount> {
        &self.counts
    }

    pub fn count(&self, kind: OpKind) -> KindCount {
        self.counts.get(&kind).copied().unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn report(&self, params: &CostParams) -> Report {
        Report::new(self, params)
    }
}

fn critical_lane(lanes: &BTreeMap<LaneId, PerCat>) -> Option<PerCat> {
    let mut best: Option<(u64, PerCat)> = None;
    for t in lanes.values() {
        let sum: u64 = t.iter().sum();
        if best.is_none_or(|(b, _)| sum > b) {
            best = Some((sum, *t));
        }
    }
    best.map(|(_, t)| t)
}

/// Lane-max latency recomputed from `(phase, lane, fs)` samples, e.g. a trace.
pub fn lane_max_latency_fs<I>(samples: I) -> u64
where
    I: IntoIterator<Item = (u64, LaneId, u64)>,
{
    let mut phases: BTreeMap<u64, BTreeMap<LaneId, u64>> = BTreeMap::new();
    for (phase, lane, fs) in samples {
        *phases.entry(phase).or_default().entry(lane).or_default() += fs;
    }
    phases.values().map(|lanes| lanes.values().copied().max().unwrap_or(0)).sum()
}

/// Per-category values plus a total, in fixed field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CategoryValues {
    pub load: f64,
    pub convolution: f64,
    pub transfer: f64,
    pub pooling_compare: f64,
    pub batch_norm: f64,
    pub quantization: f64,
    pub total: f64,
}

impl CategoryValues {
    fn from_fn(f: impl Fn(Category) -> f64, total: f64) -> Self {
        Self {
            load: f(Category::Load),
            convolution: f(Category::Convolution),
            transfer: f(Category::Transfer),
            pooling_compare: f(Category::PoolingCompare),
            batch_norm: f(Category::BatchNorm),
            quantization: f(Category::Quantization),
            total,
        }
    }

    pub fn get(&self, cat: Category) -> f64 {
        match cat {
            Category::Load => self.load,
            Category::Convolution => self.convolution,
            Category::Transfer => self.transfer,
            Category::PoolingCompare => self.pooling_compare,
            Category::BatchNorm => self.batch_norm,
            Category::Quantization => self.quantization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Percentages {
    pub energy: CategoryValues,
    pub latency: CategoryValues,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsEcho {
    #[serde(flatten)]
    pub params: CostParams,
    pub estimated: Vec<&'static str>,
}

/// Breakdown document (JSON via serde, CSV via [`Report::to_csv`]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub energy_fj: CategoryValues,
    pub latency_ns: CategoryValues,
    pub percentages: Percentages,
    pub events: BTreeMap<&'static str, u64>,
    pub units: BTreeMap<&'static str, u64>,
    pub params_echo: ParamsEcho,
}

fn pct(part: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        part as f64 * 100.0 / total as f64
    }
}

impl Report {
    pub fn new(ledger: &CostLedger, params: &CostParams) -> Self {
        let split = ledger.latency_split();
        let e_total = ledger.total_energy_aj();
        let l_total: u64 = split.iter().sum();
        let pct_total = |t: u64| if t == 0 { 0.0 } else { 100.0 };
        Report {
            energy_fj: CategoryValues::from_fn(|c| ledger.energy_fj(c), e_total as f64 / AJ_PER_FJ),
            latency_ns: CategoryValues::from_fn(|c| split[c.idx()] as f64 / FS_PER_NS, l_total as f64 / FS_PER_NS),
            percentages: Percentages {
                energy: CategoryValues::from_fn(|c| pct(ledger.energy_aj(c), e_total), pct_total(e_total)),
                latency: CategoryValues::from_fn(|c| pct(split[c.idx()], l_total), pct_total(l_total)),
            },
            events: ledger.counts.iter().map(|(k, c)| (k.name(), c.events)).collect(),
            units: ledger.counts.iter().map(|(k, c)| (k.name(), c.units)).collect(),
            params_echo: ParamsEcho {
                params: *params,
                estimated: CostParams::ESTIMATED.to_vec(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,energy_fj,energy_pct,latency_ns,latency_pct\n");
        for cat in Category::ALL {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                cat.name(),
                self.energy_fj.get(cat),
                self.percentages.energy.get(cat),
                self.latency_ns.get(cat),
                self.percentages.latency.get(cat)
            ));
        }
        out.push_str(&format!(
            "total,{},{},{},{}\n",
            self.energy_fj.total, self.percentages.energy.total, self.latency_ns.total, self.percentages.latency.total
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LANE: LaneId = LaneId::Subarray { mat: 0, index: 0 };

    fn ev(kind: OpKind, units: u64, steps: u64) -> CostEvent {
        CostEvent {
            kind,
            category: Category::Load,
            lane: LANE,
            units,
            steps,
        }
    }

    #[test]
    fn one_device_erase() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        l.charge(&rates, &ev(OpKind::DeviceErase, 1, 1));
        assert_eq!(l.total_energy_fj(), 180.0);
        assert_eq!(l.total_latency_ns(), 2.4);
    }

    #[test]
    fn one_row_read() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        l.charge(&rates, &ev(OpKind::RowRead, 1, 1));
        assert_eq!(l.total_energy_fj(), 4.0);
        assert_eq!(l.total_latency_ns(), 0.17);
    }

    #[test]
    fn zero_multiplicity_is_a_no_op() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        l.charge(&rates, &ev(OpKind::BitProgram, 0, 0));
        assert_eq!(l, CostLedger::new());
    }

    #[test]
    fn per_bit_program_energy_times_group_is_device_energy() {
        for g in [1usize, 2, 4, 8] {
            let rates = CostParams::default().rates(g);
            assert_eq!(rates.energy_per_unit(OpKind::BitProgram) * g as u64, 840_000);
        }
    }

    #[test]
    fn parallel_lanes_take_the_max() {
        let rates = CostParams {
            bus_beat_latency_ns: 10.0,
            ..CostParams::default()
        }
        .rates(8);
        let mut l = CostLedger::new();
        for idx in 0..2 {
            l.charge(
                &rates,
                &CostEvent {
                    lane: LaneId::subarray(0, idx),
                    ..ev(OpKind::BusBeat, 1, 1)
                },
            );
        }
        l.barrier();
        assert_eq!(l.total_latency_ns(), 10.0);
        assert_eq!(l.total_energy_fj(), 80.0);
    }

    #[test]
    fn serial_chain_and_program_lane_time() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        for _ in 0..3 {
            l.charge(&rates, &ev(OpKind::RowRead, 1, 1));
        }
        assert_eq!(l.total_latency_fs(), 510_000);
        let mut l = CostLedger::new();
        l.charge(&rates, &ev(OpKind::BitProgram, 8, 8));
        assert_eq!(l.lane_time_fs(LANE), 40_000_000);
    }

    #[test]
    fn unknown_op_kind_is_rejected() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        assert!(matches!(
            l.charge_named(&rates, "teleport", Category::Load, LANE, 1, 1),
            Err(Error::UnknownOpKind(_))
        ));
        l.charge_named(&rates, "row_read", Category::Load, LANE, 1, 1).unwrap();
        assert_eq!(l.count(OpKind::RowRead).events, 1);
    }

    #[test]
    fn empty_report_is_all_zero() {
        let r = CostLedger::new().report(&CostParams::default());
        assert_eq!(r.energy_fj, CategoryValues::default());
        assert_eq!(r.percentages.energy, CategoryValues::default());
        assert_eq!(r.percentages.latency.total, 0.0);
        assert!(r.events.is_empty());
    }

    #[test]
    fn single_category_report_is_100_percent() {
        let rates = CostParams::default().rates(8);
        let mut l = CostLedger::new();
        l.charge(
            &rates,
            &CostEvent {
                category: Category::Convolution,
                ..ev(OpKind::RowAnd, 3, 3)
            },
        );
        let r = l.report(&CostParams::default());
        assert_eq!(r.percentages.energy.convolution, 100.0);
        assert_eq!(r.percentages.latency.convolution, 100.0);
        assert_eq!(r.percentages.energy.load, 0.0);
        let csv = r.to_csv();
        assert!(csv.lines().nth(2).unwrap().starts_with("convolution,12,100,"));
        assert_eq!(csv.lines().count(), 8);
    }

    #[test]
    fn negative_params_fail_validation() {
        let p = CostParams {
            read_energy_fj: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(CostParams::default().validate().is_ok());
    }

    #[test]
    fn lane_max_from_samples() {
        let a = LaneId::subarray(0, 0);
        let b = LaneId::subarray(0, 1);
        let t = lane_max_latency_fs([(0, a, 10), (0, b, 7), (0, a, 5), (1, b, 3)]);
        assert_eq!(t, 18);
    }

    fn arb_event() -> impl Strategy<Value = CostEvent> {
        (0usize..10, 0usize..6, 0usize..3, 0u64..50, 0u64..5).prop_map(|(k, c, lane, units, steps)| CostEvent {
            kind: OpKind::ALL[k],
            category: Category::ALL[c],
            lane: LaneId::subarray(0, lane),
            units,
            steps,
        })
    }

    fn ledger_of(rates: &CostRates, events: &[CostEvent]) -> CostLedger {
        let mut l = CostLedger::new();
        for e in events {
            l.charge(rates, e);
        }
        l
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in prop::collection::vec(arb_event(), 0..20),
                                                b in prop::collection::vec(arb_event(), 0..20),
                                                c in prop::collection::vec(arb_event(), 0..20)) {
            let rates = CostParams::default().rates(8);
            let (la, lb, lc) = (ledger_of(&rates, &a), ledger_of(&rates, &b), ledger_of(&rates, &c));
            let mut ab = la.clone();
            ab.merge(&lb);
            let mut ba = lb.clone();
            ba.merge(&la);
            prop_assert_eq!(&ab, &ba);
            let mut ab_c = ab.clone();
            ab_c.merge(&lc);
            let mut bc = lb.clone();
            bc.merge(&lc);
            let mut a_bc = la.clone();
            a_bc.merge(&bc);
            prop_assert_eq!(&ab_c, &a_bc);
            // serial charging equals the merged result
            let all: Vec<_> = a.iter().chain(&b).chain(&c).copied().collect();
            prop_assert_eq!(ledger_of(&rates, &all), a_bc);
        }

        #[test]
        fn doubling_params_doubles_costs(events in prop::collection::vec(arb_event(), 0..30)) {
            let base = CostParams::default();
            let l1 = ledger_of(&base.rates(8), &events);
            let l2 = ledger_of(&base.scaled(2.0).rates(8), &events);
            for cat in Category::ALL {
                prop_assert_eq!(l2.energy_aj(cat), 2 * l1.energy_aj(cat));
                prop_assert_eq!(l2.latency_fs(cat), 2 * l1.latency_fs(cat));
            }
            prop_assert_eq!(l1.counts(), l2.counts());
        }
    }
}
