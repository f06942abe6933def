//! Bitwise convolution over bit-planes spread across subarrays.
//!
//! Input plane `n` lives in source subarray `n` (row `c*H + y`, column `x`).
//! A weight tile (kernel, sign, plane `m`, a chunk of `(c, dy)` rows) is
//! loaded once into every source's buffer and slid across the input through
//! window routing. Each pass handles one output row `oy` and the output
//! columns `ox ≡ r (mod q)`, whose windows do not overlap. The per-column
//! counts are streamed out LSB first and land in an accumulation subarray
//! per output channel, column `oy*OW + ox`, where bit-serial addition folds
//! them into a running sum weighted by `2^(n+m)`.
//!
//! Sources follow a rotation: in period `t` source `n` runs pass
//! `(t + n) mod T`, so sources active in the same period never write the
//! same accumulation column.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::Serialize;

use super::workspace::{Region, Value, Workspace};
use super::{bit_length, FixedPointTensor, Overflow, Signedness, VerticalOperand};
use crate::cost::{Category, CostLedger, CostParams, LaneId, OpKind};
use crate::error::{Error, Result};
use crate::meter::{par_lanes, Meter, Recorder};
use crate::schedule::{execute, FuSource, MicroOp, Schedule, ShiftDest};
use crate::subarray::{bits_from_fn, ones, zeros, BitRow, Routing, Subarray, SubarrayGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub in_bits: u32,
    pub weight_bits: u32,
    pub signed_weights: bool,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::StrideInvalid("stride must be at least 1".into()));
        }
        if [self.channels, self.height, self.width, self.kernels, self.kh, self.kw].contains(&0) {
            return Err(Error::DimMismatch(format!("zero-sized convolution dimension in {self:?}")));
        }
        if self.kh > self.height || self.kw > self.width {
            return Err(Error::DimMismatch(format!(
                "{}x{} window does not fit a {}x{} input",
                self.kh, self.kw, self.height, self.width
            )));
        }
        if !(1..=16).contains(&self.in_bits) || !(1..=16).contains(&self.weight_bits) {
            return Err(Error::DimMismatch(format!(
                "bit widths must be in 1..=16 (input {}, weight {})",
                self.in_bits, self.weight_bits
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.height - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kw) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn weight_index(&self, k: usize, c: usize, dy: usize, dx: usize) -> usize {
        ((k * self.channels + c) * self.kh + dy) * self.kw + dx
    }

    pub fn signs(&self) -> &'static [Sign] {
        if self.signed_weights {
            &[Sign::Pos, Sign::Neg]
        } else {
            &[Sign::Pos]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn index(self) -> usize {
        self as usize
    }

    /// The part of `w` this sign's pass accumulates.
    pub fn magnitude(self, w: i64) -> u64 {
        match self {
            Sign::Pos => w.max(0) as u64,
            Sign::Neg => (-w).max(0) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pass {
    pub oy: usize,
    pub residue: usize,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WeightTile {
    pub kernel: usize,
    pub sign: Sign,
    pub plane: u32,
    pub chunk: usize,
}

/// One (tile, period, source) slot of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairEntry {
    pub tile: WeightTile,
    pub period: usize,
    pub source: usize,
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvPlan {
    pub geometry: ConvGeometry,
    pub columns: usize,
    pub passes: Vec<Pass>,
    pub periods: usize,
    /// `(c, dy)` weight rows per buffer load.
    pub chunks: Vec<Vec<(usize, usize)>>,
    pub counter_bits: usize,
    pub position_tiles: usize,
}

impl ConvPlan {
    pub fn new(g: ConvGeometry, sub: &SubarrayGeometry, layer: usize, kind: &'static str) -> Result<Self> {
        g.validate()?;
        if g.width > sub.columns {
            return Err(Error::capacity(
                layer,
                kind,
                format!("input width {} exceeds {} columns", g.width, sub.columns),
            ));
        }
        if g.channels * g.height > sub.bit_rows() {
            return Err(Error::capacity(
                layer,
                kind,
                format!(
                    "{} channels x {} rows exceed {} rows per subarray",
                    g.channels,
                    g.height,
                    sub.bit_rows()
                ),
            ));
        }
        let (oh, ow) = (g.out_h(), g.out_w());
        let q = g.kw.div_ceil(g.stride);
        let mut passes = Vec::new();
        for oy in 0..oh {
            for r in 0..q.min(ow) {
                passes.push(Pass {
                    oy,
                    residue: r,
                    positions: (r..ow).step_by(q).collect(),
                });
            }
        }
        let pairs: Vec<(usize, usize)> = (0..g.channels)
            .flat_map(|c| (0..g.kh).map(move |dy| (c, dy)))
            .collect();
        let chunks: Vec<Vec<(usize, usize)>> = pairs.chunks(sub.buffer_rows).map(<[_]>::to_vec).collect();
        let counter_bits = chunks
            .iter()
            .map(|c| bit_length(c.len() as u128) as usize)
            .max()
            .unwrap_or(1);
        let plan = Self {
            geometry: g,
            columns: sub.columns,
            periods: passes.len().max(g.in_bits as usize),
            passes,
            chunks,
            counter_bits,
            position_tiles: g.positions().div_ceil(sub.columns),
        };
        if plan.staging_rows().div_ceil(sub.group_size) + 2 > sub.device_rows {
            return Err(Error::capacity(
                layer,
                kind,
                format!(
                    "{} staging rows leave no room for partial sums in {} rows",
                    plan.staging_rows(),
                    sub.bit_rows()
                ),
            ));
        }
        Ok(plan)
    }

    pub fn sources(&self) -> usize {
        self.geometry.in_bits as usize
    }

    pub fn pass_for(&self, period: usize, source: usize) -> Option<usize> {
        let p = (period + source) % self.periods;
        (p < self.passes.len()).then_some(p)
    }

    pub fn tiles(&self, kernels: Range<usize>) -> Vec<WeightTile> {
        let mut out = Vec::new();
        for kernel in kernels {
            for &sign in self.geometry.signs() {
                for plane in 0..self.geometry.weight_bits {
                    for chunk in 0..self.chunks.len() {
                        out.push(WeightTile {
                            kernel,
                            sign,
                            plane,
                            chunk,
                        });
                    }
                }
            }
        }
        out
    }

    /// (position tile, column) of output position `(oy, ox)`.
    pub fn column_of(&self, oy: usize, ox: usize) -> (usize, usize) {
        let j = oy * self.geometry.out_w() + ox;
        (j / self.columns, j % self.columns)
    }

    pub fn pass_columns(&self, pass: usize) -> Vec<(usize, usize)> {
        let p = &self.passes[pass];
        p.positions.iter().map(|&ox| self.column_of(p.oy, ox)).collect()
    }

    pub fn staging_rows(&self) -> usize {
        self.sources() * self.geometry.kw * self.counter_bits
    }

    fn staging_row(&self, source: usize, dx: usize, bit: usize) -> usize {
        (source * self.geometry.kw + dx) * self.counter_bits + bit
    }

    pub fn entries(&self, kernels: Range<usize>) -> Vec<PairEntry> {
        let mut out = Vec::new();
        for tile in self.tiles(kernels) {
            for period in 0..self.periods {
                for source in 0..self.sources() {
                    if let Some(pass) = self.pass_for(period, source) {
                        out.push(PairEntry {
                            tile,
                            period,
                            source,
                            pass,
                        });
                    }
                }
            }
        }
        out
    }

    /// Number of times each (kernel, sign, chunk, pass, input plane, weight
    /// plane) combination is scheduled.
    pub fn pair_coverage(&self, kernels: Range<usize>) -> BTreeMap<(usize, Sign, usize, usize, usize, u32), usize> {
        let mut out = BTreeMap::new();
        for e in self.entries(kernels) {
            let key = (e.tile.kernel, e.tile.sign, e.tile.chunk, e.pass, e.source, e.tile.plane);
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    /// Structural checks: sources active in one period write disjoint
    /// accumulation columns, and every source visits every pass once.
    pub fn verify(&self) -> Result<()> {
        for t in 0..self.periods {
            let mut seen = BTreeSet::new();
            for n in 0..self.sources() {
                if let Some(p) = self.pass_for(t, n) {
                    for col in self.pass_columns(p) {
                        if !seen.insert(col) {
                            return Err(Error::Invariant(format!(
                                "period {t}: accumulation column {col:?} written by two sources"
                            )));
                        }
                    }
                }
            }
        }
        for n in 0..self.sources() {
            let mut visits = vec![0usize; self.passes.len()];
            for t in 0..self.periods {
                if let Some(p) = self.pass_for(t, n) {
                    visits[p] += 1;
                }
            }
            if visits.iter().any(|&v| v != 1) {
                return Err(Error::Invariant(format!("source {n} does not visit every pass exactly once")));
            }
        }
        let mut covered = vec![false; self.geometry.positions()];
        for p in &self.passes {
            for &ox in &p.positions {
                let j = p.oy * self.geometry.out_w() + ox;
                if std::mem::replace(&mut covered[j], true) {
                    return Err(Error::Invariant(format!("output position {j} belongs to two passes")));
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::Invariant("an output position is not covered by any pass".into()));
        }
        Ok(())
    }

    /// Active columns of accumulation subarrays for position tile `pt`.
    pub fn acc_mask(&self, pt: usize) -> BitRow {
        let total = self.geometry.positions();
        bits_from_fn(self.columns, |c| pt * self.columns + c < total)
    }
}

/// A subarray taking part in a layer, tagged with its cost lane.
#[derive(Debug, Clone)]
pub struct Unit {
    pub lane: LaneId,
    pub ws: Workspace,
}

#[derive(Debug, Clone)]
pub struct AccUnit {
    pub unit: Unit,
    pub kernel: usize,
    pub ptile: usize,
    staging: Option<Region>,
    /// Running sums for the positive and negative weight parts.
    pub sums: [Option<Value>; 2],
}

/// The subarrays of one mat working on a range of output channels.
#[derive(Debug, Clone)]
pub struct ConvMat {
    pub mat: usize,
    pub kernels: Range<usize>,
    pub sources: Vec<Unit>,
    pub accs: Vec<AccUnit>,
}

impl ConvMat {
    /// `accs` are assigned kernel-major, position tile minor.
    pub fn new(mat: usize, kernels: Range<usize>, sources: Vec<Unit>, accs: Vec<Unit>, plan: &ConvPlan) -> Result<Self> {
        if sources.len() != plan.sources() || accs.len() != kernels.len() * plan.position_tiles {
            return Err(Error::Invariant(format!(
                "mat {mat}: {} sources and {} accumulators do not match the plan",
                sources.len(),
                accs.len()
            )));
        }
        let pts = plan.position_tiles;
        let accs = accs
            .into_iter()
            .enumerate()
            .map(|(i, unit)| AccUnit {
                unit,
                kernel: kernels.start + i / pts,
                ptile: i % pts,
                staging: None,
                sums: [None, None],
            })
            .collect();
        Ok(Self {
            mat,
            kernels,
            sources,
            accs,
        })
    }

    pub fn into_units(self) -> Vec<Unit> {
        let mut out = self.sources;
        out.extend(self.accs.into_iter().map(|a| a.unit));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvEnv {
    pub layer: usize,
    pub kind: &'static str,
    pub bus_width: usize,
    pub input_category: Category,
}

struct Shared<'a> {
    plan: &'a ConvPlan,
    weights: &'a [i64],
    beats_per_row: u64,
}

type PhaseMeters = Vec<Vec<Meter>>;

impl Shared<'_> {
    fn buffer_rows(&self, tile: &WeightTile) -> Vec<BitRow> {
        let g = &self.plan.geometry;
        self.plan.chunks[tile.chunk]
            .iter()
            .map(|&(c, dy)| {
                bits_from_fn(self.plan.columns, |dx| {
                    dx < g.kw
                        && (tile.sign.magnitude(self.weights[g.weight_index(tile.kernel, c, dy, dx)]) >> tile.plane) & 1 == 1
                })
            })
            .collect()
    }

    fn bound(&self, kernel: usize, sign: Sign) -> i128 {
        kernel_bound(&self.plan.geometry, self.weights, kernel, sign)
    }

    fn bus_meter(&self, rec: &Recorder, mat: usize, category: Category, rows: u64) -> Meter {
        let mut m = rec.meter(LaneId::bus(mat), category);
        let beats = rows * self.beats_per_row;
        m.charge(OpKind::BusBeat, beats, beats);
        m.close("bus_transfer", &[]);
        m
    }
}

/// Largest value the `sign` part of kernel `kernel` can accumulate.
pub fn kernel_bound(g: &ConvGeometry, weights: &[i64], kernel: usize, sign: Sign) -> i128 {
    let per_kernel = g.channels * g.kh * g.kw;
    let total: u128 = weights[kernel * per_kernel..(kernel + 1) * per_kernel]
        .iter()
        .map(|&w| sign.magnitude(w) as u128)
        .sum();
    (total * ((1u128 << g.in_bits) - 1)) as i128
}

fn absorb_all(rec: &mut Recorder, meters: PhaseMeters) {
    for m in meters.into_iter().flatten() {
        rec.absorb(m);
    }
    rec.barrier();
}

fn region_groups(region: &Region, group_size: usize) -> Range<usize> {
    region.start / group_size..(region.start + region.len.max(1)).div_ceil(group_size)
}

/// Places the input planes, then accumulates every weight tile into the
/// accumulation subarrays. Afterwards each [`AccUnit`] holds its sums.
pub fn run_conv(
    plan: &ConvPlan,
    input: &[i64],
    weights: &[i64],
    mats: &mut [ConvMat],
    rec: &mut Recorder,
    env: &ConvEnv,
) -> Result<()> {
    let g = plan.geometry;
    if input.len() != g.channels * g.height * g.width {
        return Err(Error::DimMismatch(format!(
            "input has {} values, convolution expects {}",
            input.len(),
            g.channels * g.height * g.width
        )));
    }
    if weights.len() != g.kernels * g.channels * g.kh * g.kw {
        return Err(Error::DimMismatch(format!(
            "weights have {} values, convolution expects {}",
            weights.len(),
            g.kernels * g.channels * g.kh * g.kw
        )));
    }
    let sh = Shared {
        plan,
        weights,
        beats_per_row: plan.columns.div_ceil(env.bus_width.max(1)) as u64,
    };
    let meters = input_phase(&sh, rec, input, mats, env)?;
    absorb_all(rec, meters);

    let tiles: Vec<Vec<WeightTile>> = mats.iter().map(|m| plan.tiles(m.kernels.clone())).collect();
    let max_tiles = tiles.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..max_tiles {
        let current: Vec<Option<WeightTile>> = tiles.iter().map(|t| t.get(i).copied()).collect();
        let meters = weight_phase(&sh, rec, &current, mats)?;
        absorb_all(rec, meters);
        for t in 0..plan.periods {
            let meters = period_phase(&sh, rec, &current, mats, t)?;
            absorb_all(rec, meters);
        }
        let meters = flush_phase(&sh, rec, &current, mats)?;
        absorb_all(rec, meters);
    }
    for mat in mats.iter_mut() {
        for acc in &mut mat.accs {
            if let Some(r) = acc.staging.take() {
                acc.unit.ws.release(r);
            }
        }
    }
    Ok(())
}

fn input_phase(sh: &Shared<'_>, rec: &Recorder, input: &[i64], mats: &mut [ConvMat], env: &ConvEnv) -> Result<PhaseMeters> {
    let plan = sh.plan;
    let g = plan.geometry;
    let cols = plan.columns;
    let planes: Vec<Vec<BitRow>> = (0..plan.sources())
        .map(|n| {
            (0..g.channels * g.height)
                .map(|row| bits_from_fn(cols, |x| x < g.width && (input[row * g.width + x] >> n) & 1 == 1))
                .collect()
        })
        .collect();
    let staging_rows = plan.staging_rows();
    par_lanes(mats, |_, mat| {
        let mut out = par_lanes(&mut mat.sources, |n, u| {
            let mut m = rec.meter(u.lane, env.input_category);
            u.ws.reset(env.layer, env.kind, ones(cols));
            let region = u.ws.write_rows(&planes[n], &mut m)?;
            if region.start != 0 {
                return Err(Error::Invariant("input planes must start at row 0".into()));
            }
            Ok(m)
        })?;
        out.push(sh.bus_meter(rec, mat.mat, env.input_category, (plan.sources() * g.channels * g.height) as u64));
        for acc in &mut mat.accs {
            acc.unit.ws.reset(env.layer, env.kind, plan.acc_mask(acc.ptile));
            acc.staging = Some(acc.unit.ws.alloc(staging_rows)?);
            acc.sums = [None, None];
        }
        Ok(out)
    })
}

fn weight_phase(sh: &Shared<'_>, rec: &Recorder, current: &[Option<WeightTile>], mats: &mut [ConvMat]) -> Result<PhaseMeters> {
    par_lanes(mats, |mi, mat| {
        let Some(tile) = current[mi] else {
            return Ok(Vec::new());
        };
        let rows = sh.buffer_rows(&tile);
        let mut out = par_lanes(&mut mat.sources, |_, u| {
            let mut m = rec.meter(u.lane, Category::Load);
            for (slot, r) in rows.iter().enumerate() {
                u.ws.subarray_mut().load_buffer_row(slot, r, &mut m)?;
            }
            Ok(m)
        })?;
        out.push(sh.bus_meter(rec, mat.mat, Category::Load, rows.len() as u64));
        let accs = par_lanes(&mut mat.accs, |_, a| {
            let mut m = rec.meter(a.unit.lane, Category::Convolution);
            if a.kernel == tile.kernel {
                let staging = a.staging.ok_or_else(|| Error::Invariant("staging rows missing".into()))?;
                let gs = a.unit.ws.subarray().geometry().group_size;
                let mut s = Schedule::new("stage_erase", Category::Convolution, a.unit.ws.mask().clone());
                for dr in region_groups(&staging, gs) {
                    s.erase(dr);
                }
                execute(a.unit.ws.subarray_mut(), &s, &mut m)?;
            }
            Ok(m)
        })?;
        out.extend(accs);
        Ok(out)
    })
}

fn period_phase(
    sh: &Shared<'_>,
    rec: &Recorder,
    current: &[Option<WeightTile>],
    mats: &mut [ConvMat],
    period: usize,
) -> Result<PhaseMeters> {
    let plan = sh.plan;
    let g = plan.geometry;
    let cols = plan.columns;
    par_lanes(mats, |mi, mat| {
        let Some(tile) = current[mi] else {
            return Ok(Vec::new());
        };
        let chunk = &plan.chunks[tile.chunk];
        let wc = bit_length(chunk.len() as u128) as usize;
        let results = par_lanes(&mut mat.sources, |n, u| {
            let mut m = rec.meter(u.lane, Category::Convolution);
            let Some(p) = plan.pass_for(period, n) else {
                return Ok((m, None));
            };
            let pass = &plan.passes[p];
            let routing = Routing::Windows {
                offsets: pass.positions.iter().map(|ox| ox * g.stride).collect(),
                width: g.kw,
            };
            let mut s = Schedule::new("conv_pass", Category::Convolution, ones(cols));
            for (slot, &(c, dy)) in chunk.iter().enumerate() {
                s.push(MicroOp::Sense {
                    row: c * g.height + pass.oy * g.stride + dy,
                    fu: FuSource::Buffer {
                        slot,
                        routing: routing.clone(),
                    },
                });
                s.count();
            }
            for _ in 0..wc {
                s.shift_to(ShiftDest::Export);
            }
            let rows = execute(u.ws.subarray_mut(), &s, &mut m)?;
            if !u.ws.subarray().counters_are_zero() {
                return Err(Error::Invariant("counter stream longer than its export".into()));
            }
            Ok((m, Some((p, rows))))
        })?;
        let mut out = Vec::new();
        let mut arrivals = Vec::new();
        for (n, (m, stream)) in results.into_iter().enumerate() {
            out.push(m);
            if let Some(s) = stream {
                arrivals.push((n, s));
            }
        }
        out.push(sh.bus_meter(rec, mat.mat, Category::Transfer, (arrivals.len() * wc) as u64));
        let accs = par_lanes(&mut mat.accs, |_, a| {
            let mut m = rec.meter(a.unit.lane, Category::Transfer);
            if a.kernel != tile.kernel {
                return Ok(m);
            }
            let staging = a.staging.ok_or_else(|| Error::Invariant("staging rows missing".into()))?;
            for (n, (p, rows)) in &arrivals {
                let pass = &plan.passes[*p];
                for dx in 0..g.kw {
                    for (b, row) in rows.iter().enumerate() {
                        let mut bits = zeros(cols);
                        for &ox in &pass.positions {
                            let (pt, col) = plan.column_of(pass.oy, ox);
                            if pt == a.ptile && row[ox * g.stride + dx] {
                                bits.set(col, true);
                            }
                        }
                        if bits.any() {
                            let r = staging.start + plan.staging_row(*n, dx, b);
                            a.unit.ws.subarray_mut().program_bit_row(r, &bits, &mut m)?;
                        }
                    }
                }
            }
            Ok(m)
        })?;
        out.extend(accs);
        Ok(out)
    })
}

fn flush_phase(sh: &Shared<'_>, rec: &Recorder, current: &[Option<WeightTile>], mats: &mut [ConvMat]) -> Result<PhaseMeters> {
    let plan = sh.plan;
    let g = plan.geometry;
    par_lanes(mats, |mi, mat| {
        let Some(tile) = current[mi] else {
            return Ok(Vec::new());
        };
        let wc = bit_length(plan.chunks[tile.chunk].len() as u128) as usize;
        par_lanes(&mut mat.accs, |_, a| {
            let mut m = rec.meter(a.unit.lane, Category::Convolution);
            if a.kernel != tile.kernel {
                return Ok(m);
            }
            let staging = a.staging.ok_or_else(|| Error::Invariant("staging rows missing".into()))?;
            let bound = sh.bound(tile.kernel, tile.sign);
            let width = (bit_length(bound as u128) as usize).max(1);
            let si = tile.sign.index();
            let mut ops = Vec::new();
            if let Some(v) = &a.sums[si] {
                ops.push(v.operand.clone());
            }
            for n in 0..plan.sources() {
                for dx in 0..g.kw {
                    let rows = (0..wc).map(|b| staging.start + plan.staging_row(n, dx, b)).collect();
                    ops.push(VerticalOperand::shifted(rows, n + tile.plane as usize));
                }
            }
            let region = a.unit.ws.add(ops, width, Overflow::Wrap, &mut m)?;
            if let Some(old) = a.sums[si].take() {
                a.unit.ws.release_value(old);
            }
            a.sums[si] = Some(Value::unsigned(region.operand(), vec![region], bound));
            Ok(m)
        })
    })
}

/// Integer sliding-window dot product of a single-channel input with one
/// kernel, computed in memory through bit-planes.
pub fn bitwise_convolution(
    input: &FixedPointTensor,
    weight: &FixedPointTensor,
    stride: usize,
    params: &CostParams,
) -> Result<(FixedPointTensor, CostLedger)> {
    let ([h, w], [kh, kw]) = (input.dims.as_slice(), weight.dims.as_slice()) else {
        return Err(Error::DimMismatch("bitwise convolution takes 2-D input and weight".into()));
    };
    if input.signedness != Signedness::Unsigned {
        return Err(Error::InvalidTensor("input planes must be unsigned".into()));
    }
    let geometry = ConvGeometry {
        channels: 1,
        height: *h,
        width: *w,
        kernels: 1,
        kh: *kh,
        kw: *kw,
        stride,
        in_bits: input.bits,
        weight_bits: weight.bits,
        signed_weights: weight.signedness == Signedness::TwosComplement,
    };
    let sub = SubarrayGeometry::default();
    let kind = "bitwise_convolution";
    let plan = ConvPlan::new(geometry, &sub, 0, kind)?;
    plan.verify()?;
    let n = plan.sources();
    if n + plan.position_tiles > 16 {
        return Err(Error::capacity(0, kind, "more than 16 subarrays needed"));
    }
    let unit = |i: usize| -> Result<Unit> {
        Ok(Unit {
            lane: LaneId::subarray(0, i),
            ws: Workspace::new(Subarray::new(sub)?),
        })
    };
    let sources = (0..n).map(unit).collect::<Result<Vec<_>>>()?;
    let accs = (n..n + plan.position_tiles).map(unit).collect::<Result<Vec<_>>>()?;
    let mut mats = vec![ConvMat::new(0, 0..1, sources, accs, &plan)?];
    let mut rec = Recorder::new(*params, sub.group_size, false);
    let env = ConvEnv {
        layer: 0,
        kind,
        bus_width: 128,
        input_category: Category::Load,
    };
    run_conv(&plan, &input.values, &weight.values, &mut mats, &mut rec, &env)?;

    let positions = geometry.positions();
    let mut values = vec![0i64; positions];
    for acc in &mut mats[0].accs {
        let mut m = rec.meter(acc.unit.lane, Category::Transfer);
        for (si, sign) in [(0, 1i64), (1, -1i64)] {
            if let Some(v) = &acc.sums[si] {
                let got = acc.unit.ws.read_values(&v.operand, &mut m)?;
                for (col, val) in got.iter().enumerate() {
                    let j = acc.ptile * plan.columns + col;
                    if j < positions {
                        values[j] += sign * *val as i64;
                    }
                }
            }
        }
        rec.absorb(m);
    }
    let pos = kernel_bound(&geometry, &weight.values, 0, Sign::Pos);
    let neg = if geometry.signed_weights {
        kernel_bound(&geometry, &weight.values, 0, Sign::Neg)
    } else {
        0
    };
    let (bits, signedness) = if geometry.signed_weights {
        (bit_length(pos.max(neg) as u128) + 1, Signedness::TwosComplement)
    } else {
        (bit_length(pos as u128).max(1), Signedness::Unsigned)
    };
    let out = FixedPointTensor::new(vec![geometry.out_h(), geometry.out_w()], bits, signedness, values)?;
    let (ledger, _) = rec.into_parts();
    Ok((out, ledger))
}

/// Direct integer sliding-window dot product, used as the reference.
pub fn reference_convolution(input: &FixedPointTensor, weight: &FixedPointTensor, stride: usize) -> Vec<i64> {
    let (h, w) = input.matrix_dims();
    let (kh, kw) = weight.matrix_dims();
    let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0i64;
            for dy in 0..kh {
                for dx in 0..kw {
                    acc += input.values[(oy * stride + dy) * w + ox * stride + dx] * weight.values[dy * kw + dx];
                }
            }
            out.push(acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometry(c: usize, h: usize, w: usize, k: usize, kh: usize, kw: usize, s: usize, bi: u32, bw: u32) -> ConvGeometry {
        ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernels: k,
            kh,
            kw,
            stride: s,
            in_bits: bi,
            weight_bits: bw,
            signed_weights: true,
        }
    }

    #[test]
    fn one_by_one_product() {
        let i = FixedPointTensor::unsigned(vec![1, 1], 2, vec![3]).unwrap();
        let w = FixedPointTensor::unsigned(vec![1, 1], 2, vec![2]).unwrap();
        let (out, ledger) = bitwise_convolution(&i, &w, 1, &CostParams::default()).unwrap();
        assert_eq!(out.values, vec![6]);
        assert!(ledger.total_energy_aj() > 0);
    }

    #[test]
    fn zero_weight_gives_zero() {
        let i = FixedPointTensor::unsigned(vec![3, 4], 3, (0..12).map(|v| v % 8).collect()).unwrap();
        let w = FixedPointTensor::unsigned(vec![2, 2], 2, vec![0; 4]).unwrap();
        let (out, _) = bitwise_convolution(&i, &w, 1, &CostParams::default()).unwrap();
        assert_eq!(out.values, vec![0; 6]);
    }

    #[test]
    fn figure_sized_example() {
        let i = FixedPointTensor::unsigned(vec![2, 5], 2, vec![1, 2, 3, 0, 1, 3, 3, 2, 1, 0]).unwrap();
        let w = FixedPointTensor::unsigned(vec![2, 2], 2, vec![2, 1, 3, 1]).unwrap();
        let (out, _) = bitwise_convolution(&i, &w, 1, &CostParams::default()).unwrap();
        assert_eq!(out.values, reference_convolution(&i, &w, 1));
        assert_eq!(out.values.len(), 4);
    }

    #[test]
    fn errors() {
        let i = FixedPointTensor::unsigned(vec![2, 2], 2, vec![0; 4]).unwrap();
        let w = FixedPointTensor::unsigned(vec![3, 1], 2, vec![0; 3]).unwrap();
        assert!(matches!(
            bitwise_convolution(&i, &w, 1, &CostParams::default()),
            Err(Error::DimMismatch(_))
        ));
        let w = FixedPointTensor::unsigned(vec![1, 1], 2, vec![0]).unwrap();
        assert!(matches!(
            bitwise_convolution(&i, &w, 0, &CostParams::default()),
            Err(Error::StrideInvalid(_))
        ));
    }

    #[test]
    fn four_bit_plan_covers_every_plane_pair_once() {
        let g = geometry(1, 8, 8, 1, 3, 3, 1, 4, 4);
        let plan = ConvPlan::new(g, &SubarrayGeometry::default(), 0, "conv").unwrap();
        plan.verify().unwrap();
        let cov = plan.pair_coverage(0..1);
        let expected = 2 * plan.chunks.len() * plan.passes.len() * 4 * 4;
        assert_eq!(cov.len(), expected);
        assert!(cov.values().all(|&c| c == 1));
    }

    #[test]
    fn small_plans() {
        let sub = SubarrayGeometry::default();
        let p = ConvPlan::new(geometry(1, 1, 1, 1, 1, 1, 1, 2, 2), &sub, 0, "conv").unwrap();
        assert_eq!(p.sources(), 2);
        assert_eq!(p.position_tiles, 1);
        assert_eq!(p.periods, 2);
        let p = ConvPlan::new(geometry(1, 1, 1, 1, 1, 1, 1, 1, 1), &sub, 0, "conv").unwrap();
        assert_eq!((p.sources(), p.periods, p.passes.len()), (1, 1, 1));
        let wide = ConvPlan::new(geometry(1, 4, 200, 1, 1, 1, 1, 2, 2), &sub, 5, "conv");
        assert!(matches!(wide, Err(Error::CapacityExceeded { layer: 5, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn matches_reference(
            h in 1usize..=6, w in 1usize..=6, kh in 1usize..=3, kw in 1usize..=3,
            stride in 1usize..=2, bi in 1u32..=4, bw in 1u32..=4, signed in any::<bool>(),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            prop_assume!(kh <= h && kw <= w);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let input = FixedPointTensor::unsigned(
                vec![h, w], bi, (0..h * w).map(|_| rng.gen_range(0..1i64 << bi)).collect()).unwrap();
            let (lo, hi, sg) = if signed {
                (-(1i64 << (bw - 1)), (1i64 << (bw - 1)) - 1, Signedness::TwosComplement)
            } else {
                (0, (1i64 << bw) - 1, Signedness::Unsigned)
            };
            let weight = FixedPointTensor::new(
                vec![kh, kw], bw, sg, (0..kh * kw).map(|_| rng.gen_range(lo..=hi)).collect()).unwrap();
            let (out, _) = bitwise_convolution(&input, &weight, stride, &CostParams::default()).unwrap();
            prop_assert_eq!(out.values, reference_convolution(&input, &weight, stride));
        }
    }
}
