//! Layer-by-layer execution on the simulated machine.

use super::model::{ConvLayer, Layer, Network, PoolLayer, PoolOp, PostOps};
use super::oracle::argmax;
use super::plan::{plan_mapping, ArchConfig, ConvMapping, LayerMapping, MappingPlan, PoolMapping};
use crate::cost::{Category, CostLedger, CostParams, LaneId, OpKind};
use crate::device::ProgramCheck;
use crate::error::{Error, Result};
use crate::meter::{par_lanes, Meter, Recorder, TraceRecord};
use crate::primitives::conv::{run_conv, AccUnit, ConvEnv, ConvMat, Unit};
use crate::primitives::workspace::{AffineOut, Term};
use crate::primitives::{bit_length, Extreme, FixedPointTensor, Overflow, Value, Workspace};
use crate::subarray::{bits_from_fn, Subarray};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub arch: ArchConfig,
    pub params: CostParams,
    pub tracing: bool,
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            params: CostParams::default(),
            tracing: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub output: FixedPointTensor,
    pub layer_outputs: Vec<FixedPointTensor>,
    pub argmax: Option<usize>,
    pub ledger: CostLedger,
    pub trace: Vec<TraceRecord>,
    pub plan: MappingPlan,
}

/// Owns every subarray of the machine (created on first use) and the
/// global cost recorder.
pub struct Machine {
    arch: ArchConfig,
    rec: Recorder,
    slots: Vec<Vec<Option<Workspace>>>,
}

fn sign_terms<'a>(p: &'a Value, n: Option<&'a Value>, coef: i64) -> Vec<Term<'a>> {
    let mut t = vec![Term { value: p, coef }];
    if let Some(n) = n {
        t.push(Term { value: n, coef: -coef });
    }
    t
}

fn release_all(ws: &mut Workspace, values: impl IntoIterator<Item = Option<Value>>) {
    for v in values.into_iter().flatten() {
        ws.release_value(v);
    }
}

/// Batch norm, ReLU and quantization for one accumulation subarray.
fn post_process(acc: &mut AccUnit, post: &PostOps, m: &mut Meter) -> Result<Value> {
    let ch = acc.kernel;
    let p = acc.sums[0]
        .take()
        .ok_or_else(|| Error::Invariant("accumulation subarray holds no sum".into()))?;
    let n = acc.sums[1].take();
    let ws = &mut acc.unit.ws;
    let q = post.quant[ch];
    let clamp = AffineOut::Clamp(post.out_bits);

    let pre = if let Some(bn) = &post.bn {
        m.set_category(Category::BatchNorm);
        let b = bn[ch];
        let out = if post.relu { AffineOut::Relu } else { AffineOut::Signed };
        let y = ws.affine(&sign_terms(&p, n.as_ref(), b.mult), b.offset, b.shift, out, m);
        release_all(ws, [Some(p), n]);
        Some(y?)
    } else if post.relu && n.is_some() {
        m.set_category(Category::Quantization);
        let y = ws.affine(&sign_terms(&p, n.as_ref(), 1), 0, 0, AffineOut::Relu, m);
        release_all(ws, [Some(p), n]);
        Some(y?)
    } else if post.relu {
        Some(p)
    } else {
        m.set_category(Category::Quantization);
        let out = ws.affine(&sign_terms(&p, n.as_ref(), q.mult), q.offset, q.shift, clamp, m);
        release_all(ws, [Some(p), n]);
        return out;
    };
    let y = pre.expect("set above");
    m.set_category(Category::Quantization);
    let out = ws.affine(&[Term { value: &y, coef: q.mult }], q.offset, q.shift, clamp, m);
    ws.release_value(y);
    out
}

/// Reduces a pooling window held in one subarray.
fn pool_window(ws: &mut Workspace, layer: &PoolLayer, vals: &[Value], m: &mut Meter) -> Result<Value> {
    let k = layer.bits;
    match layer.op {
        PoolOp::Max | PoolOp::Min => {
            let which = if layer.op == PoolOp::Max { Extreme::Max } else { Extreme::Min };
            let mut acc = ws.extreme(&vals[0], vals.get(1).unwrap_or(&vals[0]), which, m)?;
            for v in vals.iter().skip(2) {
                let next = ws.extreme(&acc, v, which, m);
                ws.release_value(acc);
                acc = next?;
            }
            Ok(acc)
        }
        PoolOp::Avg => {
            let d = vals.len();
            let width = k as usize + bit_length(d as u128 - 1) as usize;
            let ops = vals.iter().map(|v| v.operand.clone()).collect();
            let region = ws.add(ops, width, Overflow::Error, m)?;
            let hi = d as i128 * ((1i128 << k) - 1);
            let sum = Value::unsigned(region.operand(), vec![region], hi);
            let a = layer.avg.ok_or_else(|| Error::Invariant("average pool without constants".into()))?;
            let out = ws.affine(&[Term { value: &sum, coef: a.mult }], a.offset, a.shift, AffineOut::Exact(k), m);
            ws.release_value(sum);
            out
        }
    }
}

struct PoolUnit {
    unit: Unit,
    tile: usize,
    vals: Vec<Value>,
    result: Option<Value>,
}

impl Machine {
    pub fn new(arch: ArchConfig, params: CostParams, tracing: bool) -> Result<Self> {
        arch.validate()?;
        params.validate()?;
        Ok(Self {
            arch,
            rec: Recorder::new(params, arch.subarray.group_size, tracing),
            slots: (0..arch.mats).map(|_| (0..arch.subarrays_per_mat).map(|_| None).collect()).collect(),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn recorder(&self) -> &Recorder {
        &self.rec
    }

    fn take(&mut self, mat: usize, index: usize) -> Result<Unit> {
        let slot = self
            .slots
            .get_mut(mat)
            .and_then(|m| m.get_mut(index))
            .ok_or_else(|| Error::Invariant(format!("subarray {mat}.{index} does not exist")))?;
        let ws = match slot.take() {
            Some(ws) => ws,
            None => {
                let check = if self.arch.strict {
                    ProgramCheck::Strict
                } else {
                    ProgramCheck::Permissive
                };
                Workspace::new(Subarray::new(self.arch.subarray)?.with_check(check))
            }
        };
        Ok(Unit {
            lane: LaneId::subarray(mat, index),
            ws,
        })
    }

    fn give(&mut self, unit: Unit) {
        if let LaneId::Subarray { mat, index } = unit.lane {
            self.slots[mat as usize][index as usize] = Some(unit.ws);
        }
    }

    fn bus_meter(&self, mat: usize, category: Category, rows: u64) -> Meter {
        let mut m = self.rec.meter(LaneId::bus(mat), category);
        let beats = rows * self.arch.beats_per_row();
        m.charge(OpKind::BusBeat, beats, beats);
        m.close("bus_transfer", &[]);
        m
    }

    fn absorb(&mut self, meters: impl IntoIterator<Item = Meter>) {
        for m in meters {
            self.rec.absorb(m);
        }
        self.rec.barrier();
    }

    pub fn run_layer(&mut self, mapping: &LayerMapping, layer: &Layer, input: &[i64], first: bool) -> Result<Vec<i64>> {
        match (mapping, layer) {
            (LayerMapping::Conv(m), Layer::Conv(l)) => self.run_conv_layer(m, l, input, first),
            (LayerMapping::Pool(m), Layer::Pool(l)) => self.run_pool_layer(m, l, input, first),
            _ => Err(Error::Invariant(format!("mapping does not match layer {}", layer.index()))),
        }
    }

    pub fn run_conv_layer(&mut self, mapping: &ConvMapping, layer: &ConvLayer, input: &[i64], first: bool) -> Result<Vec<i64>> {
        let plan = &mapping.plan;
        let (n, pts) = (plan.sources(), plan.position_tiles);
        let positions = layer.geometry.positions();
        let env = ConvEnv {
            layer: layer.index,
            kind: layer.kind.name(),
            bus_width: self.arch.bus_width,
            input_category: if first { Category::Load } else { Category::Transfer },
        };
        let mut out = vec![0i64; layer.output.len()];
        for round in &mapping.rounds {
            let mut mats = Vec::with_capacity(round.len());
            for g in round {
                let sources = (0..n).map(|i| self.take(g.mat, i)).collect::<Result<Vec<_>>>()?;
                let accs = (n..n + g.kernels.len() * pts)
                    .map(|i| self.take(g.mat, i))
                    .collect::<Result<Vec<_>>>()?;
                mats.push(ConvMat::new(g.mat, g.kernels.clone(), sources, accs, plan)?);
            }
            let result = self.conv_round(layer, mapping, &mut mats, input, &env);
            for mat in mats {
                for u in mat.into_units() {
                    self.give(u);
                }
            }
            for (k, j, v) in result? {
                if j < positions {
                    out[k * positions + j] = v;
                }
            }
        }
        Ok(out)
    }

    /// Returns `(kernel, position, value)` for every computed output.
    fn conv_round(
        &mut self,
        layer: &ConvLayer,
        mapping: &ConvMapping,
        mats: &mut [ConvMat],
        input: &[i64],
        env: &ConvEnv,
    ) -> Result<Vec<(usize, usize, i64)>> {
        let plan = &mapping.plan;
        run_conv(plan, input, &layer.weights, mats, &mut self.rec, env)?;

        let rec = &self.rec;
        let post = &layer.post;
        let results = par_lanes(mats, |_, mat| {
            par_lanes(&mut mat.accs, |_, a| {
                let mut m = rec.meter(a.unit.lane, Category::Quantization);
                let v = post_process(a, post, &mut m)?;
                Ok((m, v))
            })
        })?;
        let mut meters = Vec::new();
        let mut finals: Vec<Vec<Value>> = Vec::new();
        for mat in results {
            let mut vs = Vec::new();
            for (m, v) in mat {
                meters.push(m);
                vs.push(v);
            }
            finals.push(vs);
        }
        self.absorb(meters);

        let rec = &self.rec;
        let cols = plan.columns;
        let read = par_lanes(mats, |mi, mat| {
            let finals = &finals[mi];
            par_lanes(&mut mat.accs, |ai, a| {
                let mut m = rec.meter(a.unit.lane, Category::Transfer);
                let got = a.unit.ws.read_values(&finals[ai].operand, &mut m)?;
                let vals: Vec<(usize, usize, i64)> = got
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| (a.kernel, a.ptile * cols + c, v as i64))
                    .collect();
                Ok((m, vals))
            })
        })?;
        let mut meters = Vec::new();
        let mut out = Vec::new();
        for (mi, mat) in read.into_iter().enumerate() {
            let accs = mat.len();
            for (m, vals) in mat {
                meters.push(m);
                out.extend(vals);
            }
            meters.push(self.bus_meter(mats[mi].mat, Category::Transfer, (accs * post.out_bits as usize) as u64));
        }
        self.absorb(meters);
        Ok(out)
    }

    pub fn run_pool_layer(&mut self, mapping: &PoolMapping, layer: &PoolLayer, input: &[i64], first: bool) -> Result<Vec<i64>> {
        let in_cat = if first { Category::Load } else { Category::Transfer };
        let mut out = vec![0i64; layer.output.len()];
        for round in &mapping.rounds {
            let mut units = Vec::with_capacity(round.len());
            for s in round {
                units.push(PoolUnit {
                    unit: self.take(s.mat, s.index)?,
                    tile: s.tile,
                    vals: Vec::new(),
                    result: None,
                });
            }
            let result = self.pool_round(layer, &mut units, input, in_cat);
            for u in units {
                self.give(u.unit);
            }
            for (p, v) in result? {
                out[p] = v;
            }
        }
        Ok(out)
    }

    fn pool_round(&mut self, layer: &PoolLayer, units: &mut [PoolUnit], input: &[i64], in_cat: Category) -> Result<Vec<(usize, i64)>> {
        let cols = self.arch.subarray.columns;
        let positions = layer.output.len();
        let (d, k, kind) = (layer.window(), layer.bits, layer.kind.name());
        let width = |tile: usize| cols.min(positions - tile * cols);
        let rec = &self.rec;
        let meters = par_lanes(units, |_, u| {
            let mut m = rec.meter(u.unit.lane, in_cat);
            let n = width(u.tile);
            u.unit.ws.reset(layer.index, kind, bits_from_fn(cols, |c| c < n));
            for e in 0..d {
                let v: Vec<u64> = (0..n).map(|c| input[layer.source(u.tile * cols + c, e)] as u64).collect();
                let mut val = u.unit.ws.write_values(&v, k as usize, &mut m)?;
                val.hi = (1i128 << k) - 1;
                u.vals.push(val);
            }
            Ok(m)
        })?;
        let mut all = meters;
        all.extend(self.mat_bus(units, in_cat, (d * k as usize) as u64));
        self.absorb(all);

        let rec = &self.rec;
        let meters = par_lanes(units, |_, u| {
            let mut m = rec.meter(u.unit.lane, Category::PoolingCompare);
            let vals = std::mem::take(&mut u.vals);
            let r = pool_window(&mut u.unit.ws, layer, &vals, &mut m);
            release_all(&mut u.unit.ws, vals.into_iter().map(Some));
            u.result = Some(r?);
            Ok(m)
        })?;
        self.absorb(meters);

        let rec = &self.rec;
        let read = par_lanes(units, |_, u| {
            let mut m = rec.meter(u.unit.lane, Category::Transfer);
            let r = u.result.take().ok_or_else(|| Error::Invariant("pool result missing".into()))?;
            let got = u.unit.ws.read_values(&r.operand, &mut m)?;
            let n = width(u.tile);
            let vals: Vec<(usize, i64)> = (0..n).map(|c| (u.tile * cols + c, got[c] as i64)).collect();
            Ok((m, vals))
        })?;
        let mut meters = Vec::new();
        let mut out = Vec::new();
        for (m, v) in read {
            meters.push(m);
            out.extend(v);
        }
        meters.extend(self.mat_bus(units, Category::Transfer, k as u64));
        self.absorb(meters);
        Ok(out)
    }

    /// One bus meter per mat used by `units`, sized by `rows` per unit.
    fn mat_bus(&self, units: &[PoolUnit], category: Category, rows: u64) -> Vec<Meter> {
        let mut per_mat = std::collections::BTreeMap::new();
        for u in units {
            if let LaneId::Subarray { mat, .. } = u.unit.lane {
                *per_mat.entry(mat as usize).or_insert(0u64) += rows;
            }
        }
        per_mat
            .into_iter()
            .map(|(mat, r)| self.bus_meter(mat, category, r))
            .collect()
    }

    /// Final classification on the host.
    pub fn host_argmax(&mut self, values: &[i64]) -> Option<usize> {
        let mut m = self.rec.meter(LaneId::Host, Category::Transfer);
        m.charge(OpKind::HostCompute, values.len() as u64, 1);
        m.close("host_argmax", &[]);
        self.absorb([m]);
        argmax(values)
    }

    pub fn finish(self) -> (CostLedger, Vec<TraceRecord>) {
        self.rec.into_parts()
    }
}

/// Runs `net` on `input` and returns the output with its cost ledger.
pub fn run_model(net: &Network, input: &FixedPointTensor, opts: &RunOptions) -> Result<RunOutput> {
    net.check_input(input)?;
    let plan = plan_mapping(net, &opts.arch)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut machine = Machine::new(opts.arch, opts.params, opts.tracing)?;
        let mut cur = input.values.clone();
        let mut layer_outputs = Vec::with_capacity(net.layers.len());
        for (i, (layer, mapping)) in net.layers.iter().zip(&plan.layers).enumerate() {
            cur = machine.run_layer(mapping, layer, &cur, i == 0)?;
            layer_outputs.push(FixedPointTensor::unsigned(layer.output().dims(), layer.out_bits(), cur.clone())?);
        }
        let argmax = if net.layers.is_empty() {
            None
        } else {
            machine.host_argmax(&cur)
        };
        let (ledger, trace) = machine.finish();
        let output = layer_outputs.last().cloned().unwrap_or_else(|| input.clone());
        Ok(RunOutput {
            output,
            layer_outputs,
            argmax,
            ledger,
            trace,
            plan,
        })
    })
}
