//! Per-lane cost metering and trace collection.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

use crate::cost::{Category, CostEvent, CostLedger, CostParams, CostRates, LaneId, OpKind, AJ_PER_FJ, FS_PER_NS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub kind: &'static str,
    pub units: u64,
    pub steps: u64,
    pub energy_fj: f64,
    pub latency_ns: f64,
}

/// One operation as it appears in the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub phase: u64,
    pub lane: LaneId,
    pub op: &'static str,
    pub category: Category,
    pub rows: Vec<usize>,
    pub events: Vec<TraceEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<&'static str>,
}

impl TraceRecord {
    pub fn latency_fs(&self) -> u64 {
        self.events
            .iter()
            .map(|e| (e.latency_ns * FS_PER_NS).round() as u64)
            .sum()
    }
}

/// Private cost sink for one lane. Owned by whoever drives that lane and
/// merged into a [`Recorder`] at the next join.
#[derive(Debug, Clone)]
pub struct Meter {
    lane: LaneId,
    category: Category,
    rates: CostRates,
    ledger: CostLedger,
    trace: Option<Vec<TraceRecord>>,
    pending: Vec<TraceEvent>,
}

impl Meter {
    pub fn new(lane: LaneId, category: Category, rates: CostRates, tracing: bool) -> Self {
        Self {
            lane,
            category,
            rates,
            ledger: CostLedger::new(),
            trace: tracing.then(Vec::new),
            pending: Vec::new(),
        }
    }

    /// A throwaway meter with default parameters, handy in tests.
    pub fn scratch(group_size: usize) -> Self {
        Self::new(
            LaneId::subarray(0, 0),
            Category::Load,
            CostParams::default().rates(group_size),
            false,
        )
    }

    pub fn lane(&self) -> LaneId {
        self.lane
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn set_category(&mut self, category: Category) {
        self.category = category;
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn charge(&mut self, kind: OpKind, units: u64, steps: u64) {
        if units == 0 && steps == 0 {
            return;
        }
        self.ledger.charge(
            &self.rates,
            &CostEvent {
                kind,
                category: self.category,
                lane: self.lane,
                units,
                steps,
            },
        );
        if self.trace.is_some() {
            self.pending.push(TraceEvent {
                kind: kind.name(),
                units,
                steps,
                energy_fj: (self.rates.energy_per_unit(kind) * units) as f64 / AJ_PER_FJ,
                latency_ns: (self.rates.latency_per_step(kind) * steps) as f64 / FS_PER_NS,
            });
        }
    }

    /// Closes the current operation, attaching the events charged since the
    /// previous close to one trace record.
    pub fn close(&mut self, op: &'static str, rows: &[usize]) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                seq: 0,
                phase: 0,
                lane: self.lane,
                op,
                category: self.category,
                rows: rows.to_vec(),
                events: std::mem::take(&mut self.pending),
                note: None,
            });
        }
    }

    /// Adds a zero-cost marker record, e.g. the start of a schedule.
    pub fn annotate(&mut self, op: &'static str, note: Option<&'static str>) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                seq: 0,
                phase: 0,
                lane: self.lane,
                op,
                category: self.category,
                rows: Vec::new(),
                events: Vec::new(),
                note,
            });
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn into_parts(self) -> (CostLedger, Vec<TraceRecord>) {
        (self.ledger, self.trace.unwrap_or_default())
    }
}

/// Global ledger + trace. Lane meters are absorbed in a fixed order, so the
/// result does not depend on how the lanes were scheduled onto threads.
#[derive(Debug, Clone)]
pub struct Recorder {
    params: CostParams,
    rates: CostRates,
    tracing: bool,
    ledger: CostLedger,
    trace: Vec<TraceRecord>,
    phase: u64,
    dirty: bool,
}

impl Recorder {
    pub fn new(params: CostParams, group_size: usize, tracing: bool) -> Self {
        Self {
            params,
            rates: params.rates(group_size),
            tracing,
            ledger: CostLedger::new(),
            trace: Vec::new(),
            phase: 0,
            dirty: false,
        }
    }

    pub fn meter(&self, lane: LaneId, category: Category) -> Meter {
        Meter::new(lane, category, self.rates, self.tracing)
    }

    pub fn absorb(&mut self, meter: Meter) {
        let (ledger, records) = meter.into_parts();
        if !ledger.is_empty() {
            self.dirty = true;
        }
        self.ledger.merge(&ledger);
        for mut r in records {
            r.seq = self.trace.len() as u64;
            r.phase = self.phase;
            self.trace.push(r);
        }
    }

    /// Ends the current phase. Phases with no charged work are not counted.
    pub fn barrier(&mut self) {
        self.ledger.barrier();
        if self.dirty {
            self.phase += 1;
            self.dirty = false;
        }
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn rates(&self) -> &CostRates {
        &self.rates
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn into_parts(mut self) -> (CostLedger, Vec<TraceRecord>) {
        self.ledger.barrier();
        (self.ledger, self.trace)
    }
}

/// Runs `f` on every item in parallel and returns the results in item
/// order. When several items fail, the error of the first one is reported.
pub fn par_lanes<T, R, F>(items: &mut [T], f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> Result<R> + Sync + Send,
{
    let out: Vec<Result<R>> = items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    out.into_iter().collect()
}
