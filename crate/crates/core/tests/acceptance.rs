//! Acceptance checks. Each criterion prints one PASS/FAIL line with its
//! wall-clock time and budget; the test fails if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nandspin::primitives::{bitwise_convolution, Extreme, Overflow, VerticalOperand, Workspace};
use nandspin::runtime::{oracle, toy_model, ToyConfig};
use nandspin::subarray::bits_from_fn;
use nandspin::{
    run_model, BitRow, Category, ControlSignals, CostParams, DeviceOp, FixedPointTensor, LaneId, Meter, MtjState,
    NandSpinDevice, Network, ProgramCheck, Recorder, Report, RunOptions, Signedness, Subarray, SubarrayGeometry,
};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check, u64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn device_truth_tables() -> Check {
    for g in [1usize, 4, 8, 16] {
        let mut d = NandSpinDevice::new(g).map_err(err)?;
        d.erase();
        ensure(d.states().iter().all(|&s| s == MtjState::Ap), || "erase leaves an MTJ in P".into())?;
        for i in 0..g {
            d.program(i, false, ProgramCheck::Strict).map_err(err)?;
            ensure(d.mtj(i).map_err(err)? == MtjState::Ap, || "d=0 changed the state".into())?;
            d.program(i, true, ProgramCheck::Strict).map_err(err)?;
            ensure(d.mtj(i).map_err(err)? == MtjState::P, || "d=1 did not switch AP to P".into())?;
            ensure(d.program(i, true, ProgramCheck::Strict).is_err(), || "strict re-program accepted".into())?;
            d.program(i, true, ProgramCheck::Permissive).map_err(err)?;
            ensure(d.mtj(i).map_err(err)? == MtjState::P, || "permissive re-program changed state".into())?;
        }
        ensure(d.program(g, true, ProgramCheck::Strict).is_err(), || "out-of-range MTJ accepted".into())?;
    }
    // Sense amplifier: output is W AND stored bit.
    for (state, stored) in [(MtjState::Ap, false), (MtjState::P, true)] {
        let d = NandSpinDevice::from_states(&[state]).map_err(err)?;
        ensure(d.read(0).map_err(err)? == stored, || format!("read of {state:?}"))?;
        for w in [false, true] {
            ensure(d.and_sense(0, w).map_err(err)? == (w && stored), || format!("AND {w} with {state:?}"))?;
        }
    }
    // Control-signal decode and apply.
    let (cols, g) = (4, 8);
    ensure(ControlSignals::erase(cols, g).decode().map_err(err)? == DeviceOp::Erase, || "erase decode".into())?;
    let data = vec![true, false, true, true];
    ensure(
        ControlSignals::program(3, data.clone(), g).decode().map_err(err)?
            == DeviceOp::Program { mtj: 3, data: data.clone() },
        || "program decode".into(),
    )?;
    for w in [false, true] {
        ensure(
            ControlSignals::and(5, w, cols, g).decode().map_err(err)? == DeviceOp::Sense { mtj: 5, fu: w },
            || "and decode".into(),
        )?;
    }
    let mut bad = ControlSignals::erase(cols, g);
    bad.reference = true;
    ensure(bad.decode().is_err(), || "inconsistent signals decoded".into())?;
    let prog = ControlSignals::program(2, data.clone(), g).decode().map_err(err)?;
    let read = ControlSignals::read(2, cols, g).decode().map_err(err)?;
    for (col, &bit) in data.iter().enumerate() {
        let mut d = NandSpinDevice::new(g).map_err(err)?;
        d.apply(&DeviceOp::Erase, col, ProgramCheck::Strict).map_err(err)?;
        d.apply(&prog, col, ProgramCheck::Strict).map_err(err)?;
        ensure(d.apply(&read, col, ProgramCheck::Strict).map_err(err)? == Some(bit), || "apply round trip".into())?;
    }
    Ok(())
}

fn direct_convolution(x: &[i64], h: usize, w: usize, k: &[i64], kh: usize, kw: usize, stride: usize) -> Vec<i64> {
    let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0;
            for dy in 0..kh {
                for dx in 0..kw {
                    acc += x[(oy * stride + dy) * w + ox * stride + dx] * k[dy * kw + dx];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn random_convolutions() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_4E);
    let params = CostParams::default();
    for case in 0..200 {
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (kh, kw) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
        let stride = rng.gen_range(1..=3);
        let in_bits = rng.gen_range(1..=8u32);
        let signed = rng.gen_bool(0.5);
        let w_bits = rng.gen_range(if signed { 2 } else { 1 }..=8u32);
        let x: Vec<i64> = (0..h * w).map(|_| rng.gen_range(0..1i64 << in_bits)).collect();
        let (lo, hi) = if signed { (-(1i64 << (w_bits - 1)), 1i64 << (w_bits - 1)) } else { (0, 1i64 << w_bits) };
        let k: Vec<i64> = (0..kh * kw).map(|_| rng.gen_range(lo..hi)).collect();
        let input = FixedPointTensor::unsigned(vec![h, w], in_bits, x.clone()).map_err(err)?;
        let sign = if signed { Signedness::TwosComplement } else { Signedness::Unsigned };
        let weight = FixedPointTensor::new(vec![kh, kw], w_bits, sign, k.clone()).map_err(err)?;
        let (out, ledger) = bitwise_convolution(&input, &weight, stride, &params).map_err(err)?;
        let expect = direct_convolution(&x, h, w, &k, kh, kw, stride);
        ensure(out.values == expect, || {
            format!("case {case}: {h}x{w} * {kh}x{kw} s{stride}: got {:?}, want {expect:?}", out.values)
        })?;
        ensure(ledger.energy_aj(Category::Convolution) > 0, || format!("case {case}: no convolution energy"))?;
    }
    Ok(())
}

fn workspace() -> Result<(Workspace, Meter), String> {
    let sub = Subarray::new(SubarrayGeometry::default()).map_err(err)?;
    Ok((Workspace::new(sub), Meter::scratch(8)))
}

fn column_values(rng: &mut ChaCha8Rng, bits: u32) -> Vec<u64> {
    (0..128).map(|_| rng.gen_range(0..1u64 << bits)).collect()
}

fn primitive_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xADD);
    // Addition: 1..=16 operands, 1..=8 bits.
    for n in 1..=16usize {
        for bits in [1u32, 3, 5, 8] {
            let (mut ws, mut m) = workspace()?;
            let ops: Vec<Vec<u64>> = (0..n).map(|_| column_values(&mut rng, bits)).collect();
            let vals = ops.iter().map(|v| ws.write_values(v, bits as usize, &mut m)).collect::<Result<Vec<_>, _>>().map_err(err)?;
            let width = bits as usize + (usize::BITS - (n - 1).leading_zeros()) as usize;
            let region = ws
                .add(vals.iter().map(|v| v.operand.clone()).collect(), width, Overflow::Error, &mut m)
                .map_err(err)?;
            let got = ws.read_values(&region.operand(), &mut m).map_err(err)?;
            for c in 0..128 {
                let want: u64 = ops.iter().map(|v| v[c]).sum();
                ensure(got[c] == want, || format!("add {n}x{bits}b column {c}: {} != {want}", got[c]))?;
            }
        }
    }
    // Multiplication: every 8-bit multiplier against random 8-bit columns.
    for multiplier in 0..256u64 {
        let (mut ws, mut m) = workspace()?;
        let a = column_values(&mut rng, 8);
        let v = ws.write_values(&a, 8, &mut m).map_err(err)?;
        let region = ws.mul(&v.operand, multiplier, 16, Overflow::Error, &mut m).map_err(err)?;
        let got = ws.read_values(&region.operand(), &mut m).map_err(err)?;
        for c in 0..128 {
            ensure(got[c] == a[c] * multiplier, || format!("mul {} * {multiplier}", a[c]))?;
        }
    }
    // Comparison: exhaustive at 4 bits, random at 8 bits.
    let exhaustive: Vec<(u64, u64)> = (0..16).flat_map(|a| (0..16).map(move |b| (a, b))).collect();
    let random: Vec<(u64, u64)> = (0..128 * 8).map(|_| (rng.gen_range(0..256), rng.gen_range(0..256))).collect();
    for (bits, pairs) in [(4usize, exhaustive), (8, random)] {
        for chunk in pairs.chunks(128) {
            let (mut ws, mut m) = workspace()?;
            let a: Vec<u64> = chunk.iter().map(|p| p.0).collect();
            let b: Vec<u64> = chunk.iter().map(|p| p.1).collect();
            let va = ws.write_values(&a, bits, &mut m).map_err(err)?;
            let vb = ws.write_values(&b, bits, &mut m).map_err(err)?;
            let flags = ws.compare(&va.operand, &vb.operand, &mut m).map_err(err)?;
            let tag = ws.read_values(&VerticalOperand::new(vec![flags.row(0)]), &mut m).map_err(err)?;
            let result = ws.read_values(&VerticalOperand::new(vec![flags.row(1)]), &mut m).map_err(err)?;
            for (c, &(x, y)) in chunk.iter().enumerate() {
                ensure(result[c] == (x > y) as u64, || format!("{bits}-bit compare {x} vs {y}: Result {}", result[c]))?;
                ensure(tag[c] == (x != y) as u64, || format!("{bits}-bit compare {x} vs {y}: Tag {}", tag[c]))?;
            }
            let hi = ws.extreme(&va, &vb, Extreme::Max, &mut m).map_err(err)?;
            let lo = ws.extreme(&va, &vb, Extreme::Min, &mut m).map_err(err)?;
            let hi = ws.read_values(&hi.operand, &mut m).map_err(err)?;
            let lo = ws.read_values(&lo.operand, &mut m).map_err(err)?;
            for (c, &(x, y)) in chunk.iter().enumerate() {
                ensure(hi[c] == x.max(y) && lo[c] == x.min(y), || format!("max/min of {x} and {y}"))?;
            }
        }
    }
    Ok(())
}

fn toy_configs() -> Vec<(u64, ToyConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x707);
    (0..50)
        .map(|i| {
            let cfg = ToyConfig {
                input_bits: rng.gen_range(1..=8),
                weight_bits: rng.gen_range(2..=8),
                act_bits: rng.gen_range(1..=8),
            };
            (1000 + i, cfg)
        })
        .collect()
}

fn run_toy(seed: u64, cfg: ToyConfig, threads: usize) -> Result<(Network, FixedPointTensor, nandspin::RunOutput), String> {
    let toy = toy_model(seed, cfg).map_err(err)?;
    let net = Network::compile(&toy.model).map_err(err)?;
    let opts = RunOptions {
        tracing: true,
        threads,
        ..RunOptions::default()
    };
    let out = run_model(&net, &toy.input, &opts).map_err(err)?;
    Ok((net, toy.input, out))
}

fn toy_cnn_bit_exact() -> Check {
    for (seed, cfg) in toy_configs() {
        let (net, input, out) = run_toy(seed, cfg, 1)?;
        let layers = oracle::run_network_trace(&net, &input).map_err(err)?;
        for (i, (got, want)) in out.layer_outputs.iter().zip(&layers).enumerate() {
            ensure(got.values == want.values, || format!("seed {seed} {cfg:?}: layer {i} differs"))?;
        }
        let want = layers.last().expect("toy has layers");
        ensure(out.output.values == want.values, || format!("seed {seed}: output differs"))?;
        ensure(out.argmax == oracle::argmax(&want.values), || format!("seed {seed}: argmax differs"))?;
    }
    Ok(())
}

fn cost_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC057);
    let geometry = SubarrayGeometry::default();
    let g = geometry.group_size;
    for trial in 0..64 {
        let mut sub = Subarray::new(geometry).map_err(err)?;
        let mut rec = Recorder::new(CostParams::default(), g, false);
        let mut m = rec.meter(LaneId::subarray(0, 0), Category::Load);
        let density = rng.gen_range(0.0..1.0);
        let rows: Vec<BitRow> = (0..g)
            .map(|_| {
                let empty = rng.gen_bool(0.25);
                bits_from_fn(128, |_| !empty && rng.gen_bool(density))
            })
            .collect();
        let p: usize = rows.iter().map(|r| r.count_ones()).sum();
        let pulses = rows.iter().filter(|r| r.any()).count();
        let device_row = rng.gen_range(0..geometry.device_rows);
        sub.write_row_group(device_row, &rows, &mut m).map_err(err)?;
        let reads = rng.gen_range(0..20usize);
        for i in 0..reads {
            sub.read_bit_row(device_row * g + i % g, &mut m).map_err(err)?;
        }
        rec.absorb(m);
        rec.barrier();
        let ledger = rec.ledger();
        let energy_aj = 128 * 180_000 + p as u64 * 105_000 + reads as u64 * 4_000;
        let latency_fs = 2_400_000 + 5_000_000 * pulses as u64 + 170_000 * reads as u64;
        ensure(ledger.total_energy_aj() == energy_aj, || {
            format!("trial {trial}: energy {} aJ, expected {energy_aj} (P={p}, R={reads})", ledger.total_energy_aj())
        })?;
        ensure(ledger.total_latency_fs() == latency_fs, || {
            format!("trial {trial}: latency {} fs, expected {latency_fs} (pulses={pulses}, R={reads})", ledger.total_latency_fs())
        })?;
    }
    Ok(())
}

fn energy_ordering() -> Check {
    for (seed, cfg) in toy_configs().into_iter().take(10) {
        let (_, _, out) = run_toy(seed, cfg, 1)?;
        let l = &out.ledger;
        let dominant = l.energy_aj(Category::Load) + l.energy_aj(Category::Convolution);
        for cat in [Category::Transfer, Category::PoolingCompare, Category::BatchNorm, Category::Quantization] {
            ensure(dominant > l.energy_aj(cat), || {
                format!("seed {seed}: load+conv {dominant} aJ <= {} {} aJ", cat.name(), l.energy_aj(cat))
            })?;
        }
    }
    Ok(())
}

fn artifacts(out: &nandspin::RunOutput) -> (Vec<i64>, Option<usize>, String, String) {
    let trace: String = out
        .trace
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
        .collect();
    let report = Report::new(&out.ledger, &CostParams::default()).to_json();
    (out.output.values.clone(), out.argmax, trace, report)
}

fn thread_determinism() -> Check {
    for (seed, cfg) in toy_configs().into_iter().step_by(5) {
        let (_, _, one) = run_toy(seed, cfg, 1)?;
        let (_, _, eight) = run_toy(seed, cfg, 8)?;
        let (a, b) = (artifacts(&one), artifacts(&eight));
        ensure(!a.2.is_empty(), || "trace is empty".into())?;
        ensure(a == b, || format!("seed {seed}: outputs, trace or ledger differ between 1 and 8 threads"))?;
        ensure(one.ledger == eight.ledger, || format!("seed {seed}: ledgers differ"))?;
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("device truth tables", device_truth_tables, 1),
        ("200 random bitwise convolutions against the oracle", random_convolutions, 10),
        ("add, mul and compare against their oracles", primitive_oracles, 30),
        ("toy CNN bit-exact over 50 parameterizations", toy_cnn_bit_exact, 60),
        ("write/read cost formulas are exact", cost_exactness, 1),
        ("load + convolution energy exceeds every other category", energy_ordering, 60),
        ("1 and 8 threads give identical outputs, traces and ledgers", thread_determinism, 120),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(*budget);
        let verdict = match (&result, over) {
            (Ok(()), false) => "PASS".to_string(),
            (Ok(()), true) => format!("FAIL (over the {budget} s budget)"),
            (Err(e), _) => format!("FAIL: {e}"),
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!("{verdict} criterion {}: {name} [{:.3} s / {budget} s]", i + 1, elapsed.as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
