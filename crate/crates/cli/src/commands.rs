use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nandspin::runtime::model::{parse_tensor, write_binary_tensor};
use nandspin::runtime::{oracle, toy_model, TensorFile, ToyConfig};
use nandspin::subarray::bits_from_fn;
use nandspin::{
    run_model, BitRow, Category, CostLedger, CostParams, FixedPointTensor, LaneId, ModelSpec, Network, ProgramCheck,
    Recorder, Report, RunOptions, Subarray,
};

use crate::config::RunConfig;
use crate::{Cli, Command, Failure};

pub fn run(cli: &Cli) -> Result<u8, Failure> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Infer => infer(cli, &cfg),
        Command::Oracle => run_oracle(cli),
        Command::Diff { left, right } => diff(left, right),
        Command::Memtest { rounds } => memtest(cli, &cfg, *rounds),
        Command::GenToy => gen_toy(cli),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| Failure::parse(format!("--{flag} is required")))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::new(4, format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::new(4, format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn load_problem(cli: &Cli) -> Result<(Network, FixedPointTensor), Failure> {
    let model_path = required(&cli.model, "model")?;
    let input_path = required(&cli.input, "input")?;
    let spec = ModelSpec::from_json(&read_text(model_path)?)
        .map_err(|e| Failure::parse(format!("{}: {e}", model_path.display())))?;
    let net = Network::compile(&spec)?;
    let bytes = fs::read(input_path).map_err(|e| Failure::parse(format!("{}: {e}", input_path.display())))?;
    let input = parse_tensor(&bytes, net.input_bits).map_err(|e| Failure::parse(format!("{}: {e}", input_path.display())))?;
    net.check_input(&input)?;
    Ok((net, input))
}

fn output_file(t: &FixedPointTensor, argmax: Option<usize>) -> String {
    let mut f = TensorFile::from_tensor(t);
    f.argmax = argmax;
    f.to_json()
}

fn write_report(dir: &Path, ledger: &CostLedger, params: &CostParams) -> Result<Report, Failure> {
    let report = Report::new(ledger, params);
    write(dir, "report.json", &report.to_json())?;
    write(dir, "report.csv", &report.to_csv())?;
    Ok(report)
}

fn infer(cli: &Cli, cfg: &RunConfig) -> Result<u8, Failure> {
    let (net, input) = load_problem(cli)?;
    let opts = RunOptions {
        arch: cfg.arch()?,
        params: cfg.costs,
        tracing: cli.trace,
        threads: cli.threads,
    };
    let out = run_model(&net, &input, &opts)?;
    write(&cli.out, "output.json", &output_file(&out.output, out.argmax))?;
    let report = write_report(&cli.out, &out.ledger, &opts.params)?;
    if cli.trace {
        let mut jsonl = String::new();
        for r in &out.trace {
            jsonl.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            jsonl.push('\n');
        }
        write(&cli.out, "trace.jsonl", &jsonl)?;
    }
    println!(
        "output {:?} argmax {:?}: {:.3} fJ, {:.3} ns",
        out.output.dims, out.argmax, report.energy_fj.total, report.latency_ns.total
    );
    Ok(0)
}

fn run_oracle(cli: &Cli) -> Result<u8, Failure> {
    let (net, input) = load_problem(cli)?;
    let out = oracle::run_network(&net, &input)?;
    let argmax = (!net.layers.is_empty()).then(|| oracle::argmax(&out.values)).flatten();
    let path = write(&cli.out, "oracle.json", &output_file(&out, argmax))?;
    println!("oracle output {:?} argmax {:?} -> {}", out.dims, argmax, path.display());
    Ok(0)
}

fn load_tensor_file(path: &Path) -> Result<TensorFile, Failure> {
    TensorFile::from_json(&read_text(path)?).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

fn diff(left: &Path, right: &Path) -> Result<u8, Failure> {
    let (a, b) = (load_tensor_file(left)?, load_tensor_file(right)?);
    if a.shape != b.shape || a.data.len() != b.data.len() {
        println!("shape mismatch: {:?} vs {:?}", a.shape, b.shape);
        return Ok(1);
    }
    let bad: Vec<usize> = (0..a.data.len()).filter(|&i| a.data[i] != b.data[i]).collect();
    if bad.is_empty() {
        println!("identical ({} values)", a.data.len());
        return Ok(0);
    }
    println!("{} of {} values differ", bad.len(), a.data.len());
    for &i in bad.iter().take(10) {
        println!("  [{i}] {} vs {}", a.data[i], b.data[i]);
    }
    Ok(1)
}

fn random_row(rng: &mut ChaCha8Rng, cols: usize) -> BitRow {
    bits_from_fn(cols, |_| rng.gen_bool(0.5))
}

fn memtest(cli: &Cli, cfg: &RunConfig, rounds: usize) -> Result<u8, Failure> {
    let arch = cfg.arch()?;
    let g = arch.subarray;
    let check = if arch.strict {
        ProgramCheck::Strict
    } else {
        ProgramCheck::Permissive
    };
    let mut sub = Subarray::new(g)?.with_check(check);
    let mut rec = Recorder::new(cfg.costs, g.group_size, cli.trace);
    let mut m = rec.meter(LaneId::subarray(0, 0), Category::Load);
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (mut checks, mut failures) = (0usize, 0usize);
    for _ in 0..rounds {
        let d = rng.gen_range(0..g.device_rows);
        let data: Vec<BitRow> = (0..g.group_size).map(|_| random_row(&mut rng, g.columns)).collect();
        sub.write_row_group(d, &data, &mut m)?;
        for (i, row) in data.iter().enumerate() {
            checks += 1;
            if sub.read_bit_row(d * g.group_size + i, &mut m)? != *row {
                failures += 1;
            }
        }
        let buf = random_row(&mut rng, g.columns);
        sub.load_buffer_row(0, &buf, &mut m)?;
        let i = rng.gen_range(0..g.group_size);
        checks += 1;
        if sub.and_bit_row(d * g.group_size + i, 0, &mut m)? != data[i].clone() & buf {
            failures += 1;
        }
    }
    rec.absorb(m);
    rec.barrier();
    let trace = rec.trace_jsonl();
    let params = *rec.params();
    let (ledger, _) = rec.into_parts();
    write_report(&cli.out, &ledger, &params)?;
    if cli.trace {
        write(&cli.out, "trace.jsonl", &trace)?;
    }
    println!("memtest: {checks} checks, {failures} failures");
    Ok(if failures == 0 { 0 } else { 4 })
}

fn gen_toy(cli: &Cli) -> Result<u8, Failure> {
    let toy = toy_model(cli.seed, ToyConfig::default())?;
    write(&cli.out, "model.json", &(toy.model.to_json() + "\n"))?;
    write(&cli.out, "input.json", &TensorFile::from_tensor(&toy.input).to_json())?;
    let mut bin = Vec::new();
    write_binary_tensor(&mut bin, &toy.input.dims, &toy.input.values).expect("writing to memory");
    let path = cli.out.join("input.bin");
    fs::write(&path, bin).map_err(|e| Failure::new(4, format!("{}: {e}", path.display())))?;
    println!("toy model (seed {}) written to {}", cli.seed, cli.out.display());
    Ok(0)
}
