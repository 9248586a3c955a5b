//! `blocktensor` command line: factorize, generate synthetic data, evaluate.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use blocktensor::block::load_blocks;
use blocktensor::cp::MdlRecord;
use blocktensor::io::write_atomic;
use blocktensor::merge::MergeStrategy;
use blocktensor::pipeline::{factorize_cp, factorize_tucker, BlockSearch, PipelineConfig};
use blocktensor::synth::{evaluate, generate, SynthSpec};
use blocktensor::tucker::{tucker_boolean_error, tucker_description_length, TuckerDecomposition, TuckerOptions};
use blocktensor::walk::FreqMode;
use blocktensor::{Dims, SparseBinaryTensor};

#[derive(Parser, Debug)]
#[command(
    name = "blocktensor",
    version,
    about = "Boolean CP and Tucker factorization of sparse binary 3-way tensors"
)]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file of default flags; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find blocks and select the CP rank by MDL.
    FactorizeCp(CpArgs),
    /// Find blocks (or read them) and compress them into a Tucker decomposition.
    FactorizeTucker(TuckerArgs),
    /// Generate a synthetic tensor with planted blocks and noise.
    Generate(GenerateArgs),
    /// Compare a reconstruction with noisy and noise-free tensors.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Input tensor (1-based `i j k [v]` lines).
    input: PathBuf,
    /// Override the tensor dims, e.g. 100,150,200.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<Dims>,
    /// Density threshold d in (0, 1].
    #[arg(long, default_value_t = 0.85, value_parser = parse_density)]
    density: f64,
    #[arg(long, default_value_t = 5)]
    walk_length: usize,
    /// Walks per iteration; defaults to a size-scaled value.
    #[arg(long)]
    num_walks: Option<usize>,
    /// Visit filter: `mean` or an absolute count.
    #[arg(long, default_value = "mean", value_parser = parse_freq)]
    freq: FreqMode,
    /// Minimum block side per mode, e.g. 2,2,2.
    #[arg(long, default_value = "2,2,2", value_parser = parse_triple)]
    min_block: [usize; 3],
    #[arg(long, value_enum, default_value_t = Strategy::Best)]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CpArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Skip MDL and keep the first R blocks of the ordering.
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Args, Debug)]
struct TuckerArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Start from these blocks instead of searching.
    #[arg(long, value_name = "FILE")]
    blocks: Option<PathBuf>,
    /// Only keep merge elements that strictly shorten the encoding.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_dims)]
    dims: Dims,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_add: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_del: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean block side, one value or one per mode.
    #[arg(long, default_value = "16", value_parser = parse_mean)]
    block_mean: [usize; 3],
    /// Chance that a block shares indices with an earlier one.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    noise_free: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Strategy {
    Best,
    First,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_density(s: &str) -> Result<f64, String> {
    let d: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if d > 0.0 && d <= 1.0 {
        Ok(d)
    } else {
        Err(format!("density must lie in (0, 1], got {d}"))
    }
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma separated values, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("not a non-negative integer: {p:?}"))?;
        if *o == 0 {
            return Err("values must be positive".into());
        }
    }
    Ok(out)
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    parse_triple(s).map(|[n, m, l]| Dims::new(n, m, l))
}

fn parse_mean(s: &str) -> Result<[usize; 3], String> {
    match s.parse::<usize>() {
        Ok(0) => Err("block mean must be positive".into()),
        Ok(v) => Ok([v; 3]),
        Err(_) => parse_triple(s),
    }
}

fn parse_freq(s: &str) -> Result<FreqMode, String> {
    if s == "mean" {
        return Ok(FreqMode::AboveMean);
    }
    u32::from_str(s)
        .map(FreqMode::Absolute)
        .map_err(|_| format!("expected `mean` or a count, got {s:?}"))
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<blocktensor::Error> for Failure {
    fn from(e: blocktensor::Error) -> Self {
        match e {
            blocktensor::Error::InvalidArgument(_) | blocktensor::Error::Infeasible(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match with_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match cli.cmd {
        Command::FactorizeCp(a) => cmd_factorize_cp(a),
        Command::FactorizeTucker(a) => cmd_factorize_tucker(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Splices the flags of a `--config` file in right after the subcommand, so
/// anything given on the command line overrides them.
fn with_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            let v = args.get(i + 1).ok_or("--config needs a file")?.clone();
            path = Some(PathBuf::from(v));
            args.drain(i..i + 2);
        } else if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let key = format!("--{}", k.trim().replace('_', "-"));
        match v.trim() {
            "true" => extra.push(key.into()),
            "false" => {}
            v => {
                extra.push(key.into());
                extra.push(v.into());
            }
        }
    }
    let at = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(args.len(), |p| p + 2);
    args.splice(at..at, extra);
    Ok(args)
}

fn load_input(path: &Path, dims: Option<Dims>) -> Result<SparseBinaryTensor, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("input file not found: {}", path.display())));
    }
    let x = SparseBinaryTensor::load(path, dims)?;
    info!("loaded {} ({} non-zeros, dims {})", path.display(), x.nnz(), x.dims());
    Ok(x)
}

fn config(a: &SearchArgs, rank: Option<usize>) -> Result<PipelineConfig, Failure> {
    let cfg = PipelineConfig {
        density: a.density,
        walk_length: a.walk_length,
        num_walks: a.num_walks,
        freq: a.freq,
        min_block: a.min_block,
        strategy: match a.strategy {
            Strategy::Best => MergeStrategy::Best,
            Strategy::First => MergeStrategy::First,
        },
        rank,
        seed: a.seed,
        threads: a.threads,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(p: &Path) -> Result<(), Failure> {
    fs::create_dir_all(p)
        .with_context(|| format!("creating {}", p.display()))
        .map_err(Failure::Runtime)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v).context("serializing summary")?;
    s.push('\n');
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct SearchSummary {
    walk_blocks: usize,
    mono_blocks: usize,
    noise_cells: usize,
    merges: usize,
    merged_blocks: usize,
    ordered_blocks: usize,
}

impl From<&BlockSearch> for SearchSummary {
    fn from(s: &BlockSearch) -> Self {
        SearchSummary {
            walk_blocks: s.walk_blocks,
            mono_blocks: s.mono_blocks,
            noise_cells: s.noise_cells,
            merges: s.merges,
            merged_blocks: s.merged.len(),
            ordered_blocks: s.ordered.blocks.len(),
        }
    }
}

#[derive(Serialize)]
struct CpSummary<'a> {
    input: String,
    dims: [usize; 3],
    nnz: usize,
    rank: usize,
    mdl_rank: usize,
    mdl: Option<&'a MdlRecord>,
    boolean_error: u64,
    seed: u64,
    params: &'a PipelineConfig,
    search: SearchSummary,
    wall_time_secs: f64,
}

fn cmd_factorize_cp(a: CpArgs) -> CmdResult {
    let cfg = config(&a.search, a.rank)?;
    let x = load_input(&a.search.input, a.search.dims)?;
    let out = &a.search.out;
    let t = Instant::now();
    let res = factorize_cp(&x, &cfg)?;
    let wall = t.elapsed().as_secs_f64();
    out_dir(out)?;
    res.decomposition.save(out)?;
    res.decomposition.reconstruct().save(out.join("recon.txt"))?;
    write_atomic(&out.join("mdl.csv"), res.report.to_csv().as_bytes())?;
    let summary = CpSummary {
        input: a.search.input.display().to_string(),
        dims: x.dims().0,
        nnz: x.nnz(),
        rank: res.decomposition.rank(),
        mdl_rank: res.report.chosen_rank,
        mdl: (res.report.chosen_rank > 0).then(|| res.report.chosen()),
        boolean_error: res.boolean_error,
        seed: cfg.seed,
        params: &cfg,
        search: (&res.search).into(),
        wall_time_secs: wall,
    };
    write_json(&out.join("summary.json"), &summary)?;
    info!(
        "rank {} boolean error {} in {:.2}s, wrote {}",
        summary.rank,
        summary.boolean_error,
        wall,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TuckerSummary<'a> {
    input: String,
    dims: [usize; 3],
    nnz: usize,
    blocks: usize,
    core_dims: [usize; 3],
    core_nnz: usize,
    bits: f64,
    initial_bits: f64,
    commits: usize,
    boolean_error: u64,
    seed: u64,
    params: &'a PipelineConfig,
    strict_inclusion: bool,
    search: Option<SearchSummary>,
    wall_time_secs: f64,
}

fn cmd_factorize_tucker(a: TuckerArgs) -> CmdResult {
    let cfg = config(&a.search, None)?;
    let x = load_input(&a.search.input, a.search.dims)?;
    let given = match &a.blocks {
        Some(p) if !p.is_file() => {
            return Err(Failure::Usage(format!("blocks file not found: {}", p.display())));
        }
        Some(p) => Some(load_blocks(p)?),
        None => None,
    };
    let opts = TuckerOptions {
        strict_inclusion: a.strict,
    };
    let out = &a.search.out;
    let t = Instant::now();
    let res = factorize_tucker(&x, &cfg, given, opts)?;
    let wall = t.elapsed().as_secs_f64();
    let (decomp, bits, initial_bits, commits, err) = match res.outcome {
        Some(o) => {
            let commits = o.trace.len();
            (o.decomposition, o.bits, o.initial_bits, commits, o.boolean_error)
        }
        None => {
            let t = TuckerDecomposition {
                dims: x.dims(),
                factors: Default::default(),
                core: Default::default(),
            };
            let bits = tucker_description_length(&x, &t);
            let err = tucker_boolean_error(&x, &t);
            (t, bits, bits, 0, err)
        }
    };
    out_dir(out)?;
    decomp.save(out)?;
    decomp.reconstruct().save(out.join("recon.txt"))?;
    let summary = TuckerSummary {
        input: a.search.input.display().to_string(),
        dims: x.dims().0,
        nnz: x.nnz(),
        blocks: res.blocks.len(),
        core_dims: decomp.core_dims(),
        core_nnz: decomp.core.len(),
        bits,
        initial_bits,
        commits,
        boolean_error: err,
        seed: cfg.seed,
        params: &cfg,
        strict_inclusion: a.strict,
        search: res.search.as_ref().map(Into::into),
        wall_time_secs: wall,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let [p, q, r] = summary.core_dims;
    info!(
        "core {p}x{q}x{r}, {bits:.1} bits, boolean error {err}, wrote {}",
        out.display()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let spec = SynthSpec {
        dims: a.dims,
        rank: a.rank,
        block_dims_mean: a.block_mean,
        overlap_fraction: a.overlap,
        additive_noise: a.noise_add,
        destructive_noise: a.noise_del,
        seed: a.seed,
    };
    spec.validate()?;
    let data = generate(&spec)?;
    out_dir(&a.out)?;
    data.save(&spec, &a.out)?;
    info!(
        "{} planted non-zeros, {} after noise, wrote {}",
        data.noise_free.nnz(),
        data.noisy.nnz(),
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let recon = load_input(&a.recon, None)?;
    let noisy = load_input(&a.noisy, None)?;
    let noise_free = load_input(&a.noise_free, None)?;
    let e = evaluate(&recon, &noisy, &noise_free).map_err(|e| Failure::Runtime(e.into()))?;
    match a.format {
        Format::Csv => {
            println!("rel_noisy,rel_noise_free,xor_noisy,xor_noise_free");
            println!(
                "{},{},{},{}",
                e.rel_noisy, e.rel_noise_free, e.xor_noisy, e.xor_noise_free
            );
        }
        Format::Json => println!("{}", serde_json::to_string_pretty(&e).context("serializing")?),
    }
    Ok(())
}
