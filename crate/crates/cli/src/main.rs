mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use umiclust::bench::{bench_scaling, SweepWorkload};
use umiclust::io::{
    read_labels, read_matrix, write_csv, write_labels, write_mtx, write_report, write_tenx_dir,
    IngestOptions, MatrixFormat,
};
use umiclust::metrics::{adjusted_rand_index, coassignment_stability, huberts_index, rand_index};
use umiclust::synth::{generate, ReadDepth, SynthSpec};
use umiclust::{CountMatrix, Error, Estimator, Hyperparams, Result, Sampler, SamplerConfig};

use settings::{pick, resolve_threads, ConfigFile, Threads};

const EXIT_ARGS: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "umiclust", version, about = "Split-merge MCMC clustering of UMI count matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a count matrix and write labels and a run report.
    Cluster(ClusterArgs),
    /// Compare two label files (ARI, RI, HI).
    Eval(EvalArgs),
    /// Generate a synthetic matrix with ground-truth labels.
    Gen(GenArgs),
    /// Repeat clustering with derived seeds and score per-cell stability.
    Stability(StabilityArgs),
    /// Measure sampler scaling over thread counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// mtx, tenx_dir or csv.
    #[arg(long)]
    format: Option<MatrixFormat>,
    /// Rows of the input are cells rather than genes.
    #[arg(long)]
    transpose: bool,
    /// Keep only this many highest-variance genes.
    #[arg(long)]
    top_genes: Option<usize>,
}

#[derive(Args)]
struct SamplerArgs {
    /// `key = value` file supplying defaults for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_bar: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    k_init: Option<usize>,
    #[arg(long)]
    splits_per_iter: Option<usize>,
    #[arg(long)]
    merges_per_iter: Option<usize>,
    #[arg(long)]
    local_gibbs_iters: Option<usize>,
    /// Worker threads, or `auto`.
    #[arg(long)]
    threads: Option<Threads>,
    #[arg(long)]
    seed: Option<u64>,
    /// map or last.
    #[arg(long)]
    estimator: Option<Estimator>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out_labels: Option<PathBuf>,
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference labels CSV.
    truth: PathBuf,
    /// Labels CSV to score.
    pred: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 300)]
    cells: usize,
    #[arg(long, default_value_t = 100)]
    genes: usize,
    /// Reads per cell.
    #[arg(long, default_value_t = 2000)]
    reads: u64,
    /// Upper end of a uniform read range starting at --reads.
    #[arg(long)]
    reads_max: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    lambda_gen: f64,
    #[arg(long, default_value_t = 0.8)]
    separation: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_matrix: PathBuf,
    /// mtx, tenx_dir or csv.
    #[arg(long, default_value = "mtx")]
    out_format: MatrixFormat,
    #[arg(long)]
    out_labels: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Run i uses seed + i; with this flag every run uses the same seed.
    #[arg(long)]
    same_seed: bool,
    /// Per-cell stability CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Matrix to benchmark on; a synthetic one is generated otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<MatrixFormat>,
    #[arg(long, default_value_t = 20_000)]
    cells: usize,
    #[arg(long, default_value_t = 2_000)]
    genes: usize,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    thread_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Sampler iterations per timed repetition.
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn infer_format(path: &Path, given: Option<MatrixFormat>) -> MatrixFormat {
    given.unwrap_or_else(|| {
        if path.is_dir() {
            MatrixFormat::TenxDir
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            MatrixFormat::Csv
        } else {
            MatrixFormat::Mtx
        }
    })
}

fn load_input(a: &InputArgs) -> Result<CountMatrix> {
    let options = IngestOptions {
        format: infer_format(&a.input, a.format),
        top_k_genes: a.top_genes,
        transpose: a.transpose,
    };
    read_matrix(&a.input, &options)
}

fn sampler_config(a: &SamplerArgs) -> Result<SamplerConfig> {
    let cfg = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    const KNOWN: &[&str] = &[
        "alpha", "lambda", "lambda-bar", "iters", "burn-in", "k-init", "splits-per-iter",
        "merges-per-iter", "local-gibbs-iters", "threads", "seed", "estimator",
    ];
    if let Some(k) = cfg.keys().find(|k| !KNOWN.contains(k)) {
        return Err(Error::InvalidArgument(format!("unknown config key `{k}`")));
    }
    let d = SamplerConfig::default();
    let lambda = pick(a.lambda, &cfg, "lambda", d.hp.lambda)?;
    let hp = Hyperparams::new(
        pick(a.alpha, &cfg, "alpha", d.hp.alpha)?,
        lambda,
        pick(a.lambda_bar, &cfg, "lambda-bar", lambda)?,
    )?;
    let n_iterations = pick(a.iters, &cfg, "iters", d.n_iterations)?;
    let config = SamplerConfig {
        hp,
        n_iterations,
        burn_in: pick(a.burn_in, &cfg, "burn-in", d.burn_in.min(n_iterations / 2))?,
        local_gibbs_iters: pick(a.local_gibbs_iters, &cfg, "local-gibbs-iters", d.local_gibbs_iters)?,
        split_moves_per_iter: pick(a.splits_per_iter, &cfg, "splits-per-iter", d.split_moves_per_iter)?,
        merge_moves_per_iter: pick(a.merges_per_iter, &cfg, "merges-per-iter", d.merge_moves_per_iter)?,
        k_init: pick(a.k_init, &cfg, "k-init", d.k_init)?,
        seed: pick(a.seed, &cfg, "seed", d.seed)?,
        n_threads: resolve_threads(a.threads, &cfg)?,
        estimator: pick(a.estimator, &cfg, "estimator", d.estimator)?,
    };
    config.validate()?;
    Ok(config)
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let config = sampler_config(&a.sampler)?;
    let matrix = load_input(&a.input)?;
    let mut report = Sampler::new(config)?.run(&matrix)?;
    if let Some(p) = &a.out_labels {
        write_labels(p, &report.labels, matrix.cell_names())?;
        report.labels_path = Some(p.display().to_string());
    }
    if let Some(p) = &a.out_report {
        write_report(p, &report)?;
    }
    eprintln!(
        "cells: {}, genes: {}, final K: {}, {:.0} ms",
        matrix.n_cells(),
        matrix.n_genes(),
        report.final_k,
        report.wall_ms.total
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (_, truth) = read_labels(&a.truth)?;
    let (_, pred) = read_labels(&a.pred)?;
    if truth.len() != pred.len() {
        return Err(Error::Format {
            path: a.pred.clone(),
            line: 0,
            msg: format!("{} labels, reference has {}", pred.len(), truth.len()),
        });
    }
    let out = serde_json::json!({
        "ari": adjusted_rand_index(&truth, &pred)?,
        "ri": rand_index(&truth, &pred)?,
        "hi": huberts_index(&truth, &pred)?,
    });
    println!("{out}");
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = SynthSpec {
        n_clusters: a.clusters,
        n_cells: a.cells,
        n_genes: a.genes,
        reads_per_cell: match a.reads_max {
            Some(hi) => ReadDepth::Range(a.reads, hi),
            None => ReadDepth::Fixed(a.reads),
        },
        lambda_gen: a.lambda_gen,
        separation: a.separation,
        mixing: None,
        seed: a.seed,
    };
    let data = generate(&spec)?;
    match a.out_format {
        MatrixFormat::Mtx => write_mtx(&a.out_matrix, &data.matrix)?,
        MatrixFormat::Csv => write_csv(&a.out_matrix, &data.matrix)?,
        MatrixFormat::TenxDir => write_tenx_dir(&a.out_matrix, &data.matrix)?,
    }
    write_labels(&a.out_labels, &data.truth.labels, None)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn cmd_stability(a: &StabilityArgs) -> Result<()> {
    if a.runs < 2 {
        return Err(Error::InvalidArgument("--runs must be at least 2".into()));
    }
    let base = sampler_config(&a.sampler)?;
    let matrix = load_input(&a.input)?;
    let mut runs = Vec::with_capacity(a.runs);
    let mut seeds = Vec::with_capacity(a.runs);
    for r in 0..a.runs {
        let seed = if a.same_seed { base.seed } else { base.seed.wrapping_add(r as u64) };
        let config = SamplerConfig { seed, ..base.clone() };
        runs.push(Sampler::new(config)?.run(&matrix)?.partition());
        seeds.push(seed);
    }
    let score = coassignment_stability(&runs)?;
    if let Some(p) = &a.out {
        let mut w = String::from("cell,stability\n");
        for (i, s) in score.iter().enumerate() {
            let name = matrix.cell_names().map_or_else(|| i.to_string(), |n| n[i].clone());
            w.push_str(&format!("{name},{s}\n"));
        }
        std::fs::write(p, w).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let out = serde_json::json!({
        "runs": a.runs,
        "seeds": seeds,
        "min": sorted[0],
        "q25": quantile(&sorted, 0.25),
        "median": quantile(&sorted, 0.5),
        "q75": quantile(&sorted, 0.75),
        "max": sorted[sorted.len() - 1],
    });
    println!("{out}");
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let matrix = match &a.input {
        Some(p) => read_matrix(p, &IngestOptions::new(infer_format(p, a.format)))?,
        None => {
            generate(&SynthSpec {
                n_clusters: a.clusters,
                n_cells: a.cells,
                n_genes: a.genes,
                reads_per_cell: ReadDepth::Fixed(2000),
                seed: a.seed,
                ..SynthSpec::default()
            })?
            .matrix
        }
    };
    let config = SamplerConfig {
        n_iterations: a.iters.max(1),
        burn_in: 0,
        k_init: a.clusters.min(matrix.n_cells()),
        seed: a.seed,
        ..SamplerConfig::default()
    };
    let workload = SweepWorkload::new(&matrix, config, a.iters)?;
    let failure = std::sync::Mutex::new(None);
    let result = bench_scaling(&a.thread_list, a.reps, || {
        if let Err(e) = workload.run() {
            *failure.lock().unwrap() = Some(e);
        }
    })?;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    println!(
        "{}",
        serde_json::to_string(&result).map_err(|e| Error::Runtime(e.to_string()))?
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => EXIT_ARGS,
        Error::Format { .. } | Error::Structure(_) => EXIT_FORMAT,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Cluster(a) => cmd_cluster(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
