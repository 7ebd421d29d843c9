//! Command-line front end: `synth` runs the pipeline, `eval` scores a
//! synthetic dataset (optionally sweeping over epsilon).
//!
//! All outputs land inside --out-dir. Exit codes: 0 success, 1 validation
//! failure, 2 budget or domain-cap infeasibility. Every run requires an
//! explicit --seed; reruns with identical flags are byte-identical except for
//! timings.json, which carries the volatile wall-clock numbers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::domain::{
    generate_workload, load_dataset, load_workload, write_dataset_csv, Dataset, Workload,
};
use crate::error::{Error, Result};
use crate::estimator::{DistributionModel, WeightMode, DEFAULT_DOMAIN_CAP};
use crate::evaluation::{
    baseline_no_partition, generate_range_queries, range_query_error, workload_error,
};
use crate::synthesizer::{synthesize, BudgetSpec, SynthesisConfig, SynthesisOutput};

#[derive(Parser, Debug)]
#[command(name = "ppsyn", version, about = "Partition-based private synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a private synthetic dataset.
    Synth(SynthArgs),
    /// Evaluate a synthetic dataset against the original.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Input CSV (header row mandatory).
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON with per-attribute value dictionaries.
    #[arg(long)]
    pub schema: PathBuf,
    /// Workload JSON: {"cliques":[["a","b"],...]}.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Generate a random workload instead: DIMS,COUNT,MAX_CELLS.
    #[arg(long, value_name = "DIMS,COUNT,MAX_CELLS")]
    pub gen_workload: Option<String>,
    /// Total budget as zCDP rho.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Total budget as epsilon (requires --delta).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Error impact parameter in (0,1).
    #[arg(long, default_value_t = 0.7)]
    pub eta: f64,
    /// Rounds hyper-parameter T.
    #[arg(long, default_value_t = 16)]
    pub rounds: usize,
    /// Root seed; all randomness derives from it.
    #[arg(long)]
    pub seed: u64,
    /// Synthetic record count (default: input record count).
    #[arg(long)]
    pub records: Option<usize>,
    /// Score sensitivity for the exponential mechanism.
    #[arg(long, default_value_t = 1.0)]
    pub delta_sens: f64,
    /// Dense domain cap in cells.
    #[arg(long, default_value_t = DEFAULT_DOMAIN_CAP)]
    pub domain_cap: usize,
    /// Objective weighting: sigma (1/sigma) or sigma2 (1/sigma^2).
    #[arg(long, default_value = "sigma")]
    pub obj_weight: String,
    /// Replace all noise with zeros and selection with argmax.
    #[arg(long)]
    pub noiseless: bool,
    /// Emit per-round candidate traces (trace.jsonl).
    #[arg(long)]
    pub trace: bool,
    /// Emit chosen partitions (partitions.json).
    #[arg(long)]
    pub dump_partitions: bool,
    /// Emit the fitted distribution (model.json).
    #[arg(long)]
    pub dump_model: bool,
    /// Disable partitioning (ablation baseline).
    #[arg(long)]
    pub baseline: bool,
    /// Worker threads (default: all cores). Thread count never changes
    /// results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Original CSV.
    #[arg(long = "true")]
    pub true_data: PathBuf,
    /// Synthetic CSV (not needed in --sweep mode).
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub schema: PathBuf,
    /// Workload JSON for the workload-error metric.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Generate a random workload instead: DIMS,COUNT,MAX_CELLS.
    #[arg(long, value_name = "DIMS,COUNT,MAX_CELLS")]
    pub gen_workload: Option<String>,
    /// Range-query dimensions.
    #[arg(long, default_value_t = 3)]
    pub rq_dims: usize,
    /// Number of range-query cliques.
    #[arg(long, default_value_t = 0)]
    pub rq_cliques: usize,
    /// Queries per clique.
    #[arg(long, default_value_t = 5)]
    pub rq_per_clique: usize,
    #[arg(long)]
    pub seed: u64,
    /// Sweep mode: synthesize at each epsilon on --true and evaluate.
    #[arg(long)]
    pub sweep: bool,
    /// Comma-separated epsilon grid for --sweep.
    #[arg(long, default_value = "0.05,0.1,0.2,0.5,1.0,2.0")]
    pub eps_grid: String,
    #[arg(long, default_value_t = 1e-9)]
    pub delta: f64,
    /// Rounds hyper-parameter for --sweep synthesis.
    #[arg(long, default_value_t = 16)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.7)]
    pub eta: f64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    tool_version: &'static str,
    seed: u64,
    inputs: Vec<(String, String)>,
    config: serde_json::Value,
    out_dir: String,
    outputs: Vec<String>,
}

fn parse_gen_workload(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParam(
            "--gen-workload expects DIMS,COUNT,MAX_CELLS".into(),
        ));
    }
    let dims = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam("bad --gen-workload dims".into()))?;
    let count = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam("bad --gen-workload count".into()))?;
    let max_cells = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam("bad --gen-workload max cells".into()))?;
    Ok((dims, count, max_cells))
}

fn resolve_workload(
    data: &Dataset,
    workload: &Option<PathBuf>,
    gen_workload: &Option<String>,
    seed: u64,
) -> Result<Workload> {
    match (workload, gen_workload) {
        (Some(path), None) => load_workload(path, &data.domain),
        (None, Some(spec)) => {
            let (dims, count, max_cells) = parse_gen_workload(spec)?;
            generate_workload(&data.domain, dims, count, max_cells, seed)
        }
        (Some(_), Some(_)) => Err(Error::InvalidParam(
            "--workload and --gen-workload are mutually exclusive".into(),
        )),
        (None, None) => Err(Error::InvalidParam(
            "one of --workload or --gen-workload is required".into(),
        )),
    }
}

fn resolve_budget(rho: Option<f64>, epsilon: Option<f64>, delta: Option<f64>) -> Result<BudgetSpec> {
    match (rho, epsilon, delta) {
        (Some(rho), None, None) => {
            if !(rho > 0.0) {
                return Err(Error::BudgetNotPositive);
            }
            Ok(BudgetSpec::Rho { rho })
        }
        (None, Some(epsilon), Some(delta)) => {
            if !(epsilon > 0.0) {
                return Err(Error::BudgetNotPositive);
            }
            Ok(BudgetSpec::EpsDelta { epsilon, delta })
        }
        _ => Err(Error::InvalidParam(
            "specify --rho, or --epsilon with --delta".into(),
        )),
    }
}

fn parse_weight_mode(s: &str) -> Result<WeightMode> {
    match s {
        "sigma" => Ok(WeightMode::InverseSigma),
        "sigma2" => Ok(WeightMode::InverseSigmaSq),
        other => Err(Error::InvalidParam(format!(
            "--obj-weight must be sigma or sigma2, got {other}"
        ))),
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelDump<'a> {
    domain: &'a crate::domain::DomainSpec,
    p_hat: &'a [f64],
}

fn write_synth_outputs(
    args: &SynthArgs,
    output: &SynthesisOutput,
    model: &DistributionModel,
) -> Result<Vec<String>> {
    let out = &args.out_dir;
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();

    let synth_path = out.join("synthetic.csv");
    write_dataset_csv(&output.synthetic, &synth_path)?;
    outputs.push("synthetic.csv".to_string());

    write_json(&out.join("report.json"), &output.report)?;
    outputs.push("report.json".to_string());

    if let Some(trace) = &output.trace {
        let mut lines = String::new();
        for t in trace {
            lines.push_str(&serde_json::to_string(t)?);
            lines.push('\n');
        }
        std::fs::write(out.join("trace.jsonl"), lines)?;
        outputs.push("trace.jsonl".to_string());
    }
    if let Some(dumps) = &output.partition_dumps {
        write_json(&out.join("partitions.json"), dumps)?;
        outputs.push("partitions.json".to_string());
    }
    if args.dump_model {
        write_json(
            &out.join("model.json"),
            &ModelDump {
                domain: &model.domain,
                p_hat: &model.p_hat,
            },
        )?;
        outputs.push("model.json".to_string());
    }
    write_json(&out.join("timings.json"), &output.timings)?;
    outputs.push("timings.json".to_string());
    Ok(outputs)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    configure_threads(args.threads);
    let budget = resolve_budget(args.rho, args.epsilon, args.delta)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let workload = resolve_workload(&data, &args.workload, &args.gen_workload, args.seed)?;

    let mut config = SynthesisConfig::new(budget, args.seed);
    config.rounds = args.rounds;
    config.eta = args.eta;
    config.records = args.records;
    config.delta_sens = args.delta_sens;
    config.domain_cap = args.domain_cap;
    config.weight_mode = parse_weight_mode(&args.obj_weight)?;
    config.noiseless = args.noiseless;
    config.trace = args.trace;
    config.dump_partitions = args.dump_partitions;

    let output = if args.baseline {
        baseline_no_partition(&data, &workload, &config)?
    } else {
        synthesize(&data, &workload, &config)?
    };
    let mut outputs = write_synth_outputs(args, &output, &output.model)?;

    outputs.push("manifest.json".to_string());
    let manifest = RunManifest {
        subcommand: "synth",
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: args.seed,
        inputs: vec![
            ("data".to_string(), args.data.display().to_string()),
            ("schema".to_string(), args.schema.display().to_string()),
        ],
        config: serde_json::to_value(&config)?,
        out_dir: args.out_dir.display().to_string(),
        outputs,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    tool_version: &'static str,
    seed: u64,
    workload_error: Option<f64>,
    per_clique_l1: Option<Vec<(Vec<String>, f64)>>,
    range_query_error: Option<f64>,
    range_query_count: usize,
    sweep: Option<Vec<SweepPoint>>,
}

#[derive(Serialize)]
struct SweepPoint {
    epsilon: f64,
    rho: f64,
    workload_error: f64,
    range_query_error: Option<f64>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    configure_threads(args.threads);
    std::fs::create_dir_all(&args.out_dir)?;
    let truth = load_dataset(&args.true_data, &args.schema)?;
    let workload = resolve_workload(&truth, &args.workload, &args.gen_workload, args.seed)?;
    let queries = if args.rq_cliques > 0 {
        generate_range_queries(
            &truth.domain,
            args.rq_dims,
            args.rq_cliques,
            args.rq_per_clique,
            args.seed,
        )?
    } else {
        Vec::new()
    };

    let mut outputs = vec!["evaluation.json".to_string()];
    let report = if args.sweep {
        let grid: Vec<f64> = args
            .eps_grid
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParam(format!("bad epsilon \"{s}\"")))
            })
            .collect::<Result<_>>()?;
        let mut points = Vec::with_capacity(grid.len());
        let mut csv = String::from("epsilon,rho,workload_error,range_query_error\n");
        for &epsilon in &grid {
            let budget = BudgetSpec::EpsDelta {
                epsilon,
                delta: args.delta,
            };
            let mut config = SynthesisConfig::new(budget, args.seed);
            config.rounds = args.rounds;
            config.eta = args.eta;
            let out = synthesize(&truth, &workload, &config)?;
            let we = workload_error(&truth, &out.synthetic, &workload)?;
            let rqe = if queries.is_empty() {
                None
            } else {
                Some(range_query_error(&truth, &out.synthetic, &queries)?)
            };
            csv.push_str(&format!(
                "{epsilon},{},{we},{}\n",
                out.report.rho_total,
                rqe.map_or(String::new(), |e| e.to_string())
            ));
            points.push(SweepPoint {
                epsilon,
                rho: out.report.rho_total,
                workload_error: we,
                range_query_error: rqe,
            });
        }
        std::fs::write(args.out_dir.join("sweep.csv"), csv)?;
        outputs.push("sweep.csv".to_string());
        EvalReport {
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: args.seed,
            workload_error: None,
            per_clique_l1: None,
            range_query_error: None,
            range_query_count: queries.len(),
            sweep: Some(points),
        }
    } else {
        let synth_path = args.synth.as_ref().ok_or_else(|| {
            Error::InvalidParam("--synth is required unless --sweep is set".into())
        })?;
        let synth = load_dataset(synth_path, &args.schema)?;
        let we = workload_error(&truth, &synth, &workload)?;
        let per_clique: Vec<(Vec<String>, f64)> = workload
            .entries
            .iter()
            .map(|e| {
                let mt = crate::domain::compute_marginal(&truth, &e.clique)?;
                let ms = crate::domain::compute_marginal(&synth, &e.clique)?;
                Ok((
                    e.clique.names(&truth.domain),
                    crate::domain::marginal_l1(&mt, &ms)?,
                ))
            })
            .collect::<Result<_>>()?;
        let rqe = if queries.is_empty() {
            None
        } else {
            Some(range_query_error(&truth, &synth, &queries)?)
        };
        EvalReport {
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: args.seed,
            workload_error: Some(we),
            per_clique_l1: Some(per_clique),
            range_query_error: rqe,
            range_query_count: queries.len(),
            sweep: None,
        }
    };
    write_json(&args.out_dir.join("evaluation.json"), &report)?;

    outputs.push("manifest.json".to_string());
    let mut inputs = vec![
        ("true".to_string(), args.true_data.display().to_string()),
        ("schema".to_string(), args.schema.display().to_string()),
    ];
    if let Some(synth) = &args.synth {
        inputs.push(("synth".to_string(), synth.display().to_string()));
    }
    let manifest = RunManifest {
        subcommand: "eval",
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: args.seed,
        inputs,
        config: serde_json::json!({
            "rq_dims": args.rq_dims,
            "rq_cliques": args.rq_cliques,
            "rq_per_clique": args.rq_per_clique,
            "sweep": args.sweep,
            "eps_grid": args.eps_grid,
            "delta": args.delta,
            "rounds": args.rounds,
            "eta": args.eta,
        }),
        out_dir: args.out_dir.display().to_string(),
        outputs,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Maps an error to its exit code: 2 for budget/cap infeasibility, 1 for
/// everything else.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::BudgetNotPositive | Error::Overdraft { .. } | Error::DomainCapExceeded { .. } => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            let code = exit_code_for(&err);
            let kind = if code == 2 { "infeasible" } else { "invalid" };
            eprintln!("error: {kind}: {err}");
            code
        }
    }
}
