use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde_json::json;

use soupsearch::analysis::{self, ScoreMatrix, SubsetRow, TrainingStage};
use soupsearch::driver::{
    build_evaluator, resume_with, run_search, ErrorPolicy, EvaluatorSpec, RunOptions, SearchConfig, SearchLog,
    TrialKind,
};
use soupsearch::fitness::{baseline_merge_best, baseline_uniform, best_single, macro_average, TaskScores};
use soupsearch::merger::{merge_checked, normalize, WeightVector};
use soupsearch::tensorstore::{read_checkpoint, write_checkpoint, CheckpointPool};
use soupsearch::toylab::{gen_radial_suite, gen_ridge_suite, save_toy_lab, GeneratorConfig};
use soupsearch::Error;

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "soupsearch", version, about = "Search-optimized linear merging of checkpoint pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy pool and its task suite.
    GenToys(GenToys),
    /// Score one checkpoint.
    Eval(EvalArgs),
    /// Merge a pool with the given (raw) weights.
    Merge(MergeArgs),
    /// Score the uniform soup, merge-best and best single checkpoint.
    Baselines(BaselineArgs),
    /// Search merge weights with CMA-ES.
    Optimize(OptimizeArgs),
    /// Export analysis tables as CSV.
    Analyze(AnalyzeArgs),
    /// Training versus search compute estimate.
    Cost(CostArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    Radial,
    Ridge,
}

#[derive(Args)]
struct GenToys {
    #[arg(long, value_enum)]
    kind: ToyKind,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 1e-3)]
    ridge_lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct EvaluatorArgs {
    /// Toy-lab directory (or suite.json) for the builtin evaluator.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// External evaluator command.
    #[arg(long)]
    evaluator: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    eval: EvaluatorArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<String>,
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    pool: PathBuf,
    /// JSON array, inline or as a file path.
    #[arg(long)]
    weights: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    pool: PathBuf,
    #[command(flatten)]
    eval: EvaluatorArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<String>,
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Abort,
    Penalize,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, conflicts_with = "suite")]
    evaluator: Option<String>,
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    heldout: Vec<String>,
    #[arg(long, default_value_t = 50)]
    budget: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long)]
    lambda: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue the run recorded in this log.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, value_enum, default_value = "abort")]
    on_eval_error: Policy,
    #[arg(long)]
    no_warm_start: bool,
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 1e-9)]
    epsilon_cache: f64,
    #[arg(long)]
    timeout: Option<f64>,
    /// Trial log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Corr,
    Pareto,
    Sparsity,
    Progress,
    Subsets,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    what: Analysis,
    /// Trial log; `subsets` takes one per subset size.
    #[arg(long)]
    log: Vec<PathBuf>,
    /// Score matrix CSV (first column labels, numeric columns tasks).
    #[arg(long, conflicts_with = "log")]
    scores: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long, default_value_t = analysis::DEFAULT_SPARSITY_EPSILON)]
    epsilon: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    params: f64,
    /// batch,steps
    #[arg(long)]
    sft: String,
    /// batch,steps
    #[arg(long)]
    po: String,
    /// task=n,...
    #[arg(long)]
    samples: String,
    #[arg(long, default_value_t = 50)]
    budget: u64,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn io(path: &Path, e: std::io::Error) -> Error {
    usage(format!("{}: {e}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn evaluator_spec(suite: Option<&Path>, command: Option<&str>, timeout: Option<f64>) -> Result<EvaluatorSpec> {
    match (suite, command) {
        (Some(s), None) => Ok(EvaluatorSpec::Builtin { suite: absolute(s) }),
        (None, Some(c)) => Ok(EvaluatorSpec::External {
            command: c.to_string(),
            timeout_secs: timeout,
        }),
        _ => Err(usage("give exactly one of --suite or --evaluator")),
    }
}

fn gen_toys(a: GenToys) -> Result<()> {
    let cfg = GeneratorConfig {
        dim: a.dim,
        pool_size: a.n,
        tasks: a.tasks,
        noise: a.noise,
        seed: a.seed,
        ridge_lambda: a.ridge_lambda,
        ..GeneratorConfig::default()
    };
    let (pool, suite) = match a.kind {
        ToyKind::Radial => gen_radial_suite(&cfg)?,
        ToyKind::Ridge => gen_ridge_suite(&cfg)?,
    };
    let saved = save_toy_lab(&a.out, &pool, &suite)?;
    print_json(&json!({
        "out": a.out,
        "checkpoints": saved.labels(),
        "tasks": suite.task_names(),
        "pool_hash": saved.content_hash()?,
    }));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let spec = evaluator_spec(a.eval.suite.as_deref(), a.eval.evaluator.as_deref(), a.timeout)?;
    let evaluator = build_evaluator(&spec)?;
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let ev = evaluator.evaluate(&ckpt, &a.tasks)?;
    let fitness = macro_average(&ev.scores, &a.tasks)?;
    print_json(&json!({ "scores": ev.scores, "fitness": fitness }));
    Ok(())
}

fn parse_weights(arg: &str) -> Result<Vec<f64>> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg).map_err(|e| io(Path::new(arg), e))?
    } else {
        arg.to_string()
    };
    serde_json::from_str(&text).map_err(|e| usage(format!("--weights must be a JSON array of numbers: {e}")))
}

fn merge_cmd(a: MergeArgs) -> Result<()> {
    let pool = CheckpointPool::from_dir(&a.pool)?;
    let raw = parse_weights(&a.weights)?;
    if raw.len() != pool.len() {
        return Err(usage(format!("{} weights for a pool of {}", raw.len(), pool.len())));
    }
    let w = normalize(&WeightVector(raw))?;
    let mut merged = merge_checked(&pool, &w)?;
    merged.id = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write_checkpoint(&a.out, &merged)?;
    print_json(&json!({ "out": a.out, "weights": w }));
    Ok(())
}

fn baselines(a: BaselineArgs) -> Result<()> {
    let spec = evaluator_spec(a.eval.suite.as_deref(), a.eval.evaluator.as_deref(), a.timeout)?;
    let evaluator = build_evaluator(&spec)?;
    let pool = CheckpointPool::from_dir(&a.pool)?;
    let mut individual: Vec<TaskScores> = Vec::with_capacity(pool.len());
    for i in 0..pool.len() {
        individual.push(evaluator.evaluate(&pool.load(i)?, &a.tasks)?.scores);
    }
    let score = |w: &soupsearch::merger::NormalizedWeights| -> Result<serde_json::Value> {
        let m = merge_checked(&pool, w)?;
        let s = evaluator.evaluate(&m, &a.tasks)?.scores;
        let f = macro_average(&s, &a.tasks)?;
        Ok(json!({ "weights": w, "scores": s, "fitness": f }))
    };
    let (mb, picked) = baseline_merge_best(&individual, &a.tasks)?;
    let (single, fit) = best_single(&individual, &a.tasks)?;
    let labels = pool.labels();
    print_json(&json!({
        "uniform": score(&baseline_uniform(pool.len()))?,
        "merge_best": score(&mb)?,
        "merge_best_checkpoints": picked.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>(),
        "best_single": { "index": single, "label": labels[single], "scores": individual[single], "fitness": fit },
    }));
    Ok(())
}

fn summarize(log: &SearchLog) -> serde_json::Value {
    json!({
        "trials": log.trials.len(),
        "seeded": log.count(TrialKind::Seeded),
        "sampled": log.count(TrialKind::Sampled),
        "complete": log.is_complete(),
        "summary": log.summary,
    })
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    if let Some(log_path) = &a.resume {
        let log = SearchLog::read(log_path)?;
        let dir = a
            .pool
            .clone()
            .or_else(|| log.config.pool_dir.clone())
            .ok_or_else(|| usage("--pool is required: the log does not record a pool directory"))?;
        let pool = CheckpointPool::from_dir(&dir)?;
        let evaluator = build_evaluator(&log.config.search.evaluator)?;
        let log = resume_with(log_path, &pool, evaluator.as_ref(), None)?;
        print_json(&summarize(&log));
        return Ok(());
    }
    let pool_dir = a.pool.clone().ok_or_else(|| usage("--pool is required"))?;
    if a.tasks.is_empty() {
        return Err(usage("--tasks is required"));
    }
    let spec = evaluator_spec(a.suite.as_deref(), a.evaluator.as_deref(), a.timeout)?;
    let mut cfg = SearchConfig::new(a.tasks.clone(), spec);
    cfg.budget = a.budget;
    cfg.sigma0 = a.sigma0;
    cfg.lambda = a.lambda;
    cfg.seed = a.seed;
    cfg.heldout_tasks = a.heldout.clone();
    cfg.warm_start = !a.no_warm_start;
    cfg.on_eval_error = match a.on_eval_error {
        Policy::Abort => ErrorPolicy::Abort,
        Policy::Penalize => ErrorPolicy::Penalize,
    };
    cfg.top_n = a.top_n;
    cfg.epsilon_cache = a.epsilon_cache;
    cfg.parallel = a.parallel;
    let pool = CheckpointPool::from_dir(&pool_dir)?;
    let evaluator = build_evaluator(&cfg.evaluator)?;
    let opts = RunOptions {
        log_path: a.log.clone(),
        pool_dir: Some(absolute(&pool_dir)),
        stop_after_sampled: None,
    };
    let log = run_search(&cfg, &pool, evaluator.as_ref(), &opts)?;
    print_json(&summarize(&log));
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| io(p, e))?),
        None => Box::new(std::io::stdout()),
    })
}

fn one_log(a: &AnalyzeArgs) -> Result<SearchLog> {
    match a.log.as_slice() {
        [p] => Ok(SearchLog::read(p)?),
        _ => Err(usage("give exactly one --log")),
    }
}

fn score_source(a: &AnalyzeArgs) -> Result<ScoreMatrix> {
    match &a.scores {
        Some(p) => Ok(ScoreMatrix::from_csv(p)?),
        None => Ok(analysis::log_score_matrix(&one_log(a)?)?),
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let out = output(a.out.as_deref())?;
    match a.what {
        Analysis::Corr => {
            let m = score_source(&a)?;
            let m = if a.tasks.is_empty() {
                m
            } else {
                ScoreMatrix::new(m.labels.clone(), a.tasks.clone(), m.tuples(&a.tasks)?)?
            };
            analysis::write_correlation_csv(out, &m.tasks, &analysis::correlation_matrix(&m)?)?;
        }
        Analysis::Pareto => {
            let m = score_source(&a)?;
            let tasks = if a.tasks.is_empty() { m.tasks.clone() } else { a.tasks.clone() };
            let points = m.tuples(&tasks)?;
            let front = analysis::pareto_front(&points)?;
            analysis::write_pareto_csv(out, &m.labels, &tasks, &points, &front)?;
        }
        Analysis::Sparsity => {
            let log = one_log(&a)?;
            analysis::write_sparsity_csv(out, &log, a.top_k, a.epsilon)?;
        }
        Analysis::Progress => {
            let log = one_log(&a)?;
            analysis::write_progress_csv(out, &analysis::progress(&log)?)?;
        }
        Analysis::Subsets => {
            if a.log.is_empty() {
                return Err(usage("subsets needs one --log per subset size"));
            }
            let mut rows = Vec::new();
            let mut tasks: Option<Vec<String>> = None;
            for p in &a.log {
                let log = SearchLog::read(p)?;
                let t = log.config.search.tasks.clone();
                if tasks.get_or_insert_with(|| t.clone()) != &t {
                    return Err(usage("subset logs use different task sets"));
                }
                let tuples: Vec<Vec<f64>> = log
                    .trials
                    .iter()
                    .filter(|r| r.kind == TrialKind::Sampled)
                    .filter_map(|r| r.scores.select(&t).ok())
                    .collect();
                rows.push(SubsetRow {
                    n: log.config.pool_labels.len(),
                    best_fitness: log.best().map_or(f64::NAN, |b| b.fitness.0),
                    centroid: analysis::centroid(&tuples)?,
                });
            }
            rows.sort_by_key(|r| r.n);
            analysis::write_subsets_csv(out, &tasks.unwrap_or_default(), &rows)?;
        }
    }
    Ok(())
}

fn parse_pair(s: &str, flag: &str) -> Result<TrainingStage> {
    let parts: Vec<&str> = s.split(',').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--{flag} expects batch,steps")))?;
    match nums.as_slice() {
        [b, s] => Ok(TrainingStage { batch: *b, steps: *s }),
        _ => Err(usage(format!("--{flag} expects batch,steps"))),
    }
}

fn cost(a: CostArgs) -> Result<()> {
    let mut samples = IndexMap::new();
    for item in a.samples.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--samples item {item:?} is not task=n")))?;
        let n: f64 = v.trim().parse().map_err(|_| usage(format!("bad sample count {v:?}")))?;
        samples.insert(k.trim().to_string(), n);
    }
    let report = analysis::flops_cost(a.params, parse_pair(&a.sft, "sft")?, parse_pair(&a.po, "po")?, &samples, a.budget)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenToys(a) => gen_toys(a),
        Command::Eval(a) => eval(a),
        Command::Merge(a) => merge_cmd(a),
        Command::Baselines(a) => baselines(a),
        Command::Optimize(a) => optimize(a),
        Command::Analyze(a) => analyze(a),
        Command::Cost(a) => cost(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
