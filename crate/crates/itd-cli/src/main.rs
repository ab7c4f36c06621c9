//! Pipeline driver. Each stage reads and writes plain line-oriented JSON
//! artifacts so stages can run independently and be resumed. All randomness
//! flows from the config's master seed; rerunning a stage with identical
//! inputs produces byte-identical outputs.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 I/O or data-format error.

use clap::{Args, Parser, Subcommand};
use itd_core::config::RunConfig;
use itd_core::datagen::{self, DatagenParams, DeductorConfig};
use itd_core::dsl::{GrammarWeights, Vocabulary};
use itd_core::harness::{
    self, evaluate_method, fit_base_prior, generate_tasks, DetailRecord, EvalModels, Method,
    SweepReport, Task,
};
use itd_core::oracle;
use itd_core::scorer::ScorerTable;
use itd_core::trainer::{self, TrainMode};
use itd_core::{par, seed};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "itd", version, about = "Symbolic list-function induction pipeline")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads override (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task suite.
    GenTasks(GenTasksArgs),
    /// Generate the training corpus from a task file.
    Datagen(DatagenArgs),
    /// Fit a model from a corpus.
    Train(TrainArgs),
    /// Decode one batch with every method (debugging aid).
    Induce(InduceArgs),
    /// Evaluate methods on a task suite.
    Eval(EvalArgs),
    /// Run the full method x n x epsilon x seed sweep.
    Sweep(SweepArgs),
    /// Run the brute-force decoder oracles.
    OracleCheck,
}

#[derive(Args)]
struct GenTasksArgs {
    /// Output path (default: config tasks_path).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    task_count: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training mode: gd or io.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InduceArgs {
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Task id, e.g. task-007.
    #[arg(long)]
    task_id: String,
    /// Batch index within the task.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    #[arg(long)]
    model_gd: Option<PathBuf>,
    #[arg(long)]
    model_io: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Comma-separated method list (default: config sweep_methods).
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    model_gd: Option<PathBuf>,
    #[arg(long)]
    model_io: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    detail: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    detail: Option<PathBuf>,
}

enum AppError {
    /// Config or usage problem -> exit 2.
    Usage(String),
    /// I/O or data-format problem -> exit 3.
    Data(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) => write!(f, "{m}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> AppError {
    AppError::Data(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(AppError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, AppError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| data(format!("reading config {}: {e}", path.display())))?;
            RunConfig::from_toml_str(&text).map_err(|e| usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenTasks(args) => {
            let mut cfg = cfg;
            if let Some(c) = args.task_count {
                cfg.task_count = c;
            }
            if let Some(n) = args.n {
                cfg.n = n;
            }
            if let Some(b) = args.batches {
                cfg.batches = b;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let out = args.out.clone().unwrap_or_else(|| cfg.tasks_path.clone().into());
            cmd_gen_tasks(&cfg, &out)
        }
        Command::Datagen(args) => {
            let mut cfg = cfg;
            if let Some(e) = args.epsilon {
                cfg.epsilon = e;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let tasks = args.tasks.clone().unwrap_or_else(|| cfg.tasks_path.clone().into());
            let out = args.out.clone().unwrap_or_else(|| cfg.corpus_path.clone().into());
            cmd_datagen(&cfg, &tasks, &out)
        }
        Command::Train(args) => {
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let mode = match args.mode.as_str() {
                "gd" => TrainMode::Gd,
                "io" => TrainMode::Io,
                other => return Err(usage(format!("unknown train mode {other:?} (gd or io)"))),
            };
            let corpus = args.corpus.clone().unwrap_or_else(|| cfg.corpus_path.clone().into());
            let default_out = match mode {
                TrainMode::Gd => cfg.model_gd_path.clone(),
                TrainMode::Io => cfg.model_io_path.clone(),
            };
            let out = args.out.clone().unwrap_or_else(|| default_out.into());
            cmd_train(&cfg, mode, &corpus, &out)
        }
        Command::Induce(args) => {
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cmd_induce(&cfg, args)
        }
        Command::Eval(args) => {
            let mut cfg = cfg;
            if let Some(e) = args.epsilon {
                cfg.epsilon = e;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cmd_eval(&cfg, args)
        }
        Command::Sweep(args) => {
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let summary = args.summary.clone().unwrap_or_else(|| cfg.summary_path.clone().into());
            let detail = args.detail.clone().unwrap_or_else(|| cfg.detail_path.clone().into());
            cmd_sweep(&cfg, &summary, &detail)
        }
        Command::OracleCheck => cmd_oracle_check(&cfg),
    }
}

fn ensure_parent(path: &Path) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| data(format!("creating {}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn read_tasks_file(path: &Path) -> Result<Vec<Task>, AppError> {
    let file =
        fs::File::open(path).map_err(|e| data(format!("opening {}: {e}", path.display())))?;
    harness::read_tasks(BufReader::new(file))
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ScorerTable, AppError> {
    let model =
        ScorerTable::load(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    if model.vocab() != Vocabulary::dsl() {
        return Err(data(format!(
            "{}: model vocabulary does not match the hypothesis language",
            path.display()
        )));
    }
    Ok(model)
}

fn cmd_gen_tasks(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let tasks = par::with_workers(cfg.workers, || {
        generate_tasks(
            cfg.task_count,
            cfg.n,
            cfg.batches,
            cfg.m_de,
            cfg.depth_cap,
            &GrammarWeights::default(),
            cfg.master_seed,
        )
    });
    ensure_parent(out)?;
    let mut buf = Vec::new();
    harness::write_tasks(&tasks, &mut buf).map_err(|e| data(e.to_string()))?;
    fs::write(out, buf).map_err(|e| data(format!("writing {}: {e}", out.display())))?;
    println!(
        "wrote {} tasks (n={}, batches={}, m_de={}, seed={}) to {}",
        tasks.len(),
        cfg.n,
        cfg.batches,
        cfg.m_de,
        cfg.master_seed,
        out.display()
    );
    Ok(())
}

fn cmd_datagen(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<(), AppError> {
    let tasks = read_tasks_file(tasks_path)?;
    let params = DatagenParams {
        per_batch_hypotheses: cfg.per_batch_hypotheses,
        pairs_per_f: cfg.pairs_per_f,
        consistency_min: cfg.consistency_min,
        budget: cfg.budget,
        length_range: (cfg.input_min_len, cfg.input_max_len),
        deductor: DeductorConfig::noisy(cfg.epsilon),
        grammar: GrammarWeights::default(),
        depth_cap: cfg.depth_cap,
    };
    let (mut records, stats) = par::with_workers(cfg.workers, || {
        datagen::generate_corpus(&tasks, &params, seed::derive(cfg.master_seed, &[1]))
    });
    if cfg.dedup_corpus {
        let before = records.len();
        records = datagen::dedup_records(records);
        println!("dedup removed {} duplicate records", before - records.len());
    }
    ensure_parent(out)?;
    let mut buf = Vec::new();
    datagen::write_corpus(&records, &mut buf).map_err(|e| data(e.to_string()))?;
    fs::write(out, buf).map_err(|e| data(format!("writing {}: {e}", out.display())))?;
    println!(
        "wrote {} records to {} (epsilon={}, dropped {} unsatisfiable hypotheses)",
        records.len(),
        out.display(),
        cfg.epsilon,
        stats.dropped_hypotheses
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, mode: TrainMode, corpus: &Path, out: &Path) -> Result<(), AppError> {
    let file =
        fs::File::open(corpus).map_err(|e| data(format!("opening {}: {e}", corpus.display())))?;
    let records = datagen::read_corpus(BufReader::new(file))
        .map_err(|e| data(format!("{}: {e}", corpus.display())))?;
    if records.is_empty() {
        return Err(usage("empty corpus".to_string()));
    }
    let encoder = cfg.encoder.parse().expect("config validated");
    let instances =
        trainer::build_instances(&records, mode, cfg.io_group_size, encoder, cfg.master_seed);
    let model = trainer::fit(&instances, cfg.order, cfg.lambda);
    ensure_parent(out)?;
    model
        .save(out)
        .map_err(|e| data(format!("writing {}: {e}", out.display())))?;
    println!(
        "fitted {} instances ({} records); perplexity on train: {:.3}; model written to {}",
        instances.len(),
        records.len(),
        trainer::perplexity(&model, &instances),
        out.display()
    );
    Ok(())
}

struct LoadedModels {
    base: ScorerTable,
    io: Option<ScorerTable>,
    gd: Option<ScorerTable>,
}

fn load_models(
    cfg: &RunConfig,
    model_gd: &Option<PathBuf>,
    model_io: &Option<PathBuf>,
    need_gd: bool,
    need_io: bool,
) -> Result<LoadedModels, AppError> {
    let base = fit_base_prior(
        cfg.base_prior_samples,
        cfg.depth_cap,
        &GrammarWeights::default(),
        cfg.order,
        cfg.lambda,
        cfg.master_seed,
    );
    let gd_path = model_gd.clone().unwrap_or_else(|| cfg.model_gd_path.clone().into());
    let io_path = model_io.clone().unwrap_or_else(|| cfg.model_io_path.clone().into());
    let gd = if gd_path.exists() {
        Some(load_model(&gd_path)?)
    } else if need_gd {
        return Err(usage(format!(
            "method itd requires a GD model; {} not found",
            gd_path.display()
        )));
    } else {
        None
    };
    let io = if io_path.exists() {
        Some(load_model(&io_path)?)
    } else if need_io {
        return Err(usage(format!(
            "method itd-io requires an IO model; {} not found",
            io_path.display()
        )));
    } else {
        None
    };
    Ok(LoadedModels { base, io, gd })
}

fn cmd_induce(cfg: &RunConfig, args: &InduceArgs) -> Result<(), AppError> {
    let tasks_path = args.tasks.clone().unwrap_or_else(|| cfg.tasks_path.clone().into());
    let tasks = read_tasks_file(&tasks_path)?;
    let task = tasks
        .iter()
        .find(|t| t.id == args.task_id)
        .ok_or_else(|| usage(format!("task {:?} not found", args.task_id)))?;
    let batch = task
        .d_in
        .get(args.batch)
        .ok_or_else(|| usage(format!("batch {} out of range", args.batch)))?;
    let models = load_models(cfg, &args.model_gd, &args.model_io, false, false)?;
    let p = cfg.decode_params();
    let ded = DeductorConfig::noisy(cfg.epsilon);

    println!("task {} truth: {}", task.id, task.truth);
    for obs in batch {
        println!("  {} -> {}", obs.x, obs.y);
    }
    for method in Method::ALL {
        let model = match method {
            Method::Io | Method::Sc | Method::Hs => Some(&models.base),
            Method::ItdIo => models.io.as_ref(),
            Method::Itd => models.gd.as_ref(),
        };
        let Some(model) = model else {
            println!("{method:>7}: (model not supplied, skipped)");
            continue;
        };
        let mut rng = seed::rng_for(cfg.master_seed, &[0x1D0C, args.batch as u64]);
        let induced = match method {
            Method::Io | Method::ItdIo => harness::run_io_baseline(model, batch, &p),
            Method::Sc => harness::run_sc_baseline(model, batch, &p, &mut rng),
            Method::Hs => harness::run_hs_baseline(model, batch, &p, &ded, &[], &mut rng),
            Method::Itd => harness::run_itd(model, batch, &p),
        };
        let acc = harness::evaluate_hypothesis(induced.hypothesis.as_ref(), &task.d_de);
        println!(
            "{method:>7}: acc={acc:.3}  {}",
            induced.text.as_deref().unwrap_or("(no finished decode)")
        );
    }
    Ok(())
}

fn parse_methods(spec: &Option<String>, cfg: &RunConfig) -> Result<Vec<Method>, AppError> {
    let names: Vec<String> = match spec {
        Some(s) => s.split(',').map(|m| m.trim().to_string()).collect(),
        None => cfg.sweep_methods.clone(),
    };
    names
        .iter()
        .map(|m| m.parse::<Method>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(), AppError> {
    let tasks_path = args.tasks.clone().unwrap_or_else(|| cfg.tasks_path.clone().into());
    let tasks = read_tasks_file(&tasks_path)?;
    if tasks.is_empty() {
        return Err(data(format!("{}: no tasks", tasks_path.display())));
    }
    let methods = parse_methods(&args.methods, cfg)?;
    let need_gd = methods.contains(&Method::Itd);
    let need_io = methods.contains(&Method::ItdIo);
    let models = load_models(cfg, &args.model_gd, &args.model_io, need_gd, need_io)?;
    let eval_models = EvalModels {
        base: &models.base,
        io: models.io.as_ref(),
        gd: models.gd.as_ref(),
    };
    let n = tasks[0].d_in.first().map_or(0, |b| b.len());
    let p = cfg.decode_params();
    let ded = DeductorConfig::noisy(cfg.epsilon);

    let mut results: BTreeMap<String, BTreeMap<String, BTreeMap<String, harness::CellStats>>> =
        BTreeMap::new();
    let mut details: Vec<DetailRecord> = Vec::new();
    println!("{:>8}  {:>8}", "method", "mean");
    for &method in &methods {
        let (mean, rows) = par::with_workers(cfg.workers, || {
            evaluate_method(
                method,
                &tasks,
                &eval_models,
                &p,
                &ded,
                cfg.master_seed,
                n,
                cfg.epsilon,
                0,
            )
        })
        .map_err(|e| usage(e.to_string()))?;
        println!("{:>8}  {mean:>8.4}", method.to_string());
        results
            .entry(method.to_string())
            .or_default()
            .entry(n.to_string())
            .or_default()
            .insert(cfg.epsilon.to_string(), harness::CellStats { mean, stderr: 0.0 });
        details.extend(rows);
    }

    let summary_path = args.summary.clone().unwrap_or_else(|| cfg.summary_path.clone().into());
    let detail_path = args.detail.clone().unwrap_or_else(|| cfg.detail_path.clone().into());
    write_summary(&summary_path, cfg, &results)?;
    write_details(&detail_path, cfg, &details)?;
    println!(
        "summary: {}  detail: {}",
        summary_path.display(),
        detail_path.display()
    );
    Ok(())
}

fn write_summary(
    path: &Path,
    cfg: &RunConfig,
    results: &BTreeMap<String, BTreeMap<String, BTreeMap<String, harness::CellStats>>>,
) -> Result<(), AppError> {
    ensure_parent(path)?;
    let doc = serde_json::json!({ "config": cfg, "results": results });
    let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| data(format!("writing {}: {e}", path.display())))
}

fn write_details(path: &Path, cfg: &RunConfig, details: &[DetailRecord]) -> Result<(), AppError> {
    ensure_parent(path)?;
    let mut out = Vec::new();
    // Header record embeds the resolved config for later recomputation.
    serde_json::to_writer(&mut out, &serde_json::json!({ "config": cfg }))
        .expect("config serializes");
    out.push(b'\n');
    for d in details {
        serde_json::to_writer(&mut out, d).expect("detail serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| data(format!("writing {}: {e}", path.display())))
}

fn cmd_sweep(cfg: &RunConfig, summary_path: &Path, detail_path: &Path) -> Result<(), AppError> {
    let report: SweepReport = par::with_workers(cfg.workers, || harness::sweep(cfg));
    println!(
        "{:>8} {:>4} {:>8} {:>8} {:>8}",
        "method", "n", "epsilon", "mean", "stderr"
    );
    for (method, by_n) in &report.results {
        for (n, by_eps) in by_n {
            for (eps, stats) in by_eps {
                println!(
                    "{method:>8} {n:>4} {eps:>8} {:>8.4} {:>8.4}",
                    stats.mean, stats.stderr
                );
            }
        }
    }
    write_summary(summary_path, cfg, &report.results)?;
    write_details(detail_path, cfg, &report.details)?;
    println!(
        "summary: {}  detail: {}",
        summary_path.display(),
        detail_path.display()
    );
    Ok(())
}

fn cmd_oracle_check(cfg: &RunConfig) -> Result<(), AppError> {
    let reports = oracle::run_all_checks(cfg.master_seed);
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{}  {}  ({:.2?}) {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.elapsed,
            r.detail
        );
        all_pass &= r.pass;
    }
    std::io::stdout().flush().ok();
    if all_pass {
        Ok(())
    } else {
        Err(data("oracle checks failed".to_string()))
    }
}
