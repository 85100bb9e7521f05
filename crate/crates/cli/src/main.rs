mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adamms_core::embed::BagOfWordsEmbedder;
use adamms_core::error::ErrorClass;
use adamms_core::mapping::{coverage_report, load_rules, resolve_mapping, MappingRule};
use adamms_core::merge::{run_recipe_with, RunOptions, Strategy};
use adamms_core::responses::read_inputs;
use adamms_core::search::{load_reports, render_selection_table, search, Metric, SearchReport, SearchRequest};
use adamms_core::store::{file_sha256, Checkpoint};
use adamms_core::toy::{single_peaked, LandscapeParams};
use adamms_core::{BackendDescriptor, Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "adamms", version, about = "Merge heterogeneous checkpoints and pick the interpolation coefficient without labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a checkpoint's tensor table.
    Inspect { checkpoint: PathBuf },
    /// Resolve the base-to-donor parameter mapping and report coverage.
    Map {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        donor: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Merge two checkpoints with one recipe.
    Merge(MergeArgs),
    /// Search the interpolation coefficient and write the merged checkpoint.
    Search(SearchArgs),
    /// Validate and render a search report (or an array of them).
    Report { report: PathBuf },
    /// Write a synthetic task, its two checkpoints and a ready-to-run config.
    ToyLab {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        inputs: usize,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    donor: Option<PathBuf>,
    #[arg(long)]
    pivot: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Merged checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Merge worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trim_density: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    subset_n: Option<usize>,
    #[arg(long, value_parser = parse_metric)]
    metric: Option<Metric>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Keep every candidate checkpoint under `<workdir>/candidates`.
    #[arg(long)]
    keep_candidates: bool,
    /// Run the backend twice per candidate and fail on any difference.
    #[arg(long)]
    self_check: bool,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
        "expected one of linear_interpolation, task_arithmetic, ties, dare_linear, dare_ties, metagpt".into()
    })
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| "expected exact or embedding".into())
}

/// A command failure; a search failure also carries its partial report.
struct Failure {
    error: Error,
    report: Option<PathBuf>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, report: None }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint).map_err(Failure::from),
        Command::Map { base, donor, rules } => cmd_map(&base, &donor, rules.as_deref()).map_err(Failure::from),
        Command::Merge(args) => cmd_merge(args).map_err(Failure::from),
        Command::Search(args) => cmd_search(args),
        Command::Report { report } => cmd_report(&report).map_err(Failure::from),
        Command::ToyLab { out_dir, seed, inputs } => cmd_toy_lab(&out_dir, seed, inputs).map_err(Failure::from),
    };
    match result {
        Ok(value) => {
            emit(&value);
            ExitCode::SUCCESS
        }
        Err(Failure { error, report }) => {
            eprintln!("error: {error}");
            let mut body = json!({
                "error": {
                    "name": error.name(),
                    "message": error.to_string(),
                    "subject": error.subject(),
                }
            });
            if let Some(report) = report {
                body["report"] = json!(report);
            }
            emit(&body);
            ExitCode::from(match error.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Backend => 4,
            })
        }
    }
}

fn emit(value: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = out.write_all(b"\n");
}

/// Exclusive ownership of a working directory for one invocation.
struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    fn acquire(workdir: &Path) -> Result<Self> {
        std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
        let path = workdir.join(".adamms.lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "workdir {} is in use by another invocation (remove {} if it is stale)",
                workdir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn cmd_inspect(path: &Path) -> Result<Value> {
    let ckpt = Checkpoint::open(path)?;
    let m = ckpt.manifest();
    eprintln!("{}: {} tensors, {} elements", path.display(), m.len(), m.total_elements());
    Ok(json!({
        "path": path,
        "sha256": file_sha256(path)?,
        "tensor_count": m.len(),
        "total_elements": m.total_elements(),
        "metadata": m.metadata,
        "tensors": m.entries,
    }))
}

fn rules_or_empty(path: Option<&Path>) -> Result<Vec<MappingRule>> {
    path.map_or_else(|| Ok(Vec::new()), load_rules)
}

fn cmd_map(base: &Path, donor: &Path, rules: Option<&Path>) -> Result<Value> {
    let base = Checkpoint::open(base)?;
    let donor = Checkpoint::open(donor)?;
    let mapping = resolve_mapping(base.manifest(), donor.manifest(), &rules_or_empty(rules)?)?;
    let coverage = coverage_report(&mapping, base.manifest());
    for w in &mapping.warnings {
        eprintln!("warning: {w}");
    }
    let c = &coverage.counts;
    eprintln!(
        "direct {} rename {} duplicate {} skip {} unmatched {}; {:.1}% of base elements mapped",
        c.direct,
        c.rename,
        c.duplicate,
        c.skip,
        c.unmatched,
        100.0 * coverage.mapped_element_fraction
    );
    Ok(json!({ "pairs": mapping.pairs, "coverage": coverage }))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
        if flag.is_some() {
            *slot = flag.clone();
        }
    };
    set(&mut config.base_path, &common.base);
    set(&mut config.donor_path, &common.donor);
    set(&mut config.pivot_path, &common.pivot);
    set(&mut config.rules_path, &common.rules);
    set(&mut config.output_path, &common.out);
    if let Some(w) = &common.workdir {
        config.workdir = w.clone();
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok(config)
}

fn cmd_merge(args: MergeArgs) -> Result<Value> {
    let mut config = load_config(&args.common)?;
    if let Some(s) = args.strategy {
        config.recipe.strategy = s;
    }
    if let Some(a) = args.alpha {
        config.recipe.alpha = a;
    }
    if let Some(d) = args.trim_density {
        config.recipe.trim_density = d;
    }
    if let Some(p) = args.drop_rate {
        config.recipe.drop_rate = p;
    }
    if args.common.pivot.is_some() {
        config.recipe.pivot_path = None;
    }
    let recipe = config.effective_recipe();
    recipe.validate()?;
    let (base_path, donor_path) = (config.base()?, config.donor()?);
    let _lock = WorkdirLock::acquire(&config.workdir)?;

    let base = Checkpoint::open(base_path)?;
    let donor = Checkpoint::open(donor_path)?;
    let mapping = resolve_mapping(base.manifest(), donor.manifest(), &rules_or_empty(config.rules_path.as_deref())?)?;
    for w in &mapping.warnings {
        eprintln!("warning: {w}");
    }
    let out = config.output();
    let outcome = run_recipe_with(
        &recipe,
        &base,
        &donor,
        &mapping,
        &out,
        &RunOptions {
            threads: args.common.threads,
        },
    )?;
    let coverage = coverage_report(&mapping, base.manifest());
    let digest = file_sha256(&out)?;
    eprintln!(
        "wrote {} ({} merged, {} copied)",
        out.display(),
        outcome.stats.merged_tensors,
        outcome.stats.copied_tensors
    );
    Ok(json!({
        "output": out,
        "sha256": digest,
        "recipe": recipe,
        "mapping": {
            "counts": coverage.counts,
            "total_elements": coverage.total_elements,
            "mapped_elements": coverage.mapped_elements,
            "mapped_element_fraction": coverage.mapped_element_fraction,
            "warnings": coverage.warnings,
        },
        "stats": outcome.stats,
    }))
}

fn cmd_search(args: SearchArgs) -> std::result::Result<Value, Failure> {
    let mut config = load_config(&args.common)?;
    if let Some(p) = &args.inputs {
        config.inputs_path = Some(p.clone());
    }
    if let Some(v) = args.lo {
        config.grid.lo = v;
    }
    if let Some(v) = args.hi {
        config.grid.hi = v;
    }
    if let Some(v) = args.step {
        config.grid.step = v;
    }
    if let Some(v) = args.subset_n {
        config.subset_n = v;
    }
    if let Some(m) = args.metric {
        config.metric = m;
    }
    if let Some(r) = &args.report {
        config.report_path = Some(r.clone());
    }
    if let Some(t) = &args.task {
        config.task = Some(t.clone());
    }

    let grid = config.grid.build()?;
    let backend_desc: BackendDescriptor = config.backend()?.clone();
    let inputs = read_inputs(config.inputs()?)?;
    let (base_path, donor_path) = (config.base()?, config.donor()?);
    let _lock = WorkdirLock::acquire(&config.workdir)?;

    let base = Checkpoint::open(base_path)?;
    let donor = Checkpoint::open(donor_path)?;
    let mapping = resolve_mapping(base.manifest(), donor.manifest(), &rules_or_empty(config.rules_path.as_deref())?)?;
    for w in &mapping.warnings {
        eprintln!("warning: {w}");
    }
    let backend = backend_desc.build(config.workdir.join("backend"))?;
    let embedder = BagOfWordsEmbedder::default();
    let output = config.output();
    let report_path = config.report();

    let mut request = SearchRequest::new(&base, &donor, &mapping, &inputs, &config.workdir);
    request.grid = grid;
    request.subset_n = config.subset_n;
    request.seed = config.seed;
    request.metric = config.metric;
    request.embedder = Some(&embedder);
    request.keep_candidates = args.keep_candidates;
    request.self_check = args.self_check || backend_desc.self_check;
    request.threads = args.common.threads;
    request.output = Some(output.clone());

    let finish = |mut report: SearchReport| -> Result<SearchReport> {
        report.task = config.task.clone();
        report.config = Some(config.to_value());
        let mut text = report.to_json_pretty()?;
        text.push('\n');
        std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
        eprint!("{}", report.render());
        Ok(report)
    };

    match search(&request, backend.as_ref()) {
        Ok(outcome) => {
            let report = finish(outcome.report)?;
            Ok(json!({
                "report": report_path,
                "selected_alpha": report.selected_alpha,
                "selected_index": report.selected_index,
                "output": output,
                "sha256": file_sha256(&output)?,
            }))
        }
        Err(aborted) => {
            finish(*aborted.report)?;
            Err(Failure {
                error: aborted.error,
                report: Some(report_path),
            })
        }
    }
}

fn cmd_report(path: &Path) -> Result<Value> {
    let reports = load_reports(path)?;
    if reports.len() == 1 {
        eprint!("{}", reports[0].render());
    } else {
        eprint!("{}", render_selection_table(&reports));
    }
    let value = serde_json::to_value(&reports)?;
    Ok(if reports.len() == 1 { value[0].clone() } else { value })
}

fn cmd_toy_lab(out_dir: &Path, seed: u64, inputs: usize) -> Result<Value> {
    if inputs == 0 {
        return Err(Error::Config("--inputs must be positive".into()));
    }
    let params = LandscapeParams {
        input_count: inputs,
        ..LandscapeParams::default()
    };
    let lab = single_peaked(seed, &params);
    let files = lab.write_to(out_dir)?;
    let name = |p: &Path| PathBuf::from(p.file_name().expect("file path"));
    let config = RunConfig {
        task: Some(format!("toy-{seed}")),
        base_path: Some(name(&files.base)),
        donor_path: Some(name(&files.donor)),
        inputs_path: Some(name(&files.inputs)),
        backend: Some(BackendDescriptor::toy(name(&files.spec))),
        workdir: PathBuf::from("work"),
        seed,
        ..RunConfig::default()
    };
    let config_path = out_dir.join("config.json");
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    std::fs::write(&config_path, text).map_err(|e| Error::io(&config_path, e))?;
    let grid = config.grid.build()?;
    let accuracy: Vec<Value> = grid
        .alphas
        .iter()
        .map(|&a| json!({ "alpha": a, "accuracy": lab.accuracy_at(a) }))
        .collect();
    eprintln!("toy task written to {}; run `adamms search --config {}`", out_dir.display(), config_path.display());
    Ok(json!({
        "config": config_path,
        "base": files.base,
        "donor": files.donor,
        "spec": files.spec,
        "inputs": files.inputs,
        "accuracy": accuracy,
    }))
}
