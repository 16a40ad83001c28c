//! Command-line entry point: `mvkm <synth|train|eval|grid|analyze|validate>`.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{
    manifest_path, resolve_seed, DataSection, EvalSection, Manifest, RunConfig, SeedSource, DEFAULT_SEED, SEED_ENV,
};

use crate::analysis::{
    bias_score_correlation, knowledge_curves, material_cluster_scores, material_clusters, student_cluster_scores,
    student_clusters, write_cluster_csv, write_cluster_scores_csv,
};
use crate::data::{load_dataset, save_dataset, Dataset, Format};
use crate::error::{Error, Result};
use crate::eval::{audit_access_log, evaluate_online, grid_search, EvalReport, Grid, GridResult, Method};
use crate::model::{HyperParams, ModelParams};
use crate::synth::{generate, SynthConfig};
use crate::train::{fit, Ablation};
use config::RunContext;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MISSING_FILE: i32 = 4;
pub const EXIT_DATA: i32 = 5;
pub const EXIT_RUNTIME: i32 = 6;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::MissingFile(_) => EXIT_MISSING_FILE,
        Error::Parse { .. } | Error::Integrity(_) | Error::Range(_) | Error::EmptySequence { .. } | Error::Json(_) => {
            EXIT_DATA
        }
        _ => EXIT_RUNTIME,
    }
}

#[derive(Parser, Debug)]
#[command(name = "mvkm", version, about = "Multi-view knowledge model: synthesize, train, evaluate, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its ground truth
    Synth(SynthArgs),
    /// Fit a model on a dataset
    Train(TrainArgs),
    /// Cross-validated online next-attempt evaluation
    Eval(EvalArgs),
    /// Hyperparameter grid search on a validation split
    Grid(GridArgs),
    /// Knowledge curves, clustering and bias correlation of a trained model
    Analyze(AnalyzeArgs),
    /// Check that a dataset loads and print a summary
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config with optional sections: seed, data, synth, hyper, eval, grid
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file and MVKM_SEED
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct DataArg {
    /// Dataset file (.csv or .json)
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct HyperArgs {
    /// Number of student archetypes
    #[arg(long)]
    k: Option<usize>,
    /// Number of latent concepts
    #[arg(long = "concepts")]
    c: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    /// Per-view reconstruction weights, comma separated
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    eta: Option<f64>,
    /// Number of preceding attempts in the learning penalty
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl HyperArgs {
    fn apply(&self, hp: &mut HyperParams) {
        if let Some(v) = self.k {
            hp.k = v;
        }
        if let Some(v) = self.c {
            hp.c = v;
        }
        if let Some(v) = self.omega {
            hp.omega = v;
        }
        if let Some(v) = &self.gamma {
            hp.gamma = v.clone();
        }
        if let Some(v) = self.eta {
            hp.eta = v;
        }
        if let Some(v) = self.m {
            hp.m = v;
        }
        if let Some(v) = self.lambda_t {
            hp.lambda_t = v;
        }
        if let Some(v) = self.lambda_s {
            hp.lambda_s = v;
        }
        if let Some(v) = self.epochs {
            hp.epochs = v;
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Start from a named regime instead of the config's synth section
    #[arg(long, value_parser = ["ng", "ng2", "g"])]
    preset: Option<String>,
    #[arg(long)]
    students: Option<usize>,
    /// Output dataset (.csv or .json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value = "full")]
    ablation: String,
    /// Model checkpoint (.json); loss history goes to `<out>.history.csv`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma separated subset of full, base, no-penalty, avg
    #[arg(long, value_delimiter = ',')]
    ablations: Option<Vec<String>>,
    /// Name of the graded view to predict
    #[arg(long)]
    target_view: Option<String>,
    /// Parallel fold workers
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    hyper: HyperArgs,
    /// JSON grid; replaces the config's grid section
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    target_view: Option<String>,
    /// Parallel grid-point workers
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Training dataset; needed for --bias-corr and cluster score tables
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write mean knowledge curves of all students to this CSV
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Concepts to include in the curves, comma separated (default: all)
    #[arg(long, value_delimiter = ',')]
    concepts: Option<Vec<usize>>,
    /// Cluster students into this many groups
    #[arg(long)]
    cluster_students: Option<usize>,
    /// Cluster materials into this many groups
    #[arg(long)]
    cluster_materials: Option<usize>,
    /// Views whose materials are clustered, by name (default: all)
    #[arg(long, value_delimiter = ',')]
    material_views: Option<Vec<String>>,
    /// Spearman correlation of material bias and mean score per graded view
    #[arg(long)]
    bias_corr: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    /// Also check a model checkpoint against the dataset
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mvkm: error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Grid(a) => cmd_grid(a, argv),
        Command::Analyze(a) => cmd_analyze(a, argv),
        Command::Validate(a) => cmd_validate(a, argv),
    }
}

fn context(command: &str, common: &Common, argv: Vec<String>) -> Result<RunContext> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let (seed, seed_source) = resolve_seed(common.seed, config.seed, env.as_deref())?;
    config.apply_seed(seed);
    eprintln!("mvkm {command}: seed {seed} ({})", seed_source_label(seed_source));
    let inputs = common.config.iter().cloned().collect();
    Ok(RunContext { command: command.into(), argv, seed, seed_source, config, inputs })
}

fn seed_source_label(s: SeedSource) -> &'static str {
    match s {
        SeedSource::Flag => "--seed",
        SeedSource::Config => "config file",
        SeedSource::Env => SEED_ENV,
        SeedSource::Default => "default",
    }
}

fn load_data(ctx: &mut RunContext, flag: &DataArg) -> Result<Dataset> {
    if let Some(p) = &flag.data {
        ctx.config.data.path = Some(p.clone());
    }
    let path = ctx
        .config
        .data
        .path
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (use --data or data.path)".into()))?;
    let opts = ctx.config.load_options()?;
    let ds = load_dataset(&path, Format::from_path(&path), &opts)?;
    ctx.inputs.push(path);
    if let Some(s) = &ctx.config.data.schema {
        ctx.inputs.push(s.clone());
    }
    Ok(ds)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_synth(a: SynthArgs, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = context("synth", &a.common, argv)?;
    if let Some(p) = &a.preset {
        let base = match p.as_str() {
            "ng" => SynthConfig::synthetic_ng(),
            "ng2" => SynthConfig::synthetic_ng2(),
            _ => SynthConfig::synthetic_g(),
        };
        ctx.config.synth = SynthConfig { seed: ctx.seed, ..base };
    }
    if let Some(n) = a.students {
        ctx.config.synth.num_students = n;
    }
    let (ds, truth) = generate(&ctx.config.synth)?;
    ensure_parent(&a.out)?;
    save_dataset(&ds, &a.out, Format::from_path(&a.out))?;
    let truth_path = sibling(&a.out, ".truth.json");
    crate::data::write_json_file(&truth_path, &truth)?;
    ctx.write_manifest(&a.out, start.elapsed())?;
    ctx.write_manifest(&truth_path, start.elapsed())?;
    eprintln!(
        "mvkm synth: {} students, {} records -> {}",
        ds.num_students(),
        ds.records().len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = context("train", &a.common, argv)?;
    let ablation: Ablation = a.ablation.parse()?;
    a.hyper.apply(&mut ctx.config.hyper);
    let ds = load_data(&mut ctx, &a.data)?;
    let hp = ctx.config.hyper.clone();
    let result = fit(&ds, &hp, ablation)?;
    ensure_parent(&a.out)?;
    result.params.save(&ablation.effective(&hp), &a.out)?;
    let history_path = sibling(&a.out, ".history.csv");
    let rows = result
        .history
        .iter()
        .enumerate()
        .map(|(i, o)| vec![i.to_string(), o.l1.to_string(), o.l2.to_string(), o.total.to_string()])
        .collect();
    crate::analysis::write_csv(&history_path, &["epoch", "l1", "l2", "total"], rows)?;
    ctx.write_manifest(&a.out, start.elapsed())?;
    ctx.write_manifest(&history_path, start.elapsed())?;
    let last = result.history.last().expect("history has the initial objective");
    eprintln!(
        "mvkm train: {} epochs, objective {:.6} -> {:.6}",
        result.epochs_run, result.history[0].total, last.total
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config_sha256: String,
    seed: u64,
    folds: usize,
    target_view: String,
    num_students: usize,
    num_records: usize,
    reports: &'a [EvalReport],
}

fn cmd_eval(a: EvalArgs, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = context("eval", &a.common, argv)?;
    a.hyper.apply(&mut ctx.config.hyper);
    if let Some(f) = a.folds {
        ctx.config.eval.folds = f;
    }
    if let Some(list) = &a.ablations {
        ctx.config.eval.ablations = list.clone();
    }
    if let Some(t) = &a.target_view {
        ctx.config.eval.target_view = Some(t.clone());
    }
    if let Some(j) = a.jobs {
        ctx.config.eval.jobs = j;
    }
    let methods: Vec<Method> =
        ctx.config.eval.ablations.iter().map(|s| s.trim().parse()).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Config("no ablations selected".into()));
    }
    let ds = load_data(&mut ctx, &a.data)?;
    let cfg = ctx.config.eval_config(&ds)?;
    let target = cfg.target(&ds)?;
    let mut reports = Vec::with_capacity(methods.len());
    for m in methods {
        let report = evaluate_online(&ds, &ctx.config.hyper, m, &cfg)?;
        audit_access_log(&report.access_log)?;
        eprintln!(
            "mvkm eval: {:<11} RMSE {:.4} (var {:.2e})  MAE {:.4} (var {:.2e})",
            report.label, report.rmse_mean, report.rmse_var, report.mae_mean, report.mae_var
        );
        reports.push(report);
    }
    let out = EvalOutput {
        config_sha256: ctx.config.hash(),
        seed: ctx.seed,
        folds: cfg.folds,
        target_view: ds.view(target).name.clone(),
        num_students: ds.num_students(),
        num_records: ds.records().len(),
        reports: &reports,
    };
    ensure_parent(&a.out)?;
    crate::data::write_json_file(&a.out, &out)?;
    ctx.write_manifest(&a.out, start.elapsed())
}

#[derive(Serialize)]
struct GridOutput<'a> {
    config_sha256: String,
    seed: u64,
    #[serde(flatten)]
    result: &'a GridResult,
}

fn cmd_grid(a: GridArgs, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = context("grid", &a.common, argv)?;
    a.hyper.apply(&mut ctx.config.hyper);
    if let Some(p) = &a.grid {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        ctx.config.grid =
            serde_json::from_str::<Grid>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        ctx.inputs.push(p.clone());
    }
    if let Some(f) = a.folds {
        ctx.config.eval.folds = f;
    }
    if let Some(t) = &a.target_view {
        ctx.config.eval.target_view = Some(t.clone());
    }
    if let Some(j) = a.jobs {
        ctx.config.eval.jobs = j;
    }
    let ds = load_data(&mut ctx, &a.data)?;
    let cfg = ctx.config.eval_config(&ds)?;
    let result = grid_search(&ds, &ctx.config.hyper, &ctx.config.grid, &cfg)?;
    eprintln!("mvkm grid: {} points, best validation RMSE {:.4}", result.table.len(), result.best_rmse);
    ensure_parent(&a.out)?;
    crate::data::write_json_file(
        &a.out,
        &GridOutput { config_sha256: ctx.config.hash(), seed: ctx.seed, result: &result },
    )?;
    ctx.write_manifest(&a.out, start.elapsed())
}

fn cmd_analyze(a: AnalyzeArgs, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = context("analyze", &a.common, argv)?;
    let (params, _) = ModelParams::load(&a.model)?;
    ctx.inputs.push(a.model.clone());
    let ds = match &a.data {
        Some(_) => Some(load_data(&mut ctx, &DataArg { data: a.data.clone() })?),
        None => None,
    };
    if let Some(ds) = &ds {
        check_compatible(&params, ds)?;
    }
    if a.curves.is_none() && a.cluster_students.is_none() && a.cluster_materials.is_none() && !a.bias_corr {
        return Err(Error::Config(
            "nothing to do: pass --curves, --cluster-students, --cluster-materials or --bias-corr".into(),
        ));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut outputs = Vec::new();

    if let Some(path) = &a.curves {
        let concepts = a.concepts.clone().unwrap_or_else(|| (0..params.c).collect());
        let students: Vec<usize> = (0..params.num_students).collect();
        let table = knowledge_curves(&params, &concepts, &students)?;
        ensure_parent(path)?;
        table.write_csv(path)?;
        outputs.push(path.clone());
    }
    if let Some(k) = a.cluster_students {
        let mut assignment = student_clusters(&params, k, ctx.seed)?;
        if let Some(ds) = &ds {
            assignment = assignment.with_items(ds.student_ids().to_vec())?;
            if let Some(view) = ds.primary_graded_view() {
                let path = a.out_dir.join("student_cluster_scores.csv");
                write_cluster_scores_csv(&student_cluster_scores(&assignment, ds, view)?, &path)?;
                outputs.push(path);
            }
        }
        let path = a.out_dir.join("student_clusters.csv");
        write_cluster_csv(&assignment, &path)?;
        outputs.push(path);
    }
    if let Some(k) = a.cluster_materials {
        let views = match (&a.material_views, &ds) {
            (None, _) => (0..params.num_views()).collect(),
            (Some(names), Some(ds)) => names
                .iter()
                .map(|n| {
                    ds.views()
                        .iter()
                        .position(|v| &v.name == n)
                        .ok_or_else(|| Error::Config(format!("no view named {n:?}")))
                })
                .collect::<Result<Vec<_>>>()?,
            (Some(_), None) => return Err(Error::Config("--material-views needs --data to resolve names".into())),
        };
        let assignment = material_clusters(&params, &views, k, ctx.seed)?;
        if let Some(ds) = &ds {
            let path = a.out_dir.join("material_cluster_scores.csv");
            write_cluster_scores_csv(&material_cluster_scores(&assignment, ds)?, &path)?;
            outputs.push(path);
        }
        let assignment = match &ds {
            Some(ds) => {
                let names = views
                    .iter()
                    .flat_map(|&r| ds.material_ids(r).iter().map(move |m| format!("{}:{m}", ds.view(r).name)))
                    .collect();
                assignment.with_items(names)?
            }
            None => assignment,
        };
        let path = a.out_dir.join("material_clusters.csv");
        write_cluster_csv(&assignment, &path)?;
        outputs.push(path);
    }
    if a.bias_corr {
        let ds = ds.as_ref().ok_or_else(|| Error::Config("--bias-corr needs --data".into()))?;
        let mut rows = Vec::new();
        for (r, v) in ds.views().iter().enumerate().filter(|(_, v)| v.graded) {
            let rho = bias_score_correlation(&params, ds, r)?;
            eprintln!("mvkm analyze: view {} bias/score spearman {rho:.4}", v.name);
            rows.push(vec![v.name.clone(), rho.to_string()]);
        }
        let path = a.out_dir.join("bias_correlation.csv");
        crate::analysis::write_csv(&path, &["view", "spearman_rho"], rows)?;
        outputs.push(path);
    }
    for out in &outputs {
        ctx.write_manifest(out, start.elapsed())?;
    }
    Ok(())
}

fn check_compatible(params: &ModelParams, ds: &Dataset) -> Result<()> {
    let views_match = params.num_views() == ds.num_views()
        && ds.views().iter().enumerate().all(|(r, v)| {
            params.num_materials[r] == v.num_materials && params.graded[r] == v.graded
        });
    if !views_match || params.num_students != ds.num_students() || params.num_attempts < ds.max_attempts() {
        return Err(Error::Argument("model checkpoint does not match the dataset's shape".into()));
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs, argv: Vec<String>) -> Result<()> {
    let mut ctx = context("validate", &a.common, argv)?;
    let ds = load_data(&mut ctx, &a.data)?;
    println!("students: {}", ds.num_students());
    println!("records: {}", ds.records().len());
    println!("attempts: {}", ds.max_attempts());
    for v in ds.views() {
        let mean = ds.mean_value(v.view_id).map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
        println!(
            "view {} {:?}: {} materials, {}, mean value {mean}",
            v.view_id,
            v.name,
            v.num_materials,
            if v.graded { "graded" } else { "non-graded" }
        );
    }
    if let Some(m) = &a.model {
        let (params, hp) = ModelParams::load(m)?;
        hp.validate(params.num_views())?;
        params.validate(hp.constrain_s)?;
        check_compatible(&params, &ds)?;
        println!("model: ok ({} students, K={}, C={})", params.num_students, params.k, params.c);
    }
    Ok(())
}
