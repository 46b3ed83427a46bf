//! Command-line front end.
//!
//! Every command resolves its settings from defaults, then an optional TOML
//! config file (top-level `seed` plus one table per command), then flags.
//! The resolved settings land in `config.toml` next to the outputs and every
//! written file is listed with its SHA-256 digest in `manifest.json`.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cat::{run_cat_session, tensor_responder, CatOptions, Criterion};
use crate::error::{Error, Result};
use crate::eval::{
    contamination_gamma, prediction_experiment, ranking_experiment, Estimator, Method, PredictionOptions,
    RankingOptions,
};
use crate::models::{Family, SignConvention};
use crate::seed;
use crate::simulate::{inject_low_quality, sample_ground_truth, sample_responses, GroundTruth, LowQualityMix, Sampler};
use crate::tensor::{load_labels, save_labels, FileFormat, Format, QualityLabel, ResponseTensor};
use crate::training::{grid_search_q, FitConfig, FittedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Comma-separated list on the command line, an array in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<Vec<T>, String>>()
            .map(List)
    }
}

fn strings(xs: &[&str]) -> List<String> {
    List(xs.iter().map(|s| s.to_string()).collect())
}

/// Declares a settings struct (serde, with defaults) and the matching clap
/// argument struct whose fields are all optional overrides.
macro_rules! settings {
    ($name:ident, $args:ident { $($(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name { $(pub $field: $ty),* }

        impl Default for $name {
            fn default() -> Self {
                $name { $($field: $default),* }
            }
        }

        #[derive(Clone, Debug, Default, clap::Args)]
        pub struct $args {
            $($(#[doc = $doc])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl $args {
            fn apply(self, s: &mut $name) {
                $(if let Some(v) = self.$field { s.$field = v; })*
            }
        }
    };
}

settings!(SimulateSettings, SimulateArgs {
    /// Number of subjects
    subjects: usize = 24,
    /// Number of original items before contamination
    items: usize = 900,
    /// Parameter bound
    q: f64 = 4.0,
    /// Low-quality share of the final pool
    fraction: f64 = 0.5,
    /// Relative weights of low-quality types A,B,C
    mix: List<f64> = List(vec![1.0, 1.0, 1.0]),
    /// calibrated | uniform
    sampler: String = "calibrated".into(),
    /// corrected | as-written
    convention: String = "corrected".into(),
    /// Formats to administer, e.g. 00,01,10,11
    formats: List<String> = strings(&["00", "01", "10", "11"]),
    /// Share of cells observed
    density: f64 = 1.0,
});

settings!(FitSettings, FitArgs {
    /// Response file (JSONL or CSV)
    responses: String = String::new(),
    /// irt | mirt:D | m2irt | m3irt
    family: String = "m3irt".into(),
    /// Candidate parameter bounds
    q_grid: List<f64> = List(vec![2.0, 4.0, 8.0, 16.0]),
    convention: String = "corrected".into(),
    learning_rate: f64 = 0.01,
    batch_size: usize = 1024,
    max_epochs: usize = 200,
    patience: usize = 20,
    /// Share of cells held out for early stopping and q selection
    val_frac: f64 = 0.1,
});

settings!(DecomposeSettings, DecomposeArgs {
    /// Fitted model file
    model: String = String::new(),
    /// Items listed at each end of the cross-modal difficulty ordering
    k: usize = 3,
});

settings!(SelectSettings, SelectArgs {
    model: String = String::new(),
    /// Recorded responses to replay
    responses: String = String::new(),
    /// Optional quality labels; enables the contamination share
    labels: String = String::new(),
    /// Only this subject (default: every subject in the responses)
    subject: String = String::new(),
    /// Number of items to select
    budget: usize = 0,
    /// Budget as a share of the subject's pool (used when budget is 0)
    budget_fraction: f64 = 0.0,
    /// maxinfo | doptimal (default: by family)
    criterion: String = String::new(),
    /// Presentation format, e.g. 11
    format: String = "11".into(),
});

settings!(EvaluateSettings, EvaluateArgs {
    /// ranking | prediction
    mode: String = "ranking".into(),
    /// Response file (ranking)
    responses: String = String::new(),
    /// Quality labels (ranking)
    labels: String = String::new(),
    /// Ground truth from simulate (prediction)
    truth: String = String::new(),
    /// Ranking methods
    methods: List<String> = strings(&["random", "irt", "mirt:4", "m2irt", "m3irt"]),
    /// Prediction families
    families: List<String> = strings(&["irt", "m2irt", "m3irt"]),
    fractions: List<f64> = List((1..=50).map(|k| k as f64 / 100.0).collect()),
    levels: List<f64> = List(vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
    /// Replicas (default 24 for ranking, 10 for prediction)
    replicas: usize = 0,
    /// hybrid | model | raw
    estimator: String = "hybrid".into(),
    format: String = "11".into(),
    q: f64 = 4.0,
    convention: String = "corrected".into(),
    learning_rate: f64 = 0.01,
    batch_size: usize = 1024,
    max_epochs: usize = 200,
    patience: usize = 20,
    val_frac: f64 = 0.1,
    test_frac: f64 = 0.1,
    /// Relative weights of low-quality types A,B,C (prediction)
    mix: List<f64> = List(vec![1.0, 1.0, 1.0]),
    density: f64 = 1.0,
    formats: List<String> = strings(&["00", "01", "10", "11"]),
    /// Fit irt/mirt with one item per (item, format) pair
    expand_classic: bool = true,
});

settings!(PredictSettings, PredictArgs {
    model: String = String::new(),
    /// Cells to score, in response-file layout
    cells: String = String::new(),
});

#[derive(Debug, Parser)]
#[command(name = "mmirt", version, about = "Multimodal IRT fitting, adaptive subset selection and experiments")]
struct Cli {
    /// Top-level seed (default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// TOML config; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a contaminated synthetic benchmark
    Simulate(SimulateArgs),
    /// Fit a model with a grid search over q
    Fit(FitArgs),
    /// Report ability and difficulty decompositions
    Decompose(DecomposeArgs),
    /// Adaptive subset selection against recorded responses
    Select(SelectArgs),
    /// Ranking or prediction experiment
    Evaluate(EvaluateArgs),
    /// Predicted correctness probabilities
    Predict(PredictArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Decompose(_) => "decompose",
            Command::Select(_) => "select",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
        }
    }
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        Error::Parse { .. }
        | Error::DuplicateRecord { .. }
        | Error::UnknownSubject(_)
        | Error::UnknownItem(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::Empty(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.written.push(p.clone());
        p
    }
}

fn execute(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::invalid("--jobs must be at least 1"));
    }
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let name = cli.command.name();
    for (k, v) in &file {
        // `command` is what a persisted config.toml records
        if !v.is_table() && k != "seed" && k != "command" {
            return Err(Error::invalid(format!("unknown top-level config key `{k}`")));
        }
    }
    let seed = match (cli.seed, file.get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .as_integer()
            .and_then(|i| u64::try_from(i).ok())
            .ok_or_else(|| Error::invalid("config `seed` must be a non-negative integer"))?,
        (None, None) => 0,
    };
    let section = file.get(name).cloned().unwrap_or(toml::Value::Table(toml::Table::new()));

    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let mut ctx = Ctx {
        seed,
        out_dir: cli.out_dir.clone(),
        written: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let resolved = pool.install(|| match cli.command {
        Command::Simulate(a) => dispatch(&mut ctx, section, a, SimulateArgs::apply, cmd_simulate),
        Command::Fit(a) => dispatch(&mut ctx, section, a, FitArgs::apply, cmd_fit),
        Command::Decompose(a) => dispatch(&mut ctx, section, a, DecomposeArgs::apply, cmd_decompose),
        Command::Select(a) => dispatch(&mut ctx, section, a, SelectArgs::apply, cmd_select),
        Command::Evaluate(a) => dispatch(&mut ctx, section, a, EvaluateArgs::apply, cmd_evaluate),
        Command::Predict(a) => dispatch(&mut ctx, section, a, PredictArgs::apply, cmd_predict),
    })?;

    let mut config = toml::Table::new();
    config.insert("command".into(), toml::Value::String(name.into()));
    config.insert("seed".into(), toml::Value::Integer(seed as i64));
    config.insert(name.into(), resolved);
    let text = toml::to_string(&config).map_err(|e| Error::invalid(format!("config: {e}")))?;
    let path = ctx.path("config.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_manifest(&ctx, name)
}

/// Resolves settings (defaults < config section < flags), runs the command
/// and returns the resolved settings as TOML.
fn dispatch<S, A>(
    ctx: &mut Ctx,
    section: toml::Value,
    args: A,
    apply: fn(A, &mut S),
    cmd: fn(&mut Ctx, &S) -> Result<()>,
) -> Result<toml::Value>
where
    S: Serialize + for<'de> Deserialize<'de>,
{
    let mut s: S = section
        .try_into()
        .map_err(|e| Error::invalid(format!("config: {e}")))?;
    apply(args, &mut s);
    cmd(ctx, &s)?;
    toml::Value::try_from(&s).map_err(|e| Error::invalid(format!("config: {e}")))
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    files: Vec<ManifestEntry>,
}

fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let n = std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok((n, hex::encode(h.finalize())))
}

fn write_manifest(ctx: &Ctx, command: &str) -> Result<()> {
    let mut files = Vec::new();
    let mut paths = ctx.written.clone();
    paths.sort();
    paths.dedup();
    for p in &paths {
        let (bytes, sha256) = sha256_file(p)?;
        let rel = p.strip_prefix(&ctx.out_dir).unwrap_or(p);
        files.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes,
            sha256,
        });
    }
    let m = Manifest {
        command,
        seed: ctx.seed,
        files,
    };
    let path = ctx.out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn required<'a>(value: &'a str, flag: &str) -> Result<&'a Path> {
    if value.is_empty() {
        return Err(Error::invalid(format!("--{flag} is required")));
    }
    Ok(Path::new(value))
}

fn parse<T: FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn formats(list: &List<String>) -> Result<Vec<Format>> {
    list.0.iter().map(|s| parse::<Format>(s)).collect()
}

fn mix(weights: &List<f64>) -> Result<LowQualityMix> {
    let w = &weights.0;
    let total: f64 = w.iter().sum();
    if w.len() != 3 || w.iter().any(|x| !(*x >= 0.0)) || !(total > 0.0) {
        return Err(Error::invalid("mix needs three non-negative weights with a positive sum"));
    }
    let m = LowQualityMix {
        a: w[0] / total,
        b: w[1] / total,
        c: w[2] / total,
    };
    m.validate()?;
    Ok(m)
}

fn load_tensor(path: &Path) -> Result<ResponseTensor> {
    ResponseTensor::load(path, FileFormat::from_path(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn cmd_simulate(ctx: &mut Ctx, s: &SimulateSettings) -> Result<()> {
    let conv: SignConvention = parse(&s.convention)?;
    let sampler: Sampler = parse(&s.sampler)?;
    let formats = formats(&s.formats)?;
    let gt = sample_ground_truth::<f64>(s.subjects, s.items, s.q, conv, sampler, seed::derive(ctx.seed, &[seed::STREAM_TRUTH]))?;
    let pool = inject_low_quality(&gt, s.fraction, mix(&s.mix)?, seed::derive(ctx.seed, &[seed::STREAM_INJECT]))?;
    let t = sample_responses(&pool, &formats, s.density, seed::derive(ctx.seed, &[seed::STREAM_RESPONSES]))?;

    pool.save(ctx.path("truth.json"))?;
    t.save(ctx.path("responses.jsonl"), FileFormat::Jsonl)?;
    save_labels(ctx.path("labels.jsonl"), &pool.labels)?;

    let low = pool.low_quality_count();
    let full = t.summarize();
    let mean = full.subjects.iter().map(|a| a.accuracy).sum::<f64>() / full.subjects.len().max(1) as f64;
    println!(
        "pool: {} subjects, {} items ({} low-quality, share {:.3}), {} responses, mean full-format accuracy {:.3}",
        pool.subjects.len(),
        pool.items.len(),
        low,
        pool.contamination(),
        t.len(),
        mean
    );
    Ok(())
}

#[derive(Serialize)]
struct GridCsvRow {
    q: f64,
    val_auc: Option<f64>,
    val_nll: Option<f64>,
    train_nll: f64,
    epochs_run: usize,
    selected: bool,
}

fn cmd_fit(ctx: &mut Ctx, s: &FitSettings) -> Result<()> {
    let t = load_tensor(required(&s.responses, "responses")?)?;
    let (train, val, _) = t.mask_cells(s.val_frac, 0.0, seed::derive(ctx.seed, &[seed::STREAM_MASK]))?;
    let base = FitConfig {
        family: parse(&s.family)?,
        convention: parse(&s.convention)?,
        learning_rate: s.learning_rate,
        batch_size: s.batch_size,
        max_epochs: s.max_epochs,
        patience: s.patience,
        seed: seed::derive(ctx.seed, &[seed::STREAM_INIT]),
        ..FitConfig::<f64>::default()
    };
    let (model, rows) = grid_search_q(&train, &val, &base, &s.q_grid.0)?;
    model.save(ctx.path("model.json"))?;
    let mut w = csv_writer(&ctx.path("grid.csv"))?;
    for r in &rows {
        w.serialize(GridCsvRow {
            q: r.q,
            val_auc: r.val_auc,
            val_nll: r.val_nll,
            train_nll: r.train_nll,
            epochs_run: r.epochs_run,
            selected: r.q == model.q(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&ctx.out_dir, e))?;
    match model.val_auc {
        Some(auc) => println!("selected q = {} (validation AUC {auc:.4})", model.q()),
        None => println!("selected q = {} (no validation AUC)", model.q()),
    }
    Ok(())
}

const COMPONENTS: [&str; 4] = ["base", "image", "text", "cross"];

fn component_names(prefix: &str, n: usize, decomposed: bool) -> Vec<String> {
    (0..n)
        .map(|k| match decomposed {
            true => format!("{prefix}_{}", COMPONENTS[k]),
            false => format!("{prefix}_{k}"),
        })
        .collect()
}

fn cmd_decompose(ctx: &mut Ctx, s: &DecomposeSettings) -> Result<()> {
    let model = FittedModel::<f64>::load(required(&s.model, "model")?)?;
    let fam = model.family();
    let decomposed = !fam.is_classic();
    let p = model.params();

    let mut subjects: Vec<(&String, &[f64], f64)> = model
        .subject_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id, p.theta(i), p.theta(i).iter().sum()))
        .collect();
    subjects.sort_by(|x, y| y.2.total_cmp(&x.2).then_with(|| x.0.cmp(y.0)));
    let mut w = csv_writer(&ctx.path("subjects.csv"))?;
    let mut header = vec!["subject".to_string()];
    header.extend(component_names("theta", fam.subject_dim(), decomposed));
    header.push("total".into());
    w.write_record(&header)?;
    for (id, theta, total) in &subjects {
        let mut row = vec![id.to_string()];
        row.extend(theta.iter().map(|x| x.to_string()));
        row.push(total.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&ctx.out_dir, e))?;

    let mut w = csv_writer(&ctx.path("items.csv"))?;
    let mut header = vec!["item".to_string()];
    header.extend(component_names("a", fam.item_a_dim(), decomposed));
    header.extend(component_names("b", fam.item_b_dim(), decomposed));
    w.write_record(&header)?;
    for (j, id) in model.item_ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(p.a(j).iter().chain(p.b(j)).map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&ctx.out_dir, e))?;

    if let Some((top, _)) = subjects.first().map(|x| (x.0, x.2)) {
        println!("{} subjects, top by total ability: {top}", subjects.len());
    }
    if !decomposed {
        println!("{fam} has no cross-modal difficulty; skipped extremes.csv");
        return Ok(());
    }
    let mut order: Vec<(usize, f64)> = (0..model.item_ids().len()).map(|j| (j, p.b(j)[3])).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| model.item_ids()[x.0].cmp(&model.item_ids()[y.0])));
    let k = s.k.min(order.len());
    let mut w = csv_writer(&ctx.path("extremes.csv"))?;
    w.write_record(["side", "rank", "item", "b_cross"])?;
    let lowest = order.iter().rev().take(k);
    for (side, part) in [("highest", order.iter().take(k).collect::<Vec<_>>()), ("lowest", lowest.collect())] {
        for (r, (j, b)) in part.iter().enumerate() {
            w.write_record([side.to_string(), (r + 1).to_string(), model.item_ids()[*j].clone(), b.to_string()])?;
            println!("{side} b_cross #{}: {} ({b:.4})", r + 1, model.item_ids()[*j]);
        }
    }
    w.flush().map_err(|e| Error::io(&ctx.out_dir, e))
}

#[derive(Serialize)]
struct SubsetLine<'a> {
    subject: &'a str,
    position: usize,
    item: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<QualityLabel>,
}

#[derive(Serialize)]
struct LogLine<'a, T> {
    subject: &'a str,
    #[serde(flatten)]
    step: &'a T,
}

#[derive(Serialize)]
struct SelectRow<'a> {
    subject: &'a str,
    pool: usize,
    budget: usize,
    gamma: Option<f64>,
}

fn cmd_select(ctx: &mut Ctx, s: &SelectSettings) -> Result<()> {
    let model = FittedModel::<f64>::load(required(&s.model, "model")?)?;
    let t = load_tensor(required(&s.responses, "responses")?)?;
    let labels: Option<IndexMap<String, QualityLabel>> = match s.labels.as_str() {
        "" => t.labels().cloned(),
        p => Some(load_labels(p)?),
    };
    let criterion = match s.criterion.as_str() {
        "" => Criterion::default_for(model.family()),
        c => parse(c)?,
    };
    let format: Format = parse(&s.format)?;
    if (s.budget == 0) == (s.budget_fraction == 0.0) {
        return Err(Error::invalid("give exactly one of --budget and --budget-fraction"));
    }
    if !(0.0..=1.0).contains(&s.budget_fraction) {
        return Err(Error::invalid("--budget-fraction must lie in (0, 1]"));
    }
    let subjects: Vec<String> = match s.subject.as_str() {
        "" => t.subjects().to_vec(),
        id if t.subject_index(id).is_some() => vec![id.to_owned()],
        id => return Err(Error::UnknownSubject(id.to_owned())),
    };

    let (sub_path, log_path, sum_path) = (ctx.path("subset.jsonl"), ctx.path("session_log.jsonl"), ctx.path("select.csv"));
    let mut subset_w = jsonl_writer(&sub_path)?;
    let mut log_w = jsonl_writer(&log_path)?;
    let mut sum_w = csv_writer(&sum_path)?;
    for subject in &subjects {
        let answers = t.responses_of(subject);
        let pool: Vec<&String> = model
            .item_ids()
            .iter()
            .filter(|id| answers.contains_key(&((*id).clone(), format)))
            .collect();
        let n = pool.len();
        let budget = match s.budget {
            0 => ((s.budget_fraction * n as f64).round() as usize).max(1),
            b => b,
        };
        if budget > n {
            return Err(Error::invalid(format!("budget {budget} exceeds the {n} items `{subject}` answered at {format}")));
        }
        let mut opts = CatOptions::new(&model, budget, criterion);
        opts.format = format;
        let session = run_cat_session(&model, tensor_responder(&t, subject), &pool, &opts)?;
        let items = session.items();
        for (k, id) in items.iter().enumerate() {
            let line = SubsetLine {
                subject,
                position: k + 1,
                item: id,
                quality: labels.as_ref().and_then(|l| l.get(id).copied()),
            };
            write_line(&mut subset_w, &sub_path, &line)?;
        }
        for step in &session.log {
            write_line(&mut log_w, &log_path, &LogLine { subject, step })?;
        }
        let gamma = labels.as_ref().map(|l| contamination_gamma(&items, l)).transpose()?;
        sum_w.serialize(SelectRow {
            subject,
            pool: n,
            budget,
            gamma,
        })?;
        match gamma {
            Some(g) => println!("{subject}: {budget} of {n} items, low-quality share {g:.4}"),
            None => println!("{subject}: {budget} of {n} items"),
        }
    }
    subset_w.flush().map_err(|e| Error::io(&sub_path, e))?;
    log_w.flush().map_err(|e| Error::io(&log_path, e))?;
    sum_w.flush().map_err(|e| Error::io(&sum_path, e))
}

fn fit_config(s: &EvaluateSettings) -> Result<FitConfig<f64>> {
    let cfg = FitConfig {
        q: s.q,
        convention: parse(&s.convention)?,
        learning_rate: s.learning_rate,
        batch_size: s.batch_size,
        max_epochs: s.max_epochs,
        patience: s.patience,
        ..FitConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_evaluate(ctx: &mut Ctx, s: &EvaluateSettings) -> Result<()> {
    match s.mode.as_str() {
        "ranking" => {
            let t = load_tensor(required(&s.responses, "responses")?)?;
            let labels = match (s.labels.as_str(), s.truth.as_str()) {
                ("", "") => t
                    .labels()
                    .cloned()
                    .ok_or_else(|| Error::invalid("ranking needs --labels or --truth"))?,
                ("", truth) => GroundTruth::<f64>::load(truth)?.labels,
                (p, _) => load_labels(p)?,
            };
            let opts = RankingOptions {
                methods: s.methods.0.iter().map(|m| parse::<Method>(m)).collect::<Result<_>>()?,
                fractions: s.fractions.0.clone(),
                replicas: if s.replicas == 0 { 24 } else { s.replicas },
                seed: ctx.seed,
                fit: fit_config(s)?,
                estimator: parse::<Estimator>(&s.estimator)?,
                val_frac: s.val_frac,
                format: parse(&s.format)?,
                expand_classic: s.expand_classic,
                ..RankingOptions::default()
            };
            let report = ranking_experiment(&t, &labels, &opts)?;
            for f in report.save(&ctx.out_dir)? {
                ctx.written.push(f);
            }
            for (rho, gam) in report.spearman.iter().zip(&report.gamma) {
                println!(
                    "{:>8} {:>5.2}: spearman {:.4} +- {:.4}, low-quality share {:.4} +- {:.4}",
                    rho.method, rho.fraction_or_level, rho.mean, rho.std, gam.mean, gam.std
                );
            }
        }
        "prediction" => {
            let gt = GroundTruth::<f64>::load(required(&s.truth, "truth")?)?;
            // prediction re-injects from the originals
            let originals = gt.originals();
            let opts = PredictionOptions {
                families: s.families.0.iter().map(|f| parse::<Family>(f)).collect::<Result<_>>()?,
                levels: s.levels.0.clone(),
                replicas: if s.replicas == 0 { 10 } else { s.replicas },
                seed: ctx.seed,
                fit: fit_config(s)?,
                mix: mix(&s.mix)?,
                val_frac: s.val_frac,
                test_frac: s.test_frac,
                density: s.density,
                formats: formats(&s.formats)?,
                expand_classic: s.expand_classic,
            };
            let report = prediction_experiment(&originals, &opts)?;
            for f in report.save(&ctx.out_dir)? {
                ctx.written.push(f);
            }
            for r in &report.auc {
                println!("{:>8} {:>4.2}: test AUC {:.4} +- {:.4}", r.method, r.fraction_or_level, r.mean, r.std);
            }
        }
        m => return Err(Error::invalid(format!("unknown mode `{m}` (expected ranking or prediction)"))),
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    subject: &'a str,
    item: &'a str,
    s_image: u8,
    s_text: u8,
    probability: f64,
    correct: u8,
}

fn cmd_predict(ctx: &mut Ctx, s: &PredictSettings) -> Result<()> {
    let model = FittedModel::<f64>::load(required(&s.model, "model")?)?;
    let t = load_tensor(required(&s.cells, "cells")?)?;
    let probs = model.predict_tensor(&t)?;
    let mut w = csv_writer(&ctx.path("predictions.csv"))?;
    for (r, &p) in t.records().iter().zip(&probs) {
        let (s_image, s_text) = r.format.flags();
        w.serialize(PredictionRow {
            subject: t.subject_id(r),
            item: t.item_id(r),
            s_image,
            s_text,
            probability: p,
            correct: r.correct as u8,
        })?;
    }
    w.flush().map_err(|e| Error::io(&ctx.out_dir, e))?;
    match model.auc_on(&t)? {
        Some(auc) => println!("{} cells scored, AUC {auc:.4}", t.len()),
        None => println!("{} cells scored", t.len()),
    }
    Ok(())
}
