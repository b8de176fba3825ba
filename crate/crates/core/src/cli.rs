//! Command-line front end: `synth`, `unify`, `sweep`, `train`, `report`.
//!
//! Settings resolve as flags > `--config` file > defaults; the seed falls back
//! to `READMIT_SEED` when neither a flag nor the config file sets it. Exit
//! codes: 0 success, 2 usage or bad input, 3 IO, 4 computation.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{self, IngestError};
use crate::eval::{self, AgeHandling, ReportFile, SweepConfig, SweepReport};
use crate::features::{self, FeatureSchema, MissingAge};
use crate::models::{Model, ModelKind, SavedModel, TrainConfig};
use crate::resample::{self, SmoteConfig, SmoteRatio};
use crate::synthgen::{self, CohortSpec, SynthError};
use crate::{seed, TOOL_VERSION};

pub const SEED_ENV: &str = "READMIT_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Compute(_) => 4,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "readmit", version, about = "Shelter readmission risk pipeline")]
struct Cli {
    /// JSON file with default settings; a report.json or model.json from an
    /// earlier run also works.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort as raw demographics/exits/incidents CSVs.
    Synth(SynthArgs),
    /// Link raw CSVs into one profile per individual.
    Unify(UnifyArgs),
    /// Cross-validate a model over a list of SMOTE ratios.
    Sweep(SweepArgs),
    /// Fit one model on all profiles and save it.
    Train(TrainArgs),
    /// Print a report.json as a text table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Cohort spec JSON (defaults to the bundled spec).
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the cohort size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    signal_strength: Option<f64>,
    #[arg(short = 'o', long = "out", value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UnifyArgs {
    demographics: PathBuf,
    exits: PathBuf,
    incidents: PathBuf,
    /// Date open episodes run to; defaults to the latest date in the inputs.
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(short = 'o', long = "out", value_name = "FILE", default_value = "profiles.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// SMOTE neighbours.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    include_income: bool,
    /// Fail on profiles without an age instead of imputing the median.
    #[arg(long)]
    strict_age: bool,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    profiles: PathBuf,
    /// Comma-separated list such as `original,0.3,1.0`.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(short = 'o', long = "out", value_name = "DIR", default_value = "sweep")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    profiles: PathBuf,
    /// SMOTE ratio applied before fitting.
    #[arg(long)]
    ratio: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(short = 'o', long = "out", value_name = "FILE", default_value = "model.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    report: PathBuf,
    #[arg(short = 'o', long = "out", value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RatioList {
    Csv(String),
    List(Vec<SmoteRatio>),
}

/// Settings accepted from `--config`. Unknown keys are ignored so earlier
/// artifacts can be fed back in.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    seed: Option<u64>,
    folds: Option<usize>,
    ratios: Option<RatioList>,
    ratio: Option<SmoteRatio>,
    model: Option<ModelKind>,
    k: Option<usize>,
    include_income: Option<bool>,
    missing_age: Option<AgeHandling>,
    train: Option<TrainConfig>,
    spec: Option<PathBuf>,
}

fn read_input_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = read_input_file(path)?;
    let bad = |e: serde_json::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut value: Value = serde_json::from_str(&text).map_err(bad)?;
    // model.json keeps its settings under "run", report.json under "config"
    if let Some(run) = value.get("run").filter(|v| v.is_object()) {
        value = run.clone();
    } else if value.get("tool").is_some() {
        if let Some(cfg) = value.get("config") {
            value = cfg.clone();
        }
    }
    serde_json::from_value(value).map_err(bad)
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile) -> Result<Option<u64>, CliError> {
    match flag.or(cfg.seed) {
        Some(s) => Ok(Some(s)),
        None => env_seed(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::write(path, bytes).map_err(io_at(path))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn load_spec(path: &Path) -> Result<CohortSpec, CliError> {
    let text = read_input_file(path)?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    // a synth manifest carries the resolved spec under "spec"
    if value.get("tool").is_some() {
        if let Some(spec) = value.get("spec") {
            value = spec.clone();
        }
    }
    let spec: CohortSpec =
        serde_json::from_value(value).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    spec.validate().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

#[derive(Debug, Serialize)]
struct SynthManifest {
    tool: &'static str,
    seed: u64,
    spec_sha256: String,
    n_profiles: usize,
    n_positives: usize,
    files: BTreeMap<String, String>,
    spec: CohortSpec,
}

fn cmd_synth(args: SynthArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let spec_path = args.spec.as_deref().or(cfg.spec.as_deref());
    let mut spec = match spec_path {
        Some(p) => load_spec(p)?,
        None => CohortSpec::default(),
    };
    if let Some(s) = resolve_seed(args.seed, cfg)? {
        spec.seed = s;
    }
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(s) = args.signal_strength {
        spec.signal_strength = s;
    }
    let synth_err = |e: SynthError| match e {
        SynthError::Io { path, source } => CliError::Io { path, source },
        other => input(other),
    };
    let cohort = synthgen::generate(&spec).map_err(synth_err)?;
    let raw = synthgen::emit_raw_files(&cohort, &args.out).map_err(synth_err)?;

    let mut files = BTreeMap::new();
    for path in [&raw.demographics, &raw.exits, &raw.incidents] {
        let bytes = fs::read(path).map_err(io_at(path))?;
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        files.insert(name, sha256_hex(&bytes));
    }
    let manifest = SynthManifest {
        tool: TOOL_VERSION,
        seed: spec.seed,
        spec_sha256: sha256_hex(serde_json::to_string(&spec).expect("spec serializes").as_bytes()),
        n_profiles: cohort.len(),
        n_positives: cohort.iter().filter(|p| p.readmit == 1).count(),
        files,
        spec,
    };
    write_file(&args.out.join("manifest.json"), &to_json(&manifest))?;
    writeln!(out, "profiles: {}", manifest.n_profiles).ok();
    writeln!(out, "positives: {}", manifest.n_positives).ok();
    Ok(())
}

fn read_csv<T>(
    path: &Path,
    reader: fn(File, &str) -> Result<Vec<T>, IngestError>,
) -> Result<(Vec<T>, String), CliError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let file = File::open(path).map_err(io_at(path))?;
    let name = path.display().to_string();
    let rows = reader(file, &name).map_err(input)?;
    Ok((rows, sha256_hex(&bytes)))
}

fn cmd_unify(args: UnifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (demo, demo_hash) = read_csv(&args.demographics, cohort::read_demographics)?;
    let (exits, exits_hash) = read_csv(&args.exits, cohort::read_exits)?;
    let (incidents, incidents_hash) = read_csv(&args.incidents, cohort::read_incidents)?;
    if exits.is_empty() {
        writeln!(err, "warning: {} has no exit rows; every episode stays open", args.exits.display()).ok();
    }
    let as_of = args
        .as_of
        .or_else(|| cohort::latest_date(&demo, &exits, &incidents))
        .ok_or_else(|| CliError::Input("inputs contain no dated records".into()))?;
    let unified = cohort::unify(&demo, &exits, &incidents, as_of).map_err(input)?;

    let mut csv = Vec::new();
    cohort::write_profiles(&mut csv, &unified.profiles).map_err(compute)?;
    write_file(&args.out, &csv)?;

    let mut log = format!("# {TOOL_VERSION} as_of={as_of} removed={}\n", unified.removed);
    for w in &unified.warnings {
        log.push_str(&w.to_string());
        log.push('\n');
    }
    write_file(&args.out.with_extension("warnings.log"), log.as_bytes())?;

    let manifest = json!({
        "tool": TOOL_VERSION,
        "seed": Value::Null,
        "config": { "as_of": as_of.to_string() },
        "inputs": {
            "demographics_sha256": demo_hash,
            "exits_sha256": exits_hash,
            "incidents_sha256": incidents_hash,
        },
        "n_profiles": unified.profiles.len(),
        "removed": unified.removed,
        "n_warnings": unified.warnings.len(),
        "profiles_sha256": sha256_hex(&csv),
    });
    write_file(&args.out.with_extension("manifest.json"), &to_json(&manifest))?;

    writeln!(out, "profiles: {}", unified.profiles.len()).ok();
    writeln!(out, "removed: {}", unified.removed).ok();
    writeln!(out, "warnings: {}", unified.warnings.len()).ok();
    Ok(())
}

fn read_profiles(path: &Path) -> Result<Vec<cohort::ClientProfile>, CliError> {
    let file = File::open(path).map_err(io_at(path))?;
    let profiles = cohort::read_profiles(file, &path.display().to_string()).map_err(input)?;
    if profiles.is_empty() {
        return Err(CliError::Input(format!("{} holds no profiles", path.display())));
    }
    Ok(profiles)
}

/// Shared model settings after applying the config file and flags.
struct ModelSettings {
    model: ModelKind,
    seed: u64,
    k: usize,
    include_income: bool,
    missing_age: AgeHandling,
    train: TrainConfig,
}

fn resolve_model(args: &ModelArgs, cfg: &ConfigFile, base: ModelSettings) -> Result<ModelSettings, CliError> {
    let mut train = cfg.train.unwrap_or(base.train);
    if let Some(n) = args.n_trees {
        train.gbm.n_trees = n;
    }
    if let Some(d) = args.max_depth {
        train.gbm.max_depth = d;
    }
    if let Some(lr) = args.learning_rate {
        train.gbm.learning_rate = lr;
    }
    train.validate().map_err(input)?;
    let k = args.k.or(cfg.k).unwrap_or(base.k);
    if k == 0 {
        return Err(CliError::Input("--k must be at least 1".into()));
    }
    Ok(ModelSettings {
        model: args.model.or(cfg.model).unwrap_or(base.model),
        seed: resolve_seed(args.seed, cfg)?.unwrap_or(base.seed),
        k,
        include_income: args.include_income || cfg.include_income.unwrap_or(base.include_income),
        missing_age: if args.strict_age {
            AgeHandling::Reject
        } else {
            cfg.missing_age.unwrap_or(base.missing_age)
        },
        train,
    })
}

fn cmd_sweep(args: SweepArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = SweepConfig::default();
    let ratios = match (&args.ratios, &cfg.ratios) {
        (Some(s), _) | (None, Some(RatioList::Csv(s))) => resample::parse_ratios(s).map_err(input)?,
        (None, Some(RatioList::List(v))) => v.clone(),
        (None, None) => defaults.ratios.clone(),
    };
    if ratios.is_empty() {
        return Err(CliError::Input("no SMOTE ratios given".into()));
    }
    let folds = args.folds.or(cfg.folds).unwrap_or(defaults.folds);
    if folds < 2 {
        return Err(CliError::Input("--folds must be at least 2".into()));
    }
    let m = resolve_model(
        &args.model,
        cfg,
        ModelSettings {
            model: defaults.model,
            seed: defaults.seed,
            k: defaults.k,
            include_income: defaults.include_income,
            missing_age: defaults.missing_age,
            train: defaults.train,
        },
    )?;
    let config = SweepConfig {
        model: m.model,
        ratios,
        folds,
        seed: m.seed,
        k: m.k,
        include_income: m.include_income,
        missing_age: m.missing_age,
        train: m.train,
    };
    let profiles = read_profiles(&args.profiles)?;
    let outcome = eval::sweep(&profiles, &config).map_err(compute)?;

    let report = ReportFile {
        tool: TOOL_VERSION.to_string(),
        seed: config.seed,
        n_profiles: profiles.len(),
        rows: outcome.report.rows.clone(),
        config,
    };
    write_file(&args.out.join("report.json"), &to_json(&report))?;
    for (label, curve) in &outcome.curves {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).expect("write to memory");
        write_file(&args.out.join(format!("roc_{label}.csv")), &buf)?;
    }
    write!(out, "{}", outcome.report.render_table()).ok();
    Ok(())
}

fn cmd_train(args: TrainArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let ratio = match &args.ratio {
        Some(s) => s.parse().map_err(input)?,
        None => cfg.ratio.unwrap_or(SmoteRatio::Original),
    };
    let m = resolve_model(
        &args.model,
        cfg,
        ModelSettings {
            model: ModelKind::Gbm,
            seed: 0,
            k: 5,
            include_income: false,
            missing_age: AgeHandling::ImputeMedian,
            train: TrainConfig::default(),
        },
    )?;
    let profiles = read_profiles(&args.profiles)?;
    let schema = FeatureSchema::new(m.include_income);
    let policy = match m.missing_age {
        AgeHandling::Reject => MissingAge::Reject,
        AgeHandling::ImputeMedian => MissingAge::ImputeMedian,
    };
    let encoded = features::encode(&profiles, &schema, policy).map_err(compute)?;
    let (scaled, standardizer) = features::standardize(&encoded.dataset, None).map_err(compute)?;
    let smote_cfg = SmoteConfig {
        ratio,
        k: m.k,
        seed: seed::derive(m.seed, "smote"),
    };
    let augmented = resample::smote(&scaled, &smote_cfg).map_err(compute)?;
    let train = TrainConfig {
        seed: seed::derive(m.seed, "train"),
        ..m.train
    };
    let model = Model::fit(m.model, &augmented.matrix, &augmented.labels, &train).map_err(compute)?;

    let saved = SavedModel {
        version: TOOL_VERSION.to_string(),
        config: train,
        columns: schema.columns.clone(),
        standardizer,
        model,
        run: json!({
            "tool": TOOL_VERSION,
            "seed": m.seed,
            "model": m.model,
            "ratio": ratio,
            "k": m.k,
            "include_income": m.include_income,
            "missing_age": m.missing_age,
            "train": m.train,
            "n_profiles": profiles.len(),
            "n_rows": encoded.dataset.n_rows(),
            "n_synthetic": augmented.n_rows() - scaled.n_rows(),
            "age_fill": encoded.age_fill,
        }),
    };
    let mut model_json = saved.to_json();
    model_json.push('\n');
    write_file(&args.out, model_json.as_bytes())?;
    write_file(&args.out.with_extension("schema.json"), format!("{}\n", schema.to_json()).as_bytes())?;
    writeln!(out, "model: {}", m.model).ok();
    writeln!(out, "rows: {} (+{} synthetic)", encoded.dataset.n_rows(), augmented.n_rows() - scaled.n_rows()).ok();
    Ok(())
}

fn cmd_report(args: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_input_file(&args.report)?;
    let report: ReportFile =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.report.display())))?;
    let table = SweepReport { rows: report.rows }.render_table();
    let header = format!(
        "{} | model {} | {} folds | seed {} | {} profiles\n\n",
        report.tool, report.config.model, report.config.folds, report.seed, report.n_profiles
    );
    match args.out {
        Some(path) => write_file(&path, format!("{header}{table}").as_bytes()),
        None => {
            write!(out, "{header}{table}").ok();
            Ok(())
        }
    }
}

/// Run the tool on `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            write!(target, "{e}").ok();
            return code;
        }
    };
    let result = load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg, out),
        Command::Unify(a) => cmd_unify(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, &cfg, out),
        Command::Train(a) => cmd_train(a, &cfg, out),
        Command::Report(a) => cmd_report(a, out),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            e.exit_code()
        }
    }
}
