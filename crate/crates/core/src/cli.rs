//! `skyeye-forge` command line. Exit codes: 0 success, 1 validation
//! failure, 2 config or usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use crate::config::{build_input, load_inputs, ConfigError, InputError, LoadedConfig};
use crate::corpus::{build_corpus, BuildReport, CorpusError, HeldoutIndex, LeakageReport};
use crate::domain::{CorpusManifest, InstructionSample, SourceRecord, TaskKind, Validate};
use crate::ingest::{IngestError, Strictness};
use crate::judge::{judge_corpus, reaggregate, HttpBackend, JudgeConfig, JudgeItem, JudgeSummary, JudgeVerdict};
use crate::jsonl::{read_jsonl, write_json, write_jsonl};
use crate::metrics::{evaluate, EvalOptions, EvalRecord, GroundTruth, GtSpace, MetricReport, Prediction};
use crate::review::ReviewDecision;
use crate::service::{serve, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "skyeye-forge", version, about = "Remote-sensing instruction corpus forge and evaluation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file; falls back to $SKYEYE_FORGE_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's stream seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Fail a whole input file on its first bad unit.
    #[arg(long, global = true, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip bad units and write an error report instead.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Emit only samples with an accept decision.
    #[arg(long, global = true)]
    pub require_accept: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize every configured dataset into SourceRecord JSONL.
    Ingest,
    /// Build the corpus, both stage streams, manifest and report.
    Build,
    /// Check artifact files against their schemas and invariants.
    Validate(ValidateArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the two-prompt LLM judge, or re-aggregate a verdict log.
    Judge(JudgeArgs),
    /// Start the review service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArtifactKind {
    Config,
    Records,
    Samples,
    Manifest,
    Decisions,
    Verdicts,
    Report,
    BuildReport,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Artifact files to check.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Artifact type; detected from the file name and content when omitted.
    #[arg(long = "as")]
    pub kind: Option<ArtifactKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    #[value(alias = "image_caption")]
    Caption,
    #[value(alias = "video_caption")]
    Video,
    #[value(alias = "visual_grounding", alias = "vg")]
    Grounding,
    #[value(alias = "phrase_grounding", alias = "pg")]
    Phrase,
    #[value(alias = "referring_expression_generation")]
    Reg,
    Vqa,
    #[value(alias = "scene_classification", alias = "cls")]
    Scene,
}

impl EvalTask {
    pub fn kind(self) -> TaskKind {
        match self {
            EvalTask::Caption => TaskKind::ImageCaption,
            EvalTask::Video => TaskKind::VideoCaption,
            EvalTask::Grounding => TaskKind::VisualGrounding,
            EvalTask::Phrase => TaskKind::PhraseGrounding,
            EvalTask::Reg => TaskKind::ReferringExpressionGeneration,
            EvalTask::Vqa => TaskKind::Vqa,
            EvalTask::Scene => TaskKind::SceneClassification,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: EvalTask,
    /// JSONL of ground-truth records keyed by item_id.
    #[arg(long)]
    pub records: PathBuf,
    /// JSONL of {item_id, prediction_text}; predictions may also be inline
    /// in the records.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Defaults to the records file stem.
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "grid")]
    pub gt_space: GtSpaceArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtSpaceArg {
    Grid,
    Continuous,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// Caption ground truth JSONL (`{item_id, references}`).
    #[arg(long, required_unless_present = "reaggregate")]
    pub records: Option<PathBuf>,
    /// Caption predictions JSONL (`{item_id, prediction_text}`).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Recompute the summary from an existing verdict log, offline.
    #[arg(long, conflicts_with_all = ["records", "predictions"])]
    pub reaggregate: Option<PathBuf>,
    /// Chat-completions URL; overrides the config.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Judge model name; overrides the config.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; overrides the config.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    /// Corpus JSONL to review; defaults to the build's corpus.samples.jsonl.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Append-only decision log.
    #[arg(long)]
    pub decision_log: Option<PathBuf>,
    /// Directory media paths are resolved under.
    #[arg(long)]
    pub media_root: Option<PathBuf>,
    /// Static UI bundle served under /v1/ui.
    #[arg(long)]
    pub ui_root: Option<PathBuf>,
}

/// A failed run and its exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Usage(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Usage(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        match e {
            InputError::Config(c) => c.into(),
            InputError::Ingest {
                source: IngestError::Config(_),
                ..
            } => Failure::Usage(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Template(_) | CorpusError::Recipe { .. } | CorpusError::Mix(_) => Failure::Usage(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Ingest => cmd_ingest(&cli.global),
        Command::Build => cmd_build(&cli.global),
        Command::Validate(a) => cmd_validate(&cli.global, &a),
        Command::Eval(a) => cmd_eval(&cli.global, &a),
        Command::Judge(a) => cmd_judge(&cli.global, &a),
        Command::Serve(a) => cmd_serve(&cli.global, &a),
    })
}

/// Loads the config and applies flag overrides.
fn load_config(g: &GlobalArgs) -> Result<LoadedConfig, Failure> {
    let path = LoadedConfig::locate(g.config.as_deref())?;
    let mut loaded = LoadedConfig::load(&path)?;
    let c = &mut loaded.config;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if g.strict {
        c.strictness = Strictness::Strict;
    }
    if g.lenient {
        c.strictness = Strictness::Lenient;
    }
    if g.require_accept {
        c.review.require_accept = true;
    }
    Ok(loaded)
}

fn optional_config(g: &GlobalArgs) -> Result<Option<LoadedConfig>, Failure> {
    if g.config.is_none() && std::env::var_os(crate::config::CONFIG_ENV).is_none() {
        return Ok(None);
    }
    load_config(g).map(Some)
}

/// `--out`, else the config's `out`, else `out` in the working directory.
fn out_dir(g: &GlobalArgs, loaded: Option<&LoadedConfig>) -> Result<PathBuf, Failure> {
    let dir = match (&g.out, loaded) {
        (Some(o), _) => o.clone(),
        (None, Some(l)) => l.resolve(&l.config.out),
        (None, None) => PathBuf::from("out"),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn cmd_ingest(g: &GlobalArgs) -> Result<(), Failure> {
    let loaded = load_config(g)?;
    let inputs = load_inputs(&loaded)?;
    let out = out_dir(g, Some(&loaded))?;
    let path = out.join("records.jsonl");
    write_jsonl(&path, &inputs.records).map_err(|e| io_failure(&path, e))?;
    let issues = out.join("ingest_issues.jsonl");
    write_jsonl(&issues, &inputs.issues).map_err(|e| io_failure(&issues, e))?;
    if !inputs.issues.is_empty() {
        warn!(skipped = inputs.issues.len(), report = %issues.display(), "lenient ingest skipped units");
    }
    info!(records = inputs.records.len(), out = %path.display(), "ingest complete");
    Ok(())
}

fn cmd_build(g: &GlobalArgs) -> Result<(), Failure> {
    let loaded = load_config(g)?;
    let inputs = load_inputs(&loaded)?;
    let issues = inputs.issues.clone();
    let input = build_input(&loaded, inputs, g.require_accept)?;
    let out = out_dir(g, Some(&loaded))?;
    let artifacts = match build_corpus(&input) {
        Ok(a) => a,
        Err(CorpusError::Leakage(report)) => {
            print_violations(&report);
            let path = out.join("leakage_report.json");
            write_json(&path, &report).map_err(|e| io_failure(&path, e))?;
            return Err(CorpusError::Leakage(report).into());
        }
        Err(e) => return Err(e.into()),
    };
    artifacts.write(&out).map_err(|e| io_failure(&out, e))?;
    if !issues.is_empty() {
        let path = out.join("ingest_issues.jsonl");
        write_jsonl(&path, &issues).map_err(|e| io_failure(&path, e))?;
    }
    print!("{}", artifacts.manifest.render_table());
    let r = &artifacts.report;
    info!(
        samples = artifacts.samples.len(),
        stage1 = artifacts.stage1.len(),
        stage2 = artifacts.stage2.len(),
        leakage_violations = r.leakage.violations.len(),
        config_hash = %artifacts.manifest.build_config_hash,
        out = %out.display(),
        "build complete"
    );
    Ok(())
}

fn print_violations(report: &LeakageReport) {
    for v in &report.violations {
        eprintln!("leakage: sample {} uses held-out media {}:{}", v.sample_id, v.dataset_id, v.path);
    }
}

fn detect_kind(path: &Path) -> Result<ArtifactKind, Failure> {
    let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
    if name.ends_with(".toml") {
        return Ok(ArtifactKind::Config);
    }
    if name.starts_with("manifest") && name.ends_with(".json") {
        return Ok(ArtifactKind::Manifest);
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let value: serde_json::Value = serde_json::from_str(first)
        .or_else(|_| serde_json::from_str(&text))
        .map_err(|e| Failure::Invalid(format!("{}: not JSON or JSONL: {e}", path.display())))?;
    let has = |k: &str| value.get(k).is_some();
    Ok(if has("turns") && has("sample_id") {
        ArtifactKind::Samples
    } else if has("payload") {
        ArtifactKind::Records
    } else if has("reviewer") {
        ArtifactKind::Decisions
    } else if has("variant") {
        ArtifactKind::Verdicts
    } else if has("rows") && has("build_config_hash") {
        ArtifactKind::Manifest
    } else if has("scores") && has("task") {
        ArtifactKind::Report
    } else if has("candidates") && has("leakage") {
        ArtifactKind::BuildReport
    } else {
        return Err(Failure::Usage(format!("{}: cannot tell the artifact type; pass --as", path.display())));
    })
}

fn validate_all<T: Validate>(items: &[T], label: impl Fn(&T) -> String) -> Vec<String> {
    items
        .iter()
        .filter_map(|x| x.validate().err().map(|e| format!("{}: {e}", label(x))))
        .collect()
}

fn cmd_validate(g: &GlobalArgs, a: &ValidateArgs) -> Result<(), Failure> {
    // With a config, samples are also checked against its held-out splits.
    let heldout = match optional_config(g)? {
        Some(loaded) => {
            let inputs = load_inputs(&loaded)?;
            Some(HeldoutIndex::from_records(&inputs.records))
        }
        None => None,
    };
    let mut failed = 0usize;
    for path in &a.files {
        let kind = match a.kind {
            Some(k) => k,
            None => detect_kind(path)?,
        };
        let problems = validate_file(path, kind, heldout.as_ref())?;
        if problems.is_empty() {
            info!(file = %path.display(), kind = ?kind, "valid");
        } else {
            failed += 1;
            for p in &problems {
                eprintln!("{}: {p}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Invalid(format!("{failed} file(s) failed validation")));
    }
    Ok(())
}

fn validate_file(path: &Path, kind: ArtifactKind, heldout: Option<&HeldoutIndex>) -> Result<Vec<String>, Failure> {
    let parse_err = |e: crate::jsonl::JsonlError| Ok(vec![e.to_string()]);
    Ok(match kind {
        ArtifactKind::Config => match LoadedConfig::load(path) {
            Ok(_) => Vec::new(),
            Err(e) => vec![e.to_string()],
        },
        ArtifactKind::Records => match read_jsonl::<SourceRecord>(path) {
            Ok(rs) => validate_all(&rs, |r| r.media.identity().to_string()),
            Err(e) => return parse_err(e),
        },
        ArtifactKind::Samples => match read_jsonl::<InstructionSample>(path) {
            Ok(ss) => {
                let mut p = validate_all(&ss, |s| s.sample_id.clone());
                if let Some(h) = heldout {
                    let report = crate::corpus::leakage_check(&ss, h);
                    p.extend(
                        report
                            .violations
                            .iter()
                            .map(|v| format!("sample {} uses held-out media {}:{}", v.sample_id, v.dataset_id, v.path)),
                    );
                }
                p
            }
            Err(e) => return parse_err(e),
        },
        ArtifactKind::Manifest => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            match serde_json::from_str::<CorpusManifest>(&text) {
                Ok(m) => m.validate().err().map(|e| e.to_string()).into_iter().collect(),
                Err(e) => vec![e.to_string()],
            }
        }
        ArtifactKind::Decisions => match read_jsonl::<ReviewDecision>(path) {
            Ok(ds) => ds
                .iter()
                .filter_map(|d| d.validate_shape().err().map(|e| format!("{}: {e}", d.sample_id)))
                .collect(),
            Err(e) => return parse_err(e),
        },
        ArtifactKind::Verdicts => match crate::judge::read_verdict_log(path) {
            Ok(v) => match crate::judge::aggregate(&v) {
                Ok(_) => Vec::new(),
                Err(e) => vec![e.to_string()],
            },
            Err(e) => vec![e.to_string()],
        },
        ArtifactKind::Report => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            match serde_json::from_str::<MetricReport>(&text) {
                Ok(r) => r.check_ranges().err().map(|e| e.to_string()).into_iter().collect(),
                Err(e) => vec![e.to_string()],
            }
        }
        ArtifactKind::BuildReport => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            match serde_json::from_str::<BuildReport>(&text) {
                Ok(r) if r.reconciles() => Vec::new(),
                Ok(r) => vec![format!("counts do not add up to {} candidates", r.candidates)],
                Err(e) => vec![e.to_string()],
            }
        }
    })
}

fn read_eval_inputs(records: &Path, predictions: Option<&Path>) -> Result<(Vec<EvalRecord>, Vec<Prediction>), Failure> {
    let recs: Vec<EvalRecord> = read_jsonl(records).map_err(|e| io_failure(records, e))?;
    let preds = match predictions {
        Some(p) => read_jsonl(p).map_err(|e| io_failure(p, e))?,
        None => recs
            .iter()
            .filter_map(|r| {
                r.prediction_text.clone().map(|t| Prediction {
                    item_id: r.item_id.clone(),
                    prediction_text: t,
                })
            })
            .collect(),
    };
    Ok((recs, preds))
}

fn cmd_eval(g: &GlobalArgs, a: &EvalArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::Usage(format!("--threshold must lie in [0, 1], got {}", a.threshold)));
    }
    let (records, predictions) = read_eval_inputs(&a.records, a.predictions.as_deref())?;
    let dataset_id = a
        .dataset_id
        .clone()
        .unwrap_or_else(|| a.records.file_stem().unwrap_or_default().to_string_lossy().to_string());
    let options = EvalOptions {
        threshold: a.threshold,
        gt_space: match a.gt_space {
            GtSpaceArg::Grid => GtSpace::Grid,
            GtSpaceArg::Continuous => GtSpace::Continuous,
        },
    };
    let task = a.task.kind();
    let report = evaluate(task, &dataset_id, &records, &predictions, options)
        .map_err(|e| Failure::Invalid(format!("{dataset_id}: {e}")))?;
    let out = out_dir(g, optional_config(g)?.as_ref())?;
    let path = out.join(format!("metrics.{dataset_id}.{task}.json"));
    write_json(&path, &report).map_err(|e| io_failure(&path, e))?;
    print!("{}", report.render_table());
    if report.missing_predictions > 0 {
        warn!(missing = report.missing_predictions, "items without a prediction were scored as empty");
    }
    info!(out = %path.display(), "eval complete");
    Ok(())
}

fn judge_items(records: &[EvalRecord], predictions: &[Prediction]) -> Result<Vec<JudgeItem>, Failure> {
    let by_id: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.item_id.as_str(), p.prediction_text.as_str()))
        .collect();
    records
        .iter()
        .map(|r| {
            let GroundTruth::Captions { references } = &r.gt else {
                return Err(Failure::Invalid(format!("item {}: judge needs caption references", r.item_id)));
            };
            let generated = by_id
                .get(r.item_id.as_str())
                .ok_or_else(|| Failure::Invalid(format!("item {}: no prediction", r.item_id)))?;
            Ok(JudgeItem {
                item_id: r.item_id.clone(),
                ground_truths: references.clone(),
                generated: generated.to_string(),
            })
        })
        .collect()
}

fn print_summary(s: &JudgeSummary) {
    println!(
        "items {}  Accuracy1 {:.2}  Accuracy2 {:.2}  unparseable {:.2}/{:.2}  transport failures {}  ({} @ T={})",
        s.items,
        100.0 * s.accuracy_1,
        100.0 * s.accuracy_2,
        100.0 * s.unparseable_rate_1,
        100.0 * s.unparseable_rate_2,
        s.transport_failures,
        s.model,
        s.temperature
    );
}

fn cmd_judge(g: &GlobalArgs, a: &JudgeArgs) -> Result<(), Failure> {
    let loaded = optional_config(g)?;
    if let Some(log) = &a.reaggregate {
        let summary = reaggregate(log).map_err(|e| Failure::Invalid(e.to_string()))?;
        let out = out_dir(g, loaded.as_ref())?;
        let path = out.join("judge.summary.json");
        write_json(&path, &summary).map_err(|e| io_failure(&path, e))?;
        print_summary(&summary);
        return Ok(());
    }
    let mut config = loaded
        .as_ref()
        .and_then(|l| l.config.judge.clone())
        .unwrap_or_else(JudgeConfig::default);
    if let Some(e) = &a.endpoint {
        config.endpoint = e.clone();
    }
    if let Some(m) = &a.model {
        config.model = m.clone();
    }
    let records = a.records.as_deref().expect("clap requires --records");
    let (recs, preds) = read_eval_inputs(records, a.predictions.as_deref())?;
    let items = judge_items(&recs, &preds)?;
    let out = out_dir(g, loaded.as_ref())?;
    let log = out.join("judge.verdicts.jsonl");
    // A fresh run owns its log; re-aggregation reads it back unchanged.
    std::fs::write(&log, "").map_err(|e| io_failure(&log, e))?;
    let backend = HttpBackend::new(&config).map_err(|e| Failure::Usage(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Invalid(e.to_string()))?;
    let (verdicts, summary): (Vec<JudgeVerdict>, JudgeSummary) = rt
        .block_on(judge_corpus(&items, &config, backend, Some(&log)))
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    let path = out.join("judge.summary.json");
    write_json(&path, &summary).map_err(|e| io_failure(&path, e))?;
    print_summary(&summary);
    info!(verdicts = verdicts.len(), log = %log.display(), "judge complete");
    Ok(())
}

fn cmd_serve(g: &GlobalArgs, a: &ServeArgs) -> Result<(), Failure> {
    let loaded = optional_config(g)?;
    let mut config = match &loaded {
        Some(l) => {
            let mut c = l.config.serve.clone().unwrap_or_default();
            c.samples_path = l.resolve(&c.samples_path);
            c.decision_log = l.resolve(&c.decision_log);
            c.media_root = c.media_root.map(|p| l.resolve(&p));
            c.ui_root = c.ui_root.map(|p| l.resolve(&p));
            c
        }
        None => ServiceConfig::default(),
    };
    if let Some(out) = &g.out {
        config.samples_path = out.join("corpus.samples.jsonl");
        config.decision_log = out.join("decisions.jsonl");
    }
    if let Some(b) = a.bind {
        config.bind = b;
    }
    if let Some(p) = &a.samples {
        config.samples_path = p.clone();
    }
    if let Some(p) = &a.decision_log {
        config.decision_log = p.clone();
    }
    if let Some(p) = &a.media_root {
        config.media_root = Some(p.clone());
    }
    if let Some(p) = &a.ui_root {
        config.ui_root = Some(p.clone());
    }
    if config.auth_token.is_none() {
        config.auth_token = std::env::var("SKYEYE_REVIEW_TOKEN").ok();
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Invalid(e.to_string()))?;
    rt.block_on(serve(config)).map_err(|e| Failure::Usage(e.to_string()))
}
