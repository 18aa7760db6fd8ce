//! The TOML build configuration and its resolution into a [`BuildInput`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BuildInput, ConversaRecipe, ReviewPolicy, StageMixConfig};
use crate::domain::{canonical_json, content_hash, IdentifierMap, SourceRecord, Stage, TaskKind, Validate};
use crate::ingest::{ingest, DimensionIndex, IngestAdapterConfig, IngestError, IngestIssue, Strictness};
use crate::judge::JudgeConfig;
use crate::review::{read_log, ReviewDecision};
use crate::service::ServiceConfig;
use crate::templating::{load_pools, RenderOptions};

pub const CONFIG_ENV: &str = "SKYEYE_FORGE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("no config given: pass --config or set {CONFIG_ENV}")]
    Missing,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub adapter: IngestAdapterConfig,
    pub input: PathBuf,
    /// JSONL sidecar of `{path, width, height}` for inputs lacking dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierConfig {
    pub enabled: bool,
    /// Per-kind token overrides on top of the defaults.
    pub tokens: BTreeMap<TaskKind, String>,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tokens: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Directory of `*.json` pools layered over the builtin ones.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    /// Stage-2 share of single-task samples; conversations get the rest.
    pub single_task_weight: f64,
    pub stage1_epoch_length: Option<usize>,
    pub stage2_epoch_length: Option<usize>,
    /// Datasets whose single-task samples are replayed in stage 2.
    pub stage2_single_datasets: Option<Vec<String>>,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            single_task_weight: 0.8,
            stage1_epoch_length: None,
            stage2_epoch_length: None,
            stage2_single_datasets: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakagePolicy {
    /// Any held-out media in the corpus fails the build.
    #[default]
    Fail,
    /// Offending samples are dropped and reported.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub decision_log: Option<PathBuf>,
    pub require_accept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    #[serde(default)]
    pub seed: u64,
    /// Seeds template and candidate choice; independent of `seed`, which
    /// only orders the streams.
    #[serde(default)]
    pub render_seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub strictness: Strictness,
    #[serde(default)]
    pub leakage: LeakagePolicy,
    #[serde(default)]
    pub identifiers: IdentifierConfig,
    #[serde(default)]
    pub templates: TemplateConfig,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub recipes: Vec<ConversaRecipe>,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub review: ReviewConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serve: Option<ServiceConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for BuildConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

/// A config plus the directory its relative paths are resolved against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: BuildConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// `explicit` first, then the environment variable.
    pub fn locate(explicit: Option<&Path>) -> Result<PathBuf, ConfigError> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
            .ok_or(ConfigError::Missing)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: BuildConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.check()?;
        Ok(Self {
            config,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl BuildConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn render_options(&self) -> Result<RenderOptions, ConfigError> {
        let identifiers = IdentifierMap::with_overrides(&self.identifiers.tokens)
            .map_err(|e| ConfigError::Invalid(format!("identifiers: {e}")))?;
        Ok(RenderOptions {
            identifiers_enabled: self.identifiers.enabled,
            identifiers,
        })
    }

    pub fn stage_mix(&self) -> (StageMixConfig, StageMixConfig) {
        let mut s1 = StageMixConfig::stage1(self.seed);
        s1.epoch_length = self.mix.stage1_epoch_length;
        let mut s2 = StageMixConfig::stage2(self.mix.single_task_weight, self.seed);
        s2.epoch_length = self.mix.stage2_epoch_length;
        (s1, s2)
    }

    /// Static checks that need no file access.
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            d.adapter
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("dataset `{}`: {e}", d.adapter.dataset_id)))?;
            if !ids.insert(d.adapter.dataset_id.clone()) {
                return bad(format!("dataset `{}` configured twice", d.adapter.dataset_id));
            }
        }
        for r in &self.recipes {
            r.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for ds in &r.source_dataset_ids {
                if !ids.contains(ds) {
                    return bad(format!("recipe `{}` names unknown dataset `{ds}`", r.name));
                }
            }
        }
        let (s1, s2) = self.stage_mix();
        s1.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if s2.stage != Stage::Stage2 {
            return bad("internal: stage-2 mix".into());
        }
        s2.validate().map_err(|e| ConfigError::Invalid(format!("mix: {e}")))?;
        self.render_options()?;
        Ok(())
    }
}

/// Everything read from disk for a build, plus the hash identifying it.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub records: Vec<SourceRecord>,
    pub issues: Vec<IngestIssue>,
    pub decisions: Vec<ReviewDecision>,
    /// Hash over the build-relevant config and the bytes of every input.
    pub config_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset `{dataset_id}`: {source}")]
    Ingest { dataset_id: String, source: IngestError },
    #[error("{0}")]
    Other(String),
}

/// Ingests every configured dataset and reads the decision log.
pub fn load_inputs(loaded: &LoadedConfig) -> Result<LoadedInputs, InputError> {
    let cfg = &loaded.config;
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| ConfigError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut digests: BTreeMap<String, String> = BTreeMap::new();
    for d in &cfg.datasets {
        let id = &d.adapter.dataset_id;
        let bytes = read(&loaded.resolve(&d.input))?;
        digests.insert(format!("input:{id}"), content_hash_bytes(&bytes));
        let dims = match &d.dims {
            Some(p) => {
                let b = read(&loaded.resolve(p))?;
                digests.insert(format!("dims:{id}"), content_hash_bytes(&b));
                let text = String::from_utf8_lossy(&b);
                DimensionIndex::from_jsonl(&text).map_err(|source| InputError::Ingest {
                    dataset_id: id.clone(),
                    source,
                })?
            }
            None => DimensionIndex::default(),
        };
        let out = ingest(&d.adapter, &bytes, &dims, cfg.strictness).map_err(|source| InputError::Ingest {
            dataset_id: id.clone(),
            source,
        })?;
        records.extend(out.records);
        issues.extend(out.issues);
    }
    for r in &records {
        r.validate().map_err(|e| InputError::Other(format!("{}: {e}", r.media.identity())))?;
    }
    let decisions = match &cfg.review.decision_log {
        Some(p) => {
            let path = loaded.resolve(p);
            if path.exists() {
                digests.insert("decisions".into(), content_hash_bytes(&read(&path)?));
                read_log(&path).map_err(|e| InputError::Other(e.to_string()))?
            } else {
                Vec::new()
            }
        }
        None => Vec::new(),
    };
    if let Some(dir) = &cfg.templates.dir {
        let dir = loaded.resolve(dir);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|source| ConfigError::Io { path: dir.clone(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
            digests.insert(format!("pool:{name}"), content_hash_bytes(&read(&p)?));
        }
    }
    Ok(LoadedInputs {
        records,
        issues,
        decisions,
        config_hash: config_hash(cfg, &digests),
    })
}

fn content_hash_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Output location, serve and judge sections do not affect a build and are
/// left out; input contents are in.
pub fn config_hash(cfg: &BuildConfig, digests: &BTreeMap<String, String>) -> String {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = value.as_object_mut() {
        obj.remove("out");
        obj.remove("judge");
        obj.remove("serve");
    }
    let doc = serde_json::json!({ "config": value, "inputs": digests });
    content_hash(&canonical_json(&doc))
}

/// Assembles the corpus builder's input.
pub fn build_input(loaded: &LoadedConfig, inputs: LoadedInputs, require_accept: bool) -> Result<BuildInput, ConfigError> {
    let cfg = &loaded.config;
    let pools = load_pools(cfg.templates.dir.as_deref().map(|d| loaded.resolve(d)).as_deref())
        .map_err(|e| ConfigError::Invalid(format!("templates: {e}")))?;
    pools
        .validate(cfg.identifiers.enabled)
        .map_err(|e| ConfigError::Invalid(format!("templates: {e}")))?;
    let (stage1, stage2) = cfg.stage_mix();
    Ok(BuildInput {
        records: inputs.records,
        pools,
        render: cfg.render_options()?,
        render_seed: cfg.render_seed,
        recipes: cfg.recipes.clone(),
        stage1,
        stage2,
        stage2_single_datasets: cfg.mix.stage2_single_datasets.clone(),
        decisions: inputs.decisions,
        review_policy: if require_accept || cfg.review.require_accept {
            ReviewPolicy::RequireAccept
        } else {
            ReviewPolicy::PassPending
        },
        strict_leakage: cfg.leakage == LeakagePolicy::Fail,
        config_hash: inputs.config_hash,
    })
}
