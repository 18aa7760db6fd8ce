//! Shared domain types and the canonical JSONL record schemas.
//!
//! Every type here is an immutable value that serializes with snake_case
//! field names. Invariants are checked by [`Validate`] rather than at
//! construction so that records read from disk can be reported on
//! field-by-field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Closed set of task families a record or turn can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ImageCaption,
    VideoCaption,
    Vqa,
    VisualGrounding,
    PhraseGrounding,
    ReferringExpressionGeneration,
    SceneClassification,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::ImageCaption,
        TaskKind::VideoCaption,
        TaskKind::Vqa,
        TaskKind::VisualGrounding,
        TaskKind::PhraseGrounding,
        TaskKind::ReferringExpressionGeneration,
        TaskKind::SceneClassification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ImageCaption => "image_caption",
            TaskKind::VideoCaption => "video_caption",
            TaskKind::Vqa => "vqa",
            TaskKind::VisualGrounding => "visual_grounding",
            TaskKind::PhraseGrounding => "phrase_grounding",
            TaskKind::ReferringExpressionGeneration => "referring_expression_generation",
            TaskKind::SceneClassification => "scene_classification",
        }
    }

    pub fn is_caption(self) -> bool {
        matches!(self, TaskKind::ImageCaption | TaskKind::VideoCaption)
    }

    /// Kinds whose answers or queries carry serialized boxes.
    pub fn carries_boxes(self) -> bool {
        matches!(
            self,
            TaskKind::VisualGrounding
                | TaskKind::PhraseGrounding
                | TaskKind::ReferringExpressionGeneration
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind `{s}`"))
    }
}

/// A bracketed token prefixed to instructions to condition on the task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskIdentifier {
    pub token: String,
    pub kind: TaskKind,
}

/// Checks the `\[[a-z-]+\]` token grammar.
pub fn is_valid_identifier_token(token: &str) -> bool {
    let Some(inner) = token.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
        return false;
    };
    !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_lowercase() || b == b'-')
}

/// The kind → token table used by one corpus build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentifierMap(BTreeMap<TaskKind, String>);

impl Default for IdentifierMap {
    /// `[caption]`, `[vqa]` and `[refer]` are the published tokens; the rest
    /// follow the same naming style and can be overridden in configuration.
    fn default() -> Self {
        let map = [
            (TaskKind::ImageCaption, "[caption]"),
            (TaskKind::VideoCaption, "[video-caption]"),
            (TaskKind::Vqa, "[vqa]"),
            (TaskKind::VisualGrounding, "[refer]"),
            (TaskKind::PhraseGrounding, "[grounding]"),
            (TaskKind::ReferringExpressionGeneration, "[identify]"),
            (TaskKind::SceneClassification, "[classify]"),
        ]
        .into_iter()
        .map(|(k, t)| (k, t.to_string()))
        .collect();
        IdentifierMap(map)
    }
}

impl IdentifierMap {
    /// Defaults with the given per-kind overrides applied.
    pub fn with_overrides(overrides: &BTreeMap<TaskKind, String>) -> Result<Self, ValidationError> {
        let mut map = IdentifierMap::default();
        for (kind, token) in overrides {
            map.0.insert(*kind, token.clone());
        }
        map.validate()?;
        Ok(map)
    }

    pub fn get(&self, kind: TaskKind) -> Option<TaskIdentifier> {
        self.0.get(&kind).map(|token| TaskIdentifier {
            token: token.clone(),
            kind,
        })
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.values().map(String::as_str)
    }

    pub fn as_map(&self) -> &BTreeMap<TaskKind, String> {
        &self.0
    }
}

impl Validate for IdentifierMap {
    fn validate(&self) -> Result<(), ValidationError> {
        let mut seen = BTreeSet::new();
        for (kind, token) in &self.0 {
            if !is_valid_identifier_token(token) {
                return Err(ValidationError::new(
                    format!("identifiers.{kind}"),
                    format!("token `{token}` does not match `[a-z-]` bracket grammar"),
                ));
            }
            if !seen.insert(token.as_str()) {
                return Err(ValidationError::new(
                    format!("identifiers.{kind}"),
                    format!("token `{token}` is mapped to more than one task kind"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn is_heldout(self) -> bool {
        !matches!(self, Split::Train)
    }
}

/// The globally unique identity of a media item: `(dataset_id, path)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MediaIdentity {
    pub dataset_id: String,
    pub path: String,
}

impl fmt::Display for MediaIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset_id, self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRef {
    pub dataset_id: String,
    pub media_kind: MediaKind,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_paths: Option<Vec<String>>,
    pub width: u32,
    pub height: u32,
}

impl MediaRef {
    pub fn image(dataset_id: impl Into<String>, path: impl Into<String>, width: u32, height: u32) -> Self {
        MediaRef {
            dataset_id: dataset_id.into(),
            media_kind: MediaKind::Image,
            path: path.into(),
            frame_paths: None,
            width,
            height,
        }
    }

    pub fn identity(&self) -> MediaIdentity {
        MediaIdentity {
            dataset_id: self.dataset_id.clone(),
            path: self.path.clone(),
        }
    }
}

impl Validate for MediaRef {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.dataset_id.is_empty() {
            return Err(ValidationError::new("media.dataset_id", "must be non-empty"));
        }
        if self.path.is_empty() {
            return Err(ValidationError::new("media.path", "must be non-empty"));
        }
        if self.width == 0 {
            return Err(ValidationError::new("media.width", "must be > 0"));
        }
        if self.height == 0 {
            return Err(ValidationError::new("media.height", "must be > 0"));
        }
        match (self.media_kind, &self.frame_paths) {
            (MediaKind::Video, None) => Err(ValidationError::new(
                "media.frame_paths",
                "video media requires a non-empty frame list",
            )),
            (MediaKind::Video, Some(frames)) if frames.is_empty() => Err(ValidationError::new(
                "media.frame_paths",
                "video media requires a non-empty frame list",
            )),
            (MediaKind::Image, Some(_)) => Err(ValidationError::new(
                "media.frame_paths",
                "image media must not carry frame paths",
            )),
            _ => Ok(()),
        }
    }
}

/// An axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        PixelBox { x1, y1, x2, y2 }
    }

    /// Checks `0 <= x1 < x2 <= width` and `0 <= y1 < y2 <= height`.
    pub fn check_within(&self, width: u32, height: u32) -> Result<(), BoxError> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(BoxError::Degenerate);
        }
        if self.x1 < 0.0 || self.y1 < 0.0 || self.x2 > width as f64 || self.y2 > height as f64 {
            return Err(BoxError::OutOfBounds { width, height });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoxError {
    #[error("degenerate box")]
    Degenerate,
    #[error("out of bounds for {width}x{height} media")]
    OutOfBounds { width: u32, height: u32 },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Task payload of a source record. Variants are distinguished by their
/// field names on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Captions {
        captions: Vec<String>,
    },
    QuestionAnswer {
        question: String,
        answer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<String>,
    },
    ExpressionBox {
        expression: String,
        #[serde(rename = "box")]
        bbox: PixelBox,
    },
    PhraseBoxes {
        phrase: String,
        boxes: Vec<PixelBox>,
    },
    ClassLabel {
        class_label: String,
    },
}

impl Payload {
    pub fn matches_kind(&self, kind: TaskKind) -> bool {
        use TaskKind::*;
        matches!(
            (self, kind),
            (Payload::Captions { .. }, ImageCaption | VideoCaption)
                | (Payload::QuestionAnswer { .. }, Vqa)
                | (
                    Payload::ExpressionBox { .. },
                    VisualGrounding | ReferringExpressionGeneration
                )
                | (Payload::PhraseBoxes { .. }, PhraseGrounding)
                | (Payload::ClassLabel { .. }, SceneClassification)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub media: MediaRef,
    pub kind: TaskKind,
    pub split: Split,
    pub payload: Payload,
}

impl Validate for SourceRecord {
    fn validate(&self) -> Result<(), ValidationError> {
        self.media.validate()?;
        if !self.payload.matches_kind(self.kind) {
            return Err(ValidationError::new(
                "payload",
                format!("payload variant does not match kind `{}`", self.kind),
            ));
        }
        if self.kind == TaskKind::VideoCaption && self.media.media_kind != MediaKind::Video {
            return Err(ValidationError::new("media.media_kind", "video captions require video media"));
        }
        let (w, h) = (self.media.width, self.media.height);
        let non_empty = |field: &str, s: &str| {
            if s.trim().is_empty() {
                Err(ValidationError::new(format!("payload.{field}"), "must be non-empty"))
            } else {
                Ok(())
            }
        };
        match &self.payload {
            Payload::Captions { captions } => {
                if captions.is_empty() {
                    return Err(ValidationError::new("payload.captions", "needs at least one caption"));
                }
                for (i, c) in captions.iter().enumerate() {
                    non_empty(&format!("captions[{i}]"), c)?;
                }
            }
            Payload::QuestionAnswer { question, answer, .. } => {
                non_empty("question", question)?;
                non_empty("answer", answer)?;
            }
            Payload::ExpressionBox { expression, bbox } => {
                non_empty("expression", expression)?;
                bbox.check_within(w, h)
                    .map_err(|e| ValidationError::new("payload.box", e.to_string()))?;
            }
            Payload::PhraseBoxes { phrase, boxes } => {
                non_empty("phrase", phrase)?;
                if boxes.is_empty() {
                    return Err(ValidationError::new("payload.boxes", "needs at least one box"));
                }
                for (i, b) in boxes.iter().enumerate() {
                    b.check_within(w, h)
                        .map_err(|e| ValidationError::new(format!("payload.boxes[{i}]"), e.to_string()))?;
                }
            }
            Payload::ClassLabel { class_label } => non_empty("class_label", class_label)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConversationTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier: Option<TaskIdentifier>,
    pub instruction_text: String,
    pub answer_text: String,
    pub kind: TaskKind,
}

impl Validate for ConversationTurn {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.instruction_text.trim().is_empty() {
            return Err(ValidationError::new("instruction_text", "must be non-empty"));
        }
        if self.answer_text.trim().is_empty() {
            return Err(ValidationError::new("answer_text", "must be non-empty"));
        }
        if let Some(id) = &self.identifier {
            if id.kind != self.kind {
                return Err(ValidationError::new("identifier.kind", "does not match turn kind"));
            }
            if !is_valid_identifier_token(&id.token) {
                return Err(ValidationError::new("identifier.token", "bad token grammar"));
            }
            if self.instruction_text.matches(id.token.as_str()).count() != 1 {
                return Err(ValidationError::new(
                    "instruction_text",
                    format!("must contain identifier `{}` exactly once", id.token),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    #[default]
    Pending,
    Accepted,
    Rejected,
    Edited,
}

impl FromStr for ReviewState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ReviewState::Pending),
            "accepted" => Ok(ReviewState::Accepted),
            "rejected" => Ok(ReviewState::Rejected),
            "edited" => Ok(ReviewState::Edited),
            other => Err(format!("unknown review state `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub sample_id: String,
    pub media: MediaRef,
    pub turns: Vec<ConversationTurn>,
    pub stage_tags: BTreeSet<Stage>,
    pub source_recipe: String,
    #[serde(default)]
    pub review_state: ReviewState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_from: Option<String>,
}

impl InstructionSample {
    /// Builds a sample and assigns its content-derived id.
    pub fn new(
        media: MediaRef,
        turns: Vec<ConversationTurn>,
        stage_tags: BTreeSet<Stage>,
        source_recipe: impl Into<String>,
    ) -> Self {
        let sample_id = sample_id(&media, &turns);
        InstructionSample {
            sample_id,
            media,
            turns,
            stage_tags,
            source_recipe: source_recipe.into(),
            review_state: ReviewState::Pending,
            edited_from: None,
        }
    }

    pub fn is_conversation(&self) -> bool {
        self.turns.len() > 1
    }

    pub fn kinds(&self) -> impl Iterator<Item = TaskKind> + '_ {
        self.turns.iter().map(|t| t.kind)
    }
}

impl Validate for InstructionSample {
    fn validate(&self) -> Result<(), ValidationError> {
        self.media.validate()?;
        if self.turns.is_empty() {
            return Err(ValidationError::new("turns", "needs at least one turn"));
        }
        for (i, t) in self.turns.iter().enumerate() {
            t.validate().map_err(|e| e.under(&format!("turns[{i}]")))?;
        }
        if self.stage_tags.is_empty() {
            return Err(ValidationError::new("stage_tags", "must be non-empty"));
        }
        if self.is_conversation() && self.stage_tags.contains(&Stage::Stage1) {
            return Err(ValidationError::new(
                "stage_tags",
                "multi-turn conversation samples are stage2-only",
            ));
        }
        let expected = sample_id(&self.media, &self.turns);
        if expected != self.sample_id {
            return Err(ValidationError::new(
                "sample_id",
                format!("does not match content hash (expected {expected})"),
            ));
        }
        Ok(())
    }
}

/// SHA-256 over the canonical JSON of the media identity and ordered turns.
///
/// Canonical JSON here means sorted object keys and no whitespace, which is
/// what `serde_json::Value` produces with its default `BTreeMap` maps.
pub fn sample_id(media: &MediaRef, turns: &[ConversationTurn]) -> String {
    let turns: Vec<serde_json::Value> = turns
        .iter()
        .map(|t| {
            serde_json::json!({
                "identifier": t.identifier.as_ref().map(|i| &i.token),
                "instruction_text": t.instruction_text,
                "answer_text": t.answer_text,
                "kind": t.kind,
            })
        })
        .collect();
    let value = serde_json::json!({
        "media": { "dataset_id": media.dataset_id, "path": media.path },
        "turns": turns,
    });
    content_hash(&canonical_json(&value))
}

/// Compact JSON with keys in sorted order.
pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json::Map is a BTreeMap unless `preserve_order` is enabled.
    serde_json::to_string(value).expect("json values always serialize")
}

pub fn content_hash(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

/// Derives a 64-bit seed from a global seed and arbitrary content parts.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub dataset_id: String,
    /// A task kind name, or `conversation` for multi-turn samples.
    pub task: String,
    pub source_recipe: String,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
    pub stage1_total: u64,
    pub stage2_total: u64,
    pub total: u64,
    pub build_config_hash: String,
    pub seed: u64,
}

impl Validate for CorpusManifest {
    fn validate(&self) -> Result<(), ValidationError> {
        let sum: u64 = self.rows.iter().map(|r| r.sample_count).sum();
        if sum != self.total {
            return Err(ValidationError::new(
                "total",
                format!("per-source counts sum to {sum}, total says {}", self.total),
            ));
        }
        if self.stage1_total > self.total || self.stage2_total > self.total {
            return Err(ValidationError::new("stage totals", "exceed total"));
        }
        Ok(())
    }
}

impl CorpusManifest {
    /// Plain-text table in the task / data source / samples layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let w_task = self.rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
        let w_src = self.rows.iter().map(|r| r.dataset_id.len()).max().unwrap_or(11).max(11);
        out.push_str(&format!("{:<w_task$}  {:<w_src$}  {:>8}\n", "Task", "Data Source", "Samples"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<w_task$}  {:<w_src$}  {:>8}\n",
                r.task,
                r.dataset_id,
                format_count(r.sample_count)
            ));
        }
        out.push_str(&format!(
            "total {} (stage1 {}, stage2 {})\n",
            self.total, self.stage1_total, self.stage2_total
        ));
        out
    }
}

fn format_count(n: u64) -> String {
    if n >= 1000 {
        format!("{:.1}k", n as f64 / 1000.0)
    } else {
        n.to_string()
    }
}

/// A failed invariant, with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the field path.
    pub fn under(mut self, parent: &str) -> Self {
        self.field = format!("{parent}.{}", self.field);
        self
    }
}

pub trait Validate {
    fn validate(&self) -> Result<(), ValidationError>;
}
