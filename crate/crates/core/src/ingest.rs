//! Annotation adapters: turn user-supplied caption, VQA, grounding and
//! detection files into validated [`SourceRecord`]s.
//!
//! All JSON formats accept a top-level array, a wrapper object holding the
//! array (e.g. `{"images": [...]}`), or JSONL. `csv-table` reads a headed CSV
//! whose columns are addressable by name or by zero-based index.
//!
//! Ingestion is a pure function of `(config, bytes, dimension index)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::domain::{
    MediaKind, MediaRef, Payload, PixelBox, SourceRecord, Split, TaskKind, Validate, ValidationError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    CaptionJson,
    VqaJson,
    GroundingJson,
    DetectionJson,
    CsvTable,
}

impl InputFormat {
    fn accepts(self, kind: TaskKind) -> bool {
        use TaskKind::*;
        match self {
            InputFormat::CaptionJson => kind.is_caption(),
            InputFormat::VqaJson => matches!(kind, Vqa | SceneClassification),
            InputFormat::GroundingJson => matches!(kind, VisualGrounding | ReferringExpressionGeneration),
            InputFormat::DetectionJson => kind == PhraseGrounding,
            InputFormat::CsvTable => true,
        }
    }
}

/// Canonical field names an adapter reads. `field_map` may rename any of them.
pub const CANONICAL_FIELDS: [&str; 19] = [
    "image",
    "width",
    "height",
    "split",
    "frames",
    "captions",
    "caption_text",
    "question",
    "answer",
    "category",
    "expression",
    "box",
    "x1",
    "y1",
    "x2",
    "y2",
    "objects",
    "label",
    "class_label",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestAdapterConfig {
    pub dataset_id: String,
    pub kind: TaskKind,
    pub input_format: InputFormat,
    /// Source split label → split. Empty means the literal labels
    /// `train`, `val` and `test`.
    #[serde(default)]
    pub split_map: BTreeMap<String, Split>,
    /// Canonical field → source field name (or CSV column index).
    #[serde(default)]
    pub field_map: BTreeMap<String, String>,
    /// Split for units with no split field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_split: Option<Split>,
    /// Key of the array inside a wrapper object; defaults to trying
    /// `images`, `annotations`, `items`, `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_key: Option<String>,
}

impl IngestAdapterConfig {
    pub fn new(dataset_id: impl Into<String>, kind: TaskKind, input_format: InputFormat) -> Self {
        IngestAdapterConfig {
            dataset_id: dataset_id.into(),
            kind,
            input_format,
            split_map: BTreeMap::new(),
            field_map: BTreeMap::new(),
            default_split: None,
            items_key: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.dataset_id.is_empty() {
            return Err(IngestError::Config("dataset_id must be non-empty".into()));
        }
        if !self.input_format.accepts(self.kind) {
            return Err(IngestError::Config(format!(
                "format {:?} cannot produce `{}` records",
                self.input_format, self.kind
            )));
        }
        for key in self.field_map.keys() {
            if !CANONICAL_FIELDS.contains(&key.as_str()) {
                return Err(IngestError::Config(format!("field_map: unknown canonical field `{key}`")));
            }
        }
        Ok(())
    }

    fn field<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.field_map.get(canonical).map(String::as_str).unwrap_or(canonical)
    }

    fn map_split(&self, label: Option<&str>) -> Result<Split, String> {
        let Some(label) = label else {
            return self.default_split.ok_or_else(|| "missing field `split`".to_string());
        };
        if self.split_map.is_empty() {
            return match label {
                "train" => Ok(Split::Train),
                "val" => Ok(Split::Val),
                "test" => Ok(Split::Test),
                other => Err(format!("unknown split label `{other}`")),
            };
        }
        self.split_map
            .get(label)
            .copied()
            .ok_or_else(|| format!("unknown split label `{label}`"))
    }
}

/// Media dimensions keyed by media path, for annotation files that omit them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DimensionIndex(HashMap<String, (u32, u32)>);

#[derive(Deserialize)]
struct DimensionEntry {
    path: String,
    width: u32,
    height: u32,
}

impl DimensionIndex {
    /// Parses a JSONL sidecar of `{"path", "width", "height"}` objects.
    pub fn from_jsonl(text: &str) -> Result<Self, IngestError> {
        let entries: Vec<DimensionEntry> = crate::jsonl::parse_jsonl(text).map_err(|e| match e {
            crate::jsonl::JsonlError::Parse { line, source } => IngestError::Malformed {
                locator: Locator::Line(line),
                message: source.to_string(),
            },
            other => IngestError::Config(other.to_string()),
        })?;
        Ok(DimensionIndex(
            entries.into_iter().map(|e| (e.path, (e.width, e.height))).collect(),
        ))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn insert(&mut self, path: impl Into<String>, width: u32, height: u32) {
        self.0.insert(path.into(), (width, height));
    }

    pub fn get(&self, path: &str) -> Option<(u32, u32)> {
        self.0.get(path).copied()
    }
}

/// Where in the input file a unit came from (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum Locator {
    Line(usize),
    Item(usize),
    Row(usize),
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locator::Line(n) => write!(f, "line {n}"),
            Locator::Item(n) => write!(f, "item {n}"),
            Locator::Row(n) => write!(f, "row {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{locator}: malformed input: {message}")]
    Malformed { locator: Locator, message: String },
    #[error("{locator}: {message}")]
    Unit { locator: Locator, message: String },
    #[error("{locator}: invalid record: {source}")]
    Invalid { locator: Locator, source: ValidationError },
}

impl IngestError {
    fn to_issue(&self, dataset_id: &str) -> IngestIssue {
        let (locator, field, message) = match self {
            IngestError::Config(m) => (None, None, m.clone()),
            IngestError::Malformed { locator, message } | IngestError::Unit { locator, message } => {
                (Some(*locator), None, message.clone())
            }
            IngestError::Invalid { locator, source } => {
                (Some(*locator), Some(source.field.clone()), source.message.clone())
            }
        };
        IngestIssue {
            dataset_id: dataset_id.to_string(),
            locator,
            field,
            message,
        }
    }
}

/// One line of the error report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<Locator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// First bad unit fails the whole file.
    #[default]
    Strict,
    /// Bad units are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutput {
    pub records: Vec<SourceRecord>,
    pub issues: Vec<IngestIssue>,
    /// Input units after grouping (per media item for captions).
    pub units: usize,
}

struct Unit {
    locator: Locator,
    fields: Map<String, Value>,
}

fn parse_units(config: &IngestAdapterConfig, bytes: &[u8]) -> Result<Vec<Unit>, IngestError> {
    if config.input_format == InputFormat::CsvTable {
        return parse_csv(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Malformed {
        locator: Locator::Line(1),
        message: format!("not utf-8: {e}"),
    })?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let value: Value = serde_json::from_str(text).map_err(|e| IngestError::Malformed {
            locator: Locator::Line(e.line()),
            message: e.to_string(),
        })?;
        return array_units(value);
    }
    // A single object spanning the file is a wrapper; otherwise JSONL.
    if let Ok(Value::Object(mut obj)) = serde_json::from_str::<Value>(text) {
        let keys: Vec<String> = match &config.items_key {
            Some(k) => vec![k.clone()],
            None => ["images", "annotations", "items", "data"].map(String::from).to_vec(),
        };
        if let Some(arr) = keys.iter().find_map(|k| obj.remove(k)) {
            return array_units(arr);
        }
        if text.lines().filter(|l| !l.trim().is_empty()).count() > 1 {
            return Err(IngestError::Malformed {
                locator: Locator::Line(1),
                message: format!("wrapper object has none of the item keys {keys:?}"),
            });
        }
    }
    let mut units = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let locator = Locator::Line(i + 1);
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(fields)) => units.push(Unit { locator, fields }),
            Ok(_) => {
                return Err(IngestError::Malformed {
                    locator,
                    message: "expected a JSON object".into(),
                })
            }
            Err(e) => {
                return Err(IngestError::Malformed {
                    locator,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(units)
}

fn array_units(value: Value) -> Result<Vec<Unit>, IngestError> {
    let Value::Array(items) = value else {
        return Err(IngestError::Malformed {
            locator: Locator::Item(0),
            message: "expected an array of objects".into(),
        });
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::Object(fields) => Ok(Unit {
                locator: Locator::Item(i + 1),
                fields,
            }),
            _ => Err(IngestError::Malformed {
                locator: Locator::Item(i + 1),
                message: "expected a JSON object".into(),
            }),
        })
        .collect()
}

fn parse_csv(bytes: &[u8]) -> Result<Vec<Unit>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Malformed {
            locator: Locator::Row(1),
            message: e.to_string(),
        })?
        .clone();
    let mut units = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is row 1
        let locator = Locator::Row(i + 2);
        let row = row.map_err(|e| IngestError::Malformed {
            locator,
            message: e.to_string(),
        })?;
        let mut fields = Map::new();
        for (col, value) in row.iter().enumerate() {
            fields.insert(col.to_string(), Value::String(value.to_string()));
            if let Some(name) = headers.get(col) {
                fields.insert(name.to_string(), Value::String(value.to_string()));
            }
        }
        units.push(Unit { locator, fields });
    }
    Ok(units)
}

/// Typed field access over one unit, through the adapter's field map.
struct Fields<'a> {
    config: &'a IngestAdapterConfig,
    unit: &'a Unit,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> IngestError {
        IngestError::Unit {
            locator: self.unit.locator,
            message: message.into(),
        }
    }

    fn raw(&self, canonical: &str) -> Option<&'a Value> {
        self.unit
            .fields
            .get(self.config.field(canonical))
            .filter(|v| !v.is_null() && v.as_str() != Some(""))
    }

    fn opt_str(&self, canonical: &str) -> Result<Option<String>, IngestError> {
        match self.raw(canonical) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::Bool(b)) => Ok(Some(if *b { "yes" } else { "no" }.to_string())),
            Some(_) => Err(self.err(format!("field `{}` must be a string", self.config.field(canonical)))),
        }
    }

    fn str(&self, canonical: &str) -> Result<String, IngestError> {
        self.opt_str(canonical)?
            .ok_or_else(|| self.err(format!("missing field `{}`", self.config.field(canonical))))
    }

    /// Like `str`, but an explicitly empty value is kept so validation
    /// reports it against the payload field.
    fn text(&self, canonical: &str) -> Result<String, IngestError> {
        match self.unit.fields.get(self.config.field(canonical)) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => self.str(canonical),
        }
    }

    fn opt_number(&self, canonical: &str) -> Result<Option<f64>, IngestError> {
        let name = self.config.field(canonical);
        match self.raw(canonical) {
            None => Ok(None),
            Some(v) => value_to_f64(v)
                .map(Some)
                .ok_or_else(|| self.err(format!("field `{name}` must be a number"))),
        }
    }

    fn dims(&self, path: &str, index: &DimensionIndex) -> Result<(u32, u32), IngestError> {
        let w = self.opt_number("width")?;
        let h = self.opt_number("height")?;
        let (w, h) = match (w, h) {
            (Some(w), Some(h)) => (w, h),
            _ => match index.get(path) {
                Some((w, h)) => (w as f64, h as f64),
                None => return Err(self.err(format!("no dimensions for `{path}` in file or dimension index"))),
            },
        };
        if w < 0.0 || h < 0.0 || w.fract() != 0.0 || h.fract() != 0.0 || w > u32::MAX as f64 || h > u32::MAX as f64 {
            return Err(self.err("width/height must be non-negative integers"));
        }
        Ok((w as u32, h as u32))
    }

    fn split(&self) -> Result<Split, IngestError> {
        let label = self.opt_str("split")?;
        self.config.map_split(label.as_deref()).map_err(|m| self.err(m))
    }

    fn media(&self, index: &DimensionIndex) -> Result<MediaRef, IngestError> {
        let path = self.str("image")?;
        let (width, height) = self.dims(&path, index)?;
        let mut media = MediaRef::image(&self.config.dataset_id, path, width, height);
        if self.config.kind == TaskKind::VideoCaption {
            media.media_kind = MediaKind::Video;
            media.frame_paths = Some(self.frames()?);
        }
        Ok(media)
    }

    fn frames(&self) -> Result<Vec<String>, IngestError> {
        let name = self.config.field("frames");
        match self.raw("frames") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(String::from).ok_or_else(|| self.err(format!("`{name}` entries must be strings"))))
                .collect(),
            Some(Value::String(s)) => Ok(s.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()),
            Some(_) => Err(self.err(format!("`{name}` must be a list or `;`-separated string"))),
            None => Err(self.err(format!("missing field `{name}`"))),
        }
    }

    /// A box as `[x1,y1,x2,y2]`, `"x1 y1 x2 y2"`, `{x1,..}` or four fields.
    fn bbox_from(&self, value: Option<&Value>, owner: &Map<String, Value>) -> Result<PixelBox, IngestError> {
        let name = self.config.field("box");
        let nums: Vec<f64> = match value {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| value_to_f64(v).ok_or_else(|| self.err(format!("`{name}` must hold numbers"))))
                .collect::<Result<_, _>>()?,
            Some(Value::String(s)) => s
                .trim_matches(|c| c == '[' || c == ']' || c == '(' || c == ')')
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("`{name}`: bad number `{t}`"))))
                .collect::<Result<_, _>>()?,
            Some(Value::Object(o)) => self.four_coords(o)?,
            Some(_) => return Err(self.err(format!("`{name}` has an unsupported shape"))),
            None => self.four_coords(owner)?,
        };
        match nums.as_slice() {
            [x1, y1, x2, y2] => Ok(PixelBox::new(*x1, *y1, *x2, *y2)),
            _ => Err(self.err(format!("`{name}` must have exactly 4 coordinates"))),
        }
    }

    fn four_coords(&self, obj: &Map<String, Value>) -> Result<Vec<f64>, IngestError> {
        ["x1", "y1", "x2", "y2"]
            .iter()
            .map(|c| {
                let key = self.config.field(c);
                obj.get(key)
                    .and_then(value_to_f64)
                    .ok_or_else(|| self.err(format!("missing box coordinate `{key}`")))
            })
            .collect()
    }
}

fn value_to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Collects outcomes in strict or lenient mode.
struct Collector<'a> {
    config: &'a IngestAdapterConfig,
    strictness: Strictness,
    out: IngestOutput,
}

impl<'a> Collector<'a> {
    fn new(config: &'a IngestAdapterConfig, strictness: Strictness) -> Self {
        Collector {
            config,
            strictness,
            out: IngestOutput::default(),
        }
    }

    fn fail(&mut self, err: IngestError) -> Result<(), IngestError> {
        match self.strictness {
            Strictness::Strict => Err(err),
            Strictness::Lenient => {
                self.out.issues.push(err.to_issue(&self.config.dataset_id));
                Ok(())
            }
        }
    }

    fn push(&mut self, locator: Locator, record: SourceRecord) -> Result<(), IngestError> {
        match record.validate() {
            Ok(()) => {
                self.out.records.push(record);
                Ok(())
            }
            Err(source) => self.fail(IngestError::Invalid { locator, source }),
        }
    }
}

fn check_kind(config: &IngestAdapterConfig, allowed: &[TaskKind]) -> Result<(), IngestError> {
    config.validate()?;
    if !allowed.contains(&config.kind) {
        return Err(IngestError::Config(format!(
            "adapter for {allowed:?} cannot produce `{}` records",
            config.kind
        )));
    }
    Ok(())
}

/// Dispatches on `config.kind`.
pub fn ingest(
    config: &IngestAdapterConfig,
    bytes: &[u8],
    dims: &DimensionIndex,
    strictness: Strictness,
) -> Result<IngestOutput, IngestError> {
    use TaskKind::*;
    match config.kind {
        ImageCaption | VideoCaption => ingest_captions(config, bytes, dims, strictness),
        Vqa | SceneClassification => ingest_vqa(config, bytes, dims, strictness),
        VisualGrounding | ReferringExpressionGeneration => ingest_grounding(config, bytes, dims, strictness),
        PhraseGrounding => ingest_detection(config, bytes, dims, strictness),
    }
}

/// One record per media item with all its captions grouped, in first-seen order.
pub fn ingest_captions(
    config: &IngestAdapterConfig,
    bytes: &[u8],
    dims: &DimensionIndex,
    strictness: Strictness,
) -> Result<IngestOutput, IngestError> {
    check_kind(config, &[TaskKind::ImageCaption, TaskKind::VideoCaption])?;
    let units = parse_units(config, bytes)?;
    let mut col = Collector::new(config, strictness);

    struct Group {
        locator: Locator,
        media: MediaRef,
        split: Split,
        captions: Vec<String>,
        failed: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();

    for unit in &units {
        let f = Fields { config, unit };
        let parsed = (|| {
            let media = f.media(dims)?;
            let split = f.split()?;
            let captions = unit_captions(&f)?;
            Ok::<_, IngestError>((media, split, captions))
        })();
        let (media, split, captions) = match parsed {
            Ok(v) => v,
            Err(e) => {
                col.fail(e)?;
                continue;
            }
        };
        match groups.get_mut(&media.path) {
            Some(g) if g.failed => {}
            Some(g) => {
                if g.split != split || g.media.width != media.width || g.media.height != media.height {
                    g.failed = true;
                    col.fail(f.err(format!(
                        "`{}` appears with conflicting split or dimensions (first at {})",
                        media.path, g.locator
                    )))?;
                } else {
                    g.captions.extend(captions);
                }
            }
            None => {
                order.push(media.path.clone());
                groups.insert(
                    media.path.clone(),
                    Group {
                        locator: unit.locator,
                        media,
                        split,
                        captions,
                        failed: false,
                    },
                );
            }
        }
    }
    col.out.units = order.len();
    for path in order {
        let g = groups.remove(&path).expect("grouped above");
        if g.failed {
            continue;
        }
        let record = SourceRecord {
            media: g.media,
            kind: config.kind,
            split: g.split,
            payload: Payload::Captions { captions: g.captions },
        };
        col.push(g.locator, record)?;
    }
    Ok(col.out)
}

fn unit_captions(f: &Fields<'_>) -> Result<Vec<String>, IngestError> {
    let name = f.config.field("captions");
    let text_key = f.config.field_map.get("caption_text").map(String::as_str).unwrap_or("raw");
    // `captions` may also be spelled `caption` in per-row files.
    let value = f.raw("captions").or_else(|| {
        if f.config.field_map.contains_key("captions") {
            None
        } else {
            f.unit.fields.get("caption").or_else(|| f.unit.fields.get("sentences"))
        }
    });
    match value {
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Object(o) => o
                    .get(text_key)
                    .and_then(Value::as_str)
                    .map(String::from)
                    .ok_or_else(|| f.err(format!("caption object lacks `{text_key}`"))),
                _ => Err(f.err(format!("`{name}` entries must be strings or objects"))),
            })
            .collect(),
        Some(_) => Err(f.err(format!("`{name}` must be a string or list"))),
        None => Err(f.err(format!("missing field `{name}`"))),
    }
}

/// One record per `(image, question, answer)` triple, or per labelled
/// image for scene classification.
pub fn ingest_vqa(
    config: &IngestAdapterConfig,
    bytes: &[u8],
    dims: &DimensionIndex,
    strictness: Strictness,
) -> Result<IngestOutput, IngestError> {
    check_kind(config, &[TaskKind::Vqa, TaskKind::SceneClassification])?;
    let units = parse_units(config, bytes)?;
    let mut col = Collector::new(config, strictness);
    col.out.units = units.len();
    for unit in &units {
        let f = Fields { config, unit };
        let parsed = (|| {
            let media = f.media(dims)?;
            let split = f.split()?;
            let payload = if config.kind == TaskKind::SceneClassification {
                Payload::ClassLabel {
                    class_label: f.text("class_label")?,
                }
            } else {
                Payload::QuestionAnswer {
                    question: f.text("question")?,
                    answer: f.text("answer")?,
                    category: f.opt_str("category")?,
                }
            };
            Ok::<_, IngestError>(SourceRecord {
                media,
                kind: config.kind,
                split,
                payload,
            })
        })();
        match parsed {
            Ok(r) => col.push(unit.locator, r)?,
            Err(e) => col.fail(e)?,
        }
    }
    Ok(col.out)
}

/// One record per `(expression, box)` pair.
pub fn ingest_grounding(
    config: &IngestAdapterConfig,
    bytes: &[u8],
    dims: &DimensionIndex,
    strictness: Strictness,
) -> Result<IngestOutput, IngestError> {
    check_kind(config, &[TaskKind::VisualGrounding, TaskKind::ReferringExpressionGeneration])?;
    let units = parse_units(config, bytes)?;
    let mut col = Collector::new(config, strictness);
    col.out.units = units.len();
    for unit in &units {
        let f = Fields { config, unit };
        let parsed = (|| {
            let media = f.media(dims)?;
            let split = f.split()?;
            let expression = f.text("expression")?;
            let bbox = f.bbox_from(f.raw("box"), &unit.fields)?;
            Ok::<_, IngestError>(SourceRecord {
                media,
                kind: config.kind,
                split,
                payload: Payload::ExpressionBox { expression, bbox },
            })
        })();
        match parsed {
            Ok(r) => col.push(unit.locator, r)?,
            Err(e) => col.fail(e)?,
        }
    }
    Ok(col.out)
}

/// One record per `(image, class)` holding every box of that class.
///
/// Units either carry an `objects` list of `{label, box}` or are flat
/// per-object rows; both are grouped by image then label in first-seen order.
pub fn ingest_detection(
    config: &IngestAdapterConfig,
    bytes: &[u8],
    dims: &DimensionIndex,
    strictness: Strictness,
) -> Result<IngestOutput, IngestError> {
    check_kind(config, &[TaskKind::PhraseGrounding])?;
    let units = parse_units(config, bytes)?;
    let mut col = Collector::new(config, strictness);

    struct Image {
        locator: Locator,
        media: MediaRef,
        split: Split,
        labels: Vec<(String, Vec<PixelBox>)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut images: HashMap<String, Image> = HashMap::new();

    for unit in &units {
        let f = Fields { config, unit };
        let parsed = (|| {
            let media = f.media(dims)?;
            let split = f.split()?;
            let objects: Vec<(String, PixelBox)> = match f.raw("objects") {
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|o| {
                        let Value::Object(obj) = o else {
                            return Err(f.err("objects entries must be objects"));
                        };
                        let label_key = config.field("label");
                        let label = obj
                            .get(label_key)
                            .and_then(Value::as_str)
                            .filter(|s| !s.is_empty())
                            .ok_or_else(|| f.err(format!("object missing `{label_key}`")))?;
                        let bbox = f.bbox_from(obj.get(config.field("box")), obj)?;
                        Ok((label.to_string(), bbox))
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(f.err("`objects` must be a list")),
                None => {
                    let label = f.str("label")?;
                    vec![(label, f.bbox_from(f.raw("box"), &unit.fields)?)]
                }
            };
            Ok::<_, IngestError>((media, split, objects))
        })();
        let (media, split, objects) = match parsed {
            Ok(v) => v,
            Err(e) => {
                col.fail(e)?;
                continue;
            }
        };
        let image = images.entry(media.path.clone()).or_insert_with(|| {
            order.push(media.path.clone());
            Image {
                locator: unit.locator,
                media: media.clone(),
                split,
                labels: Vec::new(),
            }
        });
        if image.split != split {
            col.fail(f.err(format!("`{}` appears with conflicting splits", media.path)))?;
            continue;
        }
        for (label, bbox) in objects {
            match image.labels.iter_mut().find(|(l, _)| *l == label) {
                Some((_, boxes)) => boxes.push(bbox),
                None => image.labels.push((label, vec![bbox])),
            }
        }
    }
    for path in order {
        let image = images.remove(&path).expect("grouped above");
        for (phrase, boxes) in image.labels {
            col.out.units += 1;
            let record = SourceRecord {
                media: image.media.clone(),
                kind: TaskKind::PhraseGrounding,
                split: image.split,
                payload: Payload::PhraseBoxes { phrase, boxes },
            };
            col.push(image.locator, record)?;
        }
    }
    Ok(col.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: TaskKind, format: InputFormat) -> IngestAdapterConfig {
        IngestAdapterConfig::new("TEST", kind, format)
    }

    fn none() -> DimensionIndex {
        DimensionIndex::default()
    }

    #[test]
    fn captions_grouped_per_image() {
        let data = r#"[
            {"image": "a.jpg", "width": 10, "height": 10, "split": "train", "captions": ["1","2","3","4","5"]},
            {"image": "b.jpg", "width": 10, "height": 10, "split": "train", "captions": ["1","2","3","4","5"]}
        ]"#;
        let out = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CaptionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records.len(), 2);
        for r in &out.records {
            let Payload::Captions { captions } = &r.payload else { panic!() };
            assert_eq!(captions.len(), 5);
        }
    }

    #[test]
    fn caption_rows_are_grouped() {
        let data = "image,width,height,split,caption\na.jpg,10,10,train,one\nb.jpg,10,10,test,two\na.jpg,10,10,train,three\n";
        let out = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CsvTable), data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].payload, Payload::Captions { captions: vec!["one".into(), "three".into()] });
        assert_eq!(out.records[1].split, Split::Test);
    }

    #[test]
    fn rsicd_style_wrapper() {
        let data = r#"{"images": [{"filename": "x.tif", "split": "train", "sentences": [{"raw": "a b"}, {"raw": "c d"}]}]}"#;
        let mut c = cfg(TaskKind::ImageCaption, InputFormat::CaptionJson);
        c.field_map.insert("image".into(), "filename".into());
        let mut dims = none();
        dims.insert("x.tif", 224, 224);
        let out = ingest_captions(&c, data.as_bytes(), &dims, Strictness::Strict).unwrap();
        assert_eq!(out.records[0].payload, Payload::Captions { captions: vec!["a b".into(), "c d".into()] });
        assert_eq!(out.records[0].media.width, 224);
    }

    #[test]
    fn zero_width_is_a_validation_error() {
        let data = r#"{"image": "a.jpg", "width": 0, "height": 10, "split": "train", "captions": ["x"]}"#;
        let err = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CaptionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Invalid { ref source, .. } if source.field == "media.width"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = "{\"image\": \"a.jpg\", \"width\": 1, \"height\": 1, \"split\": \"train\", \"captions\": [\"x\"]}\n{oops\n";
        let err = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CaptionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { locator: Locator::Line(2), .. }), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let data = r#"[{"image": "a.jpg", "width": 1, "height": 1, "split": "train"}]"#;
        let err = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CaptionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("missing field `captions`"), "{err}");
    }

    #[test]
    fn unknown_split_label() {
        let data = r#"[{"image": "a.jpg", "width": 1, "height": 1, "split": "holdout", "captions": ["x"]}]"#;
        let err = ingest_captions(&cfg(TaskKind::ImageCaption, InputFormat::CaptionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("unknown split label `holdout`"), "{err}");
        let mut c = cfg(TaskKind::ImageCaption, InputFormat::CaptionJson);
        c.split_map.insert("holdout".into(), Split::Test);
        let out = ingest_captions(&c, data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records[0].split, Split::Test);
    }

    #[test]
    fn vqa_category_passthrough_and_empty_answer() {
        let data = r#"[{"image": "a.png", "width": 256, "height": 256, "split": "train", "question": "Are there more roads than buildings?", "answer": "no", "category": "comparison"}]"#;
        let out = ingest_vqa(&cfg(TaskKind::Vqa, InputFormat::VqaJson), data.as_bytes(), &none(), Strictness::Strict).unwrap();
        let Payload::QuestionAnswer { category, .. } = &out.records[0].payload else { panic!() };
        assert_eq!(category.as_deref(), Some("comparison"));

        let data = r#"[{"image": "a.png", "width": 256, "height": 256, "split": "train", "question": "Is it?", "answer": ""}]"#;
        let err = ingest_vqa(&cfg(TaskKind::Vqa, InputFormat::VqaJson), data.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Invalid { ref source, .. } if source.field == "payload.answer"), "{err}");
    }

    #[test]
    fn lenient_mode_reports_every_dropped_unit() {
        let data = r#"[
            {"image": "a.png", "width": 8, "height": 8, "split": "train", "question": "q", "answer": "a"},
            {"image": "b.png", "width": 8, "height": 8, "split": "train", "question": "q", "answer": ""},
            {"image": "c.png", "width": 8, "height": 8, "question": "q", "answer": "a"}
        ]"#;
        let out = ingest_vqa(&cfg(TaskKind::Vqa, InputFormat::VqaJson), data.as_bytes(), &none(), Strictness::Lenient).unwrap();
        assert_eq!(out.units, 3);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.issues.len(), 2);
        assert_eq!(out.records.len() + out.issues.len(), out.units);
    }

    #[test]
    fn grounding_box_checks() {
        let c = cfg(TaskKind::VisualGrounding, InputFormat::GroundingJson);
        let ok = r#"[{"image": "a.png", "width": 100, "height": 100, "split": "train", "expression": "the plane", "box": [10,10,50,50]}]"#;
        assert_eq!(ingest_grounding(&c, ok.as_bytes(), &none(), Strictness::Strict).unwrap().records.len(), 1);
        let degenerate = ok.replace("[10,10,50,50]", "[50,10,50,50]");
        let err = ingest_grounding(&c, degenerate.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("degenerate box"), "{err}");
        let oob = ok.replace("[10,10,50,50]", "[10,10,120,50]");
        let err = ingest_grounding(&c, oob.as_bytes(), &none(), Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");
    }

    #[test]
    fn grounding_csv_with_coordinate_columns() {
        let c = cfg(TaskKind::VisualGrounding, InputFormat::CsvTable);
        let data = "image,width,height,split,expression,x1,y1,x2,y2\na.png,100,100,train,a ship,1,2,30,40\n";
        let out = ingest_grounding(&c, data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(
            out.records[0].payload,
            Payload::ExpressionBox { expression: "a ship".into(), bbox: PixelBox::new(1.0, 2.0, 30.0, 40.0) }
        );
    }

    #[test]
    fn csv_columns_by_index() {
        let mut c = cfg(TaskKind::Vqa, InputFormat::CsvTable);
        for (k, v) in [("image", "0"), ("width", "1"), ("height", "2"), ("split", "3"), ("question", "4"), ("answer", "5")] {
            c.field_map.insert(k.into(), v.into());
        }
        let data = "a,b,c,d,e,f\nimg.png,64,64,train,Is it urban?,yes\n";
        let out = ingest_vqa(&c, data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records[0].media.path, "img.png");
    }

    #[test]
    fn detection_grouped_by_class() {
        let data = r#"[{"image": "d.png", "width": 100, "height": 100, "split": "train", "objects": [
            {"label": "plane", "box": [0,0,10,10]},
            {"label": "ship", "box": [50,50,60,60]},
            {"label": "plane", "box": [20,20,30,30]},
            {"label": "plane", "box": [25,25,35,35]}
        ]}, {"image": "e.png", "width": 100, "height": 100, "split": "train", "objects": []}]"#;
        let out = ingest_detection(&cfg(TaskKind::PhraseGrounding, InputFormat::DetectionJson), data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records.len(), 2);
        let Payload::PhraseBoxes { phrase, boxes } = &out.records[0].payload else { panic!() };
        assert_eq!((phrase.as_str(), boxes.len()), ("plane", 3));
        let Payload::PhraseBoxes { phrase, boxes } = &out.records[1].payload else { panic!() };
        assert_eq!((phrase.as_str(), boxes.len()), ("ship", 1));
    }

    #[test]
    fn detection_flat_rows() {
        let data = "image,width,height,split,label,box\nd.png,100,100,train,car,\"1 1 5 5\"\nd.png,100,100,train,car,\"6 6 9 9\"\n";
        let out = ingest_detection(&cfg(TaskKind::PhraseGrounding, InputFormat::CsvTable), data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn video_captions_need_frames() {
        let c = cfg(TaskKind::VideoCaption, InputFormat::CaptionJson);
        let data = r#"[{"image": "v.mp4", "width": 640, "height": 360, "split": "train", "frames": ["f0.jpg","f1.jpg"], "captions": ["a crowd gathers"]}]"#;
        let out = ingest_captions(&c, data.as_bytes(), &none(), Strictness::Strict).unwrap();
        assert_eq!(out.records[0].media.media_kind, MediaKind::Video);
        let no_frames = data.replace(r#""frames": ["f0.jpg","f1.jpg"], "#, "");
        assert!(ingest_captions(&c, no_frames.as_bytes(), &none(), Strictness::Strict).is_err());
    }

    #[test]
    fn format_kind_mismatch_is_config_error() {
        let c = cfg(TaskKind::Vqa, InputFormat::CaptionJson);
        assert!(matches!(ingest(&c, b"[]", &none(), Strictness::Strict), Err(IngestError::Config(_))));
    }
}
