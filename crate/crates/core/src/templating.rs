//! Instruction template pools and `[INST] … [/INST] …` conversation rendering.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ConversationTurn, IdentifierMap, TaskKind};

pub const INST_OPEN: &str = "[INST]";
pub const INST_CLOSE: &str = "[/INST]";
pub const DEFAULT_MEDIA_PLACEHOLDER: &str = "<Img><ImageHere></Img>";

const PLACEHOLDERS: [&str; 5] = ["media", "identifier", "query", "phrase", "expression"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("pool for `{kind}` has no templates")]
    EmptyPool { kind: TaskKind },
    #[error("pool for `{kind}`: template {index}: {reason}")]
    BadTemplate { kind: TaskKind, index: usize, reason: String },
    #[error("pool for `{kind}`: weights length {weights} != templates {templates}")]
    WeightMismatch { kind: TaskKind, weights: usize, templates: usize },
    #[error("pool for `{kind}`: invalid weights")]
    BadWeights { kind: TaskKind },
    #[error("pool kind `{pool}` does not match turn kind `{turn}`")]
    KindMismatch { pool: TaskKind, turn: TaskKind },
    #[error("template requires `{{{placeholder}}}` but the record has no value for it")]
    MissingValue { placeholder: String },
    #[error("no identifier configured for `{kind}`")]
    MissingIdentifier { kind: TaskKind },
    #[error("no template pool for `{kind}`")]
    NoPool { kind: TaskKind },
    #[error("reading pool {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing pool {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePool {
    pub kind: TaskKind,
    pub templates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn required_placeholders(kind: TaskKind) -> &'static [&'static str] {
    match kind {
        TaskKind::Vqa | TaskKind::ReferringExpressionGeneration => &["query"],
        TaskKind::VisualGrounding => &["expression"],
        TaskKind::PhraseGrounding => &["phrase"],
        TaskKind::ImageCaption | TaskKind::VideoCaption | TaskKind::SceneClassification => &[],
    }
}

/// Template pieces: literal text or a known `{placeholder}`.
#[derive(Debug, PartialEq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn split_template(template: &str) -> Result<Vec<Piece<'_>>, String> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            let name = &after[..name_len];
            if !PLACEHOLDERS.contains(&name) {
                return Err(format!("unknown placeholder `{{{name}}}`"));
            }
            if open > 0 {
                pieces.push(Piece::Text(&rest[..open]));
            }
            pieces.push(Piece::Slot(name));
            rest = &after[name_len + 1..];
        } else {
            pieces.push(Piece::Text(&rest[..open + 1]));
            rest = after;
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    Ok(pieces)
}

impl TemplatePool {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks placeholders and weights. With `identifiers_enabled`, each
    /// template must carry `{identifier}` exactly once.
    pub fn validate(&self, identifiers_enabled: bool) -> Result<(), TemplateError> {
        let kind = self.kind;
        if self.templates.is_empty() {
            return Err(TemplateError::EmptyPool { kind });
        }
        if let Some(w) = &self.weights {
            if w.len() != self.templates.len() {
                return Err(TemplateError::WeightMismatch {
                    kind,
                    weights: w.len(),
                    templates: self.templates.len(),
                });
            }
            if WeightedIndex::new(w).is_err() {
                return Err(TemplateError::BadWeights { kind });
            }
        }
        for (index, t) in self.templates.iter().enumerate() {
            let bad = |reason: String| TemplateError::BadTemplate { kind, index, reason };
            let pieces = split_template(t).map_err(bad)?;
            let count = |name: &str| pieces.iter().filter(|p| **p == Piece::Slot(name)).count();
            if identifiers_enabled && count("identifier") != 1 {
                return Err(bad("must contain `{identifier}` exactly once".into()));
            }
            for req in required_placeholders(kind) {
                if count(req) == 0 {
                    return Err(bad(format!("`{kind}` templates need `{{{req}}}`")));
                }
            }
        }
        Ok(())
    }

    fn choose(&self, seed: u64) -> &str {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = match &self.weights {
            Some(w) => WeightedIndex::new(w)
                .map(|d| d.sample(&mut rng))
                .unwrap_or(0),
            None => rng.random_range(0..self.templates.len()),
        };
        &self.templates[idx]
    }
}

/// One pool per task kind.
#[derive(Debug, Clone, Default)]
pub struct PoolSet {
    pools: BTreeMap<TaskKind, TemplatePool>,
}

const BUILTIN_POOLS: [&str; 7] = [
    include_str!("../pools/image_caption.json"),
    include_str!("../pools/video_caption.json"),
    include_str!("../pools/vqa.json"),
    include_str!("../pools/visual_grounding.json"),
    include_str!("../pools/phrase_grounding.json"),
    include_str!("../pools/referring_expression_generation.json"),
    include_str!("../pools/scene_classification.json"),
];

impl PoolSet {
    /// The pools shipped with the crate (`pools/*.json`).
    pub fn builtin() -> Self {
        let mut set = PoolSet::default();
        for text in BUILTIN_POOLS {
            set.insert(TemplatePool::from_json(text).expect("builtin pools are valid json"));
        }
        set
    }

    pub fn insert(&mut self, pool: TemplatePool) {
        self.pools.insert(pool.kind, pool);
    }

    pub fn get(&self, kind: TaskKind) -> Option<&TemplatePool> {
        self.pools.get(&kind)
    }

    pub fn pools(&self) -> impl Iterator<Item = &TemplatePool> {
        self.pools.values()
    }

    /// Reads a pool file and replaces the pool for its kind.
    pub fn load_file(&mut self, path: &Path) -> Result<(), TemplateError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: display.clone(),
            source,
        })?;
        let pool = TemplatePool::from_json(&text).map_err(|source| TemplateError::Parse {
            path: display,
            source,
        })?;
        self.insert(pool);
        Ok(())
    }

    pub fn validate(&self, identifiers_enabled: bool) -> Result<(), TemplateError> {
        self.pools.values().try_for_each(|p| p.validate(identifiers_enabled))
    }
}

/// The task-specific values of one annotation unit, ready for templating.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TurnContent {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    pub answer: String,
}

impl TurnContent {
    pub fn new(kind: TaskKind, answer: impl Into<String>) -> Self {
        TurnContent {
            kind,
            query: None,
            phrase: None,
            expression: None,
            answer: answer.into(),
        }
    }

    pub fn with_query(mut self, q: impl Into<String>) -> Self {
        self.query = Some(q.into());
        self
    }

    pub fn with_phrase(mut self, p: impl Into<String>) -> Self {
        self.phrase = Some(p.into());
        self
    }

    pub fn with_expression(mut self, e: impl Into<String>) -> Self {
        self.expression = Some(e.into());
        self
    }

    /// Stable text used to derive per-unit seeds.
    pub fn seed_key(&self) -> String {
        serde_json::to_string(self).expect("turn content serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderOptions {
    pub identifiers_enabled: bool,
    pub identifiers: IdentifierMap,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            identifiers_enabled: true,
            identifiers: IdentifierMap::default(),
        }
    }
}

/// Picks a template with a seeded PRNG and fills its placeholders.
///
/// `{media}` is always substituted with nothing: the media placeholder is
/// injected once per conversation by [`render_conversation`]. An empty
/// substitution also swallows the single space that follows it.
pub fn render_instruction(
    content: &TurnContent,
    pool: &TemplatePool,
    seed: u64,
    opts: &RenderOptions,
) -> Result<String, TemplateError> {
    if pool.kind != content.kind {
        return Err(TemplateError::KindMismatch {
            pool: pool.kind,
            turn: content.kind,
        });
    }
    let template = pool.choose(seed);
    let pieces = split_template(template).map_err(|reason| TemplateError::BadTemplate {
        kind: pool.kind,
        index: 0,
        reason,
    })?;
    let identifier = if opts.identifiers_enabled {
        Some(
            opts.identifiers
                .get(content.kind)
                .ok_or(TemplateError::MissingIdentifier { kind: content.kind })?
                .token,
        )
    } else {
        None
    };
    let mut out = String::with_capacity(template.len() + 32);
    let mut skip_space = false;
    for piece in pieces {
        match piece {
            Piece::Text(t) => {
                let t = if skip_space { t.strip_prefix(' ').unwrap_or(t) } else { t };
                out.push_str(t);
                skip_space = false;
            }
            Piece::Slot(name) => {
                let value: Option<&str> = match name {
                    "media" => Some(""),
                    "identifier" => Some(identifier.as_deref().unwrap_or("")),
                    "query" => content.query.as_deref(),
                    "phrase" => content.phrase.as_deref(),
                    "expression" => content.expression.as_deref(),
                    _ => unreachable!("split_template only yields known names"),
                };
                let value = value.ok_or_else(|| TemplateError::MissingValue {
                    placeholder: name.to_string(),
                })?;
                skip_space = value.is_empty();
                out.push_str(value);
            }
        }
    }
    Ok(out.trim().to_string())
}

/// Renders the instruction and wraps it into a conversation turn.
pub fn build_turn(
    content: &TurnContent,
    pools: &PoolSet,
    seed: u64,
    opts: &RenderOptions,
) -> Result<ConversationTurn, TemplateError> {
    let pool = pools
        .get(content.kind)
        .ok_or(TemplateError::NoPool { kind: content.kind })?;
    let instruction_text = render_instruction(content, pool, seed, opts)?;
    let identifier = if opts.identifiers_enabled {
        opts.identifiers.get(content.kind)
    } else {
        None
    };
    Ok(ConversationTurn {
        identifier,
        instruction_text,
        answer_text: content.answer.clone(),
        kind: content.kind,
    })
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConversationError {
    #[error("conversation has no turns")]
    Empty,
    #[error("unbalanced [INST]/[/INST] markers: {0}")]
    Unbalanced(String),
    #[error("missing preamble")]
    MissingPreamble,
    #[error("first instruction does not start with the media placeholder")]
    MissingMedia,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub instruction: Range<usize>,
    pub answer: Range<usize>,
}

/// Rendered text plus byte ranges for each turn. The spans tile the body
/// (everything after the optional preamble).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedConversation {
    pub text: String,
    pub turn_spans: Vec<TurnSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationFormat {
    pub media_placeholder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
}

impl Default for ConversationFormat {
    fn default() -> Self {
        ConversationFormat {
            media_placeholder: DEFAULT_MEDIA_PLACEHOLDER.to_string(),
            preamble: None,
        }
    }
}

impl ConversationFormat {
    pub fn with_media(media_placeholder: impl Into<String>) -> Self {
        ConversationFormat {
            media_placeholder: media_placeholder.into(),
            preamble: None,
        }
    }

    /// `[INST] <media> i1 [/INST] a1 [INST] i2 [/INST] a2 …`
    pub fn render(&self, turns: &[ConversationTurn]) -> Result<RenderedConversation, ConversationError> {
        if turns.is_empty() {
            return Err(ConversationError::Empty);
        }
        let mut text = String::new();
        if let Some(p) = &self.preamble {
            text.push_str(p);
            text.push(' ');
        }
        let mut turn_spans = Vec::with_capacity(turns.len());
        for (n, turn) in turns.iter().enumerate() {
            let start = text.len();
            if n > 0 {
                text.push(' ');
            }
            text.push_str(INST_OPEN);
            text.push(' ');
            if n == 0 && !self.media_placeholder.is_empty() {
                text.push_str(&self.media_placeholder);
                text.push(' ');
            }
            text.push_str(&turn.instruction_text);
            text.push(' ');
            text.push_str(INST_CLOSE);
            text.push(' ');
            let answer_start = text.len();
            text.push_str(&turn.answer_text);
            turn_spans.push(TurnSpan {
                instruction: start..answer_start,
                answer: answer_start..text.len(),
            });
        }
        Ok(RenderedConversation { text, turn_spans })
    }

    /// Inverse of [`ConversationFormat::render`]. In strict mode any marker
    /// text left inside an instruction or answer is an error.
    pub fn recover(&self, text: &str, strict: bool) -> Result<Vec<(String, String)>, ConversationError> {
        let open = format!("{INST_OPEN} ");
        let close = format!(" {INST_CLOSE} ");
        let next_open = format!(" {INST_OPEN} ");
        let mut body = text;
        if let Some(p) = &self.preamble {
            body = body
                .strip_prefix(p.as_str())
                .and_then(|b| b.strip_prefix(' '))
                .ok_or(ConversationError::MissingPreamble)?;
        }
        let mut rest = body
            .strip_prefix(open.as_str())
            .ok_or_else(|| ConversationError::Unbalanced("text does not start with [INST]".into()))?;
        let mut turns = Vec::new();
        loop {
            let close_at = rest
                .find(close.as_str())
                .ok_or_else(|| ConversationError::Unbalanced(format!("turn {} has no [/INST]", turns.len())))?;
            let instruction = &rest[..close_at];
            let after = &rest[close_at + close.len()..];
            let (answer, next) = match after.find(next_open.as_str()) {
                Some(i) => (&after[..i], Some(&after[i + next_open.len()..])),
                None => (after, None),
            };
            let instruction = if turns.is_empty() && !self.media_placeholder.is_empty() {
                instruction
                    .strip_prefix(self.media_placeholder.as_str())
                    .and_then(|i| i.strip_prefix(' '))
                    .ok_or(ConversationError::MissingMedia)?
            } else {
                instruction
            };
            if strict {
                for (what, s) in [("instruction", instruction), ("answer", answer)] {
                    if s.contains(INST_OPEN) || s.contains(INST_CLOSE) {
                        return Err(ConversationError::Unbalanced(format!(
                            "stray marker inside {what} of turn {}",
                            turns.len()
                        )));
                    }
                }
            }
            turns.push((instruction.to_string(), answer.to_string()));
            match next {
                Some(n) => rest = n,
                None => break,
            }
        }
        Ok(turns)
    }
}

pub fn render_conversation(
    turns: &[ConversationTurn],
    media_placeholder: &str,
) -> Result<RenderedConversation, ConversationError> {
    ConversationFormat::with_media(media_placeholder).render(turns)
}

/// Strict inverse of [`render_conversation`].
pub fn recover_turns(text: &str, media_placeholder: &str) -> Result<Vec<(String, String)>, ConversationError> {
    ConversationFormat::with_media(media_placeholder).recover(text, true)
}

/// Reads every `*.json` pool in a directory on top of the builtin pools.
pub fn load_pools(dir: Option<&Path>) -> Result<PoolSet, TemplateError> {
    let mut set = PoolSet::builtin();
    if let Some(dir) = dir {
        let entries = std::fs::read_dir(dir).map_err(|source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            set.load_file(&p)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(i: &str, a: &str) -> ConversationTurn {
        ConversationTurn {
            identifier: None,
            instruction_text: i.into(),
            answer_text: a.into(),
            kind: TaskKind::Vqa,
        }
    }

    #[test]
    fn builtin_pools_validate() {
        let pools = PoolSet::builtin();
        pools.validate(true).unwrap();
        for kind in TaskKind::ALL {
            assert!(pools.get(kind).unwrap().templates.len() >= 5, "{kind}");
        }
    }

    #[test]
    fn render_is_seeded() {
        let pools = PoolSet::builtin();
        let pool = pools.get(TaskKind::ImageCaption).unwrap();
        let c = TurnContent::new(TaskKind::ImageCaption, "many buildings");
        let opts = RenderOptions::default();
        let a = render_instruction(&c, pool, 7, &opts).unwrap();
        let b = render_instruction(&c, pool, 7, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("[caption] "));
    }

    #[test]
    fn render_without_identifiers() {
        let pools = PoolSet::builtin();
        let opts = RenderOptions {
            identifiers_enabled: false,
            ..Default::default()
        };
        for seed in 0..20 {
            let c = TurnContent::new(TaskKind::Vqa, "yes").with_query("Is there a road?");
            let s = render_instruction(&c, pools.get(TaskKind::Vqa).unwrap(), seed, &opts).unwrap();
            assert!(!s.contains('['), "{s}");
            assert!(!s.starts_with(' '));
        }
    }

    #[test]
    fn grounding_instruction_matches_hand_built_string() {
        let pool = TemplatePool {
            kind: TaskKind::VisualGrounding,
            templates: vec!["{identifier} Where is {expression}?".into()],
            weights: None,
        };
        let c = TurnContent::new(TaskKind::VisualGrounding, "{<1><2><3><4>}").with_expression("a gray plane");
        let s = render_instruction(&c, &pool, 99, &RenderOptions::default()).unwrap();
        assert_eq!(s, "[refer] Where is a gray plane?");
    }

    #[test]
    fn missing_value_is_an_error() {
        let pool = TemplatePool {
            kind: TaskKind::Vqa,
            templates: vec!["{identifier} {query}".into()],
            weights: None,
        };
        let c = TurnContent::new(TaskKind::Vqa, "yes");
        assert!(matches!(
            render_instruction(&c, &pool, 0, &RenderOptions::default()),
            Err(TemplateError::MissingValue { .. })
        ));
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let pool = TemplatePool {
            kind: TaskKind::ReferringExpressionGeneration,
            templates: vec!["{identifier} Describe {query}.".into()],
            weights: None,
        };
        let c = TurnContent::new(TaskKind::ReferringExpressionGeneration, "a ship")
            .with_query("{<1><2><3><4>} {phrase}");
        let s = render_instruction(&c, &pool, 0, &RenderOptions::default()).unwrap();
        assert_eq!(s, "[identify] Describe {<1><2><3><4>} {phrase}.");
    }

    #[test]
    fn pool_validation_rules() {
        let mut pool = TemplatePool {
            kind: TaskKind::Vqa,
            templates: vec!["{query}".into()],
            weights: None,
        };
        assert!(pool.validate(true).is_err());
        pool.validate(false).unwrap();
        pool.templates = vec!["{identifier} {identifier} {query}".into()];
        assert!(pool.validate(true).is_err());
        pool.templates = vec!["{identifier} {bogus} {query}".into()];
        assert!(pool.validate(false).is_err());
        pool.templates = vec!["{identifier} {query}".into()];
        pool.weights = Some(vec![1.0, 2.0]);
        assert!(pool.validate(true).is_err());
    }

    #[test]
    fn weighted_choice_respects_zero_weights() {
        let pool = TemplatePool {
            kind: TaskKind::ImageCaption,
            templates: vec!["{identifier} never".into(), "{identifier} always".into()],
            weights: Some(vec![0.0, 1.0]),
        };
        for seed in 0..50 {
            let c = TurnContent::new(TaskKind::ImageCaption, "x");
            let s = render_instruction(&c, &pool, seed, &RenderOptions::default()).unwrap();
            assert_eq!(s, "[caption] always");
        }
    }

    #[test]
    fn single_turn_layout() {
        let rc = render_conversation(&[turn("What is it?", "a port")], "<img>").unwrap();
        assert_eq!(rc.text, "[INST] <img> What is it? [/INST] a port");
        assert_eq!(&rc.text[rc.turn_spans[0].answer.clone()], "a port");
    }

    #[test]
    fn two_turn_ordering_and_tiling() {
        let turns = [turn("i1", "a1"), turn("i2", "a2")];
        let rc = render_conversation(&turns, "<img>").unwrap();
        assert_eq!(rc.text, "[INST] <img> i1 [/INST] a1 [INST] i2 [/INST] a2");
        assert!(rc.turn_spans[0].answer.end <= rc.turn_spans[1].instruction.start);
        assert_eq!(rc.turn_spans[0].instruction.start, 0);
        assert_eq!(rc.turn_spans[0].answer.end, rc.turn_spans[1].instruction.start);
        assert_eq!(rc.turn_spans[1].answer.end, rc.text.len());
    }

    #[test]
    fn empty_conversation_errors() {
        assert_eq!(render_conversation(&[], "<img>"), Err(ConversationError::Empty));
    }

    #[test]
    fn recover_roundtrip_and_stray_marker() {
        let turns = [turn("i1", "a1")];
        let rc = render_conversation(&turns, "<img>").unwrap();
        assert_eq!(recover_turns(&rc.text, "<img>").unwrap(), vec![("i1".into(), "a1".into())]);

        let bad = [turn("i1", "oops [/INST] more")];
        let rc = render_conversation(&bad, "<img>").unwrap();
        assert!(recover_turns(&rc.text, "<img>").is_err());
        let fmt = ConversationFormat::with_media("<img>");
        let lenient = fmt.recover(&rc.text, false).unwrap();
        assert_eq!(lenient[0].1, "oops [/INST] more");
    }

    #[test]
    fn preamble_is_supported() {
        let fmt = ConversationFormat {
            media_placeholder: "<img>".into(),
            preamble: Some("You are a helpful assistant.".into()),
        };
        let turns = [turn("i1", "a1"), turn("i2", "a2")];
        let rc = fmt.render(&turns).unwrap();
        assert!(rc.text.starts_with("You are a helpful assistant. [INST]"));
        let back = fmt.recover(&rc.text, true).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], ("i2".to_string(), "a2".to_string()));
    }
}
