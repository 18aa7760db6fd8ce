//! Corpus assembly: single-task samples, multi-task conversation samples,
//! the leakage guard, review application and the stage-1/stage-2 streams.

mod conversation;
mod leakage;
mod manifest;
mod mix;
mod pipeline;
mod review;

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::domain::{
    derive_seed, InstructionSample, Payload, SourceRecord, Stage, TaskKind, ValidationError,
};
use crate::geotext::{self, GeoError};
use crate::templating::{build_turn, PoolSet, RenderOptions, TemplateError, TurnContent};

pub use conversation::{build_conversation, ConversaRecipe, ConversationBuild, JoinKey, TurnRange};
pub use leakage::{leakage_check, HeldoutIndex, LeakageReport, LeakageViolation};
pub use manifest::emit_manifest;
pub use mix::{mix_stream, StageMixConfig};
pub use pipeline::{build_corpus, BuildArtifacts, BuildInput, BuildReport, RecipeReport, ReviewReport};
pub use review::{apply_review, ReviewOutcome, ReviewPolicy};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("leakage violation: held-out record {dataset_id}:{path} passed to the builder")]
    HeldoutRecord { dataset_id: String, path: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{dataset_id}:{path}: {source}")]
    Geo {
        dataset_id: String,
        path: String,
        source: GeoError,
    },
    #[error("recipe `{recipe}`: {message}")]
    Recipe { recipe: String, message: String },
    #[error("stream mixing: {0}")]
    Mix(String),
    #[error("build produced an invalid sample: {0}")]
    Invalid(#[from] ValidationError),
    #[error("{} leakage violation(s); first: sample {} uses held-out media {}:{}",
        .0.violations.len(),
        .0.violations[0].sample_id,
        .0.violations[0].dataset_id,
        .0.violations[0].path)]
    Leakage(LeakageReport),
}

/// Shared rendering inputs for both builders.
#[derive(Debug, Clone)]
pub struct RenderContext<'a> {
    pub pools: &'a PoolSet,
    pub options: &'a RenderOptions,
    /// Seeds template and candidate choice. Kept separate from the stream
    /// seed so reseeding the mix never changes the sample set.
    pub render_seed: u64,
}

/// The annotation units a record contributes for `kind`, as turn contents.
///
/// Expression/box records serve both grounding directions: the expression
/// asks for the box, or the box asks for the expression.
pub fn turn_contents(record: &SourceRecord, kind: TaskKind) -> Result<Vec<TurnContent>, CorpusError> {
    let media = &record.media;
    let geo = |source| CorpusError::Geo {
        dataset_id: media.dataset_id.clone(),
        path: media.path.clone(),
        source,
    };
    let out = match (&record.payload, kind) {
        (Payload::Captions { captions }, k) if k == record.kind => captions
            .iter()
            .map(|c| TurnContent::new(k, c.clone()))
            .collect(),
        (Payload::QuestionAnswer { question, answer, .. }, TaskKind::Vqa) => {
            vec![TurnContent::new(TaskKind::Vqa, answer.clone()).with_query(question.clone())]
        }
        (Payload::ExpressionBox { expression, bbox }, TaskKind::VisualGrounding) => {
            let q = geotext::quantize_box(bbox, media.width, media.height).map_err(geo)?;
            vec![TurnContent::new(kind, geotext::serialize_box(&q)).with_expression(expression.clone())]
        }
        (Payload::ExpressionBox { expression, bbox }, TaskKind::ReferringExpressionGeneration) => {
            let q = geotext::quantize_box(bbox, media.width, media.height).map_err(geo)?;
            vec![TurnContent::new(kind, expression.clone()).with_query(geotext::serialize_box(&q))]
        }
        (Payload::PhraseBoxes { phrase, boxes }, TaskKind::PhraseGrounding) => {
            let qs = boxes
                .iter()
                .map(|b| geotext::quantize_box(b, media.width, media.height))
                .collect::<Result<Vec<_>, _>>()
                .map_err(geo)?;
            let answer = geotext::serialize_box_group(&qs).map_err(geo)?;
            vec![TurnContent::new(kind, answer).with_phrase(phrase.clone())]
        }
        (Payload::ClassLabel { class_label }, TaskKind::SceneClassification) => {
            vec![TurnContent::new(kind, class_label.clone())]
        }
        _ => Vec::new(),
    };
    Ok(out)
}

/// Whether records of `source` kind can serve turns of `target` kind.
pub fn serves(source: TaskKind, target: TaskKind) -> bool {
    source == target
        || matches!(
            (source, target),
            (TaskKind::VisualGrounding, TaskKind::ReferringExpressionGeneration)
                | (TaskKind::ReferringExpressionGeneration, TaskKind::VisualGrounding)
        )
}

/// One single-turn sample per annotation unit: per caption, per QA pair,
/// per expression, per phrase group. Tagged for both stages.
///
/// Held-out records are refused outright. Output is sorted by sample id and
/// deduplicated, so identical units collapse into one sample.
pub fn build_single_task(
    records: &[SourceRecord],
    ctx: &RenderContext<'_>,
) -> Result<Vec<InstructionSample>, CorpusError> {
    if let Some(r) = records.iter().find(|r| r.split.is_heldout()) {
        return Err(CorpusError::HeldoutRecord {
            dataset_id: r.media.dataset_id.clone(),
            path: r.media.path.clone(),
        });
    }
    Ok(single_task_units(records, ctx)?.0)
}

/// Deduplicated samples plus the number of annotation units seen.
pub(crate) fn single_task_units(
    records: &[SourceRecord],
    ctx: &RenderContext<'_>,
) -> Result<(Vec<InstructionSample>, usize), CorpusError> {
    let per_record: Vec<Vec<InstructionSample>> = records
        .par_iter()
        .map(|record| single_samples(record, ctx))
        .collect::<Result<_, _>>()?;
    let mut samples: Vec<InstructionSample> = per_record.into_iter().flatten().collect();
    let units = samples.len();
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    samples.dedup_by(|a, b| a.sample_id == b.sample_id);
    Ok((samples, units))
}

fn single_samples(record: &SourceRecord, ctx: &RenderContext<'_>) -> Result<Vec<InstructionSample>, CorpusError> {
    let stages: BTreeSet<Stage> = [Stage::Stage1, Stage::Stage2].into();
    let recipe = format!("single:{}", record.media.dataset_id);
    turn_contents(record, record.kind)?
        .into_iter()
        .map(|content| {
            let seed = derive_seed(
                ctx.render_seed,
                &[&record.media.dataset_id, &record.media.path, &content.seed_key()],
            );
            let turn = build_turn(&content, ctx.pools, seed, ctx.options)?;
            Ok(InstructionSample::new(record.media.clone(), vec![turn], stages.clone(), recipe.clone()))
        })
        .collect()
}
