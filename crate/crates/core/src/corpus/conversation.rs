use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{serves, turn_contents, CorpusError, RenderContext};
use crate::domain::{derive_seed, InstructionSample, MediaRef, SourceRecord, Stage, TaskKind};
use crate::templating::{build_turn, TurnContent};

/// How records from the recipe's sources are joined into one media item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKey {
    /// `(dataset_id, path)`: only annotations of the same dataset join.
    #[default]
    Media,
    /// Media path alone, so e.g. a grounding set and a detection set over
    /// the same imagery join.
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversaRecipe {
    pub name: String,
    pub member_kinds: Vec<TaskKind>,
    pub source_dataset_ids: Vec<String>,
    #[serde(default)]
    pub join_key: JoinKey,
    /// When set, turns beyond `member_kinds` are added by cycling the
    /// member kinds while unused annotations remain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns_per_sample: Option<TurnRange>,
}

impl ConversaRecipe {
    fn err(&self, message: impl Into<String>) -> CorpusError {
        CorpusError::Recipe {
            recipe: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.name.is_empty() {
            return Err(self.err("name must be non-empty"));
        }
        if self.member_kinds.len() < 2 {
            return Err(self.err("needs at least two member kinds"));
        }
        if self.source_dataset_ids.is_empty() {
            return Err(self.err("needs at least one source dataset"));
        }
        if let Some(r) = self.turns_per_sample {
            if r.min > r.max || r.max < self.member_kinds.len() {
                return Err(self.err(format!(
                    "turns_per_sample {}..={} cannot hold {} member kinds",
                    r.min,
                    r.max,
                    self.member_kinds.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConversationBuild {
    pub samples: Vec<InstructionSample>,
    /// Media items considered (all joined items of the source datasets).
    pub candidates: usize,
    /// Items lacking a required member kind.
    pub skipped: usize,
    pub duplicates: usize,
}

struct Candidate {
    content: TurnContent,
    used: bool,
}

/// One multi-turn sample per joined media item that has an annotation for
/// every member kind. Turns follow recipe order; each picks uniformly among
/// the item's unused annotations of its kind. Samples are stage-2 only.
pub fn build_conversation(
    recipe: &ConversaRecipe,
    records: &[SourceRecord],
    ctx: &RenderContext<'_>,
) -> Result<ConversationBuild, CorpusError> {
    recipe.validate()?;
    let sources: Vec<&SourceRecord> = records
        .iter()
        .filter(|r| recipe.source_dataset_ids.contains(&r.media.dataset_id))
        .collect();
    if let Some(r) = sources.iter().find(|r| r.split.is_heldout()) {
        return Err(CorpusError::HeldoutRecord {
            dataset_id: r.media.dataset_id.clone(),
            path: r.media.path.clone(),
        });
    }
    let available: BTreeSet<TaskKind> = sources.iter().map(|r| r.kind).collect();
    for kind in &recipe.member_kinds {
        if !available.iter().any(|k| serves(*k, *kind)) {
            return Err(recipe.err(format!("no source dataset provides `{kind}` annotations")));
        }
    }

    // Group by join key; within a group, order by source dataset order then input order.
    let dataset_rank = |id: &str| recipe.source_dataset_ids.iter().position(|d| d == id).unwrap_or(usize::MAX);
    let mut groups: BTreeMap<(String, String), Vec<&SourceRecord>> = BTreeMap::new();
    for r in &sources {
        let key = match recipe.join_key {
            JoinKey::Media => (r.media.dataset_id.clone(), r.media.path.clone()),
            JoinKey::Path => (String::new(), r.media.path.clone()),
        };
        groups.entry(key).or_default().push(r);
    }
    for members in groups.values_mut() {
        members.sort_by_key(|r| dataset_rank(&r.media.dataset_id));
    }

    let built: Vec<Option<InstructionSample>> = groups
        .par_iter()
        .map(|((_, path), members)| conversation_for(recipe, path, members, ctx))
        .collect::<Result<_, _>>()?;

    let candidates = built.len();
    let mut samples: Vec<InstructionSample> = built.into_iter().flatten().collect();
    let skipped = candidates - samples.len();
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let before = samples.len();
    samples.dedup_by(|a, b| a.sample_id == b.sample_id);
    Ok(ConversationBuild {
        duplicates: before - samples.len(),
        samples,
        candidates,
        skipped,
    })
}

fn conversation_for(
    recipe: &ConversaRecipe,
    path: &str,
    members: &[&SourceRecord],
    ctx: &RenderContext<'_>,
) -> Result<Option<InstructionSample>, CorpusError> {
    let media: MediaRef = members[0].media.clone();
    let group_key = format!("{}:{}", media.dataset_id, path);

    let mut pools: BTreeMap<TaskKind, Vec<Candidate>> = BTreeMap::new();
    for kind in recipe.member_kinds.iter().copied().collect::<BTreeSet<_>>() {
        let mut cands = Vec::new();
        for r in members.iter().filter(|r| serves(r.kind, kind)) {
            for content in turn_contents(r, kind)? {
                cands.push(Candidate { content, used: false });
            }
        }
        pools.insert(kind, cands);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.render_seed, &[&recipe.name, &group_key]));
    let mut picked: Vec<TurnContent> = Vec::new();
    // Annotations already placed, so an expression is not reused across
    // the two grounding directions.
    let mut placed: BTreeSet<(String, String)> = BTreeSet::new();

    let mut pick = |kind: TaskKind, rng: &mut ChaCha8Rng, picked: &mut Vec<TurnContent>| -> bool {
        let cands = pools.get_mut(&kind).expect("pool per member kind");
        let open: Vec<usize> = (0..cands.len())
            .filter(|&i| !cands[i].used && !placed.contains(&unit_key(&cands[i].content)))
            .collect();
        match open.choose(rng) {
            Some(&i) => {
                cands[i].used = true;
                placed.insert(unit_key(&cands[i].content));
                picked.push(cands[i].content.clone());
                true
            }
            None => false,
        }
    };

    for &kind in &recipe.member_kinds {
        if !pick(kind, &mut rng, &mut picked) {
            return Ok(None);
        }
    }
    if let Some(range) = recipe.turns_per_sample {
        let lo = range.min.max(recipe.member_kinds.len());
        let target = rng.random_range(lo..=range.max);
        'extra: while picked.len() < target {
            let mut progressed = false;
            for &kind in &recipe.member_kinds {
                if picked.len() >= target {
                    break 'extra;
                }
                progressed |= pick(kind, &mut rng, &mut picked);
            }
            if !progressed {
                break;
            }
        }
    }

    let turns = picked
        .iter()
        .enumerate()
        .map(|(n, content)| {
            let seed = derive_seed(
                ctx.render_seed,
                &[&recipe.name, &group_key, &n.to_string(), &content.seed_key()],
            );
            build_turn(content, ctx.pools, seed, ctx.options)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(InstructionSample::new(
        media,
        turns,
        [Stage::Stage2].into(),
        format!("conversa:{}", recipe.name),
    )))
}

/// Identity of the underlying annotation regardless of task direction.
fn unit_key(c: &TurnContent) -> (String, String) {
    match c.kind {
        TaskKind::VisualGrounding => (c.expression.clone().unwrap_or_default(), c.answer.clone()),
        TaskKind::ReferringExpressionGeneration => (c.answer.clone(), c.query.clone().unwrap_or_default()),
        _ => (c.kind.to_string(), c.seed_key()),
    }
}
