use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    apply_review, build_conversation, emit_manifest, leakage_check, mix_stream, single_task_units,
    ConversaRecipe, CorpusError, HeldoutIndex, LeakageReport, RenderContext, ReviewPolicy, StageMixConfig,
};
use crate::domain::{CorpusManifest, InstructionSample, SourceRecord, Split, Stage};
use crate::jsonl::{write_json, write_jsonl};
use crate::review::ReviewDecision;
use crate::templating::{PoolSet, RenderOptions};

/// Everything a build needs, already loaded and validated.
#[derive(Debug, Clone)]
pub struct BuildInput {
    /// All ingested records, held-out splits included: they feed the
    /// leakage index and are never turned into samples.
    pub records: Vec<SourceRecord>,
    pub pools: PoolSet,
    pub render: RenderOptions,
    pub render_seed: u64,
    pub recipes: Vec<ConversaRecipe>,
    pub stage1: StageMixConfig,
    pub stage2: StageMixConfig,
    /// Datasets whose single-task samples are replayed in stage 2; all when `None`.
    pub stage2_single_datasets: Option<Vec<String>>,
    pub decisions: Vec<ReviewDecision>,
    pub review_policy: ReviewPolicy,
    /// Fail on leakage (default) or drop the offending samples.
    pub strict_leakage: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub recipe: String,
    pub candidates: usize,
    pub emitted: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub decisions: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub edited: usize,
    pub withheld: usize,
    pub unknown_ids: Vec<String>,
}

/// Accounting for one build. `emitted + skipped + rejected + withheld +
/// duplicates + leakage_dropped == candidates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    pub heldout_records: usize,
    pub candidates: usize,
    pub emitted: usize,
    pub skipped: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub withheld: usize,
    pub leakage_dropped: usize,
    pub recipes: Vec<RecipeReport>,
    pub review: ReviewReport,
    pub leakage: LeakageReport,
    pub stage1_stream_len: usize,
    pub stage2_stream_len: usize,
    pub build_config_hash: String,
}

impl BuildReport {
    pub fn reconciles(&self) -> bool {
        self.emitted + self.skipped + self.rejected + self.withheld + self.duplicates + self.leakage_dropped
            == self.candidates
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildArtifacts {
    /// The reviewed sample set, sorted by sample id.
    pub samples: Vec<InstructionSample>,
    pub stage1: Vec<InstructionSample>,
    pub stage2: Vec<InstructionSample>,
    pub manifest: CorpusManifest,
    pub report: BuildReport,
}

impl BuildArtifacts {
    /// Writes `corpus.samples.jsonl`, `corpus.stage1.jsonl`,
    /// `corpus.stage2.jsonl`, `manifest.json` and `build_report.json`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("corpus.samples.jsonl"), &self.samples)?;
        write_jsonl(&dir.join("corpus.stage1.jsonl"), &self.stage1)?;
        write_jsonl(&dir.join("corpus.stage2.jsonl"), &self.stage2)?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_json(&dir.join("build_report.json"), &self.report)
    }
}

pub fn build_corpus(input: &BuildInput) -> Result<BuildArtifacts, CorpusError> {
    let heldout = HeldoutIndex::from_records(&input.records);
    let train: Vec<SourceRecord> = input.records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let ctx = RenderContext {
        pools: &input.pools,
        options: &input.render,
        render_seed: input.render_seed,
    };

    let (single, units) = single_task_units(&train, &ctx)?;
    let mut recipes = vec![RecipeReport {
        recipe: "single".into(),
        candidates: units,
        emitted: single.len(),
        skipped: 0,
        duplicates: units - single.len(),
    }];
    let mut all = single;
    for recipe in &input.recipes {
        let built = build_conversation(recipe, &train, &ctx)?;
        recipes.push(RecipeReport {
            recipe: recipe.name.clone(),
            candidates: built.candidates,
            emitted: built.samples.len(),
            skipped: built.skipped,
            duplicates: built.duplicates,
        });
        all.extend(built.samples);
    }
    all.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let before = all.len();
    all.dedup_by(|a, b| a.sample_id == b.sample_id);
    let cross_duplicates = before - all.len();

    let reviewed = apply_review(all, &input.decisions, input.review_policy)?;
    let leakage = leakage_check(&reviewed.samples, &heldout);
    if input.strict_leakage && !leakage.is_clean() {
        return Err(CorpusError::Leakage(leakage));
    }
    let samples: Vec<InstructionSample> = reviewed
        .samples
        .into_iter()
        .filter(|s| !heldout.contains(&s.media.identity()))
        .collect();

    let single_stage1: Vec<InstructionSample> = samples
        .iter()
        .filter(|s| s.stage_tags.contains(&Stage::Stage1))
        .cloned()
        .collect();
    let single_stage2: Vec<InstructionSample> = samples
        .iter()
        .filter(|s| !s.is_conversation() && s.stage_tags.contains(&Stage::Stage2))
        .filter(|s| match &input.stage2_single_datasets {
            Some(ids) => ids.contains(&s.media.dataset_id),
            None => true,
        })
        .cloned()
        .collect();
    let conversa: Vec<InstructionSample> = samples.iter().filter(|s| s.is_conversation()).cloned().collect();

    let stage1: Vec<InstructionSample> = mix_stream(&input.stage1, &single_stage1, &[])?.into_iter().cloned().collect();
    let stage2: Vec<InstructionSample> = if input.stage2.conversation_weight > 0.0 || !single_stage2.is_empty() {
        mix_stream(&input.stage2, &single_stage2, &conversa)?.into_iter().cloned().collect()
    } else {
        Vec::new()
    };

    let manifest = emit_manifest(&samples, &input.config_hash, input.stage2.seed);
    let candidates: usize = recipes.iter().map(|r| r.candidates).sum();
    let report = BuildReport {
        records: input.records.len(),
        heldout_records: input.records.len() - train.len(),
        candidates,
        emitted: samples.len(),
        skipped: recipes.iter().map(|r| r.skipped).sum(),
        duplicates: recipes.iter().map(|r| r.duplicates).sum::<usize>() + cross_duplicates,
        rejected: reviewed.rejected,
        withheld: reviewed.withheld,
        leakage_dropped: leakage.violations.len(),
        recipes,
        review: ReviewReport {
            decisions: input.decisions.len(),
            accepted: reviewed.accepted,
            rejected: reviewed.rejected,
            edited: reviewed.edited,
            withheld: reviewed.withheld,
            unknown_ids: reviewed.unknown_ids,
        },
        leakage,
        stage1_stream_len: stage1.len(),
        stage2_stream_len: stage2.len(),
        build_config_hash: input.config_hash.clone(),
    };
    Ok(BuildArtifacts {
        samples,
        stage1,
        stage2,
        manifest,
        report,
    })
}
