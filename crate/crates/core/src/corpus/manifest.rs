use std::collections::BTreeMap;

use crate::domain::{CorpusManifest, InstructionSample, ManifestRow, Stage};

/// Per-(data source, task) counts. Conversation samples are listed under
/// their recipe name with task `conversation`.
pub fn emit_manifest(samples: &[InstructionSample], build_config_hash: &str, seed: u64) -> CorpusManifest {
    let mut rows: BTreeMap<(String, String, String), u64> = BTreeMap::new();
    let (mut stage1, mut stage2) = (0, 0);
    for s in samples {
        let key = match s.source_recipe.strip_prefix("conversa:") {
            Some(recipe) => (recipe.to_string(), "conversation".to_string(), s.source_recipe.clone()),
            None => (s.media.dataset_id.clone(), s.turns[0].kind.to_string(), s.source_recipe.clone()),
        };
        *rows.entry(key).or_default() += 1;
        stage1 += u64::from(s.stage_tags.contains(&Stage::Stage1));
        stage2 += u64::from(s.stage_tags.contains(&Stage::Stage2));
    }
    let mut rows: Vec<ManifestRow> = rows
        .into_iter()
        .map(|((dataset_id, task, source_recipe), sample_count)| ManifestRow {
            dataset_id,
            task,
            source_recipe,
            sample_count,
        })
        .collect();
    // Task-major order, conversations last, the way the data-source table reads.
    rows.sort_by(|a, b| {
        (a.task == "conversation", &a.task, &a.dataset_id).cmp(&(b.task == "conversation", &b.task, &b.dataset_id))
    });
    CorpusManifest {
        total: samples.len() as u64,
        rows,
        stage1_total: stage1,
        stage2_total: stage2,
        build_config_hash: build_config_hash.to_string(),
        seed,
    }
}
