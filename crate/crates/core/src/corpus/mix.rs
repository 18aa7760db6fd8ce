use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::domain::{derive_seed, InstructionSample, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMixConfig {
    pub stage: Stage,
    pub single_task_weight: f64,
    #[serde(default)]
    pub conversation_weight: f64,
    pub seed: u64,
    /// Stream length. Defaults to the combined source size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_length: Option<usize>,
}

impl StageMixConfig {
    pub fn stage1(seed: u64) -> Self {
        Self {
            stage: Stage::Stage1,
            single_task_weight: 1.0,
            conversation_weight: 0.0,
            seed,
            epoch_length: None,
        }
    }

    /// Stage 2 with the single-task share reduced to `single_task_weight`.
    pub fn stage2(single_task_weight: f64, seed: u64) -> Self {
        Self {
            stage: Stage::Stage2,
            single_task_weight,
            conversation_weight: 1.0 - single_task_weight,
            seed,
            epoch_length: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let (s, c) = (self.single_task_weight, self.conversation_weight);
        if !(s > 0.0 && s <= 1.0) {
            return Err(CorpusError::Mix(format!("single_task_weight {s} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(CorpusError::Mix(format!("conversation_weight {c} outside [0, 1]")));
        }
        match self.stage {
            Stage::Stage1 if c != 0.0 || s != 1.0 => Err(CorpusError::Mix(
                "stage 1 uses single-task samples only (weights must be 1.0, 0.0)".into(),
            )),
            Stage::Stage2 if (s + c - 1.0).abs() > 1e-9 => {
                Err(CorpusError::Mix(format!("weights sum to {}, expected 1", s + c)))
            }
            _ => Ok(()),
        }
    }
}

/// Seeded training stream.
///
/// The epoch is split exactly: `round(w · L)` single-task slots and the rest
/// conversation slots, shuffled. Each source fills its slots by walking a
/// seeded permutation of itself, reshuffling when exhausted, so no sample
/// repeats until its source has been used up.
pub fn mix_stream<'a>(
    config: &StageMixConfig,
    single: &'a [InstructionSample],
    conversa: &'a [InstructionSample],
) -> Result<Vec<&'a InstructionSample>, CorpusError> {
    config.validate()?;
    if config.stage == Stage::Stage1 {
        if let Some(s) = single.iter().find(|s| !s.stage_tags.contains(&Stage::Stage1)) {
            return Err(CorpusError::Mix(format!(
                "sample {} is not tagged for stage 1",
                s.sample_id
            )));
        }
    }
    let conversa: &[InstructionSample] = if config.stage == Stage::Stage1 { &[] } else { conversa };
    let len = config.epoch_length.unwrap_or(single.len() + conversa.len());
    let n_single = (config.single_task_weight * len as f64).round() as usize;
    let n_conv = len - n_single.min(len);
    if n_single > 0 && single.is_empty() {
        return Err(CorpusError::Mix("single-task weight > 0 but no single-task samples".into()));
    }
    if n_conv > 0 && conversa.is_empty() {
        return Err(CorpusError::Mix("conversation weight > 0 but no conversation samples".into()));
    }

    let mut slots: Vec<bool> = std::iter::repeat_n(true, n_single.min(len))
        .chain(std::iter::repeat_n(false, n_conv))
        .collect();
    let stage = format!("{:?}", config.stage);
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[&stage, "slots"])));

    let mut singles = Cycler::new(single, derive_seed(config.seed, &[&stage, "single"]));
    let mut convs = Cycler::new(conversa, derive_seed(config.seed, &[&stage, "conversation"]));
    Ok(slots
        .into_iter()
        .map(|is_single| if is_single { singles.next() } else { convs.next() })
        .collect())
}

struct Cycler<'a> {
    items: &'a [InstructionSample],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> Cycler<'a> {
    fn new(items: &'a [InstructionSample], seed: u64) -> Self {
        Self {
            items,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> &'a InstructionSample {
        if self.pos == self.order.len() {
            self.order = (0..self.items.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        &self.items[self.order[self.pos - 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ConversationTurn, MediaRef, TaskKind};
    use std::collections::BTreeSet;

    fn samples(n: usize, conversation: bool) -> Vec<InstructionSample> {
        (0..n)
            .map(|i| {
                let turn = |k| ConversationTurn {
                    identifier: None,
                    instruction_text: format!("q{i}"),
                    answer_text: format!("a{i}"),
                    kind: k,
                };
                let (turns, tags): (Vec<_>, BTreeSet<_>) = if conversation {
                    (vec![turn(TaskKind::ImageCaption), turn(TaskKind::Vqa)], [Stage::Stage2].into())
                } else {
                    (vec![turn(TaskKind::Vqa)], [Stage::Stage1, Stage::Stage2].into())
                };
                InstructionSample::new(MediaRef::image("D", format!("{i}.tif"), 8, 8), turns, tags, "r")
            })
            .collect()
    }

    #[test]
    fn weight_one_is_single_only() {
        let (s, c) = (samples(30, false), samples(7, true));
        let cfg = StageMixConfig::stage2(1.0, 1);
        let out = mix_stream(&cfg, &s, &c).unwrap();
        assert!(out.iter().all(|x| !x.is_conversation()));
        assert_eq!(out.len(), 37);
    }

    #[test]
    fn half_half_over_ten_thousand() {
        let (s, c) = (samples(300, false), samples(40, true));
        let mut cfg = StageMixConfig::stage2(0.5, 9);
        cfg.epoch_length = Some(10_000);
        let out = mix_stream(&cfg, &s, &c).unwrap();
        let n = out.iter().filter(|x| !x.is_conversation()).count();
        assert!((4800..=5200).contains(&n), "{n}");
    }

    #[test]
    fn no_repeat_before_exhaustion() {
        let (s, c) = (samples(50, false), samples(10, true));
        let mut cfg = StageMixConfig::stage2(0.5, 2);
        cfg.epoch_length = Some(100);
        let out = mix_stream(&cfg, &s, &c).unwrap();
        let singles: BTreeSet<_> = out.iter().filter(|x| !x.is_conversation()).map(|x| &x.sample_id).collect();
        assert_eq!(singles.len(), 50);
    }

    #[test]
    fn errors() {
        let s = samples(5, false);
        assert!(mix_stream(&StageMixConfig::stage2(0.8, 0), &s, &[]).is_err());
        assert!(mix_stream(&StageMixConfig::stage2(0.0, 0), &s, &s).is_err());
        let mut cfg = StageMixConfig::stage2(0.8, 0);
        cfg.conversation_weight = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = StageMixConfig::stage1(0);
        cfg.conversation_weight = 0.2;
        assert!(cfg.validate().is_err());
        let c = samples(2, true);
        assert!(mix_stream(&StageMixConfig::stage1(0), &c, &[]).is_err());
    }

    #[test]
    fn stage1_ignores_conversations_and_is_a_permutation() {
        let (s, c) = (samples(20, false), samples(5, true));
        let out = mix_stream(&StageMixConfig::stage1(4), &s, &c).unwrap();
        assert_eq!(out.len(), 20);
        let ids: BTreeSet<_> = out.iter().map(|x| &x.sample_id).collect();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn seed_changes_order_only() {
        let (s, c) = (samples(40, false), samples(10, true));
        let a = mix_stream(&StageMixConfig::stage2(0.8, 1), &s, &c).unwrap();
        let b = mix_stream(&StageMixConfig::stage2(0.8, 2), &s, &c).unwrap();
        assert_ne!(a, b);
        let ids = |v: &[&InstructionSample]| v.iter().map(|x| x.sample_id.clone()).collect::<BTreeSet<_>>();
        assert_eq!(ids(&a), ids(&b));
    }
}
