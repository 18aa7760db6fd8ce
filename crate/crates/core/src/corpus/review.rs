use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::domain::{InstructionSample, ReviewState};
use crate::review::{apply_edit, latest_decisions, ReviewDecision, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPolicy {
    /// Everything not rejected passes through.
    #[default]
    PassPending,
    /// Only accepted or edited samples are emitted.
    RequireAccept,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReviewOutcome {
    /// Sorted by sample id.
    pub samples: Vec<InstructionSample>,
    pub accepted: usize,
    pub rejected: usize,
    pub edited: usize,
    /// Pending samples dropped under [`ReviewPolicy::RequireAccept`].
    pub withheld: usize,
    /// Decisions naming a sample id that is not in the input.
    pub unknown_ids: Vec<String>,
}

/// Applies the latest decision per sample. Rejected samples are removed,
/// edits replace the original with a re-hashed sample linked back to it.
pub fn apply_review(
    samples: Vec<InstructionSample>,
    log: &[ReviewDecision],
    policy: ReviewPolicy,
) -> Result<ReviewOutcome, CorpusError> {
    let latest = latest_decisions(log);
    let mut out = ReviewOutcome::default();
    let mut unknown: Vec<String> = latest
        .keys()
        .filter(|id| !samples.iter().any(|s| s.sample_id == **id))
        .map(|id| id.to_string())
        .collect();
    unknown.sort();
    out.unknown_ids = unknown;

    for mut sample in samples {
        match latest.get(sample.sample_id.as_str()) {
            None if policy == ReviewPolicy::RequireAccept => out.withheld += 1,
            None => out.samples.push(sample),
            Some(d) => match d.verdict {
                Verdict::Reject => out.rejected += 1,
                Verdict::Accept => {
                    out.accepted += 1;
                    sample.review_state = ReviewState::Accepted;
                    out.samples.push(sample);
                }
                Verdict::Edit => {
                    let turns = d.edited_turns.as_deref().unwrap_or_default();
                    let edited = apply_edit(&sample, turns).map_err(|e| e.under(&format!("decision[{}]", sample.sample_id)))?;
                    out.edited += 1;
                    out.samples.push(edited);
                }
            },
        }
    }
    out.samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out.samples.dedup_by(|a, b| a.sample_id == b.sample_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sample_id, ConversationTurn, MediaRef, Stage, TaskKind};

    fn samples(n: usize) -> Vec<InstructionSample> {
        let mut v: Vec<_> = (0..n)
            .map(|i| {
                let turn = ConversationTurn {
                    identifier: None,
                    instruction_text: format!("What is shown in image {i}?"),
                    answer_text: format!("answer {i}"),
                    kind: TaskKind::Vqa,
                };
                InstructionSample::new(MediaRef::image("D", format!("{i}.tif"), 8, 8), vec![turn], [Stage::Stage1, Stage::Stage2].into(), "r")
            })
            .collect();
        v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        v
    }

    fn decision(id: &str, verdict: Verdict, turns: Option<Vec<ConversationTurn>>) -> ReviewDecision {
        ReviewDecision {
            sample_id: id.into(),
            verdict,
            edited_turns: turns,
            reviewer: "r1".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
            note: None,
        }
    }

    #[test]
    fn empty_log_is_identity() {
        let s = samples(4);
        assert_eq!(apply_review(s.clone(), &[], ReviewPolicy::PassPending).unwrap().samples, s);
    }

    #[test]
    fn one_reject_of_ten() {
        let s = samples(10);
        let gone = s[3].sample_id.clone();
        let out = apply_review(s, &[decision(&gone, Verdict::Reject, None)], ReviewPolicy::PassPending).unwrap();
        assert_eq!(out.samples.len(), 9);
        assert_eq!(out.rejected, 1);
        assert!(out.samples.iter().all(|x| x.sample_id != gone));
    }

    #[test]
    fn edit_rehashes_and_links() {
        let s = samples(3);
        let orig = s[0].clone();
        let mut turns = orig.turns.clone();
        turns[0].answer_text = "a corrected answer".into();
        let out = apply_review(s, &[decision(&orig.sample_id, Verdict::Edit, Some(turns.clone()))], ReviewPolicy::PassPending).unwrap();
        let new_id = sample_id(&orig.media, &turns);
        assert_ne!(new_id, orig.sample_id);
        let e = out.samples.iter().find(|x| x.sample_id == new_id).unwrap();
        assert_eq!(e.edited_from.as_deref(), Some(orig.sample_id.as_str()));
        assert_eq!(e.review_state, ReviewState::Edited);
        assert_eq!(out.samples.len(), 3);
    }

    #[test]
    fn latest_decision_wins_and_unknown_ids_are_counted() {
        let s = samples(3);
        let id = s[1].sample_id.clone();
        let log = [
            decision(&id, Verdict::Reject, None),
            decision(&id, Verdict::Accept, None),
            decision("ffff", Verdict::Reject, None),
        ];
        let out = apply_review(s, &log, ReviewPolicy::PassPending).unwrap();
        assert_eq!((out.samples.len(), out.accepted, out.rejected), (3, 1, 0));
        assert_eq!(out.unknown_ids, vec!["ffff".to_string()]);
    }

    #[test]
    fn require_accept_withholds_pending() {
        let s = samples(5);
        let id = s[2].sample_id.clone();
        let out = apply_review(s, &[decision(&id, Verdict::Accept, None)], ReviewPolicy::RequireAccept).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.withheld, 4);
        assert_eq!(out.samples[0].review_state, ReviewState::Accepted);
    }
}
