mod common;

use std::collections::BTreeSet;

use common::{fixture_dir, fixture_input, forge_config, input_for};
use skyeye_forge::corpus::{build_corpus, CorpusError};
use skyeye_forge::domain::{IdentifierMap, Split, Stage, Validate};
use skyeye_forge::jsonl::to_jsonl_string;
use skyeye_forge::review::{ReviewDecision, Verdict};

fn ids(samples: &[skyeye_forge::domain::InstructionSample]) -> BTreeSet<String> {
    samples.iter().map(|s| s.sample_id.clone()).collect()
}

#[test]
fn fixture_has_200_records() {
    assert_eq!(fixture_input().records.len(), 200);
}

#[test]
fn manifest_matches_golden() {
    let art = build_corpus(&fixture_input()).unwrap();
    let mut got = serde_json::to_string_pretty(&art.manifest).unwrap();
    got.push('\n');
    let golden = std::fs::read_to_string(fixture_dir().join("forge/golden_manifest.json")).unwrap();
    assert_eq!(got, golden);
    art.manifest.validate().unwrap();
    assert!(art.report.reconciles(), "{:?}", art.report);
}

#[test]
fn every_sample_is_valid_and_train_only() {
    let input = fixture_input();
    let art = build_corpus(&input).unwrap();
    let heldout: BTreeSet<_> = input
        .records
        .iter()
        .filter(|r| r.split != Split::Train)
        .map(|r| r.media.identity())
        .collect();
    for s in &art.samples {
        s.validate().unwrap();
        assert!(!heldout.contains(&s.media.identity()), "{}", s.sample_id);
        if s.is_conversation() {
            assert_eq!(s.stage_tags, BTreeSet::from([Stage::Stage2]));
        }
    }
    assert!(art.report.leakage.is_clean());
    assert_eq!(art.report.leakage.samples_checked, art.samples.len());
}

#[test]
fn builds_are_byte_identical() {
    let a = build_corpus(&fixture_input()).unwrap();
    let b = build_corpus(&fixture_input()).unwrap();
    assert_eq!(to_jsonl_string(&a.samples), to_jsonl_string(&b.samples));
    assert_eq!(to_jsonl_string(&a.stage1), to_jsonl_string(&b.stage1));
    assert_eq!(to_jsonl_string(&a.stage2), to_jsonl_string(&b.stage2));
    assert_eq!(serde_json::to_string(&a.manifest).unwrap(), serde_json::to_string(&b.manifest).unwrap());
}

#[test]
fn stream_seed_reorders_without_changing_the_set() {
    let base = fixture_input();
    let mut other = base.clone();
    other.stage1.seed += 1;
    other.stage2.seed += 1;
    let (a, b) = (build_corpus(&base).unwrap(), build_corpus(&other).unwrap());
    assert_eq!(to_jsonl_string(&a.samples), to_jsonl_string(&b.samples));
    let order = |v: &[skyeye_forge::domain::InstructionSample]| v.iter().map(|s| s.sample_id.clone()).collect::<Vec<_>>();
    assert_ne!(order(&a.stage2), order(&b.stage2));
    assert_eq!(ids(&a.stage2), ids(&b.stage2));
}

#[test]
fn render_seed_changes_wording() {
    let base = fixture_input();
    let mut other = base.clone();
    other.render_seed += 1;
    assert_ne!(ids(&build_corpus(&base).unwrap().samples), ids(&build_corpus(&other).unwrap().samples));
}

#[test]
fn planted_leakage_fails_and_names_the_sample() {
    let err = build_corpus(&input_for(forge_config("forge_leaky.toml"))).unwrap_err();
    let CorpusError::Leakage(report) = err else { panic!("expected leakage, got {err}") };
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].path, "parkinglot06.tif");
    assert_eq!(report.violations[0].dataset_id, "UCM-VQA");
}

#[test]
fn lenient_leakage_drops_and_reports() {
    let mut input = input_for(forge_config("forge_leaky.toml"));
    input.strict_leakage = false;
    let art = build_corpus(&input).unwrap();
    assert_eq!(art.report.leakage.violations.len(), 1);
    assert_eq!(art.report.leakage_dropped, 1);
    assert!(!ids(&art.samples).contains(&art.report.leakage.violations[0].sample_id));
    assert!(art.report.reconciles());
}

#[test]
fn identifier_ablation() {
    let tokens: Vec<String> = IdentifierMap::default().tokens().map(String::from).collect();
    let count = |text: &str| tokens.iter().map(|t| text.matches(t.as_str()).count()).sum::<usize>();

    let mut off = fixture_input();
    off.render.identifiers_enabled = false;
    let art = build_corpus(&off).unwrap();
    for text in [to_jsonl_string(&art.samples), to_jsonl_string(&art.stage1), to_jsonl_string(&art.stage2)] {
        assert_eq!(count(&text), 0);
    }

    let art = build_corpus(&fixture_input()).unwrap();
    for s in &art.samples {
        for t in &s.turns {
            assert_eq!(count(&t.instruction_text), 1, "{}", t.instruction_text);
            let own = IdentifierMap::default().get(t.kind).unwrap().token;
            assert!(t.instruction_text.contains(&own));
        }
    }
}

#[test]
fn rejected_samples_disappear_from_the_rebuild() {
    let input = fixture_input();
    let first = build_corpus(&input).unwrap();
    let rejected: Vec<String> = first.samples.iter().step_by(50).map(|s| s.sample_id.clone()).collect();
    let mut again = input.clone();
    again.decisions = rejected
        .iter()
        .map(|id| ReviewDecision {
            sample_id: id.clone(),
            verdict: Verdict::Reject,
            edited_turns: None,
            reviewer: "qa".into(),
            timestamp: "2024-05-01T00:00:00Z".into(),
            note: None,
        })
        .collect();
    let second = build_corpus(&again).unwrap();
    assert_eq!(second.samples.len(), first.samples.len() - rejected.len());
    for id in &rejected {
        assert!(!ids(&second.samples).contains(id));
        assert!(!ids(&second.stage2).contains(id));
    }
    assert!(second.report.reconciles());
}

#[test]
fn stage_two_mix_tracks_weight() {
    let mut input = fixture_input();
    input.stage2.epoch_length = Some(10_000);
    let art = build_corpus(&input).unwrap();
    let single = art.stage2.iter().filter(|s| !s.is_conversation()).count();
    let frac = single as f64 / art.stage2.len() as f64;
    assert!((0.78..=0.82).contains(&frac), "{frac}");
}
