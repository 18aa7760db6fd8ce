//! One line per acceptance criterion. Exits non-zero if any criterion fails.

#[path = "../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::judge_stub::{expected_prompt, Stub};
use common::review_server::Running;
use common::{caption_items, fixture_dir, fixture_input, forge_config, input_for, oracle, random_corpus, snowball};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyeye_forge::corpus::{build_corpus, CorpusError};
use skyeye_forge::domain::{ConversationTurn, IdentifierMap, InstructionSample, PixelBox, TaskKind};
use skyeye_forge::geotext::{
    dequantize_box, normalize_box, parse_boxes_strict, parse_boxes_with, quantize_box, serialize_box, ParseMode,
    QuantizedBox,
};
use skyeye_forge::jsonl::{parse_jsonl, to_jsonl_string};
use skyeye_forge::judge::{judge_corpus, reaggregate, HttpBackend, JudgeConfig, JudgeItem};
use skyeye_forge::metrics::{
    bleu, cider, evaluate, grounding_accuracy, meteor_lite, rouge_l, CaptionItem, EvalOptions, EvalRecord,
    GroundingItem, GtSpace,
};
use skyeye_forge::review::ReviewDecision;
use skyeye_forge::service::ServiceConfig;
use skyeye_forge::templating::{build_turn, recover_turns, render_conversation, PoolSet, RenderOptions, TurnContent};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for round in 0..50 {
        let corpus = random_corpus(&mut rng);
        let items = caption_items(&corpus);
        for n in 1..=4 {
            let (got, want) = (bleu(&items, n).map_err(|e| e.to_string())?, oracle::bleu(&corpus, n));
            ensure(close(got, want), || format!("corpus {round}: BLEU-{n} {got} vs oracle {want}"))?;
        }
        let pairs = [
            ("ROUGE-L", rouge_l(&items), oracle::rouge_l(&corpus)),
            ("METEOR", meteor_lite(&items), oracle::meteor(&corpus, &snowball)),
            ("CIDEr", cider(&items), oracle::cider(&corpus)),
        ];
        for (name, got, want) in pairs {
            let got = got.map_err(|e| e.to_string())?;
            ensure(close(got, want), || format!("corpus {round}: {name} {got} vs oracle {want}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("50 corpora, 7 metrics each within 1e-9, {secs:.2}s"))
}

fn bleu_hand_case() -> Outcome {
    let got = bleu(&[CaptionItem::new("the the the the", &["the cat"])], 1).map_err(|e| e.to_string())?;
    ensure(got == 0.5, || format!("BLEU-1 = {got}, expected 0.5"))?;
    Ok("BLEU-1 = 0.5".into())
}

fn random_qbox(rng: &mut impl Rng) -> QuantizedBox {
    let mut c = || rng.random_range(0u32..=100);
    let (a, b, x, y) = (c(), c(), c(), c());
    QuantizedBox::new(a.min(x), b.min(y), a.max(x), b.max(y)).expect("ordered coordinates")
}

fn random_pixel_box(rng: &mut impl Rng) -> (PixelBox, u32, u32) {
    let (w, h) = (rng.random_range(1u32..5000), rng.random_range(1u32..5000));
    loop {
        let (a, b) = (rng.random_range(0.0..=w as f64), rng.random_range(0.0..=w as f64));
        let (c, d) = (rng.random_range(0.0..=h as f64), rng.random_range(0.0..=h as f64));
        if a != b && c != d {
            return (PixelBox::new(a.min(b), c.min(d), a.max(b), c.max(d)), w, h);
        }
    }
}

fn coordinate_grammar() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..100_000 {
        let q = random_qbox(&mut rng);
        let text = serialize_box(&q);
        let back = parse_boxes_strict(&text).map_err(|e| format!("{text}: {e}"))?;
        ensure(back == [q], || format!("{text} parsed as {back:?}"))?;
    }
    // Half a grid cell, plus room for the binary representation of k/100.
    let bound = 0.005 + 1e-12;
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let (b, w, h) = random_pixel_box(&mut rng);
        let q = quantize_box(&b, w, h).map_err(|e| format!("{b:?} in {w}x{h}: {e}"))?;
        let (d, n) = (dequantize_box(&q), normalize_box(&b, w, h));
        for drift in [d.x1 - n.x1, d.y1 - n.y1, d.x2 - n.x2, d.y2 - n.y2] {
            worst = worst.max(drift.abs());
        }
    }
    ensure(worst <= bound, || format!("drift {worst}"))?;
    const ALPHABET: &[u8] = b"{}<>0123456789 -.,x";
    for i in 0..1_000_000 {
        let len = rng.random_range(0..48);
        let bytes: Vec<u8> = (0..len)
            .map(|_| if i % 2 == 0 { rng.random() } else { ALPHABET[rng.random_range(0..ALPHABET.len())] })
            .collect();
        let text = String::from_utf8_lossy(&bytes);
        for mode in [ParseMode::Standard, ParseMode::Strict, ParseMode::Lenient] {
            let _ = parse_boxes_with(&text, mode);
        }
    }
    Ok(format!("1e5 round trips, 1e5 boxes with max drift {worst:.6}, 1e6 fuzz strings"))
}

fn grounding_accuracy_check() -> Outcome {
    let text = std::fs::read_to_string(fixture_dir().join("eval/rsvg_gt.jsonl")).map_err(|e| e.to_string())?;
    let records: Vec<EvalRecord> = parse_jsonl(&text).map_err(|e| e.to_string())?;
    let report = evaluate(TaskKind::VisualGrounding, "RSVG", &records, &[], EvalOptions::default())
        .map_err(|e| e.to_string())?;
    let acc = report.scores[&report.columns[0]];
    ensure((acc - 200.0 / 3.0).abs() <= 0.01, || format!("{} = {acc}", report.columns[0]))?;

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let items: Vec<GroundingItem> = (0..10_000)
        .map(|_| {
            let (gt, width, height) = random_pixel_box(&mut rng);
            let q = quantize_box(&gt, width, height).expect("non-degenerate box");
            GroundingItem {
                prediction_text: serialize_box(&q),
                gt_box: gt,
                width,
                height,
            }
        })
        .collect();
    let s = grounding_accuracy(&items, 0.5, GtSpace::default());
    ensure(s.correct == items.len(), || format!("{} of {} serialized gts scored correct", s.correct, items.len()))?;
    Ok(format!("fixture {acc:.2}%, 10000/10000 serialized gts correct"))
}

fn written(art: &skyeye_forge::corpus::BuildArtifacts) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    art.write(dir.path()).map_err(|e| e.to_string())?;
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().to_string(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    Ok(files)
}

fn order(v: &[InstructionSample]) -> Vec<&str> {
    v.iter().map(|s| s.sample_id.as_str()).collect()
}

fn corpus_determinism() -> Outcome {
    let build = |input| build_corpus(&input).map_err(|e| e.to_string());
    let a = build(fixture_input())?;
    let b = build(fixture_input())?;
    let (fa, fb) = (written(&a)?, written(&b)?);
    ensure(fa == fb, || "two builds differ on disk".into())?;

    let mut loaded = forge_config("forge.toml");
    loaded.config.seed += 1;
    let c = build(input_for(loaded))?;
    ensure(to_jsonl_string(&a.samples) == to_jsonl_string(&c.samples), || "reseeding changed the sample set".into())?;
    ensure(order(&a.stage2) != order(&c.stage2), || "reseeding kept the stage-2 order".into())?;
    let set = |v: &[InstructionSample]| v.iter().map(|s| s.sample_id.clone()).collect::<BTreeSet<_>>();
    ensure(set(&a.stage2) == set(&c.stage2), || "reseeding changed which samples stream".into())?;
    Ok(format!("{} files byte-identical; reseed reorders {} stream entries only", fa.len(), a.stage2.len()))
}

fn leakage_guard() -> Outcome {
    let clean = build_corpus(&fixture_input()).map_err(|e| e.to_string())?;
    ensure(clean.report.leakage.is_clean(), || format!("clean build: {:?}", clean.report.leakage.violations))?;

    let leaky = input_for(forge_config("forge_leaky.toml"));
    let report = match build_corpus(&leaky) {
        Err(CorpusError::Leakage(r)) => r,
        Err(e) => return Err(format!("failed for another reason: {e}")),
        Ok(_) => return Err("leaky build succeeded".into()),
    };
    ensure(report.violations.len() == 1, || format!("{} violations", report.violations.len()))?;
    let named = &report.violations[0].sample_id;

    // Without the held-out twins the planted record builds normally, and its
    // sample must be exactly the one named.
    let mut unblocked = leaky.clone();
    unblocked
        .records
        .retain(|r| !(r.media.dataset_id == "UCM-VQA" && r.media.path == "parkinglot06.tif" && r.split.is_heldout()));
    let art = build_corpus(&unblocked).map_err(|e| e.to_string())?;
    let planted: Vec<&InstructionSample> = art
        .samples
        .iter()
        .filter(|s| s.media.dataset_id == "UCM-VQA" && s.media.path == "parkinglot06.tif")
        .collect();
    ensure(planted.len() == 1, || format!("{} samples for the planted media", planted.len()))?;
    ensure(&planted[0].sample_id == named, || format!("named {named}, planted {}", planted[0].sample_id))?;
    Ok(format!("planted sample {} named; clean build 0 violations", &named[..12]))
}

const WORDS: [&str; 12] =
    ["planes", "parked", "river", "green", "bridge", "two", "large", "storage", "tanks", "road", "near", "the"];

fn random_content(rng: &mut impl Rng) -> TurnContent {
    let mut phrase = |n: usize| (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
    let (a, b) = (phrase(3), phrase(5));
    let boxes = serialize_box(&random_qbox(rng));
    match rng.random_range(0..6) {
        0 => TurnContent::new(TaskKind::ImageCaption, b),
        1 => TurnContent::new(TaskKind::Vqa, a).with_query(format!("{b}?")),
        2 => TurnContent::new(TaskKind::VisualGrounding, boxes).with_expression(a),
        3 => TurnContent::new(TaskKind::ReferringExpressionGeneration, a).with_query(boxes),
        4 => TurnContent::new(TaskKind::PhraseGrounding, boxes).with_phrase(a),
        _ => TurnContent::new(TaskKind::SceneClassification, a),
    }
}

fn context_contract() -> Outcome {
    let pools = PoolSet::builtin();
    let opts = RenderOptions::default();
    let media = "<Img><ImageHere></Img>";
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for n in 0..1000 {
        let k = rng.random_range(1..=6);
        let turns: Vec<ConversationTurn> = (0..k)
            .map(|_| {
                let c = random_content(&mut rng);
                build_turn(&c, &pools, rng.random(), &opts).map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let rendered = render_conversation(&turns, media).map_err(|e| e.to_string())?;

        let mut want = String::new();
        let mut cursor = 0;
        for (i, t) in turns.iter().enumerate() {
            let head = if i == 0 { format!("[INST] {media} ") } else { " [INST] ".to_string() };
            want.push_str(&format!("{head}{} [/INST] {}", t.instruction_text, t.answer_text));
            // Each instruction and answer starts after everything of the turns before it.
            for part in [&t.instruction_text, &t.answer_text] {
                let at = rendered.text[cursor..].find(part.as_str()).map(|p| p + cursor);
                let at = at.ok_or_else(|| format!("conversation {n}: `{part}` missing after byte {cursor}"))?;
                cursor = at + part.len();
            }
        }
        ensure(rendered.text == want, || format!("conversation {n}:\n{}\n{want}", rendered.text))?;
        let back = recover_turns(&rendered.text, media).map_err(|e| format!("conversation {n}: {e}"))?;
        let orig: Vec<(String, String)> =
            turns.iter().map(|t| (t.instruction_text.clone(), t.answer_text.clone())).collect();
        ensure(back == orig, || format!("conversation {n} did not recover"))?;
    }
    Ok("1000 conversations of 1-6 turns ordered and recovered exactly".into())
}

fn stage_mixing() -> Outcome {
    let mut input = fixture_input();
    input.stage2.epoch_length = Some(10_000);
    let art = build_corpus(&input).map_err(|e| e.to_string())?;
    ensure(art.stage2.len() == 10_000, || format!("epoch of {}", art.stage2.len()))?;
    let single = art.stage2.iter().filter(|s| !s.is_conversation()).count();
    let frac = single as f64 / art.stage2.len() as f64;
    ensure((0.78..=0.82).contains(&frac), || format!("single-task fraction {frac}"))?;
    Ok(format!("single-task fraction {frac:.4} over 10000"))
}

fn identifier_ablation() -> Outcome {
    let tokens: Vec<String> = IdentifierMap::default().tokens().map(String::from).collect();
    let count = |text: &str| tokens.iter().map(|t| text.matches(t.as_str()).count()).sum::<usize>();

    let mut off = fixture_input();
    off.render.identifiers_enabled = false;
    let art = build_corpus(&off).map_err(|e| e.to_string())?;
    for text in [to_jsonl_string(&art.samples), to_jsonl_string(&art.stage1), to_jsonl_string(&art.stage2)] {
        let c = count(&text);
        ensure(c == 0, || format!("{c} identifier occurrences with identifiers off"))?;
    }
    let art = build_corpus(&fixture_input()).map_err(|e| e.to_string())?;
    let mut instructions = 0;
    for s in &art.samples {
        for t in &s.turns {
            ensure(count(&t.instruction_text) == 1, || format!("`{}`", t.instruction_text))?;
            instructions += 1;
        }
    }
    Ok(format!("off: 0 tokens; on: {instructions} instructions with exactly one"))
}

fn judge_items() -> Vec<JudgeItem> {
    (0..10)
        .map(|i| JudgeItem {
            item_id: format!("item-{i:02}"),
            ground_truths: vec![format!("many planes are parked near terminal {i}")],
            generated: format!("some planes beside terminal building {i}"),
        })
        .collect()
}

async fn judge_protocol() -> Outcome {
    let stub = Stub::start().await;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("verdicts.jsonl");
    let config = JudgeConfig {
        endpoint: stub.endpoint(),
        api_key_env: None,
        ..JudgeConfig::default()
    };
    let items = judge_items();
    let backend = HttpBackend::new(&config).map_err(|e| e.to_string())?;
    let (_, summary) = judge_corpus(&items, &config, backend, Some(&log)).await.map_err(|e| e.to_string())?;
    let got: BTreeSet<String> = stub.seen.prompts.lock().unwrap().iter().cloned().collect();
    let want: BTreeSet<String> = items
        .iter()
        .flat_map(|it| [1, 2].map(|v| expected_prompt(v, &it.ground_truths[0], &it.generated)))
        .collect();
    stub.stop().await;
    ensure(got == want, || format!("{} prompts differ from the templates", got.symmetric_difference(&want).count()))?;
    ensure((summary.accuracy_1, summary.accuracy_2) == (0.5, 0.5), || format!("{summary:?}"))?;
    let offline = reaggregate(&log).map_err(|e| e.to_string())?;
    ensure(offline == summary, || format!("offline {offline:?} vs {summary:?}"))?;
    Ok("20 prompts byte-equal, accuracy 0.5/0.5, offline summary identical".into())
}

async fn review_loop() -> Outcome {
    let input = fixture_input();
    let first = build_corpus(&input).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ServiceConfig {
        decision_log: dir.path().join("decisions.jsonl"),
        ..ServiceConfig::default()
    };
    let server = Running::start(first.samples.clone(), config).await;
    let http = reqwest::Client::new();
    let targets = [first.samples[7].sample_id.clone(), first.samples[150].sample_id.clone()];
    for id in &targets {
        let resp = http
            .post(format!("{}/decisions", server.base))
            .json(&serde_json::json!({"sample_id": id, "verdict": "reject", "reviewer": "acceptance"}))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        ensure(resp.status().is_success(), || format!("POST returned {}", resp.status()))?;
    }
    let export = async { http.get(format!("{}/export", server.base)).send().await?.text().await }
        .await
        .map_err(|e| e.to_string())?;
    server.stop().await;

    let decisions: Vec<ReviewDecision> = parse_jsonl(&export).map_err(|e| e.to_string())?;
    let mut again = input.clone();
    again.decisions = decisions;
    let second = build_corpus(&again).map_err(|e| e.to_string())?;
    let delta = first.samples.len() - second.samples.len();
    ensure(delta == 2, || format!("{delta} fewer samples"))?;
    for id in &targets {
        ensure(!order(&second.samples).contains(&id.as_str()), || format!("{id} survived"))?;
    }
    Ok(format!("{} -> {} samples, both rejected ids gone", first.samples.len(), second.samples.len()))
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .expect("runtime");
    let criteria: Vec<Criterion> = vec![
        ("metric-oracle equivalence", Box::new(metric_oracles)),
        ("BLEU hand case", Box::new(bleu_hand_case)),
        ("coordinate grammar", Box::new(coordinate_grammar)),
        ("grounding accuracy", Box::new(grounding_accuracy_check)),
        ("corpus determinism", Box::new(corpus_determinism)),
        ("leakage guard", Box::new(leakage_guard)),
        ("conversation context contract", Box::new(context_contract)),
        ("stage mixing", Box::new(stage_mixing)),
        ("identifier ablation", Box::new(identifier_ablation)),
        ("judge protocol", Box::new(|| rt.block_on(judge_protocol()))),
        ("headless review loop", Box::new(|| rt.block_on(review_loop()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
