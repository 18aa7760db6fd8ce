mod common;

use std::collections::BTreeSet;

use common::judge_stub::{expected_prompt, Stub};
use skyeye_forge::judge::{judge_corpus, reaggregate, HttpBackend, JudgeConfig, JudgeItem, Verdict};

fn items(n: usize) -> Vec<JudgeItem> {
    (0..n)
        .map(|i| JudgeItem {
            item_id: format!("item-{i:02}"),
            ground_truths: vec![format!("many planes are parked near terminal {i}")],
            generated: format!("some planes beside terminal building {i}"),
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stub_round_trip_and_offline_reaggregation() {
    let stub = Stub::start().await;
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("verdicts.jsonl");
    let config = JudgeConfig {
        endpoint: stub.endpoint(),
        api_key_env: None,
        ..JudgeConfig::default()
    };
    let items = items(10);
    let (verdicts, summary) = judge_corpus(&items, &config, HttpBackend::new(&config).unwrap(), Some(&log))
        .await
        .unwrap();

    let got: BTreeSet<String> = stub.seen.prompts.lock().unwrap().iter().cloned().collect();
    let want: BTreeSet<String> = items
        .iter()
        .flat_map(|it| [1, 2].map(|v| expected_prompt(v, &it.ground_truths[0], &it.generated)))
        .collect();
    assert_eq!(got, want);
    for body in stub.seen.bodies.lock().unwrap().iter() {
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["temperature"], 0.0);
    }

    assert_eq!(verdicts.len(), 20);
    assert!(verdicts.iter().all(|v| v.verdict != Verdict::Unparseable && v.attempts == 1));
    assert_eq!(summary.items, 10);
    assert_eq!((summary.accuracy_1, summary.accuracy_2), (0.5, 0.5));

    stub.stop().await;
    assert_eq!(reaggregate(&log).unwrap(), summary);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unreachable_endpoint_aborts() {
    let stub = Stub::start().await;
    let endpoint = stub.endpoint();
    stub.stop().await;
    let config = JudgeConfig {
        endpoint,
        api_key_env: None,
        max_retries: 1,
        ..JudgeConfig::default()
    };
    let err = judge_corpus(&items(3), &config, HttpBackend::new(&config).unwrap(), None).await.unwrap_err();
    assert!(err.to_string().contains("transport"), "{err}");
}

#[test]
fn cli_judge_then_reaggregate_offline() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let stub = rt.block_on(Stub::start());
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("gt.jsonl");
    let preds = dir.path().join("pred.jsonl");
    let mut r = String::new();
    let mut p = String::new();
    for it in items(10) {
        r.push_str(&serde_json::json!({"item_id": it.item_id, "references": it.ground_truths}).to_string());
        r.push('\n');
        p.push_str(&serde_json::json!({"item_id": it.item_id, "prediction_text": it.generated}).to_string());
        p.push('\n');
    }
    std::fs::write(&records, r).unwrap();
    std::fs::write(&preds, p).unwrap();
    let out = dir.path().join("out");
    let bin = env!("CARGO_BIN_EXE_skyeye-forge");
    let run = |args: &[&str]| {
        std::process::Command::new(bin)
            .args(args)
            .env_remove("SKYEYE_FORGE_CONFIG")
            .output()
            .unwrap()
    };
    let endpoint = stub.endpoint();
    let o = run(&[
        "judge",
        "--records",
        records.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--endpoint",
        &endpoint,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let online = std::fs::read_to_string(out.join("judge.summary.json")).unwrap();
    rt.block_on(stub.stop());

    let offline_dir = dir.path().join("offline");
    let o = run(&[
        "judge",
        "--reaggregate",
        out.join("judge.verdicts.jsonl").to_str().unwrap(),
        "--out",
        offline_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(offline_dir.join("judge.summary.json")).unwrap(), online);
    let summary: serde_json::Value = serde_json::from_str(&online).unwrap();
    assert_eq!(summary["accuracy_1"], 0.5);
}
