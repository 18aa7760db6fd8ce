// Running the review service in-process: list samples, reject one, and
// read the exported decision log back.

use std::path::Path;
use std::sync::Arc;

use skyeye_forge::config::{build_input, load_inputs, LoadedConfig};
use skyeye_forge::corpus::build_corpus;
use skyeye_forge::service::{router, AppState, ServiceConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let loaded = LoadedConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/forge/forge.toml"))?;
    let input = build_input(&loaded, load_inputs(&loaded)?, false)?;
    let samples = build_corpus(&input)?.samples;

    let dir = std::env::temp_dir().join(format!("skyeye-review-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let config = ServiceConfig {
        decision_log: dir.join("decisions.jsonl"),
        ..ServiceConfig::default()
    };
    let state = Arc::new(AppState::new(samples, config)?);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let base = format!("http://{}/v1", listener.local_addr()?);
        let server = tokio::spawn(async move { axum::serve(listener, router(state)).await });
        let http = reqwest::Client::new();

        let page: serde_json::Value = http.get(format!("{base}/samples?limit=3")).send().await?.json().await?;
        println!("{} samples, first page:", page["total"]);
        for it in page["items"].as_array().into_iter().flatten() {
            println!("  {} {}", &it["sample_id"].as_str().unwrap_or("")[..12], it["source_recipe"]);
        }
        let id = page["items"][0]["sample_id"].clone();
        let resp: serde_json::Value = http
            .post(format!("{base}/decisions"))
            .json(&serde_json::json!({"sample_id": id, "verdict": "reject", "reviewer": "example", "note": "blurry"}))
            .send()
            .await?
            .json()
            .await?;
        println!("decision: {resp}");
        print!("export:\n{}", http.get(format!("{base}/export")).send().await?.text().await?);
        server.abort();
        Ok::<_, Box<dyn std::error::Error>>(())
    })?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
