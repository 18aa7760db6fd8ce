// Building the bundled fixture corpus from its TOML config, the same way
// `skyeye-forge build` does, and writing the artifacts to a temp dir.

use std::path::Path;

use skyeye_forge::config::{build_input, load_inputs, LoadedConfig};
use skyeye_forge::corpus::build_corpus;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/forge/forge.toml");
    let loaded = LoadedConfig::load(&path)?;
    let inputs = load_inputs(&loaded)?;
    println!("{} records, {} ingest issues", inputs.records.len(), inputs.issues.len());
    let input = build_input(&loaded, inputs, false)?;
    let built = build_corpus(&input)?;

    print!("{}", built.manifest.render_table());
    println!(
        "stage 1: {} samples, stage 2 stream: {} samples",
        built.stage1.len(),
        built.stage2.len()
    );
    if let Some(conv) = built.samples.iter().find(|s| s.is_conversation()) {
        println!("a conversation from {}:", conv.source_recipe);
        for t in &conv.turns {
            println!("  Q: {}\n  A: {}", t.instruction_text, t.answer_text);
        }
    }

    let out = std::env::temp_dir().join(format!("skyeye-forge-example-{}", std::process::id()));
    built.write(&out)?;
    println!("artifacts in {}", out.display());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
