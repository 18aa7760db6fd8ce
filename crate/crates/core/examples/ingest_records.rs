// Normalizing a caption dump whose fields are named differently from the
// canonical ones, with image sizes supplied by a sidecar.

use skyeye_forge::domain::{Payload, TaskKind};
use skyeye_forge::ingest::{ingest, DimensionIndex, IngestAdapterConfig, InputFormat, Strictness};

const RAW: &str = r#"{"images": [
  {"filename": "airplane01.tif", "split": "train", "sentences": [{"raw": "Several planes parked on the apron."}, {"raw": "Planes near a terminal."}]},
  {"filename": "beach03.tif", "split": "test", "sentences": [{"raw": "Waves on a sandy beach."}]},
  {"filename": "forest09.tif", "split": "train", "sentences": []}
]}"#;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut adapter = IngestAdapterConfig::new("UCM-Captions", TaskKind::ImageCaption, InputFormat::CaptionJson);
    adapter.field_map.insert("image".into(), "filename".into());
    let dims = DimensionIndex::from_jsonl(
        r#"{"path": "airplane01.tif", "width": 256, "height": 256}
{"path": "beach03.tif", "width": 256, "height": 256}
{"path": "forest09.tif", "width": 256, "height": 256}"#,
    )?;

    let out = ingest(&adapter, RAW.as_bytes(), &dims, Strictness::Lenient)?;
    for r in &out.records {
        if let Payload::Captions { captions } = &r.payload {
            println!("{:<16} {:?} {} caption(s)", r.media.path, r.split, captions.len());
        }
    }
    for issue in &out.issues {
        println!("skipped: {issue:?}");
    }

    // Strict mode refuses the same input outright.
    let strict = ingest(&adapter, RAW.as_bytes(), &dims, Strictness::Strict);
    println!("strict: {}", strict.map(|_| "ok".to_string()).unwrap_or_else(|e| e.to_string()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
