#![allow(dead_code)]

pub mod judge_stub;
pub mod oracle;
pub mod review_server;

use std::path::PathBuf;

use skyeye_forge::config::{build_input, load_inputs, LoadedConfig};
use skyeye_forge::corpus::BuildInput;

/// Resolves from any crate under `crates/`, so the acceptance crate can share it.
pub fn fixture_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    dir.canonicalize().unwrap_or(dir)
}

pub fn forge_config(name: &str) -> LoadedConfig {
    LoadedConfig::load(&fixture_dir().join("forge").join(name)).expect("fixture config loads")
}

/// The 200-record fixture, ready for `build_corpus`.
pub fn fixture_input() -> BuildInput {
    input_for(forge_config("forge.toml"))
}

pub fn input_for(loaded: LoadedConfig) -> BuildInput {
    let inputs = load_inputs(&loaded).expect("fixture inputs load");
    build_input(&loaded, inputs, false).expect("fixture build input")
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Thirty words with inflection families, so stem matching gets exercised.
pub const VOCAB: [&str; 30] = [
    "plane", "planes", "park", "parked", "parking", "build", "building", "buildings", "tree", "trees",
    "road", "roads", "car", "cars", "river", "rivers", "green", "the", "a", "of",
    "on", "near", "large", "small", "house", "houses", "field", "fields", "water", "runway",
];

/// A small random caption corpus: 2–10 items, 1–4 references, sentences of
/// 1–7 tokens over a random slice of 3–30 vocabulary words.
pub fn random_corpus(rng: &mut impl rand::Rng) -> Vec<oracle::Item> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut vocab = VOCAB.to_vec();
    vocab.shuffle(rng);
    vocab.truncate(rng.random_range(3..=30));
    let sentence = |rng: &mut dyn rand::RngCore| -> Vec<String> {
        let len = rng.random_range(1..=7);
        (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect()
    };
    (0..rng.random_range(2..=10))
        .map(|_| {
            let cand = sentence(rng);
            let refs = (0..rng.random_range(1..=4)).map(|_| sentence(rng)).collect();
            (cand, refs)
        })
        .collect()
}

pub fn caption_items(corpus: &[oracle::Item]) -> Vec<skyeye_forge::metrics::CaptionItem> {
    corpus
        .iter()
        .map(|(c, r)| skyeye_forge::metrics::CaptionItem {
            candidate: c.clone(),
            references: r.clone(),
        })
        .collect()
}

pub fn snowball(word: &str) -> String {
    rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English).stem(word).into_owned()
}
