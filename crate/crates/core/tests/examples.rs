macro_rules! example {
    ($test:ident, $module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(box_text_runs, box_text, "box_text.rs");
example!(ingest_records_runs, ingest_records, "ingest_records.rs");
example!(conversation_text_runs, conversation_text, "conversation_text.rs");
example!(forge_corpus_runs, forge_corpus, "forge_corpus.rs");
example!(caption_scores_runs, caption_scores, "caption_scores.rs");
example!(grounding_and_vqa_runs, grounding_and_vqa, "grounding_and_vqa.rs");
example!(judge_offline_runs, judge_offline, "judge_offline.rs");
example!(review_api_runs, review_api, "review_api.rs");
