// The two-prompt judging protocol against a local stand-in for the chat
// model, with the verdict log re-aggregated afterwards.

use skyeye_forge::judge::{judge_corpus, reaggregate, ChatBackend, JudgeConfig, JudgeItem, TransportError};

/// Says "Yes" when the captions share at least half of the generated words.
struct Overlap;

fn quoted(prompt: &str, n: usize) -> &str {
    prompt.split(['‘', '’']).nth(2 * n + 1).unwrap_or("")
}

impl ChatBackend for Overlap {
    async fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let (a, b) = (quoted(prompt, 0).to_lowercase(), quoted(prompt, 1).to_lowercase());
        let gen: Vec<&str> = b.split_whitespace().collect();
        let shared = gen.iter().filter(|w| a.split_whitespace().any(|x| x == **w)).count();
        Ok(if 2 * shared >= gen.len().max(1) { "Yes." } else { "No." }.to_string())
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let items = vec![
        JudgeItem {
            item_id: "harbor01".into(),
            ground_truths: vec!["boats are docked in the harbor".into()],
            generated: "many boats docked in a harbor".into(),
        },
        JudgeItem {
            item_id: "desert04".into(),
            ground_truths: vec!["a stretch of bare desert".into()],
            generated: "a dense green forest with a road".into(),
        },
    ];
    let dir = std::env::temp_dir().join(format!("skyeye-judge-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("verdicts.jsonl");

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let (verdicts, summary) = rt.block_on(judge_corpus(&items, &JudgeConfig::default(), Overlap, Some(&log)))?;
    for v in &verdicts {
        println!("{:<10} {:?} {:?}", v.item_id, v.variant, v.verdict);
    }
    println!("Acc1 {:.2}  Acc2 {:.2}", 100.0 * summary.accuracy_1, 100.0 * summary.accuracy_2);
    assert_eq!(reaggregate(&log)?, summary);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
