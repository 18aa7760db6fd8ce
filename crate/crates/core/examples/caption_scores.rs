// Corpus-level captioning metrics on a handful of hand-written captions.

use skyeye_forge::metrics::{bleu_all, cider, meteor_lite, rouge_l, CaptionItem};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = vec![
        CaptionItem::new(
            "many planes are parked near the terminal",
            &["several planes are parked next to the terminal", "some airplanes parked at an airport"],
        ),
        CaptionItem::new(
            "a river runs through the green forest",
            &["a river goes through a dense forest", "green trees on both sides of a river"],
        ),
        CaptionItem::new("there is a baseball field", &["a baseball diamond surrounded by grass"]),
    ];
    let b = bleu_all(&corpus)?;
    for (n, v) in b.iter().enumerate() {
        println!("BLEU-{}  {:6.2}", n + 1, 100.0 * v);
    }
    println!("METEOR  {:6.2}", 100.0 * meteor_lite(&corpus)?);
    println!("ROUGE-L {:6.2}", 100.0 * rouge_l(&corpus)?);
    println!("CIDEr   {:6.2}", 100.0 * cider(&corpus)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
