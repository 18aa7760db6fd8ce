// Acc@0.5 for box predictions and per-category VQA accuracy.

use skyeye_forge::domain::PixelBox;
use skyeye_forge::metrics::{grounding_accuracy, vqa_accuracy, GroundingItem, GtSpace, VqaItem};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let gt = PixelBox::new(200.0, 200.0, 400.0, 400.0);
    let item = |pred: &str| GroundingItem {
        prediction_text: pred.into(),
        gt_box: gt,
        width: 800,
        height: 800,
    };
    let items = [
        item("{<25><25><50><50>}"),
        item("It is at {<27><27><52><52>}."),
        item("{<40><40><60><60>}"),
        item("the storage tank in the middle"),
    ];
    for space in [GtSpace::Grid, GtSpace::Continuous] {
        let s = grounding_accuracy(&items, 0.5, space);
        println!(
            "{space:?}: Acc@0.5 {:.2}%, {} parse failure(s)",
            100.0 * s.accuracy,
            s.parse_failures
        );
    }

    let qa = |pred: &str, gt: &str, cat: &str| VqaItem {
        prediction_text: pred.into(),
        gt_answer: gt.into(),
        category: Some(cat.into()),
    };
    let score = vqa_accuracy(&[
        qa("Yes.", "yes", "presence"),
        qa("no", "no", "presence"),
        qa("yes", "no", "comparison"),
        qa("rural", "rural", "rural_urban"),
    ]);
    for (cat, acc) in &score.per_category {
        println!("{cat:<12} {:.2}", 100.0 * acc);
    }
    println!("average     {:.2} (pooled {:.2})", 100.0 * score.macro_average, 100.0 * score.micro_average);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
