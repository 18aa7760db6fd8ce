// Turning task content into instruction turns and a single multi-turn
// training string, then recovering the turns from it.

use skyeye_forge::domain::TaskKind;
use skyeye_forge::templating::{build_turn, recover_turns, render_conversation, PoolSet, RenderOptions, TurnContent};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let pools = PoolSet::builtin();
    let opts = RenderOptions::default();
    let contents = [
        TurnContent::new(TaskKind::ImageCaption, "Many cars are parked in rows beside a building."),
        TurnContent::new(TaskKind::Vqa, "yes").with_query("Is there a road in the image?"),
        TurnContent::new(TaskKind::VisualGrounding, "{<12><40><35><61>}").with_expression("the white car at the left"),
    ];
    let turns = contents
        .iter()
        .enumerate()
        .map(|(i, c)| build_turn(c, &pools, 7 + i as u64, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    for t in &turns {
        println!("{:<18} {}", t.kind.as_str(), t.instruction_text);
    }

    let rendered = render_conversation(&turns, "<Img><ImageHere></Img>")?;
    println!("\n{}\n", rendered.text);
    let back = recover_turns(&rendered.text, "<Img><ImageHere></Img>")?;
    assert_eq!(back.len(), turns.len());
    for ((i, a), t) in back.iter().zip(&turns) {
        assert_eq!((i.as_str(), a.as_str()), (t.instruction_text.as_str(), t.answer_text.as_str()));
    }
    println!("recovered {} turns exactly", back.len());

    let plain = RenderOptions {
        identifiers_enabled: false,
        ..RenderOptions::default()
    };
    let bare = build_turn(&contents[2], &pools, 9, &plain)?;
    println!("without identifiers: {}", bare.instruction_text);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
