// Pixel box → `{<x1><y1><x2><y2>}` text → back, and what parsing makes of
// free-form model output.

use skyeye_forge::domain::PixelBox;
use skyeye_forge::geotext::{dequantize_box, parse_boxes, parse_boxes_with, quantize_box, serialize_box_group, ParseMode};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (800, 600);
    let planes = [PixelBox::new(120.0, 90.0, 260.0, 180.0), PixelBox::new(400.0, 300.0, 520.0, 410.0)];
    let quantized = planes.iter().map(|b| quantize_box(b, w, h)).collect::<Result<Vec<_>, _>>()?;
    let text = serialize_box_group(&quantized)?;
    println!("serialized: {text}");

    let back = parse_boxes(&text);
    assert_eq!(back.boxes, quantized);
    for (orig, q) in planes.iter().zip(&back.boxes) {
        let u = dequantize_box(q);
        println!(
            "({:.0},{:.0},{:.0},{:.0}) -> {q:?} -> ({:.3},{:.3},{:.3},{:.3})",
            orig.x1, orig.y1, orig.x2, orig.y2, u.x1, u.y1, u.x2, u.y2
        );
    }

    let answer = "The plane is at {<15><15><33><30>} and maybe {<90><10><20><30>}.";
    let parsed = parse_boxes(answer);
    println!("model output: {} box(es), {} malformed", parsed.boxes.len(), parsed.malformed);
    let lenient = parse_boxes_with("<10><20><30><40>", ParseMode::Lenient)?;
    println!("lenient, no braces: {:?}", lenient.boxes);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
