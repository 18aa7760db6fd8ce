//! Box coordinate grammar: `{<x1><y1><x2><y2>}` with integer coordinates
//! in the 0–100 normalized space.
//!
//! Quantization divides by the media extent, scales by 100 and rounds half
//! away from zero. The serialized string is a wire format shared with the
//! evaluator and the review service, so it must stay bit-exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{BoxError, PixelBox};

pub const GRID_MAX: u8 = 100;
pub const DEFAULT_DELIMITER: &str = "<delim>";

/// Longest digit run accepted inside `<...>`; anything longer is malformed.
const MAX_DIGITS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedBox {
    pub x1: u8,
    pub y1: u8,
    pub x2: u8,
    pub y2: u8,
}

impl QuantizedBox {
    /// Checked constructor: coordinates in `[0, 100]`, `x1 <= x2`, `y1 <= y2`.
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, GeoError> {
        let max = GRID_MAX as u32;
        if x1 > max || y1 > max || x2 > max || y2 > max {
            return Err(GeoError::OutOfRange);
        }
        if x2 < x1 {
            return Err(GeoError::Inverted { axis: 'x' });
        }
        if y2 < y1 {
            return Err(GeoError::Inverted { axis: 'y' });
        }
        Ok(QuantizedBox {
            x1: x1 as u8,
            y1: y1 as u8,
            x2: x2 as u8,
            y2: y2 as u8,
        })
    }
}

impl fmt::Display for QuantizedBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{<{}><{}><{}><{}>}}", self.x1, self.y1, self.x2, self.y2)
    }
}

/// A box in the unit square, used for IoU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl UnitBox {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeoError {
    #[error("degenerate box")]
    Degenerate,
    #[error("out of bounds")]
    OutOfBounds,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("coordinate outside [0, 100]")]
    OutOfRange,
    #[error("{axis}2 < {axis}1")]
    Inverted { axis: char },
    #[error("empty box group")]
    EmptyGroup,
    #[error("malformed box group at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

impl From<BoxError> for GeoError {
    fn from(e: BoxError) -> Self {
        match e {
            BoxError::Degenerate => GeoError::Degenerate,
            BoxError::OutOfBounds { .. } => GeoError::OutOfBounds,
            BoxError::NonFinite => GeoError::NonFinite,
        }
    }
}

fn quantize_coord(coord: f64, extent: u32) -> u8 {
    let scaled = (coord * 100.0 / extent as f64).round();
    scaled.clamp(0.0, GRID_MAX as f64) as u8
}

pub fn quantize_box(bbox: &PixelBox, width: u32, height: u32) -> Result<QuantizedBox, GeoError> {
    bbox.check_within(width, height)?;
    Ok(QuantizedBox {
        x1: quantize_coord(bbox.x1, width),
        y1: quantize_coord(bbox.y1, height),
        x2: quantize_coord(bbox.x2, width),
        y2: quantize_coord(bbox.y2, height),
    })
}

pub fn serialize_box(qbox: &QuantizedBox) -> String {
    qbox.to_string()
}

pub fn serialize_box_group(boxes: &[QuantizedBox]) -> Result<String, GeoError> {
    serialize_box_group_with(boxes, DEFAULT_DELIMITER)
}

pub fn serialize_box_group_with(boxes: &[QuantizedBox], delimiter: &str) -> Result<String, GeoError> {
    if boxes.is_empty() {
        return Err(GeoError::EmptyGroup);
    }
    Ok(boxes
        .iter()
        .map(serialize_box)
        .collect::<Vec<_>>()
        .join(delimiter))
}

pub fn dequantize_box(qbox: &QuantizedBox) -> UnitBox {
    UnitBox {
        x1: qbox.x1 as f64 / 100.0,
        y1: qbox.y1 as f64 / 100.0,
        x2: qbox.x2 as f64 / 100.0,
        y2: qbox.y2 as f64 / 100.0,
    }
}

/// Normalizes a pixel box by its media extent into the unit square.
pub fn normalize_box(bbox: &PixelBox, width: u32, height: u32) -> UnitBox {
    UnitBox {
        x1: bbox.x1 / width as f64,
        y1: bbox.y1 / height as f64,
        x2: bbox.x2 / width as f64,
        y2: bbox.y2 / height as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Braced groups only; malformed groups are counted and skipped.
    #[default]
    Standard,
    /// Like `Standard`, but the first malformed group is an error.
    Strict,
    /// Also accepts brace-less `<x1><y1><x2><y2>` runs.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedBoxes {
    pub boxes: Vec<QuantizedBox>,
    pub malformed: usize,
}

/// Extracts every box group from free text, left to right.
pub fn parse_boxes(text: &str) -> ParsedBoxes {
    parse_boxes_with(text, ParseMode::Standard).expect("only strict mode can fail")
}

pub fn parse_boxes_strict(text: &str) -> Result<Vec<QuantizedBox>, GeoError> {
    parse_boxes_with(text, ParseMode::Strict).map(|p| p.boxes)
}

pub fn parse_boxes_with(text: &str, mode: ParseMode) -> Result<ParsedBoxes, GeoError> {
    let bytes = text.as_bytes();
    let mut out = ParsedBoxes::default();
    let mut i = 0;
    while i < bytes.len() {
        let attempt = match bytes[i] {
            b'{' => scan_group(bytes, i + 1).and_then(|(vals, end)| {
                (bytes.get(end) == Some(&b'}')).then_some((vals, end + 1))
            }),
            b'<' if mode == ParseMode::Lenient => scan_group(bytes, i),
            _ => None,
        };
        let Some((vals, end)) = attempt else {
            i += 1;
            continue;
        };
        match vals {
            Ok([x1, y1, x2, y2]) => match QuantizedBox::new(x1, y1, x2, y2) {
                Ok(b) => out.boxes.push(b),
                Err(e) => {
                    if mode == ParseMode::Strict {
                        return Err(GeoError::Malformed {
                            offset: i,
                            reason: e.to_string(),
                        });
                    }
                    out.malformed += 1;
                }
            },
            Err(()) => {
                if mode == ParseMode::Strict {
                    return Err(GeoError::Malformed {
                        offset: i,
                        reason: "coordinate too long".into(),
                    });
                }
                out.malformed += 1;
            }
        }
        i = end;
    }
    Ok(out)
}

/// Scans four `<digits>` at `start`. Returns the values (or `Err` when a
/// digit run is too long to be a coordinate) and the index after the last `>`.
#[allow(clippy::type_complexity)]
fn scan_group(bytes: &[u8], start: usize) -> Option<(Result<[u32; 4], ()>, usize)> {
    let mut vals = [0u32; 4];
    let mut too_long = false;
    let mut pos = start;
    for v in vals.iter_mut() {
        if bytes.get(pos) != Some(&b'<') {
            return None;
        }
        pos += 1;
        let digits_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let len = pos - digits_start;
        if len == 0 || bytes.get(pos) != Some(&b'>') {
            return None;
        }
        if len > MAX_DIGITS {
            too_long = true;
        } else {
            *v = std::str::from_utf8(&bytes[digits_start..pos])
                .ok()?
                .parse()
                .ok()?;
        }
        pos += 1;
    }
    Some((if too_long { Err(()) } else { Ok(vals) }, pos))
}
