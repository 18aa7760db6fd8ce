//! Curator decisions and the append-only decision log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ConversationTurn, InstructionSample, ReviewState, TaskKind, Validate, ValidationError};
use crate::geotext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Edit,
}

impl Verdict {
    pub fn resulting_state(self) -> ReviewState {
        match self {
            Verdict::Accept => ReviewState::Accepted,
            Verdict::Reject => ReviewState::Rejected,
            Verdict::Edit => ReviewState::Edited,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub sample_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_turns: Option<Vec<ConversationTurn>>,
    pub reviewer: String,
    /// RFC 3339.
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReviewDecision {
    /// Same decision content, ignoring when it was made.
    pub fn same_content(&self, other: &ReviewDecision) -> bool {
        self.sample_id == other.sample_id
            && self.verdict == other.verdict
            && self.edited_turns == other.edited_turns
            && self.reviewer == other.reviewer
            && self.note == other.note
    }

    /// Field-level checks that do not need the target sample.
    pub fn validate_shape(&self) -> Result<(), ValidationError> {
        if self.sample_id.is_empty() {
            return Err(ValidationError::new("sample_id", "must be non-empty"));
        }
        if self.reviewer.trim().is_empty() {
            return Err(ValidationError::new("reviewer", "must be non-empty"));
        }
        chrono::DateTime::parse_from_rfc3339(&self.timestamp)
            .map_err(|e| ValidationError::new("timestamp", format!("not RFC 3339: {e}")))?;
        match (self.verdict, &self.edited_turns) {
            (Verdict::Edit, None) => Err(ValidationError::new("edited_turns", "required for an edit")),
            (Verdict::Edit, Some(t)) if t.is_empty() => {
                Err(ValidationError::new("edited_turns", "needs at least one turn"))
            }
            (Verdict::Accept | Verdict::Reject, Some(_)) => Err(ValidationError::new(
                "edited_turns",
                "only allowed when verdict is edit",
            )),
            _ => Ok(()),
        }
    }
}

/// Applies an edit to `sample`, producing the re-hashed replacement.
///
/// Box-carrying turns must still hold well-formed box text: grounding and
/// phrase-grounding answers, and referring-expression instructions.
pub fn apply_edit(sample: &InstructionSample, turns: &[ConversationTurn]) -> Result<InstructionSample, ValidationError> {
    for (i, t) in turns.iter().enumerate() {
        let boxed = match t.kind {
            TaskKind::VisualGrounding | TaskKind::PhraseGrounding => Some(("answer_text", &t.answer_text)),
            TaskKind::ReferringExpressionGeneration => Some(("instruction_text", &t.instruction_text)),
            _ => None,
        };
        if let Some((field, text)) = boxed {
            let path = format!("edited_turns[{i}].{field}");
            let boxes = geotext::parse_boxes_strict(text).map_err(|e| ValidationError::new(&path, e.to_string()))?;
            if boxes.is_empty() {
                return Err(ValidationError::new(path, "must contain at least one {<x1><y1><x2><y2>} box"));
            }
        }
    }
    let mut edited = InstructionSample::new(
        sample.media.clone(),
        turns.to_vec(),
        sample.stage_tags.clone(),
        sample.source_recipe.clone(),
    );
    edited.review_state = ReviewState::Edited;
    edited.edited_from = Some(sample.edited_from.clone().unwrap_or_else(|| sample.sample_id.clone()));
    edited
        .validate()
        .map_err(|e| ValidationError::new(format!("edited_turns.{}", e.field.trim_start_matches("turns.")), e.message))?;
    Ok(edited)
}

/// Latest decision per sample id: newest timestamp, later log position
/// breaking ties. The result is the same for the log and for its
/// timestamp-ordered export.
pub fn latest_decisions(log: &[ReviewDecision]) -> HashMap<&str, &ReviewDecision> {
    let mut latest = HashMap::new();
    for d in export_order(log) {
        latest.insert(d.sample_id.as_str(), d);
    }
    latest
}

/// Decisions sorted by timestamp, ties kept in log order.
pub fn export_order(log: &[ReviewDecision]) -> Vec<&ReviewDecision> {
    let mut out: Vec<(usize, &ReviewDecision)> = log.iter().enumerate().collect();
    out.sort_by(|(ia, a), (ib, b)| {
        let ta = chrono::DateTime::parse_from_rfc3339(&a.timestamp).ok();
        let tb = chrono::DateTime::parse_from_rfc3339(&b.timestamp).ok();
        ta.cmp(&tb).then(ia.cmp(ib))
    });
    out.into_iter().map(|(_, d)| d).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// Append-only JSONL decision log. Each decision is one `write` call of a
/// complete line followed by a flush and `fsync`.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (creating if needed) and replays the existing log. A torn final
    /// line from an interrupted write is ignored.
    pub fn open(path: &Path) -> Result<(Self, Vec<ReviewDecision>), LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        let existing = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let decisions = parse_log(path, &existing)?;
        let mut tail_complete = false;
        if !existing.is_empty() && !existing.ends_with('\n') {
            let keep = existing.rfind('\n').map_or(0, |i| i + 1);
            tail_complete = serde_json::from_str::<ReviewDecision>(&existing[keep..]).is_ok();
            if !tail_complete {
                // drop a torn final line so the next append starts cleanly
                OpenOptions::new()
                    .write(true)
                    .open(path)
                    .and_then(|f| f.set_len(keep as u64))
                    .map_err(io)?;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if tail_complete {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok((
            DecisionLog {
                path: path.to_path_buf(),
                file,
            },
            decisions,
        ))
    }

    pub fn append(&mut self, decision: &ReviewDecision) -> Result<(), LogError> {
        let mut line = serde_json::to_string(decision).expect("decisions serialize");
        line.push('\n');
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_log(path: &Path) -> Result<Vec<ReviewDecision>, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(path, &text)
}

fn parse_log(path: &Path, text: &str) -> Result<Vec<ReviewDecision>, LogError> {
    let torn_tail = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(d) => out.push(d),
            Err(_) if torn_tail && i + 1 == lines.len() => break,
            Err(source) => {
                return Err(LogError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}
