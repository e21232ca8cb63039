//! Chord annotation (`start end symbol` per line, seconds) and beat grid
//! text formats.

use serde::{Deserialize, Serialize};

use crate::error::AnnotationError;

/// Bumped whenever [`CHORD_TABLE`] changes.
pub const CHORD_TABLE_VERSION: u32 = 1;

/// Quality name to intervals above the root.
pub const CHORD_TABLE: &[(&str, &[usize])] = &[
    ("maj", &[0, 4, 7]),
    ("min", &[0, 3, 7]),
    ("7", &[0, 4, 7, 10]),
    ("maj7", &[0, 4, 7, 11]),
    ("min7", &[0, 3, 7, 10]),
    ("dim", &[0, 3, 6]),
    ("aug", &[0, 4, 8]),
    ("sus2", &[0, 2, 7]),
    ("sus4", &[0, 5, 7]),
    ("hdim7", &[0, 3, 6, 10]),
    ("dim7", &[0, 3, 6, 9]),
    ("maj6", &[0, 4, 7, 9]),
    ("min6", &[0, 3, 7, 9]),
];

/// What to do with a symbol whose quality is not in the table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Drop the row and warn.
    #[default]
    Skip,
    Fail,
    /// Minor triad on the root if the quality starts with "min", else major.
    RootGuess,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRow {
    pub start: f64,
    pub end: f64,
    pub symbol: String,
    /// Sorted; empty for "N".
    pub pitch_classes: Vec<usize>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRow {
    pub line: usize,
    pub symbol: String,
}

pub fn root_ordinal(name: &str) -> Option<usize> {
    let mut chars = name.chars();
    let base: i32 = match chars.next()? {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut shift = 0;
    for c in chars {
        shift += match c {
            '#' => 1,
            'b' => -1,
            _ => return None,
        };
    }
    Some((base + shift).rem_euclid(12) as usize)
}

/// Parses `root[:quality][(extensions)][/bass]`. Extensions and bass are
/// ignored. `None` for an unreadable root or a quality not in the table.
pub fn chord_pitch_classes(symbol: &str) -> Option<Vec<usize>> {
    if symbol == "N" {
        return Some(Vec::new());
    }
    let body = symbol.split('/').next().unwrap_or("");
    let (root, quality) = body.split_once(':').unwrap_or((body, "maj"));
    let root = root_ordinal(root)?;
    let quality = quality.split('(').next().unwrap_or("");
    let quality = if quality.is_empty() { "maj" } else { quality };
    CHORD_TABLE.iter().find(|(q, _)| *q == quality).map(|(_, iv)| {
        let mut pcs: Vec<usize> = iv.iter().map(|i| (root + i) % 12).collect();
        pcs.sort_unstable();
        pcs
    })
}

fn guess(symbol: &str) -> Option<Vec<usize>> {
    let body = symbol.split('/').next()?;
    let (root, quality) = body.split_once(':').unwrap_or((body, ""));
    let root = root_ordinal(root)?;
    let third = if quality.starts_with("min") { 3 } else { 4 };
    let mut pcs = vec![root, (root + third) % 12, (root + 7) % 12];
    pcs.sort_unstable();
    Some(pcs)
}

fn parse_number(field: &str, line: usize) -> Result<f64, AnnotationError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| AnnotationError::Syntax { line, message: format!("not a finite number: {field:?}") })
}

/// Parses chord annotation text. Rows must be sorted and non-overlapping.
/// Returns the kept rows and the rows skipped for unknown symbols.
pub fn parse_chord_annotation(
    text: &str,
    policy: UnknownPolicy,
) -> Result<(Vec<AnnotationRow>, Vec<SkippedRow>), AnnotationError> {
    const TOL: f64 = 1e-9;
    let mut rows: Vec<AnnotationRow> = Vec::new();
    let mut skipped = Vec::new();
    let mut prev_end: Option<f64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [start, end, symbol] = fields[..] else {
            return Err(AnnotationError::Syntax {
                line,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        };
        let (start, end) = (parse_number(start, line)?, parse_number(end, line)?);
        if start >= end {
            return Err(AnnotationError::Syntax {
                line,
                message: format!("span start {start} is not before end {end}"),
            });
        }
        if let Some(p) = prev_end {
            if start < p - TOL {
                return Err(AnnotationError::Overlap { line, start, prev_end: p });
            }
        }
        prev_end = Some(end);
        let pcs = match chord_pitch_classes(symbol) {
            Some(p) => Some(p),
            None if policy == UnknownPolicy::RootGuess => guess(symbol),
            None => None,
        };
        match pcs {
            Some(pitch_classes) => {
                rows.push(AnnotationRow { start, end, symbol: symbol.to_string(), pitch_classes, line })
            }
            None if policy == UnknownPolicy::Fail => {
                return Err(AnnotationError::UnknownSymbol { line, symbol: symbol.to_string() })
            }
            None => skipped.push(SkippedRow { line, symbol: symbol.to_string() }),
        }
    }
    Ok((rows, skipped))
}

/// Beat times in seconds, strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatGrid {
    times: Vec<f64>,
}

impl BeatGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, AnnotationError> {
        if times.len() < 2 {
            return Err(AnnotationError::BeatGrid(format!("need at least 2 beats, got {}", times.len())));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(AnnotationError::BeatGrid(format!(
                "beat {} at {} does not follow {}",
                i + 1,
                times[i + 1],
                times[i]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(AnnotationError::BeatGrid("non-finite beat time".into()));
        }
        Ok(Self { times })
    }

    /// One beat per line; only the first column (seconds) is read.
    pub fn parse(text: &str) -> Result<Self, AnnotationError> {
        let mut times = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let first = content.split_whitespace().next().unwrap_or("");
            times.push(parse_number(first, i + 1)?);
        }
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Beats since the first beat, linear between beat times and
    /// extrapolated with the first or last inter-beat interval outside.
    pub fn to_beats(&self, seconds: f64) -> f64 {
        let t = &self.times;
        let n = t.len();
        let i = t.partition_point(|&b| b <= seconds);
        let seg = i.clamp(1, n - 1) - 1;
        seg as f64 + (seconds - t[seg]) / (t[seg + 1] - t[seg])
    }

    /// Index of the last beat.
    pub fn last_beat(&self) -> f64 {
        (self.times.len() - 1) as f64
    }
}
