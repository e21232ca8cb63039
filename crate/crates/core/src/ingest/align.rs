//! Conversion of timed notes and chord rows onto the beat grid.

use serde::Serialize;

use crate::embed::{ChordJson, NoteJson, Piece};
use crate::ingest::annotation::{AnnotationRow, BeatGrid};

/// How far past the last beat events are still extrapolated.
pub const MAX_EXTRAPOLATION_BEATS: f64 = 4.0;

/// A melody note in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedNote {
    pub pitch: u8,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestWarning {
    DroppedEvent { piece: String, what: String, seconds: f64, reason: String },
    UnknownSymbol { piece: String, line: usize, symbol: String },
    MissingFile { piece: String, path: String },
}

/// Rounds to the nearest multiple of `u`, halves going up.
pub fn snap(beats: f64, u: f64) -> f64 {
    (beats / u + 0.5 + 1e-9).floor() * u
}

fn in_window(beats: f64, grid: &BeatGrid) -> bool {
    beats >= -1e-9 && beats <= grid.last_beat() + MAX_EXTRAPOLATION_BEATS
}

/// Builds a piece from seconds-based notes and chord rows.
///
/// Notes keep their exact beat positions. Chord boundaries snap to the
/// `u` grid; silent ("N") rows and spans that collapse are dropped and a
/// span overlapping the next one after snapping is cut at its start.
pub fn align_to_grid(
    id: &str,
    notes: &[TimedNote],
    chords: &[AnnotationRow],
    grid: &BeatGrid,
    u: f64,
) -> (Piece, Vec<IngestWarning>) {
    let mut warnings = Vec::new();
    let mut drop = |what: String, seconds: f64, reason: &str| {
        warnings.push(IngestWarning::DroppedEvent { piece: id.to_string(), what, seconds, reason: reason.to_string() })
    };
    let mut melody_notes = Vec::new();
    for n in notes {
        let (b0, b1) = (grid.to_beats(n.start), grid.to_beats(n.end));
        if !in_window(b0, grid) || !in_window(b1, grid) {
            drop(format!("note {}", n.pitch), n.start, "outside the beat grid");
        } else if b1 - b0 <= 1e-9 {
            drop(format!("note {}", n.pitch), n.start, "zero duration");
        } else {
            melody_notes.push(NoteJson { pitch: n.pitch, onset_beats: b0.max(0.0), value_beats: b1 - b0.max(0.0) });
        }
    }
    let mut rows: Vec<&AnnotationRow> = chords.iter().collect();
    rows.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut spans: Vec<ChordJson> = Vec::new();
    for row in rows {
        if row.pitch_classes.is_empty() {
            continue;
        }
        let (b0, b1) = (grid.to_beats(row.start), grid.to_beats(row.end));
        if !in_window(b0, grid) || !in_window(b1, grid) {
            drop(format!("chord {}", row.symbol), row.start, "outside the beat grid");
            continue;
        }
        let (s0, s1) = (snap(b0, u), snap(b1, u));
        if s1 - s0 < u / 2.0 {
            drop(format!("chord {}", row.symbol), row.start, "shorter than one step after snapping");
            continue;
        }
        if let Some(prev) = spans.last_mut() {
            let prev_end = prev.onset_beats + prev.value_beats;
            if prev_end > s0 + 1e-9 {
                prev.value_beats = s0 - prev.onset_beats;
            }
        }
        if let Some(gone) = spans.pop_if(|p| p.value_beats < u / 2.0) {
            drop(format!("chord {:?}", gone.pitch_classes), row.start, "fully covered by the next span after snapping");
        }
        spans.push(ChordJson { pitch_classes: row.pitch_classes.clone(), onset_beats: s0, value_beats: s1 - s0 });
    }
    let piece = Piece { id: id.to_string(), u_beats: u, melody_notes, chords: spans };
    (piece, warnings)
}
