//! Melody and chord embedding on a grid of `u` beats.
//!
//! A piece becomes a melody matrix `M` (12×T, entries in [0, 1]), a binary
//! chord matrix `C` (12×T) and per-step loss weights `w`.

use serde::{Deserialize, Serialize};

use crate::error::EmbedError;
use crate::group::{GroupElement, PITCH_CLASSES};
use crate::tensor::Tensor;

/// Tolerance, in steps, for treating a chord boundary as on-grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Note {
    pub pitch_class: usize,
    pub octave: i32,
    pub onset: f64,
    pub value: f64,
}

impl Note {
    /// From a MIDI note number; MIDI 60 (C4) is pitch class 0, octave 4.
    pub fn from_midi(pitch: u8, onset: f64, value: f64) -> Self {
        Self { pitch_class: pitch as usize % 12, octave: pitch as i32 / 12 - 1, onset, value }
    }

    pub fn offset(&self) -> f64 {
        self.onset + self.value
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChordSpan {
    /// Sorted, deduplicated; empty means silence.
    pub pitch_classes: Vec<usize>,
    pub onset: f64,
    pub value: f64,
}

impl ChordSpan {
    pub fn offset(&self) -> f64 {
        self.onset + self.value
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceTensor {
    pub id: String,
    pub u: f64,
    /// 12×T
    pub melody: Tensor,
    /// 12×T, binary
    pub chords: Tensor,
    pub weights: Vec<f64>,
}

impl PieceTensor {
    pub fn steps(&self) -> usize {
        self.weights.len()
    }
}

fn check_grid(u: f64, steps: usize) -> Result<(), EmbedError> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(EmbedError::NonPositiveStep(u));
    }
    if steps == 0 {
        return Err(EmbedError::NoSteps);
    }
    Ok(())
}

/// Length of `[a0, a1) ∩ [b0, b1)`, clamped at zero.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Column k holds each pitch class's share of `((k−1)u, ku)`; simultaneous
/// notes in one class add up and the result is clipped to 1.
pub fn embed_melody(notes: &[Note], u: f64, steps: usize) -> Result<Tensor, EmbedError> {
    check_grid(u, steps)?;
    let mut m = Tensor::zeros(&[PITCH_CLASSES, steps]);
    for note in notes {
        if note.pitch_class >= PITCH_CLASSES || !(note.value > 0.0) || !note.onset.is_finite() {
            return Err(EmbedError::InvalidNote(format!("{note:?}")));
        }
        let first = ((note.onset / u).floor().max(0.0)) as usize;
        let last = ((note.offset() / u).ceil().max(0.0) as usize).min(steps);
        for k in first..last {
            let share = overlap(k as f64 * u, (k + 1) as f64 * u, note.onset, note.offset()) / u;
            let cell = m.at(note.pitch_class, k) + share;
            m.set(note.pitch_class, k, cell);
        }
    }
    for x in m.data_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(m)
}

fn grid_index(beats: f64, u: f64) -> Option<usize> {
    let pos = beats / u;
    let rounded = pos.round();
    ((pos - rounded).abs() <= GRID_TOL && rounded >= 0.0).then_some(rounded as usize)
}

/// Binary chord matrix; boundaries must sit on the grid and spans must not
/// overlap. Steps past `steps` are ignored.
pub fn embed_chords(chords: &[ChordSpan], u: f64, steps: usize) -> Result<Tensor, EmbedError> {
    check_grid(u, steps)?;
    let alignment = |c: &ChordSpan, reason: &str| EmbedError::Alignment {
        onset: c.onset,
        offset: c.offset(),
        reason: reason.to_string(),
    };
    let mut sorted: Vec<&ChordSpan> = chords.iter().collect();
    sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let mut out = Tensor::zeros(&[PITCH_CLASSES, steps]);
    let mut prev_end = 0usize;
    for c in sorted {
        if !(c.value > 0.0) {
            return Err(alignment(c, "has non-positive value"));
        }
        let start = grid_index(c.onset, u).ok_or_else(|| alignment(c, "starts off the grid"))?;
        let end = grid_index(c.offset(), u).ok_or_else(|| alignment(c, "ends off the grid"))?;
        if start < prev_end {
            return Err(alignment(c, "overlaps the previous span"));
        }
        prev_end = end;
        for &pc in &c.pitch_classes {
            if pc >= PITCH_CLASSES {
                return Err(alignment(c, "has a pitch class outside 0..11"));
            }
            for k in start..end.min(steps) {
                out.set(pc, k, 1.0);
            }
        }
    }
    Ok(out)
}

/// 2 at the first step and wherever the chord column changes, else 1.
pub fn loss_weights(chords: &Tensor) -> Vec<f64> {
    let steps = chords.cols();
    (0..steps)
        .map(|j| {
            let changed = j == 0 || (0..PITCH_CLASSES).any(|i| chords.at(i, j) != chords.at(i, j - 1));
            if changed {
                2.0
            } else {
                1.0
            }
        })
        .collect()
}

/// `M ↦ D^perm(g)M`, `C ↦ D^perm(g)C`; weights are unchanged.
pub fn transform_piece(g: GroupElement, piece: &PieceTensor) -> PieceTensor {
    PieceTensor {
        id: piece.id.clone(),
        u: piece.u,
        melody: g.permute_rows(&piece.melody),
        chords: g.permute_rows(&piece.chords),
        weights: piece.weights.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteJson {
    pub pitch: u8,
    pub onset_beats: f64,
    pub value_beats: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordJson {
    pub pitch_classes: Vec<usize>,
    pub onset_beats: f64,
    pub value_beats: f64,
}

/// The interchange format produced by ingestion and consumed by training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub id: String,
    pub u_beats: f64,
    pub melody_notes: Vec<NoteJson>,
    pub chords: Vec<ChordJson>,
}

impl Piece {
    pub fn notes(&self) -> Vec<Note> {
        self.melody_notes.iter().map(|n| Note::from_midi(n.pitch, n.onset_beats, n.value_beats)).collect()
    }

    pub fn chord_spans(&self) -> Vec<ChordSpan> {
        self.chords
            .iter()
            .map(|c| {
                let mut pcs = c.pitch_classes.clone();
                pcs.sort_unstable();
                pcs.dedup();
                ChordSpan { pitch_classes: pcs, onset: c.onset_beats, value: c.value_beats }
            })
            .collect()
    }

    /// `ceil(last offset / u)` over melody and chords, at least 1.
    pub fn steps(&self) -> usize {
        let last = self
            .melody_notes
            .iter()
            .map(|n| n.onset_beats + n.value_beats)
            .chain(self.chords.iter().map(|c| c.onset_beats + c.value_beats))
            .fold(0.0, f64::max);
        let steps = (last / self.u_beats - GRID_TOL).ceil();
        (steps.max(1.0)) as usize
    }

    pub fn to_tensor(&self) -> Result<PieceTensor, EmbedError> {
        check_grid(self.u_beats, 1)?;
        let steps = self.steps();
        let melody = embed_melody(&self.notes(), self.u_beats, steps)?;
        let chords = embed_chords(&self.chord_spans(), self.u_beats, steps)?;
        let weights = loss_weights(&chords);
        Ok(PieceTensor { id: self.id.clone(), u: self.u_beats, melody, chords, weights })
    }

    /// Applies `g` to every pitch class, keeping each note's octave.
    pub fn transformed(&self, g: GroupElement) -> Piece {
        let melody_notes = self
            .melody_notes
            .iter()
            .map(|n| {
                let pc = n.pitch as usize % 12;
                let moved = n.pitch as i32 - pc as i32 + g.act(pc) as i32;
                NoteJson { pitch: moved as u8, ..n.clone() }
            })
            .collect();
        let chords = self
            .chords
            .iter()
            .map(|c| {
                let mut pitch_classes: Vec<usize> = c.pitch_classes.iter().map(|&k| g.act(k % 12)).collect();
                pitch_classes.sort_unstable();
                ChordJson { pitch_classes, ..c.clone() }
            })
            .collect();
        Piece { id: self.id.clone(), u_beats: self.u_beats, melody_notes, chords }
    }
}

/// Merges equal consecutive columns of a binary chord matrix back into
/// spans. Silent stretches produce no span.
pub fn chord_spans_from_matrix(chords: &Tensor, u: f64) -> Vec<ChordJson> {
    let mut spans: Vec<ChordJson> = Vec::new();
    let mut current: Option<(Vec<usize>, usize)> = None;
    let steps = chords.cols();
    for k in 0..=steps {
        let column: Option<Vec<usize>> =
            (k < steps).then(|| (0..PITCH_CLASSES).filter(|&i| chords.at(i, k) > 0.5).collect());
        let same = matches!((&current, &column), (Some((c, _)), Some(col)) if c == col);
        if same {
            continue;
        }
        if let Some((pcs, start)) = current.take() {
            if !pcs.is_empty() {
                spans.push(ChordJson {
                    pitch_classes: pcs,
                    onset_beats: start as f64 * u,
                    value_beats: (k - start) as f64 * u,
                });
            }
        }
        current = column.map(|c| (c, k));
    }
    spans
}

/// Reads one piece per file (a JSON object) or many (JSON lines).
pub fn parse_pieces(text: &str) -> Result<Vec<Piece>, serde_json::Error> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        if let Ok(p) = serde_json::from_str::<Piece>(text) {
            return Ok(vec![p]);
        }
    }
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
