//! From MIDI files and annotation text to Piece JSON.

pub mod align;
pub mod annotation;
pub mod smf;
pub mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::embed::Piece;
use crate::error::IngestError;
use align::{align_to_grid, IngestWarning, TimedNote};
use annotation::{parse_chord_annotation, BeatGrid, UnknownPolicy};
use smf::{parse_smf, track_name, track_notes, Smf, TempoMap};

pub use align::MAX_EXTRAPOLATION_BEATS;
pub use split::{split_dataset, Split};

/// The track named "MELODY" (any case), else the first track with notes.
pub fn melody_track(smf: &Smf) -> Result<usize, IngestError> {
    if let Some(i) = smf.tracks.iter().position(|t| track_name(t).is_some_and(|n| n.eq_ignore_ascii_case("melody"))) {
        return Ok(i);
    }
    smf.tracks.iter().position(|t| !track_notes(t).is_empty()).ok_or(IngestError::NoMelody)
}

/// Melody notes of a parsed file in seconds.
pub fn melody_notes(smf: &Smf) -> Result<Vec<TimedNote>, IngestError> {
    let tempo = TempoMap::new(smf)?;
    let track = &smf.tracks[melody_track(smf)?];
    Ok(track_notes(track)
        .into_iter()
        .map(|n| TimedNote { pitch: n.key, start: tempo.seconds(n.start), end: tempo.seconds(n.end) })
        .collect())
}

/// One piece from in-memory file contents.
pub fn ingest_piece(
    id: &str,
    midi: &[u8],
    chords: &str,
    beats: &str,
    u: f64,
    policy: UnknownPolicy,
) -> Result<(Piece, Vec<IngestWarning>), IngestError> {
    let smf = parse_smf(midi)?;
    let notes = melody_notes(&smf)?;
    let (rows, skipped) = parse_chord_annotation(chords, policy)?;
    let grid = BeatGrid::parse(beats)?;
    let (piece, mut warnings) = align_to_grid(id, &notes, &rows, &grid, u);
    warnings.extend(skipped.into_iter().map(|s| IngestWarning::UnknownSymbol {
        piece: id.to_string(),
        line: s.line,
        symbol: s.symbol,
    }));
    Ok((piece, warnings))
}

fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>, IngestError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Ingests every `X.mid` in `midi_dir` that has `X.txt` in both annotation
/// directories, in stem order. Unmatched MIDI files become warnings.
pub fn ingest_dirs(
    midi_dir: &Path,
    chord_dir: &Path,
    beat_dir: &Path,
    u: f64,
    policy: UnknownPolicy,
) -> Result<(Vec<Piece>, Vec<IngestWarning>), IngestError> {
    let midis = files_by_stem(midi_dir, &["mid", "midi"])?;
    let chord_files = files_by_stem(chord_dir, &["txt"])?;
    let beat_files = files_by_stem(beat_dir, &["txt"])?;
    let mut pieces = Vec::new();
    let mut warnings = Vec::new();
    for (stem, midi_path) in &midis {
        let (Some(chord_path), Some(beat_path)) = (chord_files.get(stem), beat_files.get(stem)) else {
            let missing = if chord_files.contains_key(stem) { beat_dir } else { chord_dir };
            warnings.push(IngestWarning::MissingFile {
                piece: stem.clone(),
                path: missing.join(format!("{stem}.txt")).display().to_string(),
            });
            continue;
        };
        let in_file =
            |path: &Path, e: IngestError| IngestError::File { path: path.display().to_string(), source: Box::new(e) };
        let midi = fs::read(midi_path).map_err(|e| in_file(midi_path, e.into()))?;
        let chords = fs::read_to_string(chord_path).map_err(|e| in_file(chord_path, e.into()))?;
        let beats = fs::read_to_string(beat_path).map_err(|e| in_file(beat_path, e.into()))?;
        let (piece, w) = ingest_piece(stem, &midi, &chords, &beats, u, policy).map_err(|e| {
            let path = match e {
                IngestError::Smf(_) | IngestError::NoMelody | IngestError::Unsupported(_) => midi_path,
                IngestError::Annotation(crate::error::AnnotationError::BeatGrid(_)) => beat_path,
                _ => chord_path,
            };
            in_file(path, e)
        })?;
        pieces.push(piece);
        warnings.extend(w);
    }
    Ok((pieces, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use smf::{serialize_smf, Division, EventKind, SmfEvent};

    /// Format 1: a tempo track and a track named MELODY with `keys` as
    /// consecutive quarter notes at 120 bpm (0.5 s each).
    pub(crate) fn melody_file(keys: &[u8]) -> Vec<u8> {
        let mut melody = vec![SmfEvent { tick: 0, channel: None, kind: EventKind::TrackName(b"MELODY".to_vec()) }];
        for (i, &key) in keys.iter().enumerate() {
            let t = i as u32 * 480;
            melody.push(SmfEvent { tick: t, channel: Some(0), kind: EventKind::NoteOn { key, velocity: 90 } });
            melody.push(SmfEvent { tick: t + 480, channel: Some(0), kind: EventKind::NoteOff { key, velocity: 0 } });
        }
        let conductor = vec![SmfEvent { tick: 0, channel: None, kind: EventKind::Tempo(500_000) }];
        serialize_smf(&Smf { format: 1, division: Division::TicksPerQuarter(480), tracks: vec![conductor, melody] })
    }

    fn beats(n: usize) -> String {
        (0..n).map(|i| format!("{} 1 0\n", i as f64 * 0.5)).collect()
    }

    #[test]
    fn end_to_end_piece() {
        let midi = melody_file(&[60, 64, 67, 72]);
        let (piece, warnings) =
            ingest_piece("p", &midi, "0.0 1.0 C:maj\n1.0 2.0 G:7\n", &beats(8), 0.5, UnknownPolicy::Skip).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(piece.melody_notes.len(), 4);
        assert!((piece.melody_notes[1].onset_beats - 1.0).abs() < 1e-12);
        assert_eq!(piece.chords[1].pitch_classes, vec![2, 5, 7, 11]);
        assert_eq!((piece.chords[1].onset_beats, piece.chords[1].value_beats), (2.0, 2.0));
        let t = piece.to_tensor().unwrap();
        assert_eq!(t.steps(), 8);
    }

    #[test]
    fn note_count_is_preserved_minus_warned_drops() {
        let keys: Vec<u8> = (0..40).map(|i| 60 + (i % 12) as u8).collect();
        let midi = melody_file(&keys);
        // grid of 20 beats covers 10 s; notes run 20 s, so some fall outside
        let (piece, warnings) = ingest_piece("p", &midi, "", &beats(20), 0.5, UnknownPolicy::Skip).unwrap();
        let drops = warnings.iter().filter(|w| matches!(w, IngestWarning::DroppedEvent { .. })).count();
        assert!(drops > 0);
        assert_eq!(piece.melody_notes.len() + drops, keys.len());
    }

    #[test]
    fn melody_track_selection() {
        let smf = parse_smf(&melody_file(&[60])).unwrap();
        assert_eq!(melody_track(&smf).unwrap(), 1);
        let mut unnamed = smf.clone();
        unnamed.tracks[1].retain(|e| !matches!(e.kind, EventKind::TrackName(_)));
        assert_eq!(melody_track(&unnamed).unwrap(), 1);
        unnamed.tracks.truncate(1);
        assert!(matches!(melody_track(&unnamed), Err(IngestError::NoMelody)));
    }

    #[test]
    fn directory_ingest_matches_stems() {
        let root = std::env::temp_dir().join(format!("d12-ingest-{}", std::process::id()));
        let (m, c, b) = (root.join("midi"), root.join("chords"), root.join("beats"));
        for d in [&m, &c, &b] {
            fs::create_dir_all(d).unwrap();
        }
        fs::write(m.join("001.mid"), melody_file(&[60, 62])).unwrap();
        fs::write(m.join("002.mid"), melody_file(&[64])).unwrap();
        fs::write(c.join("001.txt"), "0 1 C:maj\n").unwrap();
        fs::write(b.join("001.txt"), beats(4)).unwrap();
        let (pieces, warnings) = ingest_dirs(&m, &c, &b, 0.5, UnknownPolicy::Skip).unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].id, "001");
        assert!(matches!(&warnings[..], [IngestWarning::MissingFile { piece, .. }] if piece == "002"));
        fs::write(c.join("002.txt"), "0 1 C:maj\n0.5 1 D\n").unwrap();
        fs::write(b.join("002.txt"), beats(4)).unwrap();
        let err = ingest_dirs(&m, &c, &b, 0.5, UnknownPolicy::Skip).unwrap_err();
        assert!(err.to_string().contains("002.txt"), "{err}");
        fs::remove_dir_all(&root).unwrap();
    }
}
