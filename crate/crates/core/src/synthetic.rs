//! Synthetic pieces whose chords are a transposition- and
//! inversion-equivariant function of the melody.
//!
//! A piece is a run of segments. Each segment picks a chord shape and a
//! root, plays the chord tones in random order and octave for one step
//! each, then rests for one step; the chord over the whole segment is the
//! set of tones itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{ChordJson, NoteJson, Piece};

/// Major and minor triads.
pub const TRIADS: &[&[usize]] = &[&[0, 4, 7], &[0, 3, 7]];

/// Triads (major, minor, diminished, augmented, suspended fourth) and
/// seventh chords (dominant, major, minor).
pub const RICH_SHAPES: &[&[usize]] =
    &[&[0, 4, 7], &[0, 3, 7], &[0, 3, 6], &[0, 4, 8], &[0, 5, 7], &[0, 4, 7, 10], &[0, 4, 7, 11], &[0, 3, 7, 10]];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub segments: usize,
    pub u_beats: f64,
    /// Chord shapes as intervals above the root.
    pub shapes: &'static [&'static [usize]],
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { segments: 4, u_beats: 0.5, shapes: TRIADS }
    }
}

impl SyntheticOptions {
    pub fn rich() -> Self {
        Self { shapes: RICH_SHAPES, ..Self::default() }
    }
}

pub fn chord(root: usize, shape: &[usize]) -> Vec<usize> {
    shape.iter().map(|i| (root + i) % 12).collect()
}

pub fn piece(rng: &mut impl Rng, id: String, opts: &SyntheticOptions) -> Piece {
    let u = opts.u_beats;
    let mut melody_notes = Vec::new();
    let mut chords = Vec::new();
    let mut step = 0;
    for _ in 0..opts.segments {
        let start = step as f64 * u;
        let shape = opts.shapes[rng.gen_range(0..opts.shapes.len())];
        let mut tones = chord(rng.gen_range(0..12), shape);
        let mut sorted = tones.clone();
        sorted.sort_unstable();
        tones.shuffle(rng);
        let len = tones.len() + 1;
        step += len;
        for (k, pc) in tones.iter().enumerate() {
            let octave = rng.gen_range(4..7u8);
            melody_notes.push(NoteJson {
                pitch: 12 * octave + *pc as u8,
                onset_beats: start + k as f64 * u,
                value_beats: u,
            });
        }
        chords.push(ChordJson { pitch_classes: sorted, onset_beats: start, value_beats: len as f64 * u });
    }
    Piece { id, u_beats: u, melody_notes, chords }
}

/// `n` pieces from `seed`, ids `syn-0000`, `syn-0001`, ….
pub fn corpus(n: usize, seed: u64, opts: &SyntheticOptions) -> Vec<Piece> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| piece(&mut rng, format!("syn-{i:04}"), opts)).collect()
}

/// A piece whose melody is silent throughout while chords still sound.
pub fn silent_piece(rng: &mut impl Rng, id: String, opts: &SyntheticOptions) -> Piece {
    let mut p = piece(rng, id, opts);
    p.melody_notes.clear();
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupElement;

    #[test]
    fn pieces_embed_cleanly() {
        for p in corpus(20, 0, &SyntheticOptions::default()) {
            let t = p.to_tensor().unwrap();
            assert_eq!(t.steps(), 16);
            for j in 0..16 {
                let active = t.melody.column(j).iter().filter(|&&x| x > 0.0).count();
                assert_eq!(active, if j % 4 == 3 { 0 } else { 1 });
                assert_eq!(t.chords.column(j).iter().sum::<f64>(), 3.0);
            }
        }
    }

    #[test]
    fn rich_pieces_vary_in_length() {
        let lens: Vec<usize> = corpus(20, 3, &SyntheticOptions::rich()).iter().map(|p| p.steps()).collect();
        assert!(lens.iter().all(|&l| (16..=20).contains(&l)));
        assert!(lens.iter().any(|&l| l != lens[0]));
    }

    #[test]
    fn chord_rule_is_equivariant() {
        // the chord is the set of melody pitch classes of its segment, so a
        // transformed piece still obeys the rule
        for p in corpus(5, 1, &SyntheticOptions::default()) {
            for g in GroupElement::all() {
                let t = p.transformed(g).to_tensor().unwrap();
                for seg in 0..4 {
                    let mut hist = [0.0; 12];
                    for j in seg * 4..seg * 4 + 4 {
                        for (i, h) in hist.iter_mut().enumerate() {
                            *h += t.melody.at(i, j);
                        }
                    }
                    for (i, h) in hist.iter().enumerate() {
                        assert_eq!(*h, t.chords.at(i, seg * 4));
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let o = SyntheticOptions::default();
        assert_eq!(corpus(3, 9, &o), corpus(3, 9, &o));
    }

    #[test]
    fn silent_piece_has_zero_melody() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = silent_piece(&mut rng, "s".into(), &SyntheticOptions::default()).to_tensor().unwrap();
        assert_eq!(t.melody.max_abs(), 0.0);
        assert_eq!(t.steps(), 16);
    }
}
