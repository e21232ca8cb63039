//! Shared fixtures for the criterion benches.

use d12_core::embed::PieceTensor;
use d12_core::synthetic::{corpus, SyntheticOptions};

/// The two-bar MIDI file from the core test fixtures.
pub const MIDI_FIXTURE: &[u8] = include_bytes!("../../core/tests/fixtures/midi/two_bars.mid");

/// A synthetic piece with `segments` four-step segments.
pub fn piece(segments: usize) -> PieceTensor {
    let opts = SyntheticOptions { segments, ..SyntheticOptions::default() };
    corpus(1, 0, &opts).remove(0).to_tensor().expect("synthetic pieces embed")
}
