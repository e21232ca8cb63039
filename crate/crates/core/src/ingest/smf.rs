//! Standard MIDI File reading and writing (formats 0 and 1).

use crate::error::SmfError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Division {
    TicksPerQuarter(u16),
    Smpte { frames_per_second: u8, ticks_per_frame: u8 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    NoteOn {
        key: u8,
        velocity: u8,
    },
    /// Also produced by note-on with velocity 0.
    NoteOff {
        key: u8,
        velocity: u8,
    },
    /// Microseconds per quarter note.
    Tempo(u32),
    TimeSignature {
        numerator: u8,
        denominator_pow: u8,
        clocks: u8,
        thirty_seconds: u8,
    },
    TrackName(Vec<u8>),
    EndOfTrack,
    /// Any other channel message; `status` includes the channel nibble.
    Channel {
        status: u8,
        data: Vec<u8>,
    },
    Meta {
        kind: u8,
        data: Vec<u8>,
    },
    /// `status` is 0xF0 or 0xF7.
    SysEx {
        status: u8,
        data: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmfEvent {
    /// Absolute tick within the track.
    pub tick: u32,
    pub channel: Option<u8>,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Smf {
    pub format: u16,
    pub division: Division,
    pub tracks: Vec<Vec<SmfEvent>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> SmfError {
        SmfError { offset, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SmfError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.err(self.pos, format!("unexpected end of data, wanted {n} bytes"))),
        }
    }

    fn byte(&mut self) -> Result<u8, SmfError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn u16(&mut self) -> Result<u16, SmfError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SmfError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Variable-length quantity: at most four bytes, 7 bits each, high bit
    /// set on all but the last.
    fn vlq(&mut self) -> Result<u32, SmfError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.peek().ok_or_else(|| self.err(start, "truncated variable-length quantity"))?;
            self.pos += 1;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.err(start, "variable-length quantity longer than 4 bytes"))
    }
}

/// Decodes a variable-length quantity from the start of `bytes`, returning
/// the value and the number of bytes read.
pub fn read_vlq(bytes: &[u8]) -> Result<(u32, usize), SmfError> {
    let mut c = Cursor { bytes, pos: 0 };
    let v = c.vlq()?;
    Ok((v, c.pos))
}

pub fn write_vlq(out: &mut Vec<u8>, value: u32) {
    assert!(value < 1 << 28, "VLQ value {value} out of range");
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(groups[i] | if i > 0 { 0x80 } else { 0 });
    }
}

fn data_len(status: u8) -> usize {
    match status & 0xF0 {
        0xC0 | 0xD0 => 1,
        _ => 2,
    }
}

pub fn parse_smf(bytes: &[u8]) -> Result<Smf, SmfError> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(c.err(0, "missing MThd header"));
    }
    c.pos = 4;
    let header_len = c.u32()? as usize;
    if header_len < 6 {
        return Err(c.err(4, format!("header length {header_len} is below 6")));
    }
    let header_start = c.pos;
    let format = c.u16()?;
    let ntracks = c.u16()?;
    let division_raw = c.u16()?;
    if format > 1 {
        return Err(c.err(header_start, format!("unsupported SMF format {format}")));
    }
    if format == 0 && ntracks != 1 {
        return Err(c.err(header_start + 2, format!("format 0 with {ntracks} tracks")));
    }
    let division = if division_raw & 0x8000 == 0 {
        if division_raw == 0 {
            return Err(c.err(header_start + 4, "zero ticks per quarter note"));
        }
        Division::TicksPerQuarter(division_raw)
    } else {
        Division::Smpte {
            frames_per_second: (-((division_raw >> 8) as u8 as i8)) as u8,
            ticks_per_frame: (division_raw & 0xFF) as u8,
        }
    };
    c.pos = header_start;
    c.take(header_len)?;

    let mut tracks = Vec::with_capacity(ntracks as usize);
    while tracks.len() < ntracks as usize {
        let chunk_start = c.pos;
        let id: [u8; 4] = c.take(4)?.try_into().unwrap();
        let len = c.u32()? as usize;
        let body_start = c.pos;
        let body = c.take(len).map_err(|_| c.err(chunk_start, format!("chunk length {len} runs past end of file")))?;
        if &id == b"MTrk" {
            tracks.push(parse_track(body, body_start)?);
        }
    }
    Ok(Smf { format, division, tracks })
}

fn parse_track(body: &[u8], base: usize) -> Result<Vec<SmfEvent>, SmfError> {
    let mut c = Cursor { bytes: body, pos: 0 };
    let shift = |e: SmfError| SmfError { offset: e.offset + base, message: e.message };
    let mut events = Vec::new();
    let mut tick = 0u32;
    let mut running: Option<u8> = None;
    while c.pos < body.len() {
        let delta = c.vlq().map_err(shift)?;
        tick = tick.checked_add(delta).ok_or_else(|| shift(c.err(c.pos, "tick overflow")))?;
        let event_start = c.pos;
        let first = c.peek().ok_or_else(|| shift(c.err(c.pos, "event missing after delta time")))?;
        let (channel, kind) = match first {
            0xFF => {
                c.pos += 1;
                running = None;
                let kind = c.byte().map_err(shift)?;
                let len = c.vlq().map_err(shift)? as usize;
                let data = c.take(len).map_err(shift)?.to_vec();
                let ev = match (kind, data.len()) {
                    (0x2F, _) => EventKind::EndOfTrack,
                    (0x51, 3) => EventKind::Tempo(u32::from_be_bytes([0, data[0], data[1], data[2]])),
                    (0x58, 4) => EventKind::TimeSignature {
                        numerator: data[0],
                        denominator_pow: data[1],
                        clocks: data[2],
                        thirty_seconds: data[3],
                    },
                    (0x03, _) => EventKind::TrackName(data),
                    (0x51 | 0x58, n) => {
                        return Err(shift(c.err(event_start, format!("meta event {kind:#04x} with {n} data bytes"))))
                    }
                    _ => EventKind::Meta { kind, data },
                };
                (None, ev)
            }
            0xF0 | 0xF7 => {
                c.pos += 1;
                running = None;
                let len = c.vlq().map_err(shift)? as usize;
                let data = c.take(len).map_err(shift)?.to_vec();
                (None, EventKind::SysEx { status: first, data })
            }
            0xF1..=0xFE => {
                return Err(shift(c.err(event_start, format!("unexpected status byte {first:#04x} in track"))))
            }
            _ => {
                let status = if first & 0x80 != 0 {
                    c.pos += 1;
                    running = Some(first);
                    first
                } else {
                    running.ok_or_else(|| shift(c.err(event_start, "data byte without running status")))?
                };
                let data = c.take(data_len(status)).map_err(shift)?;
                if let Some(bad) = data.iter().position(|b| b & 0x80 != 0) {
                    return Err(shift(c.err(c.pos - data.len() + bad, "status byte inside channel message data")));
                }
                let channel = status & 0x0F;
                let kind = match (status & 0xF0, data) {
                    (0x90, &[key, 0]) => EventKind::NoteOff { key, velocity: 0 },
                    (0x90, &[key, velocity]) => EventKind::NoteOn { key, velocity },
                    (0x80, &[key, velocity]) => EventKind::NoteOff { key, velocity },
                    _ => EventKind::Channel { status, data: data.to_vec() },
                };
                (Some(channel), kind)
            }
        };
        let end = kind == EventKind::EndOfTrack;
        events.push(SmfEvent { tick, channel, kind });
        if end {
            break;
        }
    }
    Ok(events)
}

/// Writes a file without running status. Tracks get an end-of-track event
/// if they lack one.
pub fn serialize_smf(smf: &Smf) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&smf.format.to_be_bytes());
    out.extend_from_slice(&(smf.tracks.len() as u16).to_be_bytes());
    let division = match smf.division {
        Division::TicksPerQuarter(t) => t,
        Division::Smpte { frames_per_second, ticks_per_frame } => {
            (u16::from((frames_per_second as i8).wrapping_neg() as u8) << 8) | u16::from(ticks_per_frame)
        }
    };
    out.extend_from_slice(&division.to_be_bytes());
    for track in &smf.tracks {
        let mut body = Vec::new();
        let mut last = 0u32;
        let mut ended = false;
        for e in track {
            write_vlq(&mut body, e.tick.saturating_sub(last));
            last = last.max(e.tick);
            let ch = e.channel.unwrap_or(0) & 0x0F;
            let meta = |body: &mut Vec<u8>, kind: u8, data: &[u8]| {
                body.extend_from_slice(&[0xFF, kind]);
                write_vlq(body, data.len() as u32);
                body.extend_from_slice(data);
            };
            match &e.kind {
                EventKind::NoteOn { key, velocity } => body.extend_from_slice(&[0x90 | ch, *key, *velocity]),
                EventKind::NoteOff { key, velocity } => body.extend_from_slice(&[0x80 | ch, *key, *velocity]),
                EventKind::Tempo(t) => meta(&mut body, 0x51, &t.to_be_bytes()[1..]),
                EventKind::TimeSignature { numerator, denominator_pow, clocks, thirty_seconds } => {
                    meta(&mut body, 0x58, &[*numerator, *denominator_pow, *clocks, *thirty_seconds])
                }
                EventKind::TrackName(name) => meta(&mut body, 0x03, name),
                EventKind::EndOfTrack => {
                    meta(&mut body, 0x2F, &[]);
                    ended = true;
                }
                EventKind::Channel { status, data } => {
                    body.push(*status);
                    body.extend_from_slice(data);
                }
                EventKind::Meta { kind, data } => meta(&mut body, *kind, data),
                EventKind::SysEx { status, data } => {
                    body.push(*status);
                    write_vlq(&mut body, data.len() as u32);
                    body.extend_from_slice(data);
                }
            }
            if ended {
                break;
            }
        }
        if !ended {
            body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        }
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    out
}

/// A sounding note in ticks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TickNote {
    pub key: u8,
    pub channel: u8,
    pub start: u32,
    pub end: u32,
    pub velocity: u8,
}

/// Pairs note-ons with note-offs per channel and key, first in first out.
/// Notes still sounding at the end of the track end at its last tick.
pub fn track_notes(track: &[SmfEvent]) -> Vec<TickNote> {
    let mut open: Vec<(u8, u8, u32, u8)> = Vec::new();
    let mut notes = Vec::new();
    for e in track {
        let ch = e.channel.unwrap_or(0);
        match e.kind {
            EventKind::NoteOn { key, velocity } => open.push((ch, key, e.tick, velocity)),
            EventKind::NoteOff { key, .. } => {
                if let Some(i) = open.iter().position(|&(c, k, _, _)| c == ch && k == key) {
                    let (_, _, start, velocity) = open.remove(i);
                    notes.push(TickNote { key, channel: ch, start, end: e.tick, velocity });
                }
            }
            _ => {}
        }
    }
    let last = track.last().map_or(0, |e| e.tick);
    notes.extend(open.into_iter().map(|(channel, key, start, velocity)| TickNote {
        key,
        channel,
        start,
        end: last,
        velocity,
    }));
    notes.sort_by_key(|n| (n.start, n.key));
    notes
}

pub fn track_name(track: &[SmfEvent]) -> Option<String> {
    track.iter().find_map(|e| match &e.kind {
        EventKind::TrackName(n) => Some(String::from_utf8_lossy(n).trim().to_string()),
        _ => None,
    })
}

/// Tick-to-seconds conversion from the tempo events of every track
/// (120 bpm until the first tempo event).
#[derive(Clone, Debug, PartialEq)]
pub struct TempoMap {
    ticks_per_quarter: f64,
    /// (tick, seconds at tick, seconds per tick from here)
    segments: Vec<(u32, f64, f64)>,
}

impl TempoMap {
    pub fn new(smf: &Smf) -> Result<Self, crate::error::IngestError> {
        let Division::TicksPerQuarter(tpq) = smf.division else {
            return Err(crate::error::IngestError::Unsupported("SMPTE division".into()));
        };
        let tpq = f64::from(tpq);
        let mut changes: Vec<(u32, u32)> = smf
            .tracks
            .iter()
            .flatten()
            .filter_map(|e| match e.kind {
                EventKind::Tempo(t) => Some((e.tick, t)),
                _ => None,
            })
            .collect();
        changes.sort_by_key(|c| c.0);
        let mut segments = vec![(0u32, 0.0, 0.5 / tpq)];
        for (tick, usec) in changes {
            let &(t0, s0, rate) = segments.last().unwrap();
            let at = s0 + f64::from(tick - t0) * rate;
            let rate = f64::from(usec) * 1e-6 / tpq;
            if tick == t0 {
                *segments.last_mut().unwrap() = (tick, at, rate);
            } else {
                segments.push((tick, at, rate));
            }
        }
        Ok(Self { ticks_per_quarter: tpq, segments })
    }

    pub fn ticks_per_quarter(&self) -> f64 {
        self.ticks_per_quarter
    }

    pub fn seconds(&self, tick: u32) -> f64 {
        let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
        let (t0, s0, rate) = self.segments[i];
        s0 + f64::from(tick - t0) * rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Format 0, 96 ticks per quarter, one middle C lasting a quarter note,
    /// written with running status and a note-on of velocity 0 as the off.
    pub(crate) fn one_note_file() -> Vec<u8> {
        let mut b = b"MThd".to_vec();
        b.extend_from_slice(&[0, 0, 0, 6, 0, 0, 0, 1, 0, 96]);
        let body = [
            0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, // tempo 500000
            0x00, 0x90, 60, 100, // note on
            0x60, 60, 0, // running status, velocity 0
            0x00, 0xFF, 0x2F, 0x00,
        ];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(body.len() as u32).to_be_bytes());
        b.extend_from_slice(&body);
        b
    }

    #[test]
    fn vlq_examples() {
        assert_eq!(read_vlq(&[0x81, 0x48]).unwrap(), (200, 2));
        assert_eq!(read_vlq(&[0x00]).unwrap(), (0, 1));
        assert_eq!(read_vlq(&[0xFF, 0xFF, 0xFF, 0x7F]).unwrap(), (0x0FFF_FFFF, 4));
        assert!(read_vlq(&[0x81]).is_err());
        assert!(read_vlq(&[0x80, 0x80, 0x80, 0x80, 0x00]).is_err());
        for v in [0, 1, 127, 128, 200, 16383, 16384, 0x0FFF_FFFF] {
            let mut out = Vec::new();
            write_vlq(&mut out, v);
            assert_eq!(read_vlq(&out).unwrap(), (v, out.len()));
        }
    }

    #[test]
    fn one_note_fixture() {
        let smf = parse_smf(&one_note_file()).unwrap();
        assert_eq!(smf.format, 0);
        assert_eq!(smf.division, Division::TicksPerQuarter(96));
        let notes = track_notes(&smf.tracks[0]);
        assert_eq!(notes, vec![TickNote { key: 60, channel: 0, start: 0, end: 96, velocity: 100 }]);
        let tempo = TempoMap::new(&smf).unwrap();
        assert!((tempo.seconds(96) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn round_trip() {
        let smf = parse_smf(&one_note_file()).unwrap();
        let bytes = serialize_smf(&smf);
        assert_eq!(parse_smf(&bytes).unwrap(), smf);
        assert_eq!(serialize_smf(&parse_smf(&bytes).unwrap()), bytes);
    }

    #[test]
    fn bad_magic_fails_at_offset_zero() {
        let mut b = one_note_file();
        b[0] = b'X';
        assert_eq!(parse_smf(&b).unwrap_err().offset, 0);
        assert_eq!(parse_smf(b"").unwrap_err().offset, 0);
    }

    #[test]
    fn truncated_files_fail_cleanly() {
        let b = one_note_file();
        for cut in 0..b.len() {
            assert!(parse_smf(&b[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn running_status_without_status_is_an_error() {
        let mut b = b"MThd".to_vec();
        b.extend_from_slice(&[0, 0, 0, 6, 0, 0, 0, 1, 0, 96]);
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&[0, 0, 0, 3, 0x00, 60, 100]);
        let e = parse_smf(&b).unwrap_err();
        assert_eq!(e.offset, 23);
    }

    #[test]
    fn tempo_changes_are_piecewise() {
        let smf = Smf {
            format: 1,
            division: Division::TicksPerQuarter(100),
            tracks: vec![vec![
                SmfEvent { tick: 0, channel: None, kind: EventKind::Tempo(1_000_000) },
                SmfEvent { tick: 200, channel: None, kind: EventKind::Tempo(250_000) },
            ]],
        };
        let m = TempoMap::new(&smf).unwrap();
        assert!((m.seconds(100) - 1.0).abs() < 1e-12);
        assert!((m.seconds(200) - 2.0).abs() < 1e-12);
        assert!((m.seconds(300) - 2.25).abs() < 1e-12);
    }

    fn arb_event() -> impl Strategy<Value = (u32, EventKind, u8)> {
        let kind = prop_oneof![
            (0u8..128, 1u8..128).prop_map(|(key, velocity)| EventKind::NoteOn { key, velocity }),
            (0u8..128, 0u8..128).prop_map(|(key, velocity)| EventKind::NoteOff { key, velocity }),
            (1u32..0xFF_FFFF).prop_map(EventKind::Tempo),
            proptest::collection::vec(0x20u8..0x7F, 0..8).prop_map(EventKind::TrackName),
            (0u8..128).prop_map(|v| EventKind::Channel { status: 0xC0, data: vec![v] }),
            proptest::collection::vec(any::<u8>(), 0..6).prop_map(|data| EventKind::Meta { kind: 0x7F, data }),
        ];
        (0u32..5000, kind, 0u8..16)
    }

    proptest! {
        #[test]
        fn generated_files_round_trip(events in proptest::collection::vec(arb_event(), 0..30)) {
            let mut tick = 0;
            let mut track: Vec<SmfEvent> = events
                .into_iter()
                .map(|(delta, kind, ch)| {
                    tick += delta;
                    let channel = matches!(kind, EventKind::NoteOn { .. } | EventKind::NoteOff { .. } | EventKind::Channel { .. }).then_some(ch);
                    let kind = match kind {
                        EventKind::Channel { status, data } => EventKind::Channel { status: status | ch, data },
                        k => k,
                    };
                    SmfEvent { tick, channel, kind }
                })
                .collect();
            track.push(SmfEvent { tick, channel: None, kind: EventKind::EndOfTrack });
            let smf = Smf { format: 0, division: Division::TicksPerQuarter(480), tracks: vec![track] };
            prop_assert_eq!(parse_smf(&serialize_smf(&smf)).unwrap(), smf);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_smf(&bytes);
            let mut framed = one_note_file();
            framed.truncate(22);
            framed.extend_from_slice(&bytes);
            let _ = parse_smf(&framed);
        }

        #[test]
        fn mutated_fixture_never_panics(pos in 0usize..40, byte in any::<u8>()) {
            let mut b = one_note_file();
            let p = pos % b.len();
            b[p] = byte;
            let _ = parse_smf(&b);
        }
    }
}
