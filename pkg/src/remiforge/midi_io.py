"""Standard MIDI File (format 0/1) reader and writer.

Reading merges every channel into one piano stream, quantizes onsets and
durations onto the internal 12-ticks-per-quarter grid (nearest grid point,
ties toward earlier time), honours only the first tempo event, and converts
raw time signatures bar by bar through `quantize_time_signature`. Notes in
converted bars keep their proportional position within the bar group.

Writing emits a format-0 file at 480 TPQ with one time-signature meta event
per bar, so `parse_midi(write_midi(s)) == s` holds for every valid Score.
Composer and partial-segment flags round-trip through text/marker metas.
"""

from __future__ import annotations

import io
from fractions import Fraction

from .errors import EmptyScore, MalformedMidi
from .score import (
    PITCH_MAX,
    PITCH_MIN,
    TICKS_PER_QUARTER,
    BarRecord,
    Note,
    Score,
    grid_size,
    quantize_tempo,
    quantize_time_signature,
    sorted_notes,
)

WRITE_TPQ = 480
_NOTE_VELOCITY = 64

_COMPOSER_TAG = "composer="
_MARK_PARTIAL_START = "partial-start"
_MARK_PARTIAL_END = "partial-end"


def _round_half_down(x: Fraction) -> int:
    """Nearest integer, exact halves rounding toward earlier time."""
    num = 2 * x.numerator - x.denominator  # numerator of x - 1/2 over 2*den
    return -((-num) // (2 * x.denominator))  # ceil(x - 1/2)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedMidi("truncated chunk")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.read(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.read(4), "big")

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MalformedMidi("variable-length quantity longer than 4 bytes")

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _parse_track(chunk: bytes):
    """Yield (tick, kind, payload) events from one MTrk chunk body."""
    r = _Reader(chunk)
    tick = 0
    status = None
    events = []
    while not r.exhausted:
        tick += r.varlen()
        b = r.u8()
        if b < 0x80:
            if status is None:
                raise MalformedMidi("data byte with no running status")
            r.pos -= 1
            b = status
        elif b < 0xF0:
            status = b
        kind = b & 0xF0
        if kind == 0x90:
            pitch, vel = r.u8(), r.u8()
            events.append((tick, "on" if vel > 0 else "off", pitch))
        elif kind == 0x80:
            pitch, _vel = r.u8(), r.u8()
            events.append((tick, "off", pitch))
        elif kind in (0xA0, 0xB0, 0xE0):
            r.read(2)
        elif kind in (0xC0, 0xD0):
            r.read(1)
        elif b in (0xF0, 0xF7):
            status = None
            r.read(r.varlen())
        elif b == 0xFF:
            status = None
            meta = r.u8()
            payload = r.read(r.varlen())
            if meta == 0x51:
                if len(payload) != 3:
                    raise MalformedMidi("bad tempo meta length")
                events.append((tick, "tempo", int.from_bytes(payload, "big")))
            elif meta == 0x58:
                if len(payload) < 2:
                    raise MalformedMidi("bad time-signature meta length")
                events.append((tick, "timesig", (payload[0], 1 << payload[1])))
            elif meta in (0x01, 0x03):
                events.append((tick, "text", payload.decode("latin-1")))
            elif meta == 0x06:
                events.append((tick, "marker", payload.decode("latin-1")))
            elif meta == 0x2F:
                events.append((tick, "eot", None))
                break
        else:
            raise MalformedMidi(f"unexpected status byte 0x{b:02X}")
    return events


def _pair_notes(events):
    """Pair note-on/off into (onset, pitch, duration) at original resolution.

    A re-struck pitch truncates the still-sounding note at the new onset;
    unmatched note-ons close at the last event tick of their track.
    """
    notes = []
    active: dict[int, int] = {}
    last_tick = 0
    for tick, kind, payload in events:
        last_tick = max(last_tick, tick)
        if kind == "on":
            if payload in active and tick > active[payload]:
                notes.append((active[payload], payload, tick - active[payload]))
            active[payload] = tick
        elif kind == "off":
            if payload in active:
                onset = active.pop(payload)
                if tick > onset:
                    notes.append((onset, payload, tick - onset))
    for pitch, onset in active.items():
        if last_tick > onset:
            notes.append((onset, pitch, last_tick - onset))
    return notes


def parse_midi(data: bytes) -> Score:
    """Parse SMF bytes into a quantized Score."""
    r = _Reader(data)
    if r.read(4) != b"MThd":
        raise MalformedMidi("missing MThd header")
    header_len = r.u32()
    if header_len < 6:
        raise MalformedMidi("header chunk too short")
    fmt = r.u16()
    ntrks = r.u16()
    division = r.u16()
    r.read(header_len - 6)
    if fmt not in (0, 1):
        raise MalformedMidi(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise MalformedMidi("SMPTE time division unsupported")
    if division == 0:
        raise MalformedMidi("zero time division")

    raw_notes = []
    tempo_events = []
    ts_events = []
    texts = []
    markers = []
    tracks_read = 0
    while tracks_read < ntrks and not r.exhausted:
        tag = r.read(4)
        length = r.u32()
        body = r.read(length)
        if tag != b"MTrk":
            continue  # alien chunks are skipped per the SMF standard
        tracks_read += 1
        events = _parse_track(body)
        raw_notes.extend(_pair_notes(events))
        for tick, kind, payload in events:
            if kind == "tempo":
                tempo_events.append((tick, payload))
            elif kind == "timesig":
                ts_events.append((tick, payload))
            elif kind == "text":
                texts.append(payload)
            elif kind == "marker":
                markers.append(payload)
    if tracks_read == 0:
        raise MalformedMidi("no MTrk chunk found")
    if not raw_notes:
        raise EmptyScore("no notes in file")

    tempo_events.sort(key=lambda e: e[0])
    if tempo_events:
        tempo_class = quantize_tempo(60_000_000 / tempo_events[0][1])
    else:
        tempo_class = 120

    # Last signature event at a given tick wins; default 4/4 from tick 0.
    sig_at: dict[int, tuple[int, int]] = {}
    for tick, sig in sorted(ts_events, key=lambda e: e[0]):
        sig_at[tick] = sig
    if 0 not in sig_at:
        sig_at[0] = (4, 4)

    last_onset = max(onset for onset, _p, _d in raw_notes)
    bars, note_map = _walk_bars(sig_at, division, last_onset)

    scale = Fraction(TICKS_PER_QUARTER, division)
    quantized = []
    for onset, pitch, duration in raw_notes:
        if not PITCH_MIN <= pitch <= PITCH_MAX:
            continue  # outside the 88-key range the vocabulary covers
        new_onset = note_map(onset)
        new_dur = max(1, _round_half_down(duration * scale))
        quantized.append((new_onset, pitch, new_dur))
    if not quantized:
        raise EmptyScore("no notes in the A0..C8 range")

    # Merge overlapping same-pitch notes: truncate the earlier note at the
    # later onset; exact duplicates keep the longest duration.
    by_pitch: dict[int, list[tuple[int, int]]] = {}
    for onset, pitch, dur in sorted(quantized):
        runs = by_pitch.setdefault(pitch, [])
        if runs and runs[-1][0] == onset:
            runs[-1] = (onset, max(runs[-1][1], dur))
            continue
        if runs and runs[-1][0] + runs[-1][1] > onset:
            runs[-1] = (runs[-1][0], onset - runs[-1][0])
        runs.append((onset, dur))
    notes = [Note(pitch=p, onset=o, duration=d)
             for p, runs in by_pitch.items() for o, d in runs]

    composer = None
    for text in texts:
        if text.startswith(_COMPOSER_TAG):
            name = text[len(_COMPOSER_TAG):]
            if name in ("Bach", "Mozart", "Beethoven", "Chopin"):
                composer = name
    return Score(
        tempo_class=tempo_class,
        bars=bars,
        notes=sorted_notes(notes),
        composer=composer,
        has_true_start=_MARK_PARTIAL_START not in markers,
        has_true_end=_MARK_PARTIAL_END not in markers,
    ).validate()


def _walk_bars(sig_at: dict[int, tuple[int, int]], tpq: int, last_onset: int):
    """Lay out original bars, convert signatures, and build the onset map.

    Returns the internal BarRecords plus a function mapping an original-tick
    onset to its internal tick via proportional position within the bar group.
    """
    event_ticks = sorted(sig_at)
    pos = Fraction(0)
    next_event = 0
    active = sig_at[0]
    # (orig_start, orig_len, internal_start, internal_len) per original bar
    groups = []
    internal_sigs = []
    internal_pos = 0
    # Keep walking past the last onset while signature events continue at
    # exact bar boundaries, so trailing note-free bars (which carry their
    # own TS events) survive a round trip.
    while pos <= last_onset or (
            next_event < len(event_ticks) and event_ticks[next_event] == pos):
        while next_event < len(event_ticks) and event_ticks[next_event] <= pos:
            active = sig_at[event_ticks[next_event]]
            next_event += 1
        num, den = active
        orig_len = Fraction(num * 4, den) * tpq
        converted = quantize_time_signature(num, den)
        new_len = sum(grid_size(*sig) for sig in converted)
        groups.append((pos, orig_len, internal_pos, new_len))
        internal_sigs.extend(converted)
        internal_pos += new_len
        pos += orig_len

    bars = []
    tick = 0
    for i, sig in enumerate(internal_sigs):
        bars.append(BarRecord(index=i, time_signature=sig, start_tick=tick))
        tick += grid_size(*sig)

    starts = [g[0] for g in groups]

    def note_map(onset: int) -> int:
        lo, hi = 0, len(groups) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if starts[mid] <= onset:
                lo = mid
            else:
                hi = mid - 1
        orig_start, orig_len, new_start, new_len = groups[lo]
        frac = (Fraction(onset) - orig_start) / orig_len
        offset = _round_half_down(frac * new_len)
        if new_start + offset >= internal_pos:  # last half-tick of the piece
            offset = new_len - 1
        return new_start + offset

    return tuple(bars), note_map


# --- writing ---

def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _meta(meta_type: int, payload: bytes) -> bytes:
    return bytes([0xFF, meta_type]) + _varlen(len(payload)) + payload


def write_midi(score: Score) -> bytes:
    """Serialize a valid Score as a format-0 SMF at 480 TPQ."""
    score.validate()
    scale = WRITE_TPQ // TICKS_PER_QUARTER

    # (tick, order_class, bytes); note-offs sort before note-ons at a tick so
    # re-parsing never sees a spurious same-pitch overlap.
    events: list[tuple[int, int, bytes]] = []
    mpqn = 60_000_000 // score.tempo_class
    events.append((0, 0, _meta(0x51, mpqn.to_bytes(3, "big"))))
    if score.composer is not None:
        text = (_COMPOSER_TAG + score.composer).encode("latin-1")
        events.append((0, 1, _meta(0x01, text)))
    if not score.has_true_start:
        events.append((0, 2, _meta(0x06, _MARK_PARTIAL_START.encode("latin-1"))))
    if not score.has_true_end:
        events.append((0, 2, _meta(0x06, _MARK_PARTIAL_END.encode("latin-1"))))
    for bar in score.bars:
        num, den = bar.time_signature
        payload = bytes([num, den.bit_length() - 1, 24, 8])
        events.append((bar.start_tick * scale, 3, _meta(0x58, payload)))
    for note in score.notes:
        events.append((note.onset * scale, 5,
                       bytes([0x90, note.pitch, _NOTE_VELOCITY])))
        events.append((note.end * scale, 4, bytes([0x80, note.pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1]))

    body = io.BytesIO()
    tick = 0
    for ev_tick, _cls, data in events:
        body.write(_varlen(ev_tick - tick))
        body.write(data)
        tick = ev_tick
    body.write(_varlen(0))
    body.write(_meta(0x2F, b""))
    track = body.getvalue()

    header = (b"MThd" + (6).to_bytes(4, "big") + (0).to_bytes(2, "big")
              + (1).to_bytes(2, "big") + WRITE_TPQ.to_bytes(2, "big"))
    return header + b"MTrk" + len(track).to_bytes(4, "big") + track
