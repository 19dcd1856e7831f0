"""Shared fixtures: random valid-score generation and a raw SMF builder."""

from __future__ import annotations

import struct

import numpy as np
import pytest
import torch

from remiforge.score import (
    COMPOSERS,
    DURATIONS,
    SUPPORTED_SIGNATURES,
    TEMPO_CLASSES,
    Note,
    Score,
    make_bars,
    sorted_notes,
)

torch.set_num_threads(1)


def make_random_score(rng, min_bars=1, max_bars=32, density=0.15,
                      allow_partial=True) -> Score:
    """A random Score satisfying every invariant, durations already legal."""
    n_bars = int(rng.integers(min_bars, max_bars + 1))
    sigs = [SUPPORTED_SIGNATURES[rng.integers(len(SUPPORTED_SIGNATURES))]
            for _ in range(n_bars)]
    bars = make_bars(sigs)
    total = bars[-1].end_tick
    by_pitch: dict = {}
    for _ in range(max(1, int(total * density))):
        onset = int(rng.integers(0, total))
        pitch = int(rng.integers(21, 109))
        duration = int(DURATIONS[rng.integers(len(DURATIONS))])
        by_pitch.setdefault(pitch, {})[onset] = duration
    notes = []
    for pitch, by_onset in by_pitch.items():
        onsets = sorted(by_onset)
        for i, onset in enumerate(onsets):
            duration = by_onset[onset]
            if i + 1 < len(onsets):
                gap = onsets[i + 1] - onset
                duration = min(duration, gap - gap % 3)
                if duration < 3:
                    continue
            notes.append(Note(pitch=pitch, onset=onset, duration=duration))
    if not notes:
        notes.append(Note(pitch=60, onset=0, duration=12))
    composer = None
    if rng.integers(3) == 0:
        composer = COMPOSERS[rng.integers(len(COMPOSERS))]
    has_start = True
    has_end = True
    if allow_partial:
        has_start = bool(rng.integers(2))
        has_end = bool(rng.integers(2))
    return Score(
        tempo_class=int(TEMPO_CLASSES[rng.integers(len(TEMPO_CLASSES))]),
        bars=bars,
        notes=sorted_notes(notes),
        composer=composer,
        has_true_start=has_start,
        has_true_end=has_end,
    ).validate()


class SmfBuilder:
    """Hand-rolled SMF writer for parser tests, independent of midi_io."""

    def __init__(self, division=480, fmt=1):
        self.division = division
        self.fmt = fmt
        self.tracks = []

    @staticmethod
    def varlen(value: int) -> bytes:
        out = [value & 0x7F]
        value >>= 7
        while value:
            out.append(0x80 | (value & 0x7F))
            value >>= 7
        return bytes(reversed(out))

    def track(self, events, end_delta=0):
        """events: list of (delta, raw event bytes); EOT appended."""
        data = b"".join(self.varlen(d) + raw for d, raw in events)
        data += self.varlen(end_delta) + b"\xff\x2f\x00"
        self.tracks.append(data)
        return self

    def bytes(self) -> bytes:
        out = struct.pack(">4sIHHH", b"MThd", 6, self.fmt,
                          len(self.tracks), self.division)
        for t in self.tracks:
            out += struct.pack(">4sI", b"MTrk", len(t)) + t
        return out


def simple_smf(notes, division=480, tempo_us=None, timesig=None, fmt=0):
    """SMF with one track: optional tempo/timesig then (tick, pitch, dur) notes."""
    events = []
    if tempo_us is not None:
        events.append((0, b"\xff\x51\x03" + tempo_us.to_bytes(3, "big")))
    if timesig is not None:
        num, den_pow = timesig
        events.append((0, b"\xff\x58\x04" + bytes([num, den_pow, 24, 8])))
    timeline = []
    for tick, pitch, dur in notes:
        timeline.append((tick, 0, bytes([0x90, pitch, 64])))
        timeline.append((tick + dur, 1, bytes([0x80, pitch, 0])))
    timeline.sort(key=lambda e: (e[0], e[1]))
    now = 0
    for tick, _k, raw in timeline:
        events.append((tick - now, raw))
        now = tick
    return SmfBuilder(division=division, fmt=fmt).track(events).bytes()


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
