"""Quantized internal score representation.

Everything downstream works at a fixed resolution of 12 ticks per quarter
note, so one tick is one grid position: a 4/4 bar spans 48 ticks/grid
positions, 6/8 spans 36, etc. Scores are immutable value objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import InvalidSignature, InvariantViolation

TICKS_PER_QUARTER = 12

TEMPO_CLASSES = (40, 80, 120, 160)

# The five supported signatures and their grid sizes (== bar length in ticks).
SUPPORTED_SIGNATURES = ((2, 4), (3, 4), (4, 4), (3, 8), (6, 8))

PITCH_MIN = 21   # A0
PITCH_MAX = 108  # C8

# Legal note-duration alphabet: multiples of 3 ticks from a thirty-second
# (1.5 ticks, rounded up to 3) through a whole note (48).
DURATIONS = tuple(range(3, 49, 3))
MAX_DURATION = DURATIONS[-1]

COMPOSERS = ("Bach", "Mozart", "Beethoven", "Chopin")


def grid_size(numerator: int, denominator: int) -> int:
    """Beat-grid positions in one bar: 12 per quarter, 6 per eighth."""
    if denominator == 4:
        return numerator * 12
    if denominator == 8:
        return numerator * 6
    raise InvalidSignature(f"unsupported internal signature {numerator}/{denominator}")


def quantize_tempo(bpm: float) -> int:
    """Map any positive BPM to the nearest of {40, 80, 120, 160}.

    Exact midpoints round to the faster class; out-of-range values clamp.
    """
    if bpm <= 0:
        raise InvariantViolation(f"bpm must be positive, got {bpm}")
    best = TEMPO_CLASSES[0]
    best_d = abs(bpm - best)
    for c in TEMPO_CLASSES[1:]:
        d = abs(bpm - c)
        if d < best_d or (d == best_d and c > best):
            best, best_d = c, d
    return best


def quantize_time_signature(numerator: int, denominator: int) -> list[tuple[int, int]]:
    """Convert a raw signature to a list of supported per-bar signatures.

    Identity for the five supported ones; 5/4 -> [2/4, 3/4]; 6/4 -> [3/4, 3/4];
    4/8 -> [2/4]; 12/8 -> [6/8, 6/8]; everything else -> [4/4].
    """
    if numerator < 1:
        raise InvalidSignature(f"numerator must be >= 1, got {numerator}")
    if denominator < 1 or denominator & (denominator - 1):
        raise InvalidSignature(f"denominator must be a power of two, got {denominator}")
    sig = (numerator, denominator)
    if sig in SUPPORTED_SIGNATURES:
        return [sig]
    conversions = {
        (5, 4): [(2, 4), (3, 4)],
        (6, 4): [(3, 4), (3, 4)],
        (4, 8): [(2, 4)],
        (12, 8): [(6, 8), (6, 8)],
    }
    return conversions.get(sig, [(4, 4)])


def clamp_duration(duration: int) -> int:
    """Snap a positive tick duration to the nearest legal value, ties up."""
    if duration >= MAX_DURATION:
        return MAX_DURATION
    best = DURATIONS[0]
    best_d = abs(duration - best)
    for v in DURATIONS[1:]:
        d = abs(duration - v)
        if d < best_d or (d == best_d and v > best):
            best, best_d = v, d
    return best


@dataclass(frozen=True, order=True)
class Note:
    pitch: int       # MIDI number, 21..108
    onset: int       # ticks from piece start
    duration: int    # ticks, >= 1

    def __post_init__(self):
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise InvariantViolation(f"pitch {self.pitch} outside [{PITCH_MIN}, {PITCH_MAX}]")
        if self.duration < 1:
            raise InvariantViolation(f"duration must be >= 1 tick, got {self.duration}")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class BarRecord:
    index: int
    time_signature: tuple[int, int]
    start_tick: int

    @property
    def grid_size(self) -> int:
        return grid_size(*self.time_signature)

    @property
    def end_tick(self) -> int:
        return self.start_tick + self.grid_size

    def contains(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick


@dataclass(frozen=True)
class Score:
    tempo_class: int
    bars: tuple[BarRecord, ...]
    notes: tuple[Note, ...]
    composer: Optional[str] = None
    has_true_start: bool = True
    has_true_end: bool = True
    ticks_per_quarter: int = field(default=TICKS_PER_QUARTER)

    @property
    def total_ticks(self) -> int:
        return self.bars[-1].end_tick if self.bars else 0

    @property
    def duration_seconds(self) -> float:
        """Nominal playing time: 60/tempo seconds per quarter note."""
        return self.total_ticks / TICKS_PER_QUARTER * 60.0 / self.tempo_class

    def bar_of(self, tick: int) -> BarRecord:
        """Bar containing `tick` (bars are contiguous, so binary search)."""
        lo, hi = 0, len(self.bars) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.bars[mid].end_tick <= tick:
                lo = mid + 1
            else:
                hi = mid
        bar = self.bars[lo]
        if not bar.contains(tick):
            raise InvariantViolation(f"tick {tick} outside all bars")
        return bar

    def transposed(self, shift: int) -> "Score":
        """Shift every pitch by `shift` semitones; errors if out of range."""
        notes = tuple(replace(n, pitch=n.pitch + shift) for n in self.notes)
        return replace(self, notes=notes)

    def validate(self) -> "Score":
        """Check all Score invariants, raising InvariantViolation on failure."""
        if self.ticks_per_quarter != TICKS_PER_QUARTER:
            raise InvariantViolation(f"ticks_per_quarter must be {TICKS_PER_QUARTER}")
        if self.tempo_class not in TEMPO_CLASSES:
            raise InvariantViolation(f"tempo_class {self.tempo_class} not in {TEMPO_CLASSES}")
        if not self.bars:
            raise InvariantViolation("score has no bars")
        if not self.notes:
            raise InvariantViolation("score has no notes")
        expected_start = 0
        for i, bar in enumerate(self.bars):
            if bar.index != i:
                raise InvariantViolation(f"bar {i} has index {bar.index}")
            if bar.time_signature not in SUPPORTED_SIGNATURES:
                raise InvariantViolation(f"bar {i} has unsupported signature {bar.time_signature}")
            if bar.start_tick != expected_start:
                raise InvariantViolation(
                    f"bar {i} starts at {bar.start_tick}, expected {expected_start}")
            expected_start = bar.end_tick
        if self.composer is not None and self.composer not in COMPOSERS:
            raise InvariantViolation(f"unknown composer {self.composer!r}")
        last_end_by_pitch: dict[int, int] = {}
        prev = None
        for n in self.notes:
            if prev is not None and (n.onset, n.pitch) < (prev.onset, prev.pitch):
                raise InvariantViolation("notes not sorted by (onset, pitch)")
            if prev is not None and (n.onset, n.pitch) == (prev.onset, prev.pitch):
                raise InvariantViolation(f"duplicate note at onset {n.onset} pitch {n.pitch}")
            if n.onset < 0 or n.onset >= self.total_ticks:
                raise InvariantViolation(f"onset {n.onset} outside all bars")
            # Same-pitch overlap is unrepresentable in single-channel MIDI and
            # is merged away by the parser, so valid scores never contain it.
            if n.pitch in last_end_by_pitch and n.onset < last_end_by_pitch[n.pitch]:
                raise InvariantViolation(
                    f"overlapping same-pitch notes at pitch {n.pitch}, onset {n.onset}")
            last_end_by_pitch[n.pitch] = n.end
            prev = n
        return self


def sorted_notes(notes) -> tuple[Note, ...]:
    return tuple(sorted(notes, key=lambda n: (n.onset, n.pitch)))


def make_bars(signatures) -> tuple[BarRecord, ...]:
    """Build contiguous BarRecords from a signature sequence."""
    bars = []
    tick = 0
    for i, sig in enumerate(signatures):
        bars.append(BarRecord(index=i, time_signature=tuple(sig), start_tick=tick))
        tick += grid_size(*sig)
    return tuple(bars)
