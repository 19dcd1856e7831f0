"""Chord extraction, progression mining, and ranking comparisons.

Chords are recognized per half-bar window by scoring a duration-weighted
pitch-class profile against binary templates for seven qualities; the two
window chords of a bar are merged by majority with the earlier window
breaking ties. Four-chord windows (stride 1) are canonicalized by taking,
over all four rotations, the lexicographically smallest form transposed so
its first root is C; this removes both global key and A-B-A-B phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, TooFewChords
from .score import Score

QUALITIES = ("M", "m", "m7", "7", "dim", "aug", "sus")

TEMPLATES = {
    "M": (0, 4, 7),
    "m": (0, 3, 7),
    "m7": (0, 3, 7, 10),
    "7": (0, 4, 7, 10),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "sus": (0, 5, 7),
}

PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F",
                     "F#", "G", "G#", "A", "A#", "B")


@dataclass(frozen=True)
class Chord:
    root: int
    quality: str

    def __post_init__(self):
        if not 0 <= self.root < 12:
            raise InvariantViolation(f"chord root {self.root} outside 0..11")
        if self.quality not in QUALITIES:
            raise InvariantViolation(f"unknown chord quality {self.quality!r}")

    def __str__(self) -> str:
        return f"{PITCH_CLASS_NAMES[self.root]}:{self.quality}"

    def transposed(self, shift: int) -> "Chord":
        return Chord((self.root + shift) % 12, self.quality)


def _window_profile(score: Score, lo: int, hi: int) -> np.ndarray:
    profile = np.zeros(12)
    for note in score.notes:
        overlap = min(note.end, hi) - max(note.onset, lo)
        if overlap > 0:
            profile[note.pitch % 12] += overlap
    return profile


def _best_chord(profile: np.ndarray) -> Chord | None:
    if np.count_nonzero(profile) < 2:
        return None
    best = None
    best_key = None
    for root in range(12):
        for q_idx, quality in enumerate(QUALITIES):
            template = TEMPLATES[quality]
            score = sum(profile[(root + step) % 12] for step in template)
            score /= len(template)
            # Prefer higher score, then the larger template (so an exact
            # four-note match beats its embedded triad), then low root.
            key = (-score, -len(template), root, q_idx)
            if best_key is None or key < best_key:
                best_key = key
                best = Chord(root, quality)
    return best


def extract_chords(score: Score) -> list[tuple[int, Chord | None]]:
    """Recognize one chord (or None) per bar via two half-bar windows."""
    out = []
    for bar in score.bars:
        mid = bar.start_tick + bar.grid_size // 2
        halves = [
            _best_chord(_window_profile(score, bar.start_tick, mid)),
            _best_chord(_window_profile(score, mid, bar.end_tick)),
        ]
        votes = [c for c in halves if c is not None]
        if not votes:
            out.append((bar.index, None))
            continue
        tally: dict[Chord, int] = {}
        for c in votes:
            tally[c] = tally.get(c, 0) + 1
        top = max(tally.values())
        winner = next(c for c in votes if tally[c] == top)
        out.append((bar.index, winner))
    return out


Progression = tuple[Chord, Chord, Chord, Chord]


def _prog_key(prog) -> tuple[str, ...]:
    return tuple(str(c) for c in prog)


def canonicalize(progression) -> Progression:
    """Smallest C-rooted form over all four rotations of a 4-chord window."""
    prog = tuple(progression)
    if len(prog) != 4:
        raise InvariantViolation(f"progression must have 4 chords, got {len(prog)}")
    best = None
    for r in range(4):
        rotated = prog[r:] + prog[:r]
        shifted = tuple(c.transposed(-rotated[0].root) for c in rotated)
        if best is None or _prog_key(shifted) < _prog_key(best):
            best = shifted
    return best


@dataclass(frozen=True)
class ProgressionTable:
    counts: dict
    ranked: tuple[Progression, ...]

    @classmethod
    def from_counts(cls, counts: dict) -> "ProgressionTable":
        ranked = tuple(sorted(counts, key=lambda p: (-counts[p], _prog_key(p))))
        return cls(counts=dict(counts), ranked=ranked)


def mine_progressions(chords) -> ProgressionTable:
    """Count canonical 4-chord windows (stride 1) over the non-None chords."""
    seq = [c for c in chords if c is not None]
    if len(seq) < 4:
        raise TooFewChords(
            f"progression mining needs >= 4 chords, got {len(seq)}")
    counts: dict[Progression, int] = {}
    for i in range(len(seq) - 3):
        canon = canonicalize(seq[i:i + 4])
        counts[canon] = counts.get(canon, 0) + 1
    return ProgressionTable.from_counts(counts)


def topn_overlap(model: ProgressionTable, real: ProgressionTable, n: int) -> float:
    """Shared fraction of the two top-n sets.

    When either table is shorter than n, both sides truncate to the smaller
    size so the ratio stays comparable; callers can flag that case via
    min(len(model.ranked), len(real.ranked)) < n.
    """
    n_eff = min(n, len(model.ranked), len(real.ranked))
    if n_eff <= 0:
        return 0.0
    return len(set(model.ranked[:n_eff]) & set(real.ranked[:n_eff])) / n_eff


def map_at_k(model_ranked, real_topk, k: int = 20) -> float:
    """Average precision over the model's top k with binary relevance."""
    relevant = set(real_topk)
    denom = min(k, len(relevant))
    if denom == 0:
        return 0.0
    hits = 0
    total = 0.0
    for rank, item in enumerate(list(model_ranked)[:k], start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / denom


def ndcg_at_k(model_ranked, real_topk, k: int = 20) -> float:
    """Discounted cumulative gain against the ideal hit placement."""
    relevant = set(real_topk)
    ideal_hits = min(k, len(relevant))
    if ideal_hits == 0:
        return 0.0
    dcg = 0.0
    for rank, item in enumerate(list(model_ranked)[:k], start=1):
        if item in relevant:
            dcg += 1.0 / np.log2(rank + 1)
    idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / idcg
