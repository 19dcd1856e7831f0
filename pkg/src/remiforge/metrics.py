"""Objective quality metrics: pitch-class entropy, grooving similarity, and
structureness from a fitness scape plot.

Entropy uses a count-weighted 12-class histogram (each note counts once).
Groove vectors map every bar onto 64 binary slots regardless of signature.
The scape plot works on one chroma frame per quarter note, weighted by how
long each note sounds within the frame; the fitness of a segment is its best
mean cosine self-similarity against any non-overlapping position, so values
live in [0, 1] and segments too long to have a partner score 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInterval, InvariantViolation, NoNotes, TooFewBars
from .score import TICKS_PER_QUARTER, Score


def _notes_of(score_or_notes):
    if isinstance(score_or_notes, Score):
        return score_or_notes.notes
    return tuple(score_or_notes)


def pitch_class_histogram(score_or_notes) -> np.ndarray:
    """Normalized 12-bin histogram, one count per note, C = index 0."""
    notes = _notes_of(score_or_notes)
    if not notes:
        raise NoNotes("pitch-class histogram needs at least one note")
    counts = np.zeros(12)
    for note in notes:
        counts[note.pitch % 12] += 1
    return counts / counts.sum()


def pitch_class_entropy(score_or_notes) -> float:
    """Shannon entropy of the pitch-class histogram, in bits."""
    h = pitch_class_histogram(score_or_notes)
    nz = h[h > 0]
    return float(-(nz * np.log2(nz)).sum())


def groove_vector(score: Score, bar_index: int) -> np.ndarray:
    """64 binary onset flags for one bar, grid scaled proportionally."""
    bar = score.bars[bar_index]
    g = np.zeros(64, dtype=np.uint8)
    grid = bar.grid_size
    for note in score.notes:
        if bar.contains(note.onset):
            g[(note.onset - bar.start_tick) * 64 // grid] = 1
    return g


def groove_similarity(a, b) -> float:
    """1 minus the normalized Hamming distance between two groove vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != (64,) or b.shape != (64,):
        raise InvariantViolation("groove vectors must have exactly 64 slots")
    return 1.0 - float(np.sum(a != b)) / 64.0


def mean_groove_similarity(score: Score) -> float:
    """Mean groove similarity over all unordered bar pairs."""
    n = len(score.bars)
    if n < 2:
        raise TooFewBars("grooving similarity needs at least 2 bars")
    vectors = [groove_vector(score, i) for i in range(n)]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += groove_similarity(vectors[i], vectors[j])
    return total / (n * (n - 1) / 2)


def chroma_frames(score: Score) -> np.ndarray:
    """One 12-dim chroma vector per quarter note, overlap-weighted in ticks."""
    n_frames = -(-score.total_ticks // TICKS_PER_QUARTER)
    frames = np.zeros((n_frames, 12))
    for note in score.notes:
        pc = note.pitch % 12
        first = note.onset // TICKS_PER_QUARTER
        last = -(-note.end // TICKS_PER_QUARTER)
        for f in range(first, min(last, n_frames)):
            lo = max(note.onset, f * TICKS_PER_QUARTER)
            hi = min(note.end, (f + 1) * TICKS_PER_QUARTER)
            frames[f, pc] += hi - lo
    return frames


def self_similarity(frames: np.ndarray) -> np.ndarray:
    """Cosine self-similarity matrix; all-zero frames are similar to nothing."""
    norms = np.linalg.norm(frames, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = frames / safe[:, None]
    return np.clip(unit @ unit.T, 0.0, 1.0)


@dataclass(frozen=True)
class ScapePlot:
    """Fitness of every feasible segment, indexed by (length, center).

    S[n - 1, c] is the fitness of the length-n segment whose start s gives
    center c = s + (n - 1) // 2. Segments with no non-overlapping partner
    (n > N // 2) stay at 0.
    """
    S: np.ndarray
    frame_duration_seconds: float
    n_frames: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_frames", self.S.shape[0])

    def fitness(self, length: int, start: int) -> float:
        return float(self.S[length - 1, start + (length - 1) // 2])


def compute_scape_plot(score: Score) -> ScapePlot:
    """Fitness scape plot over quarter-note chroma frames.

    fitness(n, s) = max over starts t with |t - s| >= n of the mean of the
    n self-similarity values SSM[s+i, t+i].
    """
    if len(score.bars) < 4:
        raise TooFewBars("scape plot needs at least 4 bars")
    ssm = self_similarity(chroma_frames(score))
    n_frames = ssm.shape[0]
    S = np.zeros((n_frames, n_frames))
    for n in range(1, n_frames // 2 + 1):
        best = np.zeros(n_frames - n + 1)
        for d in range(n, n_frames - n + 1):
            diag = np.diagonal(ssm, d)
            cs = np.concatenate(([0.0], np.cumsum(diag)))
            window = (cs[n:] - cs[:-n]) / n
            m = window.shape[0]
            np.maximum(best[:m], window, out=best[:m])
            np.maximum(best[d:d + m], window, out=best[d:d + m])
        c0 = (n - 1) // 2
        S[n - 1, c0:c0 + best.shape[0]] = best
    return ScapePlot(S=S, frame_duration_seconds=60.0 / score.tempo_class)


def structureness(scape: ScapePlot, l_seconds: float, u_seconds: float) -> float:
    """Max fitness over segments whose duration in seconds lies in [l, u]."""
    if l_seconds <= 0 or l_seconds > u_seconds:
        raise InvalidInterval(
            f"need 0 < l <= u, got l={l_seconds}, u={u_seconds}")
    fd = scape.frame_duration_seconds
    n_lo = max(1, math.ceil(l_seconds / fd - 1e-12))
    n_hi = min(scape.n_frames, math.floor(u_seconds / fd + 1e-12))
    if n_lo > n_hi:
        return 0.0
    return float(scape.S[n_lo - 1:n_hi].max())


def structureness_defaults(score: Score) -> dict[str, float]:
    """The three reported indicators: max fitness at >= 3, 6, 9 seconds."""
    scape = compute_scape_plot(score)
    piece = score.duration_seconds
    return {
        name: structureness(scape, l, max(l, piece))
        for name, l in (("short", 3.0), ("mid", 6.0), ("long", 9.0))
    }
