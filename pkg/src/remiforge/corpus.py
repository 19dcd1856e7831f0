"""Corpus preparation: manifest indexing, note repair, segmentation, sampling.

A corpus is described by a CSV manifest with header ``path,category,composer``
(composer empty for unlabeled data; paths resolved relative to the manifest).
`build_index` parses every file, repairs notes to the legal duration alphabet,
and stores the encoded token stream, so batch sampling never re-reads MIDI.

Sampling follows a two-stage recipe: pick a group uniformly (categories while
pretraining, composers while fine-tuning), then a file uniformly within it,
then a uniformly random bar-aligned window, then a uniform transposition from
the in-range part of [-3, 3]. Pretraining batches force the composer token to
None; fine-tuning batches use the file's composer.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError, CorruptIndex, EmptyCategory, ScoreTooSmall
from .score import COMPOSERS, Score, clamp_duration, sorted_notes
from .tokens import (
    BAR_ID,
    BOS_ID,
    EOS_ID,
    PAD_ID,
    VOCAB,
    composer_token,
    encode_ids,
)
from . import midi_io

INDEX_MAGIC = b"RFIX"
INDEX_VERSION = 1

_PITCH_ID_LO = VOCAB.id_of("Note_Pitch_21")
_PITCH_ID_HI = VOCAB.id_of("Note_Pitch_108")
_COMPOSER_ID = {name: VOCAB.id_of(composer_token(name)) for name in (None,) + COMPOSERS}


@dataclass(frozen=True)
class Segment:
    """A fixed-length, right-padded training sequence cut from one score."""
    ids: tuple[int, ...]
    attention_length: int
    source: tuple[str | None, int, int]  # (file path, start bar, end bar)


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    category: str
    composer: str | None
    bar_count: int
    ids: tuple[int, ...]


@dataclass(frozen=True)
class CorpusIndex:
    entries: tuple[CorpusEntry, ...]

    @property
    def categories(self) -> dict[str, list[CorpusEntry]]:
        groups: dict[str, list[CorpusEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.category, []).append(e)
        return groups

    @property
    def by_composer(self) -> dict[str, list[CorpusEntry]]:
        groups: dict[str, list[CorpusEntry]] = {}
        for e in self.entries:
            if e.composer is not None:
                groups.setdefault(e.composer, []).append(e)
        return groups


def repair_overlong_notes(score: Score) -> Score:
    """Normalize every duration to the legal alphabet.

    A note longer than its containing bar is clipped to that bar's length;
    every duration is then clamped to the nearest legal value. If clamping
    would run a note into the next strike of the same pitch, the duration
    drops to the largest legal value that fits; when nothing legal fits
    (next strike under 3 ticks away) the earlier note is dropped.
    """
    by_pitch: dict[int, list] = {}
    for note in score.notes:
        by_pitch.setdefault(note.pitch, []).append(note)
    repaired = []
    for run in by_pitch.values():
        for i, note in enumerate(run):
            bar = score.bar_of(note.onset)
            duration = clamp_duration(min(note.duration, bar.grid_size))
            if i + 1 < len(run):
                gap = run[i + 1].onset - note.onset
                if duration > gap:
                    duration = gap - gap % 3
                    if duration < 3:
                        continue
            repaired.append(replace(note, duration=duration))
    return replace(score, notes=sorted_notes(repaired)).validate()


def _bar_spans(ids) -> tuple[list[tuple[int, int]], bool, bool]:
    """Token [start, end) span of each bar plus BOS/EOS presence."""
    has_bos = len(ids) > 2 and ids[2] == BOS_ID
    has_eos = len(ids) > 0 and ids[-1] == EOS_ID
    starts = [i for i, t in enumerate(ids) if t == BAR_ID]
    body_end = len(ids) - (1 if has_eos else 0)
    spans = [(s, e) for s, e in zip(starts, starts[1:] + [body_end])]
    return spans, has_bos, has_eos


def _segment_ids(ids, context_length: int, rng, path: str | None) -> Segment:
    spans, has_bos, has_eos = _bar_spans(ids)
    nbars = len(spans)
    budget = context_length - 2
    costs = [e - s for s, e in spans]
    prefix = [0]
    for c in costs:
        prefix.append(prefix[-1] + c)
    last = nbars - 1

    def cost(s: int, e: int) -> int:
        extra = (1 if s == 0 and has_bos else 0) + (1 if e == last and has_eos else 0)
        return prefix[e + 1] - prefix[s] + extra

    feasible = [s for s in range(nbars) if cost(s, s) <= budget]
    if not feasible:
        raise ScoreTooSmall(
            f"no single bar fits in a context of {context_length} tokens")
    start = feasible[int(rng.integers(len(feasible)))]
    end = start
    while end + 1 < nbars and cost(start, end + 1) <= budget:
        end += 1

    out = [ids[0], ids[1]]
    if start == 0 and has_bos:
        out.append(BOS_ID)
    out.extend(ids[spans[start][0]:spans[end][1]])
    if end == last and has_eos:
        out.append(EOS_ID)
    attention_length = len(out)
    out.extend([PAD_ID] * (context_length - attention_length))
    return Segment(ids=tuple(out), attention_length=attention_length,
                   source=(path, start, end))


def segment(score: Score, context_length: int, rng, path: str | None = None) -> Segment:
    """Cut a uniformly random maximal run of whole bars into a padded window.

    Two context slots are reserved for the leading Composer and Tempo tokens;
    BOS/EOS appear only when the run touches the true start/end of the piece.
    """
    return _segment_ids(encode_ids(score), context_length, rng, path)


def _pitch_id_bounds(ids):
    lo = hi = None
    for t in ids:
        if _PITCH_ID_LO <= t <= _PITCH_ID_HI:
            lo = t if lo is None or t < lo else lo
            hi = t if hi is None or t > hi else hi
    return lo, hi


def legal_shift_range(obj) -> tuple[int, int]:
    """The sub-range of [-3, 3] keeping every pitch inside the 88 keys."""
    if isinstance(obj, Score):
        pitches = [n.pitch for n in obj.notes]
        lo_p, hi_p = min(pitches), max(pitches)
        lo, hi = lo_p - 21, 108 - hi_p
    else:
        lo_id, hi_id = _pitch_id_bounds(obj.ids)
        if lo_id is None:
            return 0, 0
        lo, hi = lo_id - _PITCH_ID_LO, _PITCH_ID_HI - hi_id
    return -min(3, lo), min(3, hi)


def augment_pitch(obj, shift: int):
    """Transpose a Score or Segment by `shift` semitones, clamping toward 0
    until every pitch stays inside [21, 108]."""
    lo, hi = legal_shift_range(obj)
    shift = max(lo, min(hi, shift))
    if isinstance(obj, Score):
        return obj.transposed(shift)
    if shift == 0:
        return obj
    ids = tuple(t + shift if _PITCH_ID_LO <= t <= _PITCH_ID_HI else t
                for t in obj.ids)
    return replace(obj, ids=ids)


def sample_batch(index: CorpusIndex, batch_size: int, context_length: int,
                 stage: str, rng) -> list[Segment]:
    """Draw a batch of augmented segments with stage-appropriate conditioning."""
    if stage == "pretrain":
        groups = index.categories
        forced = _COMPOSER_ID[None]
    elif stage == "finetune":
        groups = index.by_composer
        forced = None
    else:
        raise ConfigError(f"stage must be pretrain or finetune, got {stage!r}")
    if not groups:
        raise EmptyCategory(f"index has no groups to sample for stage {stage!r}")
    labels = sorted(groups)
    batch = []
    for _ in range(batch_size):
        label = labels[int(rng.integers(len(labels)))]
        entries = groups[label]
        entry = entries[int(rng.integers(len(entries)))]
        seg = _segment_ids(entry.ids, context_length, rng, entry.path)
        lo, hi = legal_shift_range(seg)
        shift = int(rng.integers(lo, hi + 1))
        seg = augment_pitch(seg, shift)
        head = forced if forced is not None else _COMPOSER_ID[entry.composer]
        seg = replace(seg, ids=(head,) + seg.ids[1:])
        batch.append(seg)
    return batch


def _normalize_composer(raw: str) -> str | None:
    name = raw.strip()
    if not name:
        return None
    for known in COMPOSERS:
        if name.lower() == known.lower():
            return known
    raise ConfigError(f"unknown composer {raw!r} in manifest")


def build_index(manifest_path) -> CorpusIndex:
    """Parse every manifest row into an indexed, repaired, encoded entry."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    entries = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "category", "composer"]:
            raise ConfigError(
                "manifest header must be exactly 'path,category,composer', "
                f"got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            path = (row["path"] or "").strip()
            category = (row["category"] or "").strip()
            if not path or not category:
                raise ConfigError(f"manifest line {row_no}: path and category required")
            composer = _normalize_composer(row["composer"] or "")
            data = (base / path).read_bytes()
            score = repair_overlong_notes(midi_io.parse_midi(data))
            score = replace(score, composer=composer)
            entries.append(CorpusEntry(
                path=path,
                category=category,
                composer=composer,
                bar_count=len(score.bars),
                ids=tuple(encode_ids(score)),
            ))
    return CorpusIndex(entries=tuple(entries))


def index_bytes(index: CorpusIndex) -> bytes:
    out = bytearray()
    out += INDEX_MAGIC
    out += struct.pack("<II", INDEX_VERSION, len(index.entries))
    for e in index.entries:
        for text in (e.path, e.category, e.composer or ""):
            raw = text.encode("utf-8")
            out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<II", e.bar_count, len(e.ids))
        out += bytes(e.ids)
    return bytes(out)


def save_index(index: CorpusIndex, path) -> None:
    Path(path).write_bytes(index_bytes(index))


def load_index(path) -> CorpusIndex:
    data = Path(path).read_bytes()
    if data[:4] != INDEX_MAGIC:
        raise CorruptIndex("not an index file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != INDEX_VERSION:
            raise CorruptIndex(f"unsupported index version {version}")
        pos = 12
        entries = []
        for _ in range(count):
            texts = []
            for _ in range(3):
                (n,) = struct.unpack_from("<H", data, pos)
                pos += 2
                texts.append(data[pos:pos + n].decode("utf-8"))
                pos += n
            bar_count, n_ids = struct.unpack_from("<II", data, pos)
            pos += 8
            ids = tuple(data[pos:pos + n_ids])
            if len(ids) != n_ids:
                raise CorruptIndex("truncated id stream")
            pos += n_ids
            entries.append(CorpusEntry(
                path=texts[0],
                category=texts[1],
                composer=texts[2] or None,
                bar_count=bar_count,
                ids=ids,
            ))
    except struct.error as exc:
        raise CorruptIndex(f"truncated index file: {exc}") from None
    return CorpusIndex(entries=tuple(entries))
