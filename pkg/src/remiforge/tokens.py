"""Token vocabulary and the Score <-> token-sequence codec.

A sequence is laid out as

    Composer Tempo [BOS] (Bar Time_Signature (Beat (Pitch Duration)+)*)+ [EOS] Pad*

BOS appears only when the score starts at the true beginning of the piece
and EOS only when it runs to the true end, so segments cut from the middle
carry neither. Beats within a bar are strictly ascending and never empty;
pitches within a beat are strictly ascending. `decode` enforces the grammar
and reports the index of the first offending token via GrammarError.

The vocabulary is fixed at 170 entries with Pad at id 0.
"""

from __future__ import annotations

from .errors import GrammarError, UnknownId, UnknownToken
from .score import (
    COMPOSERS,
    DURATIONS,
    SUPPORTED_SIGNATURES,
    TEMPO_CLASSES,
    Note,
    Score,
    clamp_duration,
    grid_size,
    make_bars,
)

PAD = "Pad"
BOS = "BOS"
EOS = "EOS"
BAR = "Bar"

_COMPOSER_OF = {f"Composer_{name}": name for name in COMPOSERS}
_COMPOSER_OF["Composer_None"] = None
_TEMPO_OF = {f"Tempo_{t}": t for t in TEMPO_CLASSES}
_TIMESIG_OF = {f"Time_Signature_{n}/{d}": (n, d) for n, d in SUPPORTED_SIGNATURES}
_BEAT_OF = {f"Beat_{k}": k for k in range(48)}
_PITCH_OF = {f"Note_Pitch_{p}": p for p in range(21, 109)}
_DURATION_OF = {f"Note_Duration_{d}": d for d in DURATIONS}


class Vocabulary:
    """Bidirectional token-name/id table. Ids are dense and start at Pad=0."""

    def __init__(self):
        names = [PAD, BOS, EOS, BAR]
        names += ["Composer_None"] + [f"Composer_{c}" for c in COMPOSERS]
        names += [f"Tempo_{t}" for t in TEMPO_CLASSES]
        names += [f"Time_Signature_{n}/{d}" for n, d in SUPPORTED_SIGNATURES]
        names += [f"Beat_{k}" for k in range(48)]
        names += [f"Note_Pitch_{p}" for p in range(21, 109)]
        names += [f"Note_Duration_{d}" for d in DURATIONS]
        self._names = tuple(names)
        self._ids = {name: i for i, name in enumerate(names)}

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownToken(f"token {name!r} not in vocabulary") from None

    def name_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._names):
            raise UnknownId(f"id {token_id} outside [0, {len(self._names)})")
        return self._names[token_id]

    def to_ids(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def to_tokens(self, ids) -> list[str]:
        return [self.name_of(i) for i in ids]

    def tsv(self) -> str:
        return "".join(f"{i}\t{name}\n" for i, name in enumerate(self._names))


VOCAB = Vocabulary()
VOCAB_SIZE = len(VOCAB)
assert VOCAB_SIZE == 170

PAD_ID = VOCAB.id_of(PAD)
BOS_ID = VOCAB.id_of(BOS)
EOS_ID = VOCAB.id_of(EOS)
BAR_ID = VOCAB.id_of(BAR)


def composer_token(composer) -> str:
    return f"Composer_{composer}" if composer is not None else "Composer_None"


def encode(score: Score) -> list[str]:
    """Serialize a valid Score as a token sequence.

    Durations outside the legal alphabet are clamped to the nearest legal
    value (ties upward), so encoding is total but lossy on such scores.
    """
    score.validate()
    tokens = [composer_token(score.composer), f"Tempo_{score.tempo_class}"]
    if score.has_true_start:
        tokens.append(BOS)
    by_bar: dict[int, list[Note]] = {}
    for note in score.notes:
        by_bar.setdefault(score.bar_of(note.onset).index, []).append(note)
    for bar in score.bars:
        num, den = bar.time_signature
        tokens.append(BAR)
        tokens.append(f"Time_Signature_{num}/{den}")
        beat = None
        for note in by_bar.get(bar.index, ()):
            offset = note.onset - bar.start_tick
            if offset != beat:
                tokens.append(f"Beat_{offset}")
                beat = offset
            tokens.append(f"Note_Pitch_{note.pitch}")
            tokens.append(f"Note_Duration_{clamp_duration(note.duration)}")
    if score.has_true_end:
        tokens.append(EOS)
    return tokens


def decode(tokens) -> Score:
    """Parse a token sequence back into a Score, enforcing the grammar."""
    tokens = list(tokens)
    n = len(tokens)

    def fail(pos: int, message: str):
        raise GrammarError(pos, message)

    def peek(pos: int):
        return tokens[pos] if pos < n else None

    for pos, tok in enumerate(tokens):
        if tok not in VOCAB:
            fail(pos, f"unknown token {tok!r}")

    if n == 0 or tokens[0] not in _COMPOSER_OF:
        fail(0, "sequence must start with a composer token")
    composer = _COMPOSER_OF[tokens[0]]
    if n < 2 or tokens[1] not in _TEMPO_OF:
        fail(1, "expected a tempo token")
    tempo_class = _TEMPO_OF[tokens[1]]

    i = 2
    has_true_start = peek(i) == BOS
    if has_true_start:
        i += 1
    if peek(i) != BAR:
        fail(i, "expected Bar")

    signatures = []
    notes = []
    bar_start = 0
    last_end_by_pitch: dict[int, int] = {}
    while peek(i) == BAR:
        i += 1
        sig = _TIMESIG_OF.get(peek(i) or "")
        if sig is None:
            fail(i, "expected a time-signature token after Bar")
        signatures.append(sig)
        grid = grid_size(*sig)
        i += 1
        prev_beat = -1
        while peek(i) in _BEAT_OF:
            beat = _BEAT_OF[tokens[i]]
            if beat >= grid:
                fail(i, f"beat {beat} outside the {sig[0]}/{sig[1]} grid of {grid}")
            if beat <= prev_beat:
                fail(i, f"beat {beat} not after beat {prev_beat}")
            prev_beat = beat
            i += 1
            if peek(i) not in _PITCH_OF:
                fail(i, "beat with no notes")
            prev_pitch = -1
            onset = bar_start + beat
            while peek(i) in _PITCH_OF:
                pitch = _PITCH_OF[tokens[i]]
                if pitch <= prev_pitch:
                    fail(i, f"pitch {pitch} not above pitch {prev_pitch}")
                if onset < last_end_by_pitch.get(pitch, 0):
                    fail(i, f"pitch {pitch} still sounding at onset {onset}")
                prev_pitch = pitch
                i += 1
                duration = _DURATION_OF.get(peek(i) or "")
                if duration is None:
                    fail(i, "expected a duration token after a pitch")
                i += 1
                notes.append(Note(pitch=pitch, onset=onset, duration=duration))
                last_end_by_pitch[pitch] = onset + duration
        bar_start += grid

    has_true_end = peek(i) == EOS
    if has_true_end:
        i += 1
    while peek(i) == PAD:
        i += 1
    if i < n:
        fail(i, f"unexpected token {tokens[i]!r} after sequence end")
    if not notes:
        fail(n, "sequence has no notes")

    return Score(
        tempo_class=tempo_class,
        bars=make_bars(signatures),
        notes=tuple(notes),
        composer=composer,
        has_true_start=has_true_start,
        has_true_end=has_true_end,
    ).validate()


def encode_ids(score: Score) -> list[int]:
    return VOCAB.to_ids(encode(score))


def decode_ids(ids) -> Score:
    return decode(VOCAB.to_tokens(ids))


def format_tokens(tokens) -> str:
    """One token (or id) per line, the CLI interchange format."""
    return "".join(f"{t}\n" for t in tokens)


def parse_token_text(text: str) -> list[str]:
    return text.split()
