"""Exception hierarchy. Everything user-facing derives from RemiForgeError
so the CLI can map data problems to a single exit code."""


class RemiForgeError(Exception):
    """Base class for all data/domain errors raised by this package."""


# --- MIDI / score ---

class MalformedMidi(RemiForgeError):
    """Input bytes are not a parseable SMF format 0/1 file."""


class EmptyScore(RemiForgeError):
    """No notes survived parsing."""


class InvalidSignature(RemiForgeError):
    """Time signature with non-power-of-two denominator or numerator < 1."""


class InvariantViolation(RemiForgeError):
    """A Score (or other value) breaks one of its declared invariants."""


# --- tokenizer ---

class GrammarError(RemiForgeError):
    """Token sequence violates the REMI grammar.

    Carries the index of the offending token.
    """

    def __init__(self, position: int, message: str):
        super().__init__(f"at token {position}: {message}")
        self.position = position


class UnknownToken(RemiForgeError):
    """Token not present in the vocabulary."""


class UnknownId(RemiForgeError):
    """Integer id not present in the vocabulary."""


# --- corpus pipeline ---

class ScoreTooSmall(RemiForgeError):
    """Not even one bar of the piece fits in the context length."""


class EmptyCategory(RemiForgeError):
    """A sampling category has no corpus entries."""


class CorruptIndex(RemiForgeError):
    """Index file has a bad magic, version, or truncated body."""


# --- quality metrics ---

class NoNotes(RemiForgeError):
    """Metric needs at least one note."""


class TooFewBars(RemiForgeError):
    """Metric needs more bars than the score has."""


class InvalidInterval(RemiForgeError):
    """Structureness interval with l <= 0 or l > u."""


# --- style analysis ---

class TooFewChords(RemiForgeError):
    """Progression mining needs at least 4 non-None chords."""


class DimensionMismatch(RemiForgeError):
    """Embedding sets with different dimensionality."""


class NonPSDCovariance(RemiForgeError):
    """Covariance matrix has an eigenvalue below -1e-6."""


class MalformedEmbedding(RemiForgeError):
    """Embedding file is neither a float CSV nor a valid binary matrix."""


# --- neural core ---

class ContextOverflow(RemiForgeError):
    """Sequence longer than the model context."""


class UnknownComposer(RemiForgeError):
    """Composer id/name outside the fixed composer set."""


class AllPadBatch(RemiForgeError):
    """Batch contains no non-pad prediction targets."""


class NonFiniteLoss(RemiForgeError):
    """Training loss became NaN/inf; aborting with diagnostics."""


class PrimerTooShort(RemiForgeError):
    """Choice-count primer has fewer than 4 complete bars."""


class CheckpointError(RemiForgeError):
    """Checkpoint file corrupt or inconsistent with the expected config."""


class ConfigError(RemiForgeError):
    """Training config file missing keys or holding bad values."""
