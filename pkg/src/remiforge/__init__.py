"""remiforge: a composer-style symbolic music toolkit.

MIDI <-> token round-tripping, corpus preparation, objective quality
metrics, chord-progression style analysis, and a toy conditioned decoder
with nucleus sampling. The neural pieces (model, training, sampling) pull
in torch, so they are imported lazily via their submodules rather than
re-exported here.
"""

__version__ = "0.1.0"

from .errors import RemiForgeError
from .midi_io import parse_midi, write_midi
from .score import (
    COMPOSERS,
    Note,
    Score,
    grid_size,
    quantize_tempo,
    quantize_time_signature,
)
from .tokens import VOCAB, Vocabulary, decode, decode_ids, encode, encode_ids
from .corpus import (
    CorpusIndex,
    Segment,
    augment_pitch,
    build_index,
    load_index,
    repair_overlong_notes,
    sample_batch,
    save_index,
    segment,
)
from .metrics import (
    compute_scape_plot,
    mean_groove_similarity,
    pitch_class_entropy,
    structureness,
    structureness_defaults,
)
from .style import (
    Chord,
    ProgressionTable,
    canonicalize,
    extract_chords,
    map_at_k,
    mine_progressions,
    ndcg_at_k,
    topn_overlap,
)
from .embeddings import EmbeddingSet, frechet_distance, load_embeddings

__all__ = [
    "__version__",
    "RemiForgeError",
    "parse_midi",
    "write_midi",
    "COMPOSERS",
    "Note",
    "Score",
    "grid_size",
    "quantize_tempo",
    "quantize_time_signature",
    "VOCAB",
    "Vocabulary",
    "decode",
    "decode_ids",
    "encode",
    "encode_ids",
    "CorpusIndex",
    "Segment",
    "augment_pitch",
    "build_index",
    "load_index",
    "repair_overlong_notes",
    "sample_batch",
    "save_index",
    "segment",
    "compute_scape_plot",
    "mean_groove_similarity",
    "pitch_class_entropy",
    "structureness",
    "structureness_defaults",
    "Chord",
    "ProgressionTable",
    "canonicalize",
    "extract_chords",
    "map_at_k",
    "mine_progressions",
    "ndcg_at_k",
    "topn_overlap",
    "EmbeddingSet",
    "frechet_distance",
    "load_embeddings",
]
