"""Embedding-set loading and the Fréchet distance between Gaussian fits.

Two on-disk formats are accepted: a plain CSV with one vector per row, or a
16-byte-headed binary matrix (magic ``RFEB``, u32 version, u32 N, u32 D,
then N*D little-endian float32 values, row major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InvariantViolation,
    MalformedEmbedding,
    NonPSDCovariance,
)

EMBEDDING_MAGIC = b"RFEB"
EMBEDDING_VERSION = 1


@dataclass(frozen=True)
class EmbeddingSet:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        cov = self.covariance
        if cov.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise InvariantViolation("covariance shape does not match mean")
        if np.abs(cov - cov.T).max() > 1e-9:
            raise InvariantViolation("covariance not symmetric within 1e-9")

    @classmethod
    def from_vectors(cls, vectors) -> "EmbeddingSet":
        m = np.asarray(vectors, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2:
            raise InvariantViolation("need an N x D matrix with N >= 2")
        cov = np.cov(m, rowvar=False)
        cov = np.atleast_2d(cov)
        return cls(mean=m.mean(axis=0), covariance=(cov + cov.T) / 2,
                   n=m.shape[0])

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def load_vectors(path) -> np.ndarray:
    """Read an N x D float matrix from CSV or the binary format."""
    data = Path(path).read_bytes()
    if data[:4] == EMBEDDING_MAGIC:
        if len(data) < 16:
            raise MalformedEmbedding("binary embedding header truncated")
        version, n, d = struct.unpack_from("<III", data, 4)
        if version != EMBEDDING_VERSION:
            raise MalformedEmbedding(f"unsupported embedding version {version}")
        body = data[16:]
        if len(body) != 4 * n * d:
            raise MalformedEmbedding(
                f"expected {4 * n * d} bytes of float32 data, got {len(body)}")
        return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(n, d)
    try:
        text = data.decode("utf-8")
        rows = [
            [float(cell) for cell in line.replace(",", " ").split()]
            for line in text.splitlines() if line.strip()
        ]
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedEmbedding(f"cannot parse embedding file: {exc}") from None
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise MalformedEmbedding("embedding CSV rows are empty or ragged")
    return np.array(rows, dtype=np.float64)


def save_vectors_binary(vectors, path) -> None:
    m = np.ascontiguousarray(np.asarray(vectors, dtype=np.float64), dtype="<f4")
    header = EMBEDDING_MAGIC + struct.pack(
        "<III", EMBEDDING_VERSION, m.shape[0], m.shape[1])
    Path(path).write_bytes(header + m.tobytes())


def load_embeddings(path) -> EmbeddingSet:
    return EmbeddingSet.from_vectors(load_vectors(path))


def _checked_eigh(matrix: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    sym = (matrix + matrix.T) / 2
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -1e-6:
        raise NonPSDCovariance(
            f"{what} has eigenvalue {eigvals.min():.3e} below -1e-6")
    return np.clip(eigvals, 0.0, None), eigvecs


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The square-root trace uses the symmetric product S_a^{1/2} S_b S_a^{1/2},
    whose eigenvalues match those of S_a S_b; negatives beyond -1e-6 raise,
    smaller ones clamp to zero.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")
    wa, va = _checked_eigh(a.covariance, "first covariance")
    _checked_eigh(b.covariance, "second covariance")
    root_a = (va * np.sqrt(wa)) @ va.T
    product = root_a @ b.covariance @ root_a
    wp, _ = _checked_eigh(product, "covariance product")
    diff = a.mean - b.mean
    value = (float(diff @ diff)
             + float(np.trace(a.covariance) + np.trace(b.covariance))
             - 2.0 * float(np.sqrt(wp).sum()))
    return max(0.0, value)
