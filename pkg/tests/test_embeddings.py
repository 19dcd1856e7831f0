"""Embedding file formats and the Fréchet distance between Gaussian fits."""

import numpy as np
import pytest

import _oracles as oracle
from remiforge.embeddings import (
    EmbeddingSet,
    frechet_distance,
    load_embeddings,
    load_vectors,
    save_vectors_binary,
)
from remiforge.errors import (
    DimensionMismatch,
    InvariantViolation,
    MalformedEmbedding,
    NonPSDCovariance,
)


def gaussian_set(mean, cov, n=0):
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    return EmbeddingSet(mean=mean, covariance=cov, n=n or len(mean) + 1)


class TestFrechet:
    def test_identical_sets_give_zero(self, rng):
        vecs = rng.normal(size=(40, 6))
        e = EmbeddingSet.from_vectors(vecs)
        d = frechet_distance(e, e)
        assert 0.0 <= d < 1e-9

    def test_mean_shift_only(self):
        cov = np.eye(3)
        a = gaussian_set([0.0, 0.0, 0.0], cov)
        b = gaussian_set([2.0, 0.0, 0.0], cov)
        assert frechet_distance(a, b) == pytest.approx(4.0)

    def test_variance_difference_only(self):
        a = gaussian_set([0.0], [[4.0]])
        b = gaussian_set([0.0], [[1.0]])
        # 4 + 1 - 2 * sqrt(4) = 1
        assert frechet_distance(a, b) == pytest.approx(1.0)

    def test_1d_closed_form(self, rng):
        for _ in range(50):
            mu_a, mu_b = rng.normal(size=2)
            va, vb = rng.random(2) + 0.1
            a = gaussian_set([mu_a], [[va]])
            b = gaussian_set([mu_b], [[vb]])
            assert frechet_distance(a, b) == pytest.approx(
                oracle.frechet_1d(mu_a, va, mu_b, vb))

    def test_diagonal_closed_form(self, rng):
        da = rng.random(5) + 0.1
        db = rng.random(5) + 0.1
        mu_a = rng.normal(size=5)
        mu_b = rng.normal(size=5)
        a = gaussian_set(mu_a, np.diag(da))
        b = gaussian_set(mu_b, np.diag(db))
        want = float(((mu_a - mu_b) ** 2).sum()
                     + (da + db - 2 * np.sqrt(da * db)).sum())
        assert frechet_distance(a, b) == pytest.approx(want)

    def test_symmetry(self, rng):
        for _ in range(10):
            x = rng.normal(size=(30, 4))
            y = rng.normal(size=(25, 4)) * 2.0 + 1.0
            a = EmbeddingSet.from_vectors(x)
            b = EmbeddingSet.from_vectors(y)
            d_ab = frechet_distance(a, b)
            d_ba = frechet_distance(b, a)
            assert d_ab == pytest.approx(d_ba, abs=1e-8)
            assert d_ab >= 0.0

    def test_rotation_invariance(self, rng):
        # distance depends only on the Gaussians, not the basis
        x = rng.normal(size=(50, 3))
        y = rng.normal(size=(50, 3)) + 0.5
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        a, b = EmbeddingSet.from_vectors(x), EmbeddingSet.from_vectors(y)
        ar = EmbeddingSet.from_vectors(x @ q)
        br = EmbeddingSet.from_vectors(y @ q)
        assert frechet_distance(a, b) == pytest.approx(
            frechet_distance(ar, br), abs=1e-8)

    def test_dimension_mismatch(self, rng):
        a = EmbeddingSet.from_vectors(rng.normal(size=(5, 3)))
        b = EmbeddingSet.from_vectors(rng.normal(size=(5, 4)))
        with pytest.raises(DimensionMismatch):
            frechet_distance(a, b)

    def test_non_psd_rejected(self):
        bad = gaussian_set([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
        ok = gaussian_set([0.0, 0.0], np.eye(2))
        with pytest.raises(NonPSDCovariance):
            frechet_distance(bad, ok)
        with pytest.raises(NonPSDCovariance):
            frechet_distance(ok, bad)

    def test_tiny_negative_eigenvalue_clamped(self):
        noisy = gaussian_set([0.0, 0.0], [[1.0, 0.0], [0.0, -1e-9]])
        ok = gaussian_set([0.0, 0.0], np.eye(2))
        assert frechet_distance(noisy, ok) >= 0.0


class TestEmbeddingSet:
    def test_from_vectors(self, rng):
        vecs = rng.normal(size=(10, 4))
        e = EmbeddingSet.from_vectors(vecs)
        assert e.n == 10 and e.dim == 4
        assert np.allclose(e.mean, vecs.mean(axis=0))
        assert np.allclose(e.covariance, np.cov(vecs, rowvar=False))

    def test_needs_two_vectors(self):
        with pytest.raises(InvariantViolation):
            EmbeddingSet.from_vectors([[1.0, 2.0]])

    def test_one_dimensional_vectors(self):
        e = EmbeddingSet.from_vectors([[1.0], [3.0]])
        assert e.covariance.shape == (1, 1)
        assert e.covariance[0, 0] == pytest.approx(2.0)  # sample variance

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(InvariantViolation):
            gaussian_set([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


class TestFileFormats:
    def test_csv_round_trip(self, tmp_path, rng):
        vecs = rng.normal(size=(6, 3))
        path = tmp_path / "e.csv"
        path.write_text("\n".join(",".join(f"{v:.17g}" for v in row)
                                  for row in vecs))
        assert np.allclose(load_vectors(path), vecs)

    def test_csv_whitespace_separator(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("1.0 2.0\n3.0 4.0\n\n")
        assert load_vectors(path).tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_binary_round_trip(self, tmp_path, rng):
        vecs = rng.normal(size=(7, 5)).astype(np.float32)
        path = tmp_path / "e.emb"
        save_vectors_binary(vecs, path)
        got = load_vectors(path)
        assert got.shape == (7, 5)
        assert np.allclose(got, vecs, atol=1e-6)
        assert path.read_bytes()[:4] == b"RFEB"

    def test_load_embeddings_fits_gaussian(self, tmp_path, rng):
        vecs = rng.normal(size=(20, 2))
        path = tmp_path / "e.emb"
        save_vectors_binary(vecs, path)
        e = load_embeddings(path)
        assert e.n == 20
        assert np.allclose(e.mean, vecs.mean(axis=0), atol=1e-6)

    def test_ragged_csv_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(MalformedEmbedding):
            load_vectors(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("hello,world\n")
        with pytest.raises(MalformedEmbedding):
            load_vectors(path)
        path.write_bytes(b"\xff\xfe\x00\x01binary junk")
        with pytest.raises(MalformedEmbedding):
            load_vectors(path)

    def test_truncated_binary_rejected(self, tmp_path, rng):
        path = tmp_path / "e.emb"
        save_vectors_binary(rng.normal(size=(4, 4)), path)
        data = path.read_bytes()
        for cut in (8, len(data) - 5):
            path.write_bytes(data[:cut])
            with pytest.raises(MalformedEmbedding):
                load_vectors(path)

    def test_bad_binary_version(self, tmp_path, rng):
        path = tmp_path / "e.emb"
        save_vectors_binary(rng.normal(size=(4, 4)), path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(MalformedEmbedding):
            load_vectors(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(MalformedEmbedding):
            load_vectors(path)
