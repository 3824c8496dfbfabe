import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import randomize
from sketchebm.backends import ToyFeatureExtractor
from sketchebm.errors import FingerprintMismatchError, FormatVersionError, NumericError
from sketchebm.evalkit import (EvalReport, FeatureStats, StatsAccumulator, eval_fid, frechet_distance,
                               generated_features, precision_recall, sample_eval_images)
from sketchebm.flow import CouplingFlow


def _stats(mu, sigma, count=100):
    return FeatureStats(np.asarray(mu, dtype=np.float64), np.atleast_2d(np.asarray(sigma, dtype=np.float64)), count)


def _fid_oracle(mu1, s1, mu2, s2):
    """Symmetric form Tr((S1^1/2 S2 S1^1/2)^1/2) via eigendecompositions."""
    def psd_sqrt(m):
        vals, vecs = np.linalg.eigh(m)
        return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
    r = psd_sqrt(s1)
    cross = np.trace(psd_sqrt(r @ s2 @ r))
    d = mu1 - mu2
    return d @ d + np.trace(s1) + np.trace(s2) - 2 * cross


def _knn_oracle(gen, real, k):
    def radius(points, i):
        return sorted(math.dist(points[i], points[j]) for j in range(len(points)))[k]

    def coverage(ref, query):
        radii = [radius(ref, i) for i in range(len(ref))]
        hits = sum(any(math.dist(q, ref[i]) <= radii[i] for i in range(len(ref))) for q in query)
        return hits / len(query)

    return coverage(real, gen), coverage(gen, real)


def test_frechet_one_dimensional_unit_shift():
    assert frechet_distance(_stats([0.0], [1.0]), _stats([1.0], [1.0])) == pytest.approx(1.0, abs=1e-8)


def test_frechet_one_dimensional_variance():
    # (sqrt(4) - sqrt(1))^2 = 1
    assert frechet_distance(_stats([0.0], [1.0]), _stats([0.0], [4.0])) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_frechet_diagonal_closed_form(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.1, 3, 6), rng.uniform(0.1, 3, 6)
    m1, m2 = rng.normal(size=6), rng.normal(size=6)
    expected = ((m1 - m2) ** 2).sum() + ((np.sqrt(a) - np.sqrt(b)) ** 2).sum()
    assert frechet_distance(_stats(m1, np.diag(a)), _stats(m2, np.diag(b))) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_frechet_general_against_eigen_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    s1, s2 = a @ a.T + 0.1 * np.eye(5), b @ b.T + 0.1 * np.eye(5)
    m1, m2 = rng.normal(size=5), rng.normal(size=5)
    got = frechet_distance(_stats(m1, s1), _stats(m2, s2))
    assert got == pytest.approx(_fid_oracle(m1, s1, m2, s2), abs=1e-8)
    assert got == pytest.approx(frechet_distance(_stats(m2, s2), _stats(m1, s1)), abs=1e-8)


def test_frechet_identical_sets_near_zero():
    feats = np.random.default_rng(0).normal(size=(500, 8))
    s = FeatureStats.from_features(feats)
    assert 0.0 <= frechet_distance(s, s) <= 1e-6


def test_frechet_rejects_non_psd():
    bad = _stats([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NumericError, match="positive semidefinite"):
        frechet_distance(bad, _stats([0.0, 0.0], np.eye(2)))
    asym = _stats([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NumericError, match="symmetric"):
        frechet_distance(asym, _stats([0.0, 0.0], np.eye(2)))


def test_frechet_singular_covariance():
    # rank-deficient covariances are legal; the result stays finite and >= 0
    s1 = np.diag([1.0, 0.0])
    s2 = np.diag([0.0, 1.0])
    v = frechet_distance(_stats([0, 0], s1), _stats([0, 0], s2))
    assert v == pytest.approx(2.0, abs=1e-6)


def test_frechet_dimension_mismatch():
    with pytest.raises(ValueError):
        frechet_distance(_stats([0.0], [1.0]), _stats([0.0, 0.0], np.eye(2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_frechet_nonnegative_symmetric(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) * 2 + 1
    a, b = FeatureStats.from_features(x), FeatureStats.from_features(y)
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, abs=1e-8)


def test_accumulator_matches_numpy():
    feats = np.random.default_rng(1).normal(size=(300, 4))
    acc = StatsAccumulator(4).update(feats[:100]).merge(StatsAccumulator(4).update(feats[100:]))
    s = acc.finalize()
    assert np.allclose(s.mu, feats.mean(0), atol=1e-12)
    assert np.allclose(s.sigma, np.cov(feats, rowvar=False), atol=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_precision_recall_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gen = rng.normal(size=(20, 3))
    real = rng.normal(size=(20, 3)) + rng.uniform(0, 1.5)
    assert precision_recall(gen, real, k=3) == _knn_oracle(gen.tolist(), real.tolist(), 3)


def test_precision_recall_identical_and_disjoint():
    x = np.random.default_rng(0).normal(size=(30, 4))
    assert precision_recall(x, x.copy()) == (1.0, 1.0)
    assert precision_recall(x, x + 1000.0) == (0.0, 0.0)


def test_precision_recall_permutation_invariant():
    rng = np.random.default_rng(3)
    gen, real = rng.normal(size=(25, 2)), rng.normal(size=(25, 2)) + 0.5
    base = precision_recall(gen, real)
    assert precision_recall(gen[rng.permutation(25)], real[rng.permutation(25)]) == base


def test_precision_recall_needs_k_plus_one_points():
    with pytest.raises(ValueError):
        precision_recall(np.zeros((3, 2)), np.zeros((10, 2)), k=3)


def test_stats_file_round_trip(tmp_path):
    s = FeatureStats.from_features(np.random.default_rng(0).normal(size=(50, 3)), fingerprint="fp-a")
    s.save(tmp_path / "s.stats")
    back = FeatureStats.load(tmp_path / "s.stats", expected_fingerprint="fp-a")
    assert np.array_equal(back.mu, s.mu) and np.array_equal(back.sigma, s.sigma)
    assert (back.count, back.fingerprint) == (50, "fp-a")
    with pytest.raises(FingerprintMismatchError):
        FeatureStats.load(tmp_path / "s.stats", expected_fingerprint="fp-b")
    raw = bytearray((tmp_path / "s.stats").read_bytes())
    raw[8:12] = (2).to_bytes(4, "little")
    (tmp_path / "t.stats").write_bytes(bytes(raw))
    with pytest.raises(FormatVersionError):
        FeatureStats.load(tmp_path / "t.stats")


def test_report_json_round_trip():
    r = EvalReport(12.5, 0.7, 0.4, 100, "abc", {"k": 3})
    assert EvalReport.from_json(r.to_json()) == r


def test_eval_sampling_protocol(toy_backends):
    g = toy_backends.generator
    flow = CouplingFlow(16, 2, 8)
    batches = list(sample_eval_images(flow, g, 7, torch.Generator().manual_seed(0), batch_size=3))
    assert [b.shape[0] for b, _ in batches] == [3, 3, 1]
    imgs, meta = batches[-1]
    assert imgs.shape[-2:] == (256, 256)
    assert meta["content_truncation"] is None and meta["style_truncation"] == 1.0
    assert meta["resolution"] == 256 and meta["styles_drawn"] == 7
    # quantised to 8 bits like images read from disk
    assert torch.equal(torch.round(imgs * 255), imgs * 255)


def test_eval_fid_shifted_extractor(toy_backends):
    g = toy_backends.generator
    flow = randomize(CouplingFlow(16, 2, 8), seed=2, scale=0.1)
    shift = np.linspace(-1, 1, 16)
    base, shifted = ToyFeatureExtractor(), ToyFeatureExtractor(shift=shift)
    feats, _ = generated_features(flow, g, base, 200, torch.Generator().manual_seed(1))
    ref = FeatureStats.from_features(feats + shift)
    # same samples seen through the shifted extractor: distance is exactly 0
    assert eval_fid(flow, g, shifted, ref, 200, torch.Generator().manual_seed(1)) <= 1e-6
    # through the unshifted extractor: the means differ by ``shift``
    got = frechet_distance(FeatureStats.from_features(feats), ref)
    assert got == pytest.approx(float(shift @ shift), rel=1e-6)


def test_eval_fid_fingerprint_mismatch(toy_backends):
    ref = FeatureStats(np.zeros(16), np.eye(16), 10, fingerprint="something-else")
    with pytest.raises(FingerprintMismatchError):
        eval_fid(CouplingFlow(16, 1, 4), toy_backends.generator, ToyFeatureExtractor(), ref, 10)
