import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motiongate import artifacts
from motiongate.detectors import (DETECTOR_KINDS, DetectorConfig, FittedDetector, TooFewSamplesError,
                                  average_path_length, fit_detector, fit_iforest, fit_rockad, iforest_draws,
                                  knn_score, score_iforest)
from motiongate.distances import dtw_distance, pairwise_dtw, pairwise_euclidean
from motiongate.features import KernelBank
from motiongate.features.featurizer import Featurizer

from helpers import future_version
from oracles import delannoy, dtw_bruteforce, iforest_oracle, knn_naive, monotone_paths


# ---------------------------------------------------------------------------
# DTW

def test_dtw_examples():
    assert dtw_distance([0.0, 0.0], [1.0, 1.0]) == 2.0
    assert dtw_distance([0.0, 1.0, 2.0], [0.0, 2.0]) == dtw_bruteforce([0, 1, 2], [0, 2]) == 1.0
    a = np.random.default_rng(0).normal(size=(7, 3))
    assert dtw_distance(a, a) == 0.0


def test_path_enumeration_counts():
    for n in range(1, 6):
        for m in range(1, 6):
            assert sum(1 for _ in monotone_paths(n, m)) == delannoy(n, m)


series = st.integers(1, 6).flatmap(
    lambda m: st.tuples(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(m)), elements=st.floats(-5, 5)),
                        arrays(np.float64, st.tuples(st.integers(1, 6), st.just(m)), elements=st.floats(-5, 5))))


@given(series)
def test_dtw_matches_enumeration(pair):
    a, b = pair
    assert dtw_distance(a, b) == pytest.approx(dtw_bruteforce(a, b), rel=1e-12, abs=1e-12)


@given(series, st.floats(0.05, 1.0))
def test_dtw_band_matches_banded_enumeration(pair, band):
    from motiongate.distances import band_radius

    a, b = pair
    r = band_radius(len(a), len(b), band)
    assert dtw_distance(a, b, band) == pytest.approx(dtw_bruteforce(a, b, radius=r), rel=1e-12, abs=1e-12)
    assert dtw_distance(a, b, band) >= dtw_distance(a, b)


@given(series)
def test_dtw_symmetric_nonnegative(pair):
    a, b = pair
    d = dtw_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)


grid_values = st.integers(-320, 320).map(lambda v: v / 64)  # no underflow in squared differences
grid_series = st.integers(1, 4).flatmap(
    lambda m: st.tuples(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(m)), elements=grid_values),
                        arrays(np.float64, st.tuples(st.integers(1, 6), st.just(m)), elements=grid_values)))


@given(grid_series)
def test_dtw_positive_when_a_row_is_unmatched(pair):
    a, b = pair
    rows_b = {tuple(r) for r in b}
    assume(any(tuple(r) not in rows_b for r in a))
    assert dtw_distance(a, b) > 0


@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31))
def test_dtw_at_most_diagonal_cost(L, M, seed):
    a, b = np.random.default_rng(seed).normal(size=(2, L, M))
    diagonal = float(np.sqrt(((a - b) ** 2).sum(axis=1)).sum())
    assert dtw_distance(a, b) <= diagonal + 1e-12


def test_dtw_channel_mismatch():
    with pytest.raises(ValueError):
        dtw_distance(np.zeros((3, 2)), np.zeros((3, 3)))


def test_pairwise_dtw_unequal_lengths():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(2, 4, 2)), rng.normal(size=(3, 6, 2))
    D = pairwise_dtw(A, B)
    assert D.shape == (2, 3)
    for i in range(2):
        for j in range(3):
            assert D[i, j] == pytest.approx(dtw_bruteforce(A[i], B[j]), rel=1e-12)
    assert knn_score(B, A[0], k=2, metric="dtw") == pytest.approx(np.sort(D[0])[:2].mean(), rel=1e-15)


# ---------------------------------------------------------------------------
# kNN

def test_knn_examples():
    refs = np.array([[0.0], [10.0]])
    assert knn_score(refs, [4.0], k=2) == 5.0
    assert knn_score(refs, [10.0], k=1) == 0.0
    with pytest.raises(TooFewSamplesError):
        knn_score(refs, [1.0], k=3)


def test_knn_ties_deterministic():
    refs = np.array([[-1.0], [1.0], [1.0], [-1.0]])
    scores = {knn_score(refs, [0.0], k=3) for _ in range(5)}
    assert scores == {1.0}


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_knn_matches_naive_all_pairs(n_ref, n_probe, dim, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n_ref + 1))
    refs = rng.normal(size=(n_ref, dim))
    probes = rng.normal(size=(n_probe, dim))
    det = fit_detector(DetectorConfig("knn_euclid", k=k), refs[:, :, None], seed=0)
    fast = det.score(probes[:, :, None])
    for p, s in zip(probes, fast):
        assert s == knn_naive(refs, p, k)
        assert knn_score(refs, p, k=k) == s


def test_knn_dtw_detector_matches_bruteforce():
    rng = np.random.default_rng(4)
    refs = rng.normal(size=(4, 5, 2))
    probe = rng.normal(size=(1, 5, 2))
    det = fit_detector(DetectorConfig("knn_dtw", k=2), refs, seed=0)
    d = sorted(dtw_bruteforce(probe[0], r) for r in refs)
    assert det.score(probe)[0] == pytest.approx((d[0] + d[1]) / 2, rel=1e-12)


# ---------------------------------------------------------------------------
# ROCKAD

def sines(n, L=80, M=2, seed=0, noise=0.05):
    rng = np.random.default_rng(seed)
    t = np.arange(L) / 10
    phase = rng.uniform(0, 0.3, size=(n, 1, M))
    return np.sin(t[None, :, None] + phase) + noise * rng.normal(size=(n, L, M))


def test_rockad_construction_and_determinism():
    X = sines(30)
    a = fit_rockad(X, n_kernels=64, seed=3)
    assert a.state["bootstrap"].shape == (24, 30)
    assert a.state["refs"].shape == (30, 128)
    b = fit_rockad(X, n_kernels=64, seed=3)
    assert artifacts.dump_artifact(*a.to_artifact()) == artifacts.dump_artifact(*b.to_artifact())


def test_rockad_too_few():
    with pytest.raises(TooFewSamplesError):
        fit_rockad(sines(3), k=3, n_kernels=16)


def test_rockad_duplicate_probe_scores_zero():
    X = sines(12)
    X[1:9] = X[0]  # nine copies of one sample among twelve
    det = fit_rockad(X, n_kernels=64, seed=1)
    copies = np.isin(det.state["bootstrap"], np.arange(9)).sum(axis=1)
    assert copies.min() >= 3
    assert det.score(X[:1])[0] == 0.0


def test_rockad_far_probe_beats_cloud():
    X = sines(40, seed=2)
    det = fit_rockad(X, n_kernels=128, seed=2)
    inside = det.score(X)
    far = det.score(sines(1, seed=9) * -3.0 + 2.0)
    assert far[0] > inside.max()


def test_rockad_scaling_region_increases_score():
    # one centred kernel, no padding: the max feature grows with the scaled region
    bank = KernelBank(lengths=[3], biases=[0.0], dilations=[1], paddings=[0], channel_counts=[1], channels=[0],
                      weights=[-1.0, 2.0, -1.0], input_length=80, n_channels=1)
    feat = Featurizer("kernel", (80, 1), bank=bank)
    X = sines(30, M=1, seed=5, noise=0.2)
    det = fit_detector(DetectorConfig("rockad", n_kernels=1), X, seed=5, featurizer=feat)
    probe = X[:1].copy()
    scaled = probe.copy()
    scaled[0, 30:40] *= 10.0
    assert det.score(scaled)[0] > det.score(probe)[0]


# ---------------------------------------------------------------------------
# isolation forest

def test_iforest_bounds_and_outlier():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.1, size=(99, 4)), [[5.0, 5.0, 5.0, 5.0]]])
    det = fit_iforest(X, n_trees=1500, seed=1)
    s = score_iforest(det, X)
    assert np.all((s > 0) & (s < 1))
    assert int(np.argmax(s)) == 99
    dense = X[np.argmin(np.linalg.norm(X[:99] - X[:99].mean(0), axis=1))]
    assert score_iforest(det, dense)[0] < np.median(s)


def test_iforest_too_few():
    with pytest.raises(TooFewSamplesError):
        fit_iforest(np.zeros((1, 3)))


def test_average_path_length():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == 1.0
    assert average_path_length(256) == pytest.approx(2 * (math.log(255) + 0.5772156649015329) - 2 * 255 / 256)


@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31))
def test_iforest_matches_recursive_oracle(n, dim, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    probes = np.vstack([X, rng.normal(size=(3, dim))])
    det = fit_iforest(X, n_trees=50, seed=seed)
    subs, uniforms, depth_cap = iforest_draws(n, 50, 256, seed)
    h = iforest_oracle(X, subs, uniforms, depth_cap, probes)
    expected = 2.0 ** (-h / average_path_length(n))
    fast = score_iforest(det, probes)
    np.testing.assert_allclose(fast, expected, rtol=1e-12, atol=0)
    # rank order agrees on every pair the oracle separates beyond rounding
    gap = expected[:, None] - expected[None, :]
    clear = np.abs(gap) > 1e-9
    assert np.all(np.sign(fast[:, None] - fast[None, :])[clear] == np.sign(gap)[clear])


# ---------------------------------------------------------------------------
# persistence

@pytest.mark.parametrize("kind", DETECTOR_KINDS)
def test_reload_scores_identical(kind, tmp_path):
    X = sines(20, L=64, M=2)
    cfg = DetectorConfig(kind, n_kernels=32, n_trees=100, n_estimators=5)
    det = fit_detector(cfg, X, seed=11)
    path = tmp_path / "m.mgm"
    det.save(path)
    again = FittedDetector.load(path)
    probes = sines(5, L=64, M=2, seed=8)
    np.testing.assert_allclose(again.score(probes), det.score(probes), rtol=1e-12, atol=1e-12)
    assert again.config == det.config


def test_future_artifact_version_rejected():
    det = fit_detector(DetectorConfig("knn_euclid"), sines(5), seed=0)
    data = artifacts.dump_artifact(*det.to_artifact())
    artifacts.load_artifact_bytes(data)
    with pytest.raises(artifacts.ArtifactVersionError):
        artifacts.load_artifact_bytes(future_version(data))
    with pytest.raises(artifacts.ArtifactError):
        artifacts.load_artifact_bytes(b"not an archive")


def test_pairwise_euclidean_matches_numpy():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(5, 7)), rng.normal(size=(4, 7))
    np.testing.assert_allclose(pairwise_euclidean(A, B), np.linalg.norm(A[:, None] - B[None], axis=2), rtol=1e-14)
