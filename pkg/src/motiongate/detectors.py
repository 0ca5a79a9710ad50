"""Whole-series anomaly detectors trained on bona fide samples.

Every detector scores so that a higher value means more anomalous.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit, prange

from . import artifacts
from .distances import knn_mean, pairwise_dtw, pairwise_euclidean
from .features.featurizer import Featurizer
from .features.power import PowerParams, power_transform_apply, power_transform_fit
from .features.quant import QuantConfig
from .seeds import DEFAULT_SEED, derive_seed

DETECTOR_FEATURES = {
    "rockad": "kernel",
    "iforest_raw": "raw",
    "iforest_quant": "quant",
    "knn_euclid": "raw",
    "knn_dtw": "series",
    "knn_quant": "quant",
}
DETECTOR_KINDS = tuple(DETECTOR_FEATURES)
REJECT_ABOVE = "reject_above"

_EULER_GAMMA = 0.5772156649015329


class TooFewSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "rockad"
    k: int = 3
    n_estimators: int = 24
    n_kernels: int = 1024
    power_transform: bool = True
    n_trees: int = 1500
    max_samples: int = 256
    quant_depth: int = 6
    quant_divisor: int = 4
    dtw_band: float | None = None

    def __post_init__(self):
        if self.kind not in DETECTOR_FEATURES:
            raise ValueError(f"unknown detector {self.kind!r}; choose from {', '.join(DETECTOR_KINDS)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def quant(self) -> QuantConfig:
        return QuantConfig(self.quant_depth, self.quant_divisor)


def make_featurizer(config: DetectorConfig, input_shape, seed=DEFAULT_SEED) -> Featurizer:
    return Featurizer.build(DETECTOR_FEATURES[config.kind], input_shape, quant=config.quant,
                            n_kernels=config.n_kernels, seed=derive_seed(seed, 0))


@dataclass(frozen=True, eq=False)
class FittedDetector:
    kind: str
    config: DetectorConfig
    seed: int
    featurizer: Featurizer
    state: dict
    direction: str = REJECT_ABOVE

    def __post_init__(self):
        for v in self.state.values():
            v.setflags(write=False)

    def score(self, samples) -> np.ndarray:
        return self.score_features(self.featurizer.transform(samples))

    def score_features(self, F) -> np.ndarray:
        return _SCORERS[self.kind](self, F)

    def to_artifact(self) -> tuple[dict, dict]:
        header = {
            "model": "detector",
            "kind": self.kind,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "direction": self.direction,
            "featurizer": self.featurizer.header(),
        }
        arrays = dict(self.featurizer.arrays())
        arrays.update({"state." + k: v for k, v in self.state.items()})
        return header, arrays

    @classmethod
    def from_artifact(cls, header: dict, arrays: dict) -> "FittedDetector":
        if header.get("model") != "detector":
            raise artifacts.ArtifactError("artifact does not hold a detector")
        state = {k[len("state."):]: v for k, v in arrays.items() if k.startswith("state.")}
        return cls(header["kind"], DetectorConfig.from_dict(header["config"]), header["seed"],
                   Featurizer.restore(header["featurizer"], arrays), state, header["direction"])

    def save(self, path):
        artifacts.save_artifact(path, *self.to_artifact())

    @classmethod
    def load(cls, path) -> "FittedDetector":
        return cls.from_artifact(*artifacts.load_artifact(path))


def fit_detector(config: DetectorConfig, samples, seed=DEFAULT_SEED, *, featurizer: Featurizer | None = None,
                 features=None) -> FittedDetector:
    """Fit ``config.kind`` on bona fide ``(n, L, M)`` samples.

    ``featurizer``/``features`` let callers reuse a data-independent
    transform across folds; ``features`` must be ``featurizer.transform(samples)``.
    """
    if featurizer is None:
        X = np.asarray(samples, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, :, None]
        featurizer = make_featurizer(config, X.shape[1:], seed)
    F = featurizer.transform(samples) if features is None else features
    state = _FITTERS[config.kind](config, F, seed)
    return FittedDetector(config.kind, config, int(seed), featurizer, state)


# ---------------------------------------------------------------------------
# ROCKAD: kernel features, power transform, bagged kNN distances

def _fit_rockad(config, F, seed):
    n = len(F)
    if n < config.k + 1:
        raise TooFewSamplesError(f"ROCKAD needs at least k+1={config.k + 1} samples, got {n}")
    state = {}
    if config.power_transform:
        params = power_transform_fit(F)
        F = power_transform_apply(F, params)
        state.update(params.to_arrays())
    rng = np.random.default_rng(derive_seed(seed, 1))
    state["refs"] = np.ascontiguousarray(F)
    state["bootstrap"] = rng.integers(0, n, size=(config.n_estimators, n))
    return state


def _score_rockad(det, F):
    if det.config.power_transform:
        F = power_transform_apply(F, PowerParams.from_arrays(det.state))
    D = pairwise_euclidean(F, det.state["refs"])
    total = np.zeros(len(F))
    for idx in det.state["bootstrap"]:
        total = total + knn_mean(D[:, idx], det.config.k)
    return total / len(det.state["bootstrap"])


def fit_rockad(samples, n_estimators=24, n_kernels=1024, k=3, seed=DEFAULT_SEED) -> FittedDetector:
    return fit_detector(DetectorConfig("rockad", k=k, n_estimators=n_estimators, n_kernels=n_kernels),
                        samples, seed)


# ---------------------------------------------------------------------------
# nearest-neighbour detectors

def _fit_knn(config, F, seed):
    if len(F) < config.k:
        raise TooFewSamplesError(f"kNN needs at least k={config.k} references, got {len(F)}")
    return {"refs": np.ascontiguousarray(F)}


def _score_knn(det, F):
    refs = det.state["refs"]
    if det.kind == "knn_dtw":
        D = pairwise_dtw(F, refs, det.config.dtw_band)
    else:
        D = pairwise_euclidean(F, refs)
    return knn_mean(D, det.config.k)


def knn_score(references, probe, k=3, metric="euclid", band=None) -> float:
    """Mean distance from one probe to its ``k`` nearest references."""
    refs = np.asarray(references, dtype=np.float64)
    if len(refs) < k:
        raise TooFewSamplesError(f"need at least k={k} references, got {len(refs)}")
    if metric == "euclid":
        D = pairwise_euclidean(np.asarray(probe, dtype=np.float64)[None], refs)
    elif metric == "dtw":
        D = pairwise_dtw(np.asarray(probe, dtype=np.float64)[None], refs, band)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(knn_mean(D, k)[0])


# ---------------------------------------------------------------------------
# isolation forest
#
# Nodes live at heap positions (root 0, children 2h+1 / 2h+2).  Node h draws
# its split feature and split point from uniforms[h], so the split sequence
# is fixed by the seed independently of traversal order.

def average_path_length(n) -> float:
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1.0) + _EULER_GAMMA) - 2.0 * (n - 1.0) / n


def iforest_draws(n_rows, n_trees, max_samples=256, seed=DEFAULT_SEED):
    """Subsample indices, per-node uniforms and depth cap for a forest."""
    psi = min(max_samples, n_rows)
    depth_cap = int(math.ceil(math.log2(psi))) if psi > 1 else 0
    n_nodes = 2 ** (depth_cap + 1) - 1
    rng = np.random.default_rng(derive_seed(seed, 2))
    subsamples = np.stack([rng.choice(n_rows, psi, replace=False) for _ in range(n_trees)])
    uniforms = rng.random((n_trees, n_nodes, 2))
    return subsamples, uniforms, depth_cap


@njit(cache=True)
def _c(n):
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1.0) + 0.5772156649015329) - 2.0 * (n - 1.0) / n


@njit(cache=True)
def _build_forest(X, subsamples, uniforms, depth_cap, feature, threshold, size):
    n_trees, n_nodes = feature.shape
    n_feat = X.shape[1]
    stack_h = np.empty(n_nodes, np.int64)
    stack_s = np.empty(n_nodes, np.int64)
    stack_e = np.empty(n_nodes, np.int64)
    for t in range(n_trees):
        perm = subsamples[t].copy()
        top = 0
        stack_h[0], stack_s[0], stack_e[0] = 0, 0, len(perm)
        top = 1
        while top > 0:
            top -= 1
            h, s, e = stack_h[top], stack_s[top], stack_e[top]
            cnt = e - s
            size[t, h] = cnt
            depth = 0
            p = h + 1
            while p > 1:
                p //= 2
                depth += 1
            if depth >= depth_cap or cnt <= 1:
                continue
            f = int(uniforms[t, h, 0] * n_feat)
            if f >= n_feat:
                f = n_feat - 1
            lo = X[perm[s], f]
            hi = lo
            for j in range(s + 1, e):
                v = X[perm[j], f]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if lo == hi:
                continue
            split = lo + uniforms[t, h, 1] * (hi - lo)
            i = s
            for j in range(s, e):
                if X[perm[j], f] < split:
                    tmp = perm[i]
                    perm[i] = perm[j]
                    perm[j] = tmp
                    i += 1
            feature[t, h] = f
            threshold[t, h] = split
            stack_h[top], stack_s[top], stack_e[top] = 2 * h + 1, s, i
            top += 1
            stack_h[top], stack_s[top], stack_e[top] = 2 * h + 2, i, e
            top += 1


@njit(cache=True, parallel=True)
def _mean_path_lengths(X, feature, threshold, size):
    n_trees = feature.shape[0]
    out = np.empty(X.shape[0])
    for r in prange(X.shape[0]):
        total = 0.0
        for t in range(n_trees):
            h = 0
            d = 0
            while feature[t, h] >= 0:
                if X[r, feature[t, h]] < threshold[t, h]:
                    h = 2 * h + 1
                else:
                    h = 2 * h + 2
                d += 1
            total += d + _c(size[t, h])
        out[r] = total / n_trees
    return out


def _fit_iforest(config, F, seed):
    F = np.ascontiguousarray(F, dtype=np.float64)
    if len(F) < 2:
        raise TooFewSamplesError(f"isolation forest needs at least 2 rows, got {len(F)}")
    subsamples, uniforms, depth_cap = iforest_draws(len(F), config.n_trees, config.max_samples, seed)
    n_nodes = uniforms.shape[1]
    feature = np.full((config.n_trees, n_nodes), -1, dtype=np.int32)
    threshold = np.zeros((config.n_trees, n_nodes))
    size = np.full((config.n_trees, n_nodes), -1, dtype=np.int32)
    _build_forest(F, subsamples, uniforms, depth_cap, feature, threshold, size)
    return {"feature": feature, "threshold": threshold, "size": size,
            "psi": np.array(subsamples.shape[1], dtype=np.int64)}


def _score_iforest(det, F):
    F = np.ascontiguousarray(F, dtype=np.float64)
    s = det.state
    h = _mean_path_lengths(F, s["feature"], s["threshold"], s["size"])
    return np.power(2.0, -h / average_path_length(int(s["psi"])))


def fit_iforest(matrix, n_trees=1500, max_samples=256, seed=DEFAULT_SEED) -> FittedDetector:
    """Isolation forest on a plain ``(n, F)`` feature matrix."""
    M = np.asarray(matrix, dtype=np.float64)
    return fit_detector(DetectorConfig("iforest_raw", n_trees=n_trees, max_samples=max_samples),
                        M[:, :, None], seed)


def score_iforest(detector: FittedDetector, rows) -> np.ndarray:
    R = np.asarray(rows, dtype=np.float64)
    if R.ndim == 1:
        R = R[None]
    return detector.score_features(R)


_FITTERS = {
    "rockad": _fit_rockad,
    "iforest_raw": _fit_iforest,
    "iforest_quant": _fit_iforest,
    "knn_euclid": _fit_knn,
    "knn_dtw": _fit_knn,
    "knn_quant": _fit_knn,
}
_SCORERS = {
    "rockad": _score_rockad,
    "iforest_raw": _score_iforest,
    "iforest_quant": _score_iforest,
    "knn_euclid": _score_knn,
    "knn_dtw": _score_knn,
    "knn_quant": _score_knn,
}
