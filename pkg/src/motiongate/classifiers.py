"""Closed-set participant classifiers used for verification scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit, prange
from scipy import optimize
from scipy.special import log_softmax, softmax
from sklearn.ensemble import ExtraTreesClassifier

from . import artifacts
from .features.featurizer import Featurizer
from .features.power import PowerParams, power_transform_apply, power_transform_fit
from .features.quant import QuantConfig
from .seeds import DEFAULT_SEED, derive_seed

CLASSIFIER_FEATURES = {"quant_et": "quant", "kernel_logit": "kernel"}
CLASSIFIER_KINDS = tuple(CLASSIFIER_FEATURES)
REJECT_BELOW = "reject_below"

GRADIENT_TOL = 1e-6


class DegenerateClassesError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnknownClaimError(KeyError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "quant_et"
    n_trees: int = 200
    quant_depth: int = 6
    quant_divisor: int = 4
    n_kernels: int = 1024
    l2: float = 1e-2
    max_iter: int = 20000

    def __post_init__(self):
        if self.kind not in CLASSIFIER_FEATURES:
            raise ValueError(f"unknown classifier {self.kind!r}; choose from {', '.join(CLASSIFIER_KINDS)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def quant(self):
        return QuantConfig(self.quant_depth, self.quant_divisor)


def make_featurizer(config: ClassifierConfig, input_shape, seed=DEFAULT_SEED) -> Featurizer:
    return Featurizer.build(CLASSIFIER_FEATURES[config.kind], input_shape, quant=config.quant,
                            n_kernels=config.n_kernels, seed=derive_seed(seed, 0))


@dataclass(frozen=True, eq=False)
class FittedClassifier:
    kind: str
    classes: np.ndarray
    config: ClassifierConfig
    seed: int
    featurizer: Featurizer
    state: dict
    direction: str = REJECT_BELOW

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int64)
        classes.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        for v in self.state.values():
            v.setflags(write=False)

    def predict_proba(self, samples) -> np.ndarray:
        return self.proba_features(self.featurizer.transform(samples))

    def proba_features(self, F) -> np.ndarray:
        if self.kind == "quant_et":
            return _forest_proba(self.state, F)
        return _logit_proba(self.state, F)

    def class_index(self, claimed_id) -> int:
        hits = np.flatnonzero(self.classes == int(claimed_id))
        if len(hits) == 0:
            raise UnknownClaimError(f"claimed id {claimed_id} is not an enrolled class")
        return int(hits[0])

    def to_artifact(self):
        header = {
            "model": "classifier",
            "kind": self.kind,
            "classes": [int(c) for c in self.classes],
            "config": self.config.to_dict(),
            "seed": self.seed,
            "direction": self.direction,
            "featurizer": self.featurizer.header(),
        }
        arrays = dict(self.featurizer.arrays())
        arrays.update({"state." + k: v for k, v in self.state.items()})
        return header, arrays

    @classmethod
    def from_artifact(cls, header, arrays):
        if header.get("model") != "classifier":
            raise artifacts.ArtifactError("artifact does not hold a classifier")
        state = {k[len("state."):]: v for k, v in arrays.items() if k.startswith("state.")}
        return cls(header["kind"], np.array(header["classes"]), ClassifierConfig.from_dict(header["config"]),
                   header["seed"], Featurizer.restore(header["featurizer"], arrays), state, header["direction"])

    def save(self, path):
        artifacts.save_artifact(path, *self.to_artifact())

    @classmethod
    def load(cls, path):
        return cls.from_artifact(*artifacts.load_artifact(path))


def verification_score(classifier: FittedClassifier, probe, claimed_id) -> float:
    """Probability the classifier assigns to ``claimed_id`` (higher = more genuine)."""
    j = classifier.class_index(claimed_id)
    X = np.asarray(probe, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    return float(classifier.predict_proba(X)[0, j])


def _check_labels(labels):
    y = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise DegenerateClassesError("need at least 2 classes")
    if counts.min() < 2:
        raise DegenerateClassesError(
            f"class {int(classes[np.argmin(counts)])} has {int(counts.min())} sample(s); need >= 2"
        )
    return y, classes


def fit_classifier(config: ClassifierConfig, samples, labels, seed=DEFAULT_SEED, *,
                   featurizer: Featurizer | None = None, features=None) -> FittedClassifier:
    y, classes = _check_labels(labels)
    if featurizer is None:
        X = np.asarray(samples, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, :, None]
        featurizer = make_featurizer(config, X.shape[1:], seed)
    F = featurizer.transform(samples) if features is None else features
    if config.kind == "quant_et":
        state = _fit_forest(F, y, config.n_trees, seed)
    else:
        state = _fit_logit(F, y, classes, config, seed)
    return FittedClassifier(config.kind, classes, config, int(seed), featurizer, state)


def fit_quant_et(samples, labels, n_trees=200, seed=DEFAULT_SEED, depth=6, divisor=4) -> FittedClassifier:
    return fit_classifier(ClassifierConfig("quant_et", n_trees=n_trees, quant_depth=depth,
                                           quant_divisor=divisor), samples, labels, seed)


def fit_kernel_logit(samples, labels, n_kernels=1024, l2=1e-2, seed=DEFAULT_SEED) -> FittedClassifier:
    return fit_classifier(ClassifierConfig("kernel_logit", n_kernels=n_kernels, l2=l2), samples, labels, seed)


# ---------------------------------------------------------------------------
# extremely randomized trees
#
# Trees are grown by scikit-learn (entropy criterion, one random threshold
# per candidate feature, sqrt(F) candidates) and exported to flat arrays so
# artifacts stay pickle-free.  scikit-learn compares float32 inputs against
# float64 thresholds; prediction reproduces that.

def _fit_forest(F, y, n_trees, seed):
    forest = ExtraTreesClassifier(
        n_estimators=n_trees, criterion="entropy", max_features="sqrt",
        random_state=derive_seed(seed, 3), n_jobs=1,
    )
    forest.fit(np.asarray(F, dtype=np.float32), y)
    left, right, feat, thr, value, offsets = [], [], [], [], [], [0]
    for est in forest.estimators_:
        t = est.tree_
        v = t.value[:, 0, :].astype(np.float64)
        v = v / v.sum(axis=1, keepdims=True)
        left.append(t.children_left.astype(np.int64))
        right.append(t.children_right.astype(np.int64))
        feat.append(t.feature.astype(np.int64))
        thr.append(t.threshold.astype(np.float64))
        value.append(v)
        offsets.append(offsets[-1] + t.node_count)
    return {
        "left": np.concatenate(left),
        "right": np.concatenate(right),
        "feature": np.concatenate(feat),
        "threshold": np.concatenate(thr),
        "value": np.concatenate(value),
        "offsets": np.array(offsets, dtype=np.int64),
    }


@njit(cache=True, parallel=True)
def _forest_predict(X, left, right, feature, threshold, value, offsets):
    n_trees = len(offsets) - 1
    n_classes = value.shape[1]
    out = np.zeros((X.shape[0], n_classes))
    for r in prange(X.shape[0]):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while left[base + node] != -1:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            for c in range(n_classes):
                out[r, c] += value[base + node, c]
        for c in range(n_classes):
            out[r, c] /= n_trees
    return out


def _forest_proba(state, F):
    X = np.ascontiguousarray(np.asarray(F, dtype=np.float32).astype(np.float64))
    P = _forest_predict(X, state["left"], state["right"], state["feature"], state["threshold"],
                        state["value"], state["offsets"])
    return P / P.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# L2-regularized multinomial logistic regression

def logit_loss_grad(w, Z, Y, l2):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (intercepts unpenalized) and its gradient.

    ``w`` packs ``W`` (d x C) followed by the C intercepts.
    """
    n, d = Z.shape
    C = Y.shape[1]
    W = w[: d * C].reshape(d, C)
    b = w[d * C:]
    logits = Z @ W + b
    logp = log_softmax(logits, axis=1)
    loss = -(Y * logp).sum() / n + 0.5 * l2 * (W * W).sum()
    R = (np.exp(logp) - Y) / n
    gW = Z.T @ R + l2 * W
    gb = R.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def _fit_logit(F, y, classes, config, seed):
    params = power_transform_fit(F)
    Z = power_transform_apply(F, params)
    C = len(classes)
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    w0 = np.zeros(Z.shape[1] * C + C)
    history = []

    def fun(w):
        loss, g = logit_loss_grad(w, Z, Y, config.l2)
        return loss, g

    res = optimize.minimize(
        fun, w0, jac=True, method="L-BFGS-B",
        callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
        options={"maxiter": config.max_iter, "maxfun": 4 * config.max_iter,
                 "gtol": 1e-10, "ftol": 1e-16, "maxcor": 20},
    )
    w = res.x
    _, g = logit_loss_grad(w, Z, Y, config.l2)
    gnorm = float(np.linalg.norm(g))
    if gnorm >= GRADIENT_TOL:
        raise ConvergenceError(
            f"logistic regression stopped with gradient norm {gnorm:.3g} >= {GRADIENT_TOL}",
            {"iterations": int(res.nit), "message": str(res.message), "gradient_norm": gnorm,
             "loss": float(res.fun)},
        )
    d = Z.shape[1]
    state = params.to_arrays()
    state.update({
        "coef": w[: d * C].reshape(d, C).copy(),
        "intercept": w[d * C:].copy(),
        "loss_history": np.array(history),
        "gradient_norm": np.array(gnorm),
    })
    return state


def _logit_proba(state, F):
    Z = power_transform_apply(F, PowerParams.from_arrays(state))
    return softmax(Z @ state["coef"] + state["intercept"], axis=1)
