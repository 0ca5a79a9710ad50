"""Deployable scoring models and the single trace -> decision path used by
the CLI and the HTTP service."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import artifacts
from .classifiers import ClassifierConfig, FittedClassifier, fit_classifier, verification_score
from .detectors import DetectorConfig, FittedDetector, fit_detector
from .preprocess import WindowSpec, build_samples, extract_windows, preprocess_trace, stack
from .protocols import (REJECT_ABOVE, REJECT_BELOW, CalibrationWarning, Threshold, as_method,
                        calibrate_threshold, group_folds)
from .seeds import DEFAULT_SEED, derive_seed
from .trace import ChannelSelector, MotionTrace

log = logging.getLogger(__name__)

ARTIFACT_SUFFIX = ".mgm"


class ClaimRequiredError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScoringModel:
    """A fitted model bundled with its window spec, channels and threshold."""

    model_id: str
    model: FittedDetector | FittedClassifier
    spec: WindowSpec
    selector: ChannelSelector
    threshold: Threshold

    @property
    def kind(self) -> str:
        return self.model.kind

    def describe(self) -> dict:
        return {
            "model_id": self.model_id,
            "kind": self.kind,
            "window": self.spec.to_dict(),
            "channels": self.selector.name,
            "direction": self.threshold.direction,
            "threshold": self.threshold.value,
        }

    def to_bytes(self) -> bytes:
        header, arrays = self.model.to_artifact()
        header["deployment"] = {
            "model_id": self.model_id,
            "window": self.spec.to_dict(),
            "channels": self.selector.name,
            "threshold": self.threshold.to_dict(),
        }
        return artifacts.dump_artifact(header, arrays)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "ScoringModel":
        header, arrays = artifacts.load_artifact_bytes(data)
        dep = header.get("deployment")
        if dep is None:
            raise artifacts.ArtifactError("artifact has no deployment section (window, channels, threshold)")
        if header.get("model") == "detector":
            model = FittedDetector.from_artifact(header, arrays)
        else:
            model = FittedClassifier.from_artifact(header, arrays)
        w = dep["window"]
        spec = WindowSpec(w["k_open"], w["pre"], w["post"], w["representation"])
        return cls(dep["model_id"], model, spec, ChannelSelector(dep["channels"]), Threshold(**dep["threshold"]))

    @classmethod
    def load(cls, path) -> "ScoringModel":
        return cls.from_bytes(Path(path).read_bytes())


def score_trace(sm: ScoringModel, trace: MotionTrace, claimed_id=None) -> dict:
    """Preprocess, window and score one trace; returns score, threshold, decision, direction."""
    sample = extract_windows(preprocess_trace(trace), sm.spec, sm.selector).values
    if isinstance(sm.model, FittedClassifier):
        if claimed_id is None:
            raise ClaimRequiredError("verification models need a claimed participant id")
        score = verification_score(sm.model, sample, claimed_id)
    else:
        score = float(sm.model.score(sample[None])[0])
    reject = bool(sm.threshold.rejects([score])[0])
    return {
        "score": score,
        "threshold": sm.threshold.value,
        "decision": "reject" if reject else "accept",
        "direction": sm.threshold.direction,
    }


def train_scoring_model(traces, method, spec: WindowSpec, selector: ChannelSelector, *, seed=DEFAULT_SEED,
                        percentile: float | None = None, inner_folds: int = 5, model_id: str | None = None
                        ) -> ScoringModel:
    """Fit on every bona fide trace and calibrate the threshold out of fold.

    Detectors use participant-disjoint inner folds and the 99th percentile;
    classifiers use stratified folds and the 1st percentile of genuine scores.
    """
    method = as_method(method)
    bona = [t for t in traces if t.label == "bonafide"]
    samples = build_samples(bona, spec, selector)
    if not samples:
        raise ValueError("no bona fide trace yields a window for this spec")
    X = stack(samples)
    featurizer = method.featurizer(X.shape[1:], seed)
    F = featurizer.transform(X)
    if isinstance(method.config, DetectorConfig):
        percentile = 99.0 if percentile is None else percentile
        groups = [s.participant_id for s in samples]
        folds = group_folds(groups, inner_folds, derive_seed(seed, 201))
        calib = np.empty(len(X))
        for f, held in enumerate(folds):
            fit = np.setdiff1d(np.arange(len(X)), held)
            m = fit_detector(method.config, X[fit], derive_seed(seed, 202, f), featurizer=featurizer,
                             features=F[fit])
            calib[held] = m.score_features(F[held])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CalibrationWarning)
            tau = calibrate_threshold(calib, percentile, REJECT_ABOVE, folds=len(folds), repeats=1)
        model = fit_detector(method.config, X, derive_seed(seed, 203), featurizer=featurizer, features=F)
    elif isinstance(method.config, ClassifierConfig):
        percentile = 1.0 if percentile is None else percentile
        y = np.array([s.participant_id for s in samples], dtype=np.int64)
        counts = np.unique(y, return_counts=True)[1]
        n_folds = min(3 if counts.min() >= 3 else 2, inner_folds)
        skf = StratifiedKFold(n_folds, shuffle=True, random_state=derive_seed(seed, 201) % (2 ** 32))
        calib = []
        for f, (a, b) in enumerate(skf.split(np.zeros(len(y)), y)):
            m = fit_classifier(method.config, X[a], y[a], derive_seed(seed, 202, f), featurizer=featurizer,
                               features=F[a])
            P = m.proba_features(F[b])
            calib.append(P[np.arange(len(b)), np.searchsorted(m.classes, y[b])])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CalibrationWarning)
            tau = calibrate_threshold(np.concatenate(calib), percentile, REJECT_BELOW, folds=n_folds, repeats=1)
        model = fit_classifier(method.config, X, y, derive_seed(seed, 203), featurizer=featurizer, features=F)
    else:
        raise TypeError(f"cannot deploy method {method!r}")
    model_id = model_id or f"{method.name}-{selector.name}-{spec.k_open}-{spec.pre}-{spec.post}-{spec.representation}"
    return ScoringModel(model_id, model, spec, selector, tau)


def load_model_dir(directory) -> dict[str, ScoringModel]:
    """Every loadable artifact in ``directory`` keyed by model id; others are logged and skipped."""
    models = {}
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"model directory {directory} does not exist")
    for path in sorted(directory.iterdir()):
        if path.suffix != ARTIFACT_SUFFIX:
            continue
        try:
            sm = ScoringModel.load(path)
        except artifacts.ArtifactError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        if sm.model_id in models:
            log.warning("skipping %s: duplicate model id %s", path.name, sm.model_id)
            continue
        models[sm.model_id] = sm
    return models
