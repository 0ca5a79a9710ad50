"""Benchmark protocols: spoof screening, one-class verification and
classification-based verification, with threshold calibration and error rates.

Rates are percentages.  Anomaly scores reject strictly above the threshold;
verification scores reject strictly below it.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import multiprocessing
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .classifiers import ClassifierConfig, fit_classifier
from .classifiers import make_featurizer as make_classifier_featurizer
from .detectors import REJECT_ABOVE, DetectorConfig, fit_detector
from .detectors import make_featurizer as make_detector_featurizer
from .preprocess import WindowSpec, build_samples, stack
from .seeds import DEFAULT_SEED, derive_seed
from .trace import ATTACK_TYPES, ChannelSelector, MotionTrace

log = logging.getLogger(__name__)

REJECT_BELOW = "reject_below"
DIRECTIONS = (REJECT_ABOVE, REJECT_BELOW)
MIN_CALIBRATION_SCORES = 10
REPORT_FORMAT = "motiongate-report"
REPORT_VERSION = 1

# unit-seed namespaces
_SPOOF, _ONECLASS, _VERIFY = 101, 102, 103


class ProtocolError(ValueError):
    pass


class TooFewParticipantsError(ProtocolError):
    pass


class EmptyAttackSetError(ProtocolError):
    pass


class StratificationError(ProtocolError):
    pass


class LeakageError(AssertionError):
    pass


class CalibrationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# thresholds and error rates

@dataclass(frozen=True)
class Threshold:
    value: float
    direction: str
    percentile: float
    n_scores: int
    folds: int | None = None
    repeats: int | None = None
    degenerate: bool = False
    fallback: bool = False

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("threshold must be finite")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def rejects(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        return s > self.value if self.direction == REJECT_ABOVE else s < self.value

    def to_dict(self) -> dict:
        return asdict(self)


def rejects(scores, value: float, direction: str) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return s > value if direction == REJECT_ABOVE else s < value


def calibrate_threshold(scores, percentile: float, direction: str = REJECT_ABOVE, *, folds=None,
                        repeats=None) -> Threshold:
    """Empirical percentile (linear interpolation) of calibration scores.

    With fewer than 10 scores the most permissive observed score is used
    (max for reject-above, min for reject-below) and flagged.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if len(s) == 0:
        raise ProtocolError("no calibration scores")
    if not np.all(np.isfinite(s)):
        raise ProtocolError("calibration scores must be finite")
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {percentile}")
    degenerate = bool(np.all(s == s[0]))
    fallback = len(s) < MIN_CALIBRATION_SCORES
    if fallback:
        warnings.warn(f"only {len(s)} calibration scores; using the extreme score", CalibrationWarning,
                      stacklevel=2)
        value = float(s.max() if direction == REJECT_ABOVE else s.min())
    else:
        value = float(np.percentile(s, percentile))
    return Threshold(value, direction, float(percentile), len(s), folds, repeats, degenerate, fallback)


def rate(mask) -> float:
    """Percentage of True entries."""
    mask = np.asarray(mask, dtype=bool)
    return 100.0 * float(mask.sum()) / len(mask) if len(mask) else float("nan")


def eer_candidates(genuine, impostor) -> np.ndarray:
    u = np.unique(np.concatenate([np.asarray(genuine, np.float64), np.asarray(impostor, np.float64)]))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2
    return np.unique(np.concatenate([u, mids]))


def sweep(genuine, impostor, thresholds=None):
    """FRR (genuine < t) and FAR (impostor >= t) in percent at each threshold."""
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(impostor, dtype=np.float64))
    t = eer_candidates(g, i) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    frr = 100.0 * np.searchsorted(g, t, side="left") / len(g)
    far = 100.0 * (len(i) - np.searchsorted(i, t, side="left")) / len(i)
    return t, frr, far


def compute_eer(genuine, impostor) -> tuple[float, float]:
    """Equal error rate (percent) and its threshold; higher scores are more genuine.

    Among candidate thresholds (distinct scores and midpoints between
    neighbours), picks the one minimizing ``|FRR - FAR|``, preferring the
    lowest, and returns ``(FRR + FAR) / 2`` there.
    """
    if len(genuine) == 0 or len(impostor) == 0:
        raise ProtocolError("compute_eer needs non-empty genuine and impostor scores")
    t, frr, far = sweep(genuine, impostor)
    gap = np.abs(frr - far)
    j = int(np.argmin(gap))  # first minimum = lowest threshold
    return float((frr[j] + far[j]) / 2), float(t[j])


# ---------------------------------------------------------------------------
# splitting

def group_split(traces: Sequence[MotionTrace], train_fraction: float = 0.8, seed=DEFAULT_SEED):
    """Participant-level split of bona fide traces into (train ids, test ids)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    pids = sorted({t.participant_id for t in traces if t.label == "bonafide"})
    if len(pids) < 2:
        raise TooFewParticipantsError(f"group split needs >= 2 participants, got {len(pids)}")
    n_train = min(max(int(round(train_fraction * len(pids))), 1), len(pids) - 1)
    order = np.random.default_rng(seed).permutation(len(pids))
    train_p = {pids[i] for i in order[:n_train]}
    train = [t.trace_id for t in traces if t.label == "bonafide" and t.participant_id in train_p]
    test = [t.trace_id for t in traces if t.label == "bonafide" and t.participant_id not in train_p]
    return train, test


def group_folds(groups, n_folds: int, seed) -> list[np.ndarray]:
    """Index arrays of ``n_folds`` participant-disjoint folds."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    n_folds = min(n_folds, len(uniq))
    if n_folds < 2:
        raise TooFewParticipantsError("inner calibration needs >= 2 participants")
    perm = np.random.default_rng(seed).permutation(uniq)
    return [np.flatnonzero(np.isin(groups, part)) for part in np.array_split(perm, n_folds)]


def check_leakage(train: Sequence[MotionTrace], test: Sequence[MotionTrace]) -> None:
    """Raise if a training trace is an attack or a participant spans both sides."""
    attacks = [t.trace_id for t in train if t.label != "bonafide"]
    if attacks:
        raise LeakageError(f"attack traces in training: {attacks[:5]}")
    shared = {t.participant_id for t in train} & {t.participant_id for t in test}
    if shared:
        raise LeakageError(f"participants on both sides of the split: {sorted(shared)}")


# ---------------------------------------------------------------------------
# methods: what a protocol fits and how it scores

@dataclass(frozen=True)
class DetectorMethod:
    config: DetectorConfig
    direction: str = REJECT_ABOVE

    @property
    def name(self):
        return self.config.kind

    def to_dict(self):
        return self.config.to_dict()

    def featurizer(self, input_shape, seed):
        return make_detector_featurizer(self.config, input_shape, seed)

    def fit(self, featurizer, X, F, seed):
        return fit_detector(self.config, X, seed, featurizer=featurizer, features=F)


@dataclass(frozen=True)
class ClassifierMethod:
    config: ClassifierConfig
    direction: str = REJECT_BELOW

    @property
    def name(self):
        return self.config.kind

    def to_dict(self):
        return self.config.to_dict()

    def featurizer(self, input_shape, seed):
        return make_classifier_featurizer(self.config, input_shape, seed)

    def fit(self, featurizer, X, F, labels, seed):
        return fit_classifier(self.config, X, labels, seed, featurizer=featurizer, features=F)


def as_method(method):
    if isinstance(method, DetectorConfig):
        return DetectorMethod(method)
    if isinstance(method, ClassifierConfig):
        return ClassifierMethod(method)
    return method


def _take(F, idx):
    return F[np.asarray(idx, dtype=np.int64)]


# ---------------------------------------------------------------------------
# reports

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()


def _mean_std(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=np.float64)
    if len(v) == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(len(v))}


@dataclass
class EvalReport:
    task: str
    config: dict
    seed: int
    units: list
    summary: dict
    per_attack: dict = field(default_factory=dict)
    per_user: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)
    curves: list = field(default_factory=list)  # (unit, threshold, frr, far)
    timing: dict = field(default_factory=dict)  # not part of the deterministic report

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "task": self.task,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
            "summary": self.summary,
            "per_attack_far": self.per_attack,
            "per_user": {str(k): v for k, v in self.per_user.items()},
            "units": self.units,
            "excluded": self.excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def curves_csv(self) -> str:
        buf = io.StringIO()
        buf.write("unit,threshold,frr,far\n")
        for unit, t, frr, far in self.curves:
            buf.write(f"{unit},{t!r},{frr!r},{far!r}\n")
        return buf.getvalue()

    def to_markdown(self) -> str:
        return render_markdown(self)


def _fmt(stat, digits=2):
    if stat is None or stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.{digits}f} ± {stat['std']:.{digits}f}"


def render_markdown(report: EvalReport) -> str:
    c = report.config
    w = c.get("window", {})
    window = f"{w.get('k_open')}+{w.get('pre')}+{w.get('post')}" if w else "?"
    head = (f"# {report.task} report\n\nmethod `{c.get('method', {}).get('kind', '?')}`, "
            f"channels `{c.get('channels')}`, window {window} ({w.get('representation', 'single')}), "
            f"seed {report.seed}, config `{report.config_hash[:12]}`\n\n")
    s = report.summary
    lines = [head]
    if report.task == "spoof":
        types = [t for t in ATTACK_TYPES if t in report.per_attack]
        lines.append("| Method | Channels | Window | FRR (%) | FAR (%) | " +
                     " | ".join(f"FAR {t} (%)" for t in types) + " |\n")
        lines.append("|" + "---|" * (5 + len(types)) + "\n")
        lines.append(f"| {c['method']['kind']} | {c.get('channels')} | {window} | {_fmt(s['frr'])} | "
                     f"{_fmt(s['far'])} | " + " | ".join(_fmt(report.per_attack[t]) for t in types) + " |\n")
    elif report.task == "oneclass":
        lines.append("| Method | Channels | Window | FRR (%) | FAR (%) | Users |\n|---|---|---|---|---|---|\n")
        lines.append(f"| {c['method']['kind']} | {c.get('channels')} | {window} | {_fmt(s['frr'])} | "
                     f"{_fmt(s['far'])} | {s['frr']['n']} |\n")
    else:
        lines.append("| Method | Channels | Window | EER (%) | FRR@τ (%) | FAR@τ (%) |\n"
                     "|---|---|---|---|---|---|\n")
        lines.append(f"| {c['method']['kind']} | {c.get('channels')} | {window} | {_fmt(s['eer'])} | "
                     f"{_fmt(s['frr'])} | {_fmt(s['far'])} |\n")
    if report.per_user:
        if report.task == "verify":
            lines.append("\n| User | EER (%) |\n|---|---|\n")
        else:
            lines.append("\n| User | FRR (%) | FAR (%) |\n|---|---|---|\n")
        for pid in sorted(report.per_user, key=int):
            u = report.per_user[pid]
            if report.task == "verify":
                lines.append(f"| {pid} | {'n/a' if u['eer'] is None else format(u['eer'], '.2f')} |\n")
            else:
                lines.append(f"| {pid} | {u['frr']:.2f} | {u['far']:.2f} |\n")
    if report.excluded:
        lines.append(f"\nExcluded: {len(report.excluded)} trace(s) or participant(s).\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# execution of independent work units

def run_units(fn: Callable, payloads: list, jobs: int = 1) -> list:
    """Map ``fn`` over payloads, in order; ``jobs > 1`` uses worker processes."""
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(jobs, len(payloads)), mp_context=ctx) as ex:
        return list(ex.map(fn, payloads))


@dataclass
class _Prepared:
    traces: list  # windowed traces that survived preprocessing
    X: np.ndarray
    F: np.ndarray
    featurizer: object
    excluded: list
    featurize_ms: float


def prepare(traces, method, spec: WindowSpec, selector: ChannelSelector, seed) -> _Prepared:
    """Preprocess, window and featurize once; featurizers are data-independent."""
    by_id = {t.trace_id: t for t in traces}
    samples = build_samples(traces, spec, selector)
    kept = {s.trace_id for s in samples}
    excluded = [t.trace_id for t in traces if t.trace_id not in kept]
    if not samples:
        raise ProtocolError("no trace yields a window for this spec")
    X = stack(samples)
    featurizer = method.featurizer(X.shape[1:], seed)
    t0 = time.perf_counter()
    F = featurizer.transform(X)
    ms = 1000.0 * (time.perf_counter() - t0) / len(X)
    return _Prepared([by_id[s.trace_id] for s in samples], X, F, featurizer, excluded, ms)


def _run_config(task, method, spec, selector, extra):
    cfg = {"task": task, "method": {"kind": method.name, **method.to_dict()}, "window": spec.to_dict(),
           "channels": selector.name}
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------------------
# spoof screening

def _spoof_unit(p):
    (r, method, featurizer, X, F, traces, attack_idx, n_inner, percentile, train_fraction, seed) = p
    unit_seed = derive_seed(seed, _SPOOF, r)
    bona = [t for t in traces if t.label == "bonafide"]
    train_ids, test_ids = group_split(bona, train_fraction, derive_seed(unit_seed, 0))
    pos = {t.trace_id: i for i, t in enumerate(traces)}
    train_idx = np.array([pos[i] for i in train_ids])
    test_idx = np.array([pos[i] for i in test_ids])
    check_leakage([traces[i] for i in train_idx], [traces[i] for i in test_idx])
    if any(i in set(attack_idx) for i in train_idx):
        raise LeakageError("attack sample in training indices")

    groups = [traces[i].participant_id for i in train_idx]
    calib = np.empty(len(train_idx))
    folds = group_folds(groups, n_inner, derive_seed(unit_seed, 1))
    for f, held in enumerate(folds):
        fit_idx = np.setdiff1d(np.arange(len(train_idx)), held)
        model = method.fit(featurizer, _take(X, train_idx[fit_idx]), _take(F, train_idx[fit_idx]),
                           derive_seed(unit_seed, 2, f))
        calib[held] = model.score_features(_take(F, train_idx[held]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        tau = calibrate_threshold(calib, percentile, REJECT_ABOVE, folds=len(folds), repeats=1)

    model = method.fit(featurizer, _take(X, train_idx), _take(F, train_idx), derive_seed(unit_seed, 3))
    t0 = time.perf_counter()
    test_scores = model.score_features(_take(F, test_idx))
    attack_scores = model.score_features(_take(F, attack_idx))
    ms = 1000.0 * (time.perf_counter() - t0) / (len(test_idx) + len(attack_idx))

    frr = rate(tau.rejects(test_scores))
    types = [traces[i].attack_type for i in attack_idx]
    far_by_type = {}
    for kind in ATTACK_TYPES:
        mask = np.array([t == kind for t in types])
        if mask.any():
            far_by_type[kind] = rate(~tau.rejects(attack_scores[mask]))
    far = float(np.mean(list(far_by_type.values())))

    # curve over thresholds in native (reject-above) orientation
    grid = eer_candidates(test_scores, attack_scores)
    curve = []
    for t in grid:
        per = [rate(np.asarray(attack_scores)[np.array(types) == k] <= t) for k in far_by_type]
        curve.append((r, float(t), rate(test_scores > t), float(np.mean(per))))
    unit = {
        "resample": r,
        "threshold": tau.to_dict(),
        "frr": frr,
        "far": far,
        "far_by_type": far_by_type,
        "train_participants": sorted({traces[i].participant_id for i in train_idx}),
        "test_participants": sorted({traces[i].participant_id for i in test_idx}),
        "train_trace_ids": [traces[i].trace_id for i in train_idx],
        "n_test_bonafide": int(len(test_idx)),
        "n_attacks": int(len(attack_idx)),
    }
    return unit, curve, ms


def spoof_screening_run(traces: Sequence[MotionTrace], method, spec: WindowSpec, selector: ChannelSelector,
                        resamples: int = 5, percentile: float = 99.0, seed=DEFAULT_SEED, *,
                        train_fraction: float = 0.8, inner_folds: int = 5, jobs: int = 1,
                        config_extra: dict | None = None) -> EvalReport:
    """Genuine-vs-spoof screening over ``resamples`` participant-level splits."""
    method = as_method(method)
    if not any(t.label == "attack" for t in traces):
        raise EmptyAttackSetError("spoof screening needs attack traces")
    prep = prepare(traces, method, spec, selector, seed)
    attack_idx = np.array([i for i, t in enumerate(prep.traces) if t.label == "attack"], dtype=np.int64)
    if len(attack_idx) == 0:
        raise EmptyAttackSetError("no attack trace survived windowing")
    payloads = [(r, method, prep.featurizer, prep.X, prep.F, prep.traces, attack_idx, inner_folds, percentile,
                 train_fraction, seed) for r in range(resamples)]
    results = run_units(_spoof_unit, payloads, jobs)
    units = [u for u, _, _ in results]
    curves = [row for _, c, _ in results for row in c]
    per_attack = {k: _mean_std([u["far_by_type"].get(k) for u in units])
                  for k in ATTACK_TYPES if any(k in u["far_by_type"] for u in units)}
    summary = {
        "frr": _mean_std([u["frr"] for u in units]),
        "far": _mean_std([u["far"] for u in units]),
        "degenerate_thresholds": int(sum(u["threshold"]["degenerate"] for u in units)),
    }
    config = _run_config("spoof", method, spec, selector,
                         {"resamples": resamples, "percentile": percentile, "train_fraction": train_fraction,
                          "inner_folds": inner_folds, "seed": int(seed), **(config_extra or {})})
    timing = {"featurize_ms_per_sample": prep.featurize_ms,
              "score_ms_per_probe": float(np.mean([ms for _, _, ms in results]))}
    return EvalReport("spoof", config, int(seed), units, summary, per_attack, {}, prep.excluded, curves, timing)


# ---------------------------------------------------------------------------
# one-class verification

def _oneclass_unit(p):
    (u_index, pid, method, featurizer, X, F, own_idx, other_idx, enroll, inner_folds, repeats,
     percentile, seed) = p
    unit_seed = derive_seed(seed, _ONECLASS, u_index)
    enroll_idx = own_idx[:enroll]
    probe_idx = own_idx[enroll:]
    calib = []
    rng = np.random.default_rng(derive_seed(unit_seed, 0))
    for rep in range(repeats):
        parts = np.array_split(rng.permutation(enroll), inner_folds)
        for f, held in enumerate(parts):
            fit = np.setdiff1d(np.arange(enroll), held)
            model = method.fit(featurizer, _take(X, enroll_idx[fit]), _take(F, enroll_idx[fit]),
                               derive_seed(unit_seed, 1, rep, f))
            calib.append(model.score_features(_take(F, enroll_idx[np.sort(held)])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        tau = calibrate_threshold(np.concatenate(calib), percentile, REJECT_ABOVE, folds=inner_folds,
                                  repeats=repeats)
    model = method.fit(featurizer, _take(X, enroll_idx), _take(F, enroll_idx), derive_seed(unit_seed, 2))
    t0 = time.perf_counter()
    genuine = model.score_features(_take(F, probe_idx))
    impostor = model.score_features(_take(F, other_idx))
    ms = 1000.0 * (time.perf_counter() - t0) / (len(probe_idx) + len(other_idx))
    # anomaly scores: negate so higher = more genuine for the sweep
    eer, _ = compute_eer(-genuine, -impostor)
    unit = {
        "participant_id": pid,
        "threshold": tau.to_dict(),
        "frr": rate(tau.rejects(genuine)),
        "far": rate(~tau.rejects(impostor)),
        "eer": eer,
        "n_genuine": int(len(probe_idx)),
        "n_impostor": int(len(other_idx)),
    }
    t, frr, far = sweep(-genuine, -impostor)
    curve = [(f"user{pid}", float(-a), float(b), float(c)) for a, b, c in zip(t, frr, far)]
    return unit, curve, ms


def oneclass_run(traces: Sequence[MotionTrace], method, spec: WindowSpec, selector: ChannelSelector,
                 enroll: int = 10, inner_folds: int = 2, repeats: int = 5, percentile: float = 99.0,
                 seed=DEFAULT_SEED, *, jobs: int = 1, config_extra: dict | None = None) -> EvalReport:
    """Per-user enrollment on the first ``enroll`` sequences; macro-averaged FRR/FAR."""
    method = as_method(method)
    bona = [t for t in traces if t.label == "bonafide"]
    prep = prepare(bona, method, spec, selector, seed)
    pids = sorted({t.participant_id for t in prep.traces})
    excluded = list(prep.excluded)
    payloads = []
    for pid in pids:
        own = np.array([i for i, t in enumerate(prep.traces) if t.participant_id == pid], dtype=np.int64)
        if len(own) < enroll + 1:
            log.warning("participant %s has %d sequences; need %d, excluded", pid, len(own), enroll + 1)
            excluded.append(f"participant:{pid}")
            continue
        other = np.array([i for i, t in enumerate(prep.traces) if t.participant_id != pid], dtype=np.int64)
        payloads.append((len(payloads), pid, method, prep.featurizer, prep.X, prep.F, own, other, enroll,
                         inner_folds, repeats, percentile, seed))
    if len(payloads) < 2:
        raise TooFewParticipantsError("one-class evaluation needs >= 2 eligible participants")
    results = run_units(_oneclass_unit, payloads, jobs)
    units = [u for u, _, _ in results]
    per_user = {u["participant_id"]: {"frr": u["frr"], "far": u["far"], "eer": u["eer"]} for u in units}
    summary = {
        "frr": _mean_std([u["frr"] for u in units]),
        "far": _mean_std([u["far"] for u in units]),
        "eer": _mean_std([u["eer"] for u in units]),
    }
    config = _run_config("oneclass", method, spec, selector,
                         {"enroll": enroll, "inner_folds": inner_folds, "repeats": repeats,
                          "percentile": percentile, "seed": int(seed), **(config_extra or {})})
    timing = {"featurize_ms_per_sample": prep.featurize_ms,
              "score_ms_per_probe": float(np.mean([ms for _, _, ms in results]))}
    curves = [row for _, c, _ in results for row in c]
    return EvalReport("oneclass", config, int(seed), units, summary, {}, per_user, excluded, curves, timing)


# ---------------------------------------------------------------------------
# classification-based verification

def inner_fold_count(labels, max_folds: int = 3) -> int:
    """``max_folds`` when every class has that many sequences, else 2."""
    _, counts = np.unique(labels, return_counts=True)
    return max_folds if counts.min() >= max_folds else 2


def _verify_unit(p):
    (fold, method, featurizer, X, F, y, train_idx, test_idx, max_inner, inner_repeats, target_frr, seed) = p
    unit_seed = derive_seed(seed, _VERIFY, fold)
    classes = np.unique(y)
    y_train = y[train_idx]
    if len(np.unique(y_train)) != len(classes):
        raise StratificationError(f"fold {fold}: a class is missing from the training side")
    n_inner = inner_fold_count(y_train, max_inner)
    if np.unique(y_train, return_counts=True)[1].min() < n_inner:
        raise StratificationError(f"fold {fold}: too few sequences per class for {n_inner} inner folds")
    calib = []
    for rep in range(inner_repeats):
        skf = StratifiedKFold(n_inner, shuffle=True, random_state=derive_seed(unit_seed, 0, rep) % (2 ** 32))
        for f, (a, b) in enumerate(skf.split(np.zeros(len(y_train)), y_train)):
            model = method.fit(featurizer, _take(X, train_idx[a]), _take(F, train_idx[a]), y_train[a],
                               derive_seed(unit_seed, 1, rep, f))
            P = model.proba_features(_take(F, train_idx[b]))
            cols = np.searchsorted(model.classes, y_train[b])
            calib.append(P[np.arange(len(b)), cols])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        tau = calibrate_threshold(np.concatenate(calib), target_frr, REJECT_BELOW, folds=n_inner,
                                  repeats=inner_repeats)
    model = method.fit(featurizer, _take(X, train_idx), _take(F, train_idx), y_train, derive_seed(unit_seed, 2))
    t0 = time.perf_counter()
    P = model.proba_features(_take(F, test_idx))
    ms = 1000.0 * (time.perf_counter() - t0) / len(test_idx)
    y_test = y[test_idx]
    cols = np.searchsorted(model.classes, y_test)
    true_mask = np.zeros(P.shape, dtype=bool)
    true_mask[np.arange(len(test_idx)), cols] = True
    genuine = P[true_mask]
    impostor = P[~true_mask]
    per_user = {}
    for j, c in enumerate(model.classes):
        g = P[y_test == c, j]
        imp = P[y_test != c, j]
        if len(g) and len(imp):
            per_user[int(c)] = compute_eer(g, imp)[0]
    t, frr, far = sweep(genuine, impostor)
    unit = {
        "fold": fold,
        "threshold": tau.to_dict(),
        "inner_folds": n_inner,
        "eer": float(np.mean(list(per_user.values()))),
        "pooled_eer": compute_eer(genuine, impostor)[0],
        "frr": rate(tau.rejects(genuine)),
        "far": rate(~tau.rejects(impostor)),
        "per_user_eer": {str(k): v for k, v in per_user.items()},
        "n_genuine": int(len(genuine)),
        "n_impostor": int(len(impostor)),
    }
    curve = [(f"fold{fold}", float(a), float(b), float(c)) for a, b, c in zip(t, frr, far)]
    return unit, curve, ms


def tsc_verification_run(traces: Sequence[MotionTrace], method, spec: WindowSpec, selector: ChannelSelector,
                         outer_folds: int = 5, inner_folds: int = 3, inner_repeats: int = 5,
                         target_frr: float = 1.0, seed=DEFAULT_SEED, *, jobs: int = 1,
                         config_extra: dict | None = None) -> EvalReport:
    """Closed-set classifier verification with stratified outer CV; per-user EER macro-averaged."""
    method = as_method(method)
    bona = [t for t in traces if t.label == "bonafide"]
    prep = prepare(bona, method, spec, selector, seed)
    y = np.array([t.participant_id for t in prep.traces], dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise StratificationError("verification needs >= 2 participants")
    if counts.min() < outer_folds:
        raise StratificationError(
            f"participant {int(classes[np.argmin(counts)])} has {int(counts.min())} sequences; "
            f"{outer_folds}-fold stratification needs at least {outer_folds}")
    skf = StratifiedKFold(outer_folds, shuffle=True, random_state=derive_seed(seed, _VERIFY) % (2 ** 32))
    payloads = [(f, method, prep.featurizer, prep.X, prep.F, y, tr, te, inner_folds, inner_repeats, target_frr,
                 seed) for f, (tr, te) in enumerate(skf.split(np.zeros(len(y)), y))]
    results = run_units(_verify_unit, payloads, jobs)
    units = [u for u, _, _ in results]
    per_user = {}
    for c in classes:
        vals = [u["per_user_eer"][str(int(c))] for u in units if str(int(c)) in u["per_user_eer"]]
        per_user[int(c)] = {"eer": float(np.mean(vals)) if vals else None}
    summary = {
        "eer": _mean_std([u["eer"] for u in units]),
        "pooled_eer": _mean_std([u["pooled_eer"] for u in units]),
        "frr": _mean_std([u["frr"] for u in units]),
        "far": _mean_std([u["far"] for u in units]),
    }
    config = _run_config("verify", method, spec, selector,
                         {"outer_folds": outer_folds, "inner_folds": inner_folds, "inner_repeats": inner_repeats,
                          "target_frr": target_frr, "seed": int(seed), **(config_extra or {})})
    timing = {"featurize_ms_per_sample": prep.featurize_ms,
              "score_ms_per_probe": float(np.mean([ms for _, _, ms in results]))}
    curves = [row for _, c, _ in results for row in c]
    return EvalReport("verify", config, int(seed), units, summary, {}, per_user, prep.excluded, curves, timing)
