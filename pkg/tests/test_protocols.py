import json
import warnings
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motiongate.classifiers import ClassifierConfig
from motiongate.detectors import DetectorConfig, fit_detector
from motiongate.features.featurizer import Featurizer
from motiongate.preprocess import WindowSpec, build_samples, stack
from motiongate.protocols import (REJECT_ABOVE, REJECT_BELOW, CalibrationWarning, EmptyAttackSetError,
                                  LeakageError, StratificationError, TooFewParticipantsError, calibrate_threshold,
                                  check_leakage, compute_eer, group_split, oneclass_run, spoof_screening_run,
                                  sweep, tsc_verification_run)
from motiongate.synthgen import corpus_traces
from motiongate.trace import ChannelSelector

from oracles import eer_bruteforce

SPEC = WindowSpec(10, 50, 150, "single")
ACC = ChannelSelector("acc_xyz")


def bona_stub(n_participants, per=2):
    return corpus_traces(n_participants, per, (0, 0, 0), seed=1)


# ---------------------------------------------------------------------------
# splitting

def test_group_split_thirty_participants():
    traces = bona_stub(30, 1)
    train, test = group_split(traces, 0.8, seed=3)
    pid = {t.trace_id: t.participant_id for t in traces}
    assert len({pid[i] for i in train}) == 24 and len({pid[i] for i in test}) == 6
    assert not {pid[i] for i in train} & {pid[i] for i in test}
    assert group_split(traces, 0.8, seed=3) == (train, test)


def test_group_split_too_few():
    with pytest.raises(TooFewParticipantsError):
        group_split(bona_stub(1), 0.8)


def test_check_leakage(small_corpus):
    bona = [t for t in small_corpus if t.label == "bonafide"]
    attack = [t for t in small_corpus if t.label == "attack"]
    with pytest.raises(LeakageError):
        check_leakage(bona[:3] + attack[:1], bona[-3:])
    with pytest.raises(LeakageError):
        check_leakage(bona[:3], bona[2:5])


# ---------------------------------------------------------------------------
# EER and thresholds

def test_eer_examples():
    assert compute_eer([1, 2, 3], [-3, -2, -1]) == (0.0, 0.0)  # -1 itself still accepts an impostor
    eer, _ = compute_eer([0.0, 1.0], [0.0, 1.0])
    assert eer == 50.0


@given(st.lists(st.integers(-6, 6), min_size=1, max_size=6), st.lists(st.integers(-6, 6), min_size=1, max_size=6))
def test_eer_matches_bruteforce(genuine, impostor):
    g = [x / 4 for x in genuine]
    i = [x / 4 for x in impostor]
    assert compute_eer(g, i) == eer_bruteforce(g, i)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_sweep_monotone(genuine, impostor):
    t, frr, far = sweep(genuine, impostor)
    assert np.all(np.diff(t) > 0)
    assert np.all(np.diff(frr) >= 0) and np.all(np.diff(far) <= 0)
    assert np.all((frr >= 0) & (frr <= 100) & (far >= 0) & (far <= 100))


def test_eer_extremes():
    rng = np.random.default_rng(0)
    g = rng.normal(size=200)
    assert compute_eer(g + 100, g)[0] == 0.0
    same = compute_eer(rng.normal(size=200), rng.normal(size=200))[0]
    assert 45 <= same <= 55


def test_calibrate_threshold_percentile():
    s = np.arange(1.0, 101.0)
    tau = calibrate_threshold(s, 99)
    assert 99.0 <= tau.value <= 100.0
    assert tau.value == pytest.approx(np.percentile(s, 99))
    assert calibrate_threshold(s, 0).value == 1.0
    assert calibrate_threshold(s, 100).value == 100.0
    low = calibrate_threshold(s, 1, REJECT_BELOW)
    assert low.rejects([1.0, 2.0]).tolist() == [True, False]


def test_calibrate_threshold_degenerate_and_fallback():
    tau = calibrate_threshold(np.full(20, 0.3), 99)
    assert tau.degenerate and tau.value == 0.3 and not tau.rejects([0.3])[0]
    with pytest.warns(CalibrationWarning):
        small = calibrate_threshold([1.0, 5.0, 2.0], 50)
    assert small.fallback and small.value == 5.0
    with pytest.warns(CalibrationWarning):
        assert calibrate_threshold([1.0, 5.0, 2.0], 50, REJECT_BELOW).value == 1.0


def test_rejection_is_strict():
    tau = calibrate_threshold(np.arange(20.0), 100)
    assert tau.rejects([19.0, 19.5]).tolist() == [False, True]


# ---------------------------------------------------------------------------
# spoof screening

@dataclass(frozen=True)
class _ConstantModel:
    value: float

    def score_features(self, F):
        return np.full(len(F), self.value)


@dataclass(frozen=True)
class ConstantMethod:
    value: float = 1.5
    name: str = "constant"

    def to_dict(self):
        return {"value": self.value}

    def featurizer(self, input_shape, seed):
        return Featurizer("raw", tuple(input_shape))

    def fit(self, featurizer, X, F, seed):
        return _ConstantModel(self.value)


def test_constant_detector_accepts_everything(small_corpus):
    rep = spoof_screening_run(small_corpus, ConstantMethod(), SPEC, ACC, resamples=2, seed=7)
    assert rep.summary["frr"]["mean"] == 0.0
    assert rep.summary["far"]["mean"] == 100.0
    assert rep.summary["degenerate_thresholds"] == 2


def test_spoof_report_contract(small_corpus):
    rep = spoof_screening_run(small_corpus, DetectorConfig("knn_euclid"), SPEC, ACC, resamples=3, seed=7)
    attack_ids = {t.trace_id for t in small_corpus if t.label == "attack"}
    for u in rep.units:
        assert not set(u["train_participants"]) & set(u["test_participants"])
        assert not set(u["train_trace_ids"]) & attack_ids
        assert u["far"] == pytest.approx(np.mean(list(u["far_by_type"].values())), abs=1e-12)
        assert set(u["far_by_type"]) == {"stationary", "handheld", "temporal_shift"}
    again = spoof_screening_run(small_corpus, DetectorConfig("knn_euclid"), SPEC, ACC, resamples=3, seed=7)
    assert rep.to_json() == again.to_json()
    assert "timing" not in json.loads(rep.to_json())


def test_spoof_parallel_equals_serial(small_corpus):
    cfg = DetectorConfig("knn_euclid")
    serial = spoof_screening_run(small_corpus, cfg, SPEC, ACC, resamples=2, seed=5)
    parallel = spoof_screening_run(small_corpus, cfg, SPEC, ACC, resamples=2, seed=5, jobs=2)
    assert serial.to_json() == parallel.to_json()
    assert serial.curves_csv() == parallel.curves_csv()


def test_spoof_needs_attacks(small_corpus):
    with pytest.raises(EmptyAttackSetError):
        spoof_screening_run([t for t in small_corpus if t.label == "bonafide"], DetectorConfig("knn_euclid"),
                            SPEC, ACC, resamples=1)


# ---------------------------------------------------------------------------
# one-class verification

def test_identical_probe_accepted(small_corpus):
    bona = [t for t in small_corpus if t.label == "bonafide" and t.participant_id == 1]
    X = stack(build_samples(bona, SPEC, ACC))
    det = fit_detector(DetectorConfig("knn_euclid", k=1), X[:10], seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        tau = calibrate_threshold(det.score(X[10:]), 99, REJECT_ABOVE)
    assert det.score(X[3:4])[0] == 0.0
    assert not tau.rejects(det.score(X[3:4]))[0]


def test_oneclass_run(small_corpus):
    rep = oneclass_run(small_corpus, DetectorConfig("knn_euclid"), SPEC, ACC, seed=7)
    assert len(rep.units) == 8
    for u in rep.units:
        assert u["n_genuine"] == 2 and u["n_impostor"] == 84
        assert 0 <= u["eer"] <= 100
    assert rep.to_json() == oneclass_run(small_corpus, DetectorConfig("knn_euclid"), SPEC, ACC, seed=7).to_json()


def test_oneclass_too_few_participants(small_corpus):
    one = [t for t in small_corpus if t.label == "bonafide" and t.participant_id == 1]
    with pytest.raises(TooFewParticipantsError):
        oneclass_run(one, DetectorConfig("knn_euclid"), SPEC, ACC)


# ---------------------------------------------------------------------------
# classification-based verification

def test_verification_run(small_corpus):
    cfg = ClassifierConfig("quant_et", n_trees=40)
    rep = tsc_verification_run(small_corpus, cfg, WindowSpec(10, 50, 150, "double"), ChannelSelector("nine"),
                               outer_folds=3, inner_repeats=1, seed=7)
    assert len(rep.units) == 3
    assert all(0 <= u["eer"] <= 100 for u in rep.units)
    assert rep.units[0]["threshold"]["direction"] == REJECT_BELOW
    assert set(rep.per_user) == set(range(1, 9))


def test_verification_stratification_error():
    traces = bona_stub(3, 2)
    with pytest.raises(StratificationError):
        tsc_verification_run(traces, ClassifierConfig("quant_et", n_trees=5), SPEC, ACC, outer_folds=5)
