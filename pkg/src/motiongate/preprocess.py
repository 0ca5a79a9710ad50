"""Signal conditioning and event-anchored window extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import signal

from .trace import (
    CHANNELS,
    SAMPLE_PERIOD_MS,
    ChannelSelector,
    MotionTrace,
    regularize_grid,
)

log = logging.getLogger(__name__)

FS_HZ = 50.0
CUTOFF_HZ = 12.5
FILTER_ORDER = 4

REPRESENTATIONS = ("single", "concat", "double")
_ZERO_REL = 1e-9

_MAG = slice(CHANNELS.index("mag_x"), CHANNELS.index("mag_z") + 1)


class FilterLengthError(ValueError):
    pass


class WindowOutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    """Window layout around the camera-opening and capture events.

    ``k_open`` samples starting at camera opening form the opening window;
    ``pre`` samples before and ``post`` samples from the capture index form
    the capture window.
    """

    k_open: int = 10
    pre: int = 50
    post: int = 150
    representation: str = "single"

    def __post_init__(self):
        if self.k_open < 0 or self.pre < 0 or self.post < 1:
            raise ValueError(f"invalid window spec {self}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")

    @property
    def capture_length(self) -> int:
        return self.pre + self.post

    @property
    def length(self) -> int:
        if self.representation == "concat":
            return self.k_open + self.pre + self.post
        return self.pre + self.post

    def n_channels(self, m: int) -> int:
        return 2 * m if self.representation == "double" else m

    def to_dict(self) -> dict:
        return {"k_open": self.k_open, "pre": self.pre, "post": self.post,
                "representation": self.representation}

    @classmethod
    def parse(cls, text: str, representation: str = "single") -> "WindowSpec":
        """``"10,50,150"`` -> ``WindowSpec(10, 50, 150, representation)``."""
        parts = [int(p) for p in text.replace("+", ",").split(",") if p.strip()]
        if len(parts) != 3:
            raise ValueError(f"window must be k_open,pre,post, got {text!r}")
        return cls(*parts, representation=representation)


@dataclass(frozen=True, eq=False)
class WindowedSample:
    values: np.ndarray  # (L, M)
    trace_id: str
    participant_id: int | None
    label: str
    attack_type: str
    spec: WindowSpec


def butterworth_sos(cutoff_hz=CUTOFF_HZ, fs_hz=FS_HZ, order=FILTER_ORDER):
    if not 0 < cutoff_hz < fs_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, {fs_hz / 2}) Hz")
    return signal.butter(order, cutoff_hz, btype="lowpass", fs=fs_hz, output="sos")


def lowpass_filter(x, cutoff_hz=CUTOFF_HZ, fs_hz=FS_HZ, order=FILTER_ORDER):
    """Zero-phase Butterworth low-pass along axis 0.

    Accepts a length-T series or a ``(T, C)`` array (filtered per column).
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[0]
    if T < 3 * order:
        raise FilterLengthError(f"series of length {T} is shorter than {3 * order} samples")
    sos = butterworth_sos(cutoff_hz, fs_hz, order)
    ntaps = 2 * len(sos) + 1
    return signal.sosfiltfilt(sos, x, axis=0, padlen=min(3 * ntaps, T - 1))


def debias_magnetometer(mag, smooth: Callable[[np.ndarray], np.ndarray] | None = None):
    """Remove heading bias from a ``(T, 3)`` magnetometer series.

    Centres each axis on its sequence mean, scales every 3-vector to unit
    length (zero vectors are left alone), takes first differences and
    prepends a zero row. ``smooth`` runs between normalization and
    differencing when given.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != 3:
        raise ValueError(f"magnetometer must be (T, 3), got {mag.shape}")
    centred = mag - mag.mean(axis=0)
    norms = np.linalg.norm(centred, axis=1, keepdims=True)
    # rows within rounding of the mean are zero vectors, not noise to amplify
    floor = _ZERO_REL * max(1.0, float(np.abs(mag).max(initial=0.0)))
    centred[norms[:, 0] <= floor] = 0.0
    unit = np.divide(centred, norms, out=centred.copy(), where=norms > floor)
    if smooth is not None:
        unit = smooth(unit)
    out = np.zeros_like(unit)
    out[1:] = np.diff(unit, axis=0)
    return out


def preprocess_trace(trace: MotionTrace, *, regularize=True, cutoff_hz=CUTOFF_HZ,
                     order=FILTER_ORDER) -> MotionTrace:
    """Grid-regularize, debias the magnetometer and low-pass every channel.

    The returned trace keeps the 15-channel layout; the magnetometer slots
    hold the processed (differenced) magnetometer.
    """
    if regularize:
        trace = regularize_grid(trace)

    def smooth(x):
        return lowpass_filter(x, cutoff_hz=cutoff_hz, order=order)

    out = smooth(trace.samples)
    out[:, _MAG] = debias_magnetometer(trace.samples[:, _MAG], smooth=smooth)
    return trace.with_samples(out)


def event_index(trace: MotionTrace, t_ms: int, period_ms: int = SAMPLE_PERIOD_MS) -> int:
    """Nearest grid index for an event timestamp; exact halves go to the earlier index."""
    q, r = divmod(int(t_ms) - int(trace.timestamps_ms[0]), period_ms)
    return q + (1 if 2 * r > period_ms else 0)


def extract_windows(trace: MotionTrace, spec: WindowSpec, selector: ChannelSelector) -> WindowedSample:
    """Cut the fixed-length sample described by ``spec`` from a processed trace."""
    data = trace.samples[:, list(selector.indices)]
    T = len(data)
    cap = event_index(trace, trace.capture_ms)
    lo, hi = cap - spec.pre, cap + spec.post
    if lo < 0 or hi > T:
        raise WindowOutOfRangeError(
            f"{trace.trace_id}: capture window [{lo}, {hi}) outside trace of {T} samples"
        )
    w_c = data[lo:hi]
    if spec.representation == "single":
        values = w_c
    else:
        op = event_index(trace, trace.camera_open_ms)
        if op < 0 or op + spec.k_open > T:
            raise WindowOutOfRangeError(
                f"{trace.trace_id}: opening window [{op}, {op + spec.k_open}) outside trace of {T} samples"
            )
        w_o = data[op:op + spec.k_open]
        if spec.representation == "concat":
            values = np.concatenate([w_o, w_c], axis=0)
        else:
            padded = np.zeros_like(w_c)
            n = min(spec.k_open, len(w_c))
            padded[:n] = w_o[:n]
            values = np.concatenate([w_c, padded], axis=1)
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return WindowedSample(values, trace.trace_id, trace.participant_id, trace.label,
                          trace.attack_type, spec)


def build_samples(traces: Iterable[MotionTrace], spec: WindowSpec, selector: ChannelSelector,
                  processed: bool = False) -> list[WindowedSample]:
    """Preprocess and window a batch of traces, logging and skipping the ones that do not fit."""
    out = []
    for trace in traces:
        try:
            p = trace if processed else preprocess_trace(trace)
            out.append(extract_windows(p, spec, selector))
        except (WindowOutOfRangeError, FilterLengthError) as exc:
            log.warning("excluded %s: %s", trace.trace_id, exc)
    return out


def stack(samples: list[WindowedSample]) -> np.ndarray:
    """``(n, L, M)`` array from windowed samples of one shape."""
    if not samples:
        raise ValueError("no samples")
    shapes = {s.values.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"samples have mixed shapes {sorted(shapes)}")
    return np.stack([s.values for s in samples])
