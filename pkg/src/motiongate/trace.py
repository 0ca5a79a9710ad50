"""Motion-trace data model, canonical corpus format and grid regularization.

A corpus on disk is a directory of ``<trace_id>.csv`` / ``<trace_id>.json``
pairs plus a ``manifest.json`` that lists the trace ids in recording order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHANNELS = (
    "acc_x", "acc_y", "acc_z",
    "gyr_x", "gyr_y", "gyr_z",
    "mag_x", "mag_y", "mag_z",
    "lacc_x", "lacc_y", "lacc_z",
    "grav_x", "grav_y", "grav_z",
)
CSV_HEADER = ("t_ms",) + CHANNELS
N_CHANNELS = len(CHANNELS)

SAMPLE_PERIOD_MS = 20
MAX_GAP_MS = 200

LABELS = ("bonafide", "attack")
ATTACK_TYPES = ("none", "stationary", "handheld", "temporal_shift")
PROXY_TYPES = ATTACK_TYPES[1:]

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "motiongate-corpus"
MANIFEST_VERSION = 1


class TraceError(ValueError):
    """Base class for trace parsing and validation failures."""


class HeaderMismatchError(TraceError):
    pass


class NonMonotonicTimestampsError(TraceError):
    pass


class MissingEventError(TraceError):
    pass


class NonFiniteValueError(TraceError):
    pass


class EventOrderError(TraceError):
    pass


class LabelError(TraceError):
    pass


class MalformedTraceError(TraceError):
    pass


class UnrecoverableGapError(TraceError):
    pass


@dataclass(frozen=True, eq=False)
class MotionTrace:
    """One capture attempt.

    ``samples`` is ``(T, 15)`` in :data:`CHANNELS` order and
    ``timestamps_ms`` holds ``T`` non-decreasing integers.
    """

    trace_id: str
    participant_id: int | None
    samples: np.ndarray
    timestamps_ms: np.ndarray
    camera_open_ms: int
    capture_ms: int
    label: str = "bonafide"
    attack_type: str = "none"

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        ts = np.array(self.timestamps_ms, dtype=np.int64)
        if samples.ndim != 2 or samples.shape[1] != N_CHANNELS:
            raise MalformedTraceError(
                f"{self.trace_id}: samples must be (T, {N_CHANNELS}), got {samples.shape}"
            )
        if ts.ndim != 1 or len(ts) != len(samples):
            raise MalformedTraceError(f"{self.trace_id}: timestamp count does not match rows")
        if len(ts) < 1:
            raise MalformedTraceError(f"{self.trace_id}: empty trace")
        if np.any(np.diff(ts) < 0):
            raise NonMonotonicTimestampsError(f"{self.trace_id}: timestamps decrease")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteValueError(f"{self.trace_id}: non-finite channel value")
        if self.capture_ms < self.camera_open_ms:
            raise EventOrderError(
                f"{self.trace_id}: capture_ms {self.capture_ms} precedes camera_open_ms {self.camera_open_ms}"
            )
        _check_label(self.trace_id, self.label, self.attack_type)
        if self.participant_id is not None and (
            isinstance(self.participant_id, bool) or int(self.participant_id) < 1
        ):
            raise LabelError(f"{self.trace_id}: participant_id must be a positive integer or null")
        samples.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "timestamps_ms", ts)
        object.__setattr__(self, "camera_open_ms", int(self.camera_open_ms))
        object.__setattr__(self, "capture_ms", int(self.capture_ms))

    @property
    def n_samples(self) -> int:
        return len(self.timestamps_ms)

    def meta(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "participant_id": self.participant_id,
            "camera_open_ms": self.camera_open_ms,
            "capture_ms": self.capture_ms,
            "label": self.label,
            "attack_type": self.attack_type,
        }

    def with_samples(self, samples, timestamps_ms=None) -> "MotionTrace":
        ts = self.timestamps_ms if timestamps_ms is None else timestamps_ms
        return replace(self, samples=samples, timestamps_ms=ts)

    def same_as(self, other: "MotionTrace") -> bool:
        return (
            self.meta() == other.meta()
            and np.array_equal(self.timestamps_ms, other.timestamps_ms)
            and np.array_equal(self.samples, other.samples)
        )


def _check_label(trace_id, label, attack_type):
    if label not in LABELS:
        raise LabelError(f"{trace_id}: unknown label {label!r}")
    if attack_type not in ATTACK_TYPES:
        raise LabelError(f"{trace_id}: unknown attack_type {attack_type!r}")
    if (label == "bonafide") != (attack_type == "none"):
        raise LabelError(f"{trace_id}: label {label!r} inconsistent with attack_type {attack_type!r}")


# ---------------------------------------------------------------------------
# channel selection

SELECTORS: dict[str, tuple[str, ...]] = {
    "acc_x": ("acc_x",),
    "acc_xyz": ("acc_x", "acc_y", "acc_z"),
    "gyr_xyz": ("gyr_x", "gyr_y", "gyr_z"),
    "mag_xyz": ("mag_x", "mag_y", "mag_z"),
    "lacc_xyz": ("lacc_x", "lacc_y", "lacc_z"),
    "grav_xyz": ("grav_x", "grav_y", "grav_z"),
    "cross_x": ("acc_x", "gyr_x", "mag_x"),
    "nine": CHANNELS[:9],
}
# common aliases used in tables and configs
SELECTOR_ALIASES = {"3acc": "acc_xyz", "3ch": "cross_x", "9ch": "nine", "1ch": "acc_x"}


@dataclass(frozen=True)
class ChannelSelector:
    """Named, ordered subset of the 15 channels.

    Magnetometer names refer to the processed (debiased) magnetometer once a
    trace has gone through :func:`motiongate.preprocess.preprocess_trace`.
    """

    name: str
    channels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        chans = self.channels or resolve_channels(self.name)
        if not chans:
            raise ValueError("channel selector resolves to an empty set")
        if len(set(chans)) != len(chans):
            raise ValueError(f"duplicate channels in selector {self.name!r}")
        unknown = [c for c in chans if c not in CHANNELS]
        if unknown:
            raise ValueError(f"unknown channels {unknown}")
        object.__setattr__(self, "channels", tuple(chans))

    @classmethod
    def named(cls, name: str) -> "ChannelSelector":
        return cls(name)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(CHANNELS.index(c) for c in self.channels)

    def __len__(self):
        return len(self.channels)


def resolve_channels(name: str) -> tuple[str, ...]:
    key = SELECTOR_ALIASES.get(name, name)
    if key in SELECTORS:
        return SELECTORS[key]
    parts = tuple(p.strip() for p in name.split(",") if p.strip())
    if parts and all(p in CHANNELS for p in parts):
        return parts
    raise ValueError(f"unknown channel selector {name!r}")


# ---------------------------------------------------------------------------
# parsing / serialization

def _decode(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("utf-8")
    return data


def parse_meta(meta_json_bytes) -> dict:
    try:
        meta = json.loads(_decode(meta_json_bytes))
    except json.JSONDecodeError as exc:
        raise MalformedTraceError(f"invalid meta JSON: {exc}") from None
    if not isinstance(meta, dict):
        raise MalformedTraceError("meta JSON must be an object")
    if "trace_id" not in meta or not isinstance(meta["trace_id"], str):
        raise MalformedTraceError("meta JSON lacks a string trace_id")
    for key in ("camera_open_ms", "capture_ms"):
        value = meta.get(key)
        if value is None:
            raise MissingEventError(f"{meta['trace_id']}: missing event timestamp {key}")
        if isinstance(value, bool) or not isinstance(value, int):
            raise MalformedTraceError(f"{meta['trace_id']}: {key} must be an integer")
    pid = meta.get("participant_id")
    if pid is not None and (isinstance(pid, bool) or not isinstance(pid, int)):
        raise LabelError(f"{meta['trace_id']}: participant_id must be an integer or null")
    return meta


def parse_csv(csv_bytes) -> tuple[np.ndarray, np.ndarray]:
    """Parse trace CSV text into ``(timestamps_ms, samples)``."""
    reader = csv.reader(io.StringIO(_decode(csv_bytes)))
    try:
        header = next(reader)
    except StopIteration:
        raise HeaderMismatchError("empty CSV") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise HeaderMismatchError(f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
    ts, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise MalformedTraceError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            t = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise MalformedTraceError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteValueError(f"line {lineno}: non-finite channel value")
        ts.append(t)
        rows.append(values)
    if not rows:
        raise MalformedTraceError("CSV has no samples")
    ts = np.asarray(ts, dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        bad = int(np.argmax(np.diff(ts) < 0)) + 3
        raise NonMonotonicTimestampsError(f"line {bad}: timestamps decrease")
    return ts, np.asarray(rows, dtype=np.float64)


def parse_trace(csv_bytes, meta_json_bytes) -> MotionTrace:
    """Build a validated :class:`MotionTrace` from CSV and sidecar JSON."""
    meta = parse_meta(meta_json_bytes)
    ts, samples = parse_csv(csv_bytes)
    return MotionTrace(
        trace_id=meta["trace_id"],
        participant_id=meta.get("participant_id"),
        samples=samples,
        timestamps_ms=ts,
        camera_open_ms=meta["camera_open_ms"],
        capture_ms=meta["capture_ms"],
        label=meta.get("label", "bonafide"),
        attack_type=meta.get("attack_type", "none"),
    )


def trace_from_arrays(samples, timestamps_ms, meta: dict) -> MotionTrace:
    """Build a trace from inline arrays and a meta mapping (service payloads)."""
    meta = parse_meta(json.dumps(meta))
    try:
        samples = np.asarray(samples, dtype=np.float64)
        timestamps = np.asarray(timestamps_ms)
    except (TypeError, ValueError) as exc:
        raise MalformedTraceError(f"bad sample arrays: {exc}") from None
    if timestamps.ndim != 1 or not np.issubdtype(timestamps.dtype, np.integer):
        raise MalformedTraceError("timestamps_ms must be a list of integers")
    return MotionTrace(
        trace_id=meta["trace_id"],
        participant_id=meta.get("participant_id"),
        samples=samples,
        timestamps_ms=timestamps,
        camera_open_ms=meta["camera_open_ms"],
        capture_ms=meta["capture_ms"],
        label=meta.get("label", "bonafide"),
        attack_type=meta.get("attack_type", "none"),
    )


def serialize_csv(trace: MotionTrace) -> bytes:
    lines = [",".join(CSV_HEADER)]
    for t, row in zip(trace.timestamps_ms.tolist(), trace.samples.tolist()):
        lines.append(str(t) + "," + ",".join(repr(v) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def serialize_meta(trace: MotionTrace) -> bytes:
    return (json.dumps(trace.meta(), indent=2) + "\n").encode("utf-8")


def serialize_trace(trace: MotionTrace) -> tuple[bytes, bytes]:
    return serialize_csv(trace), serialize_meta(trace)


# ---------------------------------------------------------------------------
# grid regularization

def regularize_grid(trace: MotionTrace, period_ms: int = SAMPLE_PERIOD_MS,
                    max_gap_ms: int = MAX_GAP_MS) -> MotionTrace:
    """Linearly interpolate a trace onto an exact ``period_ms`` grid.

    The grid starts at the first timestamp and runs up to the last one.
    Rows sharing a timestamp are averaged first.
    """
    ts = trace.timestamps_ms
    samples = trace.samples
    gaps = np.diff(ts)
    if np.any(gaps > max_gap_ms):
        i = int(np.argmax(gaps > max_gap_ms))
        raise UnrecoverableGapError(
            f"{trace.trace_id}: gap of {int(gaps[i])} ms after t={int(ts[i])} exceeds {max_gap_ms} ms"
        )
    t0 = int(ts[0])
    n = (int(ts[-1]) - t0) // period_ms + 1
    grid = t0 + period_ms * np.arange(n, dtype=np.int64)
    if len(ts) == n and np.array_equal(ts, grid):
        return trace

    if np.any(gaps == 0):
        uniq, inverse = np.unique(ts, return_inverse=True)
        sums = np.zeros((len(uniq), samples.shape[1]))
        np.add.at(sums, inverse, samples)
        counts = np.bincount(inverse).astype(np.float64)
        ts, samples = uniq, sums / counts[:, None]

    x = ts.astype(np.float64)
    g = grid.astype(np.float64)
    out = np.empty((n, samples.shape[1]))
    for c in range(samples.shape[1]):
        out[:, c] = np.interp(g, x, samples[:, c])
    return trace.with_samples(out, grid)


# ---------------------------------------------------------------------------
# corpus directories

def read_trace_files(csv_path, meta_path=None) -> MotionTrace:
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    return parse_trace(csv_path.read_bytes(), meta_path.read_bytes())


def write_trace_files(trace: MotionTrace, directory) -> None:
    directory = Path(directory)
    csv_bytes, meta_bytes = serialize_trace(trace)
    (directory / f"{trace.trace_id}.csv").write_bytes(csv_bytes)
    (directory / f"{trace.trace_id}.json").write_bytes(meta_bytes)


def manifest_bytes(trace_ids: Sequence[str]) -> bytes:
    doc = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "traces": list(trace_ids)}
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def write_corpus(directory, traces: Iterable[MotionTrace]) -> list[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    for trace in traces:
        if trace.trace_id in ids:
            raise TraceError(f"duplicate trace id {trace.trace_id!r}")
        write_trace_files(trace, directory)
        ids.append(trace.trace_id)
    (directory / MANIFEST_NAME).write_bytes(manifest_bytes(ids))
    return ids


def read_manifest(directory) -> list[str]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise TraceError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    if int(doc.get("version", 0)) > MANIFEST_VERSION:
        raise TraceError(f"{path}: manifest version {doc['version']} is newer than supported")
    return list(doc["traces"])


def load_corpus(directory) -> list[MotionTrace]:
    """Load every trace listed in the manifest, in manifest order."""
    directory = Path(directory)
    traces = []
    for trace_id in read_manifest(directory):
        trace = read_trace_files(directory / f"{trace_id}.csv", directory / f"{trace_id}.json")
        if trace.trace_id != trace_id:
            raise TraceError(f"{trace_id}.json carries trace_id {trace.trace_id!r}")
        traces.append(trace)
    return traces


def discover_pairs(directory) -> list[tuple[Path, Path]]:
    """CSV/JSON pairs in a directory that has no manifest (ingest input)."""
    directory = Path(directory)
    pairs = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".csv"):
            meta = directory / (name[:-4] + ".json")
            if meta.exists():
                pairs.append((directory / name, meta))
    return pairs
