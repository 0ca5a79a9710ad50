"""Quantiles over dyadic intervals of a series and its differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REPRESENTATIONS = ("raw", "diff1", "diff2")


class QuantLengthError(ValueError):
    pass


@dataclass(frozen=True)
class QuantConfig:
    depth: int = 6
    divisor: int = 4
    representations: tuple[str, ...] = REPRESENTATIONS

    def __post_init__(self):
        if self.depth < 1 or self.divisor < 1:
            raise ValueError(f"invalid quant config {self}")
        bad = set(self.representations) - set(REPRESENTATIONS)
        if bad:
            raise ValueError(f"unknown representations {sorted(bad)}")

    def to_dict(self):
        return {"depth": self.depth, "divisor": self.divisor,
                "representations": list(self.representations)}


def intervals(length: int, depth: int) -> list[tuple[int, int]]:
    """Interval bounds for one representation.

    Level ``d`` (1-based) splits ``[0, length)`` into ``2**(d-1)`` pieces at
    ``floor(k * length / n)``. Even levels add the pieces shifted right by
    half an interval when pieces are at least two samples long. Levels with
    more pieces than samples are skipped.
    """
    out = []
    for d in range(1, depth + 1):
        n = 2 ** (d - 1)
        if n > length:
            break
        bounds = [(k * length) // n for k in range(n + 1)]
        out.extend(zip(bounds[:-1], bounds[1:]))
        if d % 2 == 0 and length // n >= 2:
            shift = -(-length // (2 * n))
            out.extend((a + shift, b + shift) for a, b in zip(bounds[:-2], bounds[1:-1]))
    return out


def n_quantiles(m: int, divisor: int) -> int:
    return -(-m // divisor)


def quantile_levels(m: int, divisor: int) -> np.ndarray:
    q = n_quantiles(m, divisor)
    return np.array([0.5]) if q == 1 else np.linspace(0.0, 1.0, q)


def _representation(X, name):
    if name == "raw":
        return X
    if name == "diff1":
        return np.diff(X, n=1, axis=1)
    return np.diff(X, n=2, axis=1)


def quant_transform(samples, config: QuantConfig = QuantConfig()) -> np.ndarray:
    """Interval-quantile features, ``(n, n_features)``.

    Column order: representation, then interval, then channel, then quantile.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected (n, L, M) samples, got shape {X.shape}")
    n, L, M = X.shape
    if L < 2 ** (config.depth - 1):
        raise QuantLengthError(f"series length {L} is shorter than 2**(depth-1) = {2 ** (config.depth - 1)}")
    blocks = []
    for name in config.representations:
        R = _representation(X, name)
        for a, b in intervals(R.shape[1], config.depth):
            probs = quantile_levels(b - a, config.divisor)
            q = np.quantile(R[:, a:b, :], probs, axis=1)  # (q, n, M)
            blocks.append(q.transpose(1, 2, 0).reshape(n, -1))
    if not blocks:
        return np.zeros((n, 0))
    return np.concatenate(blocks, axis=1)


def flatten_raw(samples) -> np.ndarray:
    """Channel blocks, time-major within each block: ``(n, L * M)``."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected (n, L, M) samples, got shape {X.shape}")
    return np.ascontiguousarray(X.transpose(0, 2, 1)).reshape(X.shape[0], -1)
