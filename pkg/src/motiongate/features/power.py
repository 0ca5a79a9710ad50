"""Yeo-Johnson power transform with per-column standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAMBDA_BOUNDS = (-5.0, 5.0)
LAMBDA_TOL = 1e-4
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PowerParams:
    lambdas: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    fitted: np.ndarray  # False where the column had zero variance

    _KEYS = ("lambdas", "means", "scales", "fitted")

    def to_arrays(self, prefix="power.") -> dict:
        return {prefix + k: getattr(self, k) for k in self._KEYS}

    @classmethod
    def from_arrays(cls, arrays, prefix="power.") -> "PowerParams":
        return cls(*(np.asarray(arrays[prefix + k]) for k in cls._KEYS))


def yeo_johnson(x, lam):
    """Elementwise Yeo-Johnson; ``lam`` broadcasts against ``x``."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), x.shape)
    out = np.empty_like(x)
    pos = x >= 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lp, xp = lam[pos], x[pos]
        near0 = np.abs(lp) < _EPS
        out[pos] = np.where(near0, np.log1p(xp), np.expm1(lp * np.log1p(xp)) / np.where(near0, 1.0, lp))
        ln, xn = lam[~pos], x[~pos]
        near2 = np.abs(ln - 2.0) < _EPS
        out[~pos] = np.where(near2, -np.log1p(-xn),
                             -np.expm1((2.0 - ln) * np.log1p(-xn)) / np.where(near2, 1.0, 2.0 - ln))
    return out


def yeo_johnson_loglik(X, lambdas):
    """Profile log-likelihood per column of ``X`` at ``lambdas``."""
    n = X.shape[0]
    y = yeo_johnson(X, lambdas[None, :])
    var = y.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = -0.5 * n * np.log(var) + (lambdas - 1.0) * (np.sign(X) * np.log1p(np.abs(X))).sum(axis=0)
    return np.where(np.isfinite(ll), ll, -np.inf)


def fit_lambdas(X, bounds=LAMBDA_BOUNDS, tol=LAMBDA_TOL) -> np.ndarray:
    """Maximum-likelihood lambda per column by golden-section search."""
    X = np.asarray(X, dtype=np.float64)
    k = X.shape[1]
    a = np.full(k, bounds[0])
    b = np.full(k, bounds[1])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = yeo_johnson_loglik(X, c)
    fd = yeo_johnson_loglik(X, d)
    while np.max(b - a) > tol:
        left = fc >= fd  # maximum lies in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - _GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + _GOLDEN * (b - a))
        c, d = new_c, new_d
        f_new = yeo_johnson_loglik(X, np.where(left, c, d))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
    return (a + b) / 2.0


def power_transform_fit(X) -> PowerParams:
    """Fit lambdas and standardization on training rows only."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got {X.shape}")
    fitted = X.max(axis=0) > X.min(axis=0)
    lambdas = np.ones(X.shape[1])
    if fitted.any():
        lambdas[fitted] = fit_lambdas(X[:, fitted])
    Y = yeo_johnson(X, lambdas[None, :])
    means = np.where(fitted, Y.mean(axis=0), Y[0])  # constant columns centre exactly to 0
    scales = Y.std(axis=0)
    scales = np.where(fitted & (scales > 0) & np.isfinite(scales), scales, 1.0)
    return PowerParams(lambdas, means, scales, fitted)


def power_transform_apply(X, params: PowerParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != len(params.lambdas):
        raise ValueError(f"expected {len(params.lambdas)} columns, got {X.shape[-1]}")
    return (yeo_johnson(X, params.lambdas[None, :]) - params.means) / params.scales
