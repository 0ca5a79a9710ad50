"""Random convolutional kernel features (PPV and max per kernel)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

CANDIDATE_LENGTHS = (7, 9, 11)


@dataclass(frozen=True, eq=False)
class KernelBank:
    """A fixed set of dilated random kernels over ``n_channels`` inputs.

    Kernel ``k`` owns ``channel_counts[k]`` input channels; its weights are
    stored flat, channel-major, in ``weights``.
    """

    lengths: np.ndarray
    biases: np.ndarray
    dilations: np.ndarray
    paddings: np.ndarray
    channel_counts: np.ndarray
    channels: np.ndarray
    weights: np.ndarray
    input_length: int
    n_channels: int
    seed: int | None = None

    def __post_init__(self):
        for name, dtype in (("lengths", np.int64), ("biases", np.float64), ("dilations", np.int64),
                            ("paddings", np.int64), ("channel_counts", np.int64),
                            ("channels", np.int64), ("weights", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if int((self.lengths * self.channel_counts).sum()) != len(self.weights):
            raise ValueError("weight count does not match kernel lengths and channel counts")
        if int(self.channel_counts.sum()) != len(self.channels):
            raise ValueError("channel assignment does not match channel counts")

    @property
    def n_kernels(self) -> int:
        return len(self.lengths)

    @property
    def n_features(self) -> int:
        return 2 * self.n_kernels

    @classmethod
    def generate(cls, n_kernels: int, input_length: int, n_channels: int = 1, seed=None) -> "KernelBank":
        """Draw a bank sized for series of ``input_length`` samples."""
        rng = np.random.default_rng(seed)
        per_kernel = max(1, int(np.sqrt(n_channels)))
        lengths = np.empty(n_kernels, dtype=np.int64)
        biases = np.empty(n_kernels)
        dilations = np.empty(n_kernels, dtype=np.int64)
        paddings = np.empty(n_kernels, dtype=np.int64)
        channels, weights = [], []
        for k in range(n_kernels):
            length = int(rng.choice(CANDIDATE_LENGTHS))
            chans = np.sort(rng.choice(n_channels, per_kernel, replace=False))
            w = rng.normal(0.0, 1.0, size=(per_kernel, length))
            w -= w.mean(axis=1, keepdims=True)
            bias = rng.uniform(-1.0, 1.0)
            upper = np.log2(max(input_length - 1, 1) / (length - 1))
            dilation = int(2 ** rng.uniform(0, max(upper, 0.0)))
            pad = ((length - 1) * dilation) // 2 if rng.integers(2) == 1 else 0
            if (length - 1) * dilation + 1 > input_length + 2 * pad:
                pad = ((length - 1) * dilation) // 2
            lengths[k], biases[k], dilations[k], paddings[k] = length, bias, dilation, pad
            channels.append(chans)
            weights.append(w.ravel())
        return cls(
            lengths=lengths,
            biases=biases,
            dilations=dilations,
            paddings=paddings,
            channel_counts=np.full(n_kernels, per_kernel, dtype=np.int64),
            channels=np.concatenate(channels) if channels else np.empty(0, np.int64),
            weights=np.concatenate(weights) if weights else np.empty(0),
            input_length=input_length,
            n_channels=n_channels,
            seed=seed,
        )

    def to_arrays(self, prefix="bank.") -> dict:
        out = {prefix + k: getattr(self, k) for k in
               ("lengths", "biases", "dilations", "paddings", "channel_counts", "channels", "weights")}
        out[prefix + "shape"] = np.array([self.input_length, self.n_channels], dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix="bank.") -> "KernelBank":
        L, M = (int(v) for v in arrays[prefix + "shape"])
        return cls(**{k: arrays[prefix + k] for k in
                      ("lengths", "biases", "dilations", "paddings", "channel_counts", "channels", "weights")},
                   input_length=L, n_channels=M)


@njit(cache=True)
def _apply_kernel(Xp, offset, n_in, weights, channels, length, bias, dilation, padding):
    # Xp is (M, n_in + 2 * offset) with zeros outside the series, offset >= padding
    n_ch = len(channels)
    out_len = n_in + 2 * padding - (length - 1) * dilation
    ppv = 0
    mx = -np.inf
    start = offset - padding
    for i in range(out_len):
        s = bias
        for c in range(n_ch):
            row = channels[c]
            base = c * length
            index = start + i
            for j in range(length):
                s += weights[base + j] * Xp[row, index]
                index += dilation
        if s > mx:
            mx = s
        if s > 0:
            ppv += 1
    return ppv / out_len, mx


@njit(cache=True, parallel=True)
def _apply_kernels(X, lengths, biases, dilations, paddings, channel_counts, channels, weights):
    n, M, n_in = X.shape
    K = len(lengths)
    w_off = np.zeros(K + 1, dtype=np.int64)
    c_off = np.zeros(K + 1, dtype=np.int64)
    offset = 0
    for k in range(K):
        w_off[k + 1] = w_off[k] + lengths[k] * channel_counts[k]
        c_off[k + 1] = c_off[k] + channel_counts[k]
        if paddings[k] > offset:
            offset = paddings[k]
    out = np.zeros((n, 2 * K))
    for i in prange(n):
        Xp = np.zeros((M, n_in + 2 * offset))
        Xp[:, offset:offset + n_in] = X[i]
        for k in range(K):
            ppv, mx = _apply_kernel(
                Xp, offset, n_in, weights[w_off[k]:w_off[k + 1]], channels[c_off[k]:c_off[k + 1]],
                lengths[k], biases[k], dilations[k], paddings[k],
            )
            out[i, 2 * k] = ppv
            out[i, 2 * k + 1] = mx
    return out


def kernel_transform(samples, bank: KernelBank) -> np.ndarray:
    """PPV and max features, ``(n, 2 * n_kernels)``.

    ``samples`` is ``(n, L, M)`` (time by channel) or ``(n, L)`` for
    univariate input.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected (n, L, M) samples, got shape {X.shape}")
    if X.shape[2] != bank.n_channels:
        raise ValueError(f"bank expects {bank.n_channels} channels, samples have {X.shape[2]}")
    if X.shape[1] != bank.input_length:
        raise ValueError(f"bank expects length {bank.input_length}, samples have {X.shape[1]}")
    X = np.ascontiguousarray(X.transpose(0, 2, 1))
    return _apply_kernels(X, bank.lengths, bank.biases, bank.dilations, bank.paddings,
                          bank.channel_counts, bank.channels, bank.weights)
