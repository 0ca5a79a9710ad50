"""Data-independent sample -> feature mappings shared by detectors and classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelBank, kernel_transform
from .quant import QuantConfig, flatten_raw, quant_transform

FEATURIZER_KINDS = ("series", "raw", "quant", "kernel")


@dataclass(frozen=True, eq=False)
class Featurizer:
    """Maps ``(n, L, M)`` samples to model inputs.

    ``series`` passes the samples through untouched (for DTW).
    """

    kind: str
    input_shape: tuple[int, int]
    quant: QuantConfig | None = None
    bank: KernelBank | None = None

    def __post_init__(self):
        if self.kind not in FEATURIZER_KINDS:
            raise ValueError(f"unknown featurizer {self.kind!r}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    @classmethod
    def build(cls, kind, input_shape, *, quant: QuantConfig | None = None, n_kernels=1024, seed=None):
        L, M = input_shape
        if kind == "quant":
            return cls(kind, input_shape, quant=quant or QuantConfig())
        if kind == "kernel":
            return cls(kind, input_shape, bank=KernelBank.generate(n_kernels, L, M, seed=seed))
        return cls(kind, input_shape)

    def check(self, X, allow_length_change=False) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3:
            raise ValueError(f"expected (n, L, M) samples, got {X.shape}")
        L, M = self.input_shape
        if X.shape[2] != M or (X.shape[1] != L and not allow_length_change):
            raise ValueError(f"sample shape {X.shape[1:]} does not match fitted shape {(L, M)}")
        return X

    def transform(self, samples) -> np.ndarray:
        X = self.check(samples, allow_length_change=self.kind == "series")
        if self.kind == "series":
            return X
        if self.kind == "raw":
            return flatten_raw(X)
        if self.kind == "quant":
            return quant_transform(X, self.quant)
        return kernel_transform(X, self.bank)

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "quant": self.quant.to_dict() if self.quant else None,
        }

    def arrays(self) -> dict:
        return self.bank.to_arrays() if self.bank is not None else {}

    @classmethod
    def restore(cls, header: dict, arrays: dict) -> "Featurizer":
        quant = header.get("quant")
        bank = KernelBank.from_arrays(arrays) if header["kind"] == "kernel" else None
        return cls(
            header["kind"],
            tuple(header["input_shape"]),
            quant=QuantConfig(quant["depth"], quant["divisor"], tuple(quant["representations"])) if quant else None,
            bank=bank,
        )
