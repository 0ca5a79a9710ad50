from .kernels import KernelBank, kernel_transform
from .power import PowerParams, power_transform_apply, power_transform_fit, yeo_johnson
from .quant import QuantConfig, QuantLengthError, flatten_raw, quant_transform

__all__ = [
    "KernelBank",
    "PowerParams",
    "QuantConfig",
    "QuantLengthError",
    "flatten_raw",
    "kernel_transform",
    "power_transform_apply",
    "power_transform_fit",
    "quant_transform",
    "yeo_johnson",
]
