"""Prioritization-based weighted loss (PBWL) kernel.

Maps the TD errors of one sampled mini-batch to per-sample loss multipliers.
The pipeline runs on the magnitudes of the errors:

    |delta| -> normalize -> positive preferential -> gaussian -> softmax -> compensate

Every stage is a pure function of its inputs.  The resulting multipliers are
constants from the optimizer's point of view; no gradient flows through them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

NormalizationMode = Literal["combined", "mean", "median"]
CompensationNorm = Literal["L1", "L2"]

NORMALIZATION_MODES: tuple[str, ...] = ("combined", "mean", "median")
COMPENSATION_NORMS: tuple[str, ...] = ("L1", "L2")

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelInputError(ValueError):
    """Raised for malformed TD-error batches or mismatched vectors."""


@dataclass(frozen=True)
class KernelConfig:
    """Switches for the ablation axes of the weighting pipeline.

    The default is the full method: combined normalization, softmax on,
    L1 compensation and the positive preferential function enabled.
    """

    normalization_mode: NormalizationMode = "combined"
    softmax_enabled: bool = True
    compensation_norm: CompensationNorm = "L1"
    positive_preferential_enabled: bool = True

    def __post_init__(self) -> None:
        if self.normalization_mode not in NORMALIZATION_MODES:
            raise KernelInputError(
                f"unknown normalization_mode {self.normalization_mode!r}; "
                f"expected one of {NORMALIZATION_MODES}"
            )
        if self.compensation_norm not in COMPENSATION_NORMS:
            raise KernelInputError(
                f"unknown compensation_norm {self.compensation_norm!r}; "
                f"expected one of {COMPENSATION_NORMS}"
            )

    @property
    def is_default(self) -> bool:
        return self == KernelConfig()

    @property
    def label(self) -> str:
        softmax = "on" if self.softmax_enabled else "off"
        label = f"{self.normalization_mode}/softmax-{softmax}/{self.compensation_norm}"
        if not self.positive_preferential_enabled:
            label += "/no-pp"
        return label

    def to_dict(self) -> dict:
        return {
            "normalization_mode": self.normalization_mode,
            "softmax_enabled": self.softmax_enabled,
            "compensation_norm": self.compensation_norm,
            "positive_preferential_enabled": self.positive_preferential_enabled,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelConfig":
        known = {
            "normalization_mode",
            "softmax_enabled",
            "compensation_norm",
            "positive_preferential_enabled",
        }
        unknown = set(data) - known
        if unknown:
            raise KernelInputError(f"unknown kernel config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class WeightVector:
    """Compensated weighting factors plus the intermediate stages."""

    omega: np.ndarray
    delta_n: Optional[np.ndarray] = field(default=None, repr=False)
    delta_m: Optional[np.ndarray] = field(default=None, repr=False)
    delta_g: Optional[np.ndarray] = field(default=None, repr=False)
    p: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.omega)

    def trace(self) -> dict[str, list[float]]:
        out = {}
        for name in ("delta_n", "delta_m", "delta_g", "p", "omega"):
            value = getattr(self, name)
            out[name] = None if value is None else [float(v) for v in value]
        return out

    def to_json(self) -> str:
        return json.dumps(self.trace())


def as_td_batch(values) -> np.ndarray:
    """Validate a TD-error batch and return it as a float64 vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise KernelInputError("TD-error batch is empty")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        i = int(bad[0])
        raise KernelInputError(f"non-finite TD error at index {i}: {arr[i]!r}")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        i = int(bad[0])
        raise KernelInputError(f"non-finite {what} at index {i}: {arr[i]!r}")
    return arr


def combined_normalize(batch, mode: NormalizationMode = "combined") -> np.ndarray:
    """Center |delta| on the batch middle and scale by its population std.

    ``combined`` centers on min(mean, median).  A zero-variance batch maps to
    the zero vector.
    """
    delta = as_td_batch(batch)
    mag = np.abs(delta)
    if mode == "combined":
        center = min(float(np.mean(mag)), float(np.median(mag)))
    elif mode == "mean":
        center = float(np.mean(mag))
    elif mode == "median":
        center = float(np.median(mag))
    else:
        raise KernelInputError(f"unknown normalization mode {mode!r}")
    sigma = float(np.std(mag))
    if sigma == 0.0:
        return np.zeros_like(mag)
    return (mag - center) / sigma


def positive_preferential(delta_n) -> np.ndarray:
    """Shrink positive inputs toward zero: x / (max(x, 0) + 1)."""
    x = _check_finite(np.asarray(delta_n, dtype=np.float64), "normalized TD error")
    return x / (np.maximum(x, 0.0) + 1.0)


def gaussian_density(x, sigma: float) -> np.ndarray:
    """Zero-mean normal density with scale ``sigma`` evaluated at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    z = x / sigma
    return (_INV_SQRT_2PI / sigma) * np.exp(-0.5 * z * z)


def gaussian_raw_priority(delta_m) -> np.ndarray:
    x = _check_finite(np.asarray(delta_m, dtype=np.float64), "modified TD error")
    sigma = float(np.std(x))
    if sigma == 0.0:
        return np.ones_like(x)
    return gaussian_density(x, sigma)


def softmax_weights(delta_g) -> np.ndarray:
    """Softmax over the batch; max is subtracted first (offset invariant)."""
    z = _check_finite(np.asarray(delta_g, dtype=np.float64), "raw priority")
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def _norm(x: np.ndarray, norm: CompensationNorm) -> float:
    if norm == "L1":
        return float(np.sum(np.abs(x)))
    if norm == "L2":
        return float(np.sqrt(np.sum(x * x)))
    raise KernelInputError(f"unknown compensation norm {norm!r}")


def compensate(p, batch, norm: CompensationNorm = "L1") -> np.ndarray:
    """Rescale weighting factors so the weighted errors keep the batch norm.

    Returns ``(||delta|| / ||p * delta||) * p``; all ones if the denominator
    vanishes.
    """
    p = np.asarray(p, dtype=np.float64)
    delta = as_td_batch(batch)
    if p.shape != delta.shape:
        raise KernelInputError(
            f"length mismatch: {p.shape[0] if p.ndim else 0} weights vs {delta.shape[0]} TD errors"
        )
    if np.any(p < 0):
        raise KernelInputError("weighting factors must be non-negative")
    denom = _norm(p * delta, norm)
    if denom == 0.0:
        return np.ones_like(p)
    return (_norm(delta, norm) / denom) * p


def compute_weights(batch, config: Optional[KernelConfig] = None) -> WeightVector:
    """Run the full weighting pipeline on one batch of TD errors."""
    config = config or KernelConfig()
    delta = as_td_batch(batch)
    delta_n = combined_normalize(delta, config.normalization_mode)
    if config.positive_preferential_enabled:
        delta_m = positive_preferential(delta_n)
    else:
        delta_m = delta_n
    delta_g = gaussian_raw_priority(delta_m)
    p = softmax_weights(delta_g) if config.softmax_enabled else delta_g
    omega = compensate(p, delta, config.compensation_norm)
    return WeightVector(omega=omega, delta_n=delta_n, delta_m=delta_m, delta_g=delta_g, p=p)


def weighted_loss(batch, omegas) -> float:
    """Mean of squared weighted TD errors; plain MSE when all weights are one."""
    delta = as_td_batch(batch)
    w = omegas.omega if isinstance(omegas, WeightVector) else np.asarray(omegas, dtype=np.float64)
    if w.shape != delta.shape:
        raise KernelInputError(
            f"length mismatch: {w.shape[0] if w.ndim else 0} weights vs {delta.shape[0]} TD errors"
        )
    wd = w * delta
    return float(np.mean(wd * wd))
