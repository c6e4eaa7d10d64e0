"""Shared numeric plumbing: parameter vectors, keyed RNG streams, smoothness estimates."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields, replace

import numpy as np

__all__ = [
    "DimensionError",
    "SmoothnessEstimate",
    "as_param",
    "derive_stream",
    "purpose_code",
    "update_smoothness",
    "vec_axpy",
]


class DimensionError(ValueError):
    """Raised when two vectors that must share a length do not."""


def as_param(values, name: str = "w") -> np.ndarray:
    """Return a float64 copy of ``values`` after checking it is a finite 1-d vector."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def vec_axpy(alpha: float, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_stream(seed: int, round: int, client: int, step: int, purpose: str) -> np.random.Generator:
    """Counter-based generator keyed on ``(seed, round, client, step, purpose)``.

    The key goes through ``SeedSequence`` hashing into a Philox key, so any
    differing component gives an unrelated stream and the draws never depend
    on the order in which streams are created.
    """
    key = (int(seed), int(round), int(client), int(step), purpose_code(purpose))
    if any(k < 0 for k in key):
        raise ValueError(f"stream key components must be nonnegative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class SmoothnessEstimate:
    """Running maxima standing in for the unknown smoothness/boundedness constants.

    ``G_f`` is tracked with the Frobenius norm of the inner Jacobian, an
    upper bound on its spectral norm, so checks built on it are conservative.
    """

    G_f: float = 0.0
    G_g: float = 0.0
    L_f: float = 0.0
    L_g: float = 0.0
    L: float = 0.0
    sigma: float = 0.0

    @classmethod
    def tags(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def merge(self, other: "SmoothnessEstimate") -> "SmoothnessEstimate":
        return SmoothnessEstimate(**{t: max(getattr(self, t), getattr(other, t)) for t in self.tags()})


def update_smoothness(est: SmoothnessEstimate, tag: str, value: float) -> SmoothnessEstimate:
    if tag not in SmoothnessEstimate.tags():
        raise KeyError(f"unknown smoothness tag {tag!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"non-finite observation for {tag}: {value}")
    if value < 0:
        raise ValueError(f"negative observation for {tag}: {value}")
    if value <= getattr(est, tag):
        return est
    return replace(est, **{tag: value})
