"""Translation-invariant and linear kernels on feature vectors.

Gaussian: ``exp(-|a-b|^2 / (2 sigma^2))``.  IMQ: ``c / sqrt(c^2 + |a-b|^2)``.
Both have unit diagonal.  Squared distances are formed as
``|a|^2 + |b|^2 - 2 a.b`` and clamped at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("linear", "gaussian", "imq")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "imq"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "linear":
            if not (math.isfinite(self.param) and self.param > 0):
                raise ValueError(f"{self.kind} kernel needs a positive parameter, got {self.param}")

    @property
    def unit_diagonal(self) -> bool:
        return self.kind != "linear"

    def with_param(self, param: float) -> "KernelSpec":
        return KernelSpec(self.kind, float(param))


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")


def from_sqdist(spec: KernelSpec, sq):
    """Kernel value as a function of squared distance (radial kinds only)."""
    if spec.kind == "gaussian":
        return np.exp(-sq / (2.0 * spec.param**2))
    if spec.kind == "imq":
        c = spec.param
        return c / np.sqrt(c * c + sq)
    raise ValueError("linear kernel is not a function of distance")


def kernel_eval(spec: KernelSpec, z1, z2) -> float:
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 1:
        raise ValueError(f"dimension mismatch: {z1.shape} vs {z2.shape}")
    _check_finite(z1, "z1")
    _check_finite(z2, "z2")
    dot = float(np.dot(z1, z2))
    if spec.kind == "linear":
        return dot
    sq = max(float(np.dot(z1, z1)) + float(np.dot(z2, z2)) - 2.0 * dot, 0.0)
    return float(from_sqdist(spec, sq))


def sq_dists(Z):
    """Pairwise squared distances over the last two axes of ``Z`` (..., n, Q)."""
    Z = np.asarray(Z, dtype=np.float64)
    sq_norm = np.einsum("...i,...i->...", Z, Z)
    inner = Z @ np.swapaxes(Z, -1, -2)
    inner = 0.5 * (inner + np.swapaxes(inner, -1, -2))
    d = sq_norm[..., :, None] + sq_norm[..., None, :] - 2.0 * inner
    np.maximum(d, 0.0, out=d)
    return d


def gram_matrix(spec: KernelSpec, Z):
    """Gram matrix ``K[i, j] = k(Z[i], Z[j])``; leading axes are batched."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim < 2 or Z.shape[-2] < 1:
        raise ValueError(f"expected (..., n, Q) with n >= 1, got shape {Z.shape}")
    _check_finite(Z, "Z")
    if spec.kind == "linear":
        inner = Z @ np.swapaxes(Z, -1, -2)
        return 0.5 * (inner + np.swapaxes(inner, -1, -2))
    K = from_sqdist(spec, sq_dists(Z))
    if spec.unit_diagonal:
        idx = np.arange(Z.shape[-2])
        K[..., idx, idx] = 1.0
    return K


def delta_l(spec: KernelSpec, label_dim: int) -> float:
    """Gap ``l(e_i, e_i) - l(e_i, e_j)`` between same- and cross-label values
    for one-hot labels of dimension ``label_dim``."""
    if label_dim < 2:
        raise ValueError("one-hot labels need at least two classes for a gap")
    # one-hot pairs: |e_i - e_j|^2 = 2, e_i.e_j = 0
    if spec.kind == "linear":
        return 1.0
    return 1.0 - float(from_sqdist(spec, 2.0))
