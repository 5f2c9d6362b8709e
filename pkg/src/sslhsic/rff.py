"""Random Fourier feature maps for the Gaussian and IMQ kernels.

``R(z)_d = sqrt(2/D) cos(omega_d . z + b_d)`` with ``E[R(z).R(z')] = k(z - z')``.

IMQ frequencies are drawn in polar form: a uniform direction times an
amplitude from the tabulated radial density
``p(s) ~ K_{(Q-1)/2}(s) s^{(Q-1)/2}`` (computed once at ``c = 1``; other
``c`` rescale the amplitude to ``s / c``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernels import KernelSpec
from .special import log_bessel_k

GRID_POINTS = 10_000
GRID_START = 1e-12


def grid_upper(feature_dim: int) -> float:
    if feature_dim >= 4096:
        return 200.0
    if feature_dim >= 2048:
        return 150.0
    if feature_dim >= 1024:
        return 120.0
    return 100.0


@dataclass(frozen=True)
class AmplitudePmf:
    grid: np.ndarray
    probs: np.ndarray
    feature_dim: int
    cdf: np.ndarray = field(repr=False, compare=False)

    @property
    def mean(self) -> float:
        return float(np.dot(self.grid, self.probs))

    def sample(self, rng, size):
        """Inverse-CDF draw of grid amplitudes."""
        u = rng.uniform(size=size)
        idx = np.searchsorted(self.cdf, u, side="right")
        return self.grid[np.minimum(idx, len(self.grid) - 1)]


def log_amplitude_density(feature_dim: int, s):
    """Unnormalized log radial density of IMQ(c=1) frequencies."""
    nu = 0.5 * (feature_dim - 1)
    return log_bessel_k(nu, s) + nu * np.log(s)


@functools.lru_cache(maxsize=32)
def imq_amplitude_pmf(feature_dim: int, upper: float | None = None,
                      n_points: int = GRID_POINTS) -> AmplitudePmf:
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    upper = grid_upper(feature_dim) if upper is None else float(upper)
    grid = np.linspace(GRID_START, upper, n_points)
    logp = log_amplitude_density(feature_dim, grid)
    if not np.any(np.isfinite(logp)):
        raise ValueError(f"amplitude density underflows everywhere on [{GRID_START}, {upper}]")
    probs = np.exp(logp - logsumexp(logp))
    probs /= probs.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    for arr in (grid, probs, cdf):
        arr.setflags(write=False)
    return AmplitudePmf(grid=grid, probs=probs, feature_dim=feature_dim, cdf=cdf)


@dataclass(frozen=True)
class RffBasis:
    omegas: np.ndarray   # (D, Q)
    offsets: np.ndarray  # (D,)
    spec: KernelSpec
    seed: object = None

    @property
    def num_features(self) -> int:
        return self.omegas.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.omegas.shape[1]


def _make_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def sample_rff_basis(spec: KernelSpec, feature_dim: int, num_features: int, rng) -> RffBasis:
    """Draw ``num_features`` frequencies and offsets for ``spec``.

    ``rng`` is a ``Generator`` or anything ``np.random.default_rng`` accepts;
    in the latter case it is recorded as the basis seed.
    """
    if num_features < 1 or feature_dim < 1:
        raise ValueError("num_features and feature_dim must be positive")
    if spec.kind == "linear":
        raise ValueError("linear kernel has exact finite features; RFF not applicable")
    gen, seed = _make_rng(rng)
    if spec.kind == "gaussian":
        omegas = gen.standard_normal((num_features, feature_dim)) / spec.param
    else:
        pmf = imq_amplitude_pmf(feature_dim)
        directions = gen.standard_normal((num_features, feature_dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        amplitudes = pmf.sample(gen, num_features) / spec.param
        omegas = directions * amplitudes[:, None]
    offsets = gen.uniform(0.0, 2.0 * np.pi, size=num_features)
    return RffBasis(omegas=omegas, offsets=offsets, spec=spec, seed=seed)


def rff_features(basis: RffBasis, Z):
    """``sqrt(2/D) cos(Z omega^T + b)`` over the last axis of ``Z`` (..., Q)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != basis.feature_dim:
        raise ValueError(f"feature dim {Z.shape[-1]} does not match basis dim {basis.feature_dim}")
    D = basis.num_features
    return np.sqrt(2.0 / D) * np.cos(Z @ basis.omegas.T + basis.offsets)
