"""SSL-HSIC and InfoNCE losses, their second-order relation, and the
InfoNCE lower-bound machinery.

Everything here works on a single :class:`SslBatchFeatures` (``B x M x Q``)
with the Y kernel gap scaled to ``N``, so ``HSIC(Z, Y)`` reduces to
"mean positive-pair kernel minus mean kernel".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .estimators import (
    SslBatchFeatures,
    canonical_features,
    hsic_biased_iid,
    hsic_zy_biased,
    hsic_zy_rff,
    hsic_zz_biased,
    hsic_zz_rff,
)
from .kernels import KernelSpec, gram_matrix, sq_dists
from .rff import sample_rff_basis

OBJECTIVES = ("ssl_hsic", "infonce")


@dataclass
class LossConfig:
    objective: str = "ssl_hsic"
    gamma: float = 3.0
    kernel: str = "imq"
    kernel_param: float = 1.0
    use_rff: bool = False
    rff_dims: int = 512
    sqrt_eps: float = 1e-12
    kernel_entropy_weight: float = 0.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.sqrt_eps > 0:
            raise ValueError("sqrt_eps must be > 0")
        if self.rff_dims < 1:
            raise ValueError("rff_dims must be >= 1")
        if self.kernel_entropy_weight < 0:
            raise ValueError("kernel_entropy_weight must be >= 0")
        self.kernel_spec  # validates kind/param

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.kernel_param)


@dataclass(frozen=True)
class BoundReport:
    gamma_bound: float
    lhs: float
    rhs: float
    holds: bool


def _seed_tuple(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def draw_rff_pair(spec: KernelSpec, feature_dim: int, num_features: int, seed):
    """Two independent bases seeded ``(*seed, 0)`` and ``(*seed, 1)``."""
    if isinstance(seed, np.random.Generator):
        seed = tuple(int(s) for s in seed.integers(0, 2**63 - 1, size=2))
    base = _seed_tuple(seed)
    return tuple(sample_rff_basis(spec, feature_dim, num_features, base + (stream,))
                 for stream in (0, 1))


def ssl_hsic_loss(batch: SslBatchFeatures, spec_z: KernelSpec, cfg: LossConfig, rng=None):
    """``-HSIC(Z,Y) + gamma * sqrt(max(HSIC(Z,Z), 0) + eps)``.

    With ``cfg.use_rff`` two bases are drawn from ``rng`` (a seed or
    Generator); the first also serves the HSIC(Z,Y) term.
    """
    if cfg.use_rff:
        if rng is None:
            raise ValueError("RFF estimation needs an rng or seed")
        b1, b2 = draw_rff_pair(spec_z, batch.Q, cfg.rff_dims, rng)
        zy = hsic_zy_rff(batch, b1)
        zz = hsic_zz_rff(batch, b1, b2)
    else:
        zy = hsic_zy_biased(batch, spec_z)
        zz = hsic_zz_biased(batch, spec_z) if cfg.gamma else 0.0
    if cfg.gamma == 0:
        return -zy
    return -zy + cfg.gamma * np.sqrt(np.maximum(zz, 0.0) + cfg.sqrt_eps)


def _flat_gram(batch: SslBatchFeatures, spec_z: KernelSpec):
    f = canonical_features(batch.features)
    B, M, Q = f.shape[-3:]
    return gram_matrix(spec_z, f.reshape(f.shape[:-3] + (B * M, Q)))


def _positive_mean(K, B, M):
    """Mean kernel over same-identity pairs with distinct views."""
    blocks = K.reshape(K.shape[:-2] + (B, M, B, M))
    within = np.einsum("...ipil->...", blocks)
    diag = np.einsum("...ii->...", K)
    return (within - diag) / (B * M * (M - 1))


def info_nce_loss(batch: SslBatchFeatures, spec_z: KernelSpec):
    """``-mean_pos k + mean_i log mean_j exp(k_ij)`` over all ``BM`` candidates."""
    K = _flat_gram(batch, spec_z)
    n = K.shape[-1]
    lme = logsumexp(K, axis=-1) - math.log(n)
    return -_positive_mean(K, batch.B, batch.M) + lme.mean(axis=-1)


def variance_penalty(batch: SslBatchFeatures, spec_z: KernelSpec):
    """``mean_i Var_j k(z_i, z_j)`` (population variance over all ``BM`` points)."""
    K = _flat_gram(batch, spec_z)
    return K.var(axis=-1).mean(axis=-1)


def taylor_residual(batch: SslBatchFeatures, spec_z: KernelSpec):
    """InfoNCE minus its second-order HSIC + variance approximation."""
    return info_nce_loss(batch, spec_z) - (
        -hsic_zy_biased(batch, spec_z) + 0.5 * variance_penalty(batch, spec_z))


def third_moment(batch: SslBatchFeatures, spec_z: KernelSpec):
    """``mean_i E_j |k_ij - mu_i|^3``, the size of the first dropped Taylor term."""
    K = _flat_gram(batch, spec_z)
    dev = K - K.mean(axis=-1, keepdims=True)
    return np.mean(np.abs(dev) ** 3, axis=(-2, -1))


def gamma_for_bound(k_max: float) -> float:
    """Largest gamma for which ``exp(x) >= 1 + x + gamma x^2`` covers
    ``x >= min(-2, -2 k_max)``: ``gamma = -(1 + x) / x^2``."""
    if not k_max > 0:
        raise ValueError("k_max must be positive")
    x = min(-2.0, -2.0 * k_max)
    return -(1.0 + x) / (x * x)


def exp_lemma_lower_limit(alpha: float) -> float:
    return -(1.0 + math.sqrt(1.0 - 4.0 * alpha)) / (2.0 * alpha)


def check_exp_lemma(alpha: float, x_grid=None, slack: float = 1e-12) -> bool:
    """True iff ``exp(x) >= 1 + x + alpha x^2`` at every grid point."""
    if not (0 < alpha <= 0.25):
        raise ValueError("alpha must lie in (0, 1/4]")
    lo = exp_lemma_lower_limit(alpha)
    if x_grid is None:
        x_grid = np.linspace(lo, 10.0, 10_000)
    x = np.asarray(x_grid, dtype=np.float64)
    if np.any(x < lo - 1e-12):
        raise ValueError(f"grid extends below the lemma's range x >= {lo}")
    return bool(np.all(np.exp(x) >= 1.0 + x + alpha * x * x - slack))


def hsic_zz_plugin(batch: SslBatchFeatures, spec_z: KernelSpec):
    """HSIC(Z,Z) of the batch's empirical distribution, ``Tr(KHKH) / n^2``."""
    K = _flat_gram(batch, spec_z)
    n = K.shape[-1]
    return hsic_biased_iid(K, K) * (n - 1) ** 2 / n**2


def check_infonce_bound(batch: SslBatchFeatures, spec_z: KernelSpec, k_max: float = 1.0):
    """Evaluate ``-HSIC(Z,Y) + gamma HSIC(Z,Z) <= InfoNCE - E (gamma V)^2 / (1 + gamma V)``
    on the batch's empirical distribution, with ``gamma = gamma_for_bound(k_max)``."""
    gamma = gamma_for_bound(k_max)
    K = _flat_gram(batch, spec_z)
    if np.max(np.abs(K)) > k_max + 1e-12:
        raise ValueError(f"kernel values exceed k_max={k_max}")
    var = K.var(axis=-1)
    gv = gamma * var
    lhs = -hsic_zy_biased(batch, spec_z) + gamma * hsic_zz_plugin(batch, spec_z)
    rhs = info_nce_loss(batch, spec_z) - np.mean(gv * gv / (1.0 + gv), axis=-1)
    return BoundReport(gamma_bound=gamma, lhs=float(lhs), rhs=float(rhs),
                       holds=bool(lhs <= rhs + 1e-9))


def _pair_sqdists(batch_or_array):
    f = batch_or_array.features if isinstance(batch_or_array, SslBatchFeatures) else batch_or_array
    f = np.asarray(f, dtype=np.float64)
    Z = f.reshape(-1, f.shape[-1])
    s = sq_dists(Z)
    off = ~np.eye(len(Z), dtype=bool)
    return s[off]


def kernel_entropy_objective(batch, spec_z: KernelSpec) -> float:
    """``mean_{i != j} log |dk/ds|^2`` at ``s = |z_i - z_j|^2``."""
    s = _pair_sqdists(batch)
    if s.size == 0 or np.all(s == 0):
        raise ValueError("kernel entropy needs at least two distinct feature rows")
    p = spec_z.param
    if spec_z.kind == "gaussian":
        # k' = -k / (2 sigma^2)
        log_abs = -s / (2 * p * p) - math.log(2 * p * p)
    elif spec_z.kind == "imq":
        # k' = -c / (2 (c^2 + s)^{3/2})
        log_abs = math.log(p / 2.0) - 1.5 * np.log(p * p + s)
    else:
        raise ValueError("kernel entropy is defined for gaussian and imq kernels")
    return float(np.mean(2.0 * log_abs))


def kernel_entropy_grad(batch, spec_z: KernelSpec) -> float:
    """Derivative of :func:`kernel_entropy_objective` w.r.t. the kernel parameter."""
    s = _pair_sqdists(batch)
    if s.size == 0 or np.all(s == 0):
        raise ValueError("kernel entropy needs at least two distinct feature rows")
    p = spec_z.param
    if spec_z.kind == "gaussian":
        return float(np.mean(2.0 * s / p**3 - 4.0 / p))
    if spec_z.kind == "imq":
        return float(np.mean(2.0 / p - 6.0 * p / (p * p + s)))
    raise ValueError("kernel entropy is defined for gaussian and imq kernels")
