"""HSIC estimators under the self-supervised sampling scheme.

A batch holds ``B`` identities (drawn without replacement from ``N``) with
``M`` views each; features are an array of shape ``(..., B, M, Q)``.  Leading
axes are treated as independent batches, which lets Monte-Carlo checks
evaluate thousands of batches in one call.

All estimators first put the batch in a canonical order (views sorted
lexicographically within each identity, then identities sorted by their view
blocks), so permuting identities or views gives bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, gram_matrix
from .rff import RffBasis, rff_features

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class SslBatchFeatures:
    features: np.ndarray
    n_total: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim < 3:
            raise ValueError(f"features must have shape (..., B, M, Q), got {f.shape}")
        B, M = f.shape[-3], f.shape[-2]
        if B < 2 or M < 2:
            raise ValueError(f"need B >= 2 and M >= 2, got B={B}, M={M}")
        if self.n_total < B:
            raise ValueError(f"dataset size N={self.n_total} smaller than batch B={B}")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        norms = np.linalg.norm(f, axis=-1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("feature rows must have unit l2 norm")

    @property
    def B(self) -> int:
        return self.features.shape[-3]

    @property
    def M(self) -> int:
        return self.features.shape[-2]

    @property
    def Q(self) -> int:
        return self.features.shape[-1]

    def flat(self):
        """Features as (..., B*M, Q), identity-major."""
        f = self.features
        return f.reshape(f.shape[:-3] + (self.B * self.M, self.Q))


def _take(a, idx, axis):
    return np.take_along_axis(a, idx, axis=axis)


def _lex_order(keys):
    """``np.lexsort`` order over the last axis with ``keys[..., 0]`` primary.

    Sorting on the leading key alone gives the same order when it has no
    ties, which is the common case and much cheaper than a full lexsort.
    """
    order = np.argsort(keys[..., 0], axis=-1, kind="stable")
    lead = np.take_along_axis(keys[..., 0], order, axis=-1)
    if np.any(np.diff(lead, axis=-1) == 0):
        order = np.lexsort(np.moveaxis(keys[..., ::-1], -1, 0), axis=-1)
    return order


def canonical_features(features):
    """Reorder views within identities, then identities, lexicographically."""
    f = np.asarray(features, dtype=np.float64)
    order = _lex_order(f)                                       # (..., B, M)
    f = _take(f, order[..., None], axis=-2)
    B, M, Q = f.shape[-3:]
    blocks = f.reshape(f.shape[:-3] + (B, M * Q))
    order = _lex_order(blocks)                                  # (..., B)
    return _take(f, order[..., None, None], axis=-3)


def _canonical(batch: SslBatchFeatures):
    return canonical_features(batch.features)


def _center(K):
    """``H K H`` without forming ``H``."""
    row = K.mean(axis=-1, keepdims=True)
    col = K.mean(axis=-2, keepdims=True)
    return K - row - col + K.mean(axis=(-2, -1), keepdims=True)


def hsic_biased_iid(K, L):
    """``Tr(K H L H) / (n-1)^2`` for Gram matrices of shape (..., n, n)."""
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.shape != L.shape or K.shape[-1] != K.shape[-2]:
        raise ValueError(f"Gram shape mismatch: {K.shape} vs {L.shape}")
    n = K.shape[-1]
    if n < 2:
        raise ValueError("need at least two samples")
    Kc = _center(K)
    Lc = Kc if L is K else _center(L)
    return np.sum(Kc * Lc, axis=(-2, -1)) / (n - 1) ** 2


def _positive_and_total_sums(batch: SslBatchFeatures, spec_z: KernelSpec):
    f = _canonical(batch)
    B, M, Q = f.shape[-3:]
    K = gram_matrix(spec_z, f.reshape(f.shape[:-3] + (B * M, Q)))
    blocks = K.reshape(K.shape[:-2] + (B, M, B, M))
    s_within = np.einsum("...ipil->...", blocks)
    s_all = np.sum(K, axis=(-2, -1))
    return s_within, s_all


def hsic_zy_biased(batch: SslBatchFeatures, spec_z: KernelSpec):
    """``(1/(BM(M-1))) sum_ipl k - (1/(BM)^2) sum_ijpl k - 1/(M-1)``.

    The ``ipl`` sum includes ``p = l``.  Assumes the Y kernel gap equals ``N``.
    """
    B, M = batch.B, batch.M
    s_within, s_all = _positive_and_total_sums(batch, spec_z)
    return s_within / (B * M * (M - 1)) - s_all / (B * M) ** 2 - 1.0 / (M - 1)


def hsic_zy_unbiased(batch: SslBatchFeatures, spec_z: KernelSpec):
    """Unbiased HSIC(Z, Y) for identities sampled without replacement.

    Requires a unit-diagonal Z kernel and the Y kernel gap scaled to ``N``.
    """
    if not spec_z.unit_diagonal:
        raise ValueError("unbiased HSIC(Z,Y) requires k(z,z) = 1")
    B, M, N = batch.B, batch.M, batch.n_total
    s_within, s_all = _positive_and_total_sums(batch, spec_z)
    a = M / (M - 1) + (N - 1) / (N * (B - 1)) - M / (N * (M - 1))
    b = B * (N - 1) / ((B - 1) * N)
    c = (N - 1) / (N * (M - 1))
    return a * s_within / (B * M * M) - b * s_all / (B * M) ** 2 - c


def hsic_zz_biased(batch: SslBatchFeatures, spec_z: KernelSpec):
    """``Tr(KHKH) / (BM-1)^2`` on the flattened BM x BM Gram matrix."""
    f = _canonical(batch)
    B, M, Q = f.shape[-3:]
    K = gram_matrix(spec_z, f.reshape(f.shape[:-3] + (B * M, Q)))
    return hsic_biased_iid(K, K)


def _check_basis(basis: RffBasis, Q: int):
    if basis.feature_dim != Q:
        raise ValueError(f"basis dim {basis.feature_dim} does not match feature dim {Q}")


def hsic_zy_rff(batch: SslBatchFeatures, basis: RffBasis):
    """RFF form of :func:`hsic_zy_biased`, linear in ``B*M``."""
    _check_basis(basis, batch.Q)
    B, M = batch.B, batch.M
    R = rff_features(basis, _canonical(batch))          # (..., B, M, D)
    per_identity = R.sum(axis=-2)                        # (..., B, D)
    total = per_identity.sum(axis=-2)                    # (..., D)
    s_within = np.sum(per_identity**2, axis=(-2, -1))
    s_all = np.sum(total**2, axis=-1)
    return s_within / (B * M * (M - 1)) - s_all / (B * M) ** 2 - 1.0 / (M - 1)


def hsic_zz_rff(batch: SslBatchFeatures, basis1: RffBasis, basis2: RffBasis):
    """``|R^T H R~|_F^2 / (BM-1)^2`` with independently drawn bases."""
    _check_basis(basis1, batch.Q)
    _check_basis(basis2, batch.Q)
    if basis1 is basis2 or (basis1.seed is not None and basis1.seed == basis2.seed) or (
        basis1.omegas.shape == basis2.omegas.shape
        and np.array_equal(basis1.omegas, basis2.omegas)
        and np.array_equal(basis1.offsets, basis2.offsets)
    ):
        raise ValueError("HSIC(Z,Z) needs two independently sampled bases")
    n = batch.B * batch.M
    Z = canonical_features(batch.features)
    Z = Z.reshape(Z.shape[:-3] + (n, batch.Q))
    R1 = rff_features(basis1, Z)
    R2 = rff_features(basis2, Z)
    R1 = R1 - R1.mean(axis=-2, keepdims=True)
    R2 = R2 - R2.mean(axis=-2, keepdims=True)
    if basis1.num_features <= n:
        C = np.swapaxes(R1, -1, -2) @ R2
        return np.sum(C * C, axis=(-2, -1)) / (n - 1) ** 2
    # |R1^T R2|_F^2 = <R1 R1^T, R2 R2^T>_F, cheaper when D > n
    G1 = R1 @ np.swapaxes(R1, -1, -2)
    G2 = R2 @ np.swapaxes(R2, -1, -2)
    return np.sum(G1 * G2, axis=(-2, -1)) / (n - 1) ** 2


# ---------------------------------------------------------------------------
# finite worlds: exact population quantities by enumeration


@dataclass(frozen=True)
class FiniteWorld:
    """Each identity ``i`` emits view atom ``a`` with probability ``probs[i, a]``."""

    atoms: np.ndarray   # (A, Q)
    probs: np.ndarray   # (N, A)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        if atoms.ndim != 2 or probs.ndim != 2 or probs.shape[1] != atoms.shape[0]:
            raise ValueError("atoms must be (A, Q) and probs (N, A)")
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("each identity's view probabilities must be nonnegative and sum to 1")

    @property
    def n_identities(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def from_view_lists(cls, views, weights=None):
        """Build from per-identity lists of view vectors (optionally weighted)."""
        atoms, rows = [], []
        for i, vs in enumerate(views):
            w = np.full(len(vs), 1.0 / len(vs)) if weights is None else np.asarray(weights[i], float)
            rows.append((len(atoms), w))
            atoms.extend(np.asarray(v, dtype=np.float64) for v in vs)
        probs = np.zeros((len(views), len(atoms)))
        for i, (start, w) in enumerate(rows):
            probs[i, start:start + len(w)] = w
        return cls(np.stack(atoms), probs)

    def sample_indices(self, B, M, rng, size=None):
        """Atom indices of shape (size, B, M): identities without replacement,
        views i.i.d. per identity."""
        N = self.n_identities
        if B > N:
            raise ValueError(f"batch of {B} identities from a world of {N}")
        S = 1 if size is None else int(size)
        keys = rng.random((S, N))
        ids = np.argpartition(keys, B - 1, axis=1)[:, :B] if B < N else np.argsort(keys, axis=1)
        cdf = np.cumsum(self.probs, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((S, B, M))
        rows = cdf[ids]                                        # (S, B, A)
        atom_idx = (u[..., None] >= rows[:, :, None, :]).sum(axis=-1)
        atom_idx = np.minimum(atom_idx, self.atoms.shape[0] - 1)
        return atom_idx if size is not None else atom_idx[0]

    def sample_features(self, B, M, rng, size=None):
        return self.atoms[self.sample_indices(B, M, rng, size)]


def population_hsic_zy(world: FiniteWorld, spec_z: KernelSpec, delta_l=None, N=None):
    """``(delta_l / N) (E_pos k - E k)`` by exact enumeration; defaults ``delta_l = N``."""
    N = world.n_identities if N is None else N
    delta_l = float(N) if delta_l is None else float(delta_l)
    K = gram_matrix(spec_z, world.atoms)
    P = world.probs
    e_pos = np.mean(np.einsum("ia,ab,ib->i", P, K, P))
    p = P.mean(axis=0)
    e_all = p @ K @ p
    return (delta_l / N) * (e_pos - e_all)


def population_hsic_zz(world: FiniteWorld, spec_z: KernelSpec):
    """``E k^2 - 2 E_Z (E_Z' k)^2 + (E k)^2`` over the world's marginal view law."""
    K = gram_matrix(spec_z, world.atoms)
    p = world.probs.mean(axis=0)
    Kp = K @ p
    return p @ (K * K) @ p - 2.0 * p @ (Kp * Kp) + (p @ Kp) ** 2
