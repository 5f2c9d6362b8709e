"""Synthetic augmented datasets, SSL batch sampling and evaluation diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import FiniteWorld, hsic_biased_iid, population_hsic_zy
from .kernels import KernelSpec, gram_matrix


@dataclass(frozen=True)
class WorldConfig:
    n_classes: int = 10
    identities_per_class: int = 32
    input_dim: int = 32
    noise: float = 0.5
    center_scale: float = 1.0
    anchor_scale: float = 1.0
    scale_jitter: float = 0.0
    flip_dims: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "identities_per_class", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_classes * self.identities_per_class < 2:
            raise ValueError("a world needs at least two identities")
        if self.noise < 0 or self.center_scale < 0 or self.anchor_scale < 0:
            raise ValueError("scales must be nonnegative")
        if not 0 <= self.scale_jitter < 1:
            raise ValueError("scale_jitter must lie in [0, 1)")
        if not 0 <= self.flip_dims <= self.input_dim:
            raise ValueError("flip_dims must lie in [0, input_dim]")


@dataclass(frozen=True)
class SyntheticWorld:
    """Identities are anchors around class centers; a view is
    ``(anchor + noise * eps) * scale`` with optional sign flips on the first
    ``flip_dims`` coordinates."""

    config: WorldConfig
    anchors: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def n_identities(self) -> int:
        return len(self.anchors)

    @property
    def input_dim(self) -> int:
        return self.anchors.shape[1]

    def views(self, identity_indices, M, rng):
        cfg = self.config
        base = self.anchors[identity_indices]                       # (B, d)
        x = base[:, None, :] + cfg.noise * rng.standard_normal((len(base), M, self.input_dim))
        if cfg.scale_jitter:
            x *= 1.0 + cfg.scale_jitter * rng.uniform(-1, 1, size=(len(base), M, 1))
        if cfg.flip_dims:
            signs = rng.choice([-1.0, 1.0], size=(len(base), M, cfg.flip_dims))
            x[..., :cfg.flip_dims] *= signs
        return x


@dataclass(frozen=True)
class ViewBatch:
    inputs: np.ndarray            # (B, M, input_dim)
    identity_indices: np.ndarray  # (B,)

    def __post_init__(self):
        idx = np.asarray(self.identity_indices)
        if len(np.unique(idx)) != len(idx):
            raise ValueError("identity indices in a batch must be distinct")
        if self.inputs.ndim != 3 or self.inputs.shape[0] != len(idx):
            raise ValueError("inputs must be (B, M, input_dim) matching the identities")


def make_world(n_classes=10, identities_per_class=32, input_dim=32, noise=0.5, seed=0,
               **kwargs) -> SyntheticWorld:
    cfg = WorldConfig(n_classes=n_classes, identities_per_class=identities_per_class,
                      input_dim=input_dim, noise=noise, seed=seed, **kwargs)
    return world_from_config(cfg)


def world_from_config(cfg: WorldConfig) -> SyntheticWorld:
    rng = np.random.default_rng(cfg.seed)
    centers = cfg.center_scale * rng.standard_normal((cfg.n_classes, cfg.input_dim))
    labels = np.repeat(np.arange(cfg.n_classes), cfg.identities_per_class)
    anchors = centers[labels] + cfg.anchor_scale * rng.standard_normal((len(labels), cfg.input_dim))
    anchors.setflags(write=False)
    labels.setflags(write=False)
    return SyntheticWorld(cfg, anchors, labels)


def world_to_json(world: SyntheticWorld) -> str:
    """Debug snapshot; the world is regenerable from ``config`` alone."""
    return json.dumps({
        "config": asdict(world.config),
        "anchors": world.anchors.tolist(),
        "labels": world.labels.tolist(),
    }, sort_keys=True)


def world_from_json(text: str) -> SyntheticWorld:
    data = json.loads(text)
    world = world_from_config(WorldConfig(**data["config"]))
    if not np.array_equal(world.anchors, np.asarray(data["anchors"])):
        raise ValueError("snapshot anchors do not match its generator config")
    return world


def sample_batch(world: SyntheticWorld, B: int, M: int, rng) -> ViewBatch:
    """``B`` distinct identities uniformly without replacement, ``M`` views each."""
    N = world.n_identities
    if B > N:
        raise ValueError(f"batch of {B} identities from a world of {N}")
    if B < 1 or M < 1:
        raise ValueError("B and M must be positive")
    idx = rng.choice(N, size=B, replace=False)
    return ViewBatch(world.views(idx, M, rng), idx)


# ---------------------------------------------------------------------------
# linear probe

PROBE_ITERS = 500
PROBE_LR = 0.1
PROBE_L2 = 1e-4


def linear_probe(features, labels, split_seed=0, train_frac=0.8) -> float:
    """Held-out accuracy of a multinomial logistic regression trained by
    full-batch gradient descent on standardized features."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes, y = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two classes")
    n = len(X)
    perm = np.random.default_rng(split_seed).permutation(n)
    n_train = int(round(train_frac * n))
    tr, te = perm[:n_train], perm[n_train:]
    mu = X[tr].mean(axis=0)
    sd = X[tr].std(axis=0)
    sd[sd < 1e-12] = 1.0
    Xs = (X - mu) / sd
    Xtr, ytr = Xs[tr], y[tr]
    C = len(classes)
    W = np.zeros((X.shape[1], C))
    b = np.zeros(C)
    onehot = np.eye(C)[ytr]
    for _ in range(PROBE_ITERS):
        logits = Xtr @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(tr)
        W -= PROBE_LR * (Xtr.T @ g + PROBE_L2 * W)
        b -= PROBE_LR * g.sum(axis=0)
    pred = np.argmax(Xs[te] @ W + b, axis=1)
    return float(np.mean(pred == y[te]))


def numerical_rank(features, tol=1e-6) -> int:
    """Number of covariance eigenvalues above ``tol`` times the largest."""
    X = np.asarray(features, dtype=np.float64)
    X = X - X.mean(axis=0)
    ev = np.linalg.eigvalsh(X.T @ X / len(X))
    if ev[-1] <= 0:
        return 0
    return int(np.sum(ev > tol * ev[-1]))


# ---------------------------------------------------------------------------
# identities


def mmd_identity_check(world: FiniteWorld, spec_z: KernelSpec, delta_l=None):
    """``(1/(2N^2)) sum_ij MMD^2(i, j)`` against ``(N / delta_l) HSIC(Z, Y)``.

    MMD uses mean embeddings of each identity's view law (V-statistic form).
    """
    N = world.n_identities
    delta_l = float(N) if delta_l is None else float(delta_l)
    K = gram_matrix(spec_z, world.atoms)
    P = world.probs
    self_inner = [P[i] @ K @ P[i] for i in range(N)]
    total = 0.0
    for i in range(N):
        for j in range(N):
            total += self_inner[i] + self_inner[j] - 2.0 * (P[i] @ K @ P[j])
    lhs = total / (2.0 * N * N)
    rhs = (N / delta_l) * population_hsic_zy(world, spec_z, delta_l=delta_l, N=N)
    return lhs, rhs, abs(lhs - rhs)


def clustering_identity_check(features, labels=None, center_tol=1e-6):
    """Both sides of the linear-kernel clustering identity

    ``-(1/M) Tr(Y^T Z^T Z Y) + Tr(Z^T Z) - NM = sum_ip |z_i^p - zbar_i|^2 - NM``

    for centered unit-norm features of shape (B, M, Q).  ``labels`` (length B)
    groups identities into clusters of equal size; by default every identity
    is its own cluster.  The left side is assembled from the i.i.d. HSIC
    estimator with linear kernels.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError("features must be (B, M, Q)")
    B, M, Q = f.shape
    Z = f.reshape(B * M, Q)
    if np.linalg.norm(Z.mean(axis=0)) > center_tol:
        raise ValueError("features must be centered")
    if np.any(np.abs(np.linalg.norm(Z, axis=1) - 1.0) > 1e-6):
        raise ValueError("features must have unit norm")
    labels = np.arange(B) if labels is None else np.asarray(labels)
    if labels.shape != (B,):
        raise ValueError("labels must give one cluster per identity")
    groups, counts = np.unique(labels, return_counts=True)
    if np.any(counts != counts[0]):
        raise ValueError("clusters must have equal size")
    size = counts[0] * M
    row_labels = np.repeat(labels, M)
    Y = (row_labels[:, None] == groups[None, :]).astype(np.float64)
    n = B * M
    K = Z @ Z.T
    L = Y @ Y.T
    lhs = -(n - 1) ** 2 * hsic_biased_iid(K, L) / size + np.trace(K) - n
    sums = Y.T @ Z                                    # per-cluster sums
    middle = -np.sum(sums * sums) / size + np.sum(Z * Z) - n
    means = sums / size
    rhs = np.sum((Z - Y @ means) ** 2) - n
    gap = max(abs(lhs - middle), abs(middle - rhs), abs(lhs - rhs))
    return float(lhs), float(rhs), float(gap)
