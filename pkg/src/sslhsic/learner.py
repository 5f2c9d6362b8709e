"""Differentiable SSL-HSIC / InfoNCE losses and the training loop."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .estimators import SslBatchFeatures
from .harness import SyntheticWorld, ViewBatch, linear_probe, numerical_rank, sample_batch
from .kernels import KernelSpec
from .nn import (
    NetworkParams,
    TargetState,
    as_tensors,
    ema_update,
    init_params,
    project,
    representations,
)
from .objectives import LossConfig, kernel_entropy_grad, kernel_entropy_objective
from .rff import sample_rff_basis

KERNEL_PARAM = "kernel.param"
KERNEL_PARAM_FLOOR = 1e-3


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    views: int = 2
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    use_target: bool = False
    seed: int = 0
    encoder_widths: tuple = (64,)
    activation: str = "relu"
    projector_hidden: int = 64
    output_dim: int = 16
    predictor_hidden: int = 64
    probe_every: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if self.batch_size < 2 or self.views < 2:
            raise ValueError("batch_size and views must both be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        if self.activation not in ("relu", "linear"):
            raise ValueError("activation must be 'relu' or 'linear'")
        if self.output_dim < 1 or self.projector_hidden < 1 or not self.encoder_widths:
            raise ValueError("network widths must be positive")
        if self.probe_every < 0:
            raise ValueError("probe_every must be >= 0")


# ---------------------------------------------------------------------------
# differentiable estimators on a flattened (B*M, Q) feature tensor


def _kernel_matrix(kind, param, Z):
    n = Z.shape[0]
    if kind == "linear":
        return Z @ Z.T
    sq_norm = (Z * Z).sum(axis=1, keepdims=True)
    sq = ad.clamp_min(sq_norm + sq_norm.T - 2.0 * (Z @ Z.T), 0.0)
    if kind == "gaussian":
        K = ad.exp(sq * (-0.5) * ad.power(param, -2.0))
    else:
        K = param * ad.power(param * param + sq, -0.5)
    off = 1.0 - np.eye(n)
    return K * off + np.eye(n)


def _block_mask(B, M):
    return np.kron(np.eye(B), np.ones((M, M)))


def t_hsic_zy(K, B, M):
    s_within = (K * _block_mask(B, M)).sum()
    return s_within * (1.0 / (B * M * (M - 1))) - K.sum() * (1.0 / (B * M) ** 2) - 1.0 / (M - 1)


def t_hsic_zz(K):
    n = K.shape[0]
    Kc = K - K.mean(axis=1, keepdims=True) - K.mean(axis=0, keepdims=True) + K.mean()
    return (Kc * Kc).sum() * (1.0 / (n - 1) ** 2)


def t_info_nce(K, B, M):
    n = K.shape[0]
    pos = (K * (_block_mask(B, M) - np.eye(n))).sum() * (1.0 / (B * M * (M - 1)))
    return -pos + (ad.logsumexp(K, axis=1) - math.log(n)).mean()


def t_rff(Z, param, omegas_unit, offsets):
    D = omegas_unit.shape[0]
    return math.sqrt(2.0 / D) * ad.cos((Z * ad.power(param, -1.0)) @ omegas_unit.T + offsets)


def t_hsic_zy_rff(R, B, M):
    D = R.shape[1]
    per = R.reshape(B, M, D).sum(axis=1)
    total = per.sum(axis=0)
    return ((per * per).sum() * (1.0 / (B * M * (M - 1)))
            - (total * total).sum() * (1.0 / (B * M) ** 2) - 1.0 / (M - 1))


def t_hsic_zz_rff(R1, R2):
    n = R1.shape[0]
    R1c = R1 - R1.mean(axis=0, keepdims=True)
    R2c = R2 - R2.mean(axis=0, keepdims=True)
    C = R1c.T @ R2c
    return (C * C).sum() * (1.0 / (n - 1) ** 2)


# ---------------------------------------------------------------------------


def unit_bases(kind, feature_dim, num_features, seed):
    """Two independent RFF bases at unit kernel parameter (rescaled inside the loss)."""
    spec = KernelSpec(kind, 1.0)
    base = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    return tuple(sample_rff_basis(spec, feature_dim, num_features, base + (s,)) for s in (0, 1))


def build_network(cfg: TrainConfig, input_dim: int, seed) -> NetworkParams:
    params = init_params(
        input_dim,
        encoder_widths=cfg.encoder_widths,
        projector_hidden=cfg.projector_hidden,
        output_dim=cfg.output_dim,
        predictor_hidden=cfg.predictor_hidden if cfg.use_target else None,
        activation=cfg.activation,
        seed=seed,
    )
    if cfg.loss.kernel_entropy_weight > 0:
        params.arrays[KERNEL_PARAM] = np.array(float(cfg.loss.kernel_param))
    return params


def kernel_param_of(params: NetworkParams, cfg: TrainConfig) -> float:
    if KERNEL_PARAM in params.arrays:
        return float(params.arrays[KERNEL_PARAM])
    return float(cfg.loss.kernel_param)


def batch_features(params, t, views, cfg: TrainConfig, target: TargetState | None = None):
    """Flattened identity-major (B*M, Q) feature tensor for a view batch."""
    x = np.asarray(views.inputs if isinstance(views, ViewBatch) else views, dtype=np.float64)
    B, M, d = x.shape
    if target is None:
        return project(params, t, x.reshape(B * M, d))
    # online branch (with predictor) embeds view 0; the frozen target the rest
    z0 = project(params, t, x[:, 0], use_predictor=params.has_predictor)
    zt = project(target.params, as_tensors(target.params), x[:, 1:].reshape(B * (M - 1), d))
    Q = z0.shape[1]
    Z = ad.concat([z0.reshape(B, 1, Q), zt.reshape(B, M - 1, Q)], axis=1)
    return Z.reshape(B * M, Q)


def forward(params: NetworkParams, views, n_total=None) -> SslBatchFeatures:
    """Batch-normalized unit-norm features (B, M, Q) for a view batch."""
    x = np.asarray(views.inputs if isinstance(views, ViewBatch) else views, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("views must be (B, M, input_dim)")
    B, M, d = x.shape
    if d != params.arrays["enc.0.W"].shape[0]:
        raise ValueError(f"input dimension {d} does not match the encoder")
    z = project(params, as_tensors(params), x.reshape(B * M, d)).data
    return SslBatchFeatures(z.reshape(B, M, -1), B if n_total is None else n_total)


def loss_terms(params: NetworkParams, batch, cfg: TrainConfig, rng=None,
               target: TargetState | None = None, bases=None, requires_grad=True):
    """Build the loss graph.  Returns ``(loss, tensors, stats)``.

    RFF bases come from ``bases`` if given (held fixed, e.g. for gradient
    checks), otherwise from the seed ``rng``.
    """
    lc = cfg.loss
    t = as_tensors(params, requires_grad=requires_grad)
    x = batch.inputs if isinstance(batch, ViewBatch) else np.asarray(batch)
    B, M = x.shape[:2]
    Z = batch_features(params, t, x, cfg, target)
    param = t.get(KERNEL_PARAM, ad.Tensor(lc.kernel_param))
    stats = {}
    if lc.use_rff and lc.objective == "ssl_hsic" and lc.kernel != "linear":
        if bases is None:
            if rng is None:
                raise ValueError("RFF loss needs a seed for the bases")
            bases = unit_bases(lc.kernel, Z.shape[1], lc.rff_dims, rng)
        b1, b2 = bases
        R1 = t_rff(Z, param, b1.omegas, b1.offsets)
        zy = t_hsic_zy_rff(R1, B, M)
        zz = t_hsic_zz_rff(R1, t_rff(Z, param, b2.omegas, b2.offsets))
    else:
        K = _kernel_matrix(lc.kernel, param, Z)
        if lc.objective == "infonce":
            loss = t_info_nce(K, B, M)
            stats.update(hsic_zy=t_hsic_zy(K, B, M).item(), hsic_zz=t_hsic_zz(K).item())
            return loss, t, stats | {"loss": loss.item(), "features": Z.data}
        zy = t_hsic_zy(K, B, M)
        zz = t_hsic_zz(K)
    loss = -zy
    if lc.gamma:
        loss = loss + lc.gamma * ad.sqrt(ad.clamp_min(zz, 0.0) + lc.sqrt_eps)
    stats.update(hsic_zy=zy.item(), hsic_zz=zz.item(), loss=loss.item(), features=Z.data)
    return loss, t, stats


def _gradients(params: NetworkParams, batch, cfg: TrainConfig, rng, target, bases):
    loss, t, stats = loss_terms(params, batch, cfg, rng, target, bases)
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in t.items()}
    stats["kernel_entropy"] = None
    w = cfg.loss.kernel_entropy_weight
    if w > 0 and KERNEL_PARAM in params.arrays:
        # the entropy regularizer acts on the kernel parameter only
        spec = KernelSpec(cfg.loss.kernel, float(params.arrays[KERNEL_PARAM]))
        stats["kernel_entropy"] = kernel_entropy_objective(stats["features"], spec)
        grads[KERNEL_PARAM] = grads[KERNEL_PARAM] - w * kernel_entropy_grad(stats["features"], spec)
    return grads, stats


def loss_and_grad(params: NetworkParams, batch, cfg: TrainConfig, rng=None,
                  target: TargetState | None = None, bases=None):
    """Loss value and its gradient with respect to every parameter array."""
    grads, stats = _gradients(params, batch, cfg, rng, target, bases)
    return stats["loss"], grads


def sgd_step(params: NetworkParams, grads, velocity, cfg: TrainConfig):
    for k, p in params.arrays.items():
        g = grads[k]
        if k != KERNEL_PARAM:
            g = g + cfg.weight_decay * p
        v = velocity.get(k)
        v = g if v is None else cfg.momentum * v + g
        velocity[k] = v
        params.arrays[k] = p - cfg.lr * v
    if KERNEL_PARAM in params.arrays:
        params.arrays[KERNEL_PARAM] = np.maximum(params.arrays[KERNEL_PARAM], KERNEL_PARAM_FLOOR)


@dataclass
class TrainResult:
    params: NetworkParams
    steps: list
    epochs: list


def probe_accuracy(params: NetworkParams, world: SyntheticWorld, split_seed=0) -> float:
    return linear_probe(representations(params, world.anchors), world.labels, split_seed)


def train(world: SyntheticWorld, cfg: TrainConfig) -> TrainResult:
    """SGD with momentum on the configured objective; reproducible from ``cfg.seed``."""
    N = world.n_identities
    if N < cfg.batch_size:
        raise ValueError(f"world has {N} identities, fewer than batch size {cfg.batch_size}")
    init_seed, data_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    params = build_network(cfg, world.input_dim, init_seed)
    rng = np.random.default_rng(data_seed)
    target = TargetState(params.copy()) if cfg.use_target else None
    steps_per_epoch = N // cfg.batch_size
    total = cfg.epochs * steps_per_epoch
    velocity = {}
    steps, epochs = [], []
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            batch = sample_batch(world, cfg.batch_size, cfg.views, rng)
            grads, stats = _gradients(params, batch, cfg, (cfg.seed, 1, step), target, None)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise FloatingPointError(f"non-finite gradient at step {step}")
            sgd_step(params, grads, velocity, cfg)
            step += 1
            if target is not None:
                target = ema_update(target, params, step, total)
            steps.append({
                "step": step,
                "epoch": epoch + 1,
                "loss": stats["loss"],
                "hsic_zy": stats["hsic_zy"],
                "hsic_zz": stats["hsic_zz"],
                "kernel_param": kernel_param_of(params, cfg),
                "kernel_entropy": stats["kernel_entropy"],
            })
        row = {"epoch": epoch + 1, "step": step}
        last = epoch + 1 == cfg.epochs
        if cfg.probe_every and ((epoch + 1) % cfg.probe_every == 0 or last):
            row["probe_accuracy"] = probe_accuracy(params, world, cfg.seed)
        epochs.append(row)
    return TrainResult(params, steps, epochs)


def feature_rank(params: NetworkParams, world: SyntheticWorld, tol=1e-6) -> int:
    """Numerical rank of the unit-norm output features on the world's anchors."""
    z = project(params, as_tensors(params), np.asarray(world.anchors, dtype=np.float64)).data
    return numerical_rank(z, tol)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: NetworkParams, cfg: TrainConfig | None = None):
    meta = {
        "encoder_layers": params.encoder_layers,
        "activation": params.activation,
        "has_predictor": params.has_predictor,
        "shapes": {k: list(v.shape) for k, v in sorted(params.arrays.items())},
        "config": _config_dict(cfg) if cfg is not None else None,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)),
             **{f"param:{k}": v for k, v in sorted(params.arrays.items())})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        arrays = {k.split(":", 1)[1]: data[k].copy() for k in data.files if k.startswith("param:")}
    for k, shape in meta["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"shape header mismatch for {k}")
    params = NetworkParams(arrays, meta["encoder_layers"], meta["activation"], meta["has_predictor"])
    return params, meta["config"]


def _config_dict(cfg: TrainConfig):
    d = asdict(cfg)
    d["encoder_widths"] = list(cfg.encoder_widths)
    return d
