"""Encoder / projector / predictor stack and the EMA target network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

BN_EPS = 1e-5
NORM_FLOOR = 1e-12


@dataclass
class NetworkParams:
    """Named weight arrays plus the architecture needed to interpret them."""

    arrays: dict = field(repr=False)
    encoder_layers: int
    activation: str = "relu"
    has_predictor: bool = False

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.arrays.items()},
                             self.encoder_layers, self.activation, self.has_predictor)

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    @property
    def output_dim(self) -> int:
        return self.arrays["proj.1.W"].shape[1]

    @property
    def representation_dim(self) -> int:
        return self.arrays[f"enc.{self.encoder_layers - 1}.W"].shape[1]


def init_params(input_dim, encoder_widths=(64,), projector_hidden=64, output_dim=16,
                predictor_hidden=None, activation="relu", seed=0) -> NetworkParams:
    if activation not in ("relu", "linear"):
        raise ValueError("activation must be 'relu' or 'linear'")
    if not encoder_widths:
        raise ValueError("encoder needs at least one layer")
    rng = np.random.default_rng(seed)
    arrays = {}

    def dense(name, fan_in, fan_out):
        arrays[f"{name}.W"] = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        arrays[f"{name}.b"] = np.zeros(fan_out)

    width = input_dim
    for i, w in enumerate(encoder_widths):
        dense(f"enc.{i}", width, w)
        width = w
    dense("proj.0", width, projector_hidden)
    dense("proj.1", projector_hidden, output_dim)
    if predictor_hidden:
        dense("pred.0", output_dim, predictor_hidden)
        dense("pred.1", predictor_hidden, output_dim)
    return NetworkParams(arrays, len(encoder_widths), activation, bool(predictor_hidden))


def batch_norm(x):
    """Per-batch standardization of each column (training mode, no affine)."""
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    return xc * ad.power(var + BN_EPS, -0.5)


def unit_normalize(x):
    sq = (x * x).sum(axis=1, keepdims=True)
    if np.min(sq.data) < NORM_FLOOR**2:
        raise FloatingPointError("cannot rescale a zero feature vector to unit norm")
    return x * ad.power(sq, -0.5)


def _mlp2(t, name, x):
    h = x @ t[f"{name}.0.W"] + t[f"{name}.0.b"]
    h = ad.relu(batch_norm(h))
    return h @ t[f"{name}.1.W"] + t[f"{name}.1.b"]


def encode(params: NetworkParams, t, x):
    """Encoder representation for inputs ``x`` (n, d); ``t`` maps names to tensors."""
    h = ad.as_tensor(x)
    for i in range(params.encoder_layers):
        h = h @ t[f"enc.{i}.W"] + t[f"enc.{i}.b"]
        if params.activation == "relu":
            h = ad.relu(h)
    return h


def project(params: NetworkParams, t, x, use_predictor=False):
    """Unit-norm output features (n, Q) for inputs ``x`` (n, d)."""
    z = _mlp2(t, "proj", encode(params, t, x))
    if use_predictor:
        z = _mlp2(t, "pred", z)
    z = batch_norm(z)
    out = unit_normalize(z)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite activations")
    return out


def as_tensors(params: NetworkParams, requires_grad=False):
    make = ad.parameter if requires_grad else ad.Tensor
    return {k: make(v) for k, v in params.arrays.items()}


def representations(params: NetworkParams, x):
    """Encoder outputs as a plain array (no graph kept)."""
    return encode(params, as_tensors(params), np.asarray(x, dtype=np.float64)).data


def tau_schedule(t, T) -> float:
    """``1 - 0.01 (cos(pi t / T) + 1) / 2``."""
    if T <= 0:
        return 1.0
    return 1.0 - 0.01 * (math.cos(math.pi * t / T) + 1.0) / 2.0


@dataclass
class TargetState:
    params: NetworkParams
    tau_schedule: object = tau_schedule


def ema_update(target: TargetState, online: NetworkParams, t, T) -> TargetState:
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    tau = target.tau_schedule(t, T)
    new = {}
    for k, v in target.params.arrays.items():
        new[k] = tau * v + (1.0 - tau) * online.arrays[k] if k in online.arrays else v
    p = target.params
    return TargetState(NetworkParams(new, p.encoder_layers, p.activation, p.has_predictor),
                       target.tau_schedule)
