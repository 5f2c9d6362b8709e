import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslhsic import autodiff as ad
from sslhsic.nn import (
    TargetState,
    as_tensors,
    batch_norm,
    ema_update,
    init_params,
    project,
    representations,
    tau_schedule,
)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["relu", "linear"]), st.booleans())
def test_outputs_unit_norm_for_random_params(seed, activation, predictor):
    rng = np.random.default_rng(seed)
    p = init_params(4, (6,), 5, 3, predictor_hidden=4 if predictor else None,
                    activation=activation, seed=seed)
    for k in p.arrays:
        p.arrays[k] = p.arrays[k] + 0.1 * rng.standard_normal(p.arrays[k].shape)
    z = project(p, as_tensors(p), rng.standard_normal((8, 4)), use_predictor=predictor).data
    assert z.shape == (8, 3)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)


def test_zero_final_layer_errors():
    p = init_params(3, (4,), 4, 2)
    p.arrays["proj.1.W"][:] = 0.0
    p.arrays["proj.1.b"][:] = 0.0
    with pytest.raises(FloatingPointError):
        project(p, as_tensors(p), np.random.default_rng(0).standard_normal((5, 3)))


def test_identity_encoder_unit_inputs():
    p = init_params(3, (3,), 3, 3, activation="linear")
    p.arrays["enc.0.W"] = np.eye(3)
    x = np.eye(3)
    np.testing.assert_array_equal(representations(p, x), x)
    z = project(p, as_tensors(p), x).data
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)


def test_batch_norm_statistics():
    x = np.random.default_rng(0).standard_normal((50, 4)) * 3 + 1
    y = batch_norm(ad.Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-5)


def test_architecture_shapes():
    p = init_params(7, (8, 9), projector_hidden=5, output_dim=4, predictor_hidden=6)
    assert p.representation_dim == 9 and p.output_dim == 4 and p.has_predictor
    assert p.arrays["pred.0.W"].shape == (4, 6) and p.arrays["pred.1.W"].shape == (6, 4)
    assert p.num_parameters == sum(v.size for v in p.arrays.values())
    with pytest.raises(ValueError):
        init_params(3, (), 4, 2)


def test_tau_schedule():
    assert tau_schedule(0, 100) == pytest.approx(0.99)
    assert tau_schedule(100, 100) == 1.0
    assert tau_schedule(50, 100) == pytest.approx(0.995)
    taus = [tau_schedule(t, 37) for t in range(38)]
    assert all(a <= b for a, b in zip(taus, taus[1:]))
    assert all(0.99 <= t <= 1.0 for t in taus)


def test_ema_endpoints():
    online = init_params(3, (4,), 4, 2, seed=0)
    target = TargetState(init_params(3, (4,), 4, 2, seed=1))
    same = ema_update(target, online, 10, 10)
    for k in online.arrays:
        np.testing.assert_array_equal(same.params.arrays[k], target.params.arrays[k])
    first = ema_update(target, online, 0, 10)
    k = "enc.0.W"
    np.testing.assert_allclose(first.params.arrays[k],
                               0.99 * target.params.arrays[k] + 0.01 * online.arrays[k])
    with pytest.raises(ValueError):
        ema_update(target, online, 11, 10)


def test_ema_geometric_convergence_to_frozen_online():
    online = init_params(3, (4,), 4, 2, seed=0)
    target = TargetState(init_params(3, (4,), 4, 2, seed=1), tau_schedule=lambda t, T: 0.9)
    k = "proj.0.W"
    gap0 = np.abs(target.params.arrays[k] - online.arrays[k]).max()
    for t in range(50):
        target = ema_update(target, online, t, 50)
    gap = np.abs(target.params.arrays[k] - online.arrays[k]).max()
    assert gap == pytest.approx(gap0 * 0.9**50, rel=1e-9)
    assert math.isfinite(gap)
