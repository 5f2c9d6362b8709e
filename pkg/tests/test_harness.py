import numpy as np
import pytest

from sslhsic.estimators import FiniteWorld
from sslhsic.harness import (
    ViewBatch,
    WorldConfig,
    clustering_identity_check,
    linear_probe,
    make_world,
    mmd_identity_check,
    numerical_rank,
    sample_batch,
    world_from_json,
    world_to_json,
)
from sslhsic.kernels import KernelSpec
from sslhsic.verification import centered_unit_features


def test_world_shape_and_determinism():
    a = make_world(n_classes=3, identities_per_class=5, input_dim=4, seed=2)
    b = make_world(n_classes=3, identities_per_class=5, input_dim=4, seed=2)
    assert a.anchors.shape == (15, 4)
    np.testing.assert_array_equal(a.anchors, b.anchors)
    np.testing.assert_array_equal(np.bincount(a.labels), [5, 5, 5])
    assert not np.array_equal(a.anchors, make_world(3, 5, 4, seed=3).anchors)


def test_json_round_trip():
    w = make_world(n_classes=2, identities_per_class=3, input_dim=2, noise=0.1, flip_dims=1)
    back = world_from_json(world_to_json(w))
    assert back.config == w.config
    np.testing.assert_array_equal(back.anchors, w.anchors)


def test_json_tampered_snapshot_rejected():
    import json

    w = make_world(n_classes=2, identities_per_class=3, input_dim=2)
    data = json.loads(world_to_json(w))
    data["anchors"][0][0] += 1.0
    with pytest.raises(ValueError):
        world_from_json(json.dumps(data))


def test_views_statistics():
    w = make_world(n_classes=1, identities_per_class=2, input_dim=3, noise=0.5)
    x = w.views(np.array([0, 1]), 20_000, np.random.default_rng(0))
    np.testing.assert_allclose(x.mean(axis=1), w.anchors, atol=0.02)
    np.testing.assert_allclose(x.std(axis=1), 0.5, atol=0.01)


def test_flip_dims_only_touch_prefix():
    w = make_world(n_classes=1, identities_per_class=2, input_dim=4, noise=0.0, flip_dims=2)
    x = w.views(np.array([0]), 50, np.random.default_rng(1))
    np.testing.assert_array_equal(np.abs(x[0, :, :2]), np.abs(np.broadcast_to(w.anchors[0, :2], (50, 2))))
    np.testing.assert_array_equal(x[0, :, 2:], np.broadcast_to(w.anchors[0, 2:], (50, 2)))
    assert len(np.unique(np.sign(x[0, :, 0]))) == 2


def test_sample_batch_distinct_identities():
    w = make_world(n_classes=2, identities_per_class=4, input_dim=3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = sample_batch(w, 8, 2, rng)
        assert sorted(b.identity_indices) == list(range(8))
        assert b.inputs.shape == (8, 2, 3)
    with pytest.raises(ValueError):
        sample_batch(w, 9, 2, rng)


def test_view_batch_rejects_duplicates():
    with pytest.raises(ValueError):
        ViewBatch(np.zeros((2, 2, 3)), np.array([1, 1]))


@pytest.mark.parametrize("kw", [dict(n_classes=0), dict(noise=-1.0), dict(scale_jitter=1.0),
                                dict(flip_dims=99), dict(n_classes=1, identities_per_class=1)])
def test_world_config_validation(kw):
    with pytest.raises(ValueError):
        WorldConfig(**kw)


def test_linear_probe_separable_and_random():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 50)
    centers = 10 * rng.standard_normal((4, 6))
    X = centers[labels] + rng.standard_normal((200, 6))
    assert linear_probe(X, labels) == 1.0
    noise = rng.standard_normal((200, 6))
    assert linear_probe(noise, labels) < 0.5
    assert linear_probe(X, labels, split_seed=3) == linear_probe(X, labels, split_seed=3)
    with pytest.raises(ValueError):
        linear_probe(X, np.zeros(200))


def test_numerical_rank():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((100, 3)) @ rng.standard_normal((3, 8))
    assert numerical_rank(A) == 3
    assert numerical_rank(rng.standard_normal((100, 8))) == 8
    assert numerical_rank(np.ones((5, 4))) == 0


def test_mmd_identity_small_world():
    rng = np.random.default_rng(3)
    views = [rng.standard_normal((2, 2)) for _ in range(3)]
    world = FiniteWorld.from_view_lists([v / np.linalg.norm(v, axis=1, keepdims=True) for v in views])
    lhs, rhs, gap = mmd_identity_check(world, KernelSpec("imq", 1.0))
    assert gap < 1e-12
    assert lhs > 0
    # the identity also holds for a non-default label-kernel gap
    assert mmd_identity_check(world, KernelSpec("gaussian", 1.0), delta_l=0.3)[2] < 1e-12


def test_clustering_identity():
    rng = np.random.default_rng(0)
    f = centered_unit_features(rng, 4, 2, 3)
    lhs, rhs, gap = clustering_identity_check(f)
    assert gap < 1e-12
    assert clustering_identity_check(f, labels=np.array([0, 0, 1, 1]))[2] < 1e-12


def test_clustering_identity_preconditions():
    f = np.zeros((2, 2, 2))
    f[..., 0] = 1.0
    with pytest.raises(ValueError, match="centered"):
        clustering_identity_check(f)
    g = centered_unit_features(np.random.default_rng(0), 2, 2, 3) * 2
    with pytest.raises(ValueError, match="unit norm"):
        clustering_identity_check(g)
    with pytest.raises(ValueError, match="equal size"):
        clustering_identity_check(centered_unit_features(np.random.default_rng(0), 3, 2, 3),
                                  labels=np.array([0, 0, 1]))
