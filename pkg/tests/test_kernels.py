import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sslhsic.kernels import KernelSpec, delta_l, gram_matrix, kernel_eval, sq_dists


def _unit_rows(n, q, seed):
    z = np.random.default_rng(seed).standard_normal((n, q))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def test_known_values():
    # s = |e1 - e2|^2 = 2
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert kernel_eval(KernelSpec("gaussian", 1.0), e1, e2) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert kernel_eval(KernelSpec("imq", 1.0), e1, e2) == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert kernel_eval(KernelSpec("imq", 2.0), e1, e2) == pytest.approx(2 / math.sqrt(6), rel=1e-15)
    assert kernel_eval(KernelSpec("linear"), e1, e2) == 0.0
    assert kernel_eval(KernelSpec("imq"), e1, e1) == 1.0


def test_gram_matches_pairwise_loop():
    Z = _unit_rows(7, 4, 0)
    for spec in (KernelSpec("gaussian", 0.7), KernelSpec("imq", 1.3), KernelSpec("linear")):
        K = gram_matrix(spec, Z)
        loop = np.array([[kernel_eval(spec, a, b) for b in Z] for a in Z])
        np.testing.assert_allclose(K, loop, rtol=1e-13, atol=1e-14)
        assert np.array_equal(K, K.T)


def test_gram_batched_matches_unbatched():
    Z = np.stack([_unit_rows(5, 3, s) for s in range(4)])
    spec = KernelSpec("imq", 0.5)
    K = gram_matrix(spec, Z)
    for i in range(4):
        np.testing.assert_allclose(K[i], gram_matrix(spec, Z[i]), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)))
def test_sq_dists_nonnegative_and_psd_gram(Z):
    s = sq_dists(Z)
    assert np.all(s >= 0)
    assert np.all(np.diag(s) == 0) or np.allclose(np.diag(s), 0, atol=1e-9)
    for spec in (KernelSpec("gaussian", 1.0), KernelSpec("imq", 1.0)):
        ev = np.linalg.eigvalsh(gram_matrix(spec, Z))
        assert ev.min() > -1e-9


def test_delta_l_values():
    assert delta_l(KernelSpec("linear"), 10) == 1.0
    assert delta_l(KernelSpec("gaussian", 1.0), 10) == pytest.approx(1 - math.exp(-1.0))
    assert delta_l(KernelSpec("imq", 1.0), 3) == pytest.approx(1 - 1 / math.sqrt(3))
    with pytest.raises(ValueError):
        delta_l(KernelSpec("imq"), 1)


@pytest.mark.parametrize("kind,param", [("rbf", 1.0), ("imq", 0.0), ("gaussian", -1.0)])
def test_invalid_spec(kind, param):
    with pytest.raises(ValueError):
        KernelSpec(kind, param)


def test_eval_errors():
    spec = KernelSpec("imq")
    with pytest.raises(ValueError):
        kernel_eval(spec, np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        kernel_eval(spec, np.array([np.nan, 0.0]), np.ones(2))
