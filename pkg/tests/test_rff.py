import math

import numpy as np
import pytest
from scipy import special as sp

from sslhsic.kernels import KernelSpec, gram_matrix
from sslhsic.rff import (
    grid_upper,
    imq_amplitude_pmf,
    log_amplitude_density,
    rff_features,
    sample_rff_basis,
)
from sslhsic.verification import bessel_k_quadrature


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_grid_upper_thresholds():
    assert [grid_upper(q) for q in (1, 1023, 1024, 2048, 4096)] == [100, 100, 120, 150, 200]


@pytest.mark.parametrize("Q", [1, 2, 16, 128, 2048, 4096])
def test_pmf_normalized_and_finite(Q):
    pmf = imq_amplitude_pmf(Q)
    assert len(pmf.grid) == 10_000 and pmf.grid[0] == 1e-12
    assert np.all(np.isfinite(pmf.probs)) and np.all(pmf.probs >= 0)
    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert pmf.cdf[-1] == 1.0


@pytest.mark.parametrize("Q", [3, 8])
def test_pmf_mean_matches_radial_law(Q):
    # the radial law of a Q-dim IMQ(c=1) spectrum has density
    # s^{(Q-1)/2} K_{(Q-1)/2}(s) / Z with E[s] = Z_1 / Z_0 from Mellin moments:
    # int s^{mu} K_nu(s) ds = 2^{mu-1} Gamma((1+mu+nu)/2) Gamma((1+mu-nu)/2)
    nu = (Q - 1) / 2

    def moment(mu):
        return 2 ** (mu - 1) * math.gamma((1 + mu + nu) / 2) * math.gamma((1 + mu - nu) / 2)

    expected = moment(nu + 1) / moment(nu)
    # grid sums carry an O(h) endpoint error: a 10x finer grid cuts it ~10x
    coarse = abs(imq_amplitude_pmf(Q).mean / expected - 1)
    fine = abs(imq_amplitude_pmf(Q, n_points=100_000).mean / expected - 1)
    assert coarse < 5e-3
    assert 8 < coarse / fine < 12


def test_density_matches_integral_representation():
    for Q in (1, 2, 5):
        nu = (Q - 1) / 2
        for s in (0.05, 1.0, 7.0):
            ref = math.log(bessel_k_quadrature(nu, s)) - s + nu * math.log(s)
            assert float(log_amplitude_density(Q, s)) == pytest.approx(ref, rel=1e-12)


def test_gaussian_frequency_scale():
    basis = sample_rff_basis(KernelSpec("gaussian", 0.5), 3, 100_000, 0)
    assert basis.omegas.std() == pytest.approx(2.0, rel=0.01)
    assert basis.offsets.min() >= 0 and basis.offsets.max() < 2 * np.pi


def test_imq_param_rescales_amplitudes():
    a = sample_rff_basis(KernelSpec("imq", 1.0), 4, 1000, 7)
    b = sample_rff_basis(KernelSpec("imq", 2.5), 4, 1000, 7)
    np.testing.assert_allclose(b.omegas, a.omegas / 2.5, rtol=1e-15)
    np.testing.assert_array_equal(a.offsets, b.offsets)


def test_seed_reproducible_and_recorded():
    spec = KernelSpec("imq", 1.0)
    a = sample_rff_basis(spec, 5, 64, (3, 1))
    b = sample_rff_basis(spec, 5, 64, (3, 1))
    assert a.seed == (3, 1)
    np.testing.assert_array_equal(a.omegas, b.omegas)
    g = sample_rff_basis(spec, 5, 64, np.random.default_rng(0))
    assert g.seed is None


@pytest.mark.parametrize("spec,Q", [(KernelSpec("gaussian", 1.0), 4), (KernelSpec("imq", 1.0), 8)])
def test_inner_products_approach_kernel(spec, Q):
    Z = _unit(np.random.default_rng(1).standard_normal((10, Q)))
    R = rff_features(sample_rff_basis(spec, Q, 200_000, 2), Z)
    np.testing.assert_allclose(R @ R.T, gram_matrix(spec, Z), atol=0.012)


def test_feature_shapes_and_errors():
    basis = sample_rff_basis(KernelSpec("imq"), 3, 32, 0)
    assert rff_features(basis, np.ones((2, 5, 3))).shape == (2, 5, 32)
    assert np.all(np.abs(rff_features(basis, np.ones((4, 3)))) <= math.sqrt(2 / 32) + 1e-15)
    with pytest.raises(ValueError):
        rff_features(basis, np.ones((4, 2)))
    with pytest.raises(ValueError):
        sample_rff_basis(KernelSpec("linear"), 3, 8, 0)
    with pytest.raises(ValueError):
        sample_rff_basis(KernelSpec("imq"), 3, 0, 0)


def test_q1_density_is_k0():
    s = np.array([0.01, 0.5, 3.0])
    np.testing.assert_allclose(log_amplitude_density(1, s), np.log(sp.k0(s)), rtol=1e-14)
