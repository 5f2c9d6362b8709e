"""Property suites shared by ``sslhsic verify`` and the acceptance tests.

Each check returns a :class:`Check` record with the measured statistic and
the tolerance it was held to.  Sample sizes default to the acceptance-grade
values; callers may pass smaller ones for smoke runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import quad

from .estimators import (
    FiniteWorld,
    SslBatchFeatures,
    hsic_zy_biased,
    hsic_zy_unbiased,
    hsic_zz_biased,
    population_hsic_zy,
    population_hsic_zz,
)
from .harness import clustering_identity_check, mmd_identity_check
from .kernels import KernelSpec, gram_matrix
from .objectives import (
    LossConfig,
    check_exp_lemma,
    check_infonce_bound,
    gamma_for_bound,
    taylor_residual,
)
from .rff import imq_amplitude_pmf, rff_features, sample_rff_basis

SUITES = ("estimators", "rff", "bounds", "identities", "gradients")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    statistic: float
    tolerance: str
    detail: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def to_dict(self):
        d = asdict(self)
        d["statistic"] = _jsonable(self.statistic)
        return d

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.statistic:.6g} ({self.tolerance})"


def _jsonable(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


def _rng(seed, *stream):
    return np.random.default_rng((int(seed),) + tuple(stream))


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# estimators


def unbiasedness_world(N, seed=0, Q=3):
    """``N`` identities with 2 or 3 equally likely unit-norm views each."""
    rng = _rng(seed, 101, N)
    views = [_unit(rng.standard_normal((2 + (i % 2), Q))) for i in range(N)]
    return FiniteWorld.from_view_lists(views)


def check_unbiasedness(N, seed=0, n_batches=100_000, spec=KernelSpec("imq", 1.0), chunk=20_000):
    world = unbiasedness_world(N, seed)
    rng = _rng(seed, 102, N)
    B, M = N // 2, 2
    vals = []
    for start in range(0, n_batches, chunk):
        f = world.sample_features(B, M, rng, size=min(chunk, n_batches - start))
        vals.append(hsic_zy_unbiased(SslBatchFeatures(f, N), spec))
    vals = np.concatenate(vals)
    pop = population_hsic_zy(world, spec)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    z = (vals.mean() - pop) / se
    return Check(f"unbiased_hsic_zy[N={N}]", bool(abs(z) <= 3.0), float(z), "|z| <= 3",
                 {"mc_mean": float(vals.mean()), "population": float(pop), "se": float(se),
                  "n_batches": int(n_batches)})


def bias_world(seed=0, N=4096, types=4, views_per_type=3, Q=3):
    """A large world (so sampling without replacement barely matters) whose
    identities fall into a few view-law types."""
    rng = _rng(seed, 201)
    atoms = _unit(rng.standard_normal((types * views_per_type, Q)))
    probs = np.zeros((N, len(atoms)))
    for i in range(N):
        t = i % types
        probs[i, t * views_per_type:(t + 1) * views_per_type] = 1.0 / views_per_type
    return FiniteWorld(atoms, probs)


def check_bias_rates(seed=0, Bs=(4, 8, 16, 32, 64), budget=4_000_000, floor=2000,
                     spec=KernelSpec("imq", 1.0), chunk=2000):
    """Log-log slope of the bias of both biased estimators against ``B``.

    The HSIC(Z,Y) bias is measured as ``E[biased - unbiased]``; the unbiased
    estimator is a control variate with known mean (the population value).
    """
    world = bias_world(seed)
    N = world.n_identities
    rng = _rng(seed, 202)
    pop_zz = population_hsic_zz(world, spec)
    bias_zy, bias_zz = [], []
    for B in Bs:
        S = int(budget // (B * B)) + floor
        dzy, zz = [], []
        for start in range(0, S, chunk):
            f = world.sample_features(B, 2, rng, size=min(chunk, S - start))
            batch = SslBatchFeatures(f, N)
            dzy.append(hsic_zy_biased(batch, spec) - hsic_zy_unbiased(batch, spec))
            zz.append(hsic_zz_biased(batch, spec))
        bias_zy.append(abs(np.concatenate(dzy).mean()))
        bias_zz.append(abs(np.concatenate(zz).mean() - pop_zz))
    s_zy, s_zz = loglog_slope(Bs, bias_zy), loglog_slope(Bs, bias_zz)
    detail = {"B": list(Bs), "bias_zy": [float(b) for b in bias_zy],
              "bias_zz": [float(b) for b in bias_zz]}
    return [
        Check("bias_slope_hsic_zy", bool(abs(s_zy + 1) <= 0.3), s_zy, "-1 +/- 0.3", detail),
        Check("bias_slope_hsic_zz", bool(abs(s_zz + 1) <= 0.3), s_zz, "-1 +/- 0.3", detail),
    ]


def suite_estimators(seed=0, n_batches=100_000, budget=4_000_000, floor=2000):
    checks = [check_unbiasedness(N, seed, n_batches) for N in (4, 6, 8)]
    return checks + check_bias_rates(seed, budget=budget, floor=floor)


# ---------------------------------------------------------------------------
# random Fourier features


RFF_CASES = (("gaussian", 1.0, 3), ("gaussian", 0.5, 8), ("imq", 1.0, 2),
             ("imq", 1.0, 16), ("imq", 2.0, 128))


def check_rff_mean(kind, param, Q, seed=0, draws=200_000):
    """Per-frequency products ``2 cos(w.z1 + b) cos(w.z2 + b)`` average to ``k(z1, z2)``."""
    spec = KernelSpec(kind, param)
    rng = _rng(seed, 301, Q)
    Z = _unit(rng.standard_normal((3, Q)))
    Z[2] = _unit(Z[0] + 0.3 * Z[1])  # one close pair
    basis = sample_rff_basis(spec, Q, draws, rng)
    phi = np.cos(Z @ basis.omegas.T + basis.offsets)          # (3, draws)
    K = gram_matrix(spec, Z)
    worst = 0.0
    for i, j in ((0, 1), (0, 2), (1, 2)):
        prod = 2.0 * phi[i] * phi[j]
        z = (prod.mean() - K[i, j]) / (prod.std(ddof=1) / np.sqrt(draws))
        worst = max(worst, abs(z))
    return Check(f"rff_mean[{kind},{param},Q={Q}]", bool(worst <= 3.0), worst, "max |z| <= 3")


def check_rff_error_slope(kind="imq", param=1.0, Q=8, seed=0, reps=20,
                          Ds=(64, 128, 256, 512, 1024, 2048, 4096)):
    spec = KernelSpec(kind, param)
    rng = _rng(seed, 302)
    Z = _unit(rng.standard_normal((16, Q)))
    K = gram_matrix(spec, Z)
    errs = []
    for D in Ds:
        e = []
        for _ in range(reps):
            R = rff_features(sample_rff_basis(spec, Q, D, rng), Z)
            e.append(np.max(np.abs(R @ R.T - K)))
        errs.append(np.mean(e))
    s = loglog_slope(Ds, errs)
    return Check(f"rff_error_slope[{kind}]", bool(abs(s + 0.5) <= 0.15), s, "-0.5 +/- 0.15",
                 {"D": list(Ds), "max_error": [float(x) for x in errs]})


def bessel_k_quadrature(order, s):
    """``exp(s) K_order(s)`` from ``int_0^inf exp(-s (cosh t - 1)) cosh(order t) dt``."""
    tmax = np.arccosh(1.0 + 40.0 / s) + 1.0
    return quad(lambda t: np.exp(-s * (np.cosh(t) - 1.0)) * np.cosh(order * t), 0.0, tmax,
                epsabs=0.0, epsrel=1e-13, limit=200)[0]


def check_imq_density_q1(n_check=200):
    """Tabulated Q=1 amplitude pmf against a quadrature oracle for ``K_0``.

    Both are normalized over the same grid; compared in relative terms at
    ``n_check`` grid points spread log-uniformly in index.
    """
    pmf = imq_amplitude_pmf(1)
    grid = pmf.grid
    idx = np.unique(np.r_[0, 1, 2, np.geomspace(3, len(grid) - 1, n_check).astype(int)])
    log_oracle_all = np.array([np.log(bessel_k_quadrature(0.0, s)) - s for s in grid])
    log_norm = np.log(np.sum(np.exp(log_oracle_all - log_oracle_all.max()))) + log_oracle_all.max()
    rel = np.abs(np.expm1(np.log(pmf.probs[idx]) - (log_oracle_all[idx] - log_norm)))
    stat = float(rel.max())
    return Check("imq_density_q1_vs_quadrature", stat <= 1e-10, stat, "max rel err <= 1e-10")


def check_gamma_closed_form():
    g = gamma_for_bound(10.0)
    return Check("gamma_bound[k_max=10]", g == 0.0475, g, "== 0.0475")


def suite_rff(seed=0, draws=200_000, reps=20):
    checks = [check_rff_mean(k, p, Q, seed, draws) for k, p, Q in RFF_CASES]
    checks += [check_rff_error_slope("imq", 1.0, seed=seed, reps=reps),
               check_rff_error_slope("gaussian", 1.0, seed=seed, reps=reps)]
    return checks + [check_imq_density_q1(), check_gamma_closed_form()]


# ---------------------------------------------------------------------------
# bounds


def random_batch(rng, B=8, M=2, Q=4, N=None, spread=1.0):
    """Unit-norm features; ``spread`` < 1 pulls views toward an identity center."""
    centers = _unit(rng.standard_normal((B, 1, Q)))
    f = _unit(centers + spread * rng.standard_normal((B, M, Q)))
    return SslBatchFeatures(f, N or B)


def contracted_batch(rng, eps, B=8, M=2, Q=4):
    """Features ``normalize(e + eps * w)`` collapsing onto one direction as eps -> 0."""
    e = _unit(rng.standard_normal(Q))
    w = rng.standard_normal((B, M, Q))
    return SslBatchFeatures(_unit(e + eps * w), B)


def check_exp_lemma_suite(alphas=(0.05, 0.1, 0.25)):
    return [Check(f"exp_lemma[alpha={a}]", check_exp_lemma(a), a, "grid sweep holds")
            for a in alphas]


def check_infonce_bound_suite(seed=0, n=200):
    rng = _rng(seed, 401)
    worst = np.inf
    fails = 0
    for i in range(n):
        kind = ("imq", "gaussian")[i % 2]
        spec = KernelSpec(kind, float(rng.uniform(0.3, 2.0)))
        batch = random_batch(rng, B=int(rng.integers(2, 9)), M=int(rng.integers(2, 4)),
                             Q=int(rng.integers(2, 8)), spread=float(rng.uniform(0.05, 2.0)))
        rep = check_infonce_bound(batch, spec, k_max=1.0)
        worst = min(worst, rep.rhs - rep.lhs)
        fails += not rep.holds
    return Check("infonce_lower_bound", fails == 0, float(worst), f"rhs - lhs >= 0 on {n} batches",
                 {"failures": fails})


TAYLOR_SCHEDULE = (1.0, 0.3, 0.1, 0.01, 1e-3)


def check_taylor(seed=0, spec=KernelSpec("imq", 1.0)):
    res = []
    for eps in TAYLOR_SCHEDULE:
        rng = _rng(seed, 402)  # same directions at every contraction level
        res.append(abs(float(taylor_residual(contracted_batch(rng, eps), spec))))
    monotone = all(a > b for a, b in zip(res, res[1:]))
    return Check("taylor_residual", monotone and res[-1] < 1e-6, res[-1],
                 "strictly decreasing; < 1e-6 at contraction 1e-3",
                 {"contraction": list(TAYLOR_SCHEDULE), "residual": res})


def suite_bounds(seed=0):
    return check_exp_lemma_suite() + [check_infonce_bound_suite(seed), check_taylor(seed)]


# ---------------------------------------------------------------------------
# identities


def identity_world(rng):
    N = int(rng.integers(2, 7))
    Q = int(rng.integers(2, 6))
    views = [_unit(rng.standard_normal((int(rng.integers(1, 4)), Q))) for _ in range(N)]
    weights = [rng.dirichlet(np.ones(len(v))) for v in views]
    return FiniteWorld.from_view_lists(views, weights)


def centered_unit_features(rng, B, M, Q):
    """Rows in antipodal pairs so the mean is zero."""
    half = _unit(rng.standard_normal((B * M // 2, Q)))
    rows = np.concatenate([half, -half])
    return rows[rng.permutation(len(rows))].reshape(B, M, Q)


def check_identities(seed=0, n=20):
    rng = _rng(seed, 501)
    mmd_gaps, clu_gaps = [], []
    for i in range(n):
        spec = KernelSpec(("imq", "gaussian", "linear")[i % 3], float(rng.uniform(0.5, 2.0)))
        mmd_gaps.append(mmd_identity_check(identity_world(rng), spec)[2])
        B = 2 * int(rng.integers(1, 5))
        f = centered_unit_features(rng, B, 2, int(rng.integers(2, 6)))
        labels = np.repeat(np.arange(B // 2), 2) if i % 2 else None
        clu_gaps.append(clustering_identity_check(f, labels)[2])
    m, c = max(mmd_gaps), max(clu_gaps)
    return [Check("mmd_identity", m < 1e-10, m, f"max gap < 1e-10 over {n} worlds"),
            Check("clustering_identity", c < 1e-10, c, f"max gap < 1e-10 over {n} inputs")]


def suite_identities(seed=0):
    return check_identities(seed)


# ---------------------------------------------------------------------------
# gradients


GRADIENT_CONFIGS = {
    "ssl_hsic_exact": LossConfig(),
    "ssl_hsic_rff": LossConfig(use_rff=True, rff_dims=64),
    "infonce": LossConfig(objective="infonce"),
}


def gradient_check(loss_cfg: LossConfig, seed, h=1e-6, rtol=1e-4, atol=1e-7):
    """Worst ``|g - fd| / (atol + rtol |fd|)`` over every parameter of a small net."""
    from .learner import TrainConfig, build_network, loss_and_grad, loss_terms, unit_bases

    rng = _rng(seed, 601)
    d, Q, B, M = 5, 8, 4, 2
    cfg = TrainConfig(batch_size=B, views=M, encoder_widths=(8,), projector_hidden=8,
                      output_dim=Q, loss=loss_cfg)
    params = build_network(cfg, d, int(rng.integers(2**31)))
    x = rng.standard_normal((B, M, d))
    bases = unit_bases(loss_cfg.kernel, Q, loss_cfg.rff_dims, seed) if loss_cfg.use_rff else None
    _, grads = loss_and_grad(params, x, cfg, bases=bases)

    def value(p):
        return loss_terms(p, x, cfg, bases=bases, requires_grad=False)[2]["loss"]

    worst = 0.0
    for name, arr in params.arrays.items():
        for idx in np.ndindex(arr.shape):
            p_hi, p_lo = params.copy(), params.copy()
            p_hi.arrays[name][idx] += h
            p_lo.arrays[name][idx] -= h
            fd = (value(p_hi) - value(p_lo)) / (2 * h)
            worst = max(worst, abs(grads[name][idx] - fd) / (atol + rtol * abs(fd)))
    return worst, params.num_parameters


def suite_gradients(seed=0, n_networks=5):
    checks = []
    for label, lc in GRADIENT_CONFIGS.items():
        ratios = [gradient_check(lc, seed * 1000 + k)[0] for k in range(n_networks)]
        worst = max(ratios)
        checks.append(Check(f"gradient[{label}]", worst <= 1.0, worst,
                            f"|g - fd| <= 1e-7 + 1e-4 |fd| on {n_networks} nets"))
    return checks


# ---------------------------------------------------------------------------


def run_suite(name: str, seed: int = 0):
    runners = {
        "estimators": suite_estimators,
        "rff": suite_rff,
        "bounds": suite_bounds,
        "identities": suite_identities,
        "gradients": suite_gradients,
    }
    if name == "all":
        return [c for s in SUITES for c in runners[s](seed=seed)]
    if name not in runners:
        raise KeyError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    return runners[name](seed=seed)
