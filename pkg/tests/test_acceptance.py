"""Acceptance suite: every criterion at its stated tolerance.

Each test logs one PASS/FAIL line (shown in the terminal summary) and then
asserts. Nothing here is loosened to make a number pass.
"""
import time

import numpy as np
import pytest

from sslhsic import verification as V
from sslhsic.cli import BenchConfig, main, run_bench
from sslhsic.harness import make_world
from sslhsic.learner import TrainConfig, build_network, feature_rank, probe_accuracy, train
from sslhsic.objectives import LossConfig

pytestmark = pytest.mark.slow

SEEDS = range(5)


def _summary(checks):
    return "; ".join(f"{c.name}={c.statistic:.4g}" for c in checks)


def _log_checks(log, label, checks, started):
    ok = all(c.passed for c in checks)
    log(label, ok, f"{_summary(checks)} [{time.perf_counter() - started:.1f}s]")
    failed = [c.line() for c in checks if not c.passed]
    assert ok, failed


def test_c1_unbiasedness(acceptance_log):
    t0 = time.perf_counter()
    checks = []
    for N in (4, 6, 8):
        t = time.perf_counter()
        checks.append(V.check_unbiasedness(N, n_batches=100_000))
        assert time.perf_counter() - t < 120
    _log_checks(acceptance_log, "1 unbiasedness |z|<=3, 100k batches, N in {4,6,8}", checks, t0)


def test_c2_bias_rates(acceptance_log):
    t0 = time.perf_counter()
    checks = V.check_bias_rates()
    assert time.perf_counter() - t0 < 300
    _log_checks(acceptance_log, "2 bias slopes -1 +/- 0.3", checks, t0)


def test_c3_rff_fidelity(acceptance_log):
    t0 = time.perf_counter()
    checks = V.suite_rff(draws=200_000)
    _log_checks(acceptance_log, "3 rff mean/slope/density/gamma", checks, t0)


def test_c4_identities_lemma_bound(acceptance_log):
    t0 = time.perf_counter()
    checks = V.suite_identities() + V.check_exp_lemma_suite((0.05, 0.1, 0.25))
    checks.append(V.check_infonce_bound_suite(n=200))
    _log_checks(acceptance_log, "4 identities < 1e-10, lemma sweep, bound on 200 batches", checks, t0)


def test_c5_taylor(acceptance_log):
    t0 = time.perf_counter()
    _log_checks(acceptance_log, "5 taylor residual monotone, < 1e-6 at 1e-3", [V.check_taylor()], t0)


def test_c6_gradients(acceptance_log):
    t0 = time.perf_counter()
    checks = V.suite_gradients(n_networks=5)
    assert {c.name for c in checks} >= {"gradient[ssl_hsic_exact]", "gradient[ssl_hsic_rff]",
                                        "gradient[infonce]"}
    _log_checks(acceptance_log, "6 gradients vs central FD, rtol 1e-4, 5 nets each", checks, t0)


def test_c7_complexity(acceptance_log):
    bc = BenchConfig(rff_dims=512)
    _, slopes = run_bench(bc)
    ok = 1.7 <= slopes["exact"] <= 2.3 and 0.8 <= slopes["rff"] <= 1.3
    acceptance_log("7 bench slopes exact in [1.7,2.3], rff in [0.8,1.3] at D=512", ok,
                   f"exact={slopes['exact']:.3f} rff={slopes['rff']:.3f}")
    assert ok, slopes


@pytest.fixture(scope="module")
def toy_world():
    return make_world()


def test_c8a_probe_gamma3(acceptance_log, toy_world):
    assert toy_world.config.n_classes == 10
    t0 = time.perf_counter()
    acc, init_acc = [], []
    for seed in SEEDS:
        cfg = TrainConfig(epochs=30, seed=seed, use_target=False, probe_every=0,
                          loss=LossConfig(gamma=3.0))
        init = build_network(cfg, toy_world.input_dim, np.random.SeedSequence(seed).spawn(2)[0])
        init_acc.append(probe_accuracy(init, toy_world, seed))
        acc.append(probe_accuracy(train(toy_world, cfg).params, toy_world, seed))
    med = float(np.median(acc))
    ok = med >= 0.9
    acceptance_log("8a gamma=3 median probe >= 0.90 over 5 seeds", ok,
                   f"median={med:.4f} per-seed={[round(a, 4) for a in acc]} "
                   f"(untrained median {np.median(init_acc):.4f}) [{time.perf_counter() - t0:.1f}s]")
    assert ok


def test_c8b_rank_collapse_gamma0(acceptance_log, toy_world):
    t0 = time.perf_counter()
    ranks = []
    for seed in SEEDS:
        cfg = TrainConfig(epochs=30, seed=seed, use_target=False, probe_every=0,
                          activation="linear", loss=LossConfig(gamma=0.0))
        ranks.append(feature_rank(train(toy_world, cfg).params, toy_world, tol=1e-6))
    k = toy_world.config.n_classes
    deficient = sum(r < k for r in ranks)
    ok = deficient >= 3
    acceptance_log("8b gamma=0 rank < clusters in >= 3 of 5 seeds", ok,
                   f"ranks={ranks} deficient={deficient}/5 [{time.perf_counter() - t0:.1f}s]")
    assert ok, ranks


def _run_twice(tmp_path, argv, names):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{argv[0]}_{tag}"
        assert main(argv + ["--out", str(out)]) == 0
        outs.append({n: (out / n).read_bytes() for n in names})
    return outs[0] == outs[1]


def test_c9_determinism(acceptance_log, tmp_path):
    small = ["--set", "world.identities_per_class=4", "--set", "train.batch_size=8",
             "--set", "train.epochs=2"]
    results = {
        "train": _run_twice(tmp_path, ["train", "--seed", "5", "--set", "loss.use_rff=true"] + small,
                            ["metrics.csv", "summary.json", "checkpoint.npz"]),
        "ablate": _run_twice(tmp_path, ["ablate", "--seed", "5"] + small,
                             ["ablate.csv", "ablate_summary.json"]),
        "verify": _run_twice(tmp_path, ["verify", "bounds", "--seed", "5"], ["verify_bounds.json"]),
    }
    ok = all(results.values())
    acceptance_log("9 byte-identical repeat runs (bench timings exempt)", ok, str(results))
    assert ok, results
