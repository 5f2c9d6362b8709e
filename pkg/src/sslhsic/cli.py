"""Command-line runner: ``sslhsic {verify,train,bench,ablate}``.

Configs are flat ``section.key=value`` text files (``#`` comments allowed);
``--set section.key=value`` overrides them.  Every report carries the fully
resolved config and the library version.  Exit codes: 0 success, 1 a check
failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .harness import WorldConfig, world_from_config
from .objectives import LossConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class BenchConfig:
    max_batch: int = 4096
    rff_dims: int = 512
    repetitions: int = 5
    feature_dim: int = 128
    views: int = 2
    kernel: str = "imq"

    def __post_init__(self):
        if self.max_batch < 64:
            raise ValueError("max_batch must be >= 64")
        if self.repetitions < 1 or self.rff_dims < 1 or self.feature_dim < 1:
            raise ValueError("repetitions, rff_dims and feature_dim must be positive")
        if self.views < 2 or 64 % self.views:
            raise ValueError("views must be >= 2 and divide 64")


@dataclasses.dataclass
class AblateConfig:
    seeds: tuple = (0, 1, 2)
    objectives: tuple = ("ssl_hsic", "infonce")

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.objectives = tuple(self.objectives)
        if len(set(self.seeds)) < 3:
            raise ValueError("need at least 3 distinct seeds")
        for o in self.objectives:
            LossConfig(objective=o)


def _train_fields():
    from .learner import TrainConfig
    return TrainConfig


SECTIONS = {
    "world": WorldConfig,
    "loss": LossConfig,
    "train": None,  # TrainConfig minus ``loss``; resolved lazily
    "bench": BenchConfig,
    "ablate": AblateConfig,
}


def _section_class(name):
    return _train_fields() if name == "train" else SECTIONS[name]


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_assignments(lines, source="<config>"):
    """``section.key=value`` lines into ``{section: {key: raw}}``."""
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected section.key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{n}: key {key!r} needs a section prefix")
        section, field = key.split(".", 1)
        out.setdefault(section, {})[field] = value
    return out


def resolve_config(assignments: dict, seed: int | None = None) -> dict:
    """Validated config objects for every section."""
    unknown = set(assignments) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    resolved = {}
    for section in SECTIONS:
        cls = _section_class(section)
        fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "loss"}
        defaults = cls() if section != "train" else None
        values = {}
        for key, raw in assignments.get(section, {}).items():
            if key not in fields:
                raise ConfigError(f"{section}.{key}: unknown field")
            default = getattr(defaults, key) if defaults is not None else _train_default(key)
            values[key] = _coerce(raw, default, f"{section}.{key}")
        if section == "train":
            if seed is not None:
                values["seed"] = seed
            values["loss"] = resolved["loss"]
        try:
            resolved[section] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    return resolved


def _train_default(key):
    return getattr(_train_fields()(), key)


def config_to_dict(resolved: dict) -> dict:
    out = {}
    for section, obj in resolved.items():
        d = dataclasses.asdict(obj)
        d.pop("loss", None)
        out[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    return out


def load_config(path, overrides, seed=None):
    lines = []
    if path:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    assignments = parse_assignments(lines, str(path or "<config>"))
    for k, v in parse_assignments(overrides or [], "--set").items():
        assignments.setdefault(k, {}).update(v)
    return resolve_config(assignments, seed)


# ---------------------------------------------------------------------------
# output helpers


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n",
                    encoding="utf-8")


def write_csv(path: Path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _clean(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _report(command, resolved, body):
    return {"command": command, "version": __version__,
            "config": config_to_dict(resolved), **body}


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args, resolved, out: Path):
    from .verification import run_suite

    checks = run_suite(args.suite, seed=args.seed or 0)
    for c in checks:
        print(c.line())
    passed = all(c.passed for c in checks)
    report = _report("verify", resolved, {
        "suite": args.suite,
        "seed": args.seed or 0,
        "passed": passed,
        "checks": sorted((c.to_dict() for c in checks), key=lambda d: d["name"]),
    })
    write_json(out / f"verify_{args.suite}.json", report)
    return EXIT_OK if passed else EXIT_FAIL


METRIC_COLUMNS = ("step", "epoch", "loss", "hsic_zy", "hsic_zz", "kernel_param", "probe_accuracy")


def cmd_train(args, resolved, out: Path):
    from .learner import save_checkpoint, train

    world = world_from_config(resolved["world"])
    cfg = resolved["train"]
    result = train(world, cfg)
    probe_at = {e["step"]: e.get("probe_accuracy") for e in result.epochs}
    rows = []
    for s in result.steps:
        row = dict(s)
        if s["step"] in probe_at:
            row["probe_accuracy"] = probe_at[s["step"]]
        rows.append(row)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    save_checkpoint(out / "checkpoint.npz", result.params, cfg)
    last = result.steps[-1] if result.steps else {}
    summary = _report("train", resolved, {
        "steps": len(result.steps),
        "final_loss": _clean(last.get("loss")),
        "final_hsic_zy": _clean(last.get("hsic_zy")),
        "final_hsic_zz": _clean(last.get("hsic_zz")),
        "final_probe_accuracy": result.epochs[-1].get("probe_accuracy") if result.epochs else None,
        "num_parameters": result.params.num_parameters,
    })
    write_json(out / "summary.json", summary)
    print(f"trained {len(result.steps)} steps; final probe accuracy "
          f"{summary['final_probe_accuracy']}")
    return EXIT_OK


def bench_sizes(max_batch):
    sizes, bm = [], 64
    while bm <= max_batch:
        sizes.append(bm)
        bm *= 2
    return sizes


def run_bench(bc: BenchConfig, seed=0):
    """Median wall times of the exact and RFF HSIC estimator pairs."""
    from threadpoolctl import threadpool_limits

    from .estimators import (SslBatchFeatures, hsic_zy_biased, hsic_zy_rff, hsic_zz_biased,
                             hsic_zz_rff)
    from .kernels import KernelSpec
    from .objectives import draw_rff_pair

    spec = KernelSpec(bc.kernel, 1.0)
    rng = np.random.default_rng(seed)
    b1, b2 = draw_rff_pair(spec, bc.feature_dim, bc.rff_dims, (seed,))
    methods = {
        "exact": lambda b: (hsic_zy_biased(b, spec), hsic_zz_biased(b, spec)),
        "rff": lambda b: (hsic_zy_rff(b, b1), hsic_zz_rff(b, b1, b2)),
    }
    rows = []
    with threadpool_limits(limits=1):
        for bm in bench_sizes(bc.max_batch):
            B = bm // bc.views
            f = rng.standard_normal((B, bc.views, bc.feature_dim))
            batch = SslBatchFeatures(f / np.linalg.norm(f, axis=-1, keepdims=True), B)
            for name, fn in methods.items():
                fn(batch)  # warm-up
                times = []
                for _ in range(bc.repetitions):
                    t0 = time.perf_counter()
                    fn(batch)
                    times.append(time.perf_counter() - t0)
                rows.append({"bm": bm, "method": name,
                             "d": bc.rff_dims if name == "rff" else None,
                             "median_seconds": float(np.median(times))})
    slopes = {}
    for name in methods:
        pts = [(r["bm"], r["median_seconds"]) for r in rows if r["method"] == name]
        x, y = zip(*pts)
        slopes[name] = float(np.polyfit(np.log(x), np.log(y), 1)[0])
    return rows, slopes


def cmd_bench(args, resolved, out: Path):
    bc = resolved["bench"]
    rows, slopes = run_bench(bc, seed=args.seed or 0)
    write_csv(out / "bench.csv", ("bm", "method", "d", "median_seconds"), rows)
    write_json(out / "bench_summary.json", _report("bench", resolved, {"slopes": slopes}))
    for name, s in slopes.items():
        print(f"{name}: log-log slope {s:.3f}")
    return EXIT_OK


def cmd_ablate(args, resolved, out: Path):
    from .learner import probe_accuracy, train

    world = world_from_config(resolved["world"])
    base = resolved["train"]
    ab = resolved["ablate"]
    rows = []
    for objective in ab.objectives:
        for seed in ab.seeds:
            loss = dataclasses.replace(base.loss, objective=objective)
            cfg = dataclasses.replace(base, seed=seed, loss=loss)
            result = train(world, cfg)
            # probe the final weights directly so probe_every cannot leave gaps
            rows.append({"objective": objective, "seed": seed,
                         "probe_accuracy": probe_accuracy(result.params, world, seed),
                         "final_loss": result.steps[-1]["loss"] if result.steps else None})
    write_csv(out / "ablate.csv", ("objective", "seed", "probe_accuracy", "final_loss"), rows)
    means = {o: float(np.mean([r["probe_accuracy"] for r in rows if r["objective"] == o]))
             for o in ab.objectives}
    write_json(out / "ablate_summary.json", _report("ablate", resolved, {
        "mean_probe_accuracy": means, "rows": rows}))
    for o, m in means.items():
        print(f"{o}: mean probe accuracy {m:.4f}")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "bench": cmd_bench, "ablate": cmd_ablate}


def build_parser():
    from .verification import SUITES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat section.key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override one config entry (repeatable)")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", default="out", help="output directory")
    p = argparse.ArgumentParser(prog="sslhsic", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite", choices=SUITES + ("all",))
    sub.add_parser("train", parents=[common], help="train on the toy world")
    sub.add_parser("bench", parents=[common], help="time exact vs RFF estimators")
    sub.add_parser("ablate", parents=[common], help="SSL-HSIC vs InfoNCE over seeds")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        resolved = load_config(args.config, args.set, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](args, resolved, out)


if __name__ == "__main__":
    sys.exit(main())
