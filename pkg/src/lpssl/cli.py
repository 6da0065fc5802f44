"""Command-line front end: ``lpssl {gen-data,train,sweep,analyze}``.

A run is described by a JSON config::

    {
      "dataset": {"generator": "cluster", "K": 4, "input_dim": 2, "seed": 0},
      "data_dir": "data/k4",
      "output_dir": "runs/k4",
      "train": {"prior": "lp", "lambda": 0.01, "epochs": 100},
      "lambdas": {"minent": 0.1}
    }

Relative paths are resolved against the directory holding the config file.
Exit codes: 0 success, 2 config error, 3 I/O or parse error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import inspect
import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, analysis, datasets, trainer
from .datasets import DatasetFormatError
from .relaxation import RelaxConfig
from .weights import WeightFormatError, load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

GENERATORS = {"cluster": datasets.gen_cluster_classification,
              "attributes": datasets.gen_attribute_task}
REQUIRED_KEYS = ("dataset", "data_dir", "output_dir")
OPTIONAL_KEYS = ("train", "lambdas")


class ConfigError(ValueError):
    """The run config is malformed; reported with exit code 2."""


@dataclass
class RunConfig:
    dataset: dict
    data_dir: Path
    output_dir: Path
    train: trainer.TrainConfig
    lambdas: dict
    raw: dict

    @property
    def generator(self) -> str:
        return self.dataset["generator"]

    def generator_kwargs(self) -> dict:
        return {k: v for k, v in self.dataset.items() if k != "generator"}


def _check_keys(section: str, got: dict, allowed, required=()) -> None:
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: expected a JSON object")
    missing = [k for k in required if k not in got]
    if missing:
        raise ConfigError(f"{section}: missing required key {missing[0]!r}")
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown key {unknown[0]!r}")


def _train_config(section: dict, task: str) -> trainer.TrainConfig:
    names = {f.name for f in fields(trainer.TrainConfig)} - {"lam", "task"}
    _check_keys("train", section, names | {"lambda"})
    kwargs = {k: v for k, v in section.items() if k != "lambda"}
    if "lambda" in section:
        kwargs["lam"] = section["lambda"]
    if "relaxation" in kwargs:
        relax_names = {f.name for f in fields(RelaxConfig)}
        _check_keys("train.relaxation", kwargs["relaxation"], relax_names)
    try:
        return trainer.TrainConfig(task=task, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


def parse_run_config(raw: dict, base_dir=".") -> RunConfig:
    """Validate a decoded JSON config; unknown keys are rejected at every level."""
    _check_keys("config", raw, REQUIRED_KEYS + OPTIONAL_KEYS, REQUIRED_KEYS)
    ds = raw["dataset"]
    _check_keys("dataset", ds, ("generator",) + tuple(
        inspect.signature(GENERATORS.get(ds.get("generator") if isinstance(ds, dict) else None,
                                         lambda: None)).parameters), ("generator",))
    if ds["generator"] not in GENERATORS:
        raise ConfigError(f"dataset: unknown generator {ds['generator']!r}; "
                          f"expected one of {sorted(GENERATORS)}")
    task = "classification" if ds["generator"] == "cluster" else "attributes"
    cfg = _train_config(raw.get("train", {}), task)
    lambdas = raw.get("lambdas", {})
    _check_keys("lambdas", lambdas, trainer.PRIORS)
    base = Path(base_dir)
    return RunConfig(dict(ds), base / raw["data_dir"], base / raw["output_dir"], cfg,
                     {k: float(v) for k, v in lambdas.items()}, raw)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_run_config(raw, path.parent)


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# -- commands --------------------------------------------------------------

def cmd_gen_data(run: RunConfig) -> int:
    try:
        bundle = GENERATORS[run.generator](**run.generator_kwargs())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    datasets.save_bundle(bundle, run.data_dir)
    print(f"wrote {run.generator} dataset to {run.data_dir} {bundle.sizes()}")
    return EXIT_OK


def _run_name(cfg: trainer.TrainConfig) -> str:
    return f"{cfg.prior}-lambda{cfg.lam:g}-seed{cfg.seed}"


def execute_run(cfg: trainer.TrainConfig, bundle, out_dir, version: str) -> trainer.TrainResult:
    """Train one configuration and write its self-describing run directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = trainer.train_bundle(cfg, bundle)
    resolved = {"train": cfg.to_dict(), "dataset": bundle.config}
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    (out_dir / "seed").write_text(f"{cfg.seed}\n")
    (out_dir / "version.txt").write_text(version + "\n")
    trainer.write_metrics_csv(out_dir / "metrics.csv", result.history)
    save_model(out_dir / "base.lpsw", result.base)
    save_model(out_dir / "flow.lpsw", result.flow)
    return result


def _load_data(run: RunConfig):
    if not (run.data_dir / "config.json").exists():
        raise FileNotFoundError(f"{run.data_dir}: no dataset found; run gen-data first")
    return datasets.load_bundle(run.data_dir, hidden=False)


def cmd_train(run: RunConfig, prior=None, lam=None, seed=None) -> int:
    overrides = {k: v for k, v in (("prior", prior), ("lam", lam), ("seed", seed)) if v is not None}
    try:
        cfg = trainer.TrainConfig(**{**run.train.__dict__, **overrides})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bundle = _load_data(run)
    out = run.output_dir / _run_name(cfg)
    result = execute_run(cfg, bundle, out, version_string())
    print(f"{_run_name(cfg)}: test accuracy {result.final.acc_test:.4f} -> {out}")
    return EXIT_OK


def _sweep_runner(cfg, bundle, root, version):
    return execute_run(cfg, bundle, Path(root) / _run_name(cfg), version)


def cmd_sweep(run: RunConfig, priors=None, n_seeds: int = 5) -> int:
    if n_seeds < 2:
        raise ConfigError("--seeds must be >= 2")
    priors = priors or list(trainer.PRIORS)
    unknown = [p for p in priors if p not in trainer.PRIORS]
    if unknown:
        raise ConfigError(f"unknown prior {unknown[0]!r}")
    bundle = _load_data(run)
    try:
        threads = max(1, int(os.environ.get("RUN_THREADS", "1")))
    except ValueError:
        raise ConfigError("RUN_THREADS must be an integer") from None
    runner = partial(_sweep_runner, bundle=bundle, root=run.output_dir,
                     version=version_string())
    run.output_dir.mkdir(parents=True, exist_ok=True)
    if threads == 1:
        rows = trainer.sweep(run.train, bundle, priors, n_seeds, run.lambdas, runner)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = trainer.sweep(run.train, bundle, priors, n_seeds, run.lambdas, runner,
                                 mapper=pool.map)
    trainer.write_summary_csv(run.output_dir / "summary.csv", rows)
    for r in rows:
        print(f"{r['prior']:>9s} lambda={r['lambda']:g}: "
              f"{100 * r['mean_acc']:.2f} +- {100 * r['stderr_acc']:.2f}")
    return EXIT_OK


def _point(text, dim: int) -> np.ndarray:
    v = np.array([float(t) for t in text.split(",")])
    if len(v) != dim:
        raise ConfigError(f"point {text!r} has {len(v)} coordinates, flow has {dim}")
    return v


def _choices_sidecar(out: Path, choices: dict) -> None:
    out.with_name(out.name + ".json").write_text(json.dumps(choices, indent=2, sort_keys=True)
                                                 + "\n")


def cmd_analyze(args) -> int:
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    if args.kl and args.self_test:
        ref = analysis.DirichletMixture(args.K, args.alpha_hot, args.alpha_cold, args.jitter)
        kl = analysis.kl_divergence(ref, ref, args.n_samples, rng)
        analysis._write_rows(out, ("kl", "n_samples"), [(kl, args.n_samples)])
        print(f"kl(self) = {kl:g}")
        return EXIT_OK
    if args.flow is None:
        raise ConfigError("analyze needs --flow unless running --kl --self-test")
    flow = load_model(args.flow)
    if not hasattr(flow, "inverse"):
        raise WeightFormatError(f"{args.flow}: not a flow model")
    d = flow.dim
    if args.slice is not None:
        i, j = args.slice
        if not (0 <= i < d and 0 <= j < d) or i == j:
            raise ConfigError(f"--slice needs two distinct vertex indices in [0, {d})")
        a = analysis.class_vertex(i, d, args.alpha_hot, args.alpha_cold)
        b = analysis.class_vertex(j, d, args.alpha_hot, args.alpha_cold)
        sl = analysis.slice_density(flow, a, b, args.n_points, args.alpha_hot, args.alpha_cold)
        sl.to_csv(out)
        print(f"slice {i}->{j}: pearson(log) = {sl.correlation():.3f}")
    elif args.latent_interp:
        t1 = _point(args.theta1, d) if args.theta1 else analysis.class_vertex(0, d)
        t2 = _point(args.theta2, d) if args.theta2 else analysis.class_vertex(1 % d, d)
        probe = analysis.latent_interpolate(flow, t1, t2, args.n_points)
        probe.to_csv(out)
        _choices_sidecar(out, {"theta1": t1.tolist(), "theta2": t2.tolist(),
                               "linear_fallback": probe.linear_fallback})
    elif args.latent_scale:
        # without --theta, a random simplex point drawn from the seed
        theta = _point(args.theta1, d) if args.theta1 else rng.dirichlet(np.ones(d))
        probe = analysis.latent_scale(flow, theta, np.linspace(0.0, 3.0, args.n_points))
        probe.to_csv(out)
        _choices_sidecar(out, {"theta": theta.tolist(), "seed": args.seed})
    elif args.kl:
        kl = analysis.kl_flow_vs_analytic(flow, d, args.alpha_hot, args.alpha_cold,
                                          args.n_samples, rng, args.jitter)
        analysis._write_rows(out, ("kl", "n_samples"), [(kl, args.n_samples)])
        print(f"kl(analytic || flow) = {kl:.4f}")
    else:
        stats = analysis.typical_set_stats(flow, args.n_samples, rng)
        stats.to_csv(out)
        print(f"d={stats.dim}: mean |z| = {stats.mean_norm:.3f} (sqrt d = {stats.reference:.3f})")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpssl",
                                description="Semi-supervised learning with a learned flow prior")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("config")

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("config")
    t.add_argument("--prior", choices=trainer.PRIORS)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--seed", type=int)

    s = sub.add_parser("sweep", help="train several priors over seeds 0..n-1")
    s.add_argument("config")
    s.add_argument("--priors", type=lambda v: [x for x in v.split(",") if x],
                   help="comma-separated list (default: all)")
    s.add_argument("--seeds", type=int, default=5)

    a = sub.add_parser("analyze", help="inspect a trained flow")
    mode = a.add_mutually_exclusive_group(required=True)
    mode.add_argument("--slice", nargs=2, type=int, metavar=("I", "J"))
    mode.add_argument("--latent-interp", action="store_true")
    mode.add_argument("--latent-scale", action="store_true")
    mode.add_argument("--kl", action="store_true")
    mode.add_argument("--typical", action="store_true")
    a.add_argument("--flow", help="flow weight file (with its .json sidecar)")
    a.add_argument("--out", required=True, help="CSV output path")
    a.add_argument("--self-test", action="store_true",
                   help="with --kl: compare the analytic mixture with itself")
    a.add_argument("--theta1")
    a.add_argument("--theta2")
    a.add_argument("--n-points", type=int, default=101)
    a.add_argument("--n-samples", type=int, default=10_000)
    a.add_argument("--K", type=int, default=3, help="classes for --kl --self-test")
    a.add_argument("--alpha-hot", type=float, default=120.0)
    a.add_argument("--alpha-cold", type=float, default=1.1)
    a.add_argument("--jitter", type=float, default=1e-3)
    a.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args)
        run = load_run_config(args.config)
        if args.command == "gen-data":
            return cmd_gen_data(run)
        if args.command == "train":
            return cmd_train(run, args.prior, args.lam, args.seed)
        return cmd_sweep(run, args.priors, args.seeds)
    except ConfigError as exc:
        print(f"lpssl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError, WeightFormatError) as exc:
        print(f"lpssl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except trainer.NumericalError as exc:
        print(f"lpssl: numerical failure in {exc.term} term: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"lpssl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
