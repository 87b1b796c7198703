"""Command-line entry point: ``kernel-robust <subcommand> [options]``.

Exit codes: 0 when every verdict holds, 1 when a verdict fails, 2 on input
errors.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import scenarios
from .config import ConfigError, ScenarioConfig, default_config
from .data_io import DataError, read_config, write_report_csv
from .estimators import EstimatorError
from .kernels import Kernel, KernelError, check_derivatives, random_pairs
from .perturbation import (PerturbationError, measure_bound_scaling, random_instance,
                           second_order_residual)

EXIT_OK, EXIT_VERDICT, EXIT_INPUT = 0, 1, 2
MNIST_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class InputError(Exception):
    pass


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _add_common(p: argparse.ArgumentParser, out_default: str):
    p.add_argument("--config", type=Path, help="TOML scenario config")
    p.add_argument("--lambda-grid", type=_grid, help="comma-separated regularization values")
    p.add_argument("--epsilon", type=float, help="perturbation size")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--reps", type=int, help="repetitions")
    p.add_argument("--out", type=Path, default=Path(out_default), help="CSV output path")
    p.add_argument("--plot", type=Path, help="optional SVG chart path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernel-robust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="lambda sweep on synthetic sphere data")
    _add_common(p, "sweep.csv")
    p.add_argument("--setting", type=int, choices=(1, 2), default=1)

    p = sub.add_parser("two-point", help="two close training points")
    _add_common(p, "two_point.csv")
    p.add_argument("--r", type=float, help="distance between the points")
    p.add_argument("--estimator", choices=("adversarial", "augmented"))

    p = sub.add_parser("quadratic", help="quadratic kernel with x_i = e_i")
    _add_common(p, "quadratic.csv")

    p = sub.add_parser("mnist", help="binary MNIST digit pair")
    _add_common(p, "mnist.csv")
    p.add_argument("--mnist-dir", type=Path, help="directory with the four IDX files")
    p.add_argument("--digits", type=int, nargs=2)

    p = sub.add_parser("adv-train", help="adversarial gradient descent trajectories")
    _add_common(p, "adv_train.csv")
    p.add_argument("--snapshots", choices=("metrics", "full"), default="metrics")

    p = sub.add_parser("verify-lemma", help="scaling checks for perturbed ridge systems")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", type=Path, default=Path("lemma.csv"))

    p = sub.add_parser("check-derivatives", help="analytic vs finite-difference kernel derivatives")
    p.add_argument("--kernel", choices=("gaussian", "quadratic", "linear"), default="gaussian")
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--a1", type=float, default=1.0)
    p.add_argument("--a2", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    return parser


def _config(args, scenario: str, setting: int = 1) -> ScenarioConfig:
    cfg = read_config(args.config) if args.config else default_config(scenario, setting)
    if cfg.scenario != scenario:
        raise InputError(f"config is for scenario {cfg.scenario!r}, not {scenario!r}")
    changes = {"lambda_grid": args.lambda_grid, "eps": args.epsilon, "seed": args.seed, "reps": args.reps}
    for name in ("r", "estimator"):
        if hasattr(args, name):
            changes[name] = getattr(args, name)
    if getattr(args, "digits", None):
        changes["digits"] = list(args.digits)
    return cfg.updated(**changes)


def _mnist_paths(args, cfg: ScenarioConfig) -> ScenarioConfig:
    if args.mnist_dir is not None:
        found = {}
        for key, stem in MNIST_NAMES.items():
            for name in (stem, stem + ".gz"):
                if (args.mnist_dir / name).is_file():
                    found[key] = str(args.mnist_dir / name)
                    break
        cfg = cfg.updated(**found)
    missing = [MNIST_NAMES[k] for k in ("train_images", "train_labels") if not getattr(cfg, k)]
    if missing:
        raise InputError(f"missing MNIST file(s): {', '.join(missing)} (use --mnist-dir or the config)")
    for key in MNIST_NAMES:
        path = getattr(cfg, key)
        if path and not Path(path).is_file():
            raise InputError(f"missing MNIST file: {path}")
    return cfg


def _write_verdicts(report, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "verdict", "passed", "margin", "detail"])
        for v in report.verdicts:
            w.writerow([report.scenario, v.name, int(bool(v.passed)), format(float(v.margin), ".17g"), v.detail])


def _plot(report, path: Path):
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    agg = report.aggregates
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key in zip(axes, ("mse", "lip")):
        if "checkpoints" in agg:
            ax.plot(agg["checkpoints"], agg[key], marker="o", label="adversarial")
            ax.set_xlabel("iteration")
        elif "augmented" in agg:
            lams = report.config.lambda_grid
            ax.plot(lams, agg["augmented"][key], marker="o", label="augmented")
            ax.plot(lams, agg["standard"][key], marker="s", label="standard")
            ax.set_xlabel("lambda")
        else:
            rows = [r for r in report.records if r["lambda"] > 0]
            ax.plot([r["lambda"] for r in rows], [r[key] for r in rows], marker="o", label="limit")
            ax.set_xlabel("lambda")
        ax.set_xscale("log")
        ax.set_title(key)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _run_scenario(args, cfg: ScenarioConfig, snapshots: str = "metrics") -> int:
    if snapshots == "full":
        report = scenarios.run_adv_iterations(cfg, snapshots="full")
        np.savez(args.out.with_suffix(".snapshots.npz"),
                 **{f"rep{k}_it{it}": c for k, traj in report.aggregates.pop("snapshots").items()
                    for it, c in traj})
    else:
        report = scenarios.run(cfg)
    write_report_csv(report, args.out)
    _write_verdicts(report, args.out.with_suffix(".verdicts.csv"))
    if report.table:
        print(report.table)
    if report.excluded:
        print(f"excluded {report.excluded} diverged repetition(s)")
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name} margin={v.margin:.4g} {v.detail}")
    if getattr(args, "plot", None):
        _plot(report, args.plot)
    return EXIT_OK if report.passed else EXIT_VERDICT


def _verify_lemma(args) -> int:
    rows, ok = [], True
    eps_b = [0.1 / 2 ** k for k in range(4)]
    eps_a = [1e-2 / 2 ** k for k in range(3)]
    for i in range(args.reps):
        rng = np.random.default_rng(scenarios.cell_seed(args.seed, i))
        inst_b = random_instance(12, 8, 4, rng, orthogonal=True)
        rep_b = measure_bound_scaling(inst_b, eps_b, lambda e: e * e, second_order_residual)
        inst_a = random_instance(12, 8, 4, rng)
        rep_a = measure_bound_scaling(inst_a, eps_a, lambda e: 1e-2)
        ok &= rep_b.exact or rep_b.slope >= 1.8
        ok &= rep_a.exact or rep_a.slope >= 0.8
        rows += [("second_order", i, *r) for r in rep_b.rows()]
        rows += [("first_order", i, *r) for r in rep_a.rows()]
        print(f"instance {i}: second-order slope {rep_b.slope:.3f}, first-order slope {rep_a.slope:.3f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["part", "instance", "eps", "lambda", "deviation", "slope"])
        for part, i, e, l, d, s in rows:
            w.writerow([part, i] + [format(v, ".17g") for v in (e, l, d, s)])
    return EXIT_OK if ok else EXIT_VERDICT


def _check_derivatives(args) -> int:
    if args.kernel == "gaussian":
        ker = Kernel.gaussian(args.p, args.gamma)
    elif args.kernel == "quadratic":
        ker = Kernel.quadratic(args.p, args.a1, args.a2)
    else:
        ker = Kernel.linear(args.p)
    pairs = random_pairs(args.p, args.samples, np.random.default_rng(args.seed), scale=0.5)
    rep = check_derivatives(ker, pairs, tol=args.tol)
    print(f"max deviation {rep.max_dev:.3e} (gradient {rep.max_grad_dev:.3e}, "
          f"mixed second {rep.max_hess_dev:.3e}) over {rep.n_pairs} pairs, tol {rep.tol:g}")
    return EXIT_OK if rep.passed else EXIT_VERDICT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.command == "check-derivatives":
            return _check_derivatives(args)
        if args.command == "verify-lemma":
            return _verify_lemma(args)
        if args.command == "sweep":
            return _run_scenario(args, _config(args, "generic", args.setting))
        if args.command == "two-point":
            return _run_scenario(args, _config(args, "two_point"))
        if args.command == "quadratic":
            return _run_scenario(args, _config(args, "quadratic"))
        if args.command == "mnist":
            return _run_scenario(args, _mnist_paths(args, _config(args, "mnist")))
        if args.command == "adv-train":
            return _run_scenario(args, _config(args, "adv_train"), args.snapshots)
    except (InputError, ConfigError, DataError, KernelError, EstimatorError, PerturbationError,
            scenarios.ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
