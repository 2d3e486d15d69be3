"""Command-line entry point for the benchmark harness.

Subcommands:
  truth     compute and persist the high-resolution reference value(s)
  forward   run a forward-problem MSE-versus-cost sweep and render the plot
  filter    run a filtering sweep and render the plot
  plot      re-render an SVG from an existing points.csv
  selftest  fast internal consistency checks
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

__all__ = ["main"]


def _add_common(parser):
    parser.add_argument("--config", help="INI config file path")
    parser.add_argument("--preset", help="named preset configuration")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (0 or unset leaves the default)")


def _resolve_config(args, want_problem=None):
    from .bench import ExperimentConfig, config_from_file, preset_config
    if args.config and args.preset:
        raise SystemExit("give either --config or --preset, not both")
    if args.config:
        config = config_from_file(args.config)
    elif args.preset:
        config = preset_config(args.preset)
    else:
        config = ExperimentConfig()
    from dataclasses import replace
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out:
        config = replace(config, out_dir=args.out)
    if want_problem and config.problem != want_problem:
        config = replace(config, problem=want_problem)
    return config


def _apply_threads(threads):
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _cmd_truth(args) -> int:
    from .bench import make_ground_truth, truth_path
    config = _resolve_config(args)
    record = make_ground_truth(config)
    target = record.get("value", record.get("values"))
    print(f"ground truth written to {truth_path(config)}")
    print(f"reference: {target}")
    return 0


def _cmd_sweep(args, problem: str) -> int:
    from .bench import load_ground_truth, make_ground_truth, run_experiment
    from .plots import emit_plot
    config = _resolve_config(args, want_problem=problem)
    try:
        truth = load_ground_truth(config)
    except FileNotFoundError:
        print("ground truth missing; computing it now", file=sys.stderr)
        truth = make_ground_truth(config)
    rows, rates = run_experiment(config, truth)
    for row in rows:
        print(f"{row['method']:>8s} {row['grid']:>10s}  mse={row['mse']:.4e}  "
              f"cost={row['cost']:.4e}")
    for method, slope in rates.slopes.items():
        print(f"rate[{method}] = {slope:.3f}  (R^2 = {rates.r2[method]:.4f})")
    svg = os.path.join(config.out_dir, f"{problem}_{config.model}.svg")
    emit_plot(os.path.join(config.out_dir, "points.csv"), svg,
              title=f"{problem} / {config.model}")
    print(f"plot written to {svg}")
    return 0


def _cmd_plot(args) -> int:
    from .plots import emit_plot
    out = args.out or os.path.dirname(os.path.abspath(args.points)) or "."
    svg = os.path.join(out, "points.svg")
    emit_plot(args.points, svg)
    print(f"plot written to {svg}")
    return 0


def _cmd_selftest(args) -> int:
    from .filtering import maximal_coupling_sample
    from .models import build_fhn, build_linear_ou
    from .noise import NoiseStream, aggregate_coarse, build_eta, sample_coarse_step
    from .schemes import SchemeKind, simulate_path

    seed = args.seed if args.seed is not None else 0
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    stream = NoiseStream(seed, ("selftest",))
    step = sample_coarse_step(stream, 0.125, 1, True, n_samples=1000)
    agg = aggregate_coarse(step.fine_first, step.fine_second)
    check("coarse noise aggregation exact",
          np.allclose(agg.db, step.coarse.db) and
          np.allclose(agg.time_int, step.coarse.time_int))
    eta = build_eta(step.coarse)
    check("eta integration-by-parts identity",
          np.allclose(eta.eta[..., 0, 1] + eta.eta[..., 1, 0],
                      0.25 * step.coarse.db[..., 0]))

    ou = build_linear_ou([[-1.0]], [[0.5]])
    x = simulate_path(ou, SchemeKind.WEAK2, [1.0], 6, 1.0,
                      NoiseStream(seed, ("selftest-ou",)), n_samples=20000)
    err = abs(x[:, 0].mean() - ou.oracle.mean([1.0], 1.0)[0])
    check("weak-2 matches the analytic linear mean", err < 0.02)

    fhn = build_fhn()
    y = simulate_path(fhn, SchemeKind.WEAK2, [0.0, 0.0], 8, 1.0,
                      NoiseStream(seed, ("selftest-fhn",)), n_samples=100)
    check("FHN path stays finite", bool(np.all(np.isfinite(y))))

    w1 = np.array([0.5, 0.5])
    w2 = np.array([0.25, 0.75])
    u = NoiseStream(seed, ("selftest-mc",)).uniforms(20000, 3)
    i1, i2 = maximal_coupling_sample(w1, w2, u)
    check("maximal coupling meeting probability",
          abs(np.mean(i1 == i2) - 0.75) < 0.02)

    print(f"{'OK' if failures == 0 else 'FAILED'} ({failures} failures)")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="amlmc",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("truth", "forward", "filter", "selftest"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("plot")
    _add_common(p)
    p.add_argument("points", help="points.csv produced by a sweep")
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    if args.command == "truth":
        return _cmd_truth(args)
    if args.command == "forward":
        return _cmd_sweep(args, "forward")
    if args.command == "filter":
        return _cmd_sweep(args, "filter")
    if args.command == "plot":
        return _cmd_plot(args)
    return _cmd_selftest(args)


if __name__ == "__main__":
    sys.exit(main())
