"""Command-line front end.

Verbs:
    pipeline     run the full stage graph for a configuration
    verify       run the invariant suite, nonzero exit on any violation
    simulate     one closed-loop run for a chosen (alpha, r, t_c) cell
    solve-mateq  matrix-equation stage only, printing solver reports
    pod          snapshot and reduction stages only, printing the spectrum

All verbs take ``--config``; ``--out`` overrides the configured output
directory, ``--jobs`` bounds the worker pool, and ``--stage`` stops the
pipeline after a named stage.  The XSDRE_CACHE_DIR environment variable
relocates stage artifacts away from the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .pipeline import Pipeline, StageError, manifest_hash, _slug
from .sim import run, stabilized
from .verify import run_verify


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xsdre",
        description="Truncated SDRE feedback design for quadratic systems.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, metavar="PATH",
                       help="configuration file")
        p.add_argument("--out", metavar="DIR",
                       help="override the configured output directory")
        p.add_argument("--jobs", type=int, default=1, metavar="K",
                       help="worker pool size for independent cells")

    p = sub.add_parser("pipeline", help="run the full study")
    common(p)
    p.add_argument("--stage", metavar="NAME",
                   help=f"stop after this stage ({', '.join(Pipeline.ORDER)})")

    p = sub.add_parser("verify", help="run the invariant suite")
    common(p)

    p = sub.add_parser("simulate", help="one closed-loop run")
    common(p)
    p.add_argument("--alpha", type=float, default=None,
                   help="control penalty (default: first configured)")
    p.add_argument("--order", type=int, default=0, metavar="R",
                   help="expansion order of the feedback law")
    p.add_argument("--t-c", type=float, default=None, dest="t_c",
                   help="switch-on time (default: first configured)")

    p = sub.add_parser("solve-mateq", help="matrix-equation solves only")
    common(p)
    p.add_argument("--alpha", type=float, default=None,
                   help="solve for this penalty only")

    p = sub.add_parser("pod", help="snapshot and reduction stages only")
    common(p)
    return parser


def _configure(args):
    cfg = load_config(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out))
    return cfg


def cmd_pipeline(args) -> int:
    cfg = _configure(args)
    pipe = Pipeline(cfg, jobs=args.jobs)
    manifest = pipe.run(upto=args.stage)
    if manifest:
        print(f"summary: {cfg.out_dir / 'summary.csv'}")
        print(f"manifest: {cfg.out_dir / 'manifest.json'} "
              f"({manifest_hash(cfg.out_dir)[:16]})")
    return 0


def cmd_verify(args) -> int:
    cfg = _configure(args)
    results = run_verify(cfg)
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"{len(failures)} violation(s):")
        for r in failures:
            print(f"  {r.name}: measured {r.measured:.6e} exceeds "
                  f"tolerance {r.tolerance:.6e}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_simulate(args) -> int:
    cfg = _configure(args)
    alpha = args.alpha if args.alpha is not None else cfg.alphas[0]
    if alpha not in cfg.alphas:
        raise ConfigError(f"alpha {alpha:g} is not configured "
                          f"(have {list(cfg.alphas)})")
    if args.t_c is not None:
        t_c = args.t_c
    elif cfg.t_c_list:
        t_c = cfg.t_c_list[0]
    else:
        t_c = cfg.bisect[0]
    pipe = Pipeline(cfg, jobs=args.jobs)
    pipe.run(upto="expansion")
    controller = pipe.controller(alpha)
    if args.order > controller.r:
        raise ConfigError(f"order {args.order} exceeds the {controller.r} "
                          f"precomputed expansion terms")
    shifted = pipe.shifted_system()
    traj = run(shifted, pipe.cell_sim(t_c, controller.truncated(args.order)))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / (f"simulate_alpha{_slug(alpha)}_r{args.order}"
                         f"_tc{_slug(t_c)}.csv")
    traj.to_csv(out)
    verdict = "stabilized" if stabilized(traj) else "not stabilized"
    if traj.blowup:
        verdict = f"diverged at t = {traj.blowup_time:g}"
    print(f"{verdict}; peak output {traj.peak_output():.3e}, "
          f"final {traj.final_output():.3e}")
    print(f"trajectory: {out}")
    return 0


def cmd_solve_mateq(args) -> int:
    cfg = _configure(args)
    if args.alpha is not None:
        if args.alpha not in cfg.alphas:
            raise ConfigError(f"alpha {args.alpha:g} is not configured")
        cfg = dataclasses.replace(cfg, alphas=(args.alpha,))
    pipe = Pipeline(cfg, jobs=args.jobs)
    pipe.run(upto="expansion")
    for alpha in cfg.alphas:
        d = pipe.stages[f"expansion/alpha{_slug(alpha)}"].path
        print(f"alpha = {alpha:g}:")
        for report in sorted(d.glob("*_report*.csv")):
            tail = report.read_text().strip().splitlines()[-1]
            print(f"  {report.name}: final step {tail}")
    return 0


def cmd_pod(args) -> int:
    cfg = _configure(args)
    pipe = Pipeline(cfg, jobs=args.jobs)
    pipe.run(upto="pod")
    ladder = (pipe.stages["pod"].path / "singular_values.csv").read_text()
    lines = ladder.strip().splitlines()
    print(lines[0])
    for line in lines[1: cfg.r_max + 2]:
        print(line)
    if len(lines) > cfg.r_max + 2:
        print(f"... {len(lines) - 1} singular values total")
    return 0


_COMMANDS = {
    "pipeline": cmd_pipeline,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "solve-mateq": cmd_solve_mateq,
    "pod": cmd_pod,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
