"""Command line entry point.

Subcommands::

    tugofwar validate <config>
    tugofwar solve <config>
    tugofwar simulate <config>
    tugofwar verify <experiment> <config>
    tugofwar sweep <config>

Exit codes: 0 when every metric passes, 1 on a metric failure, 2 on a
configuration error. Outputs go to ``--out``, else ``$TUGOFWAR_OUT``, else
``./tugofwar_out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import game_sim, harness, pde_solver
from .core import CONFIG_SCHEMA, validate_spec
from .errors import ConfigurationError, DomainError, TugOfWarError

OUT_ENV = "TUGOFWAR_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _out_dir(args) -> str:
    return args.out or os.environ.get(OUT_ENV) or "tugofwar_out"


def _cmd_validate(args) -> int:
    cfg = harness.load_config(args.config)
    problems = validate_spec(cfg.problem_spec())
    for p in problems:
        print(f"violation: {p}")
    if problems:
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def _cmd_solve(args) -> int:
    cfg = harness.load_config(args.config)
    spec = harness._checked_spec(cfg)
    sc = harness._solver_config(cfg)
    grid = harness._grid(cfg, spec, sc)
    stack = pde_solver.solve(spec, grid, sc)
    pick = np.unique(np.linspace(0, len(stack) - 1, max(2, cfg["export_levels"])).round().astype(int))
    sub = pde_solver.SolutionStack(grid, spec, sc, stack.levels[pick], stack.level_index[pick], stack.metadata)
    res = [float(np.max(np.abs(pde_solver.residual_field(stack, i)))) for i in (1, len(stack) - 1)]
    paths = pde_solver.export_stack(sub, _out_dir(args), prefix=f"solve_{sc.operator_choice}",
                                    extra={"residual_sup_first_last": res, "config_echo": cfg.echo()})
    lo, hi = float(stack.levels.min()), float(stack.levels.max())
    print(f"solved {sc.operator_choice}: {grid.n_t} steps, dt={grid.dt:.6g}, range [{lo:.6g}, {hi:.6g}]")
    print(f"wrote {len(paths)} files to {_out_dir(args)}")
    ok = lo >= 0.0 and hi <= spec.lipschitz_g
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_simulate(args) -> int:
    cfg = harness.load_config(args.config)
    spec = harness._checked_spec(cfg)
    sc = harness._solver_config(cfg, operator_choice="lower_m")
    stack = harness.solve_cached(spec, harness._grid(cfg, spec, sc), sc)
    steps = game_sim._n_steps(0.0, spec.T, cfg["mc_dt"])
    k = max(1, steps // cfg["decision_stride"])
    pmin = game_sim.greedy_policy(stack, cfg["m"], k, "minimizer")
    pmax = game_sim.adversarial_best_response(stack, cfg["m"], k, "maximizer")
    out = _out_dir(args)
    for j, x0 in enumerate(cfg["anchors"]):
        seed = cfg["seed"] + j
        mean, se = game_sim.monte_carlo_value(pmin, pmax, x0, 0.0, cfg["n_paths"], cfg["mc_dt"], seed, spec)
        game_sim.write_summary(os.path.join(out, f"simulate_anchor{j}.json"), mean, se, cfg["n_paths"], seed,
                               x0=list(x0), t0=0.0, pde=harness._pde_at(stack, x0, 0.0))
        print(f"anchor {j} {tuple(x0)}: mean={mean:.6g} stderr={se:.3g}")
        if cfg["verbose"]:
            traj = game_sim.simulate(pmin, pmax, x0, 0.0, cfg["mc_dt"], game_sim.NoiseSource(seed, 0), spec)
            game_sim.export_trajectory(traj, os.path.join(out, f"simulate_anchor{j}_path0.csv"))
    return EXIT_OK


def _report(rep, out) -> int:
    harness.emit_tables(rep, out)
    for line in rep.summary_lines():
        print(line)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_verify(args) -> int:
    rep = harness.run_experiment(args.experiment, args.config)
    return _report(rep, _out_dir(args))


def _cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    status = EXIT_OK
    for name in cfg["experiments"]:
        rep = harness.run_config(name, cfg)
        if _report(rep, _out_dir(args)) != EXIT_OK:
            status = EXIT_FAIL
    return status


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<18} {desc} (default: {default})" for k, (_, default, desc) in CONFIG_SCHEMA.items())
    parser = argparse.ArgumentParser(
        prog="tugofwar",
        description="Tug-of-war games and normalized p(x,t)-Laplace terminal value problems.",
        epilog="config keys (key = value, '#' comments):\n" + keys,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", help=f"output directory (overrides ${OUT_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check the problem instance against the standing assumptions")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    p = sub.add_parser("solve", help="solve the configured terminal value problem and export levels")
    p.add_argument("config")
    p.set_defaults(func=_cmd_solve)
    p = sub.add_parser("simulate", help="Monte Carlo game values at the anchor points")
    p.add_argument("config")
    p.set_defaults(func=_cmd_simulate)
    p = sub.add_parser("verify", help="run one verification experiment")
    p.add_argument("experiment", choices=sorted(harness.EXPERIMENTS))
    p.add_argument("config")
    p.set_defaults(func=_cmd_verify)
    p = sub.add_parser("sweep", help="run every experiment listed under 'experiments'")
    p.add_argument("config")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TugOfWarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
