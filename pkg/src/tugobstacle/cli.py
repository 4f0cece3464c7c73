"""Command-line entry point.

Usage::

    tugobstacle solve CONFIG [--out DIR] [--no-timestamp]
    tugobstacle simulate CONFIG [--seed S] [--paths N] [--workers W] [--out DIR]
    tugobstacle converge CONFIG [--out DIR]
    tugobstacle meanvalue CONFIG [--out DIR]

Exit codes: 0 success, 1 configuration or validation error, 2 numerical
non-convergence, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, calculus, game
from .config import STOP_NAMES, STRATEGY_NAMES, ConfigError, RunConfig, load_config
from .dpp import alpha_beta, solve_dpp, write_contact_csv, write_field_json
from .errors import NoConvergence, TugObstacleError
from .harness import run_convergence

__all__ = ["main", "cmd_solve", "cmd_simulate", "cmd_converge", "cmd_meanvalue"]

logger = logging.getLogger("tugobstacle")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.json", "w") as fh:
        fh.write(cfg.to_json())


def cmd_solve(cfg: RunConfig, out: Path, timestamp: bool = True) -> int:
    s = cfg.doc["solver"]
    inst = cfg.instance()
    _prepare_out(cfg, out)
    code = EXIT_OK
    try:
        u, report = solve_dpp(inst, tol=s["tol"], max_iter=s["max_iter"], init=s["init"], method=s["method"])
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        u, report, code = exc.field, exc.report, EXIT_NUMERIC
    write_field_json(out / "field.json", inst.grid, u)
    write_contact_csv(out / "contact.csv", inst, u, s["tol"])
    doc = report.to_json()
    doc["metadata"] = {"version": __version__}
    if timestamp:
        doc["metadata"]["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    _write_json(out / "report.json", doc)
    print(f"solve: {report.iterations} iterations, residual {report.final_residual:.3e}")
    return code


def _strategy(name: str, target, grid, u, eps):
    if name == "greedy_sup":
        return game.greedy_sup(u, eps, grid)
    if name == "greedy_inf":
        return game.greedy_inf(u, eps, grid)
    if name == "pull_toward":
        if target is None:
            raise ConfigError("pull_toward needs a pull target (game.pull_target_I / pull_target_II)")
        return game.pull_toward(grid, np.asarray(target, dtype=float), eps)
    return game.hold_position(grid)


def cmd_simulate(cfg: RunConfig, out: Path, workers: int) -> int:
    g = cfg.doc["game"]
    for key in ("strategy_I", "strategy_II"):
        if g[key] not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {g[key]!r}; valid names: {', '.join(STRATEGY_NAMES)}")
    if g["stop"] not in STOP_NAMES:
        raise ConfigError(f"unknown stop rule {g['stop']!r}; valid names: {', '.join(STOP_NAMES)}")
    if not (isinstance(g["n_paths"], int) and g["n_paths"] >= 1):
        raise ConfigError("game.n_paths must be a positive integer")
    if not (isinstance(g["seed"], int) and g["seed"] >= 0):
        raise ConfigError("game.seed must be a non-negative integer")

    inst = cfg.instance()
    grid = inst.grid
    x0 = g["x0"]
    if x0 is None:
        x0 = list(cfg.family().probe) or None
    if x0 is None:
        raise ConfigError("game.x0 is required")
    node = grid.nearest_node(np.asarray(x0, dtype=float).reshape(grid.dim))

    needs_field = "greedy_sup" in (g["strategy_I"], g["strategy_II"]) or "greedy_inf" in (
        g["strategy_I"],
        g["strategy_II"],
    ) or g["stop"] == "contact"
    _prepare_out(cfg, out)
    u = None
    if needs_field:
        s = cfg.doc["solver"]
        u, _ = solve_dpp(inst, tol=s["tol"], max_iter=s["max_iter"], init=s["init"], method=s["method"])
    sI = _strategy(g["strategy_I"], g["pull_target_I"], grid, u, inst.eps)
    sII = _strategy(g["strategy_II"], g["pull_target_II"], grid, u, inst.eps)
    if g["stop"] == "contact":
        stop = game.contact_rule(u, inst.Psi, cfg.doc["solver"]["contact_tol"], grid)
    else:
        stop = game.exit_time_rule(grid)

    tow = game.TugOfWar(inst)
    est = tow.estimate_value(
        node, sI, sII, stop, g["n_paths"], g["seed"], g["cap"], workers, keep_paths=g["write_paths"]
    )
    game.write_estimate_json(out / "estimate.json", est)
    if g["write_paths"]:
        game.write_paths_csv(out / "paths.csv", grid, est.paths)
    msg = f"simulate: mean {est.mean:.6g} +- {est.stderr:.2g} over {est.n_paths} paths"
    if u is not None:
        msg += f"; grid value {u[node]:.6g}"
    print(msg)
    return EXIT_OK


def cmd_converge(cfg: RunConfig, out: Path) -> int:
    exp = cfg.experiment()
    _prepare_out(cfg, out)
    table = run_convergence(exp)
    table.to_csv(out / "error_table.csv")
    for r in table.rows:
        print(f"eps={r.eps:g} h={r.h:.4g} sup_error={r.sup_error:.3e} osc={r.osc_r:.3e}")
    return EXIT_OK if all(r.converged for r in table.rows) else EXIT_NUMERIC


def cmd_meanvalue(cfg: RunConfig, out: Path) -> int:
    phi, x, p = cfg.quadratic()
    eps_list = cfg.doc["meanvalue"]["eps_list"]
    check = calculus.expansion_limit_check(phi, x, p, eps_list=tuple(eps_list))
    _prepare_out(cfg, out)
    alpha, beta = alpha_beta(p, phi.dim)
    with open(out / "meanvalue.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eps", "defect", "defect_over_eps2", "reference"])
        for eps, ratio in zip(eps_list, check.ratios):
            defect = calculus.mean_value_defect(phi, x, eps, alpha, beta)
            writer.writerow([repr(float(eps)), repr(defect), repr(ratio), repr(check.reference)])
    _write_json(
        out / "meanvalue.json",
        {
            "estimated_limit": check.estimated_limit,
            "reference": check.reference,
            "rel_error": check.rel_error,
        },
    )
    print(f"meanvalue: limit {check.estimated_limit:.6g} vs {check.reference:.6g} (rel {check.rel_error:.2e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tugobstacle", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the dynamic programming principle on a grid"),
        ("simulate", "Monte Carlo estimate of the game value"),
        ("converge", "error table along an eps ladder"),
        ("meanvalue", "mean-value expansion check on a quadratic"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override game.seed")
        p.add_argument("--paths", type=int, help="override game.n_paths")
        p.add_argument("--workers", type=int, help="worker threads (default: CPU count)")
        p.add_argument(
            "--no-timestamp",
            action="store_true",
            help="omit the timestamp from report metadata so outputs are byte-comparable",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        g = cfg.doc["game"]
        if args.seed is not None:
            g["seed"] = args.seed
        if args.paths is not None:
            g["n_paths"] = args.paths
        workers = args.workers or cfg.doc["workers"] or os.cpu_count() or 1
        if workers < 1:
            raise ConfigError("--workers must be positive")
        if args.command == "solve":
            return cmd_solve(cfg, out, timestamp=not args.no_timestamp)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, workers)
        if args.command == "converge":
            return cmd_converge(cfg, out)
        return cmd_meanvalue(cfg, out)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, TugObstacleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
