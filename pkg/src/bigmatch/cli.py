"""Experiment runner: solve markets, simulate them, and compare the two.

Four subcommands — ``solve``, ``simulate``, ``compare``, ``formulas`` — each
driven entirely by a TOML config (see :mod:`bigmatch.config`); the only
flags are ``--config``, ``--out``, ``--seed`` (simulation commands), and
``--trace`` (solve).  Outputs are tab-separated tables headed by a comment
line carrying the tool version and the config hash, plus a ``.meta.json``
sidecar, and contain no timestamps: rerunning a config byte-reproduces its
files.

Exit codes: 0 success, 2 config error, 3 non-convergence, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    SolverSettings,
    load_config,
    count_mode_for,
    sweep_points,
)
from .errors import BigmatchError, ConfigError, ConvergenceError, InfeasibleError
from .finite import MonteCarloResult, monte_carlo
from .formulas import (
    ar,
    bound_more_seats,
    bound_more_students_iid,
    bound_rsd,
    v_iid_hat,
    v_rsd_exact,
    v_rsd_hat,
)
from .measures import Market
from .solver import (
    StableOutcome,
    average_rank,
    cutoff_mean,
    cutoff_quantiles,
    cutoffs_from_interest,
    matched_mass,
    save_outcome,
    solve_stable,
)

NAN = float("nan")


# --------------------------------------------------------------------------
# Output plumbing
# --------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_table(path: Path, columns: Sequence[str], rows, sha256: str) -> None:
    lines = [f"# bigmatch {__version__} config_sha256={sha256}"]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _write_meta(out: Path, command: str, sha256: str, seed: Optional[int], files: List[str]) -> None:
    meta = {
        "command": command,
        "config_sha256": sha256,
        "files": sorted(files),
        "seed": seed,
        "tool_version": __version__,
    }
    Path(str(out) + ".meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n"
    )


def _solve(market: Market, st: SolverSettings, keep_trace: bool = False) -> StableOutcome:
    outcome = solve_stable(
        market,
        st.kind,
        st.start,
        tol=st.tol,
        max_iter=st.max_iter,
        grid_size=st.grid_size,
        common_grid_size=st.common_grid_size,
        keep_trace=keep_trace,
    )
    if not outcome.converged:
        raise ConvergenceError(
            f"solver stopped after {outcome.iterations} iterations with "
            f"residual {outcome.residual:.3e} > tol {st.tol:.3e}"
        )
    return outcome


def _average_rank_or_nan(outcome: StableOutcome, market: Market) -> float:
    try:
        return average_rank(outcome, market)
    except InfeasibleError:
        return NAN


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_solve(config: ExperimentConfig, out: Path, trace: bool) -> None:
    config.require("market")
    if config.sweep is not None:
        raise ConfigError(
            "solve runs a single market; sweeps belong to simulate or compare"
        )
    st = config.solver or SolverSettings()
    market = config.market
    outcome = _solve(market, st, keep_trace=trace)

    per_school, total = matched_mass(outcome, market)
    avg_rank = _average_rank_or_nan(outcome, market)
    cutoffs = cutoffs_from_interest(outcome.interest, market, interpolate=True)
    columns = [
        "school", "capacity", "matched_mass", "cutoff",
        "cutoff_mean", "cutoff_q05", "cutoff_q95",
        "total_matched", "average_rank", "iterations", "residual", "converged",
    ]
    rows = []
    for h in market.schools:
        q05, q95 = cutoff_quantiles(outcome.admissions, h, (0.05, 0.95))
        rows.append([
            h, market.capacity_of(h), per_school[h], cutoffs[h],
            cutoff_mean(outcome.admissions, h), q05, q95,
            total, avg_rank, outcome.iterations, outcome.residual, True,
        ])
    _write_table(out, columns, rows, config.sha256)
    files = [out.name, out.name + ".outcome.json"]
    save_outcome(outcome, market, str(out) + ".outcome.json")
    if trace:
        trace_path = Path(str(out) + ".trace.tsv")
        points = outcome.admissions.grid.points
        trows = []
        for it, snapshot in enumerate(outcome.admissions_history, start=1):
            residual = outcome.residual_history[it - 1]
            for h in market.schools:
                for p, a in zip(points, snapshot[h]):
                    trows.append([it, residual, h, p, a])
        _write_table(trace_path, ["iteration", "residual", "school", "p", "admission"], trows, config.sha256)
        files.append(trace_path.name)
    _write_meta(out, "solve", config.sha256, None, files)


_SIM_COLUMNS = [
    "parameter", "value", "direction", "metric",
    "n", "mean", "se", "q05", "q50", "q95",
]


def _simulation_rows(point, result: MonteCarloResult) -> List[list]:
    rows = []
    metrics = ["matched", "average_rank"] + [
        f"cutoff:{h}" for h in result.market.schools
    ]
    for direction in ("student", "school"):
        for metric in metrics:
            s = result.stat(metric, direction)
            rows.append([
                point.parameter, _point_value(point), direction, metric,
                s.n, s.mean, s.se, s.q05, s.q50, s.q95,
            ])
        pooled = result.pooled_cutoffs(direction)
        q05, q50, q95 = np.quantile(pooled, [0.05, 0.5, 0.95])
        rows.append([
            point.parameter, _point_value(point), direction, "cutoff_pooled",
            pooled.size, float(pooled.mean()),
            float(pooled.std(ddof=1) / math.sqrt(pooled.size)) if pooled.size > 1 else 0.0,
            float(q05), float(q50), float(q95),
        ])
    return rows


def _point_value(point) -> str:
    return "" if point.value is None else _fmt(point.value)


def cmd_simulate(config: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    config.require("market", "simulate")
    sim = config.simulate
    master_seed = sim.seed if seed is None else seed
    rows = []
    for point in sweep_points(config):
        result = monte_carlo(
            point.market, count_mode_for(point.market, sim), sim.trials, master_seed
        )
        rows.extend(_simulation_rows(point, result))
    _write_table(out, _SIM_COLUMNS, rows, config.sha256)
    _write_meta(out, "simulate", config.sha256, master_seed, [out.name])


_COMPARE_COLUMNS = [
    "parameter", "value", "direction", "school", "metric",
    "model", "sim", "sim_se", "abs_diff", "diff_in_se",
]


def _compare_row(point, direction, school, metric, model, sim, sim_se):
    diff = abs(model - sim)
    in_se = diff / sim_se if sim_se and sim_se > 0 and not math.isnan(sim_se) else NAN
    return [
        point.parameter, _point_value(point), direction, school, metric,
        model, sim, sim_se, diff, in_se,
    ]


def cmd_compare(config: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    config.require("market", "solver", "simulate")
    sim = config.simulate
    master_seed = sim.seed if seed is None else seed
    rows = []
    for point in sweep_points(config):
        market = point.market
        outcome = _solve(market, config.solver)
        result = monte_carlo(
            market, count_mode_for(market, sim), sim.trials, master_seed
        )
        _, model_matched = matched_mass(outcome, market)
        model_rank = _average_rank_or_nan(outcome, market)
        model_cutoffs = {
            h: {
                "cutoff_mean": cutoff_mean(outcome.admissions, h),
                "cutoff_q05": cutoff_quantiles(outcome.admissions, h, (0.05,))[0],
                "cutoff_q95": cutoff_quantiles(outcome.admissions, h, (0.95,))[0],
            }
            for h in market.schools
        }
        for direction in ("student", "school"):
            s = result.stat("matched", direction)
            rows.append(_compare_row(point, direction, "", "matched", model_matched, s.mean, s.se))
            s = result.stat("average_rank", direction)
            rows.append(_compare_row(point, direction, "", "average_rank", model_rank, s.mean, s.se))
            for h in market.schools:
                s = result.stat(f"cutoff:{h}", direction)
                per = model_cutoffs[h]
                rows.append(_compare_row(point, direction, h, "cutoff_mean", per["cutoff_mean"], s.mean, s.se))
                rows.append(_compare_row(point, direction, h, "cutoff_q05", per["cutoff_q05"], s.q05, NAN))
                rows.append(_compare_row(point, direction, h, "cutoff_q95", per["cutoff_q95"], s.q95, NAN))
            # pooled across schools: empirical distribution of all cutoffs vs
            # the school-averaged model statistics
            pooled = result.pooled_cutoffs(direction)
            q05, q95 = np.quantile(pooled, [0.05, 0.95])
            se = float(pooled.std(ddof=1) / math.sqrt(pooled.size)) if pooled.size > 1 else 0.0
            n_schools = market.n_schools
            avg = lambda key: sum(model_cutoffs[h][key] for h in market.schools) / n_schools
            rows.append(_compare_row(point, direction, "*", "cutoff_mean", avg("cutoff_mean"), float(pooled.mean()), se))
            rows.append(_compare_row(point, direction, "*", "cutoff_q05", avg("cutoff_q05"), float(q05), NAN))
            rows.append(_compare_row(point, direction, "*", "cutoff_q95", avg("cutoff_q95"), float(q95), NAN))
    _write_table(out, _COMPARE_COLUMNS, rows, config.sha256)
    _write_meta(out, "compare", config.sha256, master_seed, [out.name])


def cmd_formulas(config: ExperimentConfig, out: Path) -> None:
    config.require("formulas")
    fs = config.formulas
    rows: List[list] = []
    if fs.table == "match_counts":
        columns = ["W", "M", "q", "v_rsd_exact", "v_rsd_hat", "v_iid_hat"]
        for w in fs.grids["W"]:
            for m in fs.grids["M"]:
                for q in fs.grids["q"]:
                    rows.append([
                        int(w), int(m), q,
                        v_rsd_exact(int(w), int(m), q),
                        v_rsd_hat(w, m, q),
                        v_iid_hat(w, m, q),
                    ])
    elif fs.table == "rank_bounds":
        columns = ["rho", "capacity", "ell", "more_seats", "more_students_iid", "rsd"]
        for rho in fs.grids["rho"]:
            for cap in fs.grids["capacity"]:
                for ell in fs.grids["ell"]:
                    more_seats = bound_more_seats(rho, int(cap)) if rho < cap else NAN
                    more_students = (
                        bound_more_students_iid(rho, int(cap), int(ell))
                        if rho > cap
                        else NAN
                    )
                    rows.append([
                        rho, int(cap), int(ell),
                        more_seats, more_students, bound_rsd(int(ell)),
                    ])
    else:  # average_rank
        columns = ["q", "ell", "average_rank"]
        for q in fs.grids["q"]:
            for ell in fs.grids["ell"]:
                rows.append([q, int(ell), ar(q, int(ell))])
    _write_table(out, columns, rows, config.sha256)
    _write_meta(out, "formulas", config.sha256, None, [out.name])


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bigmatch",
        description="Stable-matching experiments: solve, simulate, compare, formulas.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, seed: bool = False, trace: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--out", required=True, help="output table path (TSV)")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the master seed from the config")
        if trace:
            p.add_argument("--trace", action="store_true",
                           help="also dump per-iteration admissions tables")
        return p

    add("solve", "continuum fixed point for one market", trace=True)
    add("simulate", "Monte Carlo over sampled finite markets", seed=True)
    add("compare", "model predictions joined with simulation aggregates", seed=True)
    add("formulas", "closed-form tables over parameter grids")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        out = Path(args.out)
        if args.command == "solve":
            cmd_solve(config, out, trace=args.trace)
        elif args.command == "simulate":
            cmd_simulate(config, out, seed=args.seed)
        elif args.command == "compare":
            cmd_compare(config, out, seed=args.seed)
        else:
            cmd_formulas(config, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return 3
    except BigmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
