"""Declarative experiment configs: one TOML file describes a whole run.

A config can carry up to five sections — ``[market]``, ``[solver]``,
``[simulate]``, ``[sweep]``, ``[formulas]`` — and each CLI subcommand checks
that the sections it needs are present.  Validation is strict: unknown keys
are errors (naming the full key path), because a silently ignored typo in a
figure-reproduction config is worse than a crash.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import tomli

from .errors import ConfigError
from .measures import (
    CommonValue,
    CountMode,
    DiscreteClasses,
    ExactCount,
    Market,
    PoissonCount,
    StudentClass,
    SymmetricIID,
    SymmetricRSD,
    build_market,
    measure_from_dict,
)
from .vacancy import DETERMINISTIC, POISSON, VacancyFunction

__all__ = [
    "SolverSettings",
    "SimulateSettings",
    "SweepSettings",
    "FormulaSettings",
    "ExperimentConfig",
    "SweepPoint",
    "load_config",
    "parse_config",
    "sweep_points",
    "count_mode_for",
]


@dataclass(frozen=True)
class SolverSettings:
    kind: VacancyFunction = POISSON
    grid_size: int = 1001
    common_grid_size: int = 257
    tol: float = 1e-10
    max_iter: int = 10_000
    start: str = "top"


@dataclass(frozen=True)
class SimulateSettings:
    trials: int
    seed: int = 0
    count: str = "poisson"  # student count per trial: "poisson" or "exact"
    students: Optional[int] = None  # exact count; defaults to round(total mass)


@dataclass(frozen=True)
class SweepSettings:
    parameter: str  # "capacity" or "total_mass"
    values: Tuple[float, ...]
    mass_per_seat: Optional[float] = None  # capacity sweeps: retie mass to seats


@dataclass(frozen=True)
class FormulaSettings:
    table: str  # "match_counts", "rank_bounds", or "average_rank"
    grids: Dict[str, Tuple[float, ...]]


@dataclass(frozen=True)
class ExperimentConfig:
    market: Optional[Market]
    solver: Optional[SolverSettings]
    simulate: Optional[SimulateSettings]
    sweep: Optional[SweepSettings]
    formulas: Optional[FormulaSettings]
    sha256: str

    def require(self, *sections: str) -> None:
        for name in sections:
            if getattr(self, name) is None:
                raise ConfigError(f"this command needs a [{name}] section")


@dataclass(frozen=True)
class SweepPoint:
    parameter: str  # "" for an unswept run
    value: Optional[float]
    market: Market


# --------------------------------------------------------------------------
# Strict parsing helpers
# --------------------------------------------------------------------------


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key}")


def _get(table: dict, key: str, kind, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"missing key {where}.{key}")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key} must be {kind.__name__}, got {value!r}")
    return value


def _parse_market(table: dict) -> Market:
    _reject_unknown(table, {"schools", "capacities", "measure"}, "[market]")
    if "measure" not in table:
        raise ConfigError("missing key [market].measure")
    measure = _parse_measure(table["measure"])
    schools = table.get("schools")
    capacities = table.get("capacities")
    if schools is None or capacities is None:
        raise ConfigError("[market] needs both 'schools' and 'capacities'")
    if isinstance(schools, int) and not isinstance(schools, bool):
        return build_market(schools, capacities, measure)
    if isinstance(schools, list):
        if isinstance(capacities, int):
            capacities = [capacities] * len(schools)
        return Market(tuple(schools), tuple(int(c) for c in capacities), measure)
    raise ConfigError(f"[market].schools must be a count or a list, got {schools!r}")


_MEASURE_KEYS = {
    "symmetric_iid": {"family", "total_mass", "list_length"},
    "symmetric_rsd": {"family", "total_mass", "list_length"},
    "common_value": {"family", "total_mass", "weight"},
    "classes": {"family", "classes"},
}


def _parse_measure(table: dict):
    where = "[market.measure]"
    family = _get(table, "family", str, where, required=True)
    if family not in _MEASURE_KEYS:
        raise ConfigError(
            f"{where}.family must be one of {sorted(_MEASURE_KEYS)}, got {family!r}"
        )
    _reject_unknown(table, _MEASURE_KEYS[family], where)
    if family == "classes":
        for i, cls in enumerate(table.get("classes", ())):
            cls_where = f"{where}.classes[{i}]"
            _reject_unknown(cls, {"weight", "prefs", "priorities"}, cls_where)
            if "priorities" in cls:
                _reject_unknown(
                    cls["priorities"], {"model", "weight"}, cls_where + ".priorities"
                )
    if "list_length" in table and isinstance(table["list_length"], dict):
        _reject_unknown(
            table["list_length"],
            {"fixed", "poisson_mean", "max", "probs"},
            where + ".list_length",
        )
    return measure_from_dict(table)


def _parse_solver(table: dict) -> SolverSettings:
    where = "[solver]"
    _reject_unknown(
        table,
        {"kind", "grid_size", "common_grid_size", "tol", "max_iter", "start"},
        where,
    )
    kind_name = _get(table, "kind", str, where, default="poisson")
    kinds = {"poisson": POISSON, "deterministic": DETERMINISTIC}
    if kind_name not in kinds:
        raise ConfigError(
            f"{where}.kind must be 'poisson' or 'deterministic', got {kind_name!r}"
        )
    start = _get(table, "start", str, where, default="top")
    if start not in ("top", "bottom"):
        raise ConfigError(f"{where}.start must be 'top' or 'bottom', got {start!r}")
    return SolverSettings(
        kind=kinds[kind_name],
        grid_size=_get(table, "grid_size", int, where, default=1001),
        common_grid_size=_get(table, "common_grid_size", int, where, default=257),
        tol=_get(table, "tol", float, where, default=1e-10),
        max_iter=_get(table, "max_iter", int, where, default=10_000),
        start=start,
    )


def _parse_simulate(table: dict) -> SimulateSettings:
    where = "[simulate]"
    _reject_unknown(table, {"trials", "seed", "count", "students"}, where)
    trials = _get(table, "trials", int, where, required=True)
    if trials < 1:
        raise ConfigError(f"{where}.trials must be >= 1, got {trials}")
    count = _get(table, "count", str, where, default="poisson")
    if count not in ("poisson", "exact"):
        raise ConfigError(f"{where}.count must be 'poisson' or 'exact', got {count!r}")
    students = _get(table, "students", int, where)
    if students is not None and count != "exact":
        raise ConfigError(f"{where}.students only makes sense with count = 'exact'")
    return SimulateSettings(
        trials=trials,
        seed=_get(table, "seed", int, where, default=0),
        count=count,
        students=students,
    )


def _parse_sweep(table: dict) -> SweepSettings:
    where = "[sweep]"
    _reject_unknown(table, {"parameter", "values", "mass_per_seat"}, where)
    parameter = _get(table, "parameter", str, where, required=True)
    if parameter not in ("capacity", "total_mass"):
        raise ConfigError(
            f"{where}.parameter must be 'capacity' or 'total_mass', got {parameter!r}"
        )
    raw_values = table.get("values")
    if not isinstance(raw_values, list):
        raise ConfigError(f"{where}.values must be a list")
    values = []
    for v in raw_values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}.values entries must be numbers, got {v!r}")
        if parameter == "capacity" and (v != int(v) or v < 1):
            raise ConfigError(f"{where}: capacities must be integers >= 1, got {v!r}")
        if parameter == "total_mass" and v <= 0:
            raise ConfigError(f"{where}: masses must be positive, got {v!r}")
        values.append(float(v))
    mass_per_seat = _get(table, "mass_per_seat", float, where)
    if mass_per_seat is not None and parameter != "capacity":
        raise ConfigError(f"{where}.mass_per_seat only applies to capacity sweeps")
    if mass_per_seat is not None and mass_per_seat <= 0:
        raise ConfigError(f"{where}.mass_per_seat must be positive")
    return SweepSettings(parameter, tuple(values), mass_per_seat)


_FORMULA_AXES = {
    "match_counts": ("W", "M", "q"),
    "rank_bounds": ("rho", "capacity", "ell"),
    "average_rank": ("q", "ell"),
}


def _parse_formulas(table: dict) -> FormulaSettings:
    where = "[formulas]"
    name = _get(table, "table", str, where, required=True)
    if name not in _FORMULA_AXES:
        raise ConfigError(
            f"{where}.table must be one of {sorted(_FORMULA_AXES)}, got {name!r}"
        )
    axes = _FORMULA_AXES[name]
    _reject_unknown(table, {"table", *axes}, where)
    grids: Dict[str, Tuple[float, ...]] = {}
    for axis in axes:
        raw = table.get(axis)
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"{where}.{axis} must be a non-empty list")
        vals = []
        for v in raw:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where}.{axis} entries must be numbers, got {v!r}")
            vals.append(float(v))
        grids[axis] = tuple(vals)
    return FormulaSettings(name, grids)


def parse_config(text: Union[str, bytes]) -> ExperimentConfig:
    """Parse config TOML given as a string; the hash covers exactly the text."""
    data = text.encode() if isinstance(text, str) else text
    try:
        doc = tomli.loads(data.decode())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    _reject_unknown(
        doc, {"market", "solver", "simulate", "sweep", "formulas"}, "config"
    )
    return ExperimentConfig(
        market=_parse_market(doc["market"]) if "market" in doc else None,
        solver=_parse_solver(doc["solver"]) if "solver" in doc else None,
        simulate=_parse_simulate(doc["simulate"]) if "simulate" in doc else None,
        sweep=_parse_sweep(doc["sweep"]) if "sweep" in doc else None,
        formulas=_parse_formulas(doc["formulas"]) if "formulas" in doc else None,
        sha256=hashlib.sha256(data).hexdigest(),
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_config(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Sweep expansion
# --------------------------------------------------------------------------


def _with_total_mass(measure, mass: float):
    if isinstance(measure, (SymmetricIID, SymmetricRSD, CommonValue)):
        return dataclasses.replace(measure, total_mass=mass)
    if isinstance(measure, DiscreteClasses):
        scale = mass / measure.total_mass
        return DiscreteClasses(
            tuple(
                StudentClass(c.weight * scale, c.prefs, c.priorities)
                for c in measure.classes
            )
        )
    raise ConfigError(f"cannot rescale measure of type {type(measure).__name__}")


def sweep_points(config: ExperimentConfig) -> Sequence[SweepPoint]:
    """The markets a swept command runs over; a single unlabeled point when
    the config has no [sweep] section."""
    config.require("market")
    base = config.market
    if config.sweep is None:
        return [SweepPoint("", None, base)]
    sweep = config.sweep
    points = []
    for v in sweep.values:
        if sweep.parameter == "capacity":
            caps = tuple([int(v)] * base.n_schools)
            measure = base.measure
            if sweep.mass_per_seat is not None:
                measure = _with_total_mass(measure, sweep.mass_per_seat * sum(caps))
            market = Market(base.schools, caps, measure)
        else:  # total_mass
            market = Market(
                base.schools, base.capacities, _with_total_mass(base.measure, v)
            )
        points.append(SweepPoint(sweep.parameter, v, market))
    return points


def count_mode_for(market: Market, settings: SimulateSettings) -> CountMode:
    if settings.count == "exact":
        n = settings.students
        if n is None:
            n = round(market.total_mass)
        return ExactCount(int(n))
    return PoissonCount(market.total_mass)
