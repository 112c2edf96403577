"""Fixed-point solver for continuum matching markets.

The model revolves around three mutually recursive objects defined on a
common priority grid over [0, 1]:

* an *interest function* ``I_h(p)`` — the expected mass of students with
  priority above ``p`` at school h who would attend h if admitted;
* an *admissions function* ``A_h(p)`` — the probability that a student with
  priority ``p`` is admitted to h, i.e. the CDF of h's random cutoff;
* a *fractional matching* ``M_h(theta)`` — the probability that a student of
  each type ends up at h.

Three maps close the loop: interest is an integral of the matching over the
type measure, admissions applies the vacancy function pointwise to interest,
and the matching follows from admissions by the usual "admitted here,
rejected everywhere better" product.  A stable outcome is a fixed point of
the composition, found by iterating from the all-admit function (descending
to the student-optimal outcome) or the all-reject function (ascending to the
school-optimal one).  Since the composition is monotone, both sequences
converge; with a strictly decreasing vacancy function they meet.

Numerical convention, used consistently everywhere: interest is piecewise
*linear* between grid nodes, and the admissions function between nodes is
the vacancy function applied to that linear interest.  Integrals of A along
its own priority axis are then computed in closed form per cell (they are
enrollment differences), which is what lets per-school matched mass agree
with the enrollment integral to near float precision instead of quadrature
precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .errors import ConfigError, InfeasibleError
from .measures import (
    AdmissionSummary,
    CommonPlusIdiosyncratic,
    CommonValue,
    DiscreteClasses,
    IndependentUniform,
    LengthDistribution,
    Market,
    SingleLottery,
    SymmetricIID,
    SymmetricRSD,
    conditional_admission_prob,
    market_to_dict,
)
from .vacancy import VacancyFunction, VacancyKind, enrollment, vacancy

__all__ = [
    "PriorityGrid",
    "InterestFunction",
    "AdmissionsFunction",
    "FractionalMatching",
    "StableOutcome",
    "interest_from_matching",
    "admissions_from_interest",
    "matching_from_admissions",
    "iterate_map",
    "solve_stable",
    "cutoffs_from_interest",
    "demand_at_cutoffs",
    "is_market_clearing",
    "cutoff_quantiles",
    "cutoff_mean",
    "matched_mass",
    "average_rank",
    "matching_distance",
    "outcome_document",
    "save_outcome",
    "load_outcome",
]

OUTSIDE = None  # dictionary key for the outside option in interest tables


# --------------------------------------------------------------------------
# Grid and function containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorityGrid:
    """Strictly increasing points in [0,1] with both endpoints present."""

    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ConfigError("grid needs at least two points")
        if np.any(np.diff(p) <= 0):
            raise ConfigError("grid points must be strictly increasing")
        if p[0] != 0.0 or p[-1] != 1.0:
            raise ConfigError("grid must span [0, 1] exactly")
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, n: int = 1001) -> "PriorityGrid":
        if n < 2:
            raise ConfigError("grid size must be >= 2")
        return cls(np.linspace(0.0, 1.0, n))

    @property
    def n(self) -> int:
        return self.points.size


class InterestFunction:
    """Per-school interest on the grid; piecewise linear between nodes.

    ``values`` maps school id -> array; the key ``None`` holds interest in
    the outside option (students' leftover mass, used only for reporting).
    Symmetric families store one shared array under every school key.
    """

    def __init__(self, grid: PriorityGrid, values: Dict[Optional[str], np.ndarray]):
        self.grid = grid
        self.values = values

    def schools(self) -> List[str]:
        return [h for h in self.values if h is not OUTSIDE]

    def at(self, school: Optional[str], x) -> np.ndarray:
        return np.interp(x, self.grid.points, self.values[school])

    def at_zero(self, school: Optional[str]) -> float:
        return float(self.values[school][0])


def _segment_mean_vacancy(il, ir, capacity: int, kind: VacancyKind):
    """Average of V(I(p), C) over a stretch where I moves linearly il -> ir.

    Closed form: the integral of V between two interest levels is an
    enrollment difference.  Falls back to the midpoint value when the
    interest change is too small for the quotient to be meaningful.
    """
    il = np.asarray(il, dtype=np.float64)
    ir = np.asarray(ir, dtype=np.float64)
    diff = il - ir
    small = np.abs(diff) <= 1e-12 * np.maximum(1.0, np.abs(il))
    enr_l = np.asarray(enrollment(il, capacity, kind))
    enr_r = np.asarray(enrollment(ir, capacity, kind))
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = (enr_l - enr_r) / np.where(small, 1.0, diff)
    midpoint = np.asarray(vacancy(0.5 * (il + ir), capacity, kind))
    return np.where(small, midpoint, quotient)


class AdmissionsFunction:
    """Per-school admission probabilities on the grid (A is a cutoff CDF).

    When built from an interest function the object remembers it, which
    unlocks the exact per-cell integrals; starting functions (all-admit /
    all-reject) have no generator and integrate by trapezoid, which is exact
    for them anyway.  The outside option always admits and is left implicit.
    """

    def __init__(
        self,
        grid: PriorityGrid,
        values: Dict[str, np.ndarray],
        interest: Optional[InterestFunction] = None,
        capacities: Optional[Dict[str, int]] = None,
        kind: Optional[VacancyKind] = None,
    ):
        self.grid = grid
        self.values = values
        self.interest = interest
        self.capacities = capacities
        self.kind = kind
        self._cells: Dict[int, np.ndarray] = {}

    def schools(self) -> List[str]:
        return list(self.values)

    def at(self, school: str, x) -> np.ndarray:
        if self.interest is not None:
            lam = self.interest.at(school, x)
            return vacancy(lam, self.capacities[school], self.kind)
        return np.interp(x, self.grid.points, self.values[school])

    def cell_integrals(self, school: str) -> np.ndarray:
        """Integral of A over each grid cell; exact under the convention."""
        key = id(self.values[school])
        if key in self._cells:
            return self._cells[key]
        pts = self.grid.points
        widths = np.diff(pts)
        if self.interest is not None:
            iv = self.interest.values[school]
            cells = widths * _segment_mean_vacancy(
                iv[:-1], iv[1:], self.capacities[school], self.kind
            )
        else:
            av = self.values[school]
            cells = widths * 0.5 * (av[:-1] + av[1:])
        cells = np.asarray(cells, dtype=np.float64)
        self._cells[key] = cells
        return cells

    def integral(self, school: str) -> float:
        return float(np.sum(self.cell_integrals(school)))

    def integral_up_to(self, school: str, x) -> np.ndarray:
        """F(x) = integral of A from 0 to x, exact cell by cell."""
        pts = self.grid.points
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ConfigError("integration endpoint outside [0, 1]")
        x = np.clip(x, 0.0, 1.0)
        cells = self.cell_integrals(school)
        cum = np.concatenate([[0.0], np.cumsum(cells)])
        j = np.clip(np.searchsorted(pts, x, side="right") - 1, 0, pts.size - 2)
        w = x - pts[j]
        if self.interest is not None:
            iv = self.interest.values[school]
            frac = w / (pts[j + 1] - pts[j])
            ix = iv[j] + (iv[j + 1] - iv[j]) * frac
            partial = w * _segment_mean_vacancy(
                iv[j], ix, self.capacities[school], self.kind
            )
        else:
            av = self.values[school]
            ax = np.interp(x, pts, av)
            partial = w * 0.5 * (av[j] + ax)
        return cum[j] + partial

    def step_cutoff(self, school: str) -> Optional[float]:
        """If A_h is a 0/1 step (deterministic vacancy), its jump point."""
        if self.kind == VacancyKind.DETERMINISTIC and self.interest is not None:
            iv = self.interest.values[school]
            cap = float(self.capacities[school])
            return _interest_crossing(self.grid.points, iv, cap)
        av = self.values[school]
        if np.all((av == 0.0) | (av == 1.0)):
            ones = np.nonzero(av == 1.0)[0]
            if ones.size == av.size:
                return 0.0
            if ones.size == 0:
                return 1.0
            return float(self.grid.points[ones[0]])
        return None


def _interest_crossing(pts: np.ndarray, iv: np.ndarray, level: float) -> float:
    """Smallest p where piecewise-linear interest drops strictly below level."""
    if iv[0] < level:
        return 0.0
    below = np.nonzero(iv < level)[0]
    if below.size == 0:
        return 1.0
    j = below[0]
    il, ir = iv[j - 1], iv[j]
    if il == ir:
        return float(pts[j])
    frac = (il - level) / (il - ir)
    return float(pts[j - 1] + frac * (pts[j] - pts[j - 1]))


# --------------------------------------------------------------------------
# Fractional matchings and stable outcomes
# --------------------------------------------------------------------------


@dataclass
class FractionalMatching:
    """Assignment probabilities, stored through family sufficient statistics.

    ``summary`` holds the acceptance statistics of the generating admissions
    function; the remaining fields are the family-specific reductions:
    per-class, per-position probabilities for class lists, a scalar
    acceptance ``q`` for independent symmetric markets, and acceptance
    tables over the shared factor for lottery / common-value markets.
    """

    family: str  # "classes" | "symmetric_iid" | "symmetric_rsd" | "common_value"
    grid: PriorityGrid
    summary: AdmissionSummary
    class_assign: Optional[Tuple[np.ndarray, ...]] = None
    q: Optional[float] = None
    q_table: Optional[np.ndarray] = None
    u_grid: Optional[np.ndarray] = None

    def class_unmatched(self, i: int) -> float:
        return float(1.0 - np.sum(self.class_assign[i]))

    def mass_by_school(self, market: Market) -> Dict[str, float]:
        """Matched mass per school, integrated on the measure side.

        This is the independent cross-check against the enrollment integral
        of interest: for independent-priority families the two agree to
        rounding; families that integrate over a shared factor agree to
        quadrature accuracy.
        """
        measure = _canonical_measure(market)
        out = {h: 0.0 for h in market.schools}
        if isinstance(measure, DiscreteClasses):
            for cls, m in zip(measure.classes, self.class_assign):
                for k, h in enumerate(cls.prefs):
                    out[h] += cls.weight * float(m[k])
            return out
        W = measure.total_mass
        M = market.n_schools
        dist = _length_distribution(measure, M)
        if isinstance(measure, SymmetricIID):
            per = W / M * self.q * float(dist.survival_poly(1.0 - self.q))
        elif isinstance(measure, SymmetricRSD):
            u = self.grid.points
            per = W / M * float(
                np.trapezoid(self.q_table * dist.survival_poly(1.0 - self.q_table), u)
            )
        else:  # common value
            per = W / M * float(
                np.trapezoid(self.q_table * dist.survival_poly(1.0 - self.q_table), self.u_grid)
            )
        return {h: per for h in market.schools}


@dataclass
class StableOutcome:
    """A solver result: the (matching, interest, admissions) triple plus
    convergence diagnostics.

    On return the pair (interest, admissions) is exactly consistent and the
    matching was produced from the previous iterate's admissions, so all
    three are mutually consistent up to ``residual``.
    """

    matching: FractionalMatching
    interest: InterestFunction
    admissions: AdmissionsFunction
    iterations: int
    residual: float
    start: str
    converged: bool
    residual_history: Tuple[float, ...] = ()
    admissions_history: Optional[List[Dict[str, np.ndarray]]] = None


# --------------------------------------------------------------------------
# Family plumbing
# --------------------------------------------------------------------------


def _canonical_measure(market: Market):
    """Collapse degenerate mixing weights onto the simpler priority models."""
    m = market.measure
    if isinstance(m, CommonValue):
        if m.weight >= 1.0:
            return SymmetricRSD(m.total_mass, LengthDistribution.fixed(market.n_schools))
        if m.weight <= 0.0:
            return SymmetricIID(m.total_mass, LengthDistribution.fixed(market.n_schools))
        return m
    if isinstance(m, DiscreteClasses):
        changed = False
        classes = []
        for c in m.classes:
            pr = c.priorities
            if isinstance(pr, CommonPlusIdiosyncratic):
                if pr.weight >= 1.0:
                    c = type(c)(c.weight, c.prefs, SingleLottery())
                    changed = True
                elif pr.weight <= 0.0:
                    c = type(c)(c.weight, c.prefs, IndependentUniform())
                    changed = True
            classes.append(c)
        return DiscreteClasses(tuple(classes)) if changed else m
    return m


def _family(measure) -> str:
    if isinstance(measure, DiscreteClasses):
        return "classes"
    if isinstance(measure, SymmetricIID):
        return "symmetric_iid"
    if isinstance(measure, SymmetricRSD):
        return "symmetric_rsd"
    return "common_value"


def _length_distribution(measure, n_schools: int) -> LengthDistribution:
    if isinstance(measure, (SymmetricIID, SymmetricRSD)):
        return measure.list_length
    return LengthDistribution.fixed(n_schools)


def _trapezoid_weights(u: np.ndarray) -> np.ndarray:
    w = np.zeros_like(u)
    d = np.diff(u)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def _integrate_right(pts: np.ndarray, f: np.ndarray) -> np.ndarray:
    """G(p_j) = trapezoid integral of f from p_j to 1."""
    cells = 0.5 * (f[:-1] + f[1:]) * np.diff(pts)
    return np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])


def _pz_matrix(pts: np.ndarray, u: np.ndarray, w: float) -> np.ndarray:
    """P(w*u + (1-w)*z >= p) for z uniform: a (grid, u-grid) matrix."""
    return np.clip((w * u[None, :] + (1.0 - w) - pts[:, None]) / (1.0 - w), 0.0, 1.0)


# --------------------------------------------------------------------------
# The three maps
# --------------------------------------------------------------------------


def matching_from_admissions(
    market: Market, admissions: AdmissionsFunction, common_grid_size: int = 257
) -> FractionalMatching:
    """Admitted here, rejected at every preferred school: the product rule,
    reduced to each family's sufficient statistics."""
    measure = _canonical_measure(market)
    summary = conditional_admission_prob(measure, admissions, common_grid_size)
    fam = _family(measure)
    grid = admissions.grid
    h0 = market.schools[0]

    if fam == "classes":
        assign: List[np.ndarray] = []
        for cls in measure.classes:
            pr = cls.priorities
            if isinstance(pr, IndependentUniform):
                m = np.empty(len(cls.prefs))
                s = 1.0
                for k, h in enumerate(cls.prefs):
                    q = summary.independent_q[h]
                    m[k] = s * q
                    s *= 1.0 - q
            elif isinstance(pr, SingleLottery):
                wts = _trapezoid_weights(grid.points)
                m = np.empty(len(cls.prefs))
                s = np.ones(grid.n)
                for k, h in enumerate(cls.prefs):
                    a = summary.lottery_q[h]
                    m[k] = float(np.dot(wts, s * a))
                    s = s * (1.0 - a)
            else:
                u = summary.common_grid[pr.weight]
                wts = _trapezoid_weights(u)
                m = np.empty(len(cls.prefs))
                s = np.ones(u.size)
                for k, h in enumerate(cls.prefs):
                    qh = summary.common_q[pr.weight][h]
                    m[k] = float(np.dot(wts, s * qh))
                    s = s * (1.0 - qh)
            assign.append(m)
        return FractionalMatching("classes", grid, summary, class_assign=tuple(assign))

    if fam == "symmetric_iid":
        return FractionalMatching(
            "symmetric_iid", grid, summary, q=float(summary.independent_q[h0])
        )
    if fam == "symmetric_rsd":
        return FractionalMatching(
            "symmetric_rsd", grid, summary, q_table=summary.lottery_q[h0]
        )
    w = measure.weight
    return FractionalMatching(
        "common_value",
        grid,
        summary,
        q_table=summary.common_q[w][h0],
        u_grid=summary.common_grid[w],
    )


def interest_from_matching(market: Market, matching: FractionalMatching) -> InterestFunction:
    """Mass of students above each priority level who would still take the
    school if admitted (not yet matched anywhere they like better)."""
    measure = _canonical_measure(market)
    grid = matching.grid
    pts = grid.points
    one_minus_p = 1.0 - pts
    summary = matching.summary
    M = market.n_schools

    if isinstance(measure, DiscreteClasses):
        values: Dict[Optional[str], np.ndarray] = {
            h: np.zeros(grid.n) for h in market.schools
        }
        unmatched = 0.0
        for cls in measure.classes:
            pr = cls.priorities
            if isinstance(pr, IndependentUniform):
                s = 1.0
                for h in cls.prefs:
                    values[h] += cls.weight * s * one_minus_p
                    s *= 1.0 - summary.independent_q[h]
                unmatched += cls.weight * s
            elif isinstance(pr, SingleLottery):
                s = np.ones(grid.n)
                for h in cls.prefs:
                    values[h] += cls.weight * _integrate_right(pts, s)
                    s = s * (1.0 - summary.lottery_q[h])
                unmatched += cls.weight * float(np.trapezoid(s, pts))
            else:
                u = summary.common_grid[pr.weight]
                wts = _trapezoid_weights(u)
                pz = _pz_matrix(pts, u, pr.weight)
                s = np.ones(u.size)
                for h in cls.prefs:
                    values[h] += cls.weight * (pz @ (wts * s))
                    s = s * (1.0 - summary.common_q[pr.weight][h])
                unmatched += cls.weight * float(np.dot(wts, s))
        values[OUTSIDE] = unmatched * one_minus_p
        return InterestFunction(grid, values)

    W = measure.total_mass
    dist = _length_distribution(measure, M)
    pmf = dist.pmf()
    if isinstance(measure, SymmetricIID):
        x = 1.0 - matching.q
        row = (W / M) * float(dist.survival_poly(x)) * one_minus_p
        unmatched = W * float(np.polynomial.polynomial.polyval(x, pmf))
    elif isinstance(measure, SymmetricRSD):
        x = 1.0 - matching.q_table
        sigma = dist.survival_poly(x)
        row = (W / M) * _integrate_right(pts, sigma)
        unmatched = W * float(np.trapezoid(np.polynomial.polynomial.polyval(x, pmf), pts))
    else:  # common value
        u = matching.u_grid
        wts = _trapezoid_weights(u)
        x = 1.0 - matching.q_table
        sigma = dist.survival_poly(x)
        pz = _pz_matrix(pts, u, measure.weight)
        row = (W / M) * (pz @ (wts * sigma))
        unmatched = W * float(np.dot(wts, np.polynomial.polynomial.polyval(x, pmf)))
    values = {h: row for h in market.schools}
    values[OUTSIDE] = unmatched * one_minus_p
    return InterestFunction(grid, values)


def admissions_from_interest(
    interest: InterestFunction,
    market: Market,
    v: Union[VacancyFunction, VacancyKind],
) -> AdmissionsFunction:
    """Pointwise vacancy probability at each school's interest level."""
    kind = v.kind if isinstance(v, VacancyFunction) else v
    caps = dict(zip(market.schools, market.capacities))
    computed: Dict[Tuple[int, int], np.ndarray] = {}
    values: Dict[str, np.ndarray] = {}
    for h in market.schools:
        key = (id(interest.values[h]), caps[h])
        if key not in computed:
            computed[key] = np.asarray(vacancy(interest.values[h], caps[h], kind))
        values[h] = computed[key]
    return AdmissionsFunction(interest.grid, values, interest, caps, kind)


def iterate_map(
    market: Market,
    v: Union[VacancyFunction, VacancyKind],
    admissions: AdmissionsFunction,
    common_grid_size: int = 257,
) -> AdmissionsFunction:
    """One generalized deferred-acceptance round: matching, interest,
    admissions."""
    m = matching_from_admissions(market, admissions, common_grid_size)
    i = interest_from_matching(market, m)
    return admissions_from_interest(i, market, v)


def _sup_diff(a: AdmissionsFunction, b: AdmissionsFunction) -> float:
    """Sup-norm distance between iterates.

    Node values alone are blind to deterministic-vacancy steps drifting
    *inside* a grid cell (the 0/1 nodes stop changing long before the cutoff
    settles), so when both sides carry their generating interest we also
    fold in its relative sup distance.
    """
    worst = 0.0
    seen = set()
    for h in a.values:
        key = (id(a.values[h]), id(b.values[h]))
        if key in seen:
            continue
        seen.add(key)
        worst = max(worst, float(np.max(np.abs(a.values[h] - b.values[h]))))
    if a.interest is not None and b.interest is not None:
        seen.clear()
        for h in a.values:
            key = (id(a.interest.values[h]), id(b.interest.values[h]))
            if key in seen:
                continue
            seen.add(key)
            ia, ib = a.interest.values[h], b.interest.values[h]
            scale = 1.0 + float(np.max(np.abs(ib)))
            worst = max(worst, float(np.max(np.abs(ia - ib))) / scale)
    return worst


def _start_admissions(
    market: Market, grid: PriorityGrid, start: str
) -> AdmissionsFunction:
    if start not in ("top", "bottom"):
        raise ConfigError(f"start must be 'top' or 'bottom', got {start!r}")
    row = np.ones(grid.n) if start == "top" else np.zeros(grid.n)
    return AdmissionsFunction(grid, {h: row for h in market.schools})


def solve_stable(
    market: Market,
    v: Union[VacancyFunction, VacancyKind],
    start: str = "top",
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    grid: Optional[PriorityGrid] = None,
    grid_size: int = 1001,
    common_grid_size: int = 257,
    keep_trace: bool = False,
) -> StableOutcome:
    """Iterate the composed map to a stable outcome.

    ``start="top"`` begins from the all-admit function and descends to the
    student-optimal outcome; ``start="bottom"`` ascends from all-reject to
    the school-optimal one.  Convergence is declared when consecutive
    admissions functions differ by less than ``tol`` in sup norm.  Hitting
    ``max_iter`` is not an exception: the partial outcome is returned with
    ``converged=False`` and the last residual.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if grid is None:
        grid = PriorityGrid.uniform(grid_size)
    kind = v.kind if isinstance(v, VacancyFunction) else v

    a_prev = _start_admissions(market, grid, start)
    history: List[float] = []
    snapshots: Optional[List[Dict[str, np.ndarray]]] = [] if keep_trace else None
    matching = interest = admissions = None
    converged = False
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        matching = matching_from_admissions(market, a_prev, common_grid_size)
        interest = interest_from_matching(market, matching)
        admissions = admissions_from_interest(interest, market, kind)
        residual = _sup_diff(admissions, a_prev)
        history.append(residual)
        if snapshots is not None:
            snapshots.append({h: admissions.values[h] for h in market.schools})
        if residual < tol:
            converged = True
            break
        a_prev = admissions
    return StableOutcome(
        matching=matching,
        interest=interest,
        admissions=admissions,
        iterations=iterations,
        residual=float(residual),
        start=start,
        converged=converged,
        residual_history=tuple(history),
        admissions_history=snapshots,
    )


# --------------------------------------------------------------------------
# Cutoffs and demand
# --------------------------------------------------------------------------


def cutoffs_from_interest(
    interest: InterestFunction, market: Market, interpolate: bool = False
) -> Dict[str, float]:
    """Smallest priority where interest drops below capacity (0 if never at
    or above it).  By default snaps to grid nodes; ``interpolate=True``
    locates the crossing inside the cell, consistent with the linear
    convention."""
    out: Dict[str, float] = {}
    pts = interest.grid.points
    for h, cap in zip(market.schools, market.capacities):
        iv = interest.values[h]
        if interpolate:
            out[h] = _interest_crossing(pts, iv, float(cap))
        else:
            below = np.nonzero(iv < cap)[0]
            out[h] = float(pts[below[0]]) if below.size else 1.0
    return out


def demand_at_cutoffs(
    market: Market, cutoffs: Union[Dict[str, float], Sequence[float]]
) -> Dict[str, float]:
    """Mass of students who clear a school's cutoff and no better school's.

    Exact for independent and lottery priorities; common-value factors are
    integrated on the common grid.
    """
    if not isinstance(cutoffs, dict):
        cutoffs = dict(zip(market.schools, cutoffs))
    P = {h: float(np.clip(cutoffs[h], 0.0, 1.0)) for h in market.schools}
    measure = _canonical_measure(market)
    out = {h: 0.0 for h in market.schools}

    if isinstance(measure, DiscreteClasses):
        for cls in measure.classes:
            pr = cls.priorities
            if isinstance(pr, IndependentUniform):
                reach = 1.0
                for h in cls.prefs:
                    out[h] += cls.weight * reach * (1.0 - P[h])
                    reach *= P[h]
            elif isinstance(pr, SingleLottery):
                best_before = 1.0
                for h in cls.prefs:
                    out[h] += cls.weight * max(0.0, best_before - P[h])
                    best_before = min(best_before, P[h])
            else:
                u = np.linspace(0.0, 1.0, 257)
                wts = _trapezoid_weights(u)
                w = pr.weight
                s = np.ones(u.size)
                for h in cls.prefs:
                    admit = np.clip((w * u + (1.0 - w) - P[h]) / (1.0 - w), 0.0, 1.0)
                    out[h] += cls.weight * float(np.dot(wts, s * admit))
                    s = s * (1.0 - admit)
        return out

    W = measure.total_mass
    M = market.n_schools
    dist = _length_distribution(measure, M)
    t = dist.tails()
    if isinstance(measure, SymmetricIID):
        for h in market.schools:
            others = np.array([P[g] for g in market.schools if g != h])
            e = _elementary_symmetric(others)
            terms = sum(
                t[k - 1] * e[k - 1] / comb(M - 1, k - 1) for k in range(1, t.size + 1)
            )
            out[h] = W / M * (1.0 - P[h]) * float(terms)
        return out
    if isinstance(measure, SymmetricRSD):
        for h in market.schools:
            others = sorted(P[g] for g in market.schools if g != h)
            breaks = sorted({P[h], 1.0, *[x for x in others if x > P[h]]})
            total = 0.0
            for lo, hi in zip(breaks[:-1], breaks[1:]):
                mid = 0.5 * (lo + hi)
                n_avail = sum(1 for x in others if x >= mid)
                factor = sum(
                    t[k - 1] * comb(n_avail, k - 1) / comb(M - 1, k - 1)
                    for k in range(1, min(t.size, n_avail + 1) + 1)
                )
                total += (hi - lo) * factor
            out[h] = W / M * total
        return out
    # common value
    u = np.linspace(0.0, 1.0, 257)
    wts = _trapezoid_weights(u)
    w = measure.weight
    admit = {
        h: np.clip((w * u + (1.0 - w) - P[h]) / (1.0 - w), 0.0, 1.0)
        for h in market.schools
    }
    for h in market.schools:
        others = [admit[g] for g in market.schools if g != h]
        integrand = np.zeros(u.size)
        for i, ui in enumerate(u):
            rejected = np.array([1.0 - a[i] for a in others])
            e = _elementary_symmetric(rejected)
            integrand[i] = sum(
                t[k - 1] * e[k - 1] / comb(M - 1, k - 1) for k in range(1, t.size + 1)
            )
        out[h] = W / M * float(np.dot(wts, admit[h] * integrand))
    return out


def _elementary_symmetric(xs: np.ndarray) -> np.ndarray:
    """e_0..e_n of the inputs via the usual one-pass recurrence."""
    e = np.zeros(xs.size + 1)
    e[0] = 1.0
    for x in xs:
        e[1:] = e[1:] + x * e[:-1]
    return e


def is_market_clearing(
    market: Market, cutoffs: Dict[str, float], tol: float = 1e-6
) -> bool:
    """Demand at most capacity everywhere, with equality where the cutoff
    is positive."""
    demand = demand_at_cutoffs(market, cutoffs)
    for h, cap in zip(market.schools, market.capacities):
        if demand[h] > cap + tol:
            return False
        if cutoffs[h] > 0.0 and abs(demand[h] - cap) > tol:
            return False
    return True


def cutoff_quantiles(
    admissions: AdmissionsFunction, school: str, probs: Sequence[float]
) -> List[float]:
    """Generalized-inverse quantiles of the cutoff distribution (CDF = A)."""
    from scipy import special

    for tau in probs:
        if not (0.0 <= tau <= 1.0):
            raise ConfigError(f"quantile probability {tau!r} outside [0, 1]")
    pts = admissions.grid.points
    out: List[float] = []
    if (
        admissions.interest is not None
        and admissions.kind == VacancyKind.POISSON
    ):
        iv = admissions.interest.values[school]
        cap = admissions.capacities[school]
        for tau in probs:
            if tau <= 0.0:
                out.append(0.0)
                continue
            lam_star = float(special.gammainccinv(cap, tau))
            # A(p) >= tau exactly where I(p) <= lam_star
            out.append(_interest_crossing(pts, iv, np.nextafter(lam_star, np.inf)))
        return out
    step = admissions.step_cutoff(school)
    if step is not None:
        return [0.0 if tau == 0.0 else step for tau in probs]
    av = admissions.values[school]
    for tau in probs:
        idx = np.searchsorted(av, tau, side="left")
        out.append(float(pts[min(idx, pts.size - 1)]))
    return out


def cutoff_mean(admissions: AdmissionsFunction, school: str) -> float:
    """Mean of the cutoff distribution: 1 minus the integral of its CDF."""
    return 1.0 - admissions.integral(school)


# --------------------------------------------------------------------------
# Outcome metrics
# --------------------------------------------------------------------------


def matched_mass(outcome: StableOutcome, market: Market) -> Tuple[Dict[str, float], float]:
    """Per-school and total matched mass, via the enrollment integral of
    interest from top priority down to the bottom."""
    per: Dict[str, float] = {}
    kind = outcome.admissions.kind
    for h, cap in zip(market.schools, market.capacities):
        iv = outcome.interest.values[h]
        per[h] = float(
            enrollment(iv[0], cap, kind) - enrollment(iv[-1], cap, kind)
        )
    return per, float(sum(per.values()))


def average_rank(
    outcome: StableOutcome, market: Market, include_unmatched: bool = False
) -> float:
    """Rank-weighted matched mass over matched mass (1 = first choice).

    With ``include_unmatched=True`` a student listing k schools who goes
    unmatched counts as receiving rank k+1 and the denominator covers
    everyone.
    """
    measure = _canonical_measure(market)
    m = outcome.matching
    if isinstance(measure, DiscreteClasses):
        rank_mass = 0.0
        match_mass = 0.0
        slack_mass = 0.0
        for cls, probs in zip(measure.classes, m.class_assign):
            ranks = np.arange(1, probs.size + 1)
            rank_mass += cls.weight * float(np.dot(ranks, probs))
            match_mass += cls.weight * float(np.sum(probs))
            slack_mass += cls.weight * (1.0 - float(np.sum(probs))) * (probs.size + 1)
        if include_unmatched:
            return (rank_mass + slack_mass) / measure.total_mass
        if match_mass <= 0.0:
            raise InfeasibleError("average rank is undefined: nothing matched")
        return rank_mass / match_mass

    W = measure.total_mass
    dist = _length_distribution(measure, market.n_schools)
    pmf = dist.pmf()
    lengths = np.arange(pmf.size)
    if isinstance(measure, SymmetricIID):
        x = 1.0 - m.q
        rank_mass = W * m.q * float(dist.rank_weighted_poly(x))
        match_mass = W * m.q * float(dist.survival_poly(x))
        unmatched_by_len = W * pmf * x ** lengths
    else:
        if isinstance(measure, SymmetricRSD):
            u, wts = m.grid.points, _trapezoid_weights(m.grid.points)
        else:
            u, wts = m.u_grid, _trapezoid_weights(m.u_grid)
        x = 1.0 - m.q_table
        rank_mass = W * float(np.dot(wts, m.q_table * dist.rank_weighted_poly(x)))
        match_mass = W * float(np.dot(wts, m.q_table * dist.survival_poly(x)))
        unmatched_by_len = W * pmf * np.array(
            [float(np.dot(wts, x ** k)) for k in lengths]
        )
    if include_unmatched:
        return (rank_mass + float(np.dot(lengths + 1, unmatched_by_len))) / W
    if match_mass <= 0.0:
        raise InfeasibleError("average rank is undefined: nothing matched")
    return rank_mass / match_mass


def matching_distance(
    market: Market, a: AdmissionsFunction, b: AdmissionsFunction
) -> float:
    """Expected number of students whose assignment differs between the two
    admissions functions: half the L1 distance between the matchings.

    Implemented exactly for independent-priority class markets when at least
    one side is a 0/1 step function (the deterministic-vacancy case); that
    covers comparing any outcome against a cutoff-based one.
    """
    if a.grid.n != b.grid.n or np.any(a.grid.points != b.grid.points):
        raise ConfigError("matching_distance requires a common grid")
    if all(np.array_equal(a.values[h], b.values[h]) for h in market.schools):
        return 0.0
    measure = _canonical_measure(market)
    if not isinstance(measure, DiscreteClasses) or not all(
        isinstance(c.priorities, IndependentUniform) for c in measure.classes
    ):
        raise NotImplementedError(
            "matching_distance is implemented for independent-priority class markets"
        )
    steps_a = {h: a.step_cutoff(h) for h in market.schools}
    steps_b = {h: b.step_cutoff(h) for h in market.schools}
    if all(s is not None for s in steps_a.values()):
        step, frac, P = a, b, steps_a
    elif all(s is not None for s in steps_b.values()):
        step, frac, P = b, a, steps_b
    else:
        raise NotImplementedError(
            "matching_distance needs one side to be a step (deterministic) function"
        )

    total = 0.0
    q_total = {h: frac.integral(h) for h in market.schools}
    f_at = {h: float(frac.integral_up_to(h, P[h])) for h in market.schools}
    for cls in measure.classes:
        # regions where the step outcome sends the class to choice k
        reach = 1.0  # probability of being rejected by all earlier choices
        survive = 1.0  # fractional-side: same, restricted to those regions
        for h in cls.prefs:
            region = reach * (1.0 - P[h])
            got_h = survive * (q_total[h] - f_at[h])
            total += cls.weight * (region - got_h)
            reach *= P[h]
            survive *= P[h] - f_at[h]
        # unmatched region: every listed school below its cutoff
        ps = [P[h] for h in cls.prefs]
        fs = [f_at[h] for h in cls.prefs]
        suffix = np.ones(len(ps) + 1)
        for i in range(len(ps) - 1, -1, -1):
            suffix[i] = suffix[i + 1] * ps[i]
        prefix = 1.0
        for k in range(len(ps)):
            total += cls.weight * prefix * fs[k] * suffix[k + 1]
            prefix *= ps[k] - fs[k]
    return float(total)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def outcome_document(outcome: StableOutcome, market: Market) -> dict:
    """A plain-dict rendering of a solve, suitable for JSON round-trips."""
    per, total = matched_mass(outcome, market)
    try:
        rank = average_rank(outcome, market)
    except InfeasibleError:
        rank = None
    doc = {
        "format": "bigmatch-outcome",
        "tool_version": __version__,
        "market": market_to_dict(market),
        "vacancy": outcome.admissions.kind.value if outcome.admissions.kind else None,
        "start": outcome.start,
        "iterations": outcome.iterations,
        "residual": outcome.residual,
        "converged": outcome.converged,
        "grid": outcome.interest.grid.points.tolist(),
        "interest": {h: outcome.interest.values[h].tolist() for h in market.schools},
        "interest_outside": outcome.interest.values[OUTSIDE].tolist(),
        "admissions": {h: outcome.admissions.values[h].tolist() for h in market.schools},
        "matching": _matching_doc(outcome.matching),
        "metrics": {
            "matched_mass": per,
            "matched_mass_total": total,
            "average_rank": rank,
            "cutoffs": cutoffs_from_interest(outcome.interest, market, interpolate=True),
        },
    }
    return doc


def _matching_doc(m: FractionalMatching) -> dict:
    doc: dict = {"family": m.family}
    if m.class_assign is not None:
        doc["class_assign"] = [arr.tolist() for arr in m.class_assign]
    if m.q is not None:
        doc["q"] = m.q
    if m.q_table is not None:
        doc["q_table"] = m.q_table.tolist()
    if m.u_grid is not None:
        doc["u_grid"] = m.u_grid.tolist()
    return doc


def save_outcome(outcome: StableOutcome, market: Market, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(outcome_document(outcome, market), indent=1, sort_keys=True) + "\n"
    )


def load_outcome(path: Union[str, Path]) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "bigmatch-outcome":
        raise ConfigError(f"{path}: not an outcome document")
    return doc
