"""Finite random markets: deferred acceptance, stability oracles, Monte Carlo.

This module works with concrete rosters (:class:`~bigmatch.measures.FiniteMarket`)
and serves two purposes.  First, it provides ground truth: student- and
school-proposing deferred acceptance, a blocking-pair checker, and a
brute-force enumerator small enough to exhaustively verify that "no blocking
pairs" coincides with fixed points of the discrete admissions map.  Second,
it is the simulation engine: ``monte_carlo`` samples rosters from a
continuum market, runs both DA directions per trial, and aggregates cutoffs,
ranks, and match counts so continuum predictions can be compared against
finite-market behavior.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from heapq import heappush, heappop
from math import sqrt
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InfeasibleError
from .measures import CountMode, FiniteMarket, Market, sample_finite_market

__all__ = [
    "Assignment",
    "da_student_proposing",
    "da_school_proposing",
    "blocking_pairs",
    "is_stable",
    "enumerate_stable",
    "extract_cutoffs",
    "is_discrete_fixed_point",
    "TrialStatistics",
    "AggregateStat",
    "aggregate",
    "MonteCarloResult",
    "monte_carlo",
]

# assignment[i] is student i's school, or None for unmatched
Assignment = Tuple[Optional[str], ...]


def _rank_of(student, school: Optional[str]) -> int:
    """Position of ``school`` in the student's list; None or an off-list
    school ranks after everything listed."""
    if school is None or school not in student.prefs:
        return len(student.prefs)
    return student.prefs.index(school)


def _score_or_lowest(student, school: str) -> float:
    """Priority of the student at a school, with off-list members treated as
    below every applicant (their true score was never drawn)."""
    return student.score_at(school) if school in student.prefs else float("-inf")


def _check_feasible(fm: FiniteMarket, assignment: Assignment) -> Dict[str, List[int]]:
    if len(assignment) != fm.n_students:
        raise InfeasibleError("assignment length does not match the roster")
    rosters: Dict[str, List[int]] = {h: [] for h in fm.schools}
    for i, h in enumerate(assignment):
        if h is None:
            continue
        if h not in rosters:
            raise InfeasibleError(f"assignment uses unknown school {h!r}")
        rosters[h].append(i)
    for h, members in rosters.items():
        if len(members) > fm.capacity_of(h):
            raise InfeasibleError(f"school {h!r} is over capacity")
    return rosters


# --------------------------------------------------------------------------
# Deferred acceptance
# --------------------------------------------------------------------------


def da_student_proposing(fm: FiniteMarket) -> Assignment:
    """Student-proposing deferred acceptance (McVitie-Wilson style).

    Students propose down their lists; schools tentatively hold their best
    applicants and bump the lowest-priority one when over capacity.  Output
    is the student-optimal stable assignment.
    """
    held: Dict[str, list] = {h: [] for h in fm.schools}  # min-heaps of (score, i)
    next_choice = [0] * fm.n_students
    pending = list(range(fm.n_students - 1, -1, -1))
    while pending:
        i = pending.pop()
        student = fm.students[i]
        if next_choice[i] >= len(student.prefs):
            continue  # list exhausted; stays unmatched
        h = student.prefs[next_choice[i]]
        next_choice[i] += 1
        heappush(held[h], (student.score_at(h), i))
        if len(held[h]) > fm.capacity_of(h):
            _, bumped = heappop(held[h])
            pending.append(bumped)
    assignment: List[Optional[str]] = [None] * fm.n_students
    for h, heap in held.items():
        for _, i in heap:
            assignment[i] = h
    return tuple(assignment)


def da_school_proposing(fm: FiniteMarket) -> Assignment:
    """School-proposing deferred acceptance, seat by seat.

    Schools offer seats down their priority lists (over students who listed
    them); a student holds the best offer received so far and releases the
    seat at the school it abandons.  Output is the school-optimal stable
    assignment.
    """
    # candidates[h]: students listing h, best priority first
    candidates: Dict[str, List[int]] = {h: [] for h in fm.schools}
    for i, s in enumerate(fm.students):
        for h in s.prefs:
            candidates[h].append(i)
    for h in fm.schools:
        candidates[h].sort(key=lambda i: -fm.students[i].score_at(h))
    tried = {h: 0 for h in fm.schools}
    holding: Dict[str, set] = {h: set() for h in fm.schools}
    held_school: List[Optional[str]] = [None] * fm.n_students
    active = list(fm.schools)
    while active:
        h = active.pop()
        cand = candidates[h]
        while len(holding[h]) < fm.capacity_of(h) and tried[h] < len(cand):
            i = cand[tried[h]]
            tried[h] += 1
            current = held_school[i]
            if current is not None and _rank_of(fm.students[i], current) < _rank_of(
                fm.students[i], h
            ):
                continue  # prefers the offer already held
            if current is not None:
                holding[current].discard(i)
                if current not in active:
                    active.append(current)
            holding[h].add(i)
            held_school[i] = h
    return tuple(held_school)


# --------------------------------------------------------------------------
# Stability oracles
# --------------------------------------------------------------------------


def blocking_pairs(
    fm: FiniteMarket, assignment: Assignment
) -> List[Tuple[int, Optional[str]]]:
    """All pairs violating stability, as (student index, school).

    A student blocks with a school they prefer to their assignment whenever
    that school has spare capacity or holds a lower-priority student.  A
    student assigned to a school missing from their own list blocks with the
    outside option, reported as (student, None).
    """
    rosters = _check_feasible(fm, assignment)
    min_score = {
        h: (min(_score_or_lowest(fm.students[i], h) for i in members) if members else None)
        for h, members in rosters.items()
    }
    out: List[Tuple[int, Optional[str]]] = []
    for i, student in enumerate(fm.students):
        assigned = assignment[i]
        if assigned is not None and assigned not in student.prefs:
            out.append((i, None))
        for k in range(_rank_of(student, assigned)):
            h = student.prefs[k]
            members = rosters[h]
            if len(members) < fm.capacity_of(h) or student.score_at(h) > min_score[h]:
                out.append((i, h))
    return out


def is_stable(fm: FiniteMarket, assignment: Assignment) -> bool:
    return not blocking_pairs(fm, assignment)


def enumerate_stable(fm: FiniteMarket) -> List[Assignment]:
    """Every feasible assignment with no blocking pairs, by brute force.

    Guarded to tiny instances; this is an oracle for tests, not a solver.
    """
    if fm.n_students > 8 or len(fm.schools) > 4:
        raise ConfigError(
            "enumerate_stable is a brute-force oracle; use at most 8 students "
            "and 4 schools"
        )
    options = [list(s.prefs) + [None] for s in fm.students]
    stable: List[Assignment] = []
    for assignment in itertools.product(*options):
        counts: Dict[str, int] = {}
        for h in assignment:
            if h is not None:
                counts[h] = counts.get(h, 0) + 1
        if any(c > fm.capacity_of(h) for h, c in counts.items()):
            continue
        if is_stable(fm, assignment):
            stable.append(assignment)
    return stable


def extract_cutoffs(fm: FiniteMarket, assignment: Assignment) -> Dict[str, float]:
    """Per school: the lowest admitted priority if full, else 0."""
    rosters = _check_feasible(fm, assignment)
    out: Dict[str, float] = {}
    for h in fm.schools:
        members = rosters[h]
        if len(members) == fm.capacity_of(h) and members:
            out[h] = min(_score_or_lowest(fm.students[i], h) for i in members)
        else:
            out[h] = 0.0
    return out


def is_discrete_fixed_point(fm: FiniteMarket, assignment: Assignment) -> bool:
    """Check assignment = mu^(M^mu) under the deterministic vacancy function.

    The roster induces a counting measure; the assignment induces interest
    functions I_h(p) = number of students with priority strictly above p at
    h who are unmatched at every school they rank above h.  Deterministic
    admissions admit where I_h(p) < C_h, and each student is sent to their
    first admitting school.  Stability in the no-blocking-pairs sense should
    coincide exactly with this map reproducing the assignment.
    """
    _check_feasible(fm, assignment)

    def residual(i: int, h: str) -> float:
        # 1 - sum of matching mass student i places on schools above h
        student = fm.students[i]
        assigned = assignment[i]
        if assigned is None or assigned not in student.prefs:
            return 1.0
        return 0.0 if student.prefs.index(assigned) < student.prefs.index(h) else 1.0

    def interest(h: str, p: float) -> float:
        return sum(
            residual(i, h)
            for i, s in enumerate(fm.students)
            if h in s.prefs and s.score_at(h) > p
        )

    for i, student in enumerate(fm.students):
        target: Optional[str] = None
        for h in student.prefs:
            if interest(h, student.score_at(h)) < fm.capacity_of(h):
                target = h
                break
        if target != assignment[i]:
            return False
    return True


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialStatistics:
    """Results of one DA run on one sampled roster."""

    cutoffs: Dict[str, float]
    matched: int
    ranks: Tuple[int, ...]  # 1-based ranks of matched students

    @property
    def average_rank(self) -> float:
        return float(np.mean(self.ranks)) if self.ranks else float("nan")


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    se: float
    q05: float
    q50: float
    q95: float
    n: int


def aggregate(values: Sequence[float]) -> AggregateStat:
    """Mean, standard error, and reference quantiles, ignoring NaNs."""
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        nan = float("nan")
        return AggregateStat(nan, nan, nan, nan, nan, 0)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / sqrt(arr.size)) if arr.size > 1 else 0.0
    q05, q50, q95 = (float(q) for q in np.quantile(arr, [0.05, 0.5, 0.95]))
    return AggregateStat(mean, se, q05, q50, q95, arr.size)


def _trial_statistics(fm: FiniteMarket, assignment: Assignment) -> TrialStatistics:
    ranks = tuple(
        fm.students[i].prefs.index(h) + 1
        for i, h in enumerate(assignment)
        if h is not None
    )
    return TrialStatistics(
        cutoffs=extract_cutoffs(fm, assignment),
        matched=len(ranks),
        ranks=ranks,
    )


@dataclass
class MonteCarloResult:
    """Per-trial statistics for both DA directions, plus aggregation helpers."""

    market: Market
    trials: int
    master_seed: int
    student_optimal: List[TrialStatistics]
    school_optimal: List[TrialStatistics]

    def _series(self, metric: str, direction: str) -> List[float]:
        stats = {"student": self.student_optimal, "school": self.school_optimal}.get(
            direction
        )
        if stats is None:
            raise ConfigError(f"direction must be 'student' or 'school', got {direction!r}")
        if metric == "matched":
            return [float(t.matched) for t in stats]
        if metric == "average_rank":
            return [t.average_rank for t in stats]
        if metric.startswith("cutoff:"):
            h = metric.split(":", 1)[1]
            if h not in self.market.schools:
                raise ConfigError(f"unknown school {h!r} in metric {metric!r}")
            return [t.cutoffs[h] for t in stats]
        raise ConfigError(f"unknown metric {metric!r}")

    def stat(self, metric: str, direction: str = "student") -> AggregateStat:
        """Aggregate a per-trial series; metrics are 'matched',
        'average_rank', or 'cutoff:<school>'."""
        return aggregate(self._series(metric, direction))

    def pooled_cutoffs(self, direction: str = "student") -> np.ndarray:
        """All (trial, school) cutoffs flattened, for distribution summaries."""
        stats = self.student_optimal if direction == "student" else self.school_optimal
        return np.array([t.cutoffs[h] for t in stats for h in self.market.schools])


def trial_seed(master_seed: int, index: int) -> int:
    """Deterministic per-trial seed; independent of execution order."""
    ss = np.random.SeedSequence((master_seed, index))
    return int(ss.generate_state(1, np.uint64)[0])


def monte_carlo(
    market: Market,
    count_mode: CountMode,
    trials: int,
    master_seed: int,
) -> MonteCarloResult:
    """Sample rosters, run both DA directions per trial, collect statistics.

    Per-trial seeds derive from (master_seed, trial index), so results do
    not depend on the order trials execute in.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    student_stats: List[TrialStatistics] = []
    school_stats: List[TrialStatistics] = []
    for t in range(trials):
        fm = sample_finite_market(market, count_mode, trial_seed(master_seed, t))
        student_stats.append(_trial_statistics(fm, da_student_proposing(fm)))
        school_stats.append(_trial_statistics(fm, da_school_proposing(fm)))
    return MonteCarloResult(market, trials, master_seed, student_stats, school_stats)
