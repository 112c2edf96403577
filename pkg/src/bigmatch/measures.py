"""Student-type measures: who wants what, and how priorities are drawn.

A market couples a school list (with capacities) to a measure over student
types.  Rather than handling arbitrary measures, we support four structured
families, each of which reduces the solver's integrals to one dimension or
less:

* ``SymmetricIID`` — uniformly random ranked lists, independent uniform
  priority at every school.
* ``SymmetricRSD`` — uniformly random lists, one lottery number shared by
  every school (serial-dictatorship priorities).
* ``CommonValue`` — complete uniform lists; priority at each school is
  ``w*u + (1-w)*z_h`` mixing a common student quality ``u`` with
  school-specific terms ``z_h``.
* ``DiscreteClasses`` — an explicit list of (weight, ranked list,
  priority model) classes; the general workhorse.

The same families know how to sample finite rosters of concrete students,
which feeds the Monte Carlo engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import ConfigError, ConvergenceError

__all__ = [
    "LengthDistribution",
    "IndependentUniform",
    "SingleLottery",
    "CommonPlusIdiosyncratic",
    "PriorityModel",
    "StudentClass",
    "SymmetricIID",
    "SymmetricRSD",
    "CommonValue",
    "DiscreteClasses",
    "TypeMeasure",
    "Market",
    "build_market",
    "ExactCount",
    "PoissonCount",
    "CountMode",
    "Student",
    "FiniteMarket",
    "sample_finite_market",
    "conditional_admission_prob",
    "AdmissionSummary",
    "length_distribution_from_dict",
    "measure_to_dict",
    "measure_from_dict",
    "market_to_dict",
    "market_from_dict",
]


# --------------------------------------------------------------------------
# List-length distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthDistribution:
    """Distribution of ranked-list lengths, stored as a pmf over 0..max.

    Length 0 is allowed (a student who lists nothing and stays unmatched);
    the Poisson constructor produces such mass naturally, and keeping it
    makes the match-count markets agree with their closed forms.
    """

    probs: Tuple[float, ...]  # probs[k] = P(length = k), k = 0..max

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.size < 2:
            raise ConfigError("length distribution needs support up to at least 1")
        if np.any(p < -1e-15):
            raise ConfigError("length probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError(f"length probabilities sum to {p.sum()!r}, expected 1")

    @classmethod
    def fixed(cls, length: int) -> "LengthDistribution":
        if length < 1:
            raise ConfigError("fixed list length must be >= 1")
        return cls(tuple([0.0] * length + [1.0]))

    @classmethod
    def poisson(cls, mean: float, max_length: int) -> "LengthDistribution":
        """Poisson(mean) with the upper tail lumped at ``max_length``."""
        if mean < 0 or not np.isfinite(mean):
            raise ConfigError(f"poisson mean must be finite and >= 0, got {mean!r}")
        if max_length < 1:
            raise ConfigError("max_length must be >= 1")
        k = np.arange(max_length + 1)
        pmf = stats.poisson.pmf(k, mean)
        pmf[-1] += stats.poisson.sf(max_length, mean)
        return cls(tuple(pmf.tolist()))

    @classmethod
    def explicit(
        cls, probs: Sequence[float], p_empty: float = 0.0
    ) -> "LengthDistribution":
        """probs[i] = P(length = i+1); optionally some mass on empty lists."""
        return cls(tuple([p_empty] + list(probs)))

    @property
    def max_length(self) -> int:
        return len(self.probs) - 1

    def pmf(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    def tails(self) -> np.ndarray:
        """t[k-1] = P(length >= k) for k = 1..max."""
        p = self.pmf()
        return np.cumsum(p[::-1])[::-1][1:]

    def mean(self) -> float:
        p = self.pmf()
        return float(np.dot(np.arange(p.size), p))

    def survival_poly(self, x):
        """S(x) = sum_k P(len >= k) x^(k-1), the expected number of tries.

        Evaluating at ``x = 1 - q`` gives the expected number of schools a
        student applies to when each successive application is independently
        accepted with probability ``q``.
        """
        return np.polynomial.polynomial.polyval(x, self.tails())

    def rank_weighted_poly(self, x):
        """R(x) = sum_k k * P(len >= k) x^(k-1); pairs with survival_poly
        to produce rank-weighted masses."""
        t = self.tails()
        return np.polynomial.polynomial.polyval(x, t * np.arange(1, t.size + 1))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.probs), size=size, p=self.pmf())


# --------------------------------------------------------------------------
# Priority models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IndependentUniform:
    """Independent U[0,1] priority at each listed school."""


@dataclass(frozen=True)
class SingleLottery:
    """One U[0,1] lottery number used as the priority at every school."""


@dataclass(frozen=True)
class CommonPlusIdiosyncratic:
    """Priority at school h is w*u + (1-w)*z_h, u common, z_h independent."""

    weight: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.weight <= 1.0):
            raise ConfigError(f"common-value weight must be in [0,1], got {self.weight!r}")


PriorityModel = Union[IndependentUniform, SingleLottery, CommonPlusIdiosyncratic]


# --------------------------------------------------------------------------
# Type measures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudentClass:
    weight: float
    prefs: Tuple[str, ...]
    priorities: PriorityModel = field(default_factory=IndependentUniform)

    def __post_init__(self) -> None:
        if not (self.weight > 0 and np.isfinite(self.weight)):
            raise ConfigError(f"class weight must be positive, got {self.weight!r}")
        if len(set(self.prefs)) != len(self.prefs):
            raise ConfigError(f"class list contains duplicate schools: {self.prefs!r}")


@dataclass(frozen=True)
class SymmetricIID:
    total_mass: float
    list_length: LengthDistribution


@dataclass(frozen=True)
class SymmetricRSD:
    total_mass: float
    list_length: LengthDistribution


@dataclass(frozen=True)
class CommonValue:
    total_mass: float
    weight: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.weight <= 1.0):
            raise ConfigError(f"common-value weight must be in [0,1], got {self.weight!r}")


@dataclass(frozen=True)
class DiscreteClasses:
    classes: Tuple[StudentClass, ...]

    @property
    def total_mass(self) -> float:
        return float(sum(c.weight for c in self.classes))


TypeMeasure = Union[SymmetricIID, SymmetricRSD, CommonValue, DiscreteClasses]

_SYMMETRIC_FAMILIES = (SymmetricIID, SymmetricRSD, CommonValue)


# --------------------------------------------------------------------------
# Market
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Market:
    schools: Tuple[str, ...]
    capacities: Tuple[int, ...]
    measure: TypeMeasure

    def __post_init__(self) -> None:
        if len(self.schools) == 0:
            raise ConfigError("market needs at least one school")
        if len(set(self.schools)) != len(self.schools):
            raise ConfigError(f"duplicate school ids: {self.schools!r}")
        if len(self.capacities) != len(self.schools):
            raise ConfigError("capacities and schools must align")
        for c in self.capacities:
            if not (isinstance(c, (int, np.integer)) and c >= 1):
                raise ConfigError(f"capacities must be integers >= 1, got {c!r}")
        m = self.measure
        if m.total_mass <= 0 or not np.isfinite(m.total_mass):
            raise ConfigError(f"measure total mass must be positive, got {m.total_mass!r}")
        if isinstance(m, _SYMMETRIC_FAMILIES):
            if len(set(self.capacities)) > 1:
                raise ConfigError(
                    "symmetric measure families assume interchangeable schools; "
                    "use DiscreteClasses for per-school capacities"
                )
            if isinstance(m, (SymmetricIID, SymmetricRSD)):
                if m.list_length.max_length > len(self.schools):
                    raise ConfigError(
                        f"list lengths up to {m.list_length.max_length} exceed the "
                        f"{len(self.schools)} available schools"
                    )
        elif isinstance(m, DiscreteClasses):
            if not m.classes:
                raise ConfigError("DiscreteClasses needs at least one class")
            known = set(self.schools)
            for c in m.classes:
                unknown = [h for h in c.prefs if h not in known]
                if unknown:
                    raise ConfigError(f"class lists unknown school(s): {unknown!r}")
        else:
            raise ConfigError(f"unrecognized measure family: {type(m).__name__}")

    @property
    def n_schools(self) -> int:
        return len(self.schools)

    @property
    def total_seats(self) -> int:
        return int(sum(self.capacities))

    @property
    def total_mass(self) -> float:
        return self.measure.total_mass

    def capacity_of(self, school: str) -> int:
        return self.capacities[self.schools.index(school)]

    def scaled(self, m: int) -> "Market":
        """The same market with capacities and student mass both scaled by m."""
        if m < 1:
            raise ConfigError("scale factor must be >= 1")
        caps = tuple(int(c) * m for c in self.capacities)
        meas = self.measure
        if isinstance(meas, DiscreteClasses):
            scaled = DiscreteClasses(
                tuple(
                    StudentClass(c.weight * m, c.prefs, c.priorities)
                    for c in meas.classes
                )
            )
        elif isinstance(meas, SymmetricIID):
            scaled = SymmetricIID(meas.total_mass * m, meas.list_length)
        elif isinstance(meas, SymmetricRSD):
            scaled = SymmetricRSD(meas.total_mass * m, meas.list_length)
        else:
            scaled = CommonValue(meas.total_mass * m, meas.weight)
        return Market(self.schools, caps, scaled)


def _school_names(n: int) -> Tuple[str, ...]:
    width = max(2, len(str(n)))
    return tuple(f"s{i + 1:0{width}d}" for i in range(n))


def build_market(
    schools: Union[int, Sequence[str]],
    capacities: Union[int, Sequence[int]],
    measure: TypeMeasure,
) -> Market:
    """Assemble and validate a Market; ``schools`` may be a count."""
    names = _school_names(schools) if isinstance(schools, int) else tuple(schools)
    if isinstance(capacities, (int, np.integer)):
        caps = tuple(int(capacities) for _ in names)
    else:
        caps = tuple(int(c) for c in capacities)
    return Market(names, caps, measure)


# --------------------------------------------------------------------------
# Finite rosters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactCount:
    n: int

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ConfigError("student count must be >= 0")


@dataclass(frozen=True)
class PoissonCount:
    mass: float

    def __post_init__(self) -> None:
        if not (self.mass >= 0 and np.isfinite(self.mass)):
            raise ConfigError(f"poisson mass must be finite and >= 0, got {self.mass!r}")


CountMode = Union[ExactCount, PoissonCount]


@dataclass(frozen=True)
class Student:
    prefs: Tuple[str, ...]
    scores: Tuple[float, ...]  # aligned with prefs

    def __post_init__(self) -> None:
        if len(self.prefs) != len(self.scores):
            raise ConfigError("student prefs and scores must align")

    def score_at(self, school: str) -> float:
        return self.scores[self.prefs.index(school)]


def _roster_has_ties(schools: Tuple[str, ...], students: Sequence["Student"]) -> bool:
    for h in schools:
        seen = set()
        for s in students:
            if h in s.prefs:
                x = s.score_at(h)
                if x in seen:
                    return True
                seen.add(x)
    return False


@dataclass(frozen=True)
class FiniteMarket:
    schools: Tuple[str, ...]
    capacities: Tuple[int, ...]
    students: Tuple[Student, ...]

    def __post_init__(self) -> None:
        known = set(self.schools)
        for s in self.students:
            for h in s.prefs:
                if h not in known:
                    raise ConfigError(f"student lists unknown school {h!r}")
        if _roster_has_ties(self.schools, self.students):
            raise ConfigError("tied priority scores are not allowed")

    @property
    def n_students(self) -> int:
        return len(self.students)

    def capacity_of(self, school: str) -> int:
        return self.capacities[self.schools.index(school)]


def _uniform_list(schools: Tuple[str, ...], k: int, rng: np.random.Generator) -> Tuple[str, ...]:
    return tuple(schools[j] for j in rng.permutation(len(schools))[:k])


def _draw_scores(
    model: PriorityModel, n_listed: int, rng: np.random.Generator
) -> Tuple[float, ...]:
    if isinstance(model, IndependentUniform):
        return tuple(rng.random(n_listed).tolist())
    if isinstance(model, SingleLottery):
        u = float(rng.random())
        return tuple([u] * n_listed)
    u = float(rng.random())
    z = rng.random(n_listed)
    w = model.weight
    return tuple((w * u + (1.0 - w) * z).tolist())


def _draw_students(
    market: Market, rng: np.random.Generator, n: int
) -> List[Student]:
    measure = market.measure
    schools = market.schools
    students: List[Student] = []
    if isinstance(measure, DiscreteClasses):
        weights = np.array([c.weight for c in measure.classes])
        idx = rng.choice(len(measure.classes), size=n, p=weights / weights.sum())
        for i in idx:
            cls = measure.classes[i]
            students.append(Student(cls.prefs, _draw_scores(cls.priorities, len(cls.prefs), rng)))
        return students
    if isinstance(measure, SymmetricIID):
        model: PriorityModel = IndependentUniform()
        lengths = measure.list_length.sample(rng, n)
    elif isinstance(measure, SymmetricRSD):
        model = SingleLottery()
        lengths = measure.list_length.sample(rng, n)
    else:
        model = CommonPlusIdiosyncratic(measure.weight)
        lengths = np.full(n, len(schools))
    for k in lengths:
        prefs = _uniform_list(schools, int(k), rng)
        students.append(Student(prefs, _draw_scores(model, len(prefs), rng)))
    return students


def sample_finite_market(
    market: Market, count_mode: CountMode, seed: int
) -> FiniteMarket:
    """Draw a concrete roster of students iid from the (normalized) measure.

    Deterministic given ``seed``.  Exact ties in priority scores would break
    the strictness the finite theory needs, so on the (astronomically rare)
    collision the whole roster is re-drawn.
    """
    rng = np.random.default_rng(seed)
    if isinstance(count_mode, ExactCount):
        n = count_mode.n
    else:
        n = int(rng.poisson(count_mode.mass))

    for _attempt in range(100):
        students = _draw_students(market, rng, n)
        if not _roster_has_ties(market.schools, students):
            return FiniteMarket(market.schools, market.capacities, tuple(students))
    raise ConvergenceError("could not draw a tie-free roster in 100 attempts")


# --------------------------------------------------------------------------
# Admission summaries (the measure-side reduction of an admissions function)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissionSummary:
    """Acceptance probabilities conditioned on whatever the priority model shares.

    ``independent_q[h]`` is the unconditional acceptance probability at h.
    ``lottery_q[h]`` tabulates acceptance given the lottery number, on the
    solver grid.  ``common_q[w]`` tabulates, for mixing weight w, acceptance
    at each school given the common factor u on ``common_grid[w]``.
    """

    independent_q: Dict[str, float]
    lottery_q: Dict[str, np.ndarray]
    common_q: Dict[float, Dict[str, np.ndarray]]
    common_grid: Dict[float, np.ndarray]


def _priority_models(measure: TypeMeasure) -> Iterable[PriorityModel]:
    if isinstance(measure, (SymmetricIID,)):
        return [IndependentUniform()]
    if isinstance(measure, SymmetricRSD):
        return [SingleLottery()]
    if isinstance(measure, CommonValue):
        return [CommonPlusIdiosyncratic(measure.weight)]
    return [c.priorities for c in measure.classes]


def conditional_admission_prob(
    measure: TypeMeasure,
    admissions,
    common_grid_size: int = 257,
) -> AdmissionSummary:
    """Reduce an admissions function to per-priority-model acceptance tables.

    The solver's interest integrals only ever see an admissions function
    through these statistics, so each priority model needs its own cut:
    a scalar for independent priorities, a table over the lottery number
    for shared lotteries, and a table over the common factor for mixed
    priorities (acceptance there is the window average of A over the
    possible idiosyncratic draws, computed with the exact cell integrals).
    """
    independent: Dict[str, float] = {}
    lottery: Dict[str, np.ndarray] = {}
    common: Dict[float, Dict[str, np.ndarray]] = {}
    common_grids: Dict[float, np.ndarray] = {}

    models = list(_priority_models(measure))
    schools = list(admissions.values.keys())

    # clip away float dust so survival products downstream stay in [0, 1]
    def fill_independent() -> None:
        for h in schools:
            if h not in independent:
                independent[h] = float(np.clip(admissions.integral(h), 0.0, 1.0))

    def fill_lottery() -> None:
        for h in schools:
            if h not in lottery:
                lottery[h] = np.clip(
                    np.asarray(admissions.values[h], dtype=np.float64), 0.0, 1.0
                )

    def fill_common(w: float) -> None:
        if w in common:
            return
        u = np.linspace(0.0, 1.0, common_grid_size)
        common_grids[w] = u
        if w >= 1.0:
            common[w] = {
                h: np.clip(admissions.at(h, u), 0.0, 1.0) for h in schools
            }
            return
        lo = w * u
        hi = w * u + (1.0 - w)
        common[w] = {
            h: np.clip(
                (admissions.integral_up_to(h, hi) - admissions.integral_up_to(h, lo))
                / (1.0 - w),
                0.0,
                1.0,
            )
            for h in schools
        }

    for model in models:
        if isinstance(model, IndependentUniform):
            fill_independent()
        elif isinstance(model, SingleLottery):
            fill_lottery()
        else:
            fill_common(model.weight)

    return AdmissionSummary(independent, lottery, common, common_grids)

# --------------------------------------------------------------------------
# Plain-dict serialization (shared by config files and result documents)
# --------------------------------------------------------------------------


def _priorities_to_dict(model: PriorityModel) -> Dict[str, object]:
    if isinstance(model, IndependentUniform):
        return {"model": "independent"}
    if isinstance(model, SingleLottery):
        return {"model": "lottery"}
    return {"model": "common", "weight": model.weight}


def _priorities_from_dict(doc: Dict[str, object]) -> PriorityModel:
    name = doc.get("model", "independent")
    if name == "independent":
        return IndependentUniform()
    if name == "lottery":
        return SingleLottery()
    if name == "common":
        if "weight" not in doc:
            raise ConfigError("common priority model needs a 'weight'")
        return CommonPlusIdiosyncratic(float(doc["weight"]))
    raise ConfigError(f"unknown priority model {name!r}")


def length_distribution_from_dict(doc) -> LengthDistribution:
    """Accepts {"fixed": k}, {"poisson_mean": m, "max": M}, {"probs": [...]},
    or a bare integer meaning a fixed length."""
    if isinstance(doc, (int, np.integer)):
        return LengthDistribution.fixed(int(doc))
    if not isinstance(doc, dict):
        raise ConfigError(f"cannot parse list-length spec {doc!r}")
    if "fixed" in doc:
        return LengthDistribution.fixed(int(doc["fixed"]))
    if "poisson_mean" in doc:
        if "max" not in doc:
            raise ConfigError("poisson list lengths need a 'max' cutoff")
        return LengthDistribution.poisson(float(doc["poisson_mean"]), int(doc["max"]))
    if "probs" in doc:
        return LengthDistribution(tuple(float(x) for x in doc["probs"]))
    raise ConfigError(f"cannot parse list-length spec with keys {sorted(doc)!r}")


def measure_to_dict(measure: TypeMeasure) -> Dict[str, object]:
    if isinstance(measure, SymmetricIID):
        return {
            "family": "symmetric_iid",
            "total_mass": measure.total_mass,
            "list_length": {"probs": list(measure.list_length.probs)},
        }
    if isinstance(measure, SymmetricRSD):
        return {
            "family": "symmetric_rsd",
            "total_mass": measure.total_mass,
            "list_length": {"probs": list(measure.list_length.probs)},
        }
    if isinstance(measure, CommonValue):
        return {
            "family": "common_value",
            "total_mass": measure.total_mass,
            "weight": measure.weight,
        }
    return {
        "family": "classes",
        "classes": [
            {
                "weight": c.weight,
                "prefs": list(c.prefs),
                "priorities": _priorities_to_dict(c.priorities),
            }
            for c in measure.classes
        ],
    }


def measure_from_dict(doc: Dict[str, object]) -> TypeMeasure:
    family = doc.get("family")
    if family == "symmetric_iid":
        return SymmetricIID(
            float(doc["total_mass"]),
            length_distribution_from_dict(doc["list_length"]),
        )
    if family == "symmetric_rsd":
        return SymmetricRSD(
            float(doc["total_mass"]),
            length_distribution_from_dict(doc["list_length"]),
        )
    if family == "common_value":
        return CommonValue(float(doc["total_mass"]), float(doc.get("weight", 0.5)))
    if family == "classes":
        classes = []
        for c in doc["classes"]:
            classes.append(
                StudentClass(
                    float(c["weight"]),
                    tuple(c["prefs"]),
                    _priorities_from_dict(c.get("priorities", {})),
                )
            )
        return DiscreteClasses(tuple(classes))
    raise ConfigError(f"unknown measure family {family!r}")


def market_to_dict(market: Market) -> Dict[str, object]:
    return {
        "schools": list(market.schools),
        "capacities": [int(c) for c in market.capacities],
        "measure": measure_to_dict(market.measure),
    }


def market_from_dict(doc: Dict[str, object]) -> Market:
    return Market(
        tuple(doc["schools"]),
        tuple(int(c) for c in doc["capacities"]),
        measure_from_dict(doc["measure"]),
    )
