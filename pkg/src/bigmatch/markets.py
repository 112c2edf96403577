"""Ready-made markets used by the experiment suite, demos, and docs.

Each factory returns a plain :class:`~bigmatch.measures.Market`; nothing here
is required to use the solver, but keeping the canonical experiment markets
in one place means the acceptance tests, the demo scripts, and the sample
configs all agree on what, say, "the capacity-scaling market" means.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .measures import (
    CommonPlusIdiosyncratic,
    CommonValue,
    DiscreteClasses,
    IndependentUniform,
    LengthDistribution,
    Market,
    SingleLottery,
    StudentClass,
    SymmetricIID,
    SymmetricRSD,
    build_market,
)

__all__ = [
    "single_school",
    "intro_market",
    "capacity_scaling_market",
    "balance_market",
    "match_count_market",
    "full_support_market",
    "random_classes_market",
]


def single_school(mass: float = 1.0, capacity: int = 1) -> Market:
    """One school, one student class that only wants that school."""
    cls = StudentClass(mass, ("s01",))
    return Market(("s01",), (capacity,), DiscreteClasses((cls,)))


def intro_market(n_schools: int = 10) -> Market:
    """Unit-capacity schools and an equal mass of single-choice students.

    Each student picks one school uniformly at random, so the matched
    fraction has the classic closed form 1 - (1 - 1/n)^n.
    """
    measure = SymmetricIID(
        total_mass=float(n_schools), list_length=LengthDistribution.fixed(1)
    )
    return build_market(n_schools, 1, measure)


def capacity_scaling_market(
    seats_per_school: int, n_schools: int = 10, mass_per_seat: float = 2.0
) -> Market:
    """Half-common, half-idiosyncratic preferences over equally sized schools,
    with demand pinned at ``mass_per_seat`` students per seat.

    Sweeping ``seats_per_school`` holds the deterministic-kind cutoffs fixed
    while the finite-market cutoff uncertainty shrinks like one over the
    square root of the school size.
    """
    total_seats = n_schools * seats_per_school
    measure = CommonValue(total_mass=mass_per_seat * total_seats, weight=0.5)
    return build_market(n_schools, seats_per_school, measure)


def balance_market(n_students: float, n_schools: int = 40) -> Market:
    """Unit-capacity schools, complete uniform lists, independent priorities.

    Everything is smooth in ``n_students`` except at the balance point
    ``n_students == n_schools``, where the average rank jumps.
    """
    measure = SymmetricIID(
        total_mass=float(n_students),
        list_length=LengthDistribution.fixed(n_schools),
    )
    return build_market(n_schools, 1, measure)


def match_count_market(W: float, M: int, q: float, style: str = "rsd") -> Market:
    """The market whose matched mass the closed-form predictions target:
    ``W`` students, ``M`` unit-capacity schools, and list lengths that are
    Poisson with mean ``M * (1 - q)`` (each school kept with chance 1-q),
    truncated at ``M``.
    """
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"q must be in [0, 1), got {q!r}")
    lengths = LengthDistribution.poisson(M * (1.0 - q), max_length=M)
    if style == "rsd":
        measure = SymmetricRSD(total_mass=float(W), list_length=lengths)
    elif style == "iid":
        measure = SymmetricIID(total_mass=float(W), list_length=lengths)
    else:
        raise ConfigError(f"style must be 'rsd' or 'iid', got {style!r}")
    return build_market(M, 1, measure)


def full_support_market() -> Market:
    """Three schools, all six preference orders present, independent
    priorities, about 12% more students than seats.

    Every preference order and every score vector has positive density, and
    the market is oversubscribed, so deterministic cutoffs are interior —
    the right backdrop for comparing vacancy kinds as the market scales.
    """
    orders = [
        ("a", "b", "c"),
        ("a", "c", "b"),
        ("b", "a", "c"),
        ("b", "c", "a"),
        ("c", "a", "b"),
        ("c", "b", "a"),
    ]
    weights = [0.9, 0.7, 0.5, 0.6, 0.8, 1.0]
    classes = tuple(StudentClass(w, prefs) for w, prefs in zip(weights, orders))
    return Market(("a", "b", "c"), (1, 2, 1), DiscreteClasses(classes))


def random_classes_market(seed: int) -> Market:
    """A randomized discrete-classes market, reproducible from ``seed``.

    Schools, capacities, class count, list contents, weights, and priority
    models are all drawn at random; total student mass lands between half
    and twice the seat count, and every school is listed by someone.
    """
    rng = np.random.default_rng(seed)
    n_schools = int(rng.integers(2, 5))
    schools = tuple(f"s{j + 1:02d}" for j in range(n_schools))
    capacities = tuple(int(c) for c in rng.integers(1, 4, size=n_schools))

    def draw_classes():
        out = []
        for _ in range(int(rng.integers(2, 6))):
            k = int(rng.integers(1, n_schools + 1))
            prefs = tuple(schools[j] for j in rng.permutation(n_schools)[:k])
            roll = rng.random()
            if roll < 0.5:
                model = IndependentUniform()
            elif roll < 0.75:
                model = SingleLottery()
            else:
                model = CommonPlusIdiosyncratic(float(rng.uniform(0.2, 0.8)))
            out.append((float(rng.uniform(0.2, 1.5)), prefs, model))
        return out

    drawn = draw_classes()
    while not all(any(h in prefs for _, prefs, _ in drawn) for h in schools):
        drawn = draw_classes()

    target_mass = float(rng.uniform(0.5, 2.0)) * sum(capacities)
    scale = target_mass / sum(w for w, _, _ in drawn)
    classes = tuple(
        StudentClass(w * scale, prefs, model) for w, prefs, model in drawn
    )
    return Market(schools, capacities, DiscreteClasses(classes))
