"""Vacancy probabilities and seat-filling integrals for a single school.

A school with ``capacity`` seats facing expected interest ``lam`` has a
*vacancy probability* — the chance that a marginal applicant finds a seat
free.  Two standard specifications:

* ``deterministic``: a unit mass of seats fills exactly; vacancy is
  ``1`` while ``lam < capacity`` and ``0`` at or above it.
* ``poisson``: applicant counts are Poisson distributed, so the vacancy
  probability is ``P(Poisson(lam) <= capacity - 1)``, evaluated through
  the regularized upper incomplete gamma function (no term-by-term sums,
  no overflow for large ``lam``).

``enrollment`` integrates the vacancy probability from 0 to ``lam``,
giving the expected number of seats filled when interest ramps up to
``lam``; ``lambda_for_enrollment`` inverts it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import special

from .errors import ConfigError, ConvergenceError, InfeasibleError

__all__ = [
    "VacancyKind",
    "VacancyFunction",
    "DETERMINISTIC",
    "POISSON",
    "vacancy",
    "vacancy_det",
    "vacancy_pois",
    "enrollment",
    "acceptance_rate",
    "lambda_for_enrollment",
]

ArrayLike = Union[float, np.ndarray]


class VacancyKind(str, Enum):
    DETERMINISTIC = "deterministic"
    POISSON = "poisson"


def _check_capacity(capacity: ArrayLike) -> np.ndarray:
    c = np.asarray(capacity)
    if not np.issubdtype(c.dtype, np.integer):
        if not np.all(c == np.floor(c)):
            raise ConfigError(f"capacity must be a whole number, got {capacity!r}")
        c = c.astype(np.int64)
    if np.any(c < 1):
        raise ConfigError(f"capacity must be >= 1, got {capacity!r}")
    return c


def _check_lam(lam: ArrayLike) -> np.ndarray:
    arr = np.asarray(lam, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ConfigError(f"interest must be finite and >= 0, got {lam!r}")
    return arr


def vacancy_det(lam: ArrayLike, capacity: ArrayLike) -> ArrayLike:
    """Indicator that interest is strictly below capacity (so ``lam == capacity`` gives 0)."""
    lam = _check_lam(lam)
    c = _check_capacity(capacity)
    out = (lam < c).astype(np.float64)
    return out if out.ndim else float(out)


def vacancy_pois(lam: ArrayLike, capacity: ArrayLike) -> ArrayLike:
    """``P(Poisson(lam) < capacity)`` via the regularized upper incomplete gamma.

    Strictly decreasing in ``lam`` and strictly positive wherever float64
    can represent the value (it underflows to 0.0 somewhere past
    ``lam - capacity ~ 700``, which is the best any fixed-width float
    can do).
    """
    lam = _check_lam(lam)
    c = _check_capacity(capacity)
    out = special.gammaincc(c, lam)
    return out if np.ndim(out) else float(out)


def vacancy(lam: ArrayLike, capacity: ArrayLike, kind: VacancyKind) -> ArrayLike:
    if kind == VacancyKind.DETERMINISTIC:
        return vacancy_det(lam, capacity)
    if kind == VacancyKind.POISSON:
        return vacancy_pois(lam, capacity)
    raise ConfigError(f"unknown vacancy kind {kind!r}")


def enrollment(lam: ArrayLike, capacity: ArrayLike, kind: VacancyKind) -> ArrayLike:
    """Seats filled at interest ``lam``: the integral of ``vacancy`` from 0 to ``lam``.

    Deterministic: ``min(lam, capacity)``.  Poisson: ``E[min(N, capacity)]``
    for ``N ~ Poisson(lam)``, computed as
    ``lam * P(N <= capacity-1) + capacity * P(N >= capacity+1)``
    (two regularized-gamma calls; no sum over seats).
    """
    lam = _check_lam(lam)
    c = _check_capacity(capacity)
    if kind == VacancyKind.DETERMINISTIC:
        out = np.minimum(lam, c).astype(np.float64)
    elif kind == VacancyKind.POISSON:
        out = lam * special.gammaincc(c, lam) + c * special.gammainc(c + 1, lam)
    else:
        raise ConfigError(f"unknown vacancy kind {kind!r}")
    return out if out.ndim else float(out)


def acceptance_rate(lam: ArrayLike, capacity: ArrayLike, kind: VacancyKind) -> ArrayLike:
    """Filled seats per unit of interest, ``enrollment/lam``; 1 at ``lam == 0``.

    Weakly decreasing in ``lam`` (running average of a weakly decreasing
    integrand) — a property test pins this.
    """
    lam = _check_lam(lam)
    enr = np.asarray(enrollment(lam, capacity, kind))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(lam > 0, enr / np.where(lam > 0, lam, 1.0), 1.0)
    return out if out.ndim else float(out)


def lambda_for_enrollment(
    rho: float,
    capacity: int,
    kind: VacancyKind,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Smallest interest level whose enrollment equals ``rho``.

    Deterministic kind: exact (``rho`` itself) for ``rho <= capacity``.
    Poisson kind: bracketed bisection — enrollment is strictly increasing,
    so the root is unique; requires ``rho < capacity`` since a Poisson
    school only fills in the limit.
    """
    if not np.isfinite(rho) or rho <= 0:
        raise ConfigError(f"target enrollment must be positive, got {rho!r}")
    c = int(_check_capacity(capacity))
    if kind == VacancyKind.DETERMINISTIC:
        if rho > c:
            raise InfeasibleError(f"cannot fill {rho} seats with capacity {c}")
        return float(rho)
    if kind != VacancyKind.POISSON:
        raise ConfigError(f"unknown vacancy kind {kind!r}")
    if rho >= c:
        raise InfeasibleError(
            f"enrollment {rho} is infeasible under the poisson kind with capacity {c} "
            "(seats only fill completely in the infinite-interest limit)"
        )
    # enrollment(lam) <= lam, so lam = rho brackets from below.
    lo = float(rho)
    hi = max(2.0 * rho, float(c))
    for _ in range(max_iter):
        if enrollment(hi, c, kind) >= rho:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"could not bracket enrollment target {rho} (capacity {c})")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if enrollment(mid, c, kind) < rho:
            lo = mid
        else:
            hi = mid
    else:
        raise ConvergenceError(
            f"bisection for enrollment target {rho} did not reach tol={tol} "
            f"in {max_iter} iterations"
        )
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class VacancyFunction:
    """A vacancy specification bundled with its derived operations."""

    kind: VacancyKind

    def __call__(self, lam: ArrayLike, capacity: ArrayLike) -> ArrayLike:
        return vacancy(lam, capacity, self.kind)

    def enrollment(self, lam: ArrayLike, capacity: ArrayLike) -> ArrayLike:
        return enrollment(lam, capacity, self.kind)

    def acceptance_rate(self, lam: ArrayLike, capacity: ArrayLike) -> ArrayLike:
        return acceptance_rate(lam, capacity, self.kind)

    def lambda_for_enrollment(self, rho: float, capacity: int, **kw: float) -> float:
        return lambda_for_enrollment(rho, capacity, self.kind, **kw)


DETERMINISTIC = VacancyFunction(VacancyKind.DETERMINISTIC)
POISSON = VacancyFunction(VacancyKind.POISSON)
