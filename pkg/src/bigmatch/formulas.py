"""Closed-form rank and match-count predictions, independent of the solver.

Everything here is a scalar formula or a one-dimensional root-find, so these
values make good cross-validation targets: the fixed-point engine and the
Monte Carlo engine should both land on them without sharing any code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import optimize

from .errors import ConfigError
from .vacancy import VacancyKind, lambda_for_enrollment

__all__ = [
    "MarketRatios",
    "ar",
    "bound_more_seats",
    "bound_more_students_iid",
    "bound_rsd",
    "v_rsd_exact",
    "v_rsd_hat",
    "v_iid_hat",
]


@dataclass(frozen=True)
class MarketRatios:
    """Students-per-school mass, per-school capacity, and list length."""

    rho: float
    capacity: int
    ell: int

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho!r}")
        if self.capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if self.ell < 1:
            raise ConfigError("list length must be >= 1")


def _check_ell(ell: int) -> int:
    if ell < 1 or ell != int(ell):
        raise ConfigError(f"list length must be a natural number, got {ell!r}")
    return int(ell)


def ar(q: float, ell: int) -> float:
    """Average rank of matched students when each of ``ell`` independent
    applications succeeds with probability ``q``.

    Naively this is 1/q - ell*(1-q)**ell / (1 - (1-q)**ell), which
    cancels catastrophically near q = 0.  Factoring 1 - (1-q)**ell = q*S(1-q)
    with S the geometric partial sum turns it into the ratio of two positive
    polynomials,

        ar(q) = R(1-q) / S(1-q),   R(x) = sum (k+1) x^k,  S(x) = sum x^k,

    which is exact for every q in [0, 1]; q = 0 evaluates to the continuity
    limit (ell+1)/2 without special-casing.
    """
    ell = _check_ell(ell)
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must be in [0, 1], got {q!r}")
    x = 1.0 - q
    num = 0.0
    den = 0.0
    for k in range(ell - 1, -1, -1):  # Horner, highest degree first
        num = num * x + (k + 1)
        den = den * x + 1.0
    return num / den


def bound_more_seats(rho: float, capacity: int) -> float:
    """Upper bound on average rank when seats outnumber students.

    This is the interest level at which Poisson enrollment reaches ``rho``,
    divided by ``rho`` — the number of applications the marginal student
    burns per seat actually filled.  Finite only for ``rho < capacity``.
    """
    if not 0.0 < rho < capacity:
        raise ConfigError(
            f"bound requires 0 < rho < capacity, got rho={rho!r}, capacity={capacity!r}"
        )
    # scale the inversion tolerance with rho so the *ratio* keeps its digits
    # even for tiny demand
    tol = 1e-10 * min(1.0, rho)
    return lambda_for_enrollment(rho, capacity, VacancyKind.POISSON, tol=tol) / rho


def bound_more_students_iid(rho: float, capacity: int, ell: int) -> float:
    """Lower bound on average rank for independent priorities when students
    outnumber seats (``rho > capacity``)."""
    ell = _check_ell(ell)
    if not rho > capacity:
        raise ConfigError(
            f"bound requires rho > capacity, got rho={rho!r}, capacity={capacity!r}"
        )
    r = rho / capacity
    return ell * (1.0 - r - 1.0 / math.log(1.0 - 1.0 / r))


def bound_rsd(ell: int) -> float:
    """Upper bound on average rank under a single common lottery: 1 + ln(ell)."""
    return 1.0 + math.log(_check_ell(ell))


def _one_minus_q_pow(q: float, k: int) -> float:
    """1 - q**k, evaluated without cancellation for q near 1."""
    if q == 0.0:
        return 1.0
    return -math.expm1(k * math.log(q))


def v_rsd_exact(W: int, M: int, q: float) -> float:
    """Expected matches when W students pick from M schools under one shared
    lottery, each ranking any given school independently with probability 1-q.

    Direct evaluation of the j-term sum with running products; every factor
    (1 - q**k) goes through expm1 so the q -> 1 regime keeps full precision.
    """
    if W < 0 or M < 0 or W != int(W) or M != int(M):
        raise ConfigError(f"W and M must be natural numbers, got {W!r}, {M!r}")
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must be in [0, 1], got {q!r}")
    if q == 1.0:
        return 0.0
    total = 0.0
    prod = 1.0
    for j in range(1, min(int(M), int(W)) + 1):
        prod *= _one_minus_q_pow(q, int(M) - (j - 1)) * _one_minus_q_pow(q, int(W) - (j - 1))
        total += prod / _one_minus_q_pow(q, j)
    return total


def v_rsd_hat(W: float, M: float, q: float) -> float:
    """Large-market prediction for the expected matches of ``v_rsd_exact``.

    Symmetric in (W, M); computed with W <= M, where it reads
    W - log(1 + exp(-(M-W)(1-q)) - exp(-M(1-q))) / (1-q).
    """
    if not (W > 0 and M > 0):
        raise ConfigError(f"W and M must be positive, got {W!r}, {M!r}")
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"q must be in [0, 1), got {q!r}")
    if W > M:
        W, M = M, W
    s = 1.0 - q
    return W - math.log1p(math.exp(-(M - W) * s) - math.exp(-M * s)) / s


def v_iid_hat(W: float, M: float, q: float) -> float:
    """Large-market match-count prediction with independent lotteries: the
    unique positive solution of (1-q) V = log(1 - V/W) * log(1 - V/M).

    The left side minus the right side starts at 0, rises with slope (1-q),
    and falls to -infinity as V approaches min(W, M), so the positive root is
    bracketed and found with Brent's method.
    """
    if not (W > 0 and M > 0):
        raise ConfigError(f"W and M must be positive, got {W!r}, {M!r}")
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"q must be in [0, 1), got {q!r}")
    top = min(W, M)

    def gap(v: float) -> float:
        return (1.0 - q) * v - math.log1p(-v / W) * math.log1p(-v / M)

    lo = top * 1e-12
    hi = top * (1.0 - 1e-13)
    if gap(hi) >= 0.0:  # root crowded against the ceiling; nothing closer in float64
        return top * (1.0 - 1e-13)
    root = optimize.brentq(gap, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    return float(root)
