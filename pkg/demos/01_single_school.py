"""A single school, unit demand: where 1 - 1/e comes from.

One school with one seat faces a unit mass of single-choice students.  A
deterministic cutoff model says the school fills exactly; treating realized
demand as Poisson says a seat stays empty with probability 1/e.  The same
gap shows up in a ten-school finite market where every student lists one
school at random.
"""

import math

import bigmatch as bm
from bigmatch import markets


def main() -> None:
    market = markets.single_school()
    poisson = bm.solve_stable(market, bm.VacancyKind.POISSON, tol=1e-12)
    det = bm.solve_stable(market, bm.VacancyKind.DETERMINISTIC)

    _, matched_pois = bm.matched_mass(poisson, market)
    _, matched_det = bm.matched_mass(det, market)
    print("One school, capacity 1, unit mass of single-choice students")
    print(f"  deterministic vacancy: matched mass {matched_det:.6f}")
    print(f"  poisson vacancy:       matched mass {matched_pois:.6f}")
    print(f"  1 - 1/e            =   {1 - math.exp(-1):.6f}")
    print(f"  gap to closed form:    {abs(matched_pois - (1 - math.exp(-1))):.2e}")

    intro = markets.intro_market()
    sim = bm.monte_carlo(intro, bm.ExactCount(10), trials=4000, master_seed=1)
    s = sim.stat("matched", "student")
    target = 1 - (1 - 1 / 10) ** 10
    print()
    print("Ten schools, ten students, each listing one school uniformly")
    print(f"  simulated matched fraction: {s.mean / 10:.4f} (se {s.se / 10:.4f})")
    print(f"  1 - (1 - 1/10)^10         = {target:.4f}")
    print("  a deterministic-demand model would predict every seat fills")


if __name__ == "__main__":
    main()
