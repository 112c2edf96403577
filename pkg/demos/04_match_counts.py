"""How many matches form when lists are random and short?

W students face M schools; each student-school pair is mutually acceptable
with probability 1 - q, so list lengths are roughly Poisson with mean
M(1 - q).  The serial-dictatorship count has an exact but opaque product
sum; the continuum model turns it into two closed forms — one for a shared
lottery, one for independent priorities — and the solver reproduces the
shared-lottery value to six decimals.
"""

import bigmatch as bm
from bigmatch import formulas, markets


def main() -> None:
    W = 50.0
    print("  W    M     q   exact RSD   model RSD   solver RSD   model IID")
    for M, q in ((10, 0.90), (30, 0.90), (50, 0.95), (80, 0.95), (100, 0.98)):
        exact = formulas.v_rsd_exact(W, M, q)
        hat = formulas.v_rsd_hat(W, M, q)
        iid = formulas.v_iid_hat(W, M, q)
        market = markets.match_count_market(W, M, q, style="rsd")
        out = bm.solve_stable(market, bm.VacancyKind.POISSON,
                              grid_size=8001, tol=1e-12)
        _, solver = bm.matched_mass(out, market)
        print(f"{W:5.0f} {M:4d}  {q:.2f}  {exact:10.4f}  {hat:10.4f}"
              f"  {solver:11.6f}  {iid:10.4f}")
    print()
    print("independent priorities always match at least as many students as a")
    print("single shared lottery, and the model approximation stays within a")
    print("few percent of the exact serial-dictatorship sum")


if __name__ == "__main__":
    main()
