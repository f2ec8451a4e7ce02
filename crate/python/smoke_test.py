"""Smoke test for the nonprob_pel_py extension module.

Build and install first:

    pip install --no-build-isolation ./crates/python   # or: maturin develop -m crates/python/Cargo.toml
    python3 python/smoke_test.py
"""

import math
import random

import nonprob_pel_py as npl


def toy_samples(seed=7, n_a=150, n_b=120):
    rng = random.Random(seed)
    xa, ya = [], []
    for _ in range(n_a):
        x = [rng.random(), rng.random()]
        p = 1.0 / (1.0 + math.exp(-(-1.0 + 1.5 * x[0] + x[1])))
        xa.append(x)
        ya.append(1.0 if rng.random() < p else 0.0)
    xb = [[rng.random(), rng.random()] for _ in range(n_b)]
    d = [rng.uniform(20.0, 60.0) for _ in range(n_b)]
    return npl.NonProbSample(xa, ya), npl.ProbSample(xb, d)


def main():
    assert abs(npl.chi2_quantile(0.95, 1.0) - 3.841458820694124) < 1e-9
    assert abs(npl.normal_quantile(0.975) - 1.959963984540054) < 1e-9

    # Uniform weights and a centred constraint: lambda = 0, p = d.
    p, lam, feasible = npl.solve_el([0.25] * 4, [[1.0, -1.0, 2.0, -2.0]])
    assert feasible and lam == [0.0] and p == [0.25] * 4
    _, _, feasible = npl.solve_el([0.5, 0.5], [[1.0, 2.0]])
    assert not feasible

    a, b = toy_samples()
    assert a.n == 150 and b.n == 120

    est = npl.estimate(a, b, N=b.n_hat)
    assert set(est) == {"ipw1", "ipw2", "dr1", "dr2", "pel"}
    for key, value in est.items():
        assert 0.0 <= value <= 1.0 or key in ("ipw1", "dr1"), (key, value)

    scores = npl.propensity_scores(a, b)
    assert len(scores) == a.n and all(0.0 < s < 1.0 for s in scores)

    intervals = npl.intervals(a, b, K=200, seed=3)
    assert [ci.method for ci in intervals] == [
        "pel1_adj", "pel1_bts", "pel2_adj", "pel2_bts", "na1", "na2", "bst",
    ]
    for ci in intervals:
        assert ci.lower < ci.upper, ci
        assert ci.level == 0.95
    again = npl.intervals(a, b, methods=["pel2_bts"], K=200, seed=3)
    assert (again[0].lower, again[0].upper) == (intervals[3].lower, intervals[3].upper)
    print(intervals[2], intervals[2].diagnostics)

    try:
        npl.intervals(a, b, methods=["nope"])
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("unknown method accepted")

    table = npl.simulate("TT", reps=2, K=50, N=3000, n_A=100, n_B=100)
    lines = table.strip().splitlines()
    assert lines[0].startswith("method,") and len(lines) == 8, table
    print(table)
    print("smoke test passed")


if __name__ == "__main__":
    main()
