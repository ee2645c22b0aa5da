"""Smoke test for the prbopt_py extension module.

Build the module first (see README), e.g.:

    cargo build --release -p prbopt-py
    cp target/release/libprbopt_py.so python/prbopt_py.so
    PYTHONPATH=python python3 python/smoke_test.py
"""

import math

import prbopt_py as pp


def check(name, condition, detail=""):
    status = "ok" if condition else "FAIL"
    print(f"  [{status}] {name} {detail}")
    assert condition, name


def main():
    print("interval constructions")
    lo, hi = pp.clopper_pearson_interval(0, 20, 0.05)
    check("clopper-pearson zero-success", lo == 0.0 and abs(hi - 0.1684) < 5e-4, f"hi={hi:.4f}")
    jlo, jhi = pp.jeffreys_interval_py(0, 20, 0.05)
    check("jeffreys nested in clopper-pearson", lo <= jlo and jhi <= hi)
    blo, bhi = pp.empirical_bernstein_interval([0.4] * 100, 0.0, 1.0, 0.05)
    check("bernstein constant half-width", abs((bhi - 0.4) - 3 * math.log(60) / 100) < 1e-9)

    print("concentration diagnostics")
    tail = pp.borell_tis_tail(1.5, 0.5, 0.5)
    check("borell-tis reference", abs(tail - math.exp(-0.5)) < 1e-12, f"tail={tail:.4f}")
    bound = pp.expected_sup_bound(1.0, 1, 0.0, 1.0)
    check("expected-sup reference", abs(bound - 12 * math.sqrt(2)) < 1e-9)
    kappa = pp.variance_contraction_bound(1.0, 1.0, 0.01, 0.01, 1)
    check("variance contraction reference", abs(kappa - 0.999) < 1e-3, f"kappa={kappa:.4f}")

    print("posterior surrogate")
    points = [[0.1], [0.35], [0.6], [0.85]]
    values = [math.sin(5 * x[0]) for x in points]
    gp = pp.Gp(points, values, mean=0.0, variance=1.0, lengthscales=[0.3],
               noise_variance=1e-4)
    m, v = gp.mean_var([0.35])
    check("posterior interpolates", abs(m - values[1]) < 0.01 and v < 0.01,
          f"mean={m:.3f} var={v:.4f}")
    cov = gp.cov([[0.2], [0.8]])
    check("covariance is symmetric", abs(cov[0][1] - cov[1][0]) < 1e-12)
    inc = gp.incumbent()
    check("incumbent is an evaluated point", inc in points, f"incumbent={inc}")

    path = gp.sample_path([[i / 20] for i in range(21)], seed=3, num_features=1024)
    check("path evaluates everywhere", len(path) == 21 and all(math.isfinite(p) for p in path))

    est = gp.psi(inc, epsilon=2.5, draws=50, seed=1, num_features=512)
    check("huge epsilon is always optimal", est["mean"] == 1.0, f"psi={est['mean']}")

    verdict = gp.decide(inc, epsilon=2.5, delta_mod=0.025, delta_est_step=0.01,
                        cap=500, seed=2, num_features=512)
    check("decision is above the level", verdict["decision"] == "above" and verdict["guaranteed"],
          f"draws={verdict['draws_used']}")

    value = gp.acquisition_value([0.95])
    check("acquisition is nonnegative", value >= 0.0, f"value={value:.4f}")
    query = gp.next_query(seed=4)
    check("query lies in the cube", all(0.0 <= q <= 1.0 for q in query), f"query={query}")

    print("MAP fitting")
    import random
    rng = random.Random(0)
    pts = [[rng.random()] for _ in range(24)]
    ys = [math.sin(6 * p[0]) + 0.01 * rng.gauss(0, 1) for p in pts]
    fitted = pp.Gp.fit(pts, ys, restarts=4, seed=7)
    hyper = fitted.hyperparams()
    check("fitted lengthscale is plausible", 0.02 < hyper["lengthscales"][0] < 2.0,
          f"lengthscale={hyper['lengthscales'][0]:.3f}")

    print("benchmarks")
    branin = pp.Benchmark("branin")
    u = [(math.pi + 5.0) / 15.0, 2.275 / 15.0]
    check("branin optimum location", branin.is_eps_optimal(u, 1e-3),
          f"value={branin(u):.5f} optimum={branin.optimum():.5f}")
    gp_draw = pp.Benchmark("gp", dim=2, noise_variance=1e-6, seed=5)
    check("gp draw is reproducible",
          gp_draw([0.4, 0.6]) == pp.Benchmark("gp", dim=2, noise_variance=1e-6, seed=5)([0.4, 0.6]))

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
