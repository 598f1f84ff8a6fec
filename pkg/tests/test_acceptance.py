"""Acceptance criteria 1-9.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured value, and
the lines are repeated in the terminal summary.  The study criteria are the
slow part (roughly 12 minutes on one core); ``VINEGROW_THREADS`` or the
machine's core count sets the number of worker processes.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from conftest import record
from vinegrow.ccc import ccc_test
from vinegrow.dependence import kendall_tau, kendall_tau_bruteforce
from vinegrow.families import ALL_FAMILIES, ASYMMETRIC, BivariateCopula, Family, tau_param_convert
from vinegrow.selection import SelectionConfig, aic_value, ccc_diagnostics, fit_structure
from vinegrow.simulation import StudyScenario, VineSpec, alpha_sweep, run_study, sample_from_vine
from vinegrow.structure import Edge, WeightedEdge, count_structures, dvine_structure, max_spanning_tree

WORKERS = int(os.environ.get("VINEGROW_THREADS") or os.cpu_count() or 1)


def verdict(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    print("\n" + line)
    record(line)
    return ok


# ---------------------------------------------------------------------------

def test_c1_structure_counts():
    t0 = time.perf_counter()
    got = {
        ("rvine", 3): count_structures(3, "rvine"),
        ("rvine", 5): count_structures(5, "rvine"),
        ("rvine", 10): count_structures(10, "rvine"),
        ("cvine", 5): count_structures(5, "cvine"),
        ("natural_order_matrices", 3): count_structures(3, "natural_order_matrices"),
    }
    secs = time.perf_counter() - t0
    want = {("rvine", 3): 3, ("rvine", 5): 480, ("rvine", 10): 487_049_291_366_400,
            ("cvine", 5): 60, ("natural_order_matrices", 3): 1}
    ok = got == want and secs < 1.0
    assert verdict(1, "structure counts", ok, f"{sorted(got.values())} in {secs * 1e3:.2f} ms")


def test_c2_aic_arithmetic():
    a, b = aic_value(434.9, 6), aic_value(428.8, 6)
    ok = round(a, 1) == -857.8 and round(b, 1) == -845.6
    assert verdict(2, "AIC arithmetic", ok, f"{a:.1f}, {b:.1f}")


def test_c3_three_dimensional_identity():
    t0 = time.perf_counter()
    rep = run_study(StudyScenario(d=3, n=500, R=100, methods=("alg1",), seed=2024, workers=WORKERS))
    secs = time.perf_counter() - t0
    same = rep.same_structure("alg1")
    ok = rep.completed == 100 and same == 100.0 and secs < 120
    assert verdict(3, "d=3 alg1 == dissmann", ok,
                   f"identical structures {same:.0f}% of {rep.completed}, {secs:.1f} s")


# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def win_rate_studies():
    t0 = time.perf_counter()
    d5 = run_study(StudyScenario(d=5, n=1000, R=200, methods=("alg2",), alpha=0.6, seed=42,
                                 workers=WORKERS))
    d10 = run_study(StudyScenario(d=10, n=400, R=100, methods=("alg2",), alpha=0.6, seed=42,
                                  workers=WORKERS))
    return d5, d10, time.perf_counter() - t0


def test_c4_win_rate_study(win_rate_studies):
    d5, d10, secs = win_rate_studies
    boe5, boe10 = d5.better_or_equal("alg2"), d10.better_or_equal("alg2")
    tt = d10.diff_test("alg2")
    # the limit is stated for 4 cores; scale the measured time to that
    scaled = secs * min(WORKERS, 4) / 4
    checks = {
        "d5 band": 55.0 <= boe5 <= 90.0,
        "d10 >= 65": boe10 >= 65.0,
        "t-test 1%": tt["p_value"] < 0.01 and tt["mean"] > 0,
        "runtime": scaled <= 45 * 60,
        "no failures": not d5.failures and not d10.failures,
    }
    detail = (f"d=5 {boe5:.1f}% in [55, 90]; d=10 {boe10:.1f}% >= 65; "
              f"d=10 mean dAIC/n {tt['mean']:.4f}, t={tt['t']:.2f}, p={tt['p_value']:.2g}; "
              f"{secs / 60:.1f} min on {WORKERS} worker(s) (~{scaled / 60:.1f} min at 4 cores)"
              + ("" if all(checks.values()) else f"; failed: {[k for k, v in checks.items() if not v]}"))
    assert verdict(4, "win-rate study", all(checks.values()), detail)


# ---------------------------------------------------------------------------

def simplified_gaussian_vine(rng, n):
    s = dvine_structure([0, 1, 2])
    cops = {Edge(1, (0, 1)): BivariateCopula("gaussian", 0, (0.5,)),
            Edge(1, (1, 2)): BivariateCopula("gaussian", 0, (0.5,)),
            Edge(2, (0, 2), frozenset({1})): BivariateCopula("gaussian", 0, (0.3,))}
    return sample_from_vine(VineSpec(s, cops), n, rng)


def test_c5_ccc_size():
    cfg = SelectionConfig(family_set=("gaussian",), diagnostics=False)
    edge = Edge(2, (0, 2), frozenset({1}))
    ps = []
    for r in range(500):
        rng = np.random.default_rng([5, r])
        data = simplified_gaussian_vine(rng, 1000)
        vine = fit_structure(dvine_structure([0, 1, 2]), data, cfg)
        ps.append(ccc_diagnostics(vine, data, cfg)[edge].p_value)
    ps = np.array(ps)
    rate = float(np.mean(ps < 0.05))
    ks = float(stats.kstest(ps, "uniform").statistic)
    ok = 0.025 <= rate <= 0.085 and ks < 0.1
    assert verdict(5, "CCC size", ok, f"rejection rate {rate:.3f} in [0.025, 0.085], KS {ks:.3f} < 0.1")


def test_c6_ccc_power():
    rej = 0
    reps = 200
    for r in range(reps):
        rng = np.random.default_rng([6, r])
        z = rng.random(1000)
        rho = 0.8 * (2 * z - 1)
        a = rng.normal(size=1000)
        b = rho * a + np.sqrt(1 - rho * rho) * rng.normal(size=1000)
        rej += ccc_test(ndtr(a), ndtr(b), z).p_value < 0.05
    power = rej / reps
    assert verdict(6, "CCC power", power >= 0.75, f"power {power:.3f} >= 0.75 over {reps} replications")


def test_c7_alpha_u_shape():
    res = alpha_sweep(StudyScenario(d=5, n=1000, R=100, methods=("alg2",), seed=42, workers=WORKERS),
                      [0.0, 0.6, 1.0])
    m0, m6, m1 = res["mean_aic"]
    ok = m6 < m0 and m6 < m1
    assert verdict(7, "alpha U-shape", ok,
                   f"mean AIC alpha=0 {m0:.1f}, alpha=0.6 {m6:.1f}, alpha=1 {m1:.1f}")


def test_c8_fast_variant():
    rep = run_study(StudyScenario(d=5, n=1000, R=50, methods=("alg2", "alg2_fast"), seed=42,
                                  workers=WORKERS))
    t_full, t_fast = rep.mean_time("alg2"), rep.mean_time("alg2_fast")
    a_full, a_fast = rep.aic("alg2").mean(), rep.aic("alg2_fast").mean()
    ratio = t_fast / t_full
    rel = abs(a_fast - a_full) / abs(a_full)
    ok = ratio <= 0.60 and rel <= 0.05
    assert verdict(8, "fast variant", ok,
                   f"time {ratio * 100:.1f}% of alg2 (<= 60%), mean AIC differs by {rel * 100:.2f}% (<= 5%)")


# ---------------------------------------------------------------------------

TAUS = (-0.8, -0.5, -0.2, 0.1, 0.4, 0.7, 0.8)


def copula_grid():
    for fam in ALL_FAMILIES:
        for t in TAUS:
            rots = (0,) if fam not in ASYMMETRIC else ((0, 180) if t > 0 else (90, 270))
            for rot in rots:
                par = tau_param_convert(fam, "tau_to_param", t, rot)
                for extra in ((3.0, 8.0) if fam is Family.T else (None,)):
                    params = (par, extra) if extra else (par,)
                    yield t, BivariateCopula(fam, rot, params)


def spanning_trees(nodes, edges):
    for combo in itertools.combinations(edges, len(nodes) - 1):
        parent = {v: v for v in nodes}

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        ok = True
        for e in combo:
            ra, rb = find(e.a), find(e.b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            yield combo


def test_c9_numeric_invariants():
    fd_grid = np.linspace(0.05, 0.95, 7)
    fu, fv = [a.ravel() for a in np.meshgrid(fd_grid, fd_grid)]
    inv_grid = np.linspace(0.01, 0.99, 41)
    iu, iv = [a.ravel() for a in np.meshgrid(inv_grid, inv_grid)]
    mid = (np.arange(1000) + 0.5) / 1000
    mu, mv = np.meshgrid(mid, mid)
    worst = {"tau": 0.0, "h": 0.0, "hinv": 0.0}
    mass_lo, mass_hi = math.inf, -math.inf
    for t, cop in copula_grid():
        back = tau_param_convert(cop.family, "param_to_tau", cop.params[0], cop.rotation)
        worst["tau"] = max(worst["tau"], abs(back - t))
        d = 1e-5
        for side in ("second", "first"):
            h = cop.hfunc(fu, fv, side)
            if side == "second":
                fd = (cop.cdf(fu, fv + d) - cop.cdf(fu, fv - d)) / (2 * d)
            else:
                fd = (cop.cdf(fu + d, fv) - cop.cdf(fu - d, fv)) / (2 * d)
            worst["h"] = max(worst["h"], float(np.max(np.abs(h - fd))))
            h = cop.hfunc(iu, iv, side)
            given, target = (iv, iu) if side == "second" else (iu, iv)
            # where h rounds to 0 or 1 the inverse is not identifiable
            ok = (h > 1e-6) & (h < 1 - 1e-6)
            err = np.abs(cop.hinv(h, given, side) - target)[ok]
            worst["hinv"] = max(worst["hinv"], float(err.max()))
        mass = float(cop.pdf(mu, mv).mean())
        mass_lo, mass_hi = min(mass_lo, mass), max(mass_hi, mass)

    rng = np.random.default_rng(9)
    kt_ok = 0
    for _ in range(50):
        n = int(rng.integers(5, 200))
        x = rng.integers(0, 12, n) if rng.random() < 0.5 else rng.random(n)
        y = rng.random(n) + (x if rng.random() < 0.5 else 0)
        if np.ptp(x) == 0:
            x = rng.random(n)
        kt_ok += abs(kendall_tau(x, y) - kendall_tau_bruteforce(x, y)) < 1e-12

    mst_ok = 0
    for k in range(2, 7):
        for _ in range(10):
            nodes = list(range(k))
            edges = [WeightedEdge(a, b, float(rng.random())) for a, b in itertools.combinations(nodes, 2)]
            best = max(sum(e.weight for e in t) for t in spanning_trees(nodes, edges))
            got = sum(e.weight for e in max_spanning_tree(nodes, edges))
            mst_ok += abs(got - best) < 1e-12

    checks = {
        "tau roundtrip": worst["tau"] <= 1e-8,
        "h vs finite difference": worst["h"] <= 1e-4,
        "hinv(h)": worst["hinv"] <= 1e-8,
        "density mass": 0.995 <= mass_lo and mass_hi <= 1.005,
        "kendall": kt_ok == 50,
        "mst": mst_ok == 50,
    }
    detail = (f"tau {worst['tau']:.1e}, h-fd {worst['h']:.1e}, hinv {worst['hinv']:.1e}, "
              f"mass [{mass_lo:.4f}, {mass_hi:.4f}], kendall {kt_ok}/50, mst {mst_ok}/50")
    assert verdict(9, "numeric invariants", all(checks.values()), detail)
