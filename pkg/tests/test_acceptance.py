"""The twelve acceptance criteria, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""
import heapq
import math
import time

import numpy as np
import pytest

from conclab import drifts as D
from conclab import experiments as E
from conclab import ns2d, sde, selftest
from conclab.fields import BoxGrid, DivFreeVelocity, ScalarField, make_field
from conclab.rearrange import concentration, precedes, riesz_check, symm_decreasing_rearrangement
from conclab.rearrange import cell_alphas
from conclab.semigroups import SplittingSchedule, direct_solve, heat_step, pulsed_diffusion

from conftest import ACCEPTANCE

L = 4 * math.pi


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def _l2(grid, a):
    return math.sqrt(float(np.sum(a**2)) * grid.cell_volume)


# --- 1 ---------------------------------------------------------------------------


def test_rearrangement_exactness():
    t0 = time.perf_counter()
    g = BoxGrid(2, L, 32)
    rng = np.random.default_rng(1)
    bad = 0
    for i in range(1000):
        vals = rng.random(g.shape) ** rng.uniform(0.5, 4)
        f = make_field(g, "array", values=vals)
        fs = symm_decreasing_rearrangement(f)
        ok = np.array_equal(concentration(f).values, concentration(fs).values)
        ok &= np.array_equal(symm_decreasing_rearrangement(fs).values, fs.values)
        ok &= np.array_equal(np.sort(fs.values, axis=None), np.sort(f.values, axis=None))
        bad += not ok
    # top-k oracle on 8x8 grids at every cell-aligned alpha
    g8 = BoxGrid(2, L, 8)
    oracle_bad = 0
    for i in range(200):
        vals = rng.random(g8.shape)
        f = make_field(g8, "array", values=vals)
        c = concentration(f, cell_alphas(g8)).values
        flat = vals.ravel().tolist()
        exp = [0.0]
        for k in range(1, 65):
            top = heapq.nlargest(k, flat)
            s = 0.0
            for v in top:
                s += v
            exp.append(s * g8.cell_volume)
        oracle_bad += not np.array_equal(c, np.array(exp))
    dt = time.perf_counter() - t0
    ok = bad == 0 and oracle_bad == 0 and dt < 30
    assert record(1, ok, f"{bad} of 1000 exactness failures, {oracle_bad} of 200 oracle mismatches, {dt:.1f} s")


# --- 2 ---------------------------------------------------------------------------


def test_stability_bound():
    t0 = time.perf_counter()
    g = BoxGrid(2, L, 32)
    rng = np.random.default_rng(2)
    al = cell_alphas(g)
    worst = 0.0
    viol = 0
    for i in range(100):
        f = make_field(g, "array", values=rng.random(g.shape))
        gg = make_field(g, "array", values=f.values * (1 + 0.3 * rng.standard_normal(g.shape)).clip(0) if i % 2 else rng.random(g.shape))
        lhs = np.abs(concentration(f, al).values - concentration(gg, al).values)
        rhs = np.sqrt(al) * _l2(g, f.values - gg.values)
        viol += int(np.any(lhs > rhs))
        worst = max(worst, float(np.max(lhs[1:] / rhs[1:])))
    dt = time.perf_counter() - t0
    assert record(2, viol == 0 and dt < 10, f"{viol} of 100 pairs violate, max lhs/rhs = {worst:.3f}, {dt:.1f} s")


# --- 3 ---------------------------------------------------------------------------


def _mixture_pair(grid, mix):
    sg, comps = mix
    g = make_field(grid, "gaussian", sigma=sg)
    v = np.zeros(grid.shape)
    for w, s, c in comps:
        v += w * make_field(grid, "gaussian", sigma=s, center=c).values
    f = make_field(grid, "array", values=v * g.mass / (np.sum(v) * grid.cell_volume))
    return f, g


def test_heat_order_preservation():
    t0 = time.perf_counter()
    fine, coarse = BoxGrid(2, L, 128), BoxGrid(2, L, 64)
    rng = np.random.default_rng(3)
    al = np.linspace(0, L**2, 4097)
    n, fails, rejected, worst = 0, 0, 0, 0.0
    while n < 50:
        sg = rng.uniform(0.4, 0.8)
        k = int(rng.integers(1, 4))
        w = rng.dirichlet(np.ones(k))
        # translates of wider Gaussians are dominated by the narrow centered one
        mix = (sg, [(w[i], sg * rng.uniform(1, 1.6), tuple(rng.uniform(-1.5, 1.5, 2))) for i in range(k)])
        f, g = _mixture_pair(fine, mix)
        if not precedes(f, g, tol=1e-12 * g.mass).holds:
            rejected += 1
            continue
        n += 1
        fc, gc = _mixture_pair(coarse, mix)
        for t in (0.01, 0.05):
            hf, hg = heat_step(f, t), heat_step(g, t)
            m_fine = concentration(hg, al).values - concentration(hf, al).values
            m_coarse = concentration(heat_step(gc, t), al).values - concentration(heat_step(fc, t), al).values
            eps = float(np.max(np.abs(m_fine - m_coarse)))
            v = precedes(hf, hg, tol=2 * eps)
            worst = min(worst, v.min_margin)
            fails += not v.holds
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 120
    assert record(3, ok, f"{fails} of 100 (pair, t) checks fail, min margin {worst:.2e}, {rejected} candidates rejected, {dt:.1f} s")


# --- 4 ---------------------------------------------------------------------------


def _random_bumps(grid, X, rng):
    v = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, 4))):
        R = rng.uniform(0.6, 1.4)
        c = rng.uniform(-(math.pi - R - 0.2), math.pi - R - 0.2, 2)
        r2 = ((X[0] - c[0]) ** 2 + (X[1] - c[1]) ** 2) / R**2
        v += rng.uniform(0.5, 2) * np.where(r2 < 1, np.exp(-1 / np.maximum(1 - r2, 1e-300)), 0.0)
    return make_field(grid, "array", values=v)


def test_riesz_inequality():
    t0 = time.perf_counter()
    g = BoxGrid(2, L, 64)
    X = g.mesh(sparse=False)
    rng = np.random.default_rng(4)
    fails, worst, eq_worst = 0, -np.inf, 0.0
    for _ in range(100):
        trip = [_random_bumps(g, X, rng) for _ in range(3)]
        r = riesz_check(*trip)
        fails += not (r.lhs <= r.rhs * (1 + 1e-8))
        worst = max(worst, (r.lhs - r.rhs) / r.rhs)
        s = riesz_check(*[symm_decreasing_rearrangement(x) for x in trip])
        eq_worst = max(eq_worst, abs(s.lhs - s.rhs) / s.rhs)
    dt = time.perf_counter() - t0
    ok = fails == 0 and eq_worst <= 1e-8 and dt < 120
    assert record(4, ok, f"{fails} of 100 triples fail, max (lhs-rhs)/rhs = {worst:.3g}, equality case {eq_worst:.1e}, {dt:.1f} s")


# --- 5 ---------------------------------------------------------------------------


def test_trotter_convergence():
    t0 = time.perf_counter()
    g = BoxGrid(2, L, 128)
    t = 0.1
    f = make_field(g, "gaussian", sigma=0.7)
    u = DivFreeVelocity.steady(g, D.Shear(4.0))
    ref = direct_solve(f, u, t).final.values
    deltas = [t / 2**j for j in range(2, 8)]
    errs = [_l2(g, pulsed_diffusion(f, u, SplittingSchedule(t, d)).final.values - ref) for d in deltas]
    slope = float(np.polyfit(np.log(deltas), np.log(errs), 1)[0])
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    dt = time.perf_counter() - t0
    ok = mono and slope >= 0.8 and dt < 300
    assert record(5, ok, f"errors {errs[0]:.2e} -> {errs[-1]:.2e}, monotone={mono}, slope {slope:.3f}, {dt:.1f} s")


# --- 6, 7, 8 ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def matrix():
    """One pair of comparison runs per (drift, datum), shared by criteria 6-8."""
    t0 = time.perf_counter()
    out = {}
    for key, cfg in E.standard_configs("ordering").items():
        runs = E.comparison_runs(cfg)
        out[key] = (runs, E.ordering_report(runs), E.moments_report(runs), E.dissipation_report(runs))
    return out, time.perf_counter() - t0


def _summ(reports):
    bad = [f"{k[0]}/{k[1]}: " + "; ".join(a.name for a in r.failures()) for k, r in reports.items() if not r.passed]
    return bad


def test_concentration_ordering_matrix(matrix):
    runs, wall = matrix
    reps = {k: v[1] for k, v in runs.items()}
    ratio = max(v[0].eps_grid / v[0].margin_scale for v in runs.values())
    bad = _summ(reps)
    ok = not bad and wall < 900
    assert record(6, ok, f"{9 - len(bad)}/9 pass, worst eps_grid/margin {ratio:.3f}, {wall:.0f} s" + (f"; {bad}" if bad else ""))


def test_moment_orderings_matrix(matrix):
    runs, _ = matrix
    reps = {k: v[2] for k, v in runs.items()}
    bad = _summ(reps)
    # the zero-drift control
    cfg = E.config(experiment="moments", drift="zero", t_list="0.02,0.05,0.1")
    ctrl = E.moments_report(E.comparison_runs(cfg))
    ok = not bad and ctrl.passed
    assert record(7, ok, f"{9 - len(bad)}/9 pass, u = 0 control {ctrl.status}" + (f"; {bad}" if bad else ""))


def test_dissipation_matrix(matrix):
    runs, _ = matrix
    reps = {k: v[3] for k, v in runs.items()}
    bad = _summ(reps)
    assert record(8, not bad, f"{9 - len(bad)}/9 pass" + (f"; {bad}" if bad else ""))


# --- 9 ---------------------------------------------------------------------------


def test_sde_checks():
    t0 = time.perf_counter()
    notes, ok = [], True
    c = sde.simulate(D.Zero(2), np.zeros((100000, 2)), 2.0, 1e-2, seed=9, record_times=[0.5, 1.0, 2.0]).curve
    z = max(float(np.max(np.abs(c.coord_var[i] - 2 * t) / c.coord_se[i])) for i, t in enumerate(c.times))
    ok &= z <= 4
    notes.append(f"u=0 max |z| {z:.2f}")
    X0 = np.zeros((20000, 2))
    p = sde.simulate(D.inward(), X0, 20.0, 1e-2, seed=9, record_times=[10.0, 20.0]).curve
    plateau = abs(p.var[1] - p.var[0]) < 3 * math.hypot(p.ci_half[0], p.ci_half[1]) and p.var[1] < 10
    ok &= plateau
    notes.append(f"inward Var(10)={p.var[0]:.2f} Var(20)={p.var[1]:.2f}")
    r = sde.simulate(D.outward(), X0, 20.0, 1e-2, seed=9).curve
    q = float(r.var[-1] / 400)
    ok &= 0.5 <= q <= 1.5
    notes.append(f"outward Var/t^2={q:.3f}")
    v = sde.variance_ordering_check(D.Shear(4.0), "point", [0.5, 1.0, 2.0], M=20000, dt=1e-2, seed=9)
    ok &= v.holds
    notes.append(f"shear ordering {'holds' if v.holds else 'fails'}")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    assert record(9, ok, ", ".join(notes) + f", {dt:.1f} s")


# --- 10 --------------------------------------------------------------------------


def test_torus_counterexample():
    t0 = time.perf_counter()
    rep = E.run_experiment(E.config(experiment="torus"))
    dt = time.perf_counter() - t0
    reported = any("factor T" in n for n in rep.notes)
    ok = rep.passed and reported and dt < 120
    found = f"T={rep.params.get('found.T')}, h={rep.params.get('found.h')}"
    fails = "; ".join(a.name for a in rep.failures())
    assert record(10, ok, f"{found}, {len(rep.assertions) - len(rep.failures())}/{len(rep.assertions)} assertions, {dt:.1f} s" + (f"; {fails}" if fails else ""))


# --- 11 --------------------------------------------------------------------------


def test_vortex():
    t0 = time.perf_counter()
    g = BoxGrid(2, L, 128)
    w = make_field(g, "gaussian", sigma=0.5)
    a = ns2d.solve_ns(w, 0.05).final.values
    b = heat_step(w, 0.05).values
    rel = float(np.linalg.norm(a - b) / np.linalg.norm(b))
    rep = E.run_experiment(E.config(experiment="ns2d", N=128))
    dt = time.perf_counter() - t0
    ok = rel <= 1e-6 and rep.passed and dt < 600
    fails = "; ".join(a.name for a in rep.failures())
    assert record(11, ok, f"radial vs heat {rel:.2e}, elliptical {rep.status}, {dt:.1f} s" + (f"; {fails}" if fails else ""))


# --- 12 --------------------------------------------------------------------------


def test_selftest_and_reproducibility(tmp_path):
    t0 = time.perf_counter()
    all_ok, rows = selftest.run()
    st = time.perf_counter() - t0
    cfg = dict(experiment="moments", N=64, t_list="0.02,0.05", analysis_refine=4)
    trees = []
    for k in "ab":
        E.run_experiment(E.config(out_dir=str(tmp_path / k), **cfg))
        trees.append([(tmp_path / k / n).read_bytes() for n in ("assertions.csv", "report.txt")])
    X0 = sde.sample_init("gaussian", 20000, 2, seed=5, sigma=0.5)
    s = [sde.simulate(D.Cellular(4.0), X0, 0.2, 1e-2, seed=5).final.positions for _ in range(2)]
    repro = trees[0] == trees[1] and np.array_equal(s[0], s[1])
    failed = [r[0] for r in rows if not r[1]]
    ok = all_ok and st < 60 and repro
    assert record(12, ok, f"selftest {len(rows) - len(failed)}/{len(rows)} in {st:.1f} s, reproducible={repro}" + (f"; {failed}" if failed else ""))
