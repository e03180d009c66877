"""Fast sanity suite: exact identities and contract checks that need no tolerance budget.

Each check returns ``(ok, detail)``; :func:`run` executes them in a fixed
order and never raises.
"""
from __future__ import annotations

import math
import time
import traceback

import numpy as np

from . import drifts as D
from . import ns2d, sde, torus
from .fields import BoxGrid, DivFreeVelocity, ScalarField, divergence_check, make_field, moments
from .rearrange import concentration, gamma, precedes, riesz_check, symm_decreasing_rearrangement, symm_increasing_rearrangement
from .semigroups import (
    SplittingSchedule,
    direct_solve,
    dissipation_integral,
    heat_record,
    heat_step,
    pulsed_diffusion,
    transport_step,
)

G32 = BoxGrid(2, 4 * math.pi, 32)
G64 = BoxGrid(2, 4 * math.pi, 64)
CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _indicator(grid, radius):
    return make_field(grid, "ball", radius=radius)


@check
def atom_field():
    f = make_field(G32, "atom")
    m = moments(f)
    return f.mass == 1.0 and m.variance == 0.0 and f.atom_mass == 1.0 and not f.values.any(), f"mass={f.mass}"


@check
def ball_concentration():
    f = _indicator(G64, 1.5)
    alpha = f.mass  # discrete |B_r|
    c = concentration(f, [alpha]).values[0]
    return c == alpha, f"C(alpha)={c!r}, alpha={alpha!r}"


@check
def divergence_of_builtin_fields():
    _, flag_c = divergence_check(DivFreeVelocity.steady(G32, D.Constant((1.0, 0.5))))
    divs, flag_s = divergence_check(DivFreeVelocity.steady(G32, D.Shear(4.0)))
    u = DivFreeVelocity(G32, (0.0, 1.0), (np.stack(G32.mesh(sparse=False)),), check=False)
    dl, flag_l = divergence_check(u)
    ok = not flag_c[0] and divs[0] <= 1e-12 * 4.0 and flag_l[0] and dl[0] > 0
    return ok, f"shear div={divs[0]:.2e}, linear div={dl[0]:.2e}"


@check
def unit_density_entropy():
    f = _indicator(G64, 1.0)
    e = moments(f).entropy
    return e == 0.0, f"entropy={e}"


@check
def gaussian_is_own_rearrangement():
    f = make_field(G64, "gaussian", sigma=0.8)
    return np.array_equal(symm_decreasing_rearrangement(f).values, f.values), ""


@check
def rearrangement_kills_translation():
    rng = np.random.default_rng(1)
    f = make_field(G32, "array", values=rng.random(G32.shape))
    a = symm_decreasing_rearrangement(f).values
    b = symm_decreasing_rearrangement(f.shifted((5, -3))).values
    return np.array_equal(a, b), ""


@check
def indicator_concentration():
    f = _indicator(G64, 1.0)
    m = f.mass
    al = np.array([0.0, m / 3, m, 2 * m, G64.volume])
    c = concentration(f, al).values
    return bool(np.allclose(c, np.minimum(al, m), rtol=1e-14, atol=0)), f"m={m:.6g}"


@check
def atom_concentration():
    c = concentration(make_field(G32, "atom")).values
    return bool(np.all(c == 1.0)), ""


@check
def gamma_identities():
    f = _indicator(G64, 1.0)
    levels = np.linspace(0, 1.5, 7)
    g_ind = gamma(f, levels).values
    ok1 = np.allclose(g_ind, f.mass * np.maximum(1 - levels, 0), rtol=1e-14, atol=1e-15)
    ok2 = np.all(gamma(make_field(G32, "atom"), levels).values == 1.0)
    rng = np.random.default_rng(2)
    r = make_field(G32, "array", values=rng.random(G32.shape))
    ok3 = np.array_equal(gamma(r, levels).values, gamma(symm_decreasing_rearrangement(r), levels).values)
    return bool(ok1 and ok2 and ok3), ""


@check
def precedes_self():
    f = make_field(G32, "gaussian", sigma=0.7)
    v = precedes(f, f)
    return v.holds and v.min_margin == 0.0 and v.max_margin == 0.0, ""


@check
def increasing_rearrangement():
    X = G64.mesh()
    # a cell-aligned center, so the value multiset is that of |x|^2 up to rounding
    a = (7 * G64.h, -4 * G64.h)
    phi = sum(G64.minimal_image(X[j] - a[j]) ** 2 for j in range(2))
    out = symm_increasing_rearrangement(phi, G64)
    out = out.values if hasattr(out, "values") else out
    err = float(np.max(np.abs(out - G64.r2)))
    const = symm_increasing_rearrangement(np.full(G32.shape, 3.0), G32)
    const = const.values if hasattr(const, "values") else const
    ok = err <= 1e-12 * G64.L**2 and np.all(const == 3.0)
    return bool(ok), f"max |phi_inc - |x|^2| = {err:.3g}"


@check
def riesz_equality_case():
    f = make_field(G64, "gaussian", sigma=0.3)
    g = make_field(G64, "gaussian", sigma=0.4)
    h = make_field(G64, "gaussian", sigma=0.35)
    r = riesz_check(f, g, h)
    rel = abs(r.lhs - r.rhs) / r.rhs
    return r.holds and rel <= 1e-8, f"rel={rel:.2e}"


@check
def heat_at_zero_time():
    f = make_field(G32, "gaussian", sigma=0.7)
    return np.array_equal(heat_step(f, 0.0).values, f.values), ""


@check
def transport_trivial_cases():
    f = make_field(G32, "gaussian", sigma=0.9, center=(0.3, 0.0))
    h = G32.h
    u = DivFreeVelocity.steady(G32, D.Constant((1.0, 0.0)))
    g = transport_step(f, u, 0.0, 3 * h)
    same_c = np.array_equal(concentration(f).values, concentration(g).values)
    shifted = np.array_equal(g.values, np.roll(f.values, 3, axis=0))
    z = transport_step(f, DivFreeVelocity.zero(G32), 0.0, 0.3)
    return bool(same_c and shifted and np.array_equal(z.values, f.values)), ""


@check
def pulsed_with_zero_drift():
    f = make_field(G32, "gaussian", sigma=0.7)
    sched = SplittingSchedule(0.1, 0.03)
    rec = pulsed_diffusion(f, DivFreeVelocity.zero(G32), sched)
    exact = np.array_equal(rec.final.values, heat_step(f, 0.1).values)
    return bool(exact and math.fsum(rec.exposures) == 0.1), f"exposure={math.fsum(rec.exposures)!r}"


@check
def direct_with_zero_drift():
    f = make_field(G32, "gaussian", sigma=0.7)
    rec = direct_solve(f, DivFreeVelocity.zero(G32), 0.05)
    a, b = rec.final.values, heat_step(f, 0.05).values
    rel = float(np.linalg.norm(a - b) / np.linalg.norm(b))
    return rel <= 1e-9, f"rel={rel:.2e}"


@check
def heat_energy_balance():
    f = make_field(G32, "gaussian", sigma=0.7)
    c = dissipation_integral(heat_record(f, [0.05], n_diag=512))
    z = dissipation_integral(heat_record(make_field(G32, "array", values=np.zeros(G32.shape)), [0.05], n_diag=128))
    return c.residual_rel <= 1e-6 and z.cumulative[-1] == 0.0, f"residual={c.residual_rel:.2e}"


@check
def torus_field_is_incompressible():
    u = torus.build_u_hat(0.05, 0.01)
    p = (1, 2)
    v = u["modes"][p]
    return complex(p[0] * v[0] + p[1] * v[1]) == 0 and len(u["modes"]) == 2, f"u_hat(p)={tuple(v)}"


@check
def torus_inactive_field_is_heat():
    params = torus.CounterexampleParams(0.05, 0.0, 8, t_max=0.2)
    traj = torus.evolve_spectral(torus.FourierState.delta(2, 8), params)
    s = traj.states["final"]
    err = float(np.max(np.abs(s.coeffs - torus.FourierState.heat(s.t, 2, 8).coeffs)))
    pars = abs(s.l2sq_minus1() - (float(np.sum(np.abs(s.coeffs) ** 2)) - 1.0))
    return err <= 1e-14 and pars <= 1e-14, f"max coeff err={err:.1e}"


@check
def sde_zero_drift_equality():
    X0 = sde.sample_init("point", 20000, 2)
    v = sde.variance_ordering_check(D.Zero(2), "point", [0.5], M=20000, dt=1e-2)
    gap = abs(v.var[0] - v.reference[0])
    return gap <= 4 * v.ci_half[0] and X0.shape == (20000, 2), f"var={v.var[0]:.4f} ref={v.reference[0]:.4f} ci={v.ci_half[0]:.3f}"


@check
def biot_savart_structure():
    w = make_field(G64, "gaussian", sigma=0.6)
    u = ns2d.biot_savart(w)
    div = ns2d.velocity_divergence(G64, u)
    c = G64.N // 2
    # on the symmetry lines through the origin the radial component vanishes exactly
    radial_axis = float(np.max(np.abs(u[0][:, c])) + np.max(np.abs(u[1][c, :])))
    return div <= 1e-12 * np.abs(u).max() and radial_axis <= 1e-14 * np.abs(u).max(), f"div={div:.1e}"


@check
def radial_vortex_is_heat():
    # unit circulation; the periodic images perturb the flow in proportion to it
    w = make_field(G64, "gaussian", sigma=0.5)
    rec = ns2d.solve_ns(w, 0.05)
    a, b = rec.final.values, heat_step(w, 0.05).values
    rel = float(np.linalg.norm(a - b) / np.linalg.norm(b))
    return rel <= 1e-6, f"rel={rel:.2e}"


@check
def experiment_zero_drift_controls():
    from . import experiments as E

    cfg = E.config(experiment="ordering", drift="zero", N=32, analysis_refine=4, richardson="false", t_list="0.02,0.05")
    runs = E.comparison_runs(cfg)
    order = E.ordering_report(runs)
    mom = E.moments_report(runs)
    worst = max(abs(runs.analysis(t).margin_min) for t in runs.times)
    return order.passed and mom.passed and worst == 0.0, f"max |margin|={worst:.1e}"


@check
def torus_h0_control():
    v = torus.verify_counterexample(torus.CounterexampleParams(0.05, 0.0, 8, t_max=1.0))
    return not v.inversion, ""


@check
def cli_contract():
    import contextlib
    import io

    from .cli import main

    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        code = main(["selftest", "--no-such-flag"])
    return code == 2 and "usage" in err.getvalue(), f"exit={code}"


def run(verbose: bool = False, stream=None):
    """Run every check; returns ``(all_ok, [(name, ok, detail, seconds)])``."""
    rows = []
    for fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception:  # report, keep going
            ok, detail = False, traceback.format_exc(limit=3).strip().splitlines()[-1]
        rows.append((fn.__name__, bool(ok), detail, time.perf_counter() - t0))
        if stream is not None:
            flag = "ok  " if ok else "FAIL"
            stream.write(f"[{flag}] {fn.__name__}" + (f"  {detail}" if verbose and detail else "") + "\n")
    return all(r[1] for r in rows), rows
