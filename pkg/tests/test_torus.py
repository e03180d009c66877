import math

import numpy as np
import pytest
import sympy as sp

from conclab import torus
from conclab.fields import BoxGrid, make_field
from conclab.semigroups import heat_step
from conclab.torus import CounterexampleParams, FourierState


def test_u_hat_modes():
    u = torus.build_u_hat(0.05, 0.01)
    assert set(u["modes"]) == {(1, 2), (-1, -2)}
    v = u["modes"][(1, 2)]
    assert np.array_equal(v, [-2j, 1j])
    assert np.array_equal(u["modes"][(-1, -2)], np.conj(v))
    assert 1 * v[0] + 2 * v[1] == 0
    assert torus.u_hat_at(u, 0.049) == {} and torus.u_hat_at(u, 0.061) == {}
    assert torus.u_hat_at(u, 0.055) is u["modes"]
    u3 = torus.build_u_hat(0.05, 0.01, d=3)
    assert set(u3["modes"]) == {(1, 2, 0), (-1, -2, 0)}
    with pytest.raises(ValueError):
        torus.build_u_hat(0.05, 0.01, d=1)


@pytest.mark.parametrize("kw", [dict(T=0.0, h=0.0), dict(T=0.1, h=0.2), dict(T=0.1, h=0.01, K=4), dict(T=0.1, h=0.01, dt=0.001)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        CounterexampleParams(**kw)


def test_h_zero_is_heat():
    p = CounterexampleParams(0.05, 0.0, 8, t_max=0.3)
    traj = torus.evolve_spectral(FourierState.delta(2, 8), p)
    s = traj.states["final"]
    assert np.max(np.abs(s.coeffs - FourierState.heat(s.t, 2, 8).coeffs)) < 1e-14
    assert np.allclose(traj.l2sq_minus1, torus.heat_l2sq_minus1(traj.times, 2, 8), rtol=1e-12, atol=0)


def test_invariants_along_activation():
    p = CounterexampleParams(0.05, 0.01, 12)
    traj = torus.evolve_spectral(FourierState.delta(2, 12), p)
    assert traj.max_zero_drift <= 0.0
    assert traj.max_hermitian_error <= 1e-12
    after = traj.times > p.T + p.h
    assert np.all(np.diff(traj.l2sq_minus1[after]) < 0)
    assert np.all(np.diff(traj.l2sq_minus1[traj.times <= p.T]) < 0)


def test_parseval_against_grid():
    p = CounterexampleParams(0.05, 0.01, 12, t_max=0.07)
    s = torus.evolve_spectral(FourierState.delta(2, 12), p).states["T+h"]
    vals = s.to_grid(64)
    grid_l2 = float(np.mean(vals**2))
    assert grid_l2 == pytest.approx(s.l2sq(), rel=1e-10)
    with pytest.raises(ValueError):
        s.to_grid(24)


def test_heat_state_matches_grid_heat_on_unit_torus():
    g = BoxGrid(2, 1.0, 64)
    t = 0.01
    a = heat_step(make_field(g, "atom"), t).values
    b = FourierState.heat(t, 2, 16).to_grid(64)
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def test_skew_symmetric_coupling_is_isometry():
    p = CounterexampleParams(0.05, 0.01, 16)
    s = FourierState.heat(0.05, 2, 16)
    traj = torus.evolve_spectral(s, p, diffusion=False, late_samples=2)
    before, after = s.l2sq(), traj.states["T+h"].l2sq()
    assert abs(after - before) <= 1e-8 * before


def _symbolic_derivative():
    """Right derivative of the |k|=1 mass at T from the coupled system, by hand."""
    T = sp.symbols("T", positive=True)
    pi = sp.pi

    def c(k):
        return sp.exp(-4 * pi**2 * (k[0] ** 2 + k[1] ** 2) * T)

    total = 0
    for k in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        kk = k[0] ** 2 + k[1] ** 2
        dot = -4 * pi**2 * kk * c(k)
        q = (k[0] - 1, k[1] - 2)  # source through +p
        r = (k[0] + 1, k[1] + 2)  # source through -p
        dot += -2 * pi * (2 * q[0] - q[1]) * c(q) + 2 * pi * (2 * r[0] - r[1]) * c(r)
        total += 2 * c(k) * dot
    return T, sp.simplify(total)


@pytest.mark.parametrize("T0", [0.02, 0.05, 0.1])
def test_lowmode_derivative_symbolic(T0):
    T, expr = _symbolic_derivative()
    exact = float(expr.subs(T, T0))
    heat, gain = torus.lowmode_derivative_formula(T0)
    assert heat + gain == pytest.approx(exact, rel=1e-12)
    assert torus.lowmode_derivative_numeric(T0) == pytest.approx(exact, rel=1e-12)
    # the heat part alone reproduces the pure diffusion decay of four modes
    assert heat == pytest.approx(float(sp.diff(4 * sp.exp(-8 * sp.pi**2 * T), T).subs(T, T0)), rel=1e-12)


def test_lowmode_derivative_finite_differences():
    T0 = 0.05
    low = []
    hs = [4e-5, 2e-5]
    for h in hs:
        p = CounterexampleParams(T0, h, 16, dt=h / 200, t_max=T0 + h)
        s = torus.evolve_spectral(FourierState.delta(2, 16), p, late_samples=2).states["T+h"]
        low.append(s.lowmode())
    base = FourierState.heat(T0, 2, 16).lowmode()
    d1, d2 = [(x - base) / h for x, h in zip(low, hs)]
    fd = 2 * d2 - d1
    exact = sum(torus.lowmode_derivative_formula(T0))
    assert fd == pytest.approx(exact, rel=1e-6)


def test_extra_time_factor_disagrees():
    T0 = 0.05
    heat, _ = torus.lowmode_derivative_formula(T0)
    variant = -32 * math.pi**2 * T0 * math.exp(-8 * math.pi**2 * T0)
    assert variant == pytest.approx(heat * T0, rel=1e-14)
    numeric = torus.lowmode_derivative_numeric(T0)
    _, gain = torus.lowmode_derivative_formula(T0)
    assert abs((variant + gain) - numeric) > 0.5 * abs(numeric)


def test_gain_term_closed_form():
    T0 = 0.03
    e = lambda a: math.exp(-a * math.pi**2 * T0)
    _, gain = torus.lowmode_derivative_formula(T0)
    assert gain == pytest.approx(8 * math.pi * e(4) * (e(8) - 2 * e(16) + 2 * e(32) - e(40)), rel=1e-15)
    assert gain > 0


def test_verify_found_case():
    v = torus.verify_counterexample(CounterexampleParams(0.02, 0.01, 16))
    assert v.status == "found" and v.inversion
    assert v.excess_at_end >= v.excess_bound
    assert v.excess_at_end >= 10 * v.truncation_error
    assert v.asymptotic_ratio > 1
    after = v.times >= v.t_star
    assert np.all(v.psi_l2sq_minus1[after] > v.phi_l2sq_minus1[after])
    assert v.truncation_error <= 1e-10 * np.max(v.psi_l2sq_minus1)
    assert np.all(v.phi_l2sq_minus1 > 0)


def test_verify_in_three_dimensions():
    v = torus.verify_counterexample(CounterexampleParams(0.02, 0.01, 8, d=3))
    assert v.status == "found"


def test_h_zero_control():
    v = torus.verify_counterexample(CounterexampleParams(0.05, 0.0, 8, t_max=1.0))
    assert not v.inversion and v.status == "not found"


def test_verdict_write(tmp_path):
    v = torus.verify_counterexample(CounterexampleParams(0.05, 0.002, 8))
    paths = v.write(tmp_path)
    assert (tmp_path / "lowmode.csv").read_text().startswith("t,psi_lowmode,phi_lowmode")
    assert (tmp_path / "l2ratio.csv").read_text().startswith("t,psi_l2sq_minus1,phi_l2sq_minus1,ratio")
    import json

    data = json.loads((tmp_path / "verdict.json").read_text())
    assert data["status"] == v.status and set(paths) == {"lowmode", "l2ratio", "verdict"}


def test_first_found_picks_bounded_case():
    vs = torus.scan(T_values=[0.02], h_halvings=2, K=12)
    assert len(vs) == 2
    hit = torus.first_found(vs)
    assert hit is not None and hit.params.T == 0.02
