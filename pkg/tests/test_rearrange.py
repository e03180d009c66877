import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from conclab.fields import BoxGrid, ScalarField, make_field
from conclab.rearrange import (
    cell_alphas,
    concentration,
    default_alphas,
    gamma,
    precedes,
    radial_rearrangement,
    riesz_check,
    symm_decreasing_rearrangement,
    symm_increasing_rearrangement,
)
from conclab.semigroups import heat_step

G8 = BoxGrid(2, 1.0, 8)
G32 = BoxGrid(2, 1.0, 32)
seeds = st.integers(0, 2**32 - 1)


def rand_field(grid, seed, atom=0.0):
    return ScalarField(grid, np.random.default_rng(seed).random(grid.shape), atom)


def test_centered_gaussian_is_fixed(g64):
    f = make_field(g64, "gaussian", sigma=0.9)
    assert np.array_equal(symm_decreasing_rearrangement(f).values, f.values)


def test_translation_killed(g32, rng):
    f = ScalarField(g32, rng.random(g32.shape))
    for s in [(1, 0), (-7, 3), (16, 16)]:
        assert np.array_equal(symm_decreasing_rearrangement(f.shifted(s)).values, symm_decreasing_rearrangement(f).values)


def test_two_bumps_become_one_profile(g64):
    f = make_field(g64, "bumps", bumps=[(0.4, (-1.5, 0.0), 2 * 2 * math.pi * 0.16), (0.4, (1.5, 0.5), 2 * math.pi * 0.16)])
    fs = symm_decreasing_rearrangement(f)
    assert np.array_equal(np.sort(fs.values, axis=None), np.sort(f.values, axis=None))
    c = g64.N // 2
    assert fs.values[c, c] == f.values.max()
    # radially nonincreasing along the ranking used for placement
    order = np.argsort(g64.offset_sq.ravel(), kind="stable")
    assert np.all(np.diff(fs.values.ravel()[order]) <= 0)


def test_atom_is_carried(g32, rng):
    f = ScalarField(g32, rng.random(g32.shape), 0.3)
    assert symm_decreasing_rearrangement(f).atom_mass == 0.3


@given(seeds)
def test_rearrangement_idempotent_and_mass_preserving(seed):
    f = rand_field(G32, seed, 0.1)
    fs = symm_decreasing_rearrangement(f)
    assert np.array_equal(symm_decreasing_rearrangement(fs).values, fs.values)
    assert np.array_equal(np.sort(fs.values, axis=None), np.sort(f.values, axis=None))
    assert math.fsum(fs.values.ravel()) == math.fsum(f.values.ravel())


@given(seeds)
def test_concentration_of_rearrangement_is_identical(seed):
    f = rand_field(G32, seed)
    al = np.concatenate([default_alphas(G32), cell_alphas(G32)[::7]])
    assert np.array_equal(concentration(f, al).values, concentration(symm_decreasing_rearrangement(f), al).values)


def test_indicator_profile(g64):
    f = make_field(g64, "ball", radius=1.0)
    m = f.mass
    al = np.linspace(0, 3 * m, 31)
    assert np.allclose(concentration(f, al).values, np.minimum(al, m), rtol=1e-13, atol=1e-15)


def test_atom_profile(g32):
    c = concentration(make_field(g32, "atom"))
    assert np.all(c.values == 1.0)


def _topk_exhaustive(vals, k):
    return max(sum(c) for c in itertools.combinations(vals, k)) if k else 0.0


def _topk_lp(vals, k):
    # max sum(v x) s.t. sum x = k, 0 <= x <= 1; the constraint matrix is totally unimodular
    res = linprog(-vals, A_eq=np.ones((1, vals.size)), b_eq=[k], bounds=(0, 1), method="highs")
    return -res.fun


@pytest.mark.parametrize("seed", range(3))
def test_concentration_matches_subset_oracle(seed):
    f = rand_field(G8, seed)
    vals = f.values.ravel()
    C = concentration(f, cell_alphas(G8)).values / G8.cell_volume
    for k in (0, 1, 2, 3):
        assert C[k] == pytest.approx(_topk_exhaustive(vals, k), rel=1e-13, abs=1e-13)
    for k in (61, 62, 63, 64):
        # complements of small subsets
        assert C[k] == pytest.approx(vals.sum() - min(sum(c) for c in itertools.combinations(vals, 64 - k)) if k < 64 else vals.sum(), rel=1e-13)
    for k in range(4, 61):
        assert C[k] == pytest.approx(_topk_lp(vals, k), rel=1e-9)


@given(seeds)
def test_concentration_concave_nondecreasing(seed):
    f = rand_field(G32, seed, 0.05)
    c = concentration(f, cell_alphas(G32)).values
    assert c[0] == 0.05 and c[-1] == pytest.approx(f.mass, rel=1e-14)
    d = np.diff(c)
    assert np.all(d >= 0)
    assert np.all(np.diff(d) <= 1e-12 * f.mass)


def test_fractional_alpha_interpolates(g32, rng):
    f = ScalarField(g32, rng.random(g32.shape))
    hv = g32.cell_volume
    c = concentration(f, [2.5 * hv]).values[0]
    top = np.sort(f.values, axis=None)[::-1]
    assert c == pytest.approx((top[0] + top[1] + 0.5 * top[2]) * hv, rel=1e-14)


def test_gamma_examples(g64):
    f = make_field(g64, "ball", radius=1.0)
    lv = np.linspace(0, 2, 9)
    assert np.allclose(gamma(f, lv).values, f.mass * np.maximum(1 - lv, 0), rtol=1e-13, atol=1e-15)
    assert np.all(gamma(make_field(g64, "atom"), lv).values == 1.0)


@given(seeds)
def test_gamma_of_rearrangement(seed):
    f = rand_field(G32, seed, 0.2)
    lv = np.linspace(0, 1, 17)
    assert np.array_equal(gamma(f, lv).values, gamma(symm_decreasing_rearrangement(f), lv).values)
    # direct definition
    direct = np.array([np.sum(np.maximum(f.values - h, 0)) * G32.cell_volume + 0.2 for h in lv])
    assert np.allclose(gamma(f, lv).values, direct, rtol=1e-12)


def test_precedes_self(g32):
    f = make_field(g32, "gaussian", sigma=0.6)
    v = precedes(f, f)
    assert v.holds and v.min_margin == 0 and v.alpha_star is None


def test_heat_mollified_is_less_concentrated(g64):
    g = make_field(g64, "gaussian", sigma=0.5)
    for t in (0.01, 0.1):
        assert precedes(heat_step(g, t), g, tol=1e-12).holds


def test_atom_mixture_against_narrow_gaussian(g64):
    wide = make_field(g64, "gaussian", sigma=1.2, mass=0.5)
    g = wide.with_values(wide.values, 0.5)
    f = make_field(g64, "gaussian", sigma=0.3)
    # the atom puts half the mass at alpha = 0, so g is not below f there
    v = precedes(g, f)
    assert not v.holds and v.alpha_star == 0.0
    # the narrow Gaussian overtakes: C_g - C_f changes sign once
    m = precedes(f, g).margin
    assert m[0] == 0.5 and m.min() < 0
    sign_changes = np.count_nonzero(np.diff(np.sign(m[np.abs(m) > 1e-12])))
    assert sign_changes == 1


def test_precedes_implies_gamma_order(g64):
    g = make_field(g64, "gaussian", sigma=0.5)
    f = heat_step(g, 0.05)
    assert precedes(f, g).holds
    lv = np.linspace(0, g.values.max(), 101)
    assert np.all(gamma(f, lv).values <= gamma(g, lv).values + 1e-12)


@given(seeds, st.sampled_from([1, 2, math.inf]))
def test_stability_bound(seed, p):
    rng = np.random.default_rng(seed)
    f = ScalarField(G32, rng.random(G32.shape))
    g = ScalarField(G32, np.maximum(f.values + 0.1 * rng.standard_normal(G32.shape), 0))
    al = default_alphas(G32, 64)
    diff = np.abs(concentration(f, al).values - concentration(g, al).values)
    d = np.abs(f.values - g.values)
    if p == math.inf:
        norm = d.max()
    else:
        norm = (np.sum(d**p) * G32.cell_volume) ** (1 / p)
    bound = al ** (1 - 1 / p) * norm
    assert np.all(diff <= bound * (1 + 1e-12) + 1e-15)


def test_increasing_rearrangement_examples(g64):
    X = g64.mesh()
    a = (5 * g64.h, 3 * g64.h)
    phi = sum(g64.minimal_image(X[j] - a[j]) ** 2 for j in range(2))
    assert np.allclose(symm_increasing_rearrangement(phi, g64), g64.r2, rtol=0, atol=1e-12)
    # off-lattice center: agreement up to cell quantization of the radius
    a = (0.37, -0.81)
    phi = sum(g64.minimal_image(X[j] - a[j]) ** 2 for j in range(2))
    err = np.abs(symm_increasing_rearrangement(phi, g64) - g64.r2)
    assert np.max(err / (np.sqrt(g64.r2) + g64.h)) < 2 * g64.h
    const = np.full(g64.shape, 2.5)
    assert np.array_equal(symm_increasing_rearrangement(const, g64), const)


@given(seeds)
def test_increasing_rearrangement_multiset(seed):
    phi = np.random.default_rng(seed).random(G32.shape)
    out = symm_increasing_rearrangement(phi, G32)
    assert np.array_equal(np.sort(out, axis=None), np.sort(phi, axis=None))
    assert out[16, 16] == phi.min()


def test_riesz_equality_and_strictness(g64):
    f = make_field(g64, "gaussian", sigma=0.3)
    g = make_field(g64, "gaussian", sigma=0.4)
    h = make_field(g64, "gaussian", sigma=0.35)
    r = riesz_check(f, g, h)
    assert r.holds and abs(r.lhs - r.rhs) <= 1e-8 * r.rhs
    ft = make_field(g64, "gaussian", sigma=0.3, center=(0.6, -0.2))
    r = riesz_check(ft, g, h)
    assert r.holds and r.lhs < r.rhs * (1 - 1e-3)


def test_riesz_rejects_wide_support(g64):
    f = make_field(g64, "gaussian", sigma=1.5)
    with pytest.raises(ValueError):
        riesz_check(f, f, f)


def test_radial_rearrangement_matches_lattice_free_profile():
    g = BoxGrid(2, 4 * math.pi, 64)
    f = make_field(g, "gaussian", sigma=0.7, center=(1.1, -0.4))
    nu = radial_rearrangement(f)
    ref = make_field(g, "gaussian", sigma=0.7)
    assert nu.mass == pytest.approx(f.mass, rel=1e-13)
    assert np.max(np.abs(nu.values - ref.values)) < 2e-3 * ref.values.max()
    with pytest.raises(ValueError):
        radial_rearrangement(f, BoxGrid(2, 2.0, 64))
