"""Heat flow, transport, the Lie-ordered pulsed-diffusion operator and a
pseudo-spectral advection-diffusion reference solver.

Diffusivity is one throughout: ``d_t theta = Lap theta - u . grad theta``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fields import BoxGrid, DivFreeVelocity, MomentReport, ScalarField, moments, write_array, write_field
from .rearrange import ConcentrationProfile, concentration
from .spectral import spectral


class BlowUpError(FloatingPointError):
    """Non-finite values in a dissipative evolution."""


# --- heat -----------------------------------------------------------------------


def _atom_values(f: ScalarField) -> np.ndarray:
    v = np.array(f.values)
    if f.atom_mass:
        v[f.grid.center] += f.atom_mass / f.grid.cell_volume
    return v


def heat_spectrum(f: ScalarField) -> np.ndarray:
    """rfft coefficients of the density with the atom folded into the center cell."""
    return spectral(f.grid).forward(_atom_values(f))


def heat_step(f: ScalarField, t: float) -> ScalarField:
    """``e^{t Lap} f`` as the Fourier multiplier ``exp(-|k|^2 t)``.

    An atom becomes ``atom_mass`` times the discrete heat kernel centered at
    the origin.
    """
    if t < 0:
        raise ValueError("heat time must be nonnegative")
    if t == 0:
        return f
    sp = spectral(f.grid)
    out = sp.inverse(heat_spectrum(f) * np.exp(-sp.k2 * t))
    return ScalarField(f.grid, _nonnegative(out), 0.0)


def _nonnegative(vals: np.ndarray) -> np.ndarray:
    """Clip spectral undershoot at zero and restore the conserved sum."""
    total = vals.sum()
    out = np.maximum(vals, 0.0)
    clipped = out.sum()
    if clipped > 0 and clipped != total and total > 0:
        out *= total / clipped
    return out


# --- transport ------------------------------------------------------------------


def _interp_periodic(grid: BoxGrid, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Cubic B-spline interpolation of prefiltered ``coeffs`` at physical points."""
    idx = [(pts[..., j] + grid.L / 2) / grid.h for j in range(grid.d)]
    return ndimage.map_coordinates(coeffs, idx, order=3, mode="grid-wrap", prefilter=False)


def _velocity_evaluator(grid: BoxGrid, u: DivFreeVelocity, t: float):
    drift = u.drift_at(t)
    if drift is not None:
        return drift
    sample = u.sample_at(t)
    coeffs = [ndimage.spline_filter(sample[j], order=3, mode="grid-wrap") for j in range(grid.d)]

    def ev(pts):
        return np.stack([_interp_periodic(grid, c, pts) for c in coeffs], axis=-1)

    return ev


@dataclass
class TransportDiagnostics:
    renormalization: float
    substeps: int
    exact_shift: bool


def _exact_shift(grid: BoxGrid, sample: np.ndarray, dt: float):
    v = sample.reshape(grid.d, -1)
    if not np.all(v == v[:, :1]):
        return None
    cells = v[:, 0] * dt / grid.h
    rounded = np.rint(cells)
    if np.all(np.abs(cells - rounded) <= 1e-9):
        return tuple(int(c) for c in rounded)
    return None


def transport_step(f: ScalarField, u: DivFreeVelocity, t0: float, dt: float, diagnostics: list | None = None) -> ScalarField:
    """Semi-Lagrangian ``e^{-dt u.grad} f`` for ``u`` constant on ``[t0, t0+dt]``.

    Characteristics are traced backwards with RK4 in substeps moving at most
    ``h/2``; values are picked up with periodic cubic interpolation, clipped
    at zero and rescaled to the input mass.
    """
    if f.atom_mass > 0:
        raise ValueError("atoms must be mollified (heat_step) before transport")
    if dt == 0:
        return f
    grid = f.grid
    tm = t0 + 0.5 * dt
    i = u.interval(tm)
    if i is None or u.sup_norms[i] == 0:
        return f
    if u.events(t0, t0 + dt):
        raise ValueError("velocity changes inside the transport step")
    sup = u.sup_norms[i]
    if dt * sup > grid.L / 4:
        raise ValueError(f"dt*|u|_inf = {dt * sup:.3g} exceeds L/4")
    shift = _exact_shift(grid, u.samples[i], dt)
    if shift is not None:
        if diagnostics is not None:
            diagnostics.append(TransportDiagnostics(1.0, 0, True))
        return f.shifted(shift)
    vel = _velocity_evaluator(grid, u, tm)
    nsub = max(1, math.ceil(dt * sup / (0.5 * grid.h)))
    s = -dt / nsub
    X = grid.points()
    for _ in range(nsub):
        k1 = vel(X)
        k2 = vel(X + 0.5 * s * k1)
        k3 = vel(X + 0.5 * s * k2)
        k4 = vel(X + s * k3)
        X = X + (s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    X = grid.minimal_image(X)
    coeffs = ndimage.spline_filter(f.values, order=3, mode="grid-wrap")
    out = np.maximum(_interp_periodic(grid, coeffs, X), 0.0)
    total = out.sum()
    ratio = f.values.sum() / total if total > 0 else 1.0
    if diagnostics is not None:
        diagnostics.append(TransportDiagnostics(float(ratio), nsub, False))
    return f.with_values(out * ratio)


# --- records --------------------------------------------------------------------


@dataclass
class Snapshot:
    time: float
    field: ScalarField
    moments: MomentReport
    profile: ConcentrationProfile


@dataclass
class EvolutionRecord:
    scheme: str
    params: dict
    snapshots: list = field(default_factory=list)
    # dense per-step diagnostics: time, ||theta||^2, ||grad theta||^2
    diag_times: list = field(default_factory=list)
    diag_l2sq: list = field(default_factory=list)
    diag_grad_l2sq: list = field(default_factory=list)
    exposures: list = field(default_factory=list)
    transport: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> ScalarField:
        return self.snapshots[-1].field

    def at(self, t: float) -> ScalarField:
        for s in self.snapshots:
            if math.isclose(s.time, t, rel_tol=1e-12, abs_tol=1e-15):
                return s.field
        raise KeyError(f"no snapshot at t={t}")

    def add(self, t: float, f: ScalarField, beta: float = 1.0):
        if self.snapshots and t <= self.snapshots[-1].time:
            raise ValueError("snapshot times must increase")
        self.snapshots.append(Snapshot(t, f, moments(f, beta), concentration(f, tag=f"{self.scheme}@{t:.6g}")))

    def add_diag(self, t: float, v_hat: np.ndarray, sp):
        self.diag_times.append(t)
        self.diag_l2sq.append(sp.norm_sq(v_hat))
        self.diag_grad_l2sq.append(sp.grad_norm_sq(v_hat))

    def export(self, out_dir):
        """Write manifest, field files, ``moments.csv`` and ``concentration_<i>.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest"), "w") as fh:
            fh.write(f"scheme = {self.scheme}\n")
            for k in sorted(self.params):
                fh.write(f"{k} = {self.params[k]}\n")
            fh.write("times = " + ",".join(f"{t:.17g}" for t in self.times) + "\n")
        with open(os.path.join(out_dir, "moments.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mass", "var", "entropy", "L1", "L2", "L4", "Linf"])
            for s in self.snapshots:
                w.writerow([f"{s.time:.17g}"] + [f"{x:.17g}" for x in s.moments.row()])
        for i, s in enumerate(self.snapshots):
            write_field(os.path.join(out_dir, f"field_{i:04d}.bin"), s.field)
            s.profile.to_csv(os.path.join(out_dir, f"concentration_{i:04d}.csv"))


def _with_times(times, t_end):
    ts = sorted(set(float(x) for x in (() if times is None else np.ravel(times)) if 0 < x <= t_end) | {float(t_end)})
    return ts


def heat_record(f: ScalarField, times, n_diag: int = 2048, beta: float = 1.0) -> EvolutionRecord:
    """Heat flow sampled at ``times`` with closed-form dense norm diagnostics."""
    t_end = max(times)
    rec = EvolutionRecord("heat", {"t": t_end})
    rec.add(0.0, f, beta)
    for t in _with_times(times, t_end):
        rec.add(t, heat_step(f, t), beta)
    if f.atom_mass == 0:
        sp = spectral(f.grid)
        f_hat = heat_spectrum(f)
        for t in np.linspace(0.0, t_end, n_diag + 1):
            rec.add_diag(float(t), f_hat * np.exp(-sp.k2 * t), sp)
    return rec


# --- pulsed diffusion -------------------------------------------------------------


@dataclass(frozen=True)
class SplittingSchedule:
    t: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0 or self.t < 0:
            raise ValueError("need delta > 0 and t >= 0")

    @property
    def n(self) -> int:
        n = math.floor(self.t / self.delta)
        # guard floor against representation error
        while n * self.delta > self.t:
            n -= 1
        while (n + 1) * self.delta <= self.t:
            n += 1
        return n

    @property
    def tail(self) -> float:
        return self.t - self.n * self.delta

    def exposure(self, j: int) -> float:
        """Diffusion exposure after ``j`` heat-then-transport cycles."""
        return j * self.delta


def pulsed_diffusion(
    f: ScalarField,
    u: DivFreeVelocity,
    sched: SplittingSchedule,
    epsilon: float | None = None,
    snapshot_every: int = 1,
    beta: float = 1.0,
) -> EvolutionRecord:
    """``e^{tail Lap} (e^{-delta u.grad} e^{delta Lap})^n f``.

    Consecutive heat steps with no transport in between are applied as one
    multiplier (semigroup property), so a zero drift reproduces
    :func:`heat_step` exactly.  Atom data is first mollified for
    ``epsilon`` (default ``h^2``) outside the clock.
    """
    if f.atom_mass > 0:
        eps = f.grid.h**2 if epsilon is None else epsilon
        if not eps > 0:
            raise ValueError("atom data needs a positive mollification time")
        f = heat_step(f, eps)
    rec = EvolutionRecord("pulsed", {"t": sched.t, "delta": sched.delta, "n": sched.n, "tail": sched.tail})
    rec.add(0.0, f, beta)
    state, applied = f, 0.0
    for j in range(1, sched.n + 1):
        target = sched.exposure(j)
        t0 = (j - 1) * sched.delta
        moving = not u.is_zero_on(t0, t0 + sched.delta)
        if moving:
            state, applied = heat_step(state, target - applied), target
            for a, b in _pieces(u, t0, t0 + sched.delta):
                state = transport_step(state, u, a, b - a, rec.transport)
        rec.exposures.append(sched.delta)
        if j % snapshot_every == 0 or j == sched.n:
            rec.add(target, heat_step(state, target - applied), beta)
    rec.exposures.append(sched.tail)
    if sched.tail > 0 or (sched.n == 0 and sched.t > 0):
        rec.add(sched.t, heat_step(state, sched.t - applied), beta)
    return rec


def _pieces(u: DivFreeVelocity, a: float, b: float):
    cuts = [a] + u.events(a, b) + [b]
    return list(zip(cuts, cuts[1:]))


# --- direct pseudo-spectral solver -------------------------------------------------


def ifrk4_step(v_hat, t, dt, k2, rhs):
    """One Lawson (integrating-factor) RK4 step for ``v' = -k2 v + rhs(t, v)``."""
    e1 = np.exp(-k2 * dt)
    e2 = np.exp(-k2 * dt / 2)
    a = rhs(t, v_hat)
    b = rhs(t + dt / 2, e2 * (v_hat + dt / 2 * a))
    c = rhs(t + dt / 2, e2 * v_hat + dt / 2 * b)
    d = rhs(t + dt, e1 * v_hat + dt * e2 * c)
    return e1 * v_hat + dt / 6 * (e1 * a + 2 * e2 * (b + c) + d)


def advection_rhs(grid: BoxGrid, velocity_at):
    """``-(u . grad theta)^`` with the 2/3 rule; ``velocity_at(t, v_hat)`` -> samples or None."""
    sp = spectral(grid)

    def rhs(t, v_hat):
        u = velocity_at(t, v_hat)
        if u is None:
            return np.zeros_like(v_hat)
        grads = sp.grad(v_hat)
        prod = sum(u[j] * grads[j] for j in range(grid.d))
        return -sp.forward(prod) * sp.dealias

    return rhs


def max_stable_dt(grid: BoxGrid, sup_u: float, cfl: float = 0.5) -> float:
    if sup_u == 0:
        return math.inf
    return cfl / (sup_u * math.pi / grid.h)


def integrate(
    f: ScalarField,
    rhs,
    t_end: float,
    dt_max: float,
    times,
    scheme: str,
    params: dict,
    events=(),
    n_diag: int = 512,
    beta: float = 1.0,
) -> EvolutionRecord:
    """Shared IFRK4 driver: steps are aligned with output times and ``events``."""
    grid = f.grid
    sp = spectral(grid)
    rec = EvolutionRecord(scheme, dict(params))
    rec.add(0.0, f, beta)
    v_hat = sp.forward(f.values)
    rec.add_diag(0.0, v_hat, sp)
    outs = _with_times(times, t_end)
    marks = sorted(set(outs) | {e for e in events if 0 < e < t_end})
    dt_cap = min(dt_max, t_end / n_diag)
    t = 0.0
    for m in marks:
        span = m - t
        nsteps = max(1, math.ceil(span / dt_cap - 1e-9))
        h = span / nsteps
        for s in range(nsteps):
            ts = t + s * h
            mid = ts + 0.5 * h
            # the field is constant on each step; the midpoint picks its interval
            v_hat = ifrk4_step(v_hat, ts, h, sp.k2, lambda _s, v, mid=mid: rhs(mid, v))
            rec.add_diag(t + (s + 1) * h if s + 1 < nsteps else m, v_hat, sp)
        if not np.all(np.isfinite(v_hat)):
            raise BlowUpError(f"non-finite spectrum at t={m}")
        t = m
        if any(math.isclose(m, o, rel_tol=0, abs_tol=1e-14) for o in outs):
            vals = sp.inverse(v_hat)
            if not np.all(np.isfinite(vals)):
                raise BlowUpError(f"non-finite values at t={m}")
            rec.add(m, ScalarField(grid, _nonnegative(vals)), beta)
    return rec


def direct_solve(
    f: ScalarField,
    u: DivFreeVelocity,
    t: float,
    dt: float | None = None,
    times=None,
    epsilon: float | None = None,
    n_diag: int = 512,
    beta: float = 1.0,
) -> EvolutionRecord:
    """Pseudo-spectral ``d_t theta = Lap theta - u.grad theta``.

    Exact integrating factor for the Laplacian, RK4 for advection, 2/3-rule
    dealiasing.  ``dt`` defaults to the accuracy limit
    ``dt |u|_inf k_max <= 0.5``; steps are also capped at ``t / n_diag`` so
    the dense diagnostics resolve the dissipation integral.
    """
    grid = f.grid
    if f.atom_mass > 0:
        eps = grid.h**2 if epsilon is None else epsilon
        if not eps > 0:
            raise ValueError("atom data needs a positive mollification time")
        f = heat_step(f, eps)
    limit = max_stable_dt(grid, u.sup_norm)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the accuracy limit {limit:.3g}")
    if u.is_zero_on(0.0, t):
        # no transport at all: the heat multiplier is exact, so apply it in one go
        rec = heat_record(f, _with_times(times, t), n_diag=max(n_diag, 64), beta=beta)
        rec.scheme, rec.params = "direct", {"t": t, "dt": dt}
        return rec

    def velocity_at(s, v):
        i = u.interval(s)
        return None if i is None or u.sup_norms[i] == 0 else u.samples[i]

    rhs = advection_rhs(grid, velocity_at)
    return integrate(f, rhs, t, dt, times, "direct", {"t": t, "dt": dt}, u.breakpoints, n_diag, beta)


# --- dissipation ------------------------------------------------------------------


@dataclass(frozen=True)
class DissipationCurve:
    times: np.ndarray
    cumulative: np.ndarray
    residual: float
    residual_rel: float

    def at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.cumulative))


def dissipation_integral(record: EvolutionRecord) -> DissipationCurve:
    """Cumulative ``int_0^t ||grad theta||^2`` by the trapezoid rule on dense diagnostics.

    The residual is ``| ||theta(t)||^2 - ||theta(0)||^2 + 2 int ||grad theta||^2 |``.
    """
    if len(record.diag_times) < 64:
        raise ValueError("record needs at least 64 dense diagnostic samples")
    t = np.asarray(record.diag_times)
    g = np.asarray(record.diag_grad_l2sq)
    l2 = np.asarray(record.diag_l2sq)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
    res = abs(l2[-1] - l2[0] + 2 * cum[-1])
    return DissipationCurve(t, cum, float(res), float(res / l2[0]) if l2[0] > 0 else 0.0)
