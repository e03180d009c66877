"""Box geometry, nonnegative densities with a centered atom, and velocity fields.

The box is ``[-L/2, L/2)^d`` sampled at ``x_i = -L/2 + i*h``; grid index
``N/2`` along every axis sits exactly at the origin, which is where the
atom of a :class:`ScalarField` lives.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special

from . import drifts as _drifts
from .spectral import spectral


class DomainProxyWarning(UserWarning):
    """The periodic box is too small to stand in for the whole space."""


@dataclass(frozen=True)
class BoxGrid:
    d: int
    L: float
    N: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError("side length must be positive")
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def center(self) -> tuple[int, ...]:
        return (self.N // 2,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.N) - self.N // 2) * self.h

    def mesh(self, sparse: bool = True) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=sparse)

    def points(self) -> np.ndarray:
        """All cell centers as an array of shape ``(N,)*d + (d,)``."""
        return np.stack(self.mesh(sparse=False), axis=-1)

    @cached_property
    def offset_sq(self) -> np.ndarray:
        """Exact integer squared index distance to the center cell."""
        off = np.arange(self.N) - self.N // 2
        tot = np.zeros(self.shape, dtype=np.int64)
        for j in range(self.d):
            s = [1] * self.d
            s[j] = self.N
            tot = tot + (off**2).reshape(s)
        return tot

    @cached_property
    def r2(self) -> np.ndarray:
        return self.offset_sq * self.h**2

    def minimal_image(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) + self.L / 2) % self.L - self.L / 2

    def header(self, atom: float = 0.0, kind: str = "field") -> str:
        return f"CONClab-{kind} v1 d={self.d} L={self.L!r} N={self.N} atom={float(atom)!r}"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nonnegative density on a grid plus an atom of mass ``atom_mass`` at the origin."""

    grid: BoxGrid
    values: np.ndarray
    atom_mass: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if np.any(v < 0):
            raise ValueError("field values must be nonnegative")
        if not self.atom_mass >= 0 or not math.isfinite(self.atom_mass):
            raise ValueError("atom mass must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "atom_mass", float(self.atom_mass))

    @cached_property
    def density_mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    @property
    def mass(self) -> float:
        return self.density_mass + self.atom_mass

    def with_values(self, values: np.ndarray, atom_mass: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.atom_mass if atom_mass is None else atom_mass)

    def shifted(self, cells: Sequence[int]) -> "ScalarField":
        """Periodic shift by whole cells (atoms are pinned to the center)."""
        return self.with_values(np.roll(self.values, tuple(cells), axis=tuple(range(self.grid.d))))


def _check_scale(grid: BoxGrid, name: str, value: float):
    if value > grid.L / 4:
        raise ValueError(f"{name}={value} exceeds L/4={grid.L / 4}; the box no longer proxies R^d")


def _displaced_r2(grid: BoxGrid, center) -> np.ndarray:
    if center is None or not np.any(center):
        return grid.r2
    X = grid.mesh()
    r2 = 0.0
    for j in range(grid.d):
        r2 = r2 + grid.minimal_image(X[j] - center[j]) ** 2
    return r2


def gaussian(grid: BoxGrid, sigma: float, center=None, mass: float = 1.0, scales=None) -> np.ndarray:
    """Sampled normalized Gaussian density (optionally anisotropic via ``scales``)."""
    _check_scale(grid, "sigma", sigma * (max(scales) if scales is not None else 1.0))
    if scales is None:
        r2 = _displaced_r2(grid, center)
        return mass * np.exp(-r2 / (2 * sigma**2)) / (2 * math.pi * sigma**2) ** (grid.d / 2)
    X = grid.mesh()
    c = center if center is not None else (0.0,) * grid.d
    q = 0.0
    for j in range(grid.d):
        q = q + (grid.minimal_image(X[j] - c[j]) / scales[j]) ** 2
    norm = (2 * math.pi * sigma**2) ** (grid.d / 2) * float(np.prod(scales))
    return mass * np.exp(-q / (2 * sigma**2)) / norm


def mollified_ball(grid: BoxGrid, radius: float, eps: float, center=None, height: float = 1.0) -> np.ndarray:
    """``e^{eps Lap}`` of a ball indicator, built from its continuum Fourier transform.

    Unlike heat-smoothing a sampled indicator this does not depend on how the
    ball boundary falls on the lattice, so different resolutions agree.
    """
    _check_scale(grid, "radius", radius)
    sp = spectral(grid)
    k = np.sqrt(sp.k2)
    kr = k * radius
    safe = np.where(kr > 0, kr, 1.0)
    if grid.d == 2:
        ft = np.where(kr > 0, 2 * np.pi * radius**2 * special.j1(safe) / safe, np.pi * radius**2)
    else:
        ft = np.where(
            kr > 1e-3,
            4 * np.pi * radius**3 * (np.sin(safe) - safe * np.cos(safe)) / safe**3,
            4 * np.pi * radius**3 / 3 * (1 - kr**2 / 10),
        )
    coeff = height * ft * np.exp(-eps * sp.k2) / grid.volume
    # the grid origin sits at index N/2; shift the center there
    c = np.zeros(grid.d) if center is None else np.asarray(center, float)
    phase = np.ones(sp.spec_shape, dtype=complex)
    for j in range(grid.d):
        phase = phase * np.exp(-1j * sp.k[j] * (c[j] + grid.L / 2))
    vals = sp.inverse(coeff * phase * grid.N**grid.d)
    return np.maximum(vals, 0.0)


def upsample(f: ScalarField, factor: int) -> ScalarField:
    """Band-limited (zero-padded Fourier) interpolation onto a grid ``factor`` times finer."""
    if factor == 1:
        return f
    g = f.grid
    M = g.N * factor
    F = np.fft.rfftn(f.values)
    for ax in range(g.d - 1):
        F = _pad_axis(F, ax, g.N, M)
    h = g.N // 2
    last = np.zeros(F.shape[:-1] + (M // 2 + 1,), dtype=complex)
    last[..., :h] = F[..., :h]
    last[..., h] = 0.5 * F[..., h]
    vals = np.fft.irfftn(last, s=(M,) * g.d, axes=tuple(range(g.d))) * factor**g.d
    fine = BoxGrid(g.d, g.L, M)
    return ScalarField(fine, np.maximum(vals, 0.0), f.atom_mass)


def _pad_axis(F, ax, N, M):
    F = np.moveaxis(F, ax, 0)
    out = np.zeros((M,) + F.shape[1:], dtype=complex)
    h = N // 2
    out[:h] = F[:h]
    out[M - h + 1 :] = F[h + 1 :]
    out[h] = 0.5 * F[h]
    out[M - h] = 0.5 * F[h]
    return np.moveaxis(out, 0, ax)


def make_field(grid: BoxGrid, kind: str, **kw) -> ScalarField:
    """Build an initial datum.

    kind:
        ``atom`` (unit mass at the origin, or ``mass=``), ``gaussian``
        (``sigma``, ``center``, ``mass``, ``scales``), ``ball`` (``radius``,
        ``center``, ``height``), ``mollified_ball`` (``radius``, ``eps``,
        ``center``, ``height``), ``rectangle`` (``half_widths``, ``center``,
        ``height``), ``bumps`` (list of ``(sigma, center, mass)``) or
        ``array`` (``values``, optional ``atom_mass``).
    """
    if kind == "atom":
        return ScalarField(grid, np.zeros(grid.shape), kw.get("mass", 1.0))
    if kind == "gaussian":
        return ScalarField(grid, gaussian(grid, kw["sigma"], kw.get("center"), kw.get("mass", 1.0), kw.get("scales")))
    if kind == "ball":
        r = kw["radius"]
        _check_scale(grid, "radius", r)
        r2 = _displaced_r2(grid, kw.get("center"))
        return ScalarField(grid, np.where(r2 <= r * r, kw.get("height", 1.0), 0.0))
    if kind == "mollified_ball":
        return ScalarField(grid, mollified_ball(grid, kw["radius"], kw["eps"], kw.get("center"), kw.get("height", 1.0)))
    if kind == "rectangle":
        hw = kw["half_widths"]
        c = kw.get("center") or (0.0,) * grid.d
        inside = np.ones(grid.shape, dtype=bool)
        X = grid.mesh()
        for j in range(grid.d):
            _check_scale(grid, "half_width", hw[j])
            inside = inside & (np.abs(grid.minimal_image(X[j] - c[j])) <= hw[j])
        return ScalarField(grid, np.where(inside, kw.get("height", 1.0), 0.0))
    if kind == "bumps":
        v = np.zeros(grid.shape)
        for sigma, center, mass in kw["bumps"]:
            v = v + gaussian(grid, sigma, center, mass)
        return ScalarField(grid, v)
    if kind == "array":
        vals = np.asarray(kw["values"], dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(f"array shape {vals.shape} does not match grid {grid.shape}")
        if np.any(vals < 0):
            raise ValueError("user arrays must be nonnegative")
        return ScalarField(grid, vals, kw.get("atom_mass", 0.0))
    raise ValueError(f"unknown initial condition {kind!r}")


def check_domain_proxy(grid: BoxGrid, t: float, sup_u: float, spread: float = 0.0) -> bool:
    """Warn if ``sqrt(2 d t) + t*|u|_inf`` (plus the datum's own spread) exceeds ``L/8``."""
    reach = math.sqrt(2 * grid.d * t) + t * sup_u + spread
    ok = reach <= grid.L / 8
    if not ok:
        warnings.warn(
            f"diffusion/transport reach {reach:.3g} exceeds L/8 = {grid.L / 8:.3g}",
            DomainProxyWarning,
            stacklevel=2,
        )
    return ok


# --- velocity fields -------------------------------------------------------


def sample_drift(grid: BoxGrid, drift: _drifts.Drift) -> np.ndarray:
    """Grid samples of shape ``(d,) + grid.shape``.

    Stream-function drifts are differentiated spectrally so the samples are
    discretely divergence-free.
    """
    if drift.d != grid.d:
        raise ValueError(f"drift dimension {drift.d} != grid dimension {grid.d}")
    X = grid.mesh(sparse=False)
    if isinstance(drift, (_drifts.Zero, _drifts.Constant)):
        return np.moveaxis(drift(np.stack(X, -1)), -1, 0)
    psi = drift.stream_function(X[0], X[1]) if drift.divergence_free else None
    if psi is None:
        return np.moveaxis(drift(np.stack(X, -1)), -1, 0)
    if drift.period is not None:
        ratio = grid.L / drift.period
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"box side {grid.L} is not a multiple of the drift period {drift.period}")
    if drift.support_radius is not None and drift.support_radius >= grid.L / 2:
        raise ValueError("drift support does not fit in the box")
    sp = spectral(grid)
    d1, d2 = sp.grad(sp.forward(psi))[:2]
    out = np.zeros((grid.d,) + grid.shape)
    out[0] = d2
    out[1] = -d1
    return out


def spectral_divergence(grid: BoxGrid, u: np.ndarray) -> np.ndarray:
    sp = spectral(grid)
    acc = np.zeros(sp.spec_shape, dtype=complex)
    for j in range(grid.d):
        acc += 1j * sp.kd[j] * sp.forward(u[j])
    return sp.inverse(acc)


DIVERGENCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DivFreeVelocity:
    """Velocity piecewise constant in time on ``[t_i, t_{i+1})``; zero outside.

    ``samples[i]`` has shape ``(d,) + grid.shape``.  ``drifts[i]`` is the
    closed-form evaluator for interval ``i`` when one exists.
    """

    grid: BoxGrid
    breakpoints: tuple
    samples: tuple
    drifts: tuple = ()
    check: bool = True

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        if len(bp) < 2 or any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing with at least two entries")
        if len(self.samples) != len(bp) - 1:
            raise ValueError("need one velocity sample per interval")
        samples = []
        for s in self.samples:
            a = np.array(s, dtype=float)
            if a.shape != (self.grid.d,) + self.grid.shape:
                raise ValueError(f"velocity sample has shape {a.shape}")
            a.setflags(write=False)
            samples.append(a)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "samples", tuple(samples))
        dr = tuple(self.drifts) if self.drifts else (None,) * len(samples)
        object.__setattr__(self, "drifts", dr)
        if self.check:
            bad = [m for m, s in zip(self.divergence(), self.sup_norms) if m > DIVERGENCE_TOL * max(s, 1e-300)]
            if bad:
                raise ValueError(f"velocity is not divergence-free (max |div u| = {max(bad):.3g})")

    @classmethod
    def steady(cls, grid: BoxGrid, drift: _drifts.Drift, t0: float = 0.0, t1: float = math.inf):
        return cls(grid, (t0, t1), (sample_drift(grid, drift),), (drift,))

    @classmethod
    def from_time_function(cls, grid: BoxGrid, drift_at, breakpoints):
        """Sample a smooth-in-time family ``drift_at(t)`` at interval midpoints."""
        mids = [0.5 * (a + b) for a, b in zip(breakpoints, breakpoints[1:])]
        ds = [drift_at(m) for m in mids]
        return cls(grid, tuple(breakpoints), tuple(sample_drift(grid, d) for d in ds), tuple(ds))

    @classmethod
    def from_arrays(cls, grid: BoxGrid, breakpoints, samples, check: bool = True):
        return cls(grid, tuple(breakpoints), tuple(samples), (), check)

    @cached_property
    def sup_norms(self) -> list[float]:
        return [float(np.max(np.sqrt(np.sum(s**2, axis=0)))) for s in self.samples]

    @property
    def sup_norm(self) -> float:
        return max(self.sup_norms)

    def divergence(self) -> list[float]:
        return [float(np.max(np.abs(spectral_divergence(self.grid, s)))) for s in self.samples]

    def interval(self, t: float) -> int | None:
        """Index of the interval containing ``t`` or ``None`` where the field is off."""
        bp = self.breakpoints
        if t < bp[0] or t >= bp[-1]:
            return None
        return int(np.searchsorted(bp, t, side="right") - 1)

    def sample_at(self, t: float) -> np.ndarray | None:
        i = self.interval(t)
        return None if i is None else self.samples[i]

    def drift_at(self, t: float):
        i = self.interval(t)
        return None if i is None else self.drifts[i]

    def is_zero_on(self, t0: float, t1: float) -> bool:
        for i, (a, b) in enumerate(zip(self.breakpoints, self.breakpoints[1:])):
            if b > t0 and a < t1 and self.sup_norms[i] > 0:
                return False
        return True

    def events(self, t0: float, t1: float) -> list[float]:
        """Breakpoints strictly inside ``(t0, t1)``."""
        return [b for b in self.breakpoints if t0 < b < t1]

    @staticmethod
    def zero(grid: BoxGrid) -> "DivFreeVelocity":
        return DivFreeVelocity.steady(grid, _drifts.Zero(d=grid.d))


def divergence_check(u: DivFreeVelocity, tol: float = DIVERGENCE_TOL):
    """Per-interval ``sup |div u|`` and a flag for intervals over ``tol * |u|_inf``."""
    divs = u.divergence()
    flags = [m > tol * max(s, 1e-300) for m, s in zip(divs, u.sup_norms)]
    return divs, flags


# --- moments -----------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    mass: float
    mean: tuple
    variance: float
    entropy: float
    lp: dict
    beta: float
    beta_moment: float

    def row(self) -> list[float]:
        return [self.mass, self.variance, self.entropy, self.lp[1], self.lp[2], self.lp[4], self.lp[math.inf]]


def moments(f: ScalarField, beta: float = 1.0) -> MomentReport:
    """Mass, mean, variance (law-normalized), entropy, Lp norms and a beta moment.

    Coordinates are taken relative to the box center with the minimal-image
    convention; the atom sits at the origin.
    """
    g = f.grid
    dv = g.cell_volume
    v = f.values
    mass = f.mass
    X = g.mesh()
    if mass > 0:
        mean = tuple(float(np.sum(X[j] * v) * dv / mass) for j in range(g.d))
        second = float(np.sum(g.r2 * v) * dv / mass)
        var = max(second - sum(m * m for m in mean), 0.0)
    else:
        mean = (math.nan,) * g.d
        var = math.nan
    if mass == 0:
        entropy = math.nan
    elif f.atom_mass > 0:
        entropy = -math.inf
    else:
        pos = v[v > 0]
        entropy = float(-np.sum(pos * np.log(pos)) * dv)
    lp = {}
    for p in (1, 2, 4):
        if f.atom_mass > 0 and p > 1:
            lp[p] = math.inf
        else:
            lp[p] = float(np.sum(v**p) * dv) ** (1.0 / p) + (f.atom_mass if p == 1 else 0.0)
    lp[math.inf] = math.inf if f.atom_mass > 0 else float(v.max())
    bm = float(np.sum(np.sqrt(g.r2) ** beta * v) * dv)
    return MomentReport(mass, mean, var, entropy, lp, beta, bm)


# --- snapshot files ------------------------------------------------------------


def write_array(path, grid: BoxGrid, values: np.ndarray, atom: float = 0.0, kind: str = "field"):
    with open(path, "wb") as fh:
        fh.write((grid.header(atom, kind) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def write_field(path, f: ScalarField):
    write_array(path, f.grid, f.values, f.atom_mass)


def read_array(path):
    """Return ``(kind, header dict, flat float array)``."""
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii").split()
        data = np.frombuffer(fh.read(), dtype="<f8")
    if not head or not head[0].startswith("CONClab-") or head[1] != "v1":
        raise ValueError(f"{path}: not a CONClab v1 file")
    meta = dict(item.split("=", 1) for item in head[2:])
    return head[0].split("-", 1)[1], meta, data


def read_field(path) -> ScalarField:
    kind, meta, data = read_array(path)
    if kind != "field":
        raise ValueError(f"{path}: expected a field file, got {kind}")
    grid = BoxGrid(int(meta["d"]), float(meta["L"]), int(meta["N"]))
    return ScalarField(grid, data.reshape(grid.shape), float(meta["atom"]))
