"""2D Navier-Stokes in vorticity form, ``w_t - Lap w + u . grad w = 0``,
with ``u = perp-grad (-Lap)^{-1} w`` and ``(a, b)^perp = (-b, a)``.

The zero mode of ``w`` is dropped before the inversion; on the periodic box
this is the only consistent choice and it leaves the mean of ``w`` alone.
"""
from __future__ import annotations

import numpy as np

from .fields import ScalarField
from .semigroups import EvolutionRecord, advection_rhs, integrate, max_stable_dt
from .spectral import spectral


def _biot_savart_hat(grid, w_hat: np.ndarray) -> list[np.ndarray]:
    sp = spectral(grid)
    inv = np.zeros_like(sp.k2)
    nz = sp.k2 > 0
    inv[nz] = 1.0 / sp.k2[nz]
    psi_hat = w_hat * inv
    # perp of (i k1, i k2) psi is (-i k2, i k1) psi
    return [-1j * sp.kd[1] * psi_hat, 1j * sp.kd[0] * psi_hat]


def biot_savart(omega: ScalarField | np.ndarray, grid=None) -> np.ndarray:
    """Velocity samples of shape ``(2, N, N)`` from a vorticity field."""
    if isinstance(omega, ScalarField):
        grid, vals = omega.grid, omega.values
    else:
        vals = np.asarray(omega, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(f"vorticity array has shape {vals.shape}, grid expects {grid.shape}")
    if grid.d != 2:
        raise ValueError("Biot-Savart closure is two-dimensional")
    sp = spectral(grid)
    u_hat = _biot_savart_hat(grid, sp.forward(vals))
    return np.stack([sp.inverse(c) for c in u_hat])


def velocity_divergence(grid, u: np.ndarray) -> float:
    sp = spectral(grid)
    div = sum(sp.inverse(1j * sp.kd[j] * sp.forward(u[j])) for j in range(2))
    return float(np.max(np.abs(div)))


def solve_ns(omega0: ScalarField, t: float, dt: float | None = None, times=None, n_diag: int = 512, sup_factor: float = 1.25) -> EvolutionRecord:
    """Integrate the vorticity equation with the shared IFRK4 driver.

    The velocity is recomputed from the current spectrum at every stage.
    With no ``dt`` the step is set from ``sup_factor * |u_0|_inf``.
    """
    grid = omega0.grid
    if grid.d != 2:
        raise ValueError("solve_ns is two-dimensional")
    if omega0.atom_mass > 0:
        raise ValueError("vorticity with an atom is not supported")
    sp = spectral(grid)
    u0 = biot_savart(omega0)
    sup = float(np.max(np.linalg.norm(u0, axis=0)))
    limit = max_stable_dt(grid, sup_factor * sup)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the accuracy limit {limit:.3g}")
    nonlinear = []

    def velocity_at(_s, v_hat):
        return [sp.inverse(c) for c in _biot_savart_hat(grid, v_hat)]

    base = advection_rhs(grid, velocity_at)

    def rhs(s, v_hat):
        out = base(s, v_hat)
        nonlinear.append(float(np.sqrt(sp.norm_sq(out))))
        return out

    rec = integrate(omega0, rhs, t, dt, times, "ns2d", {"t": t, "dt": dt}, (), n_diag)
    rec.params["max_nonlinear_norm"] = max(nonlinear) if nonlinear else 0.0
    return rec
