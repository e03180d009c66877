"""Closed-form drift catalogue.

Every drift acts on points of shape ``(..., d)`` and returns velocities of
the same shape.  The divergence-free members are built from a stream
function ``psi(x1, x2)`` with ``u = (d2 psi, -d1 psi, 0, ...)`` so that grid
samples can be produced spectrally with zero discrete divergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


def _bump(z):
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos])
    return out


def _dbump(z):
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos]) / z[pos] ** 2
    return out


def erf_cutoff(r, r0: float, r1: float):
    """Analytic taper ``erfc`` centered between ``r0`` and ``r1``.

    Within ``8e-9`` of 1 at ``r0`` and of 0 at ``r1``, and below ``1e-16``
    a further ``(r1 - r0) / 2`` out.  Its spectrum decays like a Gaussian,
    which the compact bump cutoff does not.
    """
    r = np.asarray(r, dtype=float)
    kappa = (r1 - r0) / 8.0
    z = (r - 0.5 * (r0 + r1)) / kappa
    chi = 0.5 * special.erfc(z)
    dchi = -np.exp(-(z**2)) / (math.sqrt(math.pi) * kappa)
    return chi, dchi


def smooth_cutoff(r, r0: float, r1: float):
    """C-infinity radial cutoff: 1 on ``r <= r0``, 0 on ``r >= r1``.

    Returns ``(chi, dchi/dr)``.
    """
    r = np.asarray(r, dtype=float)
    s = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    a = _bump(1.0 - s)
    b = _bump(s)
    den = a + b
    chi = a / den
    inside = (r > r0) & (r < r1)
    dchi = np.zeros_like(r)
    da = -_dbump(1.0 - s)
    db = _dbump(s)
    dchi[inside] = ((da * b - a * db) / den**2)[inside] / (r1 - r0)
    return chi, dchi


class Drift:
    """Base class for analytic drifts."""

    name = "drift"
    divergence_free = True
    d = 2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def sup_norm(self) -> float:
        raise NotImplementedError

    def stream_function(self, x1, x2):
        """Stream function on the first two coordinates, or ``None``."""
        return None

    @property
    def period(self) -> float | None:
        """Spatial period in x1, x2 if the drift is periodic, else ``None``."""
        return None

    @property
    def support_radius(self) -> float | None:
        """Radius outside which the drift vanishes, if compactly supported."""
        return None

    def _from_stream_grad(self, x, d1psi, d2psi):
        out = np.zeros(np.shape(x), dtype=float)
        out[..., 0] = d2psi
        out[..., 1] = -d1psi
        return out


@dataclass(frozen=True)
class Zero(Drift):
    d: int = 2
    name = "zero"

    def __call__(self, x):
        return np.zeros(np.shape(x), dtype=float)

    @property
    def sup_norm(self):
        return 0.0


@dataclass(frozen=True)
class Constant(Drift):
    velocity: tuple = (1.0, 0.0)
    name = "constant"

    @property
    def d(self):
        return len(self.velocity)

    def __call__(self, x):
        return np.broadcast_to(np.asarray(self.velocity, dtype=float), np.shape(x)).copy()

    @property
    def sup_norm(self):
        return float(np.linalg.norm(self.velocity))


@dataclass(frozen=True)
class Shear(Drift):
    """``(0, lam * sin(k x1), 0...)``."""

    lam: float = 1.0
    k: float = 1.0
    d: int = 2
    name = "shear"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 1] = self.lam * np.sin(self.k * x[..., 0])
        return out

    def stream_function(self, x1, x2):
        return self.lam * np.cos(self.k * x1) / self.k + 0.0 * x2

    @property
    def sup_norm(self):
        return abs(self.lam)

    @property
    def period(self):
        return 2.0 * math.pi / self.k


@dataclass(frozen=True)
class Cellular(Drift):
    """Cellular flow with stream function ``(lam/k) sin(k x1) sin(k x2)``."""

    lam: float = 1.0
    k: float = 1.0
    d: int = 2
    name = "cellular"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.k * x[..., 0], self.k * x[..., 1]
        out = np.zeros_like(x)
        out[..., 0] = self.lam * np.sin(a) * np.cos(b)
        out[..., 1] = -self.lam * np.cos(a) * np.sin(b)
        return out

    def stream_function(self, x1, x2):
        return self.lam / self.k * np.sin(self.k * x1) * np.sin(self.k * x2)

    @property
    def sup_norm(self):
        return abs(self.lam)

    @property
    def period(self):
        return 2.0 * math.pi / self.k


@dataclass(frozen=True)
class _Truncated(Drift):
    radius: float = 1.0
    width: float | None = None  # cutoff runs from radius to radius + width
    d: int = 2
    # "bump": compact support on [0, r1]; "erf": analytic step between r0, r1;
    # "gauss": factor exp(-r^2 / 2 radius^2), width unused
    taper: str = "bump"

    def _cutoff(self, r):
        if self.taper == "gauss":
            a = self.radius
            chi = np.exp(-0.5 * (np.asarray(r, dtype=float) / a) ** 2)
            return chi, -r / a**2 * chi
        if self.taper == "erf":
            return erf_cutoff(r, self.r0, self.r1)
        if self.taper != "bump":
            raise ValueError(f"unknown taper {self.taper!r}")
        return smooth_cutoff(r, self.r0, self.r1)

    @property
    def r0(self):
        return self.radius

    @property
    def r1(self):
        return self.radius + (self.width if self.width is not None else 0.5 * self.radius)

    @property
    def support_radius(self):
        # radius beyond which the tapered field is below ~1e-13 of its scale
        if self.taper == "gauss":
            return self.radius * math.sqrt(60.0)
        return self.r1 if self.taper == "bump" else self.r1 + 0.5 * (self.r1 - self.r0)

    def _psi0(self, x1, x2):
        raise NotImplementedError

    def _dpsi0(self, x1, x2):
        raise NotImplementedError

    def stream_function(self, x1, x2):
        r = np.sqrt(x1**2 + x2**2)
        chi, _ = self._cutoff(r)
        return self._psi0(x1, x2) * chi

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        r = np.sqrt(x1**2 + x2**2)
        chi, dchi = self._cutoff(r)
        safe = np.where(r > 0, r, 1.0)
        p0 = self._psi0(x1, x2)
        a1, a2 = self._dpsi0(x1, x2)
        d1 = a1 * chi + p0 * dchi * x1 / safe
        d2 = a2 * chi + p0 * dchi * x2 / safe
        return self._from_stream_grad(x, d1, d2)

    @property
    def sup_norm(self):
        return _sampled_sup(self, self.support_radius)


@dataclass(frozen=True)
class Rotation(_Truncated):
    """Rotation ``omega * (-x2, x1)`` on ``B_radius``, smoothly cut off outside."""

    omega: float = 1.0
    name = "rotation"

    def _psi0(self, x1, x2):
        return -0.5 * self.omega * (x1**2 + x2**2)

    def _dpsi0(self, x1, x2):
        return -self.omega * x1, -self.omega * x2


@dataclass(frozen=True)
class Strain(_Truncated):
    """``(-x1, x2)`` on ``B_radius``, smoothly cut off outside.

    With ``radius = 2R`` and ``width = R`` this is the truncation that agrees
    with the linear strain on ``B_{2R}`` and vanishes beyond ``3R``.
    """

    name = "strain"

    def _psi0(self, x1, x2):
        return -x1 * x2

    def _dpsi0(self, x1, x2):
        return -x2, -x1


@dataclass(frozen=True)
class Radial(Drift):
    """``sign * x / |x|``, linearly mollified to zero inside ``B_eps``.

    ``sign = -1`` is the concentrating drift, ``+1`` the spreading one.
    Neither is divergence-free.
    """

    sign: float = -1.0
    eps: float = 0.1
    d: int = 2
    divergence_free = False

    @property
    def name(self):
        return "inward" if self.sign < 0 else "outward"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return self.sign * x / np.maximum(r, self.eps)

    @property
    def sup_norm(self):
        return 1.0


@dataclass(frozen=True)
class Linear(Drift):
    """``u(x) = x``; a test fixture with divergence ``d``."""

    d: int = 2
    divergence_free = False
    name = "linear"

    def __call__(self, x):
        return np.array(x, dtype=float)

    @property
    def sup_norm(self):
        return math.inf


def _sampled_sup(drift: Drift, extent: float, n: int = 801) -> float:
    s = np.linspace(-extent, extent, n)
    X1, X2 = np.meshgrid(s, s, indexing="ij")
    pts = np.zeros(X1.shape + (drift.d,))
    pts[..., 0] = X1
    pts[..., 1] = X2
    return float(np.max(np.linalg.norm(drift(pts), axis=-1)))


def inward(eps: float = 0.1, d: int = 2) -> Radial:
    return Radial(sign=-1.0, eps=eps, d=d)


def outward(eps: float = 0.1, d: int = 2) -> Radial:
    return Radial(sign=1.0, eps=eps, d=d)


CATALOGUE = {
    "zero": Zero,
    "constant": Constant,
    "shear": Shear,
    "cellular": Cellular,
    "rotation": Rotation,
    "strain": Strain,
}
