"""Euler-Maruyama ensembles for ``dX = u(t, X) dt + sqrt(2) dW`` on the whole space.

Brownian increments come from a counter-based generator: each (seed, step,
particle block) triple owns its own Philox stream, so the result does not
depend on how blocks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import drifts as _drifts

BLOCK = 4096
N_BATCHES = 16


def increments(seed: int, step: int, n: int, d: int, block: int = BLOCK) -> np.ndarray:
    """Standard normals of shape ``(n, d)`` for one time step.

    Particle ``j`` always draws from block ``j // block``; the stream of a
    block is keyed by ``(seed, step)`` with the block index in the high
    counter word.
    """
    out = np.empty((n, d))
    for b, start in enumerate(range(0, n, block)):
        stop = min(start + block, n)
        bitgen = np.random.Philox(key=[seed & (2**64 - 1), step], counter=[0, 0, 0, b])
        out[start:stop] = np.random.Generator(bitgen).standard_normal((stop - start, d))
    return out


@dataclass
class Ensemble:
    positions: np.ndarray  # (M, d)
    seed: int
    t: float = 0.0

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def variance(self) -> float:
        return float(np.sum(np.var(self.positions, axis=0, ddof=1)))

    def write(self, path):
        """Binary dump: one header line then little-endian float64 positions."""
        hdr = f"CONClab-ens v1 d={self.d} M={self.M} t={self.t!r} seed={self.seed}\n"
        with open(path, "wb") as fh:
            fh.write(hdr.encode())
            fh.write(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())


def read_ensemble(path) -> Ensemble:
    with open(path, "rb") as fh:
        hdr = fh.readline().decode().split()
        if hdr[:2] != ["CONClab-ens", "v1"]:
            raise ValueError("not an ensemble file")
        kv = dict(item.split("=", 1) for item in hdr[2:])
        d, M = int(kv["d"]), int(kv["M"])
        pos = np.frombuffer(fh.read(), dtype="<f8").reshape(M, d).copy()
    return Ensemble(pos, int(kv["seed"]), float(kv["t"]))


@dataclass
class VarianceCurve:
    times: np.ndarray
    var: np.ndarray
    ci_half: np.ndarray
    coord_var: np.ndarray  # (len(times), d)
    coord_se: np.ndarray

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,var,ci_half\n")
            for row in zip(self.times, self.var, self.ci_half):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _batch_stats(X: np.ndarray, n_batches: int = N_BATCHES):
    """Variance (ddof=1), its 95% batch-means half-width, per-coordinate SE."""
    v = float(np.sum(np.var(X, axis=0, ddof=1)))
    batches = np.array_split(X, n_batches)
    bv = np.array([np.sum(np.var(b, axis=0, ddof=1)) for b in batches])
    half = stats.t.ppf(0.975, n_batches - 1) * bv.std(ddof=1) / math.sqrt(n_batches)
    cv = np.var(X, axis=0, ddof=1)
    # SE of a sample variance from the fourth central moment
    c = X - X.mean(axis=0)
    m4 = np.mean(c**4, axis=0)
    se = np.sqrt(np.maximum(m4 - cv**2, 0.0) / X.shape[0])
    return v, float(half), cv, se


# --- initial laws ------------------------------------------------------------------


def sample_init(kind: str, M: int, d: int = 2, seed: int = 0, **kw) -> np.ndarray:
    """``point`` (``y``), ``gaussian`` (``sigma``), ``ball`` (``radius``) or ``two_atom`` (``R``)."""
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 2**63]))
    if kind == "point":
        y = np.asarray(kw.get("y", np.zeros(d)), dtype=float)
        return np.tile(y, (M, 1))
    if kind == "gaussian":
        return kw.get("sigma", 1.0) * rng.standard_normal((M, d))
    if kind == "ball":
        r = kw.get("radius", 1.0)
        g = rng.standard_normal((M, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * r * rng.random((M, 1)) ** (1.0 / d)
    if kind == "two_atom":
        R = kw.get("R", 1.0)
        X = np.zeros((M, d))
        X[:, 0] = np.where(np.arange(M) % 2 == 0, -R, R)
        return X
    raise ValueError(f"unknown initial law {kind!r}")


def init_variance(kind: str, d: int = 2, **kw) -> float:
    """Exact variance of the initial law (used by the ordering check)."""
    if kind == "point":
        return 0.0
    if kind == "gaussian":
        return d * kw.get("sigma", 1.0) ** 2
    if kind == "ball":
        r = kw.get("radius", 1.0)
        return d * r**2 / (d + 2)
    if kind == "two_atom":
        return kw.get("R", 1.0) ** 2
    raise ValueError(f"unknown initial law {kind!r}")


# --- simulation --------------------------------------------------------------------


@dataclass
class SimulationResult:
    curve: VarianceCurve
    snapshots: list = field(default_factory=list)  # Ensemble copies at the recorded times
    final: Ensemble | None = None


def simulate(u, X0: np.ndarray, t_max: float, dt: float = 1e-3, seed: int = 0, record_times=None, keep=False) -> SimulationResult:
    """Euler-Maruyama up to ``t_max``; ``u`` is any callable drift ``(M, d) -> (M, d)``.

    ``record_times`` are rounded to whole steps.  Raises if ``dt * ||u|| > 0.1``.
    """
    sup = getattr(u, "sup_norm", None)
    if sup is None or not math.isfinite(sup):
        raise ValueError("drift must be bounded")
    if dt * sup > 0.1:
        raise ValueError(f"dt*|u|_inf = {dt * sup:.3g} > 0.1; reduce dt")
    X = np.array(X0, dtype=float)
    M, d = X.shape
    n_steps = int(round(t_max / dt))
    rec = sorted(set(int(round(t / dt)) for t in (record_times if record_times is not None else [t_max])))
    times, var, half, cvs, ses, snaps = [], [], [], [], [], []
    sq = math.sqrt(2 * dt)
    zero = isinstance(u, _drifts.Zero)

    def note(step):
        v, hw, cv, se = _batch_stats(X)
        times.append(step * dt)
        var.append(v)
        half.append(hw)
        cvs.append(cv)
        ses.append(se)
        if keep:
            snaps.append(Ensemble(X.copy(), seed, step * dt))

    if 0 in rec:
        note(0)
    for n in range(1, n_steps + 1):
        drift = 0.0 if zero else u(X) * dt
        X = X + drift + sq * increments(seed, n, M, d)
        if n in rec:
            note(n)
    curve = VarianceCurve(np.array(times), np.array(var), np.array(half), np.array(cvs), np.array(ses))
    return SimulationResult(curve, snaps, Ensemble(X, seed, n_steps * dt))


@dataclass
class OrderingVerdict:
    holds: bool
    times: np.ndarray
    var: np.ndarray
    reference: np.ndarray  # Var(X_0) + 2 d t
    ci_half: np.ndarray
    margin: np.ndarray  # var - reference

    @property
    def dips_below(self) -> bool:
        """Whether the estimate sits significantly below the heat reference at some time."""
        return bool(np.any(self.var + 3 * self.ci_half < self.reference))


def variance_ordering_check(u, init: str, times, M: int = 20000, dt: float = 1e-3, seed: int = 0, d: int = 2, **init_kw) -> OrderingVerdict:
    """One-sided test ``Var_sim(t) >= Var(X_0) + 2 d t - 3 CI`` at every time."""
    X0 = sample_init(init, M, d, seed, **init_kw)
    times = np.asarray(times, dtype=float)
    res = simulate(u, X0, float(times.max()), dt, seed, record_times=times)
    c = res.curve
    ref = init_variance(init, d, **init_kw) + 2 * d * c.times
    ok = bool(np.all(c.var >= ref - 3 * c.ci_half))
    return OrderingVerdict(ok, c.times, c.var, ref, c.ci_half, c.var - ref)


def histogram_density(X: np.ndarray, L: float, N: int) -> np.ndarray:
    """Cell densities of positions wrapped into ``[-L/2, L/2)^d``, normalized to mass 1.

    Bins are centered on the grid points ``-L/2 + i h``.
    """
    h = L / N
    d = X.shape[1]
    idx = np.floor((X + L / 2 + h / 2) / h).astype(np.int64) % N
    flat = np.ravel_multi_index(tuple(idx.T), (N,) * d)
    counts = np.bincount(flat, minlength=N**d).reshape((N,) * d)
    return counts / (X.shape[0] * h**d)
