"""Exact truncated-Fourier evolution of a point mass on the unit torus under a
single two-mode shear that is switched on for a short window.

Coefficients follow ``c(k) = int e^{-2 pi i k.x} f(x) dx`` on ``[0,1]^d``.
While the field is off every mode decays as ``exp(-4 pi^2 |k|^2 dt)``; while
it is on, advection couples ``k`` to ``k -+ p`` with ``p = (1, 2, 0, ...)``.
This can be used to show that an incompressible drift can leave *more* L^2
mass than pure diffusion at late times.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .semigroups import ifrk4_step

FOUR_PI2 = 4.0 * math.pi**2


def _p(d: int) -> tuple[int, ...]:
    return (1, 2) + (0,) * (d - 2)


def build_u_hat(T: float, h: float, d: int = 2) -> dict:
    """Nonzero Fourier modes of the velocity, active on ``[T, T+h]``.

    Returns ``{"T": T, "h": h, "modes": {k: vector}}`` where ``k`` are integer
    tuples and vectors are complex arrays of length ``d``.
    """
    if d < 2:
        raise ValueError("the construction needs d >= 2")
    p = _p(d)
    v = np.zeros(d, dtype=complex)
    v[0], v[1] = -2j, 1j
    return {"T": T, "h": h, "modes": {p: v, tuple(-q for q in p): np.conj(v)}}


def u_hat_at(u: dict, t: float) -> dict:
    return u["modes"] if u["T"] <= t <= u["T"] + u["h"] else {}


@dataclass
class FourierState:
    """Coefficients on ``|k_i| <= K``; ``coeffs[K + k]`` holds ``c(k)``."""

    d: int
    K: int
    coeffs: np.ndarray
    t: float = 0.0

    @classmethod
    def delta(cls, d: int = 2, K: int = 16) -> "FourierState":
        return cls(d, K, np.ones((2 * K + 1,) * d, dtype=complex), 0.0)

    @classmethod
    def heat(cls, t: float, d: int = 2, K: int = 16) -> "FourierState":
        k2 = _k2(d, K)
        return cls(d, K, np.exp(-FOUR_PI2 * k2 * t).astype(complex), t)

    def copy(self) -> "FourierState":
        return FourierState(self.d, self.K, self.coeffs.copy(), self.t)

    def hermitian_error(self) -> float:
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.d])
        return float(np.max(np.abs(self.coeffs - flipped)))

    @property
    def zero_mode(self) -> complex:
        return complex(self.coeffs[(self.K,) * self.d])

    def l2sq(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def l2sq_minus1(self) -> float:
        """``sum_{k != 0} |c(k)|^2``, computed without cancellation."""
        a = np.abs(self.coeffs) ** 2
        a[(self.K,) * self.d] = 0.0
        return float(a.sum())

    def lowmode(self) -> float:
        return float(np.sum(np.abs(self.coeffs[_k2(self.d, self.K) == 1]) ** 2))

    def shell_energies(self) -> dict[int, float]:
        k2 = _k2(self.d, self.K).ravel()
        a = (np.abs(self.coeffs) ** 2).ravel()
        out = np.bincount(k2, weights=a)
        return {n: float(out[n]) for n in np.nonzero(out)[0]}

    def tail_fraction(self) -> float:
        """Energy on the outermost layer ``max_i |k_i| = K`` relative to the total."""
        edge = np.zeros(self.coeffs.shape, dtype=bool)
        for j in range(self.d):
            idx = [slice(None)] * self.d
            for pos in (0, -1):
                idx[j] = pos
                edge[tuple(idx)] = True
        return float(np.sum(np.abs(self.coeffs[edge]) ** 2) / self.l2sq())

    def at_cutoff(self, K: int) -> "FourierState":
        """Restrict or zero-pad to another cutoff."""
        out = np.zeros((2 * K + 1,) * self.d, dtype=complex)
        m = min(K, self.K)
        src = (slice(self.K - m, self.K + m + 1),) * self.d
        dst = (slice(K - m, K + m + 1),) * self.d
        out[dst] = self.coeffs[src]
        return FourierState(self.d, K, out, self.t)

    def to_grid(self, N: int) -> np.ndarray:
        """Real-space samples on ``x_i = -1/2 + i/N`` (needs ``N > 2K``)."""
        if N <= 2 * self.K:
            raise ValueError("grid too coarse for the retained modes")
        full = np.zeros((N,) * self.d, dtype=complex)
        ks = np.arange(-self.K, self.K + 1)
        ix = np.ix_(*([ks % N] * self.d))
        full[ix] = self.coeffs
        # x = -1/2 + j/N: the offset contributes (-1)^{k_1 + ... + k_d}
        sign = np.ones(full.shape)
        for j in range(self.d):
            s = [1] * self.d
            s[j] = N
            sign = sign * ((-1.0) ** np.fft.fftfreq(N, 1.0 / N)).reshape(s)
        return np.real(np.fft.ifftn(full * sign)) * N**self.d


def _k2(d: int, K: int) -> np.ndarray:
    ks = np.arange(-K, K + 1)
    grids = np.meshgrid(*([ks] * d), indexing="ij", sparse=True)
    return sum(g**2 for g in grids).astype(np.int64)


def _kcomp(d: int, K: int, j: int) -> np.ndarray:
    ks = np.arange(-K, K + 1).astype(float)
    s = [1] * d
    s[j] = ks.size
    return ks.reshape(s)


def _shift(a: np.ndarray, s: tuple[int, ...]) -> np.ndarray:
    """``out[k] = a[k - s]`` with zeros shifted in (truncation)."""
    out = np.zeros_like(a)
    src, dst = [], []
    for sj, n in zip(s, a.shape):
        if sj >= 0:
            src.append(slice(0, n - sj))
            dst.append(slice(sj, n))
        else:
            src.append(slice(-sj, n))
            dst.append(slice(0, n + sj))
    out[tuple(dst)] = a[tuple(src)]
    return out


def advection_coupling(state_coeffs: np.ndarray, d: int, K: int, modes: dict) -> np.ndarray:
    """``-(u . grad psi)^(k) = -sum_m u(m) . 2 pi i (k - m) c(k - m)``."""
    out = np.zeros_like(state_coeffs)
    kc = [_kcomp(d, K, j) for j in range(d)]
    for m, vec in modes.items():
        # weight evaluated at the source index q = k - m
        w = sum(vec[j] * 2j * math.pi * kc[j] for j in range(d) if vec[j] != 0)
        out -= _shift(w * state_coeffs, m)
    return out


@dataclass(frozen=True)
class CounterexampleParams:
    T: float
    h: float
    K: int = 16
    dt: float | None = None  # defaults to h/200
    t_max: float | None = None  # defaults to max(50 T, T + h + 2)
    d: int = 2

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("activation time must be positive")
        if not (0 <= self.h <= self.T):
            raise ValueError("need 0 <= h <= T")
        if self.K < 8:
            raise ValueError("cutoff K must be at least 8")
        if self.h > 0 and self.substep > self.h / 100 * (1 + 1e-12):
            raise ValueError("substep must be at most h/100")

    @property
    def substep(self) -> float:
        return self.dt if self.dt is not None else self.h / 200

    @property
    def horizon(self) -> float:
        return self.t_max if self.t_max is not None else max(50.0 * self.T, self.T + self.h + 2.0)


@dataclass
class Trajectory:
    """Sampled low-mode mass and ``||.||^2 - 1`` over time, plus key states."""

    times: np.ndarray
    lowmode: np.ndarray
    l2sq_minus1: np.ndarray
    states: dict = field(default_factory=dict)  # label -> FourierState
    max_tail: float = 0.0
    max_hermitian_error: float = 0.0
    max_zero_drift: float = 0.0


def evolve_spectral(state: FourierState, params: CounterexampleParams, diffusion: bool = True, late_samples: int = 400) -> Trajectory:
    """Evolve ``c(k)`` through the activation window and out to the horizon.

    Before ``T`` and after ``T+h`` the decay is applied in closed form; during
    the window a Lawson RK4 step of size ``<= params.substep`` is used.  With
    ``diffusion=False`` only the advective coupling acts (isometry check).
    """
    d, K = state.d, state.K
    T, h = params.T, params.h
    u = build_u_hat(T, h, d)
    rate = FOUR_PI2 * _k2(d, K) if diffusion else np.zeros((2 * K + 1,) * d)
    times, low, rest = [], [], []
    tail = herm = zero = 0.0

    def record(s: FourierState, checked: bool = True):
        nonlocal tail, herm, zero
        times.append(s.t)
        low.append(s.lowmode())
        rest.append(s.l2sq_minus1())
        if checked:  # early samples are closed form and deliberately unresolved
            tail = max(tail, s.tail_fraction())
        herm = max(herm, s.hermitian_error())
        zero = max(zero, abs(s.zero_mode - 1.0))

    s = state.copy()
    traj_states = {"initial": state.copy()}
    # closed-form approach to T, sampled so the heat part of the curve exists
    early = np.geomspace(min(T, 1e-3), T, 32) if T > s.t else np.array([])
    c0, t0 = s.coeffs.copy(), s.t
    for tt in early:
        if tt <= t0:
            continue
        s = FourierState(d, K, c0 * np.exp(-rate * (tt - t0)), tt)
        record(s, checked=tt >= T)
    traj_states["T"] = s.copy()

    if h > 0:
        n = max(1, math.ceil(h / params.substep - 1e-9))
        dt = h / n
        modes = u["modes"]
        rhs = lambda _t, c: advection_coupling(c, d, K, modes)
        c = s.coeffs
        for i in range(n):
            c = ifrk4_step(c, T + i * dt, dt, rate, rhs)
            s = FourierState(d, K, c, T + (i + 1) * dt)
            record(s)
        s = FourierState(d, K, c, T + h)
    traj_states["T+h"] = s.copy()

    c1, t1 = s.coeffs.copy(), s.t
    if params.horizon > t1:
        for tt in np.geomspace(t1 + 1e-6 * max(t1, 1e-3), params.horizon, late_samples):
            record(FourierState(d, K, c1 * np.exp(-rate * (tt - t1)), tt))
        s = FourierState(d, K, c1 * np.exp(-rate * (params.horizon - t1)), params.horizon)
    traj_states["final"] = s
    return Trajectory(np.array(times), np.array(low), np.array(rest), traj_states, tail, herm, zero)


def lowmode_derivative_formula(T: float, d: int = 2) -> tuple[float, float]:
    """Right derivative at ``T`` of the ``|k| = 1`` mass: ``(heat part, advective gain)``.

    The heat part is ``-16 d pi^2 exp(-8 pi^2 T)``; only ``+-e_1, +-e_2``
    receive the gain.
    """
    heat = -16.0 * d * math.pi**2 * math.exp(-8 * math.pi**2 * T)
    e = lambda a: math.exp(-a * math.pi**2 * T)
    gain = 8 * math.pi * e(4) * (e(8) - 2 * e(16) + 2 * e(32) - e(40))
    return heat, gain


def lowmode_derivative_numeric(T: float, d: int = 2, K: int = 16) -> float:
    """``2 Re sum_{|k|=1} conj(c) c'`` evaluated from the coupled system at ``T^+``."""
    s = FourierState.heat(T, d, K)
    rate = FOUR_PI2 * _k2(d, K)
    dc = -rate * s.coeffs + advection_coupling(s.coeffs, d, K, build_u_hat(T, T, d)["modes"])
    mask = _k2(d, K) == 1
    return float(2 * np.real(np.sum(np.conj(s.coeffs[mask]) * dc[mask])))


def heat_l2sq_minus1(t, d: int = 2, K: int = 16) -> np.ndarray:
    """``sum_{k != 0} exp(-8 pi^2 |k|^2 t)`` on the same truncation."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k2 = _k2(d, K).ravel()
    counts = np.bincount(k2)
    n = np.nonzero(counts)[0]
    n = n[n > 0]
    return np.exp(-2 * FOUR_PI2 * np.outer(t, n)) @ counts[n]


def heat_lowmode(t, d: int = 2) -> np.ndarray:
    return 2 * d * np.exp(-2 * FOUR_PI2 * np.asarray(t, dtype=float))


@dataclass
class CounterexampleVerdict:
    params: CounterexampleParams
    times: np.ndarray
    psi_lowmode: np.ndarray
    phi_lowmode: np.ndarray
    psi_l2sq_minus1: np.ndarray
    phi_l2sq_minus1: np.ndarray
    excess_at_end: float  # low-mode excess at T+h
    excess_bound: float  # (1/4) e^{-8 pi^2 T} h
    asymptotic_ratio: float
    t_star: float | None
    inversion: bool
    truncation_error: float
    tail_fraction: float
    status: str  # "found", "not found" or "inconclusive"
    derivative_numeric: float
    derivative_formula: tuple[float, float]
    trajectory: Trajectory | None = None

    @property
    def ratio(self) -> np.ndarray:
        return self.psi_l2sq_minus1 / self.phi_l2sq_minus1

    def summary(self) -> dict:
        heat, gain = self.derivative_formula
        return {
            "T": self.params.T,
            "h": self.params.h,
            "K": self.params.K,
            "d": self.params.d,
            "status": self.status,
            "inversion": self.inversion,
            "t_star": self.t_star,
            "excess_at_T_plus_h": self.excess_at_end,
            "quarter_bound": self.excess_bound,
            "excess_meets_bound": self.excess_at_end >= self.excess_bound,
            "asymptotic_ratio": self.asymptotic_ratio,
            "truncation_error": self.truncation_error,
            "tail_fraction": self.tail_fraction,
            "lowmode_derivative_numeric": self.derivative_numeric,
            "lowmode_derivative_heat_part": heat,
            "lowmode_derivative_gain": gain,
            # the factor-T variant of the heat part, for comparison
            "heat_part_with_extra_T_factor": heat * self.params.T,
        }

    def write(self, out_dir) -> dict:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "lowmode.csv", "w") as fh:
            fh.write("t,psi_lowmode,phi_lowmode\n")
            for row in zip(self.times, self.psi_lowmode, self.phi_lowmode):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(out / "l2ratio.csv", "w") as fh:
            fh.write("t,psi_l2sq_minus1,phi_l2sq_minus1,ratio\n")
            for row in zip(self.times, self.psi_l2sq_minus1, self.phi_l2sq_minus1, self.ratio):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        text = json.dumps(self.summary(), indent=2)
        (out / "verdict.json").write_text(text + "\n")
        return {"lowmode": str(out / "lowmode.csv"), "l2ratio": str(out / "l2ratio.csv"), "verdict": str(out / "verdict.json")}


def _first_persistent(times, diff, after):
    ok = diff > 0
    idx = np.nonzero(times >= after)[0]
    if idx.size == 0 or not ok[idx[-1]]:
        return None
    # walk back from the end while dominance holds
    j = idx[-1]
    while j - 1 >= idx[0] and ok[j - 1]:
        j -= 1
    return float(times[j])


def verify_counterexample(params: CounterexampleParams, keep_trajectory: bool = False) -> CounterexampleVerdict:
    d, K = params.d, params.K
    traj = evolve_spectral(FourierState.delta(d, K), params)
    ref = evolve_spectral(FourierState.delta(d, 2 * K), CounterexampleParams(params.T, params.h, 2 * K, params.dt, params.t_max, d))
    # truncation error: change of the verdict curves under doubling K
    late = traj.times >= params.T
    trunc = float(
        max(
            np.max(np.abs(traj.lowmode - ref.lowmode)[late]),
            np.max(np.abs(traj.l2sq_minus1 - ref.l2sq_minus1)[late]),
        )
    )

    t = traj.times
    phi_low = heat_lowmode(t, d)
    phi_rest = heat_l2sq_minus1(t, d, K)
    end = traj.states["T+h"]
    tend = params.T + params.h
    phi_end_low = float(heat_lowmode(tend, d))
    excess = end.lowmode() - phi_end_low
    bound = 0.25 * math.exp(-8 * math.pi**2 * params.T) * params.h
    ratio_inf = end.lowmode() / phi_end_low

    diff = traj.l2sq_minus1 - phi_rest
    t_star = _first_persistent(t, diff, tend) if params.h > 0 else None
    inversion = t_star is not None
    if params.h > 0 and abs(excess) < 10 * trunc:
        status = "inconclusive"
    else:
        status = "found" if inversion and ratio_inf > 1 else "not found"
    return CounterexampleVerdict(
        params,
        t,
        traj.lowmode,
        phi_low,
        traj.l2sq_minus1,
        phi_rest,
        float(excess),
        bound,
        float(ratio_inf),
        t_star,
        inversion,
        trunc,
        traj.max_tail,
        status,
        lowmode_derivative_numeric(params.T, d, K),
        lowmode_derivative_formula(params.T, d),
        traj if keep_trajectory else None,
    )


def scan(T_values=None, h_halvings: int = 6, K: int = 16, d: int = 2) -> list[CounterexampleVerdict]:
    """Scan ``T`` log-spaced in ``[0.02, 0.2]`` and ``h = T, T/2, ...``."""
    T_values = np.geomspace(0.02, 0.2, 7) if T_values is None else T_values
    out = []
    for T in T_values:
        h = float(T)
        for _ in range(h_halvings):
            out.append(verify_counterexample(CounterexampleParams(float(T), h, K, d=d)))
            h /= 2
    return out


def first_found(verdicts) -> CounterexampleVerdict | None:
    for v in verdicts:
        if v.status == "found" and v.excess_at_end >= v.excess_bound:
            return v
    return None
