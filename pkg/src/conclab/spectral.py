"""FFT helpers on a periodic box: wavenumbers, derivatives, dealiasing.

All transforms use the real-to-complex layout of :func:`numpy.fft.rfftn`
(last axis halved).  Wavenumbers are angular, ``2*pi*n/L``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


class Spectral:
    """Precomputed spectral operators for one :class:`~conclab.fields.BoxGrid`."""

    def __init__(self, grid):
        self.grid = grid
        N, d, L = grid.N, grid.d, grid.L
        full = np.fft.fftfreq(N, d=1.0 / N)  # integer mode numbers
        half = np.fft.rfftfreq(N, d=1.0 / N)
        ints = [full] * (d - 1) + [half]
        shape = [N] * (d - 1) + [N // 2 + 1]
        self.spec_shape = tuple(shape)
        self._axes = tuple(range(-d, 0))
        self.modes = []
        for j, n in enumerate(ints):
            s = [1] * d
            s[j] = n.size
            self.modes.append(n.reshape(s))
        scale = 2.0 * np.pi / L
        self.k = [scale * m for m in self.modes]
        # first-derivative symbols with the Nyquist mode removed (real output)
        self.kd = [np.where(np.abs(m) == N // 2, 0.0, kj) for m, kj in zip(self.modes, self.k)]
        k2 = np.zeros(self.spec_shape)
        for kj in self.k:
            k2 = k2 + kj**2
        self.k2 = k2
        cut = N // 3
        mask = np.ones(self.spec_shape, dtype=bool)
        for m in self.modes:
            mask = mask & (np.abs(m) <= cut)
        self.dealias = mask
        # multiplicity of each rfft coefficient in the full spectrum (Parseval)
        w = np.full(self.spec_shape, 2.0)
        w[..., 0] = 1.0
        if N % 2 == 0:
            w[..., N // 2] = 1.0
        self.weights = w

    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a)

    def inverse(self, a_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(a_hat, s=self.grid.shape, axes=self._axes)

    def grad(self, a_hat: np.ndarray) -> list[np.ndarray]:
        return [self.inverse(1j * kj * a_hat) for kj in self.kd]

    def norm_sq(self, a_hat: np.ndarray) -> float:
        """Continuum L^2 norm squared, ``h^d * sum |a|^2``, from coefficients."""
        g = self.grid
        return float(np.sum(self.weights * np.abs(a_hat) ** 2) * g.cell_volume / g.N**g.d)

    def grad_norm_sq(self, a_hat: np.ndarray) -> float:
        g = self.grid
        return float(np.sum(self.weights * self.k2 * np.abs(a_hat) ** 2) * g.cell_volume / g.N**g.d)


@lru_cache(maxsize=32)
def spectral(grid) -> Spectral:
    return Spectral(grid)
