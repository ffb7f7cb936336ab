"""Periodic-grid Fourier machinery.

Fields live on a cubic periodic box ``[-L/2, L/2)^3`` sampled at ``n`` points per
axis, stored as real ``(n, n, n)`` arrays (row-major, axis order x1, x2, x3).
Spectral work uses the real-to-complex layout of :func:`scipy.fft.rfftn`
internally; :func:`forward_dft` / :func:`inverse_dft` expose the full complex
layout with the convention ``f(x) = sum_k c(k) exp(i k.x)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

__all__ = [
    "GridSpec",
    "GridMismatchError",
    "forward_dft",
    "inverse_dft",
    "rfft",
    "irfft",
    "spatial_derivative",
    "gradient",
    "laplacian",
    "dealias",
    "dispersion_multiplier",
    "set_workers",
    "get_workers",
]

_WORKERS = 1


def set_workers(n: int) -> None:
    """Cap the number of threads used by every FFT in this package."""
    global _WORKERS
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _WORKERS = int(n)


def get_workers() -> int:
    return _WORKERS


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Cubic periodic grid with ``n`` points per axis and side ``box_length``."""

    n: int
    box_length: float

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    @property
    def dx(self) -> float:
        return self.box_length / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.dx**3

    @cached_property
    def axis(self) -> np.ndarray:
        """1-D coordinates; index ``n // 2`` is the origin."""
        return -0.5 * self.box_length + self.dx * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        a = self.axis
        return (a[:, None, None], a[None, :, None], a[None, None, :])

    @cached_property
    def radius(self) -> np.ndarray:
        x1, x2, x3 = self.coords
        return np.sqrt(x1**2 + x2**2 + x3**2)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Angular wavenumbers in rfft layout, broadcastable to ``rshape``."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        kr = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)
        return (k[:, None, None], k[None, :, None], kr[None, None, :])

    @cached_property
    def derivative_wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Nyquist zeroed: an odd derivative of a real field has no real Nyquist part.
        out = []
        for k in self.wavenumbers:
            k = k.copy()
            k[np.isclose(np.abs(k), np.pi / self.dx)] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return k1**2 + k2**2 + k3**2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep integer modes with ``|j| < n/3`` on every axis."""
        j = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n))
        jr = np.fft.rfftfreq(self.n, d=1.0 / self.n)
        keep = j < self.n / 3
        keep_r = jr < self.n / 3
        return keep[:, None, None] & keep[None, :, None] & keep_r[None, None, :]

    @cached_property
    def _shift(self) -> np.ndarray:
        # phase for the origin offset x_0 = -L/2: exp(-i k x_0) = (-1)^j per axis
        j = np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)
        s = (-1.0) ** np.abs(j)
        return s[:, None, None] * s[None, :, None] * s[None, None, :]

    def check(self, f: np.ndarray) -> None:
        if f.shape[-3:] != self.shape:
            raise GridMismatchError(f"field shape {f.shape} does not match grid {self.shape}")

    def light_cone_horizon(self, t0: float = 2.0) -> float:
        """Latest time for which unit-ball data cannot wrap around the box."""
        return t0 + 0.5 * self.box_length - 1.0 - 2.0 * self.dx

    @staticmethod
    def minimal_box_length(n: int, t_end: float, t0: float = 2.0) -> float:
        """Smallest L with ``L/2 >= 1 + (t_end - t0) + 2 L/n``."""
        return 2.0 * (1.0 + (t_end - t0)) / (1.0 - 4.0 / n)


def _check_finite(f: np.ndarray) -> None:
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")


def rfft(f: np.ndarray) -> np.ndarray:
    return scipy.fft.rfftn(f, axes=(-3, -2, -1), workers=_WORKERS)


def irfft(fh: np.ndarray, n: int) -> np.ndarray:
    return scipy.fft.irfftn(fh, s=(n, n, n), axes=(-3, -2, -1), workers=_WORKERS)


def forward_dft(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Full complex coefficients ``c`` with ``f(x) = sum c(k) exp(i k.x)``.

    Layout follows :func:`numpy.fft.fftfreq` on every axis.
    """
    grid.check(f)
    _check_finite(f)
    c = scipy.fft.fftn(f, axes=(-3, -2, -1), workers=_WORKERS) / grid.n**3
    return c * grid._shift


def inverse_dft(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    grid.check(c)
    f = scipy.fft.ifftn(c * grid._shift, axes=(-3, -2, -1), workers=_WORKERS) * grid.n**3
    return f.real


def spatial_derivative(grid: GridSpec, f: np.ndarray, axis: int) -> np.ndarray:
    """Spectral ``d f / d x_axis`` with ``axis`` in {1, 2, 3}."""
    if axis not in (1, 2, 3):
        raise ValueError(f"spatial axis must be 1, 2 or 3, got {axis}")
    grid.check(f)
    k = grid.derivative_wavenumbers[axis - 1]
    return irfft(1j * k * rfft(f), grid.n)


def gradient(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """All three spectral derivatives; one forward transform.

    Extra leading dimensions are carried through; the derivative index is
    inserted just before the spatial axes.
    """
    grid.check(f)
    fh = rfft(f)
    return np.stack([irfft(1j * k * fh, grid.n) for k in grid.derivative_wavenumbers], axis=-4)


def laplacian(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    grid.check(f)
    return irfft(-grid.k_squared * rfft(f), grid.n)


def dealias(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Zero every mode outside the two-thirds band."""
    grid.check(f)
    return irfft(rfft(f) * grid.dealias_mask, grid.n)


def dispersion_multiplier(grid: GridSpec, m: float) -> np.ndarray:
    """``sqrt(|k|^2 + m^2)`` on the rfft layout."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"mass must lie in [0, 1], got {m}")
    return np.sqrt(grid.k_squared + m * m)
