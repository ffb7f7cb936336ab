"""Time stepping.

The spectral path splits each step into the exact Fourier-space Klein-Gordon
flow and a short pointwise kick by the null-form source (Strang splitting).
``oracle_rk4_step`` is an independent method-of-lines reference using
fourth-order finite differences; it deliberately shares nothing with the
spectral path except the grid layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from . import spectral
from .spectral import GridSpec
from .system import (
    T0,
    CouplingTensors,
    FieldState,
    check_box,
    null_source,
    state_derivatives,
)

__all__ = [
    "StepParams",
    "NumericalFailure",
    "propagate_linear",
    "linear_propagator",
    "nonlinear_kick",
    "strang_step",
    "oracle_rk4_step",
    "evolve",
]

_SERIES_CUTOFF = 1e-4


class NumericalFailure(RuntimeError):
    """A step produced non-finite or runaway values."""

    def __init__(self, message: str, t: float, max_w: float):
        super().__init__(f"{message} at t={t:.6g} (max|w|={max_w:.3g})")
        self.t = t
        self.max_w = max_w


@dataclass(frozen=True)
class StepParams:
    dt: float
    n_kick_substeps: int = 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_kick_substeps < 1:
            raise ValueError("n_kick_substeps must be >= 1")

    def check_grid(self, grid: GridSpec) -> None:
        if self.dt > grid.dx * (1 + 1e-12):
            raise ValueError(f"dt={self.dt:g} exceeds dx={grid.dx:g}")


@lru_cache(maxsize=16)
def _propagator_factors(grid: GridSpec, m: float, dt: float):
    xi = spectral.dispersion_multiplier(grid, m)
    phase = xi * dt
    cos = np.cos(phase)
    small = np.abs(phase) < _SERIES_CUTOFF
    safe_xi = np.where(small, 1.0, xi)
    # sin(dt xi)/xi, with its Taylor series near the removable singularity
    sinc = np.where(small, dt * (1.0 - phase**2 / 6.0), np.sin(phase) / safe_xi)
    msin = -xi * np.sin(phase)
    return cos, sinc, msin


def propagate_linear(grid: GridSpec, m: float, v: np.ndarray, w: np.ndarray, dt: float):
    """Exact solution of ``-Box u + m^2 u = 0`` over ``dt`` for any stack of fields."""
    if v.size == 0:
        return v.copy(), w.copy()
    cos, sinc, msin = _propagator_factors(grid, float(m), float(dt))
    vh = spectral.rfft(v)
    wh = spectral.rfft(w)
    v_new = spectral.irfft(cos * vh + sinc * wh, grid.n)
    w_new = spectral.irfft(msin * vh + cos * wh, grid.n)
    return v_new, w_new


def linear_propagator(state: FieldState, dt: float) -> FieldState:
    v, w = propagate_linear(state.grid, state.m, state.v, state.w, dt)
    return state.replace(t=state.t + dt, v=v, w=w)


def _source(state: FieldState, couplings: CouplingTensors, dv: np.ndarray, dealias: bool) -> np.ndarray:
    f = null_source(couplings, dv)
    return spectral.dealias(state.grid, f) if dealias else f


def nonlinear_kick(
    state: FieldState,
    couplings: CouplingTensors,
    dt: float,
    substeps: int = 2,
    dealias: bool = True,
) -> FieldState:
    """Advance ``w`` by ``dw/dt = F(v, w, grad v)`` with ``v`` frozen (RK2 midpoint)."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if couplings.n_species != state.n_species:
        raise ValueError("couplings and state disagree on the number of species")
    if couplings.is_zero():
        return state.replace()
    dv = state_derivatives(state)
    if not couplings.uses_time_derivative():
        w = state.w + dt * _source(state, couplings, dv, dealias)
    else:
        w = state.w.copy()
        h = dt / substeps
        for _ in range(substeps):
            dv[:, 0] = w
            k1 = _source(state, couplings, dv, dealias)
            dv[:, 0] = w + 0.5 * h * k1
            k2 = _source(state, couplings, dv, dealias)
            w = w + h * k2
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("nonlinear kick produced non-finite values", state.t, float(np.nanmax(np.abs(w))))
    return state.replace(w=w)


def strang_step(state: FieldState, couplings: CouplingTensors, params: StepParams) -> FieldState:
    dt = params.dt
    half = linear_propagator(state, 0.5 * dt)
    kicked = nonlinear_kick(half, couplings, dt, params.n_kick_substeps)
    out = linear_propagator(kicked, 0.5 * dt)
    out.t = state.t + dt
    return out


# -- finite-difference reference --------------------------------------------

def _fd_d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (
        -np.roll(f, -2, axis) + 8.0 * np.roll(f, -1, axis) - 8.0 * np.roll(f, 1, axis) + np.roll(f, 2, axis)
    ) / (12.0 * h)


def _fd_d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (
        -np.roll(f, -2, axis) + 16.0 * np.roll(f, -1, axis) - 30.0 * f + 16.0 * np.roll(f, 1, axis) - np.roll(f, 2, axis)
    ) / (12.0 * h * h)


def _fd_rhs(v: np.ndarray, w: np.ndarray, m: float, h: float, couplings: CouplingTensors):
    n0 = v.shape[0]
    lap = np.zeros_like(v)
    grads = np.zeros((n0, 3) + v.shape[1:])
    for i in range(n0):
        for a in range(3):
            lap[i] += _fd_d2(v[i], a, h)
            grads[i, a] = _fd_d1(v[i], a, h)
    acc = lap - m * m * v
    for (i, j, k), c in couplings.N.items():
        acc[i] += c * (-w[j] * w[k] + np.sum(grads[j] * grads[k], axis=0))
    for (i, j, k, a, b), c in couplings.M.items():
        da_j = w[j] if a == 0 else grads[j, a - 1]
        db_j = w[j] if b == 0 else grads[j, b - 1]
        da_k = w[k] if a == 0 else grads[k, a - 1]
        db_k = w[k] if b == 0 else grads[k, b - 1]
        acc[i] += c * (da_j * db_k - db_j * da_k)
    return w, acc


def oracle_rk4_step(state: FieldState, couplings: CouplingTensors, dt: float) -> FieldState:
    """Classical RK4 on ``v' = w, w' = Lap v - m^2 v + F`` with 4th-order periodic differences."""
    h = state.grid.dx
    if dt > 0.5 * h * (1 + 1e-12):
        raise ValueError(f"RK4 oracle needs dt <= dx/2 (dt={dt:g}, dx={h:g})")
    m = state.m
    v0, w0 = state.v, state.w
    k1v, k1w = _fd_rhs(v0, w0, m, h, couplings)
    k2v, k2w = _fd_rhs(v0 + 0.5 * dt * k1v, w0 + 0.5 * dt * k1w, m, h, couplings)
    k3v, k3w = _fd_rhs(v0 + 0.5 * dt * k2v, w0 + 0.5 * dt * k2w, m, h, couplings)
    k4v, k4w = _fd_rhs(v0 + dt * k3v, w0 + dt * k3w, m, h, couplings)
    v = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    w = w0 + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    before = max(float(np.max(np.abs(w0), initial=0.0)), float(np.max(np.abs(v0), initial=0.0)), 1e-300)
    finite = np.all(np.isfinite(w)) and np.all(np.isfinite(v))
    after = max(float(np.max(np.abs(w), initial=0.0)), float(np.max(np.abs(v), initial=0.0))) if finite else math.inf
    if not np.isfinite(after) or after > 1e6 * before:
        raise NumericalFailure("RK4 oracle unstable", state.t + dt, after)
    return state.replace(t=state.t + dt, v=v, w=w)


# -- driver -----------------------------------------------------------------

Observer = Callable[[FieldState], None]


def _schedule(t_start: float, t_end: float, dt: float, save_dt: float | None):
    """Return (n_saves, steps_per_save, effective dt)."""
    span = t_end - t_start
    if save_dt is None:
        save_dt = span
    n_saves = round(span / save_dt)
    if n_saves < 1 or abs(n_saves * save_dt - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"t_end - t0 = {span:g} is not a multiple of save_dt = {save_dt:g}")
    per_save = max(1, math.ceil(save_dt / dt - 1e-9))
    return n_saves, per_save, save_dt / per_save


def evolve(
    initial: FieldState,
    couplings: CouplingTensors,
    params: StepParams,
    t_end: float,
    observers: Iterable[Observer] = (),
    save_dt: float | None = None,
    method: str = "strang",
    check_light_cone: bool = True,
) -> FieldState:
    """Step from ``initial.t`` to ``t_end``, calling observers every ``save_dt``.

    Observers see the initial state and every saved state. The effective step
    is ``dt`` shrunk so that an integer number of steps fills each save
    interval. On failure observers keep what they recorded and the
    :class:`NumericalFailure` propagates.
    """
    observers = list(observers)
    if t_end < initial.t - 1e-12:
        raise ValueError("t_end precedes the initial time")
    if check_light_cone:
        check_box(initial.grid, t_end, T0)
    for obs in observers:
        obs(initial)
    if abs(t_end - initial.t) <= 1e-12:
        return initial
    n_saves, per_save, dt = _schedule(initial.t, t_end, params.dt, save_dt)
    if method == "strang":
        sub = StepParams(dt, params.n_kick_substeps)
        step = lambda s: strang_step(s, couplings, sub)  # noqa: E731
    elif method == "rk4":
        step = lambda s: oracle_rk4_step(s, couplings, dt)  # noqa: E731
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = max(float(np.max(np.abs(initial.w), initial=0.0)), float(np.max(np.abs(initial.v), initial=0.0)), 1e-300)
    t0 = initial.t
    state = initial
    count = 0
    for _ in range(n_saves):
        for _ in range(per_save):
            state = step(state)
            count += 1
            state.t = t0 + count * dt
            max_w = float(np.max(np.abs(state.w), initial=0.0))
            if not state.is_finite():
                raise NumericalFailure("non-finite field", state.t, max_w)
            if max_w > 1e6 * scale:
                raise NumericalFailure("runaway growth", state.t, max_w)
        for obs in observers:
            obs(state)
    return state
