"""Nonlinear transformation ``V = v + c N vv`` and its linear decomposition.

With ``Q0(u, w) = d^a u d_a w`` the Leibniz rule gives
``-Box(v_j v_k) = v_k(-Box v_j) + v_j(-Box v_k) - 2 Q0(v_j, v_k)``, so the
quadratic ``Q0`` source cancels exactly for ``c = 1/2``:

    -Box V_i + m^2 V_i = M Q(v, v) - c m^2 N v v + c N^{jk}(v_k F_j + v_j F_k)

where ``F`` is the original right-hand side. ``V`` is then split into pieces
driven by the cubic source (``c``), the ``m^2`` source (``m``) and the
divergence-form potentials ``V_n^gamma`` whose divergence reproduces the
``M Q`` part, plus a homogeneous correction ``h`` that absorbs the data
``d_t (d_gamma V_n^gamma)(t0) = S^0(t0)`` picked up by the time potential.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .diagnostics import SnapshotBuffer, BufferCoverageError, hermite, l2_norm
from .integrator import propagate_linear
from .system import CouplingTensors, FieldState, assemble_rhs, state_derivatives

__all__ = [
    "TRANSFORM_COEFFICIENT",
    "PIECES",
    "AuxSources",
    "AuxiliaryState",
    "transform_V",
    "aux_sources",
    "init_auxiliary",
    "coevolve_step",
    "decomposition_residual",
    "kg_residual",
    "DecompositionTracker",
]

TRANSFORM_COEFFICIENT = 0.5
PIECES = ("c", "m", "n0", "n1", "n2", "n3", "h")


def _pair_products(grid, couplings: CouplingTensors, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_jk N_i^{jk} P(a_j b_k)`` per species."""
    out = np.zeros((couplings.n_species,) + grid.shape)
    for (i, j, k), c in couplings.N.items():
        out[i] += c * a[j] * b[k]
    return spectral.dealias(grid, out) if couplings.N else out


def transform_V(state: FieldState, couplings: CouplingTensors, coefficient: float = TRANSFORM_COEFFICIENT):
    """``(V, d_t V)`` for every species."""
    if not couplings.N:
        return state.v.copy(), state.w.copy()
    g = state.grid
    vv = _pair_products(g, couplings, state.v, state.v)
    wv = _pair_products(g, couplings, state.w, state.v) + _pair_products(g, couplings, state.v, state.w)
    return state.v + coefficient * vv, state.w + coefficient * wv


@dataclass
class AuxSources:
    cubic: np.ndarray  # (N0, n, n, n)
    mass: np.ndarray  # (N0, n, n, n)
    div: np.ndarray  # (N0, 4, n, n, n), index gamma
    null_M: np.ndarray  # (N0, n, n, n): dealiased M Q(v, v)
    F: np.ndarray  # original right-hand side

    def total(self) -> np.ndarray:
        """Right-hand side of the transformed equation."""
        return self.null_M + self.mass + self.cubic

    def stacked(self) -> np.ndarray:
        """Sources in :data:`PIECES` order."""
        zero = np.zeros_like(self.cubic)
        return np.stack([self.cubic, self.mass, *np.moveaxis(self.div, 1, 0), zero])


def aux_sources(
    state: FieldState, couplings: CouplingTensors, coefficient: float = TRANSFORM_COEFFICIENT
) -> AuxSources:
    g = state.grid
    dv = state_derivatives(state)
    F = assemble_rhs(state, couplings, dv)
    null_M = assemble_rhs(state, couplings.only_M(), dv)
    if couplings.N:
        cubic = coefficient * (
            _pair_products(g, couplings, state.v, F) + _pair_products(g, couplings, F, state.v)
        )
        mass = -coefficient * state.m**2 * _pair_products(g, couplings, state.v, state.v)
    else:
        cubic = np.zeros_like(state.v)
        mass = np.zeros_like(state.v)
    div = np.zeros((state.n_species, 4) + g.shape)
    for (i, j, k, a, b), c in couplings.M.items():
        # S^gamma = M^{jk gamma beta} v_j d_beta v_k - M^{jk alpha gamma} v_j d_alpha v_k
        div[i, a] += c * state.v[j] * dv[k, b]
        div[i, b] -= c * state.v[j] * dv[k, a]
    if couplings.M:
        div = spectral.dealias(g, div)
    return AuxSources(cubic, mass, div, null_M, F)


@dataclass
class AuxiliaryState:
    """Values ``v`` and rates ``w`` of every piece, shape (7, N0, n, n, n)."""

    grid: spectral.GridSpec
    t: float
    m: float
    v: np.ndarray
    w: np.ndarray
    coefficient: float = TRANSFORM_COEFFICIENT

    def piece(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        k = PIECES.index(name)
        return self.v[k], self.w[k]


def init_auxiliary(
    state: FieldState, couplings: CouplingTensors, coefficient: float = TRANSFORM_COEFFICIENT
) -> AuxiliaryState:
    """Data at ``t0``: ``V_c`` takes ``(V, d_t V)``, every other piece starts at rest
    except ``h``, whose rate is ``-S^0(t0)``."""
    V, Vt = transform_V(state, couplings, coefficient)
    v = np.zeros((len(PIECES),) + state.v.shape)
    w = np.zeros_like(v)
    v[0], w[0] = V, Vt
    if couplings.M:
        w[PIECES.index("h")] = -aux_sources(state, couplings, coefficient).div[:, 0]
    return AuxiliaryState(state.grid, state.t, state.m, v, w, coefficient)


def _midpoint_state(buffer: SnapshotBuffer, t_a: float, t_b: float) -> FieldState:
    ja, jb = buffer.jet(t_a), buffer.jet(t_b)
    tm = 0.5 * (t_a + t_b)
    v = hermite(tm, t_a, t_b, ja.u[0], jb.u[0], ja.u[1], jb.u[1])
    w = hermite(tm, t_a, t_b, ja.u[1], jb.u[1], ja.u[2], jb.u[2])
    return ja.state.replace(t=tm, v=v, w=w)


def coevolve_step(
    aux: AuxiliaryState, v_buffer: SnapshotBuffer, couplings: CouplingTensors, dt: float | None = None
) -> AuxiliaryState:
    """Advance every piece by ``dt`` (default: the buffer spacing).

    Half a linear step, a kick by the sources at the Hermite-interpolated
    midpoint of the ``v`` trajectory, then another half step.
    """
    dt = v_buffer.save_dt if dt is None else dt
    t_a, t_b = aux.t, aux.t + dt
    try:
        v_buffer.at(t_a)
        v_buffer.at(t_b)
    except BufferCoverageError as exc:
        raise BufferCoverageError(f"buffer gap: need snapshots at {t_a:g} and {t_b:g}") from exc
    if v_buffer.couplings is None and not couplings.is_zero():
        raise ValueError("buffer needs couplings to reconstruct d_t w")
    mid = _midpoint_state(v_buffer, t_a, t_b)
    src = aux_sources(mid, couplings, aux.coefficient).stacked()
    g = aux.grid
    v, w = propagate_linear(g, aux.m, aux.v, aux.w, 0.5 * dt)
    w = w + dt * src
    v, w = propagate_linear(g, aux.m, v, w, 0.5 * dt)
    return AuxiliaryState(g, t_b, aux.m, v, w, aux.coefficient)


def reconstruct_V(aux: AuxiliaryState) -> np.ndarray:
    """``V_c + V_m + h + d_t V_n^0 + sum_a d_a V_n^a``."""
    g = aux.grid
    out = aux.piece("c")[0] + aux.piece("m")[0] + aux.piece("h")[0] + aux.piece("n0")[1]
    n_sp = aux.v.shape[1]
    if n_sp:
        for a in (1, 2, 3):
            out = out + spectral.spatial_derivative(g, aux.piece(f"n{a}")[0], a)
    return out


def decomposition_residual(aux: AuxiliaryState, state: FieldState, couplings: CouplingTensors) -> float:
    """Largest per-species ``||V - reconstruction|| / max(||V||, 1e-14)``."""
    if abs(aux.t - state.t) > 1e-9 or aux.m != state.m or aux.grid != state.grid:
        raise ValueError("auxiliary and primary states disagree on t, m or grid")
    V, _ = transform_V(state, couplings, aux.coefficient)
    diff = V - reconstruct_V(aux)
    g = state.grid
    worst = 0.0
    for i in range(state.n_species):
        worst = max(worst, l2_norm(g, diff[i]) / max(l2_norm(g, V[i]), 1e-14))
    return worst


def kg_residual(
    buffer: SnapshotBuffer,
    t: float,
    i: int,
    couplings: CouplingTensors,
    transformed: bool = True,
    coefficient: float = TRANSFORM_COEFFICIENT,
    scheme: str = "centered",
) -> float:
    """Relative L2 defect of the transformed equation for species ``i`` at ``t``.

    ``(d_t^2 - Lap + m^2) V`` uses a centred second difference over the
    buffer spacing; the defect is normalised by ``||F_i||``, the size of the
    original quadratic source, or by ``||(Lap - m^2) V_i||`` when that source
    vanishes. With ``transformed=False`` the check is run on
    ``v`` instead of ``V``.

    ``scheme="exact"`` swaps the difference quotient for
    ``(V(t+h) - 2 cos(h xi) V(t) + V(t-h)) / h^2`` in Fourier space, which
    annihilates free Klein-Gordon waves exactly, so only the forced part
    carries an ``O(h^2)`` error.
    """
    if scheme not in ("centered", "exact"):
        raise ValueError(f"unknown scheme {scheme!r}")
    h = buffer.save_dt
    try:
        states = [buffer.at(t - h), buffer.at(t), buffer.at(t + h)]
    except BufferCoverageError as exc:
        raise BufferCoverageError(f"kg_residual needs snapshots at {t - h:g}, {t:g}, {t + h:g}") from exc
    if transformed:
        Vs = [transform_V(s, couplings, coefficient)[0][i] for s in states]
    else:
        Vs = [s.v[i] for s in states]
    mid = states[1]
    g = mid.grid
    if scheme == "centered":
        lhs = (Vs[2] - 2.0 * Vs[1] + Vs[0]) / h**2 - spectral.laplacian(g, Vs[1]) + mid.m**2 * Vs[1]
    else:
        cos_h = np.cos(h * spectral.dispersion_multiplier(g, mid.m))
        lhs = (Vs[2] + Vs[0]) / h**2 - spectral.irfft(2.0 * cos_h * spectral.rfft(Vs[1]), g.n) / h**2
    src = aux_sources(mid, couplings, coefficient)
    rhs = src.total()[i]
    scale = l2_norm(g, src.F[i])
    if scale <= 1e-14 * l2_norm(g, Vs[1]):
        # no quadratic source to compare against: fall back to the linear operator
        scale = max(l2_norm(g, spectral.laplacian(g, Vs[1]) - mid.m**2 * Vs[1]), 1e-300)
    return l2_norm(g, lhs - rhs) / scale


class DecompositionTracker:
    """Observer that co-evolves the auxiliary pieces alongside a run.

    Must be registered with the same save interval as the run; records
    ``(t, decomposition_residual)`` and the L2 norm of ``V_m`` per species.
    """

    def __init__(self, couplings: CouplingTensors, save_dt: float, coefficient: float = TRANSFORM_COEFFICIENT):
        self.couplings = couplings
        self.buffer = SnapshotBuffer(save_dt, couplings, window=2 * save_dt)
        self.coefficient = coefficient
        self.aux: AuxiliaryState | None = None
        self.history: list[tuple[float, float]] = []
        self.vm_norms: list[tuple[float, list[float]]] = []

    def __call__(self, state: FieldState) -> None:
        self.buffer.append(state)
        if self.aux is None:
            self.aux = init_auxiliary(state, self.couplings, self.coefficient)
        else:
            self.aux = coevolve_step(self.aux, self.buffer, self.couplings)
            self.aux.t = state.t
        self.history.append((state.t, decomposition_residual(self.aux, state, self.couplings)))
        vm = self.aux.piece("m")[0]
        self.vm_norms.append((state.t, [l2_norm(state.grid, vm[i]) for i in range(vm.shape[0])]))
