"""The coupled Klein-Gordon system with quadratic null-form interactions.

    -Box v_i + m^2 v_i = N_i^{jk} Q0(v_j, v_k) + M_i^{jk ab} Q_ab(v_j, v_k)

with ``Box = -d_t^2 + Laplacian``, ``Q0(u, w) = -u_t w_t + grad u . grad w`` and
``Q_ab(u, w) = d_a u d_b w - d_b u d_a w``. Spacetime indices run over
0 (time), 1, 2, 3; species indices are 0-based.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .spectral import GridSpec, GridMismatchError

T0 = 2.0

__all__ = [
    "T0",
    "CouplingTensors",
    "FieldState",
    "BumpSpec",
    "BoxTooSmallError",
    "bump_profile",
    "make_initial_data",
    "q0",
    "qab",
    "null_source",
    "eval_Q0",
    "eval_Qab",
    "assemble_rhs",
    "state_derivatives",
]


@dataclass
class CouplingTensors:
    """Sparse coefficients ``N_i^{jk}`` and ``M_i^{jk alpha beta}``.

    ``M`` is stored canonically with ``alpha < beta``: an entry given with
    ``alpha > beta`` is folded onto ``(beta, alpha)`` with a sign flip, and
    diagonal entries are dropped since ``Q_aa = 0``.
    """

    n_species: int
    N: dict[tuple[int, int, int], float] = field(default_factory=dict)
    M: dict[tuple[int, int, int, int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_species < 0:
            raise ValueError("n_species must be >= 0")
        n0 = self.n_species
        clean_n = {}
        for key, val in self.N.items():
            i, j, k = (int(q) for q in key)
            if not all(0 <= q < n0 for q in (i, j, k)):
                raise ValueError(f"N index {key} out of range for {n0} species")
            if val != 0.0:
                clean_n[(i, j, k)] = clean_n.get((i, j, k), 0.0) + float(val)
        clean_m = {}
        for key, val in self.M.items():
            i, j, k, a, b = (int(q) for q in key)
            if not all(0 <= q < n0 for q in (i, j, k)):
                raise ValueError(f"M index {key} out of range for {n0} species")
            if not (0 <= a <= 3 and 0 <= b <= 3):
                raise ValueError(f"M spacetime index {key} out of range")
            if a == b or val == 0.0:
                continue
            if a > b:
                a, b, val = b, a, -val
            clean_m[(i, j, k, a, b)] = clean_m.get((i, j, k, a, b), 0.0) + float(val)
        self.N = clean_n
        self.M = clean_m

    @classmethod
    def zero(cls, n_species: int) -> "CouplingTensors":
        return cls(n_species)

    @classmethod
    def default(cls) -> "CouplingTensors":
        """Two species, unit coefficients, both null-form families present."""
        return cls(
            2,
            N={(0, 1, 1): 1.0, (1, 0, 0): 1.0, (1, 0, 1): 1.0},
            M={(0, 0, 1, 0, 1): 1.0, (1, 1, 0, 2, 3): 1.0, (1, 0, 1, 0, 3): 0.5},
        )

    def is_zero(self) -> bool:
        return not self.N and not self.M

    def only_N(self) -> "CouplingTensors":
        return CouplingTensors(self.n_species, N=dict(self.N))

    def only_M(self) -> "CouplingTensors":
        return CouplingTensors(self.n_species, M=dict(self.M))

    def scaled(self, factor: float) -> "CouplingTensors":
        return CouplingTensors(
            self.n_species,
            N={k: factor * v for k, v in self.N.items()},
            M={k: factor * v for k, v in self.M.items()},
        )

    def uses_time_derivative(self) -> bool:
        """True when the source depends on ``d_t v`` (Q0 or any M with index 0)."""
        return bool(self.N) or any(key[3] == 0 for key in self.M)

    def entries(self) -> list[str]:
        """Config-file lines ``N i j k value`` / ``M i j k alpha beta value``."""
        lines = [f"N {i} {j} {k} {v!r}" for (i, j, k), v in sorted(self.N.items())]
        lines += [f"M {i} {j} {k} {a} {b} {v!r}" for (i, j, k, a, b), v in sorted(self.M.items())]
        return lines


@dataclass
class FieldState:
    """Values ``v`` and time derivatives ``w`` of every species at time ``t``.

    ``v`` and ``w`` have shape ``(n_species, n, n, n)``.
    """

    grid: GridSpec
    t: float
    m: float
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.v.ndim != 4 or self.v.shape != self.w.shape:
            raise GridMismatchError(f"v {self.v.shape} and w {self.w.shape} must both be (N0, n, n, n)")
        self.grid.check(self.v)
        if not 0.0 <= self.m <= 1.0:
            raise ValueError(f"mass must lie in [0, 1], got {self.m}")

    @property
    def n_species(self) -> int:
        return self.v.shape[0]

    def replace(self, **changes) -> "FieldState":
        return dataclasses.replace(self, **changes)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.w)))

    @classmethod
    def zeros(cls, grid: GridSpec, n_species: int, m: float = 0.0, t: float = T0) -> "FieldState":
        z = np.zeros((n_species,) + grid.shape)
        return cls(grid, t, m, z, z.copy())


def bump_profile(r: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - r^2))`` inside the unit ball, zero outside; equals 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class BumpSpec:
    """Per-species amplitudes of ``v_i(t0) = eps0_i chi`` and ``d_t v_i(t0) = eps1_i chi``."""

    eps0: tuple[float, ...]
    eps1: tuple[float, ...]

    def __post_init__(self):
        if len(self.eps0) != len(self.eps1):
            raise ValueError("eps0 and eps1 need one entry per species")
        for e in (*self.eps0, *self.eps1):
            if abs(e) > 0.1:
                raise ValueError(f"amplitude {e} outside the small-data range |eps| <= 0.1")

    @classmethod
    def uniform(cls, n_species: int, eps: float, eps1: float | None = None) -> "BumpSpec":
        eps1 = eps if eps1 is None else eps1
        return cls((eps,) * n_species, (eps1,) * n_species)

    @property
    def n_species(self) -> int:
        return len(self.eps0)


class BoxTooSmallError(ValueError):
    def __init__(self, box_length: float, minimal: float, t_end: float):
        super().__init__(
            f"box_length {box_length:g} too small for t_end {t_end:g}; need at least {minimal:.6g}"
        )
        self.minimal = minimal


def check_box(grid: GridSpec, t_end: float, t0: float = T0) -> None:
    """Reject boxes in which unit-ball data could wrap before ``t_end``."""
    need = 1.0 + (t_end - t0) + 2.0 * grid.dx
    if 0.5 * grid.box_length < need - 1e-12:
        raise BoxTooSmallError(grid.box_length, GridSpec.minimal_box_length(grid.n, t_end, t0), t_end)


def make_initial_data(
    grid: GridSpec,
    spec: BumpSpec,
    m: float,
    t_end: float | None = None,
    t0: float = T0,
    filtered: bool = False,
) -> FieldState:
    """Bump data at ``t0``.

    With ``filtered=True`` the sampled data are projected onto the two-thirds
    band, which keeps every later product exactly dealiased (at the price of
    sub-1e-3 relative ripples outside the unit ball).
    """
    if t_end is not None:
        check_box(grid, t_end, t0)
    chi = bump_profile(grid.radius)
    v = np.array([e * chi for e in spec.eps0]).reshape((spec.n_species,) + grid.shape)
    w = np.array([e * chi for e in spec.eps1]).reshape((spec.n_species,) + grid.shape)
    if filtered and spec.n_species:
        v = spectral.dealias(grid, v)
        w = spectral.dealias(grid, w)
    return FieldState(grid, t0, m, v, w)


# -- pointwise null forms --------------------------------------------------
# ``du`` holds (d_t u, d_1 u, d_2 u, d_3 u) along its first axis.

def q0(du: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return -du[0] * dw[0] + du[1] * dw[1] + du[2] * dw[2] + du[3] * dw[3]


def qab(du: np.ndarray, dw: np.ndarray, a: int, b: int) -> np.ndarray:
    if a == b:
        return np.zeros_like(du[0])
    return du[a] * dw[b] - du[b] * dw[a]


def null_source(couplings: CouplingTensors, dv: np.ndarray) -> np.ndarray:
    """Pointwise ``N Q0 + M Q`` for every species; ``dv`` has shape (N0, 4, ...)."""
    out = np.zeros((couplings.n_species,) + dv.shape[2:])
    for (i, j, k), c in couplings.N.items():
        out[i] += c * q0(dv[j], dv[k])
    for (i, j, k, a, b), c in couplings.M.items():
        out[i] += c * qab(dv[j], dv[k], a, b)
    return out


def _spacetime_gradient(grid: GridSpec, u: np.ndarray, u_t: np.ndarray) -> np.ndarray:
    grid.check(u)
    grid.check(u_t)
    return np.concatenate([u_t[None], spectral.gradient(grid, u)], axis=0)


def eval_Q0(grid: GridSpec, u, u_t, w, w_t) -> np.ndarray:
    """Dealiased ``Q0(u, w)`` from values and time derivatives."""
    du = _spacetime_gradient(grid, u, u_t)
    dw = _spacetime_gradient(grid, w, w_t)
    return spectral.dealias(grid, q0(du, dw))


def eval_Qab(grid: GridSpec, u, u_t, w, w_t, alpha: int, beta: int) -> np.ndarray:
    """Dealiased ``Q_{alpha beta}(u, w)``; ``d_0`` is read from ``u_t``, ``w_t``."""
    if not (0 <= alpha <= 3 and 0 <= beta <= 3):
        raise ValueError("spacetime indices must lie in 0..3")
    du = _spacetime_gradient(grid, u, u_t)
    dw = _spacetime_gradient(grid, w, w_t)
    if alpha == beta:
        return np.zeros(grid.shape)
    return spectral.dealias(grid, qab(du, dw, alpha, beta))


def state_derivatives(state: FieldState) -> np.ndarray:
    """``(N0, 4, n, n, n)`` array of ``(w, d_1 v, d_2 v, d_3 v)`` per species."""
    grads = spectral.gradient(state.grid, state.v) if state.n_species else np.zeros((0, 3) + state.grid.shape)
    return np.concatenate([state.w[:, None], grads], axis=1)


def _check_species(state: FieldState, couplings: CouplingTensors) -> None:
    if state.n_species != couplings.n_species:
        raise ValueError(f"state has {state.n_species} species, couplings expect {couplings.n_species}")


def assemble_rhs(state: FieldState, couplings: CouplingTensors, dv: np.ndarray | None = None) -> np.ndarray:
    """Dealiased right-hand side ``F_i`` for every species, shape (N0, n, n, n).

    Spatial derivatives are computed once per species; pass ``dv`` from
    :func:`state_derivatives` to reuse them.
    """
    _check_species(state, couplings)
    if couplings.is_zero():
        return np.zeros_like(state.v)
    if dv is None:
        dv = state_derivatives(state)
    return spectral.dealias(state.grid, null_source(couplings, dv))
