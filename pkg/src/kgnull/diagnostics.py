"""Observables on evolved states: energies, norms, vector fields, decay fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import spectral
from .spectral import GridSpec
from .system import CouplingTensors, FieldState, assemble_rhs

__all__ = [
    "flat_energy",
    "l2_norm",
    "sup_norm",
    "support_radius",
    "acceleration",
    "DiagnosticsRecord",
    "record_state",
    "SnapshotBuffer",
    "BufferCoverageError",
    "state_jet",
    "apply_jet",
    "apply_vector_field",
    "hermite",
    "hyperboloid_time",
    "hyperboloidal_energy",
    "HyperboloidAccumulator",
    "DecayFit",
    "decay_fit",
    "InequalityReport",
    "energy_inequality_check",
]


# -- flat-slice quantities --------------------------------------------------


def field_energy(grid: GridSpec, m: float, u: np.ndarray, u_t: np.ndarray) -> float:
    """``int (u_t^2 + |grad u|^2 + m^2 u^2) dx``.

    The gradient term is taken as ``-int u Lap u``, which keeps the full
    ``|k|^2`` weight on the Nyquist planes. That is the quadratic form the
    exact propagator conserves; the pointwise ``|grad u|^2`` drops those
    planes and drifts on under-resolved data.
    """
    dens = u_t**2 + m * m * u**2 - u * spectral.laplacian(grid, u)
    return float(np.sum(dens) * grid.cell_volume)


def flat_energy(state: FieldState, i: int) -> float:
    """``int (w^2 + |grad v|^2 + m^2 v^2) dx`` for species ``i``."""
    return field_energy(state.grid, state.m, state.v[i], state.w[i])


def l2_norm(grid: GridSpec, u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(u**2) * grid.cell_volume))


def sup_norm(u: np.ndarray) -> float:
    return float(np.max(np.abs(u), initial=0.0))


def support_radius(grid: GridSpec, u: np.ndarray, rel_tol: float = 1e-10) -> float:
    """Largest ``|x|`` at which ``|u| > rel_tol * max|u|``; 0 for a zero field."""
    peak = sup_norm(u)
    if peak == 0.0:
        return 0.0
    above = np.abs(u) > rel_tol * peak
    return float(grid.radius[above].max())


def acceleration(state: FieldState, couplings: CouplingTensors | None) -> np.ndarray:
    """``d_t w`` reconstructed from the equation: ``Lap v - m^2 v + F``."""
    g = state.grid
    acc = spectral.laplacian(g, state.v) - state.m**2 * state.v if state.n_species else state.v.copy()
    if couplings is not None and not couplings.is_zero():
        acc = acc + assemble_rhs(state, couplings)
    return acc


@dataclass
class DiagnosticsRecord:
    t: float
    species: int
    E_m: float
    l2: float
    sup: float
    support_radius: float
    hyperboloidal: dict[float, float] = field(default_factory=dict)
    source_l2: float | None = None


def record_state(
    state: FieldState,
    couplings: CouplingTensors | None = None,
    with_source: bool = False,
    support_tol: float = 1e-10,
) -> list[DiagnosticsRecord]:
    g = state.grid
    src = assemble_rhs(state, couplings) if with_source and couplings is not None else None
    out = []
    for i in range(state.n_species):
        out.append(
            DiagnosticsRecord(
                t=state.t,
                species=i,
                E_m=flat_energy(state, i),
                l2=l2_norm(g, state.v[i]),
                sup=sup_norm(state.v[i]),
                support_radius=support_radius(g, state.v[i], support_tol),
                source_l2=None if src is None else l2_norm(g, src[i]),
            )
        )
    return out


# -- snapshot buffer --------------------------------------------------------

class BufferCoverageError(ValueError):
    pass


class SnapshotBuffer:
    """Time-ordered states at uniform spacing ``save_dt``.

    With ``window`` set, entries older than ``t_latest - window`` are dropped
    unless their time is listed in ``checkpoints``. ``couplings`` is needed
    whenever ``d_t w`` has to be reconstructed from the equation.
    """

    def __init__(
        self,
        save_dt: float,
        couplings: CouplingTensors | None = None,
        window: float | None = None,
        checkpoints: Iterable[float] = (),
    ):
        if not save_dt > 0:
            raise ValueError("save_dt must be positive")
        if window is not None and window < 2 * save_dt:
            raise ValueError("window must cover at least two save intervals")
        self.save_dt = save_dt
        self.couplings = couplings
        self.window = window
        self.checkpoints = sorted(float(c) for c in checkpoints)
        self._entries: list[FieldState] = []
        self._jets: dict[int, list] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __call__(self, state: FieldState) -> None:
        self.append(state)

    @property
    def times(self) -> list[float]:
        return [s.t for s in self._entries]

    @property
    def entries(self) -> list[FieldState]:
        return list(self._entries)

    def _tol(self) -> float:
        return 1e-9 * max(1.0, self.save_dt)

    def append(self, state: FieldState) -> None:
        if self._entries:
            last = self._entries[-1]
            if state.grid != last.grid or state.m != last.m:
                raise ValueError("buffer entries must share grid and mass")
            gap = state.t - last.t
            if gap <= 0:
                raise ValueError("buffer times must increase strictly")
            steps = round(gap / self.save_dt)
            if steps < 1 or abs(gap - steps * self.save_dt) > 1e-6 * self.save_dt:
                raise ValueError(f"spacing {gap:g} is not a multiple of save_dt {self.save_dt:g}")
        self._entries.append(state.replace(v=state.v.copy(), w=state.w.copy()))
        self._evict()

    def _is_checkpoint(self, t: float) -> bool:
        return any(abs(t - c) <= 1e-6 * self.save_dt for c in self.checkpoints)

    def _evict(self) -> None:
        if self.window is None:
            return
        latest = self._entries[-1].t
        keep = [s for s in self._entries if s.t >= latest - self.window - self._tol() or self._is_checkpoint(s.t)]
        dropped = {id(s) for s in self._entries} - {id(s) for s in keep}
        for key in dropped:
            self._jets.pop(key, None)
        self._entries = keep

    def index_of(self, t: float) -> int:
        for k, s in enumerate(self._entries):
            if abs(s.t - t) <= 1e-6 * self.save_dt:
                return k
        raise BufferCoverageError(f"no snapshot at t={t:g}; buffer holds {self.span()}")

    def at(self, t: float) -> FieldState:
        return self._entries[self.index_of(t)]

    def span(self) -> tuple[float, float] | None:
        if not self._entries:
            return None
        return (self._entries[0].t, self._entries[-1].t)

    def is_contiguous(self, t_a: float, t_b: float) -> bool:
        ts = [t for t in self.times if t_a - self._tol() <= t <= t_b + self._tol()]
        if not ts or ts[0] > t_a + 1e-6 * self.save_dt or ts[-1] < t_b - 1e-6 * self.save_dt:
            return False
        return all(abs((b - a) - self.save_dt) <= 1e-6 * self.save_dt for a, b in zip(ts, ts[1:]))

    def jet(self, t: float) -> "Jet":
        """Cached :class:`Jet` for every species of the entry at ``t``."""
        state = self.at(t)
        key = id(state)
        if key not in self._jets:
            self._jets[key] = Jet.from_state(state, self.couplings)
        return self._jets[key]


# -- vector fields ----------------------------------------------------------

@dataclass
class Jet:
    """Fields with their spatial gradients at one time, for every species.

    ``u`` stacks (v, w, d_t w) along axis 0; ``grad`` stacks their gradients.
    """

    state: FieldState
    u: np.ndarray
    grad: np.ndarray

    @classmethod
    def from_state(cls, state: FieldState, couplings: CouplingTensors | None) -> "Jet":
        u = np.stack([state.v, state.w, acceleration(state, couplings)])
        return cls(state, u, spectral.gradient(state.grid, u))


def state_jet(state: FieldState, i: int, couplings: CouplingTensors | None) -> list[np.ndarray]:
    """``[v_i, d_t v_i, d_t^2 v_i]`` with the last entry taken from the equation."""
    return [state.v[i], state.w[i], acceleration(state, couplings)[i]]


_VECTOR_FIELDS = {"d0", "d1", "d2", "d3", "L1", "L2", "L3", "O12", "O13", "O23", "O21", "O31", "O32"}


def _parse_fields(fields: str | Sequence[str]) -> list[str]:
    names = [fields] if isinstance(fields, str) else list(fields)
    for name in names:
        if name not in _VECTOR_FIELDS:
            raise ValueError(f"unknown vector field {name!r}")
    return names


def apply_jet(grid: GridSpec, t: float, jet: list[np.ndarray | None], name: str) -> list[np.ndarray]:
    """Apply one vector field to a time jet ``[g, d_t g, d_t^2 g, ...]``.

    The result is one entry shorter whenever the field involves ``d_t``.
    """
    jet = [g for g in jet if g is not None]
    kind = name[0]
    if kind == "d":
        a = int(name[1])
        if a == 0:
            out = jet[1:]
        else:
            out = [spectral.spatial_derivative(grid, g, a) for g in jet]
    elif kind == "O":
        a, b = int(name[1]), int(name[2])
        xa, xb = grid.coords[a - 1], grid.coords[b - 1]
        out = [
            xa * spectral.spatial_derivative(grid, g, b) - xb * spectral.spatial_derivative(grid, g, a)
            for g in jet
        ]
    else:
        a = int(name[1])
        xa = grid.coords[a - 1]
        if len(jet) < 2:
            raise ValueError("not enough time derivatives to apply a boost")
        out = [xa * jet[1] + t * spectral.spatial_derivative(grid, jet[0], a)]
        if len(jet) >= 3:
            # d_t (x_a g_t + t d_a g) = x_a g_tt + d_a g + t d_a g_t
            out.append(
                xa * jet[2]
                + spectral.spatial_derivative(grid, jet[0], a)
                + t * spectral.spatial_derivative(grid, jet[1], a)
            )
    if not out:
        raise ValueError(f"not enough time derivatives to apply {name}")
    return out


def vector_field_jet(
    state: FieldState, i: int, fields: str | Sequence[str], couplings: CouplingTensors | None
) -> list[np.ndarray]:
    """Apply ``fields`` (right-most first, like an operator product) to species ``i``."""
    names = _parse_fields(fields)
    if len(names) > 2:
        raise ValueError("vector-field compositions are limited to order 2")
    jet = state_jet(state, i, couplings)
    for name in reversed(names):
        jet = apply_jet(state.grid, state.t, jet, name)
    return jet


def apply_vector_field(
    buffer: SnapshotBuffer, t: float, i: int, fields: str | Sequence[str]
) -> np.ndarray:
    """Value of ``Gamma_1 ... Gamma_k v_i`` at an entry time, ``k <= 2``.

    Names: ``d0``..``d3`` (translations), ``O12``, ``O13``, ``O23`` (rotations),
    ``L1``..``L3`` (boosts).
    """
    return vector_field_jet(buffer.at(t), i, fields, buffer.couplings)[0]


# -- hyperboloids -----------------------------------------------------------

def hermite(t, t_a, t_b, f_a, f_b, d_a, d_b):
    """Cubic Hermite interpolant from values and time derivatives at two ends."""
    h = t_b - t_a
    s = (t - t_a) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * f_a + h10 * h * d_a + h01 * f_b + h11 * h * d_b


def hyperboloid_time(grid: GridSpec, s: float) -> np.ndarray:
    return np.sqrt(s * s + grid.radius**2)


def _cone_mask(grid: GridSpec, s: float) -> np.ndarray:
    # |x| <= t - 1 on t^2 = s^2 + |x|^2  <=>  |x| <= (s^2 - 1)/2
    return grid.radius <= 0.5 * (s * s - 1.0)


def section_window(grid: GridSpec, s: float) -> tuple[float, float]:
    """Time range spanned by the hyperboloid ``H_s`` inside the cone and the box."""
    r = grid.radius[_cone_mask(grid, s)]
    return (float(math.sqrt(s * s + r.min() ** 2)), float(math.sqrt(s * s + r.max() ** 2)))


def _form_integrands(x: tuple, t: np.ndarray, s: float, m: float, u, ut, grad):
    """The three equivalent hyperboloidal energy densities."""
    ua = grad
    xt = [xa / t for xa in x]
    f1 = ut**2 + sum(g**2 for g in ua) + 2 * sum(q * ut * g for q, g in zip(xt, ua)) + m * m * u**2
    good = [g + q * ut for q, g in zip(xt, ua)]
    st = s / t
    f2 = (st * ut) ** 2 + sum(g**2 for g in good) + m * m * u**2
    perp = ut + sum(q * g for q, g in zip(xt, ua))
    rot = 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            rot = rot + ((x[a] * ua[b] - x[b] * ua[a]) / t) ** 2
    f3 = perp**2 + st**2 * sum(g**2 for g in ua) + rot + m * m * u**2
    return f1, f2, f3


def _interval_contribution(grid, m, s, jet_a: Jet, jet_b: Jet, include_end: bool, species: Sequence[int]):
    """Energies (3 forms, per species) of the part of ``H_s`` with t in [t_a, t_b)."""
    t_a, t_b = jet_a.state.t, jet_b.state.t
    tx = hyperboloid_time(grid, s)
    sel = _cone_mask(grid, s) & (tx >= t_a)
    sel &= (tx <= t_b) if include_end else (tx < t_b)
    out = np.zeros((len(species), 3))
    if not np.any(sel):
        return out
    t = tx[sel]
    x = tuple(np.broadcast_to(c, grid.shape)[sel] for c in grid.coords)
    for row, i in enumerate(species):
        ua, ub = jet_a.u[:, i], jet_b.u[:, i]
        ga, gb = jet_a.grad[:, i], jet_b.grad[:, i]
        u = hermite(t, t_a, t_b, ua[0][sel], ub[0][sel], ua[1][sel], ub[1][sel])
        ut = hermite(t, t_a, t_b, ua[1][sel], ub[1][sel], ua[2][sel], ub[2][sel])
        grad = [hermite(t, t_a, t_b, ga[0, c][sel], gb[0, c][sel], ga[1, c][sel], gb[1, c][sel]) for c in range(3)]
        forms = _form_integrands(x, t, s, m, u, ut, grad)
        out[row] = [np.sum(f) * grid.cell_volume for f in forms]
    return out


def hyperboloidal_energy(buffer: SnapshotBuffer, s: float, i: int, form: int) -> float:
    """Energy of species ``i`` on the hyperboloid ``t^2 = s^2 + |x|^2``.

    Fields are placed on the section by cubic Hermite interpolation in time
    between neighbouring snapshots. ``form`` selects one of three
    algebraically equal integrands (1: flat components, 2: semi-hyperboloidal
    frame, 3: normal/rotational split).
    """
    if form not in (1, 2, 3):
        raise ValueError("form must be 1, 2 or 3")
    if not buffer.entries:
        raise BufferCoverageError("empty buffer")
    grid = buffer.entries[0].grid
    lo, hi = section_window(grid, s)
    if not buffer.is_contiguous(_floor(buffer, lo), _ceil(buffer, hi)):
        raise BufferCoverageError(f"hyperboloid s={s:g} needs contiguous snapshots over [{lo:.6g}, {hi:.6g}]")
    times = [t for t in buffer.times if _floor(buffer, lo) - 1e-9 <= t <= _ceil(buffer, hi) + 1e-9]
    total = 0.0
    m = buffer.entries[0].m
    for k, (ta, tb) in enumerate(zip(times, times[1:])):
        last = k == len(times) - 2
        total += _interval_contribution(grid, m, s, buffer.jet(ta), buffer.jet(tb), last, [i])[0, form - 1]
    return float(total)


def _floor(buffer: SnapshotBuffer, t: float) -> float:
    t0 = buffer.times[0]
    return t0 + math.floor((t - t0) / buffer.save_dt + 1e-9) * buffer.save_dt


def _ceil(buffer: SnapshotBuffer, t: float) -> float:
    t0 = buffer.times[0]
    return t0 + math.ceil((t - t0) / buffer.save_dt - 1e-9) * buffer.save_dt


class HyperboloidAccumulator:
    """Observer that integrates hyperboloidal energies on the fly.

    Only the previous snapshot's jet is kept, so long runs need no buffer.
    ``energies[s]`` has shape (n_species, 3) and is final once
    ``complete(s)`` is true.
    """

    def __init__(self, s_values: Iterable[float], couplings: CouplingTensors | None):
        self.s_values = [float(s) for s in s_values]
        self.couplings = couplings
        self.energies: dict[float, np.ndarray] = {}
        self._prev: Jet | None = None
        self._t_first: float | None = None
        self._windows: dict[float, tuple[float, float]] = {}

    def __call__(self, state: FieldState) -> None:
        jet = Jet.from_state(state, self.couplings)
        if self._prev is None:
            self._t_first = state.t
            for s in self.s_values:
                self._windows[s] = section_window(state.grid, s)
                self.energies[s] = np.zeros((state.n_species, 3))
                if self._windows[s][0] < state.t - 1e-12:
                    raise BufferCoverageError(f"hyperboloid s={s:g} starts before the first snapshot")
        else:
            species = range(state.n_species)
            for s in self.s_values:
                lo, hi = self._windows[s]
                if jet.state.t < lo or self._prev.state.t > hi:
                    continue
                self.energies[s] += _interval_contribution(
                    state.grid, state.m, s, self._prev, jet, jet.state.t >= hi, species
                )
        self._prev = jet

    def complete(self, s: float) -> bool:
        return self._prev is not None and self._prev.state.t >= self._windows[s][1] - 1e-12

    def completion_time(self, s: float) -> float:
        return self._windows[s][1]


# -- decay and energy inequality --------------------------------------------

@dataclass
class DecayFit:
    C: float
    slope: float
    residual: float
    max_ratio: float
    n_samples: int
    min_ratio: float = float("nan")

    def within_factor(self, factor: float) -> bool:
        """True when every sample lies in ``[C model / factor, C model * factor]``."""
        return self.max_ratio <= factor and self.min_ratio >= 1.0 / factor


def decay_fit(
    records: Sequence[DiagnosticsRecord], i: int, window: tuple[float, float], m: float
) -> DecayFit:
    """Fit ``log sup|v_i|`` against ``log t`` and ``sup|v_i| ~ C / (t + m t^1.5)``.

    ``C`` is the log-space least-squares constant; ``residual`` is the RMS
    relative deviation from the fitted model and ``max_ratio`` the largest
    ``sup / model`` over the window.
    """
    t_a, t_b = window
    rows = [r for r in records if r.species == i and t_a - 1e-9 <= r.t <= t_b + 1e-9]
    if len(rows) < 8:
        raise ValueError(f"decay fit needs >= 8 records in [{t_a:g}, {t_b:g}], got {len(rows)}")
    t = np.array([r.t for r in rows])
    sup = np.array([r.sup for r in rows])
    if np.any(sup < 1e-14):
        raise ValueError("sup norms below 1e-14 are round-off; nothing to fit")
    slope = float(np.polyfit(np.log(t), np.log(sup), 1)[0])
    model = 1.0 / (t + m * t**1.5)
    log_ratio = np.log(sup / model)
    C = float(np.exp(np.mean(log_ratio)))
    rel = sup / (C * model) - 1.0
    ratio = sup / (C * model)
    return DecayFit(C, slope, float(np.sqrt(np.mean(rel**2))), float(ratio.max()), len(rows), float(ratio.min()))


@dataclass
class InequalityReport:
    min_slack: float
    t_min: float
    slack: np.ndarray
    violated: bool


def energy_inequality_check(
    times: Sequence[float],
    energies: Sequence[float],
    source_norms: Sequence[float],
    tolerance: float = 0.0,
) -> InequalityReport:
    """Slack in ``E(t)^1/2 <= E(t0)^1/2 + int ||F|| dt + q(t)``.

    ``q`` bounds the trapezoid error, ``sum h^3 |f''| / 12``, with ``f''``
    estimated by second differences. A minimum slack below ``-tolerance``
    (plus a round-off allowance on the energy square roots) is flagged as a
    violation.
    """
    t = np.asarray(times, dtype=float)
    e = np.sqrt(np.asarray(energies, dtype=float))
    f = np.asarray(source_norms, dtype=float)
    if not (t.shape == e.shape == f.shape):
        raise ValueError("times, energies and source norms must share one grid")
    h = np.diff(t)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))])
    curv = np.zeros_like(f)
    if len(f) >= 3:
        d2 = np.abs(np.diff(f, 2)) / np.maximum(h[1:] * h[:-1], 1e-300)
        curv[1:-1] = d2
        curv[0], curv[-1] = d2[0], d2[-1]
    per_interval = h**3 / 12.0 * np.maximum(curv[1:], curv[:-1]) if len(h) else h
    q = np.concatenate([[0.0], np.cumsum(per_interval)])
    slack = e[0] + integral + q - e
    k = int(np.argmin(slack))
    roundoff = 64 * np.finfo(float).eps * float(np.max(e, initial=0.0))
    return InequalityReport(float(slack[k]), float(t[k]), slack, bool(slack[k] < -(tolerance + roundoff)))
