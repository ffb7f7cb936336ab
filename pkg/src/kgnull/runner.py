"""Run orchestration: single runs, mass scans and the vanishing-mass study."""
from __future__ import annotations

import csv
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import spectral
from .config import ConfigError, MassScanSpec, RunConfig, parse_config
from .diagnostics import (
    DecayFit,
    DiagnosticsRecord,
    HyperboloidAccumulator,
    apply_jet,
    field_energy,
    record_state,
    state_jet,
)
from .integrator import NumericalFailure, StepParams, evolve
from .snapshot import read_snapshot, write_snapshot
from .system import FieldState, make_initial_data
from .transform import DecompositionTracker

__all__ = [
    "CODE_VERSION",
    "RunResult",
    "run_single",
    "read_diagnostics",
    "read_manifest",
    "snapshot_path",
    "run_scan",
    "RateRow",
    "convergence_study",
    "decay_check",
]

CODE_VERSION = "0.1.0"
BASE_COLUMNS = ["t", "species", "E_m", "l2", "sup", "support_radius"]


def _fmt(x: float) -> str:
    return repr(float(x))


def snapshot_path(run_dir: str | Path, t: float) -> Path:
    return Path(run_dir) / f"snap_t{t:012.6f}.kgms"


def _columns(config: RunConfig) -> list[str]:
    cols = list(BASE_COLUMNS)
    cols += [f"hyp_E_s{s:g}" for s in config.hyperboloid_s]
    if config.source_norms:
        cols.append("F_l2")
    if config.residual_checks:
        cols.append("decomp_residual")
    return cols


@dataclass
class RunResult:
    run_dir: Path
    records: list[DiagnosticsRecord]
    hyperboloid: dict[float, np.ndarray] = field(default_factory=dict)
    residuals: list[tuple[float, float]] = field(default_factory=list)
    failure: NumericalFailure | None = None


def _write_manifest(path: Path, config: RunConfig, extra: dict[str, str]) -> None:
    lines = [
        f"code.version = {CODE_VERSION}",
        f"code.python = {platform.python_version()}",
        f"code.numpy = {np.__version__}",
        f"code.scipy = {scipy.__version__}",
    ]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n" + config.to_text())


def read_manifest(run_dir: str | Path) -> tuple[RunConfig, dict[str, str]]:
    """Config echoed by a run plus its ``code.*`` and ``run.*`` entries."""
    path = Path(run_dir) / "manifest.txt"
    if not path.is_file():
        raise ConfigError(f"no manifest in {run_dir}")
    meta, body = {}, []
    for line in path.read_text().splitlines():
        key = line.split("=", 1)[0].strip()
        if key.startswith(("code.", "run.")):
            meta[key] = line.split("=", 1)[1].strip()
        else:
            body.append(line)
    return parse_config("\n".join(body))[0], meta


def _write_csv(path: Path, config: RunConfig, records, hyp: HyperboloidAccumulator | None, residuals) -> None:
    cols = _columns(config)
    res_at = {round(t, 9): r for t, r in residuals}
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(cols)
        for rec in records:
            row = [_fmt(rec.t), str(rec.species), _fmt(rec.E_m), _fmt(rec.l2), _fmt(rec.sup), _fmt(rec.support_radius)]
            for s in config.hyperboloid_s:
                # filled once the whole section lies behind the current slice
                done = hyp is not None and hyp.completion_time(s) <= rec.t + 1e-12
                row.append(_fmt(hyp.energies[s][rec.species, 0]) if done else "")
            if config.source_norms:
                row.append(_fmt(rec.source_l2))
            if config.residual_checks:
                r = res_at.get(round(rec.t, 9))
                row.append("" if r is None else _fmt(r))
            out.writerow(row)


def _write_hyperboloid_csv(path: Path, hyp: HyperboloidAccumulator) -> None:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["s", "species", "form1", "form2", "form3", "complete"])
        for s in hyp.s_values:
            for i, row in enumerate(hyp.energies[s]):
                out.writerow([_fmt(s), str(i), *(_fmt(x) for x in row), str(int(hyp.complete(s)))])


def read_diagnostics(run_dir: str | Path) -> list[DiagnosticsRecord]:
    path = Path(run_dir) / "diagnostics.csv"
    if not path.is_file():
        raise ConfigError(f"no diagnostics.csv in {run_dir}")
    out = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            hyp = {float(k[len("hyp_E_s"):]): float(v) for k, v in row.items() if k.startswith("hyp_E_s") and v}
            src = row.get("F_l2")
            out.append(
                DiagnosticsRecord(
                    t=float(row["t"]),
                    species=int(row["species"]),
                    E_m=float(row["E_m"]),
                    l2=float(row["l2"]),
                    sup=float(row["sup"]),
                    support_radius=float(row["support_radius"]),
                    hyperboloidal=hyp,
                    source_l2=float(src) if src else None,
                )
            )
    return out


def run_single(config: RunConfig, threads: int | None = None, initial: FieldState | None = None) -> RunResult:
    """Evolve ``config`` and write its run directory.

    Writes ``manifest.txt``, ``diagnostics.csv``, ``hyperboloid.csv`` when
    sections are requested, and snapshots at ``snapshot_times``. A numerical
    failure leaves the partial outputs plus ``failure.txt`` and is re-raised.
    """
    if threads is not None:
        spectral.set_workers(threads)
    run_dir = Path(config.output)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(run_dir / "manifest.txt", config, {"run.threads": str(threads or spectral.get_workers())})
    for stale in ("failure.txt",):
        (run_dir / stale).unlink(missing_ok=True)

    couplings = config.couplings
    if initial is None:
        initial = make_initial_data(config.grid, config.bump, config.m, config.t_end, filtered=config.filtered)
    records: list[DiagnosticsRecord] = []
    snap_keys = {round(t, 9) for t in config.snapshot_times}

    def observe(state: FieldState) -> None:
        records.extend(record_state(state, couplings, config.source_norms, config.support_tol))
        if round(state.t, 9) in snap_keys:
            write_snapshot(state, snapshot_path(run_dir, state.t))

    observers = [observe]
    hyp = None
    if config.hyperboloid_s:
        hyp = HyperboloidAccumulator(config.hyperboloid_s, couplings)
        observers.append(hyp)
    tracker = None
    if config.residual_checks:
        tracker = DecompositionTracker(couplings, config.save_dt)
        observers.append(tracker)

    failure = None
    try:
        evolve(
            initial,
            couplings,
            StepParams(config.dt, config.kick_substeps),
            config.t_end,
            observers=observers,
            save_dt=config.save_dt,
        )
    except NumericalFailure as exc:
        failure = exc
        (run_dir / "failure.txt").write_text(f"t = {exc.t!r}\nmax_w = {exc.max_w!r}\nmessage = {exc}\n")
    residuals = tracker.history if tracker is not None else []
    _write_csv(run_dir / "diagnostics.csv", config, records, hyp, residuals)
    if hyp is not None:
        _write_hyperboloid_csv(run_dir / "hyperboloid.csv", hyp)
    result = RunResult(run_dir, records, dict(hyp.energies) if hyp else {}, list(residuals), failure)
    if failure is not None:
        raise failure
    return result


# -- decay check -------------------------------------------------------------

def decay_check(fit: DecayFit, m: float) -> bool:
    """Desk-scale decay targets: slope -1 +- 0.15 at m = 0, -1.5 +- 0.2 at m = 1,
    otherwise the fitted constant bounds every sample within a factor 1.25."""
    if m == 0.0:
        return -1.15 <= fit.slope <= -0.85
    if m == 1.0:
        return -1.7 <= fit.slope <= -1.3
    return fit.within_factor(1.25)


# -- mass scans --------------------------------------------------------------

def run_scan(spec: MassScanSpec, threads: int | None = None) -> dict[float, Path]:
    """Run the template at every mass; one sub-directory per mass."""
    root = Path(spec.template.output)
    root.mkdir(parents=True, exist_ok=True)
    dirs = {}
    for m in spec.masses:
        cfg = spec.config_for(m)
        dirs[m] = run_single(cfg, threads).run_dir
    lines = [
        "scan.masses = " + ", ".join(_fmt(m) for m in spec.masses),
        f"scan.order = {spec.order}",
        "scan.checkpoints = " + ", ".join(_fmt(t) for t in spec.checkpoints),
        f"scan.p_target = {spec.p_target!r}",
    ]
    lines += [f"run.m_{m:.6g} = {dirs[m].name}" for m in spec.masses]
    (root / "scan.txt").write_text("\n".join(lines) + "\n")
    return dirs


@dataclass
class RateRow:
    m: float
    t: float
    D: float
    D_over_t: float
    p: float | None  # log2 D(m, t) / D(m/2, t), when m/2 was run


BOOSTS_AND_TRANSLATIONS = ("d0", "d1", "d2", "d3", "L1", "L2", "L3")


def _comparable(a: RunConfig, b: RunConfig) -> bool:
    return a.replace(m=0.0, output="") == b.replace(m=0.0, output="")


def difference_norm(state_m: FieldState, state_0: FieldState, couplings, order: int) -> float:
    """``sum_i sum_Gamma E_m(Gamma (v^(m) - v^(0)))^1/2`` over ``|Gamma| <= order``."""
    if state_m.grid != state_0.grid or abs(state_m.t - state_0.t) > 1e-9:
        raise ConfigError("difference fields need matching grids and times")
    g, t, m = state_m.grid, state_m.t, state_m.m
    fields = ((),) + (tuple((f,) for f in BOOSTS_AND_TRANSLATIONS) if order >= 1 else ())
    total = 0.0
    for i in range(state_m.n_species):
        jm = state_jet(state_m, i, couplings)
        j0 = state_jet(state_0, i, couplings)
        diff = [a - b for a, b in zip(jm, j0)]
        for names in fields:
            jet = diff
            for name in names:
                jet = apply_jet(g, t, jet, name)
            total += math.sqrt(field_energy(g, m, jet[0], jet[1]))
    return total


def convergence_study(scan_dir: str | Path, order: int | None = None) -> list[RateRow]:
    """Rate table for a completed scan directory (see :func:`run_scan`)."""
    root = Path(scan_dir)
    meta_path = root / "scan.txt"
    if not meta_path.is_file():
        raise ConfigError(f"no scan.txt in {root}")
    meta = dict((p.strip() for p in line.split("=", 1)) for line in meta_path.read_text().splitlines() if "=" in line)
    masses = [float(x) for x in meta["scan.masses"].split(",")]
    checkpoints = [float(x) for x in meta["scan.checkpoints"].split(",")]
    order = int(meta["scan.order"]) if order is None else order
    if order not in (0, 1):
        raise ConfigError("order must be 0 or 1")
    configs = {m: read_manifest(root / meta[f"run.m_{m:.6g}"])[0] for m in masses}
    ref = configs[0.0]
    for m, cfg in configs.items():
        if not _comparable(cfg, ref):
            raise ConfigError(f"run at m={m:g} differs from the m=0 reference beyond its mass")
    D: dict[tuple[float, float], float] = {}
    for t in checkpoints:
        s0 = read_snapshot(snapshot_path(root / meta["run.m_0"], t))
        for m in masses:
            if m == 0.0:
                continue
            sm = read_snapshot(snapshot_path(root / meta[f"run.m_{m:.6g}"], t))
            D[(m, t)] = difference_norm(sm, s0, ref.couplings, order)
    rows = []
    for (m, t), d in sorted(D.items(), key=lambda kv: (kv[0][1], -kv[0][0])):
        half = D.get((m / 2, t))
        p = math.log2(d / half) if half and d > 0 else None
        rows.append(RateRow(m, t, d, d / t, p))
    return rows


def write_rates(path: str | Path, rows: list[RateRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["m", "t", "D", "D_over_t", "p"])
        for r in rows:
            out.writerow([_fmt(r.m), _fmt(r.t), _fmt(r.D), _fmt(r.D_over_t), "" if r.p is None else _fmt(r.p)])
