"""Run configuration in a flat ``section.key = value`` text format.

Coupling entries are repeated lines ``N i j k value`` and
``M i j k alpha beta value``; ``#`` starts a comment. Example::

    grid.n = 32
    grid.box_length = 21
    system.n_species = 2
    system.m = 0.5
    data.eps0 = 1e-3, 1e-3
    time.t_end = 10
    time.dt = 0.1
    time.save_dt = 0.1
    N 0 1 1 1.0
    M 0 0 1 0 1 1.0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .spectral import GridSpec
from .system import T0, BumpSpec, CouplingTensors, check_box

__all__ = ["ConfigError", "RunConfig", "MassScanSpec", "parse_config", "load_config", "load_scan"]


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    n: int
    box_length: float
    m: float
    couplings: CouplingTensors
    eps0: tuple[float, ...]
    eps1: tuple[float, ...]
    t_end: float
    dt: float
    save_dt: float
    kick_substeps: int = 2
    filtered: bool = True
    hyperboloid_s: tuple[float, ...] = ()
    decay_window: tuple[float, float] | None = None
    source_norms: bool = False
    residual_checks: bool = False
    support_tol: float = 1e-10
    snapshot_times: tuple[float, ...] = ()
    output: str = "run"
    t0: float = T0

    def __post_init__(self):
        if self.t0 != T0:
            raise ConfigError(f"t0 is fixed at {T0}, got {self.t0}")
        if not 0.0 <= self.m <= 1.0:
            raise ConfigError(f"system.m must lie in [0, 1], got {self.m}")
        if len(self.eps0) != self.couplings.n_species or len(self.eps1) != self.couplings.n_species:
            raise ConfigError("data.eps0 / data.eps1 need one amplitude per species")
        try:
            self.grid
            self.bump
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.dt <= 0 or self.save_dt <= 0:
            raise ConfigError("time.dt and time.save_dt must be positive")
        if self.t_end <= self.t0:
            raise ConfigError("time.t_end must exceed t0 = 2")
        saves = (self.t_end - self.t0) / self.save_dt
        if abs(saves - round(saves)) > 1e-9 * max(1.0, saves):
            raise ConfigError("t_end - t0 must be a multiple of save_dt")
        try:
            check_box(self.grid, self.t_end, self.t0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.decay_window is not None and len(self.decay_window) != 2:
            raise ConfigError("diagnostics.decay_window takes two times")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.box_length)

    @property
    def bump(self) -> BumpSpec:
        return BumpSpec(tuple(self.eps0), tuple(self.eps1))

    @property
    def n_species(self) -> int:
        return self.couplings.n_species

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        def fl(xs):
            return ", ".join(repr(float(x)) for x in xs)

        lines = [
            f"grid.n = {self.n}",
            f"grid.box_length = {self.box_length!r}",
            f"system.n_species = {self.n_species}",
            f"system.m = {self.m!r}",
            f"data.eps0 = {fl(self.eps0)}",
            f"data.eps1 = {fl(self.eps1)}",
            f"data.filtered = {str(self.filtered).lower()}",
            f"time.t0 = {self.t0!r}",
            f"time.t_end = {self.t_end!r}",
            f"time.dt = {self.dt!r}",
            f"time.save_dt = {self.save_dt!r}",
            f"time.kick_substeps = {self.kick_substeps}",
            f"diagnostics.hyperboloid_s = {fl(self.hyperboloid_s)}",
            f"diagnostics.decay_window = {fl(self.decay_window or ())}",
            f"diagnostics.source_norms = {str(self.source_norms).lower()}",
            f"diagnostics.residual_checks = {str(self.residual_checks).lower()}",
            f"diagnostics.support_tol = {self.support_tol!r}",
            f"output.snapshot_times = {fl(self.snapshot_times)}",
            f"output.directory = {self.output}",
        ]
        return "\n".join(lines + self.couplings.entries()) + "\n"


_KEYS = {
    "grid.n": ("n", int),
    "grid.box_length": ("box_length", float),
    "system.m": ("m", float),
    "data.eps0": ("eps0", _floats),
    "data.eps1": ("eps1", _floats),
    "data.filtered": ("filtered", _bool),
    "time.t0": ("t0", float),
    "time.t_end": ("t_end", float),
    "time.dt": ("dt", float),
    "time.save_dt": ("save_dt", float),
    "time.kick_substeps": ("kick_substeps", int),
    "diagnostics.hyperboloid_s": ("hyperboloid_s", _floats),
    "diagnostics.decay_window": ("decay_window", _floats),
    "diagnostics.source_norms": ("source_norms", _bool),
    "diagnostics.residual_checks": ("residual_checks", _bool),
    "diagnostics.support_tol": ("support_tol", float),
    "output.snapshot_times": ("snapshot_times", _floats),
    "output.directory": ("output", str),
}

_SCAN_KEYS = {"scan.masses", "scan.order", "scan.checkpoints", "scan.p_target"}


def _split(text: str) -> tuple[dict[str, str], list[tuple[str, list[str], int]]]:
    values: dict[str, str] = {}
    tensors = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = (p.strip() for p in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = val
            continue
        parts = line.split()
        if parts[0] in ("N", "M"):
            tensors.append((parts[0], parts[1:], lineno))
            continue
        raise ConfigError(f"line {lineno}: cannot parse {raw!r}")
    return values, tensors


def parse_config(text: str, allow_scan: bool = False) -> tuple[RunConfig, dict[str, str]]:
    """Parse config text; returns the run config and any ``scan.*`` entries."""
    values, tensors = _split(text)
    scan = {k: v for k, v in values.items() if k in _SCAN_KEYS}
    if scan and not allow_scan:
        raise ConfigError("scan.* keys belong in a scan config")
    kwargs = {}
    for key, val in values.items():
        if key in _SCAN_KEYS or key == "system.n_species":
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        name, conv = _KEYS[key]
        try:
            kwargs[name] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    if "system.n_species" not in values:
        raise ConfigError("missing key 'system.n_species'")
    n_species = int(values["system.n_species"])
    N, M = {}, {}
    for kind, args, lineno in tensors:
        want = 4 if kind == "N" else 6
        if len(args) != want:
            raise ConfigError(f"line {lineno}: {kind} entries take {want} fields")
        try:
            idx = tuple(int(a) for a in args[:-1])
            val = float(args[-1])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        target = N if kind == "N" else M
        target[idx] = target.get(idx, 0.0) + val
    try:
        couplings = CouplingTensors(n_species, N=N, M=M)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    kwargs.setdefault("eps1", kwargs.get("eps0"))
    for required in ("n", "box_length", "m", "eps0", "t_end", "dt"):
        if required not in kwargs:
            raise ConfigError(f"missing key for {required!r}")
    kwargs.setdefault("save_dt", kwargs["t_end"] - T0)
    if "decay_window" in kwargs and not kwargs["decay_window"]:
        kwargs["decay_window"] = None
    if kwargs.get("decay_window") is not None:
        kwargs["decay_window"] = tuple(kwargs["decay_window"])
    return RunConfig(couplings=couplings, **kwargs), scan


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())[0]


@dataclass
class MassScanSpec:
    """Runs of one template at several masses, compared against ``m = 0``."""

    template: RunConfig
    masses: tuple[float, ...]
    order: int = 1
    checkpoints: tuple[float, ...] = field(default_factory=tuple)
    p_target: float = 2.0

    def __post_init__(self):
        self.masses = tuple(sorted((float(m) for m in self.masses), reverse=True))
        if 0.0 not in self.masses:
            raise ConfigError("a mass scan must include m = 0 as the reference")
        if len(set(self.masses)) != len(self.masses):
            raise ConfigError("duplicate masses in scan")
        if self.order not in (0, 1):
            raise ConfigError("scan.order must be 0 or 1")
        if not self.checkpoints:
            self.checkpoints = (self.template.t_end,)
        for t in self.checkpoints:
            k = (t - T0) / self.template.save_dt
            if t > self.template.t_end + 1e-9 or abs(k - round(k)) > 1e-9:
                raise ConfigError(f"checkpoint {t:g} is not a save time")

    def config_for(self, m: float) -> RunConfig:
        snaps = tuple(sorted(set(self.template.snapshot_times) | set(self.checkpoints)))
        out = str(Path(self.template.output) / f"m_{m:.6g}")
        return self.template.replace(m=m, snapshot_times=snaps, output=out)


def load_scan(path: str | Path) -> MassScanSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    template, scan = parse_config(p.read_text(), allow_scan=True)
    if "scan.masses" not in scan:
        raise ConfigError("scan config needs scan.masses")
    try:
        return MassScanSpec(
            template,
            _floats(scan["scan.masses"]),
            order=int(scan.get("scan.order", "1")),
            checkpoints=_floats(scan.get("scan.checkpoints", "")),
            p_target=float(scan.get("scan.p_target", "2")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
