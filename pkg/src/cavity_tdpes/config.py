"""Run configuration: sectioned ``key = value`` files with strict keys.

Every section maps onto a dataclass.  Values left empty fall back to the
preset-dependent defaults, so a config file only needs the keys it changes.
Serialization writes every key, which makes ``RunConfig`` round-trip
losslessly through :func:`dumps` and :func:`loads`.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .grid import Grid1D, Grid3D
from .model import PRESETS, ConfigError, ModelParams, preset
from .propagator import FS_AU, InitialState

# Snapshot times used for the PCET surface figures, in femtoseconds.
PCET_FIGURE_TIMES_FS = (3.39, 17.42, 21.29, 25.56, 35.80)

# Box sizes validated by the convergence tests.  "coarse" halves every count;
# at 20 photon points the vacuum is under-resolved, so coarse runs are for
# smoke tests and timing only.
_GRIDS = {
    "pcet": {"r": (-30.0, 30.0, 128), "R": (-9.0, 9.0, 128), "q": (-32.0, 32.0, 40)},
    "elex": {"r": (-30.0, 30.0, 128), "R": (-9.0, 9.0, 128), "q": (-40.0, 40.0, 40)},
}


def _list_of_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.replace(";", ",").split(","))


def _to_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ModelSection:
    preset: str = "pcet"
    cavity: bool = True
    L: float | None = None
    a_plus: float | None = None
    a_minus: float | None = None
    a_f: float | None = None
    M: float | None = None
    omega_c: float | None = None
    lam: float | None = None
    self_polarization: bool = False

    def params(self) -> ModelParams:
        over = {f.name: getattr(self, f.name) for f in fields(self)
                if f.name in ("L", "a_plus", "a_minus", "a_f", "M", "omega_c", "lam")
                and getattr(self, f.name) is not None}
        over["include_self_polarization"] = self.self_polarization
        try:
            return preset(self.preset, **over)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[model] {exc}") from None


@dataclass
class GridSection:
    resolution: str = "default"
    r_min: float | None = None
    r_max: float | None = None
    n_r: int | None = None
    R_min: float | None = None
    R_max: float | None = None
    n_R: int | None = None
    q_min: float | None = None
    q_max: float | None = None
    n_q: int | None = None


@dataclass
class InitialSection:
    kind: str = "polaritonic"
    level: int = 1
    R0: float = -4.0
    alpha: float = 2.85


@dataclass
class PropagationSection:
    dt: float = 0.1
    t_final_fs: float = 36.0
    store_every_fs: float = 2.0
    extra_times_fs: tuple[float, ...] = PCET_FIGURE_TIMES_FS
    boundary_tol: float = 1e-8
    snapshots: bool = False


@dataclass
class AnalysisSection:
    invert: bool = True
    frame_every_fs: float = 0.5
    stencil_delta: float = 0.5
    gd_mode: str = "centered"
    threshold: float = 1e-7
    n_el: int = 6
    n_ph: int = 6
    photon_n_max: int = 3


@dataclass
class QclSection:
    n_traj: int = 3000
    seed: int = 20240611
    dt: float = 0.25
    modes: tuple[str, ...] = ("full", "wpol")
    compare_from_fs: float = 10.0
    compare_every_fs: float = 2.0


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class RunSection:
    batch: str = "none"
    threads: int = 1


SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "initial": InitialSection,
    "propagation": PropagationSection,
    "analysis": AnalysisSection,
    "qcl": QclSection,
    "output": OutputSection,
    "run": RunSection,
}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    initial: InitialSection = field(default_factory=InitialSection)
    propagation: PropagationSection = field(default_factory=PropagationSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    qcl: QclSection = field(default_factory=QclSection)
    output: OutputSection = field(default_factory=OutputSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    # -- derived objects ---------------------------------------------------
    def params(self) -> ModelParams:
        return self.model.params()

    def grid3(self) -> Grid3D:
        base = _GRIDS.get(self.model.preset.lower(), _GRIDS["pcet"])
        g = self.grid
        div = {"default": 1, "coarse": 2}[g.resolution]

        def axis(name, lo, hi, n):
            b_lo, b_hi, b_n = base[name]
            return Grid1D(b_lo if lo is None else lo, b_hi if hi is None else hi, b_n // div if n is None else n)

        r = axis("r", g.r_min, g.r_max, g.n_r)
        R = axis("R", g.R_min, g.R_max, g.n_R)
        q = axis("q", g.q_min, g.q_max, g.n_q) if self.model.cavity else None
        return Grid3D(r, R, q)

    def initial_state(self) -> InitialState:
        i = self.initial
        return InitialState(i.kind, i.level, i.R0, i.alpha)

    @property
    def t_final(self) -> float:
        return self.propagation.t_final_fs * FS_AU

    def validate(self) -> None:
        m = self.model
        if m.preset.lower() not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {m.preset!r}; known: {sorted(PRESETS)}")
        self.params()
        if self.grid.resolution not in ("default", "coarse"):
            raise ConfigError("grid.resolution must be 'default' or 'coarse'")
        try:
            self.grid3()
        except ValueError as exc:
            raise ConfigError(f"[grid] {exc}") from None
        try:
            self.initial_state()
        except ValueError as exc:
            raise ConfigError(f"[initial] {exc}") from None
        if self.initial.kind == "polaritonic" and not m.cavity:
            raise ConfigError("initial.kind: a polaritonic start needs model.cavity = true")
        p = self.propagation
        if p.dt <= 0:
            raise ConfigError("propagation.dt must be positive")
        if p.t_final_fs <= 0:
            raise ConfigError("propagation.t_final_fs must be positive")
        if p.store_every_fs <= 0:
            raise ConfigError("propagation.store_every_fs must be positive")
        a = self.analysis
        if a.gd_mode not in ("centered", "forward"):
            raise ConfigError("analysis.gd_mode must be 'centered' or 'forward'")
        if a.frame_every_fs <= 0 or a.stencil_delta <= 0:
            raise ConfigError("analysis.frame_every_fs and analysis.stencil_delta must be positive")
        if not 1 <= a.n_el <= 8 or a.n_ph < 2 or a.n_el * a.n_ph > 64:
            raise ConfigError("analysis.n_el in [1, 8], analysis.n_ph >= 2, n_el * n_ph <= 64")
        q = self.qcl
        if q.n_traj < 1 or q.dt <= 0:
            raise ConfigError("qcl.n_traj >= 1 and qcl.dt > 0 required")
        if not set(q.modes) <= {"full", "wpol"} or not q.modes:
            raise ConfigError("qcl.modes must be drawn from 'full', 'wpol'")
        if self.run.batch not in ("none", "pcet", "elex"):
            raise ConfigError("run.batch must be 'none', 'pcet' or 'elex'")
        if self.run.threads < 1:
            raise ConfigError("run.threads must be >= 1")

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``section.key=value`` strings; unknown keys raise ConfigError."""
        data = to_dict(self)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            lhs, value = item.split("=", 1)
            if "." not in lhs:
                raise ConfigError(f"override key {lhs!r} needs a section prefix")
            sec, key = lhs.strip().split(".", 1)
            data.setdefault(sec, {})[key] = value.strip()
        return from_dict(data)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(section: str, key: str, hint, text):
    if not isinstance(text, str):
        return text
    name = f"{section}.{key}"
    try:
        s = str(hint)
        if text.strip() == "" and "None" in s:
            return None
        if hint is bool:
            return _to_bool(text)
        if "tuple[float" in s:
            return _list_of_floats(text)
        if "tuple[str" in s:
            return tuple(x.strip() for x in text.split(",") if x.strip())
        if hint is int or s.startswith("int"):
            return int(text)
        if hint is float or s.startswith("float"):
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def to_dict(cfg: RunConfig) -> dict[str, dict]:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS}


def from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        raw = dict(data.get(name, {}))
        hints = get_type_hints(cls)
        bad = set(raw) - set(hints)
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        built[name] = cls(**{k: _coerce(name, k, hints[k], v) for k, v in raw.items()})
    return RunConfig(**built)


def dumps(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in to_dict(cfg).items():
        parser[name] = {k: _format(v if not isinstance(v, list) else tuple(v)) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_dict({s: dict(parser[s]) for s in parser.sections()})


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def default_config(preset_name: str = "pcet", **section_overrides) -> RunConfig:
    """Defaults for a preset.  ELEX starts on the first excited BO state with no photons."""
    cfg = RunConfig(model=ModelSection(preset=preset_name))
    if preset_name == "elex":
        cfg = cfg.replace(
            initial=InitialSection(kind="bo_factorized", level=1),
            propagation=dataclasses.replace(cfg.propagation, t_final_fs=40.0, extra_times_fs=()),
        )
    return cfg.replace(**section_overrides) if section_overrides else cfg
