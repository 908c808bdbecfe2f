"""Experiment configuration: INI files with ``[system] [time] [target]
[control] [output] [reference]`` sections, plus the built-in presets."""
from __future__ import annotations

import configparser
import io
from functools import partial
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .control import GiB, ControlParams
from .propagation import TLS_DIPOLE, TLS_E0, TLS_GAP, GridAtom, TwoLevelSystem, soft_coulomb
from .state import Grid, QuantumState, TimeGrid


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SystemConfig:
    kind: str = "two_level"
    e0: float = TLS_E0
    gap: float = TLS_GAP
    dipole: float = TLS_DIPOLE
    x_min: float = -150.0
    x_max: float = 150.0
    n_points: int = 2048
    softening: float = 1.0
    mask_width: Optional[float] = 20.0
    mask_exponent: float = 0.125
    n_states: int = 4


@dataclass(frozen=True)
class TargetConfig:
    preset: str = "follower:v_shape"
    levels: tuple = (0, 1)
    omega: float = 0.0
    t1: Optional[float] = None
    t2: Optional[float] = None
    final_level: int = 1
    x0: float = 0.0
    sigma: float = 10.0
    normalization: str = "quarter"
    exponent: int = 1


@dataclass(frozen=True)
class ReferenceConfig:
    """Driving pulse for the reference trajectory ``r(t) = <x>(t)``."""

    amplitude: float = 0.01
    omega: float = TLS_GAP
    envelope: str = "sin2"
    output: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    system: SystemConfig = field(default_factory=SystemConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    control: ControlParams = field(default_factory=lambda: ControlParams(alpha=0.05))
    total_time: float = 400.0
    dt: float = 0.01
    output_dir: str = "out"
    stride: int = 100
    checkpoint_levels: tuple = ()
    checkpoint_file: bool = False
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    base_dir: str = "."

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_total(self.total_time, self.dt)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_TLS = """
[system]
kind = two_level
[time]
total = 400
dt = 0.01
[control]
alpha = 0.05
eta = 0.02
gamma = 0.02
max_iterations = 2000
dj_threshold = 1e-8
initial_field = 1e-4
[output]
stride = 10
"""

_H1D = """
[system]
kind = grid_atom
x_min = -150
x_max = 150
n_points = 2048
[time]
total = 400
dt = 0.005
[target]
preset = follower:v_shape
[control]
alpha = 1.5
eta = 0.3
gamma = 0.0
max_iterations = 200
dj_threshold = 1e-5
initial_field = 1e-4
[output]
stride = 200
"""

PRESETS: dict[str, str] = {
    "tls-vshape": _TLS + "[target]\npreset = follower:v_shape\n[output]\ncheckpoint_levels = 0.9, 0.95, 0.99\n",
    "tls-step": _TLS + "[target]\npreset = follower:step\n",
    "tls-cosine": _TLS + "[target]\npreset = follower:cosine\nomega = 0.0235619449\n",
    "h1d-vshape": _H1D,
    "h1d-vshape-small": _H1D + """
[system]
x_min = -100
x_max = 100
n_points = 512
[time]
total = 200
[control]
max_iterations = 40
""",
    "moving-density": """
[system]
kind = grid_atom
x_min = -100
x_max = 100
n_points = 512
[time]
total = 100
dt = 0.005
[target]
preset = moving_density:reference
sigma = 10
[control]
alpha = 0.5
eta = 1.0
gamma = 0.0
max_iterations = 1000
dj_threshold = 1e-9
initial_field = 1e-3
[reference]
amplitude = 0.02
omega = 0.395
envelope = sin2
[output]
stride = 50
""",
    "h1d-projector": _H1D + """
[system]
x_min = -100
x_max = 100
n_points = 512
[time]
total = 100
[target]
preset = projector
final_level = 1
[control]
alpha = 0.5
""",
}


def _merge(text: str, parser: configparser.ConfigParser) -> None:
    """Read ``text`` allowing repeated sections (later keys win)."""
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not parser.has_section(section):
                parser.add_section(section)
            continue
        if section is None or "=" not in line:
            raise ConfigError(f"cannot parse line {raw!r}")
        key, value = line.split("=", 1)
        parser.set(section, key.strip(), value.strip())


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[name]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTIONS = {"system", "time", "target", "control", "output", "reference", "meta"}


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _optional_float(raw: str):
    return None if raw.strip().lower() in ("", "none", "off") else float(raw)


def _int(raw: str) -> int:
    v = float(raw)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(_int(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_config(text: str, name: str = "experiment", base_dir: str = ".",
                 check: bool = True) -> ExperimentConfig:
    """Parse INI text; ``check=False`` skips the consistency checks (used by validate)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    _merge(text, parser)
    if parser.has_option("meta", "base"):
        merged = configparser.ConfigParser(interpolation=None)
        merged.optionxform = str
        _merge(preset_text(parser.get("meta", "base")), merged)
        _merge(text, merged)
        parser = merged
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    seen = {("meta", "base")}

    def g(k, c, dflt, s="system"):
        seen.add((s, k))
        return _get(parser, s, k, c, dflt)

    d = SystemConfig()
    system = SystemConfig(
        kind=g("kind", str, d.kind), e0=g("e0", float, d.e0), gap=g("gap", float, d.gap),
        dipole=g("dipole", float, d.dipole), x_min=g("x_min", float, d.x_min),
        x_max=g("x_max", float, d.x_max), n_points=g("n_points", _int, d.n_points),
        softening=g("softening", float, d.softening),
        mask_width=g("mask_width", _optional_float, d.mask_width),
        mask_exponent=g("mask_exponent", float, d.mask_exponent),
        n_states=g("n_states", _int, d.n_states))
    t = TargetConfig()
    target = TargetConfig(
        preset=g("preset", str, t.preset, "target"), levels=g("levels", _ints, t.levels, "target"),
        omega=g("omega", float, t.omega, "target"), t1=g("t1", _optional_float, t.t1, "target"),
        t2=g("t2", _optional_float, t.t2, "target"),
        final_level=g("final_level", _int, t.final_level, "target"),
        x0=g("x0", float, t.x0, "target"), sigma=g("sigma", float, t.sigma, "target"),
        normalization=g("normalization", str, t.normalization, "target"),
        exponent=g("exponent", _int, t.exponent, "target"))
    try:
        control = ControlParams(
            alpha=g("alpha", float, 0.05, "control"), eta=g("eta", float, 1.0, "control"),
            gamma=g("gamma", float, 1.0, "control"),
            max_iterations=g("max_iterations", _int, 500, "control"),
            dj_threshold=g("dj_threshold", float, 1e-8, "control"),
            initial_field=g("initial_field", float, 1e-4, "control"),
            feedback=g("feedback", str, "midpoint", "control"),
            n_corrector=g("n_corrector", _int, 3, "control"),
            tol_mono=g("tol_mono", float, 1e-9, "control"),
            max_violation_fraction=g("max_violation_fraction", float, 0.1, "control"),
            memory_cap=g("memory_cap_gib", float, 4.0, "control") * GiB,
            storage=g("storage", str, "auto", "control"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    r = ReferenceConfig()
    reference = ReferenceConfig(
        amplitude=g("amplitude", float, r.amplitude, "reference"),
        omega=g("omega", float, r.omega, "reference"),
        envelope=g("envelope", str, r.envelope, "reference"),
        output=g("output", str, r.output, "reference"))
    default_dt = 0.01 if system.kind == "two_level" else 0.005
    cfg = ExperimentConfig(
        name=g("name", str, name, "meta"), system=system, target=target, control=control,
        total_time=g("total", float, 400.0, "time"), dt=g("dt", float, default_dt, "time"),
        output_dir=g("directory", str, "out", "output"), stride=g("stride", _int, 100, "output"),
        checkpoint_levels=g("checkpoint_levels", _floats, (), "output"),
        checkpoint_file=g("checkpoint_file", _bool, False, "output"),
        reference=reference, base_dir=str(base_dir))
    stray = [f"[{sec}] {k}" for sec in parser.sections() for k in parser.options(sec)
             if (sec, k) not in seen]
    if stray:
        raise ConfigError(f"unknown key(s): {', '.join(stray)}")
    if check:
        check_config(cfg)
    return cfg


def load_config(source: str, check: bool = True) -> ExperimentConfig:
    """A config file path, or the name of a built-in preset."""
    path = Path(source)
    if path.is_file():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {source}: {exc}") from None
        return parse_config(text, path.stem, str(path.parent), check)
    if source in PRESETS:
        return parse_config(PRESETS[source], source, check=check)
    raise ConfigError(f"{source!r} is neither a config file nor a preset "
                      f"({', '.join(sorted(PRESETS))})")


def config_problems(cfg: ExperimentConfig) -> list[str]:
    """Every inconsistency found; empty when the config can run."""
    out = []
    s = cfg.system
    if s.kind not in ("two_level", "grid_atom"):
        out.append(f"unknown system kind {s.kind!r}")
    if s.kind == "grid_atom":
        try:
            g = Grid(s.x_min, s.x_max, s.n_points)
            if s.mask_width is not None and not 0 < s.mask_width < 0.5 * (g.x_max - g.x_min):
                out.append(f"mask width {s.mask_width} does not fit the grid")
        except ValueError as exc:
            out.append(str(exc))
    try:
        TimeGrid.from_total(cfg.total_time, cfg.dt)
    except ValueError as exc:
        out.append(str(exc))
    else:
        if cfg.stride < 1 or cfg.time_grid.n_steps % cfg.stride:
            out.append(f"output stride {cfg.stride} does not divide {cfg.time_grid.n_steps} steps")
    t = cfg.target
    kind = t.preset.split(":", 1)[0]
    if kind not in ("follower", "projector", "local_density", "moving_density"):
        out.append(f"unknown target preset {t.preset!r}")
    if kind == "follower":
        sub = t.preset.split(":", 1)[1] if ":" in t.preset else ""
        if sub not in ("v_shape", "step", "cosine"):
            out.append(f"unknown follower preset {sub!r}")
        if len(t.levels) != 2:
            out.append("follower presets use exactly two levels")
    if kind in ("follower", "projector") and s.kind == "two_level":
        if max(t.levels + (t.final_level,)) > 1:
            out.append("two-level system has only levels 0 and 1")
    if kind in ("local_density", "moving_density") and s.kind != "grid_atom":
        out.append("density targets need a grid atom")
    if kind == "moving_density":
        arg = t.preset.split(":", 1)[1] if ":" in t.preset else ""
        if arg.startswith("file="):
            p = resolve_path(cfg, arg[5:])
            if not p.is_file():
                out.append(f"trajectory file {p} does not exist")
        elif arg != "reference":
            out.append("moving_density needs 'file=<path>' or 'reference'")
    if t.normalization not in ("quarter", "unit"):
        out.append(f"unknown normalization {t.normalization!r}")
    if t.sigma <= 0:
        out.append("sigma must be positive")
    if t.exponent < 1:
        out.append("exponent must be a positive integer")
    if cfg.reference.envelope not in ("sin2", "constant", "gauss"):
        out.append(f"unknown reference envelope {cfg.reference.envelope!r}")
    return out


def check_config(cfg: ExperimentConfig) -> None:
    problems = config_problems(cfg)
    if problems:
        raise ConfigError("; ".join(problems))


def resolve_path(cfg: ExperimentConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.base_dir) / p


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: ExperimentConfig) -> str:
    """Round-trippable INI text describing ``cfg`` completely."""
    c = cfg.control
    sections = {
        "meta": {"name": cfg.name},
        "system": asdict(cfg.system),
        "time": {"total": cfg.total_time, "dt": cfg.dt},
        "target": asdict(cfg.target),
        "control": {"alpha": c.alpha, "eta": c.eta, "gamma": c.gamma,
                    "max_iterations": c.max_iterations, "dj_threshold": c.dj_threshold,
                    "initial_field": c.initial_field, "feedback": c.feedback,
                    "n_corrector": c.n_corrector, "tol_mono": c.tol_mono,
                    "max_violation_fraction": c.max_violation_fraction,
                    "memory_cap_gib": c.memory_cap / GiB, "storage": c.storage},
        "output": {"directory": cfg.output_dir, "stride": cfg.stride,
                   "checkpoint_levels": cfg.checkpoint_levels,
                   "checkpoint_file": cfg.checkpoint_file},
        "reference": asdict(cfg.reference),
    }
    buf = io.StringIO()
    for sec, items in sections.items():
        buf.write(f"[{sec}]\n")
        for k, v in items.items():
            if v is None and k in ("output", "t1", "t2"):
                continue
            buf.write(f"{k} = {_fmt(v)}\n")
        buf.write("\n")
    return buf.getvalue()


def control_dict(params: ControlParams) -> dict:
    d = asdict(params)
    d["memory_cap_gib"] = d.pop("memory_cap") / GiB
    return d


# ---------------------------------------------------------------------------
# overrides used by sweeps and the CLI
# ---------------------------------------------------------------------------

SWEEP_AXES = ("alpha", "n", "eta", "gamma", "sigma")


def with_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "alpha":
        return replace(cfg, control=replace(cfg.control, alpha=float(value)))
    if axis == "eta":
        return replace(cfg, control=replace(cfg.control, eta=float(value)))
    if axis == "gamma":
        return replace(cfg, control=replace(cfg.control, gamma=float(value)))
    if axis == "n":
        if float(value) != int(value):
            raise ConfigError("exponent sweep values must be integers")
        return replace(cfg, target=replace(cfg.target, exponent=int(value)))
    if axis == "sigma":
        return replace(cfg, target=replace(cfg.target, sigma=float(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


# ---------------------------------------------------------------------------
# building the physical objects
# ---------------------------------------------------------------------------


def build_system(cfg: ExperimentConfig):
    s = cfg.system
    if s.kind == "two_level":
        return TwoLevelSystem(s.e0, s.e0 + s.gap, s.dipole)
    return GridAtom(Grid(s.x_min, s.x_max, s.n_points),
                    potential=partial(soft_coulomb, softening=s.softening),
                    mask_width=s.mask_width, mask_exponent=s.mask_exponent)


def eigensystem_for(system, cfg: ExperimentConfig):
    if system.kind == "two_level":
        return system.eigensystem()
    need = max(max(cfg.target.levels), cfg.target.final_level) + 1
    return system.eigensystem(max(cfg.system.n_states, need, 2))


def initial_state(system) -> QuantumState:
    return system.ground_state()
