"""Running configured experiments and writing their artifacts."""
from __future__ import annotations

import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy
import scipy.signal

from . import __version__
from ._jit import BACKEND
from .config import (SWEEP_AXES, ConfigError, ExperimentConfig, build_system, config_problems,
                     control_dict, eigensystem_for, initial_state, resolve_path, to_ini,
                     with_axis)
from .control import (CONVERGED, MAX_ITERATIONS, MONOTONICITY_ABORT, OptimizationTrace,
                      choose_storage, memory_estimate, optimize)
from .propagation import TLS_DIPOLE, TLS_GAP, propagate
from .state import ControlField, TimeGrid, occupations_series
from .targets import (Follower, LocalDensity, MovingDensity, Projector, TargetSpec,
                      cosine_target, step_target, v_shape)

log = logging.getLogger(__name__)

EXIT_CODES = {CONVERGED: 0, MAX_ITERATIONS: 2, MONOTONICITY_ABORT: 3}
EXIT_CONFIG = 4

OCCUPATIONS = "occupations.csv"
FIELD = "field.csv"
FUNCTIONAL = "functional.csv"
POSITION = "position.csv"
METADATA = "metadata.json"
REFERENCE = "reference_trajectory.txt"


# ---------------------------------------------------------------------------
# target construction
# ---------------------------------------------------------------------------


def reference_field(cfg: ExperimentConfig) -> ControlField:
    """Driving field of the reference run, node-sampled on the config's time grid."""
    ref = cfg.reference
    T = cfg.total_time

    def f(t):
        if ref.envelope == "sin2":
            env = np.sin(np.pi * t / T) ** 2
        elif ref.envelope == "gauss":
            env = np.exp(-((t - 0.5 * T) / (0.2 * T)) ** 2)
        else:
            env = np.ones_like(t)
        return ref.amplitude * env * np.sin(ref.omega * t)

    return ControlField.from_function(f, cfg.time_grid)


def reference_positions(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(t, <x>(t))`` of the ground state driven by the reference field."""
    system = build_system(cfg)
    if system.kind != "grid_atom":
        raise ConfigError("a reference trajectory needs a grid atom")
    traj = propagate(initial_state(system), reference_field(cfg), system, cfg.time_grid)
    return traj.times, traj.positions()


def build_target(cfg: ExperimentConfig, system) -> TargetSpec:
    t = cfg.target
    kind, _, arg = t.preset.partition(":")
    T = cfg.total_time
    if kind == "follower":
        eig = eigensystem_for(system, cfg)
        coeffs = {"v_shape": lambda: v_shape(T, t.levels),
                  "step": lambda: step_target(T, t.t1, t.t2, t.levels),
                  "cosine": lambda: cosine_target(T, t.omega, t.levels)}[arg]()
        return TargetSpec(o1=Follower(coeffs, eig), exponent=t.exponent, label=t.preset)
    if kind == "projector":
        eig = eigensystem_for(system, cfg)
        return TargetSpec(o2=Projector(eig.states[t.final_level]), exponent=t.exponent,
                          label=t.preset)
    if kind == "local_density":
        return TargetSpec(o2=LocalDensity(t.x0, t.sigma, t.normalization),
                          exponent=t.exponent, label=t.preset)
    if kind == "moving_density":
        if arg == "reference":
            times, pos = reference_positions(cfg)
            md = MovingDensity(times, pos, t.sigma, t.normalization)
        else:
            md = MovingDensity.from_file(resolve_path(cfg, arg[len("file="):]),
                                         t.sigma, t.normalization)
        return TargetSpec(o1=md, exponent=t.exponent, label=t.preset)
    raise ConfigError(f"unknown target preset {t.preset!r}")


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    directory: Path
    trace: OptimizationTrace
    times: np.ndarray
    occupations: np.ndarray
    field: np.ndarray
    envelope: np.ndarray
    positions: Optional[np.ndarray]
    reference: Optional[np.ndarray]
    metadata: dict
    files: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.trace.status]

    @property
    def j1(self) -> float:
        return self.trace.final.j1

    def tracking_error(self) -> float:
        """Time-averaged ``|<x>(t) - r(t)|`` (moving-density runs only)."""
        if self.positions is None or self.reference is None:
            raise ValueError("tracking error needs a moving-density run")
        return float(np.trapezoid(np.abs(self.positions - self.reference), self.times)
                     / (self.times[-1] - self.times[0]))


def field_envelope(samples: np.ndarray) -> np.ndarray:
    """Amplitude of the analytic signal, a smooth stand-in for the pulse envelope."""
    return np.abs(scipy.signal.hilbert(samples))


def _write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(v.item()) for v in row])


def versions() -> dict:
    import numba
    return {"tdoct": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "backend": BACKEND, "platform": platform.platform()}


def run_experiment(cfg: ExperimentConfig, out_dir=None, stride: Optional[int] = None,
                   max_iter: Optional[int] = None, checkpoint_levels=None) -> RunArtifacts:
    """Optimize ``cfg`` and write the series, trace and metadata into ``out_dir``."""
    if max_iter is not None:
        from dataclasses import replace
        cfg = replace(cfg, control=replace(cfg.control, max_iterations=int(max_iter)))
    stride = int(stride or cfg.stride)
    tg = cfg.time_grid
    if stride < 1 or tg.n_steps % stride:
        raise ConfigError(f"output stride {stride} does not divide {tg.n_steps} steps")
    out = Path(out_dir if out_dir is not None else resolve_path(cfg, cfg.output_dir))
    out.mkdir(parents=True, exist_ok=True)

    system = build_system(cfg)
    target = build_target(cfg, system)
    psi0 = initial_state(system)
    storage = choose_storage(system, tg, cfg.control)
    mem = memory_estimate(system, tg, storage)
    log.info("%s: %d steps, storage %s, estimated memory %.2f GiB",
             cfg.name, tg.n_steps, storage, mem / 2**30)
    levels = cfg.checkpoint_levels if checkpoint_levels is None else checkpoint_levels
    ckpt = out / "field.ckpt" if cfg.checkpoint_file else None
    trace = optimize(system, target, psi0, tg, cfg.control, checkpoint_levels=levels,
                     checkpoint_path=ckpt, trajectory_stride=stride)

    traj = trace.trajectory
    times = traj.times
    eig = eigensystem_for(system, cfg)
    occ = occupations_series(traj.amplitudes, eig)
    eps = trace.field.samples[:, 0]
    env = field_envelope(eps)
    files = {}
    files["occupations"] = out / OCCUPATIONS
    _write_csv(files["occupations"], ["t"] + [f"p{i}" for i in range(occ.shape[1])],
               [times] + [occ[:, i] for i in range(occ.shape[1])])
    files["field"] = out / FIELD
    _write_csv(files["field"], ["t", "eps", "abs_eps", "envelope"],
               [times, eps[::stride], np.abs(eps[::stride]), env[::stride]])
    files["functional"] = out / FUNCTIONAL
    recs = trace.records
    cols = ["k", "j1", "j2", "j", "delta_j", "change_next", "change_tilde", "dj_bound",
            "norm_loss"]
    _write_csv(files["functional"], cols,
               [np.array([r.k for r in recs])]
               + [np.array([getattr(r, c) for r in recs], dtype=float) for c in cols[1:]])
    positions = reference = None
    if system.kind == "grid_atom":
        positions = traj.positions()
        header, columns = ["t", "x_mean", "norm"], [times, positions, traj.norms()]
        if isinstance(target.o1, MovingDensity):
            reference = target.o1.r(times)
            header.append("r_target")
            columns.append(reference)
        files["position"] = out / POSITION
        _write_csv(files["position"], header, columns)

    meta = {
        "name": cfg.name,
        "status": trace.status,
        "exit_code": EXIT_CODES[trace.status],
        "message": trace.message,
        "iterations": trace.iterations,
        "final": {k: v for k, v in trace.final.as_dict().items() if k != "wall_time"},
        "monotonic_violations": [[k, dj] for k, dj in trace.monotonic_violations],
        "checkpoints": {f"{lv:g}": _checkpoint_summary(system, psi0, tg, f, eig, stride)
                        for lv, f in sorted(trace.checkpoints.items())},
        "control": control_dict(cfg.control),
        "config": to_ini(cfg),
        "storage": storage,
        "memory_estimate_bytes": mem,
        "fft_count": trace.fft_count,
        "max_abs_field": trace.field.max_abs(),
        "versions": versions(),
        "wall_time": trace.wall_time,
    }
    files["metadata"] = out / METADATA
    with open(files["metadata"], "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return RunArtifacts(out, trace, times, occ, eps[::stride], env[::stride], positions,
                        reference, meta, files)


def _checkpoint_summary(system, psi0, tg, fld, eig, stride) -> dict:
    traj = propagate(psi0, fld, system, tg, stride)
    occ = occupations_series(traj.amplitudes, eig)
    return {"max_abs_field": fld.max_abs(), "final_occupations": occ[-1].tolist()}


def checkpoint_occupations(cfg: ExperimentConfig, fld: ControlField,
                           stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``(t, occupations)`` produced by ``fld`` on the config's system."""
    system = build_system(cfg)
    traj = propagate(initial_state(system), fld, system, cfg.time_grid, stride)
    return traj.times, occupations_series(traj.amplitudes, eigensystem_for(system, cfg))


# ---------------------------------------------------------------------------
# reference trajectory
# ---------------------------------------------------------------------------


def generate_reference_trajectory(cfg: ExperimentConfig, path=None) -> Path:
    """Write ``t r(t)`` columns for the config's reference pulse."""
    if path is None:
        path = (resolve_path(cfg, cfg.reference.output) if cfg.reference.output
                else resolve_path(cfg, cfg.output_dir) / REFERENCE)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t, r = reference_positions(cfg)
    np.savetxt(path, np.column_stack([t, r]), fmt="%.17g",
               header=f"t r  (amplitude={cfg.reference.amplitude!r}, "
                      f"omega={cfg.reference.omega!r}, envelope={cfg.reference.envelope})")
    return path


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    value: float
    status: str
    j1: float = float("nan")
    j2: float = float("nan")
    max_abs_field: float = float("nan")
    iterations: int = 0
    tracking_error: float = float("nan")
    error: str = ""
    directory: str = ""


def _sweep_one(args) -> SweepRow:
    cfg, axis, value, out, stride, max_iter = args
    try:
        run_cfg = with_axis(cfg, axis, value)
        art = run_experiment(run_cfg, out, stride, max_iter)
        try:
            err = art.tracking_error()
        except ValueError:
            err = float("nan")
        return SweepRow(float(value), art.trace.status, art.trace.final.j1, art.trace.final.j2,
                        art.trace.field.max_abs(), art.trace.iterations, err, "", str(out))
    except Exception as exc:  # recorded, the sweep goes on
        log.error("sweep %s=%s failed: %s", axis, value, exc)
        return SweepRow(float(value), "failed", error=f"{type(exc).__name__}: {exc}",
                        directory=str(out))


def run_sweep(cfg: ExperimentConfig, axis: str, values: Sequence[float], out_dir=None,
              stride: Optional[int] = None, max_iter: Optional[int] = None,
              workers: Optional[int] = None) -> list[SweepRow]:
    """One run per value in its own subdirectory, plus ``summary.csv``."""
    values = [float(v) for v in values]
    if not values or not all(np.isfinite(values)):
        raise ConfigError("sweep values must be finite and non-empty")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    out = Path(out_dir if out_dir is not None else resolve_path(cfg, cfg.output_dir))
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, axis, v, out / f"{axis}_{v:g}", stride, max_iter) for v in values]
    if workers == 1 or len(jobs) == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "status", "j1", "j2", "max_abs_field", "iterations",
                    "tracking_error", "error"])
        for r in rows:
            w.writerow([repr(r.value), r.status, repr(r.j1), repr(r.j2), repr(r.max_abs_field),
                        r.iterations, repr(r.tracking_error), r.error])
    return rows


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

GAP_TOL = 0.002
DIPOLE_TOL = 0.01


@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.entries.append((name, bool(ok), detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.entries)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e[1]]

    def table(self) -> str:
        width = max((len(n) for n, _, _ in self.entries), default=4)
        return "\n".join(f"{'PASS' if ok else 'FAIL'}  {n:<{width}}  {d}"
                         for n, ok, d in self.entries)


def validate(cfg: ExperimentConfig, deep: bool = False) -> ValidationReport:
    """Dry-run checks; nothing is optimized."""
    rep = ValidationReport()
    rep.add("config", True, "parsed")
    problems = config_problems(cfg)
    for msg in problems:
        rep.add("config", False, msg)
    if problems:
        return rep
    try:
        system = build_system(cfg)
        tg = cfg.time_grid
        storage = choose_storage(system, tg, cfg.control)
        mem = memory_estimate(system, tg, storage)
        rep.add("memory", mem <= cfg.control.memory_cap,
                f"{mem / 2**30:.2f} GiB with {storage} storage "
                f"(cap {cfg.control.memory_cap / 2**30:.2f} GiB)")
        eig = eigensystem_for(system, cfg)
        gap = eig.energies[1] - eig.energies[0]
        if system.kind == "grid_atom":
            x = system.grid.x
            p01 = abs(np.sum(eig.matrix[1].conj() * x * eig.matrix[0]) * eig.weight)
        else:
            p01 = system.dipole
        rep.add("omega01", abs(gap - TLS_GAP) <= GAP_TOL,
                f"{gap:.6f} (expected {TLS_GAP} +- {GAP_TOL})")
        rep.add("P01", abs(p01 - TLS_DIPOLE) <= DIPOLE_TOL,
                f"{p01:.6f} (expected {TLS_DIPOLE} +- {DIPOLE_TOL})")
        build_target(cfg, system)
        rep.add("target", True, cfg.target.preset)
    except Exception as exc:
        rep.add("build", False, f"{type(exc).__name__}: {exc}")
    if deep:
        from .oracles import run_deep_validation
        for res in run_deep_validation():
            rep.add(f"oracle:{res.name}", res.passed, res.detail)
    return rep
