"""The (eta, gamma) iteration with immediate field feedback.

One iteration::

    chi(T) <- Psi(T)              backward under eps_tilde, eps_tilde from (eta, chi, Psi_old)
    Psi(0) -> Psi_new(T)          forward  under eps_new,   eps_new   from (gamma, chi, Psi_new)

Fields produced by the sweeps are held constant over each propagation step
(``"step"`` sampling) and the fluence is the matching rectangle sum, so the
discrete objective is exactly the quantity the sweeps ascend.
"""
from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .propagation import StateTrajectory, _half_kinetic, _require, make_stepper
from .state import GRID, STEP, ControlField, QuantumState, TimeGrid, inner_product
from .targets import (
    BoundTarget,
    TargetSpec,
    apply_o2,
    expectation_o2,
    j1_from_expectations,
    trapezoid_weights,
)

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
MONOTONICITY_ABORT = "monotonicity_abort"

MIDPOINT = "midpoint"
START = "start"

GiB = 2**30

FULL = "full"
SEGMENTS = "segments"
AUTO = "auto"
SEGMENT_STEPS = 2000


class MemoryLimitError(MemoryError):
    pass


@dataclass(frozen=True)
class ControlParams:
    alpha: float
    eta: float = 1.0
    gamma: float = 1.0
    exponent: Optional[int] = None
    max_iterations: int = 500
    dj_threshold: float = 1e-8
    initial_field: float = 1e-4
    feedback: str = MIDPOINT
    n_corrector: int = 3
    tol_mono: float = 1e-9
    max_violation_fraction: float = 0.1
    memory_cap: float = 4 * GiB
    storage: str = AUTO

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        for name in ("eta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 2.0:
                raise ValueError(f"{name} must lie in [0, 2], got {v}")
        if self.exponent is not None and (int(self.exponent) != self.exponent or self.exponent < 1):
            raise ValueError("exponent must be a positive integer")
        if self.feedback not in (MIDPOINT, START):
            raise ValueError(f"feedback must be {MIDPOINT!r} or {START!r}")
        if self.storage not in (AUTO, FULL, SEGMENTS):
            raise ValueError(f"unknown storage mode {self.storage!r}")
        if self.max_iterations < 0 or self.n_corrector < 0:
            raise ValueError("iteration counts must be non-negative")

    @property
    def corrector_passes(self) -> int:
        return self.n_corrector if self.feedback == MIDPOINT else 0


@dataclass
class IterationRecord:
    k: int
    j1: float
    j2: float
    j: float
    delta_j: float = float("nan")
    change_next: float = 0.0
    change_tilde: float = 0.0
    dj_bound: float = 0.0
    norm_loss: float = 0.0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizationTrace:
    records: list[IterationRecord] = dc_field(default_factory=list)
    monotonic_violations: list[tuple[int, float]] = dc_field(default_factory=list)
    status: str = MAX_ITERATIONS
    field: Optional[ControlField] = None
    trajectory: Optional[StateTrajectory] = None
    checkpoints: dict = dc_field(default_factory=dict)
    fft_count: int = 0
    wall_time: float = 0.0
    message: str = ""

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return self.records[-1].k if self.records else 0

    def delta_j(self) -> np.ndarray:
        return np.array([r.delta_j for r in self.records[1:]])


# ---------------------------------------------------------------------------
# pointwise field formulas
# ---------------------------------------------------------------------------


def _dipole_apply(system, psi: QuantumState) -> QuantumState:
    if system.kind == "two_level":
        return psi.with_amplitudes(system.dipole_matrix() @ psi.amplitudes)
    return psi.with_amplitudes(system.grid.x * psi.amplitudes)


def field_from_adjoint(chi: QuantumState, psi: QuantumState, system, alpha: float) -> float:
    """``-Im<chi|mu|psi> / alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return -inner_product(chi, _dipole_apply(system, psi)).imag / alpha


def update_field_tilde(eps: float, chi: QuantumState, psi: QuantumState, system,
                       params: ControlParams) -> float:
    eta = params.eta
    if eta == 0.0:
        return float(eps)
    return (1.0 - eta) * eps + eta * field_from_adjoint(chi, psi, system, params.alpha)


def update_field_next(eps_tilde: float, chi: QuantumState, psi_next: QuantumState, system,
                      params: ControlParams) -> float:
    gamma = params.gamma
    if gamma == 0.0:
        return float(eps_tilde)
    return (1.0 - gamma) * eps_tilde + gamma * field_from_adjoint(chi, psi_next, system, params.alpha)


def appendix_bound(params: ControlParams, change_next: float, change_tilde: float) -> float:
    """``alpha (2/gamma - 1)|eps_new - eps_t|^2 + alpha (2/eta - 1)|eps - eps_t|^2``.

    A zero mixing parameter leaves its field unchanged, so its term is zero.
    """
    b = 0.0
    if params.gamma > 0:
        b += params.alpha * (2.0 / params.gamma - 1.0) * change_next
    if params.eta > 0:
        b += params.alpha * (2.0 / params.eta - 1.0) * change_tilde
    return b


# ---------------------------------------------------------------------------
# sweep engine
# ---------------------------------------------------------------------------


def memory_estimate(system, time_grid: TimeGrid, storage: str = FULL,
                    segment: int = SEGMENT_STEPS) -> int:
    """Bytes held by one run: adjoint trajectory, state storage and work buffers.

    ``"full"`` keeps every state; ``"segments"`` keeps one state per segment and
    recomputes the segment during the backward sweep.
    """
    dim = system.dim
    n = time_grid.n_steps
    seg = min(n, segment)
    adjoint = n * dim * 16
    if storage == FULL:
        states = (n + 1) * dim * 16
    else:
        states = (n // seg + 2) * dim * 16 + (seg + 1) * dim * 16
    buffers = 2 * seg * dim * 16 + 6 * 8 * (n + 1)
    return int(adjoint + states + buffers)


def choose_storage(system, time_grid: TimeGrid, params: "ControlParams") -> str:
    if params.storage != AUTO:
        return params.storage
    if memory_estimate(system, time_grid, FULL) <= params.memory_cap:
        return FULL
    return SEGMENTS


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Adjoint data kept from a backward sweep.

    ``raw[k]`` is what the forward sweep needs at step ``k``: ``M chi_{k+1}``
    for level systems and ``K^dagger M chi_{k+1}`` for grid systems.
    """

    raw: np.ndarray
    chi0: np.ndarray
    system: object
    dt: float

    def states(self) -> np.ndarray:
        """``chi`` at ``t_0 .. t_N`` (after the mask for ``k >= 1``)."""
        n = self.raw.shape[0]
        out = np.empty((n + 1, self.raw.shape[1]), dtype=complex)
        out[0] = self.chi0
        if self.system.kind == "two_level":
            out[1:] = self.raw
        else:
            kh = _half_kinetic(self.system, self.dt)
            out[1:] = np.fft.ifft(kh * np.fft.fft(self.raw, axis=1), axis=1)
        return out


class ControlProblem:
    """Buffers and segment-wise sweeps for one optimization run."""

    def __init__(self, system, target: TargetSpec, psi0: QuantumState, time_grid: TimeGrid,
                 params: ControlParams, segment: int = SEGMENT_STEPS):
        _require(psi0, system)
        self.system = system
        self.params = params
        self.target = target if params.exponent is None else target.with_exponent(params.exponent)
        self.psi0 = psi0
        self.time_grid = time_grid
        self.dt = time_grid.dt
        self.n_steps = n = time_grid.n_steps
        self.total_time = time_grid.total_time
        self.storage = choose_storage(system, time_grid, params)
        need = memory_estimate(system, time_grid, self.storage, segment)
        log.info("memory estimate (%s storage): %.3f GiB", self.storage, need / GiB)
        if need > params.memory_cap:
            raise MemoryLimitError(
                f"run needs about {need / GiB:.2f} GiB, above the cap of "
                f"{params.memory_cap / GiB:.2f} GiB; raise memory_cap or shrink the grid")
        self.stepper = make_stepper(system, self.dt)
        dim = system.dim
        self.bounds = [(k0, min(k0 + segment, n)) for k0 in range(0, n, segment)]
        if self.storage == FULL:
            self.psi_traj = np.empty((n + 1, dim), dtype=complex)
        else:
            self.psi_traj = None
            self._marks = np.empty((len(self.bounds) + 1, dim), dtype=complex)
            self._buf = np.empty((segment + 1, dim), dtype=complex)
        self.a_traj = np.empty((n, dim), dtype=complex)
        self.o1_values = np.zeros(n + 1)
        self.psi_final = np.array(psi0.amplitudes)
        self.weights = trapezoid_weights(n + 1, self.dt)
        self.basis = psi0.basis
        self.grid = psi0.grid
        self._psi0 = np.ascontiguousarray(psi0.amplitudes)
        self.bound = BoundTarget(self.target, time_grid.times, self.basis, self.grid)

    @property
    def exponent(self) -> int:
        return self.target.exponent

    def make_field(self, eps_steps: np.ndarray) -> ControlField:
        s = np.empty(self.n_steps + 1)
        s[:-1] = eps_steps
        s[-1] = eps_steps[-1]
        return ControlField(s, self.dt, STEP)

    # --- target pieces ----------------------------------------------------

    def source(self, k0: int, k1: int, states: np.ndarray) -> np.ndarray:
        """``(w_k/T) n <O1>^(n-1) O1 psi_k`` for ``k0 <= k < k1``; ``states[0]`` is ``psi_k0``."""
        if self.target.o1 is None:
            return np.zeros((k1 - k0, states.shape[1]), dtype=complex)
        o1psi, expv = self.bound.rows(k0, k1, states[:k1 - k0])
        n = self.exponent
        fac = self.weights[k0:k1] / self.total_time * n * np.clip(expv, 0.0, None) ** (n - 1)
        o1psi *= fac[:, None]
        return o1psi

    def terminal(self, psi_end: np.ndarray) -> np.ndarray:
        """Adjoint at ``T``: endpoint share of the ``O1`` source plus the ``O2`` term."""
        n_exp = self.exponent
        chi = np.zeros_like(psi_end)
        if self.target.o1 is not None:
            chi += self.source(self.n_steps, self.n_steps + 1, psi_end[None])[0]
        if self.target.o2 is not None:
            st = self.psi0.with_amplitudes(psi_end, self.total_time)
            o2 = expectation_o2(self.target, st)
            chi += n_exp * max(o2, 0.0) ** (n_exp - 1) * apply_o2(self.target, st).amplitudes
        return chi

    # --- state storage ----------------------------------------------------

    def _segment_buffer(self, j: int) -> np.ndarray:
        k0, k1 = self.bounds[j]
        if self.storage == FULL:
            return self.psi_traj[k0:k1 + 1]
        return self._buf[:k1 - k0 + 1]

    def _after_segment(self, j: int, states: np.ndarray) -> None:
        k0, k1 = self.bounds[j]
        if self.target.o1 is not None:
            _, self.o1_values[k0:k1 + 1] = self.bound.rows(k0, k1 + 1, states)
        if self.storage == SEGMENTS:
            self._marks[j + 1] = states[-1]

    def _states(self, j: int, eps: np.ndarray) -> np.ndarray:
        """States of segment ``j``; recomputed from its first state when not stored."""
        if self.storage == FULL:
            return self._segment_buffer(j)
        k0, k1 = self.bounds[j]
        out = self._segment_buffer(j)
        out[:] = self.stepper.propagate(self._marks[j], eps[k0:k1], 1, True)
        return out

    # --- sweeps -----------------------------------------------------------

    def propagate(self, field: ControlField) -> None:
        eps = field.step_values()
        if self.storage == SEGMENTS:
            self._marks[0] = self._psi0
        start = self._psi0
        for j, (k0, k1) in enumerate(self.bounds):
            buf = self._segment_buffer(j)
            buf[:] = self.stepper.propagate(start, eps[k0:k1], 1, True)
            self._after_segment(j, buf)
            start = buf[-1]
        self.psi_final = np.array(start)

    def backward(self, eps_old: np.ndarray, lam: float, n_corr: int | None = None
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Backward sweep along the stored states; fills ``a_traj``.

        Returns ``(eps_tilde, coupling, chi(0))``.
        """
        eps_old = np.ascontiguousarray(eps_old, dtype=float)
        n_corr = self.params.corrector_passes if n_corr is None else n_corr
        eps = np.empty(self.n_steps)
        coup = np.empty(self.n_steps)
        chi = self.terminal(self.psi_final)
        for j in range(len(self.bounds) - 1, -1, -1):
            k0, k1 = self.bounds[j]
            states = self._states(j, eps_old)
            src = self.source(k0, k1, states)
            e, c, chi = self.stepper.backward(chi, states, src, eps_old[k0:k1],
                                              self.params.alpha, lam, n_corr,
                                              self.a_traj[k0:k1])
            eps[k0:k1] = e
            coup[k0:k1] = c
        return eps, coup, chi

    def forward(self, eps_ref: np.ndarray, lam: float) -> np.ndarray:
        eps_ref = np.ascontiguousarray(eps_ref, dtype=float)
        eps = np.empty(self.n_steps)
        start = self._psi0
        for j, (k0, k1) in enumerate(self.bounds):
            buf = self._segment_buffer(j)
            e, _ = self.stepper.forward(start, self.a_traj[k0:k1], eps_ref[k0:k1],
                                        self.params.alpha, lam, self.params.corrector_passes, buf)
            if j == 0 and not np.array_equal(buf[0], self._psi0):
                raise AssertionError("forward sweep must start from the shared initial state")
            eps[k0:k1] = e
            self._after_segment(j, buf)
            start = buf[-1]
        self.psi_final = np.array(start)
        return eps

    def coupling(self, eps: np.ndarray) -> np.ndarray:
        """Discrete ``Im<chi|mu|psi>`` per step, adjoint propagated under ``eps`` itself."""
        _, coup, _ = self.backward(eps, 0.0, 0)
        return coup

    # --- bookkeeping ------------------------------------------------------

    def trajectory(self, field: ControlField | None = None, stride: int = 1) -> StateTrajectory:
        times = self.time_grid.times[::stride]
        if self.storage == FULL:
            amps = self.psi_traj[::stride].copy()
        else:
            amps = self.stepper.propagate(self._psi0, field.step_values(), stride, True)
        return StateTrajectory(times, amps, self.basis, self.grid, stride, field)

    def j1(self) -> float:
        if self.target.is_null:
            return 0.0
        o2 = 0.0
        if self.target.o2 is not None:
            o2 = expectation_o2(self.target, self.psi0.with_amplitudes(self.psi_final))
        return j1_from_expectations(self.o1_values, o2, self.total_time, self.exponent)

    def functionals(self, field: ControlField) -> tuple[float, float, float]:
        j1 = self.j1()
        j2 = -self.params.alpha * field.fluence()
        return j1, j2, j1 + j2

    def norm_loss(self) -> float:
        w = self.grid.dx if self.basis == GRID else 1.0
        n0 = np.sum(np.abs(self._psi0) ** 2) * w
        n1 = np.sum(np.abs(self.psi_final) ** 2) * w
        return float(n0 - n1)


def functional_values(trajectory: StateTrajectory, field: ControlField, target: TargetSpec,
                      params: ControlParams) -> tuple[float, float, float]:
    """``(J1, J2, J)`` for a stored trajectory and the field that produced it."""
    from .targets import j1_value

    tgt = target if params.exponent is None else target.with_exponent(params.exponent)
    j1 = j1_value(tgt, trajectory)
    j2 = -params.alpha * field.fluence()
    return j1, j2, j1 + j2


def _as_field(initial, time_grid: TimeGrid) -> ControlField:
    if isinstance(initial, ControlField):
        if initial.n_steps != time_grid.n_steps:
            raise ValueError("initial field does not match the time grid")
        if initial.sampling != STEP:
            s = np.empty_like(initial.samples[:, 0])
            s[:-1] = initial.step_values()
            s[-1] = s[-2]
            return ControlField(s, initial.dt, STEP)
        return initial
    return ControlField.constant(float(initial), time_grid)


# ---------------------------------------------------------------------------
# public sweeps
# ---------------------------------------------------------------------------


def backward_sweep(psi_traj: StateTrajectory, field: ControlField, target: TargetSpec,
                   params: ControlParams, system, psi0: QuantumState | None = None
                   ) -> tuple[AdjointTrajectory, ControlField]:
    """Backward sweep along a complete stride-1 trajectory; returns ``(chi, eps_tilde)``."""
    n = field.n_steps
    if psi_traj.stride != 1 or len(psi_traj) != n + 1:
        raise ValueError("backward sweep needs every state sample on [0, T]")
    tg = TimeGrid(field.dt, n)
    start = psi_traj.state(0) if psi0 is None else psi0
    prob = ControlProblem(system, target, start, tg, replace(params, storage=FULL))
    prob.psi_traj[:] = psi_traj.amplitudes
    prob.psi_final = np.array(psi_traj.amplitudes[-1])
    eps, _, chi0 = prob.backward(_as_field(field, tg).step_values(), params.eta)
    adj = AdjointTrajectory(prob.a_traj.copy(), chi0, system, field.dt)
    return adj, prob.make_field(eps)


def forward_sweep(psi0: QuantumState, chi: AdjointTrajectory, eps_tilde: ControlField,
                  params: ControlParams, system, target: TargetSpec | None = None
                  ) -> tuple[StateTrajectory, ControlField]:
    """Forward sweep with ``gamma`` feedback against a stored adjoint."""
    n = eps_tilde.n_steps
    if chi.raw.shape[0] != n:
        raise ValueError("adjoint trajectory does not cover the field's time grid")
    tg = TimeGrid(eps_tilde.dt, n)
    _require(psi0, system)
    stepper = make_stepper(system, tg.dt)
    psi_traj = np.empty((n + 1, system.dim), dtype=complex)
    eps, _ = stepper.forward(np.ascontiguousarray(psi0.amplitudes), chi.raw,
                             _as_field(eps_tilde, tg).step_values(), params.alpha,
                             params.gamma, params.corrector_passes, psi_traj)
    s = np.append(eps, eps[-1])
    fld = ControlField(s, tg.dt, STEP)
    return StateTrajectory(tg.times, psi_traj, psi0.basis, psi0.grid, 1, fld), fld


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def optimize(system, target: TargetSpec, psi0: QuantumState, time_grid: TimeGrid,
             params: ControlParams, *, initial_field: ControlField | None = None,
             checkpoint_levels: Sequence[float] = (), checkpoint_path=None,
             resume_from=None, callback: Callable | None = None,
             start_iteration: int = 0, trajectory_stride: int = 1) -> OptimizationTrace:
    """Iterate backward/forward sweeps until ``|dJ| < dj_threshold`` or the budget runs out.

    ``checkpoint_levels`` stores a copy of the first field whose ``J1`` reaches
    each level. ``checkpoint_path`` writes the current field after every
    iteration; ``resume_from`` restarts from such a file. The returned
    trajectory keeps every ``trajectory_stride``-th state.
    """
    t_start = time.perf_counter()
    prob = ControlProblem(system, target, psi0, time_grid, params)
    if resume_from is not None:
        fld, start_iteration, _ = load_checkpoint(resume_from)
        if fld.n_steps != time_grid.n_steps or abs(fld.dt - time_grid.dt) > 1e-15:
            raise ValueError("checkpoint does not match the time grid")
    else:
        fld = _as_field(initial_field if initial_field is not None else params.initial_field,
                        time_grid)
    eps = fld.step_values()
    trace = OptimizationTrace()
    fwd, bwd = make_stepper(system, time_grid.dt).ffts_per_step
    levels = sorted(checkpoint_levels)

    def note_levels(j1, field_):
        for lv in levels:
            if lv not in trace.checkpoints and j1 >= lv:
                trace.checkpoints[lv] = field_

    prob.propagate(fld)
    trace.fft_count += fwd * prob.n_steps
    j1, j2, j = prob.functionals(fld)
    rec = IterationRecord(start_iteration, j1, j2, j, norm_loss=prob.norm_loss(),
                          wall_time=time.perf_counter() - t_start)
    trace.records.append(rec)
    note_levels(j1, fld)
    if callback:
        callback(rec, fld, prob)
    log.info("iteration %d: J1=%.8f J2=%.3e J=%.10f", rec.k, j1, j2, j)

    status = MAX_ITERATIONS
    for it in range(params.max_iterations):
        t0 = time.perf_counter()
        k = start_iteration + it + 1
        eps_t, _, _ = prob.backward(eps, params.eta)
        eps_new = prob.forward(eps_t, params.gamma)
        trace.fft_count += (fwd + bwd) * prob.n_steps
        new_field = prob.make_field(eps_new)
        j1, j2, j = prob.functionals(new_field)
        dt = prob.dt
        ch_next = float(dt * np.sum((eps_new - eps_t) ** 2))
        ch_tilde = float(dt * np.sum((eps - eps_t) ** 2))
        dj = j - trace.records[-1].j
        rec = IterationRecord(k, j1, j2, j, dj, ch_next, ch_tilde,
                              appendix_bound(params, ch_next, ch_tilde), prob.norm_loss(),
                              time.perf_counter() - t0)
        trace.records.append(rec)
        eps, fld = eps_new, new_field
        note_levels(j1, fld)
        if dj < -params.tol_mono:
            trace.monotonic_violations.append((k, dj))
            log.warning("iteration %d: functional decreased by %.3e", k, -dj)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, fld, k, (j1, j2, j))
        if callback:
            callback(rec, fld, prob)
        log.info("iteration %d: J1=%.8f J2=%.3e J=%.10f dJ=%.3e", k, j1, j2, j, dj)
        if abs(dj) < params.dj_threshold:
            status = CONVERGED
            break
        n_done = it + 1
        if n_done >= 10 and len(trace.monotonic_violations) > params.max_violation_fraction * n_done:
            status = MONOTONICITY_ABORT
            trace.message = (
                f"{len(trace.monotonic_violations)} of {n_done} iterations decreased J "
                f"(worst {min(v for _, v in trace.monotonic_violations):.3e}); "
                "the propagation is too inaccurate for this time step")
            log.error(trace.message)
            break

    trace.status = status
    trace.field = fld
    trace.trajectory = prob.trajectory(fld, trajectory_stride)
    trace.wall_time = time.perf_counter() - t_start
    return trace


# ---------------------------------------------------------------------------
# gradient and stationarity diagnostics
# ---------------------------------------------------------------------------


def analytic_gradient(system, target: TargetSpec, psi0: QuantumState, field: ControlField,
                      params: ControlParams) -> np.ndarray:
    """``dJ/d eps_k`` for each step value of a step-sampled field.

    The state runs forward under the fixed field, the adjoint backward under
    the same field; ``dJ/d eps_k = -2 dt (Im<chi|mu|psi>_k + alpha eps_k)``.
    """
    tg = TimeGrid(field.dt, field.n_steps)
    prob = ControlProblem(system, target, psi0, tg, params)
    fld = _as_field(field, tg)
    prob.propagate(fld)
    eps = fld.step_values()
    coup = prob.coupling(eps)
    return -2.0 * tg.dt * (coup + params.alpha * eps)


def stationarity_residual(system, target: TargetSpec, psi0: QuantumState,
                          field: ControlField, params: ControlParams) -> float:
    """``max_t |alpha eps + Im<chi|mu|psi>|`` for a fixed field."""
    g = analytic_gradient(system, target, psi0, field, params)
    return float(np.max(np.abs(g)) / (2.0 * field.dt))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"TDOCTCKP"
_VERSION = 1
_HEADER = struct.Struct("<8sIIQQd3d")


def save_checkpoint(path, field: ControlField, iteration: int, values=(0.0, 0.0, 0.0)) -> None:
    """Little-endian binary: header (magic, version, components, steps, iteration, dt, J1, J2, J)
    followed by the field samples as float64."""
    path = Path(path)
    head = _HEADER.pack(_MAGIC, _VERSION, field.n_components, field.n_steps, int(iteration),
                        field.dt, *map(float, values))
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(field.samples, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ControlField, int, tuple[float, float, float]]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("checkpoint file is truncated")
    magic, version, ncomp, nsteps, iteration, dt, j1, j2, j = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a checkpoint file")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != (nsteps + 1) * ncomp:
        raise ValueError("checkpoint body has the wrong length")
    samples = body.reshape(nsteps + 1, ncomp).astype(float)
    return ControlField(samples, dt, STEP), int(iteration), (j1, j2, j)
