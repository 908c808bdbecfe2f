"""Target operators ``O(t) = O1(t) + 2T delta(t - T) O2`` and the objective J1.

The final-time term is never discretised as a delta in time: it enters the
objective as ``<psi(T)|O2|psi(T)>**n`` and the adjoint as its final value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .state import (
    GRID,
    BasisMismatchError,
    EigenSystem,
    Grid,
    QuantumState,
    inner_product,
)

QUARTER_NORM = "quarter"
UNIT_NORM = "unit"
DEFAULT_SIGMA = 10.0


def gaussian_prefactor(sigma: float, normalization: str = QUARTER_NORM) -> float:
    """Amplitude of the sharp Gaussian standing in for a delta function.

    ``"quarter"`` uses ``(sigma/pi)**(1/4)``; ``"unit"`` uses ``(sigma/pi)**(1/2)``,
    which integrates to one.
    """
    if normalization == QUARTER_NORM:
        return (sigma / np.pi) ** 0.25
    if normalization == UNIT_NORM:
        return (sigma / np.pi) ** 0.5
    raise ValueError(f"unknown normalization {normalization!r}")


# ---------------------------------------------------------------------------
# follower coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoeffTrajectory:
    """Real level amplitudes ``a_i(t)`` of a wave-function follower."""

    kind: str
    total_time: float
    levels: tuple = (0, 1)
    omega: float = 0.0
    step_times: tuple = ()
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("v_shape", "step", "cosine", "sampled"):
            raise ValueError(f"unknown coefficient preset {self.kind!r}")
        if self.kind != "sampled" and len(self.levels) != 2:
            raise ValueError("presets describe two levels")
        if self.kind == "sampled":
            t = np.asarray(self.times, dtype=float)
            v = np.asarray(self.values)
            if v.ndim != 2 or v.shape != (t.shape[0], len(self.levels)):
                raise ValueError("sampled values must be (n_times, n_levels)")
            norms = np.sum(np.abs(v) ** 2, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-10:
                raise ValueError("follower coefficients must be normalized at every sample")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", v)

    def __call__(self, t) -> np.ndarray:
        """Coefficients at ``t``; shape (n_levels,) or (len(t), n_levels)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        T = self.total_time
        if self.kind == "v_shape":
            p0 = np.clip(np.abs(1.0 - 2.0 * t_arr / T), 0.0, 1.0)
            out = np.stack([np.sqrt(p0), np.sqrt(1.0 - p0)], axis=1)
        elif self.kind == "step":
            t1, t2 = self.step_times or (T / 3.0, 2.0 * T / 3.0)
            p0 = np.where((t_arr >= t1) & (t_arr < t2), 0.0, 1.0)
            out = np.stack([np.sqrt(p0), np.sqrt(1.0 - p0)], axis=1)
        elif self.kind == "cosine":
            out = np.stack([np.cos(self.omega * t_arr), np.sin(self.omega * t_arr)], axis=1)
        else:
            cols = [np.interp(t_arr, self.times, self.values[:, i].real)
                    + 1j * np.interp(t_arr, self.times, self.values[:, i].imag)
                    for i in range(len(self.levels))]
            out = np.stack(cols, axis=1)
            if not np.iscomplexobj(self.values):
                out = out.real
            norm = np.sqrt(np.sum(np.abs(out) ** 2, axis=1, keepdims=True))
            out = out / norm
        return out[0] if np.ndim(t) == 0 else out

    def target_occupations(self, t) -> np.ndarray:
        return np.abs(self(t)) ** 2


def v_shape(total_time: float, levels=(0, 1)) -> CoeffTrajectory:
    return CoeffTrajectory("v_shape", total_time, tuple(levels))


def step_target(total_time: float, t1: float | None = None, t2: float | None = None,
                levels=(0, 1)) -> CoeffTrajectory:
    times = (t1 if t1 is not None else total_time / 3.0,
             t2 if t2 is not None else 2.0 * total_time / 3.0)
    return CoeffTrajectory("step", total_time, tuple(levels), step_times=times)


def cosine_target(total_time: float, omega: float, levels=(0, 1)) -> CoeffTrajectory:
    return CoeffTrajectory("cosine", total_time, tuple(levels), omega=omega)


# ---------------------------------------------------------------------------
# operator pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Follower:
    """``O1(t) = |Phi(t)><Phi(t)|`` with ``Phi = sum_i a_i(t) e^{-i E_i t} |i>``."""

    coeffs: CoeffTrajectory
    eigensystem: EigenSystem

    def __post_init__(self):
        if max(self.coeffs.levels) >= len(self.eigensystem):
            raise IndexError(
                f"follower uses level {max(self.coeffs.levels)} but the eigensystem "
                f"has {len(self.eigensystem)} states")

    def phi_rows(self, times) -> np.ndarray:
        """``Phi(t)`` amplitudes for every time, shape (n_times, dim)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        lv = list(self.coeffs.levels)
        e = self.eigensystem.energies[lv]
        c = self.coeffs(times) * np.exp(-1j * np.outer(times, e))
        return c @ self.eigensystem.matrix[lv]


@dataclass(frozen=True, eq=False)
class MovingDensity:
    """``O1(t) = delta(x - r(t))`` as a sharp Gaussian; ``r`` interpolated linearly."""

    times: np.ndarray
    positions: np.ndarray
    sigma: float = DEFAULT_SIGMA
    normalization: str = QUARTER_NORM

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        if self.times.shape != self.positions.shape or self.times.ndim != 1:
            raise ValueError("trajectory needs matching 1D time and position arrays")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        gaussian_prefactor(self.sigma, self.normalization)

    @classmethod
    def from_file(cls, path, sigma: float = DEFAULT_SIGMA, normalization: str = QUARTER_NORM):
        data = np.loadtxt(path, delimiter=None if _is_whitespace(path) else ",", ndmin=2)
        return cls(data[:, 0], data[:, 1], sigma, normalization)

    def r(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.positions)

    def profile(self, x: np.ndarray, times) -> np.ndarray:
        r = np.atleast_1d(self.r(times))
        pref = gaussian_prefactor(self.sigma, self.normalization)
        return pref * np.exp(-self.sigma * (x[None, :] - r[:, None]) ** 2)


def _is_whitespace(path) -> bool:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                return "," not in line
    return True


@dataclass(frozen=True, eq=False)
class Projector:
    """``O2 = |Phi_f><Phi_f|``."""

    target: QuantumState


@dataclass(frozen=True, eq=False)
class LocalDensity:
    """``O2 = delta(x - x0)`` as a sharp Gaussian."""

    x0: float
    sigma: float = DEFAULT_SIGMA
    normalization: str = QUARTER_NORM


O1Spec = Union[None, Follower, MovingDensity]
O2Spec = Union[None, Projector, LocalDensity]


@dataclass(frozen=True, eq=False)
class TargetSpec:
    o1: O1Spec = None
    o2: O2Spec = None
    exponent: int = 1
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.o1 is None and self.o2 is None:
            raise ValueError("a target needs at least one of o1, o2")
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ValueError("exponent must be a positive integer")

    def with_exponent(self, n: int) -> "TargetSpec":
        if self.is_null:
            return NullTarget(int(n))
        return TargetSpec(self.o1, self.o2, int(n), self.label)

    @property
    def is_null(self) -> bool:
        return False


class NullTarget(TargetSpec):
    """Target with ``O1 = O2 = 0``; only useful as a degenerate test case."""

    def __init__(self, exponent: int = 1):
        object.__setattr__(self, "o1", None)
        object.__setattr__(self, "o2", None)
        object.__setattr__(self, "exponent", exponent)
        object.__setattr__(self, "label", "null")

    @property
    def is_null(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# application to states
# ---------------------------------------------------------------------------


def _weight(basis: str, grid: Grid | None) -> float:
    return grid.dx if basis == GRID else 1.0


def apply_o1_rows(spec: TargetSpec, amps: np.ndarray, times, basis: str,
                  grid: Grid | None) -> tuple[np.ndarray, np.ndarray]:
    """``O1(t_k) psi_k`` and ``<psi_k|O1(t_k)|psi_k>`` for a stack of states."""
    amps = np.atleast_2d(amps)
    o1 = spec.o1
    if o1 is None:
        return np.zeros_like(amps), np.zeros(amps.shape[0])
    w = _weight(basis, grid)
    if isinstance(o1, Follower):
        if o1.eigensystem.states[0].basis != basis or o1.eigensystem.matrix.shape[1] != amps.shape[1]:
            raise BasisMismatchError("follower eigensystem does not match the state basis")
        phi = o1.phi_rows(times)
        ov = np.sum(phi.conj() * amps, axis=1) * w
        return ov[:, None] * phi, np.abs(ov) ** 2
    if basis != GRID:
        raise BasisMismatchError("density targets need grid states")
    g = o1.profile(grid.x, times)
    out = g * amps
    expv = np.sum(g * np.abs(amps) ** 2, axis=1) * w
    return out, expv


class BoundTarget:
    """``O1`` evaluated on a fixed time mesh, with per-time data cached."""

    def __init__(self, spec: TargetSpec, times, basis: str, grid: Grid | None):
        self.spec = spec
        self.times = np.asarray(times, dtype=float)
        self.basis = basis
        self.grid = grid
        self.weight = _weight(basis, grid)
        o1 = spec.o1
        if isinstance(o1, Follower):
            lv = list(o1.coeffs.levels)
            e = o1.eigensystem.energies[lv]
            self._coef = o1.coeffs(self.times) * np.exp(-1j * np.outer(self.times, e))
            self._vecs = o1.eigensystem.matrix[lv]
        elif isinstance(o1, MovingDensity):
            if basis != GRID:
                raise BasisMismatchError("density targets need grid states")
            self._r = o1.r(self.times)
            self._pref = gaussian_prefactor(o1.sigma, o1.normalization)

    def rows(self, k0: int, k1: int, amps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``O1 psi`` and ``<O1>`` for mesh indices ``k0 <= k < k1``."""
        o1 = self.spec.o1
        if o1 is None:
            return np.zeros_like(amps), np.zeros(amps.shape[0])
        if isinstance(o1, Follower):
            if self._vecs.shape[1] != amps.shape[1]:
                raise BasisMismatchError("follower eigensystem does not match the state basis")
            coef = self._coef[k0:k1]
            proj = amps @ self._vecs.conj().T * self.weight
            ov = np.sum(coef.conj() * proj, axis=1)
            return (ov[:, None] * coef) @ self._vecs, np.abs(ov) ** 2
        x = self.grid.x
        g = self._pref * np.exp(-o1.sigma * (x[None, :] - self._r[k0:k1, None]) ** 2)
        return g * amps, np.sum(g * np.abs(amps) ** 2, axis=1) * self.weight

    def expectations(self, amps: np.ndarray, chunk: int = 2000) -> np.ndarray:
        out = np.empty(amps.shape[0])
        for i in range(0, amps.shape[0], chunk):
            j = min(i + chunk, amps.shape[0])
            _, out[i:j] = self.rows(i, j, amps[i:j])
        return out


def apply_o1(spec: TargetSpec, psi: QuantumState, t: float) -> QuantumState:
    """``O1(t) psi``; the zero state when the target has no ``O1`` part."""
    out, _ = apply_o1_rows(spec, psi.amplitudes[None, :], [t], psi.basis, psi.grid)
    return psi.with_amplitudes(out[0])


def expectation_o1(spec: TargetSpec, psi: QuantumState, t: float) -> float:
    return float(inner_product(psi, apply_o1(spec, psi, t)).real)


def apply_o2(spec: TargetSpec, psi: QuantumState) -> QuantumState:
    o2 = spec.o2
    if o2 is None:
        return QuantumState.zeros_like(psi)
    if isinstance(o2, Projector):
        return o2.target * inner_product(o2.target, psi)
    if psi.basis != GRID:
        raise BasisMismatchError("local density targets need grid states")
    pref = gaussian_prefactor(o2.sigma, o2.normalization)
    return psi.with_amplitudes(pref * np.exp(-o2.sigma * (psi.grid.x - o2.x0) ** 2) * psi.amplitudes)


def expectation_o2(spec: TargetSpec, psi: QuantumState) -> float:
    return float(inner_product(psi, apply_o2(spec, psi)).real)


def follower_state(traj: CoeffTrajectory, t: float, eig: EigenSystem) -> QuantumState:
    follower = Follower(traj, eig)
    ref = eig.states[0]
    return ref.with_amplitudes(follower.phi_rows([t])[0], t)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def trapezoid_weights(n_samples: int, h: float) -> np.ndarray:
    w = np.full(n_samples, h)
    w[0] = w[-1] = 0.5 * h
    return w


def o1_expectations(spec: TargetSpec, amps: np.ndarray, times, basis: str,
                    grid: Grid | None, chunk: int = 2000) -> np.ndarray:
    out = np.empty(amps.shape[0])
    for i in range(0, amps.shape[0], chunk):
        _, out[i:i + chunk] = apply_o1_rows(spec, amps[i:i + chunk], times[i:i + chunk], basis, grid)
    return out


def j1_from_expectations(o1_values: np.ndarray, o2_value: float, total_time: float,
                         exponent: int) -> float:
    """Trapezoid ``(1/T) int <O1>^n dt`` plus ``<O2>^n``."""
    h = total_time / (len(o1_values) - 1)
    vals = np.clip(o1_values, 0.0, None) ** exponent
    return float(np.dot(trapezoid_weights(len(o1_values), h), vals) / total_time
                 + max(o2_value, 0.0) ** exponent)


def j1_value(spec: TargetSpec, trajectory, total_time: float | None = None) -> float:
    """Objective ``J1`` of a stored trajectory covering ``[0, T]``."""
    times = np.asarray(trajectory.times)
    if len(times) < 2 or abs(times[0]) > 1e-12:
        raise ValueError("trajectory must start at t = 0 and hold at least two samples")
    T = float(times[-1])
    if total_time is not None and abs(T - total_time) > 1e-9 * max(1.0, total_time):
        raise ValueError(f"trajectory ends at {T}, expected {total_time}")
    if len(trajectory.amplitudes) != len(times):
        raise ValueError("trajectory amplitudes and times differ in length")
    if spec.is_null:
        return 0.0
    o1 = o1_expectations(spec, trajectory.amplitudes, times, trajectory.basis, trajectory.grid)
    o2 = expectation_o2(spec, trajectory.final) if spec.o2 is not None else 0.0
    return j1_from_expectations(o1, o2, T, spec.exponent)
