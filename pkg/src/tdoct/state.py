"""Quantum states on a uniform periodic 1D grid or in a finite level basis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GRID = "grid"
LEVELS = "levels"


class BasisMismatchError(ValueError):
    """Two states (or a state and an operator) live in different bases."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid, ``x_i = x_min + i*dx`` for ``i < n_points``."""

    x_min: float = -150.0
    x_max: float = 150.0
    n_points: int = 2048

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        """Angular wave numbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 1:
            raise ValueError("need dt > 0 and n_steps >= 1")

    @classmethod
    def from_total(cls, total_time: float, dt: float, rtol: float = 1e-9) -> "TimeGrid":
        n = round(total_time / dt)
        if n < 1 or abs(n * dt - total_time) > rtol * max(total_time, 1.0):
            raise ValueError(
                f"total time {total_time} is not an integer multiple of dt={dt}")
        return cls(dt=dt, n_steps=int(n))

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class QuantumState:
    amplitudes: np.ndarray
    basis: str = LEVELS
    time: float = 0.0
    grid: Grid | None = None

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1:
            raise ValueError("amplitudes must be a vector")
        if self.basis not in (GRID, LEVELS):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.basis == GRID:
            if self.grid is None:
                raise ValueError("grid-basis states need their grid")
            if amps.shape[0] != self.grid.n_points:
                raise ValueError("amplitude length does not match grid")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def weight(self) -> float:
        """Quadrature weight of the inner product."""
        return self.grid.dx if self.basis == GRID else 1.0

    def __len__(self):
        return self.amplitudes.shape[0]

    def with_amplitudes(self, amplitudes, time=None) -> "QuantumState":
        return QuantumState(amplitudes, self.basis,
                            self.time if time is None else time, self.grid)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self).real))

    def normalized(self) -> "QuantumState":
        return self.with_amplitudes(self.amplitudes / self.norm())

    def __add__(self, other):
        _check_compatible(self, other)
        return self.with_amplitudes(self.amplitudes + other.amplitudes)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.with_amplitudes(self.amplitudes - other.amplitudes)

    def __mul__(self, scalar):
        return self.with_amplitudes(self.amplitudes * scalar)

    __rmul__ = __mul__

    @classmethod
    def zeros_like(cls, other: "QuantumState") -> "QuantumState":
        return other.with_amplitudes(np.zeros_like(other.amplitudes))


def level_state(coeffs: Sequence[complex], time: float = 0.0) -> QuantumState:
    return QuantumState(np.asarray(coeffs, dtype=complex), LEVELS, time)


def grid_state(grid: Grid, values, time: float = 0.0) -> QuantumState:
    return QuantumState(np.asarray(values, dtype=complex), GRID, time, grid)


def gaussian_packet(grid: Grid, center: float, width: float, k0: float = 0.0) -> QuantumState:
    """Normalized Gaussian ``exp(-(x-center)^2 / (2 width^2) + i k0 x)``."""
    x = grid.x
    psi = np.exp(-((x - center) ** 2) / (2 * width**2) + 1j * k0 * x)
    return grid_state(grid, psi).normalized()


def _check_compatible(a: QuantumState, b: QuantumState):
    if a.basis != b.basis or len(a) != len(b):
        raise BasisMismatchError(
            f"cannot combine {a.basis}[{len(a)}] with {b.basis}[{len(b)}]")
    if a.basis == GRID and a.grid != b.grid:
        raise BasisMismatchError("states live on different grids")


def inner_product(a: QuantumState, b: QuantumState) -> complex:
    """<a|b>, conjugate-linear in ``a``; grid states carry the dx weight."""
    _check_compatible(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.weight)


def expectation_position(psi: QuantumState, grid: Grid | None = None) -> float:
    if psi.basis != GRID:
        raise BasisMismatchError("position expectation needs a grid-basis state")
    grid = grid or psi.grid
    return float(np.sum(grid.x * np.abs(psi.amplitudes) ** 2) * grid.dx)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Orthonormal eigenstates of a field-free Hamiltonian, lowest first."""

    states: list[QuantumState]
    energies: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "energies", np.asarray(self.energies, dtype=float))

    def __len__(self):
        return len(self.states)

    @property
    def matrix(self) -> np.ndarray:
        """Eigenvectors stacked as rows, shape (n_states, dim)."""
        return np.array([s.amplitudes for s in self.states])

    @property
    def weight(self) -> float:
        return self.states[0].weight

    def overlap_matrix(self) -> np.ndarray:
        m = self.matrix
        return m.conj() @ m.T * self.weight


def occupations(psi: QuantumState, eig: EigenSystem) -> np.ndarray:
    """``p_n = |<n|psi>|^2`` for every state of ``eig``."""
    if psi.basis != eig.states[0].basis or len(psi) != len(eig.states[0]):
        raise BasisMismatchError("state and eigensystem bases differ")
    amps = eig.matrix.conj() @ psi.amplitudes * eig.weight
    return np.abs(amps) ** 2


def occupations_series(amplitudes: np.ndarray, eig: EigenSystem) -> np.ndarray:
    """Occupations for a stack of amplitude vectors, shape (n_times, n_states)."""
    return np.abs(amplitudes @ eig.matrix.conj().T * eig.weight) ** 2


def levels_eigensystem(energies: Sequence[float]) -> EigenSystem:
    """Canonical basis vectors of a diagonal level Hamiltonian."""
    n = len(energies)
    states = [level_state(np.eye(n)[i]) for i in range(n)]
    return EigenSystem(states, np.asarray(energies, dtype=float), np.zeros(n))


STEP = "step"
NODE = "node"


@dataclass(frozen=True, eq=False)
class ControlField:
    """Time-sampled electric field, ``samples[k, j]`` at ``t_k = k*dt``.

    ``sampling`` fixes how the samples drive the propagation:

    * ``"node"``: values at the mesh nodes; step ``k`` uses the midpoint
      average ``(e_k + e_{k+1})/2`` and the fluence is a trapezoid sum.
    * ``"step"``: ``samples[k]`` is held over ``[t_k, t_{k+1})``. This is what
      the optimizer produces; the last sample is the feedback value at ``T``
      and carries no weight.
    """

    samples: np.ndarray
    dt: float
    sampling: str = NODE

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] not in (1, 3) or s.shape[0] < 2:
            raise ValueError(f"field samples must be (n_steps+1, 1|3), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("field samples contain NaN/Inf")
        if self.sampling not in (STEP, NODE):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def constant(cls, value: float, time_grid: TimeGrid, n_components: int = 1,
                 sampling: str = STEP) -> "ControlField":
        s = np.zeros((time_grid.n_steps + 1, n_components))
        s[:, 0] = value
        return cls(s, time_grid.dt, sampling)

    @classmethod
    def from_function(cls, func, time_grid: TimeGrid) -> "ControlField":
        return cls(np.asarray(func(time_grid.times), dtype=float), time_grid.dt, NODE)

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def n_components(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def step_values(self, component: int = 0) -> np.ndarray:
        """Value held on each of the ``n_steps`` propagation steps."""
        s = self.samples[:, component]
        if self.sampling == STEP:
            return s[:-1].copy()
        return 0.5 * (s[:-1] + s[1:])

    def fluence(self) -> float:
        """``int eps^2 dt`` summed over components."""
        sq = np.sum(self.samples**2, axis=1)
        if self.sampling == STEP:
            return float(self.dt * np.sum(sq[:-1]))
        return float(self.dt * (np.sum(sq) - 0.5 * (sq[0] + sq[-1])))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.samples)))
