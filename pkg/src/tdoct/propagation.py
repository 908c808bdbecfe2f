"""Time evolution for the two-level system and the 1D grid atom.

The two-level step is the closed-form 2x2 exponential. The grid step is the
second-order split operator ``K V(eps) K`` with ``K`` a half kinetic step
applied in momentum space. Absorbing boundaries are a position-space mask
applied after every grid step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import kernels
from .state import (
    GRID,
    LEVELS,
    BasisMismatchError,
    ControlField,
    EigenSystem,
    Grid,
    QuantumState,
    TimeGrid,
    grid_state,
    inner_product,
    levels_eigensystem,
)

log = logging.getLogger(__name__)

# Energies of the two-level model: only the gap and the dipole are physical.
TLS_E0 = -0.6698
TLS_GAP = 0.395
TLS_DIPOLE = 1.05


class PropagationError(RuntimeError):
    """Non-finite values appeared during time stepping."""


class EigenSolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


def soft_coulomb(x, softening: float = 1.0):
    return -1.0 / np.sqrt(x * x + softening * softening)


@dataclass(frozen=True)
class TwoLevelSystem:
    e0: float = TLS_E0
    e1: float = TLS_E0 + TLS_GAP
    dipole: float = TLS_DIPOLE

    kind = "two_level"
    dim = 2

    @property
    def gap(self) -> float:
        return self.e1 - self.e0

    def hamiltonian(self, eps: float = 0.0) -> np.ndarray:
        p = self.dipole
        return np.array([[self.e0, -p * eps], [-p * eps, self.e1]], dtype=complex)

    def dipole_matrix(self) -> np.ndarray:
        return np.array([[0.0, self.dipole], [self.dipole, 0.0]])

    def eigensystem(self, n_states: int = 2) -> EigenSystem:
        return levels_eigensystem([self.e0, self.e1])

    def ground_state(self) -> QuantumState:
        return QuantumState(np.array([1.0, 0.0]), LEVELS)


@dataclass(frozen=True)
class MaskFunction:
    values: np.ndarray
    boundary_width: float

    @classmethod
    def cosine(cls, grid: Grid, width: float = 20.0, exponent: float = 0.125):
        """``cos(pi d / 2w)**exponent`` with ``d`` the depth into a boundary layer."""
        if width <= 0 or 2 * width >= grid.x_max - grid.x_min:
            raise ValueError(f"mask width {width} does not fit the grid")
        x = grid.x
        depth = np.maximum(x - (grid.x_max - width), (grid.x_min + width) - x)
        depth = np.clip(depth, 0.0, width)
        m = np.cos(0.5 * np.pi * depth / width)
        m = np.clip(m, 0.0, 1.0) ** exponent
        m[depth <= 0] = 1.0
        return cls(m, width)


@dataclass(frozen=True, eq=False)
class GridAtom:
    """One electron on a periodic grid in length gauge, dipole ``mu(x) = x``."""

    grid: Grid
    potential: Callable[[np.ndarray], np.ndarray] = soft_coulomb
    mask_width: float | None = 20.0
    mask_exponent: float = 0.125
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    kind = "grid_atom"

    @property
    def dim(self) -> int:
        return self.grid.n_points

    @property
    def potential_values(self) -> np.ndarray:
        if "v" not in self._cache:
            self._cache["v"] = np.asarray(self.potential(self.grid.x), dtype=float)
        return self._cache["v"]

    @property
    def mask(self) -> MaskFunction | None:
        if self.mask_width is None:
            return None
        if "mask" not in self._cache:
            self._cache["mask"] = MaskFunction.cosine(
                self.grid, self.mask_width, self.mask_exponent)
        return self._cache["mask"]

    def kinetic_diagonal(self) -> np.ndarray:
        return 0.5 * self.grid.k**2

    def apply_h0(self, psi: np.ndarray) -> np.ndarray:
        t = np.fft.ifft(self.kinetic_diagonal() * np.fft.fft(psi))
        return t + self.potential_values * psi

    def dense_hamiltonian(self, eps: float = 0.0) -> np.ndarray:
        """Spectral (Fourier-grid) Hamiltonian as a dense real matrix."""
        n = self.grid.n_points
        tmat = np.fft.ifft(self.kinetic_diagonal()[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)
        h = tmat.real
        h = 0.5 * (h + h.T)
        h[np.diag_indices(n)] += self.potential_values - self.grid.x * eps
        return h

    def eigensystem(self, n_states: int = 2) -> EigenSystem:
        key = ("eig", n_states)
        if key not in self._cache:
            self._cache[key] = compute_eigensystem(self, n_states)
        return self._cache[key]

    def ground_state(self) -> QuantumState:
        return self.eigensystem(2).states[0]


SystemSpec = Union[TwoLevelSystem, GridAtom]


def _basis_of(system) -> str:
    return LEVELS if system.kind == "two_level" else GRID


def _require(state: QuantumState, system):
    if state.basis != _basis_of(system) or len(state) != system.dim:
        raise BasisMismatchError(f"state {state.basis}[{len(state)}] does not fit {system.kind}")


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def two_level_step(c: QuantumState, system: TwoLevelSystem, eps: float, dt: float) -> QuantumState:
    _require(c, system)
    a0, a1 = kernels.tls_apply(system.e0, system.e1, system.dipole, float(eps), dt,
                               complex(c.amplitudes[0]), complex(c.amplitudes[1]))
    return c.with_amplitudes(np.array([a0, a1]), c.time + dt)


def _half_kinetic(system: GridAtom, dt: float) -> np.ndarray:
    return np.exp(-0.5j * dt * system.kinetic_diagonal())


def spo_step(psi: QuantumState, system: GridAtom, eps: float, dt: float) -> QuantumState:
    """``K V K`` split-operator step; no mask."""
    _require(psi, system)
    kh = _half_kinetic(system, dt)
    v = np.exp(-1j * dt * (system.potential_values - system.grid.x * eps))
    out = np.fft.ifft(kh * np.fft.fft(v * np.fft.ifft(kh * np.fft.fft(psi.amplitudes))))
    return psi.with_amplitudes(out, psi.time + dt)


def _spo_adjoint_step(psi: QuantumState, system: GridAtom, eps: float, dt: float) -> QuantumState:
    kh = np.conj(_half_kinetic(system, dt))
    v = np.exp(1j * dt * (system.potential_values - system.grid.x * eps))
    out = np.fft.ifft(kh * np.fft.fft(v * np.fft.ifft(kh * np.fft.fft(psi.amplitudes))))
    return psi.with_amplitudes(out, psi.time - dt)


def step(psi: QuantumState, system, eps: float, dt: float) -> QuantumState:
    if system.kind == "two_level":
        return two_level_step(psi, system, eps, dt)
    return spo_step(psi, system, eps, dt)


def adjoint_step(psi: QuantumState, system, eps: float, dt: float) -> QuantumState:
    """``U(eps)^dagger psi``, i.e. one step with ``dt -> -dt``."""
    _require(psi, system)
    if system.kind == "two_level":
        a0, a1 = kernels.tls_apply_adjoint(system.e0, system.e1, system.dipole, float(eps), dt,
                                           complex(psi.amplitudes[0]), complex(psi.amplitudes[1]))
        return psi.with_amplitudes(np.array([a0, a1]), psi.time - dt)
    return _spo_adjoint_step(psi, system, eps, dt)


def inhomogeneous_step(chi: QuantumState, source: QuantumState, system, eps: float,
                       dt: float, direction: str = "forward") -> QuantumState:
    """One step of ``(i d/dt - H) chi = -i s``, lowest-order in the source.

    ``forward``: ``chi(t+dt) = U (chi(t) - dt*s(t))``.
    ``backward``: ``chi(t) = U^dagger chi(t+dt) + dt*s(t)`` (exact inverse of
    the forward form). ``source`` must already carry every scalar prefactor.
    """
    if direction == "forward":
        return step(chi - source * dt, system, eps, dt)
    if direction == "backward":
        out = adjoint_step(chi, system, eps, dt)
        return out.with_amplitudes(out.amplitudes + dt * source.amplitudes)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def apply_mask(psi: QuantumState, mask: MaskFunction) -> QuantumState:
    if psi.basis != GRID:
        raise BasisMismatchError("masks act on grid states")
    return psi.with_amplitudes(psi.amplitudes * mask.values)


# ---------------------------------------------------------------------------
# eigensystem
# ---------------------------------------------------------------------------


def _fix_signs(vecs: np.ndarray, x: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    if vecs[0].sum() < 0:
        vecs[0] *= -1
    for n in range(1, len(vecs)):
        d = np.sum(vecs[n] * x * vecs[n - 1])
        ref = d if abs(d) > 1e-10 else vecs[n].sum()
        if ref < 0:
            vecs[n] *= -1
    return vecs


def _finish_eigensystem(system: GridAtom, vecs: np.ndarray, tol: float) -> EigenSystem:
    grid = system.grid
    vecs = _fix_signs(vecs, grid.x)
    energies, residuals, states = [], [], []
    for v in vecs:
        hv = system.apply_h0(v.astype(complex))
        e = float(np.real(np.vdot(v, hv)) * grid.dx)
        energies.append(e)
        residuals.append(float(np.sqrt(np.sum(np.abs(hv - e * v) ** 2) * grid.dx)))
        states.append(grid_state(grid, v))
    residuals = np.array(residuals)
    if np.max(residuals) > tol:
        raise EigenSolverError(
            f"eigenstates not converged: max residual {np.max(residuals):.3e} > {tol:.1e}",
            residuals)
    return EigenSystem(states, np.array(energies), residuals)


def compute_eigensystem(system: GridAtom, n_states: int = 2, method: str = "dense",
                        tol: float = 1e-6, imag_dt: float = 0.05,
                        max_iterations: int = 200_000) -> EigenSystem:
    """Lowest ``n_states`` eigenstates of the spectral field-free Hamiltonian.

    ``method="dense"`` diagonalizes the Fourier-grid Hamiltonian directly.
    ``method="imaginary_time"`` runs split-operator imaginary-time steps with
    Gram-Schmidt after every step until the energies change by less than
    1e-12 per step, then polishes with LOBPCG (the split-operator fixed point
    is off by O(dt^2) otherwise).
    """
    if system.kind != "grid_atom":
        raise ValueError("compute_eigensystem needs a grid atom")
    grid = system.grid
    if method == "dense":
        h = system.dense_hamiltonian()
        w, v = scipy.linalg.eigh(h, subset_by_index=[0, n_states - 1])
        vecs = v.T / np.sqrt(grid.dx)
        return _finish_eigensystem(system, vecs, tol)
    if method != "imaginary_time":
        raise ValueError(f"unknown method {method!r}")

    x = grid.x
    kin = system.kinetic_diagonal()
    vhalf = np.exp(-0.5 * imag_dt * system.potential_values)
    kfull = np.exp(-imag_dt * kin)
    rng = np.random.default_rng(0)
    vecs = np.array([x**n * np.exp(-x * x / 8) for n in range(n_states)], dtype=complex)
    vecs += 1e-3 * rng.standard_normal(vecs.shape) * np.exp(-x * x / 50)
    energies = np.full(n_states, np.inf)
    for it in range(max_iterations):
        vecs = vhalf * np.fft.ifft(kfull * np.fft.fft(vhalf * vecs, axis=1), axis=1)
        q, _ = np.linalg.qr(vecs.T)
        vecs = q.T / np.sqrt(grid.dx)
        new = np.array([np.real(np.vdot(v, system.apply_h0(v))) * grid.dx for v in vecs])
        if np.max(np.abs(new - energies)) < 1e-12:
            energies = new
            break
        energies = new
    else:
        raise EigenSolverError(f"imaginary-time iteration did not converge in {max_iterations} steps")

    op = scipy.sparse.linalg.LinearOperator(
        (grid.n_points, grid.n_points), matvec=lambda v: system.apply_h0(v.ravel()).real,
        dtype=float)
    prec = scipy.sparse.linalg.LinearOperator(
        (grid.n_points, grid.n_points),
        matvec=lambda v: np.fft.ifft(np.fft.fft(v.ravel()) / (kin + 1.0)).real, dtype=float)
    start = (vecs.real * np.sqrt(grid.dx)).T
    w, v = scipy.sparse.linalg.lobpcg(op, start, M=prec, tol=1e-10, maxiter=500, largest=False)
    order = np.argsort(w)
    vecs = v[:, order].T / np.sqrt(grid.dx)
    return _finish_eigensystem(system, vecs, tol)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """States at ``times``; ``amplitudes[i]`` belongs to ``times[i]``."""

    times: np.ndarray
    amplitudes: np.ndarray
    basis: str
    grid: Grid | None = None
    stride: int = 1
    field: ControlField | None = None

    def __len__(self):
        return self.amplitudes.shape[0]

    def state(self, i: int) -> QuantumState:
        return QuantumState(self.amplitudes[i], self.basis, float(self.times[i]), self.grid)

    @property
    def final(self) -> QuantumState:
        return self.state(len(self) - 1)

    @property
    def weight(self) -> float:
        return self.grid.dx if self.basis == GRID else 1.0

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.amplitudes) ** 2, axis=1) * self.weight)

    def positions(self) -> np.ndarray:
        if self.basis != GRID:
            raise BasisMismatchError("positions need grid states")
        return np.abs(self.amplitudes) ** 2 @ self.grid.x * self.grid.dx


FieldRule = Union[ControlField, Callable[[int, float, QuantumState], float]]


def make_stepper(system, dt: float):
    if system.kind == "two_level":
        return TwoLevelStepper(system, dt)
    return GridStepper(system, dt)


def propagate(psi0: QuantumState, field_rule: FieldRule, system, time_grid: TimeGrid,
              stride: int = 1, mask: bool = True) -> StateTrajectory:
    """Propagate ``psi0`` over ``time_grid`` under a fixed field or a feedback rule.

    A feedback rule is called as ``rule(k, t_k, psi_k)`` at the start of every
    step and returns the field held over that step; the realised field is
    attached to the trajectory with ``"step"`` sampling.
    """
    _require(psi0, system)
    if stride < 1 or time_grid.n_steps % stride:
        raise ValueError("stride must divide n_steps")
    stepper = make_stepper(system, time_grid.dt)
    n = time_grid.n_steps
    times = time_grid.times[::stride]
    if isinstance(field_rule, ControlField):
        if field_rule.n_steps != n:
            raise ValueError("field length does not match the time grid")
        amps = stepper.propagate(psi0.amplitudes, field_rule.step_values(), stride, mask)
        return StateTrajectory(times, amps, psi0.basis, psi0.grid, stride, field_rule)

    amps = np.empty((n // stride + 1, system.dim), dtype=complex)
    realised = np.zeros(n + 1)
    psi = psi0
    amps[0] = psi.amplitudes
    for k in range(n):
        e = float(field_rule(k, k * time_grid.dt, psi))
        realised[k] = e
        psi = stepper.propagate(psi.amplitudes, np.array([e]), 1, mask)[-1]
        psi = psi0.with_amplitudes(psi, (k + 1) * time_grid.dt)
        if (k + 1) % stride == 0:
            amps[(k + 1) // stride] = psi.amplitudes
        if k % kernels.NAN_CHECK_STRIDE == 0 and not np.all(np.isfinite(psi.amplitudes)):
            raise PropagationError(f"non-finite wave function at step {k}")
    realised[n] = realised[n - 1]
    fld = ControlField(realised, time_grid.dt, "step")
    return StateTrajectory(times, amps, psi0.basis, psi0.grid, stride, fld)


# ---------------------------------------------------------------------------
# steppers driving the compiled kernels
# ---------------------------------------------------------------------------


class TwoLevelStepper:
    ffts_per_step = (0, 0)

    def __init__(self, system: TwoLevelSystem, dt: float):
        self.system = system
        self.dt = float(dt)
        self.dim = 2
        self.weight = 1.0
        self._args = (float(system.e0), float(system.e1), float(system.dipole), self.dt)

    def propagate(self, psi0, eps_steps, stride=1, mask=True):
        n = eps_steps.shape[0]
        out = np.empty((n // stride + 1, 2), dtype=complex)
        bad = kernels.tls_propagate(np.ascontiguousarray(psi0, dtype=complex),
                                    np.ascontiguousarray(eps_steps, dtype=float),
                                    *self._args, stride, out)
        if bad >= 0:
            raise PropagationError(f"non-finite state at step {bad}")
        return out

    def forward(self, psi0, a_traj, eps_ref, alpha, lam, n_corr, psi_traj):
        n = eps_ref.shape[0]
        eps = np.empty(n)
        coup = np.empty(n)
        bad = kernels.tls_forward(np.ascontiguousarray(psi0, dtype=complex), a_traj, eps_ref,
                                  *self._args, float(alpha), float(lam), int(n_corr),
                                  psi_traj, eps, coup)
        if bad >= 0:
            raise PropagationError(f"non-finite value in forward sweep at step {bad}")
        return eps, coup

    def backward(self, chi_end, psi_traj, src, eps_old, alpha, lam, n_corr, a_traj):
        """Backward sweep over one segment; ``src[k]`` is the source at ``t_k``."""
        n = eps_old.shape[0]
        eps = np.empty(n)
        coup = np.empty(n)
        chi0 = np.empty(2, dtype=complex)
        bad = kernels.tls_backward(np.ascontiguousarray(chi_end, dtype=complex), psi_traj, src,
                                   eps_old, *self._args, float(alpha), float(lam), int(n_corr),
                                   a_traj, eps, coup, chi0)
        if bad >= 0:
            raise PropagationError(f"non-finite value in backward sweep at step {bad}")
        return eps, coup, chi0


class GridStepper:
    ffts_per_step = (kernels.FFTS_FORWARD_STEP, kernels.FFTS_BACKWARD_STEP)

    def __init__(self, system: GridAtom, dt: float):
        self.system = system
        self.dt = float(dt)
        grid = system.grid
        self.dim = grid.n_points
        self.weight = grid.dx
        self.x = grid.x
        self.vphase = np.exp(-1j * self.dt * system.potential_values)
        self.kphase = _half_kinetic(system, self.dt)
        m = system.mask
        self.mask = m.values.copy() if m is not None else np.ones(grid.n_points)
        self.use_mask = m is not None
        self.plan = kernels.fft_plan(grid.n_points)

    def propagate(self, psi0, eps_steps, stride=1, mask=True):
        n = eps_steps.shape[0]
        out = np.empty((n // stride + 1, self.dim), dtype=complex)
        bad = kernels.grid_propagate(np.ascontiguousarray(psi0, dtype=complex),
                                     np.ascontiguousarray(eps_steps, dtype=float),
                                     self.x, self.vphase, self.kphase, self.mask,
                                     bool(mask and self.use_mask), self.dt, stride, out,
                                     *self.plan)
        if bad >= 0:
            raise PropagationError(f"non-finite state at step {bad}")
        return out

    def forward(self, psi0, a_traj, eps_ref, alpha, lam, n_corr, psi_traj):
        n = eps_ref.shape[0]
        eps = np.empty(n)
        coup = np.empty(n)
        bad = kernels.grid_forward(np.ascontiguousarray(psi0, dtype=complex), a_traj, eps_ref,
                                   psi_traj, eps, coup, self.x, self.vphase, self.kphase,
                                   self.mask, self.use_mask, self.weight, self.dt,
                                   float(alpha), float(lam), int(n_corr), *self.plan)
        if bad >= 0:
            raise PropagationError(f"non-finite value in forward sweep at step {bad}")
        return eps, coup

    def backward(self, chi_end, psi_traj, src, eps_old, alpha, lam, n_corr, a_traj):
        n = eps_old.shape[0]
        eps = np.empty(n)
        coup = np.empty(n)
        chi0 = np.empty(self.dim, dtype=complex)
        bad = kernels.grid_backward(np.ascontiguousarray(chi_end, dtype=complex), psi_traj, src,
                                    eps_old, a_traj, eps, coup, chi0, self.x, self.vphase,
                                    self.kphase, self.mask, self.use_mask, self.weight, self.dt,
                                    float(alpha), float(lam), int(n_corr), *self.plan)
        if bad >= 0:
            raise PropagationError(f"non-finite value in backward sweep at step {bad}")
        return eps, coup, chi0
