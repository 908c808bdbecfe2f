"""Brute-force references for tests and ``validate --deep``.

Nothing here shares code with the production steppers: Hamiltonians are
assembled as dense matrices from plane-wave sums and every step is an
eigendecomposition-based exponential.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .state import GRID, LEVELS, ControlField, Grid, QuantumState, TimeGrid, grid_state

MAX_ORACLE_POINTS = 128


class OracleError(ValueError):
    pass


def check_hermitian(h: np.ndarray, tol: float = 1e-12) -> None:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise OracleError("Hamiltonian must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(h - h.conj().T)) > tol * scale:
        raise OracleError("Hamiltonian is not Hermitian")


def kinetic_matrix(grid: Grid) -> np.ndarray:
    """``-1/2 d^2/dx^2`` on the periodic grid as an explicit plane-wave sum."""
    n = grid.n_points
    k = grid.k
    d = grid.x[:, None] - grid.x[None, :]
    t = np.exp(1j * d[:, :, None] * k[None, None, :]) @ (0.5 * k**2) / n
    return t


@dataclass(frozen=True, eq=False)
class DenseOracle:
    """Dense ``H(eps) = H0 - eps*mu`` for a level system or a small grid atom."""

    h0: np.ndarray
    mu: np.ndarray
    basis: str
    grid: Grid | None = None

    @classmethod
    def for_system(cls, system) -> "DenseOracle":
        if system.kind == "two_level":
            h0 = np.diag([system.e0, system.e1]).astype(complex)
            return cls(h0, system.dipole_matrix().astype(complex), LEVELS)
        grid = system.grid
        if grid.n_points > MAX_ORACLE_POINTS:
            raise OracleError(f"oracle grids are capped at {MAX_ORACLE_POINTS} points")
        h0 = kinetic_matrix(grid) + np.diag(system.potential_values)
        h0 = 0.5 * (h0 + h0.conj().T)
        return cls(h0, np.diag(grid.x).astype(complex), GRID, grid)

    def hamiltonian(self, eps: float) -> np.ndarray:
        h = self.h0 - eps * self.mu
        check_hermitian(h)
        return h

    def step(self, psi: np.ndarray, eps: float, dt: float) -> np.ndarray:
        return exact_propagator(self.hamiltonian(eps), dt) @ psi

    def propagate(self, psi0: np.ndarray, eps_steps, dt: float) -> np.ndarray:
        """States at every mesh point under a piecewise-constant field."""
        out = np.empty((len(eps_steps) + 1, len(psi0)), dtype=complex)
        out[0] = psi0
        cache = {}
        for k, e in enumerate(eps_steps):
            u = cache.get(e)
            if u is None:
                u = exact_propagator(self.hamiltonian(e), dt)
                if len(cache) < 4:
                    cache[e] = u
            out[k + 1] = u @ out[k]
        return out


def exact_propagator(h: np.ndarray, dt: float, tol: float = 1e-13) -> np.ndarray:
    """``exp(-i H dt)`` from ``eigh``; checks Hermiticity and unitarity."""
    check_hermitian(h)
    w, v = np.linalg.eigh(h)
    u = (v * np.exp(-1j * w * dt)) @ v.conj().T
    err = np.max(np.abs(u.conj().T @ u - np.eye(len(w))))
    if err > tol * max(1, len(w)):
        raise OracleError(f"oracle propagator not unitary ({err:.2e})")
    return u


def oracle_step(psi: QuantumState, h: np.ndarray, dt: float) -> QuantumState:
    """Exact ``exp(-i H dt) psi`` for a dense Hermitian ``H``."""
    u = exact_propagator(np.asarray(h, dtype=complex), dt)
    return psi.with_amplitudes(u @ psi.amplitudes, psi.time + dt)


# ---------------------------------------------------------------------------
# objective by brute force
# ---------------------------------------------------------------------------


def _direct_j1(target, amps: np.ndarray, times: np.ndarray, basis: str, grid) -> float:
    """Plain-loop trapezoid of ``<O1>^n / T`` plus ``<O2>^n``."""
    from .targets import apply_o2, apply_o1

    n = target.exponent
    T = times[-1]
    vals = []
    for t, a in zip(times, amps):
        st = QuantumState(a, basis, t, grid)
        w = st.weight
        if target.o1 is None:
            vals.append(0.0)
        else:
            vals.append(max(float(np.real(np.vdot(a, apply_o1(target, st, t).amplitudes)) * w), 0.0))
    vals = np.array(vals) ** n
    h = times[1] - times[0]
    integral = h * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    o2 = 0.0
    if target.o2 is not None:
        fin = QuantumState(amps[-1], basis, T, grid)
        o2 = max(float(np.real(np.vdot(amps[-1], apply_o2(target, fin).amplitudes)) * fin.weight), 0.0) ** n
    return integral / T + o2


def direct_j1(target, trajectory) -> float:
    return _direct_j1(target, trajectory.amplitudes, np.asarray(trajectory.times),
                      trajectory.basis, trajectory.grid)


def objective(system, target, psi0: QuantumState, field: ControlField, alpha: float,
              propagator: str = "oracle") -> float:
    """``J1 + J2`` after a plain forward propagation.

    ``propagator="oracle"`` uses exact dense steps; ``"library"`` uses the
    production stepper (same discretisation as the optimizer).
    """
    eps = field.step_values()
    if propagator == "oracle":
        amps = DenseOracle.for_system(system).propagate(psi0.amplitudes, eps, field.dt)
    elif propagator == "library":
        from .propagation import make_stepper

        amps = make_stepper(system, field.dt).propagate(psi0.amplitudes, eps, 1, True)
    else:
        raise ValueError(f"unknown propagator {propagator!r}")
    return _direct_j1(target, amps, field.times, psi0.basis, psi0.grid) - alpha * field.fluence()


def fd_gradient(system, target, psi0: QuantumState, field: ControlField, alpha: float,
                index: int, h: float = 1e-4, component: int = 0,
                propagator: str = "oracle") -> float:
    """Central difference of ``J`` with respect to one field sample."""
    if not 1e-6 <= h <= 1e-3:
        raise ValueError("perturbation must lie in [1e-6, 1e-3]")
    s = np.array(field.samples)
    plus, minus = s.copy(), s.copy()
    plus[index, component] += h
    minus[index, component] -= h
    jp = objective(system, target, psi0, ControlField(plus, field.dt, field.sampling), alpha, propagator)
    jm = objective(system, target, psi0, ControlField(minus, field.dt, field.sampling), alpha, propagator)
    return (jp - jm) / (2.0 * h)


# ---------------------------------------------------------------------------
# appendix inequality
# ---------------------------------------------------------------------------


def appendix_inequality(a: float, b: float, n: int) -> float:
    """``a^n + (n-1) b^n - n b^(n-1) a`` for ``a, b >= 0``.

    Evaluated as ``(a-b)^2 sum_j (j+1) b^j a^(n-2-j)``, a sum of non-negative
    terms, so the result never goes negative through cancellation.
    """
    if a < 0 or b < 0:
        raise ValueError("appendix inequality needs a, b >= 0")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    if n == 1:
        return 0.0
    j = np.arange(n - 1)
    value = float((a - b) ** 2 * np.sum((j + 1) * b**j * a ** (n - 2 - j)))
    assert value >= -1e-12
    return value


def appendix_case_function(y, n: int):
    """``f(y) = y^n - n y + n - 1``; non-negative on ``[0, 1]``."""
    y = np.asarray(y, dtype=float)
    return y**n - n * y + n - 1


# ---------------------------------------------------------------------------
# adjoint forms
# ---------------------------------------------------------------------------


def _backward_inhomogeneous(oracle: DenseOracle, chi_end, sources, eps_steps, dt):
    """``chi_k = U_k^dagger chi_{k+1} + dt * s_k`` with exact dense steps."""
    chi = np.array(chi_end, dtype=complex)
    for k in range(len(eps_steps) - 1, -1, -1):
        chi = exact_propagator(oracle.hamiltonian(eps_steps[k]), dt).conj().T @ chi
        chi = chi + dt * sources[k]
    return chi


def adjoint_forms(system, psi0: QuantumState, target_state: QuantumState, field: ControlField,
                  delta_width: float) -> tuple[np.ndarray, np.ndarray]:
    """``chi(0)`` for a final-time projector in two equivalent forms.

    Split form: ``chi(T) = P psi(T)`` with no source. Delta form: ``chi(T) = 0``
    and source ``(1/T) 2T delta(t-T) P psi(t)`` with a normalised Gaussian of
    width ``delta_width`` standing in for the delta; only its half inside
    ``[0, T]`` contributes, which supplies one unit of ``P psi(T)``.
    """
    oracle = DenseOracle.for_system(system)
    eps = field.step_values()
    dt = field.dt
    amps = oracle.propagate(psi0.amplitudes, eps, dt)
    phi = target_state.amplitudes
    w = psi0.weight
    proj = (amps @ phi.conj() * w)[:, None] * phi[None, :]
    split = _backward_inhomogeneous(oracle, proj[-1], np.zeros_like(proj), eps, dt)
    times = field.times
    T = times[-1]
    delta = np.exp(-0.5 * ((times - T) / delta_width) ** 2) / (np.sqrt(2 * np.pi) * delta_width)
    src = 2.0 * delta[:, None] * proj
    # trapezoid-consistent: the endpoint sample carries half weight
    chi_end = 0.5 * dt * src[-1]
    delta_form = _backward_inhomogeneous(oracle, chi_end, src[:-1], eps, dt)
    return split, delta_form


# ---------------------------------------------------------------------------
# deep validation suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def spo_global_error(atom, psi0: QuantumState, field_fn, total_time: float, dt: float) -> float:
    """Final-state distance between the split-operator and the dense oracle."""
    from .propagation import make_stepper

    tg = TimeGrid.from_total(total_time, dt)
    fld = ControlField.from_function(field_fn, tg)
    eps = fld.step_values()
    ref = DenseOracle.for_system(atom).propagate(psi0.amplitudes, eps, dt)[-1]
    out = make_stepper(atom, dt).propagate(psi0.amplitudes, eps, tg.n_steps, False)[-1]
    return float(np.sqrt(np.sum(np.abs(out - ref) ** 2) * psi0.weight))


def small_atom(n_points: int = 64, half_width: float = 16.0):
    from .propagation import GridAtom

    return GridAtom(Grid(-half_width, half_width, n_points), mask_width=None)


def run_deep_validation() -> list[CheckResult]:
    """Every oracle cross-check; each returns pass/fail with a short detail."""
    from .control import ControlParams, analytic_gradient, optimize
    from .propagation import TwoLevelSystem, make_stepper, two_level_step
    from .targets import Follower, Projector, TargetSpec, v_shape

    results: list[CheckResult] = []

    def run(name, fn):
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report, never crash the table
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))

    atom = small_atom()
    tls = TwoLevelSystem()
    rng = np.random.default_rng(1)

    def hermitian_unitary():
        o = DenseOracle.for_system(atom)
        worst = 0.0
        for e in (0.0, 0.05, -0.2):
            u = exact_propagator(o.hamiltonian(e), 0.01)
            worst = max(worst, float(np.max(np.abs(u.conj().T @ u - np.eye(len(u))))))
        return worst < 1e-13 * atom.dim, f"max |U^dag U - 1| = {worst:.1e}"

    def tls_vs_oracle():
        o = DenseOracle.for_system(tls)
        worst = 0.0
        for _ in range(50):
            c = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            c /= np.linalg.norm(c)
            e = rng.uniform(-0.5, 0.5)
            a = two_level_step(QuantumState(c), tls, e, 0.01).amplitudes
            worst = max(worst, float(np.max(np.abs(a - o.step(c, e, 0.01)))))
        return worst < 1e-12, f"max deviation {worst:.1e}"

    psi_test = atom.ground_state()
    psi_test = psi_test.with_amplitudes(psi_test.amplitudes * np.exp(0.7j * atom.grid.x)
                                        * np.exp(-0.01 * atom.grid.x ** 2)).normalized()
    pulse = lambda t: 0.05 * np.sin(0.4 * t)

    def spo_order():
        e1 = spo_global_error(atom, psi_test, pulse, 4.0, 0.02)
        e2 = spo_global_error(atom, psi_test, pulse, 4.0, 0.01)
        r = e1 / e2
        return 3.5 <= r <= 4.5, f"error ratio {r:.3f} (errors {e1:.2e}, {e2:.2e})"

    def spo_local():
        o = DenseOracle.for_system(atom)
        errs = []
        for dt in (0.02, 0.01):
            st = make_stepper(atom, dt)
            out = st.propagate(psi_test.amplitudes, np.array([0.05]), 1, False)[-1]
            errs.append(np.linalg.norm(out - o.step(psi_test.amplitudes, 0.05, dt)))
        r = errs[0] / errs[1]
        return 7.0 <= r <= 9.0, f"local error ratio {r:.2f} (expected 8)"

    def appendix():
        a = rng.uniform(0, 10, 10_000)
        b = rng.uniform(0, 10, 10_000)
        n = rng.integers(2, 7, 10_000)
        worst = min(appendix_inequality(x, y, k) for x, y, k in zip(a, b, n))
        return worst >= -1e-12, f"min A = {worst:.2e}"

    def case_split():
        ok = True
        for n in range(2, 8):
            y = np.linspace(0, 1, 10_001)
            f = appendix_case_function(y, n)
            ok &= bool(np.all(f >= -1e-12)) and appendix_case_function(1.0, n) == 0.0
            ok &= appendix_case_function(0.0, n) == n - 1
        return ok, "f(y) >= 0 on [0,1], f(1) = 0, f(0) = n-1"

    def delta_vs_split():
        tg = TimeGrid.from_total(10.0, 0.005)
        fld = ControlField.from_function(lambda t: 0.03 * np.cos(0.395 * t), tg)
        target = QuantumState(np.array([0.0, 1.0]))
        split, dform = adjoint_forms(tls, tls.ground_state(), target, fld, 0.02)
        d = float(np.linalg.norm(split - dform))
        return d < 1e-3, f"|chi_split(0) - chi_delta(0)| = {d:.1e}"

    def gradient():
        T, dt = 2.0, 0.01
        tg = TimeGrid.from_total(T, dt)
        target = TargetSpec(o2=Projector(atom.eigensystem(2).states[1]))
        fld = ControlField.constant(0.0, tg)
        params = ControlParams(alpha=0.1)
        g = analytic_gradient(atom, target, psi_test, fld, params)
        idx = 57
        fd = fd_gradient(atom, target, psi_test, fld, params.alpha, idx, 1e-4, propagator="oracle")
        rel = abs(fd - g[idx]) / abs(fd)
        return rel < 0.05, f"analytic {g[idx]:.4e}, finite difference {fd:.4e}, rel {rel:.1e}"

    def norm_conservation():
        st = make_stepper(atom, 0.01)
        eps = 0.05 * np.sin(0.3 * 0.01 * np.arange(1000))
        out = st.propagate(psi_test.amplitudes, eps, 1000, False)[-1]
        d1 = abs(np.sum(np.abs(out) ** 2) * atom.grid.dx - 1.0)
        c = make_stepper(tls, 0.01).propagate(np.array([0.6, 0.8j]), eps, 1000)[-1]
        d2 = abs(np.sum(np.abs(c) ** 2) - 1.0)
        return max(d1, d2) < 1e-12, f"grid drift {d1:.1e}, two-level drift {d2:.1e}"

    def monotone():
        T = 100.0
        tg = TimeGrid.from_total(T, 0.01)
        target = TargetSpec(o1=Follower(v_shape(T), tls.eigensystem()))
        worst = np.inf
        for eta, gamma in ((0.5, 0.5), (1.0, 1.0), (2.0, 2.0), (1.5, 0.5)):
            p = ControlParams(alpha=0.05, eta=eta, gamma=gamma, max_iterations=30, dj_threshold=0.0)
            tr = optimize(tls, target, tls.ground_state(), tg, p)
            worst = min(worst, float(np.min(tr.delta_j())))
        return worst >= -1e-8, f"min dJ = {worst:.2e}"

    run("oracle hermiticity/unitarity", hermitian_unitary)
    run("two-level step vs oracle", tls_vs_oracle)
    run("split-operator local error order", spo_local)
    run("split-operator global error order", spo_order)
    run("appendix inequality (1e4 samples)", appendix)
    run("appendix case function", case_split)
    run("delta vs split adjoint", delta_vs_split)
    run("gradient consistency", gradient)
    run("norm conservation", norm_conservation)
    run("monotonicity (two-level)", monotone)
    return results
