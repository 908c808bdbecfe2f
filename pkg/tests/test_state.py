import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdoct.propagation import compute_eigensystem, make_stepper
from tdoct.state import (GRID, NODE, STEP, BasisMismatchError, ControlField, Grid, QuantumState,
                         TimeGrid, expectation_position, gaussian_packet, grid_state,
                         inner_product, level_state, occupations, occupations_series)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def complex_vectors(n):
    return arrays(np.float64, (2, n), elements=finite).map(lambda a: a[0] + 1j * a[1])


GRID16 = Grid(-4.0, 4.0, 16)


def test_grid_requires_power_of_two():
    with pytest.raises(ValueError):
        Grid(-1, 1, 100)
    with pytest.raises(ValueError):
        Grid(1, -1, 64)
    g = Grid(-150, 150, 2048)
    assert g.dx == pytest.approx(300 / 2048)
    assert g.x[0] == -150 and g.x.size == 2048


def test_time_grid_must_divide_total():
    tg = TimeGrid.from_total(400, 0.01)
    assert tg.n_steps == 40000 and tg.total_time == pytest.approx(400)
    with pytest.raises(ValueError):
        TimeGrid.from_total(400.003, 0.01)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)


def test_normalized_state_has_unit_norm():
    psi = gaussian_packet(Grid(-20, 20, 256), 0.3, 1.2, 0.5)
    assert inner_product(psi, psi) == pytest.approx(1.0, abs=1e-14)


def test_eigenstates_are_orthogonal(atom512):
    eig = atom512.eigensystem(4)
    assert abs(inner_product(eig.states[0], eig.states[1])) < 1e-8
    assert np.allclose(eig.overlap_matrix(), np.eye(4), atol=1e-8)


@given(complex_vectors(16), complex_vectors(16))
def test_hermitian_symmetry(a, b):
    pa, pb = grid_state(GRID16, a), grid_state(GRID16, b)
    lhs = inner_product(pa, pb)
    rhs = np.conj(inner_product(pb, pa))
    assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(lhs))


@given(complex_vectors(8))
def test_inner_product_positive(a):
    psi = level_state(a)
    v = inner_product(psi, psi)
    assert v.real >= 0 and abs(v.imag) <= 1e-12 * max(1.0, v.real)
    assert (v.real == 0) == (not np.any(a))


@given(complex_vectors(16))
def test_parseval(a):
    psi = grid_state(GRID16, a)
    k_norm = np.sum(np.abs(np.fft.fft(a)) ** 2) / a.size * GRID16.dx
    assert inner_product(psi, psi).real == pytest.approx(k_norm, rel=1e-12, abs=1e-12)


def test_basis_mismatch():
    with pytest.raises(BasisMismatchError):
        inner_product(level_state([1, 0]), grid_state(GRID16, np.ones(16)))
    with pytest.raises(BasisMismatchError):
        inner_product(level_state([1, 0]), level_state([1, 0, 0]))
    with pytest.raises(BasisMismatchError):
        expectation_position(level_state([1, 0]))


def test_position_of_even_ground_state(atom512):
    assert abs(expectation_position(atom512.ground_state())) < 1e-8


def test_position_translation_covariance(atom512):
    g = atom512.grid
    psi = atom512.ground_state()
    shift = 13
    moved = grid_state(g, np.roll(psi.amplitudes, shift))
    assert expectation_position(moved) == pytest.approx(shift * g.dx, abs=g.dx)


def test_gaussian_first_moment():
    # analytic first moment of a Gaussian is its center
    psi = gaussian_packet(Grid(-30, 30, 512), 1.7, 1.0)
    assert expectation_position(psi) == pytest.approx(1.7, abs=1e-6)


def test_occupations_of_basis_states(tls):
    eig = tls.eigensystem()
    assert np.allclose(occupations(level_state([1, 0]), eig), [1, 0])
    p = occupations(level_state(np.array([1, 1]) / np.sqrt(2)), eig)
    assert np.allclose(p, [0.5, 0.5], atol=1e-12)


def test_ground_state_stationary_100_steps(atom512):
    eig = atom512.eigensystem(2)
    st_ = make_stepper(atom512, 0.005)
    out = st_.propagate(atom512.ground_state().amplitudes, np.zeros(100))
    p = occupations(grid_state(atom512.grid, out[-1]), eig)
    assert p[0] == pytest.approx(1.0, abs=1e-8)


def test_complete_basis_occupations_sum_to_one(small_atom, rng):
    eig = compute_eigensystem(small_atom, small_atom.grid.n_points)
    for _ in range(5):
        a = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        psi = grid_state(small_atom.grid, a).normalized()
        assert occupations(psi, eig).sum() == pytest.approx(1.0, abs=1e-10)
    series = occupations_series(np.array([eig.states[3].amplitudes]), eig)
    assert series[0, 3] == pytest.approx(1.0, abs=1e-10)


def test_grid_state_checks_length():
    with pytest.raises(ValueError):
        QuantumState(np.ones(5), GRID, grid=GRID16)
    with pytest.raises(ValueError):
        QuantumState(np.ones(16), GRID)


def test_control_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        ControlField(np.array([0.0, np.nan, 1.0]), 0.1)
    with pytest.raises(ValueError):
        ControlField(np.zeros((4, 2)), 0.1)


@given(st.floats(-1, 1), st.sampled_from([STEP, NODE]))
def test_constant_field_fluence(c, sampling):
    tg = TimeGrid.from_total(10.0, 0.05)
    f = ControlField.constant(c, tg, sampling=sampling)
    assert f.fluence() == pytest.approx(c * c * 10.0, abs=1e-12)
    assert np.allclose(f.step_values(), c)


def test_node_field_midpoint_values():
    f = ControlField(np.array([0.0, 1.0, 3.0]), 0.5, NODE)
    assert np.allclose(f.step_values(), [0.5, 2.0])
    assert f.fluence() == pytest.approx(0.5 * (0.5 * 0 + 1 + 0.5 * 9))
    assert f.times[-1] == pytest.approx(1.0)
