"""One test per acceptance criterion; each prints a single PASS/FAIL line.

The 2048-point hydrogen run takes tens of minutes on one core. It runs only
when ``TDOCT_FULL_ACCEPTANCE=1``; otherwise criterion 2 checks the reduced
512-point preset.
"""
import json
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tdoct.config import build_system, eigensystem_for, initial_state, load_config, parse_config
from tdoct.control import CONVERGED, ControlParams, optimize, stationarity_residual
from tdoct.experiments import build_target, checkpoint_occupations, run_experiment
from tdoct.oracles import run_deep_validation, small_atom, spo_global_error
from tdoct.propagation import TwoLevelSystem
from tdoct.state import TimeGrid
from tdoct.targets import Follower, TargetSpec, v_shape

GOLDEN = Path(__file__).parent / "golden" / "tls_vshape.json"


@pytest.fixture(scope="module")
def tls_vshape(tmp_path_factory):
    cfg = load_config("tls-vshape")
    t0 = time.perf_counter()
    art = run_experiment(cfg, tmp_path_factory.mktemp("tls_vshape"), stride=1)
    return cfg, art, time.perf_counter() - t0


def _occupation_error(cfg, fld):
    times, occ = checkpoint_occupations(cfg, fld, stride=10)
    target = v_shape(cfg.total_time).target_occupations(times)
    return float(np.max(np.abs(occ - target)))


def test_criterion_1_two_level_vshape(tls_vshape, acceptance):
    cfg, art, wall = tls_vshape
    tr = art.trace
    ck = tr.checkpoints
    err_95 = _occupation_error(cfg, ck[0.95]) if 0.95 in ck else float("nan")
    err_fin = _occupation_error(cfg, tr.field)
    ok = (tr.status == CONVERGED and tr.final.j1 >= 0.999 and abs(tr.final.delta_j) <= 1e-8
          and wall <= 120 and set(ck) == {0.9, 0.95, 0.99} and err_95 >= 3 * err_fin)
    acceptance(1, ok, f"J1={tr.final.j1:.5f} dJ={tr.final.delta_j:.1e} after {tr.iterations} "
                      f"iterations in {wall:.0f}s; occupation error at J1=0.95 {err_95:.3f} "
                      f"vs final {err_fin:.3f} (x{err_95 / err_fin:.1f})")
    assert ok


def test_criterion_2_hydrogen_vshape(tmp_path, acceptance):
    full = os.environ.get("TDOCT_FULL_ACCEPTANCE") == "1"
    name, limit, j1_min = ("h1d-vshape", 1800, 0.95) if full else ("h1d-vshape-small", 300, 0.90)
    cfg = load_config(name)
    t0 = time.perf_counter()
    art = run_experiment(cfg, tmp_path, stride=cfg.stride)
    wall = time.perf_counter() - t0
    tr = art.trace
    norm_loss = tr.final.norm_loss
    norms = np.loadtxt(art.files["position"], delimiter=",", skiprows=1)[:, 2]
    # population still on the grid but outside levels 0 and 1
    higher = float(np.max(norms - art.occupations[:, 0] - art.occupations[:, 1]))
    ok = (tr.final.j1 >= j1_min and wall <= limit and norm_loss <= 0.005 and higher <= 0.02
          and (not full or abs(tr.final.delta_j) <= 1e-5))
    acceptance(2, ok, f"{name}: J1={tr.final.j1:.4f} dJ={tr.final.delta_j:.1e} in "
                      f"{tr.iterations} iterations, {wall:.0f}s; norm loss {100 * norm_loss:.2f}%, "
                      f"max higher-level occupation {100 * higher:.2f}%")
    assert ok


def test_criterion_3_eigensystem(acceptance):
    cfg = load_config("h1d-vshape")
    system = build_system(cfg)
    eig = eigensystem_for(system, cfg)
    gap = eig.energies[1] - eig.energies[0]
    x = system.grid.x
    p01 = abs(np.sum(eig.matrix[1].conj() * x * eig.matrix[0]) * eig.weight)
    ok = abs(gap - 0.395) <= 0.002 and abs(p01 - 1.05) <= 0.01
    acceptance(3, ok, f"omega01={gap:.5f}, |<1|x|0>|={p01:.4f} on Grid(-150,150,2048)")
    assert ok


def test_criterion_4_monotonicity(acceptance):
    tls = TwoLevelSystem()
    T = 400.0
    tg = TimeGrid.from_total(T, 0.01)
    target = TargetSpec(o1=Follower(v_shape(T), tls.eigensystem()))
    worst, worst_at, iters = np.inf, None, []
    runs = [(e, g, 1) for e in (0.5, 1.0, 1.5, 2.0) for g in (0.5, 1.0, 1.5, 2.0)]
    runs += [(1.0, 1.0, n) for n in (2, 3, 4)]
    for eta, gamma, n in runs:
        p = ControlParams(alpha=0.05, eta=eta, gamma=gamma, exponent=n, max_iterations=200,
                          dj_threshold=0.0)
        tr = optimize(tls, target, tls.ground_state(), tg, p)
        iters.append(tr.iterations)
        m = float(np.min(tr.delta_j()))
        if m < worst:
            worst, worst_at = m, (eta, gamma, n)
    ok = worst >= -1e-8 and min(iters) >= 200
    acceptance(4, ok, f"{len(runs)} runs x {min(iters)} iterations; min dJ={worst:.2e} "
                      f"at (eta, gamma, n)={worst_at}")
    assert ok


def _transition_widths(times, p0, T):
    """10-90% durations of the down step near T/3 and the up step near 2T/3."""
    first = times < 0.5 * T
    t, p = times[first], p0[first]
    i90 = np.argmax(p < 0.9)
    i10 = i90 + np.argmax(p[i90:] < 0.1)
    down = t[i10] - t[i90] if p[i10] < 0.1 else np.inf
    t, p = times[~first], p0[~first]
    j10 = np.argmax(p > 0.1)
    j90 = j10 + np.argmax(p[j10:] > 0.9)
    up = t[j90] - t[j10] if p[j90] > 0.9 else np.inf
    return down, up


def test_criterion_5_penalty_sweep(tmp_path, acceptance):
    base = load_config("tls-step")
    rows = []
    for alpha in (0.05, 0.2, 0.5):
        cfg = replace(base, control=replace(base.control, alpha=alpha))
        art = run_experiment(cfg, tmp_path / f"alpha_{alpha}", stride=1)
        down, up = _transition_widths(art.times, art.occupations[:, 0], cfg.total_time)
        rows.append((alpha, art.trace.field.max_abs(), down, up, art.j1))
    amps = [r[1] for r in rows]
    downs = [r[2] for r in rows]
    ups = [r[3] for r in rows]
    ok = (all(a > b for a, b in zip(amps, amps[1:]))
          and all(a <= b for a, b in zip(downs, downs[1:]))
          and all(a <= b for a, b in zip(ups, ups[1:])))
    detail = "; ".join(f"alpha={a}: max|eps|={m:.4f} widths {d:.1f}/{u:.1f} J1={j:.3f}"
                       for a, m, d, u, j in rows)
    acceptance(5, ok, detail)
    assert ok


MD_REDUCED = """
[meta]
base = moving-density
[system]
x_min = -50
x_max = 50
n_points = 256
"""


def test_criterion_6_moving_density(tmp_path, acceptance):
    # alpha, dt, eps0 and the iteration cap come from the preset; the grid is
    # reduced to 256 points to keep the suite inside its time budget
    rows = []
    for n in (1, 2, 3, 4):
        cfg = parse_config(MD_REDUCED + f"[target]\nexponent = {n}\n", f"md_n{n}")
        assert cfg.control.max_iterations <= 1000
        art = run_experiment(cfg, tmp_path / f"n{n}")
        r = art.reference
        rms = float(np.sqrt(np.trapezoid(r**2, art.times) / (art.times[-1] - art.times[0])))
        rows.append((n, art.tracking_error() / rms, art.trace.iterations, art.j1))
    rel = [r[1] for r in rows]
    ok = rel[0] <= 0.15 and all(a <= b for a, b in zip(rel[1:], rel[2:]))
    detail = "; ".join(f"n={n}: error/RMS={e:.3f} ({k} it, J1={j:.3f})" for n, e, k, j in rows)
    acceptance(6, ok, detail)
    assert ok


def test_criterion_7_propagator_order(acceptance):
    atom = small_atom()
    psi = atom.ground_state()
    x = atom.grid.x
    psi = psi.with_amplitudes(psi.amplitudes * np.exp(0.7j * x - 0.01 * x * x)).normalized()
    pulse = lambda t: 0.05 * np.sin(0.4 * t)  # noqa: E731
    e1 = spo_global_error(atom, psi, pulse, 4.0, 0.02)
    e2 = spo_global_error(atom, psi, pulse, 4.0, 0.01)
    ratio = e1 / e2
    ok = 3.5 <= ratio <= 4.5
    acceptance(7, ok, f"global error {e1:.2e} -> {e2:.2e} when dt halves, ratio {ratio:.3f}")
    assert ok


def test_criterion_8_property_suites(tls_vshape, acceptance):
    cfg, art, _ = tls_vshape
    t0 = time.perf_counter()
    results = run_deep_validation()
    system = build_system(cfg)
    res = stationarity_residual(system, build_target(cfg, system), initial_state(system),
                                art.trace.field, cfg.control)
    bound = 10 * np.sqrt(cfg.control.dj_threshold)
    wall = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    ok = not failed and res <= bound and wall <= 600
    acceptance(8, ok, f"{len(results) - len(failed)}/{len(results)} oracle checks pass"
                      + (f" (failed: {', '.join(failed)})" if failed else "")
                      + f"; stationarity residual {res:.1e} <= {bound:.0e}; {wall:.0f}s")
    assert ok


def test_criterion_9_golden_regression(tls_vshape, acceptance):
    _, art, _ = tls_vshape
    gold = json.loads(GOLDEN.read_text())
    tr = art.trace
    dev = max(abs(tr.final.j1 - gold["j1"]), abs(tr.final.j - gold["j"]))
    ok = dev <= 1e-7 and abs(tr.iterations - gold["iterations"]) <= 2
    acceptance(9, ok, f"tls-vshape vs golden file: |dJ| {dev:.1e}, iterations "
                      f"{tr.iterations} (golden {gold['iterations']})")
    assert ok
