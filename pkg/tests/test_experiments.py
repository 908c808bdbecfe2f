import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tdoct import cli
from tdoct.config import (PRESETS, ConfigError, load_config, parse_config, to_ini, with_axis)
from tdoct.experiments import (EXIT_CODES, generate_reference_trajectory, run_experiment,
                               run_sweep, validate)

TLS_SMALL = """
[meta]
base = tls-vshape
[time]
total = 20
[control]
alpha = 0.5
eta = 1
gamma = 1
max_iterations = 300
dj_threshold = 1e-7
[output]
stride = 10
"""

GRID_SMALL = """
[system]
kind = grid_atom
x_min = -40
x_max = 40
n_points = 128
[time]
total = 4
dt = 0.005
[target]
preset = follower:v_shape
[control]
alpha = 1.5
eta = 0.3
gamma = 0
max_iterations = 3
dj_threshold = 1e-12
[output]
stride = 100
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# --- config -----------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_load_and_round_trip(name):
    cfg = load_config(name)
    assert cfg.time_grid.n_steps % cfg.stride == 0
    assert parse_config(to_ini(cfg), cfg.name) == cfg


def test_preset_parameters():
    tls = load_config("tls-vshape")
    assert (tls.dt, tls.control.alpha, tls.control.initial_field) == (0.01, 0.05, 1e-4)
    h = load_config("h1d-vshape")
    assert (h.dt, h.control.alpha, h.system.n_points) == (0.005, 1.5, 2048)
    md = load_config("moving-density")
    assert (md.dt, md.control.alpha, md.control.initial_field) == (0.005, 0.5, 1e-3)


def test_base_inheritance(tmp_path):
    cfg = load_config(str(_write(tmp_path, TLS_SMALL)))
    assert cfg.name == "exp" and cfg.total_time == 20 and cfg.control.alpha == 0.5
    assert cfg.target.preset == "follower:v_shape"
    assert cfg.checkpoint_levels == (0.9, 0.95, 0.99)


@pytest.mark.parametrize("text, fragment", [
    ("[time]\ntotal = 400.003\ndt = 0.01\n", "multiple"),
    ("[bogus]\nx = 1\n", "unknown section"),
    ("[control]\nalpah = 1\n", "unknown key"),
    ("[control]\nalpha = abc\n", "alpha"),
    ("[control]\nalpha = -1\n", "alpha"),
    ("alpha = 1\n", "cannot parse"),
    ("[target]\npreset = follower:zigzag\n", "zigzag"),
    ("[output]\nstride = 7\n", "stride"),
    ("[meta]\nbase = nope\n", "nope"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_unknown_source():
    with pytest.raises(ConfigError):
        load_config("no-such-preset")


def test_with_axis():
    cfg = load_config("tls-step")
    assert with_axis(cfg, "alpha", 0.2).control.alpha == 0.2
    assert with_axis(cfg, "n", 3).target.exponent == 3
    with pytest.raises(ConfigError):
        with_axis(cfg, "n", 2.5)
    with pytest.raises(ConfigError):
        with_axis(cfg, "omega", 1.0)


# --- run_experiment -------------------------------------------------------------------


@pytest.fixture(scope="module")
def tls_artifacts(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    cfg = load_config(str(_write(d, TLS_SMALL)))
    return cfg, run_experiment(cfg, d / "run1")


def test_artifact_row_counts(tls_artifacts):
    cfg, art = tls_artifacts
    n_rows = cfg.time_grid.n_steps // cfg.stride + 1
    for key in ("occupations", "field"):
        rows = _rows(art.files[key])
        assert len(rows) - 1 == n_rows
    assert _rows(art.files["occupations"])[0] == ["t", "p0", "p1"]
    assert _rows(art.files["field"])[0] == ["t", "eps", "abs_eps", "envelope"]
    assert len(_rows(art.files["functional"])) - 1 == len(art.trace.records)
    assert art.occupations.shape == (n_rows, 2) and art.field.shape == (n_rows,)


def test_artifact_metadata(tls_artifacts):
    cfg, art = tls_artifacts
    meta = json.loads(art.files["metadata"].read_text())
    assert meta["status"] == "converged" and meta["exit_code"] == 0
    assert meta["control"]["alpha"] == 0.5 and meta["control"]["eta"] == 1.0
    assert parse_config(meta["config"], cfg.name, cfg.base_dir) == cfg
    assert meta["fft_count"] == 0  # level system: no FFTs
    assert set(meta["versions"]) >= {"tdoct", "numpy", "scipy", "numba", "backend"}
    assert meta["iterations"] == art.trace.iterations
    assert meta["final"]["j1"] == art.j1


def test_run_is_deterministic(tls_artifacts, tmp_path):
    cfg, first = tls_artifacts
    second = run_experiment(cfg, tmp_path / "run2")
    for key in ("occupations", "field", "functional"):
        assert first.files[key].read_bytes() == second.files[key].read_bytes()
    m1 = json.loads(first.files["metadata"].read_text())
    m2 = json.loads(second.files["metadata"].read_text())
    m1.pop("wall_time"), m2.pop("wall_time")
    assert m1 == m2


def test_grid_run_artifacts(tmp_path):
    cfg = parse_config(GRID_SMALL, "grid-small", str(tmp_path))
    art = run_experiment(cfg, tmp_path / "out")
    assert art.exit_code == EXIT_CODES["max_iterations"] == 2
    rows = _rows(art.files["position"])
    assert rows[0] == ["t", "x_mean", "norm"]
    assert len(rows) - 1 == cfg.time_grid.n_steps // cfg.stride + 1
    assert art.metadata["fft_count"] > 0
    with pytest.raises(ValueError):
        art.tracking_error()


# --- reference trajectory ------------------------------------------------------------


def test_reference_zero_field(tmp_path):
    cfg = parse_config("[meta]\nbase = moving-density\n[time]\ntotal = 5\n[output]\nstride = 10\n"
                       "[reference]\namplitude = 0\n", "zero", str(tmp_path))
    data = np.loadtxt(generate_reference_trajectory(cfg, tmp_path / "r.txt"))
    assert data.shape == (cfg.time_grid.n_steps + 1, 2)
    assert np.max(np.abs(data[:, 1])) < 1e-10


def test_reference_resonant_frequency_and_bits(tmp_path):
    cfg = load_config("moving-density")
    p1 = generate_reference_trajectory(cfg, tmp_path / "a.txt")
    p2 = generate_reference_trajectory(cfg, tmp_path / "b.txt")
    assert p1.read_bytes() == p2.read_bytes()
    t, r = np.loadtxt(p1).T
    assert np.max(np.abs(r)) > 0.1
    n = 1 << 18
    spec = np.abs(np.fft.rfft(r - r.mean(), n))
    omega = 2 * np.pi * np.fft.rfftfreq(n, t[1] - t[0])
    assert omega[np.argmax(spec)] == pytest.approx(0.395, abs=0.01)


# --- sweeps ----------------------------------------------------------------------------


def test_single_value_sweep_matches_run(tls_artifacts, tmp_path):
    cfg, art = tls_artifacts
    rows = run_sweep(cfg, "alpha", [0.5], tmp_path)
    assert len(rows) == 1 and rows[0].status == "converged"
    assert rows[0].j1 == art.j1 and rows[0].iterations == art.trace.iterations
    sub = tmp_path / "alpha_0.5"
    for name in ("occupations.csv", "field.csv", "functional.csv"):
        assert (sub / name).read_bytes() == art.files[name.split(".")[0]].read_bytes()
    assert len(_rows(tmp_path / "summary.csv")) == 2


def test_sweep_records_failures(tmp_path):
    cfg = load_config(str(_write(tmp_path, TLS_SMALL)))
    rows = run_sweep(cfg, "alpha", [0.5, 0.0, 1.0], tmp_path / "sw", max_iter=5, workers=2)
    assert [r.value for r in rows] == [0.5, 0.0, 1.0]
    assert rows[1].status == "failed" and "alpha" in rows[1].error
    assert rows[0].status == rows[2].status == "max_iterations"
    assert (tmp_path / "sw" / "alpha_1" / "metadata.json").is_file()
    summary = _rows(tmp_path / "sw" / "summary.csv")
    assert [s[1] for s in summary[1:]] == ["max_iterations", "failed", "max_iterations"]


def test_sweep_rejects_bad_input(tmp_path):
    cfg = load_config("tls-step")
    with pytest.raises(ConfigError):
        run_sweep(cfg, "alpha", [], tmp_path)
    with pytest.raises(ConfigError):
        run_sweep(cfg, "alpha", [float("nan")], tmp_path)
    with pytest.raises(ConfigError):
        run_sweep(cfg, "omega", [1.0], tmp_path)


# --- validate -----------------------------------------------------------------------------


def test_validate_full_grid():
    rep = validate(load_config("h1d-vshape"))
    assert rep.ok, rep.table()
    names = [n for n, _, _ in rep.entries]
    assert {"omega01", "P01", "memory", "target"} <= set(names)


def test_validate_reports_failures(tmp_path):
    rep = validate(parse_config("[time]\ntotal = 400.003\n", check=False))
    assert not rep.ok and any("multiple" in d for _, _, d in rep.failures)
    md = parse_config("[meta]\nbase = moving-density\n[target]\npreset = moving_density:file=gone.txt\n",
                      "md", str(tmp_path), check=False)
    rep = validate(md)
    assert any("gone.txt" in d for _, _, d in rep.failures)


def test_moving_density_from_file(tmp_path):
    base = "[meta]\nbase = moving-density\n[time]\ntotal = 5\n[output]\nstride = 10\n"
    cfg = parse_config(base, "ref", str(tmp_path))
    generate_reference_trajectory(cfg, tmp_path / "traj.txt")
    cfg2 = parse_config(base + "[target]\npreset = moving_density:file=traj.txt\n", "md",
                        str(tmp_path))
    assert validate(cfg2).ok


# --- command line ---------------------------------------------------------------------------


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg_path = _write(tmp_path, TLS_SMALL)
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert "converged" in capsys.readouterr().out
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "b"), "--max-iter", "1"]) == 2
    abort = _write(tmp_path, TLS_SMALL + "[control]\ntol_mono = -1\ndj_threshold = 0\n", "abort.ini")
    assert cli.main(["run", str(abort), "--out", str(tmp_path / "c")]) == 3
    assert cli.main(["run", str(cfg_path), "--stride", "7", "--out", str(tmp_path / "d")]) == 4
    bad = _write(tmp_path, "[time]\ntotal = 1.003\n", "bad.ini")
    assert cli.main(["run", str(bad)]) == 4
    assert cli.main(["run", "no-such-preset"]) == 4
    tiny = _write(tmp_path, GRID_SMALL + "[control]\nmemory_cap_gib = 1e-6\n", "tiny.ini")
    assert cli.main(["run", str(tiny), "--out", str(tmp_path / "e")]) == 4
    err = capsys.readouterr().err
    assert "config error" in err and "memory limit" in err


def test_cli_validate_and_show(tmp_path, capsys):
    bad = _write(tmp_path, "[time]\ntotal = 1.003\n", "bad.ini")
    assert cli.main(["validate", str(bad)]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert cli.main(["validate", "tls-vshape"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert cli.main(["show", "tls-step"]) == 0
    text = capsys.readouterr().out
    assert parse_config(text, "tls-step") == load_config("tls-step")
    assert cli.main(["presets"]) == 0
    assert set(capsys.readouterr().out.split()) == set(PRESETS)


def test_cli_sweep_and_reference(tmp_path, capsys):
    cfg_path = _write(tmp_path, TLS_SMALL)
    assert cli.main(["sweep", str(cfg_path), "--axis", "alpha", "--values", "0.5,1.0",
                     "--max-iter", "3", "--workers", "1", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "summary.csv").is_file()
    assert cli.main(["sweep", str(cfg_path), "--axis", "alpha", "--values", "x"]) == 4
    ref = _write(tmp_path, "[meta]\nbase = moving-density\n[time]\ntotal = 2\n[output]\nstride = 10\n",
                 "ref.ini")
    assert cli.main(["reference", str(ref), "--out", str(tmp_path / "r.txt")]) == 0
    assert (tmp_path / "r.txt").is_file()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tdoct", "presets"], capture_output=True,
                          text=True, check=True)
    assert "tls-vshape" in proc.stdout
