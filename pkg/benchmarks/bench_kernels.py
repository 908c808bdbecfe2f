"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``TDOCT_DISABLE_NUMBA``.

    python benchmarks/bench_kernels.py [--repeat 3] [--points 512]
"""
import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeat):
    fn()  # warm-up, includes compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def worker(repeat, points):
    import numpy as np
    from tdoct import BACKEND
    from tdoct.control import ControlParams, ControlProblem
    from tdoct.propagation import GridAtom, TwoLevelSystem, make_stepper
    from tdoct.state import Grid, TimeGrid
    from tdoct.targets import Follower, TargetSpec, v_shape

    out = {"backend": BACKEND}
    tls = TwoLevelSystem()
    n_tls = 20000
    eps = 0.01 * np.sin(0.395 * 0.01 * np.arange(n_tls))
    st = make_stepper(tls, 0.01)
    psi = np.array([1.0, 0.0], dtype=complex)
    out["tls_propagate"] = (_best(lambda: st.propagate(psi, eps), repeat), n_tls)

    atom = GridAtom(Grid(-100.0, 100.0, points))
    n_grid = 400
    gs = make_stepper(atom, 0.005)
    psi_g = atom.ground_state().amplitudes
    eps_g = 0.01 * np.sin(0.395 * 0.005 * np.arange(n_grid))
    out["grid_propagate"] = (_best(lambda: gs.propagate(psi_g, eps_g), repeat), n_grid)

    for name, system, dt, n in (("tls_iteration", tls, 0.01, n_tls),
                                ("grid_iteration", atom, 0.005, n_grid)):
        T = n * dt
        tg = TimeGrid.from_total(T, dt)
        target = TargetSpec(o1=Follower(v_shape(T), system.eigensystem(2)))
        prob = ControlProblem(system, target, system.ground_state(), tg,
                              ControlParams(alpha=0.05, eta=1.0, gamma=1.0))
        e0 = np.full(n, 1e-3)
        prob.propagate(prob.make_field(e0))

        def iteration():
            e_t, _, _ = prob.backward(e0, 1.0)
            prob.forward(e_t, 1.0)

        out[name] = (_best(iteration, repeat), n)
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--points", type=int, default=512)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat, args.points)
        return
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, TDOCT_DISABLE_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeat", str(args.repeat),
             "--points", str(args.points)],
            env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        results[res.pop("backend")] = res
    print(f"{'kernel':<16} {'steps':>6} {'numba us/step':>14} {'numpy us/step':>14} {'speedup':>8}")
    for key, (t_nb, n) in results["numba"].items():
        t_np = results["numpy"][key][0]
        print(f"{key:<16} {n:>6d} {1e6 * t_nb / n:>14.2f} {1e6 * t_np / n:>14.2f} "
              f"{t_np / t_nb:>8.1f}")


if __name__ == "__main__":
    main()
