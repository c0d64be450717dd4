"""Compiled kernels against the numpy fallback.

Times each hot kernel on identical inputs for both backends, then a full
simulation step, and prints median microseconds per call and the speedup.

    python3 benchmarks/bench_kernels.py --n 20 60 200
"""
import argparse
import statistics
import time

import numpy as np

from dersim import _kernels_py as py
from dersim import kernels
from dersim.bench import _workload
from dersim.dynamics import step


def _median_us(fn, repeats, calls):
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(calls):
            fn()
        samples.append((time.perf_counter() - t0) / calls)
    return 1e6 * statistics.median(samples)


def _inputs(n, rng):
    d = rng.normal(size=(n, 3)) * 0.2 + [1.0, 0.0, 0.0]
    x = np.vstack([np.zeros(3), np.cumsum(d / np.linalg.norm(d, axis=1)[:, None], axis=0)])
    rest = np.linalg.norm(np.diff(x, axis=0), axis=1)
    nv = n - 1
    masses = rng.uniform(0.5, 1.5, n + 1)
    g = rng.normal(size=(nv, 9, 3))
    clamped = np.zeros(n + 1, dtype=bool)
    clamped[0] = True
    return {
        "x": x, "rest": rest, "tw": rng.normal(size=nv), "st": rng.uniform(0.5, 2.0, nv),
        "masses": masses, "forces": rng.normal(size=(n + 1, 3)), "v": rng.normal(size=(n + 1, 3)),
        "blocks": np.einsum("kai,kbi->kab", g, g), "kc": np.zeros((n + 1, 3, 3)),
        "dc": np.zeros((n + 1, 3, 3)), "clamped": clamped, "dv": np.zeros((n + 1, 3)),
        "y": x + 0.01 * rng.normal(size=x.shape), "w": np.where(clamped, 0.0, 1.0 / masses),
        "lo": np.array([[-0.2, 0.45, 0.0]]), "hi": np.array([[0.2, 0.55, 0.3]]),
    }


def _cases(k, a):
    return {
        "elastic_forces": lambda: k.elastic_forces(a["x"], a["rest"], False, 1.0, a["tw"], a["st"], True),
        "implicit_update": lambda: k.implicit_velocity_update(
            a["x"], a["masses"], a["forces"], a["v"], a["blocks"], a["kc"], a["dc"], 0.002,
            a["clamped"], a["dv"], False),
        "project_lengths": lambda: k.project_lengths(a["y"], a["w"], a["rest"], False, 1e-12, 50),
        "contact_terms": lambda: k.contact_terms(a["x"], a["v"], 0.0, a["lo"], a["hi"], 1e4, 10.0, 1.0),
    }


def _step_case(n):
    s, p, bc, scene, dt = _workload(n)
    return lambda: step(s, p, bc, scene, dt)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[20, 60, 200])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--calls", type=int, default=50)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; nothing to compare")
    cy = kernels.compiled_backend
    print(f"{'kernel':<18}{'n':>5}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for n in args.n:
        a = _inputs(n, np.random.default_rng(n))
        timings = {}
        for name, k in (("python", py), ("cython", cy)):
            for case, fn in _cases(k, a).items():
                timings[case, name] = _median_us(fn, args.repeats, args.calls)
            kernels.use(name)
            timings["full step", name] = _median_us(_step_case(n), args.repeats, args.calls)
        kernels.use("cython")
        for case in [*_cases(py, a), "full step"]:
            t_py, t_cy = timings[case, "python"], timings[case, "cython"]
            print(f"{case:<18}{n:>5}{t_py:>12.1f}{t_cy:>12.1f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
