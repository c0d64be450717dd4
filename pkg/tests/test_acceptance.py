"""End-to-end acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line.  The buckling, Michell and
fling criteria are long runs (minutes to about an hour on one core).
"""
import math

import numpy as np
import pytest

from dersim.bench import bench_step, strictly_decreasing
from dersim.dynamics import BoundaryCondition, RodState, SceneConfig, step, total_energy
from dersim.energetics import (
    MaterialFrame,
    RodParams,
    centerline_forces,
    fd_gradient_check,
    net_force_and_torque,
    solve_quasistatic_thetas,
)
from dersim.fling import FlingConfig, reward
from dersim.geometry import Centerline, init_reference_frames
from dersim.policy import TrainConfig, evaluate, train
from dersim.validation import BucklingConfig, run_helical_buckling, run_michell

from conftest import random_rod, ring_nodes


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
        return ok

    return emit


def test_gradient_correctness(report):
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(20):
        x = random_rod(rng, 10, bend=0.5)
        c = Centerline(x, np.linalg.norm(np.diff(x, axis=0), axis=1))
        f = init_reference_frames(c, rng.normal(size=3))
        p = RodParams.uniform(rng.uniform(0.5, 2), rng.uniform(0.5, 2), c.rest_lengths, 1.0)
        m = MaterialFrame(np.r_[rng.normal(), np.zeros(7), 3 * rng.normal()])
        worst = max(worst, fd_gradient_check(c, f, m, p, 1e-5))
    assert report(1, "gradient", worst < 1e-4, f"max relative error {worst:.2e} (< 1e-4)")


def test_helical_buckling(report):
    res = run_helical_buckling(BucklingConfig(n_values=[40, 80, 140]))
    errs = [r.avg_error for r in res]
    decreasing = strictly_decreasing(errs)
    ok = decreasing and errs[-1] <= 0.004
    detail = ", ".join(f"n={r.n}: {r.avg_error:.6f}" for r in res)
    assert report(2, "helical buckling", ok,
                  f"{detail}; strictly decreasing={decreasing}; n=140 <= 0.004: {errs[-1] <= 0.004}")


def test_michell_instability(report):
    res = run_michell([0.5, 1.0, 1.5], n=50)
    worst = max(r.deviation_pct for r in res)
    detail = ", ".join(f"b/a={r.beta_over_alpha}: {r.theta_c_measured:.3f} vs {r.theta_c_analytic:.3f} "
                       f"({r.deviation_pct:.2f}%)" for r in res)
    assert report(3, "Michell", worst <= 5.0, detail)


def _invariants():
    out = {}
    rng = np.random.default_rng(4)
    x = random_rod(rng, 12, bend=0.3)
    scene = SceneConfig(ground_height=None)

    def run():
        s = RodState.from_nodes(x)
        p = RodParams.uniform(1.0, 1.0, s.centerline.rest_lengths, 1.0, damping=1.0)
        bc = BoundaryCondition([0, 1], x[:2], theta_end=2.0)
        energies, ext, orth = [total_energy(s, p, scene, bc)], 0.0, 0.0
        for _ in range(200):
            s = step(s, p, bc, scene, 0.002)
            e = np.linalg.norm(np.diff(s.x, axis=0), axis=1)
            ext = max(ext, np.max(np.abs(e / s.centerline.rest_lengths - 1)))
            f = s.frames
            orth = max(orth, np.max(np.abs(np.linalg.norm(f.reference_dirs, axis=1) - 1)),
                       np.max(np.abs(np.einsum("ij,ij->i", f.reference_dirs, f.tangents))))
            energies.append(total_energy(s, p, scene, bc))
        return s, energies, ext, orth

    s1, energies, out["extension"], out["orthonormality"] = run()
    s2, *_ = run()
    out["energy_rise"] = max(0.0, np.max(np.diff(energies)) / abs(energies[0]))
    out["deterministic"] = bool(np.array_equal(s1.x, s2.x) and np.array_equal(s1.velocities, s2.velocities))

    n = 12
    y = ring_nodes(n) + 0.1 * rng.normal(size=(n, 3))
    c = Centerline(y, np.linalg.norm(np.roll(y, -1, axis=0) - y, axis=1), closed=True)
    f = init_reference_frames(c, [0, 0, 1])
    p = RodParams.uniform(1.0, 1.3, c.rest_lengths, 1.0, closed=True)
    m = solve_quasistatic_thetas(c, f, MaterialFrame(np.zeros(n), seam_twist=1.7), p)
    forces = centerline_forces(c, f, m, p)
    total, torque = net_force_and_torque(c, forces)
    scale = np.abs(forces).max()
    out["net_force"] = np.linalg.norm(total) / scale
    out["net_torque"] = np.linalg.norm(torque) / scale
    return out


def test_invariant_suite(report):
    r = _invariants()
    ok = (r["extension"] <= 1e-8 and r["orthonormality"] <= 1e-10 and r["net_force"] <= 1e-10
          and r["net_torque"] <= 1e-9 and r["energy_rise"] <= 1e-9 and r["deterministic"])
    detail = ", ".join(f"{k}={v:.2e}" if not isinstance(v, bool) else f"{k}={v}" for k, v in r.items())
    assert report(4, "invariants", ok, detail)


def test_benchmark_trend(report):
    rows = bench_step([20, 30, 40, 50, 60], repeats=7, steps=200)
    pct = [r.overhead_pct for r in rows]
    ok = strictly_decreasing(pct) and all(r.time_with > r.time_without for r in rows)
    assert report(5, "benchmark trend", ok, " -> ".join(f"n={r.n}: {r.overhead_pct:.2f}%" for r in rows))


def test_fling_learning(report, tmp_path):
    cfg = FlingConfig()
    res = train(cfg, TrainConfig(total_episodes=5000, seed=7), checkpoint_path=tmp_path / "ck.json")
    rewards = [row[1] for row in res.curve]
    q = len(rewards) // 4
    first, last = float(np.mean(rewards[:q])), float(np.mean(rewards[-q:]))
    rate, mean = evaluate(res.policy, cfg, episodes=30, deterministic=True)
    ok = rate >= 0.8 and last > first
    assert report(6, "fling learning", ok,
                  f"success {rate:.3f} over 30 episodes (>= 0.8), mean reward {mean:.3f}; "
                  f"quartile means {first:.3f} -> {last:.3f}")


def test_reward_table(report):
    cases = [((0.4, True), 10.0), ((0.0, True), 10.0), ((0.37, False), -0.37), ((0.0, False), 0.0)]
    ok = all(reward(*args) == want for args, want in cases)
    assert report(7, "reward table", ok, "success -> 10, fail -> -min d_err, fail at d_err 0 -> 0")
