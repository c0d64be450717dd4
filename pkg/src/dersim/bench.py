"""Per-step timing with and without the elastic-force computation.

The workload is the fling scene's hanging wire resampled at ``n`` sections:
gravity, ground and obstacle contact, clamped anchor and gripper.  Without
elastic forces a step still runs the implicit solve, the inextensibility
projection and contact, so the difference isolates frames, the twist solve
and the bending/twist forces.
"""
from dataclasses import dataclass, replace
import csv
import statistics
import time

import numpy as np

from . import kernels
from .dynamics import StepOptions, step
from .fling import FlingConfig, _boundary, initial_state


@dataclass
class BenchRow:
    n: int
    time_without: float
    time_with: float

    @property
    def overhead_pct(self):
        """Elastic-force share of the full step, in percent."""
        return 100.0 * (self.time_with - self.time_without) / self.time_with


def _workload(n):
    cfg = replace(FlingConfig(), n_sections=int(n))
    p = cfg.params(1.0, 1.0)
    return initial_state(cfg, p), p, _boundary(cfg), cfg.scene(), cfg.dt


def _time_steps(s, p, bc, scene, dt, options, steps):
    t0 = time.perf_counter()
    for _ in range(steps):
        step(s, p, bc, scene, dt, options)
    return (time.perf_counter() - t0) / steps


def bench_step(n_values=(20, 30, 40, 50, 60), repeats=7, steps=200, warmup=20, backend=None):
    """Median seconds per step for each ``n``; returns a list of :class:`BenchRow`.

    Both variants step from the same warmed-up state, so they see identical
    contacts and constraint work, and their repeats are interleaved so slow
    drifts in machine load hit both alike.
    """
    if not len(n_values):
        raise ValueError("n_values must be nonempty")
    if repeats < 1 or steps < 1:
        raise ValueError("repeats and steps must be positive")
    previous = kernels.NAME
    if backend is not None:
        kernels.use(backend)
    off, on = StepOptions(elastic=False), StepOptions()
    try:
        rows = []
        for n in n_values:
            s, p, bc, scene, dt = _workload(n)
            for _ in range(warmup):
                s = step(s, p, bc, scene, dt)
            without, with_ = [], []
            for _ in range(repeats):
                without.append(_time_steps(s, p, bc, scene, dt, off, steps))
                with_.append(_time_steps(s, p, bc, scene, dt, on, steps))
            rows.append(BenchRow(int(n), statistics.median(without), statistics.median(with_)))
        return rows
    finally:
        kernels.use(previous)


def write_bench_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "time_without", "time_with", "overhead_pct"])
        for r in rows:
            w.writerow([r.n, repr(r.time_without), repr(r.time_with), repr(r.overhead_pct)])


def strictly_decreasing(values):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))
