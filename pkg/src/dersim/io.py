"""Trace export/import, simulation config documents and run manifests.

Trace CSV layout: header ``time,x0,y0,z0,x1,...``, one row per sampled
frame.  Floats are written with 17 significant digits so a CSV re-import
reproduces the trace bit for bit.

Simulation config JSON::

    {
      "rod":   {"nodes": [[x, y, z], ...], "closed": false,
                "rest_lengths": [...]          (optional, default: current lengths)
                "u0": [x, y, z]},              (optional)
      "params": {"alpha": 1.0, "beta": 1.0, "linear_density": 1.0, "damping": 0.0},
      "scene": {"gravity": [0, 0, -9.81], "ground_height": 0.0,
                "obstacles": [{"center": [...], "half_extents": [...]}],
                "contact_stiffness": 1e4, "contact_damping": 10.0, "friction": 1.0},
      "boundary": {"fixed_nodes": [0], "fixed_positions": [[...]],
                   "theta_start": 0.0, "theta_end": 0.0},
      "dt": 0.002, "steps": 1000, "record_every": 10
    }
"""
from dataclasses import asdict, dataclass, field
import csv
import json
import os
import platform
import sys
import tempfile
import time

import numpy as np

from .dynamics import BoundaryCondition, RodState, SceneConfig
from .energetics import RodParams
from .errors import ConfigError


def write_trace_csv(path, trace):
    """``trace`` is a sequence of ``(time, nodes)`` pairs with equal node counts."""
    if not len(trace):
        raise ValueError("empty trace")
    n = len(trace[0][1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"{c}{i}" for i in range(n) for c in "xyz"])
        for t, x in trace:
            x = np.asarray(x, dtype=float)
            if x.shape != (n, 3):
                raise ValueError("all frames must have the same number of nodes")
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x.ravel()])


def read_trace_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from None
    if len(rows) < 2 or rows[0][0] != "time" or (len(rows[0]) - 1) % 3:
        raise ConfigError(f"{path} is not a trace CSV")
    out = []
    for row in rows[1:]:
        vals = np.array([float(v) for v in row])
        out.append((float(vals[0]), vals[1:].reshape(-1, 3)))
    return out


def write_trace_obj(path, trace, closed=False):
    """One named polyline object per frame."""
    with open(path, "w") as fh:
        base = 1
        for k, (t, x) in enumerate(trace):
            x = np.asarray(x, dtype=float)
            fh.write(f"o frame_{k}\n# time {float(t)!r}\n")
            for p in x:
                fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
            n = len(x)
            segs = [(i, i + 1) for i in range(n - 1)] + ([(n - 1, 0)] if closed else [])
            for i, j in segs:
                fh.write(f"l {base + i} {base + j}\n")
            base += n


def read_obj_counts(path):
    """Per-frame ``(vertex_count, segment_count)`` of an OBJ trace."""
    frames = []
    with open(path) as fh:
        for line in fh:
            tag = line.split(" ", 1)[0]
            if tag == "o":
                frames.append([0, 0])
            elif tag == "v":
                frames[-1][0] += 1
            elif tag == "l":
                frames[-1][1] += 1
    return [tuple(f) for f in frames]


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def atomic_write_json(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)
    os.replace(tmp, path)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass
class SimulationSetup:
    state: RodState
    params: RodParams
    scene: SceneConfig
    boundary: BoundaryCondition
    dt: float = 0.002
    steps: int = 1000
    record_every: int = 10


def load_simulation(path):
    """Build a :class:`SimulationSetup` from a config document (see module doc)."""
    doc = read_json(path)
    try:
        rod = doc["rod"]
        nodes = np.asarray(rod["nodes"], dtype=float)
        closed = bool(rod.get("closed", False))
        state = RodState.from_nodes(nodes, rod.get("rest_lengths"), closed, rod.get("u0"))
        pd = dict(doc.get("params", {}))
        params = RodParams.uniform(
            pd.get("alpha", 1.0), pd.get("beta", 1.0), state.centerline.rest_lengths,
            pd.get("linear_density", 1.0), pd.get("damping", 0.0), closed,
        )
        scene = SceneConfig(**doc.get("scene", {}))
        boundary = BoundaryCondition(**doc.get("boundary", {}))
        setup = SimulationSetup(state, params, scene, boundary, float(doc.get("dt", 0.002)),
                                int(doc.get("steps", 1000)), int(doc.get("record_every", 10)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation config {path}: {exc}") from None
    if not setup.dt > 0 or setup.steps < 0 or setup.record_every < 0:
        raise ConfigError("dt must be positive; steps and record_every non-negative")
    return setup


def code_version():
    from . import __version__

    return __version__


@dataclass
class RunManifest:
    """Record of one CLI invocation: enough to rerun it."""

    command: list
    config: dict = field(default_factory=dict)
    seed: int | None = None
    code_version: str = field(default_factory=code_version)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    python: str = field(default_factory=lambda: sys.version.split()[0])
    platform: str = field(default_factory=platform.platform)
    started: float = field(default_factory=time.time)

    def add_output(self, path):
        self.outputs.append(os.path.abspath(path))
        return path

    def time(self, name):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.timings[name] = time.perf_counter() - self.t0

        return _Timer()

    def write(self, path):
        missing = [p for p in self.outputs if not os.path.exists(p)]
        if missing:
            raise RuntimeError(f"manifest references missing outputs: {missing}")
        atomic_write_json(path, asdict(self))
        return path
