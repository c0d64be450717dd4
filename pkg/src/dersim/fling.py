"""Fling task: throw a hanging wire loop over a wall so it settles in a gap.

One end of the wire is anchored; the other is held by a kinematic gripper
whose pose (y, z, pitch) follows a cubic spline through the start pose and
three waypoints.  Pitch rotates the gripped end about the world x axis.
An episode is a single action followed by a single reward:

    r = 10            if the wire comes to rest in the gap
    r = -min_t d_err  otherwise
"""
from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import (
    BoundaryCondition,
    Box,
    RodState,
    SceneConfig,
    kinetic_energy,
    relax,
    step,
)
from .energetics import RodParams
from .errors import ConfigError, ConstraintError, DivergedError, GeometryError, NotSettledError

N_WAYPOINTS = 3
SUCCESS_REWARD = 10.0


@dataclass
class ActionBounds:
    dy: float = 0.6
    dz: float = 0.6
    pitch: float = math.pi / 2

    def as_array(self):
        return np.tile([self.dy, self.dz, self.pitch], N_WAYPOINTS)


@dataclass
class FlingAction:
    """Gripper pose offsets ``(dy, dz, pitch)`` at three waypoints."""

    offsets: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(N_WAYPOINTS, 3)

    @classmethod
    def from_vector(cls, vec, bounds=None):
        """Build an action from 9 numbers, clamping into ``bounds``."""
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.shape != (3 * N_WAYPOINTS,):
            raise ValueError(f"expected {3 * N_WAYPOINTS} numbers, got {vec.shape}")
        lim = (bounds or ActionBounds()).as_array()
        clipped = np.clip(vec, -lim, lim)
        return cls(clipped, clamped=bool(np.any(clipped != vec)))

    def vector(self):
        return self.offsets.ravel().copy()

    def to_dict(self):
        return {"offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d, bounds=None):
        return cls.from_vector(np.asarray(d["offsets"], dtype=float), bounds)


@dataclass
class FlingConfig:
    """Scene, wire and timing of the fling task (all SI units)."""

    wire_length: float = 2.0
    n_sections: int = 30
    linear_density: float = 0.5
    air_damping: float = 0.5
    anchor: tuple = (0.0, -0.125, 1.0)
    gripper_start: tuple = (0.0, 0.125, 1.0)
    wall_size: tuple = (0.4, 0.1, 0.3)
    near_wall_y: float = 0.45
    gap_width: float = 0.3
    gravity: tuple = (0.0, 0.0, -9.81)
    contact_stiffness: float = 1e4
    contact_damping: float = 10.0
    friction: float = 1.0
    control_steps: int = 75
    fling_duration: float = 1.5
    dt: float = 0.002
    settle_time: float = 3.0
    settle_kinetic: float = 1e-3
    ground_tolerance: float = 0.01
    bounds: ActionBounds = field(default_factory=ActionBounds)
    alpha_range: tuple = (0.5, 2.0)
    beta_range: tuple = (0.5, 2.0)

    def __post_init__(self):
        if isinstance(self.bounds, dict):
            self.bounds = ActionBounds(**self.bounds)
        for name in ("anchor", "gripper_start", "wall_size", "gravity", "alpha_range", "beta_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.n_sections < 4:
            raise ConfigError("n_sections must be at least 4")
        if self.control_steps < 4:
            raise ConfigError("control_steps must be at least 4")
        if self.fling_duration <= 0 or self.dt <= 0:
            raise ConfigError("durations must be positive")
        if self.gap_width <= 0 or min(self.wall_size) <= 0:
            raise ConfigError("walls and gap must have positive size")
        for lo, hi in (self.alpha_range, self.beta_range):
            if not 0 < lo <= hi:
                raise ConfigError("stiffness ranges must be positive and ordered")

    @property
    def substeps(self):
        return max(1, int(round(self.fling_duration / self.control_steps / self.dt)))

    def scene(self):
        sx, sy, sz = self.wall_size
        half = np.array([sx, sy, sz]) / 2
        near = Box([0.0, self.near_wall_y + half[1], half[2]], half)
        far = Box([0.0, self.near_wall_y + sy + self.gap_width + half[1], half[2]], half)
        return SceneConfig(
            gravity=self.gravity,
            ground_height=0.0,
            obstacles=[near, far],
            contact_stiffness=self.contact_stiffness,
            contact_damping=self.contact_damping,
            friction=self.friction,
        )

    def params(self, alpha, beta):
        rest = np.full(self.n_sections, self.wire_length / self.n_sections)
        return RodParams.uniform(alpha, beta, rest, self.linear_density, damping=self.air_damping)

    def to_dict(self):
        d = asdict(self)
        d["anchor"] = list(self.anchor)
        d["gripper_start"] = list(self.gripper_start)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def save_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2)


def load_config(path):
    try:
        with open(path) as fh:
            return FlingConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fling config {path}: {exc}") from None


def load_action(path, bounds=None):
    try:
        with open(path) as fh:
            return FlingAction.from_dict(json.load(fh), bounds)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read action {path}: {exc}") from None


# ---------------------------------------------------------------- trajectory

def start_pose(cfg):
    """``(y, z, pitch)`` of the gripper at rest."""
    return np.array([cfg.gripper_start[1], cfg.gripper_start[2], 0.0])


def trajectory_spline(a, pose0, duration):
    """Clamped cubic spline through the start pose and the three waypoints.

    Knots are evenly spaced in time; the gripper starts and ends at rest.
    """
    pose0 = np.asarray(pose0, dtype=float)
    knots = np.vstack([pose0, pose0 + a.offsets])
    times = np.linspace(0.0, duration, N_WAYPOINTS + 1)
    return CubicSpline(times, knots, axis=0, bc_type="clamped")


def build_trajectory(a, pose0, n_steps, duration=1.0):
    """``n_steps`` gripper poses sampled uniformly over ``[0, duration]``."""
    if n_steps < 4:
        raise ValueError("n_steps must be at least 4")
    spline = trajectory_spline(a, pose0, duration)
    out = spline(np.linspace(0.0, duration, n_steps))
    out[0] = pose0
    return out


def gripper_nodes(cfg, pose):
    """Positions of the two gripped nodes for a pose; the wire leaves downward."""
    y, z, pitch = pose
    tip = np.array([cfg.gripper_start[0], y, z])
    edge = cfg.wire_length / cfg.n_sections
    out = np.array([0.0, math.sin(pitch), -math.cos(pitch)])
    return np.vstack([tip + edge * out, tip])


class GripperPath:
    """Piecewise-linear interpolation between control setpoints, then hold."""

    def __init__(self, cfg, setpoints):
        self.cfg = cfg
        self.setpoints = np.asarray(setpoints, dtype=float)
        self.period = cfg.fling_duration / (len(self.setpoints) - 1)

    def pose(self, t):
        u = max(t, 0.0) / self.period
        k = int(u)
        if k >= len(self.setpoints) - 1:
            return self.setpoints[-1]
        w = u - k
        return (1.0 - w) * self.setpoints[k] + w * self.setpoints[k + 1]

    def __call__(self, t):
        return gripper_nodes(self.cfg, self.pose(t)), 0.0


# ---------------------------------------------------------------- scene queries

def _gap(scene):
    if len(scene.obstacles) != 2:
        raise ValueError("the fling scene needs exactly two obstacles")
    a, b = scene.obstacles
    axis = int(np.argmax(np.abs(b.center - a.center)))
    near, far = (a, b) if a.center[axis] < b.center[axis] else (b, a)
    return near, far, axis


def gap_volume(scene, ground_tolerance=0.0):
    """Axis-aligned ``(lo, hi)`` of the space between the two obstacles."""
    near, far, axis = _gap(scene)
    lo = np.maximum(near.lo, far.lo)
    hi = np.minimum(near.hi, far.hi)
    lo[axis] = near.hi[axis]
    hi[axis] = far.lo[axis]
    ground = scene.ground_height if scene.ground_height is not None else -np.inf
    lo[2] = ground - ground_tolerance
    hi[2] = min(near.hi[2], far.hi[2])
    return lo, hi


def goal_point(scene):
    """Midpoint of the two obstacles' top-centre points."""
    near, far, _ = _gap(scene)
    top = lambda b: b.center + np.array([0.0, 0.0, b.half_extents[2]])
    return 0.5 * (top(near) + top(far))


def _in_box(x, lo, hi):
    return np.all((x > lo) & (x < hi), axis=-1)


def d_err(s, scene, ground_tolerance=0.0):
    """0 if any node is inside the gap, else the distance from the wire to the goal."""
    x = s.x if isinstance(s, RodState) else np.asarray(s, dtype=float)
    lo, hi = gap_volume(scene, ground_tolerance)
    if np.any(_in_box(x, lo, hi)):
        return 0.0
    return float(np.min(np.linalg.norm(x - goal_point(scene), axis=1)))


def reward(min_d_err, success):
    if min_d_err < 0:
        raise ValueError("min_d_err must be non-negative")
    return SUCCESS_REWARD if success else -float(min_d_err)


def check_success(s, scene, p=None, free_nodes=None, kinetic_tol=None, ground_tolerance=0.0):
    """True iff the wire rests with its lowest free node in the gap and
    nothing beyond the far obstacle.

    With ``p`` and ``kinetic_tol`` given, raises :class:`NotSettledError`
    when the wire is still moving.
    """
    if p is not None and kinetic_tol is not None:
        ke = kinetic_energy(s, p)
        if ke > kinetic_tol:
            raise NotSettledError(f"kinetic energy {ke:.3g} J above {kinetic_tol:.3g} J")
    x = s.x if isinstance(s, RodState) else np.asarray(s, dtype=float)
    free = x if free_nodes is None else x[free_nodes]
    lo, hi = gap_volume(scene, ground_tolerance)
    lowest = free[int(np.argmin(free[:, 2]))]
    _, far, axis = _gap(scene)
    beyond = np.any(x[:, axis] > far.hi[axis])
    return bool(_in_box(lowest, lo, hi)) and not beyond


# ---------------------------------------------------------------- episodes

@dataclass
class EpisodeResult:
    reward: float
    min_d_err: float
    success: bool
    trace: list = field(default_factory=list)
    diverged: bool = False
    settled: bool = True
    clamped_action: bool = False
    alpha: float = float("nan")
    beta: float = float("nan")

    def summary(self):
        return {
            "reward": self.reward,
            "min_d_err": self.min_d_err,
            "success": self.success,
            "diverged": self.diverged,
            "settled": self.settled,
            "clamped_action": self.clamped_action,
            "alpha": self.alpha,
            "beta": self.beta,
        }


def _u_curve(cfg):
    """Arc-length sampled U from the anchor down, round the bottom, up to the gripper."""
    a = np.asarray(cfg.anchor, dtype=float)
    g = np.asarray(cfg.gripper_start, dtype=float)
    half = 0.5 * np.linalg.norm(g - a)
    mid = 0.5 * (a + g)
    across = (g - a) / (2.0 * half)
    arc = math.pi * half
    leg = 0.5 * (cfg.wire_length - arc)
    if leg <= 0:
        raise ConfigError("wire too short for the anchor/gripper spacing")
    pts = []
    for s in np.linspace(0.0, cfg.wire_length, cfg.n_sections + 1):
        if s <= leg:
            pts.append(a - np.array([0.0, 0.0, s]))
        elif s <= leg + arc:
            ang = (s - leg) / half
            pts.append(mid - half * math.cos(ang) * across - np.array([0.0, 0.0, leg + half * math.sin(ang)]))
        else:
            pts.append(g - np.array([0.0, 0.0, cfg.wire_length - s]))
    return np.array(pts)


def _boundary(cfg, path=None):
    n = cfg.n_sections
    g = GripperPath(cfg, [start_pose(cfg)] * 2) if path is None else path
    return BoundaryCondition(
        fixed_nodes=[0],
        fixed_positions=[cfg.anchor],
        gripper_nodes=[n - 1, n],
        gripper_path=g,
    )


_REST_CACHE = {}


def initial_state(cfg, p, max_steps=20000):
    """Wire hanging at rest between the anchor and the gripper start pose."""
    key = (json.dumps(cfg.to_dict(), sort_keys=True, default=str), p.alpha, p.beta)
    hit = _REST_CACHE.get(key)
    if hit is not None:
        return hit.copy()
    x = _u_curve(cfg)
    s = RodState.from_nodes(x, np.full(cfg.n_sections, cfg.wire_length / cfg.n_sections))
    s, _ = relax(s, p, _boundary(cfg), cfg.scene(), max_steps=max_steps,
                 kinetic_tol=1e-8, dt=cfg.dt, damping=5.0)
    s.velocities[:] = 0.0
    s.time = 0.0
    if len(_REST_CACHE) > 256:
        _REST_CACHE.clear()
    _REST_CACHE[key] = s.copy()
    return s


def run_episode(a, cfg, alpha, beta, record_every=0):
    """Roll out one fling; see the module docstring for the reward."""
    scene = cfg.scene()
    p = cfg.params(alpha, beta)
    s = initial_state(cfg, p)
    tol = cfg.ground_tolerance
    start_err = d_err(s, scene, tol)
    setpoints = build_trajectory(a, start_pose(cfg), cfg.control_steps, cfg.fling_duration)
    path = GripperPath(cfg, setpoints)
    bc = _boundary(cfg, path)
    free = np.arange(cfg.n_sections - 1)
    trace = [(s.time, s.x.copy())] if record_every else []
    best = start_err
    sub = cfg.substeps
    settle_steps = int(round(cfg.settle_time / cfg.dt))
    n_fling = (cfg.control_steps - 1) * sub
    settled = False
    k = 0
    try:
        while k < n_fling + settle_steps:
            s = step(s, p, bc, scene, cfg.dt, step_index=k)
            k += 1
            if k % sub == 0:
                best = min(best, d_err(s, scene, tol))
                if record_every and (k // sub) % record_every == 0:
                    trace.append((s.time, s.x.copy()))
                if k >= n_fling and kinetic_energy(s, p) < cfg.settle_kinetic:
                    settled = True
                    break
    except (DivergedError, ConstraintError, GeometryError):
        return EpisodeResult(reward(start_err, False), start_err, False, trace, diverged=True,
                             settled=False, clamped_action=a.clamped, alpha=alpha, beta=beta)
    success = settled and check_success(s, scene, free_nodes=free, ground_tolerance=tol)
    return EpisodeResult(reward(best, success), best, success, trace, settled=settled,
                         clamped_action=a.clamped, alpha=alpha, beta=beta)


def append_jsonl(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")
