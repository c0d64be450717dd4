"""Time integration of a discrete elastic rod.

One step:

1. transport the reference frames onto the current centerline,
2. relax the material thetas (boundary thetas come from the clamps),
3. elastic + gravity + contact forces,
4. linearly implicit Euler velocity update (Gauss-Newton stiffness), then
   exponential velocity damping and the position update,
5. Newton projection onto the inextensibility manifold, with the position
   correction fed back into the velocities,
6. clamped nodes moved to their prescribed targets.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import kernels
from .energetics import (
    MaterialFrame,
    RodParams,
    centerline_forces,
    elastic_energy,
    solve_quasistatic_thetas,
)
from .errors import ConstraintError, DivergedError
from .geometry import Centerline, FrameSet, init_reference_frames, time_parallel_update

DEFAULT_DT = 0.002
MAX_SPEED = 1e4


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    @property
    def lo(self):
        return self.center - self.half_extents

    @property
    def hi(self):
        return self.center + self.half_extents

    def overlaps(self, other):
        return bool(np.all(self.lo < other.hi) and np.all(other.lo < self.hi))

    def to_dict(self):
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist()}


@dataclass
class SceneConfig:
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    ground_height: float | None = 0.0
    obstacles: list = field(default_factory=list)
    contact_stiffness: float = 1e4
    contact_damping: float = 10.0
    friction: float = 1.0

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.obstacles = [b if isinstance(b, Box) else Box(**b) for b in self.obstacles]
        if self.contact_stiffness <= 0:
            raise ValueError("contact stiffness must be positive")
        for i, a in enumerate(self.obstacles):
            for b in self.obstacles[i + 1:]:
                if a.overlaps(b):
                    raise ValueError("obstacle boxes must be disjoint")
        # flat arrays for the contact kernel
        self._ground = np.nan if self.ground_height is None else float(self.ground_height)
        self._box_lo = np.array([b.lo for b in self.obstacles]).reshape(-1, 3)
        self._box_hi = np.array([b.hi for b in self.obstacles]).reshape(-1, 3)

    @classmethod
    def empty(cls):
        """No gravity, no ground, no obstacles: the analytic test setting."""
        return cls(gravity=np.zeros(3), ground_height=None, obstacles=[])

    def to_dict(self):
        return {
            "gravity": self.gravity.tolist(),
            "ground_height": self.ground_height,
            "obstacles": [b.to_dict() for b in self.obstacles],
            "contact_stiffness": self.contact_stiffness,
            "contact_damping": self.contact_damping,
            "friction": self.friction,
        }


@dataclass
class BoundaryCondition:
    """Prescribed nodes and boundary material angles.

    ``fixed_nodes`` stay at ``fixed_positions``.  ``gripper_nodes`` follow
    ``gripper_path(t) -> (positions, theta_end)`` when a path is given.
    ``theta_start``/``theta_end`` clamp the material angle of the first and
    last edge (ignored for closed rods).
    """

    fixed_nodes: list = field(default_factory=list)
    fixed_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    theta_start: float = 0.0
    theta_end: float = 0.0
    gripper_nodes: list = field(default_factory=list)
    gripper_path: object = None

    def __post_init__(self):
        self.fixed_nodes = [int(i) for i in self.fixed_nodes]
        self.gripper_nodes = [int(i) for i in self.gripper_nodes]
        self.fixed_positions = np.asarray(self.fixed_positions, dtype=float).reshape(-1, 3)
        if len(self.fixed_positions) != len(self.fixed_nodes):
            raise ValueError("one position per fixed node is required")
        if set(self.fixed_nodes) & set(self.gripper_nodes):
            raise ValueError("fixed and gripper nodes must be distinct")

    @property
    def clamped_nodes(self):
        return self.fixed_nodes + self.gripper_nodes

    def targets(self, t):
        """Clamped node indices, their positions and the end theta at time ``t``."""
        idx = list(self.fixed_nodes)
        pos = [self.fixed_positions]
        theta_end = self.theta_end
        if self.gripper_nodes and self.gripper_path is not None:
            gpos, theta_end = self.gripper_path(t)
            idx += self.gripper_nodes
            pos.append(np.asarray(gpos, dtype=float).reshape(-1, 3))
        return np.array(idx, dtype=int), np.concatenate(pos, axis=0), theta_end


@dataclass
class RodState:
    centerline: Centerline
    velocities: np.ndarray
    frames: FrameSet
    material: MaterialFrame
    time: float = 0.0

    @property
    def x(self):
        return self.centerline.nodes

    def copy(self):
        return RodState(
            replace(self.centerline, nodes=self.centerline.nodes.copy()),
            self.velocities.copy(),
            self.frames.copy(),
            self.material.copy(),
            self.time,
        )

    @classmethod
    def from_nodes(cls, nodes, rest_lengths=None, closed=False, u0=None, thetas=None):
        nodes = np.asarray(nodes, dtype=float)
        if rest_lengths is None:
            e = kernels.python_backend.edge_vectors(nodes, closed)
            rest_lengths = np.linalg.norm(e, axis=1)
        c = Centerline(nodes, rest_lengths, closed)
        t0 = c.tangents()[0]
        if u0 is None:
            u0 = _any_perpendicular(t0)
        f = init_reference_frames(c, u0)
        if thetas is None:
            thetas = np.zeros(c.n_edges)
        return cls(c, np.zeros_like(nodes), f, MaterialFrame(thetas))


def _any_perpendicular(t):
    axis = np.eye(3)[int(np.argmin(np.abs(t)))]
    u = np.cross(t, axis)
    return u / np.linalg.norm(u)


def straight_rod(n_edges, length, origin=(0.0, 0.0, 0.0), direction=(1.0, 0.0, 0.0), u0=None):
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    s = np.linspace(0.0, length, n_edges + 1)
    nodes = np.asarray(origin, dtype=float) + s[:, None] * direction
    return RodState.from_nodes(nodes, np.full(n_edges, length / n_edges), u0=u0)


def kinetic_energy(s, p):
    return 0.5 * float(np.sum(p.node_masses * np.einsum("ij,ij->i", s.velocities, s.velocities)))


def gravitational_energy(s, p, scene):
    return -float(np.sum(p.node_masses * (s.x @ scene.gravity)))


def synced(s, p, bc=None):
    """Frames transported onto the current centerline and thetas relaxed."""
    f = time_parallel_update(s.frames, s.centerline)
    m = _clamped_material(s, bc)
    m = solve_quasistatic_thetas(s.centerline, f, m, p)
    return f, m


def elastic_state_energy(s, p, bc=None):
    f, m = synced(s, p, bc)
    return elastic_energy(s.centerline, f, m, p)


def total_energy(s, p, scene, bc=None):
    return elastic_state_energy(s, p, bc) + kinetic_energy(s, p) + gravitational_energy(s, p, scene)


def _clamped_material(s, bc):
    """Material frame with the clamp angles applied.

    A gripper path owns the end angle; it was written into the state by the
    previous step, so only a static ``theta_end`` is copied here.
    """
    m = s.material.copy()
    if bc is not None and not s.centerline.closed:
        m.thetas[0] = bc.theta_start
        if bc.gripper_path is None:
            m.thetas[-1] = bc.theta_end
    return m


def contact_terms(x, v, scene):
    """Penalty contact forces and their per-node stiffness/damping blocks.

    Each node touches at most one surface: the ground or the box face it
    penetrates deepest.  Returns ``(forces, stiffness_blocks, damping_blocks)``
    with ``None`` blocks when nothing is in contact.
    """
    return kernels.backend.contact_terms(
        x, v, scene._ground, scene._box_lo, scene._box_hi,
        scene.contact_stiffness, scene.contact_damping, scene.friction,
    )


def contact_forces(s, scene):
    return contact_terms(s.x, s.velocities, scene)[0]


def damp_velocities(s, p, dt):
    out = s.copy()
    out.velocities *= math.exp(-p.damping * dt)
    return out


def _inverse_masses(p, clamped):
    w = 1.0 / p.node_masses
    w[list(clamped)] = 0.0
    return w


def project_inextensibility(s, p=None, tol=1e-10, max_iters=50, clamped=(), dt=None):
    """Restore every edge to its rest length.

    Mass-weighted Newton projection on ``|e_j| - l_j = 0``; clamped nodes have
    infinite mass.  With ``dt`` the position correction is also added to the
    velocities.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    masses = np.ones(len(s.x)) if p is None else p.node_masses
    w = 1.0 / masses
    w[list(clamped)] = 0.0
    c = s.centerline
    x, iters, worst = kernels.backend.project_lengths(
        c.nodes, w, c.rest_lengths, c.closed, tol, max_iters
    )
    if worst > tol:
        raise ConstraintError(
            f"inextensibility projection did not converge in {max_iters} iterations "
            f"(worst relative violation {worst:.3e})",
            worst=worst,
        )
    out = s.copy()
    out.centerline.nodes = x
    if dt is not None:
        out.velocities += (x - c.nodes) / dt
    return out


@dataclass
class StepOptions:
    projection_tol: float = 1e-10
    projection_iters: int = 50
    elastic: bool = True


_DEFAULT_OPTIONS = StepOptions()


def step(s, p, bc, scene, dt=DEFAULT_DT, options=None, step_index=None):
    """Advance the rod by ``dt``; see the module docstring for the sequence."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    opts = options or _DEFAULT_OPTIONS
    c = s.centerline
    n = len(c.nodes)
    frames = time_parallel_update(s.frames, c)
    m = _clamped_material(s, bc)
    if opts.elastic:
        m = solve_quasistatic_thetas(c, frames, m, p)
        forces, blocks = centerline_forces(c, frames, m, p, want_hessian=True)
    else:
        forces, blocks = np.zeros((n, 3)), None
    forces += p.node_masses[:, None] * scene.gravity
    fc, kc, dc = contact_terms(c.nodes, s.velocities, scene)
    forces += fc
    if kc is None:
        kc = dc = _zero_blocks(n)

    if bc is not None:
        idx, targets, theta_end = bc.targets(s.time + dt)
    else:
        idx, targets, theta_end = _NO_NODES, np.zeros((0, 3)), None
    v = s.velocities
    clamped = np.zeros(n, dtype=bool)
    clamped[idx] = True
    dv_known = np.zeros((n, 3))
    v_target = (targets - c.nodes[idx]) / dt
    dv_known[idx] = v_target - v[idx]
    dv = kernels.backend.implicit_velocity_update(
        c.nodes, p.node_masses, forces, v, blocks, kc, dc, dt, clamped, dv_known, c.closed
    )
    v_new = v + dv
    if p.damping:
        v_new *= math.exp(-p.damping * dt)
    v_new[idx] = v_target
    x_new = c.nodes + dt * v_new

    w = 1.0 / p.node_masses
    w[idx] = 0.0
    x_proj, _, worst = kernels.backend.project_lengths(
        x_new, w, c.rest_lengths, c.closed, opts.projection_tol, opts.projection_iters
    )
    if worst > opts.projection_tol:
        raise ConstraintError(
            f"inextensibility projection failed at step {step_index} "
            f"(worst relative violation {worst:.3e})",
            worst=worst,
        )
    v_new += (x_proj - x_new) / dt
    x_proj[idx] = targets
    if not (np.isfinite(x_proj).all() and np.isfinite(v_new).all()):
        raise DivergedError(f"non-finite state at step {step_index}", step=step_index)
    if float(np.abs(v_new).max()) > MAX_SPEED:
        raise DivergedError(f"velocity above {MAX_SPEED:g} m/s at step {step_index}", step=step_index)

    if theta_end is not None and not c.closed:
        m.thetas[-1] = theta_end
    return RodState(Centerline.__new__(Centerline)._init_fast(x_proj, c), v_new, frames, m, s.time + dt)


_NO_NODES = np.zeros(0, dtype=int)
_ZERO_BLOCKS = {}


def _zero_blocks(n):
    blk = _ZERO_BLOCKS.get(n)
    if blk is None:
        blk = _ZERO_BLOCKS[n] = np.zeros((n, 3, 3))
    return blk


def simulate(s, p, bc, scene, n_steps, dt=DEFAULT_DT, record_every=0, options=None, callback=None):
    """Run ``n_steps`` steps; optionally record ``(time, nodes)`` samples."""
    trace = []
    if record_every:
        trace.append((s.time, s.x.copy()))
    for k in range(n_steps):
        s = step(s, p, bc, scene, dt, options, step_index=k)
        if record_every and (k + 1) % record_every == 0:
            trace.append((s.time, s.x.copy()))
        if callback is not None:
            callback(k, s)
    return s, trace


def relax(s, p, bc, scene, max_steps=20000, kinetic_tol=1e-10, dt=DEFAULT_DT,
          damping=None, min_steps=0, options=None):
    """Damped stepping until kinetic energy drops below ``kinetic_tol``.

    Returns ``(state, converged)``.  The clock does not advance; gripper
    paths are evaluated at the starting time.
    """
    if not kinetic_tol > 0:
        raise ValueError("kinetic_tol must be positive")
    if min_steps == 0 and kinetic_energy(s, p) < kinetic_tol:
        trial = step(s, p, bc, scene, dt, options)
        if kinetic_energy(trial, p) < kinetic_tol:
            return s, True
    if damping is not None:
        p = replace(p, damping=damping)
    t0 = s.time
    for k in range(max_steps):
        s = step(s, p, bc, scene, dt, options, step_index=k)
        s.time = t0
        if k + 1 >= min_steps and kinetic_energy(s, p) < kinetic_tol:
            return s, True
    return s, False
