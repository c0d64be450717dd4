"""Discrete centerline kinematics: tangents, Bishop frames, reference twist.

Frames live on edges.  Vertex quantities (curvature binormal, reference
twist) live on interior nodes of an open rod or on every node of a closed
ring; see :mod:`dersim._kernels_py` for the index conventions.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DegenerateEdgeError, DegenerateTransportError, GeometryError, KinkError

ANTIPARALLEL_TOL = 1e-9
EDGE_TOL = 1e-12
KINK_TOL = 1e-12


@dataclass
class Centerline:
    nodes: np.ndarray
    rest_lengths: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.rest_lengths = np.asarray(self.rest_lengths, dtype=float)
        n_edges = len(self.nodes) if self.closed else len(self.nodes) - 1
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise GeometryError("nodes must be an (N, 3) array")
        if n_edges < 2:
            raise GeometryError("a rod needs at least two edges")
        if self.rest_lengths.shape != (n_edges,):
            raise GeometryError(
                f"expected {n_edges} rest lengths, got {self.rest_lengths.shape}"
            )
        if np.any(self.rest_lengths <= 0):
            raise GeometryError("rest lengths must be positive")

    @property
    def n_edges(self):
        return len(self.rest_lengths)

    @property
    def n_vertices(self):
        return self.n_edges if self.closed else self.n_edges - 1

    def edges(self):
        return kernels.backend.edge_vectors(self.nodes, self.closed)

    def tangents(self):
        e = self.edges()
        length = np.linalg.norm(e, axis=1)
        if np.any(length < EDGE_TOL):
            raise DegenerateEdgeError(f"edge {int(np.argmin(length))} has zero length")
        return e / length[:, None]

    def voronoi_lengths(self):
        """Rest Voronoi length of every vertex, ``(l_prev + l_next) / 2``."""
        r = self.rest_lengths
        if self.closed:
            return 0.5 * (np.roll(r, 1) + r)
        return 0.5 * (r[:-1] + r[1:])

    def _init_fast(self, nodes, like):
        """Skip validation when only the nodes of a valid centerline change."""
        self.nodes = nodes
        self.rest_lengths = like.rest_lengths
        self.closed = like.closed
        return self

    def with_nodes(self, nodes):
        return replace(self, nodes=np.array(nodes, dtype=float))


@dataclass
class FrameSet:
    tangents: np.ndarray
    reference_dirs: np.ndarray
    reference_twists: np.ndarray = field(default=None)

    def copy(self):
        return FrameSet(
            self.tangents.copy(), self.reference_dirs.copy(), self.reference_twists.copy()
        )


def parallel_transport(t_from, t_to, v):
    """Rotate ``v`` by the minimal rotation taking ``t_from`` onto ``t_to``."""
    t_from = np.asarray(t_from, dtype=float)
    t_to = np.asarray(t_to, dtype=float)
    if np.dot(t_from, t_to) < -1.0 + ANTIPARALLEL_TOL:
        raise DegenerateTransportError("cannot transport between antiparallel tangents")
    return kernels.python_backend.transport(t_from, t_to, np.asarray(v, dtype=float))


def curvature_binormal(e_prev, e_next):
    """``2 e_prev x e_next / (|e_prev||e_next| + e_prev . e_next)``."""
    kb, denom = kernels.python_backend.curvature_binormals(
        np.asarray(e_prev, dtype=float), np.asarray(e_next, dtype=float)
    )
    if denom <= KINK_TOL:
        raise KinkError("antiparallel edges: curvature binormal undefined")
    return kb


def _check_turns(t_a, t_b, err, what):
    dots = np.einsum("ij,ij->i", t_a, t_b)
    bad = np.flatnonzero(dots < -1.0 + ANTIPARALLEL_TOL)
    if len(bad):
        raise err(f"{what} {int(bad[0])} is folded back (antiparallel tangents)")


def init_reference_frames(c, u0):
    """Space-parallel Bishop frame built by transporting ``u0`` along the rod."""
    t = c.tangents()
    u = np.asarray(u0, dtype=float)
    u = u - np.dot(u, t[0]) * t[0]
    norm = np.linalg.norm(u)
    if norm < 1e-8:
        raise GeometryError("u0 is parallel to the first tangent")
    u = u / norm
    ip, inx = kernels.backend.vertex_stencil(len(c.nodes), c.closed)[:2]
    _check_turns(t[ip], t[inx], KinkError, "vertex")
    dirs = np.empty_like(t)
    dirs[0] = u
    for i in range(1, c.n_edges):
        d = kernels.python_backend.transport(t[i - 1], t[i], dirs[i - 1])
        d -= np.dot(d, t[i]) * t[i]
        dirs[i] = d / np.linalg.norm(d)
    twists = np.zeros(c.n_vertices)
    if c.closed:
        moved = kernels.python_backend.transport(t[-1], t[0], dirs[-1])
        twists[0] = float(kernels.python_backend.signed_angles(moved, dirs[0], t[0]))
    return FrameSet(t, dirs, twists)


def time_parallel_update(frames_prev, c_new):
    """Transport each reference director from its old to its new tangent.

    Reference twists are tracked incrementally: the new value is the branch
    of the holonomy angle closest to the previous one, so accumulated twist
    beyond +-pi is not lost.
    """
    t_new, u, twists, min_len, time_dot, turn_dot = kernels.backend.update_frames(
        c_new.nodes, frames_prev.tangents, frames_prev.reference_dirs,
        frames_prev.reference_twists, c_new.closed,
    )
    if min_len < EDGE_TOL:
        raise DegenerateEdgeError("edge of (nearly) zero length")
    if time_dot < -1.0 + ANTIPARALLEL_TOL:
        raise DegenerateTransportError("an edge flipped to its antiparallel direction in one update")
    if turn_dot < -1.0 + ANTIPARALLEL_TOL:
        raise KinkError("a vertex is folded back (antiparallel tangents)")
    return FrameSet(t_new, u, twists)


def material_directors(frames, thetas):
    """First material director per edge: reference director rotated by theta."""
    t = frames.tangents
    u = frames.reference_dirs
    v = np.cross(t, u)
    return u * np.cos(thetas)[:, None] + v * np.sin(thetas)[:, None]


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
