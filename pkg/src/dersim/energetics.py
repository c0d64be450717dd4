"""Elastic energies, quasi-static twist relaxation and centerline forces.

Isotropic rods with a straight, untwisted rest shape:

    E_bend  = sum_k alpha |kb_k|^2 / (2 lbar_k)
    E_twist = sum_k beta  m_k^2    / (2 lbar_k),   m_k = theta_next - theta_prev + ref_twist_k

Bending does not depend on theta, so minimizing over interior thetas is a
linear tridiagonal problem.  Forces are the total derivative of the relaxed
energy; because the relaxed thetas are stationary and the boundary thetas are
clamped, the only theta-related contribution left is the reference-twist
(holonomy) gradient of ``m_k``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import KinkError, SingularTwistError
from .geometry import KINK_TOL, time_parallel_update


@dataclass
class RodParams:
    alpha: float
    beta: float
    rest_lengths: np.ndarray
    node_masses: np.ndarray
    damping: float = 0.0

    def __post_init__(self):
        self.rest_lengths = np.asarray(self.rest_lengths, dtype=float)
        self.node_masses = np.asarray(self.node_masses, dtype=float)
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if np.any(self.node_masses <= 0):
            raise ValueError("node masses must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")

    @classmethod
    def uniform(cls, alpha, beta, rest_lengths, linear_density, damping=0.0, closed=False):
        """Lumped masses: each node gets half of each adjacent edge's mass."""
        rest = np.asarray(rest_lengths, dtype=float)
        edge_mass = linear_density * rest
        if closed:
            masses = 0.5 * (edge_mass + np.roll(edge_mass, 1))
        else:
            masses = np.zeros(len(rest) + 1)
            masses[:-1] += 0.5 * edge_mass
            masses[1:] += 0.5 * edge_mass
        return cls(alpha, beta, rest, masses, damping)


@dataclass
class MaterialFrame:
    """Material angle per edge, measured from the reference director.

    For open rods ``thetas[0]`` and ``thetas[-1]`` are the clamped boundary
    values.  Closed rods instead carry ``seam_twist``, the twist imposed
    across the vertex that joins the last edge to the first.
    """

    thetas: np.ndarray
    seam_twist: float = 0.0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)

    @property
    def boundary(self):
        return float(self.thetas[0]), float(self.thetas[-1])

    def copy(self):
        return MaterialFrame(self.thetas.copy(), self.seam_twist)


def _check_kinks(c):
    e = c.edges()
    ip, inx = kernels.backend.vertex_stencil(len(c.nodes), c.closed)[:2]
    _, denom = kernels.python_backend.curvature_binormals(e[ip], e[inx])
    bad = np.flatnonzero(denom <= KINK_TOL)
    if len(bad):
        raise KinkError(f"vertex {int(bad[0])} is folded back")


def integrated_twists(c, f, m):
    """``m_k`` at every vertex, including the seam offset of a closed ring."""
    th = m.thetas
    if c.closed:
        tw = th - np.roll(th, 1) + f.reference_twists
        tw[0] += m.seam_twist
        return tw
    return th[1:] - th[:-1] + f.reference_twists


def bending_energy(c, f, p):
    _check_kinks(c)
    e = c.edges()
    ip, inx = kernels.backend.vertex_stencil(len(c.nodes), c.closed)[:2]
    kb, _ = kernels.python_backend.curvature_binormals(e[ip], e[inx])
    k2 = np.einsum("ij,ij->i", kb, kb)
    return float(np.sum(p.alpha * k2 / (2.0 * c.voronoi_lengths())))


def twist_energy(c, f, m, p):
    tw = integrated_twists(c, f, m)
    return float(np.sum(p.beta * tw**2 / (2.0 * c.voronoi_lengths())))


def elastic_energy(c, f, m, p):
    return bending_energy(c, f, p) + twist_energy(c, f, m, p)


def twist_gradient(c, f, m, p):
    """dE/dtheta for every edge (boundary entries included)."""
    ip, inx = kernels.backend.vertex_stencil(len(c.nodes), c.closed)[:2]
    w = p.beta * integrated_twists(c, f, m) / c.voronoi_lengths()
    g = np.zeros(c.n_edges)
    np.add.at(g, inx, w)
    np.add.at(g, ip, -w)
    return g


def solve_quasistatic_thetas(c, f, m, p):
    """Minimize the twist energy over the free thetas.

    Open rods keep both boundary thetas; closed rods keep ``thetas[0]`` as a
    gauge and distribute the loop's total twist uniformly per unit length.
    """
    if not p.beta > 0:
        raise SingularTwistError("twist system is singular for beta <= 0")
    vor = c.voronoi_lengths()
    rt = f.reference_twists
    thetas = m.thetas.copy()
    if c.closed:
        total = float(np.sum(rt)) + m.seam_twist
        density = total / float(np.sum(vor))
        mk = density * vor
        inc = mk - rt
        inc[0] -= m.seam_twist
        thetas[1:] = thetas[0] + np.cumsum(inc[1:])
        return MaterialFrame(thetas, m.seam_twist)
    n = c.n_edges
    if n < 3:
        return MaterialFrame(thetas, m.seam_twist)
    w = p.beta / vor
    # unknowns theta_1 .. theta_{n-2}; vertex k couples edges k and k+1
    wl = w[:-1]
    wr = w[1:]
    diag = wl + wr
    lower = -wl.copy()
    upper = -wr.copy()
    rhs = wr * rt[1:] - wl * rt[:-1]
    rhs[0] += wl[0] * thetas[0]
    rhs[-1] += wr[-1] * thetas[-1]
    thetas[1:-1] = kernels.backend.thomas(lower, diag, upper, rhs)
    return MaterialFrame(thetas, m.seam_twist)


def twist_residual(c, f, m, p):
    """Max-norm of dE/dtheta over the free thetas."""
    g = twist_gradient(c, f, m, p)
    if c.closed:
        return float(np.max(np.abs(g)))
    return float(np.max(np.abs(g[1:-1]))) if c.n_edges > 2 else 0.0


def centerline_forces(c, f, m, p, want_hessian=False):
    """Forces ``-dE/dx`` on every node of the theta-relaxed rod.

    With ``want_hessian`` also returns the per-vertex Gauss-Newton stiffness
    blocks used by the implicit integrator.
    """
    vor = c.voronoi_lengths()
    tw = integrated_twists(c, f, m)
    forces, _, blocks, min_denom = kernels.backend.elastic_forces(
        c.nodes, c.rest_lengths, c.closed, p.alpha,
        p.beta * tw / vor, p.beta / vor, want_hessian,
    )
    if min_denom <= KINK_TOL:
        raise KinkError("a vertex is folded back: curvature binormal undefined")
    if want_hessian:
        return forces, blocks
    return forces


def relaxed_energy(c, f, m, p):
    """Energy at ``c`` after transporting ``f`` onto it and relaxing thetas."""
    f_new = time_parallel_update(f, c)
    m_new = solve_quasistatic_thetas(c, f_new, m, p)
    return elastic_energy(c, f_new, m_new, p)


def fd_forces(c, f, m, p, h):
    """Central finite differences of :func:`relaxed_energy` (negated)."""
    if not h > 0:
        raise ValueError("h must be positive")
    x0 = c.nodes
    out = np.zeros_like(x0)
    for i in range(len(x0)):
        for d in range(3):
            xp = x0.copy()
            xm = x0.copy()
            xp[i, d] += h
            xm[i, d] -= h
            ep = relaxed_energy(c.with_nodes(xp), f, m, p)
            em = relaxed_energy(c.with_nodes(xm), f, m, p)
            out[i, d] = -(ep - em) / (2.0 * h)
    return out


def fd_gradient_check(c, f, m, p, h, eps=1e-9):
    """Max over nodes of ``|F_analytic - F_fd| / (|F_fd| + eps)``."""
    m_rel = solve_quasistatic_thetas(c, f, m, p)
    analytic = centerline_forces(c, f, m_rel, p)
    numeric = fd_forces(c, f, m_rel, p, h)
    err = np.linalg.norm(analytic - numeric, axis=1)
    return float(np.max(err / (np.linalg.norm(numeric, axis=1) + eps)))


def net_force_and_torque(c, forces):
    total = forces.sum(axis=0)
    torque = np.cross(c.nodes, forces).sum(axis=0)
    return total, torque
