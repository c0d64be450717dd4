"""Pure numpy implementation of the per-step rod kernels.

Every function here has a twin with the same signature in ``_ckernels``
(Cython).  :mod:`dersim.kernels` picks one at import time.

Indexing conventions shared by both implementations:

* open rod: ``N`` nodes, ``N - 1`` edges, ``N - 2`` vertices; vertex ``k``
  sits at node ``k + 1`` between edges ``k`` and ``k + 1``.
* closed rod: ``N`` nodes, ``N`` edges (edge ``N - 1`` joins node ``N - 1``
  to node 0), ``N`` vertices; vertex ``k`` sits at node ``k`` between edges
  ``k - 1`` and ``k``.  Vertex 0 is the seam.
"""
import numpy as np
from scipy.linalg import solve_banded

NAME = "python"

# half-bandwidth of the interleaved saddle-point matrix of an open rod
KKT_BANDWIDTH = 10
# multiplier-diagonal compliance (per unit mean mass): keeps the saddle-point
# matrix regular when the length constraints are dependent, e.g. a straight
# rod clamped at both ends
KKT_COMPLIANCE = 1e-10


def edge_vectors(x, closed):
    if closed:
        return np.roll(x, -1, axis=0) - x
    return x[1:] - x[:-1]


def vertex_stencil(n_nodes, closed):
    """Return (prev_edge, next_edge, node_a, node_b, node_c) index arrays."""
    if closed:
        k = np.arange(n_nodes)
        return (k - 1) % n_nodes, k, (k - 1) % n_nodes, k, (k + 1) % n_nodes
    k = np.arange(n_nodes - 2)
    return k, k + 1, k, k + 1, k + 2


def _cross_matrix(v):
    m = np.zeros(v.shape[:-1] + (3, 3))
    m[..., 0, 1] = -v[..., 2]
    m[..., 0, 2] = v[..., 1]
    m[..., 1, 0] = v[..., 2]
    m[..., 1, 2] = -v[..., 0]
    m[..., 2, 0] = -v[..., 1]
    m[..., 2, 1] = v[..., 0]
    return m


def curvature_binormals(e_prev, e_next):
    """Vectorized curvature binormals; returns ``(kb, denom)``."""
    la = np.linalg.norm(e_prev, axis=-1)
    lb = np.linalg.norm(e_next, axis=-1)
    denom = la * lb + np.einsum("...i,...i->...", e_prev, e_next)
    # callers check denom; a folded vertex just yields non-finite kb here
    with np.errstate(divide="ignore", invalid="ignore"):
        kb = 2.0 * np.cross(e_prev, e_next) / denom[..., None]
    return kb, denom


def transport(t_from, t_to, v):
    """Minimal-rotation transport of rows of ``v`` from ``t_from`` to ``t_to``.

    Uses the closed form of the Rodrigues rotation about ``t_from x t_to``;
    the caller is responsible for rejecting antiparallel pairs.
    """
    b = np.cross(t_from, t_to)
    c = np.einsum("...i,...i->...", t_from, t_to)
    bv = np.einsum("...i,...i->...", b, v)
    return (
        v * c[..., None]
        + np.cross(b, v)
        + b * (bv / (1.0 + c))[..., None]
    )


def signed_angles(u, v, axis):
    """Angle rotating ``u`` onto ``v`` about ``axis`` (all unit rows)."""
    s = np.einsum("...i,...i->...", np.cross(u, v), axis)
    c = np.einsum("...i,...i->...", u, v)
    return np.arctan2(s, c)


def update_frames(x, t_old, ref_dirs, ref_twists, closed):
    """Tangents of ``x`` plus time-parallel transport of the reference frame.

    Returns ``(t_new, u_new, twists, min_length, min_time_dot, min_turn_dot)``;
    the last three let the caller reject degenerate edges, antiparallel
    transport in time and folded vertices.
    """
    e = edge_vectors(x, closed)
    length = np.linalg.norm(e, axis=1)
    min_len = float(length.min())
    if min_len <= 0.0:
        return None, None, None, min_len, 0.0, 0.0
    t_new = e / length[:, None]
    time_dot = float(np.einsum("ij,ij->i", t_old, t_new).min())
    u = transport(t_old, t_new, ref_dirs)
    u -= t_new * np.einsum("ij,ij->i", u, t_new)[:, None]
    u /= np.linalg.norm(u, axis=1)[:, None]
    ip, inx = vertex_stencil(len(x), closed)[:2]
    turn_dot = float(np.einsum("ij,ij->i", t_new[ip], t_new[inx]).min())
    moved = transport(t_new[ip], t_new[inx], u[ip])
    angle = signed_angles(moved, u[inx], t_new[inx])
    delta = angle - ref_twists
    delta = (delta + np.pi) % (2.0 * np.pi) - np.pi
    return t_new, u, ref_twists + delta, min_len, time_dot, turn_dot


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system (``lower[0]`` and ``upper[-1]`` unused)."""
    ab = np.empty((3, len(diag)))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[0, 0] = ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def elastic_forces(x, rest, closed, alpha, twist_weights, twist_stiff, want_hessian):
    """Bending plus twist-holonomy forces on every node.

    ``twist_weights[k]`` is ``beta * m_k / voronoi_k``, the derivative of the
    twist energy with respect to the integrated twist at vertex ``k``;
    ``twist_stiff[k]`` is ``beta / voronoi_k`` and only enters the stiffness
    blocks.

    Returns ``(forces, bend_energy, blocks, min_denom)``; ``blocks`` is
    ``(nv, 9, 9)`` Gauss-Newton stiffness per vertex stencil, or ``None``;
    ``min_denom`` is the smallest curvature-binormal denominator (a fold
    check for the caller).
    """
    n_nodes = len(x)
    ip, inx, na, nb, nc = vertex_stencil(n_nodes, closed)
    e = edge_vectors(x, closed)
    a = e[ip]
    b = e[inx]
    la = np.linalg.norm(a, axis=1)
    lb = np.linalg.norm(b, axis=1)
    kb, denom = curvature_binormals(a, b)
    vor = 0.5 * (rest[ip] + rest[inx])
    k2 = np.einsum("ij,ij->i", kb, kb)
    w_bend = alpha / vor
    energy = 0.5 * float(np.sum(w_bend * k2))

    ga = a * (lb / la)[:, None] + b
    gb = b * (la / lb)[:, None] + a
    inv_d = (1.0 / denom)[:, None]
    grad_a = (2.0 * np.cross(b, kb) - k2[:, None] * ga) * inv_d * w_bend[:, None]
    grad_b = (2.0 * np.cross(kb, a) - k2[:, None] * gb) * inv_d * w_bend[:, None]

    # holonomy gradient of the integrated twist
    tw = twist_weights[:, None]
    hol_a = kb / (2.0 * la)[:, None]
    hol_c = kb / (2.0 * lb)[:, None]
    g_na = -grad_a - tw * hol_a
    g_nc = grad_b + tw * hol_c
    g_nb = -(g_na + g_nc)

    grad = np.zeros_like(x)
    np.add.at(grad, na, g_na)
    np.add.at(grad, nb, g_nb)
    np.add.at(grad, nc, g_nc)

    blocks = None
    if want_hessian:
        ja = -2.0 * _cross_matrix(b) * inv_d[:, :, None] - np.einsum("ki,kj->kij", kb, ga) * inv_d[:, :, None]
        jb = 2.0 * _cross_matrix(a) * inv_d[:, :, None] - np.einsum("ki,kj->kij", kb, gb) * inv_d[:, :, None]
        jac = np.concatenate([-ja, ja - jb, jb], axis=2)
        blocks = w_bend[:, None, None] * np.einsum("kia,kib->kab", jac, jac)
        hol = np.concatenate([-hol_a, hol_a - hol_c, hol_c], axis=1)
        blocks += twist_stiff[:, None, None] * np.einsum("ka,kb->kab", hol, hol)
    return -grad, energy, blocks, float(denom.min())


def project_lengths(x, inv_mass, rest, closed, tol, max_iters):
    """Newton projection onto ``|e_j| = rest_j`` for all edges.

    Returns ``(x, iterations, worst_relative_violation)``; ``x`` is a copy.
    Nodes with zero inverse mass never move.
    """
    x = x.copy()
    n_nodes = len(x)
    ne = len(rest)
    tails = np.arange(ne)
    heads = (tails + 1) % n_nodes
    w_t = inv_mass[tails]
    w_h = inv_mass[heads]
    active = (w_t + w_h) > 0.0
    worst = 0.0
    for it in range(max_iters + 1):
        e = x[heads] - x[tails]
        length = np.linalg.norm(e, axis=1)
        c = length - rest
        viol = np.abs(c / rest)
        worst = float(np.max(np.where(active, viol, 0.0)))
        if not np.isfinite(worst):
            worst = np.inf
            break
        if worst <= tol:
            return x, it, worst
        if it == max_iters:
            break
        t = e / length[:, None]
        diag = np.where(active, w_t + w_h, 1.0)
        c = np.where(active, c, 0.0)
        # coupling through the node shared by consecutive edges
        off = -w_h * np.einsum("ij,ij->i", t, np.roll(t, -1, axis=0))
        if closed:
            mat = np.diag(diag)
            idx = np.arange(ne)
            mat[idx, (idx + 1) % ne] += off
            mat[(idx + 1) % ne, idx] += off
            lam = np.linalg.solve(mat, c)
        else:
            off = off[:-1]
            lower = np.concatenate([[0.0], off])
            upper = np.concatenate([off, [0.0]])
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = thomas(lower, diag, upper, c)
        imp = t * lam[:, None]
        dx = np.zeros_like(x)
        np.add.at(dx, tails, imp * w_t[:, None])
        np.add.at(dx, heads, -imp * w_h[:, None])
        x += dx
    return x, max_iters, worst


def _stencil_matvec(blocks, v, closed):
    n_nodes = len(v)
    _, _, na, nb, nc = vertex_stencil(n_nodes, closed)
    vv = np.concatenate([v[na], v[nb], v[nc]], axis=1)
    out9 = np.einsum("kab,kb->ka", blocks, vv)
    out = np.zeros_like(v)
    np.add.at(out, na, out9[:, 0:3])
    np.add.at(out, nb, out9[:, 3:6])
    np.add.at(out, nc, out9[:, 6:9])
    return out


def _kkt_triplets(x, masses, blocks, node_blocks, dt, closed):
    """COO entries of the interleaved saddle-point matrix.

    Node ``i`` owns unknowns ``4i .. 4i+2``; the multiplier of edge ``j`` sits
    at ``4j + 3``.  With this ordering an open rod gives a band of half-width
    ``KKT_BANDWIDTH``.
    """
    n = len(x)
    r3 = np.arange(3)
    node_dofs = 4 * np.arange(n)[:, None] + r3
    nb_full = node_blocks + masses[:, None, None] * np.eye(3)
    rows = [np.broadcast_to(node_dofs[:, :, None], (n, 3, 3)).ravel()]
    cols = [np.broadcast_to(node_dofs[:, None, :], (n, 3, 3)).ravel()]
    vals = [nb_full.ravel()]
    if blocks is not None and len(blocks):
        _, _, na, nb, nc = vertex_stencil(n, closed)
        d9 = np.concatenate([node_dofs[na], node_dofs[nb], node_dofs[nc]], axis=1)
        nv = len(d9)
        rows.append(np.broadcast_to(d9[:, :, None], (nv, 9, 9)).ravel())
        cols.append(np.broadcast_to(d9[:, None, :], (nv, 9, 9)).ravel())
        vals.append((dt * dt * blocks).ravel())
    ne = n if closed else n - 1
    tails = np.arange(ne)
    heads = (tails + 1) % n
    e = x[heads] - x[tails]
    t = e / np.linalg.norm(e, axis=1)[:, None]
    mult = np.repeat(4 * tails + 3, 3)
    rows.append(4 * tails + 3)
    cols.append(4 * tails + 3)
    vals.append(np.full(ne, -KKT_COMPLIANCE / float(np.mean(masses))))
    for nodes, sign in ((tails, -1.0), (heads, 1.0)):
        dof = node_dofs[nodes].ravel()
        g = sign * t.ravel()
        rows += [mult, dof]
        cols += [dof, mult]
        vals += [g, g]
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), t, tails, heads


def implicit_velocity_update(x, masses, forces, v, blocks, kc, dc, dt, clamped, dv_clamped, closed):
    """Velocity increment of one linearly implicit Euler step.

    Solves

        (M + dt D + dt^2 K) dv + G^T mu = dt (f - dt K v)
        G dv = -G v

    where ``K`` is the elastic Gauss-Newton stiffness plus contact stiffness
    ``kc``, ``D`` the contact damping ``dc`` and ``G`` the edge-length
    Jacobian at ``x``.  Enforcing the linearized length constraints inside
    the solve keeps the discrete equilibria exact: a rest state has ``f`` in
    the row space of ``G``.  Clamped nodes take ``dv_clamped``.
    """
    n = len(x)
    dim = 4 * n if closed else 4 * n - 1
    rows, cols, vals, t, tails, heads = _kkt_triplets(
        x, masses, blocks, dt * dc + dt * dt * kc, dt, closed
    )
    kv = np.einsum("kab,kb->ka", kc, v)
    if blocks is not None:
        kv += _stencil_matvec(blocks, v, closed)
    rhs = np.zeros(dim)
    node_dofs = 4 * np.arange(n)[:, None] + np.arange(3)
    rhs[node_dofs.ravel()] = (dt * (forces - dt * kv)).ravel()
    rhs[4 * tails + 3] = -np.einsum("ij,ij->i", t, v[heads] - v[tails])
    fixed = np.zeros(dim, dtype=bool)
    known = np.zeros(dim)
    fixed[node_dofs[clamped].ravel()] = True
    known[node_dofs[clamped].ravel()] = dv_clamped[clamped].ravel()
    # an edge between two clamped nodes carries no free unknowns
    fixed[4 * tails[clamped[tails] & clamped[heads]] + 3] = True
    moved = fixed[cols] & ~fixed[rows]
    np.add.at(rhs, rows[moved], -vals[moved] * known[cols[moved]])
    keep = ~(fixed[rows] | fixed[cols])
    fixed_idx = np.flatnonzero(fixed)
    rows = np.concatenate([rows[keep], fixed_idx])
    cols = np.concatenate([cols[keep], fixed_idx])
    vals = np.concatenate([vals[keep], np.ones(len(fixed_idx))])
    rhs[fixed] = known[fixed]
    if closed:
        a = np.zeros((dim, dim))
        np.add.at(a, (rows, cols), vals)
        sol = np.linalg.solve(a, rhs)
    else:
        u = KKT_BANDWIDTH
        ab = np.zeros((2 * u + 1, dim))
        np.add.at(ab, (u + rows - cols, cols), vals)
        sol = solve_banded((u, u), ab, rhs, check_finite=False)
    return sol[node_dofs]


def contact_terms(x, v, ground, box_lo, box_hi, stiffness, damping, friction):
    """Penalty contact against a ground plane (``nan`` for none) and boxes.

    A node inside several regions reacts to the deepest one; inside a box
    the normal is that of the nearest face.  The normal force
    ``stiffness * depth - damping * v_n`` never pulls; tangential friction
    is viscous.  Returns ``(forces, K_blocks, D_blocks)`` with ``None``
    blocks when nothing touches.
    """
    n = len(x)
    depth = np.zeros(n)
    normal = np.zeros((n, 3))
    rows = np.arange(n)
    if ground == ground:
        pen = ground - x[:, 2]
        hit = pen > 0
        depth[hit] = pen[hit]
        normal[hit, 2] = 1.0
    for lo, hi in zip(box_lo, box_hi):
        gap = np.concatenate([x - lo, hi - x], axis=1)
        inside = np.all(gap > 0, axis=1)
        if not inside.any():
            continue
        face = np.argmin(gap, axis=1)
        pen = gap[rows, face]
        sel = rows[inside & (pen > depth)]
        normal[sel] = 0.0
        normal[sel, face[sel] % 3] = np.where(face[sel] < 3, -1.0, 1.0)
        depth[sel] = pen[sel]
    forces = np.zeros((n, 3))
    hit = np.flatnonzero(depth > 0)
    if len(hit) == 0:
        return forces, None, None
    nrm = normal[hit]
    vn = np.einsum("ij,ij->i", v[hit], nrm)
    fn = stiffness * depth[hit] - damping * vn
    pushing = fn > 0
    fn = np.where(pushing, fn, 0.0)
    vt = v[hit] - vn[:, None] * nrm
    forces[hit] = fn[:, None] * nrm - friction * vt
    nn = np.einsum("ki,kj->kij", nrm, nrm)
    on = pushing[:, None, None].astype(float)
    kblk = np.zeros((n, 3, 3))
    dblk = np.zeros((n, 3, 3))
    kblk[hit] = stiffness * nn * on
    dblk[hit] = damping * nn * on + friction * (np.eye(3) - nn)
    return forces, kblk, dblk
