# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the per-step rod kernels in ``_kernels_py``.

Closed rings need dense (cyclic) linear solves; those two entry points
defer to the numpy implementation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, fabs, M_PI, fmod, INFINITY
from scipy.linalg.cython_lapack cimport dgbsv

from . import _kernels_py as _py

cnp.import_array()

NAME = "cython"
KKT_BANDWIDTH = _py.KKT_BANDWIDTH
KKT_COMPLIANCE = _py.KKT_COMPLIANCE

edge_vectors = _py.edge_vectors
vertex_stencil = _py.vertex_stencil
curvature_binormals = _py.curvature_binormals
transport = _py.transport
signed_angles = _py.signed_angles


cdef inline void _cross(double a0, double a1, double a2, double b0, double b1, double b2,
                        double* out) noexcept nogil:
    out[0] = a1 * b2 - a2 * b1
    out[1] = a2 * b0 - a0 * b2
    out[2] = a0 * b1 - a1 * b0


cdef inline void _transport1(const double* t0, const double* t1, const double* v,
                             double* out) noexcept nogil:
    cdef double b[3]
    cdef double bv, c, bxv[3]
    _cross(t0[0], t0[1], t0[2], t1[0], t1[1], t1[2], b)
    c = t0[0] * t1[0] + t0[1] * t1[1] + t0[2] * t1[2]
    bv = b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
    _cross(b[0], b[1], b[2], v[0], v[1], v[2], bxv)
    for k in range(3):
        out[k] = v[k] * c + bxv[k] + b[k] * bv / (1.0 + c)


def update_frames(double[:, ::1] x, double[:, ::1] t_old, double[:, ::1] ref_dirs,
                  double[::1] ref_twists, bint closed):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t ne = n if closed else n - 1
    cdef Py_ssize_t nv = ne if closed else ne - 1
    t_arr = np.empty((ne, 3))
    u_arr = np.empty((ne, 3))
    tw_arr = np.empty(nv)
    cdef double[:, ::1] t_new = t_arr
    cdef double[:, ::1] u = u_arr
    cdef double[::1] tw = tw_arr
    cdef Py_ssize_t i, k, ip, inx, hd
    cdef double d, nrm, moved[3], cr[3], s, c, ang, delta
    cdef double min_len = 1e300, time_dot = 2.0, turn_dot = 2.0
    with nogil:
        for i in range(ne):
            hd = (i + 1) % n
            nrm = 0.0
            for k in range(3):
                t_new[i, k] = x[hd, k] - x[i, k]
                nrm += t_new[i, k] * t_new[i, k]
            nrm = sqrt(nrm)
            if nrm < min_len:
                min_len = nrm
            if nrm <= 0.0:
                break
            for k in range(3):
                t_new[i, k] /= nrm
            d = t_old[i, 0] * t_new[i, 0] + t_old[i, 1] * t_new[i, 1] + t_old[i, 2] * t_new[i, 2]
            if d < time_dot:
                time_dot = d
    if min_len <= 0.0:
        return None, None, None, min_len, 0.0, 0.0
    with nogil:
        for i in range(ne):
            _transport1(&t_old[i, 0], &t_new[i, 0], &ref_dirs[i, 0], &u[i, 0])
            d = u[i, 0] * t_new[i, 0] + u[i, 1] * t_new[i, 1] + u[i, 2] * t_new[i, 2]
            for k in range(3):
                u[i, k] -= d * t_new[i, k]
            nrm = sqrt(u[i, 0] * u[i, 0] + u[i, 1] * u[i, 1] + u[i, 2] * u[i, 2])
            for k in range(3):
                u[i, k] /= nrm
        for i in range(nv):
            if closed:
                ip = (i - 1 + ne) % ne
                inx = i
            else:
                ip = i
                inx = i + 1
            d = t_new[ip, 0] * t_new[inx, 0] + t_new[ip, 1] * t_new[inx, 1] + t_new[ip, 2] * t_new[inx, 2]
            if d < turn_dot:
                turn_dot = d
            _transport1(&t_new[ip, 0], &t_new[inx, 0], &u[ip, 0], moved)
            _cross(moved[0], moved[1], moved[2], u[inx, 0], u[inx, 1], u[inx, 2], cr)
            s = cr[0] * t_new[inx, 0] + cr[1] * t_new[inx, 1] + cr[2] * t_new[inx, 2]
            c = moved[0] * u[inx, 0] + moved[1] * u[inx, 1] + moved[2] * u[inx, 2]
            ang = atan2(s, c)
            delta = fmod(ang - ref_twists[i] + M_PI, 2.0 * M_PI)
            if delta < 0:
                delta += 2.0 * M_PI
            tw[i] = ref_twists[i] + delta - M_PI
    return t_arr, u_arr, tw_arr, min_len, time_dot, turn_dot


cdef void _thomas(const double* lower, const double* diag, const double* upper,
                  const double* rhs, double* cbuf, double* dbuf, double* out,
                  Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m
    cbuf[0] = upper[0] / diag[0]
    dbuf[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cbuf[i - 1]
        cbuf[i] = upper[i] / m
        dbuf[i] = (rhs[i] - lower[i] * dbuf[i - 1]) / m
    out[n - 1] = dbuf[n - 1]
    i = n - 2
    while i >= 0:
        out[i] = dbuf[i] - cbuf[i] * out[i + 1]
        i -= 1


def thomas(lower, diag, upper, rhs):
    cdef double[::1] lo = np.ascontiguousarray(lower, dtype=float)
    cdef double[::1] di = np.ascontiguousarray(diag, dtype=float)
    cdef double[::1] up = np.ascontiguousarray(upper, dtype=float)
    cdef double[::1] r = np.ascontiguousarray(rhs, dtype=float)
    cdef Py_ssize_t n = di.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double[::1] cb = np.empty(n)
    cdef double[::1] db = np.empty(n)
    with nogil:
        _thomas(&lo[0], &di[0], &up[0], &r[0], &cb[0], &db[0], &out[0], n)
    return out_arr


def elastic_forces(double[:, ::1] x, double[::1] rest, bint closed, double alpha,
                   double[::1] twist_weights, double[::1] twist_stiff, bint want_hessian):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nv = n if closed else n - 2
    forces_arr = np.zeros((n, 3))
    cdef double[:, ::1] f = forces_arr
    cdef double[:, :, ::1] blk
    blocks_arr = None
    if want_hessian:
        blocks_arr = np.zeros((nv, 9, 9))
        blk = blocks_arr
    cdef Py_ssize_t k, na, nb, nc, ip, inx, r, q, j
    cdef double a[3], b[3], kb[3], ga[3], gb[3], cr[3], gra[3], grb[3]
    cdef double la, lb, denom, vor, wb, k2, energy = 0.0, tw, inv_d, min_denom = 1e300
    cdef double hol_a[3], hol_c[3], g[3][3]
    cdef double ja[3][3], jb[3][3], jac[3][9], hol[9]
    with nogil:
        for k in range(nv):
            if closed:
                ip = (k - 1 + n) % n
                inx = k
                na = (k - 1 + n) % n
                nb = k
                nc = (k + 1) % n
            else:
                ip = k
                inx = k + 1
                na = k
                nb = k + 1
                nc = k + 2
            for j in range(3):
                a[j] = x[nb, j] - x[na, j]
                b[j] = x[nc, j] - x[nb, j]
            la = sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
            lb = sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
            denom = la * lb + a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            if denom < min_denom:
                min_denom = denom
            inv_d = 1.0 / denom
            _cross(a[0], a[1], a[2], b[0], b[1], b[2], kb)
            for j in range(3):
                kb[j] *= 2.0 * inv_d
            k2 = kb[0] * kb[0] + kb[1] * kb[1] + kb[2] * kb[2]
            vor = 0.5 * (rest[ip] + rest[inx])
            wb = alpha / vor
            energy += 0.5 * wb * k2
            for j in range(3):
                ga[j] = a[j] * (lb / la) + b[j]
                gb[j] = b[j] * (la / lb) + a[j]
            _cross(b[0], b[1], b[2], kb[0], kb[1], kb[2], cr)
            for j in range(3):
                gra[j] = (2.0 * cr[j] - k2 * ga[j]) * inv_d * wb
            _cross(kb[0], kb[1], kb[2], a[0], a[1], a[2], cr)
            for j in range(3):
                grb[j] = (2.0 * cr[j] - k2 * gb[j]) * inv_d * wb
            tw = twist_weights[k]
            for j in range(3):
                hol_a[j] = kb[j] / (2.0 * la)
                hol_c[j] = kb[j] / (2.0 * lb)
                g[0][j] = -gra[j] - tw * hol_a[j]
                g[2][j] = grb[j] + tw * hol_c[j]
                g[1][j] = -(g[0][j] + g[2][j])
                f[na, j] -= g[0][j]
                f[nb, j] -= g[1][j]
                f[nc, j] -= g[2][j]
            if want_hessian:
                # d kb / d a = -(2/D)[b]x - kb ga^T / D ; d kb / d b = (2/D)[a]x - kb gb^T / D
                ja[0][0] = 0.0
                ja[0][1] = 2.0 * b[2] * inv_d
                ja[0][2] = -2.0 * b[1] * inv_d
                ja[1][0] = -2.0 * b[2] * inv_d
                ja[1][1] = 0.0
                ja[1][2] = 2.0 * b[0] * inv_d
                ja[2][0] = 2.0 * b[1] * inv_d
                ja[2][1] = -2.0 * b[0] * inv_d
                ja[2][2] = 0.0
                jb[0][0] = 0.0
                jb[0][1] = -2.0 * a[2] * inv_d
                jb[0][2] = 2.0 * a[1] * inv_d
                jb[1][0] = 2.0 * a[2] * inv_d
                jb[1][1] = 0.0
                jb[1][2] = -2.0 * a[0] * inv_d
                jb[2][0] = -2.0 * a[1] * inv_d
                jb[2][1] = 2.0 * a[0] * inv_d
                jb[2][2] = 0.0
                for r in range(3):
                    for q in range(3):
                        ja[r][q] -= kb[r] * ga[q] * inv_d
                        jb[r][q] -= kb[r] * gb[q] * inv_d
                        jac[r][q] = -ja[r][q]
                        jac[r][3 + q] = ja[r][q] - jb[r][q]
                        jac[r][6 + q] = jb[r][q]
                for j in range(3):
                    hol[j] = -hol_a[j]
                    hol[3 + j] = hol_a[j] - hol_c[j]
                    hol[6 + j] = hol_c[j]
                for r in range(9):
                    for q in range(9):
                        blk[k, r, q] = wb * (jac[0][r] * jac[0][q] + jac[1][r] * jac[1][q]
                                             + jac[2][r] * jac[2][q]) + twist_stiff[k] * hol[r] * hol[q]
    return forces_arr, energy, blocks_arr, min_denom


cdef inline void _kkt_add(double[:, ::1] ab, double[::1] rhs, const cnp.uint8_t[::1] fixed,
                          const double[::1] known, Py_ssize_t i, Py_ssize_t j, double val,
                          Py_ssize_t off) noexcept nogil:
    # LAPACK general band storage, column-major: A[i, j] -> ab[j, off + i - j]
    if fixed[j]:
        if not fixed[i]:
            rhs[i] -= val * known[j]
        return
    if fixed[i]:
        return
    ab[j, off + i - j] += val


def implicit_velocity_update(x_in, masses, forces, v, blocks, kc, dc, double dt, clamped,
                             dv_clamped, bint closed):
    if closed:
        return _py.implicit_velocity_update(x_in, masses, forces, v, blocks, kc, dc, dt, clamped,
                                            dv_clamped, closed)
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=float)
    cdef double[::1] m = np.ascontiguousarray(masses, dtype=float)
    cdef double[:, ::1] fo = np.ascontiguousarray(forces, dtype=float)
    cdef double[:, ::1] vel = np.ascontiguousarray(v, dtype=float)
    cdef double[:, :, ::1] kcb = np.ascontiguousarray(kc, dtype=float)
    cdef double[:, :, ::1] dcb = np.ascontiguousarray(dc, dtype=float)
    cdef cnp.uint8_t[::1] clamp = np.ascontiguousarray(clamped, dtype=np.uint8)
    cdef double[:, ::1] dvk = np.ascontiguousarray(dv_clamped, dtype=float)
    cdef Py_ssize_t n = m.shape[0]
    cdef int dim = 4 * <int>n - 1
    cdef int kl = KKT_BANDWIDTH, ku = KKT_BANDWIDTH
    cdef int ldab = 2 * kl + ku + 1, nrhs = 1, info = 0
    cdef Py_ssize_t off = kl + ku
    cdef double[:, :, ::1] blk
    cdef bint have_blocks = blocks is not None
    cdef Py_ssize_t nv = 0
    if have_blocks:
        blk = np.ascontiguousarray(blocks, dtype=float)
        nv = blk.shape[0]
    cdef double[:, ::1] ab = np.zeros((dim, ldab))
    rhs_arr = np.zeros(dim)
    cdef double[::1] rhs = rhs_arr
    cdef double[::1] known = np.zeros(dim)
    cdef cnp.uint8_t[::1] fixed = np.zeros(dim, dtype=np.uint8)
    cdef double[::1] kv = np.zeros(3 * n)
    cdef int[::1] ipiv = np.zeros(dim, dtype=np.intc)
    cdef Py_ssize_t i, j, r, q, k, di, dj
    cdef double dt2 = dt * dt, length, tj[3], val
    cdef double compliance = -KKT_COMPLIANCE / float(np.mean(masses))
    with nogil:
        for i in range(n):
            for r in range(3):
                for q in range(3):
                    kv[3 * i + r] += kcb[i, r, q] * vel[i, q]
                if clamp[i]:
                    fixed[4 * i + r] = 1
                    known[4 * i + r] = dvk[i, r]
        for i in range(n - 1):
            if clamp[i] and clamp[i + 1]:
                fixed[4 * i + 3] = 1
        for k in range(nv):
            for r in range(9):
                for q in range(9):
                    kv[3 * k + r] += blk[k, r, q] * vel[k + q // 3, q % 3]
        for i in range(n):
            for r in range(3):
                rhs[4 * i + r] = dt * (fo[i, r] - dt * kv[3 * i + r])
        for j in range(n - 1):
            length = 0.0
            for r in range(3):
                tj[r] = x[j + 1, r] - x[j, r]
                length += tj[r] * tj[r]
            length = sqrt(length)
            val = 0.0
            for r in range(3):
                tj[r] /= length
                val += tj[r] * (vel[j + 1, r] - vel[j, r])
            rhs[4 * j + 3] = -val
            _kkt_add(ab, rhs, fixed, known, 4 * j + 3, 4 * j + 3, compliance, off)
            for r in range(3):
                _kkt_add(ab, rhs, fixed, known, 4 * j + 3, 4 * j + r, -tj[r], off)
                _kkt_add(ab, rhs, fixed, known, 4 * j + r, 4 * j + 3, -tj[r], off)
                _kkt_add(ab, rhs, fixed, known, 4 * j + 3, 4 * j + 4 + r, tj[r], off)
                _kkt_add(ab, rhs, fixed, known, 4 * j + 4 + r, 4 * j + 3, tj[r], off)
        for i in range(n):
            for r in range(3):
                for q in range(3):
                    val = dt * dcb[i, r, q] + dt2 * kcb[i, r, q]
                    if r == q:
                        val += m[i]
                    _kkt_add(ab, rhs, fixed, known, 4 * i + r, 4 * i + q, val, off)
        for k in range(nv):
            for r in range(9):
                di = 4 * (k + r // 3) + r % 3
                for q in range(9):
                    dj = 4 * (k + q // 3) + q % 3
                    _kkt_add(ab, rhs, fixed, known, di, dj, dt2 * blk[k, r, q], off)
        for i in range(dim):
            if fixed[i]:
                ab[i, off] = 1.0
                rhs[i] = known[i]
        dgbsv(&dim, &kl, &ku, &nrhs, &ab[0, 0], &ldab, &ipiv[0], &rhs[0], &dim, &info)
    if info != 0:
        raise np.linalg.LinAlgError(f"implicit step matrix is singular (info={info})")
    return np.append(rhs_arr, 0.0).reshape(n, 4)[:, :3].copy()


def project_lengths(x_in, inv_mass_in, rest_in, bint closed, double tol, int max_iters):
    if closed:
        return _py.project_lengths(x_in, inv_mass_in, rest_in, closed, tol, max_iters)
    x_arr = np.array(x_in, dtype=float, order="C")
    cdef double[:, ::1] x = x_arr
    cdef double[::1] w = np.ascontiguousarray(inv_mass_in, dtype=float)
    cdef double[::1] rest = np.ascontiguousarray(rest_in, dtype=float)
    cdef Py_ssize_t ne = rest.shape[0]
    cdef double[:, ::1] t = np.empty((ne, 3))
    cdef double[::1] c = np.empty(ne)
    cdef double[::1] diag = np.empty(ne)
    cdef double[::1] lower = np.zeros(ne)
    cdef double[::1] upper = np.zeros(ne)
    cdef double[::1] lam = np.empty(ne)
    cdef double[::1] cb = np.empty(ne)
    cdef double[::1] db = np.empty(ne)
    cdef Py_ssize_t j, k
    cdef int it, iters = max_iters
    cdef double length, worst = 0.0, viol, off, wt, wh
    with nogil:
        for it in range(max_iters + 1):
            worst = 0.0
            for j in range(ne):
                length = 0.0
                for k in range(3):
                    t[j, k] = x[j + 1, k] - x[j, k]
                    length += t[j, k] * t[j, k]
                length = sqrt(length)
                for k in range(3):
                    t[j, k] /= length
                c[j] = length - rest[j]
                if w[j] + w[j + 1] > 0.0:
                    viol = fabs(c[j] / rest[j])
                    if viol > worst or viol != viol:
                        worst = viol if viol == viol else INFINITY
            if worst <= tol:
                iters = it
                break
            if it == max_iters or worst == INFINITY:
                break
            for j in range(ne):
                wt = w[j]
                wh = w[j + 1]
                if wt + wh > 0.0:
                    diag[j] = wt + wh
                else:
                    diag[j] = 1.0
                    c[j] = 0.0
            for j in range(ne - 1):
                off = -w[j + 1] * (t[j, 0] * t[j + 1, 0] + t[j, 1] * t[j + 1, 1] + t[j, 2] * t[j + 1, 2])
                upper[j] = off
                lower[j + 1] = off
            _thomas(&lower[0], &diag[0], &upper[0], &c[0], &cb[0], &db[0], &lam[0], ne)
            for j in range(ne):
                for k in range(3):
                    x[j, k] += w[j] * t[j, k] * lam[j]
                    x[j + 1, k] -= w[j + 1] * t[j, k] * lam[j]
    return x_arr, iters, worst


def contact_terms(x_in, v_in, double ground, lo_in, hi_in, double stiffness, double damping,
                  double friction):
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=float)
    cdef double[:, ::1] v = np.ascontiguousarray(v_in, dtype=float)
    cdef double[:, ::1] lo = np.ascontiguousarray(lo_in, dtype=float)
    cdef double[:, ::1] hi = np.ascontiguousarray(hi_in, dtype=float)
    cdef Py_ssize_t n = x.shape[0], nb = lo.shape[0]
    forces_arr = np.zeros((n, 3))
    cdef double[:, ::1] forces = forces_arr
    cdef double[::1] depth = np.zeros(n)
    cdef double[:, ::1] normal = np.zeros((n, 3))
    cdef bint has_ground = ground == ground
    cdef Py_ssize_t i, b, k, r, q, face, hits = 0
    cdef double pen, g, best, vn, fn
    with nogil:
        for i in range(n):
            if has_ground and ground - x[i, 2] > 0.0:
                depth[i] = ground - x[i, 2]
                normal[i, 2] = 1.0
            for b in range(nb):
                best = 1e300
                face = -1
                for k in range(3):
                    g = x[i, k] - lo[b, k]
                    if g <= 0.0:
                        face = -2
                        break
                    if g < best:
                        best = g
                        face = k
                    g = hi[b, k] - x[i, k]
                    if g <= 0.0:
                        face = -2
                        break
                    if g < best:
                        best = g
                        face = k + 3
                if face < 0 or best <= depth[i]:
                    continue
                depth[i] = best
                normal[i, 0] = 0.0
                normal[i, 1] = 0.0
                normal[i, 2] = 0.0
                normal[i, face % 3] = -1.0 if face < 3 else 1.0
            if depth[i] > 0.0:
                hits += 1
    if hits == 0:
        return forces_arr, None, None
    kblk_arr = np.zeros((n, 3, 3))
    dblk_arr = np.zeros((n, 3, 3))
    cdef double[:, :, ::1] kblk = kblk_arr
    cdef double[:, :, ::1] dblk = dblk_arr
    with nogil:
        for i in range(n):
            if depth[i] <= 0.0:
                continue
            vn = v[i, 0] * normal[i, 0] + v[i, 1] * normal[i, 1] + v[i, 2] * normal[i, 2]
            fn = stiffness * depth[i] - damping * vn
            for r in range(3):
                forces[i, r] = -friction * (v[i, r] - vn * normal[i, r])
                if fn > 0.0:
                    forces[i, r] += fn * normal[i, r]
                for q in range(3):
                    g = normal[i, r] * normal[i, q]
                    dblk[i, r, q] = friction * ((1.0 if r == q else 0.0) - g)
                    if fn > 0.0:
                        kblk[i, r, q] = stiffness * g
                        dblk[i, r, q] += damping * g
    return forces_arr, kblk_arr, dblk_arr
