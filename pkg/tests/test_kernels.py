"""Compiled kernels against the numpy reference, plus kernel-level oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from dersim import _kernels_py as ref
from dersim import kernels

from conftest import random_rod, ring_nodes

cy = kernels.compiled_backend
needs_cy = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def _rod(seed, n, closed):
    rng = np.random.default_rng(seed)
    if closed:
        return rng, ring_nodes(n) + 0.05 * rng.normal(size=(n, 3))
    return rng, random_rod(rng, n)


def test_backend_switch_roundtrip():
    prev = kernels.NAME
    assert kernels.use("python") is ref
    with pytest.raises(ValueError):
        kernels.use("fortran")
    kernels.use(prev)
    assert kernels.NAME == prev


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60))
def test_thomas_matches_banded_solver(n):
    rng = np.random.default_rng(n)
    lower = rng.uniform(-1, 0, n)
    upper = rng.uniform(-1, 0, n)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    ab = np.vstack([np.r_[0.0, upper[:-1]], diag, np.r_[lower[1:], 0.0]])
    expected = solve_banded((1, 1), ab, rhs)
    np.testing.assert_allclose(ref.thomas(lower, diag, upper, rhs), expected, rtol=1e-12, atol=1e-14)
    if cy is not None:
        np.testing.assert_allclose(cy.thomas(lower, diag, upper, rhs), expected, rtol=1e-12, atol=1e-14)


@needs_cy
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 30), st.booleans())
def test_elastic_forces_parity(seed, n, closed):
    rng, x = _rod(seed, n, closed)
    ne = n if closed else n - 1
    nv = n if closed else n - 2
    rest = rng.uniform(0.8, 1.2, ne)
    tw = rng.normal(size=nv)
    st_ = rng.uniform(0.5, 2.0, nv)
    a = ref.elastic_forces(x, rest, closed, 1.3, tw, st_, True)
    b = cy.elastic_forces(np.ascontiguousarray(x), rest, closed, 1.3, tw, st_, True)
    scale = np.abs(a[0]).max()
    np.testing.assert_allclose(b[0], a[0], atol=1e-11 * scale)
    assert b[1] == pytest.approx(a[1], rel=1e-11)
    np.testing.assert_allclose(b[2], a[2], atol=1e-11 * np.abs(a[2]).max())
    assert b[3] == pytest.approx(a[3], rel=1e-12)


@needs_cy
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 30), st.booleans())
def test_frame_update_parity(seed, n, closed):
    from dersim.geometry import Centerline, init_reference_frames

    rng, x = _rod(seed, n, closed)
    ne = n if closed else n - 1
    c = Centerline(x, np.ones(ne), closed)
    f = init_reference_frames(c, [0.1, 0.2, 1.0])
    y = x + 0.05 * rng.normal(size=x.shape)
    a = ref.update_frames(y, f.tangents, f.reference_dirs, f.reference_twists, closed)
    b = cy.update_frames(y, f.tangents, f.reference_dirs, f.reference_twists, closed)
    for u, v in zip(a, b):
        np.testing.assert_allclose(v, u, atol=1e-13)


def _kkt_inputs(seed, n, closed, n_clamped):
    rng, x = _rod(seed, n, closed)
    nv = n if closed else n - 2
    masses = rng.uniform(0.5, 1.5, n)
    forces = rng.normal(size=(n, 3))
    v = rng.normal(size=(n, 3))
    g = rng.normal(size=(nv, 9, 3))
    blocks = np.einsum("kai,kbi->kab", g, g)
    kc = np.zeros((n, 3, 3))
    dc = np.zeros((n, 3, 3))
    touch = rng.random(n) < 0.3
    kc[touch] = 100.0 * np.eye(3)
    dc[touch] = 2.0 * np.eye(3)
    clamped = np.zeros(n, dtype=bool)
    clamped[:n_clamped] = True
    if n_clamped:
        clamped[-1] = True
    dv_known = np.where(clamped[:, None], rng.normal(size=(n, 3)), 0.0)
    return x, masses, forces, v, blocks, kc, dc, 0.01, clamped, dv_known, closed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 25), st.booleans(), st.integers(0, 2))
def test_implicit_update_satisfies_kkt(seed, n, closed, n_clamped):
    args = _kkt_inputs(seed, n, closed, n_clamped)
    x, masses, forces, v, blocks, kc, dc, dt, clamped, dv_known, _ = args
    dv = ref.implicit_velocity_update(*args)
    np.testing.assert_allclose(dv[clamped], dv_known[clamped], atol=1e-12)
    # linearized inextensibility holds for every edge with a free endpoint
    ne = n if closed else n - 1
    tails = np.arange(ne)
    heads = (tails + 1) % n
    e = x[heads] - x[tails]
    t = e / np.linalg.norm(e, axis=1)[:, None]
    v1 = v + dv
    rate = np.einsum("ij,ij->i", t, v1[heads] - v1[tails])
    free = ~(clamped[tails] & clamped[heads])
    assert np.abs(rate[free]).max() < 1e-9 * (1 + np.abs(v1).max())
    # the free momentum residual lies in the row space of the constraint Jacobian
    k = ref._stencil_matvec(blocks, v + dv, closed) + np.einsum("kab,kb->ka", kc, v + dv)
    r = masses[:, None] * dv + dt * np.einsum("kab,kb->ka", dc, dv) - dt * (forces - dt * k)
    jac = np.zeros((ne, 3 * n))
    for j in range(ne):
        jac[j, 3 * tails[j]:3 * tails[j] + 3] = -t[j]
        jac[j, 3 * heads[j]:3 * heads[j] + 3] = t[j]
    fdofs = np.repeat(~clamped, 3)
    a = jac[free][:, fdofs].T
    res = r.ravel()[fdofs]
    if a.size:
        mu, *_ = np.linalg.lstsq(a, res, rcond=None)
        res = res - a @ mu
    assert np.abs(res).max() < 1e-9 * (1 + np.abs(r).max())


@needs_cy
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 30), st.integers(0, 2))
def test_implicit_update_parity(seed, n, n_clamped):
    args = _kkt_inputs(seed, n, False, n_clamped)
    a = ref.implicit_velocity_update(*args)
    b = cy.implicit_velocity_update(*args)
    np.testing.assert_allclose(b, a, atol=1e-10 * (1 + np.abs(a).max()))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 30), st.booleans())
def test_projection_restores_lengths(seed, n, closed):
    rng, x = _rod(seed, n, closed)
    ne = n if closed else n - 1
    e = np.roll(x, -1, axis=0) - x if closed else np.diff(x, axis=0)
    rest = np.linalg.norm(e[:ne], axis=1)
    w = rng.uniform(0.5, 2.0, n)
    w[0] = 0.0
    y = x + 0.02 * rng.normal(size=x.shape)
    out, _, worst = ref.project_lengths(y, w, rest, closed, 1e-12, 50)
    assert worst <= 1e-12
    np.testing.assert_array_equal(out[0], y[0])
    if cy is not None:
        out2, _, worst2 = cy.project_lengths(y, w, rest, closed, 1e-12, 50)
        np.testing.assert_allclose(out2, out, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_contact_parity_and_law(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(20, 3))
    v = rng.normal(size=(20, 3))
    lo = np.array([[-0.5, -0.5, -0.5], [0.6, 0.6, -1.0]])
    hi = np.array([[0.0, 0.5, 0.2], [0.9, 0.9, 0.0]])
    args = (x, v, -0.8, lo, hi, 1e3, 5.0, 0.7)
    f, k, d = ref.contact_terms(*args)
    for i in range(20):
        inside_ground = x[i, 2] < -0.8
        inside_box = any(np.all((x[i] > l) & (x[i] < h)) for l, h in zip(lo, hi))
        if not (inside_ground or inside_box):
            assert not f[i].any()
    if cy is not None:
        f2, k2, d2 = cy.contact_terms(*args)
        np.testing.assert_allclose(f2, f, atol=1e-12)
        if k is None:
            assert k2 is None
        else:
            np.testing.assert_allclose(k2, k)
            np.testing.assert_allclose(d2, d)


def test_ground_contact_force_value():
    x = np.array([[0.0, 0.0, -0.01], [0.0, 0.0, 0.5]])
    v = np.array([[0.2, 0.0, -0.1], [0.0, 0.0, 0.0]])
    f, k, d = ref.contact_terms(x, v, 0.0, np.zeros((0, 3)), np.zeros((0, 3)), 1e4, 10.0, 1.0)
    # normal: 1e4 * 0.01 + 10 * 0.1 = 101; viscous friction -1.0 * 0.2
    np.testing.assert_allclose(f[0], [-0.2, 0.0, 101.0])
    np.testing.assert_allclose(f[1], 0.0)
    np.testing.assert_allclose(k[0], np.diag([0, 0, 1e4]))


def test_box_contact_uses_nearest_face():
    lo = np.array([[0.0, 0.0, 0.0]])
    hi = np.array([[1.0, 1.0, 1.0]])
    x = np.array([[0.5, 0.98, 0.5]])
    f, _, _ = ref.contact_terms(x, np.zeros((1, 3)), np.nan, lo, hi, 100.0, 0.0, 0.0)
    np.testing.assert_allclose(f[0], [0.0, 2.0, 0.0], atol=1e-12)
