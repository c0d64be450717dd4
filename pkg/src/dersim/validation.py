"""Validation experiments with closed-form references.

Localized helical buckling: a straight clamped rod is twisted, then its ends
are brought together quasi-statically.  The tangent's angular deviation
``phi(s)`` from the end-to-end axis gives the envelope

    f(phi) = (cos phi - cos phi0) / (1 - cos phi0),

which for the localized solution equals ``tanh(s / s*)^2`` with ``s``
measured from the buckle centre and

    1 / s* = (beta m / 2 alpha) sqrt((1 - cos phi0) / (1 + cos phi0)).

Michell's instability: a closed ring with uniformly distributed twist stays
planar until the total twist reaches ``2 pi sqrt(3) / (beta / alpha)``.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import math

import numpy as np

from .dynamics import BoundaryCondition, RodState, SceneConfig, relax, step
from .energetics import RodParams, integrated_twists
from .errors import ValidationFailure

_EMPTY = SceneConfig.empty()


def analytic_envelope(phi, phi0):
    """``(cos phi - cos phi0) / (1 - cos phi0)``; vectorized over ``phi``."""
    if not 0.0 < phi0 < math.pi:
        if phi0 == 0.0:
            raise ZeroDivisionError("phi0 must be nonzero")
        raise ValueError("phi0 must lie in (0, pi)")
    c0 = math.cos(phi0)
    return (np.cos(phi) - c0) / (1.0 - c0)


def localized_envelope(s_over_sstar):
    """Analytic envelope as a function of dimensionless distance from the centre."""
    return np.tanh(s_over_sstar) ** 2


def inverse_length_scale(alpha, beta, twist_density, phi0):
    """``1 / s*`` of the localized solution."""
    c0 = math.cos(phi0)
    return beta * abs(twist_density) / (2.0 * alpha) * math.sqrt((1.0 - c0) / (1.0 + c0))


def michell_analytic(beta_over_alpha):
    if not beta_over_alpha > 0:
        raise ValueError("beta/alpha must be positive")
    return 2.0 * math.pi * math.sqrt(3.0) / beta_over_alpha


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass
class BucklingConfig:
    """Twist-then-shorten experiment.  Units are whatever ``L`` is in."""

    L: float = 9.29
    alpha: float = 1.345
    beta: float = 0.789
    turns: float = 27.0
    end_shift: float = 0.3
    n_values: list = field(default_factory=lambda: [40, 60, 80, 110, 140, 180])
    twist_increments: int = 2000
    shift_increments: int = 2000
    steps_per_increment: int = 20
    final_relax_steps: int = 20000
    kinetic_tol: float = 1e-12
    linear_density: float = 1.0
    damping: float = 5.0
    dt: float = 0.01
    noise: float = 1e-3
    min_phi0: float = 0.05
    seed: int = 0
    u0: np.ndarray | None = None
    rotation: np.ndarray | None = None

    def __post_init__(self):
        if not self.turns > 0:
            raise ValueError("turns must be positive")
        if not 0 < self.end_shift < self.L:
            raise ValueError("end_shift must lie in (0, L)")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if any(int(n) < 4 for n in self.n_values):
            raise ValueError("at least four sections are required")
        if self.twist_increments < 1 or self.shift_increments < 1:
            raise ValueError("increment counts must be positive")


@dataclass
class EnvelopeResult:
    n: int
    samples: list
    avg_error: float
    phi0: float
    s_star: float = float("nan")
    twist_density: float = float("nan")


def _buckling_setup(cfg, n):
    rot = np.eye(3) if cfg.rotation is None else np.asarray(cfg.rotation, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    s = np.linspace(0.0, cfg.L, n + 1)
    local = np.zeros((n + 1, 3))
    local[:, 0] = s - 0.5 * cfg.L
    # symmetry-breaking wobble, zero at the clamped end sections
    local[2:-2, 1:] += cfg.noise * cfg.L / n * rng.normal(size=(n - 3, 2))
    nodes = local @ rot.T
    u0 = np.array([0.0, 0.0, 1.0]) if cfg.u0 is None else np.asarray(cfg.u0, dtype=float)
    # rest lengths follow the wobble, leaving the rod a hair of slack
    state = RodState.from_nodes(nodes, u0=rot @ u0)
    params = RodParams.uniform(cfg.alpha, cfg.beta, state.centerline.rest_lengths,
                               cfg.linear_density, damping=cfg.damping)
    axis = rot @ np.array([1.0, 0.0, 0.0])
    return state, params, axis


def buckle_rod(cfg, n):
    """Run the twist ramp and the shortening ramp; returns the relaxed state."""
    state, p, axis = _buckling_setup(cfg, n)
    ends = [0, 1, n - 1, n]
    start = state.x[ends].copy()
    total = 2.0 * math.pi * cfg.turns

    def bc_at(theta, shift):
        pos = start.copy()
        pos[2:] -= shift * axis
        return BoundaryCondition(ends, pos, theta_start=0.0, theta_end=theta)

    for k in range(1, cfg.twist_increments + 1):
        bc = bc_at(total * k / cfg.twist_increments, 0.0)
        state, _ = relax(state, p, bc, _EMPTY, max_steps=cfg.steps_per_increment,
                         kinetic_tol=cfg.kinetic_tol, dt=cfg.dt)
    for k in range(1, cfg.shift_increments + 1):
        bc = bc_at(total, cfg.end_shift * k / cfg.shift_increments)
        state, _ = relax(state, p, bc, _EMPTY, max_steps=cfg.steps_per_increment,
                         kinetic_tol=cfg.kinetic_tol, dt=cfg.dt)
    state, _ = relax(state, p, bc, _EMPTY, max_steps=cfg.final_relax_steps,
                     kinetic_tol=cfg.kinetic_tol, dt=cfg.dt)
    return state, p, bc


def _parabolic_peak(y, i):
    """Vertex offset in (-1, 1) grid units and peak value of a 3-point parabola."""
    if i == 0 or i == len(y) - 1:
        return 0.0, float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    curv = a - 2.0 * b + c
    if curv >= 0:
        return 0.0, float(b)
    off = 0.5 * (a - c) / curv
    return off, float(b - 0.25 * (a - c) * off)


def measure_envelope(state, p, bc, min_phi0=0.05):
    """Compare the buckled shape with the localized analytic envelope.

    Sampled at every interior node using the bisector tangent.  The peak
    location and ``phi0`` are refined by a parabola through the largest
    sample and its neighbours.
    """
    from .dynamics import synced

    c = state.centerline
    x = c.nodes
    axis = x[-1] - x[0]
    axis = axis / np.linalg.norm(axis)
    t = c.tangents()
    bis = t[:-1] + t[1:]
    bis /= np.linalg.norm(bis, axis=1)[:, None]
    phi = np.arccos(np.clip(bis @ axis, -1.0, 1.0))
    s = np.cumsum(c.rest_lengths)[:-1]
    i = int(np.argmax(phi))
    off, phi0 = _parabolic_peak(phi, i)
    phi0 = max(phi0, float(phi[i]))
    if phi0 < min_phi0:
        raise ValidationFailure(f"rod did not buckle (phi0 = {phi0:.3g} rad)")
    h = c.rest_lengths[min(i, len(c.rest_lengths) - 1)]
    s_c = s[i] + off * h
    f, m = synced(state, p, bc)
    tw = integrated_twists(c, f, m)
    # overall twist per unit rod length
    density = float(np.sum(tw) / np.sum(c.rest_lengths))
    inv = inverse_length_scale(p.alpha, p.beta, density, phi0)
    u = (s - s_c) * inv
    f_meas = analytic_envelope(phi, phi0)
    f_ana = localized_envelope(u)
    samples = [(float(a), float(b), float(c_)) for a, b, c_ in zip(u, f_meas, f_ana)]
    err = float(np.mean(np.abs(f_meas - f_ana)))
    return EnvelopeResult(len(c.rest_lengths), samples, err, phi0, 1.0 / inv, density)


def _buckling_case(args):
    cfg, n = args
    state, p, bc = buckle_rod(cfg, n)
    return measure_envelope(state, p, bc, cfg.min_phi0)


def _run_cases(fn, cases, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, cases))
    return [fn(c) for c in cases]


def run_helical_buckling(cfg, workers=1):
    """One :class:`EnvelopeResult` per entry of ``cfg.n_values`` (same order)."""
    return _run_cases(_buckling_case, [(cfg, int(n)) for n in cfg.n_values], workers)


@dataclass
class MichellConfig:
    n: int = 50
    radius: float = 1.0
    alpha: float = 1.0
    twist_step: float = 0.02
    perturbation: float = 1e-4
    threshold: float = 0.05
    max_factor: float = 2.0
    decay_fraction: float = 0.1
    steps_per_increment: int = 2000
    linear_density: float = 0.01
    damping: float = 0.5
    dt: float = 0.01
    seed: int = 0
    rotation: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a ring needs at least three nodes")
        if self.twist_step <= 0 or self.radius <= 0 or self.alpha <= 0:
            raise ValueError("twist_step, radius and alpha must be positive")


@dataclass
class MichellResult:
    beta_over_alpha: float
    theta_c_measured: float
    theta_c_analytic: float
    deviation_pct: float


def ring_state(n, radius=1.0, rotation=None):
    ang = 2.0 * math.pi * np.arange(n) / n
    nodes = radius * np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
    if rotation is not None:
        nodes = nodes @ np.asarray(rotation, dtype=float).T
    return RodState.from_nodes(nodes, closed=True)


def out_of_plane(x):
    """Largest distance from the nodes to their least-squares plane."""
    d = x - x.mean(axis=0)
    normal = np.linalg.svd(d, full_matrices=False)[2][-1]
    return float(np.max(np.abs(d @ normal)))


def critical_twist(cfg, beta_over_alpha):
    """Ramp the seam twist until the ring leaves its plane.

    After each increment the ring is perturbed and relaxed until the
    out-of-plane deviation either decays below ``decay_fraction`` of the
    perturbation (stable) or exceeds ``threshold * radius`` (buckled).  A
    ring still undecided after ``steps_per_increment`` steps keeps its shape
    into the next increment.  Raises :class:`ValidationFailure` if nothing
    happens before ``max_factor`` times the analytic value.
    """
    rng = np.random.default_rng(cfg.seed)
    state = ring_state(cfg.n, cfg.radius, cfg.rotation)
    p = RodParams.uniform(cfg.alpha, cfg.alpha * beta_over_alpha, state.centerline.rest_lengths,
                          cfg.linear_density, damping=cfg.damping, closed=True)
    limit = cfg.max_factor * michell_analytic(beta_over_alpha)
    amp = cfg.perturbation * cfg.radius
    settled = cfg.decay_fraction * amp
    buckled = cfg.threshold * cfg.radius
    k = 0
    while True:
        k += 1
        twist = k * cfg.twist_step
        if twist > limit:
            break
        state = state.copy()
        state.material.seam_twist = twist
        state.centerline.nodes = state.x + amp * rng.normal(size=state.x.shape)
        for j in range(cfg.steps_per_increment):
            state = step(state, p, None, _EMPTY, cfg.dt, step_index=j)
            dev = out_of_plane(state.x)
            if dev > buckled:
                return twist
            if dev < settled:
                break
    raise ValidationFailure(
        f"ring stayed planar up to {limit:.3f} rad of twist (beta/alpha = {beta_over_alpha})"
    )


def _michell_case(args):
    cfg, ratio = args
    measured = critical_twist(cfg, ratio)
    analytic = michell_analytic(ratio)
    return MichellResult(ratio, measured, analytic, 100.0 * abs(measured - analytic) / analytic)


def run_michell(beta_over_alpha_values, n=50, cfg=None, workers=1):
    cfg = replace(cfg or MichellConfig(), n=n)
    return _run_cases(_michell_case, [(cfg, float(r)) for r in beta_over_alpha_values], workers)


def write_envelope_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "s_over_sstar", "f_measured", "f_analytic"])
        for r in results:
            for row in r.samples:
                w.writerow([r.n, *row])


def write_summary_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "avg_error", "phi0", "s_star", "twist_density"])
        for r in results:
            w.writerow([r.n, r.avg_error, r.phi0, r.s_star, r.twist_density])


def write_michell_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_over_alpha", "theta_measured", "theta_analytic", "deviation_pct"])
        for r in results:
            w.writerow([r.beta_over_alpha, r.theta_c_measured, r.theta_c_analytic, r.deviation_pct])
