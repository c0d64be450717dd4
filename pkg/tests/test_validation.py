import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dersim.errors import ValidationFailure
from dersim.validation import (
    BucklingConfig,
    EnvelopeResult,
    MichellConfig,
    analytic_envelope,
    critical_twist,
    inverse_length_scale,
    localized_envelope,
    michell_analytic,
    out_of_plane,
    random_rotation,
    ring_state,
    run_helical_buckling,
    run_michell,
    write_envelope_csv,
    write_michell_csv,
    write_summary_csv,
)

# a coarse, short ramp: buckles in about a second
CHEAP = dict(n_values=[24], twist_increments=60, shift_increments=60, steps_per_increment=10,
             final_relax_steps=3000, kinetic_tol=1e-10)
# coarse ring and twist grid for the Michell mechanics
COARSE_RING = dict(n=12, twist_step=0.5, steps_per_increment=300)


def test_envelope_examples():
    assert analytic_envelope(0.0, 0.7) == pytest.approx(1.0)
    assert analytic_envelope(0.7, 0.7) == pytest.approx(0.0, abs=1e-15)
    assert analytic_envelope(math.pi / 4, math.pi / 2) == pytest.approx(0.70710678118654757)
    with pytest.raises(ZeroDivisionError):
        analytic_envelope(0.0, 0.0)
    with pytest.raises(ValueError):
        analytic_envelope(0.0, 4.0)


@given(st.floats(0.01, 3.1), st.floats(0.0, 1.0))
def test_envelope_in_unit_interval(phi0, frac):
    f = analytic_envelope(frac * phi0, phi0)
    assert -1e-12 <= f <= 1 + 1e-12


def test_localized_envelope_and_length_scale():
    assert localized_envelope(0.0) == 0.0
    assert localized_envelope(50.0) == pytest.approx(1.0)
    # phi0 = pi/2: sqrt((1 - 0) / (1 + 0)) = 1
    assert inverse_length_scale(2.0, 1.0, 3.0, math.pi / 2) == pytest.approx(0.75)
    assert inverse_length_scale(2.0, 1.0, -3.0, math.pi / 2) == pytest.approx(0.75)


def test_michell_formula():
    assert michell_analytic(1.0) == pytest.approx(10.8828, abs=1e-4)
    assert michell_analytic(0.5) == pytest.approx(21.7656, abs=1e-4)
    assert michell_analytic(2.0) == pytest.approx(0.5 * michell_analytic(1.0))
    with pytest.raises(ValueError):
        michell_analytic(0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        BucklingConfig(turns=0)
    with pytest.raises(ValueError):
        BucklingConfig(end_shift=10.0)
    with pytest.raises(ValueError):
        BucklingConfig(n_values=[3])
    with pytest.raises(ValueError):
        MichellConfig(n=2)


def test_ring_helpers():
    rot = random_rotation(np.random.default_rng(2))
    np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(rot) == pytest.approx(1.0)
    s = ring_state(20, 2.0, rot)
    np.testing.assert_allclose(np.linalg.norm(s.x, axis=1), 2.0)
    assert out_of_plane(s.x) < 1e-12
    assert s.centerline.closed


@pytest.fixture(scope="module")
def cheap_buckle():
    return run_helical_buckling(BucklingConfig(**CHEAP))[0]


def test_buckled_envelope_properties(cheap_buckle):
    r = cheap_buckle
    assert isinstance(r, EnvelopeResult) and r.n == 24
    assert r.phi0 > 0.05
    arr = np.array(r.samples)
    assert arr.shape == (23, 3)
    assert np.all(arr[:, 1:] >= -0.05) and np.all(arr[:, 1:] <= 1.05)
    assert r.avg_error == pytest.approx(np.mean(np.abs(arr[:, 1] - arr[:, 2])))
    # the sample nearest the peak sits at the bottom of the measured envelope
    i = np.argmin(np.abs(arr[:, 0]))
    assert arr[i, 1] == pytest.approx(0.0, abs=0.05)


def test_buckling_independent_of_orientation_and_reference_frame(cheap_buckle):
    rot = random_rotation(np.random.default_rng(3))
    turned = run_helical_buckling(BucklingConfig(**CHEAP, rotation=rot))[0]
    tilted = run_helical_buckling(BucklingConfig(**CHEAP, u0=[0.0, 1.0, 0.2]))[0]
    for other in (turned, tilted):
        assert other.avg_error == pytest.approx(cheap_buckle.avg_error, abs=1e-6)
        assert other.phi0 == pytest.approx(cheap_buckle.phi0, abs=1e-6)


def test_unbuckled_rod_is_reported():
    cfg = BucklingConfig(**{**CHEAP, "turns": 0.01, "end_shift": 1e-4})
    with pytest.raises(ValidationFailure):
        run_helical_buckling(cfg)


def test_buckling_csv_outputs(tmp_path, cheap_buckle):
    write_envelope_csv(tmp_path / "env.csv", [cheap_buckle])
    write_summary_csv(tmp_path / "sum.csv", [cheap_buckle])
    with open(tmp_path / "env.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "s_over_sstar", "f_measured", "f_analytic"] and len(rows) == 24
    with open(tmp_path / "sum.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["n", "avg_error"] and float(rows[1][1]) == cheap_buckle.avg_error


def test_michell_mechanics_on_coarse_ring(tmp_path):
    cfg = MichellConfig(**COARSE_RING)
    res = run_michell([1.0, 1.5], n=cfg.n, cfg=cfg)
    assert all(r.theta_c_measured > 0 for r in res)
    # stiffer twist buckles earlier
    assert res[1].theta_c_measured < res[0].theta_c_measured
    for r in res:
        assert r.deviation_pct == pytest.approx(
            100 * abs(r.theta_c_measured - r.theta_c_analytic) / r.theta_c_analytic)
    write_michell_csv(tmp_path / "m.csv", res)
    with open(tmp_path / "m.csv") as fh:
        assert len(list(csv.reader(fh))) == 3


def test_michell_independent_of_seed_and_rotation():
    base = critical_twist(MichellConfig(**COARSE_RING), 1.5)
    for cfg in (MichellConfig(**COARSE_RING, seed=9),
                MichellConfig(**COARSE_RING, rotation=random_rotation(np.random.default_rng(4)))):
        assert abs(critical_twist(cfg, 1.5) - base) <= cfg.twist_step + 1e-12


def test_michell_gives_up_past_the_limit():
    cfg = MichellConfig(**{**COARSE_RING, "max_factor": 0.5})
    with pytest.raises(ValidationFailure):
        critical_twist(cfg, 1.0)
