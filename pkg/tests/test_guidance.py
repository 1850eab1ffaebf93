import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msgtransfer.guidance import (
    GuidanceSpec, cfg_combine, guided_score, mixed_potential_drift, msg_combine, usg_combine,
)
from msgtransfer.scorefield import AnalyticField, GaussianModel, MixtureModel, analytic_score
from msgtransfer.videocore import SeededRng

finite = st.floats(-1e3, 1e3)


def test_cfg_values():
    assert cfg_combine(1.0, 3.0, 2.0) == 5.0
    assert cfg_combine(1.0, 3.0, 0.0) == 1.0
    assert cfg_combine(1.0, 3.0, 1.0) == 3.0


def test_msg_usg_values():
    assert msg_combine(2.0, 5.0, 1.0, 1.0) == 6.0
    assert msg_combine(2.0, 5.0, 1.0, 0.0) == 2.0
    assert usg_combine(2.0, 4.0, 1.0, 0.5) == 3.5
    assert usg_combine(2.0, 1.0, 1.0, 3.0) == 2.0


@given(finite, finite, st.integers(0, 64))
def test_msg_equals_cfg_when_reference_is_current(c, u, k):
    w = k / 16  # dyadic weights keep (1 + w) - 1 == w exact
    assert msg_combine(c, c, u, w) == cfg_combine(u, c, 1.0 + w)


@given(finite, finite, finite, st.floats(0, 10))
def test_mixed_potential_drift_is_msg(c, r, u, w):
    assert mixed_potential_drift(c, r, u, w) == msg_combine(c, r, u, w)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        msg_combine(np.zeros(3), np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        cfg_combine(np.zeros(2), np.zeros(3), 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        GuidanceSpec("fancy", 1.0, [3])
    with pytest.raises(ValueError):
        GuidanceSpec("msg", -1.0, [3])
    with pytest.raises(ValueError):
        GuidanceSpec("cfg", 2.0, [])
    assert not GuidanceSpec().active(5)
    assert GuidanceSpec("msg", 1.0, [5, 4]).active(4)


def test_stationary_point_of_mixed_drift(schedule):
    # Gaussian scores are affine in z, so the zero of the MSG drift solves a linear system
    rng = SeededRng(2)
    d = 5
    mc, vc = rng.normal(d), 0.5 + rng.uniform(d)
    mu, vu = rng.normal(d), 2.0 + rng.uniform(d)
    cond = MixtureModel.single(mc, vc)
    prior = MixtureModel.single(mu, vu)
    ref = analytic_score(cond, rng.normal(d), 0.0, schedule)
    w = 0.75
    z = (mc / vc + w * ref + -w * mu / vu) / (1.0 / vc - w / vu)
    drift = mixed_potential_drift(analytic_score(cond, z, 0.0, schedule), ref, analytic_score(prior, z, 0.0, schedule), w)
    assert np.linalg.norm(drift) < 1e-9


def test_guided_score_gating(schedule):
    m = MixtureModel((0.5, 0.5), (GaussianModel(np.zeros(4), 1.0), GaussianModel(np.ones(4), 0.5)), (0, 1))
    f = AnalyticField(m, schedule)
    z = SeededRng(1).normal(4)
    ref = {10: {"cond": np.full(4, 0.3), "uncond": np.full(4, -0.2)}}
    cond = f.score(z, 10, 1)
    uncond = f.score(z, 10, None)
    spec = GuidanceSpec("msg", 2.0, [10])
    assert np.array_equal(guided_score(f, z, 10, 1, spec, ref), msg_combine(cond, ref[10]["cond"], uncond, 2.0))
    assert np.array_equal(guided_score(f, z, 9, 1, spec, ref), f.score(z, 9, 1))
    usg = GuidanceSpec("usg", 2.0, [10])
    assert np.array_equal(guided_score(f, z, 10, 1, usg, ref), usg_combine(cond, ref[10]["uncond"], uncond, 2.0))
    cfg = GuidanceSpec("cfg", 3.0, [10])
    assert np.array_equal(guided_score(f, z, 10, 1, cfg), cfg_combine(uncond, cond, 3.0))
    with pytest.raises(KeyError):
        guided_score(f, z, 10, 1, spec, None)
