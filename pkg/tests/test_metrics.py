import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgtransfer.metrics import (
    EmptyFrameError, TemplateClassifier, centroid_track, eval_report, frechet_from_moments, frechet_gaussian,
    motion_fidelity, pooled_features, temporal_consistency,
)
from msgtransfer.videocore import SeededRng


def denman_beavers(a, iters=60):
    """Independent principal square root oracle (coupled Newton iteration)."""
    y, z = a.copy(), np.eye(len(a))
    for _ in range(iters):
        y, z = 0.5 * (y + np.linalg.inv(z)), 0.5 * (z + np.linalg.inv(y))
    return y


def brute_frechet(mu1, c1, mu2, c2):
    cross = denman_beavers(c1 @ c2)
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(c1) + np.trace(c2) - 2 * np.trace(cross))


def random_spd(rng, d):
    a = rng.normal((d, d))
    return a @ a.T + 0.5 * np.eye(d)


def test_centroid_point_and_uniform():
    v = np.zeros((1, 16, 16, 1))
    v[0, 3, 5, 0] = 2.0
    np.testing.assert_array_equal(centroid_track(v), [[3.0, 5.0]])
    np.testing.assert_array_equal(centroid_track(np.ones((2, 16, 16, 1))), [[7.5, 7.5]] * 2)


def test_centroid_clamps_negatives_and_rejects_empty():
    v = np.zeros((1, 4, 4, 1))
    v[0, 1, 1, 0] = 1.0
    v[0, 3, 3, 0] = -5.0
    np.testing.assert_array_equal(centroid_track(v), [[1.0, 1.0]])
    with pytest.raises(EmptyFrameError):
        centroid_track(-np.ones((2, 4, 4, 1)))
    with pytest.raises(ValueError):
        centroid_track(np.ones((4, 4)))


def test_motion_fidelity_trivial_pairs():
    line = np.stack([np.zeros(8), np.arange(8.0)], axis=1)
    down = np.stack([np.arange(8.0), np.zeros(8)], axis=1)
    assert motion_fidelity(line, line) == 1.0
    assert motion_fidelity(line, line[::-1]) == -1.0
    assert motion_fidelity(line, down) == 0.0
    with pytest.raises(ValueError):
        motion_fidelity(line, line[:5])


def test_motion_fidelity_static_conventions():
    still = np.ones((4, 2))
    moving = np.stack([np.zeros(4), np.arange(4.0)], axis=1)
    assert motion_fidelity(still, still) == 1.0
    assert motion_fidelity(still, moving) == 0.0


@given(st.integers(0, 2**32))
@settings(max_examples=40)
def test_motion_fidelity_bounded_and_symmetric(seed):
    rng = SeededRng(seed)
    a, b = rng.normal((6, 2)), rng.normal((6, 2))
    m = motion_fidelity(a, b)
    assert -1.0 <= m <= 1.0
    assert m == pytest.approx(motion_fidelity(b, a), abs=1e-15)
    assert motion_fidelity(a, 3.0 * a + 1.5) == pytest.approx(1.0, abs=1e-12)


def test_temporal_consistency_cases():
    v = SeededRng(2).uniform((1, 16, 16, 1))
    assert temporal_consistency(np.repeat(v, 5, axis=0)) == 1.0
    w = v - 0.5
    alt = np.concatenate([w, -w, w, -w])
    assert temporal_consistency(alt) == -1.0


def test_pooled_features_shape():
    f = pooled_features(np.ones((3, 16, 16, 1)))
    assert f.shape == (3, 16) and np.all(f == 1.0)
    with pytest.raises(ValueError):
        pooled_features(np.ones((1, 10, 16, 1)))


def test_frechet_closed_forms():
    rng = SeededRng(0)
    c = random_spd(rng, 4)
    assert frechet_from_moments(np.zeros(4), c, np.zeros(4), c) == pytest.approx(0.0, abs=1e-8)
    e = np.eye(4)[0]
    assert frechet_from_moments(np.zeros(4), c, e, c) == pytest.approx(1.0, abs=1e-8)


def test_frechet_matches_denman_beavers():
    rng = SeededRng(11)
    for _ in range(20):
        mu1, mu2 = rng.normal(4), rng.normal(4)
        c1, c2 = random_spd(rng, 4), random_spd(rng, 4)
        ours = frechet_from_moments(mu1, c1, mu2, c2)
        assert ours == pytest.approx(brute_frechet(mu1, c1, mu2, c2), rel=1e-6)


def test_frechet_sets(suite):
    clips = list(suite["clips"][:40])
    assert frechet_gaussian(clips, clips) == pytest.approx(0.0, abs=1e-8)
    assert frechet_gaussian(clips[:20], clips[20:]) > 0
    with pytest.raises(ValueError):
        frechet_gaussian(clips[:1], clips)


def test_frechet_rejects_bad_inputs():
    with pytest.raises(ValueError):
        frechet_from_moments(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        frechet_from_moments(np.zeros(2), -np.eye(2), np.zeros(2), np.eye(2))


def test_classifier_on_clean_suite(suite):
    clf = TemplateClassifier.fit(suite["clips"], suite["labels"])
    acc = np.mean([clf.predict(c) == y for c, y in zip(suite["clips"], suite["labels"])])
    assert acc >= 0.95


def _report_inputs(suite, n=10):
    rows = [dict(id=i, category=c) for i, c in zip(suite["ids"][:n], suite["categories"][:n])]
    inputs = {r["id"]: c for r, c in zip(rows, suite["clips"][:n])}
    return rows, inputs


def test_eval_identity(suite, tmp_path):
    rows, inputs = _report_inputs(suite)
    rep = eval_report(rows, inputs, dict(inputs), csv_path=tmp_path / "m.csv")
    assert rep.motion_fidelity == 1.0
    assert rep.frechet_distance == pytest.approx(0.0, abs=1e-8)
    for r in rep.rows:
        assert r["temporal_consistency"] == temporal_consistency(inputs[r["id"]])
    with open(tmp_path / "m.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["id", "category", "motion_fidelity", "temporal_consistency", "frechet"]
    assert table[-1]["id"] == "summary:overall" and table[-1]["frechet"] != ""


def test_eval_missing_output(suite, tmp_path):
    rows, inputs = _report_inputs(suite)
    outputs = dict(inputs)
    outputs.pop(rows[4]["id"])
    rep = eval_report(rows, inputs, outputs, csv_path=tmp_path / "m.csv")
    assert len(rep.rows) == 9 and len(rep.warnings) == 1
    text = (tmp_path / "m.csv").read_text()
    assert "warning" in text and rows[4]["id"] in text
