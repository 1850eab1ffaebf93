import numpy as np
import pytest

from msgtransfer.metrics import centroid_track, temporal_consistency
from msgtransfer.synthdata import (
    Circular, ClipSpec, Linear, Pan, Sinusoidal, TrajectoryError, Zoom, generate_clip, generate_suite, load_suite,
    random_clip_spec, read_manifest, suite_specs,
)
from msgtransfer.videocore import SeededRng


def test_linear_blob_path():
    clip, traj, y = generate_clip(ClipSpec("gaussian_blob", (Linear((8, 2), (0, 1)),)))
    assert clip.shape == (8, 16, 16, 1) and clip.dtype == np.float32
    np.testing.assert_array_equal(traj[:, 1], np.arange(2, 10))
    np.testing.assert_array_equal(traj[:, 0], 8)
    assert y == 0
    assert clip.min() >= 0 and clip.max() <= 1


def test_static_blob():
    clip, _, _ = generate_clip(ClipSpec("gaussian_blob", (Linear((7.3, 8.6), (0, 0)),)))
    assert all(np.array_equal(clip[0], f) for f in clip)
    assert temporal_consistency(clip) == 1.0


def test_circular_radius():
    spec = ClipSpec("square", (Circular((7.5, 7.5), 3.0, 0.5, 0.2),))
    _, traj, y = generate_clip(spec)
    assert y == 1
    np.testing.assert_allclose(np.linalg.norm(traj - 7.5, axis=1), 3.0, atol=1e-6)


@pytest.mark.parametrize("spec", [
    ClipSpec("gaussian_blob", (Linear((5.2, 4.1), (0.7, 0.9)),)),
    ClipSpec("square", (Sinusoidal((8, 4), (0.1, 0.8), 1.5, 6.0),)),
    ClipSpec("gaussian_blob", (Linear((8, 8), (0.1, 0.1)),), camera=Zoom(0.05)),
    ClipSpec("square", (Linear((4, 6), (0, 0)), Linear((10, 10), (0, 0))), camera=Pan((0.3, -0.2))),
])
def test_centroid_matches_ground_truth(spec):
    clip, traj, _ = generate_clip(spec)
    assert np.abs(centroid_track(clip) - traj).max() < 1e-5


def test_pan_shifts_centroid():
    base = ClipSpec("gaussian_blob", (Linear((7, 5), (0.2, 0.4)),))
    pan = ClipSpec("gaussian_blob", (Linear((7, 5), (0.2, 0.4)),), camera=Pan((0.5, 0.25)))
    a, b = centroid_track(generate_clip(base)[0]), centroid_track(generate_clip(pan)[0])
    f = np.arange(8)[:, None]
    np.testing.assert_allclose(b - a, f * np.array([0.5, 0.25]), atol=1e-6)


def test_exit_rejected():
    with pytest.raises(TrajectoryError, match="leaves"):
        generate_clip(ClipSpec("gaussian_blob", (Linear((8, 2), (0, 3)),)))


def test_spec_validation():
    with pytest.raises(ValueError):
        ClipSpec("triangle", (Linear((8, 8), (0, 0)),))
    with pytest.raises(ValueError):
        ClipSpec("square", (Linear((8, 8), (0, 0)),), amplitude=1.5)
    with pytest.raises(ValueError):
        ClipSpec("square", (Linear((8, 8), (0, 0)),), blob_sigma=0)
    with pytest.raises(ValueError):
        ClipSpec("square", ())


def test_spec_dict_roundtrip():
    spec = random_clip_spec("camera", SeededRng(4))
    assert ClipSpec.from_dict(spec.to_dict()) == spec


def test_noise_needs_rng():
    spec = ClipSpec("square", (Linear((8, 8), (0, 0)),), noise_std=0.1)
    with pytest.raises(ValueError):
        generate_clip(spec)
    a = generate_clip(spec, SeededRng(1))[0]
    assert np.array_equal(a, generate_clip(spec, SeededRng(1))[0])


def test_suite_proportions_and_centroids(suite):
    assert len(suite["ids"]) == 200
    cats = suite["categories"]
    assert [cats.count(c) / 200 for c in ("single", "multi", "camera")] == [0.425, 0.325, 0.25]
    assert {sp.object_count for sp, c in zip(suite["specs"], cats) if c == "multi"} == {2}
    err = max(np.abs(centroid_track(c) - t).max() for c, t in zip(suite["clips"], suite["trajectories"]))
    assert err < 0.25
    # the suite's motion is smooth enough to be trackable frame to frame
    assert np.mean([temporal_consistency(c) for c in suite["clips"]]) > 0.8


def test_slow_blob_temporal_consistency():
    clip, _, _ = generate_clip(ClipSpec("gaussian_blob", (Linear((8, 4), (0.0, 0.25)),)))
    assert temporal_consistency(clip) > 0.9


def test_suite_files_are_reproducible(tmp_path):
    m1 = generate_suite(tmp_path / "a", counts=(3, 2, 2), rng=SeededRng(5))
    m2 = generate_suite(tmp_path / "b", counts=(3, 2, 2), rng=SeededRng(5))
    assert m1.read_bytes() == m2.read_bytes()
    for r in read_manifest(m1):
        assert (tmp_path / "a" / r["clip_path"]).read_bytes() == (tmp_path / "b" / r["clip_path"]).read_bytes()
    rows, clips, labels, trajs = load_suite(m1)
    assert len(rows) == 7 and clips.shape == (7, 8, 16, 16, 1)
    assert set(rows[0]) >= {"id", "category", "shape_kind", "trajectory_kind", "camera_kind", "clip_path"}
    assert np.abs(centroid_track(clips[0]) - trajs[0]).max() < 1e-5


def test_suite_rejects_empty_category():
    with pytest.raises(ValueError):
        suite_specs((0, 1, 1))


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_suite(blocker / "sub", counts=(1, 1, 1))
