import math

import numpy as np
import pytest

from msgtransfer.scorefield import (
    AnalyticField, DenoiserNet, GaussianModel, LearnedField, MixtureModel, TrainConfig, analytic_log_density,
    analytic_score, denoiser_score, time_embedding, train_denoiser,
)
from msgtransfer.videocore import SeededRng


def fd_grad(f, z, h=1e-4):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e.flat[i] = h
        g.flat[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def random_mixture(rng, d, k, full):
    comps = []
    for _ in range(k):
        mean = 2.0 * rng.normal(d)
        if full:
            a = rng.normal((d, d))
            cov = a @ a.T / d + 0.2 * np.eye(d)
        else:
            cov = 0.2 + rng.uniform(d)
        comps.append(GaussianModel(mean, cov))
    w = 0.2 + rng.uniform(k)
    return MixtureModel(tuple(w / w.sum()), tuple(comps))


def test_standard_normal_score_is_minus_z(schedule):
    m = MixtureModel.single(np.zeros(3), np.ones(3))
    z = SeededRng(0).normal((5, 3))
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(analytic_score(m, z, t, schedule), -z, atol=1e-14)


def test_simple_values(schedule):
    m = MixtureModel.single([2.0], 1.0)
    assert analytic_score(m, np.array([3.0]), 0.0, schedule)[0] == -1.0
    sym = MixtureModel((0.5, 0.5), (GaussianModel([-1.0], 0.01), GaussianModel([1.0], 0.01)))
    assert analytic_score(sym, np.array([0.0]), 0.0, schedule)[0] == 0.0
    g = fd_grad(lambda z: analytic_log_density(sym, z, 0.0, schedule), np.array([0.5]))
    assert analytic_score(sym, np.array([0.5]), 0.0, schedule)[0] == pytest.approx(g[0], rel=1e-5)
    n01 = MixtureModel.single([0.0], 1.0)
    assert analytic_log_density(n01, np.array([0.0]), 0.0, schedule) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_log_density_matches_direct_sum(schedule):
    rng = SeededRng(3)
    m = random_mixture(rng, 2, 3, full=True)
    z = rng.normal(2)
    a, s = schedule.alpha_sigma(0.4)
    direct = 0.0
    for w, c in zip(m.weights, m.components):
        cov = a * a * c.covariance + s * s * np.eye(2)
        diff = z - a * c.mean
        direct += w * math.exp(-0.5 * diff @ np.linalg.solve(cov, diff)) / math.sqrt(np.linalg.det(2 * math.pi * cov))
    assert math.exp(analytic_log_density(m, z, 0.4, schedule)) == pytest.approx(direct, rel=1e-12)


def test_score_matches_fd_random(schedule):
    rng = SeededRng(8)
    for case in range(60):
        m = random_mixture(rng, 1 + case % 4, 1 + case % 3, full=case % 2 == 0)
        z = 1.5 * rng.normal(m.dim)
        t = float(rng.uniform())
        g = fd_grad(lambda v: analytic_log_density(m, v, t, schedule), z)
        np.testing.assert_allclose(analytic_score(m, z, t, schedule), g, rtol=1e-5, atol=1e-7)


def test_labels_restrict_components(schedule):
    m = MixtureModel((0.5, 0.5), (GaussianModel([-3.0], 1.0), GaussianModel([3.0], 1.0)), (0, 1))
    z = np.array([0.0])
    assert analytic_score(m, z, 0.0, schedule, 1)[0] == pytest.approx(3.0)
    assert analytic_score(m, z, 0.0, schedule, 0)[0] == pytest.approx(-3.0)
    with pytest.raises(ValueError):
        analytic_score(m, z, 0.0, schedule, 5)


def test_model_validation():
    with pytest.raises(ValueError):
        GaussianModel([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianModel([0.0], [-1.0])
    with pytest.raises(ValueError):
        MixtureModel((0.3, 0.3), (GaussianModel([0.0], 1.0), GaussianModel([1.0], 1.0)))
    with pytest.raises(ValueError):
        MixtureModel((0.5, 0.5), (GaussianModel([0.0], 1.0), GaussianModel([1.0, 0.0], 1.0)))


def test_analytic_field_batches(schedule):
    m = MixtureModel.single(np.zeros(8), np.full(8, 0.5))
    f = AnalyticField(m, schedule)
    z = SeededRng(1).normal((3, 2, 2, 2, 1))
    out = f.score(z, 10, None)
    assert out.shape == z.shape
    np.testing.assert_allclose(out[1], f.score(z[1], 10, None))


def test_time_embedding():
    e = time_embedding(np.array([0.0, 0.5, 1.0]))
    assert e.shape == (3, 16)
    np.testing.assert_allclose(e[:, :8] ** 2 + e[:, 8:] ** 2, 1.0)


def test_zero_net_scores_zero(schedule):
    net = DenoiserNet.create((2, 4, 4, 1), (8, 8), init="zero")
    z = SeededRng(0).normal((2, 4, 4, 1))
    assert np.all(denoiser_score(net, z, 10, schedule, 1) == 0.0)
    with pytest.raises(ValueError):
        denoiser_score(net, z, 0, schedule)


def test_net_deterministic(schedule):
    net = DenoiserNet.create((2, 4, 4, 1), (16, 16), rng=SeededRng(2))
    net.params = {k: SeededRng(9).spawn(k).normal(v.shape).astype(np.float32) * 0.1 for k, v in net.params.items()}
    z = SeededRng(0).normal((3, 2, 4, 4, 1))
    a = LearnedField(net, schedule).score(z, 7, np.array([0, 1, -1]))
    b = LearnedField(net, schedule).score(z, 7, np.array([0, 1, -1]))
    assert np.array_equal(a, b)
    # a -1 label selects the NULL row, same as y=None (batched BLAS may round differently)
    np.testing.assert_allclose(a[2], LearnedField(net, schedule).score(z[2], 7, None), rtol=1e-12, atol=1e-12)


def test_net_save_load(tmp_path):
    net = DenoiserNet.create((2, 4, 4, 1), (16, 8), rng=SeededRng(2))
    net.save(tmp_path / "n.msgt")
    back = DenoiserNet.load(tmp_path / "n.msgt")
    assert back.hidden == (16, 8) and back.latent_shape == (2, 4, 4, 1)
    assert all(np.array_equal(back.params[k], v) for k, v in net.params.items())


def fd_check_backprop(n_params=24, seed=0):
    """Relative errors of backprop against central differences on random parameters."""
    rng = SeededRng(seed)
    net = DenoiserNet.create((2, 3, 3, 1), (12, 10), rng=rng.spawn("init"))
    params = {k: v.astype(np.float64) + 0.3 * rng.spawn(k).normal(v.shape) for k, v in net.params.items()}
    b = 5
    zf = rng.normal((b, net.dim))
    t = rng.uniform((b,))
    rows = np.array([0, 1, 2, 1, 0])
    eps = rng.normal((b, net.dim))
    _, grads = net.loss_and_grad(zf, t, rows, eps, params)
    names = sorted(params)
    errs = []
    for j in range(n_params):
        name = names[j % len(names)]
        idx = int(rng.integers(params[name].size))
        if name == "cond_embed":
            idx = int(rng.integers(3 * params[name].shape[1]))  # rows used in the batch
        h = 1e-3
        plus = {k: v.copy() for k, v in params.items()}
        minus = {k: v.copy() for k, v in params.items()}
        plus[name].flat[idx] += h
        minus[name].flat[idx] -= h
        fd = (net.loss_and_grad(zf, t, rows, eps, plus)[0] - net.loss_and_grad(zf, t, rows, eps, minus)[0]) / (2 * h)
        an = grads[name].flat[idx]
        errs.append(abs(an - fd) / max(abs(fd), abs(an), 1e-8))
    return errs


def test_backprop_matches_finite_differences():
    assert max(fd_check_backprop()) < 1e-3


def zero_net_initial_loss(shape=(8, 16, 16, 1), n=4096):
    net = DenoiserNet.create(shape, (16,), init="zero")
    rng = SeededRng(4)
    zf = rng.normal((n, net.dim))
    eps = rng.normal((n, net.dim))
    loss, _ = net.loss_and_grad(zf, rng.uniform((n,)), np.zeros(n, dtype=np.int64), eps)
    return loss, net.dim


def test_zero_net_loss_is_dimension():
    loss, d = zero_net_initial_loss()
    assert abs(loss - d) / d < 0.05


def test_learns_standard_normal_score(schedule):
    shape = (2, 4, 4, 1)
    data = SeededRng(0).normal((2048, *shape)).astype(np.float32)
    cfg = TrainConfig(steps=3000, batch_size=256, learning_rate=0.02, hidden=(64, 64), log_every=0)
    net, curve = train_denoiser(data, np.zeros(2048, dtype=int), schedule, cfg, SeededRng(1))
    z = SeededRng(5).normal((200, *shape))
    flat = lambda a: a.reshape(200, -1)  # noqa: E731
    errs = [np.mean(np.linalg.norm(flat(denoiser_score(net, z, k, schedule) + z), axis=1)
                    / np.linalg.norm(flat(z), axis=1)) for k in range(1, 51)]
    assert np.mean(errs) < 0.15
    assert np.mean(curve[-100:]) < np.mean(curve[:10])


def test_training_is_deterministic_and_validates(schedule):
    data = SeededRng(0).normal((16, 2, 2, 2, 1)).astype(np.float32)
    cfg = TrainConfig(steps=20, batch_size=8, hidden=(8,), log_every=0)
    a, ca = train_denoiser(data, np.zeros(16, dtype=int), schedule, cfg, SeededRng(3))
    b, cb = train_denoiser(data, np.zeros(16, dtype=int), schedule, cfg, SeededRng(3))
    assert ca == cb and all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    with pytest.raises(ValueError):
        train_denoiser(data[:0], [], schedule, cfg)
    with pytest.raises(ValueError):
        train_denoiser(data, np.zeros(16, dtype=int), schedule, TrainConfig(p_drop=1.0))
