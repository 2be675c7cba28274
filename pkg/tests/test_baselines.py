import numpy as np
import pytest

from cgvae import autodiff as ad
from cgvae.baselines import (AutoGrainConfig, BaselineTrainConfig, DeterministicBackmapper, LinearBackmap,
                             MlpBackmap, autograin_fit, bead_center, linear_backmap, mapping_losses,
                             mlp_backmap, repair_empty_beads, temperature, train_baseline)
from cgvae.datasets import two_cluster_frames
from cgvae.errors import ConfigError, ShapeError
from cgvae.geometry import (CGMapping, apply_isometry, lift, project, project_batch, random_mapping,
                            random_orthogonal)
from conftest import central_difference


def test_bead_center_equals_atomic_weighted_center(rng):
    m = random_mapping(rng, 9, 3)
    x = rng.normal(size=(9, 3))
    X = project(x, m).coords
    np.testing.assert_allclose(bead_center(X, m), (m.weights[:, None] * x).sum(0) / m.weights.sum(), atol=1e-12)


def test_linear_starts_as_lift(rng):
    m = random_mapping(rng, 8, 3)
    X = rng.normal(size=(3, 3))
    np.testing.assert_allclose(linear_backmap(X, LinearBackmap(m)), lift(X, m), atol=1e-12)


def test_linear_is_equivariant_after_training(rng):
    m = random_mapping(rng, 8, 3)
    net = LinearBackmap(m)
    net.D.data = net.D.data + rng.normal(0, 0.3, size=net.D.shape)
    X = rng.normal(size=(3, 3))
    for reflect in (False, True):
        Q, g = random_orthogonal(rng, reflect), rng.normal(size=3)
        np.testing.assert_allclose(linear_backmap(apply_isometry(X, Q, g), net),
                                   apply_isometry(linear_backmap(X, net), Q, g), atol=1e-12)


def test_mlp_zero_weights_collapse_to_center(rng):
    m = random_mapping(rng, 6, 2)
    net = MlpBackmap(m)
    for p in net.parameters():
        p.data[...] = 0
    X = rng.normal(size=(2, 3))
    X -= bead_center(X, m)
    np.testing.assert_allclose(mlp_backmap(X, net), 0, atol=1e-15)


def test_mlp_is_not_equivariant(rng):
    m = random_mapping(rng, 6, 2)
    net = MlpBackmap(m, seed=1)
    X = rng.normal(size=(2, 3)) * 2
    Q = random_orthogonal(rng, False)
    gap = np.abs(mlp_backmap(X @ Q.T, net) - mlp_backmap(X, net) @ Q.T).max()
    assert gap > 1e-3


def test_mlp_gradient(rng):
    m = random_mapping(rng, 4, 2)
    net = MlpBackmap(m, seed=2)
    X = rng.normal(size=(1, 2, 3))
    w = rng.normal(size=(4, 3))
    W = net.net.layers[0].weight
    with ad.fresh_tape():
        ad.backward(ad.tsum(net.forward(X) * ad.Tensor(w)))
    g = W.grad.copy()

    def f(v):
        W.data = v
        with ad.no_grad():
            return float((net.forward(X).data * w).sum())
    fd = central_difference(f, W.data.copy())
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_baselines_reject_bad_shapes(rng):
    m = random_mapping(rng, 6, 2)
    with pytest.raises(ShapeError):
        LinearBackmap(m).forward(np.zeros((1, 3, 3)))
    with pytest.raises(ShapeError):
        MlpBackmap(m).forward(np.zeros((2, 3)))


def test_training_reduces_loss_and_adapter_repeats(rng):
    m = CGMapping([0, 0, 1, 1], np.ones(4))
    base = np.array([[0, 0, 0], [1.2, 0, 0], [2.4, 0.5, 0], [3.6, 0.5, 0.3]])
    frames = np.stack([apply_isometry(base, random_orthogonal(rng), rng.normal(size=3)) for _ in range(32)])
    net = LinearBackmap(m)
    hist = train_baseline(net, frames, [(0, 1), (1, 2), (2, 3)], BaselineTrainConfig(epochs=30, learning_rate=1e-2))
    assert hist[-1] < hist[0]
    wrapped = DeterministicBackmapper(net)
    s = wrapped.sample(project_batch(frames[:3], m), count=5)
    assert s.shape == (3, 5, 4, 3)
    np.testing.assert_array_equal(s[:, 0], s[:, 4])
    np.testing.assert_allclose(s[:, 0], wrapped.reconstruct(frames[:3]))


def test_temperature_schedule():
    cfg = AutoGrainConfig()
    assert temperature(0, cfg) == 1.0
    assert temperature(500, cfg) == pytest.approx(0.5)
    assert temperature(1499, cfg) == cfg.tau_min


def test_geometric_loss_vanishes_at_bead_centers(rng):
    assign = np.array([0, 0, 1, 1, 1])
    C = np.eye(2)[assign]
    centers = rng.normal(size=(4, 2, 3))
    x = centers[:, assign]
    x -= x.mean(axis=1, keepdims=True)
    xmat = np.transpose(x, (1, 0, 2)).reshape(5, -1)
    msd, geo = mapping_losses(C, C, xmat)
    assert geo.item() == pytest.approx(0.0, abs=1e-25)
    assert msd.item() == pytest.approx(0.0, abs=1e-25)


def test_repair_fills_empty_beads():
    frames = np.arange(15.0).reshape(1, 5, 3)
    out = repair_empty_beads([0, 0, 0, 0, 1], 3, frames)
    assert set(out.tolist()) == {0, 1, 2}


def test_autograin_two_clusters_and_annealing():
    frames, labels = two_cluster_frames(0)
    res = autograin_fit(frames, 2, AutoGrainConfig(seed=0))
    a = res.mapping.assign
    assert np.array_equal(a, labels) or np.array_equal(a, 1 - labels)
    assert res.max_row_entry[-1] > 0.99


def test_autograin_rejects_bad_bead_counts():
    with pytest.raises(ConfigError):
        autograin_fit(np.zeros((2, 3, 3)), 3)
