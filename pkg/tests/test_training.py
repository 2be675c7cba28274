import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgvae import autodiff as ad
from cgvae.errors import ConfigError, ShapeError
from cgvae.geometry import CGMapping, projection_matrix
from cgvae.model import CGVAE, LossWeights, ModelConfig
from cgvae.nn import Adam
from cgvae.training import (LOG_COLUMNS, PlateauScheduler, TrainConfig, clip_grad_norm, evaluate_loss, gradcheck, gradcheck_instance, load_checkpoint,
                            loss_log_rows, plateau_scheduler, reconstruct, run_gradcheck, sample,
                            save_checkpoint, split_indices, train, train_step)
from instances import random_instance


def test_scheduler_traces():
    assert plateau_scheduler(np.linspace(10, 1, 60), lr=1e-3) == 1e-3
    assert plateau_scheduler([1.0] * 16, lr=1.0) == pytest.approx(0.3)
    assert plateau_scheduler([1.0] * 15, lr=1.0) == 1.0
    assert plateau_scheduler([1.0] * 32, lr=1.0) == pytest.approx(0.09)
    assert plateau_scheduler([1.0] * 1000, lr=1.0, min_lr=1e-3) == 1e-3


def test_scheduler_threshold_is_relative():
    s = PlateauScheduler(1.0, patience=1, factor=0.5, threshold=1e-2)
    s.step(100.0)
    assert s.step(99.5) == 0.5          # gain of 0.5 is below 1% of 100
    s = PlateauScheduler(1.0, patience=1, factor=0.5, threshold=1e-2)
    s.step(100.0)
    assert s.step(98.0) == 1.0


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=80))
def test_scheduler_never_raises_lr(history):
    lrs = []
    s = PlateauScheduler(1e-3)
    for v in history:
        lrs.append(s.step(v))
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_adam_first_step_moves_by_lr_times_sign():
    p = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([0.5, -4.0, 0.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-7)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(1e-3, 1e3))
def test_clip_grad_norm_caps_joint_norm_and_keeps_direction(values, cap):
    params = [ad.Tensor(np.zeros(2)), ad.Tensor(np.zeros(len(values))), ad.Tensor(np.zeros(1))]
    params[0].grad = None
    params[1].grad = np.array(values)
    params[2].grad = np.array([0.5])
    before = np.concatenate([params[1].grad, params[2].grad])
    norm = clip_grad_norm(params, cap)
    after = np.concatenate([params[1].grad, params[2].grad])
    assert norm == pytest.approx(np.linalg.norm(before))
    if norm <= cap:
        np.testing.assert_array_equal(after, before)
    else:
        np.testing.assert_allclose(after, before * cap / norm)
    assert params[0].grad is None


def test_split_indices():
    tr, va = split_indices(100, 0.1, 0)
    assert len(va) == 10 and len(tr) == 90
    assert set(tr) | set(va) == set(range(100)) and not set(tr) & set(va)
    assert split_indices(1, 0.5, 0)[1].size == 0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(factor=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip=-1.0)
    cfg = TrainConfig(epochs=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def _frames(model, x, rng, count):
    return np.stack([x + rng.normal(0, 0.05, size=x.shape) for _ in range(count)])


def test_zero_learning_rate_leaves_parameters(rng):
    model, x, rng = random_instance(5, pseudo_init=True)
    before = model.state_dict()
    batch = model.collate(model.featurize([x]))
    train_step(model, Adam(model.parameters(), lr=0.0), batch, rng, LossWeights())
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_single_frame_overfit():
    # three beads: with two, every decoded atom would sit on the bead axis
    elements = ("C", "C", "H", "O", "H", "N")
    mapping = CGMapping.from_assignment([0, 0, 1, 1, 2, 2], "mass", elements)
    cfg = ModelConfig(F=8, K=4, enc_depth=1, prior_depth=1, dec_depth=3,
                      fg_cutoff=10.0, cg_cutoff=10.0, pseudo_init=True)
    model = CGVAE(cfg, elements, mapping, [(i, j) for i in range(6) for j in range(i + 1, 6)])
    x = np.random.default_rng(0).normal(size=(6, 3)) * 1.2
    batch = model.collate(model.featurize([x]))
    opt = Adam(model.parameters(), lr=3e-3)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        train_step(model, opt, batch, rng, LossWeights())
    assert evaluate_loss(model, batch, LossWeights())["msd"] < 1e-2


def test_epoch_losses_trend_down(tmp_path):
    model, x, rng = random_instance(2, pseudo_init=True)
    frames = _frames(model, x, rng, 24)
    cfg = TrainConfig(epochs=30, batch_size=8, learning_rate=3e-3, model=model.config)
    log = tmp_path / "loss.csv"
    res = train(model, frames, cfg, log_path=log)
    totals = np.array([h["total"] for h in res.history])
    windows = totals.reshape(3, 10).mean(1)
    assert windows[1] <= totals[0] and windows[2] <= totals[0]
    rows = loss_log_rows(log)
    with open(log) as fh:
        assert tuple(next(csv.reader(fh))) == LOG_COLUMNS
    epochs = [int(r["epoch"]) for r in rows]
    assert epochs == list(range(1, 31))
    assert all(np.isfinite(float(r[c])) for r in rows for c in LOG_COLUMNS)


def test_training_is_reproducible():
    outs = []
    for _ in range(2):
        model, x, rng = random_instance(4)
        frames = _frames(model, x, rng, 10)
        train(model, frames, TrainConfig(epochs=2, batch_size=4, model=model.config))
        outs.append(model.state_dict())
    for k in outs[0]:
        np.testing.assert_array_equal(outs[0][k], outs[1][k])


def test_reconstruct_and_sample_contracts():
    model, x, rng = random_instance(9, pseudo_init=True)
    frames = _frames(model, x, rng, 5)
    r1, r2 = reconstruct(model, frames), reconstruct(model, frames)
    np.testing.assert_array_equal(r1, r2)
    M = projection_matrix(model.mapping)
    X = np.einsum("Ii,tik->tIk", M, frames)
    s1 = sample(model, X, count=4, seed=3)
    s2 = sample(model, X, count=4, seed=3)
    np.testing.assert_array_equal(s1, s2)
    assert s1.shape == (5, 4, model.mapping.n, 3)
    assert np.abs(np.einsum("Ii,tsik->tsIk", M, s1) - X[:, None]).max() < 1e-10
    assert np.abs(np.einsum("Ii,tik->tIk", M, r1) - X).max() < 1e-10
    assert np.abs(s1[:, 0] - s1[:, 1]).max() > 0


def test_train_rejects_wrong_frames():
    model, x, rng = random_instance(1)
    with pytest.raises(ShapeError):
        train(model, np.zeros((3, model.mapping.n + 1, 3)), TrainConfig(epochs=1, model=model.config))


def test_checkpoint_round_trip(tmp_path):
    model, x, rng = random_instance(6, pseudo_init=True)
    cfg = TrainConfig(epochs=0, model=model.config)
    train(model, x[None], cfg)
    path = tmp_path / "m.npz"
    save_checkpoint(path, model, cfg)
    back, back_cfg = load_checkpoint(path)
    assert back_cfg == cfg
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k], v)
    np.testing.assert_array_equal(reconstruct(back, x[None]), reconstruct(model, x[None]))


def test_checkpoint_shape_header_is_checked(tmp_path):
    model, x, rng = random_instance(6)
    path = tmp_path / "m.npz"
    save_checkpoint(path, model)
    with np.load(path) as z:
        arrays = dict(z)
    key = next(k for k in arrays if k.startswith("param/"))
    arrays[key] = np.zeros(arrays[key].shape + (1,))
    bad = tmp_path / "bad.npz"
    np.savez(bad, **arrays)
    with pytest.raises((ShapeError, ValueError)):
        load_checkpoint(bad)


@pytest.mark.parametrize("seed", [0, 7])
def test_gradcheck_suite(seed):
    ok, errors = run_gradcheck(seed)
    assert ok, max(errors.values())


def test_gradcheck_flags_a_wrong_backward(monkeypatch):
    real = ad.softplus

    def skewed(a):
        out = real(a)
        inner = out._backward
        out._backward = lambda g: tuple(1.01 * v for v in inner(g))
        return out
    monkeypatch.setattr("cgvae.encoder.ad.softplus", skewed)
    model, batch, noise = gradcheck_instance(0)
    errors = gradcheck(model, batch, noise, LossWeights())
    assert max(v for k, v in errors.items() if "sigma" in k) > 1e-3
