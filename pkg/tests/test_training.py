import copy
import math

import numpy as np
import pytest
import torch

from gandetect.errors import DivergenceError
from gandetect.losses import LossWeights
from gandetect.networks import GanomalyNets, ProgressiveStack
from gandetect.training import (
    FixedTrainer,
    MovingAverageMonitor,
    PlateauMonitor,
    ProgressiveTrainer,
    TrainConfig,
    TrainState,
    downsample_for_stage,
    fit_fixed,
    fit_progressive,
    make_epoch_batches,
)


def tiny_cfg(**kw):
    defaults = dict(
        batch_size=8,
        learning_rate=0.002,
        latent_dim=8,
        base_channels=16,
        weights=LossWeights(),
        plateau_patience=2,
        max_epochs=3,
        alpha_fade_iterations=750_000,
        critic_steps=2,
        seed=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def tiny_data(n=24, res=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 1, res, res)).astype(np.float32)


# ---- plateau / convergence monitors ----

def simulate(losses, monitor, max_epochs):
    state = TrainState()
    for loss in losses:
        state.begin_epoch()
        state.append_record(resolution=8, alpha=1.0)
        state.record_validation(loss)
        if monitor.should_stop(state) or state.epoch >= max_epochs:
            break
    return state


def test_plateau_thirty_down_then_flat_stops_at_40():
    losses = [100.0 - i for i in range(30)] + [71.0] * 50
    state = simulate(losses, PlateauMonitor(patience=10), max_epochs=500)
    assert state.epoch == 40
    assert state.best_epoch == 30


def test_plateau_minimal():
    state = simulate([5.0, 6.0], PlateauMonitor(patience=1), max_epochs=500)
    assert state.epoch == 2
    assert state.best_epoch == 1


def test_plateau_cap_behavior():
    losses = [100.0 - i for i in range(100)]
    state = simulate(losses, PlateauMonitor(patience=10), max_epochs=50)
    assert state.epoch == 50
    assert state.best_epoch == 50


def test_moving_average_monitor_stops_on_convergence():
    losses = [10.0, 9.0, 8.0, 7.0, 6.0, 5.0] + [5.0] * 20
    state = simulate(losses, MovingAverageMonitor(window=6, rel_tol=1e-3), max_epochs=500)
    assert state.epoch < 20


def test_best_val_loss_is_min_of_history():
    rng = np.random.default_rng(4)
    losses = list(rng.random(25))
    state = simulate(losses, PlateauMonitor(patience=100), max_epochs=25)
    recorded = [r.val_loss for r in state.history]
    assert state.best_val_loss == min(recorded)


# ---- batching & downsampling ----

def test_epoch_batches_deterministic():
    imgs = tiny_data(20)
    a = make_epoch_batches(imgs, batch_size=8, seed=3, epoch=5)
    b = make_epoch_batches(imgs, batch_size=8, seed=3, epoch=5)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_epoch_batches_subsample():
    imgs = tiny_data(100)
    batches = make_epoch_batches(imgs, batch_size=10, seed=0, epoch=1, max_samples=30)
    assert sum(b.shape[0] for b in batches) == 30


def test_downsample_constant_invariance():
    x = np.full((32, 32), 0.37, dtype=np.float32)
    y = downsample_for_stage(x, 8)
    assert y.shape == (8, 8)
    assert np.allclose(y, 0.37, atol=1e-7)


def test_downsample_checkerboard_average():
    x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
    y = downsample_for_stage(x, 1)
    assert y.shape == (1, 1)
    assert float(y[0, 0]) == 0.5


def test_downsample_identity():
    x = tiny_data(2, res=16)
    y = downsample_for_stage(x, 16)
    assert np.array_equal(x, y)


def test_downsample_bad_ratio():
    with pytest.raises(ValueError):
        downsample_for_stage(np.zeros((24, 24)), 9)
    with pytest.raises(ValueError):
        downsample_for_stage(np.zeros((24, 24)), 16)


# ---- epoch training ----

def test_train_epoch_empty_stream_rejected():
    nets = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=0)
    trainer = FixedTrainer(nets, tiny_cfg())
    with pytest.raises(ValueError):
        trainer.train_epoch([], TrainState())


def test_train_epoch_deterministic():
    cfg = tiny_cfg()
    imgs = tiny_data()
    results = []
    for _ in range(2):
        nets = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=1)
        trainer = FixedTrainer(nets, cfg)
        batches = make_epoch_batches(imgs, batch_size=8, seed=cfg.seed, epoch=1)
        state = TrainState()
        trainer.train_epoch(batches, state)
        results.append([p.detach().clone() for p in nets.parameters()])
    for pa, pb in zip(*results):
        assert torch.equal(pa, pb)


def test_progressive_alpha_advances_per_batch():
    cfg = tiny_cfg(critic_steps=1)
    stack = ProgressiveStack.build(16, latent_dim=8, base_channels=16, seed=0)
    stack.grow()  # now fading at 16x16, alpha = 0
    trainer = ProgressiveTrainer(stack, cfg)
    imgs = tiny_data(80, res=16)
    batches = make_epoch_batches(imgs, batch_size=8, seed=0, epoch=1)
    assert len(batches) == 10
    trainer.train_epoch(batches, TrainState())
    assert math.isclose(stack.alpha, 10 / 750_000, rel_tol=1e-12)


def test_progressive_alpha_clamps_at_one():
    cfg = tiny_cfg(critic_steps=1, alpha_fade_iterations=3)
    stack = ProgressiveStack.build(16, latent_dim=8, base_channels=16, seed=0)
    stack.grow()
    trainer = ProgressiveTrainer(stack, cfg)
    imgs = tiny_data(80, res=16)
    batches = make_epoch_batches(imgs, batch_size=8, seed=0, epoch=1)
    alphas = []
    trainer.train_epoch(batches, TrainState(), alpha_trace=alphas)
    assert alphas == [min(1.0, (i + 1) / 3) for i in range(10)]
    assert stack.alpha == 1.0


def test_divergence_raises():
    cfg = tiny_cfg(learning_rate=1e30, max_epochs=5)
    nets = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=0)
    imgs = tiny_data(64)
    with pytest.raises(DivergenceError):
        fit_fixed(nets, imgs, imgs[:8], cfg)


# ---- fixed fit ----

def test_fit_fixed_best_checkpoint_restored():
    cfg = tiny_cfg(max_epochs=4, plateau_patience=10)
    nets = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=2)
    imgs = tiny_data(48, seed=1)
    result = fit_fixed(nets, imgs, imgs[:16], cfg)
    vals = [r.val_loss for r in result.history]
    assert result.best_val_loss == min(vals)
    assert result.best_epoch == vals.index(min(vals)) + 1
    # model now carries the best epoch's weights: recomputing matches
    trainer = FixedTrainer(nets, cfg)
    val_now = trainer.validation_loss(imgs[:16])[0]
    assert math.isclose(val_now, result.best_val_loss, rel_tol=1e-5)


def test_fit_fixed_resume_reproduces_trajectory():
    cfg_full = tiny_cfg(max_epochs=4, plateau_patience=50)
    imgs = tiny_data(48, seed=5)
    val = imgs[:16]

    nets_a = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=3)
    full = fit_fixed(nets_a, imgs, val, cfg_full, keep_last=True)

    cfg_half = tiny_cfg(max_epochs=2, plateau_patience=50)
    nets_b = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=3)
    first = fit_fixed(nets_b, imgs, val, cfg_half, keep_last=True)
    resumed = fit_fixed(nets_b, imgs, val, cfg_full, resume=first.last_payload)

    full_vals = [r.val_loss for r in full.history]
    res_vals = [r.val_loss for r in resumed.history]
    assert res_vals == full_vals[2:]


# ---- progressive fit ----

def test_fit_progressive_visits_stages():
    cfg = tiny_cfg(max_epochs=2, plateau_patience=1, critic_steps=1, alpha_fade_iterations=5)
    stack = ProgressiveStack.build(32, latent_dim=8, base_channels=16, seed=0)
    imgs = tiny_data(32, res=32)
    result = fit_progressive(stack, imgs, imgs[:8], cfg)
    seen = []
    for rec in result.history:
        if rec.resolution not in seen:
            seen.append(rec.resolution)
    assert seen == [8, 16, 32]


def test_fit_progressive_max16_visits_two_stages():
    cfg = tiny_cfg(max_epochs=1, plateau_patience=1, critic_steps=1, alpha_fade_iterations=5)
    stack = ProgressiveStack.build(16, latent_dim=8, base_channels=16, seed=0)
    imgs = tiny_data(24, res=16)
    result = fit_progressive(stack, imgs, imgs[:8], cfg)
    assert sorted({r.resolution for r in result.history}) == [8, 16]


def test_fit_progressive_reloads_best_before_grow():
    cfg = tiny_cfg(max_epochs=2, plateau_patience=1, critic_steps=1, alpha_fade_iterations=5)
    stack = ProgressiveStack.build(16, latent_dim=8, base_channels=16, seed=1)
    imgs = tiny_data(32, res=16)
    checks = []

    def on_stage_end(stage, stack_now, payload):
        sd = stack_now.state_dict()
        checks.append(all(torch.equal(sd[k], v) for k, v in payload["model"].items()))

    fit_progressive(stack, imgs, imgs[:8], cfg, on_stage_end=on_stage_end)
    assert len(checks) == 2 and all(checks)
