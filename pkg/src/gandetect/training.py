"""Training orchestration.

Fixed-resolution training alternates one critic update (Wasserstein loss,
weight-clipped critic) with one generator update (weighted encoder +
contextual + feature-matching losses) per minibatch. Progressive training
runs the same generator objective but a gradient-penalty critic with
several critic steps per generator step, fading each new resolution rung
in linearly and growing when the train-validation loss plateaus.
"""

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import DimensionError, DivergenceError
from .losses import (
    LossWeights,
    adversarial_loss,
    contextual_loss,
    discriminator_bce,
    encoder_loss,
    generator_total,
    gradient_penalty,
    wasserstein_critic_loss,
)
from .networks import GanomalyNets, ProgressiveStack


def seed_for(*parts):
    """Derive a 63-bit child seed from integer parts."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.002
    latent_dim: int = 100
    base_channels: int = 256
    channels: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    plateau_patience: int = 10
    convergence: str = "plateau"  # "plateau" or "moving-average"
    convergence_window: int = 6
    convergence_rel_tol: float = 1e-3
    alpha_fade_iterations: int = 750_000
    max_resolution: int = 32
    max_epochs: int = 500
    critic_steps: int = 5
    lambda_gp: float = 10.0
    weight_clip: float = 0.01
    epoch_train_samples: int | None = None
    epoch_val_samples: int | None = None
    betas: tuple = (0.5, 0.999)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.critic_steps < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.alpha_fade_iterations < 1:
            raise ValueError("alpha_fade_iterations must be positive")


@dataclass
class EpochRecord:
    epoch: int
    resolution: int
    alpha: float
    l_adv: float = math.nan
    l_con: float = math.nan
    l_enc: float = math.nan
    l_total: float = math.nan
    critic_loss: float = math.nan
    bce: float = math.nan
    val_loss: float = math.nan


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    iterations_in_stage: int = 0
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)

    def begin_epoch(self):
        self.epoch += 1

    def append_record(self, resolution, alpha, **metrics):
        rec = EpochRecord(epoch=self.epoch, resolution=resolution, alpha=alpha, **metrics)
        self.history.append(rec)
        return rec

    def record_validation(self, val_loss):
        """Attach a validation loss to the newest record; returns True on improvement."""
        self.history[-1].val_loss = float(val_loss)
        if val_loss < self.best_val_loss:
            self.best_val_loss = float(val_loss)
            self.best_epoch = self.epoch
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False


class PlateauMonitor:
    """Stop once validation loss fails to improve for ``patience`` epochs."""

    def __init__(self, patience):
        self.patience = patience

    def should_stop(self, state: TrainState):
        return state.epochs_since_improvement >= self.patience


class MovingAverageMonitor:
    """Stop when the windowed moving average of validation loss stalls."""

    def __init__(self, window=6, rel_tol=1e-3):
        self.window = window
        self.rel_tol = rel_tol

    def should_stop(self, state: TrainState):
        vals = [r.val_loss for r in state.history if math.isfinite(r.val_loss)]
        if len(vals) < self.window + 1:
            return False
        now = sum(vals[-self.window:]) / self.window
        prev = sum(vals[-self.window - 1:-1]) / self.window
        return abs(now - prev) / max(abs(prev), 1e-12) < self.rel_tol


def make_monitor(cfg: TrainConfig):
    if cfg.convergence == "plateau":
        return PlateauMonitor(cfg.plateau_patience)
    if cfg.convergence == "moving-average":
        return MovingAverageMonitor(cfg.convergence_window, cfg.convergence_rel_tol)
    raise ValueError(f"unknown convergence mode {cfg.convergence!r}")


def _coerce_stack(images):
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4:
        raise DimensionError(f"expected [N, H, W] or [N, C, H, W] images, got {arr.shape}")
    return arr


def make_epoch_batches(images, batch_size, seed, epoch, max_samples=None):
    """Shuffle (without replacement) and chunk one epoch's images.

    The permutation is keyed on (seed, epoch) so resumed runs see the same
    batch order. Trailing chunks smaller than 2 are dropped (batch-norm).
    """
    arr = _coerce_stack(images)
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, int(epoch)])
    idx = rng.permutation(len(arr))
    if max_samples is not None:
        idx = idx[:max_samples]
    batches = []
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        if len(chunk) < 2:
            continue
        batches.append(torch.from_numpy(arr[chunk]))
    return batches


def downsample_for_stage(x, stage_resolution):
    """Average-pool square images down to ``stage_resolution``.

    The shrink factor must be a power of two; identity when it is 1.
    """
    arr = np.asarray(x)
    h, w = arr.shape[-2], arr.shape[-1]
    if h != w:
        raise ValueError(f"expected square images, got {h}x{w}")
    if stage_resolution < 1 or h % stage_resolution != 0:
        raise ValueError(f"{stage_resolution} does not divide image side {h}")
    factor = h // stage_resolution
    if factor & (factor - 1) != 0:
        raise ValueError(f"shrink factor {factor} is not a power of two")
    if factor == 1:
        return arr.copy()
    lead = arr.shape[:-2]
    reshaped = arr.reshape(*lead, stage_resolution, factor, stage_resolution, factor)
    return reshaped.mean(axis=(-3, -1)).astype(arr.dtype, copy=False)


def _check_finite(epoch, batch_index, **losses):
    for name, value in losses.items():
        if not math.isfinite(value):
            raise DivergenceError(
                f"non-finite {name}={value} at epoch {epoch}, batch {batch_index}"
            )


class _LossMeter:
    def __init__(self):
        self.sums = {}
        self.count = 0

    def add(self, n, **values):
        for k, v in values.items():
            self.sums[k] = self.sums.get(k, 0.0) + v * n
        self.count += n

    def means(self):
        return {k: v / self.count for k, v in self.sums.items()}


def _generator_step(model, x, opt_g, gen_params, head_params, weights):
    """One generator update.

    The encoder head is trained through the reconstruction terms only; the
    latent-distance term updates the generator alone. A single head encodes
    both the image and its reconstruction, so letting that term reach the
    head admits a constant-output collapse (z = z_hat = bias) that silently
    zeroes the loss.
    """
    opt_g.zero_grad()
    out_x = model.discriminate(x)
    z = out_x.encoding
    x_hat = model.generate(z)
    out_hat = model.discriminate(x_hat)
    l_enc = encoder_loss(z, out_hat.encoding)
    l_con = contextual_loss(x, x_hat)
    l_adv = adversarial_loss(out_x.features, out_hat.features)
    total = generator_total(l_adv, l_con, l_enc, weights)

    loss_rec = weights.w_adv * l_adv + weights.w_con * l_con
    grads_rec = torch.autograd.grad(loss_rec, gen_params + head_params,
                                    retain_graph=True, allow_unused=True)
    grads_enc = torch.autograd.grad(weights.w_enc * l_enc, gen_params,
                                    allow_unused=True)
    for p, g in zip(gen_params + head_params, grads_rec):
        if g is not None:
            p.grad = g.clone()
    for p, g in zip(gen_params, grads_enc):
        if g is None:
            continue
        p.grad = g if p.grad is None else p.grad + g
    opt_g.step()
    return l_adv, l_con, l_enc, total


class FixedTrainer:
    """One critic step (Wasserstein, clipped weights) then one generator step
    per minibatch. The generator step also trains the encoder head."""

    def __init__(self, nets: GanomalyNets, cfg: TrainConfig):
        self.nets = nets
        self.cfg = cfg
        self.gen_params = list(nets.generator.parameters())
        self.head_params = list(nets.discriminator.encoder_parameters())
        self.opt_g = torch.optim.Adam(self.gen_params + self.head_params,
                                      lr=cfg.learning_rate, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(
            list(nets.discriminator.critic_parameters()), lr=cfg.learning_rate, betas=cfg.betas
        )

    def _clip_critic(self):
        clip = self.cfg.weight_clip
        if clip and clip > 0:
            with torch.no_grad():
                for p in self.nets.discriminator.critic_parameters():
                    p.clamp_(-clip, clip)

    def train_epoch(self, batches, state: TrainState, epoch=None):
        batches = list(batches)
        if not batches:
            raise ValueError("empty batch stream")
        state.begin_epoch()
        epoch = state.epoch if epoch is None else epoch
        nets, cfg = self.nets, self.cfg
        nets.train()
        meter = _LossMeter()
        for i, x in enumerate(batches):
            # critic update
            self.opt_d.zero_grad()
            with torch.no_grad():
                x_fake = nets.reconstruct(x)
            out_real = nets.discriminate(x)
            out_fake = nets.discriminate(x_fake)
            critic = wasserstein_critic_loss(out_real.realness, out_fake.realness)
            critic.backward()
            self.opt_d.step()
            self._clip_critic()
            with torch.no_grad():
                bce = float(discriminator_bce(
                    torch.sigmoid(out_real.realness), torch.sigmoid(out_fake.realness)
                ))

            # generator + encoder-head update
            l_adv, l_con, l_enc, total = _generator_step(
                nets, x, self.opt_g, self.gen_params, self.head_params, cfg.weights
            )

            _check_finite(epoch, i, critic_loss=float(critic.detach()),
                          generator_loss=float(total.detach()))
            state.iterations_in_stage += 1
            meter.add(
                x.shape[0],
                l_adv=float(l_adv.detach()), l_con=float(l_con.detach()),
                l_enc=float(l_enc.detach()), l_total=float(total.detach()),
                critic_loss=float(critic.detach()), bce=bce,
            )
        nets.eval()
        state.append_record(resolution=nets.resolution, alpha=1.0, **meter.means())
        return state

    def validation_loss(self, val_images, max_samples=None, seed=0, epoch=0):
        return _validation_loss(self.nets, val_images, self.cfg, max_samples, seed, epoch)


class ProgressiveTrainer:
    """Gradient-penalty critic with several critic steps per generator step;
    advances the fade coefficient once per minibatch."""

    def __init__(self, stack: ProgressiveStack, cfg: TrainConfig):
        self.stack = stack
        self.cfg = cfg
        self.gen_params = list(stack.generator.parameters())
        self.head_params = list(stack.discriminator.encoder_parameters())
        self.opt_g = torch.optim.Adam(self.gen_params + self.head_params,
                                      lr=cfg.learning_rate, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(
            list(stack.discriminator.critic_parameters()), lr=cfg.learning_rate, betas=cfg.betas
        )

    def train_epoch(self, batches, state: TrainState, epoch=None, alpha_trace=None):
        batches = list(batches)
        if not batches:
            raise ValueError("empty batch stream")
        state.begin_epoch()
        epoch = state.epoch if epoch is None else epoch
        stack, cfg = self.stack, self.cfg
        stack.train()
        meter = _LossMeter()
        gp_rng = torch.Generator().manual_seed(seed_for(cfg.seed, epoch, 11))

        def critic_fn(t):
            return stack.discriminator(t, stack.active_stage, stack.alpha).realness

        for i, x in enumerate(batches):
            critic_val, gp_val, bce = math.nan, math.nan, math.nan
            for _ in range(cfg.critic_steps):
                self.opt_d.zero_grad()
                with torch.no_grad():
                    x_fake = stack.reconstruct(x)
                out_real = stack.discriminate(x)
                out_fake = stack.discriminate(x_fake)
                critic = wasserstein_critic_loss(out_real.realness, out_fake.realness)
                gp = gradient_penalty(critic_fn, x, x_fake, cfg.lambda_gp, generator=gp_rng)
                (critic + gp).backward()
                self.opt_d.step()
                critic_val, gp_val = float(critic.detach()), float(gp.detach())
                with torch.no_grad():
                    bce = float(discriminator_bce(
                        torch.sigmoid(out_real.realness), torch.sigmoid(out_fake.realness)
                    ))

            l_adv, l_con, l_enc, total = _generator_step(
                stack, x, self.opt_g, self.gen_params, self.head_params, cfg.weights
            )

            _check_finite(epoch, i, critic_loss=critic_val, gradient_penalty=gp_val,
                          generator_loss=float(total.detach()))

            stack.iterations_in_stage += 1
            state.iterations_in_stage = stack.iterations_in_stage
            if stack.active_stage > 0:
                stack.set_alpha(min(1.0, stack.iterations_in_stage / cfg.alpha_fade_iterations))
            if alpha_trace is not None:
                alpha_trace.append(stack.alpha)
            meter.add(
                x.shape[0],
                l_adv=float(l_adv.detach()), l_con=float(l_con.detach()),
                l_enc=float(l_enc.detach()), l_total=float(total.detach()),
                critic_loss=critic_val, bce=bce,
            )
        stack.eval()
        state.append_record(resolution=stack.active_resolution, alpha=stack.alpha,
                            **meter.means())
        return state

    def validation_loss(self, val_images, max_samples=None, seed=0, epoch=0):
        return _validation_loss(self.stack, val_images, self.cfg, max_samples, seed, epoch)


def _validation_loss(model, val_images, cfg, max_samples=None, seed=0, epoch=0):
    """Weighted generator loss on the train-validation split, in eval mode."""
    arr = _coerce_stack(val_images)
    if max_samples is not None and max_samples < len(arr):
        rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, int(epoch), 7])
        arr = arr[rng.permutation(len(arr))[:max_samples]]
    model.eval()
    meter = _LossMeter()
    with torch.no_grad():
        for start in range(0, len(arr), cfg.batch_size):
            x = torch.from_numpy(arr[start:start + cfg.batch_size])
            out_x = model.discriminate(x)
            x_hat = model.generate(out_x.encoding)
            out_hat = model.discriminate(x_hat)
            l_enc = encoder_loss(out_x.encoding, out_hat.encoding)
            l_con = contextual_loss(x, x_hat)
            l_adv = adversarial_loss(out_x.features, out_hat.features)
            meter.add(x.shape[0], l_adv=float(l_adv), l_con=float(l_con), l_enc=float(l_enc))
    parts = meter.means()
    total = float(generator_total(parts["l_adv"], parts["l_con"], parts["l_enc"], cfg.weights))
    return total, parts


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_val_loss: float
    best_payload: dict | None
    last_payload: dict | None = None
    stage_summaries: list = field(default_factory=list)


def _snapshot(module: nn.Module, trainer, state: TrainState, stack=None, val_loss=math.nan):
    return {
        "model": copy.deepcopy(module.state_dict()),
        "opt_g": copy.deepcopy(trainer.opt_g.state_dict()),
        "opt_d": copy.deepcopy(trainer.opt_d.state_dict()),
        "epoch": state.epoch,
        "best_val_loss": state.best_val_loss,
        "best_epoch": state.best_epoch,
        "epochs_since_improvement": state.epochs_since_improvement,
        "iterations_in_stage": state.iterations_in_stage,
        "alpha": stack.alpha if stack is not None else 1.0,
        "stage": stack.active_stage if stack is not None else None,
        "val_loss": val_loss,
    }


def _restore_state(resume):
    state = TrainState(
        epoch=resume["epoch"],
        best_val_loss=resume["best_val_loss"],
        best_epoch=resume["best_epoch"],
        epochs_since_improvement=resume["epochs_since_improvement"],
        iterations_in_stage=resume["iterations_in_stage"],
    )
    return state


def fit_fixed(nets: GanomalyNets, train_images, val_images, cfg: TrainConfig,
              resume=None, keep_last=False) -> FitResult:
    """Train until the train-validation loss stops improving; the model is
    left holding the best epoch's weights."""
    train_arr = _coerce_stack(train_images)
    if train_arr.shape[-1] != nets.resolution:
        raise DimensionError(
            f"data resolution {train_arr.shape[-1]} != model resolution {nets.resolution}"
        )
    trainer = FixedTrainer(nets, cfg)
    state = TrainState()
    if resume is not None:
        nets.load_state_dict(resume["model"])
        trainer.opt_g.load_state_dict(copy.deepcopy(resume["opt_g"]))
        trainer.opt_d.load_state_dict(copy.deepcopy(resume["opt_d"]))
        state = _restore_state(resume)
    monitor = make_monitor(cfg)
    best_payload = None

    while state.epoch < cfg.max_epochs:
        epoch = state.epoch + 1
        batches = make_epoch_batches(
            train_arr, cfg.batch_size, cfg.seed, epoch, cfg.epoch_train_samples
        )
        trainer.train_epoch(batches, state, epoch=epoch)
        val_loss, _ = trainer.validation_loss(
            val_images, cfg.epoch_val_samples, cfg.seed, epoch
        )
        improved = state.record_validation(val_loss)
        if improved:
            best_payload = _snapshot(nets, trainer, state, val_loss=val_loss)
        if monitor.should_stop(state):
            break

    last_payload = _snapshot(nets, trainer, state) if keep_last else None
    if best_payload is not None:
        nets.load_state_dict(best_payload["model"])
    nets.eval()
    return FitResult(
        history=state.history,
        best_epoch=state.best_epoch,
        best_val_loss=state.best_val_loss,
        best_payload=best_payload,
        last_payload=last_payload,
    )


def fit_progressive(stack: ProgressiveStack, train_images, val_images, cfg: TrainConfig,
                    on_stage_end=None) -> FitResult:
    """Stage loop: train each rung to plateau, reload its best epoch, grow,
    and fade the new rung in; stops after the plateau at max resolution."""
    train_arr = _coerce_stack(train_images)
    if train_arr.shape[-1] != stack.max_resolution:
        raise DimensionError(
            f"data resolution {train_arr.shape[-1]} != max resolution {stack.max_resolution}"
        )
    val_arr = _coerce_stack(val_images)
    history = []
    stage_summaries = []
    global_epoch = 0
    best_payload = None

    while True:
        res = stack.active_resolution
        tr = downsample_for_stage(train_arr, res)
        va = downsample_for_stage(val_arr, res)
        trainer = ProgressiveTrainer(stack, cfg)
        state = TrainState()
        state.iterations_in_stage = stack.iterations_in_stage
        monitor = make_monitor(cfg)
        best_payload = None

        while state.epoch < cfg.max_epochs:
            global_epoch += 1
            batches = make_epoch_batches(
                tr, cfg.batch_size, cfg.seed, global_epoch, cfg.epoch_train_samples
            )
            trainer.train_epoch(batches, state, epoch=global_epoch)
            val_loss, _ = trainer.validation_loss(
                va, cfg.epoch_val_samples, cfg.seed, global_epoch
            )
            improved = state.record_validation(val_loss)
            if improved:
                best_payload = _snapshot(stack, trainer, state, stack=stack, val_loss=val_loss)
            if monitor.should_stop(state):
                break

        offset = len(history)
        for rec in state.history:
            rec.epoch += offset - (state.history[0].epoch - 1)
        history.extend(state.history)

        if best_payload is not None:
            stack.load_state_dict(best_payload["model"])
            stack.alpha = best_payload["alpha"]
            stack.iterations_in_stage = best_payload["iterations_in_stage"]
        stage_summaries.append({
            "resolution": res,
            "epochs": state.epoch,
            "best_epoch": state.best_epoch,
            "best_val_loss": state.best_val_loss,
        })
        if on_stage_end is not None:
            on_stage_end(stack.active_stage, stack, best_payload)
        if stack.active_stage == len(stack.stage_resolutions) - 1:
            break
        stack.grow()

    stack.eval()
    return FitResult(
        history=history,
        best_epoch=stage_summaries[-1]["best_epoch"],
        best_val_loss=stage_summaries[-1]["best_val_loss"],
        best_payload=best_payload,
        stage_summaries=stage_summaries,
    )
