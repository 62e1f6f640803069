"""Generator and critic objectives.

The generator trains on three terms: an L2 distance between latent codes,
an L1 distance between an image and its reconstruction, and an L2 distance
between critic feature vectors (feature matching). The critic trains with
either a binary cross-entropy pair or a Wasserstein objective, optionally
with a gradient penalty enforcing unit gradient norm on interpolates.
"""

import math
from dataclasses import dataclass

import torch

from .errors import DimensionError

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights for the three generator loss terms."""

    w_adv: float = 1.0
    w_con: float = 70.0
    w_enc: float = 10.0

    def __post_init__(self):
        for name in ("w_adv", "w_con", "w_enc"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class GradientPenaltyConfig:
    lambda_gp: float = 10.0
    interpolation_samples: int | None = None  # None: one interpolate per batch item

    def __post_init__(self):
        if not math.isfinite(self.lambda_gp) or self.lambda_gp < 0:
            raise ValueError(f"lambda_gp must be finite and non-negative, got {self.lambda_gp}")


def _as_float_tensor(x):
    if isinstance(x, torch.Tensor):
        return x if x.is_floating_point() else x.double()
    return torch.as_tensor(x, dtype=torch.float64)


def _pairwise_l2(a, b, what):
    a = _as_float_tensor(a)
    b = _as_float_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"{what} length mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim == 1:
        a, b = a[None], b[None]
    return (a - b).flatten(1).norm(2, dim=1).mean()


def encoder_loss(z, z_hat):
    """L2 distance between latent codes; batches are averaged per sample."""
    return _pairwise_l2(z, z_hat, "latent")


def adversarial_loss(f_x, f_xhat):
    """L2 distance between critic feature vectors (feature matching)."""
    return _pairwise_l2(f_x, f_xhat, "feature")


def contextual_loss(x, x_hat):
    """Mean absolute pixel difference between an image and its reconstruction."""
    x = _as_float_tensor(x)
    x_hat = _as_float_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"image shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def generator_total(l_adv, l_con, l_enc, weights=LossWeights()):
    """Weighted sum of the three generator loss terms."""
    return weights.w_adv * l_adv + weights.w_con * l_con + weights.w_enc * l_enc


def discriminator_bce(pred_real, pred_fake):
    """Mean of BCE(pred_real, 1) and BCE(pred_fake, 0) on clamped probabilities."""
    pr = _as_float_tensor(pred_real).clamp(BCE_EPS, 1.0 - BCE_EPS)
    pf = _as_float_tensor(pred_fake).clamp(BCE_EPS, 1.0 - BCE_EPS)
    loss_real = -(pr.log()).mean()
    loss_fake = -((1.0 - pf).log()).mean()
    return 0.5 * (loss_real + loss_fake)


def wasserstein_critic_loss(scores_real, scores_fake):
    """mean(scores_fake) - mean(scores_real); the critic minimizes this."""
    sr = _as_float_tensor(scores_real)
    sf = _as_float_tensor(scores_fake)
    if sr.numel() == 0 or sf.numel() == 0:
        raise ValueError("score lists must be non-empty")
    return sf.mean() - sr.mean()


def gradient_penalty(critic, x_real, x_fake, lambda_gp=10.0, generator=None):
    """Penalty pushing the critic's gradient norm towards 1 on interpolates.

    Interpolates are u*x_real + (1-u)*x_fake with u drawn uniformly per
    sample. ``critic`` maps an image batch to one score per sample.
    """
    xr = _as_float_tensor(x_real)
    xf = _as_float_tensor(x_fake)
    if xr.shape != xf.shape:
        raise DimensionError(f"batch shape mismatch: {tuple(xr.shape)} vs {tuple(xf.shape)}")
    if xr.ndim == 2:
        xr, xf = xr[None, None], xf[None, None]
    elif xr.ndim == 3:
        xr, xf = xr[:, None], xf[:, None]
    n = xr.shape[0]
    u = torch.rand(n, *([1] * (xr.ndim - 1)), dtype=xr.dtype, generator=generator)
    x_mid = (u * xr + (1.0 - u) * xf).detach().requires_grad_(True)
    scores = critic(x_mid)
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=x_mid, create_graph=True
    )[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return lambda_gp * ((norms - 1.0) ** 2).mean()
