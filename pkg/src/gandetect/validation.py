"""Input validation helpers used by the estimators and the functional core."""

import numpy as np
import torch

from .errors import DimensionError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def as_image_batch(X, resolution=None, channels=1, require_pow2=True):
    """Coerce ``X`` to a float32 image batch of shape [N, C, H, W].

    Accepts a single 2D image, an [N, H, W] stack, an [N, C, H, W] batch,
    or a sequence of 2D arrays. Square spatial dims are required; when
    ``resolution`` is given it must match exactly.
    """
    if isinstance(X, torch.Tensor):
        arr = X.detach().cpu().numpy()
    else:
        arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    elif arr.ndim != 4:
        raise DimensionError(f"expected 2D/3D/4D image data, got ndim={arr.ndim}")
    arr = arr.astype(np.float32, copy=False)
    n, c, h, w = arr.shape
    if c != channels:
        raise DimensionError(f"expected {channels} channel(s), got {c}")
    if h != w:
        raise DimensionError(f"images must be square, got {h}x{w}")
    if resolution is not None and h != resolution:
        raise DimensionError(f"expected resolution {resolution}, got {h}")
    if resolution is None and require_pow2 and not is_power_of_two(h):
        raise DimensionError(f"image side must be a power of two, got {h}")
    if not np.isfinite(arr).all():
        raise ValueError("image data contains non-finite values")
    return arr


def as_latent_batch(z, latent_dim):
    """Coerce ``z`` to a float32 latent batch of shape [N, latent_dim]."""
    if isinstance(z, torch.Tensor):
        arr = z.detach().cpu().numpy()
    else:
        arr = np.asarray(z, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] != latent_dim:
        raise DimensionError(
            f"expected latent vectors of length {latent_dim}, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("latent data contains non-finite values")
    return arr.astype(np.float32, copy=False)


def check_volume(volume, mask=None, name="volume"):
    """Validate a 3D volume and an optional same-shape boolean mask."""
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise DimensionError(f"{name} must be 3D, got ndim={vol.ndim}")
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != vol.shape:
            raise DimensionError(
                f"mask shape {m.shape} does not match {name} shape {vol.shape}"
            )
        return vol, m.astype(bool)
    return vol, None
