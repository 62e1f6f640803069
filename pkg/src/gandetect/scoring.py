"""Anomaly scoring.

The image-level anomaly score of a test image is the latent L2 distance
between its encoding and the encoding of its reconstruction. A robust
per-element normalizer (median and median absolute deviation of the
elementwise latent residuals over the training set) yields a modified
score. Larger inputs are scored per pixel by decomposing each axial slice
into overlapping patches on a stride lattice, scoring every patch, and
averaging the scores of all patches covering each pixel.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DimensionError

MAD_FLOOR = 1e-8


@dataclass
class ScoreNormalizer:
    median: np.ndarray  # per latent element
    mad: np.ndarray     # per latent element, >= 0


@dataclass
class ScoreMap:
    """Per-pixel (2D) or per-voxel (3D) scores with patch-coverage counts."""

    scores: np.ndarray
    coverage: np.ndarray
    mask: np.ndarray | None = None


def _image_tensor(images, resolution=None):
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4:
        raise DimensionError(f"expected image batch, got shape {arr.shape}")
    if resolution is not None and arr.shape[-1] != resolution:
        raise DimensionError(f"expected resolution {resolution}, got {arr.shape[-1]}")
    return torch.from_numpy(arr)


def elementwise_encoder_losses(model, images, batch_size=1024):
    """|z - z_hat| per latent element for each image, through the full pipeline."""
    x = _image_tensor(images, getattr(model, "resolution", None))
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            z = model.encode(xb)
            z_hat = model.encode(model.generate(z))
            out.append((z - z_hat).abs().cpu().numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, 0))


def anomaly_scores(model, images, batch_size=1024):
    """Latent L2 distance per image; the raw anomaly score."""
    elem = elementwise_encoder_losses(model, images, batch_size)
    return np.sqrt((elem.astype(np.float64) ** 2).sum(axis=1))


def anomaly_score(x, model):
    return float(anomaly_scores(model, np.asarray(x)[None] if np.asarray(x).ndim == 2 else x)[0])


def normalizer_from_elementwise(elementwise) -> ScoreNormalizer:
    """Median/MAD per latent element over a stack of elementwise losses."""
    mat = np.asarray(elementwise, dtype=np.float64)
    if mat.ndim != 2 or len(mat) == 0:
        raise ValueError("need a non-empty [n_images, latent_dim] loss matrix")
    median = np.median(mat, axis=0)
    mad = np.median(np.abs(mat - median), axis=0)
    return ScoreNormalizer(median=median, mad=mad)


def fit_normalizer(train_images, model, batch_size=1024) -> ScoreNormalizer:
    """Loop the training images through the pipeline and fit median/MAD."""
    images = np.asarray(train_images)
    if images.size == 0:
        raise ValueError("empty training stream")
    norm = normalizer_from_elementwise(elementwise_encoder_losses(model, images, batch_size))
    if np.any(norm.mad == 0.0):
        warnings.warn(
            "normalizer has zero MAD entries; modified scores will use a floor of "
            f"{MAD_FLOOR}", UserWarning, stacklevel=2,
        )
    return norm


def modified_scores(model, images, norm: ScoreNormalizer, batch_size=1024):
    """Mean over elements of (|z - z_hat| - median) / MAD (floored)."""
    elem = elementwise_encoder_losses(model, images, batch_size)
    if elem.shape[1] != norm.median.shape[0]:
        raise DimensionError(
            f"normalizer dimension {norm.median.shape[0]} != latent dimension {elem.shape[1]}"
        )
    if np.any(norm.mad == 0.0):
        warnings.warn(
            "zero MAD entries floored while computing modified scores",
            UserWarning, stacklevel=2,
        )
    mad = np.maximum(norm.mad, MAD_FLOOR)
    return ((elem - norm.median) / mad).mean(axis=1)


def modified_score(x, model, norm: ScoreNormalizer):
    arr = np.asarray(x)
    return float(modified_scores(model, arr[None] if arr.ndim == 2 else arr, norm)[0])


def _lattice_origins(dim, patch, stride):
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] != dim - patch:
        origins.append(dim - patch)
    return origins


def decompose(image, patch, stride=4):
    """All patch views whose top-left corner sits on the stride lattice.

    The final fitting origin is appended when the lattice does not land on
    the trailing edge, so every pixel is covered.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2D slice, got shape {img.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = img.shape
    if patch > h or patch > w:
        raise ValueError(f"patch size {patch} exceeds image dims {img.shape}")
    out = []
    for r in _lattice_origins(h, patch, stride):
        for c in _lattice_origins(w, patch, stride):
            out.append((img[r:r + patch, c:c + patch], (r, c)))
    return out


def reassemble(patch_scores, patch, image_shape) -> ScoreMap:
    """Average the scores of every patch covering each pixel.

    Accumulation runs in a canonical order so the result is bitwise
    independent of the order patches arrive in.
    """
    h, w = image_shape
    acc = np.zeros((h, w), dtype=np.float64)
    cov = np.zeros((h, w), dtype=np.int64)
    ordered = sorted(patch_scores, key=lambda item: (item[1][0], item[1][1], item[0]))
    for score, (r, c) in ordered:
        if not (0 <= r <= h - patch and 0 <= c <= w - patch):
            raise ValueError(f"patch origin ({r}, {c}) out of bounds for {image_shape}")
        acc[r:r + patch, c:c + patch] += score
        cov[r:r + patch, c:c + patch] += 1
    scores = np.zeros((h, w), dtype=np.float64)
    np.divide(acc, cov, out=scores, where=cov > 0)
    return ScoreMap(scores=scores, coverage=cov)


def score_slice(image, model, patch, stride=4, score_mode="raw", normalizer=None,
                batch_size=1024) -> ScoreMap:
    """Decompose one slice, score every patch, and reassemble."""
    pieces = decompose(image, patch, stride)
    stack = np.stack([p for p, _ in pieces])
    if score_mode == "raw":
        values = anomaly_scores(model, stack, batch_size)
    elif score_mode == "modified":
        if normalizer is None:
            raise ValueError("modified scoring requires a fitted normalizer")
        values = modified_scores(model, stack, normalizer, batch_size)
    else:
        raise ValueError(f"unknown score_mode {score_mode!r}")
    scored = [(float(v), origin) for v, (_, origin) in zip(values, pieces)]
    return reassemble(scored, patch, image.shape)


def score_volume(volume, mask, model, patch, stride=4, score_mode="raw",
                 normalizer=None, batch_size=1024) -> ScoreMap:
    """Per-axial-slice patch scoring of a 3D volume; the evaluation mask is
    carried into the result untouched."""
    vol = np.asarray(volume, dtype=np.float32)
    if vol.ndim != 3:
        raise DimensionError(f"expected a 3D volume, got shape {vol.shape}")
    model_res = getattr(model, "resolution", None)
    if model_res is not None and model_res != patch:
        raise DimensionError(f"model resolution {model_res} != patch size {patch}")
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != vol.shape:
            raise DimensionError(f"mask shape {mask.shape} != volume shape {vol.shape}")
    scores = np.zeros(vol.shape, dtype=np.float64)
    coverage = np.zeros(vol.shape, dtype=np.int64)
    for z in range(vol.shape[0]):
        smap = score_slice(vol[z], model, patch, stride, score_mode, normalizer, batch_size)
        scores[z] = smap.scores
        coverage[z] = smap.coverage
    return ScoreMap(scores=scores, coverage=coverage, mask=mask)
