"""Data loading and preparation.

Covers the IDX image corpus (class filtering, bilinear upsizing to 32x32,
[0, 1] scaling), the four-way normal/anomalous split plan, percentile
intensity normalization for volumes, in-brain patch sampling that avoids
annotated lesions, and horizontal-flip augmentation.
"""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, DimensionError, SamplingError

FASHION_CLASS_NAMES = {
    "tshirt_top": 0, "trouser": 1, "pullover": 2, "dress": 3, "coat": 4,
    "sandal": 5, "shirt": 6, "sneaker": 7, "bag": 8, "ankle_boot": 9,
}
# common aliases used throughout the experiments
FASHION_LABELS = dict(FASHION_CLASS_NAMES)
FASHION_LABELS.update({
    "boot": 9, "boots": 9, "dresses": 3, "sandals": 5, "sneakers": 7,
})


def _resolve_label(label):
    if isinstance(label, str):
        key = label.lower().replace("-", "_").replace(" ", "_")
        if key not in FASHION_LABELS:
            raise ValueError(f"unknown class label {label!r}")
        return FASHION_LABELS[key]
    label = int(label)
    if not 0 <= label <= 9:
        raise ValueError(f"class label must be 0..9, got {label}")
    return label


def _open_idx(path):
    import os

    for candidate in (path, str(path) + ".gz"):
        if os.path.exists(candidate):
            opener = gzip.open if str(candidate).endswith(".gz") else open
            with opener(candidate, "rb") as f:
                return f.read()
    raise FileNotFoundError(f"IDX file not found: {path}(.gz)")


def parse_idx(data: bytes):
    magic = struct.unpack(">I", data[:4])[0]
    ndim = magic & 0xFF
    if magic >> 8 != 0x08:  # unsigned-byte payload
        raise ValueError(f"bad IDX magic {magic:#x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    offset = 4 + 4 * ndim
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(dims)


def resize_bilinear(images, size):
    """Bilinear resize of an [N, H, W] float stack."""
    t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))[:, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[:, 0].numpy()


def load_fashion_mnist(path, label, split="train", size=32):
    """All images of one class, resized to ``size`` and scaled to [0, 1]."""
    from pathlib import Path

    base = Path(path)
    images = parse_idx(_open_idx(base / f"{split}-images-idx3-ubyte"))
    labels = parse_idx(_open_idx(base / f"{split}-labels-idx1-ubyte"))
    if len(images) != len(labels):
        raise ValueError("image/label counts differ")
    target = _resolve_label(label)
    selected = images[labels == target].astype(np.float32) / 255.0
    return resize_bilinear(selected, size).astype(np.float32)


@dataclass(frozen=True)
class SplitPlan:
    train: float = 0.70
    train_val: float = 0.05
    test_val: float = 0.05
    test_normal: float = 0.20
    anomalous_test_count: int = 1200

    def __post_init__(self):
        total = self.train + self.train_val + self.test_val + self.test_normal
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")


@dataclass
class Splits:
    train: np.ndarray
    train_val: np.ndarray
    test_val: np.ndarray
    test_normal: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray  # 1 = anomalous
    train_indices: np.ndarray = field(repr=False, default=None)
    train_val_indices: np.ndarray = field(repr=False, default=None)
    test_val_indices: np.ndarray = field(repr=False, default=None)
    test_normal_indices: np.ndarray = field(repr=False, default=None)
    anomalous_indices: np.ndarray = field(repr=False, default=None)


def make_splits(images, plan: SplitPlan, anomalous_pool, seed) -> Splits:
    """Disjoint train / train-val / test-val / test-normal split of the
    normal class, plus a 50/50 test set with sampled anomalous images."""
    images = np.asarray(images)
    pool = np.asarray(anomalous_pool)
    n = len(images)
    bounds = np.floor(np.cumsum([plan.train, plan.train_val, plan.test_val]) * n + 0.5)
    bounds = bounds.astype(int)
    if n < 4 or bounds[0] == 0 or bounds[2] >= n:
        raise ValueError(f"not enough images ({n}) for the split plan")
    if len(pool) < plan.anomalous_test_count:
        raise ValueError(
            f"anomalous pool ({len(pool)}) smaller than requested "
            f"{plan.anomalous_test_count}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    idx_train = perm[: bounds[0]]
    idx_train_val = perm[bounds[0]:bounds[1]]
    idx_test_val = perm[bounds[1]:bounds[2]]
    idx_test_normal = perm[bounds[2]:]
    idx_anom = rng.choice(len(pool), size=plan.anomalous_test_count, replace=False)

    test_images = np.concatenate([images[idx_test_normal], pool[idx_anom]])
    test_labels = np.concatenate([
        np.zeros(len(idx_test_normal), dtype=np.int64),
        np.ones(len(idx_anom), dtype=np.int64),
    ])
    return Splits(
        train=images[idx_train],
        train_val=images[idx_train_val],
        test_val=images[idx_test_val],
        test_normal=images[idx_test_normal],
        test_images=test_images,
        test_labels=test_labels,
        train_indices=idx_train,
        train_val_indices=idx_train_val,
        test_val_indices=idx_test_val,
        test_normal_indices=idx_test_normal,
        anomalous_indices=idx_anom,
    )


def normalize_percentile(volume, mask=None, lower=5.0, upper=95.0):
    """Affine map sending the in-mask 5th percentile to 0 and the 95th to 1.

    Values outside [0, 1] are kept; clipping would flatten exactly the
    bright outliers the scoring stage needs to see.
    """
    vol = np.asarray(volume, dtype=np.float64)
    vals = vol[np.asarray(mask, dtype=bool)] if mask is not None else vol.ravel()
    p_lo, p_hi = np.percentile(vals, [lower, upper])
    if p_hi <= p_lo:
        raise DegenerateInputError(
            f"percentiles p{lower}={p_lo} and p{upper}={p_hi} give no intensity spread"
        )
    return ((vol - p_lo) / (p_hi - p_lo)).astype(np.float32)


@dataclass
class PatchSampleSpec:
    patches_per_volume: int = 2000
    patch_size: int = 16
    exclusion_mask: np.ndarray | None = None
    flip_augment: bool = False
    min_inbrain_fraction: float = 0.5

    def __post_init__(self):
        if self.patch_size not in (8, 16, 32):
            raise ValueError(f"patch_size must be 8, 16 or 32, got {self.patch_size}")
        if self.patches_per_volume < 1:
            raise ValueError("patches_per_volume must be positive")


def sample_patches(volume, brain_mask, spec: PatchSampleSpec, seed,
                   return_origins=False, max_attempt_factor=200):
    """Random axial patches centered in the brain, covering mostly brain
    tissue and overlapping zero exclusion-mask voxels."""
    vol = np.asarray(volume, dtype=np.float32)
    mask = np.asarray(brain_mask).astype(bool)
    if vol.ndim != 3 or mask.shape != vol.shape:
        raise DimensionError("volume and brain_mask must be same-shape 3D arrays")
    excl = spec.exclusion_mask
    if excl is not None:
        excl = np.asarray(excl).astype(bool)
        if excl.shape != vol.shape:
            raise DimensionError("exclusion mask shape mismatch")
    p = spec.patch_size
    nz, ny, nx = vol.shape
    if ny < p or nx < p:
        raise ValueError(f"patch size {p} exceeds slice dims {(ny, nx)}")
    brain_slices = np.nonzero(mask.any(axis=(1, 2)))[0]
    if len(brain_slices) == 0:
        raise SamplingError("brain mask is empty", achieved=0)

    rng = np.random.default_rng(seed)
    patches, origins = [], []
    attempts_left = max_attempt_factor * spec.patches_per_volume
    while len(patches) < spec.patches_per_volume and attempts_left > 0:
        attempts_left -= 1
        z = int(rng.choice(brain_slices))
        y = int(rng.integers(0, ny - p + 1))
        x = int(rng.integers(0, nx - p + 1))
        window = mask[z, y:y + p, x:x + p]
        if not mask[z, y + p // 2, x + p // 2]:
            continue
        if window.mean() < spec.min_inbrain_fraction:
            continue
        if excl is not None and excl[z, y:y + p, x:x + p].any():
            continue
        patches.append(vol[z, y:y + p, x:x + p])
        origins.append((z, y, x))
    if len(patches) < spec.patches_per_volume:
        raise SamplingError(
            f"could only place {len(patches)} of {spec.patches_per_volume} patches",
            achieved=len(patches),
        )
    stack = np.stack(patches)
    if return_origins:
        return stack, origins
    return stack


def augment_flip(patches, seed, probability=0.5):
    """Mirror each patch left-right independently with the given probability."""
    arr = np.asarray(patches)
    rng = np.random.default_rng(seed)
    flip = rng.random(len(arr)) < probability
    out = arr.copy()
    out[flip] = out[flip, :, ::-1]
    return out


def load_any_volume(path):
    """Read a 3D volume from .rvol, .npy, or (if a reader is installed) NIfTI."""
    from pathlib import Path

    from .volumeio import load_volume

    p = Path(path)
    suffixes = "".join(p.suffixes)
    if suffixes.endswith(".npy"):
        return np.load(p)
    if suffixes.endswith((".nii", ".nii.gz")):
        try:
            import nibabel as nib
        except ImportError as exc:
            raise ImportError(
                "reading NIfTI volumes requires the optional 'nibabel' package"
            ) from exc
        return np.asanyarray(nib.load(str(p)).dataobj)
    arr, _ = load_volume(p)
    return arr
