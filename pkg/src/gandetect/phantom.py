"""Synthetic head volumes with parametric disk anomalies.

A base volume is a smooth ellipsoidal head: a bright outer fat shell
(~0.7), a grey-matter band (~0.25), a white-matter core (~0.45), mild
smooth noise inside the head, and an exactly-zero background. Disk
anomalies of a given diameter (mm) and intensity are stamped into a run
of consecutive axial slices, with the exact voxel set recorded as the
ground-truth anomaly mask.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionError

DEFAULT_SHAPE = (256, 256, 256)

FAT_LEVEL = 0.7
GREY_LEVEL = 0.25
WHITE_LEVEL = 0.45
NOISE_AMPLITUDE = 0.02

# ellipsoid semi-axes as fractions of the volume dimensions
HEAD_FRACTION = 0.42
BRAIN_FRACTION = 0.33
WHITE_FRACTION = 0.22


@dataclass(frozen=True)
class DiskSpec:
    diameter_mm: float
    intensity: float
    n_slices: int = 50
    center: tuple | None = None  # (z, y, x) voxel coordinates
    voxel_spacing_mm: float = 1.0

    def __post_init__(self):
        if self.diameter_mm <= 0:
            raise ValueError(f"diameter_mm must be positive, got {self.diameter_mm}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        if self.n_slices < 1:
            raise ValueError("n_slices must be positive")
        if self.voxel_spacing_mm <= 0:
            raise ValueError("voxel spacing must be positive")


@dataclass
class Phantom:
    volume: np.ndarray
    anomaly_mask: np.ndarray
    brain_mask: np.ndarray
    spec: DiskSpec


def _ellipsoid_rho(shape, fraction):
    zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
    cz, cy, cx = [(s - 1) / 2.0 for s in shape]
    rz, ry, rx = [max(fraction * s, 1.0) for s in shape]
    return (
        ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    )


def make_base_volume(seed, shape=DEFAULT_SHAPE):
    """Build a clean head volume and its head-interior mask."""
    rho_head = _ellipsoid_rho(shape, HEAD_FRACTION)
    rho_brain = _ellipsoid_rho(shape, BRAIN_FRACTION)
    rho_white = _ellipsoid_rho(shape, WHITE_FRACTION)

    head = rho_head <= 1.0
    brain = rho_brain <= 1.0
    white = rho_white <= 1.0

    volume = np.zeros(shape, dtype=np.float32)
    volume[head] = FAT_LEVEL
    volume[brain] = GREY_LEVEL
    volume[white] = WHITE_LEVEL

    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.standard_normal(shape), sigma=2.0)
    peak = np.abs(noise).max()
    if peak > 0:
        noise = noise / peak * NOISE_AMPLITUDE
    volume[head] += noise[head].astype(np.float32)
    return volume, head


def insert_disk(volume, brain_mask, spec: DiskSpec) -> Phantom:
    """Stamp a constant-intensity disk into consecutive axial slices.

    The disk footprint is every voxel whose in-plane distance from the
    center is at most diameter/2 (mm); it must sit fully inside the brain
    mask on all covered slices.
    """
    volume = np.asarray(volume)
    brain_mask = np.asarray(brain_mask).astype(bool)
    if volume.ndim != 3 or brain_mask.shape != volume.shape:
        raise DimensionError("volume and brain_mask must be same-shape 3D arrays")

    if spec.center is None:
        coords = np.argwhere(brain_mask)
        center = tuple(int(round(c)) for c in coords.mean(axis=0))
        spec = replace(spec, center=center)
    cz, cy, cx = spec.center

    radius = spec.diameter_mm / 2.0
    s = spec.voxel_spacing_mm
    yy, xx = np.ogrid[: volume.shape[1], : volume.shape[2]]
    footprint = ((yy - cy) * s) ** 2 + ((xx - cx) * s) ** 2 <= radius**2

    z0 = cz - spec.n_slices // 2
    z_slices = range(z0, z0 + spec.n_slices)
    if z_slices[0] < 0 or z_slices[-1] >= volume.shape[0]:
        raise ValueError("disk slice range escapes the volume")

    anomaly = np.zeros_like(brain_mask)
    for z in z_slices:
        anomaly[z][footprint] = True
    if not np.all(brain_mask[anomaly]):
        raise ValueError("disk footprint escapes the brain mask")

    stamped = volume.copy()
    stamped[anomaly] = np.asarray(spec.intensity, dtype=volume.dtype)
    return Phantom(volume=stamped, anomaly_mask=anomaly, brain_mask=brain_mask, spec=spec)


def intensity_sweep(base_volume, brain_mask, diameter_mm=35.0, intensities=None,
                    n_slices=50, voxel_spacing_mm=1.0):
    """Ten phantoms sharing one disk geometry, intensities 0.1 through 1.0."""
    if intensities is None:
        intensities = [round(0.1 * k, 1) for k in range(1, 11)]
    return [
        insert_disk(base_volume, brain_mask, DiskSpec(
            diameter_mm=diameter_mm, intensity=v, n_slices=n_slices,
            voxel_spacing_mm=voxel_spacing_mm,
        ))
        for v in intensities
    ]


def size_sweep(base_volume, brain_mask, intensity=1.0, diameters=None,
               n_slices=50, voxel_spacing_mm=1.0):
    """Ten phantoms with growing disk diameters (default 1 to 10 mm)."""
    if diameters is None:
        diameters = list(range(1, 11))
    return [
        insert_disk(base_volume, brain_mask, DiskSpec(
            diameter_mm=d, intensity=intensity, n_slices=n_slices,
            voxel_spacing_mm=voxel_spacing_mm,
        ))
        for d in diameters
    ]
