"""Volume and score-map file I/O.

Volumes travel as raw little-endian C-order arrays (``.rvol``) with a JSON
sidecar describing shape, dtype, and voxel spacing. Score maps are exported
as one lossless float grid per slice plus an 8-bit heatmap render (red =
high score), named ``<volume_id>_slice<k>_score``.
"""

import json
from pathlib import Path

import numpy as np

FORMAT_TAG = "rvol-v1"
HEATMAP_CMAP = "YlOrRd"  # yellow = low, red = high

_DTYPES = {"float32": np.float32, "float64": np.float64, "uint8": np.uint8}


def _paths(path):
    path = Path(path)
    if path.suffix != ".rvol":
        path = path.with_suffix(".rvol")
    return path, path.with_suffix(".json")


def save_volume(path, array, spacing_mm=1.0):
    """Write a 3D array as raw bytes plus a JSON sidecar."""
    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.dtype not in (np.float32, np.float64, np.uint8):
        arr = arr.astype(np.float32)
    raw_path, meta_path = _paths(path)
    meta = {
        "format": FORMAT_TAG,
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "spacing_mm": float(spacing_mm),
        "order": "C",
        "byteorder": "little",
    }
    raw_path.write_bytes(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return raw_path


def load_volume(path):
    """Read an ``.rvol`` volume; returns (array, metadata dict)."""
    raw_path, meta_path = _paths(path)
    if not meta_path.exists():
        raise FileNotFoundError(f"missing sidecar {meta_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"missing volume {raw_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported volume format {meta.get('format')!r}")
    dtype = _DTYPES[meta["dtype"]]
    arr = np.frombuffer(raw_path.read_bytes(), dtype=np.dtype(dtype).newbyteorder("<"))
    arr = arr.reshape(meta["shape"]).astype(dtype)
    return arr, meta


def render_heatmap(path, scores, vmin=None, vmax=None):
    """8-bit heatmap PNG of one score slice."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    arr = np.asarray(scores, dtype=np.float64)
    plt.imsave(path, arr, cmap=HEATMAP_CMAP, vmin=vmin, vmax=vmax)
    return Path(path)


def export_score_map(out_dir, volume_id, score_map, spacing_mm=1.0, render=True):
    """Per-slice float grids + heatmaps, plus the combined 3D map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = np.asarray(score_map.scores)
    written = []
    vmax = float(scores.max()) if scores.size else 1.0
    vmin = float(scores.min()) if scores.size else 0.0
    for k in range(scores.shape[0]):
        npy = out_dir / f"{volume_id}_slice{k:03d}_score.npy"
        np.save(npy, scores[k])
        written.append(npy)
        if render:
            png = out_dir / f"{volume_id}_slice{k:03d}_score.png"
            render_heatmap(png, scores[k], vmin=vmin, vmax=vmax)
            written.append(png)
    combined = save_volume(out_dir / f"{volume_id}_scoremap.rvol",
                           scores.astype(np.float32), spacing_mm)
    written.append(combined)
    if score_map.mask is not None:
        written.append(save_volume(out_dir / f"{volume_id}_mask.rvol",
                                   score_map.mask, spacing_mm))
    return written
