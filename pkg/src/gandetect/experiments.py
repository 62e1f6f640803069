"""Scripted experiment families: image-level detection on a fashion corpus,
synthetic disk intensity/size benchmarks on head phantoms, reconstruction
quality, and the lesion-scoring protocol on user-supplied volumes.

Every run writes metric rows in a fixed CSV schema
(method, patch_size, experiment, parameter, metric, value), ROC point lists
and plots where applicable, and a JSON manifest tying the numbers to
seeds, dataset fingerprints, and checkpoints.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .estimators import GanomalyDetector, OneClassSvmDetector, ProgressiveGanomalyDetector
from .ingestion import (
    FASHION_LABELS,
    PatchSampleSpec,
    SplitPlan,
    augment_flip,
    load_fashion_mnist,
    make_splits,
    normalize_percentile,
    sample_patches,
)
from .metrics import classify_at_threshold, roc_auc, ssim, summary_metrics
from .phantom import intensity_sweep, make_base_volume, size_sweep
from .scoring import score_volume
from .volumeio import export_score_map, save_volume

METRIC_FIELDS = ["method", "patch_size", "experiment", "parameter", "metric", "value"]

GAN_METHODS = ("ganomaly", "progressive")
ALL_METHODS = ("svm",) + GAN_METHODS

# paper-scale defaults; desk scale shrinks the model and the schedule so a
# full experiment family runs on a workstation in minutes
FULL_PRESET = {
    "base_channels": 256,
    "batch_size": 128,
    "max_epochs": 500,
    "plateau_patience": 10,
    "critic_steps": 5,
    "alpha_fade_iterations": 750_000,
}
DESK_PRESET = {
    "base_channels": 32,
    "batch_size": 64,
    "max_epochs": 20,
    "plateau_patience": 4,
    "critic_steps": 2,
    "alpha_fade_iterations": 400,
}
DESK_PHANTOM_SHAPE = (80, 80, 80)
FULL_PHANTOM_SHAPE = (256, 256, 256)


def _utcnow():
    return datetime.now(timezone.utc).isoformat()


def fingerprint_array(arr):
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def format_value(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.10g}"
    return str(v)


def write_metric_rows(path, rows):
    """Deterministically formatted metrics CSV (fixed schema and float format)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(METRIC_FIELDS)]
    for row in rows:
        lines.append(",".join(format_value(row[k]) for k in METRIC_FIELDS))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_history_csv(path, history):
    """Per-epoch training log."""
    fields = ["epoch", "resolution", "alpha", "l_adv", "l_con", "l_enc",
              "l_total", "critic_loss", "bce", "val_loss"]
    lines = [",".join(fields)]
    for rec in history:
        lines.append(",".join(format_value(getattr(rec, f)) for f in fields))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_roc_points(path, curve):
    lines = ["fpr,tpr,threshold"]
    for f, t, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
        lines.append(f"{f:.10g},{t:.10g},{format_value(float(thr))}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def plot_roc(path, labelled_curves):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for label, curve in labelled_curves:
        ax.plot(curve.fpr, curve.tpr, label=f"{label} (AUC {curve.auc:.2f})")
    ax.plot([0, 1], [0, 1], "b--", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


@dataclass
class ExperimentManifest:
    experiment: str
    config: dict
    seeds: dict
    dataset_fingerprints: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    metric_files: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    started: str = field(default_factory=_utcnow)
    finished: str = ""

    def write(self, path):
        self.finished = _utcnow()
        blob = asdict(self)
        blob["metric_files"] = [str(p) for p in blob["metric_files"]]
        Path(path).write_text(json.dumps(blob, indent=1, sort_keys=True, default=str) + "\n")
        return Path(path)


def gan_params(method, resolution, desk_scale=False, overrides=None, seed=0):
    """Estimator parameters for one GAN method at one working resolution."""
    preset = dict(DESK_PRESET if desk_scale else FULL_PRESET)
    preset.update(overrides or {})
    common = dict(
        latent_dim=preset.pop("latent_dim", 100),
        base_channels=preset.pop("base_channels"),
        batch_size=preset.pop("batch_size"),
        max_epochs=preset.pop("max_epochs"),
        plateau_patience=preset.pop("plateau_patience"),
        seed=seed,
    )
    critic_steps = preset.pop("critic_steps")
    fade = preset.pop("alpha_fade_iterations")
    common.update(preset)
    if method == "ganomaly":
        return dict(resolution=resolution, **common)
    if method == "progressive":
        return dict(max_resolution=resolution, critic_steps=critic_steps,
                    alpha_fade_iterations=fade, **common)
    raise ValueError(f"unknown GAN method {method!r}")


def make_detector(method, resolution, desk_scale=False, overrides=None, seed=0):
    if method == "svm":
        params = {"nu": 0.1, "gamma": "auto"}
        params.update(overrides or {})
        return OneClassSvmDetector(**params)
    if method == "ganomaly":
        return GanomalyDetector(**gan_params(method, resolution, desk_scale, overrides, seed))
    if method == "progressive":
        return ProgressiveGanomalyDetector(
            **gan_params(method, resolution, desk_scale, overrides, seed)
        )
    raise ValueError(f"unknown method {method!r}")


def f1_max_threshold(scores, labels):
    """Threshold maximizing F1 over the candidate set of observed scores."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    best_t, best_f1 = math.inf, -1.0
    for t in np.unique(scores):
        m = summary_metrics(classify_at_threshold(scores, labels, t))
        if not math.isnan(m.f1) and m.f1 > best_f1:
            best_f1, best_t = m.f1, float(t)
    return best_t


# ---------------------------------------------------------------------------
# fashion corpus experiment
# ---------------------------------------------------------------------------

def run_fashion(data_dir, label_anomalous, method, out_dir, seed=0,
                desk_scale=False, overrides=None, plan=None):
    """Train on the normal class (boots), threshold on the test-validation
    group, and report image-level accuracy/sensitivity/precision/F1."""
    if method not in ALL_METHODS:
        raise ValueError(f"method must be one of {ALL_METHODS}, got {method!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    normals = load_fashion_mnist(data_dir, "boots")
    pool = load_fashion_mnist(data_dir, label_anomalous)
    plan = plan or SplitPlan()
    splits = make_splits(normals, plan, pool, seed=seed)

    manifest = ExperimentManifest(
        experiment=f"fashion:{method}:boots-vs-{label_anomalous}",
        config={"method": method, "label_anomalous": label_anomalous,
                "desk_scale": desk_scale, "overrides": overrides or {}},
        seeds={"split": seed, "train": seed},
        dataset_fingerprints={
            "train": fingerprint_array(splits.train),
            "test": fingerprint_array(splits.test_images),
        },
    )

    if method == "svm":
        # the baseline trains on the full 80% (train + both validation groups)
        train = np.concatenate([splits.train, splits.train_val, splits.test_val])
        det = make_detector(method, 32, desk_scale, overrides, seed)
        det.fit(train)
        threshold = 0.0  # native hypersphere boundary
        scores = det.anomaly_scores(splits.test_images)
    else:
        det = make_detector(method, 32, desk_scale, overrides, seed)
        det.fit(splits.train, splits.train_val)
        ckpt = out_dir / f"{method}_boots.ckpt"
        det.save(ckpt)
        manifest.checkpoints["model"] = str(ckpt)
        write_history_csv(out_dir / f"{method}_boots_history.csv", det.history_)
        # calibration anomalies disjoint from the sampled test anomalies
        rng = np.random.default_rng([seed, 17])
        remaining = np.setdiff1d(np.arange(len(pool)), splits.anomalous_indices)
        cal_idx = rng.choice(remaining, size=len(splits.test_val), replace=False)
        cal_images = np.concatenate([splits.test_val, pool[cal_idx]])
        cal_labels = np.concatenate([
            np.zeros(len(splits.test_val)), np.ones(len(cal_idx)),
        ])
        threshold = f1_max_threshold(det.anomaly_scores(cal_images), cal_labels)
        det.set_threshold(threshold)
        scores = det.anomaly_scores(splits.test_images)

    counts = classify_at_threshold(scores, splits.test_labels, threshold)
    summary = summary_metrics(counts)
    curve = roc_auc(scores, splits.test_labels)

    rows = []
    for name, value in [("accuracy", summary.accuracy), ("sensitivity", summary.sensitivity),
                        ("precision", summary.precision), ("f1", summary.f1),
                        ("auc", curve.auc), ("threshold", float(threshold))]:
        rows.append({"method": method, "patch_size": 32, "experiment": "fashion",
                     "parameter": label_anomalous, "metric": name, "value": value})
    csv_path = write_metric_rows(out_dir / f"fashion_{method}_{label_anomalous}.csv", rows)
    manifest.metric_files.append(csv_path)
    manifest.write(out_dir / f"fashion_{method}_{label_anomalous}_manifest.json")
    return {
        "method": method, "label_anomalous": label_anomalous,
        "accuracy": summary.accuracy, "sensitivity": summary.sensitivity,
        "precision": summary.precision, "f1": summary.f1, "auc": curve.auc,
        "threshold": threshold, "rows": rows,
    }


# ---------------------------------------------------------------------------
# phantom training + disk benchmarks
# ---------------------------------------------------------------------------

def build_phantom_patch_pool(patch_size, n_volumes=8, patches_per_volume=2000,
                             shape=DESK_PHANTOM_SHAPE, seed=0):
    """Normal patches sampled from synthetic head volumes."""
    pools = []
    fingerprints = []
    for k in range(n_volumes):
        volume, mask = make_base_volume(seed=seed + k, shape=shape)
        spec = PatchSampleSpec(patches_per_volume=patches_per_volume, patch_size=patch_size)
        pools.append(sample_patches(volume, mask, spec, seed=seed + 10_000 + k))
        fingerprints.append(fingerprint_array(volume))
    patches = np.concatenate(pools)
    return patches, fingerprints


def train_phantom_detector(method, patch_size, out_dir, seed=0, desk_scale=False,
                           overrides=None, n_volumes=None, patches_per_volume=None,
                           shape=None):
    """Fit one GAN detector on normal phantom patches; writes a checkpoint
    and the per-epoch history CSV."""
    if method not in GAN_METHODS:
        raise ValueError(f"phantom training supports {GAN_METHODS}, got {method!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = shape or (DESK_PHANTOM_SHAPE if desk_scale else FULL_PHANTOM_SHAPE)
    n_volumes = n_volumes or (4 if desk_scale else 8)
    patches_per_volume = patches_per_volume or (1000 if desk_scale else 2000)

    patches, fingerprints = build_phantom_patch_pool(
        patch_size, n_volumes, patches_per_volume, shape, seed
    )
    rng = np.random.default_rng([seed, 23])
    perm = rng.permutation(len(patches))
    n_val = max(1, int(round(0.2 * len(patches))))
    val, train = patches[perm[:n_val]], patches[perm[n_val:]]

    overrides = dict(overrides or {})
    if not desk_scale:
        overrides.setdefault("epoch_train_samples", 4200)
        overrides.setdefault("epoch_val_samples", 300)
        overrides.setdefault("convergence", "moving-average")
    det = make_detector(method, patch_size, desk_scale, overrides, seed)
    det.fit(train, val)
    ckpt = out_dir / f"{method}_p{patch_size}.ckpt"
    det.save(ckpt)
    write_history_csv(out_dir / f"{method}_p{patch_size}_history.csv", det.history_)
    info = {
        "checkpoint": str(ckpt),
        "train_fingerprint": fingerprint_array(train),
        "volume_fingerprints": fingerprints,
        "shape": list(shape),
        "n_volumes": n_volumes,
        "patches_per_volume": patches_per_volume,
    }
    return det, info


def detector_score_volume(det, volume, mask, stride=4, batch_size=4096):
    model = det._model()
    return score_volume(volume, mask, model, patch=model.resolution, stride=stride,
                        score_mode=det.score_mode,
                        normalizer=getattr(det, "normalizer_", None),
                        batch_size=batch_size)


def masked_auc(score_map, anomaly_mask):
    """In-brain AUC: positives are anomaly voxels, negatives are the other
    in-mask voxels; background is dropped before ranking."""
    brain = score_map.mask
    if brain is None:
        brain = np.ones_like(anomaly_mask, dtype=bool)
    return roc_auc(score_map.scores[brain], anomaly_mask[brain])


def _disk_benchmark(det, method, patch_size, phantoms, parameters, experiment,
                    out_dir, stride, pooled_filter=None, export_first=False):
    rows = []
    pooled_scores, pooled_labels = [], []
    for param, ph in zip(parameters, phantoms):
        smap = detector_score_volume(det, ph.volume, ph.brain_mask, stride=stride)
        curve = masked_auc(smap, ph.anomaly_mask)
        rows.append({"method": method, "patch_size": patch_size,
                     "experiment": experiment, "parameter": param,
                     "metric": "auc", "value": curve.auc})
        if pooled_filter is None or pooled_filter(param):
            pooled_scores.append(smap.scores[ph.brain_mask])
            pooled_labels.append(ph.anomaly_mask[ph.brain_mask])
        if export_first and param == parameters[0]:
            export_score_map(Path(out_dir) / "scoremaps", f"{experiment}_{method}_p{patch_size}",
                             smap, render=True)
    pooled = roc_auc(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
    rows.append({"method": method, "patch_size": patch_size, "experiment": experiment,
                 "parameter": "pooled", "metric": "auc", "value": pooled.auc})
    return rows, pooled


def run_intensity_test(det, method, patch_size, out_dir, seed=0,
                       shape=DESK_PHANTOM_SHAPE, n_slices=50, diameter_mm=35.0,
                       stride=4, export_maps=False):
    """AUC per disk intensity 0.1..1.0 at fixed 35 mm diameter, plus the
    pooled ROC over all ten phantoms."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base, mask = make_base_volume(seed=seed + 1000, shape=shape)
    phantoms = intensity_sweep(base, mask, diameter_mm=diameter_mm, n_slices=n_slices)
    params = [f"{ph.spec.intensity:.1f}" for ph in phantoms]
    rows, pooled = _disk_benchmark(det, method, patch_size, phantoms, params,
                                   "intensity", out_dir, stride,
                                   export_first=export_maps)
    csv_path = write_metric_rows(out_dir / f"intensity_{method}_p{patch_size}.csv", rows)
    write_roc_points(out_dir / f"intensity_{method}_p{patch_size}_roc.csv", pooled)
    plot_roc(out_dir / f"intensity_{method}_p{patch_size}_roc.png",
             [(f"{method} {patch_size}x{patch_size}", pooled)])
    return rows, pooled, csv_path


def run_size_test(det, method, patch_size, out_dir, seed=0,
                  shape=DESK_PHANTOM_SHAPE, n_slices=50, intensity=1.0,
                  stride=4, export_maps=False):
    """AUC per disk diameter 1..10 mm at intensity 1.0; the pooled ROC uses
    only 1..7 mm (larger disks are detected perfectly by every method)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base, mask = make_base_volume(seed=seed + 2000, shape=shape)
    phantoms = size_sweep(base, mask, intensity=intensity, n_slices=n_slices)
    params = [str(int(ph.spec.diameter_mm)) for ph in phantoms]
    rows, pooled = _disk_benchmark(det, method, patch_size, phantoms, params,
                                   "size", out_dir, stride,
                                   pooled_filter=lambda p: int(p) <= 7,
                                   export_first=export_maps)
    rows[-1]["parameter"] = "pooled-1to7"
    csv_path = write_metric_rows(out_dir / f"size_{method}_p{patch_size}.csv", rows)
    write_roc_points(out_dir / f"size_{method}_p{patch_size}_roc.csv", pooled)
    plot_roc(out_dir / f"size_{method}_p{patch_size}_roc.png",
             [(f"{method} {patch_size}x{patch_size} (1-7mm)", pooled)])
    return rows, pooled, csv_path


def run_reconstruction_quality(dets, patch_size, out_dir, seed=0,
                               shape=DESK_PHANTOM_SHAPE, n_patches=256):
    """Mean SSIM between held-out normal patches and their reconstructions,
    one value per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volume, mask = make_base_volume(seed=seed + 3000, shape=shape)
    spec = PatchSampleSpec(patches_per_volume=n_patches, patch_size=patch_size)
    patches = sample_patches(volume, mask, spec, seed=seed + 3001)
    rows = []
    values = {}
    for method, det in dets.items():
        recon = det.reconstruct(patches)
        ssims = [ssim(p.astype(np.float64), r.astype(np.float64))
                 for p, r in zip(patches, recon)]
        values[method] = float(np.mean(ssims))
        rows.append({"method": method, "patch_size": patch_size,
                     "experiment": "reconstruction", "parameter": "heldout-patches",
                     "metric": "ssim", "value": values[method]})
    csv_path = write_metric_rows(out_dir / f"reconstruction_p{patch_size}.csv", rows)
    return rows, values, csv_path


# ---------------------------------------------------------------------------
# lesion protocol on user-supplied volumes
# ---------------------------------------------------------------------------

def run_wmh_protocol(volumes, annotations, brain_masks, method, patch_size,
                     out_dir, seed=0, desk_scale=False, overrides=None,
                     train_fraction=0.75, patches_per_volume=None, stride=4):
    """Train on lesion-free patches of the least-affected subjects and score
    the held-out most-affected subjects with a stride-4 heatmap.

    Returns per-volume and pooled masked AUCs. Requires annotations; the
    training patches are re-verified to contain zero annotated voxels.
    """
    if annotations is None or any(a is None for a in annotations):
        raise ValueError("annotation masks are required for the lesion protocol")
    if not (len(volumes) == len(annotations) == len(brain_masks)):
        raise ValueError("volumes, annotations and brain_masks must align")
    if len(volumes) < 2:
        raise ValueError("need at least two subjects (train and test)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    normalized = [normalize_percentile(v, m) for v, m in zip(volumes, brain_masks)]
    burden = np.array([int(np.asarray(a).sum()) for a in annotations])
    order = np.argsort(burden, kind="stable")
    n_train = max(1, int(round(train_fraction * len(volumes))))
    train_ids = list(order[:n_train])
    test_ids = list(order[n_train:]) or [int(order[-1])]

    patches_per_volume = patches_per_volume or (250 if desk_scale else 1000)
    pools = []
    for i in train_ids:
        spec = PatchSampleSpec(
            patches_per_volume=patches_per_volume, patch_size=patch_size,
            exclusion_mask=np.asarray(annotations[i]).astype(bool),
        )
        pools.append(sample_patches(normalized[i], brain_masks[i], spec,
                                    seed=seed + 40_000 + i))
    patches = np.concatenate(pools)
    patches = augment_flip(patches, seed=seed + 41_000)

    # hard re-verification: no annotated voxels leaked into training patches
    leaked = 0
    for i, pool in zip(train_ids, pools):
        ann = np.asarray(annotations[i]).astype(bool)
        spec = PatchSampleSpec(
            patches_per_volume=patches_per_volume, patch_size=patch_size,
            exclusion_mask=ann,
        )
        _, origins = sample_patches(normalized[i], brain_masks[i], spec,
                                    seed=seed + 40_000 + i, return_origins=True)
        for (z, y, x) in origins:
            leaked += int(ann[z, y:y + patch_size, x:x + patch_size].sum())
    if leaked:
        raise RuntimeError(f"training patches overlap {leaked} annotated voxels")

    rng = np.random.default_rng([seed, 29])
    perm = rng.permutation(len(patches))
    n_val = max(1, int(round(0.2 * len(patches))))
    val, train = patches[perm[:n_val]], patches[perm[n_val:]]

    det = make_detector(method, patch_size, desk_scale, overrides, seed)
    det.fit(train, val)
    ckpt = out_dir / f"wmh_{method}_p{patch_size}.ckpt"
    det.save(ckpt)

    rows = []
    pooled_scores, pooled_labels = [], []
    curves = []
    for i in test_ids:
        ann = np.asarray(annotations[i]).astype(bool)
        smap = detector_score_volume(det, normalized[i], brain_masks[i], stride=stride)
        curve = masked_auc(smap, ann)
        curves.append((f"subject{i}", curve))
        rows.append({"method": method, "patch_size": patch_size, "experiment": "wmh",
                     "parameter": f"subject{i}", "metric": "auc", "value": curve.auc})
        pooled_scores.append(smap.scores[brain_masks[i]])
        pooled_labels.append(ann[brain_masks[i]])
        export_score_map(out_dir / "scoremaps", f"wmh_subject{i}_{method}_p{patch_size}",
                         smap, render=True)
    pooled = roc_auc(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
    rows.append({"method": method, "patch_size": patch_size, "experiment": "wmh",
                 "parameter": "pooled", "metric": "auc", "value": pooled.auc})
    csv_path = write_metric_rows(out_dir / f"wmh_{method}_p{patch_size}.csv", rows)
    write_roc_points(out_dir / f"wmh_{method}_p{patch_size}_roc.csv", pooled)
    plot_roc(out_dir / f"wmh_{method}_p{patch_size}_roc.png",
             curves + [("pooled", pooled)])

    manifest = ExperimentManifest(
        experiment=f"wmh:{method}:p{patch_size}",
        config={"method": method, "patch_size": patch_size, "desk_scale": desk_scale,
                "train_fraction": train_fraction,
                "patches_per_volume": patches_per_volume},
        seeds={"run": seed},
        dataset_fingerprints={f"subject{i}": fingerprint_array(np.asarray(volumes[i]))
                              for i in range(len(volumes))},
        checkpoints={"model": str(ckpt)},
        metric_files=[csv_path],
        notes={"train_subjects": [int(i) for i in train_ids],
               "test_subjects": [int(i) for i in test_ids],
               "annotated_voxels_in_training_patches": 0},
    )
    manifest.write(out_dir / f"wmh_{method}_p{patch_size}_manifest.json")
    return {"rows": rows, "pooled_auc": pooled.auc, "per_volume": rows[:-1],
            "checkpoint": str(ckpt), "train_subjects": train_ids,
            "test_subjects": test_ids}


def export_phantom_sweep(kind, out_dir, seed=0, shape=FULL_PHANTOM_SHAPE, n_slices=50):
    """Write the ten-phantom sweep (volumes + anomaly masks) as rvol files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base, mask = make_base_volume(seed=seed, shape=shape)
    if kind == "intensity":
        phantoms = intensity_sweep(base, mask, n_slices=n_slices)
        tags = [f"intensity{ph.spec.intensity:.1f}" for ph in phantoms]
    elif kind == "size":
        phantoms = size_sweep(base, mask, n_slices=n_slices)
        tags = [f"size{int(ph.spec.diameter_mm):02d}mm" for ph in phantoms]
    else:
        raise ValueError(f"sweep kind must be 'intensity' or 'size', got {kind!r}")
    files = []
    files.append(save_volume(out_dir / "base.rvol", base))
    files.append(save_volume(out_dir / "brain_mask.rvol", mask))
    for tag, ph in zip(tags, phantoms):
        files.append(save_volume(out_dir / f"{tag}.rvol", ph.volume))
        files.append(save_volume(out_dir / f"{tag}_anomaly.rvol", ph.anomaly_mask))
    manifest = ExperimentManifest(
        experiment=f"synth:{kind}",
        config={"kind": kind, "shape": list(shape), "n_slices": n_slices},
        seeds={"base": seed},
        dataset_fingerprints={"base": fingerprint_array(base)},
        notes={"files": [str(f) for f in files]},
    )
    manifest.write(out_dir / "manifest.json")
    return files
