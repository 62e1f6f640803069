"""Command-line interface.

Subcommands: ``train`` (fit a detector from a YAML run config), ``score``
(patch-score a volume with a checkpoint), ``synth`` (write a phantom
sweep), ``evaluate`` (ROC/AUC of a score map against a truth mask), and
``report`` (run a whole experiment family and emit its tables/plots).

Exit codes: 0 success, 2 usage/config error, 3 numerical divergence,
4 I/O error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import config_hash, load_checkpoint
from .errors import DivergenceError
from .estimators import GanomalyDetector, OneClassSvmDetector, ProgressiveGanomalyDetector
from .experiments import (
    DESK_PHANTOM_SHAPE,
    FULL_PHANTOM_SHAPE,
    ExperimentManifest,
    fingerprint_array,
    export_phantom_sweep,
    make_detector,
    run_fashion,
    run_intensity_test,
    run_reconstruction_quality,
    run_size_test,
    run_wmh_protocol,
    train_phantom_detector,
    write_history_csv,
    write_metric_rows,
    write_roc_points,
    plot_roc,
)
from .ingestion import load_fashion_mnist, sample_patches, PatchSampleSpec
from .metrics import roc_auc
from .scoring import ScoreNormalizer, score_volume
from .volumeio import export_score_map, load_volume

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

DATA_DIR_ENV = "GANDETECT_DATA"

TOP_KEYS = {"method", "data", "train", "seed", "out_dir", "desk_scale"}
DATA_KEYS = {"kind", "path", "label_normal", "patch_size", "patches_per_volume",
             "n_volumes", "shape", "n_slices"}
DATA_KINDS = {"fashion", "phantom", "volumes"}


def _require_keys(mapping, allowed, where):
    unknown = set(mapping) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_run_config(path):
    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ValueError("run config must be a YAML mapping")
    _require_keys(cfg, TOP_KEYS, "run config")
    if "method" not in cfg:
        raise ValueError("run config is missing 'method'")
    if cfg["method"] not in ("ganomaly", "progressive", "svm"):
        raise ValueError(f"unknown method {cfg['method']!r}")
    data = cfg.get("data") or {}
    _require_keys(data, DATA_KEYS, "data section")
    kind = data.get("kind")
    if kind not in DATA_KINDS:
        raise ValueError(f"data.kind must be one of {sorted(DATA_KINDS)}, got {kind!r}")
    train = cfg.get("train") or {}
    template = make_detector(cfg["method"], int(data.get("patch_size", 32) or 32))
    valid_train_keys = set(template.get_params())
    _require_keys(train, valid_train_keys, "train section")
    return cfg


def _load_subject_volumes(path):
    """Subject triplets <id>.rvol, <id>_brainmask.rvol, <id>_annotation.rvol."""
    root = Path(path)
    volumes, annotations, masks, ids = [], [], [], []
    for vol_path in sorted(root.glob("*.rvol")):
        stem = vol_path.stem
        if stem.endswith("_brainmask") or stem.endswith("_annotation"):
            continue
        vol, _ = load_volume(vol_path)
        mask_path = root / f"{stem}_brainmask.rvol"
        ann_path = root / f"{stem}_annotation.rvol"
        if not mask_path.exists():
            raise FileNotFoundError(f"missing brain mask for subject {stem}: {mask_path}")
        mask, _ = load_volume(mask_path)
        ann = None
        if ann_path.exists():
            ann_arr, _ = load_volume(ann_path)
            ann = ann_arr.astype(bool)
        volumes.append(vol.astype(np.float32))
        masks.append(mask.astype(bool))
        annotations.append(ann)
        ids.append(stem)
    if not volumes:
        raise FileNotFoundError(f"no .rvol volumes found under {root}")
    return volumes, annotations, masks, ids


def cmd_train(args):
    cfg = load_run_config(args.config)
    method = cfg["method"]
    data = cfg["data"]
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    desk = bool(args.desk_scale or cfg.get("desk_scale", False))
    out_dir = Path(args.out or cfg.get("out_dir") or "runs/train")
    out_dir.mkdir(parents=True, exist_ok=True)
    overrides = dict(cfg.get("train") or {})
    overrides["seed"] = seed

    manifest = ExperimentManifest(
        experiment=f"train:{method}",
        config={**cfg, "config_hash": config_hash(cfg)},
        seeds={"run": seed},
    )

    if data["kind"] == "fashion":
        path = data.get("path") or os.environ.get(DATA_DIR_ENV)
        if not path:
            raise ValueError(f"data.path not set and ${DATA_DIR_ENV} is empty")
        images = load_fashion_mnist(path, data.get("label_normal", "boots"))
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(images))
        n_train = int(round(0.70 * len(images)))
        n_val = int(round(0.05 * len(images)))
        train_imgs = images[perm[:n_train]]
        val_imgs = images[perm[n_train:n_train + n_val]]
        manifest.dataset_fingerprints["train"] = fingerprint_array(train_imgs)
        if method == "svm":
            det = make_detector("svm", 32, desk, {k: v for k, v in overrides.items()
                                                  if k in ("nu", "gamma")})
            det.fit(np.concatenate([train_imgs, val_imgs]))
        else:
            overrides_no_seed = dict(overrides)
            seed_val = overrides_no_seed.pop("seed")
            det = make_detector(method, 32, desk, overrides_no_seed, seed_val)
            det.fit(train_imgs, val_imgs)
            write_history_csv(out_dir / "history.csv", det.history_)
        ckpt = out_dir / f"{method}.ckpt"
        det.save(ckpt)
    elif data["kind"] == "phantom":
        if method == "svm":
            raise ValueError("phantom patch training supports the GAN methods only")
        patch = int(data.get("patch_size", 16))
        shape_side = data.get("shape")
        shape = tuple([int(shape_side)] * 3) if shape_side else None
        overrides_no_seed = dict(overrides)
        seed_val = overrides_no_seed.pop("seed")
        det, info = train_phantom_detector(
            method, patch, out_dir, seed=seed_val, desk_scale=desk,
            overrides=overrides_no_seed,
            n_volumes=data.get("n_volumes"),
            patches_per_volume=data.get("patches_per_volume"),
            shape=shape,
        )
        manifest.dataset_fingerprints.update(
            {f"volume{i}": f for i, f in enumerate(info["volume_fingerprints"])}
        )
        ckpt = Path(info["checkpoint"])
    else:  # user-supplied volumes
        if method == "svm":
            raise ValueError("volume patch training supports the GAN methods only")
        patch = int(data.get("patch_size", 16))
        volumes, annotations, masks, ids = _load_subject_volumes(data["path"])
        from .ingestion import augment_flip, normalize_percentile

        pools = []
        for i, (vol, ann, mask) in enumerate(zip(volumes, annotations, masks)):
            spec = PatchSampleSpec(
                patches_per_volume=int(data.get("patches_per_volume", 1000)),
                patch_size=patch,
                exclusion_mask=ann,
            )
            pools.append(sample_patches(normalize_percentile(vol, mask), mask, spec,
                                        seed=seed + i))
        patches = augment_flip(np.concatenate(pools), seed=seed + 999)
        rng = np.random.default_rng([seed, 31])
        perm = rng.permutation(len(patches))
        n_val = max(1, int(round(0.2 * len(patches))))
        overrides_no_seed = dict(overrides)
        seed_val = overrides_no_seed.pop("seed")
        det = make_detector(method, patch, desk, overrides_no_seed, seed_val)
        det.fit(patches[perm[n_val:]], patches[perm[:n_val]])
        write_history_csv(out_dir / "history.csv", det.history_)
        ckpt = out_dir / f"{method}_p{patch}.ckpt"
        det.save(ckpt)
        manifest.dataset_fingerprints.update(
            {sid: fingerprint_array(v) for sid, v in zip(ids, volumes)}
        )

    manifest.checkpoints["model"] = str(ckpt)
    manifest.write(out_dir / "manifest.json")
    print(ckpt)
    return EXIT_OK


def _load_detector(ckpt_path):
    blob = load_checkpoint(ckpt_path)
    kind = blob["kind"]
    if kind == "ganomaly":
        return GanomalyDetector.load(ckpt_path)
    if kind == "progressive":
        return ProgressiveGanomalyDetector.load(ckpt_path)
    if kind == "ocsvm":
        return OneClassSvmDetector.load(ckpt_path)
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def _load_grid(path):
    from .ingestion import load_any_volume

    return load_any_volume(path)


def cmd_score(args):
    det = _load_detector(args.checkpoint)
    if isinstance(det, OneClassSvmDetector):
        raise ValueError("volume scoring requires a GAN checkpoint")
    model = det._model()
    if args.patch is not None and int(args.patch) != model.resolution:
        raise ValueError(
            f"requested patch size {args.patch} != checkpoint resolution {model.resolution}"
        )
    volume = _load_grid(args.input).astype(np.float32)
    mask = _load_grid(args.mask).astype(bool) if args.mask else None
    score_mode = args.score_mode or det.score_mode
    smap = score_volume(
        volume, mask, model, patch=model.resolution, stride=args.stride,
        score_mode=score_mode, normalizer=getattr(det, "normalizer_", None),
        batch_size=4096,
    )
    out_dir = Path(args.output_dir)
    volume_id = Path(args.input).stem
    files = export_score_map(out_dir, volume_id, smap, render=not args.no_render)
    manifest = ExperimentManifest(
        experiment="score",
        config={"checkpoint": str(args.checkpoint), "input": str(args.input),
                "stride": args.stride, "score_mode": score_mode},
        seeds={},
        dataset_fingerprints={"input": fingerprint_array(volume)},
        notes={"files": [str(f) for f in files]},
    )
    manifest.write(out_dir / f"{volume_id}_score_manifest.json")
    print(out_dir)
    return EXIT_OK


def cmd_synth(args):
    shape_side = args.shape or (DESK_PHANTOM_SHAPE[0] if args.desk_scale
                                else FULL_PHANTOM_SHAPE[0])
    files = export_phantom_sweep(
        args.sweep, args.output_dir, seed=args.seed,
        shape=(shape_side,) * 3, n_slices=args.slices,
    )
    print(f"{len(files)} files -> {args.output_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    scores = _load_grid(args.scores)
    truth = _load_grid(args.truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError(f"scores shape {scores.shape} != truth shape {truth.shape}")
    if args.mask:
        mask = _load_grid(args.mask).astype(bool)
        if mask.shape != scores.shape:
            raise ValueError(f"mask shape {mask.shape} != scores shape {scores.shape}")
    else:
        print("warning: no mask given, evaluating over the full volume", file=sys.stderr)
        mask = np.ones(scores.shape, dtype=bool)
    curve = roc_auc(scores[mask], truth[mask])
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"method": args.method, "patch_size": args.patch_size or 0,
             "experiment": "evaluate", "parameter": Path(args.scores).stem,
             "metric": "auc", "value": curve.auc}]
    write_metric_rows(out_dir / "metrics.csv", rows)
    write_roc_points(out_dir / "roc.csv", curve)
    plot_roc(out_dir / "roc.png", [(args.method, curve)])
    print(f"auc {curve.auc:.6f}")
    return EXIT_OK


def _fashion_report(args, out_dir, seed):
    data_dir = args.data or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ValueError(f"--data not given and ${DATA_DIR_ENV} is empty")
    methods = args.methods.split(",")
    labels = args.labels.split(",")
    all_rows = []
    table = {}
    for label in labels:
        for method in methods:
            res = run_fashion(data_dir, label, method, out_dir, seed=seed,
                              desk_scale=args.desk_scale)
            all_rows.extend(res["rows"])
            table[(label, method)] = res
    write_metric_rows(out_dir / "fashion_report.csv", all_rows)
    lines = [f"{'pair':24s} {'method':12s} {'acc':>6s} {'sens':>6s} {'prec':>6s} {'f1':>6s}"]
    for (label, method), res in table.items():
        lines.append(
            f"boots vs {label:14s} {method:12s} "
            f"{res['accuracy']:6.1f} {res['sensitivity']:6.1f} "
            f"{res['precision']:6.1f} {res['f1']:6.1f}"
        )
    (out_dir / "fashion_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _disk_report(args, out_dir, seed, family):
    methods = args.methods.split(",")
    patch_sizes = [int(p) for p in args.patch_sizes.split(",")]
    shape_side = args.shape or (DESK_PHANTOM_SHAPE[0] if args.desk_scale
                                else FULL_PHANTOM_SHAPE[0])
    shape = (shape_side,) * 3
    all_rows = []
    pooled_curves = []
    dets = {}
    for patch in patch_sizes:
        for method in methods:
            det, _ = train_phantom_detector(
                method, patch, out_dir / "checkpoints", seed=seed,
                desk_scale=args.desk_scale, shape=shape,
            )
            dets[(method, patch)] = det
            if family == "intensity":
                rows, pooled, _ = run_intensity_test(
                    det, method, patch, out_dir, seed=seed, shape=shape,
                    n_slices=args.slices, export_maps=args.export_maps,
                )
            else:
                rows, pooled, _ = run_size_test(
                    det, method, patch, out_dir, seed=seed, shape=shape,
                    n_slices=args.slices, export_maps=args.export_maps,
                )
            all_rows.extend(rows)
            pooled_curves.append((f"{method} {patch}x{patch}", pooled))
    for patch in patch_sizes:
        pair = {m: dets[(m, patch)] for m in methods if (m, patch) in dets}
        rows, _, _ = run_reconstruction_quality(pair, patch, out_dir, seed=seed, shape=shape)
        all_rows.extend(rows)
    write_metric_rows(out_dir / f"{family}_report.csv", all_rows)
    plot_roc(out_dir / f"{family}_pooled_roc.png", pooled_curves)
    for row in all_rows:
        print(f"{row['method']:12s} p{row['patch_size']:<3d} {row['experiment']:14s} "
              f"{row['parameter']:16s} {row['metric']}={format(row['value'], '.4g')}")
    return EXIT_OK


def _wmh_report(args, out_dir, seed):
    if args.volumes:
        volumes, annotations, masks, ids = _load_subject_volumes(args.volumes)
    else:
        # phantom stand-ins exercise the full pipeline without private data
        from .phantom import make_base_volume, size_sweep

        volumes, annotations, masks = [], [], []
        n = args.stand_in or 3
        side = args.shape or DESK_PHANTOM_SHAPE[0]
        for k in range(n):
            base, mask = make_base_volume(seed=seed + 100 + k, shape=(side,) * 3)
            ph = size_sweep(base, mask, diameters=[5 + (k % 3)], n_slices=5)[0]
            volumes.append(ph.volume)
            annotations.append(ph.anomaly_mask)
            masks.append(mask)
    result = run_wmh_protocol(
        volumes, annotations, masks, args.method, args.patch_size, out_dir,
        seed=seed, desk_scale=args.desk_scale,
    )
    print(f"pooled auc {result['pooled_auc']:.4f}")
    return EXIT_OK


def cmd_report(args):
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    if args.family == "fashion":
        return _fashion_report(args, out_dir, seed)
    if args.family in ("intensity", "size"):
        return _disk_report(args, out_dir, seed, args.family)
    return _wmh_report(args, out_dir, seed)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gandetect",
        description="GAN-based anomaly detection for images and patch-scored volumes",
    )
    parser.add_argument("--workers", type=int, default=None,
                        help="torch intra-op thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a detector from a YAML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="patch-score a volume with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--score-mode", choices=["raw", "modified"], default=None)
    p.add_argument("--no-render", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="write a phantom sweep with ground-truth masks")
    p.add_argument("--sweep", choices=["intensity", "size"], required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=int, default=None)
    p.add_argument("--slices", type=int, default=50)
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="ROC/AUC of a score map against a truth mask")
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--method", default="model")
    p.add_argument("--patch-size", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="run an experiment family end to end")
    p.add_argument("family", choices=["fashion", "intensity", "size", "wmh"])
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--data", default=None, help="fashion IDX directory")
    p.add_argument("--methods", default="svm,ganomaly,progressive")
    p.add_argument("--labels", default="dresses,sandals,sneakers")
    p.add_argument("--patch-sizes", default="16,32")
    p.add_argument("--shape", type=int, default=None)
    p.add_argument("--slices", type=int, default=50)
    p.add_argument("--export-maps", action="store_true")
    p.add_argument("--volumes", default=None, help="subject volume directory (wmh)")
    p.add_argument("--stand-in", type=int, default=None,
                   help="number of phantom stand-in subjects (wmh)")
    p.add_argument("--method", default="ganomaly")
    p.add_argument("--patch-size", type=int, default=16)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.workers:
        import torch

        torch.set_num_threads(args.workers)
    try:
        return args.func(args) or EXIT_OK
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, RuntimeError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
