import numpy as np
import pytest
import yaml

from gandetect.cli import main
from gandetect.experiments import train_phantom_detector
from gandetect.phantom import make_base_volume, size_sweep
from gandetect.volumeio import load_volume, save_volume

TINY_TRAIN = {
    "latent_dim": 8, "base_channels": 16, "batch_size": 16,
    "max_epochs": 2, "plateau_patience": 2,
}


def write_config(path, **overrides):
    cfg = {
        "method": "ganomaly",
        "data": {"kind": "fashion", "path": None, "label_normal": "boots"},
        "train": dict(TINY_TRAIN),
        "seed": 0,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(yaml.safe_dump(cfg))
    return path


# ---- train ----

def test_train_fashion_gan(fashion_corpus, tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml", data={"kind": "fashion",
                                                    "path": str(fashion_corpus),
                                                    "label_normal": "boots"})
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "ganomaly.ckpt").exists()
    assert (out / "history.csv").exists()
    assert (out / "manifest.json").exists()


def test_train_fashion_svm(fashion_corpus, tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml", method="svm",
                       data={"kind": "fashion", "path": str(fashion_corpus)},
                       train={})
    cfg_data = yaml.safe_load(cfg.read_text())
    cfg_data["train"] = {"nu": 0.1}
    cfg.write_text(yaml.safe_dump(cfg_data))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "svm.ckpt").exists()


def test_train_unknown_config_key_exit2(fashion_corpus, tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml",
                       data={"kind": "fashion", "path": str(fashion_corpus)})
    raw = yaml.safe_load(cfg.read_text())
    raw["blatantly_wrong_key"] = 1
    cfg.write_text(yaml.safe_dump(raw))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_unknown_train_key_exit2(fashion_corpus, tmp_path):
    cfg = write_config(tmp_path / "cfg.yaml",
                       data={"kind": "fashion", "path": str(fashion_corpus)},
                       train={"no_such_knob": 3})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_missing_config_exit4(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 4


def test_train_phantom_config(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.yaml",
        data={"kind": "phantom", "patch_size": 16, "n_volumes": 1,
              "patches_per_volume": 60, "shape": 48},
    )
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "ganomaly_p16.ckpt").exists()


# ---- synth ----

def test_synth_writes_sweep(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["synth", "--sweep", "intensity", "--output-dir", str(out),
               "--shape", "48", "--slices", "3", "--seed", "1"])
    assert rc == 0
    rvols = list(out.glob("*.rvol"))
    assert len(rvols) == 22


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        main(["synth", "--sweep", "size", "--output-dir", str(out),
              "--shape", "48", "--slices", "3", "--seed", "2"])
    fa = sorted(a.glob("*.rvol"))
    fb = sorted(b.glob("*.rvol"))
    assert [f.name for f in fa] == [f.name for f in fb]
    for x, y in zip(fa, fb):
        assert x.read_bytes() == y.read_bytes()


# ---- score + evaluate ----

@pytest.fixture(scope="module")
def scored_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("scorerun")
    det, info = train_phantom_detector(
        "ganomaly", 16, root, seed=0, desk_scale=True,
        overrides={"latent_dim": 8, "base_channels": 16, "batch_size": 16,
                   "max_epochs": 2, "plateau_patience": 2},
        n_volumes=1, patches_per_volume=80, shape=(48, 64, 64),
    )
    base, mask = make_base_volume(seed=77, shape=(48, 64, 64))
    ph = size_sweep(base, mask, diameters=[8], n_slices=4)[0]
    save_volume(root / "subject.rvol", ph.volume)
    save_volume(root / "subject_mask.rvol", mask)
    save_volume(root / "subject_truth.rvol", ph.anomaly_mask)
    return root, info["checkpoint"]


def test_score_volume_cli(scored_setup, tmp_path):
    root, ckpt = scored_setup
    out = tmp_path / "maps"
    rc = main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
               "--output-dir", str(out), "--stride", "8", "--no-render"])
    assert rc == 0
    slices = sorted(out.glob("subject_slice*_score.npy"))
    assert len(slices) == 48
    combined, _ = load_volume(out / "subject_scoremap.rvol")
    assert combined.shape == (48, 64, 64)


def test_score_rerun_identical(scored_setup, tmp_path):
    root, ckpt = scored_setup
    outs = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        rc = main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
                   "--output-dir", str(out), "--stride", "8", "--no-render"])
        assert rc == 0
        outs.append(out)
    a = (outs[0] / "subject_scoremap.rvol").read_bytes()
    b = (outs[1] / "subject_scoremap.rvol").read_bytes()
    assert a == b


def test_score_patch_mismatch_exit2(scored_setup, tmp_path):
    root, ckpt = scored_setup
    rc = main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
               "--output-dir", str(tmp_path / "x"), "--patch", "32"])
    assert rc == 2


def test_evaluate_cli(scored_setup, tmp_path):
    root, ckpt = scored_setup
    maps = tmp_path / "maps"
    main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
          "--output-dir", str(maps), "--stride", "8", "--no-render"])
    out = tmp_path / "eval"
    rc = main(["evaluate", "--scores", str(maps / "subject_scoremap.rvol"),
               "--truth", str(root / "subject_truth.rvol"),
               "--mask", str(root / "subject_mask.rvol"),
               "--output-dir", str(out)])
    assert rc == 0
    text = (out / "metrics.csv").read_text()
    assert "auc" in text
    assert (out / "roc.png").exists()


def test_evaluate_missing_mask_warns_but_runs(scored_setup, tmp_path, capsys):
    root, ckpt = scored_setup
    maps = tmp_path / "maps"
    main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
          "--output-dir", str(maps), "--stride", "8", "--no-render"])
    rc = main(["evaluate", "--scores", str(maps / "subject_scoremap.rvol"),
               "--truth", str(root / "subject_truth.rvol"),
               "--output-dir", str(tmp_path / "eval2")])
    assert rc == 0
    assert "warning" in capsys.readouterr().err.lower()


def test_evaluate_single_class_exit2(scored_setup, tmp_path):
    root, _ = scored_setup
    scores = np.zeros((4, 8, 8), dtype=np.float32)
    truth = np.zeros((4, 8, 8), dtype=bool)
    save_volume(tmp_path / "s.rvol", scores)
    save_volume(tmp_path / "t.rvol", truth)
    rc = main(["evaluate", "--scores", str(tmp_path / "s.rvol"),
               "--truth", str(tmp_path / "t.rvol"),
               "--output-dir", str(tmp_path / "eval3")])
    assert rc == 2


def test_evaluate_rerun_byte_identical(scored_setup, tmp_path):
    root, ckpt = scored_setup
    maps = tmp_path / "maps"
    main(["score", "--checkpoint", ckpt, "--input", str(root / "subject.rvol"),
          "--output-dir", str(maps), "--stride", "8", "--no-render"])
    csvs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        rc = main(["evaluate", "--scores", str(maps / "subject_scoremap.rvol"),
                   "--truth", str(root / "subject_truth.rvol"),
                   "--mask", str(root / "subject_mask.rvol"),
                   "--output-dir", str(out)])
        assert rc == 0
        csvs.append((out / "metrics.csv").read_bytes())
    assert csvs[0] == csvs[1]


# ---- report (wmh stand-in smoke) ----

def test_report_wmh_stand_in(tmp_path, monkeypatch):
    import gandetect.experiments as exp

    monkeypatch.setitem(exp.DESK_PRESET, "max_epochs", 2)
    monkeypatch.setitem(exp.DESK_PRESET, "plateau_patience", 2)
    monkeypatch.setitem(exp.DESK_PRESET, "base_channels", 16)
    rc = main(["report", "wmh", "--output-dir", str(tmp_path / "wmh"),
               "--desk-scale", "--stand-in", "2", "--shape", "48",
               "--method", "ganomaly", "--patch-size", "16"])
    assert rc == 0
    assert (tmp_path / "wmh" / "wmh_ganomaly_p16.csv").exists()


def test_usage_error_exit2():
    assert main(["train"]) == 2
    assert main(["definitely-not-a-command"]) == 2
