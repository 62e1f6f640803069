import math

import numpy as np
import pytest
import torch

from gandetect.errors import DimensionError
from gandetect.networks import GanomalyNets
from gandetect.scoring import (
    ScoreNormalizer,
    anomaly_score,
    anomaly_scores,
    decompose,
    fit_normalizer,
    modified_score,
    normalizer_from_elementwise,
    reassemble,
    score_volume,
)


class IdentityModel:
    """Perfect autoencoder: encode = flatten, generate = reshape."""

    def __init__(self, resolution=4):
        self.resolution = resolution
        self.latent_dim = resolution * resolution

    def encode(self, x):
        x = torch.as_tensor(x, dtype=torch.float32)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None]
        if x.shape[-1] != self.resolution:
            raise DimensionError("resolution mismatch")
        return x.flatten(1)

    def generate(self, z):
        z = torch.as_tensor(z, dtype=torch.float32)
        return z.reshape(-1, 1, self.resolution, self.resolution)

    def eval(self):
        return self


class ShiftModel(IdentityModel):
    """Autoencoder whose reconstruction is offset by a fixed image delta."""

    def __init__(self, delta):
        super().__init__(resolution=delta.shape[-1])
        self.delta = torch.as_tensor(delta, dtype=torch.float32)

    def generate(self, z):
        return super().generate(z) + self.delta


# ---- image-level scores ----

def test_anomaly_score_zero_at_fixed_point():
    model = IdentityModel(4)
    rng = np.random.default_rng(0)
    x = rng.random((4, 4)).astype(np.float32)
    assert anomaly_score(x, model) == 0.0


def test_anomaly_score_deterministic():
    model = ShiftModel(np.full((4, 4), 0.25, dtype=np.float32))
    rng = np.random.default_rng(1)
    x = rng.random((4, 4)).astype(np.float32)
    assert anomaly_score(x, model) == anomaly_score(x, model)


def test_anomaly_scores_batch_shape():
    model = IdentityModel(4)
    imgs = np.random.default_rng(2).random((7, 4, 4)).astype(np.float32)
    s = anomaly_scores(model, imgs)
    assert s.shape == (7,)
    assert np.all(s == 0.0)


def test_trained_model_ranks_noise_above_training_data():
    rng = np.random.default_rng(3)
    # smooth dark training images vs white-noise outliers
    base = rng.random((96, 1, 1)) * 0.1
    train = (np.zeros((96, 8, 8)) + base).astype(np.float32)
    noise = rng.random((32, 8, 8)).astype(np.float32)
    nets = GanomalyNets.build(8, latent_dim=8, base_channels=16, seed=0)
    from gandetect.training import TrainConfig, fit_fixed

    cfg = TrainConfig(batch_size=16, latent_dim=8, base_channels=16,
                      max_epochs=25, plateau_patience=25, seed=0)
    fit_fixed(nets, train, train[:16], cfg)
    s_train = anomaly_scores(nets, train).mean()
    s_noise = anomaly_scores(nets, noise).mean()
    assert s_noise > s_train


# ---- normalizer ----

def test_normalizer_from_elementwise_hand_case():
    mat = np.array([[1.0], [2.0], [3.0]])
    norm = normalizer_from_elementwise(mat)
    assert norm.median[0] == 2.0
    assert norm.mad[0] == 1.0


def test_fit_normalizer_degenerate_identical_losses():
    delta = np.full((4, 4), 0.5, dtype=np.float32)
    model = ShiftModel(delta)
    # image values exactly representable so the shift survives float roundtrips
    imgs = (np.random.default_rng(4).integers(0, 2, (5, 4, 4)) * 0.5).astype(np.float32)
    with pytest.warns(UserWarning):
        norm = fit_normalizer(imgs, model)
    assert np.allclose(norm.median, 0.5)
    assert np.all(norm.mad == 0.0)


def test_fit_normalizer_empty_stream():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 4, 4), dtype=np.float32), IdentityModel(4))


def test_modified_score_centering():
    delta = np.full((4, 4), 0.3, dtype=np.float32)
    model = ShiftModel(delta)
    norm = ScoreNormalizer(median=np.full(16, 0.3), mad=np.full(16, 0.1))
    x = np.random.default_rng(5).random((4, 4)).astype(np.float32)
    assert abs(modified_score(x, model, norm)) < 1e-6


def test_modified_score_unit_deviation():
    delta = np.full((4, 4), 0.4, dtype=np.float32)
    model = ShiftModel(delta)
    norm = ScoreNormalizer(median=np.full(16, 0.3), mad=np.full(16, 0.1))
    x = np.random.default_rng(6).random((4, 4)).astype(np.float32)
    assert math.isclose(modified_score(x, model, norm), 1.0, rel_tol=1e-5)


def test_modified_score_mad_zero_floor_and_warning():
    delta = np.full((4, 4), 0.2, dtype=np.float32)
    model = ShiftModel(delta)
    norm = ScoreNormalizer(median=np.full(16, 0.1), mad=np.zeros(16))
    x = np.random.default_rng(7).random((4, 4)).astype(np.float32)
    with pytest.warns(UserWarning):
        value = modified_score(x, model, norm)
    assert math.isfinite(value)


def test_modified_score_invariant_under_joint_shift():
    rng = np.random.default_rng(8)
    mat = rng.random((20, 6))
    test_loss = rng.random(6)
    shift = 3.7
    n1 = normalizer_from_elementwise(mat)
    n2 = normalizer_from_elementwise(mat + shift)
    s1 = np.mean((test_loss - n1.median) / np.maximum(n1.mad, 1e-8))
    s2 = np.mean((test_loss + shift - n2.median) / np.maximum(n2.mad, 1e-8))
    assert math.isclose(s1, s2, rel_tol=1e-9)


# ---- patch decompose / reassemble ----

def test_decompose_32_16_4():
    patches = decompose(np.zeros((32, 32)), 16, 4)
    assert len(patches) == 25


def test_decompose_256_16_4():
    patches = decompose(np.zeros((256, 256)), 16, 4)
    assert len(patches) == 3721


def test_decompose_patch_equals_image():
    patches = decompose(np.zeros((16, 16)), 16, 4)
    assert len(patches) == 1
    assert patches[0][1] == (0, 0)


def test_decompose_patch_too_large():
    with pytest.raises(ValueError):
        decompose(np.zeros((8, 8)), 16, 4)


def test_decompose_trailing_edge_origin_appended():
    patches = decompose(np.zeros((30, 30)), 16, 4)
    origins = sorted({o[0] for _, o in patches})
    assert origins == [0, 4, 8, 12, 14]


def test_decompose_count_formula_randomized():
    rng = np.random.default_rng(9)
    for _ in range(20):
        dim = int(rng.integers(16, 80))
        patch = int(rng.integers(4, dim + 1))
        stride = int(rng.integers(1, 9))
        patches = decompose(np.zeros((dim, dim)), patch, stride)
        per_dim = (dim - patch) // stride + 1
        if (dim - patch) % stride != 0:
            per_dim += 1
        assert len(patches) == per_dim**2


def test_decompose_patch_contents_align():
    rng = np.random.default_rng(10)
    img = rng.random((20, 20))
    for p, (r, c) in decompose(img, 8, 4):
        assert np.array_equal(p, img[r:r + 8, c:c + 8])


def test_reassemble_constant_scores():
    img_shape = (32, 32)
    patches = decompose(np.zeros(img_shape), 16, 4)
    scored = [(0.7, origin) for _, origin in patches]
    smap = reassemble(scored, 16, img_shape)
    assert np.allclose(smap.scores, 0.7)
    assert np.all(smap.coverage >= 1)


def test_reassemble_single_patch():
    smap = reassemble([(2.5, (4, 4))], 8, (16, 16))
    assert np.all(smap.scores[4:12, 4:12] == 2.5)
    assert np.all(smap.coverage[4:12, 4:12] == 1)
    assert np.all(smap.scores[:4, :] == 0.0)
    assert np.all(smap.coverage[:4, :] == 0)


def reassemble_oracle(patch_scores, patch, shape):
    acc = np.zeros(shape)
    cov = np.zeros(shape, dtype=int)
    for score, (r, c) in patch_scores:
        acc[r:r + patch, c:c + patch] += score
        cov[r:r + patch, c:c + patch] += 1
    out = np.zeros(shape)
    np.divide(acc, cov, out=out, where=cov > 0)
    return out, cov


def test_reassemble_matches_accumulate_divide_oracle():
    scored = [(0.0, (0, 0)), (1.0, (4, 4))]
    smap = reassemble(scored, 8, (12, 12))
    oracle, cov = reassemble_oracle(scored, 8, (12, 12))
    assert np.array_equal(smap.scores, oracle)
    assert np.array_equal(smap.coverage, cov)
    assert np.all(smap.scores[4:8, 4:8] == 0.5)


def test_reassemble_random_matches_oracle_bitwise():
    rng = np.random.default_rng(11)
    img = rng.random((40, 40))
    scored = [(float(rng.random()), origin) for _, origin in decompose(img, 16, 4)]
    smap = reassemble(scored, 16, (40, 40))
    oracle, cov = reassemble_oracle(scored, 16, (40, 40))
    assert np.array_equal(smap.scores, oracle)
    assert np.array_equal(smap.coverage, cov)


def test_reassemble_permutation_invariant():
    rng = np.random.default_rng(12)
    scored = [(float(rng.random()), origin) for _, origin in decompose(np.zeros((24, 24)), 8, 4)]
    a = reassemble(scored, 8, (24, 24))
    b = reassemble(list(reversed(scored)), 8, (24, 24))
    assert np.array_equal(a.scores, b.scores)


def test_reassemble_out_of_bounds_origin():
    with pytest.raises(ValueError):
        reassemble([(1.0, (10, 0))], 8, (16, 16))


def test_max_score_map_dominates_image():
    rng = np.random.default_rng(13)
    img = rng.random((24, 24))
    scored = [(float(p.max()), origin) for p, origin in decompose(img, 8, 4)]
    smap = reassemble(scored, 8, (24, 24))
    assert np.all(smap.scores >= img - 1e-12)


# ---- volume scoring ----

def test_score_volume_identical_slices():
    model = ShiftModel(np.full((4, 4), 0.1, dtype=np.float32))
    rng = np.random.default_rng(14)
    sl = rng.random((8, 8)).astype(np.float32)
    vol = np.stack([sl] * 5)
    smap = score_volume(vol, None, model, patch=4, stride=2)
    assert smap.scores.shape == vol.shape
    for z in range(1, 5):
        assert np.array_equal(smap.scores[z], smap.scores[0])


def test_score_volume_zero_for_perfect_model():
    model = IdentityModel(4)
    vol = np.zeros((3, 8, 8), dtype=np.float32)
    smap = score_volume(vol, None, model, patch=4, stride=2)
    assert np.allclose(smap.scores, 0.0)


def test_score_volume_carries_mask():
    model = IdentityModel(4)
    vol = np.zeros((2, 8, 8), dtype=np.float32)
    mask = np.zeros((2, 8, 8), dtype=bool)
    mask[:, 2:6, 2:6] = True
    smap = score_volume(vol, mask, model, patch=4, stride=2)
    assert smap.mask is not None
    assert np.array_equal(smap.mask, mask)


def test_score_volume_resolution_mismatch():
    model = IdentityModel(4)
    vol = np.zeros((2, 8, 8), dtype=np.float32)
    with pytest.raises(DimensionError):
        score_volume(vol, None, model, patch=8, stride=2)
