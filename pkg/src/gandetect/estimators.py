"""Estimator-style detectors.

All detectors follow the scikit-learn outlier-detection surface: ``fit`` on
normal data only, ``anomaly_scores`` (higher = more anomalous, the domain
convention), ``score_samples`` (negated, the sklearn convention),
``decision_function`` (positive = inlier relative to the fitted threshold),
and ``predict`` (+1 inlier / -1 outlier). Parameters follow the
get_params/set_params contract, so the detectors compose with pipelines,
grid search, and clone().
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.svm import OneClassSVM
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimensionError
from .losses import LossWeights
from .networks import GanomalyNets, ProgressiveStack
from .scoring import ScoreNormalizer, anomaly_scores, fit_normalizer, modified_scores
from .training import TrainConfig, fit_fixed, fit_progressive
from .validation import as_image_batch


def _holdout_split(X, fraction, seed):
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 99])
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(fraction * len(X))))
    return X[perm[n_val:]], X[perm[:n_val]]


class _GanBase(BaseEstimator, OutlierMixin):
    """Shared scoring/threshold logic for the GAN-based detectors."""

    def _model(self):
        raise NotImplementedError

    def _finalize_fit(self, train_images):
        model = self._model()
        self.normalizer_ = fit_normalizer(train_images, model)
        train_scores = self._compute_scores(train_images)
        self.train_score_quantiles_ = np.quantile(train_scores, [0.5, 0.95, 0.99])
        self.threshold_ = float(np.quantile(train_scores, 1.0 - self.contamination))
        return self

    def _compute_scores(self, X):
        model = self._model()
        if self.score_mode == "raw":
            return anomaly_scores(model, X)
        if self.score_mode == "modified":
            return modified_scores(model, X, self.normalizer_)
        raise ValueError(f"unknown score_mode {self.score_mode!r}")

    def anomaly_scores(self, X):
        check_is_fitted(self, "threshold_")
        X = as_image_batch(X, self._model().resolution)[:, 0]
        return self._compute_scores(X)

    def score_samples(self, X):
        return -self.anomaly_scores(X)

    def decision_function(self, X):
        return self.threshold_ - self.anomaly_scores(X)

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def set_threshold(self, threshold):
        self.threshold_ = float(threshold)
        return self

    def reconstruct(self, X):
        import torch

        check_is_fitted(self, "threshold_")
        model = self._model()
        X = as_image_batch(X, model.resolution)
        model.eval()
        with torch.no_grad():
            out = model.reconstruct(torch.from_numpy(X))
        return out[:, 0].numpy()


class GanomalyDetector(_GanBase):
    """Fixed-resolution GAN anomaly detector.

    Trains an encoder-decoder-encoder pipeline adversarially on normal
    images; the anomaly score is the latent distance between an image's
    encoding and the encoding of its reconstruction, optionally
    median/MAD-standardized per element ("modified" mode, the default).
    """

    def __init__(self, resolution=32, latent_dim=100, base_channels=256,
                 batch_size=128, learning_rate=0.002, w_adv=1.0, w_con=70.0,
                 w_enc=10.0, plateau_patience=10, convergence="plateau",
                 max_epochs=500, epoch_train_samples=None, epoch_val_samples=None,
                 weight_clip=0.01, score_mode="modified", contamination=0.05,
                 val_fraction=1.0 / 15.0, seed=0):
        self.resolution = resolution
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.w_adv = w_adv
        self.w_con = w_con
        self.w_enc = w_enc
        self.plateau_patience = plateau_patience
        self.convergence = convergence
        self.max_epochs = max_epochs
        self.epoch_train_samples = epoch_train_samples
        self.epoch_val_samples = epoch_val_samples
        self.weight_clip = weight_clip
        self.score_mode = score_mode
        self.contamination = contamination
        self.val_fraction = val_fraction
        self.seed = seed

    def _model(self):
        return self.nets_

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            latent_dim=self.latent_dim,
            base_channels=self.base_channels,
            weights=LossWeights(self.w_adv, self.w_con, self.w_enc),
            plateau_patience=self.plateau_patience,
            convergence=self.convergence,
            max_epochs=self.max_epochs,
            epoch_train_samples=self.epoch_train_samples,
            epoch_val_samples=self.epoch_val_samples,
            weight_clip=self.weight_clip,
            seed=self.seed,
        )

    def fit(self, X, X_val=None):
        X = as_image_batch(X, self.resolution)[:, 0]
        if X_val is None:
            train, val = _holdout_split(X, self.val_fraction, self.seed)
        else:
            train, val = X, as_image_batch(X_val, self.resolution)[:, 0]
        self.nets_ = GanomalyNets.build(
            self.resolution, self.latent_dim, self.base_channels, seed=self.seed
        )
        result = fit_fixed(self.nets_, train, val, self._train_config())
        self.history_ = result.history
        self.best_val_loss_ = result.best_val_loss
        self.best_epoch_ = result.best_epoch
        self.best_payload_ = result.best_payload
        return self._finalize_fit(train)

    def save(self, path):
        check_is_fitted(self, "threshold_")
        best = getattr(self, "best_payload_", None) or {}
        payload = {
            "model": self.nets_.state_dict(),
            "opt_g": best.get("opt_g"),
            "opt_d": best.get("opt_d"),
            "epoch": best.get("epoch"),
            "normalizer_median": self.normalizer_.median,
            "normalizer_mad": self.normalizer_.mad,
            "threshold": self.threshold_,
        }
        return save_checkpoint(path, "ganomaly", self.get_params(), payload)

    @classmethod
    def load(cls, path):
        blob = load_checkpoint(path, expected_kind="ganomaly")
        det = cls(**blob["config"])
        det.nets_ = GanomalyNets.build(
            det.resolution, det.latent_dim, det.base_channels, seed=det.seed
        )
        det.nets_.load_state_dict(blob["payload"]["model"])
        det.normalizer_ = ScoreNormalizer(
            median=blob["payload"]["normalizer_median"],
            mad=blob["payload"]["normalizer_mad"],
        )
        det.threshold_ = blob["payload"]["threshold"]
        det.history_ = []
        return det


class ProgressiveGanomalyDetector(_GanBase):
    """Progressively grown GAN anomaly detector.

    Starts training at 8x8 and doubles resolution on validation plateau,
    fading each new rung in linearly; stages train with a gradient-penalty
    critic. Scores are the raw latent distance by default (the per-element
    spread statistics tend to collapse to zero for this family).
    """

    def __init__(self, max_resolution=32, latent_dim=100, base_channels=256,
                 batch_size=128, learning_rate=0.002, w_adv=1.0, w_con=70.0,
                 w_enc=10.0, plateau_patience=10, convergence="plateau",
                 max_epochs=500, epoch_train_samples=None, epoch_val_samples=None,
                 critic_steps=5, lambda_gp=10.0, alpha_fade_iterations=750_000,
                 score_mode="raw", contamination=0.05, val_fraction=1.0 / 15.0,
                 seed=0):
        self.max_resolution = max_resolution
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.w_adv = w_adv
        self.w_con = w_con
        self.w_enc = w_enc
        self.plateau_patience = plateau_patience
        self.convergence = convergence
        self.max_epochs = max_epochs
        self.epoch_train_samples = epoch_train_samples
        self.epoch_val_samples = epoch_val_samples
        self.critic_steps = critic_steps
        self.lambda_gp = lambda_gp
        self.alpha_fade_iterations = alpha_fade_iterations
        self.score_mode = score_mode
        self.contamination = contamination
        self.val_fraction = val_fraction
        self.seed = seed

    def _model(self):
        return self.stack_

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            latent_dim=self.latent_dim,
            base_channels=self.base_channels,
            weights=LossWeights(self.w_adv, self.w_con, self.w_enc),
            plateau_patience=self.plateau_patience,
            convergence=self.convergence,
            max_epochs=self.max_epochs,
            epoch_train_samples=self.epoch_train_samples,
            epoch_val_samples=self.epoch_val_samples,
            critic_steps=self.critic_steps,
            lambda_gp=self.lambda_gp,
            alpha_fade_iterations=self.alpha_fade_iterations,
            max_resolution=self.max_resolution,
            seed=self.seed,
        )

    def fit(self, X, X_val=None):
        X = as_image_batch(X, self.max_resolution)[:, 0]
        if X_val is None:
            train, val = _holdout_split(X, self.val_fraction, self.seed)
        else:
            train, val = X, as_image_batch(X_val, self.max_resolution)[:, 0]
        self.stack_ = ProgressiveStack.build(
            self.max_resolution, self.latent_dim, self.base_channels, seed=self.seed
        )
        result = fit_progressive(self.stack_, train, val, self._train_config())
        self.history_ = result.history
        self.stage_summaries_ = result.stage_summaries
        self.best_val_loss_ = result.best_val_loss
        self.best_epoch_ = result.best_epoch
        self.best_payload_ = result.best_payload
        return self._finalize_fit(train)

    def save(self, path):
        check_is_fitted(self, "threshold_")
        best = getattr(self, "best_payload_", None) or {}
        payload = {
            "model": self.stack_.state_dict(),
            "opt_g": best.get("opt_g"),
            "opt_d": best.get("opt_d"),
            "epoch": best.get("epoch"),
            "active_stage": self.stack_.active_stage,
            "alpha": self.stack_.alpha,
            "normalizer_median": self.normalizer_.median,
            "normalizer_mad": self.normalizer_.mad,
            "threshold": self.threshold_,
        }
        return save_checkpoint(path, "progressive", self.get_params(), payload)

    @classmethod
    def load(cls, path):
        blob = load_checkpoint(path, expected_kind="progressive")
        det = cls(**blob["config"])
        det.stack_ = ProgressiveStack.build(
            det.max_resolution, det.latent_dim, det.base_channels, seed=det.seed
        )
        det.stack_.load_state_dict(blob["payload"]["model"])
        det.stack_.active_stage = blob["payload"]["active_stage"]
        det.stack_.alpha = blob["payload"]["alpha"]
        det.normalizer_ = ScoreNormalizer(
            median=blob["payload"]["normalizer_median"],
            mad=blob["payload"]["normalizer_mad"],
        )
        det.threshold_ = blob["payload"]["threshold"]
        det.history_ = []
        return det


# ---- one-class SVM baseline ----

def rbf_kernel(x, y, gamma):
    """exp(-gamma * ||x - y||^2) for all row pairs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sq = (
        (x**2).sum(axis=1)[:, None]
        + (y**2).sum(axis=1)[None, :]
        - 2.0 * x @ y.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    """Hypersphere decision model: score(x) = sum_i a_i k(x, sv_i) - rho."""

    support_vectors: np.ndarray
    coefficients: np.ndarray
    offset: float  # rho
    gamma: float
    nu: float

    def decision(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.support_vectors.shape[1]:
            raise DimensionError(
                f"expected feature dimension {self.support_vectors.shape[1]}, "
                f"got {X.shape}"
            )
        k = rbf_kernel(X, self.support_vectors, self.gamma)
        return k @ self.coefficients - self.offset


def _resolve_gamma(gamma, X):
    if gamma == "auto":
        return 1.0 / X.shape[1]
    if gamma == "scale":
        var = X.var()
        return 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return gamma


def svm_fit(train_images, nu=0.1, gamma="auto", tol=1e-9) -> SvmModel:
    """Fit a one-class SVM with an RBF kernel on flattened images.

    The solver tolerance is tight enough that decision scores are
    training-order independent to well under 1e-6.
    """
    X = np.asarray(train_images, dtype=np.float64)
    X = X.reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty training set")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    gamma_val = _resolve_gamma(gamma, X)
    if np.all(X == X[0]):
        warnings.warn("training set is degenerate (all rows identical)", UserWarning,
                      stacklevel=2)
    sk = OneClassSVM(kernel="rbf", nu=nu, gamma=gamma_val, tol=tol).fit(X)
    return SvmModel(
        support_vectors=sk.support_vectors_.copy(),
        coefficients=sk.dual_coef_[0].copy(),
        offset=float(-sk.intercept_[0]),
        gamma=gamma_val,
        nu=nu,
    )


def svm_decision(model: SvmModel, X):
    """Continuous scores plus normal/abnormal labels (abnormal iff score < 0)."""
    scores = model.decision(np.asarray(X).reshape(len(X), -1))
    labels = np.where(scores < 0, "abnormal", "normal")
    return scores, labels


class OneClassSvmDetector(BaseEstimator, OutlierMixin):
    """One-class SVM baseline on raw pixel vectors."""

    def __init__(self, nu=0.1, gamma="auto"):
        self.nu = nu
        self.gamma = gamma

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float32)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.svm_model_ = svm_fit(X, nu=self.nu, gamma=self.gamma)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "svm_model_")
        X = np.asarray(X)
        return self.svm_model_.decision(X.reshape(len(X), -1))

    def anomaly_scores(self, X):
        return -self.decision_function(X)

    def score_samples(self, X):
        return self.decision_function(X)

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def save(self, path):
        check_is_fitted(self, "svm_model_")
        m = self.svm_model_
        payload = {
            "support_vectors": m.support_vectors,
            "coefficients": m.coefficients,
            "offset": m.offset,
            "gamma_value": m.gamma,
            "n_features": self.n_features_in_,
        }
        return save_checkpoint(path, "ocsvm", self.get_params(), payload)

    @classmethod
    def load(cls, path):
        blob = load_checkpoint(path, expected_kind="ocsvm")
        det = cls(**blob["config"])
        p = blob["payload"]
        det.svm_model_ = SvmModel(
            support_vectors=p["support_vectors"],
            coefficients=p["coefficients"],
            offset=p["offset"],
            gamma=p["gamma_value"],
            nu=det.nu,
        )
        det.n_features_in_ = p["n_features"]
        return det
