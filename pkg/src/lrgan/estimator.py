"""Scikit-learn style estimator facade over the trainer.

LongRangeGAN follows the fit/sample convention of sklearn's generative
estimators (fit on an image array, sample new images afterwards) and exposes
get_params/set_params so it composes with clone-style tooling. Hyperparameters
are stored verbatim in __init__ and validated at fit time.
"""

from __future__ import annotations

import numpy as np

from .frechet import embed_and_stats, frechet_distance
from .model import FrozenConvEmbedder, ModelConfig
from .objectives import LossWeights
from .tensor import precision
from .trainer import EVAL_EMBEDDER_DIM, EVAL_EMBEDDER_SEED, TrainConfig, sample_images, train


def check_image_array(X, resolution=None):
    """Validate a (N, 3, R, R) image array in [-1, 1]; returns it as float32."""
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"X must have shape (n_samples, 3, R, R), got {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"images must be square, got {X.shape}")
    if resolution is not None and X.shape[2] != resolution:
        raise ValueError(f"images must be {resolution}x{resolution}, got {X.shape[2]}x{X.shape[3]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if X.min() < -1.0 - 1e-6 or X.max() > 1.0 + 1e-6:
        raise ValueError(f"X must lie in [-1, 1], got range [{X.min():.3f}, {X.max():.3f}]")
    return X.astype(np.float32, copy=False)


class LongRangeGAN:
    """Multi-stage GAN with long-range modules, wrapped as an estimator.

    Parameters mirror the model and training configs; `fit(X)` trains on an
    array of images in [-1, 1] at the top-stage resolution, `sample(n)` draws
    new images, and `score(X)` returns the negative Frechet-lite distance
    between X and freshly sampled images (higher is better).
    """

    _PARAM_NAMES = (
        "stages",
        "resolutions",
        "channels",
        "noise_dim",
        "metadata_dim",
        "lrm_resolution",
        "use_metadata",
        "use_lrm",
        "lrm_replacement",
        "epochs",
        "batch_size",
        "learning_rate",
        "lambda1",
        "lambda2",
        "lambda3",
        "seed",
    )

    def __init__(
        self,
        stages=3,
        resolutions=(8, 16, 32),
        channels=64,
        noise_dim=32,
        metadata_dim=16,
        lrm_resolution=16,
        use_metadata=True,
        use_lrm=True,
        lrm_replacement="none",
        epochs=30,
        batch_size=16,
        learning_rate=0.0002,
        lambda1=1.0,
        lambda2=5.0,
        lambda3=50.0,
        seed=0,
    ):
        self.stages = stages
        self.resolutions = resolutions
        self.channels = channels
        self.noise_dim = noise_dim
        self.metadata_dim = metadata_dim
        self.lrm_resolution = lrm_resolution
        self.use_metadata = use_metadata
        self.use_lrm = use_lrm
        self.lrm_replacement = lrm_replacement
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.seed = seed

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"invalid parameter {name!r} for LongRangeGAN")
            setattr(self, name, value)
        return self

    def _train_config(self):
        model = ModelConfig(
            stages=self.stages,
            resolutions=tuple(self.resolutions),
            channels=self.channels,
            noise_dim=self.noise_dim,
            metadata_dim=self.metadata_dim,
            lrm_resolution=self.lrm_resolution,
            use_metadata=self.use_metadata,
            use_lrm=self.use_lrm,
            lrm_replacement=self.lrm_replacement,
            seed=self.seed,
        )
        return TrainConfig(
            epochs=self.epochs,
            model=model,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            weights=LossWeights(self.lambda1, self.lambda2, self.lambda3),
            seed=self.seed,
        )

    def fit(self, X, y=None):
        config = self._train_config()
        X = check_image_array(X, config.model.resolutions[-1])
        self.state_, self.history_ = train(config, dataset=X)
        self.config_ = config
        self.meta_images_ = X[:256]
        return self

    def _require_fitted(self):
        if not hasattr(self, "state_"):
            raise ValueError("this LongRangeGAN instance is not fitted yet; call fit first")

    def sample(self, n_samples=16, random_state=None, stage=None):
        """Draw images; returns the top stage by default, or one stage's stack."""
        self._require_fitted()
        seed = self.seed if random_state is None else random_state
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5A111])))
        meta = self.meta_images_ if self.config_.model.use_metadata else None
        with precision(self.config_.precision):
            stacks = sample_images(self.state_, self.config_.model, n_samples, rng, meta_images=meta)
        return stacks[-1 if stage is None else stage]

    def score(self, X, y=None):
        """Negative Frechet-lite between X and generated samples (higher is better)."""
        self._require_fitted()
        top = self.config_.model.resolutions[-1]
        X = check_image_array(X, top)
        if X.shape[0] < 2:
            raise ValueError("score needs at least 2 images")
        embedder = FrozenConvEmbedder(top, EVAL_EMBEDDER_DIM, EVAL_EMBEDDER_SEED, name="eval-embedder")
        generated = self.sample(max(2, X.shape[0]))
        return -frechet_distance(embed_and_stats(X, embedder), embed_and_stats(generated, embedder))
