"""Competitive-augmentation training.

A transform set is drawn once per run and frozen into the resulting
:class:`ModelArtifact`. Each epoch a random subset of ``n1`` specs is taken
from it, every training window gets one variant from that subset, and the
model sees originals plus variants. Prediction and explanation later draw only
from the same frozen set, which is what keeps training- and prediction-time
transforms consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .data import fit_norm_stats
from .errors import BadConfig, EmptyDataset, ShapeMismatch, TooManyVariants
from .model import TrainConfig, TrainingLog, ReferenceModel, MODEL_KINDS, fit
from .transforms import TransformSetConfig, apply_array, generate_transform_set
from .types import Dataset, NormStats, TransformSpec, _ArrayEq

log = logging.getLogger(__name__)

CONDITION_II_MODES = ("strict", "warn", "off")


@dataclass(frozen=True)
class CompetitiveConfig:
    """Run-level settings. ``train.seed`` seeds the whole run."""

    n1: int = 20
    n2: int = 10
    transform_set_size: int = 50
    train: TrainConfig = field(default_factory=TrainConfig)
    transforms: TransformSetConfig = field(default_factory=TransformSetConfig)
    augment: bool = True
    model_kind: str = "mlp"
    hidden: int = 128
    val_frac: float = 0.1
    condition_ii: str = "strict"

    def __post_init__(self):
        if not 0 < self.n2 <= self.n1 <= self.transform_set_size:
            raise BadConfig(f"need 0 < n2 <= n1 <= transform_set_size, got "
                            f"n2={self.n2}, n1={self.n1}, size={self.transform_set_size}")
        if self.model_kind not in MODEL_KINDS:
            raise BadConfig(f"unknown model kind {self.model_kind!r}")
        if self.hidden < 1:
            raise BadConfig("hidden must be >= 1")
        if not 0 < self.val_frac < 1:
            raise BadConfig("val_frac must lie in (0, 1)")
        if self.condition_ii not in CONDITION_II_MODES:
            raise BadConfig(f"condition_ii must be one of {CONDITION_II_MODES}")

    @property
    def seed(self) -> int:
        return self.train.seed


@dataclass(frozen=True, eq=False)
class ModelArtifact(_ArrayEq):
    """Everything needed to predict and explain: weights, normalization, frozen transform set."""

    model: ReferenceModel
    norm_stats: NormStats
    transform_set: Tuple[TransformSpec, ...]
    hyper: CompetitiveConfig
    class_names: Tuple[str, ...]
    channel_names: Tuple[str, ...]
    sampling_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "transform_set", tuple(self.transform_set))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))
        if not self.transform_set:
            raise BadConfig("an artifact needs a nonempty transform set")
        n_channels, _ = self.model.input_shape
        for spec in self.transform_set:
            spec.check(n_channels, self.sampling_rate_hz)
        if self.norm_stats.mean.shape != (n_channels,) or len(self.channel_names) != n_channels:
            raise BadConfig("normalization stats and channel names must match the model input")
        if len(self.class_names) != self.model.n_classes:
            raise BadConfig("class_names must match the model's output size")

    @property
    def augmented(self) -> bool:
        return self.hyper.augment

    @property
    def input_shape(self) -> Tuple[int, int]:
        return self.model.input_shape

    @property
    def max_variants(self) -> int:
        """Most test-time variants the artifact admits (0 if it was trained without augmentation)."""
        return min(self.hyper.n1, len(self.transform_set)) if self.augmented else 0

    def sigma2(self) -> np.ndarray:
        """Per-channel signal variance in the model's (normalized) input space."""
        return self.norm_stats.normalized_variance()

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.input_shape:
            raise ShapeMismatch(f"artifact expects windows of shape {self.input_shape}, got {x.shape[-2:]}")
        return self.norm_stats.apply(x)

    def predict_proba_normalized(self, z: np.ndarray, chunk_rows: int = 1024) -> np.ndarray:
        """Probabilities for already-normalized windows ``[N, C, T]``, evaluated in row chunks."""
        z = np.asarray(z)
        if len(z) <= chunk_rows:
            return self.model.predict_proba_array(z)
        return np.concatenate([self.model.predict_proba_array(z[i : i + chunk_rows])
                               for i in range(0, len(z), chunk_rows)])

    def predict_proba(self, x: np.ndarray, chunk_rows: int = 1024) -> np.ndarray:
        """Single-pass probabilities for raw windows ``[N, C, T]`` (no augmentation)."""
        x = np.asarray(x, dtype=np.float64)
        if len(x) <= chunk_rows:
            return self.model.predict_proba_array(self.normalize(x))
        return np.concatenate([self.model.predict_proba_array(self.normalize(x[i : i + chunk_rows]))
                               for i in range(0, len(x), chunk_rows)])


# --------------------------------------------------------------------------
# admissibility checks
# --------------------------------------------------------------------------


def condition_ii_limit(dataset: Dataset) -> int:
    """Average number of windows per class, floored."""
    return len(dataset) // dataset.n_classes


def check_condition_ii(dataset: Dataset, n1: int) -> None:
    """Raise :class:`TooManyVariants` if ``n1`` exceeds the average class size."""
    limit = condition_ii_limit(dataset)
    if n1 > limit:
        raise TooManyVariants(n1, limit, what="n1")


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------


def augment_block(x: np.ndarray, y: np.ndarray, specs: Sequence[TransformSpec], n1: int,
                  rng: np.random.Generator, sigma2, sampling_rate_hz: float):
    """Originals followed by one variant each, drawn from a fresh ``n1``-subset of ``specs``."""
    if n1 == 0:
        return x, y
    if not specs:
        raise BadConfig("augmentation needs a nonempty transform set")
    if n1 > len(specs):
        raise TooManyVariants(n1, len(specs), what="n1")
    subset = rng.choice(len(specs), size=n1, replace=False)
    assign = rng.integers(n1, size=len(x))
    variants = np.empty_like(x, dtype=np.float64)
    for j in range(n1):
        idx = np.flatnonzero(assign == j)
        if idx.size:
            variants[idx] = apply_array(specs[subset[j]], x[idx], sigma2, rng, sampling_rate_hz)
    return np.concatenate([x, variants]), np.concatenate([y, y])


def augment_epoch(train: Dataset, specs: Sequence[TransformSpec], n1: int, rng: np.random.Generator,
                  sigma2=None) -> Dataset:
    """Dataset-level form of :func:`augment_block`. ``sigma2`` defaults to the data's own variance."""
    if n1 == 0:
        return train
    if sigma2 is None:
        sigma2 = fit_norm_stats(train).var
    values, labels = augment_block(train.values, train.labels, specs, n1, rng, sigma2,
                                   train.sampling_rate_hz)
    return train.replace_values(values, labels=labels, subject_ids=train.subject_ids * 2)


def epoch_rng(seed_entropy, epoch: int) -> np.random.Generator:
    return np.random.default_rng([*seed_entropy, epoch])


def _streams(seed: int):
    """Independent integer seeds for (transform set, augmentation, model fit)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


def train_competitive(train: Dataset, val: Dataset, cfg: CompetitiveConfig
                      ) -> Tuple[ModelArtifact, TrainingLog]:
    """Freeze a transform set, fit the model with per-epoch augmentation, package the artifact."""
    if len(train) == 0 or len(val) == 0:
        raise EmptyDataset("training needs nonempty train and validation sets")
    if cfg.augment and cfg.condition_ii != "off":
        try:
            check_condition_ii(train, cfg.n1)
        except TooManyVariants:
            if cfg.condition_ii == "strict":
                raise
            log.warning("n1=%d exceeds the per-class average %d", cfg.n1, condition_ii_limit(train))

    stats = fit_norm_stats(train)
    set_seed, aug_seed, fit_seed = _streams(cfg.seed)
    specs = tuple(generate_transform_set(cfg.transforms, cfg.transform_set_size,
                                         np.random.default_rng(list(set_seed)), train.n_channels,
                                         train.sampling_rate_hz))
    sigma2 = stats.normalized_variance()
    train_n = train.replace_values(stats.apply(train.values))
    val_n = val.replace_values(stats.apply(val.values))

    augmenter = None
    if cfg.augment:
        def augmenter(epoch, x, y):
            return augment_block(x, y, specs, cfg.n1, epoch_rng(aug_seed, epoch), sigma2,
                                 train.sampling_rate_hz)

    fit_cfg = replace(cfg.train, seed=int(np.random.SeedSequence(list(fit_seed)).generate_state(1)[0]))
    model, history = fit(train_n, val_n, fit_cfg, augmenter, kind=cfg.model_kind, hidden=cfg.hidden)
    artifact = ModelArtifact(
        model=model,
        norm_stats=stats,
        transform_set=specs,
        hyper=cfg,
        class_names=train.class_names,
        channel_names=train.channel_names,
        sampling_rate_hz=train.sampling_rate_hz,
    )
    return artifact, history
