"""Global-distribution-driven minority-class augmentation.

The server looks at the global class histogram, flags every class whose
count sits below the per-class mean, and assigns it a target count of
``round(C * (mean / C) ** alpha)``. Alpha controls how far minority classes
are pushed toward the mean: 0 leaves counts untouched, 1 lifts every
minority class exactly to the mean. Values above 1 overshoot the mean and
re-imbalance the pool, so the validated range is [0, 1].

Clients then expand their own minority-class samples locally. The global
deficit of each flagged class is apportioned to clients in proportion to
their holdings (largest remainder), which conserves the class-level target
exactly and never asks a client to augment a class it does not hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import ClientPartition, LabeledDataset, class_histogram, largest_remainder
from .data import ClassDistribution
from .errors import ConfigurationError

_CLIENT_SEED_TAG = 7  # namespaces per-client augmentation streams


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class AugmentationPlan:
    """Per-class target counts computed from the global histogram."""

    current: np.ndarray  # (num_classes,) int64, counts the plan was built on
    targets: np.ndarray  # (num_classes,) int64
    mean_count: float
    alpha: float

    @property
    def aug_set(self) -> np.ndarray:
        """Class ids scheduled for augmentation (deficit > 0)."""
        return np.flatnonzero(self.targets > self.current)

    @property
    def deficits(self) -> np.ndarray:
        return self.targets - self.current

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mean_count": self.mean_count,
            "current": self.current.tolist(),
            "targets": self.targets.tolist(),
            "aug_set": self.aug_set.tolist(),
        }


@dataclass(frozen=True, eq=False)
class TransformConfig:
    """How a single sample is perturbed when cloned.

    ``vector_jitter`` adds N(0, sigma^2) noise and rescales by a uniform
    factor; ``image_affine`` applies random shift, rotation, shear, and zoom
    to the sample reshaped as ``image_shape``.
    """

    kind: str = "vector_jitter"  # "vector_jitter" | "image_affine"
    sigma: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    shift_range: tuple[float, float] = (0.0, 0.0)  # pixels, per axis
    rotation_range: tuple[float, float] = (0.0, 0.0)  # degrees
    shear_range: tuple[float, float] = (0.0, 0.0)  # degrees
    zoom_range: tuple[float, float] = (1.0, 1.0)
    image_shape: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("vector_jitter", "image_affine"):
            raise ConfigurationError(
                f"transform kind: expected 'vector_jitter' or 'image_affine', got {self.kind!r}"
            )
        if self.sigma < 0:
            raise ConfigurationError("sigma: must be >= 0")
        for name in ("scale_range", "shift_range", "rotation_range", "shear_range", "zoom_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name}: lower bound exceeds upper bound")
        if self.kind == "image_affine" and self.image_shape is None:
            raise ConfigurationError("image_shape: required for image_affine transforms")


def compute_plan(global_dist: ClassDistribution, alpha: float) -> AugmentationPlan:
    """Targets for every class: minority classes (count < mean, count > 0)
    grow by the factor ``(mean / count) ** alpha``; others keep their count.

    Classes with zero samples cannot be augmented (there is nothing to
    transform) and keep a target of zero.
    """
    if alpha < 0:
        raise ConfigurationError("alpha: must be >= 0")
    counts = global_dist.counts
    if counts.sum() <= 0:
        raise ConfigurationError("global distribution: must contain at least one sample")
    mean_count = float(counts.mean())
    targets = counts.copy()
    for c in np.flatnonzero((counts < mean_count) & (counts > 0)):
        grown = counts[c] * (mean_count / counts[c]) ** alpha
        targets[c] = _round_half_up(grown)
    return AugmentationPlan(
        current=counts.copy(), targets=targets, mean_count=mean_count, alpha=alpha
    )


def transform_sample(sample, config: TransformConfig, rng) -> tuple[np.ndarray, int]:
    """Perturb one (features, label) sample; the label is always preserved."""
    features, label = sample
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(rng)

    if config.kind == "vector_jitter":
        noise = rng.normal(0.0, config.sigma, size=features.shape) if config.sigma > 0 else 0.0
        scale = rng.uniform(*config.scale_range)
        return (features + noise) * scale, label

    h, w = config.image_shape
    if features.size != h * w:
        raise ConfigurationError(f"sample: {features.size} values do not fill image shape {h}x{w}")
    image = features.reshape(h, w)

    angle = math.radians(rng.uniform(*config.rotation_range))
    shear = math.radians(rng.uniform(*config.shear_range))
    zoom = rng.uniform(*config.zoom_range)
    shift = rng.uniform(config.shift_range[0], config.shift_range[1], size=2)

    # Rotation/shear/zoom about the image center, then translation.
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    shr = np.array([[1.0, -math.sin(shear)], [0.0, math.cos(shear)]])
    matrix = (rot @ shr) * zoom
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - matrix @ center - shift
    warped = ndimage.affine_transform(image, matrix, offset=offset, order=1, mode="nearest")
    return warped.ravel(), label


def _client_gains(plan: AugmentationPlan, partition: ClientPartition) -> dict[int, np.ndarray]:
    """Split each class deficit across the clients that hold the class."""
    clients = partition.client_ids()
    holdings = {k: class_histogram(partition.client_datasets[k]).counts for k in clients}
    gains = {k: np.zeros(partition.num_classes, dtype=np.int64) for k in clients}
    for c in plan.aug_set:
        deficit = int(plan.deficits[c])
        holders = [k for k in clients if holdings[k][c] > 0]
        assert holders, f"class {c} scheduled for augmentation but no client holds it"
        weights = np.array([holdings[k][c] for k in holders], dtype=np.float64)
        for k, share in zip(holders, largest_remainder(weights, deficit)):
            gains[k][c] = share
    return gains


def apply_plan(
    partition: ClientPartition,
    plan: AugmentationPlan,
    transform: TransformConfig,
    seed: int,
) -> ClientPartition:
    """Expand minority classes on every client per the plan.

    Each client's share of a class deficit is spread round-robin over its
    samples of that class, each copy is perturbed with the client's own
    random stream, originals are retained, and the shard is shuffled.
    Augmented samples receive fresh ids above every existing id, assigned
    deterministically and independently of client execution order.
    """
    gains = _client_gains(plan, partition)
    clients = partition.client_ids()
    next_id = max((int(d.ids.max()) for d in partition.client_datasets.values() if len(d)), default=-1) + 1

    id_starts: dict[int, int] = {}
    for k in clients:
        id_starts[k] = next_id
        next_id += int(gains[k].sum())

    new_shards: dict[int, LabeledDataset] = {}
    for k in clients:
        shard = partition.client_datasets[k]
        rng = np.random.default_rng(np.random.SeedSequence([seed, _CLIENT_SEED_TAG, k]))
        extra_features: list[np.ndarray] = []
        extra_labels: list[int] = []
        for c in np.flatnonzero(gains[k]):
            owners = np.flatnonzero(shard.labels == c)
            share = int(gains[k][c])
            copies = np.full(owners.size, share // owners.size, dtype=np.int64)
            copies[: share % owners.size] += 1  # round-robin remainder
            for idx, reps in zip(owners, copies):
                for _ in range(int(reps)):
                    feats, label = transform_sample(
                        (shard.features[idx], int(shard.labels[idx])), transform, rng
                    )
                    extra_features.append(feats)
                    extra_labels.append(label)

        n_extra = len(extra_features)
        if n_extra:
            features = np.vstack([shard.features, np.array(extra_features)])
            labels = np.concatenate([shard.labels, np.array(extra_labels, dtype=np.int64)])
            ids = np.concatenate(
                [shard.ids, np.arange(id_starts[k], id_starts[k] + n_extra, dtype=np.int64)]
            )
        else:
            features, labels, ids = shard.features, shard.labels, shard.ids
        order = rng.permutation(len(labels))
        new_shards[k] = LabeledDataset(
            features=features[order],
            labels=labels[order],
            ids=ids[order],
            num_classes=shard.num_classes,
        )
    return ClientPartition(client_datasets=new_shards, profile=partition.profile)
