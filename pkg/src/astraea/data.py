"""Dataset construction, class accounting, and client partitioning.

Datasets are immutable bundles of float64 feature rows, int64 labels, and
int64 sample ids. Ids identify a physical sample across the whole run, so
client shards can be checked for pairwise disjointness and augmented copies
can be told apart from originals.

Partitioning realizes three independent axes of imbalance:

* size     -- per-client sample volumes (even, or power-law in client rank);
* local    -- per-client class mix (balanced mirrors the global mix, random
  draws shards from a common shuffled pool);
* global   -- class mix of the union, reshaped by resampling to a target
  frequency vector before splitting.

All fractional allocations use largest-remainder apportionment so that
totals are conserved exactly and results are deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IdxFormatError, InsufficientSamplesError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Relative frequencies of the letters a-z in English text, normalized below.
ENGLISH_LETTER_FREQS = np.array(
    [
        8.167, 1.492, 2.782, 4.253, 12.702, 2.228, 2.015, 6.094, 6.966,
        0.153, 0.772, 4.025, 2.406, 6.749, 7.507, 1.929, 0.095, 5.987,
        6.327, 9.056, 2.758, 0.978, 2.360, 1.974, 0.150, 0.074,
    ]
)
ENGLISH_LETTER_FREQS /= ENGLISH_LETTER_FREQS.sum()
ENGLISH_LETTER_FREQS.setflags(write=False)


def zipf_frequencies(num_classes: int, exponent: float) -> np.ndarray:
    """Probability vector with p_i proportional to 1 / rank^exponent."""
    if num_classes < 1:
        raise ConfigurationError("num_classes: must be >= 1")
    ranks = np.arange(1, num_classes + 1, dtype=np.float64)
    weights = ranks**-exponent
    return weights / weights.sum()


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Apportion ``total`` integer units proportionally to ``weights``.

    Floors the exact quotas, then hands the leftover units to the largest
    fractional parts (ties broken by lowest index). Conserves the total
    exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise ConfigurationError("total: must be >= 0")
    if weights.ndim != 1 or weights.size == 0:
        raise ConfigurationError("weights: expected a nonempty 1-d array")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ConfigurationError("weights: must be nonnegative with positive sum")
    quotas = weights * (total / weights.sum())
    counts = np.floor(quotas).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        frac = quotas - counts
        order = np.lexsort((np.arange(weights.size), -frac))
        counts[order[:leftover]] += 1
    return counts


def _largest_remainder_capped(weights: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment that never exceeds per-entry caps.

    Requires caps.sum() >= total. Used when filling clients class by class,
    where the cap is each client's remaining capacity.
    """
    weights = np.asarray(weights, dtype=np.float64)
    caps = np.asarray(caps, dtype=np.int64)
    if int(caps.sum()) < total:
        raise ConfigurationError("caps: insufficient capacity for requested total")
    if weights.sum() <= 0:
        # No weight anywhere: fill lowest indices first within caps.
        counts = np.zeros(weights.size, dtype=np.int64)
        remaining = total
        for i in range(weights.size):
            take = min(int(caps[i]), remaining)
            counts[i] = take
            remaining -= take
        return counts
    quotas = np.minimum(weights * (total / weights.sum()), caps)
    counts = np.floor(quotas).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        frac = quotas - counts
        frac[counts >= caps] = -1.0  # full entries never receive extras
        order = np.lexsort((np.arange(weights.size), -frac))
        for idx in order:
            if leftover == 0:
                break
            room = int(caps[idx] - counts[idx])
            if room > 0:
                bump = min(room, leftover)
                counts[idx] += bump
                leftover -= bump
    return counts


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Immutable labeled dataset with stable per-sample ids."""

    features: np.ndarray  # (n, feature_dim) float64
    labels: np.ndarray  # (n,) int64 in [0, num_classes)
    ids: np.ndarray  # (n,) int64, unique within a partition
    num_classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ConfigurationError("features: expected a 2-d array")
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.ids.shape != (n,):
            raise ConfigurationError("labels/ids: lengths must match feature rows")
        if n > 0 and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(f"labels: class ids must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            ids=self.ids[indices],
            num_classes=self.num_classes,
        )


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """Per-class sample counts with a derived probability vector."""

    counts: np.ndarray  # (num_classes,) int64, nonnegative

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ConfigurationError("counts: expected a 1-d nonnegative array")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        total = self.total
        if total == 0:
            raise ConfigurationError("distribution: empty, probabilities undefined")
        return self.counts / total

    def __add__(self, other: "ClassDistribution") -> "ClassDistribution":
        return ClassDistribution(self.counts + other.counts)


@dataclass(frozen=True, eq=False)
class PartitionProfile:
    """How a dataset is split across clients (see module docstring)."""

    size: str = "even"  # "even" | "power_law"
    power_law_exponent: float = 1.0
    local: str = "balanced"  # "balanced" | "random"
    global_freq: np.ndarray | None = None  # None keeps the source class mix
    global_total: int | None = None  # resample target size (None: source size)

    def __post_init__(self) -> None:
        if self.size not in ("even", "power_law"):
            raise ConfigurationError(f"size profile: expected 'even' or 'power_law', got {self.size!r}")
        if self.local not in ("balanced", "random"):
            raise ConfigurationError(f"local profile: expected 'balanced' or 'random', got {self.local!r}")
        if self.global_freq is not None:
            freq = np.asarray(self.global_freq, dtype=np.float64)
            if np.any(freq < 0) or abs(freq.sum() - 1.0) > 1e-9:
                raise ConfigurationError("global_freq: entries must be >= 0 and sum to 1")
            freq.setflags(write=False)
            object.__setattr__(self, "global_freq", freq)

    def describe(self) -> dict:
        return {
            "size": self.size,
            "power_law_exponent": self.power_law_exponent,
            "local": self.local,
            "global_freq": None if self.global_freq is None else self.global_freq.tolist(),
            "global_total": self.global_total,
        }


@dataclass(frozen=True, eq=False)
class ClientPartition:
    """Per-client shards; shards are pairwise disjoint as sample-id sets."""

    client_datasets: dict[int, LabeledDataset]
    profile: PartitionProfile = field(default_factory=PartitionProfile)

    @property
    def num_clients(self) -> int:
        return len(self.client_datasets)

    @property
    def num_classes(self) -> int:
        return next(iter(self.client_datasets.values())).num_classes

    def client_ids(self) -> list[int]:
        return sorted(self.client_datasets)

    def sizes(self) -> dict[int, int]:
        return {k: len(d) for k, d in self.client_datasets.items()}

    def global_histogram(self) -> ClassDistribution:
        total = np.zeros(self.num_classes, dtype=np.int64)
        for d in self.client_datasets.values():
            total += class_histogram(d).counts
        return ClassDistribution(total)


def class_histogram(dataset: LabeledDataset) -> ClassDistribution:
    """Count samples per class."""
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    return ClassDistribution(counts.astype(np.int64))


def make_synthetic(
    num_classes: int,
    per_class_counts,
    feature_dim: int,
    separation: float,
    seed,
) -> LabeledDataset:
    """Gaussian blob dataset with exact per-class counts.

    Class c's cluster mean sits at ``separation * (1 + c // feature_dim)``
    along axis ``c % feature_dim``, so any two means are at least
    ``separation`` apart; noise is unit-variance isotropic Gaussian.
    """
    if separation <= 0:
        raise ConfigurationError("separation: must be > 0")
    counts = np.asarray(per_class_counts, dtype=np.int64)
    if counts.shape != (num_classes,) or np.any(counts < 0):
        raise ConfigurationError("per_class_counts: expected one nonnegative count per class")
    rng = np.random.default_rng(seed)

    means = np.zeros((num_classes, feature_dim))
    for c in range(num_classes):
        means[c, c % feature_dim] = separation * (1 + c // feature_dim)

    n = int(counts.sum())
    features = np.empty((n, feature_dim))
    labels = np.empty(n, dtype=np.int64)
    offset = 0
    for c in range(num_classes):
        m = int(counts[c])
        features[offset : offset + m] = means[c] + rng.standard_normal((m, feature_dim))
        labels[offset : offset + m] = c
        offset += m

    order = rng.permutation(n)
    return LabeledDataset(
        features=features[order],
        labels=labels[order],
        ids=np.arange(n, dtype=np.int64),
        num_classes=num_classes,
    )


def resample_to_frequency(
    dataset: LabeledDataset,
    freq,
    total: int,
    seed,
) -> LabeledDataset:
    """Draw a subset whose class histogram follows ``freq`` at size ``total``.

    Per-class counts come from largest-remainder apportionment of
    ``freq * total``; samples are then drawn without replacement within each
    class. Raises ``InsufficientSamplesError`` naming the first class whose
    pool is too small.
    """
    freq = np.asarray(freq, dtype=np.float64)
    if freq.shape != (dataset.num_classes,):
        raise ConfigurationError(f"freq: expected {dataset.num_classes} entries, got {freq.shape}")
    if np.any(freq < 0) or abs(freq.sum() - 1.0) > 1e-9:
        raise ConfigurationError("freq: entries must be >= 0 and sum to 1")
    wanted = largest_remainder(freq, total)
    have = class_histogram(dataset).counts
    for c in range(dataset.num_classes):
        if wanted[c] > have[c]:
            raise InsufficientSamplesError(
                f"class {c}: need {int(wanted[c])} samples, only {int(have[c])} available"
            )

    rng = np.random.default_rng(seed)
    picked: list[np.ndarray] = []
    for c in range(dataset.num_classes):
        pool = np.flatnonzero(dataset.labels == c)
        if wanted[c] > 0:
            picked.append(rng.choice(pool, size=int(wanted[c]), replace=False))
    indices = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    indices = indices[rng.permutation(indices.size)]
    return dataset.subset(indices)


def _client_sizes(profile: PartitionProfile, num_clients: int, total: int) -> np.ndarray:
    if profile.size == "even":
        weights = np.ones(num_clients)
    else:
        ranks = np.arange(1, num_clients + 1, dtype=np.float64)
        weights = ranks**-profile.power_law_exponent
    return largest_remainder(weights, total)


def partition_clients(
    dataset: LabeledDataset,
    num_clients: int,
    profile: PartitionProfile,
    seed,
) -> ClientPartition:
    """Split a dataset into disjoint client shards per the profile.

    If the profile carries a global frequency vector, the dataset is first
    resampled to that shape; the partition then covers the resampled pool
    exactly (shard histograms sum to the pool histogram).
    """
    if num_clients < 1:
        raise ConfigurationError("num_clients: must be >= 1")
    rng = np.random.default_rng(seed)
    if profile.global_freq is not None:
        total = profile.global_total if profile.global_total is not None else len(dataset)
        dataset = resample_to_frequency(dataset, profile.global_freq, total, rng)
    if len(dataset) < num_clients:
        raise ConfigurationError(
            f"dataset: {len(dataset)} samples cannot cover {num_clients} clients"
        )

    sizes = _client_sizes(profile, num_clients, len(dataset))
    shards: dict[int, LabeledDataset] = {}

    if profile.local == "random":
        order = rng.permutation(len(dataset))
        offset = 0
        for k in range(num_clients):
            take = int(sizes[k])
            shards[k] = dataset.subset(order[offset : offset + take])
            offset += take
    else:
        # Balanced: split every class across clients in proportion to their
        # remaining capacity, so each shard mirrors the global mix within
        # integer rounding while client totals land exactly on `sizes`.
        hist = class_histogram(dataset)
        by_class = {c: rng.permutation(np.flatnonzero(dataset.labels == c))
                    for c in range(dataset.num_classes)}
        remaining = sizes.copy()
        alloc: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in range(dataset.num_classes):
            count = int(hist.counts[c])
            if count == 0:
                continue
            take = _largest_remainder_capped(remaining.astype(np.float64), count, remaining)
            offset = 0
            for k in range(num_clients):
                if take[k] > 0:
                    alloc[k].append(by_class[c][offset : offset + int(take[k])])
                    offset += int(take[k])
            remaining -= take
        for k in range(num_clients):
            idx = np.concatenate(alloc[k]) if alloc[k] else np.empty(0, dtype=np.int64)
            shards[k] = dataset.subset(np.sort(idx))

    return ClientPartition(client_datasets=shards, profile=profile)


def _read_be32(data: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"{what}: file truncated at offset {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path, num_classes: int | None = None) -> LabeledDataset:
    """Load an IDX image/label file pair (big-endian, standard magics).

    Pixels are scaled to [0, 1] float64 and flattened row-major;
    ``num_classes`` defaults to ``max(label) + 1``.
    """
    with open(images_path, "rb") as f:
        img = f.read()
    with open(labels_path, "rb") as f:
        lab = f.read()

    magic = _read_be32(img, 0, "images")
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"images: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGES_MAGIC:08x})"
        )
    n_images = _read_be32(img, 4, "images")
    rows = _read_be32(img, 8, "images")
    cols = _read_be32(img, 12, "images")
    expected = 16 + n_images * rows * cols
    if len(img) < expected:
        raise IdxFormatError(f"images: file truncated at offset {len(img)} (expected {expected} bytes)")

    magic = _read_be32(lab, 0, "labels")
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"labels: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_LABELS_MAGIC:08x})"
        )
    n_labels = _read_be32(lab, 4, "labels")
    if len(lab) < 8 + n_labels:
        raise IdxFormatError(f"labels: file truncated at offset {len(lab)} (expected {8 + n_labels} bytes)")
    if n_images != n_labels:
        raise IdxFormatError(f"count mismatch: {n_images} images vs {n_labels} labels")

    pixels = np.frombuffer(img, dtype=np.uint8, count=n_images * rows * cols, offset=16)
    features = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n_labels else 0
    return LabeledDataset(
        features=features,
        labels=labels,
        ids=np.arange(n_images, dtype=np.int64),
        num_classes=num_classes,
    )
