"""Synthetic Gaussian-blob data, non-IID partitioners and per-client splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, PartitionError
from .model import LabeledBatch
from .rng import stream


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 10
    num_features: int = 20
    samples_per_class: int = 150
    class_center_scale: float = 3.0
    noise_sigma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.num_features < 1 or self.samples_per_class < 1:
            raise ConfigError("num_features and samples_per_class must be positive")
        if not self.class_center_scale > 0:
            raise ConfigError("class_center_scale must be positive")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be positive")


SCHEMES = ("dirichlet", "pathological", "natural_file")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "dirichlet"
    num_clients: int = 10
    alpha: float = 0.1
    classes_per_client: int = 3
    path: str | None = None
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown partition scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be positive")
        if self.scheme == "dirichlet" and not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.scheme == "pathological" and self.classes_per_client < 1:
            raise ConfigError("classes_per_client must be positive")
        if self.scheme == "natural_file" and not self.path:
            raise ConfigError("natural_file scheme needs a path")
        if not (0 < self.val_fraction < 1 and 0 < self.test_fraction < 1):
            raise ConfigError("val_fraction and test_fraction must lie in (0, 1)")
        if self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("val_fraction + test_fraction must be below 1")


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    train: LabeledBatch
    val: LabeledBatch
    test: LabeledBatch
    weight_p: float = 1.0


def sample_blobs(centers: np.ndarray, counts, noise_sigma: float,
                 rng: np.random.Generator) -> LabeledBatch:
    """Draw ``counts[c]`` isotropic Gaussian samples around ``centers[c]``, class by class."""
    centers = np.asarray(centers, dtype=np.float64)
    xs, ys = [], []
    for c, n in enumerate(counts):
        xs.append(centers[c] + noise_sigma * rng.standard_normal((int(n), centers.shape[1])))
        ys.append(np.full(int(n), c, dtype=np.int64))
    return LabeledBatch(np.concatenate(xs), np.concatenate(ys))


def class_centers(spec: DatasetSpec) -> np.ndarray:
    rng = stream(spec.seed, "dataset-centers")
    raw = rng.standard_normal((spec.num_classes, spec.num_features))
    return spec.class_center_scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def generate_dataset(spec: DatasetSpec) -> LabeledBatch:
    """Gaussian blobs, ``samples_per_class`` per class, centers on a sphere of radius ``class_center_scale``."""
    centers = class_centers(spec)
    rng = stream(spec.seed, "dataset-samples")
    return sample_blobs(centers, [spec.samples_per_class] * spec.num_classes, spec.noise_sigma, rng)


def apportion(total: int, proportions) -> np.ndarray:
    """Largest-remainder rounding of ``total * proportions`` to integers summing to ``total``.

    Ties in the fractional part go to the lower index.
    """
    q = np.asarray(proportions, dtype=np.float64)
    q = q / q.sum()
    exact = total * q
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _check_nonempty(parts):
    for i, p in enumerate(parts):
        if len(p) == 0:
            raise PartitionError(f"client {i} received no samples: degenerate partition; re-seed or raise alpha")
    return parts


def _labels_of(data) -> np.ndarray:
    return data.labels if isinstance(data, LabeledBatch) else np.asarray(data, dtype=np.int64)


def partition_dirichlet(data, num_clients: int, alpha: float, seed: int) -> list[np.ndarray]:
    """Split every class among clients by proportions drawn from Dir(alpha).

    Each class's indices are shuffled and cut into contiguous slices sized by
    :func:`apportion`.  Returns one sorted index array per client.
    """
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    labels = _labels_of(data)
    rng = stream(seed, "partition-dirichlet")
    buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        q = rng.dirichlet(np.full(num_clients, float(alpha)))
        bounds = np.concatenate([[0], np.cumsum(apportion(idx.size, q))])
        for i in range(num_clients):
            buckets[i].append(idx[bounds[i]:bounds[i + 1]])
    return _check_nonempty([np.sort(np.concatenate(b)) for b in buckets])


def pathological_classes(num_clients: int, num_classes: int, classes_per_client: int,
                         seed: int) -> list[list[int]]:
    """Round-robin over a shuffled class list; client i takes the next ``classes_per_client`` slots."""
    if classes_per_client > num_classes:
        raise ConfigError("classes_per_client exceeds num_classes")
    if num_clients * classes_per_client < num_classes:
        raise ConfigError("too few client slots to cover every class")
    order = stream(seed, "partition-patho-classes").permutation(num_classes)
    return [sorted(int(order[(i * classes_per_client + j) % num_classes])
                   for j in range(classes_per_client))
            for i in range(num_clients)]


def partition_pathological(data, num_clients: int, classes_per_client: int, seed: int,
                           inner_alpha: float = 0.5) -> list[np.ndarray]:
    """Each client holds exactly ``classes_per_client`` classes.

    Within a class, every holder first gets one sample and the remainder is
    split by Dir(inner_alpha) proportions, so no holder loses a class.
    """
    labels = _labels_of(data)
    num_classes = int(labels.max()) + 1
    assigned = pathological_classes(num_clients, num_classes, classes_per_client, seed)
    rng = stream(seed, "partition-patho-split")
    buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(num_classes):
        holders = [i for i in range(num_clients) if c in assigned[i]]
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < len(holders):
            raise PartitionError(f"class {c} has {idx.size} samples for {len(holders)} holders")
        q = rng.dirichlet(np.full(len(holders), inner_alpha))
        sizes = 1 + apportion(idx.size - len(holders), q)
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        for h, i in enumerate(holders):
            buckets[i].append(idx[bounds[h]:bounds[h + 1]])
    return _check_nonempty([np.sort(np.concatenate(b)) if b else np.array([], dtype=np.int64)
                            for b in buckets])


def load_natural_csv(path) -> tuple[LabeledBatch, np.ndarray]:
    """Read header-less rows ``feature_0,...,feature_{d-1},label,client_id``."""
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 3:
                raise ConfigError(f"{path}:{lineno}: expected at least one feature, a label and a client id")
            try:
                rows.append([float(v) for v in row[:-2]] + [int(row[-2]), int(row[-1])])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{path}: rows have differing column counts {sorted(widths)}")
    arr = np.array(rows, dtype=object)
    x = np.array(arr[:, :-2], dtype=np.float64)
    y = np.array(arr[:, -2], dtype=np.int64)
    owner = np.array(arr[:, -1], dtype=np.int64)
    return LabeledBatch(x, y), owner


def partition_natural(owner: np.ndarray, num_clients: int) -> list[np.ndarray]:
    if owner.min() < 0 or owner.max() >= num_clients:
        raise ConfigError(f"client ids in file must lie in [0, {num_clients})")
    return _check_nonempty([np.flatnonzero(owner == i) for i in range(num_clients)])


def _stratified_counts(class_sizes: np.ndarray, fraction: float, cap: np.ndarray) -> np.ndarray:
    total = int(np.floor(fraction * class_sizes.sum() + 0.5))
    exact = fraction * class_sizes
    counts = np.minimum(np.floor(exact).astype(np.int64), cap)
    for c in np.argsort(-(exact - np.floor(exact)), kind="stable"):
        if counts.sum() >= total:
            break
        if counts[c] < cap[c]:
            counts[c] += 1
    return counts


def split_shard(indices, data: LabeledBatch, val_fraction: float, test_fraction: float,
                seed: int, client_id: int = 0) -> ClientShard:
    """Stratified seeded train/val/test split of one client's samples.

    Per-class val and test counts are ``fraction * n_c`` rounded down or up,
    with the rounding spread so the split totals match ``fraction * n``.
    ``weight_p`` is left at 1.0; :func:`build_cohort` normalizes it.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = data.labels[indices]
    classes = np.unique(labels)
    sizes = np.array([(labels == c).sum() for c in classes], dtype=np.int64)
    n_val = _stratified_counts(sizes, val_fraction, sizes)
    n_test = _stratified_counts(sizes, test_fraction, sizes - n_val)
    rng = stream(seed, "split", client_id)
    parts = {"train": [], "val": [], "test": []}
    for c, nv, nt in zip(classes, n_val, n_test):
        members = rng.permutation(indices[labels == c])
        parts["val"].append(members[:nv])
        parts["test"].append(members[nv:nv + nt])
        parts["train"].append(members[nv + nt:])
    out = {}
    for name, chunks in parts.items():
        idx = np.sort(np.concatenate(chunks))
        if idx.size == 0:
            raise PartitionError(f"client {client_id}: empty {name} split ({indices.size} samples)")
        out[name] = data.subset(idx)
    return ClientShard(client_id, out["train"], out["val"], out["test"])


def build_cohort(data: LabeledBatch, index_sets, val_fraction: float, test_fraction: float,
                 seed: int) -> list[ClientShard]:
    """Split every client's samples and set ``weight_p`` proportional to training-set size."""
    shards = [split_shard(idx, data, val_fraction, test_fraction, seed, i)
              for i, idx in enumerate(index_sets)]
    total = sum(len(s.train) for s in shards)
    return [replace(s, weight_p=len(s.train) / total) for s in shards]


def check_permutation(permutation, num_classes: int | None = None) -> np.ndarray:
    perm = np.asarray(permutation, dtype=np.int64)
    n = perm.size if num_classes is None else num_classes
    if perm.ndim != 1 or perm.size != n or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ConfigError("label map is not a bijection on the class set")
    return perm


def flip_labels(shard: ClientShard, permutation) -> ClientShard:
    """Relabel every split of ``shard`` through ``permutation`` (label ``y`` becomes ``permutation[y]``)."""
    perm = check_permutation(permutation)
    flip = lambda b: LabeledBatch(b.features, perm[b.labels])  # noqa: E731
    return replace(shard, train=flip(shard.train), val=flip(shard.val), test=flip(shard.test))


def random_derangement(num_classes: int, seed: int) -> np.ndarray:
    """A seeded class permutation with no fixed point."""
    rng = stream(seed, "label-flip")
    while True:
        perm = rng.permutation(num_classes)
        if not np.any(perm == np.arange(num_classes)):
            return perm


def make_cohort(dataset: DatasetSpec, partition: PartitionSpec) -> list[ClientShard]:
    """Generate (or load) data and turn it into ``partition.num_clients`` shards."""
    if partition.scheme == "natural_file":
        data, owner = load_natural_csv(partition.path)
        index_sets = partition_natural(owner, partition.num_clients)
    else:
        data = generate_dataset(dataset)
        if partition.scheme == "dirichlet":
            index_sets = partition_dirichlet(data, partition.num_clients, partition.alpha, partition.seed)
        else:
            index_sets = partition_pathological(data, partition.num_clients,
                                                partition.classes_per_client, partition.seed)
    return build_cohort(data, index_sets, partition.val_fraction, partition.test_fraction,
                        partition.seed)
