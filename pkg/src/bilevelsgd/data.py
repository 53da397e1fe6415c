"""Dataset ingestion, label-noise injection, pixel permutation, and the
label-stratified batch-group sampler.

Two on-disk formats are supported:

* IDX: big-endian magic 0x00000803 (images, uint8, 3 dims) and 0x00000801
  (labels, uint8, 1 dim), dimension sizes as u32, then raw bytes.
* CSV: header ``label,p0,...,pN``, one example per row, pixel values 0-255.

Inputs are normalized to [0, 1] on load.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(
                f"labels outside [0, {self.class_count}): "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def example_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        return Dataset(
            self.inputs[indices],
            self.labels[indices],
            self.class_count,
            split or self.split,
        )


@dataclass
class MiniBatch:
    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(np.unique(self.indices)) != self.indices.size:
            raise DataError("mini-batch indices must be unique")

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_dataset(cls, ds: Dataset, indices) -> "MiniBatch":
        indices = np.asarray(indices, dtype=np.int64)
        return cls(indices, ds.inputs[indices], ds.labels[indices])

    def label_histogram(self, class_count: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=class_count)


@dataclass
class BatchGroup:
    """k mini-batches drawn for one step; exactly one plays validation."""

    batches: list[MiniBatch]
    validation_index: int
    label_histogram: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.validation_index < len(self.batches):
            raise DataError(f"validation index {self.validation_index} out of range")
        if self.label_histogram is not None:
            c = len(self.label_histogram)
            for i, b in enumerate(self.batches):
                if not np.array_equal(b.label_histogram(c), self.label_histogram):
                    raise DataError(f"batch {i} breaks the shared label histogram")

    @property
    def validation_batch(self) -> MiniBatch:
        return self.batches[self.validation_index]

    @property
    def training_batches(self) -> list[MiniBatch]:
        return [b for i, b in enumerate(self.batches) if i != self.validation_index]


@dataclass
class NoiseSpec:
    noise_level: float
    class_count: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigurationError(f"noise level must be in [0, 1], got {self.noise_level}")
        if self.noise_level > 0 and self.class_count < 2:
            raise ConfigurationError("label noise needs at least 2 classes")


@dataclass
class PixelPermutation:
    """One bijection of pixel positions, applied identically to every image."""

    permutation: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        self.permutation = np.asarray(self.permutation, dtype=np.int64)
        n = self.permutation.size
        if not np.array_equal(np.sort(self.permutation), np.arange(n)):
            raise ConfigurationError("pixel permutation is not a bijection")

    @classmethod
    def random(cls, pixel_count: int, seed: int) -> "PixelPermutation":
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(pixel_count), seed)

    @classmethod
    def identity(cls, pixel_count: int) -> "PixelPermutation":
        return cls(np.arange(pixel_count))

    def inverse(self) -> "PixelPermutation":
        return PixelPermutation(np.argsort(self.permutation), self.seed)


# ---------------------------------------------------------------------------
# ingestion


def load_dataset(path, format: str = "idx", class_count: int | None = None,
                 split: str = "train") -> Dataset:
    """Load an IDX image/label pair or a CSV file into a normalized Dataset."""
    if format == "idx":
        images_path, labels_path = _resolve_idx_pair(Path(path))
        images = _read_idx(images_path, IDX_IMAGES_MAGIC)
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
        if images.shape[0] != labels.shape[0]:
            raise DataError(
                f"{images.shape[0]} images but {labels.shape[0]} labels "
                f"({images_path.name} / {labels_path.name})"
            )
        inputs = images.astype(np.float64) / 255.0
        labels = labels.astype(np.int64)
    elif format == "csv":
        inputs, labels = _read_csv(Path(path))
    else:
        raise ConfigurationError(f"unknown dataset format {format!r}")

    if class_count is None:
        if labels.size == 0:
            raise DataError(f"dataset at {path} is empty")
        class_count = int(labels.max()) + 1
    ds = Dataset(inputs, labels, class_count, split)
    if split == "train":
        present = np.unique(labels)
        missing = sorted(set(range(class_count)) - set(present.tolist()))
        if missing:
            raise DataError(f"training split is missing classes {missing}")
    return ds


def _resolve_idx_pair(path: Path) -> tuple[Path, Path]:
    """`path` is a directory holding one images and one labels file, or a
    prefix completed as <prefix>-images-idx3-ubyte / <prefix>-labels-idx1-ubyte."""
    if path.is_dir():
        images = sorted(p for p in path.iterdir() if "images" in p.name)
        labels = sorted(p for p in path.iterdir() if "labels" in p.name)
        if len(images) != 1 or len(labels) != 1:
            raise DataError(
                f"{path} must contain exactly one *images* and one *labels* file, "
                f"found {len(images)} and {len(labels)}"
            )
        return images[0], labels[0]
    images = Path(str(path) + "-images-idx3-ubyte")
    labels = Path(str(path) + "-labels-idx1-ubyte")
    if not images.exists() or not labels.exists():
        raise DataError(f"no IDX pair found for prefix {path}")
    return images, labels


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header at byte {len(raw)}")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise DataError(
            f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataError(f"{path}: truncated IDX dimensions at byte {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:header_end])
    if any(d < 0 for d in dims):
        raise DataError(f"{path}: negative dimension in header {dims}")
    expected = int(np.prod(dims))
    payload = raw[header_end:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload has {len(payload)} bytes at offset {header_end}, "
            f"expected {expected} for dims {dims}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "label" or len(header) < 2:
            raise DataError(f"{path}: header must be label,p0,...,pN, got {header[:3]}...")
        width = len(header) - 1
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {width + 1}"
                )
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    values = np.asarray(rows, dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > 255):
        raise DataError(f"{path}: pixel values must lie in [0, 255]")
    inputs = values / 255.0
    # CSV carries no shape: square images are restored, anything else stays flat
    side = int(round(np.sqrt(width)))
    if side * side == width:
        inputs = inputs.reshape(-1, side, side)
    return inputs, np.asarray(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# label noise and pixel permutation


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def inject_label_noise(ds: Dataset, spec: NoiseSpec) -> tuple[Dataset, np.ndarray]:
    """Relabel round(noise_level * n_c) examples per class, uniformly among the
    other classes; returns the new dataset and the boolean corruption mask."""
    if spec.class_count != ds.class_count:
        raise ConfigurationError(
            f"noise spec says {spec.class_count} classes, dataset has {ds.class_count}"
        )
    mask = np.zeros(len(ds), dtype=bool)
    if spec.noise_level == 0.0:
        return ds.subset(np.arange(len(ds))), mask
    rng = np.random.default_rng(spec.seed)
    labels = ds.labels.copy()
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        n_corrupt = _round_half_up(spec.noise_level * members.size)
        if n_corrupt == 0:
            continue
        chosen = members[rng.choice(members.size, size=n_corrupt, replace=False)]
        # uniform over the other class_count - 1 labels, never the original
        draw = rng.integers(0, ds.class_count - 1, size=n_corrupt)
        labels[chosen] = draw + (draw >= c)
        mask[chosen] = True
    return Dataset(ds.inputs, labels, ds.class_count, ds.split), mask


def permute_pixels(ds: Dataset, perm: PixelPermutation) -> Dataset:
    """Reorder every example's flattened values by the same fixed bijection."""
    pixel_count = int(np.prod(ds.example_shape))
    if perm.permutation.size != pixel_count:
        raise ConfigurationError(
            f"permutation length {perm.permutation.size} != pixel count {pixel_count}"
        )
    flat = ds.inputs.reshape(len(ds), pixel_count)
    out = flat[:, perm.permutation].reshape(ds.inputs.shape)
    return Dataset(out, ds.labels, ds.class_count, ds.split)


# ---------------------------------------------------------------------------
# splitting and batch-group composition


def split_validation_pool(ds: Dataset, validation_ratio: float, rng: np.random.Generator):
    """Stratified split into (train, validation-pool); ratio 0 keeps everything."""
    if not 0.0 <= validation_ratio < 1.0:
        raise ConfigurationError(f"validation ratio must be in [0, 1), got {validation_ratio}")
    if validation_ratio == 0.0:
        empty = Dataset(
            ds.inputs[:0], ds.labels[:0], ds.class_count, "validation-pool"
        )
        return ds.subset(np.arange(len(ds)), "train"), empty
    pool_idx = []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        take = _round_half_up(validation_ratio * members.size)
        if take:
            pool_idx.append(members[rng.choice(members.size, size=take, replace=False)])
    pool_idx = np.sort(np.concatenate(pool_idx)) if pool_idx else np.zeros(0, dtype=np.int64)
    train_mask = np.ones(len(ds), dtype=bool)
    train_mask[pool_idx] = False
    return (
        ds.subset(np.flatnonzero(train_mask), "train"),
        ds.subset(pool_idx, "validation-pool"),
    )


def _stratified_allocation(labels, class_count: int, batch_size: int) -> np.ndarray:
    """Per-class slot counts proportional to the observed label marginals;
    the remainder goes round-robin by class id over the present classes."""
    counts = np.bincount(labels, minlength=class_count)
    total = counts.sum()
    if total == 0:
        raise DataError("cannot allocate batches from an empty dataset")
    alloc = np.floor(batch_size * counts / total).astype(np.int64)
    present = np.flatnonzero(counts)
    remainder = batch_size - int(alloc.sum())
    i = 0
    while remainder > 0:
        alloc[present[i % present.size]] += 1
        remainder -= 1
        i += 1
    return alloc


class _ClassQueues:
    """Per-class shuffled index queues for without-replacement draws."""

    def __init__(self, ds: Dataset, rng: np.random.Generator, recycle: bool = False):
        self.rng = rng
        self.recycle = recycle
        self.members = [np.flatnonzero(ds.labels == c) for c in range(ds.class_count)]
        self.queues = [rng.permutation(m) for m in self.members]
        self.cursor = [0] * ds.class_count

    def available(self, c: int) -> int:
        return self.queues[c].size - self.cursor[c]

    def draw(self, c: int, n: int) -> np.ndarray:
        if self.available(c) < n:
            if not self.recycle:
                raise DataError(f"class {c} exhausted: needs {n}, has {self.available(c)}")
            self.queues[c] = self.rng.permutation(self.members[c])
            self.cursor[c] = 0
            if self.queues[c].size < n:
                raise DataError(f"class {c} has only {self.queues[c].size} examples, needs {n}")
        start = self.cursor[c]
        self.cursor[c] = start + n
        return self.queues[c][start : start + n]


class BatchGroupSampler:
    """Yields BatchGroups for one epoch.

    In stratified mode every batch in a group carries the same per-class
    label counts; otherwise batches are plain chunks of a shuffled pass
    (free sampling). The validation batch comes from the validation pool
    when one is provided, else it is the first of the k batches drawn from
    the training data.
    """

    def __init__(
        self,
        ds: Dataset,
        batch_size: int,
        k: int,
        rng: np.random.Generator,
        validation_pool: Dataset | None = None,
        stratified: bool = True,
    ):
        if k < 2:
            raise ConfigurationError(f"need at least 2 compared mini-batches, got k={k}")
        if batch_size < 1:
            raise ConfigurationError(f"batch size must be positive, got {batch_size}")
        if validation_pool is not None and len(validation_pool) == 0:
            validation_pool = None
        self.ds = ds
        self.batch_size = batch_size
        self.k = k
        self.rng = rng
        self.pool = validation_pool
        self.stratified = stratified
        self.train_batches_per_group = k - 1 if self.pool is not None else k

        if stratified:
            self.allocation = _stratified_allocation(ds.labels, ds.class_count, batch_size)
            need = self.allocation * self.train_batches_per_group
            counts = np.bincount(ds.labels, minlength=ds.class_count)
            for c in np.flatnonzero(need > counts):
                raise DataError(
                    f"class {c} has {counts[c]} examples, cannot fill {self.allocation[c]} "
                    f"slots in {self.train_batches_per_group} batches"
                )
            if self.pool is not None:
                pool_counts = np.bincount(self.pool.labels, minlength=ds.class_count)
                for c in np.flatnonzero((self.allocation > 0) & (pool_counts < self.allocation)):
                    raise DataError(
                        f"validation pool has {pool_counts[c]} examples of class {c}, "
                        f"needs {self.allocation[c]} per batch"
                    )
        else:
            self.allocation = None

    def groups_per_epoch(self) -> int:
        if self.stratified:
            counts = np.bincount(self.ds.labels, minlength=self.ds.class_count)
            per_group = self.allocation * self.train_batches_per_group
            ratios = [
                counts[c] // per_group[c]
                for c in range(self.ds.class_count)
                if per_group[c] > 0
            ]
            return int(min(ratios))
        return len(self.ds) // (self.batch_size * self.train_batches_per_group)

    def epoch(self):
        """One full pass: leftover examples that cannot fill a group are dropped."""
        n_groups = self.groups_per_epoch()
        if self.stratified:
            queues = _ClassQueues(self.ds, self.rng)
            pool_queues = (
                _ClassQueues(self.pool, self.rng, recycle=True) if self.pool is not None else None
            )
            for _ in range(n_groups):
                yield self._stratified_group(queues, pool_queues)
        else:
            order = self.rng.permutation(len(self.ds))
            pool_order = self.rng.permutation(len(self.pool)) if self.pool is not None else None
            pool_cursor = 0
            pos = 0
            for _ in range(n_groups):
                batches = []
                if self.pool is not None:
                    if pool_cursor + self.batch_size > len(self.pool):
                        pool_order = self.rng.permutation(len(self.pool))
                        pool_cursor = 0
                        if len(self.pool) < self.batch_size:
                            raise DataError("validation pool smaller than one batch")
                    idx = pool_order[pool_cursor : pool_cursor + self.batch_size]
                    pool_cursor += self.batch_size
                    batches.append(MiniBatch.from_dataset(self.pool, idx))
                for _ in range(self.train_batches_per_group):
                    idx = order[pos : pos + self.batch_size]
                    pos += self.batch_size
                    batches.append(MiniBatch.from_dataset(self.ds, idx))
                yield BatchGroup(batches, validation_index=0, label_histogram=None)

    def _stratified_group(self, queues: _ClassQueues, pool_queues) -> BatchGroup:
        batches = []
        if pool_queues is not None:
            batches.append(self._draw_batch(self.pool, pool_queues))
        for _ in range(self.train_batches_per_group):
            batches.append(self._draw_batch(self.ds, queues))
        return BatchGroup(batches, validation_index=0, label_histogram=self.allocation.copy())

    def _draw_batch(self, ds: Dataset, queues: _ClassQueues) -> MiniBatch:
        parts = [queues.draw(c, int(n)) for c, n in enumerate(self.allocation) if n > 0]
        return MiniBatch.from_dataset(ds, np.concatenate(parts))


def compose_batch_group(
    ds: Dataset,
    batch_size: int,
    k: int,
    validation_pool: Dataset | None = None,
    rng: np.random.Generator | None = None,
    stratified: bool = True,
) -> BatchGroup:
    """Draw a single BatchGroup (first group of a fresh epoch pass)."""
    rng = rng if rng is not None else np.random.default_rng()
    sampler = BatchGroupSampler(ds, batch_size, k, rng, validation_pool, stratified)
    return next(sampler.epoch())
