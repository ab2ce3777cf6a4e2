"""Dataset loading, synthetic fixtures, and class-incremental task splits.

Binary formats: the IDX image/label container (big-endian magics 0x00000803
and 0x00000801) and the 100-class binary image format (records of one coarse
label byte, one fine label byte, 3072 pixel bytes). Image values always load
scaled to [0, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DomainError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_C100_RECORD = 3074


@dataclass
class Dataset:
    """Immutable-by-convention rows of (input vector, int label)."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DataError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DataError(f"labels shape {self.labels.shape} does not match "
                            f"{self.inputs.shape[0]} input rows")
        if self.num_classes <= 0:
            raise DataError(f"num_classes must be positive, got {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.inputs[idx].copy(), self.labels[idx].copy(),
                       self.num_classes, self.split)

    def scaled_to_unit(self) -> "Dataset":
        """Affinely rescale inputs to [0, 1] (for IDX export of raw features)."""
        lo, hi = self.inputs.min(), self.inputs.max()
        span = hi - lo if hi > lo else 1.0
        return Dataset((self.inputs - lo) / span, self.labels.copy(),
                       self.num_classes, self.split)


def _read_u32s(blob: bytes, offset: int, count: int, path, what: str) -> tuple[int, ...]:
    need = 4 * count
    if offset + need > len(blob):
        raise FormatError(f"{path}: truncated at byte {offset}: needed {need} "
                          f"bytes for {what}, file has {len(blob) - offset}")
    return struct.unpack(f">{count}I", blob[offset:offset + need])


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label file pair; pixel bytes scale to [0, 1]."""
    img_blob = Path(images_path).read_bytes()
    (magic,) = _read_u32s(img_blob, 0, 1, images_path, "magic")
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at byte 0, "
                          f"expected 0x{IDX_IMAGES_MAGIC:08x}")
    n, rows, cols = _read_u32s(img_blob, 4, 3, images_path, "image dimensions")
    expected = 16 + n * rows * cols
    if len(img_blob) != expected:
        raise FormatError(f"{images_path}: expected {expected} bytes for "
                          f"{n} images of {rows}x{cols}, found {len(img_blob)} "
                          f"(pixel data starts at byte 16)")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16)

    lbl_blob = Path(labels_path).read_bytes()
    (magic,) = _read_u32s(lbl_blob, 0, 1, labels_path, "magic")
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic 0x{magic:08x} at byte 0, "
                          f"expected 0x{IDX_LABELS_MAGIC:08x}")
    (n_labels,) = _read_u32s(lbl_blob, 4, 1, labels_path, "label count")
    if len(lbl_blob) != 8 + n_labels:
        raise FormatError(f"{labels_path}: expected {8 + n_labels} bytes for "
                          f"{n_labels} labels, found {len(lbl_blob)} "
                          f"(label data starts at byte 8)")
    if n_labels != n:
        raise FormatError(f"image count {n} ({images_path}) != label count "
                          f"{n_labels} ({labels_path})")
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)

    inputs = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    num_classes = int(labels.max()) + 1 if n else 1
    return Dataset(inputs, labels, num_classes, split)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Export to the IDX pair format; inputs must already lie in [0, 1]."""
    x = dataset.inputs
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DomainError("IDX export requires inputs in [0, 1]; "
                          "rescale with scaled_to_unit() first")
    if dataset.labels.size and dataset.labels.max() > 255:
        raise DomainError("IDX labels are single bytes; labels must be <= 255")
    n, d = x.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, 1, d))
        f.write(np.rint(x * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_cifar100_binary(path, downscale_to: int | None = None,
                         split: str = "train") -> Dataset:
    """Load 3074-byte records (coarse label, fine label, 3 x 32 x 32 pixels).

    Fine labels are used. ``downscale_to=k`` block-averages each channel to
    k x k (k must divide 32), which preserves the per-image mean exactly.
    """
    blob = Path(path).read_bytes()
    if len(blob) % _C100_RECORD != 0:
        raise FormatError(f"{path}: file length {len(blob)} is not a multiple "
                          f"of the {_C100_RECORD}-byte record size "
                          f"(short by {_C100_RECORD - len(blob) % _C100_RECORD} bytes)")
    n = len(blob) // _C100_RECORD
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, _C100_RECORD)
    labels = raw[:, 1].astype(np.int64)
    pixels = raw[:, 2:].astype(np.float64) / 255.0
    if downscale_to is not None:
        k = int(downscale_to)
        if k <= 0 or 32 % k != 0:
            raise ConfigError(f"downscale_to must divide 32, got {downscale_to}")
        block = 32 // k
        imgs = pixels.reshape(n, 3, k, block, k, block)
        pixels = imgs.mean(axis=(3, 5)).reshape(n, 3 * k * k)
    return Dataset(pixels, labels, 100, split)


def make_synthetic_blobs(num_classes: int, dim: int, samples_per_class: int,
                         spread: float, seed: int) -> tuple[Dataset, Dataset]:
    """Gaussian class blobs rescaled to [0, 1], image-style.

    Means sit at radius 4 along orthonormal directions (pairwise distance
    4*sqrt(2)) before rescaling, so ``spread`` alone controls class overlap.
    One affine map, fit on the union of all generated points, sends both
    splits to [0, 1]; distances only shrink by a common factor, so overlap
    and silhouette structure are spread-determined as before. Each class is
    split 80/20 into train/test. Returns (train, test).
    """
    if spread <= 0:
        raise DomainError(f"spread must be positive, got {spread}")
    if dim < num_classes:
        raise ConfigError(f"dim ({dim}) must be >= num_classes ({num_classes}) "
                          "for orthogonal class directions")
    if samples_per_class < 5:
        raise ConfigError("need at least 5 samples per class for an 80/20 split")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
    means = 4.0 * q.T  # [num_classes x dim]

    n_test = int(round(0.2 * samples_per_class))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        pts = means[c] + spread * rng.standard_normal((samples_per_class, dim))
        train_x.append(pts[:samples_per_class - n_test])
        test_x.append(pts[samples_per_class - n_test:])
        train_y.append(np.full(samples_per_class - n_test, c, dtype=np.int64))
        test_y.append(np.full(n_test, c, dtype=np.int64))
    all_x = np.concatenate(train_x + test_x)
    lo, hi = all_x.min(), all_x.max()
    scale = 1.0 / (hi - lo)
    train = Dataset((np.concatenate(train_x) - lo) * scale,
                    np.concatenate(train_y), num_classes, "train")
    test = Dataset((np.concatenate(test_x) - lo) * scale,
                   np.concatenate(test_y), num_classes, "test")
    return train, test


@dataclass
class TaskSplit:
    """Disjoint class groups plus per-task row indices into the train and
    test datasets."""

    task_classes: list[list[int]]
    train_indices: list[np.ndarray]
    test_indices: list[np.ndarray]

    def __post_init__(self):
        flat = [c for group in self.task_classes for c in group]
        if len(set(flat)) != len(flat):
            raise ConfigError("task class groups overlap")

    @property
    def num_tasks(self) -> int:
        return len(self.task_classes)

    def classes_up_to(self, task_index: int) -> list[int]:
        """All class ids in tasks 0..task_index, in task order."""
        out: list[int] = []
        for group in self.task_classes[:task_index + 1]:
            out.extend(group)
        return out

    def class_to_task(self) -> dict[int, int]:
        return {c: t for t, group in enumerate(self.task_classes) for c in group}


def split_into_tasks(dataset: Dataset, num_tasks: int, classes_per_task: int,
                     order_seed: int | None = None,
                     test_dataset: Dataset | None = None) -> TaskSplit:
    """Partition the first num_tasks*classes_per_task classes into tasks.

    Class order is ascending unless ``order_seed`` shuffles it. Index lists
    are computed for ``dataset`` (train) and ``test_dataset`` (falls back to
    ``dataset`` so single-set splits still work).
    """
    needed = num_tasks * classes_per_task
    if needed > dataset.num_classes:
        raise ConfigError(f"{num_tasks} tasks x {classes_per_task} classes "
                          f"need {needed} classes; dataset has {dataset.num_classes}")
    order = np.arange(dataset.num_classes)
    if order_seed is not None:
        order = np.random.default_rng(int(order_seed)).permutation(order)
    used = order[:needed]

    test_dataset = test_dataset if test_dataset is not None else dataset
    task_classes, train_idx, test_idx = [], [], []
    for t in range(num_tasks):
        group = [int(c) for c in used[t * classes_per_task:(t + 1) * classes_per_task]]
        task_classes.append(group)
        train_idx.append(np.flatnonzero(np.isin(dataset.labels, group)))
        test_idx.append(np.flatnonzero(np.isin(test_dataset.labels, group)))
    return TaskSplit(task_classes, train_idx, test_idx)
