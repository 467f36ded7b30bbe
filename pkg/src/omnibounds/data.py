"""Datasets: IDX ingestion, synthetic Gaussian mixtures and split plans."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import RngStream

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
_MAX_ELEMENTS = 1 << 31


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``n`` rows of inputs with integer class labels or float targets."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("inputs must be an n x d_in matrix with n >= 1")
        if y.shape[0] != x.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain non-finite values")
        if self.num_classes is not None:
            y = y.astype(np.int64)
            if y.ndim != 1:
                raise ValueError("class labels must be a vector")
            if y.min() < 0 or y.max() >= self.num_classes:
                raise ValueError(
                    f"label out of range: labels span [{y.min()}, {y.max()}] "
                    f"for a {self.num_classes}-class task"
                )
        else:
            y = y.astype(np.float64)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def replace_row(self, i: int, x, y) -> "Dataset":
        inputs = self.inputs.copy()
        labels = self.labels.copy()
        inputs[i] = x
        labels[i] = y
        return Dataset(inputs, labels, self.num_classes)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.vstack([self.inputs, other.inputs]),
            np.concatenate([self.labels, other.labels]),
            self.num_classes,
        )


def _open_maybe_gzip(path: Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (optionally gzip-compressed) into an array."""
    raw = _open_maybe_gzip(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = 1
    for size in dims:
        count *= size
        if count > _MAX_ELEMENTS:
            raise IdxFormatError(f"{path}: dimension overflow {dims}")
    payload = raw[header:]
    if count == 0 or len(payload) < count:
        raise IdxFormatError(
            f"{path}: truncated payload ({len(payload)} bytes for dims {dims})"
        )
    if len(payload) > count:
        raise IdxFormatError(f"{path}: {len(payload) - count} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array, compress: bool = False) -> None:
    a = np.ascontiguousarray(array, dtype=np.uint8)
    if a.ndim not in (1, 3):
        raise ValueError("IDX writer supports label vectors and image stacks only")
    magic = IDX_LABELS if a.ndim == 1 else IDX_IMAGES
    blob = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()
    Path(path).write_bytes(gzip.compress(blob, mtime=0) if compress else blob)


def load_idx(images_path, labels_path=None, num_classes: int | None = 10) -> Dataset:
    """Load an IDX image stack (pixels scaled to [0, 1], rows flattened).

    Without ``labels_path`` every label is 0.
    """
    images = read_idx(images_path)
    if images.ndim == 1:
        raise IdxFormatError(f"{images_path}: expected an image file, found a label file")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if labels_path is None:
        y = np.zeros(x.shape[0], dtype=np.int64)
    else:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IdxFormatError(f"{labels_path}: expected a label file")
        if labels.shape[0] != x.shape[0]:
            raise IdxFormatError(
                f"{labels.shape[0]} labels for {x.shape[0]} images"
            )
        y = labels.astype(np.int64)
    return Dataset(x, y, num_classes)


def class_means(d_in: int, classes: int, separation: float) -> np.ndarray:
    """Centered class means with pairwise (or neighbouring) distance ``separation``."""
    if classes <= d_in:
        means = np.eye(classes, d_in) * (separation / math.sqrt(2.0))
    elif d_in >= 2:
        radius = separation / (2.0 * math.sin(math.pi / classes))
        angles = 2.0 * math.pi * np.arange(classes) / classes
        means = np.zeros((classes, d_in))
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    else:
        means = (separation * np.arange(classes, dtype=np.float64))[:, None]
    return means - means.mean(axis=0)


def synth_gaussian_mixture(
    seed: int, n: int, d_in: int, classes: int, separation: float
) -> Dataset:
    """Unit-variance isotropic class-conditional Gaussians with uniform labels."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = RngStream(seed, stream=0x6D6978)
    labels = rng.integers(0, classes, size=n)
    means = class_means(d_in, classes, separation)
    x = means[labels] + rng.normal((n, d_in))
    return Dataset(x, labels, classes)


@dataclass(frozen=True)
class SplitPlan:
    """``k`` disjoint training index sets plus disjoint test and validation sets."""

    splits: tuple
    test: np.ndarray
    validation: np.ndarray
    seed: int
    pool_size: int = field(default=0)

    @property
    def k(self) -> int:
        return len(self.splits)

    def check(self) -> None:
        everything = np.concatenate([*self.splits, self.test, self.validation])
        if np.unique(everything).size != everything.size:
            raise AssertionError("split plan index sets overlap")

    def reordered(self, order) -> "SplitPlan":
        return SplitPlan(
            tuple(self.splits[i] for i in order), self.test, self.validation,
            self.seed, self.pool_size,
        )


def partition(
    pool, k: int, test_frac: float = 0.0, val_frac: float = 0.0, seed: int = 0
) -> SplitPlan:
    """Randomly split ``pool`` (a Dataset or a size) into k training splits, test and validation."""
    n = pool if isinstance(pool, (int, np.integer)) else len(pool)
    if k < 2:
        raise ValueError("need k >= 2 training splits")
    if not (0 <= test_frac < 1 and 0 <= val_frac < 1):
        raise ValueError("fractions must lie in [0, 1)")
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    n_train = n - n_test - n_val
    if n_train < k:
        raise ValueError(f"pool too small: {n_train} training samples for k={k}")
    perm = RngStream(seed, stream=0x73706C6974).permutation(n)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    splits = tuple(np.sort(s) for s in np.array_split(perm[n_test + n_val:], k))
    for arr in (test, val, *splits):
        arr.setflags(write=False)
    return SplitPlan(splits, test, val, seed, n)
