"""Dataset construction: Gaussian mixtures, IDX files, standardization, splits."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rtme.errors import ConfigError, FormatError
from rtme.noise import LabeledDataset, NoiseSpec, inject

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class SplitDataset:
    train: LabeledDataset
    val: LabeledDataset  # noisy labels, used for model selection
    test: LabeledDataset  # clean labels only


def mixture_means(k, dim, separation):
    """Class centres with every pairwise distance >= ``separation``.

    dim >= k: scaled simplex vertices (pairwise distance exactly separation).
    Otherwise the centres sit on a circle in the first two coordinates (or on
    a line when dim == 1) with adjacent spacing equal to separation.
    """
    means = np.zeros((k, dim))
    if dim >= k:
        means[np.arange(k), np.arange(k)] = separation / np.sqrt(2)
    elif dim == 1:
        means[:, 0] = separation * (np.arange(k) - (k - 1) / 2)
    else:
        radius = separation / (2 * np.sin(np.pi / k)) if k > 2 else separation / 2
        angles = 2 * np.pi * np.arange(k) / k
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def make_gaussian_mixture(k, n, dim, separation, seed, cluster_std=1.0) -> LabeledDataset:
    if k < 2 or n < k:
        raise ConfigError(f"mixture needs k >= 2 and n >= k, got k={k}, n={n}")
    if not separation > 0:
        raise ConfigError(f"separation must be positive, got {separation}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    x = mixture_means(k, dim, separation)[labels] + cluster_std * rng.standard_normal((n, dim))
    return LabeledDataset.clean(x, labels, k)


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into an ndarray of its declared shape."""
    if len(buf) < 4:
        raise FormatError(f"IDX header truncated: {len(buf)} bytes", offset=len(buf))
    zero, dtype_code, ndim = struct.unpack(">HBB", buf[:4])
    magic = struct.unpack(">I", buf[:4])[0]
    if zero != 0 or dtype_code != 0x08:
        raise FormatError(f"bad IDX magic 0x{magic:08x}: expected unsigned-byte data (0x000008nn)", offset=0)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise FormatError("IDX dimension header truncated", offset=len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    size = int(np.prod(dims)) if dims else 1
    if len(buf) < header_end + size:
        raise FormatError(f"IDX payload truncated: expected {size} bytes after header", offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def _read_idx(path, expected_magic):
    buf = Path(path).read_bytes()
    if len(buf) >= 4:
        magic = struct.unpack(">I", buf[:4])[0]
        if magic != expected_magic:
            raise FormatError(f"{path}: expected magic 0x{expected_magic:08x}, found 0x{magic:08x}", offset=0)
    return parse_idx(buf)


def write_idx(array) -> bytes:
    arr = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def load_idx(images_path, labels_path, k=10) -> LabeledDataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return LabeledDataset.clean(x, labels.astype(np.int64), max(k, int(labels.max()) + 1))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features):
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        # constant columns centre to exactly zero; keep them there
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, dataset: LabeledDataset) -> LabeledDataset:
        x = (dataset.features - self.mean) / self.scale
        return LabeledDataset(x, dataset.clean_labels, dataset.noisy_labels, dataset.k)


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Standardize with statistics from ``train`` only; returns a tuple."""
    st = Standardizer.fit(train.features)
    return (st.transform(train), *(st.transform(d) for d in others))


def split_train_val(dataset: LabeledDataset, val_fraction=0.1, seed=0):
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n_val = int(round(dataset.n * val_fraction))
    perm = np.random.default_rng(seed).permutation(dataset.n)
    return dataset.subset(np.sort(perm[n_val:])), dataset.subset(np.sort(perm[:n_val]))


def build_split(pool: LabeledDataset, test: LabeledDataset, noise: NoiseSpec, val_fraction=0.1, seed=0) -> SplitDataset:
    """Inject noise into the training pool, hold out a noisy validation set,
    then standardize everything with training statistics."""
    noisy = inject(pool, noise)
    train, val = split_train_val(noisy, val_fraction, seed)
    train, val, test = standardize(train, val, LabeledDataset.clean(test.features, test.clean_labels, test.k))
    return SplitDataset(train, val, test)


def dataset_csv(dataset: LabeledDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*[f"x{j}" for j in range(dataset.dim)], "clean_label", "noisy_label"])
    for row, y, yt in zip(dataset.features, dataset.clean_labels, dataset.noisy_labels):
        w.writerow([*[repr(float(v)) for v in row], int(y), int(yt)])
    return buf.getvalue()
