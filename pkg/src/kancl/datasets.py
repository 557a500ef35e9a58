"""MNIST IDX ingestion, class-incremental splits and the synthetic Gaussian-peaks task."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", 47040016),
    "train_labels": ("train-labels-idx1-ubyte", 60008),
    "test_images": ("t10k-images-idx3-ubyte", 7840016),
    "test_labels": ("t10k-labels-idx1-ubyte", 10008),
}
DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledImages:
    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and self.labels.max() > 9:
            raise DataError("labels must lie in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    def features(self, idx=None) -> np.ndarray:
        """Flattened float64 pixels rescaled from 0..255 to [-1, 1]."""
        imgs = self.images if idx is None else self.images[idx]
        return imgs.reshape(len(imgs), -1).astype(np.float64) / 127.5 - 1.0


@dataclass(frozen=True)
class ClTask:
    task_index: int
    classes: tuple[int, ...]
    indices: np.ndarray

    def shuffled(self, rng: np.random.Generator) -> np.ndarray:
        return self.indices[rng.permutation(len(self.indices))]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise DataError(f"{what}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise DataError(f"{what}: truncated payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (magic 0x0000080<ndim>)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx(images_path, labels_path) -> LabeledImages:
    images = parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected 3 image dimensions, got {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"image count {images.shape[0]} does not match label count {labels.shape[0]}")
    return LabeledImages(images, labels)


def find_mnist_file(data_dir, stem: str) -> Path:
    data_dir = Path(data_dir)
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    raise DataError(f"missing MNIST file {data_dir / stem} (or {stem}.gz)")


def load_mnist(data_dir) -> tuple[LabeledImages, LabeledImages]:
    def pair(img_key, lbl_key):
        return load_idx(find_mnist_file(data_dir, MNIST_FILES[img_key][0]),
                        find_mnist_file(data_dir, MNIST_FILES[lbl_key][0]))

    return pair("train_images", "train_labels"), pair("test_images", "test_labels")


def split_class_il(data: LabeledImages, pairs=DEFAULT_PAIRS) -> list[ClTask]:
    seen: set[int] = set()
    tasks = []
    for t, classes in enumerate(pairs, start=1):
        classes = tuple(int(c) for c in classes)
        if seen & set(classes):
            raise DataError(f"task {t} repeats classes {sorted(seen & set(classes))}")
        seen |= set(classes)
        idx = np.flatnonzero(np.isin(data.labels, classes))
        tasks.append(ClTask(t, classes, idx))
    return tasks


def build_balanced_test(test: LabeledImages, per_class_target: int | None = None,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of the evaluation set: the whole test split, or exactly ``per_class_target`` per class."""
    counts = np.bincount(test.labels, minlength=10)
    if np.any(counts[:10] == 0):
        raise DataError(f"test set lacks classes {np.flatnonzero(counts[:10] == 0).tolist()}")
    if per_class_target is None:
        return np.arange(len(test))
    if per_class_target > counts.min():
        raise DataError(f"per_class_target={per_class_target} exceeds the smallest class ({counts.min()})")
    if rng is None:
        raise ValueError("subsampling needs an rng")
    picks = [rng.choice(np.flatnonzero(test.labels == c), per_class_target, replace=False) for c in range(10)]
    return np.sort(np.concatenate(picks))


@dataclass(frozen=True)
class PeaksDataset:
    x: np.ndarray
    y: np.ndarray
    peak_index: np.ndarray  # 1-based
    n_peaks: int
    amplitude: float
    sigma: float

    def centers(self) -> np.ndarray:
        return peak_centers(self.n_peaks)

    def window(self, j: int) -> tuple[float, float]:
        """Window of 1-based peak ``j``."""
        return (j - 1) / self.n_peaks, j / self.n_peaks

    def target(self, x) -> np.ndarray:
        return peaks_function(x, self.n_peaks, self.amplitude, self.sigma)

    def task(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.peak_index == j
        return self.x[mask], self.y[mask]


def peak_centers(n_peaks: int) -> np.ndarray:
    return (2 * np.arange(1, n_peaks + 1) - 1) / (2 * n_peaks)


def peaks_function(x, n_peaks: int, amplitude: float, sigma: float) -> np.ndarray:
    """Gaussian bump of the window containing each ``x``."""
    x = np.asarray(x, dtype=np.float64)
    j = np.clip(np.floor(x * n_peaks).astype(np.int64), 0, n_peaks - 1)
    c = (2 * j + 1) / (2 * n_peaks)
    return amplitude * np.exp(-((x - c) ** 2) / (2 * sigma ** 2))


def gaussian_peaks(n_peaks: int = 5, points_per_peak: int = 200, amplitude: float = 1.0, sigma: float = 0.02,
                   rng: np.random.Generator | None = None) -> PeaksDataset:
    if n_peaks < 1 or points_per_peak < 1:
        raise DataError("n_peaks and points_per_peak must be >= 1")
    if not sigma > 0:
        raise DataError(f"sigma must be positive, got {sigma}")
    if not amplitude > 0:
        raise DataError(f"amplitude must be positive, got {amplitude}")
    rng = rng if rng is not None else np.random.default_rng(0)
    xs, ids = [], []
    for j in range(1, n_peaks + 1):
        lo, hi = (j - 1) / n_peaks, j / n_peaks
        xs.append(np.sort(rng.uniform(lo, hi, size=points_per_peak)))
        ids.append(np.full(points_per_peak, j))
    x = np.concatenate(xs)
    idx = np.concatenate(ids)
    c = peak_centers(n_peaks)[idx - 1]
    y = amplitude * np.exp(-((x - c) ** 2) / (2 * sigma ** 2))
    return PeaksDataset(x, y, idx, n_peaks, float(amplitude), float(sigma))
