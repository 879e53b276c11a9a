"""Datasets: synthetic shape generation, IDX ingestion, and split manifests.

The split manifest keeps three disjoint index sets: `train` for fitting,
`val` for the cutoff search, and `test` for final reports. Keeping the last
two disjoint is what makes the reported faithfulness an out-of-sample number.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, FormatError, ValidationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # (N,) class indices
    splits: dict = field(default_factory=dict)  # name -> index array
    source: str = "synthetic"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.splits:
            validate_splits(self.splits, len(self.images))

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.splits:
            raise ValidationError(f"split {name!r} missing from manifest "
                                  f"(have {sorted(self.splits)})")
        idx = self.splits[name]
        return self.images[idx], self.labels[idx]

    def manifest_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.splits):
            h.update(name.encode())
            h.update(np.asarray(self.splits[name], dtype=np.int64).tobytes())
        return h.hexdigest()


def validate_splits(splits: dict, n: int):
    seen = np.concatenate([np.asarray(v, dtype=int) for v in splits.values()]) \
        if splits else np.empty(0, dtype=int)
    if len(seen) != n or len(np.unique(seen)) != n or seen.min(initial=0) < 0 \
            or (len(seen) and seen.max() >= n):
        raise ValidationError("splits must be disjoint and cover all indices exactly once")


def make_splits(n: int, seed: int, train_frac=0.5, val_frac=0.25) -> dict:
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(n * train_frac))
    n_val = int(round(n * val_frac))
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }


def _draw_shape(rng, h, w, is_ellipse: bool) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = rng.uniform(h * 0.36, h * 0.64)
    cx = rng.uniform(w * 0.36, w * 0.64)
    a = rng.uniform(6.0, 11.0)
    b = rng.uniform(6.0, 11.0)
    theta = rng.uniform(0.0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    if is_ellipse:
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    else:
        inside = (np.abs(u) <= a) & (np.abs(v) <= b)
    intensity = rng.uniform(0.7, 1.0)
    img = np.where(inside, intensity, 0.0)
    img += rng.normal(0.0, 0.02, size=(h, w))
    return np.clip(img, 0.0, 1.0)


def gen_synthetic(n: int, seed: int, h: int = 28, w: int = 28,
                  with_splits: bool = True) -> Dataset:
    """Balanced 2-class set of noisy ellipses (0) vs rectangles (1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = np.array([i % 2 for i in range(n)], dtype=int)
    images = np.empty((n, 1, h, w))
    for i in range(n):
        rng = np.random.default_rng([seed, i])  # per-image stream: order-free
        images[i, 0] = _draw_shape(rng, h, w, is_ellipse=(labels[i] == 0))
    splits = make_splits(n, seed) if with_splits else {}
    return Dataset(images=images, labels=labels, splits=splits, source="synthetic")


def _read_idx(path, expected_magic: int):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) != header + count:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, seed: int = 0,
             with_splits: bool = True) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    raw_images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(raw_images) != len(raw_labels):
        raise CountMismatch(f"{len(raw_images)} images vs {len(raw_labels)} labels")
    images = raw_images.astype(np.float64)[:, None] / 255.0
    splits = make_splits(len(images), seed) if with_splits else {}
    return Dataset(images=images, labels=raw_labels.astype(int),
                   splits=splits, source="idx")


def save_dataset(ds: Dataset, path):
    np.savez_compressed(path, images=ds.images, labels=ds.labels,
                        source=np.array(ds.source),
                        **{f"split_{k}": np.asarray(v, dtype=np.int64)
                           for k, v in ds.splits.items()})


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        splits = {k.removeprefix("split_"): z[k] for k in z.files
                  if k.startswith("split_")}
        return Dataset(images=z["images"], labels=z["labels"], splits=splits,
                       source=str(z["source"]))
