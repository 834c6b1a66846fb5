"""Dataset synthesis and ingestion at desk scale.

Two sources: a synthetic class-blob generator, and the standard binary
archive layout for small labeled images (one label byte + 3*32*32 pixel
bytes per record, planar RGB). Streams hold numpy arrays and emit torch
batches with deterministic per-epoch shuffling and (train-only) padded
random crop / horizontal flip augmentation.

Blob images stack three ingredients per class: a wide Gaussian bump whose
center identifies the class (robust feature, amplitude far above attack
budgets), a fixed full-image sign pattern with amplitude below 8/255 (a
shortcut feature that an l-inf attack can flip), and per-sample Gaussian
pixel noise. Standard training latches onto the shortcut; adversarial
training is forced onto the bump. With noise_std=0 the per-class images
are identical by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
import torch

from .rng import derive_seed, numpy_generator

RECORD_BYTES = 1 + 3 * 32 * 32

BLOB_BASE = 0.35
BLOB_AMPLITUDE = 0.45
SHORTCUT_AMPLITUDE = 6 / 255


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic://blobs"
    num_classes: int = 10
    per_class_limit: int = 200
    image_size: int = 32
    random_crop: bool = False
    random_flip: bool = False
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.per_class_limit < 1:
            raise ValueError("per_class_limit must be at least 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def parse_dataset_source(spec: DatasetSpec) -> DatasetSpec:
    """Fold query parameters of a synthetic:// source into the spec fields
    (classes=K&n=N&size=S&seed=R, n being the per-class sample count)."""
    parsed = urlparse(spec.source)
    if parsed.scheme != "synthetic":
        return spec
    if parsed.netloc != "blobs":
        raise ValueError(f"unknown synthetic dataset {parsed.netloc!r}; only 'blobs' exists")
    q = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
    unknown = set(q) - {"classes", "n", "size", "seed", "noise"}
    if unknown:
        raise ValueError(f"unknown synthetic dataset parameters: {sorted(unknown)}")
    updates = {}
    if "classes" in q:
        updates["num_classes"] = int(q["classes"])
    if "n" in q:
        updates["per_class_limit"] = int(q["n"])
    if "size" in q:
        updates["image_size"] = int(q["size"])
    if "seed" in q:
        updates["seed"] = int(q["seed"])
    if "noise" in q:
        updates["noise_std"] = float(q["noise"])
    return replace(spec, **updates) if updates else spec


class Stream:
    """A fixed labeled array with deterministic batch iteration.

    batches() reshuffles per epoch from a seed derived off (seed, name,
    epoch) and applies augmentation when the stream carries it;
    eval_batches() walks the data once, in order, untouched.
    """

    def __init__(self, name, images, labels, seed, augment_crop=False, augment_flip=False,
                 mean=None, std=None):
        if len(images) != len(labels):
            raise ValueError("images and labels must have equal length")
        self.name = name
        self.images = np.ascontiguousarray(images, dtype=np.float32)
        self.labels = np.ascontiguousarray(labels, dtype=np.int64)
        self.seed = seed
        self.augment_crop = augment_crop
        self.augment_flip = augment_flip
        self.mean = mean if mean is not None else np.zeros(images.shape[1], dtype=np.float64)
        self.std = std if std is not None else np.ones(images.shape[1], dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def batches(self, batch_size, epoch=0, shuffle=True):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        rng = numpy_generator(derive_seed(self.seed, self.name, "epoch", epoch))
        order = rng.permutation(len(self)) if shuffle else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start : start + batch_size]
            x = self.images[idx]
            if self.augment_crop or self.augment_flip:
                x = _augment(x, rng, self.augment_crop, self.augment_flip)
            yield torch.from_numpy(np.ascontiguousarray(x)), torch.from_numpy(self.labels[idx])

    def eval_batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            x = self.images[start : start + batch_size]
            y = self.labels[start : start + batch_size]
            yield torch.from_numpy(x), torch.from_numpy(y)


def _augment(x, rng, crop, flip):
    x = x.copy()
    n, _, h, w = x.shape
    if crop:
        padded = np.pad(x, ((0, 0), (0, 0), (4, 4), (4, 4)))
        offs = rng.integers(0, 9, size=(n, 2))
        for i in range(n):
            oy, ox = offs[i]
            x[i] = padded[i, :, oy : oy + h, ox : ox + w]
    if flip:
        flips = rng.random(n) < 0.5
        x[flips] = x[flips, :, :, ::-1]
    return x


def _blob_class_features(num_classes, size, seed):
    """Per-class (bump, shortcut) image pair, deterministic in the seed."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    center = (size - 1) / 2
    radius = size / 4
    sigma = size / 5
    rng = numpy_generator(derive_seed(seed, "blob-class-features"))
    bumps = []
    shortcuts = []
    for c in range(num_classes):
        angle = 2 * math.pi * c / num_classes
        cy = center + radius * math.sin(angle)
        cx = center + radius * math.cos(angle)
        bump2d = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        bump = BLOB_AMPLITUDE * np.stack([bump2d] * 3)
        pattern = rng.integers(0, 2, size=(3, size, size)) * 2.0 - 1.0
        shortcuts.append(SHORTCUT_AMPLITUDE * pattern)
        bumps.append(bump)
    return np.stack(bumps), np.stack(shortcuts)


def synth_blobs(spec: DatasetSpec, count_per_class: int, tag: str) -> tuple[np.ndarray, np.ndarray]:
    """Generate count_per_class images per class: base + class bump +
    class shortcut + per-sample noise, clipped to [0,1]. Labels come out
    grouped by class (0..K-1); callers shuffle."""
    spec = parse_dataset_source(spec)
    k, s = spec.num_classes, spec.image_size
    bumps, shortcuts = _blob_class_features(k, s, spec.seed)
    rng = numpy_generator(derive_seed(spec.seed, "blob-noise", tag))
    images = np.empty((k * count_per_class, 3, s, s), dtype=np.float32)
    labels = np.empty(k * count_per_class, dtype=np.int64)
    for c in range(k):
        sl = slice(c * count_per_class, (c + 1) * count_per_class)
        clean = BLOB_BASE + bumps[c] + shortcuts[c]
        noise = rng.normal(0.0, spec.noise_std, size=(count_per_class, 3, s, s)) \
            if spec.noise_std > 0 else 0.0
        images[sl] = np.clip(clean[None] + noise, 0.0, 1.0)
        labels[sl] = c
    return images, labels


def _read_archive_records(path: Path) -> tuple[list[Path], Path | None]:
    if path.is_dir():
        train_files = sorted(path.glob("data_batch*.bin"))
        if not train_files:
            raise ValueError(f"no data_batch*.bin files under {path}")
        test_file = path / "test_batch.bin"
        return train_files, test_file if test_file.exists() else None
    if path.is_file():
        return [path], None
    raise FileNotFoundError(f"dataset archive {path} does not exist")


def _parse_binary_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise ValueError(
            f"corrupt archive {path}: size {raw.size} is not a multiple of {RECORD_BYTES}"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def _subset_balanced(images, labels, num_classes, per_class, what):
    picked = []
    for c in range(num_classes):
        idx = np.nonzero(labels == c)[0][:per_class]
        if len(idx) < per_class:
            raise ValueError(
                f"class {c} has only {len(idx)} {what} samples, need {per_class}"
            )
        picked.append(idx)
    order = np.concatenate(picked)
    return images[order], labels[order]


def _center_crop(images, size):
    h = images.shape[2]
    if size > h:
        raise ValueError(f"image_size {size} exceeds archive resolution {h}")
    off = (h - size) // 2
    return images[:, :, off : off + size, off : off + size]


def load(spec: DatasetSpec) -> tuple[Stream, Stream, Stream]:
    """Build (train, val, test) streams.

    The training portion is split 50/50 into train/val, stratified per
    class. Synthetic test data comes from an independent noise stream at
    per_class_limit//2 samples per class; archive test data comes from the
    archive's test file (or the train files' remainder records).
    """
    spec = parse_dataset_source(spec)
    if urlparse(spec.source).scheme == "synthetic":
        portion, portion_labels = synth_blobs(spec, spec.per_class_limit, tag="train-portion")
        test_n = max(1, spec.per_class_limit // 2)
        test_x, test_y = synth_blobs(spec, test_n, tag="test")
    else:
        train_files, test_file = _read_archive_records(Path(spec.source))
        parts = [_parse_binary_file(f) for f in train_files]
        all_images = np.concatenate([p[0] for p in parts])
        all_labels = np.concatenate([p[1] for p in parts])
        portion_u8, portion_labels = _subset_balanced(
            all_images, all_labels, spec.num_classes, spec.per_class_limit, "training"
        )
        test_n = max(1, spec.per_class_limit // 2)
        if test_file is not None:
            t_images, t_labels = _parse_binary_file(test_file)
        else:
            # single-file source: test records are the ones not picked above
            mask = np.ones(len(all_labels), dtype=bool)
            for c in range(spec.num_classes):
                mask[np.nonzero(all_labels == c)[0][: spec.per_class_limit]] = False
            t_images, t_labels = all_images[mask], all_labels[mask]
        test_u8, test_y = _subset_balanced(t_images, t_labels, spec.num_classes, test_n, "test")
        portion = _center_crop(portion_u8, spec.image_size).astype(np.float32) / 255.0
        test_x = _center_crop(test_u8, spec.image_size).astype(np.float32) / 255.0

    # stratified 50/50 split of the training portion
    rng = numpy_generator(derive_seed(spec.seed, "train-val-split"))
    train_idx, val_idx = [], []
    for c in range(spec.num_classes):
        idx = np.nonzero(portion_labels == c)[0]
        idx = idx[rng.permutation(len(idx))]
        half = len(idx) // 2
        train_idx.append(idx[:half])
        val_idx.append(idx[half:])
    train_idx = np.concatenate(train_idx)
    val_idx = np.concatenate(val_idx)

    train_x, train_y = portion[train_idx], portion_labels[train_idx]
    mean = train_x.mean(axis=(0, 2, 3)).astype(np.float64)
    std = train_x.std(axis=(0, 2, 3)).astype(np.float64)
    std = np.maximum(std, 1e-6)

    common = dict(seed=spec.seed, mean=mean, std=std)
    train = Stream(
        "train", train_x, train_y,
        augment_crop=spec.random_crop, augment_flip=spec.random_flip, **common,
    )
    val = Stream("val", portion[val_idx], portion_labels[val_idx], **common)
    test = Stream("test", test_x, test_y, **common)
    return train, val, test
