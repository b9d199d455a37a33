"""Datasets: the CIFAR-10 binary container, seeded synthetic families, and
crop/flip augmentation.

The binary container is the classic 3073-byte record: one label byte in
[0, 9] followed by 3072 pixel bytes as three 1024-byte channel planes
(red, green, blue), each plane row-major. Pixels map to floats by /255 on
parse and round(*255) on write, which round-trips every byte exactly.

Synthetic families keep the class signal in cheap geometry so single-core
runs can finish:

  bars     oriented soft-edged bar; the class sets the orientation, while
           position, thickness, colors, global intensity scale, and pixel
           noise are randomized (class signal rides in the spectrum's phase
           structure, the nuisances mostly in amplitude)
  blobs    gaussian bump at a class-indexed grid cell, jittered
  checker  axis-aligned checkerboard whose period halves per class

Every family takes a seed and is bit-reproducible from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
RECORD_BYTES = 3073

SYNTH_CAPACITY = {"bars": 8, "blobs": 9, "checker": 4}


class CifarFormatError(ValueError):
    """Byte stream does not decode as CIFAR-10 binary records."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: tuple
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"{self.images.shape[0]} images but labels shape {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.images)):
            raise ValueError("images must be finite")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        k = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")

    def __len__(self):
        return self.images.shape[0]

    @property
    def num_classes(self):
        return len(self.class_names)

    def take(self, indices):
        """Sub-dataset at the given indices (copies)."""
        idx = np.asarray(indices)
        return Dataset(
            self.images[idx].copy(), self.labels[idx].copy(),
            self.class_names, self.split,
        )


# -- CIFAR-10 binary container ----------------------------------------------


def parse_cifar_binary(raw: bytes, split="test") -> Dataset:
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise CifarFormatError(
            f"stream of {len(raw)} bytes is not a positive multiple of the "
            f"{RECORD_BYTES}-byte record size"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise CifarFormatError(
            f"record {bad[0]}: label byte {labels[bad[0]]} outside [0, 9]"
        )
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels.astype(np.int64), CIFAR10_CLASSES, split)


def write_cifar_binary(ds: Dataset) -> bytes:
    if ds.images.shape[1:] != (3, 32, 32) or ds.num_classes != 10:
        raise ValueError(
            "only 10-class (3,32,32) datasets fit the CIFAR-10 container, "
            f"got {ds.images.shape[1:]} with {ds.num_classes} classes"
        )
    pixels = np.round(ds.images * 255.0).astype(np.uint8).reshape(len(ds), 3072)
    rec = np.empty((len(ds), RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = ds.labels
    rec[:, 1:] = pixels
    return rec.tobytes()


def load_cifar(path, split="test") -> Dataset:
    """Read records from a file, or from the standard batch files in a
    directory (data_batch_1..5.bin for train, test_batch.bin for test)."""
    p = Path(path)
    if p.is_dir():
        names = (
            [f"data_batch_{i}.bin" for i in range(1, 6)]
            if split == "train"
            else ["test_batch.bin"]
        )
        raw = b""
        for name in names:
            f = p / name
            if not f.exists():
                raise CifarFormatError(f"missing batch file {f}")
            raw += f.read_bytes()
    else:
        raw = p.read_bytes()
    return parse_cifar_binary(raw, split)


# -- synthetic families -------------------------------------------------------


def synth_dataset(kind, n, classes, seed, size=32, split="train") -> Dataset:
    """Seeded synthetic dataset with round-robin labels (balanced to +-1)."""
    if kind not in SYNTH_CAPACITY:
        raise ValueError(
            f"unknown synthetic kind {kind!r}; choose {sorted(SYNTH_CAPACITY)}"
        )
    cap = SYNTH_CAPACITY[kind]
    if not 2 <= classes <= cap:
        raise ValueError(f"{kind} supports 2..{cap} classes, got {classes}")
    if n < 1:
        raise ValueError(f"need n >= 1 images, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    half = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size] - half

    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        k = int(labels[i])
        fg = rng.uniform(0.60, 0.95, 3)
        bg = rng.uniform(0.05, 0.30, 3)
        if kind == "bars":
            theta = k * np.pi / classes + rng.uniform(-np.pi / 18, np.pi / 18)
            offset = rng.uniform(-6.0, 6.0)
            halfw = rng.uniform(0.75, 1.75)
            d = np.cos(theta) * xx + np.sin(theta) * yy - offset
            alpha = np.clip(halfw + 0.5 - np.abs(d), 0.0, 1.0)
        elif kind == "blobs":
            cy, cx = divmod(k, 3)
            center_y = (cy + 1) * size / 4 - half + rng.uniform(-2, 2)
            center_x = (cx + 1) * size / 4 - half + rng.uniform(-2, 2)
            sigma = rng.uniform(2.5, 4.0)
            r2 = (xx - center_x) ** 2 + (yy - center_y) ** 2
            alpha = np.exp(-r2 / (2 * sigma * sigma))
        else:  # checker
            period = size // (2 ** k)
            py, px = rng.uniform(0, period, 2)
            alpha = (
                (np.floor((xx + half - px) / (period / 2))
                 + np.floor((yy + half - py) / (period / 2))) % 2
            )
        img = bg[:, None, None] + (fg - bg)[:, None, None] * alpha
        scale = rng.uniform(0.7, 1.3)
        noise = rng.normal(0.0, 0.02, img.shape)
        images[i] = np.clip(scale * img + noise, 0.0, 1.0)

    names = tuple(f"{kind}-{j}" for j in range(classes))
    return Dataset(images, labels, names, split)


# -- augmentation -------------------------------------------------------------


def shift_crop(images, dy, dx, pad=4):
    """Reflect-pad then crop at a displacement from center; (0, 0) is the
    identity. Accepts per-image displacement arrays."""
    images = np.asarray(images)
    b, c, h, w = images.shape
    dy = np.broadcast_to(np.asarray(dy), (b,))
    dx = np.broadcast_to(np.asarray(dx), (b,))
    if np.abs(dy).max() > pad or np.abs(dx).max() > pad:
        raise ValueError(f"displacement exceeds pad {pad}")
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.empty_like(images)
    for i in range(b):
        oy, ox = pad + int(dy[i]), pad + int(dx[i])
        out[i] = padded[i, :, oy : oy + h, ox : ox + w]
    return out


def augment(images, rng, pad=4, flip_prob=0.5):
    """Random shifted crop plus horizontal flip; returns a new array."""
    images = np.asarray(images)
    b = images.shape[0]
    dy = rng.integers(-pad, pad + 1, b)
    dx = rng.integers(-pad, pad + 1, b)
    out = shift_crop(images, dy, dx, pad)
    flip = rng.random(b) < flip_prob
    out[flip] = out[flip][:, :, :, ::-1]
    return out
