"""A local common-corruptions suite: eight kinds, five severities each.

Kinds split into stochastic (gaussian_noise, shot_noise, impulse_noise),
where the output is a deterministic function of (image, spec, seed), and
deterministic (defocus_blur, motion_blur, brightness, contrast, pixelate),
where the seed is ignored entirely.

Severity tables are fixed constants chosen so severity 1 is a mild
distortion and severity 5 clearly degrades a small image; the distortion
level is monotone in severity for every kind. Parameter meanings:

  gaussian_noise   additive noise standard deviation
  shot_noise       photon count per unit intensity (Poisson; lower = noisier)
  impulse_noise    fraction of values forced to 0 or 1 (half salt, half pepper)
  defocus_blur     disk kernel radius in pixels (antialiased edge)
  motion_blur      streak length in pixels along a fixed 45-degree diagonal
  brightness       additive offset
  contrast         scale toward the per-channel mean (lower = flatter)
  pixelate         block edge in pixels (block-average then upsample)

All functions take and return (C, H, W) float arrays clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .utils import parallel_map

KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur",
    "motion_blur", "brightness", "contrast", "pixelate",
)
STOCHASTIC_KINDS = ("gaussian_noise", "shot_noise", "impulse_noise")
SEVERITIES = (1, 2, 3, 4, 5)

SEVERITY_TABLE = {
    "gaussian_noise": (0.04, 0.08, 0.12, 0.18, 0.26),
    "shot_noise": (500.0, 250.0, 125.0, 75.0, 50.0),
    "impulse_noise": (0.01, 0.03, 0.06, 0.10, 0.17),
    "defocus_blur": (1.0, 1.5, 2.0, 2.5, 3.0),
    "motion_blur": (3, 5, 7, 9, 11),
    "brightness": (0.10, 0.20, 0.30, 0.40, 0.50),
    "contrast": (0.75, 0.60, 0.45, 0.30, 0.15),
    "pixelate": (2, 3, 4, 6, 8),
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(
                f"severity must be in {SEVERITIES}, got {self.severity}"
            )

    @property
    def parameter(self):
        return SEVERITY_TABLE[self.kind][self.severity - 1]

    @property
    def stochastic(self):
        return self.kind in STOCHASTIC_KINDS


def _convolve_reflect(img, kernel):
    """Per-channel 2-D convolution with reflect padding; kernel is odd-sized
    and normalized by its builder."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((0, 0), (ph, ph), (pw, pw)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return np.einsum("chwij,ij->chw", win, kernel)


def disk_kernel(radius):
    size = 2 * int(np.ceil(radius)) + 1
    half = size // 2
    yy, xx = np.mgrid[0:size, 0:size] - half
    k = np.clip(radius + 0.5 - np.sqrt(xx ** 2 + yy ** 2), 0.0, 1.0)
    return k / k.sum()


def line_kernel(length):
    return np.eye(int(length)) / float(length)


def corrupt(image, spec: CorruptionSpec, seed=0):
    """Apply one corruption to one image. Stochastic kinds are a pure
    function of (image, spec, seed); deterministic kinds ignore the seed."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"corrupt expects a (C,H,W) image, got {x.shape}")
    p = spec.parameter
    kind = spec.kind
    if kind in STOCHASTIC_KINDS:
        rng = np.random.default_rng(seed)
        if kind == "gaussian_noise":
            out = x + rng.normal(0.0, p, x.shape)
        elif kind == "shot_noise":
            out = rng.poisson(np.clip(x, 0, 1) * p) / p
        else:  # impulse_noise
            out = x.copy()
            hit = rng.random(x.shape) < p
            salt = rng.random(x.shape) < 0.5
            out[hit & salt] = 1.0
            out[hit & ~salt] = 0.0
    elif kind == "defocus_blur":
        out = _convolve_reflect(x, disk_kernel(p))
    elif kind == "motion_blur":
        out = _convolve_reflect(x, line_kernel(p))
    elif kind == "brightness":
        out = x + p
    elif kind == "contrast":
        mean = x.mean(axis=(1, 2), keepdims=True)
        out = (x - mean) * p + mean
    else:  # pixelate
        out = _pixelate(x, int(p))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _pixelate(x, block):
    _, h, w = x.shape
    eh = np.arange(0, h, block)
    ew = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(x, eh, axis=1), ew, axis=2)
    rows = np.diff(np.append(eh, h))
    cols = np.diff(np.append(ew, w))
    means = sums / (rows[:, None] * cols[None, :])
    return np.repeat(np.repeat(means, rows, axis=1), cols, axis=2)


def corruption_suite(ds: Dataset, kinds=KINDS, severities=SEVERITIES, seed=0):
    """Corrupt the whole dataset once per (kind, severity) cell.

    Returns {(kind, severity): Dataset}. Per-image seeds derive from
    (seed, kind index, severity, image index), so the result is independent
    of evaluation order and worker count.
    """
    cells = [(k, s) for k in kinds for s in severities]

    def build(cell):
        kind, sev = cell
        spec = CorruptionSpec(kind, sev)
        kidx = KINDS.index(kind)
        child = np.random.SeedSequence([seed, kidx, sev]).generate_state(len(ds))
        images = np.stack(
            [corrupt(ds.images[i], spec, int(child[i])) for i in range(len(ds))]
        )
        return cell, Dataset(images, ds.labels.copy(), ds.class_names, ds.split)

    return dict(parallel_map(build, cells))
