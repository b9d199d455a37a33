"""Amplitude/phase decomposition of images and frequency-domain swaps.

An image channel's spectrum factors into a nonnegative amplitude surface and
a phase surface in (-pi, pi]. Recombining the amplitude of one image with the
phase of another yields a hybrid that keeps the donor's energy distribution
but the recipient's spatial structure; the amplitude carries texture-like
statistics while the phase pins edges and object layout.

The swap of interest here pairs a clean image with its adversarially
perturbed copy:

    aa = inverse(amplitude(x_adv) * exp(i phase(x)))     adversarial amplitude
    ap = inverse(amplitude(x) * exp(i phase(x_adv)))     adversarial phase

Both land back in pixel space through the inverse transform; values are
clipped to [0, 1] for consumption as images and the unclipped surface is kept
for analysis. All functions accept (..., H, W) arrays and act per channel, so
whole (B, C, H, W) batches transform in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fft2d import ComplexGrid, dft2, idft2


@dataclass
class AmpPhase:
    """Polar form of a spectrum: amplitude >= 0, phase in (-pi, pi]."""

    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(
                f"amplitude/phase shapes differ: {self.amplitude.shape} vs "
                f"{self.phase.shape}"
            )
        if self.amplitude.size and self.amplitude.min() < 0:
            raise ValueError("amplitude must be nonnegative")
        if self.phase.size and (
            self.phase.min() <= -np.pi or self.phase.max() > np.pi
        ):
            raise ValueError("phase must lie in (-pi, pi]")

    @property
    def shape(self):
        return self.amplitude.shape


@dataclass
class SpectralImage:
    """Pixel-space result of a spectral edit.

    `image` is clipped to [0, 1] for use as training input; `pre_clip` keeps
    the raw inverse-transform output so algebraic checks are not destroyed by
    the clip; `imag_residue` is the largest imaginary component discarded by
    the inverse transform (rounding noise for any Hermitian edit).
    """

    image: np.ndarray
    pre_clip: np.ndarray
    imag_residue: float


def _wrap_half_open(phase):
    # atan2 lands in [-pi, pi]; fold the closed -pi endpoint onto +pi
    return np.where(phase == -np.pi, np.pi, phase)


def decompose(x) -> AmpPhase:
    """Per-channel forward transform in polar form."""
    cg = dft2(x)
    amplitude = np.hypot(cg.re, cg.im)
    phase = _wrap_half_open(np.arctan2(cg.im, cg.re))
    return AmpPhase(amplitude, phase)


def recompose(ap: AmpPhase) -> SpectralImage:
    """Inverse transform of a polar spectrum, clipped to the image range."""
    re = ap.amplitude * np.cos(ap.phase)
    im = ap.amplitude * np.sin(ap.phase)
    pre_clip, residue = idft2(ComplexGrid(re, im))
    return SpectralImage(np.clip(pre_clip, 0.0, 1.0), pre_clip, residue)


def phase_image(x) -> SpectralImage:
    """Reconstruction from phase alone (amplitude flattened to one).

    Keeps edge and layout structure while discarding nearly all energy, so
    the clipped image is dark with bright contours.
    """
    ap = decompose(x)
    return recompose(AmpPhase(np.ones_like(ap.amplitude), ap.phase))


def swap_image(x, x_m) -> SpectralImage:
    """Amplitude of `x_m` recombined with the phase of `x`."""
    x = np.asarray(x, dtype=np.float64)
    x_m = np.asarray(x_m, dtype=np.float64)
    if x.shape != x_m.shape:
        raise ValueError(
            f"swap_image operands must match, got {x.shape} and {x_m.shape}"
        )
    return recompose(AmpPhase(decompose(x_m).amplitude, decompose(x).phase))


def aas(x, x_adv):
    """Both crossed recombinations of a clean/adversarial pair.

    Returns (aa, ap): `aa` carries the adversarial amplitude on the clean
    phase, `ap` the clean amplitude on the adversarial phase.
    """
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(
            f"aas operands must match, got {x.shape} and {x_adv.shape}"
        )
    clean = decompose(x)
    adv = decompose(x_adv)
    aa = recompose(AmpPhase(adv.amplitude, clean.phase))
    ap = recompose(AmpPhase(clean.amplitude, adv.phase))
    return aa, ap


def _amplitude_transplant(keep, donor) -> SpectralImage:
    # amp(donor) * exp(i*phase(keep)) == spec(keep) * amp(donor)/amp(keep)
    # wherever amp(keep) > 0, which skips the polar conversion entirely.
    # A zero bin has conventional phase 0, so it becomes amp(donor) itself.
    fk = dft2(keep)
    fd = dft2(donor)
    ak = np.hypot(fk.re, fk.im)
    ad = np.hypot(fd.re, fd.im)
    live = ak > 0.0
    scale = np.divide(ad, ak, out=np.zeros_like(ad), where=live)
    re = np.where(live, fk.re * scale, ad)
    im = fk.im * scale
    pre_clip, residue = idft2(ComplexGrid(re, im))
    return SpectralImage(np.clip(pre_clip, 0.0, 1.0), pre_clip, residue)


def _check_pair(x, x_m, name):
    x = np.asarray(x, dtype=np.float64)
    x_m = np.asarray(x_m, dtype=np.float64)
    if x.shape != x_m.shape:
        raise ValueError(
            f"{name} operands must match, got {x.shape} and {x_m.shape}"
        )
    return x, x_m


def aa_image(x, x_adv) -> SpectralImage:
    """The adversarial-amplitude half of `aas`, computed without the polar
    detour; equal to `aas(x, x_adv)[0]` up to rounding noise and cheaper
    when the other half is not needed."""
    x, x_adv = _check_pair(x, x_adv, "aa_image")
    return _amplitude_transplant(x, x_adv)


def ap_image(x, x_adv) -> SpectralImage:
    """The adversarial-phase half of `aas`; see `aa_image`."""
    x, x_adv = _check_pair(x, x_adv, "ap_image")
    return _amplitude_transplant(x_adv, x)
