"""Two-dimensional discrete Fourier transforms over real image grids.

Conventions, fixed across the library:
  forward   X[u,v] = sum_{m,n} x[m,n] exp(-2i pi (um/H + vn/W))   (unnormalized)
  inverse   x[m,n] = (1/(HW)) sum_{u,v} X[u,v] exp(+2i pi (...))
  layout    bin (0,0) is the DC term; no quadrant shift anywhere.

Power-of-two axis lengths take an iterative radix-2 path vectorized over the
remaining axes; every other length multiplies by the dense DFT matrix. Both
paths run in complex128 regardless of input dtype.

Arrays may carry leading batch/channel axes; the transform always acts on the
trailing two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ComplexGrid:
    """Frequency-domain grid split into real and imaginary planes."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"re/im shapes differ: {self.re.shape} vs {self.im.shape}"
            )
        if self.re.ndim < 2:
            raise ValueError(f"grid must be at least 2-D, got {self.re.shape}")

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self):
        return self.re + 1j * self.im


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_pow2_last(a):
    """Radix-2 decimation-in-time along the last axis. len must be 2**k."""
    n = a.shape[-1]
    out = a[..., _bit_reverse_indices(n)]  # fancy index -> contiguous copy
    if n == 1:
        return out
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:]
        t = odd * tw
        # butterflies in place: (even, odd) <- (even + t, even - t)
        odd[...] = even
        even += t
        odd -= t
        size *= 2
    return out


def _dft_matrix(n, sign):
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _transform_last(a, inverse):
    n = a.shape[-1]
    if _is_pow2(n):
        if inverse:
            out = np.conj(_fft_pow2_last(np.conj(a)))
        else:
            out = _fft_pow2_last(a)
    else:
        # dense DFT matrix; symmetric, so no transpose needed
        out = a @ _dft_matrix(n, 1 if inverse else -1)
    return out / n if inverse else out


def _transform2(a, inverse):
    out = _transform_last(a, inverse)
    out = np.swapaxes(_transform_last(np.swapaxes(out, -1, -2), inverse), -1, -2)
    return out


def dft2(grid) -> ComplexGrid:
    """Forward 2-D DFT of a real spatial grid (trailing two axes)."""
    a = np.asarray(grid, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] < 1 or a.shape[-2] < 1:
        raise ValueError(f"dft2 expects an HxW grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("dft2 input must be finite")
    out = _transform2(a.astype(np.complex128), inverse=False)
    return ComplexGrid(np.ascontiguousarray(out.real), np.ascontiguousarray(out.imag))


def idft2(cg: ComplexGrid):
    """Inverse 2-D DFT. Returns (real grid, max abs imaginary residue).

    The residue is the caller's round-trip health check: for spectra of real
    images it stays at rounding noise, and a large value means the spectrum
    was edited into something with no real preimage.
    """
    out = _transform2(cg.to_complex(), inverse=True)
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    return np.ascontiguousarray(out.real), residue


def hermitian_residue(cg: ComplexGrid) -> float:
    """Max deviation from X[u,v] == conj(X[-u,-v]); ~0 for real images."""
    c = cg.to_complex()
    flipped = np.conj(c[..., ::-1, ::-1])
    flipped = np.roll(np.roll(flipped, 1, axis=-1), 1, axis=-2)
    return float(np.max(np.abs(c - flipped)))
