"""Deterministic numeric substrate.

Dense matrices are plain 2-D float64 numpy arrays (``Mat``); interchange
files narrow them to float32 at the I/O boundary. Random numbers come from
a counter-based SplitMix64 stream so every draw is reproducible and
sub-streams can be derived by label without sharing state. The two
image-space operations the scorer needs (align-corners bilinear upsampling
and normalized Gaussian blur) live here too.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolationError

# A Mat is a 2-D C-contiguous float64 ndarray.
Mat = np.ndarray

_U64 = np.uint64
_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX_A = _U64(0xBF58476D1CE4E5B9)
_MIX_B = _U64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# (raw >> 11) * 2^-53 maps a u64 onto [0, 1) on the 53-bit float grid.
_INV_2POW53 = float(2.0**-53)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output scrambler (bijective on u64)."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _U64(30))) * _MIX_A
        x = (x ^ (x >> _U64(27))) * _MIX_B
        return x ^ (x >> _U64(31))


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class RandomStream:
    """Counter-based SplitMix64 generator.

    The k-th raw output is ``mix64(seed + (k+1) * GOLDEN)``, so the stream
    is random-access and advancing the counter is the only state change.
    Draw costs in raw outputs: ``uniform`` 1 each, ``gaussian`` 2 each
    (Box-Muller, cosine branch only), ``randint`` 1, ``permutation`` n.
    Identical seeds give identical sequences within this implementation;
    cross-language bit-exactness is not a contract.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw u64 outputs; advances the counter by ``n``."""
        if n < 0:
            raise ContractViolationError("raw draw count must be >= 0")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            states = _U64(self.seed) + idx * _GOLDEN
        return _mix64(states)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` i.i.d. floats in [0, 1); one raw output each."""
        return (self.raw(n) >> _U64(11)).astype(np.float64) * _INV_2POW53

    def gaussian(self, n: int, sigma: float) -> np.ndarray:
        """``n`` i.i.d. N(0, sigma^2) draws; two raw outputs each."""
        if sigma <= 0:
            raise ContractViolationError(f"sigma must be > 0, got {sigma}")
        raws = self.raw(2 * n)
        # u1 in (0, 1) keeps log finite; u2 in [0, 1).
        u1 = ((raws[0::2] >> _U64(11)).astype(np.float64) + 0.5) * _INV_2POW53
        u2 = (raws[1::2] >> _U64(11)).astype(np.float64) * _INV_2POW53
        return sigma * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def randint(self, lo: int, hi: int) -> int:
        """One integer uniform on [lo, hi); one raw output."""
        if hi <= lo:
            raise ContractViolationError(f"empty randint range [{lo}, {hi})")
        return lo + int(self.uniform(1)[0] * (hi - lo))

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n); n raw outputs."""
        return np.argsort(self.uniform(n), kind="mergesort")

    def child(self, label: str) -> "RandomStream":
        """Independent sub-stream derived from (seed, label).

        The child seed is a scramble of the parent seed and the label hash,
        so differently-labelled children start at unrelated counter lines.
        """
        mixed = _mix64(_U64((self.seed ^ _fnv1a64(label)) & _MASK64))
        return RandomStream(int(mixed))


def gaussian_of(stream: RandomStream, n: int, sigma: float) -> np.ndarray:
    """Module-level alias for ``stream.gaussian`` (see RandomStream)."""
    return stream.gaussian(n, sigma)


def as_mat(x, name: str = "mat") -> Mat:
    """Validate/convert ``x`` into a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolationError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ContractViolationError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr)


def matmul(a: Mat, b: Mat) -> Mat:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolationError(
            f"matmul shape mismatch: {a.shape} x {b.shape}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise ContractViolationError("matmul produced non-finite entries")
    return out


def bilinear_upsample(map_: Mat, out_h: int, out_w: int) -> Mat:
    """Align-corners bilinear interpolation onto an (out_h, out_w) grid.

    Corners map onto corners; a constant input stays constant and
    upsampling to the same size is the identity.
    """
    m = as_mat(map_, "map")
    in_h, in_w = m.shape
    if in_h < 1 or in_w < 1:
        raise ContractViolationError("map must be nonempty")
    if out_h < 1 or out_w < 1:
        raise ContractViolationError("output dims must be >= 1")
    if out_h < in_h or out_w < in_w:
        raise ContractViolationError(
            f"output dims ({out_h}, {out_w}) must be >= map dims ({in_h}, {in_w})"
        )

    def axis_coords(n_in: int, n_out: int):
        if n_out == 1:
            src = np.zeros(1)
        else:
            src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        lo = np.floor(src).astype(np.intp)
        lo = np.minimum(lo, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    r0, r1, fr = axis_coords(in_h, out_h)
    c0, c1, fc = axis_coords(in_w, out_w)
    rows = (1.0 - fr)[:, None] * m[r0, :] + fr[:, None] * m[r1, :]
    return (1.0 - fc)[None, :] * rows[:, c0] + fc[None, :] * rows[:, c1]


def gaussian_kernel_1d(sigma_px: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    radius = int(math.ceil(3.0 * sigma_px))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma_px * sigma_px))
    return k / k.sum()


def _blur_axis0(m: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    radius = len(kernel) // 2
    # Edge-including reflection; with a normalized kernel this preserves
    # the map sum exactly (every input weight column sums to 1).
    padded = np.pad(m, ((radius, radius), (0, 0)), mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=0)
    return windows @ kernel


def gaussian_blur(map_: Mat, sigma_px: float) -> Mat:
    """Separable Gaussian smoothing with reflective padding.

    ``sigma_px == 0`` is the identity; the kernel is normalized to sum 1 so
    constants pass through unchanged.
    """
    m = as_mat(map_, "map")
    if sigma_px < 0:
        raise ContractViolationError(f"sigma_px must be >= 0, got {sigma_px}")
    if sigma_px == 0:
        return m.copy()
    kernel = gaussian_kernel_1d(sigma_px)
    out = _blur_axis0(m, kernel)
    return _blur_axis0(out.T, kernel).T
