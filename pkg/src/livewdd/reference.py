"""Conventional WDD on a complete dataset.

This path materialises the full scan-axis transform of the data and is kept
deliberately simple. It serves as the correctness oracle for the live path
and as the memory/time baseline in benchmarks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .geometry import FrequencyIndex, active_mask, frequency_grid
from .simulator import ComplexImage, Dataset4D
from .wiener import DEFAULT_EPSILON, probe_autocorrelation


@dataclass
class WddIntermediates:
    """Full ``(S_y, S_x, N_y, N_x)`` arrays, scan frequencies centered.

    ``G`` is the scan transform of the data, ``W_P`` the probe Wigner
    distribution and ``W_O`` the deconvolved object Wigner distribution.
    """

    G: np.ndarray
    W_P: np.ndarray
    W_O: np.ndarray


@dataclass
class WddResult:
    obj: np.ndarray
    spectrum: np.ndarray
    normalized: bool
    intermediates: WddIntermediates | None = None


def wdd_reconstruct(
    ds: Dataset4D,
    probe_recip: ComplexImage | np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    strategy: str = "aperture",
    keep_intermediates: bool = False,
    chunk: int = 32,
) -> WddResult:
    """Reconstruct the object from all frames by Wigner distribution deconvolution.

    Parameters
    ----------
    ds : Dataset4D
        Complete dataset.
    probe_recip : ComplexImage or ndarray
        Centered reciprocal-space probe.
    epsilon : float
        Wiener regulariser added to ``|W_P|^2``.
    strategy : str
        Sub-pixel shift strategy for the probe autocorrelation.
    keep_intermediates : bool
        Also return ``G``, ``W_P`` and ``W_O`` (needs several times the data size).
    chunk : int
        Frequencies processed per vectorised step.

    Returns
    -------
    WddResult
        ``obj`` is the ``(S_y, S_x)`` estimate; ``normalized`` is False when
        the zero-frequency value vanished and no normalisation was applied.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    geom = ds.geometry
    sy, sx = geom.scan_shape
    ny, nx = geom.detector_shape
    frames = np.asarray(ds.frames)
    cdtype = np.complex64 if frames.dtype == np.float32 else np.complex128
    # scan transform in natural order; centered frequencies are looked up via
    # their natural position instead of shifting (which would copy the array)
    G = sfft.fft2(frames, axes=(0, 1), norm="ortho")

    if keep_intermediates:
        W_P = np.zeros(G.shape, dtype=cdtype)
        W_O = np.zeros(G.shape, dtype=cdtype)

    active = np.flatnonzero(active_mask(geom))
    vy, vx = (a.ravel() for a in frequency_grid(geom.scan_shape))
    spectrum = np.zeros(sy * sx, dtype=complex)
    g_flat = G.reshape(sy * sx, ny, nx)
    natural = np.mod(vy, sy) * sx + np.mod(vx, sx)
    for start in range(0, active.size, chunk):
        block = active[start : start + chunk]
        idx = [FrequencyIndex(int(v), int(vy[v]), int(vx[v])) for v in block]
        y = np.stack([probe_autocorrelation(probe_recip, i, geom, strategy) for i in idx])
        wp = sfft.ifft2(sfft.ifftshift(y, axes=(-2, -1)), norm="ortho").astype(cdtype, copy=False)
        h = sfft.ifft2(sfft.ifftshift(g_flat[natural[block]], axes=(-2, -1)), norm="ortho")
        wo = h * np.conj(wp) / (np.abs(wp) ** 2 + epsilon)
        # q = 0 value of the unitary transform over r is the plain sum scaled by 1/sqrt(N_y N_x)
        spectrum[block] = wo.sum(axis=(-2, -1), dtype=complex) / np.sqrt(ny * nx)
        if keep_intermediates:
            W_P.reshape(sy * sx, ny, nx)[block] = wp
            W_O.reshape(sy * sx, ny, nx)[block] = wo
    spectrum = spectrum.reshape(sy, sx)

    dc = spectrum[sy // 2, sx // 2]
    normalized = dc != 0
    if normalized:
        scaled = spectrum / np.sqrt(dc + 0j)
    else:
        warnings.warn("zero-frequency value is zero; object left unnormalised", RuntimeWarning, stacklevel=2)
        scaled = spectrum
    obj = np.conj(sfft.ifft2(sfft.ifftshift(scaled), norm="ortho"))
    inter = WddIntermediates(sfft.fftshift(G, axes=(0, 1)), W_P, W_O) if keep_intermediates else None
    return WddResult(obj, spectrum, bool(normalized), inter)
