"""Synthetic 4D-STEM data: test objects, ideal-aperture probes, roll-based forward model, dose."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .geometry import AcquisitionGeometry, physical_shift

MIN_TEST_OBJECT = 25


@dataclass
class ComplexImage:
    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class Dataset4D:
    """Frames stored as ``(S_y, S_x, N_y, N_x)``; scan order is row-major."""

    geometry: AcquisitionGeometry
    frames: np.ndarray

    def __post_init__(self):
        expected = (*self.geometry.scan_shape, *self.geometry.detector_shape)
        if self.frames.shape != expected:
            raise ValueError(f"frames have shape {self.frames.shape}, geometry expects {expected}")

    @property
    def scan_size(self) -> int:
        return self.geometry.scan_size

    def frame(self, s: int) -> np.ndarray:
        sy, sx = divmod(s, self.geometry.scan_shape[1])
        return self.frames[sy, sx]

    def iter_frames(self, order=None) -> Iterator[tuple[int, np.ndarray]]:
        order = range(self.scan_size) if order is None else order
        for s in order:
            yield int(s), self.frame(int(s))


# -- objects ---------------------------------------------------------------


def default_ramp_bin(size: int) -> tuple[int, int]:
    """Ramp frequency bin at an odd angle (about 23 degrees off the x axis)."""
    return (max(1, round(size * 3 / 64)), max(1, round(size * 7 / 64)))


def make_test_object(
    size: int,
    ramp: tuple[int, int] | None = None,
    ramp_depth: float = 1.5,
    feature_amplitude: float = 0.8,
) -> ComplexImage:
    """Asymmetric validation object.

    Amplitude is 1 with an L-shaped feature and corner marks (one to four dots,
    clockwise from top-left) at ``feature_amplitude``. The phase is a wrapped
    ramp with ``ramp`` cycles per field along ``(y, x)``, i.e. a sawtooth
    running over ``ramp_depth`` radians, centred on zero.
    """
    if size < MIN_TEST_OBJECT:
        raise ValueError(f"test object needs at least {MIN_TEST_OBJECT} px, got {size}")
    a, b = default_ramp_bin(size) if ramp is None else ramp
    amp = np.ones((size, size))
    n = size
    # L: long vertical bar, shorter foot to the right
    amp[round(0.2 * n) : round(0.75 * n), round(0.2 * n) : round(0.32 * n)] = feature_amplitude
    amp[round(0.63 * n) : round(0.75 * n), round(0.2 * n) : round(0.55 * n)] = feature_amplitude
    dot = max(1, n // 25)
    corners = [(1, 1, 1), (1, -1, 2), (-1, -1, 3), (-1, 1, 4)]
    for cy, cx, count in corners:
        for i in range(count):
            y0 = 1 if cy > 0 else n - 1 - dot
            x0 = 1 + i * 2 * dot if cx > 0 else n - 1 - dot - i * 2 * dot
            amp[y0 : y0 + dot, x0 : x0 + dot] = feature_amplitude
    yy, xx = np.indices((size, size))
    cycles = (a * yy + b * xx) / size
    phase = ramp_depth * (np.mod(cycles + 0.5, 1.0) - 0.5)
    return ComplexImage(amp * np.exp(1j * phase))


def make_lattice_object(size: int, period: int = 8, peak_phase: float = 0.5, atom_sigma: float = 1.2) -> ComplexImage:
    """Pure phase object with Gaussian "atoms" on a two-site periodic lattice.

    The second site sits at half the period along x with 60% weight, which
    gives a honeycomb-like motif that tiles the cyclic grid exactly when
    ``period`` divides ``size``.
    """
    if size % period:
        raise ValueError("period must divide size for a seamless cyclic lattice")
    yy, xx = np.indices((size, size), dtype=float)
    phase = np.zeros((size, size))
    sites = [(0.0, 0.0, 1.0), (period / 2, period / 2, 0.6)]
    for oy, ox, w in sites:
        dy = np.mod(yy - oy - period / 4 + period / 2, period) - period / 2
        dx = np.mod(xx - ox - period / 4 + period / 2, period) - period / 2
        phase += w * np.exp(-(dy**2 + dx**2) / (2 * atom_sigma**2))
    phase *= peak_phase / phase.max()
    return ComplexImage(np.exp(1j * phase))


# -- probe and forward model -----------------------------------------------


def aperture_disc(shape, center, radius, value=1.0, shift=(0.0, 0.0)) -> np.ndarray:
    """Hard-edged disc evaluated at ``q + shift`` (inclusive boundary)."""
    yy, xx = np.indices(shape, dtype=float)
    r2 = (yy + shift[0] - center[0]) ** 2 + (xx + shift[1] - center[1]) ** 2
    return np.where(r2 <= radius**2 * (1.0 + 1e-9), value, 0.0)


def centered_fft2(a, inverse=False):
    """Unitary 2-D transform on the last two axes with zero frequency at ``N // 2``."""
    axes = (-2, -1)
    a = sfft.ifftshift(a, axes=axes)
    a = sfft.ifft2(a, axes=axes, norm="ortho") if inverse else sfft.fft2(a, axes=axes, norm="ortho")
    return sfft.fftshift(a, axes=axes)


def make_probe(geom: AcquisitionGeometry, aperture_value: float = 1.0) -> tuple[ComplexImage, ComplexImage]:
    """Ideal circular aperture in reciprocal space and its real-space probe (both centered)."""
    recip = aperture_disc(geom.detector_shape, geom.detector_center, geom.aperture_radius_px, aperture_value)
    recip = recip.astype(complex)
    real = centered_fft2(recip, inverse=True)
    return ComplexImage(real), ComplexImage(recip)


def forward(
    obj: ComplexImage,
    probe_real: ComplexImage,
    geom: AcquisitionGeometry,
    step_px: tuple[int, int] = (1, 1),
    dtype=np.float64,
) -> Dataset4D:
    """Intensities ``|F(P_s * O)|^2`` with the probe rolled to each scan position.

    Scan point ``(i, j)`` places the probe centre on object pixel
    ``(i * step_px[0], j * step_px[1])`` (cyclic). The exit wave is
    inverse-FFT-shifted, transformed (unitary) and FFT-shifted.
    """
    shape = geom.detector_shape
    if obj.shape != shape or probe_real.shape != shape:
        raise ValueError(f"object {obj.shape} and probe {probe_real.shape} must both match detector {shape}")
    sy, sx = geom.scan_shape
    p0 = sfft.ifftshift(probe_real.data)  # probe centre moved to pixel (0, 0)
    o = obj.data
    frames = np.empty((sy, sx, *shape), dtype=dtype)
    cols = np.arange(sx) * step_px[1]
    for i in range(sy):
        row_probe = np.roll(p0, i * step_px[0], axis=0)
        exit_waves = np.stack([np.roll(row_probe, c, axis=1) for c in cols]) * o
        frames[i] = np.abs(centered_fft2(exit_waves)) ** 2
    return Dataset4D(geom, frames)


def apply_poisson(ds: Dataset4D, dose: float, seed: int | None = None) -> Dataset4D:
    """Poisson counts with mean ``dose * I_s / mean(I_s)`` per frame."""
    if not dose > 0:
        raise ValueError(f"dose must be positive, got {dose}")
    rng = np.random.default_rng(seed)
    frames = ds.frames.astype(float)
    means = frames.mean(axis=(-2, -1), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normed = np.where(means > 0, frames / means, 0.0)
    noisy = rng.poisson(dose * normed).astype(ds.frames.dtype)
    return Dataset4D(ds.geometry, noisy)


def virtual_bright_field(ds: Dataset4D) -> np.ndarray:
    mask = aperture_disc(ds.geometry.detector_shape, ds.geometry.detector_center, ds.geometry.aperture_radius_px)
    return np.tensordot(ds.frames, mask, axes=([-2, -1], [0, 1]))


def bandpass_reference(obj: ComplexImage, geom: AcquisitionGeometry, step_px: tuple[int, int] = (1, 1)) -> ComplexImage:
    """Object low-passed to the WDD transfer band (disc of twice the aperture radius).

    Object-spectrum bins are mapped to detector pixels by treating the object
    grid as a scan with one object pixel per ``step / step_px``.
    """
    ny, nx = obj.shape
    fy = np.fft.fftfreq(ny) * ny
    fx = np.fft.fftfreq(nx) * nx
    vy, vx = np.meshgrid(fy, fx, indexing="ij")
    # an object pixel is step/step_px; equivalent scan counts for physical_shift
    s_y, s_x = physical_shift(geom, vy * geom.scan_shape[0] * step_px[0] / ny, vx * geom.scan_shape[1] * step_px[1] / nx)
    radius = geom.aperture_radius_px
    keep = s_y**2 + s_x**2 <= 4 * radius**2 * (1 + 1e-9)
    spec = sfft.fft2(obj.data, norm="ortho")
    return ComplexImage(sfft.ifft2(spec * keep, norm="ortho"), obj.pixel_size)


def phase_maxima(phase: np.ndarray, size: int = 5, threshold: float = 0.5) -> np.ndarray:
    """Local maxima of a phase image above ``threshold`` of its range, as ``(k, 2)`` pixel coordinates."""
    lo, hi = phase.min(), phase.max()
    peaks = (ndimage.maximum_filter(phase, size=size, mode="wrap") == phase) & (phase > lo + threshold * (hi - lo))
    return np.argwhere(peaks)


def validation_geometry(size: int = 64) -> AcquisitionGeometry:
    """Roll-based geometry for the asymmetric test object."""
    radius = max(4, round(size * 10 / 64))
    return AcquisitionGeometry.cyclic(size, radius_px=radius)


def simulate_validation(size: int = 64, aperture_value: float = 17.0, dtype=np.float64):
    """Object, probe pair and noise-free dataset for the validation protocol."""
    geom = validation_geometry(size)
    obj = make_test_object(size)
    probe_real, probe_recip = make_probe(geom, aperture_value)
    ds = forward(obj, probe_real, geom, dtype=dtype)
    return obj, probe_recip, ds
