"""Acquisition geometry, scan-frequency indexing and disc-overlap pruning.

Scan frequencies are indexed on a centered (fftshift-style) grid: the flattened
index ``v`` runs row-major over ``(S_y, S_x)`` and maps to the signed pair
``(v - S//2)`` per axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import constants

SIDECAR_KEYS = (
    "wavelength_pm",
    "semiconv_mrad",
    "step_y_nm",
    "step_x_nm",
    "scan_y",
    "scan_x",
    "det_y",
    "det_x",
    "calib_mrad_per_px",
    "rotation_deg",
)

# relative slack for "inclusive" boundary comparisons on float shifts
BOUNDARY_RTOL = 1e-9


def electron_wavelength_pm(energy_kev: float) -> float:
    """Relativistic electron wavelength in picometres."""
    e = energy_kev * 1e3 * constants.e
    mc2 = constants.m_e * constants.c**2
    lam = constants.h * constants.c / math.sqrt(e * (e + 2.0 * mc2))
    return lam * 1e12


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Physical and sampling parameters of a 4D-STEM acquisition.

    Parameters
    ----------
    wavelength_pm : float
        Electron wavelength in pm.
    semiconv_mrad : float
        Probe semiconvergence angle in mrad.
    step_y_nm, step_x_nm : float
        Scan step along each axis in nm.
    scan_shape : tuple of int
        ``(S_y, S_x)`` scan points.
    detector_shape : tuple of int
        ``(N_y, N_x)`` detector pixels.
    calib_mrad_per_px : float
        Detector angular calibration.
    rotation_deg : float
        In-plane rotation between scan and detector axes.
    radius_px_override : float, optional
        Use this bright-field disc radius instead of ``semiconv / calib``.
    """

    wavelength_pm: float
    semiconv_mrad: float
    step_y_nm: float
    step_x_nm: float
    scan_shape: tuple[int, int]
    detector_shape: tuple[int, int]
    calib_mrad_per_px: float
    rotation_deg: float = 0.0
    radius_px_override: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scan_shape", tuple(int(v) for v in self.scan_shape))
        object.__setattr__(self, "detector_shape", tuple(int(v) for v in self.detector_shape))
        for name in ("wavelength_pm", "semiconv_mrad", "step_y_nm", "step_x_nm", "calib_mrad_per_px"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if len(self.scan_shape) != 2 or min(self.scan_shape) < 1:
            raise ValueError(f"scan_shape must be two positive integers, got {self.scan_shape}")
        if len(self.detector_shape) != 2 or min(self.detector_shape) < 1:
            raise ValueError(f"detector_shape must be two positive integers, got {self.detector_shape}")
        if not math.isfinite(self.rotation_deg):
            raise ValueError("rotation_deg must be finite")
        if self.radius_px_override is not None and not self.radius_px_override > 0:
            raise ValueError("radius_px_override must be positive")
        radius = self.aperture_radius_px
        if not 2 * radius < min(self.detector_shape):
            raise ValueError(
                f"aperture radius {radius:.3f} px does not fit detector {self.detector_shape} (need 2R < N)"
            )

    @property
    def aperture_radius_px(self) -> float:
        if self.radius_px_override is not None:
            return float(self.radius_px_override)
        return self.semiconv_mrad / self.calib_mrad_per_px

    @property
    def scan_size(self) -> int:
        return self.scan_shape[0] * self.scan_shape[1]

    @property
    def detector_center(self) -> tuple[float, float]:
        """Zero-angle pixel under the fftshift convention."""
        return (self.detector_shape[0] // 2, self.detector_shape[1] // 2)

    @classmethod
    def cyclic(
        cls,
        size: int,
        radius_px: float,
        semiconv_mrad: float = 20.0,
        wavelength_pm: float | None = None,
        scan_shape: tuple[int, int] | None = None,
    ) -> "AcquisitionGeometry":
        """Geometry where scan frequency ``v`` maps to a shift of exactly ``v`` detector px.

        This is the sampling of the roll-based simulation: object, probe and
        detector share one ``size x size`` grid and the scan step is one object
        pixel.
        """
        if wavelength_pm is None:
            wavelength_pm = electron_wavelength_pm(200.0)
        scan_shape = scan_shape or (size, size)
        sin_t = math.sin(semiconv_mrad * 1e-3)
        lam_nm = wavelength_pm * 1e-3
        step_y = radius_px * lam_nm / (scan_shape[0] * sin_t)
        step_x = radius_px * lam_nm / (scan_shape[1] * sin_t)
        return cls(
            wavelength_pm=wavelength_pm,
            semiconv_mrad=semiconv_mrad,
            step_y_nm=step_y,
            step_x_nm=step_x,
            scan_shape=scan_shape,
            detector_shape=(size, size),
            calib_mrad_per_px=semiconv_mrad / radius_px,
        )

    # -- sidecar ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "wavelength_pm": self.wavelength_pm,
            "semiconv_mrad": self.semiconv_mrad,
            "step_y_nm": self.step_y_nm,
            "step_x_nm": self.step_x_nm,
            "scan_y": self.scan_shape[0],
            "scan_x": self.scan_shape[1],
            "det_y": self.detector_shape[0],
            "det_x": self.detector_shape[1],
            "calib_mrad_per_px": self.calib_mrad_per_px,
            "rotation_deg": self.rotation_deg,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AcquisitionGeometry":
        keys = set(data)
        unknown = keys - set(SIDECAR_KEYS)
        missing = set(SIDECAR_KEYS) - keys
        if unknown:
            raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
        if missing:
            raise ValueError(f"missing geometry keys: {sorted(missing)}")
        return cls(
            wavelength_pm=float(data["wavelength_pm"]),
            semiconv_mrad=float(data["semiconv_mrad"]),
            step_y_nm=float(data["step_y_nm"]),
            step_x_nm=float(data["step_x_nm"]),
            scan_shape=(int(data["scan_y"]), int(data["scan_x"])),
            detector_shape=(int(data["det_y"]), int(data["det_x"])),
            calib_mrad_per_px=float(data["calib_mrad_per_px"]),
            rotation_deg=float(data["rotation_deg"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AcquisitionGeometry":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        payload = json.dumps(
            {**self.to_dict(), "radius_px_override": self.radius_px_override}, sort_keys=True
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def graphene_geometry(scan_shape=(64, 65), detector_size=256, step_px=4) -> AcquisitionGeometry:
    """Table-style graphene parameters (30 mrad, 60 keV, 0.02 nm) on a roll-based grid.

    The detector calibration is chosen so that one detector pixel is the
    reciprocal of the simulated object field ``detector_size * step / step_px``.
    """
    lam = electron_wavelength_pm(60.0)
    step_nm = 0.02
    object_px_nm = step_nm / step_px
    calib = lam * 1e-3 / (detector_size * object_px_nm) * 1e3
    return AcquisitionGeometry(
        wavelength_pm=lam,
        semiconv_mrad=30.0,
        step_y_nm=step_nm,
        step_x_nm=step_nm,
        scan_shape=scan_shape,
        detector_shape=(detector_size, detector_size),
        calib_mrad_per_px=calib,
    )


# -- frequency indexing ----------------------------------------------------


@dataclass(frozen=True)
class FrequencyIndex:
    v: int
    v_y: int
    v_x: int


def unflatten(v: int, scan_shape: tuple[int, int]) -> FrequencyIndex:
    sy, sx = scan_shape
    if not 0 <= v < sy * sx:
        raise IndexError(f"frequency index {v} out of range for scan {scan_shape}")
    iy, ix = divmod(int(v), sx)
    return FrequencyIndex(int(v), iy - sy // 2, ix - sx // 2)


def flatten(v_y: int, v_x: int, scan_shape: tuple[int, int]) -> FrequencyIndex:
    sy, sx = scan_shape
    iy, ix = v_y + sy // 2, v_x + sx // 2
    if not (0 <= iy < sy and 0 <= ix < sx):
        raise IndexError(f"frequency ({v_y}, {v_x}) out of range for scan {scan_shape}")
    return FrequencyIndex(iy * sx + ix, int(v_y), int(v_x))


def frequency_grid(scan_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Signed centered frequency indices, each of shape ``scan_shape``."""
    sy, sx = scan_shape
    return np.meshgrid(np.arange(sy) - sy // 2, np.arange(sx) - sx // 2, indexing="ij")


def natural_index(v_y, v_x, scan_shape):
    """Map signed frequencies to FFT (unshifted) positions."""
    return np.mod(v_y, scan_shape[0]), np.mod(v_x, scan_shape[1])


# -- physics ---------------------------------------------------------------


def physical_shift(geom: AcquisitionGeometry, v_y, v_x):
    """Shift of the probe autocorrelation in detector pixels for scan frequency ``(v_y, v_x)``.

    Works on scalars or arrays. With zero rotation this is
    ``v * lambda * R / (step * S * sin(theta))`` per axis.
    """
    lam_nm = geom.wavelength_pm * 1e-3
    sin_t = math.sin(geom.semiconv_mrad * 1e-3)
    radius = geom.aperture_radius_px
    # physical spatial frequency in 1/nm
    k_y = np.asarray(v_y, dtype=float) / (geom.step_y_nm * geom.scan_shape[0])
    k_x = np.asarray(v_x, dtype=float) / (geom.step_x_nm * geom.scan_shape[1])
    if geom.rotation_deg:
        phi = math.radians(geom.rotation_deg)
        c, s = math.cos(phi), math.sin(phi)
        k_y, k_x = c * k_y + s * k_x, -s * k_y + c * k_x
    scale = lam_nm * radius / sin_t
    s_y, s_x = k_y * scale, k_x * scale
    if s_y.ndim == 0:
        return float(s_y), float(s_x)
    return s_y, s_x


def intersection_bound(geom: AcquisitionGeometry) -> tuple[float, float]:
    """Per-axis index bound ``sqrt(2) * step * sin(theta) / lambda * S``.

    Note that this is the bound as usually quoted, which is derived from a
    sufficient condition for overlap. It is *not* safe for pruning; use
    :func:`pruning_box` for that.
    """
    lam_nm = geom.wavelength_pm * 1e-3
    sin_t = math.sin(geom.semiconv_mrad * 1e-3)
    return (
        math.sqrt(2.0) * geom.step_y_nm * sin_t / lam_nm * geom.scan_shape[0],
        math.sqrt(2.0) * geom.step_x_nm * sin_t / lam_nm * geom.scan_shape[1],
    )


def pruning_box(geom: AcquisitionGeometry) -> tuple[float, float]:
    """Sound per-axis bound: any overlapping frequency has ``|v_axis|`` at most this.

    Overlap means ``|k| <= 2 sin(theta) / lambda`` for the physical frequency
    ``k``; rotation preserves ``|k|`` so the box does not depend on it.
    """
    lam_nm = geom.wavelength_pm * 1e-3
    sin_t = math.sin(geom.semiconv_mrad * 1e-3)
    return (
        2.0 * geom.step_y_nm * sin_t / lam_nm * geom.scan_shape[0],
        2.0 * geom.step_x_nm * sin_t / lam_nm * geom.scan_shape[1],
    )


def overlaps(geom: AcquisitionGeometry, v_y, v_x):
    """True where the aperture disc and its shifted copy intersect (tangency included)."""
    s_y, s_x = physical_shift(geom, v_y, v_x)
    radius = geom.aperture_radius_px
    result = np.square(s_y) + np.square(s_x) <= 4.0 * radius**2 * (1.0 + BOUNDARY_RTOL)
    if np.ndim(result) == 0:
        return bool(result)
    return result


def active_mask(geom: AcquisitionGeometry) -> np.ndarray:
    """Boolean ``scan_shape`` mask of frequencies whose discs overlap."""
    vy, vx = frequency_grid(geom.scan_shape)
    by, bx = pruning_box(geom)
    boxed = (np.abs(vy) <= math.ceil(by)) & (np.abs(vx) <= math.ceil(bx))
    mask = np.zeros(geom.scan_shape, dtype=bool)
    mask[boxed] = overlaps(geom, vy[boxed], vx[boxed])
    return mask
