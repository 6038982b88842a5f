"""Probe autocorrelations per scan frequency and the compressed Wiener filter bank.

For every scan frequency ``v`` whose shifted aperture overlaps the unshifted
one, the bank holds ``K_v = conj(H(Y_v)) / (|H(Y_v)|^2 + eps)`` where ``H`` is
the Hermite-Gauss projection and ``Y_v(q) = p(q) conj(p(q + s_v))``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .geometry import AcquisitionGeometry, FrequencyIndex, active_mask, frequency_grid, natural_index, physical_shift
from .hermite import HermiteBasis
from .simulator import ComplexImage, aperture_disc

DEFAULT_EPSILON = 0.01
SHIFT_STRATEGIES = ("aperture", "nearest", "fourier")
BANK_MAGIC = b"WFB1"


def _shifted_probe(probe_recip: np.ndarray, shift, strategy: str, geom: AcquisitionGeometry) -> np.ndarray:
    """``p(q + shift)`` on the detector grid."""
    if strategy == "aperture":
        # re-evaluate the ideal disc at the shifted coordinates; exact for a hard aperture
        value = probe_recip[geom.detector_center]
        return aperture_disc(geom.detector_shape, geom.detector_center, geom.aperture_radius_px, value, shift).astype(
            complex
        )
    if strategy == "nearest":
        dy, dx = int(round(shift[0])), int(round(shift[1]))
        return np.roll(probe_recip, (-dy, -dx), axis=(0, 1))
    if strategy == "fourier":
        ny, nx = probe_recip.shape
        ky = sfft.fftfreq(ny)[:, None]
        kx = sfft.fftfreq(nx)[None, :]
        spec = sfft.fft2(probe_recip) * np.exp(2j * np.pi * (ky * shift[0] + kx * shift[1]))
        return sfft.ifft2(spec)
    raise ValueError(f"unknown shift strategy {strategy!r}; choose from {SHIFT_STRATEGIES}")


def probe_autocorrelation(
    probe_recip: ComplexImage | np.ndarray,
    idx: FrequencyIndex,
    geom: AcquisitionGeometry,
    strategy: str = "aperture",
) -> np.ndarray:
    """``Y_v(q) = p(q) conj(p(q + s_v))`` for the centered reciprocal probe ``p``.

    ``strategy`` selects how sub-pixel shifts are realised: ``"aperture"``
    re-samples an ideal disc (the probe must be one), ``"nearest"`` rounds to
    whole pixels and ``"fourier"`` applies a band-limited shift.
    """
    p = probe_recip.data if isinstance(probe_recip, ComplexImage) else np.asarray(probe_recip)
    shift = physical_shift(geom, idx.v_y, idx.v_x)
    return p * np.conj(_shifted_probe(p, shift, strategy, geom))


@dataclass(frozen=True, eq=False)
class WienerFilterBank:
    """Compressed filters for the active scan frequencies.

    Attributes
    ----------
    filters : ndarray
        ``(V, L, L)`` complex, one filter per active frequency.
    active : ndarray
        Flattened centered frequency indices, ascending, length ``V``.
    scan_shape : tuple of int
    epsilon : float
    basis_id : str
        Digest of the Hermite basis the filters were built with.
    """

    filters: np.ndarray
    active: np.ndarray
    scan_shape: tuple[int, int]
    epsilon: float
    basis_id: str

    @property
    def orders(self) -> int:
        return self.filters.shape[-1]

    @property
    def active_yx(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered-grid ``(row, col)`` positions of the active frequencies."""
        return np.divmod(self.active, self.scan_shape[1])

    @property
    def natural_yx(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions of the active frequencies in unshifted FFT order."""
        iy, ix = self.active_yx
        sy, sx = self.scan_shape
        return natural_index(iy - sy // 2, ix - sx // 2, self.scan_shape)

    def filter(self, v: int) -> np.ndarray:
        pos = np.searchsorted(self.active, v)
        if pos == self.active.size or self.active[pos] != v:
            return np.zeros((self.orders, self.orders), dtype=self.filters.dtype)
        return self.filters[pos]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.filters).tobytes())
        h.update(self.active.astype("<u4").tobytes())
        h.update(struct.pack("<IId", *self.scan_shape, self.epsilon))
        h.update(self.basis_id.encode())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        l = self.orders
        with open(path, "wb") as fh:
            fh.write(BANK_MAGIC)
            fh.write(struct.pack("<IIIdI", *self.scan_shape, l, self.epsilon, self.active.size))
            data = self.filters.astype("<c8")
            for v, k in zip(self.active, data):
                fh.write(struct.pack("<I", int(v)))
                fh.write(k.tobytes())

    @classmethod
    def load(cls, path: str | Path, basis_id: str = "") -> "WienerFilterBank":
        """Read a bank file. The file does not store the basis, so pass its digest to restore ``basis_id``."""
        raw = Path(path).read_bytes()
        if raw[:4] != BANK_MAGIC:
            raise ValueError(f"{path}: not a filter bank file")
        head = struct.calcsize("<IIIdI")
        sy, sx, l, eps, count = struct.unpack_from("<IIIdI", raw, 4)
        off = 4 + head
        entry = 4 + 8 * l * l
        if len(raw) != off + count * entry:
            raise ValueError(f"{path}: expected {count} entries, file size does not match")
        rec = np.frombuffer(raw, dtype=np.dtype([("v", "<u4"), ("k", "<c8", (l, l))]), count=count, offset=off)
        return cls(rec["k"].astype(np.complex64), rec["v"].astype(np.int64), (sy, sx), eps, basis_id)


def bank_key(geom: AcquisitionGeometry, probe_recip, basis: HermiteBasis, epsilon: float, strategy: str) -> str:
    """Content hash identifying a bank, used as its cache file name."""
    p = probe_recip.data if isinstance(probe_recip, ComplexImage) else np.asarray(probe_recip)
    h = hashlib.sha256()
    h.update(geom.digest().encode())
    h.update(np.ascontiguousarray(p, dtype=complex).tobytes())
    h.update(basis.digest().encode())
    h.update(struct.pack("<d", epsilon))
    h.update(strategy.encode())
    return h.hexdigest()[:32]


def build_filter_bank(
    geom: AcquisitionGeometry,
    probe_recip: ComplexImage | np.ndarray,
    basis: HermiteBasis,
    epsilon: float = DEFAULT_EPSILON,
    strategy: str = "aperture",
    dtype=np.complex64,
) -> WienerFilterBank:
    """Precompute ``K_v`` for every overlapping scan frequency."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if basis.shape != geom.detector_shape:
        raise ValueError(f"basis shape {basis.shape} does not match detector {geom.detector_shape}")
    mask = active_mask(geom)
    active = np.flatnonzero(mask)
    vy, vx = frequency_grid(geom.scan_shape)
    vy, vx = vy.ravel()[active], vx.ravel()[active]
    filters = np.empty((active.size, basis.orders, basis.orders), dtype=dtype)
    for i, v in enumerate(active):
        y = probe_autocorrelation(probe_recip, FrequencyIndex(int(v), int(vy[i]), int(vx[i])), geom, strategy)
        h = basis.project(y)
        filters[i] = np.conj(h) / (np.abs(h) ** 2 + epsilon)
    return WienerFilterBank(filters, active.astype(np.int64), geom.scan_shape, float(epsilon), basis.digest())


def cached_filter_bank(cache_dir: str | Path, geom, probe_recip, basis, epsilon=DEFAULT_EPSILON, strategy="aperture"):
    """Load the bank from ``cache_dir`` if present, otherwise build and store it."""
    cache_dir = Path(cache_dir)
    path = cache_dir / f"bank-{bank_key(geom, probe_recip, basis, epsilon, strategy)}.wfb"
    if path.exists():
        return WienerFilterBank.load(path, basis.digest())
    bank = build_filter_bank(geom, probe_recip, basis, epsilon, strategy)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    bank.save(tmp)
    tmp.replace(path)
    return bank
