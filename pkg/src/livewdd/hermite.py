"""Sampled Hermite-Gauss bases and the compression operator built from them."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AcquisitionGeometry

DEFAULT_ORDERS = 16


def hermite_gauss_1d(n: int, sigma: float, grid) -> np.ndarray:
    """Hermite-Gauss function ``H_n(x/sigma) exp(-x^2 / 2 sigma^2)`` sampled on ``grid``, unit L2 norm.

    The polynomial is evaluated with the three-term recurrence in its
    normalised form (each step rescaled by the ratio of consecutive norms), so
    neither ``2^n n!`` nor ``H_n`` itself is ever formed and high orders do not
    overflow.
    """
    if n < 0 or int(n) != n:
        raise ValueError(f"order must be a non-negative integer, got {n!r}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    u = np.asarray(grid, dtype=float) / sigma
    if u.size == 0:
        raise ValueError("grid must not be empty")
    prev = np.zeros_like(u)
    cur = np.exp(-0.5 * u * u) * math.pi**-0.25
    for k in range(int(n)):
        nxt = math.sqrt(2.0 / (k + 1)) * u * cur - math.sqrt(k / (k + 1)) * prev
        prev, cur = cur, nxt
    norm = np.linalg.norm(cur)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f"order {n} underflows to zero on this grid (sigma={sigma})")
    return cur / norm


def hermite_matrix(size: int, orders: int, sigma: float, center: float) -> np.ndarray:
    """``size x orders`` matrix whose column ``n`` is the order-``n`` function about ``center``."""
    grid = np.arange(size, dtype=float) - center
    return np.stack([hermite_gauss_1d(n, sigma, grid) for n in range(orders)], axis=1)


@dataclass(frozen=True, eq=False)
class HermiteBasis:
    """Separable Hermite-Gauss basis on an ``N_y x N_x`` detector.

    ``project`` maps a frame ``A`` to ``psi_x.T @ A.T @ psi_y`` (row index is
    the x-order, column index the y-order). ``unproject`` is its
    pseudo-inverse, exact on the span of the basis.
    """

    psi_y: np.ndarray
    psi_x: np.ndarray
    sigma: float
    center: tuple[float, float]
    _pinv_y: np.ndarray = field(repr=False)
    _pinv_x: np.ndarray = field(repr=False)

    @property
    def orders(self) -> int:
        return self.psi_x.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.psi_y.shape[0], self.psi_x.shape[0])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.psi_y).tobytes())
        h.update(np.ascontiguousarray(self.psi_x).tobytes())
        return h.hexdigest()

    def project(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if a.shape[-2:] != self.shape:
            raise ValueError(f"expected trailing shape {self.shape}, got {a.shape}")
        # psi_x^T A^T psi_y, batched over leading axes
        return np.swapaxes(self.psi_y.T @ a @ self.psi_x, -1, -2)

    def unproject(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c)
        if c.shape[-2:] != (self.orders, self.orders):
            raise ValueError(f"expected trailing shape {(self.orders, self.orders)}, got {c.shape}")
        return self._pinv_y.T @ np.swapaxes(c, -1, -2) @ self._pinv_x


def build_basis(
    shape: int | tuple[int, int],
    orders: int = DEFAULT_ORDERS,
    sigma: float = 1.0,
    center: tuple[float, float] | None = None,
) -> HermiteBasis:
    """Build a basis on a detector of ``shape`` (an int means square).

    ``center`` defaults to the zero-angle pixel ``(N_y // 2, N_x // 2)``.
    """
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape), int(shape))
    ny, nx = shape
    if not 1 <= orders <= min(ny, nx):
        raise ValueError(f"orders must be in [1, {min(ny, nx)}], got {orders}")
    if center is None:
        center = (ny // 2, nx // 2)
    psi_y = hermite_matrix(ny, orders, sigma, center[0])
    psi_x = hermite_matrix(nx, orders, sigma, center[1])
    return HermiteBasis(
        psi_y=psi_y,
        psi_x=psi_x,
        sigma=float(sigma),
        center=(float(center[0]), float(center[1])),
        _pinv_y=np.linalg.pinv(psi_y),
        _pinv_x=np.linalg.pinv(psi_x),
    )


def default_sigma(geom: AcquisitionGeometry, override: float | None = None) -> float:
    """Half the bright-field disc radius, unless overridden."""
    if override is not None:
        return float(override)
    return geom.aperture_radius_px / 2.0


def center_of_mass(frames: np.ndarray) -> tuple[float, float]:
    """Intensity centroid of the summed frames (PACBED), in pixels."""
    frames = np.asarray(frames, dtype=float)
    pacbed = frames.reshape(-1, *frames.shape[-2:]).sum(axis=0)
    total = pacbed.sum()
    if total <= 0:
        raise ValueError("cannot take centre of mass of an empty pattern")
    ys, xs = np.indices(pacbed.shape)
    return float((ys * pacbed).sum() / total), float((xs * pacbed).sum() / total)


def self_reciprocal_sigma(m: int) -> float:
    """Width in samples for which an ``m``-point centered unitary DFT maps ``psi_n`` onto itself (up to a phase)."""
    return math.sqrt(m / (2.0 * math.pi))
