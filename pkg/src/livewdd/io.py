"""On-disk formats: the P4D frame container, complex rasters and 8-bit graymaps."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import AcquisitionGeometry
from .simulator import Dataset4D

P4D_MAGIC = b"P4D1"
P4D_VERSION = 1
# magic, version u16, S_y S_x N_y N_x u32, dtype u8
P4D_HEADER = struct.Struct("<4sHIIIIB")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2")}
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<u2"): 1}


# exactly one whitespace byte separates the header from the pixel data
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class P4DHeader:
    scan_shape: tuple[int, int]
    detector_shape: tuple[int, int]
    dtype_code: int

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.dtype_code]

    @property
    def frame_bytes(self) -> int:
        return self.detector_shape[0] * self.detector_shape[1] * self.dtype.itemsize

    @property
    def scan_size(self) -> int:
        return self.scan_shape[0] * self.scan_shape[1]


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_p4d(path: str | Path, ds: Dataset4D, dtype: str = "f32") -> Path:
    """Write frames in scan order plus a ``<path>.json`` geometry sidecar."""
    code = {"f32": 0, "u16": 1}[dtype]
    frames = np.asarray(ds.frames)
    if code == 1:
        if frames.min() < 0 or frames.max() > 65535 or not np.all(frames == np.round(frames)):
            raise FormatError("u16 container needs integer counts in [0, 65535]")
    data = np.ascontiguousarray(frames, dtype=DTYPES[code])
    sy, sx = ds.geometry.scan_shape
    ny, nx = ds.geometry.detector_shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(P4D_HEADER.pack(P4D_MAGIC, P4D_VERSION, sy, sx, ny, nx, code))
        fh.write(data.tobytes())
    ds.geometry.save(sidecar_path(path))
    return path


def read_p4d_header(fh) -> P4DHeader:
    raw = fh.read(P4D_HEADER.size)
    if len(raw) != P4D_HEADER.size:
        raise FormatError("file too short for a P4D header")
    magic, version, sy, sx, ny, nx, code = P4D_HEADER.unpack(raw)
    if magic != P4D_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {P4D_MAGIC!r}")
    if version != P4D_VERSION:
        raise FormatError(f"unsupported P4D version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    return P4DHeader((sy, sx), (ny, nx), code)


def check_p4d(path: str | Path) -> P4DHeader:
    """Validate header, exact file size and sidecar agreement."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = read_p4d_header(fh)
    expected = P4D_HEADER.size + header.scan_size * header.frame_bytes
    size = path.stat().st_size
    if size != expected:
        good = (size - P4D_HEADER.size) // header.frame_bytes - 1
        raise FormatError(f"{path}: size {size} != expected {expected}; last complete frame index {good}")
    side = sidecar_path(path)
    if side.exists():
        geom = AcquisitionGeometry.load(side)
        if geom.scan_shape != header.scan_shape or geom.detector_shape != header.detector_shape:
            raise FormatError(f"{side}: shapes disagree with container header")
    return header


def read_p4d(path: str | Path, geometry: AcquisitionGeometry | None = None) -> Dataset4D:
    header = check_p4d(path)
    geom = geometry or AcquisitionGeometry.load(sidecar_path(path))
    data = np.fromfile(path, dtype=header.dtype, offset=P4D_HEADER.size)
    frames = data.reshape(*header.scan_shape, *header.detector_shape)
    if header.dtype_code == 1:
        frames = frames.astype(np.float32)
    return Dataset4D(geom, frames)


# -- complex rasters and images ----------------------------------------------


def write_complex(path: str | Path, image: np.ndarray, meta: dict | None = None) -> Path:
    """Interleaved little-endian f64 ``(re, im)`` pairs, row-major, with a JSON sidecar."""
    image = np.asarray(image, dtype=np.complex128)
    path = Path(path)
    image.astype("<c16").tofile(path)
    info = {"shape": list(image.shape), "dtype": "complex128-interleaved-f64-le", **(meta or {})}
    sidecar_path(path).write_text(json.dumps(info, indent=2) + "\n")
    return path


def read_complex(path: str | Path) -> np.ndarray:
    info = json.loads(sidecar_path(path).read_text())
    return np.fromfile(path, dtype="<c16").reshape(info["shape"])


def write_pgm(path: str | Path, image: np.ndarray) -> Path:
    """Binary 8-bit graymap."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("graymap needs a 2-D image")
    rows, cols = image.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(image.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise FormatError("not a binary graymap")
    cols, rows, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError("only 8-bit graymaps are supported")
    pixels = raw[m.end() : m.end() + rows * cols]
    if len(pixels) != rows * cols:
        raise FormatError("graymap pixel data is short")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(rows, cols)


def phase_to_u8(phase: np.ndarray) -> np.ndarray:
    """Map ``[-pi, pi]`` linearly onto ``[0, 255]``."""
    scaled = (np.asarray(phase) + np.pi) / (2 * np.pi) * 255.0
    return np.clip(np.round(scaled), 0, 255).astype(np.uint8)


def minmax_to_u8(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_object_images(out_dir: str | Path, stem: str, obj: np.ndarray) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    return (
        write_pgm(out_dir / f"{stem}_phase.pgm", phase_to_u8(np.angle(obj))),
        write_pgm(out_dir / f"{stem}_amplitude.pgm", minmax_to_u8(np.abs(obj))),
    )
