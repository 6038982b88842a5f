"""Frame sources, the P4DS detector-emulation protocol, and scan partitioning.

Wire protocol, all little-endian. On connect the server sends a 30-byte
header ``"P4DS" | version u16 = 1 | S_y S_x N_y N_x u32 | dtype u8 | 7 reserved``
(dtype 0 = f32, 1 = u16). Each frame follows as ``s u32 | payload_len u32 |
payload`` in row-major order, and the stream ends with ``s = 0xFFFFFFFF``.
"""

from __future__ import annotations

import logging
import re
import socket
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .io import DTYPES, P4D_HEADER, FormatError, read_p4d_header
from .simulator import Dataset4D

log = logging.getLogger(__name__)

WIRE_MAGIC = b"P4DS"
WIRE_VERSION = 1
WIRE_HEADER = struct.Struct("<4sHIIIIB7x")
RECORD_HEADER = struct.Struct("<II")
SENTINEL = 0xFFFFFFFF
QUEUE_CAPACITY = 64

_TCP = re.compile(r"^(?:tcp://)?(?P<host>[^/:]+|\[[^\]]+\]):(?P<port>\d+)$")


class StreamError(IOError):
    pass


class TruncatedStreamError(StreamError):
    def __init__(self, message: str, last_good: int | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class StreamHeader:
    scan_shape: tuple[int, int]
    detector_shape: tuple[int, int]
    dtype_code: int = 0

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.dtype_code]

    @property
    def scan_size(self) -> int:
        return self.scan_shape[0] * self.scan_shape[1]

    @property
    def frame_bytes(self) -> int:
        return self.detector_shape[0] * self.detector_shape[1] * self.dtype.itemsize

    def pack(self) -> bytes:
        return WIRE_HEADER.pack(WIRE_MAGIC, WIRE_VERSION, *self.scan_shape, *self.detector_shape, self.dtype_code)

    @classmethod
    def unpack(cls, raw: bytes) -> "StreamHeader":
        if len(raw) != WIRE_HEADER.size:
            raise StreamError(f"short stream header ({len(raw)} of {WIRE_HEADER.size} bytes)")
        magic, version, sy, sx, ny, nx, code = WIRE_HEADER.unpack(raw)
        if magic != WIRE_MAGIC:
            raise StreamError(f"bad stream magic {magic!r}")
        if version != WIRE_VERSION:
            raise StreamError(f"unsupported stream version {version}")
        if code not in DTYPES:
            raise StreamError(f"unknown dtype code {code}")
        return cls((sy, sx), (ny, nx), code)


@dataclass(frozen=True)
class Partition:
    begin: int
    end: int

    def __len__(self) -> int:
        return self.end - self.begin

    def __contains__(self, s: int) -> bool:
        return self.begin <= s < self.end


def partition(total: int, workers: int) -> list[Partition]:
    """Near-equal contiguous ranges tiling ``[0, total)``; larger ranges first."""
    if workers < 1:
        raise ValueError(f"need at least one worker, got {workers}")
    base, extra = divmod(total, workers)
    parts, begin = [], 0
    for w in range(workers):
        end = begin + base + (1 if w < extra else 0)
        parts.append(Partition(begin, end))
        begin = end
    return parts


def owner_table(parts: list[Partition]) -> np.ndarray:
    """``owner[s]`` = index of the partition containing scan index ``s``."""
    owner = np.empty(parts[-1].end, dtype=np.int64)
    for i, p in enumerate(parts):
        owner[p.begin : p.end] = i
    return owner


class _Throttle:
    def __init__(self, fps: float):
        self.period = 1.0 / fps if fps and fps > 0 else 0.0
        self.t0 = None
        self.count = 0

    def wait(self):
        if not self.period:
            return
        now = time.perf_counter()
        if self.t0 is None:
            self.t0 = now
        delay = self.t0 + self.count * self.period - now
        if delay > 0:
            time.sleep(delay)
        self.count += 1


class FrameSource:
    """Iterable of ``(s, frame)`` with ``frame`` a float32 ``N_y x N_x`` array.

    Frames yielded by :meth:`__iter__` may share a buffer; copy them if they
    must outlive the next iteration.
    """

    header: StreamHeader

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        raise NotImplementedError

    def batches(self, size: int = 32) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(indices, frames)`` blocks of up to ``size`` frames (fresh arrays)."""
        idx, buf = [], []
        try:
            for s, frame in self:
                idx.append(s)
                buf.append(np.array(frame, dtype=np.float32))
                if len(idx) == size:
                    yield np.asarray(idx), np.stack(buf)
                    idx, buf = [], []
        except StreamError as exc:
            # hand over the frames that did arrive before reporting the failure
            if idx:
                yield np.asarray(idx), np.stack(buf)
            raise exc
        if idx:
            yield np.asarray(idx), np.stack(buf)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MemorySource(FrameSource):
    def __init__(self, ds: Dataset4D, order=None, fps: float = 0.0):
        g = ds.geometry
        self.ds = ds
        self.order = order
        self.fps = fps
        self.header = StreamHeader(g.scan_shape, g.detector_shape, 0)

    def __iter__(self):
        throttle = _Throttle(self.fps)
        for s, frame in self.ds.iter_frames(self.order):
            throttle.wait()
            yield s, np.asarray(frame, dtype=np.float32)


class FileSource(FrameSource):
    """Replay a P4D container, optionally a sub-range, optionally at a fixed frame rate."""

    def __init__(self, path: str | Path, fps: float = 0.0, begin: int = 0, end: int | None = None):
        self.path = Path(path)
        self.fps = fps
        self._fh = open(self.path, "rb")
        try:
            h = read_p4d_header(self._fh)
        except FormatError:
            self._fh.close()
            raise
        self.header = StreamHeader(h.scan_shape, h.detector_shape, h.dtype_code)
        self.begin = begin
        self.end = h.scan_size if end is None else end
        if not 0 <= self.begin <= self.end <= h.scan_size:
            raise ValueError(f"range [{begin}, {end}) outside scan of {h.scan_size}")

    def _read_into(self, view: memoryview, s: int) -> None:
        got = self._fh.readinto(view)
        if got != len(view):
            last = s - 1 if s > 0 else None
            raise TruncatedStreamError(f"{self.path}: truncated in frame {s}; last good index {last}", last)

    def __iter__(self):
        h = self.header
        self._fh.seek(P4D_HEADER.size + self.begin * h.frame_bytes)
        raw = np.empty(h.detector_shape, dtype=h.dtype)
        out = raw if h.dtype_code == 0 else np.empty(h.detector_shape, dtype=np.float32)
        throttle = _Throttle(self.fps)
        for s in range(self.begin, self.end):
            self._read_into(memoryview(raw).cast("B"), s)
            throttle.wait()
            if h.dtype_code:
                np.copyto(out, raw)
            yield s, out

    def batches(self, size: int = 32):
        if self.fps:
            yield from super().batches(size)
            return
        h = self.header
        self._fh.seek(P4D_HEADER.size + self.begin * h.frame_bytes)
        for start in range(self.begin, self.end, size):
            n = min(size, self.end - start)
            raw = np.empty((n, *h.detector_shape), dtype=h.dtype)
            view = memoryview(raw).cast("B")
            got = self._fh.readinto(view)
            if got != len(view):
                whole = got // h.frame_bytes
                if whole:
                    yield np.arange(start, start + whole), raw[:whole].astype(np.float32, copy=False)
                last = start + whole - 1
                last = last if last >= 0 else None
                raise TruncatedStreamError(f"{self.path}: truncated; last good index {last}", last)
            yield np.arange(start, start + n), raw.astype(np.float32, copy=False)

    def close(self):
        self._fh.close()


class SocketSource(FrameSource):
    """Client side of the P4DS protocol."""

    def __init__(self, host: str, port: int, timeout: float | None = 30.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise StreamError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._fh = self._sock.makefile("rb")
        self.header = StreamHeader.unpack(self._fh.read(WIRE_HEADER.size))
        self.complete = False

    def __iter__(self):
        h = self.header
        raw = np.empty(h.detector_shape, dtype=h.dtype)
        out = raw if h.dtype_code == 0 else np.empty(h.detector_shape, dtype=np.float32)
        view = memoryview(raw).cast("B")
        last = None
        while True:
            rec = self._fh.read(RECORD_HEADER.size)
            if len(rec) != RECORD_HEADER.size:
                raise TruncatedStreamError(f"stream ended without sentinel; last good index {last}", last)
            s, length = RECORD_HEADER.unpack(rec)
            if s == SENTINEL:
                self.complete = True
                return
            if s >= h.scan_size:
                raise StreamError(f"record index {s} outside scan of {h.scan_size}")
            if length != h.frame_bytes:
                raise StreamError(f"record {s} has payload {length} bytes, expected {h.frame_bytes}")
            got = self._fh.readinto(view)
            if got != length:
                raise TruncatedStreamError(f"stream truncated in record {s}; last good index {last}", last)
            if h.dtype_code:
                np.copyto(out, raw)
            last = s
            yield s, out

    def close(self):
        self._fh.close()
        self._sock.close()


def open_source(uri: str | Path, fps: float = 0.0) -> FrameSource:
    """Open a P4D file path or a ``tcp://host:port`` (or ``host:port``) endpoint."""
    text = str(uri)
    m = _TCP.match(text)
    if m and not Path(text).exists():
        host = m.group("host").strip("[]")
        return SocketSource(host, int(m.group("port")))
    return FileSource(text, fps=fps)


# -- server ----------------------------------------------------------------


def send_stream(conn: socket.socket, path: str | Path, fps: float = 0.0) -> int:
    """Send one full P4DS stream of the container at ``path``; returns frames sent."""
    src = FileSource(path)
    h = src.header
    try:
        conn.sendall(h.pack())
        raw_fh = src._fh
        raw_fh.seek(P4D_HEADER.size)
        throttle = _Throttle(fps)
        count = 0
        for s in range(h.scan_size):
            payload = raw_fh.read(h.frame_bytes)
            if len(payload) != h.frame_bytes:
                raise TruncatedStreamError(f"{path}: truncated in frame {s}", s - 1 if s else None)
            throttle.wait()
            conn.sendall(RECORD_HEADER.pack(s, h.frame_bytes) + payload)
            count += 1
        conn.sendall(RECORD_HEADER.pack(SENTINEL, 0))
        return count
    finally:
        src.close()


def bind_server(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.create_server((host, port))
    return srv


def serve(path: str | Path, host: str = "127.0.0.1", port: int = 0, fps: float = 0.0, max_clients: int | None = None, server=None):
    """Serve the file to clients one after another, each getting a full stream."""
    FileSource(path).close()  # validate header before listening
    srv = server or bind_server(host, port)
    served = 0
    try:
        while max_clients is None or served < max_clients:
            conn, addr = srv.accept()
            with conn:
                try:
                    n = send_stream(conn, path, fps)
                    log.info("sent %d frames to %s", n, addr)
                except (BrokenPipeError, ConnectionResetError):
                    log.warning("client %s disconnected early", addr)
            served += 1
    finally:
        if server is None:
            srv.close()
    return served
