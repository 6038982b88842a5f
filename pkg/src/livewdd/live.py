"""Frame-by-frame WDD in a compressed Hermite-Gauss space.

Each frame ``I_s`` is projected to ``c = H(I_s)`` and contributes
``f_s[v] * sum(c * K_v)`` to the object spectrum at every active scan frequency
``v``, where ``f_s`` is column ``s`` of the 2-D scan DFT. States built from
disjoint frame subsets add, so work can be split and merged in any order.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing as mp
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .dft import DftPair
from .geometry import AcquisitionGeometry
from .hermite import HermiteBasis
from .wiener import WienerFilterBank

log = logging.getLogger(__name__)

DEFAULT_BATCH = 32


class LiveError(ValueError):
    pass


class LiveReconstructor:
    """Immutable configuration shared by all states: geometry, basis, filters and DFT factors."""

    def __init__(self, geom: AcquisitionGeometry, bank: WienerFilterBank, basis: HermiteBasis, pair: DftPair | None = None):
        if bank.scan_shape != geom.scan_shape:
            raise LiveError(f"bank scan shape {bank.scan_shape} != geometry {geom.scan_shape}")
        if basis.shape != geom.detector_shape:
            raise LiveError(f"basis shape {basis.shape} != detector {geom.detector_shape}")
        if bank.basis_id and bank.basis_id != basis.digest():
            raise LiveError("filter bank was built with a different basis")
        if bank.orders != basis.orders:
            raise LiveError(f"bank has L={bank.orders}, basis has L={basis.orders}")
        self.geometry = geom
        self.bank = bank
        self.basis = basis
        self.pair = pair or DftPair.for_scan(geom.scan_shape)
        if self.pair.scan_shape != geom.scan_shape:
            raise LiveError("DFT pair does not match scan shape")
        l = basis.orders
        self.orders = l
        self.k_flat = np.ascontiguousarray(bank.filters.reshape(-1, l * l), dtype=np.complex128)
        self.active = bank.active
        ny_v, nx_v = bank.natural_yx
        # rows of F_y / F_x needed for the active frequencies
        self.fy_rows = np.ascontiguousarray(self.pair.F_y[ny_v])
        self.fx_rows = np.ascontiguousarray(self.pair.F_x[nx_v])
        self.config_id = self._config_id()

    def _config_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.geometry.digest().encode())
        h.update(self.bank.digest().encode())
        h.update(self.basis.digest().encode())
        return h.hexdigest()

    @property
    def scan_shape(self) -> tuple[int, int]:
        return self.geometry.scan_shape

    def new_state(self) -> "LiveState":
        return LiveState(
            o_accum=np.zeros(self.scan_shape, dtype=np.complex128),
            seen=np.zeros(self.geometry.scan_size, dtype=bool),
            config_id=self.config_id,
        )

    # -- per-frame math ---------------------------------------------------

    def _check(self, state: "LiveState", indices: np.ndarray, frames: np.ndarray) -> None:
        if state.config_id != self.config_id:
            raise LiveError("state belongs to a different configuration")
        if frames.shape[1:] != self.geometry.detector_shape:
            raise LiveError(f"frame shape {frames.shape[1:]} != detector {self.geometry.detector_shape}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.geometry.scan_size):
            raise LiveError(f"scan index outside [0, {self.geometry.scan_size})")
        if np.unique(indices).size != indices.size or state.seen[indices].any():
            dup = indices[state.seen[indices]] if state.seen[indices].any() else indices
            raise LiveError(f"duplicate scan index {int(dup[0])}")
        if frames.size and np.min(frames) < 0:
            raise LiveError("negative intensities")

    def contributions(self, indices: np.ndarray, frames: np.ndarray) -> np.ndarray:
        """Per-active-frequency sums ``sum_s f_s[v] * sum(H(I_s) * K_v)`` for a block of frames."""
        c = self.basis.project(frames).reshape(len(indices), -1)
        t = self.k_flat @ c.T.astype(np.complex128)  # (V, B)
        sy, sx = np.divmod(indices, self.scan_shape[1])
        f = self.fy_rows[:, sy] * self.fx_rows[:, sx]  # (V, B) entries of f_s at active v
        return np.einsum("vb,vb->v", t, f)

    def process_frames(self, state: "LiveState", indices, frames) -> "LiveState":
        """Accumulate a block of frames into ``state`` in place and return it."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        frames = np.asarray(frames)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.shape[0] != indices.size:
            raise LiveError("index and frame counts differ")
        self._check(state, indices, frames)
        if indices.size:
            state.o_accum.reshape(-1)[self.active] += self.contributions(indices, frames)
            state.seen[indices] = True
        return state

    def process_frame(self, state: "LiveState", s: int, frame) -> "LiveState":
        return self.process_frames(state, [s], np.asarray(frame)[None])

    def process_source(self, state, source, batch=DEFAULT_BATCH, on_batch: Callable | None = None):
        for idx, frames in source.batches(batch):
            self.process_frames(state, idx, frames)
            if on_batch is not None:
                on_batch(state)
        return state

    def finalize(self, state: "LiveState", normalize: bool = False) -> "LiveResult":
        return finalize(state, normalize)


@dataclass
class LiveState:
    """Mergeable accumulator: centered object spectrum plus the set of scan indices seen."""

    o_accum: np.ndarray
    seen: np.ndarray
    config_id: str

    @property
    def frames_seen(self) -> int:
        return int(self.seen.sum())

    @property
    def complete(self) -> bool:
        return bool(self.seen.all())

    def copy(self) -> "LiveState":
        return LiveState(self.o_accum.copy(), self.seen.copy(), self.config_id)


def merge(a: LiveState, b: LiveState) -> LiveState:
    """Sum two states built from disjoint frame sets."""
    if a.config_id != b.config_id:
        raise LiveError("cannot merge states from different configurations")
    overlap = np.flatnonzero(a.seen & b.seen)
    if overlap.size:
        raise LiveError(f"states overlap on {overlap.size} scan indices (first {int(overlap[0])})")
    return LiveState(a.o_accum + b.o_accum, a.seen | b.seen, a.config_id)


def merge_all(states) -> LiveState:
    states = list(states)
    if not states:
        raise LiveError("nothing to merge")
    out = states[0].copy()
    for st in states[1:]:
        out = merge(out, st)
    return out


@dataclass
class LiveResult:
    obj: np.ndarray
    frames_seen: int
    scan_size: int
    normalized: bool = False

    @property
    def complete(self) -> bool:
        return self.frames_seen == self.scan_size


def finalize(state: LiveState, normalize: bool = False) -> LiveResult:
    """Object estimate ``conj(ifft2(O))``; the state is left untouched.

    With ``normalize`` the spectrum is first divided by the square root of its
    zero-frequency value, which puts the result on the reference scale.
    """
    spec = state.o_accum
    sy, sx = spec.shape
    done = False
    if normalize:
        dc = spec[sy // 2, sx // 2]
        if dc != 0:
            spec = spec / np.sqrt(dc + 0j)
            done = True
    obj = np.conj(sfft.ifft2(sfft.ifftshift(spec), norm="ortho"))
    return LiveResult(obj, state.frames_seen, state.seen.size, done)


# -- parallel execution ----------------------------------------------------


def worker_count(requested: int | None = None) -> int:
    """``LIVEWDD_THREADS`` wins over the requested count."""
    env = os.environ.get("LIVEWDD_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise LiveError(f"LIVEWDD_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise LiveError("LIVEWDD_THREADS must be at least 1")
        return n
    return max(1, int(requested or 1))


@dataclass
class RunStats:
    frames: int = 0
    seconds: float = 0.0
    snapshots: list = field(default_factory=list)
    error: str | None = None

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else float("nan")


def _limit_blas():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=1)


def _range_worker(recon: LiveReconstructor, path, part, batch, snapshot_every, results):
    from .stream import FileSource, StreamError

    _limit_blas()
    state = recon.new_state()
    note = None
    try:
        with FileSource(path, begin=part.begin, end=part.end) as src:
            since = 0
            try:
                for idx, frames in src.batches(batch):
                    recon.process_frames(state, idx, frames)
                    since += len(idx)
                    if snapshot_every and since >= snapshot_every:
                        results.put(("partial", part.begin, state.copy(), None))
                        since = 0
            except StreamError as exc:
                note = str(exc)
        results.put(("done", part.begin, state, note))
    except Exception as exc:  # forwarded to the parent
        results.put(("error", part.begin, None, repr(exc)))


def _queue_worker(recon: LiveReconstructor, inbox, part, batch, snapshot_every, results):
    _limit_blas()
    state = recon.new_state()
    idx, buf = [], []
    since = 0
    try:
        while True:
            item = inbox.get()
            if item is not None:
                idx.append(item[0])
                buf.append(item[1])
            if len(idx) >= batch or (item is None and idx):
                recon.process_frames(state, np.asarray(idx), np.stack(buf))
                since += len(idx)
                idx, buf = [], []
                if snapshot_every and since >= snapshot_every:
                    results.put(("partial", part.begin, state.copy(), None))
                    since = 0
            if item is None:
                break
        results.put(("done", part.begin, state, None))
    except Exception as exc:
        results.put(("error", part.begin, None, repr(exc)))
        while inbox.get() is not None:  # drain so the reader never blocks forever
            pass


def run_live(
    recon: LiveReconstructor,
    source,
    workers: int = 1,
    batch: int = DEFAULT_BATCH,
    snapshot_every: int = 0,
    on_snapshot: Callable[[LiveResult], None] | None = None,
    file_path=None,
) -> tuple[LiveState, RunStats]:
    """Consume a frame source with ``workers`` processes and merge their states.

    Scan indices are split into contiguous partitions. If ``file_path`` is
    given, each worker reads its own range straight from the file; otherwise
    the caller's ``source`` is read here and frames are fanned out through
    bounded queues (the reader blocks when a worker falls behind). Partial
    states are always merged in partition order, so a fixed worker count gives
    bit-stable output.
    """
    from .stream import QUEUE_CAPACITY, StreamError, owner_table, partition

    stats = RunStats()
    t0 = time.perf_counter()
    if workers <= 1:
        state = recon.new_state()
        counter = {"n": 0}

        def tick(st):
            if snapshot_every and st.frames_seen - counter["n"] >= snapshot_every:
                counter["n"] = st.frames_seen
                snap = finalize(st)
                stats.snapshots.append(st.frames_seen)
                if on_snapshot:
                    on_snapshot(snap)

        try:
            recon.process_source(state, source, batch, tick)
        except StreamError as exc:
            stats.error = str(exc)
        stats.frames = state.frames_seen
        stats.seconds = time.perf_counter() - t0
        return state, stats

    ctx = mp.get_context("fork")
    parts = partition(recon.geometry.scan_size, workers)
    results = ctx.Queue()
    procs, inboxes = [], []
    for p in parts:
        if file_path is not None:
            args = (recon, str(file_path), p, batch, snapshot_every, results)
            proc = ctx.Process(target=_range_worker, args=args, daemon=True)
        else:
            inbox = ctx.Queue(maxsize=QUEUE_CAPACITY)
            inboxes.append(inbox)
            proc = ctx.Process(target=_queue_worker, args=(recon, inbox, p, batch, snapshot_every, results), daemon=True)
        proc.start()
        procs.append(proc)

    reader_error = []
    if file_path is None:
        owner = owner_table(parts)

        def read():
            try:
                for s, frame in source:
                    inboxes[owner[s]].put((s, np.array(frame)))
            except Exception as exc:
                reader_error.append(exc)
            finally:
                for q in inboxes:
                    q.put(None)

        reader = threading.Thread(target=read, daemon=True)
        reader.start()

    final: dict[int, LiveState] = {}
    latest: dict[int, LiveState] = {}
    errors = []
    while len(final) + len(errors) < len(parts):
        try:
            kind, key, payload, note = results.get(timeout=1.0)
        except queue.Empty:
            if not any(p.is_alive() for p in procs) and results.empty():
                errors.append("worker exited without reporting")
                break
            continue
        if kind == "error":
            errors.append(note)
        elif kind == "partial":
            latest[key] = payload
            if on_snapshot:
                on_snapshot(finalize(merge_all(latest[k] for k in sorted(latest))))
            stats.snapshots.append(sum(st.frames_seen for st in latest.values()))
        else:
            final[key] = payload
            latest[key] = payload
            if note and stats.error is None:
                stats.error = note
    if file_path is None:
        reader.join()
    for proc in procs:
        proc.join(timeout=10)
    if reader_error:
        if not isinstance(reader_error[0], StreamError):
            raise reader_error[0]
        stats.error = str(reader_error[0])
    if errors:
        raise LiveError(f"worker failed: {errors[0]}")
    state = merge_all(final[p.begin] for p in parts)
    stats.frames = state.frames_seen
    stats.seconds = time.perf_counter() - t0
    return state, stats
