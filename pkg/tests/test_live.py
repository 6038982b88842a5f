import numpy as np
import pytest

from livewdd.dft import DftPair, streaming_transform
from livewdd.geometry import AcquisitionGeometry
from livewdd.hermite import build_basis
from livewdd.io import write_p4d
from livewdd.live import (
    LiveError,
    LiveReconstructor,
    finalize,
    merge,
    merge_all,
    run_live,
    worker_count,
)
from livewdd.simulator import ComplexImage, forward, make_probe
from livewdd.stream import FileSource, MemorySource
from livewdd.wiener import WienerFilterBank, build_filter_bank


def random_setup(rng, scan=(2, 2), n=8, orders=2):
    g = AcquisitionGeometry.cyclic(n, radius_px=2, scan_shape=scan)
    basis = build_basis(n, orders, 1.5)
    size = scan[0] * scan[1]
    k = rng.normal(size=(size, orders, orders)) + 1j * rng.normal(size=(size, orders, orders))
    bank = WienerFilterBank(k, np.arange(size), scan, 0.01, basis.digest())
    return g, basis, bank, LiveReconstructor(g, bank, basis)


def test_single_frame_brute_force(rng):
    g, basis, bank, recon = random_setup(rng)
    frame = rng.uniform(0, 5, (8, 8))
    s = 3
    state = recon.process_frame(recon.new_state(), s, frame)

    # independent evaluation straight from the definitions
    sy, sx = 2, 2
    c = basis.psi_x.T @ frame.T @ basis.psi_y
    expected = np.zeros((sy, sx), complex)
    for v in range(sy * sx):
        vy, vx = divmod(v, sx)
        fy, fx = vy - sy // 2, vx - sx // 2  # centered frequency
        ny, nx = fy % sy, fx % sx  # natural index into the DFT
        s_y, s_x = divmod(s, sx)
        f = np.exp(-2j * np.pi * (ny * s_y / sy + nx * s_x / sx)) / np.sqrt(sy * sx)
        expected[vy, vx] = f * np.sum(c * bank.filters[v])
    np.testing.assert_allclose(state.o_accum, expected, atol=1e-12)
    assert state.frames_seen == 1


def test_zero_frame_changes_nothing_but_seen(small):
    *_, recon = small
    state = recon.process_frame(recon.new_state(), 5, np.zeros((32, 32)))
    assert not state.o_accum.any()
    assert state.seen[5] and state.frames_seen == 1


def test_batch_versus_stream(small):
    _, _, ds, recon = small
    state = recon.process_source(recon.new_state(), MemorySource(ds))
    # batch pipeline: full scan transform of the compressed frames, then per-frequency deconvolution
    l = recon.orders
    # sources deliver float32 frames, so the oracle starts from the same values
    frames = ds.frames.reshape(-1, 32, 32).astype(np.float32)
    coeffs = recon.basis.project(frames).reshape(-1, l * l)
    t = streaming_transform(enumerate(coeffs), recon.pair).reshape(32, 32, l, l)
    t = np.fft.fftshift(t, axes=(0, 1)).reshape(-1, l, l)
    expected = np.zeros(32 * 32, complex)
    for i, v in enumerate(recon.active):
        expected[v] = np.sum(t[v] * recon.bank.filters[i])
    assert np.abs(state.o_accum.ravel() - expected).max() < 1e-10


def test_order_and_partition_invariance(small, rng):
    _, _, ds, recon = small
    ref = finalize(recon.process_source(recon.new_state(), MemorySource(ds))).obj
    order = rng.permutation(ds.scan_size)
    states = []
    for part in np.array_split(order, 4):
        st = recon.new_state()
        recon.process_frames(st, part, ds.frames.reshape(-1, 32, 32)[part].astype(np.float32))
        states.append(st)
    merged = merge_all(states[i] for i in rng.permutation(4))
    assert merged.complete
    assert np.abs(finalize(merged).obj - ref).max() < 1e-10


def test_merge_identity_and_commutativity(small, rng):
    _, _, ds, recon = small
    frames = ds.frames.reshape(-1, 32, 32)
    a = recon.process_frames(recon.new_state(), np.arange(0, 300), frames[:300])
    b = recon.process_frames(recon.new_state(), np.arange(300, 700), frames[300:700])
    empty = recon.new_state()
    assert np.array_equal(merge(a, empty).o_accum, a.o_accum)
    assert np.abs(merge(a, b).o_accum - merge(b, a).o_accum).max() < 1e-12
    with pytest.raises(LiveError, match="overlap"):
        merge(a, merge(a, b))


def test_merge_rejects_other_configuration(small, rng):
    _, _, _, recon = small
    g, _, _, other = random_setup(rng)
    with pytest.raises(LiveError, match="configuration"):
        merge(recon.new_state(), other.new_state())
    with pytest.raises(LiveError, match="configuration"):
        recon.process_frame(other.new_state(), 0, np.zeros((32, 32)))


def test_frame_errors(small):
    *_, recon = small
    state = recon.process_frame(recon.new_state(), 0, np.ones((32, 32)))
    with pytest.raises(LiveError, match="duplicate"):
        recon.process_frame(state, 0, np.ones((32, 32)))
    with pytest.raises(LiveError, match="duplicate"):
        recon.process_frames(state, [4, 4], np.ones((2, 32, 32)))
    with pytest.raises(LiveError, match="shape"):
        recon.process_frame(state, 1, np.ones((31, 32)))
    with pytest.raises(LiveError, match="negative"):
        recon.process_frame(state, 1, -np.ones((32, 32)))
    with pytest.raises(LiveError, match="outside"):
        recon.process_frame(state, 32 * 32, np.ones((32, 32)))
    assert state.frames_seen == 1


def test_inactive_entries_untouched(rng):
    g = AcquisitionGeometry.cyclic(32, radius_px=4)
    real, recip = make_probe(g, 17.0)
    basis = build_basis(32, 6, 2.0)
    recon = LiveReconstructor(g, build_filter_bank(g, recip, basis), basis)
    inactive = np.setdiff1d(np.arange(g.scan_size), recon.active)
    assert inactive.size
    state = recon.new_state()
    recon.process_frames(state, np.arange(64), rng.uniform(0, 1, (64, 32, 32)))
    assert not state.o_accum.ravel()[inactive].any()


def test_finalize_zero_and_non_mutating(small):
    _, _, ds, recon = small
    assert not finalize(recon.new_state()).obj.any()
    state = recon.process_source(recon.new_state(), MemorySource(ds))
    before = state.o_accum.copy()
    res = finalize(state, normalize=True)
    assert np.array_equal(state.o_accum, before)
    assert res.normalized and res.complete and res.frames_seen == ds.scan_size


def test_constant_object_constant_phase():
    g = AcquisitionGeometry.cyclic(32, radius_px=6)
    real, recip = make_probe(g, 17.0)
    ds = forward(ComplexImage(np.ones((32, 32), complex)), real, g)
    basis = build_basis(32, 8, 3.0)
    recon = LiveReconstructor(g, build_filter_bank(g, recip, basis), basis)
    obj = finalize(recon.process_source(recon.new_state(), MemorySource(ds))).obj
    phase = np.angle(obj * np.conj(obj[0, 0]))
    np.testing.assert_allclose(phase, 0.0, atol=1e-6)


def test_staged_snapshots_converge(small):
    _, _, ds, recon = small
    frames = ds.frames.reshape(-1, 32, 32).astype(np.float32)
    final = finalize(recon.process_source(recon.new_state(), MemorySource(ds))).obj
    dists = []
    state = recon.new_state()
    done = 0
    for frac in (0.1, 0.5, 1.0):
        stop = int(round(frac * ds.scan_size))
        recon.process_frames(state, np.arange(done, stop), frames[done:stop])
        done = stop
        snap = finalize(state).obj
        assert np.all(np.isfinite(snap))
        dists.append(np.linalg.norm(snap - final))
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 1e-10 * np.linalg.norm(final)


def test_identical_banks_bit_identical(small):
    _, recip, ds, recon = small
    g = ds.geometry
    twin = LiveReconstructor(g, build_filter_bank(g, recip, recon.basis, 0.01), recon.basis)
    a = finalize(recon.process_source(recon.new_state(), MemorySource(ds))).obj
    b = finalize(twin.process_source(twin.new_state(), MemorySource(ds))).obj
    assert a.tobytes() == b.tobytes()


def test_reconstructor_consistency_checks(small, rng):
    _, recip, ds, recon = small
    other_basis = build_basis(32, 8, 2.0)
    with pytest.raises(LiveError, match="different basis"):
        LiveReconstructor(ds.geometry, recon.bank, other_basis)


def test_parallel_runs_match_serial(small, tmp_path):
    _, _, ds, recon = small
    serial, _ = run_live(recon, MemorySource(ds))
    queued, stats = run_live(recon, MemorySource(ds), workers=3)
    assert stats.frames == ds.scan_size
    path = write_p4d(tmp_path / "d.p4d", ds)
    with FileSource(path) as src:
        ranged, _ = run_live(recon, src, workers=2, file_path=path)
    ref = finalize(serial).obj
    for st in (queued, ranged):
        assert st.complete
        assert np.abs(finalize(st).obj - ref).max() < 1e-10


def test_parallel_is_bit_stable(small):
    _, _, ds, recon = small
    a, _ = run_live(recon, MemorySource(ds), workers=2)
    b, _ = run_live(recon, MemorySource(ds, order=np.random.default_rng(0).permutation(ds.scan_size)), workers=2)
    c, _ = run_live(recon, MemorySource(ds), workers=2)
    assert a.o_accum.tobytes() == c.o_accum.tobytes()
    assert np.abs(a.o_accum - b.o_accum).max() < 1e-10


def test_snapshots_reported(small):
    _, _, ds, recon = small
    seen = []
    _, stats = run_live(recon, MemorySource(ds), snapshot_every=256, on_snapshot=lambda r: seen.append(r.frames_seen))
    assert seen == [256, 512, 768, 1024]
    seen.clear()
    run_live(recon, MemorySource(ds), workers=2, snapshot_every=128, on_snapshot=lambda r: seen.append(r.frames_seen))
    assert seen and seen == sorted(seen) and seen[-1] <= ds.scan_size


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("LIVEWDD_THREADS", raising=False)
    assert worker_count(3) == 3
    monkeypatch.setenv("LIVEWDD_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("LIVEWDD_THREADS", "zero")
    with pytest.raises(LiveError):
        worker_count(1)
