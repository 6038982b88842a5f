import json
import subprocess
import sys
import threading

import numpy as np
import pytest

from livewdd.cli import main
from livewdd.io import read_complex, read_p4d, read_pgm
from livewdd.stream import RECORD_HEADER, StreamHeader, bind_server, serve


@pytest.fixture(scope="module")
def data32(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim") / "d.p4d"
    assert main(["simulate", "--size", "32", "--out", str(path)]) == 0
    return path


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "livewdd", *args], capture_output=True, text=True)


def test_simulate_is_reproducible(tmp_path, data32):
    again = tmp_path / "again.p4d"
    assert main(["simulate", "--size", "32", "--out", str(again)]) == 0
    assert again.read_bytes() == data32.read_bytes()
    a, b = tmp_path / "a.p4d", tmp_path / "b.p4d"
    for p in (a, b):
        assert main(["simulate", "--size", "32", "--dose", "1000", "--seed", "7", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_p4d(a).frames.dtype == np.float32  # u16 container read back as float32
    c = tmp_path / "c.p4d"
    main(["simulate", "--size", "32", "--dose", "1000", "--seed", "8", "--out", str(c)])
    assert c.read_bytes() != a.read_bytes()


def test_reconstruct_outputs(tmp_path, data32):
    out = tmp_path / "live"
    assert main(["reconstruct", "--input", str(data32), "--L", "8", "--snapshot-every", "256",
                 "--bank-cache", str(tmp_path / "cache"), "--out-dir", str(out)]) == 0  # fmt: skip
    obj = read_complex(out / "object.c128")
    assert obj.shape == (32, 32) and np.all(np.isfinite(obj))
    meta = json.loads((out / "object.c128.json").read_text())
    assert meta["complete"] and meta["frames_seen"] == 1024
    for name in ("object_phase.pgm", "object_amplitude.pgm", "object.png", "snapshots.png",
                 "snapshot_0000256_phase.pgm"):  # fmt: skip
        assert (out / name).exists(), name
    assert read_pgm(out / "object_phase.pgm").shape == (32, 32)
    assert list((tmp_path / "cache").glob("bank-*.wfb"))


def test_reference_reconstruct(tmp_path, data32):
    out = tmp_path / "ref"
    assert main(["reconstruct", "--mode", "reference", "--input", str(data32), "--out-dir", str(out)]) == 0
    assert json.loads((out / "object.c128.json").read_text())["normalized"]


def test_file_and_tcp_agree(tmp_path, data32):
    srv = bind_server("127.0.0.1", 0)
    port = srv.getsockname()[1]
    t = threading.Thread(target=serve, kwargs=dict(path=data32, max_clients=1, server=srv), daemon=True)
    t.start()
    common = ["--L", "8", "--bank-cache", str(tmp_path / "cache"), "--deterministic"]
    assert main(["reconstruct", "--input", f"tcp://127.0.0.1:{port}", "--geometry", f"{data32}.json",
                 "--out-dir", str(tmp_path / "tcp"), *common]) == 0  # fmt: skip
    t.join(5)
    srv.close()
    assert main(["reconstruct", "--input", str(data32), "--out-dir", str(tmp_path / "file"), *common]) == 0
    a = read_complex(tmp_path / "tcp" / "object.c128")
    b = read_complex(tmp_path / "file" / "object.c128")
    assert a.tobytes() == b.tobytes()


def test_incomplete_stream_writes_partial_and_exits_2(tmp_path, data32):
    ds = read_p4d(data32)
    header = StreamHeader((32, 32), (32, 32)).pack()
    records = b"".join(RECORD_HEADER.pack(s, 4096) + ds.frame(s).astype(np.float32).tobytes() for s in range(100))
    srv = bind_server("127.0.0.1", 0)

    def run():
        conn, _ = srv.accept()
        with conn:
            conn.sendall(header + records)

    threading.Thread(target=run, daemon=True).start()
    out = tmp_path / "partial"
    code = main(["reconstruct", "--input", f"127.0.0.1:{srv.getsockname()[1]}", "--geometry", f"{data32}.json",
                 "--L", "8", "--bank-cache", str(tmp_path / "cache"), "--out-dir", str(out)])  # fmt: skip
    srv.close()
    assert code == 2
    meta = json.loads((out / "object.c128.json").read_text())
    assert meta["frames_seen"] == 100 and not meta["complete"]
    assert "last good index 99" in meta["stream_error"]


def test_validate_exit_codes(tmp_path):
    good = tmp_path / "good"
    assert main(["validate", "--size", "32", "--out-dir", str(good)]) == 0
    report = json.loads((good / "report.json").read_text())
    assert report["passed"]
    for name in ("validation.png", "vbf.pgm", "reconstruction_phase.pgm", "difference_amplitude.pgm"):
        assert (good / name).exists(), name
    noisy = ["validate", "--size", "32", "--dose", "10", "--out-dir", str(tmp_path / "noisy")]
    assert main(noisy) == 3
    assert main([*noisy, "--expect-degraded"]) == 0


def test_usage_and_data_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main(["bogus"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["reconstruct"])
    assert err.value.code == 1
    assert main(["reconstruct", "--input", str(tmp_path / "missing.p4d"), "--geometry", "nope.json"]) == 2
    bad = tmp_path / "bad.p4d"
    bad.write_bytes(b"not a container at all")
    (tmp_path / "bad.p4d.json").write_text("{}")
    assert main(["reconstruct", "--input", str(bad), "--out-dir", str(tmp_path / "o")]) in (1, 2)
    assert main(["reconstruct", "--input", "tcp://127.0.0.1:9"]) == 1  # no geometry for a socket


def test_entry_point_help():
    res = run_cli("--help")
    assert res.returncode == 0
    for cmd in ("simulate", "serve", "reconstruct", "validate", "benchmark"):
        assert cmd in res.stdout


def test_graphene_like_preset_recovers_lattice_period(tmp_path):
    from livewdd.validation import fourier_peak

    data = tmp_path / "g.p4d"
    assert main(["simulate", "--preset", "graphene-like", "--size", "64", "--out", str(data)]) == 0
    assert read_p4d(data).geometry.scan_shape == (64, 65)
    assert main(["reconstruct", "--input", str(data), "--L", "8", "--bank-cache", str(tmp_path / "c"),
                 "--out-dir", str(tmp_path / "o")]) == 0  # fmt: skip
    obj = read_complex(tmp_path / "o" / "object.c128")
    # period-8 lattice on a 64 x 65 scan: the strongest bins sit at +-64/8 and +-65/8 (rounded)
    iy, ix = fourier_peak(obj)
    assert min(iy, 64 - iy) == 8 and min(ix, 65 - ix) == 8
