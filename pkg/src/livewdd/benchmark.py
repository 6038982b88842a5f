"""Timing and peak-memory trials, each run in a fresh subprocess.

The parent samples the resident set size of the trial process and all of its
children every 0.2 s and keeps the maximum.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import psutil

from .geometry import AcquisitionGeometry
from .io import read_p4d, write_p4d
from .simulator import Dataset4D, aperture_disc, forward, make_probe, make_test_object

SAMPLE_PERIOD = 0.2
CSV_FIELDS = ["mode", "Sy", "Sx", "Ny", "Nx", "workers", "trial", "seconds", "peak_mb", "fps"]


def parse_dims(text: str) -> tuple[int, int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise ValueError(f"dims must look like SyxSxxNyxNx, got {text!r}")
    dims = tuple(int(p) for p in parts)
    if min(dims) < 1:
        raise ValueError(f"dims must be positive, got {text!r}")
    return dims


def benchmark_geometry(dims) -> AcquisitionGeometry:
    sy, sx, ny, nx = dims
    if ny != nx:
        raise ValueError("benchmark data needs a square detector")
    return AcquisitionGeometry.cyclic(ny, radius_px=max(2, round(ny * 10 / 64)), scan_shape=(sy, sx))


def make_benchmark_data(dims, workdir) -> Path:
    """Write (once) a float32 P4D dataset of the requested size and return its path."""
    sy, sx, ny, nx = dims
    path = Path(workdir) / f"bench_{sy}x{sx}x{ny}x{nx}.p4d"
    if path.exists():
        return path
    Path(workdir).mkdir(parents=True, exist_ok=True)
    geom = benchmark_geometry(dims)
    if ny % sy == 0 and nx % sx == 0:
        probe_real, _ = make_probe(geom, 17.0)
        obj = make_test_object(ny) if ny >= 25 else make_test_object(25)
        ds = forward(obj, probe_real, geom, step_px=(ny // sy, nx // sx), dtype=np.float32)
    else:
        # scan does not tile the detector grid: timing only needs plausible frames
        rng = np.random.default_rng(0)
        disc = aperture_disc(geom.detector_shape, geom.detector_center, geom.aperture_radius_px, 289.0)
        frames = (disc * rng.uniform(0.5, 1.5, (sy, sx, 1, 1))).astype(np.float32)
        ds = Dataset4D(geom, frames)
    tmp = path.with_suffix(".tmp")
    write_p4d(tmp, ds)
    tmp.with_name(tmp.name + ".json").replace(path.with_name(path.name + ".json"))
    tmp.replace(path)
    return path


# -- inside the trial subprocess ---------------------------------------------


def _trial_main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="livewdd.benchmark")
    ap.add_argument("--mode", choices=["live", "reference"], required=True)
    ap.add_argument("--input", required=True)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--cache", required=True)
    args = ap.parse_args(argv)

    from .hermite import build_basis, default_sigma
    from .live import LiveReconstructor, run_live
    from .reference import wdd_reconstruct
    from .stream import FileSource
    from .wiener import cached_filter_bank

    geom = AcquisitionGeometry.load(args.input + ".json")
    _, probe_recip = make_probe(geom, 17.0)
    if args.mode == "reference":
        t0 = time.perf_counter()
        ds = read_p4d(args.input, geom)
        wdd_reconstruct(ds, probe_recip)
        seconds = time.perf_counter() - t0
        frames = geom.scan_size
    else:
        basis = build_basis(geom.detector_shape, args.L, default_sigma(geom))
        bank = cached_filter_bank(args.cache, geom, probe_recip, basis)
        recon = LiveReconstructor(geom, bank, basis)
        with FileSource(args.input) as src:
            # bank construction is a one-off precompute and is excluded from the timing
            state, stats = run_live(recon, src, workers=args.workers, file_path=args.input)
        seconds, frames = stats.seconds, stats.frames
    print(json.dumps({"seconds": seconds, "frames": frames}))
    return 0


# -- parent side -----------------------------------------------------------


def _tree_rss(proc: psutil.Process) -> int:
    total = 0
    for p in [proc, *proc.children(recursive=True)]:
        try:
            total += p.memory_info().rss
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            pass
    return total


def run_trial(mode: str, data: Path, workers: int = 1, orders: int = 16, cache: Path | None = None) -> dict:
    """One measured run; returns seconds, frames, fps and peak_mb."""
    cache = cache or Path(data).parent / "bank-cache"
    cmd = [
        sys.executable, "-m", "livewdd.benchmark",
        "--mode", mode, "--input", str(data), "--workers", str(workers), "--L", str(orders), "--cache", str(cache),
    ]  # fmt: skip
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    ps = psutil.Process(proc.pid)
    peak = 0
    while proc.poll() is None:
        peak = max(peak, _tree_rss(ps))
        time.sleep(SAMPLE_PERIOD)
    out, err = proc.communicate()
    if proc.returncode != 0:
        raise RuntimeError(f"trial failed ({proc.returncode}): {err.strip()[-2000:]}")
    result = json.loads(out.strip().splitlines()[-1])
    seconds = result["seconds"]
    return {
        "seconds": seconds,
        "frames": result["frames"],
        "fps": result["frames"] / seconds if seconds > 0 else float("nan"),
        "peak_mb": peak / 2**20,
    }


def run_benchmark(modes, dims_list, trials=10, workers_sweep=(1,), workdir="bench", orders=16, log=print) -> list[dict]:
    rows = []
    for dims in dims_list:
        data = make_benchmark_data(dims, workdir)
        for mode in modes:
            sweep = workers_sweep if mode == "live" else (1,)
            for workers in sweep:
                if mode == "live":
                    run_trial(mode, data, workers, orders)  # warm-up: builds the bank cache
                for trial in range(trials):
                    r = run_trial(mode, data, workers, orders)
                    row = {
                        "mode": mode, "Sy": dims[0], "Sx": dims[1], "Ny": dims[2], "Nx": dims[3],
                        "workers": workers, "trial": trial,
                        "seconds": r["seconds"], "peak_mb": r["peak_mb"], "fps": r["fps"],
                    }  # fmt: skip
                    rows.append(row)
                    log(f"{mode} {dims} w={workers} trial {trial}: {r['seconds']:.3f} s, "
                        f"{r['peak_mb']:.0f} MB, {r['fps']:.0f} fps")
    return rows


def write_csv(path, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return Path(path)


def summarize(rows) -> list[dict]:
    """Median and standard deviation per (mode, dims, workers)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["mode"], r["Sy"], r["Sx"], r["Ny"], r["Nx"], r["workers"]), []).append(r)
    out = []
    for key, rs in groups.items():
        secs = [r["seconds"] for r in rs]
        mems = [r["peak_mb"] for r in rs]
        out.append({
            "mode": key[0], "dims": list(key[1:5]), "workers": key[5], "trials": len(rs),
            "median_seconds": statistics.median(secs),
            "stdev_seconds": statistics.stdev(secs) if len(secs) > 1 else 0.0,
            "median_fps": statistics.median(r["fps"] for r in rs),
            "median_peak_mb": statistics.median(mems),
            "stdev_peak_mb": statistics.stdev(mems) if len(mems) > 1 else 0.0,
        })  # fmt: skip
    return out


def memory_exponent(sizes, peaks) -> float:
    """Least-squares slope of log(peak) against log(N)."""
    return float(np.polyfit(np.log(sizes), np.log(peaks), 1)[0])


if __name__ == "__main__":
    sys.exit(_trial_main())
