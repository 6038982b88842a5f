"""Command-line entry point: simulate, serve, reconstruct, validate, benchmark.

Exit codes: 0 success, 1 usage error, 2 data error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPT = 0, 1, 2, 3

log = logging.getLogger("livewdd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "livewdd"


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .geometry import graphene_geometry
    from .io import write_p4d
    from .simulator import apply_poisson, forward, make_lattice_object, make_probe, simulate_validation

    if args.preset == "validation":
        size = args.size or 64
        obj, _, ds = simulate_validation(size, args.aperture_value, dtype=np.float32)
    else:
        det = args.size or 256
        # one pass of the 64-step scan covers the periodic object field
        step_px = max(1, det // 64)
        geom = graphene_geometry(detector_size=det, step_px=step_px)
        probe_real, _ = make_probe(geom, args.aperture_value)
        obj = make_lattice_object(det, period=max(4, det // 8))
        ds = forward(obj, probe_real, geom, step_px=(step_px, step_px), dtype=np.float32)
    dtype = "f32"
    if args.dose is not None:
        ds = apply_poisson(ds, args.dose, args.seed)
        if ds.frames.max() <= 65535:
            dtype = "u16"
    out = write_p4d(args.out, ds, dtype=dtype)
    print(f"wrote {out} ({ds.geometry.scan_shape} scan, {ds.geometry.detector_shape} detector, {dtype})")
    return EXIT_OK


# -- serve -------------------------------------------------------------------


def cmd_serve(args) -> int:
    from .stream import bind_server, serve

    srv = bind_server(args.host, args.port)
    host, port = srv.getsockname()[:2]
    print(f"serving {args.input} on tcp://{host}:{port}", flush=True)
    try:
        serve(args.input, fps=args.fps, max_clients=args.max_clients, server=srv)
    except KeyboardInterrupt:
        pass
    finally:
        srv.close()
    return EXIT_OK


# -- reconstruct -------------------------------------------------------------


def _load_geometry(args):
    from .geometry import AcquisitionGeometry
    from .io import sidecar_path

    if args.geometry:
        return AcquisitionGeometry.load(args.geometry)
    side = sidecar_path(args.input)
    if not side.exists():
        raise UsageError("--geometry is required when the input has no sidecar (e.g. tcp sources)")
    return AcquisitionGeometry.load(side)


def cmd_reconstruct(args) -> int:
    from .hermite import build_basis, default_sigma
    from .io import read_p4d, write_complex, write_object_images
    from .live import LiveReconstructor, finalize, run_live, worker_count
    from .plotting import object_figure, snapshot_figure
    from .reference import wdd_reconstruct
    from .simulator import make_probe
    from .stream import FileSource, _TCP, open_source
    from .wiener import cached_filter_bank

    geom = _load_geometry(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, probe_recip = make_probe(geom, args.aperture_value)
    is_tcp = bool(_TCP.match(str(args.input))) and not Path(args.input).exists()
    meta = {"mode": args.mode, "input": str(args.input), "epsilon": args.epsilon, "geometry": geom.to_dict()}
    incomplete = None

    if args.mode == "reference":
        if is_tcp:
            raise UsageError("reference mode needs the complete dataset; give a file, not a tcp source")
        result = wdd_reconstruct(read_p4d(args.input, geom), probe_recip, args.epsilon)
        obj = result.obj
        meta.update(frames_seen=geom.scan_size, complete=True, normalized=result.normalized)
    else:
        workers = worker_count(args.workers)
        if args.deterministic:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=1)
        sigma = default_sigma(geom, args.sigma)
        basis = build_basis(geom.detector_shape, args.L, sigma)
        bank = cached_filter_bank(args.bank_cache or default_cache_dir(), geom, probe_recip, basis, args.epsilon)
        recon = LiveReconstructor(geom, bank, basis)
        snaps = []

        def on_snapshot(res):
            snaps.append((res.frames_seen, res.obj))
            write_object_images(out_dir, f"snapshot_{res.frames_seen:07d}", res.obj)

        source = open_source(args.input)
        try:
            if source.header.scan_shape != geom.scan_shape or source.header.detector_shape != geom.detector_shape:
                raise ValueError(f"input shapes {source.header} disagree with geometry")
            # with several workers on a file, each worker reads its own range directly
            file_path = args.input if isinstance(source, FileSource) else None
            state, stats = run_live(
                recon, source, workers=workers, snapshot_every=args.snapshot_every,
                on_snapshot=on_snapshot, file_path=file_path,
            )  # fmt: skip
        finally:
            source.close()
        res = finalize(state, normalize=args.normalize)
        obj = res.obj
        incomplete = stats.error if stats.error or not res.complete else None
        if snaps:
            snaps.append((res.frames_seen, obj))
            snapshot_figure(out_dir / "snapshots.png", snaps, geom.scan_size)
        meta.update(
            frames_seen=res.frames_seen, complete=res.complete, normalized=res.normalized, L=args.L,
            sigma=sigma, workers=workers, seconds=stats.seconds, fps=stats.fps, stream_error=stats.error,
        )  # fmt: skip
        print(f"live: {res.frames_seen}/{geom.scan_size} frames in {stats.seconds:.2f} s ({stats.fps:.0f} fps)")

    write_complex(out_dir / "object.c128", obj, meta)
    write_object_images(out_dir, "object", obj)
    object_figure(out_dir / "object.png", obj, f"{args.mode} reconstruction")
    print(f"wrote {out_dir / 'object.c128'}")
    if incomplete:
        print(f"incomplete stream, partial result written: {incomplete}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# -- validate ----------------------------------------------------------------


def cmd_validate(args) -> int:
    from .io import minmax_to_u8, phase_to_u8, write_pgm
    from .plotting import validation_figure
    from .validation import run_validation

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_validation(args.size, args.mode, args.dose, args.seed, args.L, args.sigma, args.epsilon)
    summary = report.to_dict()
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    for key, img in report.images.items():
        if key == "vbf":
            write_pgm(out_dir / "vbf.pgm", minmax_to_u8(img))
        else:
            write_pgm(out_dir / f"{key}_phase.pgm", phase_to_u8(np.angle(img)))
            write_pgm(out_dir / f"{key}_amplitude.pgm", minmax_to_u8(np.abs(img)))
    validation_figure(out_dir / "validation.png", report.images, summary)
    print(json.dumps(summary, indent=2))
    if report.passed:
        return EXIT_OK
    if args.expect_degraded:
        print("acceptance thresholds not met (expected: --expect-degraded)", file=sys.stderr)
        return EXIT_OK
    print("acceptance thresholds not met", file=sys.stderr)
    return EXIT_ACCEPT


# -- benchmark ---------------------------------------------------------------


def cmd_benchmark(args) -> int:
    from .benchmark import parse_dims, run_benchmark, summarize, write_csv
    from .plotting import benchmark_figures

    dims = [parse_dims(d) for d in args.dims]
    modes = ["live", "reference"] if args.mode == "both" else [args.mode]
    sweep = sorted({int(w) for w in args.workers_sweep.split(",")}) if args.workers_sweep else [1]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_benchmark(modes, dims, args.trials, sweep, args.workdir or out_dir / "data", args.L)
    write_csv(out_dir / "benchmark.csv", rows)
    summary = summarize(rows)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    benchmark_figures(out_dir, rows)
    for s in summary:
        print(
            f"{s['mode']:9s} {'x'.join(map(str, s['dims']))} w={s['workers']}: "
            f"{s['median_seconds']:.3f} +/- {s['stdev_seconds']:.3f} s, {s['median_fps']:.0f} fps, "
            f"{s['median_peak_mb']:.0f} MB"
        )
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="livewdd", description="Streaming WDD ptychography for 4D-STEM data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--preset", choices=["validation", "graphene-like"], default="validation")
    s.add_argument("--size", type=int, help="detector/object size in px")
    s.add_argument("--dose", type=float, help="electrons per pixel; omit for noise-free")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--aperture-value", type=float, default=17.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="stream a P4D file over tcp")
    s.add_argument("--input", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--fps", type=float, default=0.0, help="0 means unthrottled")
    s.add_argument("--max-clients", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("reconstruct", help="reconstruct from a file or tcp stream")
    s.add_argument("--mode", choices=["live", "reference"], default="live")
    s.add_argument("--input", required=True, help="P4D path or tcp://host:port")
    s.add_argument("--geometry", help="geometry JSON (defaults to the input sidecar)")
    s.add_argument("--L", type=int, default=16)
    s.add_argument("--sigma", type=float)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--aperture-value", type=float, default=17.0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--snapshot-every", type=int, default=0)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--bank-cache")
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("validate", help="run the asymmetric test-object protocol")
    s.add_argument("--mode", choices=["live", "reference"], default="reference")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--dose", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--L", type=int, default=16)
    s.add_argument("--sigma", type=float)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--expect-degraded", action="store_true")
    s.add_argument("--out-dir", default="validation")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("benchmark", help="time and memory trials")
    s.add_argument("--mode", choices=["live", "reference", "both"], default="both")
    s.add_argument("--dims", nargs="+", default=["64x64x64x64"], help="SyxSxxNyxNx")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--workers-sweep", default="1", help="comma-separated worker counts")
    s.add_argument("--L", type=int, default=16)
    s.add_argument("--workdir")
    s.add_argument("--out-dir", default="bench")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .stream import StreamError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"livewdd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, StreamError) as exc:
        print(f"livewdd: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
