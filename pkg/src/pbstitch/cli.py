"""Command-line frontend: ``pbstitch {synth,stitch,eval,bench}``.

Exit codes: 0 success, 2 usage, 3 I/O or parse failure, 4 contract
violation (bad inputs or scene), 5 stitching failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io, metrics
from .errors import ContractError, DataIOError, PbStitchError, RenderError, StitchingError
from .flow import FlowField
from .geometry import default_rig
from .image import Image
from .pushbroom import StitchConfig, Stitcher, TransitionSpec, fast_pushbroom_half, naive_pushbroom_half
from .synth import generate_bundle, moving_box_scene, two_plane_scene

log = logging.getLogger("pbstitch")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONTRACT = 4
EXIT_STITCH = 5

THREADS_ENV = "PBSTITCH_THREADS"
DEFAULT_SEED = 0
SCENE_PRESETS = {"two-plane": two_plane_scene, "moving-box": moving_box_scene}


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ContractError(f"{THREADS_ENV}={raw!r} is not an integer") from None


def _map_frames(fn, n: int, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _load_rig(path):
    return io.load_rig(path) if path else default_rig()


def _load_config(path):
    return io.load_config(path) if path else StitchConfig()


# --- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.scene:
        scene = io.load_scene(args.scene)
    else:
        scene = SCENE_PRESETS[args.preset]()
    scene = replace(scene, seed=args.seed)
    rig = _load_rig(args.rig)
    cfg = _load_config(args.config)
    if args.frames < 1:
        raise ContractError("--frames must be >= 1")
    layout = io.DatasetLayout(Path(args.out)).create()
    io.save_json(layout.root / "rig.json", io.rig_to_dict(rig))
    io.save_json(layout.root / "scene.json", io.scene_to_dict(scene))

    def one(i):
        t0 = time.perf_counter()
        bundle = generate_bundle(scene, rig, K=cfg.K, s=cfg.s, time=float(i), supersample=args.supersample)
        layout.write_bundle(i, bundle)
        log.info("frame %06d rendered in %.2f s", i, time.perf_counter() - t0)

    _map_frames(one, args.frames, args.threads)
    print(f"wrote {args.frames} frame(s) to {layout.root}")
    return EXIT_OK


# --- stitch --------------------------------------------------------------------

def _transitions_doc(stitcher: Stitcher) -> dict:
    out = {}
    for side, t in stitcher.transitions.items():
        lo, hi = t.columns()
        out[side] = {"boundary": t.boundary, "K": t.K, "s": t.s, "columns": [lo, hi]}
    return out


def cmd_stitch(args) -> int:
    layout = io.DatasetLayout(Path(args.input))
    for stream in io.STREAMS:
        if not layout.has_stream(stream):
            raise DataIOError(f"{layout.root}: missing input stream {stream!r}")
    n = layout.frame_count()
    rig_path = args.rig or (layout.root / "rig.json" if (layout.root / "rig.json").exists() else None)
    rig = _load_rig(rig_path)
    cfg = _load_config(args.config)
    stitcher = Stitcher(rig, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_json(out / "transitions.json", _transitions_doc(stitcher))

    def one(i):
        frames = layout.read_inputs(i)
        flows = layout.read_flows(i) if args.flows == "gt" else None
        t0 = time.perf_counter()
        try:
            pano = stitcher.stitch(*frames, flows=flows, mode=args.mode)
        except PbStitchError as exc:
            raise StitchingError(f"frame {i}: {exc}") from exc
        elapsed = time.perf_counter() - t0
        io.write_frame(out / io.DatasetLayout.frame_name(i), pano)
        log.info("frame %06d stitched (%s) in %.3f s", i, args.mode, elapsed)
        return elapsed

    times = _map_frames(one, n, args.threads)
    with open(out / "timing.csv", "w") as fh:
        fh.write("frame,mode,seconds\n")
        for i, t in enumerate(times):
            fh.write(f"{i},{args.mode},{t:.6f}\n")
    print(f"stitched {n} frame(s) in {args.mode} mode, median {statistics.median(times):.3f} s/frame")
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

def _read_dir(path: Path) -> list[Image]:
    return io.read_sequence(path)


def cmd_eval(args) -> int:
    stitched = _read_dir(Path(args.stitched))
    gt_dir = Path(args.gt)
    if (gt_dir / "pano_gt").is_dir():
        gt_dir = gt_dir / "pano_gt"
    reference = _read_dir(gt_dir)
    if len(stitched) != len(reference):
        raise ContractError(f"frame count mismatch: {len(stitched)} stitched vs {len(reference)} ground truth")
    flow_params = _load_config(args.config).flow
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    report = metrics.evaluate_sequence(
        stitched, reference, flow_params=flow_params, fb_threshold=args.fb_threshold, temporal=not args.no_temporal
    )
    gt_warp = None
    if not args.no_temporal and len(reference) > 1:
        gt_warp = metrics.warp_error(reference, flow_params, args.fb_threshold)
        report.extra["gt_e_warp_sum"] = gt_warp.total
        report.extra["gt_e_warp_per_pair_mean"] = gt_warp.per_pair_mean

    tpath = Path(args.transitions) if args.transitions else Path(args.stitched) / "transitions.json"
    regions = {}
    if tpath.exists():
        doc = json.loads(tpath.read_text())
        for side, t in doc.items():
            lo, hi = t["columns"]
            sub = metrics.evaluate_sequence(
                stitched, reference, columns=(lo, hi), flow_params=flow_params,
                fb_threshold=args.fb_threshold, temporal=not args.no_temporal,
            )
            sub.write_csv(out / f"metrics_{side}_transition.csv")
            regions[side] = sub.summary()
    report.extra["transitions"] = regions

    report.write_csv(out / "metrics.csv")
    report.write_json(out / "summary.json")
    print(f"PSNR {report.mean_psnr:.2f} dB  SSIM {report.mean_ssim:.4f}")
    for side, s in regions.items():
        print(f"  {side} transition: PSNR {s['mean_psnr_db']:.2f} dB  SSIM {s['mean_ssim']:.4f}")
    if report.e_warp is not None:
        print(f"E_warp sum {report.e_warp.total:.4e}  per-pair mean {report.e_warp.per_pair_mean:.4e}")
    return EXIT_OK


# --- bench ---------------------------------------------------------------------

def bench_inputs(width: int, height: int, seed: int):
    """Textured image pair and smooth flows at the benchmark resolution."""
    rng = np.random.default_rng(seed)
    a = ndimage.gaussian_filter(rng.random((height, width, 3)), (2, 2, 0))
    b = ndimage.gaussian_filter(rng.random((height, width, 3)), (2, 2, 0))
    flows = []
    for _ in range(2):
        d = ndimage.gaussian_filter(rng.normal(0, 400, (height, width, 2)), (25, 25, 0))
        flows.append(FlowField(d, np.ones((height, width), bool)))
    return Image(a), Image(b), flows[0], flows[1]


def _time(fn, reps: int) -> float:
    fn()  # warmup
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _r_squared(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def run_bench(width: int, height: int, Ks, s: int, reps: int, seed: int, refine: str = "none") -> dict:
    if reps < 5:
        raise ContractError("benchmark needs at least 5 repetitions")
    a, b, f_ab, f_ba = bench_inputs(width, height, seed)
    rows = []
    for K in Ks:
        t = TransitionSpec(boundary=width // 8, K=K, s=s)
        t.check(width)
        cfg = StitchConfig(K=K, s=s, refine=refine)
        naive = _time(lambda: naive_pushbroom_half(a, b, f_ab, f_ba, t, cfg), reps)
        fast = _time(lambda: fast_pushbroom_half(a, b, f_ab, f_ba, t, cfg), reps)
        rows.append({"K": K, "naive_s": naive, "fast_s": fast, "speedup": naive / fast})
        log.info("K=%d naive %.3f s fast %.4f s speedup %.1fx", K, naive, fast, naive / fast)
    Ks_ = [r["K"] for r in rows]
    summary = {
        "resolution": [width, height],
        "s": s,
        "refine": refine,
        "repetitions": reps,
        "warmup": 1,
        "machine": machine_info(),
        "rows": rows,
    }
    if len(rows) >= 3:
        summary["naive_r2_vs_K"] = _r_squared(Ks_, [r["naive_s"] for r in rows])
        fast = [r["fast_s"] for r in rows]
        summary["fast_max_over_min"] = max(fast) / min(fast)
    return summary


def cmd_bench(args) -> int:
    width, height = args.resolution
    summary = run_bench(width, height, args.K, args.s, args.reps, args.seed, args.refine)
    info = summary["machine"]
    print(f"# {info['platform']} | {info['cpu_count']} cpu | python {info['python']} | numpy {info['numpy']}")
    print(f"# {width}x{height}, s={args.s}, refine={args.refine}, median of {args.reps} after 1 warmup")
    print(f"{'K':>5} {'naive [s]':>10} {'fast [s]':>10} {'speedup':>8}")
    for r in summary["rows"]:
        print(f"{r['K']:>5} {r['naive_s']:>10.3f} {r['fast_s']:>10.4f} {r['speedup']:>7.1f}x")
    if "naive_r2_vs_K" in summary:
        print(f"naive R^2 vs K: {summary['naive_r2_vs_K']:.4f}  fast max/min: {summary['fast_max_over_min']:.2f}")
    if args.out:
        io.save_json(args.out, summary)
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbstitch", description="Pushbroom stitching for three-camera rigs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-frame progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for all randomness (default 0)")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"frame-level worker threads (default ${THREADS_ENV} or 1)")

    sp = sub.add_parser("synth", help="render a synthetic dataset with ground truth")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--preset", choices=sorted(SCENE_PRESETS), default="two-plane")
    sp.add_argument("--rig", help="rig JSON file (default: built-in three-camera rig)")
    sp.add_argument("--config", help="stitch config JSON (K and s of the ground truth)")
    sp.add_argument("--frames", type=int, default=1)
    sp.add_argument("--supersample", type=int, default=2)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("stitch", help="stitch a dataset's input triples")
    sp.add_argument("--input", required=True, help="dataset root with left/ mid/ right/")
    sp.add_argument("--rig", help="rig JSON (default: <input>/rig.json, then built-in)")
    sp.add_argument("--config", help="stitch config JSON")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("fast", "naive"), default="fast")
    sp.add_argument("--flows", choices=("estimate", "gt"), default="estimate")
    common(sp)
    sp.set_defaults(func=cmd_stitch)

    sp = sub.add_parser("eval", help="compare stitched frames with ground truth")
    sp.add_argument("--stitched", required=True)
    sp.add_argument("--gt", required=True, help="ground-truth panorama directory or dataset root")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="stitch config JSON; its flow params drive E_warp")
    sp.add_argument("--transitions", help="transitions.json (default: from the stitched directory)")
    sp.add_argument("--fb-threshold", type=float, default=1.0, help="occlusion threshold in px")
    sp.add_argument("--no-temporal", action="store_true", help="skip E_warp")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="time naive vs fast pushbroom evaluation")
    sp.add_argument("--resolution", type=int, nargs=2, default=(1000, 600), metavar=("W", "H"))
    sp.add_argument("--K", type=int, nargs="+", default=[10, 25, 50, 100])
    sp.add_argument("--s", type=int, default=2)
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--refine", choices=("none", "deterministic"), default="none")
    sp.add_argument("--out", help="write the timing table as JSON")
    common(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise ContractError("--threads must be >= 1")
        return args.func(args)
    except PbStitchError as exc:
        print(f"pbstitch: error: {exc}", file=sys.stderr)
        return exit_code(exc)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, DataIOError):
        return EXIT_IO
    if isinstance(exc, (ContractError, RenderError)):
        return EXIT_CONTRACT
    if isinstance(exc, StitchingError):
        return EXIT_STITCH
    return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
