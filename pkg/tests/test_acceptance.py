"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed immediately and repeated
in the pytest terminal summary. Thresholds are fixed; a failing criterion
fails its test.
"""

import math

import numpy as np
import pytest

from pbstitch.cli import run_bench
from pbstitch.errors import DataIOError
from pbstitch.flow import FlowField, count_warps, estimate_flow
from pbstitch.geometry import (
    FISHEYE,
    CameraIntrinsics,
    CameraPose,
    CylinderSpec,
    apply_reprojection,
    build_reprojection_map,
    default_rig,
    identity_map,
    project_directions,
    unproject,
    yaw_rotation,
)
from pbstitch.image import Image, constant_image
from pbstitch.io import (
    decode_flow,
    encode_flow,
    linear_to_srgb,
    parse_config,
    parse_rig,
    read_flow,
    read_frame,
    write_flow,
    write_frame,
)
from pbstitch.metrics import PSNR_CAP, psnr, ssim, warp_error
from pbstitch.pushbroom import (
    StitchConfig,
    Stitcher,
    TransitionSpec,
    fast_pushbroom_half,
    naive_pushbroom_half,
)
from pbstitch.synth import generate_bundle, moving_box_scene, two_plane_scene

from conftest import shifted, smooth_flow, textured

RESULTS = {}


def report(n, passed, detail):
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert passed, line


def transition_scores(out, gt, stitcher):
    scores = {}
    for side, t in stitcher.transitions.items():
        lo, hi = t.columns()
        a, b = out.crop_columns(lo, hi), gt.crop_columns(lo, hi)
        scores[side] = (psnr(a, b), ssim(a, b))
    return scores


@pytest.fixture(scope="module")
def two_plane_case():
    rig = default_rig()
    bundle = generate_bundle(two_plane_scene(), rig, K=100, s=2)
    return rig, bundle


@pytest.fixture(scope="module")
def analytic_scores(two_plane_case):
    rig, bundle = two_plane_case
    st = Stitcher(rig, StitchConfig(K=100, s=2))
    out = st.stitch(*bundle.inputs, flows=bundle.flows)
    return transition_scores(out, bundle.panorama, st)


# --- 1: fast path equals the naive loop -------------------------------------------------

def test_c01_fast_equals_naive():
    rng = np.random.default_rng(2024)
    K, s, h, w = 8, 4, 128, 256
    worst = 0.0
    masks_equal = True
    for case in range(100):
        seed = int(rng.integers(0, 1_000_000))
        a, b = textured(h, w, seed), textured(h, w, seed + 1)
        f_ab = smooth_flow(h, w, seed + 2, amplitude=float(rng.uniform(0.5, 12)))
        f_ba = smooth_flow(h, w, seed + 3, amplitude=float(rng.uniform(0.5, 12)))
        t = TransitionSpec(int(rng.integers(0, w // 2 - K * s + 1)), K, s)
        cfg = StitchConfig(K=K, s=s, refine="none")
        fast = fast_pushbroom_half(a, b, f_ab, f_ba, t, cfg)
        naive = naive_pushbroom_half(a, b, f_ab, f_ba, t, cfg)
        masks_equal &= bool(np.array_equal(fast.mask, naive.mask))
        worst = max(worst, float(np.abs(fast.data - naive.data).max()))
    report(1, masks_equal and worst <= 1e-6, f"100 cases, max |fast - naive| = {worst:.2e} (bound 1e-6)")


# --- 2: speedup ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c02_speedup():
    res = run_bench(1000, 600, [100], s=2, reps=5, seed=0)
    row = res["rows"][0]
    report(
        2,
        row["speedup"] >= 10.0,
        f"1000x600 K=100: naive {row['naive_s']:.2f} s, fast {row['fast_s']:.3f} s, "
        f"speedup {row['speedup']:.1f}x (floor 10x)",
    )


# --- 3: two warps per side ---------------------------------------------------------------

def test_c03_warp_count_independent_of_K():
    h, w = 64, 256
    a, b = textured(h, w, 1), textured(h, w, 2)
    f_ab, f_ba = smooth_flow(h, w, 3), smooth_flow(h, w, 4)
    counts = {}
    for refine in ("none", "deterministic"):
        for K in (1, 4, 16, 50):
            with count_warps() as c:
                fast_pushbroom_half(a, b, f_ab, f_ba, TransitionSpec(10, K, 2), StitchConfig(K=K, s=2, refine=refine))
            counts[(refine, K)] = c.count
    ok = set(counts.values()) == {2}
    report(3, ok, f"warps per side for K in 1,4,16,50 and both refine modes: {sorted(set(counts.values()))}")


# --- 4 and 5: end-to-end quality --------------------------------------------------------

@pytest.mark.slow
def test_c04_quality_with_analytic_flows(analytic_scores):
    ok = all(p >= 30.0 and s >= 0.95 for p, s in analytic_scores.values())
    detail = ", ".join(f"{k} PSNR {p:.2f} dB SSIM {s:.4f}" for k, (p, s) in analytic_scores.items())
    report(4, ok, detail + " (bounds 30 dB, 0.95)")


@pytest.mark.slow
def test_c05_quality_with_estimated_flows(two_plane_case, analytic_scores):
    rig, bundle = two_plane_case
    st = Stitcher(rig, StitchConfig(K=100, s=2))
    est = transition_scores(st.stitch(*bundle.inputs), bundle.panorama, st)
    gaps = {k: analytic_scores[k][0] - est[k][0] for k in est}
    ok = all(g <= 3.0 for g in gaps.values())
    detail = ", ".join(f"{k} PSNR {est[k][0]:.2f} dB (gap {gaps[k]:.2f})" for k in est)
    report(5, ok, detail + " (gap bound 3 dB)")


# --- 6: temporal stability ----------------------------------------------------------------

@pytest.mark.slow
def test_c06_temporal_stability():
    rig = default_rig()
    scene = moving_box_scene()
    st = Stitcher(rig, StitchConfig(K=100, s=2))
    lo, hi = st.transitions["left"].columns()
    gts, outs = [], []
    for t in range(10):
        bundle = generate_bundle(scene, rig, K=100, s=2, time=t)
        gts.append(bundle.panorama.crop_columns(lo, hi))
        outs.append(st.stitch(*bundle.inputs).crop_columns(lo, hi))
    e_gt = warp_error(gts).per_pair_mean
    e_st = warp_error(outs).per_pair_mean
    ratio = e_st / e_gt
    report(
        6,
        ratio <= 1.5,
        f"E_warp per pair: stitched {e_st * 1e4:.3f}e-4, ground truth {e_gt * 1e4:.3f}e-4, ratio {ratio:.2f} (bound 1.5)",
    )


# --- 7: metric sanity ---------------------------------------------------------------------

def test_c07_metric_sanity():
    rng = np.random.default_rng(7)
    a = textured(64, 80, 11)
    checks = {}
    checks["ssim(a,a)=1"] = ssim(a, a) == 1.0
    checks["psnr cap"] = psnr(a, a) == PSNR_CAP
    checks["static E_warp"] = warp_error([a, a, a]).total <= 1e-6
    mask = np.ones(a.shape, bool)
    mask[:, 50:] = False
    b = Image(np.clip(a.data + rng.normal(0, 0.03, a.data.shape), 0, 1))
    junk = rng.random(a.data.shape)
    a2 = Image(np.where(mask[..., None], a.data, junk), mask)
    b2 = Image(np.where(mask[..., None], b.data, 1 - junk), mask)
    checks["masked pixels ignored"] = (
        psnr(Image(a.data, mask), Image(b.data, mask)) == psnr(a2, b2)
        and ssim(Image(a.data, mask), Image(b.data, mask)) == ssim(a2, b2)
    )
    checks["constant E_warp"] = warp_error([constant_image(40, 40, 0.3)] * 3).total == 0.0
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed, f"{len(checks) - len(failed)}/{len(checks)} checks" + (f", failed: {failed}" if failed else ""))


# --- 8: flow estimator floor --------------------------------------------------------------

def test_c08_flow_epe_on_translations():
    margin = 12
    epes = []
    for seed, (du, dv) in enumerate([(0.5, 0.0), (3.5, -2.25), (-2.6, 1.4), (1.25, 4.75), (-5.3, -0.7)]):
        a = textured(128, 160, seed=40 + seed)
        f = estimate_flow(a, shifted(a, du, dv))
        d = f.displacement[margin:-margin, margin:-margin]
        epes.append(float(np.mean(np.hypot(d[..., 0] - du, d[..., 1] - dv))))
    report(8, max(epes) <= 0.5, f"interior mean EPE per translation: {[round(e, 3) for e in epes]} (bound 0.5 px)")


# --- 9: geometry round trips --------------------------------------------------------------

def _subpixel_shift(a, b, max_shift=40):
    shifts = np.arange(-max_shift, max_shift + 1)
    scores = []
    for s in shifts:
        common = np.roll(a.mask, s, axis=1) & b.mask
        ra = np.roll(a.gray(), s, axis=1)[common]
        rb = b.gray()[common]
        ra, rb = ra - ra.mean(), rb - rb.mean()
        scores.append((ra * rb).sum() / math.sqrt((ra**2).sum() * (rb**2).sum()))
    scores = np.array(scores)
    i = int(np.argmax(scores))
    y0, y1, y2 = scores[i - 1], scores[i], scores[i + 1]
    return shifts[i] + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)


def test_c09_geometry_round_trips():
    rng = np.random.default_rng(9)
    worst = 0.0
    all_valid = True
    models = [CameraIntrinsics.pinhole_from_fov(640, 480, math.radians(f)) for f in (30, 90, 140)]
    models.append(CameraIntrinsics(FISHEYE, 70.0, 70.0, 99.5, 74.5, 200, 150, fisheye_fov=math.radians(190)))
    for intr in models:
        px = rng.uniform([0, 0], [intr.width - 1, intr.height - 1], size=(20000, 2))
        if intr.model == FISHEYE:
            r = np.hypot((px[:, 0] - intr.cx) / intr.fx, (px[:, 1] - intr.cy) / intr.fy)
            px = px[r <= intr.fisheye_fov / 2]
        back, ok = project_directions(unproject(px, intr), intr)
        all_valid &= bool(ok.all())
        worst = max(worst, float(np.abs(back - px).max()))

    img = textured(96, 128, 3)
    ident = apply_reprojection(img, identity_map(96, 128))
    exact = bool(np.array_equal(ident.data, img.data) and ident.mask.all())

    intr = CameraIntrinsics.pinhole_from_fov(160, 120, math.radians(90))
    cyl = CylinderSpec(400, 120, math.pi, 120 / 2 * math.pi / 400)
    src = textured(120, 160, seed=5, sigma=2.0)
    base = apply_reprojection(src, build_reprojection_map(intr, CameraPose(), cyl))
    shift_err = 0.0
    for px_shift in (7.0, 12.4, -18.7):
        rot = CameraPose(yaw_rotation(px_shift * cyl.horizontal_fov / cyl.width))
        moved = apply_reprojection(src, build_reprojection_map(intr, rot, cyl))
        shift_err = max(shift_err, abs(_subpixel_shift(base, moved) - px_shift))

    ok = all_valid and worst <= 1e-4 and exact and shift_err <= 0.5
    report(
        9,
        ok,
        f"round trip max {worst:.2e} px (1e-4), identity bit-exact {exact}, equivariance error {shift_err:.3f} px (0.5)",
    )


# --- 10: file formats ---------------------------------------------------------------------

def _mutations(blob, rng, n):
    for _ in range(n):
        b = bytearray(blob)
        kind = rng.integers(0, 3)
        if kind == 0 and b:
            for i in rng.integers(0, len(b), size=int(rng.integers(1, 8))):
                b[i] = int(rng.integers(0, 256))
        elif kind == 1:
            b = b[: int(rng.integers(0, len(b) + 1))]
        else:
            b += bytes(rng.integers(0, 256, size=int(rng.integers(1, 64)), dtype=np.uint8))
        yield bytes(b)


def test_c10_format_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    checks = {}

    f = FlowField(rng.normal(0, 20, (37, 53, 2)).astype(np.float32).astype(float))
    write_flow(tmp_path / "f.flo", f)
    checks["flow bit-exact"] = np.array_equal(read_flow(tmp_path / "f.flo").displacement, f.displacement)

    img = textured(40, 56, 2)
    img.mask[3:9, 5:20] = False
    write_frame(tmp_path / "a.png", img)
    back = read_frame(tmp_path / "a.png")
    # 8-bit quantization happens in sRGB code values, so compare there
    code_err = np.abs(linear_to_srgb(back.data) - linear_to_srgb(img.data))[img.mask].max()
    checks["frame within 1/255 (codes)"] = code_err <= 1 / 255
    checks["mask bit-exact"] = np.array_equal(back.mask, img.mask)
    write_frame(tmp_path / "r.png", img, linear=False)
    raw_err = np.abs(read_frame(tmp_path / "r.png", linear=False).data - img.data)[img.mask].max()
    checks["frame within 1/255 (no curve)"] = raw_err <= 1 / 255
    full = textured(40, 56, 4)
    write_frame(tmp_path / "p.png", full)
    write_frame(tmp_path / "p.ppm", full)
    checks["ppm == png"] = np.array_equal(read_frame(tmp_path / "p.png").data, read_frame(tmp_path / "p.ppm").data)

    crashes = []
    seeds = {
        ".png": (tmp_path / "a.png").read_bytes(),
        ".ppm": (tmp_path / "p.ppm").read_bytes(),
    }
    for ext, blob in seeds.items():
        for i, m in enumerate(_mutations(blob, rng, 150)):
            p = tmp_path / f"z{i}{ext}"
            p.write_bytes(m)
            try:
                read_frame(p)
            except DataIOError:
                pass
            except Exception as exc:  # noqa: BLE001
                crashes.append((ext, type(exc).__name__))
    for m in _mutations(encode_flow(f), rng, 300):
        try:
            decode_flow(m)
        except DataIOError:
            pass
        except Exception as exc:  # noqa: BLE001
            crashes.append((".flo", type(exc).__name__))
    rig_text = (
        b'{"cameras": {"left": {"model": "pinhole", "fx": 200, "fy": 200, "cx": 79.5, "cy": 59.5, '
        b'"width": 160, "height": 120, "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [-0.5,0,0]}}}'
    )
    for parser, blob in ((parse_rig, rig_text), (parse_config, b'{"K": 10, "s": 2, "refine": "none"}')):
        for m in _mutations(blob, rng, 300):
            try:
                parser(m)
            except DataIOError:
                pass
            except Exception as exc:  # noqa: BLE001
                crashes.append((parser.__name__, type(exc).__name__))
    checks["fuzzed parsers never crash"] = not crashes

    failed = [k for k, v in checks.items() if not v]
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks, code-space frame error {code_err * 255:.2f}/255"
    if failed:
        detail += f", failed: {failed}, crashes: {crashes[:5]}"
    report(10, not failed, detail)
