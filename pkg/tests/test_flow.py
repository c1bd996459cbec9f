import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbstitch.errors import ContractError
from pbstitch.flow import (
    FlowField,
    FlowParams,
    count_warps,
    estimate_flow,
    fb_consistency,
    fb_residual,
    scale_flow,
    warp_backward,
    weighted_median,
)
from pbstitch.image import Image

from conftest import shifted, smooth_flow, textured

MARGIN = 12


def interior_epe(flow, du, dv, margin=MARGIN):
    d = flow.displacement[margin:-margin, margin:-margin]
    return float(np.mean(np.hypot(d[..., 0] - du, d[..., 1] - dv)))


# --- estimation -------------------------------------------------------------------------

def test_identical_images_give_zero_flow(texture_image):
    f = estimate_flow(texture_image, texture_image)
    assert np.mean(np.hypot(f.u, f.v)) <= 0.05


@pytest.mark.parametrize("du,dv", [(4.0, 0.0), (3.5, -2.25), (-2.6, 1.4)])
def test_translation_endpoint_error(du, dv):
    big = textured(128, 160, seed=11)
    b = shifted(big, du, dv)  # a(x) = b(x + F)
    f = estimate_flow(big, b)
    assert interior_epe(f, du, dv) <= 0.5


def test_estimate_flow_is_deterministic():
    a = textured(64, 80, seed=2)
    b = shifted(a, 1.5, -0.5)
    f1 = estimate_flow(a, b)
    f2 = estimate_flow(a, b)
    assert np.array_equal(f1.displacement, f2.displacement)


def test_estimate_flow_resolution_mismatch():
    with pytest.raises(ContractError):
        estimate_flow(textured(20, 20), textured(20, 21))


def test_flow_magnitude_is_bounded():
    a = textured(40, 48, seed=1)
    b = textured(40, 48, seed=2)
    f = estimate_flow(a, b)
    assert np.isfinite(f.displacement).all()
    assert np.abs(f.displacement).max() <= 48


def test_flow_params_validation():
    with pytest.raises(ContractError):
        FlowParams(pyramid_levels=0)
    with pytest.raises(ContractError):
        FlowParams(scale_factor=1.0)
    with pytest.raises(ContractError):
        FlowParams(iterations_per_level=0)


def test_default_levels_reach_about_32_px():
    p = FlowParams()
    for w in (64, 300, 1000):
        levels = p.levels_for(w, 100)
        coarsest = max(w, 100) * p.scale_factor ** (levels - 1)
        assert 16 <= coarsest <= 64
    assert p.levels_for(20, 20) == 1


# --- warping -----------------------------------------------------------------------------

def test_zero_flow_warp_is_bit_exact(texture_image):
    out = warp_backward(texture_image, FlowField.zeros(*texture_image.shape))
    assert np.array_equal(out.data, texture_image.data)
    assert out.mask.all()


def test_unit_flow_shifts_columns(texture_image):
    out = warp_backward(texture_image, FlowField.constant(*texture_image.shape, 1.0, 0.0))
    assert np.array_equal(out.data[:, :-1], texture_image.data[:, 1:])
    assert not out.mask[:, -1].any()


def _scalar_warp(data, mask, disp):
    h, w, c = data.shape
    out = np.zeros_like(data)
    valid = np.zeros((h, w), bool)
    for y in range(h):
        for x in range(w):
            sx = float(x) + disp[y, x, 0]
            sy = float(y) + disp[y, x, 1]
            if not (0 <= sx <= w - 1 and 0 <= sy <= h - 1):
                continue
            x0 = min(math.floor(sx), w - 2)
            y0 = min(math.floor(sy), h - 2)
            fx, fy = sx - x0, sy - y0
            w00, w01 = (1.0 - fx) * (1.0 - fy), fx * (1.0 - fy)
            w10, w11 = (1.0 - fx) * fy, fx * fy
            taps = [(y0, x0, w00), (y0, x0 + 1, w01), (y0 + 1, x0, w10), (y0 + 1, x0 + 1, w11)]
            if any(not mask[yy, xx] and wt != 0 for yy, xx, wt in taps):
                continue
            out[y, x] = (
                w00 * data[y0, x0] + w01 * data[y0, x0 + 1] + w10 * data[y0 + 1, x0] + w11 * data[y0 + 1, x0 + 1]
            )
            valid[y, x] = True
    return out, valid


def test_warp_matches_scalar_reference():
    img = textured(24, 30, seed=4)
    mask = np.ones(img.shape, bool)
    mask[10:12, 14] = False
    img = Image(img.data * mask[..., None], mask)
    f = smooth_flow(24, 30, seed=5, amplitude=4.0, sigma=4.0)
    out = warp_backward(img, f)
    ref, ref_valid = _scalar_warp(img.data, mask, f.displacement)
    assert np.array_equal(out.mask, ref_valid)
    assert np.array_equal(out.data, ref)


def test_warp_respects_flow_mask(texture_image):
    valid = np.ones(texture_image.shape, bool)
    valid[3, 4] = False
    out = warp_backward(texture_image, FlowField(np.zeros((*texture_image.shape, 2)), valid))
    assert not out.mask[3, 4]
    assert out.data[3, 4].sum() == 0


def test_warp_counter_counts_calls(texture_image):
    f = FlowField.zeros(*texture_image.shape)
    with count_warps() as c:
        warp_backward(texture_image, f)
        warp_backward(texture_image, f)
    assert c.count == 2
    warp_backward(texture_image, f)
    assert c.count == 2


# --- scaling -----------------------------------------------------------------------------

def test_scale_flow_examples():
    f = FlowField.constant(3, 4, 4.0, -8.0)
    assert np.all(scale_flow(f, 0.0).displacement == 0)
    assert np.array_equal(scale_flow(f, 1.0).displacement, f.displacement)
    np.testing.assert_array_equal(scale_flow(f, 0.25).displacement[0, 0], [1.0, -2.0])


def test_scale_flow_keeps_mask():
    valid = np.eye(3, dtype=bool)
    f = FlowField(np.ones((3, 3, 2)), valid)
    assert np.array_equal(scale_flow(f, 0.5).valid, valid)


def test_scale_flow_rejects_out_of_range():
    f = FlowField.zeros(2, 2)
    with pytest.raises(ContractError):
        scale_flow(f, 1.5)
    with pytest.raises(ContractError):
        scale_flow(f, -0.1)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 1), b=st.floats(0, 1), seed=st.integers(0, 1000))
def test_scale_flow_is_linear(a, b, seed):
    f = FlowField(np.random.default_rng(seed).normal(size=(5, 6, 2)) * 10)
    once = scale_flow(f, a * b).displacement
    twice = scale_flow(scale_flow(f, a), b).displacement
    np.testing.assert_allclose(once, twice, rtol=1e-12, atol=1e-12)


# --- forward-backward consistency ---------------------------------------------------------

def test_consistent_constant_flows_have_full_confidence():
    f = FlowField.constant(20, 20, 3.0, -1.5)
    g = FlowField.constant(20, 20, -3.0, 1.5)
    conf = fb_consistency(f, g, tau=1.0)
    assert np.all(conf[2:-2, 3:-3] == 1.0)


def test_inconsistent_flows_have_no_confidence():
    conf = fb_consistency(FlowField.constant(20, 30, 10.0, 0.0), FlowField.zeros(20, 30), tau=1.0)
    inner = conf[:, : 30 - 10]
    np.testing.assert_allclose(inner, math.exp(-100.0))
    assert inner.max() < 1e-40


def test_residual_infinite_outside_frame():
    r = fb_residual(FlowField.constant(4, 4, 10.0, 0.0), FlowField.zeros(4, 4))
    assert np.isinf(r).all()
    assert np.all(fb_consistency(FlowField.constant(4, 4, 10.0, 0.0), FlowField.zeros(4, 4)) == 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0.1, 5.0))
def test_confidence_in_unit_interval(seed, tau):
    f = smooth_flow(12, 14, seed=seed, amplitude=5.0, sigma=2.0)
    g = smooth_flow(12, 14, seed=seed + 1, amplitude=5.0, sigma=2.0)
    conf = fb_consistency(f, g, tau)
    assert conf.min() >= 0.0 and conf.max() <= 1.0


def test_confidence_marks_occluded_band():
    from pbstitch.geometry import CameraIntrinsics, CameraPose
    from pbstitch.geometry import Camera
    from pbstitch.synth import Plane, SceneSpec, Texture, analytic_flow

    intr = CameraIntrinsics.pinhole_from_fov(160, 80, math.radians(60))
    scene = SceneSpec(
        primitives=(
            Plane(center=(0.0, 0.0, 20.0), size=(60.0, 30.0), texture=Texture(scale=0.1)),
            Plane(center=(0.0, 0.0, 5.0), size=(1.5, 10.0), texture=Texture(scale=0.02, seed=3)),
        )
    )
    cam_a = Camera(intr, CameraPose())
    cam_b = Camera(intr, CameraPose(np.eye(3), np.array([0.4, 0.0, 0.0])))
    f_ab, occ = analytic_flow(scene, cam_a, cam_b)
    f_ba, _ = analytic_flow(scene, cam_b, cam_a)
    conf = fb_consistency(f_ab, f_ba, tau=1.0)
    # the band is as wide as the disparity difference of the two planes
    width = intr.fx * 0.4 * (1 / 5.0 - 1 / 20.0)
    rows = slice(10, 70)
    band_cols = np.flatnonzero(occ[rows].all(axis=0))
    assert abs(band_cols.size - width) <= 1.0
    assert np.all(conf[rows][occ[rows]] < 0.5)
    # away from the band, only back-lookups whose bilinear footprint straddles
    # a depth edge or touches an undefined reverse flow may lose confidence
    yy, xx = np.mgrid[0:80, 0:160]
    x0 = np.clip(np.floor(xx + f_ab.u).astype(int), 0, 158)
    straddles = np.abs(f_ba.u[yy, x0] - f_ba.u[yy, x0 + 1]) > 0.5
    straddles |= ~(f_ba.valid[yy, x0] & f_ba.valid[yy, x0 + 1])
    clear = f_ab.valid & ~occ & ~straddles
    assert np.all(conf[rows][clear[rows]] >= 0.5)
    assert clear[rows].sum() >= 0.9 * (f_ab.valid & ~occ)[rows].sum()


# --- weighted median -----------------------------------------------------------------------

def _scalar_weighted_median(values, guide, radius, sigma):
    h, w = values.shape
    pv = np.pad(values, radius, mode="edge")
    pg = np.pad(guide, radius, mode="edge")
    out = np.empty_like(values)
    for y in range(h):
        for x in range(w):
            vals = pv[y : y + 2 * radius + 1, x : x + 2 * radius + 1].ravel()
            wts = np.exp(-np.square(pg[y : y + 2 * radius + 1, x : x + 2 * radius + 1].ravel() - guide[y, x]) / (2 * sigma**2))
            order = sorted(range(vals.size), key=lambda i: (vals[i], i))
            total = wts.sum()
            acc = 0.0
            for i in order:
                acc += wts[i]
                if acc >= 0.5 * total:
                    out[y, x] = vals[i]
                    break
    return out


def test_weighted_median_matches_scalar_reference(rng):
    values = rng.normal(size=(9, 11))
    guide = rng.random((9, 11))
    got = weighted_median(values, guide, 2, 0.2)
    np.testing.assert_allclose(got, _scalar_weighted_median(values, guide, 2, 0.2), rtol=0, atol=1e-12)


def test_weighted_median_flat_guide_is_plain_median(rng):
    from scipy import ndimage

    values = rng.normal(size=(12, 12))
    got = weighted_median(values, np.zeros((12, 12)), 1, 0.1)
    assert np.array_equal(got, ndimage.median_filter(values, size=3, mode="nearest"))


def test_weighted_median_keeps_step_edges():
    values = np.zeros((10, 10))
    values[:, 5:] = 7.0
    out = weighted_median(values, values / 7.0, 2, 0.05)
    assert np.array_equal(out, values)
