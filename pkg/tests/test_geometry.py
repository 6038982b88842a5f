import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livewdd.geometry import (
    AcquisitionGeometry,
    active_mask,
    electron_wavelength_pm,
    flatten,
    frequency_grid,
    graphene_geometry,
    intersection_bound,
    overlaps,
    physical_shift,
    pruning_box,
    unflatten,
)


def geometry(step=0.026, theta=32.0, lam=2.508, scan=(32, 32), det=(64, 64), calib=None, rotation=0.0):
    calib = calib if calib is not None else theta / 12.0
    return AcquisitionGeometry(lam, theta, step, step, scan, det, calib, rotation)


def test_wavelength_known_values():
    # standard relativistic wavelengths
    assert electron_wavelength_pm(200.0) == pytest.approx(2.5079, abs=1e-4)
    assert electron_wavelength_pm(300.0) == pytest.approx(1.9687, abs=1e-4)
    assert electron_wavelength_pm(60.0) == pytest.approx(4.8661, abs=1e-4)


def test_radius_is_derived_from_calibration():
    g = geometry(theta=30.0, calib=2.5)
    assert g.aperture_radius_px == pytest.approx(12.0)
    assert g.scan_size == 32 * 32


@pytest.mark.parametrize(
    "kwargs",
    [dict(step=0.0), dict(theta=-1.0), dict(lam=float("nan")), dict(scan=(0, 4)), dict(calib=0.0)],
)
def test_invalid_parameters_rejected(kwargs):
    with pytest.raises(ValueError):
        geometry(**kwargs)


def test_aperture_must_fit_detector():
    with pytest.raises(ValueError, match="2R < N"):
        geometry(det=(24, 24), calib=32.0 / 12.0)
    geometry(det=(25, 25), calib=32.0 / 12.0)


def test_sidecar_roundtrip(tmp_path):
    g = geometry(scan=(16, 17), rotation=88.0)
    g.save(tmp_path / "g.json")
    assert AcquisitionGeometry.load(tmp_path / "g.json") == g
    assert set(g.to_dict()) == {
        "wavelength_pm", "semiconv_mrad", "step_y_nm", "step_x_nm", "scan_y", "scan_x",
        "det_y", "det_x", "calib_mrad_per_px", "rotation_deg",
    }  # fmt: skip


def test_sidecar_rejects_unknown_and_missing_keys():
    d = geometry().to_dict()
    with pytest.raises(ValueError, match="unknown"):
        AcquisitionGeometry.from_dict({**d, "voltage_kv": 200})
    d.pop("rotation_deg")
    with pytest.raises(ValueError, match="missing"):
        AcquisitionGeometry.from_dict(d)


@given(st.integers(1, 40), st.integers(1, 40), st.data())
def test_flatten_unflatten_inverse(sy, sx, data):
    v = data.draw(st.integers(0, sy * sx - 1))
    idx = unflatten(v, (sy, sx))
    assert -(sy // 2) <= idx.v_y < sy - sy // 2
    assert -(sx // 2) <= idx.v_x < sx - sx // 2
    assert flatten(idx.v_y, idx.v_x, (sy, sx)) == idx


def test_index_out_of_range():
    with pytest.raises(IndexError):
        unflatten(16, (4, 4))
    with pytest.raises(IndexError):
        flatten(2, 0, (4, 4))


def test_zero_frequency_has_zero_shift():
    assert physical_shift(geometry(), 0, 0) == (0.0, 0.0)


def test_shift_matches_formula_for_graphene_preset():
    g = graphene_geometry()
    lam_nm = electron_wavelength_pm(60.0) * 1e-3
    radius = 30.0 / g.calib_mrad_per_px
    expected = 1 * lam_nm * radius / (0.02 * 64 * math.sin(0.030))
    s_y, s_x = physical_shift(g, 1, 0)
    assert s_y == pytest.approx(expected, rel=1e-12)
    assert s_x == 0.0
    # one object pixel of the 4x oversampled field is 0.005 nm, so a unit scan frequency
    # over 64 steps lands on 256 / (64 * 4) = 1 detector px (up to theta / sin(theta))
    assert s_y == pytest.approx(1.0, rel=2e-4)
    # per-axis scan counts: 65 columns give a slightly smaller shift along x
    assert physical_shift(g, 0, 1)[1] == pytest.approx(s_y * 64 / 65, rel=1e-12)


def test_cyclic_geometry_shift_is_identity():
    g = AcquisitionGeometry.cyclic(64, radius_px=10)
    vy, vx = frequency_grid(g.scan_shape)
    s_y, s_x = physical_shift(g, vy, vx)
    np.testing.assert_allclose(s_y, vy, atol=1e-12)
    np.testing.assert_allclose(s_x, vx, atol=1e-12)


def test_rotation_preserves_shift_length():
    g0 = geometry()
    g1 = geometry(rotation=37.0)
    vy, vx = frequency_grid(g0.scan_shape)
    a = np.hypot(*physical_shift(g0, vy, vx))
    b = np.hypot(*physical_shift(g1, vy, vx))
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_quoted_bound_value():
    g = geometry(scan=(64, 64))
    by, bx = intersection_bound(g)
    assert by / 64 == pytest.approx(0.47, abs=0.01)
    assert by == bx


def test_bound_vanishes_with_step():
    assert intersection_bound(geometry(step=1e-9))[0] == pytest.approx(0.0, abs=1e-6)


def test_overlap_boundary_inclusive():
    g = AcquisitionGeometry.cyclic(64, radius_px=10)
    assert overlaps(g, 0, 0)
    assert overlaps(g, 20, 0)  # |s| = 2R exactly
    assert overlaps(g, 12, 16)  # 3-4-5 triangle, |s| = 20
    assert not overlaps(g, 21, 0)  # 2R + 1 px
    assert not overlaps(g, 12, 17)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.005, 0.05),
    st.floats(5.0, 40.0),
    st.floats(1.5, 5.0),
    st.integers(4, 40),
    st.integers(4, 40),
    st.floats(0.0, 360.0),
)
def test_pruning_box_is_sound(step, theta, lam, sy, sx, rot):
    g = AcquisitionGeometry(lam, theta, step, step * 1.3, (sy, sx), (64, 64), theta / 10.0, rot)
    vy, vx = frequency_grid(g.scan_shape)
    full = overlaps(g, vy, vx)
    by, bx = pruning_box(g)
    assert np.all(np.abs(vy[full]) <= by * (1 + 1e-9))
    assert np.all(np.abs(vx[full]) <= bx * (1 + 1e-9))
    np.testing.assert_array_equal(active_mask(g), full)


def test_quoted_bound_is_not_a_safe_pruning_limit():
    # diagonal frequencies can overlap beyond the quoted per-axis bound
    g = geometry(step=0.013, scan=(64, 64))
    vy, vx = frequency_grid(g.scan_shape)
    mask = overlaps(g, vy, vx)
    quoted = intersection_bound(g)[0]
    outside = mask & ((np.abs(vy) > math.ceil(quoted)) | (np.abs(vx) > math.ceil(quoted)))
    assert outside.any()
    assert not (mask & ~active_mask(g)).any()


def test_active_set_symmetric_and_monotone():
    g = geometry(step=0.01, scan=(33, 32))
    m = active_mask(g)
    vy, vx = frequency_grid(g.scan_shape)
    for iy, ix in zip(*np.nonzero(m)):
        ny, nx = -vy[iy, ix], -vx[iy, ix]
        if -(33 // 2) <= ny < 33 - 33 // 2 and -16 <= nx < 16:
            assert m[ny + 33 // 2, nx + 16]
    # along each axis ray the mask is a contiguous run around zero
    row = m[33 // 2]
    on = np.flatnonzero(row)
    assert np.all(np.diff(on) == 1)
