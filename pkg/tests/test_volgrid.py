import numpy as np
import pytest

from vqct.errors import GeometryError, VolumeFormatError
from vqct.volgrid import Mask, Volume, load_mask, load_volume, write_mask, write_volume


def make_volume(dims=(4, 5, 6), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), data=None):
    if data is None:
        rng = np.random.default_rng(0)
        data = rng.normal(100.0, 10.0, dims).astype(np.float32)
    return Volume(dims, spacing, origin, np.ascontiguousarray(data))


def test_load_volume_identity_decode(tmp_path):
    values = np.arange(8, dtype=np.float32)
    path = tmp_path / "tiny.vqh"
    (tmp_path / "tiny.vqr").write_bytes(values.astype("<f4").tobytes())
    path.write_text(
        '{"dims": [2, 2, 2], "spacing_mm": [1, 1, 1], "origin_mm": [0, 0, 0],'
        ' "dtype": "f32", "data_file": "tiny.vqr"}'
    )
    vol = load_volume(str(path))
    # x-fastest order: flat index = ix + 2*iy + 4*iz
    for iz in range(2):
        for iy in range(2):
            for ix in range(2):
                assert vol.data[ix, iy, iz] == values[ix + 2 * iy + 4 * iz]


def test_load_volume_size_mismatch(tmp_path):
    values = np.arange(7, dtype=np.float32)
    (tmp_path / "bad.vqr").write_bytes(values.astype("<f4").tobytes())
    path = tmp_path / "bad.vqh"
    path.write_text(
        '{"dims": [2, 2, 2], "spacing_mm": [1, 1, 1], "origin_mm": [0, 0, 0],'
        ' "dtype": "f32", "data_file": "bad.vqr"}'
    )
    with pytest.raises(VolumeFormatError):
        load_volume(str(path))


def test_volume_roundtrip_bit_identical(tmp_path):
    vol = make_volume(dims=(7, 3, 5), spacing=(0.3, 0.5, 1.0), origin=(-4.0, 2.5, 11.0))
    write_volume(vol, str(tmp_path / "v.vqh"))
    back = load_volume(str(tmp_path / "v.vqh"))
    assert back.dims == vol.dims
    assert back.spacing == vol.spacing
    assert back.origin == vol.origin
    assert np.array_equal(back.data, vol.data)


def test_mask_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    bits = rng.random((6, 4, 3)) > 0.5
    mask = Mask((6, 4, 3), (0.5, 0.5, 1.0), (0, 0, 0), bits)
    write_mask(mask, str(tmp_path / "m.vqh"))
    back = load_mask(str(tmp_path / "m.vqh"))
    assert np.array_equal(back.bits, mask.bits)


def test_missing_file_and_bad_spacing(tmp_path):
    with pytest.raises(VolumeFormatError):
        load_volume(str(tmp_path / "nope.vqh"))
    with pytest.raises(GeometryError):
        make_volume(spacing=(0.0, 1.0, 1.0))


def test_world_voxel_affine():
    vol = make_volume()
    assert np.allclose(vol.world_to_voxel((3.0, 4.0, 5.0)), (3, 4, 5))
    vol2 = make_volume(spacing=(0.5, 1.0, 1.0), origin=(10.0, 0.0, 0.0))
    assert np.allclose(vol2.world_to_voxel((11.0, 0.0, 0.0)), (2, 0, 0))


def test_world_voxel_roundtrip_1000_points():
    vol = make_volume(spacing=(0.3, 0.7, 1.2), origin=(-7.0, 3.0, 0.5))
    rng = np.random.default_rng(7)
    pts = rng.uniform(-50, 50, (1000, 3))
    back = vol.voxel_to_world(vol.world_to_voxel(pts))
    assert np.abs(back - pts).max() < 1e-9


def test_trilinear_voxel_center_exact():
    vol = make_volume()
    p = vol.voxel_to_world((2, 3, 4))
    assert vol.sample_trilinear(p) == pytest.approx(float(vol.data[2, 3, 4]), abs=1e-6)


def test_trilinear_midpoint_linearity():
    data = np.zeros((2, 2, 2))
    data[1, :, :] = 10.0
    vol = Volume((2, 2, 2), (1, 1, 1), (0, 0, 0), data)
    assert vol.sample_trilinear((0.5, 0.0, 0.0)) == pytest.approx(5.0, abs=1e-12)


def test_trilinear_against_8_corner_oracle():
    # independent oracle: explicit weighted sum over the unit-cell corners
    rng = np.random.default_rng(11)
    corners = rng.uniform(0, 100, (2, 2, 2))
    vol = Volume((2, 2, 2), (1, 1, 1), (0, 0, 0), corners)
    fx, fy, fz = 0.25, 0.5, 0.75
    expected = 0.0
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                w = ((fx if cx else 1 - fx) * (fy if cy else 1 - fy)
                     * (fz if cz else 1 - fz))
                expected += w * corners[cx, cy, cz]
    assert vol.sample_trilinear((fx, fy, fz)) == pytest.approx(expected, abs=1e-9)


def test_trilinear_exact_on_affine_fields():
    # a + b*x + c*y + d*z is reproduced exactly at interior points
    a, b, c, d = 2.0, 0.3, -0.7, 1.1
    dims = (8, 9, 10)
    spacing = (0.5, 0.8, 1.1)
    origin = (-1.0, 2.0, 0.0)
    ix, iy, iz = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    x = origin[0] + ix * spacing[0]
    y = origin[1] + iy * spacing[1]
    z = origin[2] + iz * spacing[2]
    vol = Volume(dims, spacing, origin, a + b * x + c * y + d * z)
    rng = np.random.default_rng(5)
    lo, hi = vol.world_bounds()
    pts = rng.uniform(lo, hi, (200, 3))
    got = vol.sample_trilinear(pts)
    want = a + b * pts[:, 0] + c * pts[:, 1] + d * pts[:, 2]
    assert np.abs(got - want).max() < 1e-6


def test_trilinear_clamps_outside():
    vol = make_volume()
    lo, hi = vol.world_bounds()
    inside = vol.sample_trilinear(lo)
    outside = vol.sample_trilinear(lo - 5.0)
    assert outside == pytest.approx(inside)


def test_mask_boolean_algebra():
    rng = np.random.default_rng(13)
    for _ in range(10):
        a = rng.random((5, 5, 5)) > 0.5
        b = rng.random((5, 5, 5)) > 0.5
        assert np.array_equal((a & b) | (a & ~b), a)


def test_mask_geometry_must_match():
    m1 = Mask((4, 4, 4), (1, 1, 1), (0, 0, 0), np.zeros((4, 4, 4), bool))
    m2 = Mask((4, 4, 4), (1, 1, 2), (0, 0, 0), np.zeros((4, 4, 4), bool))
    with pytest.raises(GeometryError):
        m1.require_same_geometry(m2)


def test_volume_immutable():
    vol = make_volume()
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0
