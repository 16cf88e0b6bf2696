import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial.distance import cdist

from vqct.classify import ThresholdBand
from vqct.errors import GeometryError, NoWaistError
from vqct.morphops import (close_and_fill, edt, pedicle_cut, skiz_partition,
                           trabecular_peel, ultimate_erode, volume_grow)
from vqct.volgrid import LabelMap, Mask, Volume


def make_mask(bits, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return Mask(bits.shape, spacing, origin, bits)


def brute_force_edt(bits, spacing):
    """Independent oracle: nearest-foreground scan over all voxel pairs."""
    fg = np.argwhere(bits).astype(np.float64) * np.asarray(spacing)
    all_idx = np.argwhere(np.ones_like(bits)).astype(np.float64) * np.asarray(spacing)
    out = np.full(all_idx.shape[0], np.inf)
    chunk = 4096
    for i in range(0, all_idx.shape[0], chunk):
        d = cdist(all_idx[i:i + chunk], fg)
        out[i:i + chunk] = d.min(axis=1)
    return out.reshape(bits.shape)


def test_edt_single_voxel_pythagorean():
    bits = np.zeros((8, 8, 8), bool)
    bits[0, 0, 0] = True
    field = edt(make_mask(bits))
    assert field.values[3, 4, 0] == 5.0
    assert field.values[0, 0, 0] == 0.0


def test_edt_anisotropic():
    bits = np.zeros((8, 4, 4), bool)
    bits[0, 0, 0] = True
    field = edt(make_mask(bits, spacing=(0.5, 1.0, 1.0)))
    assert field.values[4, 0, 0] == 2.0


def test_edt_empty_mask_rejected():
    with pytest.raises(GeometryError):
        edt(make_mask(np.zeros((4, 4, 4), bool)))


@pytest.mark.parametrize("seed,density,spacing", [
    (0, 0.02, (1.0, 1.0, 1.0)),
    (1, 0.10, (1.0, 1.0, 1.0)),
    (2, 0.05, (0.5, 1.0, 1.0)),
])
def test_edt_exact_vs_brute_force(seed, density, spacing):
    rng = np.random.default_rng(seed)
    bits = rng.random((32, 32, 32)) < density
    bits[0, 0, 0] = True  # never empty
    field = edt(make_mask(bits, spacing=spacing))
    assert np.array_equal(field.values, brute_force_edt(bits, spacing))


def test_edt_lipschitz_along_axes():
    rng = np.random.default_rng(3)
    bits = rng.random((20, 20, 20)) < 0.03
    bits[5, 5, 5] = True
    spacing = (0.5, 0.7, 1.1)
    v = edt(make_mask(bits, spacing=spacing)).values
    for ax, s in enumerate(spacing):
        assert np.abs(np.diff(v, axis=ax)).max() <= s + 1e-12


def uniform_volume(value, dims=(12, 12, 12)):
    return Volume(dims, (1, 1, 1), (0, 0, 0),
                  np.full(dims, value, dtype=np.float32))


def test_volume_grow_uniform_block():
    vol = uniform_volume(500.0)
    band = ThresholdBand(100.0, 90.0, 110.0)
    region = make_mask(np.zeros((12, 12, 12), bool) | True)
    grown = volume_grow(vol, [(6, 6, 6)], band, region)
    assert grown.bits.all()


def test_volume_grow_respects_region():
    vol = uniform_volume(500.0)
    band = ThresholdBand(100.0, 90.0, 110.0)
    region_bits = np.zeros((12, 12, 12), bool)
    region_bits[:6] = True
    grown = volume_grow(vol, [(2, 6, 6)], band, make_mask(region_bits))
    assert np.array_equal(grown.bits, region_bits)


def test_volume_grow_skips_disconnected_island():
    data = np.full((13, 5, 5), 30.0, dtype=np.float32)
    data[0:3] = 500.0
    data[10:13] = 500.0  # island, separated by soft tissue
    vol = Volume((13, 5, 5), (1, 1, 1), (0, 0, 0), data)
    band = ThresholdBand(100.0, 90.0, 110.0)
    region = make_mask(np.ones((13, 5, 5), bool))
    grown = volume_grow(vol, [(1, 2, 2)], band, region)
    assert grown.bits[:3].all()
    assert not grown.bits[10:].any()


def test_volume_grow_empty_seeds_rejected():
    vol = uniform_volume(500.0)
    band = ThresholdBand(100.0, 90.0, 110.0)
    with pytest.raises(GeometryError):
        volume_grow(vol, np.empty((0, 3)), band, make_mask(np.ones((12, 12, 12), bool)))


def ball_bits(dims, center, radius, spacing=(1.0, 1.0, 1.0)):
    grids = np.meshgrid(*[np.arange(n) * s for n, s in zip(dims, spacing)],
                        indexing="ij")
    return sum((g - c) ** 2 for g, c in zip(grids, center)) <= radius ** 2


def test_close_and_fill_cavity():
    bits = ball_bits((21, 21, 21), (10, 10, 10), 7.2)
    cavity = bits.copy()
    cavity[10, 10, 10] = False
    filled = close_and_fill(make_mask(cavity), 0.0)
    assert filled.bits[10, 10, 10]
    assert np.array_equal(filled.bits, bits)


def test_close_and_fill_extensive():
    rng = np.random.default_rng(9)
    bits = rng.random((16, 16, 16)) < 0.1
    out = close_and_fill(make_mask(bits), 2.0)
    assert (out.bits | ~bits).all()  # result is a superset


def test_closing_idempotent_on_random_masks():
    rng = np.random.default_rng(11)
    for seed in range(5):
        r = np.random.default_rng(seed)
        bits = r.random((18, 18, 18)) < 0.08
        bits[0, 0, 0] = True
        once = close_and_fill(make_mask(bits), 2.0)
        twice = close_and_fill(once, 2.0)
        assert np.array_equal(once.bits, twice.bits)


def dumbbell_mask(sphere_r=10.0, bridge_r=2.0):
    dims = (48, 25, 25)
    c = 12.0
    grids = np.meshgrid(np.arange(dims[0], dtype=float),
                        np.arange(dims[1], dtype=float),
                        np.arange(dims[2], dtype=float), indexing="ij")
    x, y, z = grids
    s1 = (x - 11) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= sphere_r ** 2
    s2 = (x - 36) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= sphere_r ** 2
    tube = ((y - c) ** 2 + (z - c) ** 2 <= bridge_r ** 2) & (x >= 11) & (x <= 36)
    return make_mask(s1 | s2 | tube)


def test_ultimate_erode_dumbbell():
    mask = dumbbell_mask()
    split = ultimate_erode(mask, expected=2)
    # bridge radius 2: the axis chain survives t=2 and dies just above it
    assert 2.0 <= split.threshold < 2.9
    labels = split.residuals.labels
    assert set(np.unique(labels)) == {0, 1, 2}
    for lab, cx in ((1, None), (2, None)):
        idx = np.argwhere(labels == lab)
        center = idx.mean(axis=0)
        assert min(abs(center[0] - 11), abs(center[0] - 36)) < 2.0
        assert abs(center[1] - 12) < 1.0 and abs(center[2] - 12) < 1.0


def test_ultimate_erode_single_sphere_no_waist():
    bits = ball_bits((24, 24, 24), (12, 12, 12), 9.0)
    with pytest.raises(NoWaistError):
        ultimate_erode(make_mask(bits), expected=2)


def test_ultimate_erode_translation_invariant():
    a = dumbbell_mask()
    shifted_bits = np.roll(a.bits, (0, 1, 1), axis=(0, 1, 2))
    b = make_mask(shifted_bits)
    assert ultimate_erode(a).threshold == ultimate_erode(b).threshold


def test_skiz_bisector_plane():
    bits = np.ones((21, 21, 21), bool)
    labels = np.zeros((21, 21, 21), np.int32)
    labels[4, 10, 10] = 1
    labels[16, 10, 10] = 2
    lab_map = LabelMap((21, 21, 21), (1, 1, 1), (0, 0, 0), labels)
    out, contact = skiz_partition(lab_map, make_mask(bits))
    cut_idx = np.argwhere(contact.bits)
    assert cut_idx.size > 0
    assert np.abs(cut_idx[:, 0] - 10).max() <= 1
    # exact partition: every voxel labeled or contact
    covered = (out.labels > 0) | contact.bits
    assert covered.all()
    assert not (out.labels[contact.bits] > 0).any()


def test_skiz_dumbbell_contact_area():
    mask = dumbbell_mask()
    split = ultimate_erode(mask, expected=2)
    _, contact = skiz_partition(split.residuals, mask)
    comp, n = ndimage.label(contact.bits, structure=np.ones((3, 3, 3), bool))
    sizes = np.bincount(comp.ravel())[1:]
    main = sizes.max()
    # at most the bridge cross-section plus a one-voxel ring
    budget = np.pi * (2.0 + 1.0) ** 2
    assert main <= budget
    # the contact crosses the bridge, between the spheres
    xs = np.argwhere(contact.bits)[:, 0]
    assert 14 < xs.mean() < 33


def test_skiz_requires_residuals_inside():
    bits = np.zeros((10, 10, 10), bool)
    bits[2:8, 2:8, 2:8] = True
    labels = np.zeros((10, 10, 10), np.int32)
    labels[0, 0, 0] = 1  # outside the mask
    labels[4, 4, 4] = 2
    with pytest.raises(GeometryError):
        skiz_partition(LabelMap((10, 10, 10), (1, 1, 1), (0, 0, 0), labels),
                       make_mask(bits))


@pytest.fixture(scope="module")
def phantom_level():
    from vqct.phantom import PhantomSpec, VertebraSpec, generate_phantom
    spec = PhantomSpec(levels=(VertebraSpec(trabecular_bmd=100.0),))
    vol, truth = generate_phantom(spec)
    return vol, truth


@pytest.fixture(scope="module")
def phantom_cut(phantom_level):
    vol, truth = phantom_level
    lv = truth.levels[0]
    solid = lv.body.bits | (vol.data == 600.0)
    closed = close_and_fill(Mask(vol.dims, vol.spacing, vol.origin, solid), 1.0)
    return pedicle_cut(closed), closed, truth


def test_pedicle_cut_body_dice(phantom_cut):
    result, _, truth = phantom_cut
    body = result.body.bits
    tru = truth.levels[0].body.bits
    dice = 2 * (body & tru).sum() / (body.sum() + tru.sum())
    assert dice >= 0.95


def test_pedicle_cut_landmarks_near_truth(phantom_cut):
    result, _, truth = phantom_cut
    tru = truth.levels[0].pedicle_midpoints
    tru = sorted(tru, key=lambda p: p[0])
    assert result.n_cut_components == 2
    assert np.linalg.norm(result.m3 - tru[0]) <= 2.0
    assert np.linalg.norm(result.m4 - tru[1]) <= 2.0


def test_pedicle_cut_mirror_symmetry(phantom_cut):
    result, _, _ = phantom_cut
    # phantom is mirror symmetric about x = 0
    assert abs(result.m3[0] + result.m4[0]) <= 0.5
    assert abs(result.m3[1] - result.m4[1]) <= 0.5


def test_pedicle_cut_partition_and_sizes(phantom_cut):
    result, closed, _ = phantom_cut
    together = result.body.bits | result.process.bits | result.cut.bits
    assert np.array_equal(together, closed.bits)
    assert not (result.body.bits & result.process.bits).any()
    assert result.body.count > result.process.count


def test_trabecular_peel_phantom(phantom_level):
    vol, truth = phantom_level
    lv = truth.levels[0]
    shell = lv.body.bits & ~lv.trabecular.bits
    band = ThresholdBand(27.0, 27.0, 27.0)
    peeled = trabecular_peel(lv.body, vol, band, peel_depth_mm=2.0)
    assert not (peeled.bits & shell).any()
    assert (peeled.bits & ~lv.body.bits).sum() == 0  # anti-extensive
    assert float(vol.data[peeled.bits].mean()) == 100.0


def test_trabecular_peel_noop_on_uniform_block():
    vol = uniform_volume(100.0)
    bits = np.zeros((12, 12, 12), bool)
    bits[3:9, 3:9, 3:9] = True
    band = ThresholdBand(150.0, 140.0, 160.0)  # nothing exceeds high
    out = trabecular_peel(make_mask(bits), vol, band, peel_depth_mm=0.0)
    assert np.array_equal(out.bits, bits)


def test_trabecular_peel_empty_result_rejected():
    vol = uniform_volume(100.0)
    bits = np.zeros((12, 12, 12), bool)
    bits[5:7, 5:7, 5:7] = True
    band = ThresholdBand(150.0, 140.0, 160.0)
    with pytest.raises(GeometryError):
        trabecular_peel(make_mask(bits), vol, band, peel_depth_mm=4.0)
