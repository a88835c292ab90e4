import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypseg import labelprep as lp
from hypseg import phantom
from hypseg import taxonomy as tx
from hypseg.errors import DegenerateClusterError, GeometryError, LabelError, MaskError
from hypseg.volume import LabelMap, Volume


def line_volume(values):
    v = np.asarray(values, dtype=float).reshape(-1, 1, 1)
    return Volume(v), Volume(np.ones_like(v))


# ---------------------------------------------------------------- k-means

def test_kmeans_two_point_masses():
    img, mask = line_volume([0, 0, 0, 10, 10, 10])
    res = lp.kmeans_segment(img, mask, 2, seed=0)
    assert res.labels.ids.ravel().tolist() == [1, 1, 1, 2, 2, 2]
    assert res.centers.tolist() == [0.0, 10.0]


def test_kmeans_constant_image_degenerate():
    img, mask = line_volume([5.0] * 6)
    with pytest.raises(DegenerateClusterError):
        lp.kmeans_segment(img, mask, 2)


def test_kmeans_three_blobs_pure(rng):
    vals = np.concatenate([rng.normal(m, 1.0, 300) for m in (10, 50, 90)])
    truth = np.repeat([1, 2, 3], 300)
    perm = rng.permutation(vals.size)
    img, mask = line_volume(vals[perm])
    res = lp.kmeans_segment(img, mask, 3, seed=3)
    assert np.array_equal(res.labels.ids.ravel(), truth[perm])


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9))
def test_kmeans_inertia_monotone_and_sorted(seed, k):
    rng = np.random.default_rng(seed)
    img, mask = line_volume(rng.gamma(2.0, 10.0, size=200))
    res = lp.kmeans_segment(img, mask, k, seed=seed)
    h = np.array(res.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
    assert np.all(np.diff(res.centers) > 0)
    # ids ordered by centre: mean intensity grows with id
    ids = res.labels.ids.ravel()
    means = [img.data.ravel()[ids == i].mean() for i in range(1, k + 1) if np.any(ids == i)]
    assert np.all(np.diff(means) > 0)


def test_kmeans_background_stays_zero():
    img = Volume(np.arange(8.0).reshape(2, 2, 2))
    mask = Volume((np.arange(8) % 2).reshape(2, 2, 2).astype(float))
    res = lp.kmeans_segment(img, mask, 2)
    assert np.all(res.labels.ids[mask.data == 0] == 0)


# ---------------------------------------------------------------- merging

def _auto():
    return LabelMap.from_array(np.array([1, 2, 3, 2]).reshape(4, 1, 1))


def test_merge_empty_hypo_keeps_auto():
    auto = _auto()
    out = lp.merge_labels(auto, LabelMap.from_array(np.zeros((4, 1, 1))))
    assert np.array_equal(out.ids, auto.ids)


def test_merge_empty_auto_gives_reserved_band():
    hypo = LabelMap.from_array(np.array([0, 1, 5, 11]).reshape(4, 1, 1))
    out = lp.merge_labels(LabelMap.from_array(np.zeros((4, 1, 1))), hypo)
    assert out.ids.ravel().tolist() == [0, 101, 105, 111]
    assert out.labels[101] == tx.SUBREGION_NAMES[101]


def test_merge_hypo_wins():
    hypo = LabelMap.from_array(np.array([0, 3, 0, 0]).reshape(4, 1, 1))
    assert lp.merge_labels(_auto(), hypo).ids.ravel().tolist() == [1, 103, 3, 2]


def test_merge_grid_mismatch():
    with pytest.raises(GeometryError):
        lp.merge_labels(_auto(), LabelMap.from_array(np.zeros((4, 1, 1)), affine=np.diag([2, 1, 1, 1])))


def test_reserved_band_rejects_foreign_ids():
    with pytest.raises(LabelError):
        lp.to_reserved_band(np.array([13]))


# -------------------------------------------------------------- mirroring

def _left_hemisphere(shift=0, dims=(32, 24, 24), spacing=1.0):
    geom = phantom.PhantomGeometry(dims=dims, spacing=spacing, center=(0.0, -2.0, -12.0))
    full = phantom.training_labels(geom)
    x = geom.world_grid()[0]
    ids = np.where(x < 0, full.ids, 0)
    if shift:
        ids = np.roll(ids, shift, axis=0)
    return full, full.with_ids(ids)


def test_mirror_symmetric_phantom_zero_objective():
    full, hemi = _left_hemisphere()
    res = lp.mirror_hemisphere(hemi, 3)
    assert res.offset == 0
    assert res.objective[0] == {"overlap": 0, "gap": 0}
    assert np.array_equal(res.labels.ids, full.ids)


@pytest.mark.parametrize("shift", [-2, 2])
def test_mirror_recovers_offset(shift):
    _, hemi = _left_hemisphere(shift)
    res = lp.mirror_hemisphere(hemi, 4)
    scores = {t: o["overlap"] + o["gap"] for t, o in res.objective.items()}
    assert res.offset == shift == min(scores, key=lambda t: (scores[t], abs(t)))


def test_mirror_output_bounds_and_remap():
    _, hemi = _left_hemisphere()
    n = int((hemi.ids > 0).sum())
    out = lp.mirror_hemisphere(hemi, 2).labels.ids
    assert n <= int((out > 0).sum()) <= 2 * n
    right = out[out.shape[0] // 2:]
    assert set(np.unique(right)) & set(tx.LEFT_SUBREGIONS) == set()
    assert set(tx.RIGHT_SUBREGIONS) <= set(np.unique(right))


def test_mirror_empty():
    with pytest.raises(MaskError):
        lp.mirror_hemisphere(LabelMap.from_array(np.zeros((4, 4, 4))), 1)


def test_sagittal_axis_from_affine():
    a = np.zeros((4, 4))
    a[1, 0] = a[0, 1] = a[2, 2] = a[3, 3] = 1  # voxel axis 1 runs along world x
    assert lp.sagittal_axis(a) == 1


# -------------------------------------------------------- reference image

def test_reference_image_zero_std_piecewise_constant():
    lm = LabelMap.from_array(np.array([0, 1, 2, 2]).reshape(4, 1, 1))
    img = lp.synth_reference_image(lm, {1: (30.0, 0.0), 2: (110.0, 0.0)}, seed=1)
    assert img.data.ravel().tolist() == [0.0, 30.0, 110.0, 110.0]


def test_reference_image_moments():
    n = 200 ** 3
    lm = LabelMap.from_array(np.ones((200, 200, 200), dtype=np.uint8))
    img = lp.synth_reference_image(lm, {1: (100.0, 5.0)}, seed=2)
    assert abs(img.data.mean() - 100.0) < 3 * 5 / np.sqrt(n)


def test_reference_image_deterministic_and_complete():
    lm = phantom.training_labels(phantom.PhantomGeometry(dims=(16, 16, 16), spacing=2.0))
    table = lp.default_intensity_table(lm)
    a = lp.synth_reference_image(lm, table, seed=5)
    b = lp.synth_reference_image(lm, table, seed=5)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(LabelError):
        lp.synth_reference_image(lm, {}, seed=5)


# ------------------------------------------------------------ coordinates

def test_coords_origin_and_unit_point():
    aff = np.eye(4)
    aff[:3, 3] = [-1.0, 0.0, 0.0]
    grid = Volume(np.zeros((3, 1, 1)), aff)
    c = lp.attach_coords(grid, np.diag([100.0, 100.0, 100.0, 1.0]))
    assert c.data[:, 1, 0, 0].tolist() == [0.0, 0.0, 0.0]
    assert c.data[:, 2, 0, 0].tolist() == [1.0, 0.0, 0.0]


@given(st.lists(st.floats(-300, 300), min_size=3, max_size=3), st.floats(0.2, 5.0))
def test_coords_identity_equals_world_over_100(origin, sp):
    aff = np.diag([sp, sp, sp, 1.0])
    aff[:3, 3] = origin
    grid = Volume(np.zeros((4, 3, 2)), aff)
    c = lp.attach_coords(grid, np.eye(4)).data
    idx = np.indices(grid.dims).reshape(3, -1).T
    world = grid.world_coords(idx).T.reshape((3,) + grid.dims)
    assert np.allclose(c, np.clip(world / 100.0, -1, 1), rtol=0, atol=1e-12)
    assert c.min() >= -1 and c.max() <= 1


def test_coords_singular():
    with pytest.raises(GeometryError):
        lp.attach_coords(Volume(np.zeros((2, 2, 2))), np.zeros((4, 4)))


# ------------------------------------------------------------------ crops

def _pair(dims=(40, 40, 40), spacing=0.5):
    geom = phantom.PhantomGeometry(dims=dims, spacing=spacing, center=(0.0, -2.0, -12.0))
    L = phantom.training_labels(geom)
    return L, lp.attach_coords(L, np.eye(4))


def test_crop_pair_toy_dims_and_coords():
    L, C = _pair()
    Lc, Cc = lp.crop_training_pair(L, C, size=(32, 32, 32))
    assert Lc.dims == Cc.dims == (32, 32, 32)
    # coordinate channels still equal world / 100 on the cropped grid
    idx = np.array([5, 7, 9])
    assert np.allclose(Cc.data[:, 5, 7, 9], Lc.vol.world_coords(idx) / 100, rtol=0, atol=1e-12)


def test_crop_pair_centered_on_centroid():
    L, C = _pair()
    Lc, _ = lp.crop_training_pair(L, C, size=(31, 31, 31))
    sel = np.isin(Lc.ids, tx.HYPO_IDS)
    assert np.all(np.abs(np.argwhere(sel).mean(axis=0) - 15) <= 1.0)


def test_crop_pair_full_scale_fov():
    L, C = _pair(dims=(24, 24, 24), spacing=0.3)
    Lc, _ = lp.crop_training_pair(L, C)
    assert Lc.dims == (200, 200, 200)
    assert np.allclose(np.array(Lc.dims) * Lc.spacing, 60.0)


def test_crop_pair_needs_hypothalamus():
    L = LabelMap.from_array(np.ones((4, 4, 4)))
    with pytest.raises(MaskError):
        lp.crop_training_pair(L, lp.attach_coords(L, np.eye(4)), size=(2, 2, 2))


# ----------------------------------------------------------------- fornix

def test_fornix_closing_bridges_gap():
    ids = np.zeros((9, 9, 9), dtype=int)
    ids[3:6, 3:6, 1:4] = 11
    ids[3:6, 3:6, 5:8] = 11
    ids[0, 0, 0] = 3
    out = lp.delineate_fornix(LabelMap.from_array(ids), radius_vox=1).ids
    assert out[4, 4, 4] == 11
    assert out[0, 0, 0] == 3
    assert np.all(out[ids == 11] == 11)
