import numpy as np
import pytest

from hypseg import inference as inf
from hypseg import taxonomy as tx
from hypseg.errors import GeometryError, ShapeError
from hypseg.neural.unet import UNetConfig, build_unet
from hypseg.volume import LabelMap, MultiChannelVolume, Volume

G = (8, 8, 8)


class Recorder:
    """Model double: fixed output, remembers what it was fed."""

    def __init__(self, out_channels, fn):
        self.cfg = UNetConfig(levels=2, features=(2, 2), out_channels=out_channels)
        self.fn = fn
        self.seen = None

    def check_input(self, x):
        build_unet(self.cfg).check_input(x)

    def predict(self, x):
        self.seen = x.copy()
        return self.fn(x)


def native_image(dims=(12, 12, 12), spacing=1.0):
    aff = np.diag([spacing] * 3 + [1.0])
    aff[:3, 3] = -(np.asarray(dims) // 2) * spacing
    data = np.random.default_rng(0).uniform(size=dims)
    return Volume(data, aff)


def ctx(**kw):
    return inf.InferenceContext(native_image(), np.eye(4), grid_size=G, spacing=1.0, anchor=(0.0, 0.0, 0.0), **kw)


def ball_hyp(x):
    out = np.zeros((1, 3) + x.shape[2:])
    idx = np.indices(x.shape[2:]) - 4
    inside = (idx ** 2).sum(0) <= 4
    out[0, 1] = np.where(inside, 1.0, -1.0)
    return out


def sub_const(cls):
    def fn(x):
        out = np.zeros((1, 13) + x.shape[2:])
        out[0, cls] = 5.0
        return out
    return fn


def test_crop_center_and_grid():
    aff = np.eye(4)
    aff[:3, 3] = [1.0, 2.0, 3.0]  # native -> MNI is a shift
    c = inf.InferenceContext(native_image(), aff, grid_size=G, spacing=0.5)
    assert np.allclose(c.crop_center(), np.array(inf.MNI_ANCHOR) - [1, 2, 3])
    ga = c.grid_affine()
    assert np.allclose(ga[:3, :3], np.eye(3) * 0.5)
    assert np.allclose(ga @ [4, 4, 4, 1], np.r_[c.crop_center(), 1])


def test_singular_mni_affine():
    with pytest.raises(GeometryError):
        inf.InferenceContext(native_image(), np.zeros((4, 4)))


def test_prepare_input_channels():
    c = ctx()
    A = inf.prepare_input(c)
    assert A.channels == 4 and A.dims == G
    assert A.data[0].min() == 0.0 and A.data[0].max() == 1.0
    world = (A.affine @ np.r_[3, 5, 6, 1])[:3]
    assert np.allclose(A.data[1:, 3, 5, 6], world / 100.0)


def test_wrong_model_channels():
    A = inf.prepare_input(ctx())
    with pytest.raises(ShapeError):
        inf.segment_whole(Recorder(13, sub_const(0)), A)
    with pytest.raises(ShapeError):
        inf.segment_subregions(Recorder(3, ball_hyp), A, Volume(np.ones(G), A.affine))


def test_gating_masks_image_channel_only():
    c = ctx()
    A = inf.prepare_input(c)
    hyp = inf.segment_whole(Recorder(3, ball_hyp), A)
    assert set(np.unique(hyp.data)) == {0.0, 1.0}
    v = np.zeros(G)
    v[0, 0, 0] = 1.0
    vdc = Volume(v, A.affine)
    sub = Recorder(13, sub_const(3))
    inf.segment_subregions(sub, A, hyp, vdc)
    gate = (hyp.data > 0) | (vdc.data > 0)
    assert np.array_equal(sub.seen[0, 0], A.data[0] * gate)
    assert np.array_equal(sub.seen[0, 1:], A.data[1:])


def test_gating_grid_mismatch():
    A = inf.prepare_input(ctx())
    with pytest.raises(GeometryError):
        inf.segment_subregions(Recorder(13, sub_const(0)), A, Volume(np.ones((4, 4, 4))))


def test_postprocess_drops_fornix_and_ventricle():
    wb_ids = np.zeros((12, 12, 12), dtype=int)
    wb_ids[6, 6, 6] = tx.FS_THIRD_VENTRICLE
    img = native_image()
    wb = LabelMap.from_array(wb_ids, affine=img.affine)
    c = inf.InferenceContext(img, np.eye(4), wholebrain=wb, grid_size=G, spacing=1.0, anchor=(0.0, 0.0, 0.0))
    A = inf.prepare_input(c)
    probs = np.zeros((13,) + G)
    probs[3] = 1.0
    probs[11, :, :, :4] = 2.0  # left fornix wins on half the grid
    lm, warn = inf.postprocess(MultiChannelVolume(probs, A.affine), c)
    assert lm.dims == img.dims and np.allclose(lm.affine, img.affine)
    assert warn == []
    assert not np.isin(lm.ids, tx.FORNIX_IDS).any()
    assert lm.ids[6, 6, 6] == 0
    assert set(np.unique(lm.ids)) == {0, tx.SUBREGION_IDS[2]}


def test_run_inference_warnings_and_native_grid():
    c = ctx()
    res = inf.run_inference(c, Recorder(3, ball_hyp), Recorder(13, sub_const(1)))
    assert res.labelmap.dims == c.image.dims
    assert res.warnings == [inf.NO_VENTRICLE_EXCLUSION, inf.NO_VDC_GATING]
    assert set(np.unique(res.labelmap.ids)) <= {0, 101}


def test_vdc_mask_resampled_to_grid():
    img = native_image()
    wb_ids = np.full(img.dims, tx.FS_LEFT_VDC)
    c = inf.InferenceContext(img, np.eye(4), wholebrain=LabelMap.from_array(wb_ids, affine=img.affine),
                             grid_size=G, spacing=1.0, anchor=(0.0, 0.0, 0.0))
    A = inf.prepare_input(c)
    v = inf.vdc_mask(c, A)
    assert v.dims == G and np.all(v.data == 1.0)
    res = inf.run_inference(c, Recorder(3, ball_hyp), Recorder(13, sub_const(1)))
    assert res.warnings == []


def test_real_unet_path():
    c = ctx()
    cfg = dict(levels=2, features=(2, 4))
    res = inf.run_inference(c, build_unet(UNetConfig.hyp(**cfg)), build_unet(UNetConfig.sub(**cfg)))
    assert res.o_sub.channels == 13
    assert np.allclose(res.o_sub.data.sum(axis=0), 1.0)
