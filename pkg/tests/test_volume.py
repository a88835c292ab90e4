import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypseg.errors import (FormatError, GeometryError, LabelError, LabelInterpError, MaskError,
                           RangeError, UnsupportedDtype)
from hypseg.volume import (LabelMap, MultiChannelVolume, Volume, crop, load_labelmap, load_volume,
                           morph_close, one_hot, resample, save_volume)
from hypseg.volume.nifti import read_nifti, write_nifti


def oblique_affine(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a = np.eye(4)
    a[:3, :3] = q * rng.uniform(0.2, 2.0, size=3)
    a[:3, 3] = rng.normal(scale=50, size=3)
    return a


# ------------------------------------------------------------- containers

def test_spacing_is_column_norm(rng):
    a = oblique_affine(rng)
    v = Volume(np.zeros((2, 3, 4)), a)
    assert np.allclose(v.spacing, np.linalg.norm(a[:3, :3], axis=0), rtol=0, atol=1e-15)
    assert v.dims == (2, 3, 4)


def test_singular_affine_rejected():
    a = np.eye(4)
    a[2, 2] = 0
    with pytest.raises(GeometryError):
        Volume(np.zeros((2, 2, 2)), a)


def test_volume_data_is_read_only():
    v = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_labelmap_requires_names_for_ids():
    with pytest.raises(LabelError):
        LabelMap(Volume(np.array([[[0, 1]]])), {})
    with pytest.raises(LabelError):
        LabelMap(Volume(np.array([[[0.5, 1]]])), {1: "a"})
    lm = LabelMap(Volume(np.array([[[0, 1]]])), {0: "bg", 1: "a"})
    assert 0 not in lm.labels


# -------------------------------------------------------------------- I/O

def test_load_zero_volume_header_fields(tmp_path):
    p = tmp_path / "z.nii"
    write_nifti(p, np.zeros((2, 2, 2)), np.eye(4), "f32")
    raw = p.read_bytes()
    assert struct.unpack_from("<i", raw, 0)[0] == 348
    assert raw[344:348] == b"n+1\0"
    v = load_volume(p)
    assert v.dims == (2, 2, 2) and not v.data.any()


@pytest.mark.parametrize("name", ["v.nii", "v.nii.gz"])
def test_f64_round_trip_bit_exact(tmp_path, rng, name):
    data = rng.normal(size=(8, 8, 8)) * 1e3
    aff = oblique_affine(rng)
    save_volume(Volume(data, aff), tmp_path / name, "f64")
    back = load_volume(tmp_path / name)
    assert back.data.tobytes() == data.tobytes()
    assert back.affine.tobytes() == aff.tobytes()


@pytest.mark.parametrize("dtype,lo,hi", [("u8", 0, 255), ("i16", -32768, 32767),
                                         ("i32", -2 ** 31, 2 ** 31 - 1)])
def test_integer_round_trip_every_dtype(tmp_path, rng, dtype, lo, hi):
    data = rng.integers(lo, hi, size=(5, 4, 3), endpoint=True).astype(np.float64)
    save_volume(Volume(data), tmp_path / "i.nii", dtype)
    assert np.array_equal(load_volume(tmp_path / "i.nii").data, data)


def test_f32_round_trip_is_quantized(tmp_path, rng):
    data = rng.normal(size=(4, 4, 4))
    save_volume(Volume(data), tmp_path / "f.nii.gz", "f32")
    assert np.array_equal(load_volume(tmp_path / "f.nii.gz").data, data.astype(np.float32).astype(np.float64))


def test_labelmap_u8_round_trip_with_names(tmp_path):
    ids = np.arange(13).reshape(13, 1, 1) * np.ones((1, 2, 2))
    lm = LabelMap.from_array(ids, labels={12: "twelve"})
    save_volume(lm, tmp_path / "l.nii.gz", "u8")
    back = load_labelmap(tmp_path / "l.nii.gz")
    assert np.array_equal(back.ids, lm.ids)
    assert back.labels == lm.labels
    assert isinstance(load_volume(tmp_path / "l.nii.gz"), LabelMap)


def test_out_of_range_values_raise(tmp_path):
    with pytest.raises(RangeError):
        save_volume(Volume(np.full((2, 2, 2), 1e40)), tmp_path / "x.nii", "f32")
    with pytest.raises(RangeError):
        save_volume(Volume(np.full((2, 2, 2), 256.0)), tmp_path / "x.nii", "u8")
    with pytest.raises(RangeError):
        save_volume(Volume(np.full((2, 2, 2), -1.0)), tmp_path / "x.nii", "u8")


def test_save_is_byte_deterministic(tmp_path, rng):
    v = Volume(rng.normal(size=(6, 5, 4)), oblique_affine(rng))
    save_volume(v, tmp_path / "a.nii.gz", "f32")
    save_volume(v, tmp_path / "b.nii.gz", "f32")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()


def test_bad_magic_is_format_error(tmp_path):
    p = tmp_path / "v.nii"
    write_nifti(p, np.zeros((2, 2, 2)), np.eye(4), "f32")
    raw = bytearray(p.read_bytes())
    raw[344:348] = b"xyz\0"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_volume(p)


def test_unsupported_datatype(tmp_path):
    p = tmp_path / "v.nii"
    write_nifti(p, np.zeros((2, 2, 2)), np.eye(4), "f32")
    raw = bytearray(p.read_bytes())
    struct.pack_into("<h", raw, 70, 32)  # complex64
    struct.pack_into("<h", raw, 72, 64)
    p.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDtype):
        load_volume(p)


def test_gzip_detected_by_magic_not_suffix(tmp_path):
    p = tmp_path / "v.nii.gz"
    write_nifti(p, np.ones((2, 2, 2)), np.eye(4), "f32")
    renamed = tmp_path / "plain_name.nii"
    renamed.write_bytes(p.read_bytes())
    assert gzip.decompress(renamed.read_bytes())[:4] == struct.pack("<i", 348)
    assert load_volume(renamed).data.sum() == 8


def _strip_extension(path):
    raw = bytearray(path.read_bytes())
    n = struct.unpack_from("<f", raw, 108)[0]
    body = raw[int(n):]
    raw = raw[:348] + b"\0\0\0\0" + body
    struct.pack_into("<f", raw, 108, 352.0)
    path.write_bytes(bytes(raw))
    return raw


def test_sform_preferred_then_qform(tmp_path, rng):
    aff = oblique_affine(rng)
    p = tmp_path / "v.nii"
    write_nifti(p, np.zeros((2, 2, 2)), aff, "f32")
    raw = _strip_extension(p)
    # only the float32 header remains: sform agrees to single precision
    assert np.allclose(read_nifti(p)[1], aff, atol=1e-4)
    struct.pack_into("<h", raw, 254, 0)  # sform_code = 0 -> qform
    p.write_bytes(bytes(raw))
    assert np.allclose(read_nifti(p)[1], aff, atol=1e-4)


def test_four_d_loads_as_multichannel(tmp_path, rng):
    mc = MultiChannelVolume(rng.normal(size=(3, 4, 5, 6)))
    save_volume(mc, tmp_path / "m.nii.gz", "f64")
    back = load_volume(tmp_path / "m.nii.gz")
    assert isinstance(back, MultiChannelVolume)
    assert np.array_equal(back.data, mc.data)


# ------------------------------------------------------------- resampling

@pytest.mark.parametrize("interp", ["nearest", "trilinear"])
def test_resample_identity(rng, interp):
    v = Volume(rng.normal(size=(5, 6, 7)), oblique_affine(rng))
    out = resample(v, v.dims, v.affine, interp)
    assert np.array_equal(out.data, v.data)


def test_resample_half_voxel_ramp():
    v = Volume(np.arange(3.0).reshape(3, 1, 1))
    tgt = np.eye(4)
    tgt[0, 3] = 0.5
    out = resample(v, (2, 1, 1), tgt, "trilinear")
    assert np.allclose(out.data.ravel(), [0.5, 1.5], rtol=0, atol=1e-15)


def test_resample_out_of_bounds_is_zero():
    v = Volume(np.ones((2, 2, 2)))
    tgt = np.eye(4)
    tgt[:3, 3] = 10
    assert not resample(v, (2, 2, 2), tgt).data.any()


def test_labelmap_trilinear_forbidden():
    lm = LabelMap.from_array(np.ones((2, 2, 2)))
    with pytest.raises(LabelInterpError):
        resample(lm, (2, 2, 2), np.eye(4), "trilinear")
    assert issubclass(LabelInterpError, GeometryError)


def test_resample_singular_target():
    with pytest.raises(GeometryError):
        resample(Volume(np.ones((2, 2, 2))), (2, 2, 2), np.zeros((4, 4)))


# ---------------------------------------------------------------- one-hot

def test_one_hot_single_voxel():
    lm = LabelMap.from_array(np.full((1, 1, 1), 2))
    oh = one_hot(lm, (1, 2))
    assert oh.data[:, 0, 0, 0].tolist() == [0, 0, 1]


def test_one_hot_background_only():
    oh = one_hot(LabelMap.from_array(np.zeros((2, 2, 2))), (1, 2))
    assert np.all(oh.data[0] == 1)


def test_one_hot_unknown_id():
    with pytest.raises(LabelError):
        one_hot(LabelMap.from_array(np.full((1, 1, 1), 3)), (1, 2))


@given(arrays(np.int64, (8, 8, 8), elements=st.integers(0, 12)))
def test_one_hot_partition_and_argmax(ids):
    label_set = tuple(range(1, 13))
    oh = one_hot(LabelMap.from_array(ids), label_set)
    assert np.all(oh.data.sum(axis=0) == 1)
    assert np.array_equal(np.array((0,) + label_set)[oh.data.argmax(axis=0)], ids)


# ------------------------------------------------------------------ crops

def test_crop_fov_at_full_scale():
    v = Volume(np.zeros((4, 4, 4)), np.diag([0.3, 0.3, 0.3, 1]))
    out = crop(v, (2, 2, 2), (200, 200, 200))
    assert np.allclose(np.array(out.dims) * out.spacing, 60.0)


def test_crop_full_extent_identity(rng):
    v = Volume(rng.normal(size=(5, 6, 7)), oblique_affine(rng))
    out = crop(v, (2, 3, 3), (5, 6, 7))
    assert np.array_equal(out.data, v.data)
    assert np.allclose(out.affine, v.affine, rtol=0, atol=1e-12)


@given(st.tuples(*[st.integers(0, 9)] * 3), st.tuples(*[st.integers(-3, 12)] * 3),
       st.tuples(*[st.integers(1, 8)] * 3))
def test_crop_preserves_world_coordinates(mark, center, size):
    rng = np.random.default_rng(0)
    aff = oblique_affine(rng)
    data = np.zeros((10, 10, 10))
    data[mark] = 1
    v = Volume(data, aff)
    out = crop(v, center, size)
    assert out.dims == size
    hit = np.argwhere(out.data == 1)
    if hit.size:
        assert np.allclose(out.world_coords(hit[0]), v.world_coords(mark), rtol=0, atol=1e-12)


# ------------------------------------------------------------- morphology

def test_close_fills_cube_hole():
    m = np.zeros((7, 7, 7))
    m[2:5, 2:5, 2:5] = 1
    m[3, 3, 3] = 0
    out = morph_close(Volume(m), 1)
    assert out.data[3, 3, 3] == 1


def test_close_keeps_solid_cube():
    m = np.zeros((7, 7, 7))
    m[2:5, 2:5, 2:5] = 1
    assert np.array_equal(morph_close(Volume(m), 1).data, m)


def test_close_rejects_non_binary():
    with pytest.raises(MaskError):
        morph_close(Volume(np.full((3, 3, 3), 2.0)), 1)


@given(arrays(np.bool_, (9, 9, 9)), st.integers(1, 2))
def test_close_idempotent_and_extensive(m, r):
    v = Volume(m.astype(float))
    c1 = morph_close(v, r)
    c2 = morph_close(c1, r)
    assert np.array_equal(c1.data, c2.data)
    assert np.all(c1.data >= v.data)
