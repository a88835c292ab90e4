"""Grid-level operations: one-hot encoding and world-preserving crops."""
import numpy as np

from ..errors import LabelError
from .core import LabelMap, MultiChannelVolume, Volume


def one_hot(lm, label_set):
    """(V, D, H, W) encoding with channel 0 = background, V = len(label_set) + 1."""
    label_set = [int(i) for i in label_set]
    if 0 in label_set:
        raise LabelError("background id 0 is implicit; leave it out of label_set")
    if len(set(label_set)) != len(label_set):
        raise LabelError("label_set has duplicate ids")
    ids = lm.ids if isinstance(lm, LabelMap) else np.asarray(lm, dtype=np.int64)
    lookup = {0: 0}
    lookup.update({lab: c + 1 for c, lab in enumerate(label_set)})
    present = np.unique(ids)
    unknown = [int(i) for i in present if int(i) not in lookup]
    if unknown:
        raise LabelError(f"ids {unknown} not in label set")
    index = np.zeros(ids.shape, dtype=np.int64)
    for lab, c in lookup.items():
        index[ids == lab] = c
    out = np.zeros((len(label_set) + 1,) + ids.shape)
    np.put_along_axis(out, index[None], 1.0, axis=0)
    affine = lm.affine if isinstance(lm, LabelMap) else np.eye(4)
    return MultiChannelVolume(out, affine)


def translate(affine, start):
    """Affine of a sub-grid whose voxel 0 sits at index ``start`` of ``affine``."""
    shift = np.eye(4)
    shift[:3, 3] = np.asarray(start, dtype=np.float64)
    return np.asarray(affine) @ shift


def crop_array(data, center_index, size):
    """Zero-padded crop of the last three axes; returns (array, start)."""
    data = np.asarray(data)
    spatial = data.shape[-3:]
    size = tuple(int(s) for s in size)
    center = np.rint(np.asarray(center_index, dtype=np.float64)).astype(np.int64)
    start = center - np.asarray(size) // 2
    out = np.zeros(data.shape[:-3] + size, dtype=data.dtype)
    src, dst = [], []
    for ax in range(3):
        lo = max(0, start[ax])
        hi = min(spatial[ax], start[ax] + size[ax])
        if hi <= lo:
            return out, start
        src.append(slice(lo, hi))
        dst.append(slice(lo - start[ax], hi - start[ax]))
    out[(Ellipsis, *dst)] = data[(Ellipsis, *src)]
    return out, start


def crop(vol, center_index, size):
    """Crop to ``size`` voxels centred (index ``size // 2``) on ``center_index``."""
    out, start = crop_array(vol.data, center_index, size)
    affine = translate(vol.affine, start)
    if isinstance(vol, LabelMap):
        kept = {int(i) for i in np.unique(out)}
        return LabelMap(Volume(out, affine), {k: v for k, v in vol.labels.items() if k in kept})
    if isinstance(vol, MultiChannelVolume):
        return MultiChannelVolume(out, affine)
    return Volume(out, affine)
