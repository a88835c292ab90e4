"""Geometry-aware volume containers.

All arrays are copied on construction and marked read-only, so instances can
be shared freely between threads.
"""
from dataclasses import dataclass, field

import numpy as np

from ..errors import GeometryError, LabelError


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def check_affine(affine):
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise GeometryError(f"affine must be 4x4, got {affine.shape}")
    if not np.all(np.isfinite(affine)):
        raise GeometryError("affine has non-finite entries")
    if abs(np.linalg.det(affine[:3, :3])) <= 0.0:
        raise GeometryError("affine is singular")
    return affine


def spacing_of(affine):
    return np.sqrt((np.asarray(affine)[:3, :3] ** 2).sum(axis=0))


def voxel_volume(affine):
    """mm^3 of one voxel cell."""
    return float(abs(np.linalg.det(np.asarray(affine)[:3, :3])))


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GeometryError(f"Volume needs a non-empty 3D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", _frozen(check_affine(self.affine)))

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def spacing(self):
        return spacing_of(self.affine)

    def with_data(self, data):
        return Volume(data, self.affine)

    def world_coords(self, index):
        """World mm of voxel ``index`` (array of shape (..., 3))."""
        index = np.asarray(index, dtype=np.float64)
        return index @ self.affine[:3, :3].T + self.affine[:3, 3]

    def same_grid(self, other, atol=1e-9):
        return self.dims == tuple(other.dims) and np.allclose(self.affine, other.affine, rtol=0, atol=atol)


@dataclass(frozen=True, eq=False)
class LabelMap:
    vol: Volume
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        vol = self.vol if isinstance(self.vol, Volume) else Volume(self.vol)
        d = vol.data
        if np.any(d < 0) or np.any(d != np.round(d)):
            raise LabelError("label maps hold nonnegative integers only")
        labels = {int(k): str(v) for k, v in dict(self.labels).items()}
        labels.pop(0, None)
        present = np.unique(d).astype(np.int64)
        missing = [int(i) for i in present if i != 0 and i not in labels]
        if missing:
            raise LabelError(f"ids {missing} have no entry in the label dictionary")
        object.__setattr__(self, "vol", vol)
        object.__setattr__(self, "labels", dict(sorted(labels.items())))

    @classmethod
    def from_array(cls, ids, affine=None, labels=None):
        """Build from an integer array; unnamed ids get ``label_<id>``."""
        ids = np.asarray(ids)
        names = dict(labels or {})
        for i in np.unique(ids):
            i = int(i)
            if i != 0 and i not in names:
                names[i] = f"label_{i}"
        return cls(Volume(ids, np.eye(4) if affine is None else affine), names)

    @property
    def data(self):
        return self.vol.data

    @property
    def ids(self):
        return self.vol.data.astype(np.int64)

    @property
    def affine(self):
        return self.vol.affine

    @property
    def dims(self):
        return self.vol.dims

    @property
    def spacing(self):
        return self.vol.spacing

    def with_ids(self, ids, labels=None):
        names = self.labels if labels is None else labels
        present = {int(i) for i in np.unique(ids)} - {0}
        return LabelMap(Volume(ids, self.affine), {k: v for k, v in names.items() if k in present})


@dataclass(frozen=True, eq=False)
class MultiChannelVolume:
    data: np.ndarray
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 4 or min(data.shape) < 1:
            raise GeometryError(f"MultiChannelVolume needs a (C,D,H,W) array, got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", _frozen(check_affine(self.affine)))

    @property
    def channels(self):
        return int(self.data.shape[0])

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape[1:])

    @property
    def spacing(self):
        return spacing_of(self.affine)

    def channel(self, c):
        return Volume(self.data[c], self.affine)

    @classmethod
    def stack(cls, vols):
        vols = list(vols)
        ref = vols[0]
        for v in vols[1:]:
            if not ref.same_grid(v):
                raise GeometryError("cannot stack volumes on different grids")
        return cls(np.stack([v.data for v in vols]), ref.affine)


def as_binary(vol, name="mask"):
    """Boolean view of a binary Volume; raises MaskError on other values."""
    from ..errors import MaskError

    d = vol.data if isinstance(vol, (Volume, LabelMap)) else np.asarray(vol)
    if not np.all((d == 0) | (d == 1)):
        raise MaskError(f"{name} must contain only 0 and 1")
    return d.astype(bool)
