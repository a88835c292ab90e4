"""Overlap, distance and volume measurements on binary masks and label maps."""
import numpy as np
from scipy.spatial import cKDTree

from .. import taxonomy as tx
from ..errors import EmptySetError, GeometryError
from ..volume.core import LabelMap, Volume, voxel_volume
from ..volume.edt import squared_edt


def _mask_pair(a, b):
    if isinstance(a, (Volume, LabelMap)) or isinstance(b, (Volume, LabelMap)):
        if not (isinstance(a, (Volume, LabelMap)) and isinstance(b, (Volume, LabelMap))):
            raise GeometryError("compare two volumes or two arrays, not a mix")
        va = a.vol if isinstance(a, LabelMap) else a
        vb = b.vol if isinstance(b, LabelMap) else b
        if not va.same_grid(vb):
            raise GeometryError("masks are on different grids")
        return va.data > 0, vb.data > 0, va.affine
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    if a.shape != b.shape:
        raise GeometryError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b, np.eye(4)


def dice(a, b):
    """2|A&B| / (|A|+|B|); 1.0 when both are empty."""
    a, b, _ = _mask_pair(a, b)
    s = int(a.sum()) + int(b.sum())
    if s == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / s


def surface(mask):
    """Foreground voxels touching background or the grid edge (6-neighbourhood)."""
    p = np.pad(mask, 1)
    core = p[1:-1, 1:-1, 1:-1]
    interior = core.copy()
    for ax in range(3):
        for sh in (-1, 1):
            interior &= np.roll(p, sh, axis=ax)[1:-1, 1:-1, 1:-1]
    return core & ~interior


def _axis_aligned(affine):
    m = affine[:3, :3]
    return np.count_nonzero(m - np.diag(np.diag(m))) == 0


def directed_mean(x, y, affine):
    """Mean over voxels of ``x`` of the world distance (mm) to the nearest voxel of ``y``."""
    if _axis_aligned(affine):
        d = np.sqrt(squared_edt(y, np.abs(np.diag(affine)[:3])))
        return float(d[x].mean())
    m, t = affine[:3, :3], affine[:3, 3]
    px = np.argwhere(x) @ m.T + t
    py = np.argwhere(y) @ m.T + t
    dist, _ = cKDTree(py).query(px)
    return float(dist.mean())


def avd(a, b, symmetric_mean=False, surface_only=False):
    """Average Hausdorff distance in mm.

    Default is max of the two directed means over all foreground voxels;
    ``symmetric_mean`` averages the directed means instead, ``surface_only``
    restricts both point sets to surface voxels.
    """
    a, b, affine = _mask_pair(a, b)
    if not a.any() or not b.any():
        raise EmptySetError("average distance needs two non-empty masks")
    if surface_only:
        a, b = surface(a), surface(b)
    dab = directed_mean(a, b, affine)
    dba = directed_mean(b, a, affine)
    return 0.5 * (dab + dba) if symmetric_mean else max(dab, dba)


def region_volumes(lm, ids=None):
    """id -> mm^3 (voxel count times the voxel cell volume)."""
    ids = list(lm.labels) if ids is None else list(ids)
    vv = voxel_volume(lm.affine)
    values, counts = np.unique(lm.ids, return_counts=True)
    table = dict(zip(values.tolist(), counts.tolist()))
    return {int(i): table.get(int(i), 0) * vv for i in ids}


def group_mask(lm, ids):
    return np.isin(lm.ids, list(ids))


def region_metrics(pred, ref, groups=None):
    """Rows of (name, dice, avd_mm, volume_mm3) per region and region group.

    ``volume_mm3`` is the predicted volume. AVD is NaN when either side of a
    region is empty.
    """
    if not pred.vol.same_grid(ref.vol):
        raise GeometryError("prediction and reference are on different grids")
    regions = {tx.SUBREGION_NAMES[i]: (i,) for i in tx.SUBREGION_IDS}
    regions.update(tx.REGION_GROUPS if groups is None else groups)
    vv = voxel_volume(pred.affine)
    rows = []
    for name, ids in regions.items():
        a, b = group_mask(pred, ids), group_mask(ref, ids)
        try:
            dist = avd(Volume(a, pred.affine), Volume(b, pred.affine))
        except EmptySetError:
            dist = float("nan")
        rows.append({"region": name, "dice": dice(a, b), "avd_mm": dist, "volume_mm3": int(a.sum()) * vv})
    return rows
