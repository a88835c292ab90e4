"""Point sampling of voxel grids and affine resampling.

Sampling positions are continuous voxel indices. ``boundary="zero"`` treats
everything outside the grid as 0 (skull-stripped background); ``"edge"``
clamps to the nearest valid voxel.
"""
import numpy as np

from .._accel import NUMBA_ENABLED, jit
from ..errors import GeometryError, LabelInterpError
from .core import LabelMap, MultiChannelVolume, Volume, check_affine

SNAP_TOL = 1e-9
_CHUNK = 1 << 20


def snap(coords, tol=SNAP_TOL):
    """Round coordinates that are within ``tol`` of an integer.

    Keeps identity resampling exact despite affine round-off.
    """
    r = np.rint(coords)
    return np.where(np.abs(coords - r) <= tol, r, coords)


@jit
def _sample_numba(data, pts, linear, edge):
    C, D, H, W = data.shape
    M = pts.shape[1]
    out = np.zeros((C, M))
    for m in range(M):
        x, y, z = pts[0, m], pts[1, m], pts[2, m]
        if not linear:
            i = int(np.floor(x + 0.5))
            j = int(np.floor(y + 0.5))
            k = int(np.floor(z + 0.5))
            if edge:
                i = min(max(i, 0), D - 1)
                j = min(max(j, 0), H - 1)
                k = min(max(k, 0), W - 1)
            elif i < 0 or i >= D or j < 0 or j >= H or k < 0 or k >= W:
                continue
            for c in range(C):
                out[c, m] = data[c, i, j, k]
            continue
        if edge:
            x = min(max(x, 0.0), D - 1.0)
            y = min(max(y, 0.0), H - 1.0)
            z = min(max(z, 0.0), W - 1.0)
        i0 = int(np.floor(x))
        j0 = int(np.floor(y))
        k0 = int(np.floor(z))
        fx, fy, fz = x - i0, y - j0, z - k0
        for di in range(2):
            ii = i0 + di
            if ii < 0 or ii >= D:
                continue
            wx = fx if di else 1.0 - fx
            for dj in range(2):
                jj = j0 + dj
                if jj < 0 or jj >= H:
                    continue
                wy = fy if dj else 1.0 - fy
                for dk in range(2):
                    kk = k0 + dk
                    if kk < 0 or kk >= W:
                        continue
                    w = (wx * wy) * (fz if dk else 1.0 - fz)
                    for c in range(C):
                        out[c, m] += w * data[c, ii, jj, kk]
    return out


def _sample_numpy(data, pts, linear, edge):
    C, D, H, W = data.shape
    dims = np.array([D, H, W])
    M = pts.shape[1]
    out = np.zeros((C, M))
    if not linear:
        idx = np.floor(pts + 0.5).astype(np.int64)
        if edge:
            idx = np.clip(idx, 0, (dims - 1)[:, None])
            ok = np.ones(M, dtype=bool)
        else:
            ok = np.all((idx >= 0) & (idx < dims[:, None]), axis=0)
        i, j, k = idx[:, ok]
        out[:, ok] = data[:, i, j, k]
        return out
    if edge:
        pts = np.clip(pts, 0.0, (dims - 1.0)[:, None])
    base = np.floor(pts).astype(np.int64)
    frac = pts - base
    for di in range(2):
        ii = base[0] + di
        wx = frac[0] if di else 1.0 - frac[0]
        for dj in range(2):
            jj = base[1] + dj
            wy = frac[1] if dj else 1.0 - frac[1]
            for dk in range(2):
                kk = base[2] + dk
                w = (wx * wy) * (frac[2] if dk else 1.0 - frac[2])
                ok = (ii >= 0) & (ii < D) & (jj >= 0) & (jj < H) & (kk >= 0) & (kk < W)
                out[:, ok] += w[ok] * data[:, ii[ok], jj[ok], kk[ok]]
    return out


_sample_kernel = _sample_numba if NUMBA_ENABLED else _sample_numpy


def sample_points(data, pts, interp="trilinear", boundary="zero"):
    """Sample ``data`` (3D or (C,D,H,W)) at voxel positions ``pts`` (3, M)."""
    if interp not in ("nearest", "trilinear"):
        raise ValueError(f"unknown interpolator {interp!r}")
    if boundary not in ("zero", "edge"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 3
    if squeeze:
        data = data[None]
    pts = np.ascontiguousarray(snap(np.asarray(pts, dtype=np.float64)))
    out = _sample_kernel(np.ascontiguousarray(data), pts, interp == "trilinear", boundary == "edge")
    return out[0] if squeeze else out


def grid_indices(dims):
    """(3, D*H*W) array of voxel indices in C order."""
    return np.indices(dims, dtype=np.float64).reshape(3, -1)


def map_grid(matrix, dims):
    """Apply a 4x4 index-to-index matrix to every voxel of a grid."""
    idx = grid_indices(dims)
    return matrix[:3, :3] @ idx + matrix[:3, 3:4]


def sample_grid(data, matrix, dims, interp="trilinear", boundary="zero"):
    """Backward-warp ``data`` onto a grid of ``dims`` via index matrix ``matrix``.

    Output voxel v takes the value of ``data`` at ``matrix @ v``.
    """
    data = np.asarray(data, dtype=np.float64)
    lead = data.shape[:-3]
    n = int(np.prod(dims))
    flat = np.empty(lead + (n,))
    # slab-wise to bound the size of the coordinate buffer
    dims = tuple(int(d) for d in dims)
    plane = dims[1] * dims[2]
    step = max(1, _CHUNK // max(plane, 1))
    for start in range(0, dims[0], step):
        stop = min(dims[0], start + step)
        idx = np.indices((stop - start,) + dims[1:], dtype=np.float64).reshape(3, -1)
        idx[0] += start
        pts = matrix[:3, :3] @ idx + matrix[:3, 3:4]
        flat[..., start * plane: stop * plane] = sample_points(data, pts, interp, boundary)
    return flat.reshape(lead + dims)


def resample(vol, target_dims, target_affine, interp="trilinear"):
    """Resample onto the grid (target_dims, target_affine); outside -> 0."""
    try:
        target_affine = check_affine(target_affine)
    except GeometryError as exc:
        raise GeometryError(f"target affine: {exc}") from None
    target_dims = tuple(int(d) for d in target_dims)
    if isinstance(vol, LabelMap) and interp != "nearest":
        raise LabelInterpError("label maps can only be resampled with nearest neighbour")
    matrix = np.linalg.inv(vol.affine) @ target_affine
    out = sample_grid(vol.data, matrix, target_dims, interp)
    if isinstance(vol, LabelMap):
        return vol.with_ids(out)
    if isinstance(vol, MultiChannelVolume):
        return MultiChannelVolume(out, target_affine)
    return Volume(out, target_affine)
