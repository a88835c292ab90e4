"""Training label-map creation from a labelled hemisphere.

k-means tissue clusters + manual hypothalamus labels -> merged hemisphere ->
mirrored whole brain -> MNI coordinate channels -> crops around the
hypothalamus.
"""
from dataclasses import dataclass, field

import numpy as np

from . import taxonomy as tx
from .errors import DegenerateClusterError, GeometryError, LabelError, MaskError
from .volume.core import LabelMap, MultiChannelVolume, Volume, as_binary, check_affine
from .volume.morphology import close_array
from .volume.ops import crop
from .volume.sampling import grid_indices

MNI_SCALE_MM = 100.0


@dataclass
class KMeansResult:
    labels: LabelMap
    centers: np.ndarray
    inertia_history: list = field(default_factory=list)
    iterations: int = 0


def _kmeans_pp(values, k, rng):
    centers = [values[rng.integers(values.size)]]
    d2 = (values - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        pick = rng.choice(values.size, p=d2 / total)
        centers.append(values[pick])
        d2 = np.minimum(d2, (values - values[pick]) ** 2)
    return np.array(centers, dtype=np.float64)


def _assign(values, centers):
    order = np.argsort(centers, kind="stable")
    sc = centers[order]
    mids = (sc[1:] + sc[:-1]) / 2.0
    return order[np.searchsorted(mids, values, side="left")]


def lloyd_1d(values, k, rng, max_iter=300):
    """Lloyd iterations with k-means++ seeding on a 1D sample."""
    centers = _kmeans_pp(values, k, rng)
    if centers.size < k:
        raise DegenerateClusterError(f"k-means++ found only {centers.size} distinct seeds for k={k}")
    assign = _assign(values, centers)
    history = [float(((values - centers[assign]) ** 2).sum())]
    it = 0
    for it in range(1, max_iter + 1):
        sums = np.bincount(assign, weights=values, minlength=k)
        counts = np.bincount(assign, minlength=k)
        keep = counts == 0
        centers = np.where(keep, centers, sums / np.maximum(counts, 1))
        new = _assign(values, centers)
        history.append(float(((values - centers[new]) ** 2).sum()))
        if np.array_equal(new, assign):
            break
        assign = new
    return centers, assign, history, it


def kmeans_segment(intensity, mask, k, seed=0, max_iter=300):
    """Cluster foreground intensities; ids 1..k ordered by center value."""
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    m = as_binary(mask, "brain mask")
    if m.shape != intensity.dims:
        raise GeometryError("intensity and mask grids differ")
    values = intensity.data[m]
    if np.unique(values).size < k:
        raise DegenerateClusterError(f"only {np.unique(values).size} distinct intensities for k={k}")
    rng = np.random.default_rng(seed)
    centers, assign, history, iters = lloyd_1d(values, k, rng, max_iter)
    rank = np.empty(k, dtype=np.int64)
    order = np.argsort(centers, kind="stable")
    rank[order] = np.arange(1, k + 1)
    ids = np.zeros(intensity.dims)
    ids[m] = rank[assign]
    lm = LabelMap(Volume(ids, intensity.affine), tx.tissue_names(k))
    return KMeansResult(lm, np.sort(centers), history, iters)


def to_reserved_band(ids):
    """Map manual hypothalamus ids 1..12 into 101..112; ids already there pass."""
    ids = np.asarray(ids, dtype=np.int64)
    out = ids.copy()
    low = (ids >= 1) & (ids <= 12)
    out[low] += 100
    bad = np.setdiff1d(np.unique(out), (0,) + tx.HYPO_IDS)
    if bad.size:
        raise LabelError(f"hypothalamus ids {bad.tolist()} outside 1..12 / 101..112")
    return out


def delineate_fornix(hypo, radius_vox=2):
    """Close gaps in the fornix seed of a manual map (ids 11/12 or 111/112).

    Closed voxels are added only where the manual map is background, so the
    subregion labels are never overwritten.
    """
    ids = hypo.ids
    out = ids.copy()
    for fid in tx.FORNIX_IDS:
        for seed_id in (fid - 100, fid):
            seed = ids == seed_id
            if seed.any():
                out[close_array(seed, radius_vox) & (out == 0)] = seed_id
    names = {**{i - 100: n for i, n in tx.HYPO_NAMES.items()}, **tx.HYPO_NAMES, **hypo.labels}
    return LabelMap(Volume(out, hypo.affine), {i: names[i] for i in np.unique(out).astype(int) if i})


def merge_labels(auto, hypo):
    """Hypothalamus labels overwrite tissue labels wherever they are nonzero."""
    if auto.dims != hypo.dims or not np.allclose(auto.affine, hypo.affine, atol=1e-6):
        raise GeometryError("automatic and manual label maps are on different grids")
    h = to_reserved_band(hypo.ids)
    a = auto.ids
    clash = np.intersect1d(np.unique(a), tx.HYPO_IDS)
    if clash.size:
        raise LabelError(f"tissue ids {clash.tolist()} collide with the reserved band")
    out = np.where(h > 0, h, a)
    names = {**auto.labels, **tx.HYPO_NAMES}
    return LabelMap(Volume(out, auto.affine), {i: names[i] for i in np.unique(out).astype(int) if i})


def sagittal_axis(affine):
    """Voxel axis whose direction is closest to world left-right."""
    return int(np.argmax(np.abs(np.asarray(affine)[0, :3])))


def reflect(arr, axis, offset):
    """Mirror along ``axis`` so index i goes to n - 1 - i + 2 * offset; off-grid drops."""
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    src = np.arange(n)
    dst = n - 1 - src + 2 * offset
    ok = (dst >= 0) & (dst < n)
    out_idx = [slice(None)] * arr.ndim
    in_idx = [slice(None)] * arr.ndim
    out_idx[axis] = dst[ok]
    in_idx[axis] = src[ok]
    out[tuple(out_idx)] = arr[tuple(in_idx)]
    return out


def midline_objective(fg, refl, axis):
    """(overlap voxels, gap voxels) between a hemisphere and its reflection.

    Gap counts background voxels strictly between the two medial faces, on
    every line along ``axis`` that meets both foregrounds.
    """
    overlap = int(np.count_nonzero(fg & refl))
    f = np.moveaxis(fg, axis, -1)
    r = np.moveaxis(refl, axis, -1)
    n = f.shape[-1]
    idx = np.arange(n)
    both = f.any(-1) & r.any(-1)
    if not both.any():
        return overlap, 0
    f_lo = np.where(f, idx, n).min(-1)
    f_hi = np.where(f, idx, -1).max(-1)
    r_lo = np.where(r, idx, n).min(-1)
    r_hi = np.where(r, idx, -1).max(-1)
    # hemisphere above the reflection: gap between r_hi and f_lo, else mirrored
    gap_up = np.maximum(f_lo - r_hi - 1, 0)
    gap_down = np.maximum(r_lo - f_hi - 1, 0)
    gap = np.where(f_lo > r_hi, gap_up, np.where(r_lo > f_hi, gap_down, 0))
    return overlap, int(gap[both].sum())


@dataclass
class MirrorResult:
    labels: LabelMap
    offset: int
    objective: dict


def mirror_hemisphere(lm, search_halfwidth_vox=5):
    """Reflect a one-hemisphere map into a whole brain.

    The plane offset is the integer in [-h, h] minimising overlap + gap
    between the hemisphere and its reflection (ties: smallest |offset|).
    """
    ids = lm.ids
    fg = ids > 0
    if not fg.any():
        raise MaskError("label map has no foreground to mirror")
    axis = sagittal_axis(lm.affine)
    h = int(search_halfwidth_vox)
    scores = {}
    for t in range(-h, h + 1):
        ov, gap = midline_objective(fg, reflect(fg, axis, t), axis)
        scores[t] = (ov + gap, ov, gap)
    best = min(scores, key=lambda t: (scores[t][0], abs(t), t))
    refl = reflect(ids, axis, best)
    present = np.unique(refl)
    table = {int(i): tx.CONTRALATERAL.get(int(i), int(i)) for i in present}
    mapped = np.zeros_like(refl)
    for src, dst in table.items():
        mapped[refl == src] = dst
    out = np.where(fg, ids, mapped)
    names = {**lm.labels, **tx.HYPO_NAMES}
    res = LabelMap(Volume(out, lm.affine), {i: names[i] for i in np.unique(out).astype(int) if i})
    objective = {t: {"overlap": s[1], "gap": s[2]} for t, s in scores.items()}
    return MirrorResult(res, best, objective)


def default_intensity_table(lm, std=5.0, csf=30.0, gm=110.0, wm=150.0):
    """Plausible T1-like class intensities for every id in ``lm``."""
    ids = [i for i in np.unique(lm.ids) if i != 0]
    tissue = [i for i in ids if i not in tx.HYPO_IDS]
    table = {}
    if tissue:
        ramp = np.linspace(csf, wm, len(tissue)) if len(tissue) > 1 else [gm]
        table.update({int(i): (float(m), std) for i, m in zip(sorted(tissue), ramp)})
    for i in ids:
        if i in tx.SUBREGION_IDS:
            table[int(i)] = (gm, std)
        elif i in tx.FORNIX_IDS:
            table[int(i)] = (wm, std)
    return table


def synth_reference_image(lm, table, seed=0):
    """Per-voxel Normal(mean, std^2) of each voxel's label; background 0."""
    table = {int(k): v for k, v in table.items()}
    ids = lm.ids
    missing = [int(i) for i in np.unique(ids) if i != 0 and int(i) not in table]
    if missing:
        raise LabelError(f"no intensity entry for ids {missing}")
    mean = np.zeros(ids.shape)
    std = np.zeros(ids.shape)
    for i, (mu, sd) in table.items():
        if mu < 0 or sd < 0:
            raise ValueError("intensity table needs mean >= 0 and std >= 0")
        sel = ids == i
        mean[sel] = mu
        std[sel] = sd
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(ids.shape)
    return Volume(mean + std * noise, lm.affine)


def attach_coords(grid, mni_affine):
    """Three channels of MNI mm / 100 for every voxel, clamped to [-1, 1]."""
    try:
        mni_affine = check_affine(mni_affine)
    except GeometryError as exc:
        raise GeometryError(f"MNI affine: {exc}") from None
    dims = tuple(grid.dims)
    total = mni_affine @ grid.affine
    pts = total[:3, :3] @ grid_indices(dims) + total[:3, 3:4]
    coords = np.clip(pts / MNI_SCALE_MM, -1.0, 1.0).reshape((3,) + dims)
    return MultiChannelVolume(coords, grid.affine)


def hypothalamus_centroid(lm, hypo_ids=tx.SUBREGION_IDS):
    sel = np.isin(lm.ids, list(hypo_ids))
    if not sel.any():
        raise MaskError("no hypothalamus voxels to centre the crop on")
    return np.rint(np.argwhere(sel).mean(axis=0)).astype(np.int64)


def crop_training_pair(L, C, hypo_ids=tx.HYPO_IDS, size=(200, 200, 200)):
    """Crop L and C to the model grid around the hypothalamus centroid."""
    if tuple(L.dims) != tuple(C.dims):
        raise GeometryError("L and C grids differ")
    center = hypothalamus_centroid(L, hypo_ids)
    return crop(L, center, size), crop(C, center, size)
