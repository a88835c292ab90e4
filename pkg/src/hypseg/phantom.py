"""Procedural brain phantom with a labelled hypothalamus.

World coordinates are MNI-like mm (RAS). Each hypothalamus is an ellipsoid
split into five subregions: anterior/tuberal/posterior along y, and
superior/inferior along z for the anterior and tuberal thirds. A thin third
ventricle separates the two sides; fornix columns sit anterior-superior and
the ventral diencephalon sits posterolateral.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import taxonomy as tx
from .volume.core import LabelMap, Volume

HYP_CENTER = np.array([4.5, -2.0, -12.0])
HYP_AXES = np.array([3.0, 5.0, 4.0])
BRAIN_CENTER = np.array([0.0, -2.0, -8.0])
BRAIN_AXES = np.array([21.0, 21.0, 19.0])

# tissue ids in training maps
CSF, GM, WM, VDC_TISSUE = 1, 2, 3, 4
# reference intensities of the rendered "T1-like" image
T1_MEANS = {CSF: 30.0, GM: 110.0, WM: 150.0, VDC_TISSUE: 130.0, "hyp": 95.0, "fornix": 150.0}


@dataclass(frozen=True)
class PhantomGeometry:
    dims: tuple = (64, 64, 64)
    spacing: float = 0.75
    center: tuple = tuple(BRAIN_CENTER)
    hyp_scale: float = 1.0
    head_scale: float = 1.0

    def affine(self):
        a = np.diag([self.spacing] * 3 + [1.0])
        half = (np.asarray(self.dims) - 1) / 2.0
        a[:3, 3] = np.asarray(self.center) - half * self.spacing
        return a

    def world_grid(self):
        idx = np.indices(self.dims, dtype=np.float64)
        a = self.affine()
        return [a[i, i] * idx[i] + a[i, 3] for i in range(3)]


def _ellipsoid(x, y, z, center, axes):
    return (((x - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2
            + ((z - center[2]) / axes[2]) ** 2) <= 1.0


def structure_masks(geom):
    """Boolean masks of every phantom structure on ``geom``'s grid."""
    x, y, z = geom.world_grid()
    hs = geom.head_scale
    brain = _ellipsoid(x, y, z, BRAIN_CENTER, BRAIN_AXES * hs)
    wm = _ellipsoid(x, y, z, BRAIN_CENTER, BRAIN_AXES * hs * 0.72)
    masks = {"brain": brain, "wm": wm & brain}
    third = (np.abs(x) < 1.2) & _ellipsoid(x, y, z, [0, HYP_CENTER[1], HYP_CENTER[2] + 1], [3, 6.5, 6.0])
    masks["third_ventricle"] = third & brain
    # anterior horn-like CSF blob so the map has a third tissue class
    masks["csf"] = (third | _ellipsoid(np.abs(x), y, z, [8, 10, 2], [3, 5, 3])) & brain
    masks["vdc_left"] = _ellipsoid(x, y, z, [-9, -10, -14], [4, 6, 3.5]) & brain
    masks["vdc_right"] = _ellipsoid(x, y, z, [9, -10, -14], [4, 6, 3.5]) & brain
    axes = HYP_AXES * geom.hyp_scale ** (1.0 / 3.0) * hs
    for side, sign, ids in (("left", -1, tx.LEFT_SUBREGIONS), ("right", 1, tx.RIGHT_SUBREGIONS)):
        c = HYP_CENTER * np.array([sign, 1, 1])
        hyp = _ellipsoid(x, y, z, c, axes) & ~third
        third_y = axes[1] / 3.0
        ant = y > c[1] + third_y / 2
        post = y < c[1] - third_y
        sup = z > c[2]
        parts = [hyp & ant & sup, hyp & ant & ~sup, hyp & ~ant & ~post & sup,
                 hyp & ~ant & ~post & ~sup, hyp & post]
        for rid, part in zip(ids, parts):
            masks[rid] = part
        fx = sign * 2.5
        masks[tx.LEFT_FORNIX if sign < 0 else tx.RIGHT_FORNIX] = (
            ((x - fx) ** 2 + (y - (c[1] + axes[1] + 0.5)) ** 2 <= 1.0)
            & (z > c[2] - 1) & (z < c[2] + axes[2] + 4) & brain & ~third
        )
    return masks


def training_labels(geom=None):
    """Whole-brain training map: tissue ids 1..4 and hypothalamus ids 101..112."""
    geom = geom or PhantomGeometry()
    m = structure_masks(geom)
    ids = np.zeros(geom.dims, dtype=np.int64)
    ids[m["brain"]] = GM
    ids[m["wm"]] = WM
    ids[m["vdc_left"] | m["vdc_right"]] = VDC_TISSUE
    ids[m["csf"]] = CSF
    for i in tx.FORNIX_IDS + tx.SUBREGION_IDS:
        ids[m[i]] = i
    names = {CSF: "csf", GM: "gray_matter", WM: "white_matter", VDC_TISSUE: "ventral_dc", **tx.HYPO_NAMES}
    return LabelMap(Volume(ids, geom.affine()), {k: v for k, v in names.items() if (ids == k).any()})


def wholebrain_fs(geom=None):
    """FreeSurfer-convention whole-brain map (VDC 28/60, third ventricle 14)."""
    geom = geom or PhantomGeometry()
    m = structure_masks(geom)
    x = geom.world_grid()[0]
    ids = np.zeros(geom.dims, dtype=np.int64)
    left = x < 0
    ids[m["brain"] & left] = 3
    ids[m["brain"] & ~left] = 42
    ids[m["wm"] & left] = 2
    ids[m["wm"] & ~left] = 41
    ids[m["vdc_left"]] = tx.FS_LEFT_VDC
    ids[m["vdc_right"]] = tx.FS_RIGHT_VDC
    ids[m["third_ventricle"]] = tx.FS_THIRD_VENTRICLE
    names = {2: "Left-Cerebral-White-Matter", 3: "Left-Cerebral-Cortex", 41: "Right-Cerebral-White-Matter",
             42: "Right-Cerebral-Cortex", 14: "3rd-Ventricle", 28: "Left-VentralDC", 60: "Right-VentralDC"}
    return LabelMap(Volume(ids, geom.affine()), {k: v for k, v in names.items() if (ids == k).any()})


def render(lm, means=None, noise=4.0, seed=0):
    """T1-like rendering of a training map (class means + Gaussian noise)."""
    means = dict(T1_MEANS if means is None else means)
    ids = lm.ids
    img = np.zeros(ids.shape)
    for i in np.unique(ids):
        if i == 0:
            continue
        if i in tx.SUBREGION_IDS:
            mu = means["hyp"]
        elif i in tx.FORNIX_IDS:
            mu = means["fornix"]
        else:
            mu = means.get(int(i), means[GM])
        img[ids == i] = mu
    rng = np.random.default_rng(seed)
    img = img + noise * rng.standard_normal(img.shape) * (ids > 0)
    return Volume(np.clip(img, 0, None), lm.affine)


def hemisphere(geom=None, shift_vox=0, seed=0):
    """Left-hemisphere inputs for label preparation.

    Returns (intensity, brain_mask, hypo_labels) where hypo_labels uses the
    manual id band 1..5 (subregions) and 11 (fornix). ``shift_vox`` moves the
    hemisphere away from the grid midline along x.
    """
    geom = geom or PhantomGeometry()
    full = training_labels(geom)
    ids = full.ids
    x = geom.world_grid()[0]
    keep = x < 0
    hemi = np.where(keep, ids, 0)
    if shift_vox:
        hemi = np.roll(hemi, shift_vox, axis=0)
        if shift_vox > 0:
            hemi[:shift_vox] = 0
        else:
            hemi[shift_vox:] = 0
    hemi_lm = full.with_ids(hemi)
    img = render(hemi_lm, seed=seed)
    mask = Volume((hemi > 0).astype(np.float64), geom.affine())
    hypo = np.where(np.isin(hemi, tx.HYPO_IDS), hemi - 100, 0)
    names = {i - 100: n for i, n in tx.HYPO_NAMES.items()}
    hypo_lm = LabelMap(Volume(hypo, geom.affine()), {k: v for k, v in names.items() if (hypo == k).any()})
    return img, mask, hypo_lm


def cohort_geometry(rng, patient, base=None, shrink=0.8, spread=0.08):
    """Per-subject geometry: random head size and hypothalamus volume."""
    base = base or PhantomGeometry(dims=(40, 40, 40), spacing=0.5, center=tuple(HYP_CENTER * [0, 1, 1]))
    head = float(np.exp(rng.normal(0.0, 0.05)))
    hyp = float(np.exp(rng.normal(0.0, spread)))
    if patient:
        hyp *= shrink
    return replace(base, hyp_scale=hyp, head_scale=head)


def brain_volume_mm3(geom):
    """Analytic intracranial volume of the phantom brain ellipsoid."""
    a, b, c = BRAIN_AXES * geom.head_scale
    return 4.0 / 3.0 * np.pi * a * b * c
