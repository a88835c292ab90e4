"""Native image -> cropped 4-channel input -> whole-structure mask ->
gated subregion prediction -> native-space subregion map."""
from dataclasses import dataclass, field

import numpy as np

from . import taxonomy as tx
from .errors import GeometryError, ShapeError
from .labelprep import attach_coords
from .neural.train import hard_foreground, mask_image
from .neural.losses import softmax_channels
from .synthgen import minmax
from .volume.core import LabelMap, MultiChannelVolume, Volume, check_affine
from .volume.sampling import resample

MNI_ANCHOR = (0.0, -2.0, -12.0)
NO_VENTRICLE_EXCLUSION = "no_ventricle_exclusion"
NO_VDC_GATING = "no_vdc_gating"


@dataclass(frozen=True, eq=False)
class InferenceContext:
    image: Volume
    mni_affine: np.ndarray  # native world mm -> MNI mm
    wholebrain: LabelMap = None
    grid_size: tuple = (200, 200, 200)
    spacing: float = 0.3
    anchor: tuple = MNI_ANCHOR
    vdc_ids: tuple = (tx.FS_LEFT_VDC, tx.FS_RIGHT_VDC)
    ventricle_ids: tuple = (tx.FS_THIRD_VENTRICLE,)

    def __post_init__(self):
        try:
            aff = check_affine(self.mni_affine)
        except GeometryError as exc:
            raise GeometryError(f"MNI affine: {exc}") from None
        object.__setattr__(self, "mni_affine", aff)
        object.__setattr__(self, "grid_size", tuple(int(g) for g in self.grid_size))
        if self.spacing <= 0:
            raise GeometryError("model grid spacing must be positive")

    def crop_center(self):
        """Native world point that maps onto the MNI anchor."""
        a = np.append(np.asarray(self.anchor, dtype=np.float64), 1.0)
        return np.linalg.solve(self.mni_affine, a)[:3]

    def grid_affine(self):
        """Axis-aligned model grid whose voxel G//2 sits on the crop centre."""
        aff = np.diag([self.spacing] * 3 + [1.0])
        aff[:3, 3] = self.crop_center() - np.array([g // 2 for g in self.grid_size]) * self.spacing
        return aff


@dataclass
class InferenceResult:
    labelmap: LabelMap
    warnings: list = field(default_factory=list)
    o_hyp: Volume = None
    o_sub: MultiChannelVolume = None


def prepare_input(ctx):
    """4-channel model input: min-max scaled image + MNI coordinates."""
    aff = ctx.grid_affine()
    img = resample(ctx.image, ctx.grid_size, aff, "trilinear")
    grid = img.with_data(minmax(img.data))
    coords = attach_coords(grid, ctx.mni_affine)
    return MultiChannelVolume(np.concatenate([grid.data[None], coords.data]), aff)


def _check_model(model, A, out_channels):
    cfg = model.cfg
    if cfg.in_channels != A.channels:
        raise ShapeError(f"model expects {cfg.in_channels} input channels, input has {A.channels}")
    if cfg.out_channels != out_channels:
        raise ShapeError(f"expected a {out_channels}-output model, got {cfg.out_channels}")
    model.check_input(A.data[None])


def segment_whole(m_hyp, A):
    """Binary whole-structure mask (argmax of the 2 segmentation channels)."""
    _check_model(m_hyp, A, 3)
    out = m_hyp.predict(A.data[None])
    return Volume(hard_foreground(out)[0], A.affine)


def vdc_mask(ctx, grid):
    """Ventral DC mask of ``ctx.wholebrain`` on ``grid``, or None."""
    if ctx.wholebrain is None:
        return None
    wb = ctx.wholebrain
    if not wb.vol.same_grid(grid):
        wb = resample(wb, grid.dims, grid.affine, "nearest")
    return Volume(np.isin(wb.ids, ctx.vdc_ids).astype(np.float64), grid.affine)


def gating_mask(o_hyp, vdc=None):
    gate = o_hyp.data > 0
    if vdc is not None:
        if not o_hyp.same_grid(vdc):
            raise GeometryError("VDC mask and whole-structure mask are on different grids")
        gate = gate | (vdc.data > 0)
    return gate.astype(np.float64)


def segment_subregions(m_sub, A, o_hyp, vdc=None):
    """13-channel softmax of the subregion model on the gated input."""
    if tuple(o_hyp.dims) != A.dims or not np.allclose(o_hyp.affine, A.affine, rtol=0, atol=1e-9):
        raise GeometryError("whole-structure mask is not on the input grid")
    _check_model(m_sub, A, tx.N_SUB_CLASSES)
    gate = gating_mask(o_hyp, vdc)
    x = mask_image(A.data[None], gate[None])
    return MultiChannelVolume(softmax_channels(m_sub.predict(x))[0], A.affine)


def postprocess(o_sub, ctx):
    """Argmax, drop fornices, back to the native grid, remove third ventricle."""
    cls = o_sub.data.argmax(axis=0)
    ids = np.asarray(tx.SUB_CLASS_IDS)[cls]
    ids[np.isin(ids, tx.FORNIX_IDS)] = 0
    model_lm = LabelMap(Volume(ids, o_sub.affine), tx.SUBREGION_NAMES)
    img = ctx.image
    native = resample(model_lm, img.dims, img.affine, "nearest")
    out = native.ids
    warnings = []
    if ctx.wholebrain is None:
        warnings.append(NO_VENTRICLE_EXCLUSION)
    else:
        wb = ctx.wholebrain
        if not wb.vol.same_grid(img):
            wb = resample(wb, img.dims, img.affine, "nearest")
        out[np.isin(wb.ids, ctx.ventricle_ids)] = 0
    return LabelMap(Volume(out, img.affine), tx.SUBREGION_NAMES), warnings


def run_inference(ctx, m_hyp, m_sub, use_vdc=True):
    A = prepare_input(ctx)
    o_hyp = segment_whole(m_hyp, A)
    vdc = vdc_mask(ctx, A) if use_vdc else None
    o_sub = segment_subregions(m_sub, A, o_hyp, vdc)
    lm, warnings = postprocess(o_sub, ctx)
    if vdc is None:
        warnings.append(NO_VDC_GATING)
    return InferenceResult(lm, warnings, o_hyp, o_sub)
