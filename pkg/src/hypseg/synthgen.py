"""Domain-randomized synthetic training samples.

A sample is built from a cropped label map and its coordinate channels:
random geometry (rotation, translation, crop shift, smooth elastic field),
GMM intensities per label, an optional multiplicative bias field, and a
random acquisition resolution. The target keeps hypothalamus and fornix ids
only; tissue labels shape the intensities but are erased from it.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import ndimage

from . import taxonomy as tx
from .errors import ConfigError, LabelError, LabelInterpError
from .volume.core import LabelMap, MultiChannelVolume, Volume
from .volume.edt import distance_map
from .volume.sampling import grid_indices, sample_grid, sample_points

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class SynthConfig:
    mu_lo: float = 0.0
    mu_hi: float = 255.0
    sig_lo: float = 0.0
    sig_hi: float = 35.0
    rot_max_deg: float = 20.0
    trans_max_mm: float = 10.0
    crop_shift_vox: float = 5.0
    elastic_sigma_mm: float = 4.0
    elastic_smooth_vox: float = 8.0
    elastic_cap_mm: float = 6.0
    bias: bool = True
    bias_amp: float = 0.3
    bias_smooth_vox: float = 40.0
    resolution: bool = True
    res_lo_mm: float = 0.0  # 0 -> model spacing
    res_hi_mm: float = 9.0
    res_axis_prob: float = 1.0
    clip_mm: float = 0.0  # distance-map clip; 0 -> 10 x min spacing

    def __post_init__(self):
        if self.mu_lo > self.mu_hi or self.sig_lo > self.sig_hi:
            raise ConfigError("GMM ranges need lo <= hi")
        if self.sig_lo < 0:
            raise ConfigError("stddev range must be nonnegative")
        if min(self.rot_max_deg, self.trans_max_mm, self.crop_shift_vox, self.elastic_sigma_mm,
               self.elastic_cap_mm, self.bias_amp) < 0:
            raise ConfigError("augmentation amplitudes must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthgen keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def disabled(cls):
        """No geometric, noise, bias or resolution randomization."""
        return cls(sig_lo=0.0, sig_hi=0.0, rot_max_deg=0.0, trans_max_mm=0.0, crop_shift_vox=0.0,
                   elastic_sigma_mm=0.0, elastic_cap_mm=0.0, bias=False, resolution=False)

    def to_json(self):
        return json.dumps(asdict(self), indent=1)


@dataclass(frozen=True, eq=False)
class GmmParams:
    means: dict
    stds: dict

    def covers(self, ids):
        return all(int(i) in self.means for i in ids)


@dataclass(frozen=True, eq=False)
class TransformField:
    rotation_deg: np.ndarray
    translation_mm: np.ndarray
    shift_vox: np.ndarray
    displacement_mm: np.ndarray  # (3, D, H, W) or None for no elastic part
    dims: tuple
    spacing: np.ndarray

    def is_identity(self):
        return (not np.any(self.rotation_deg) and not np.any(self.translation_mm)
                and not np.any(self.shift_vox)
                and (self.displacement_mm is None or not np.any(self.displacement_mm)))

    def max_displacement(self):
        if self.displacement_mm is None:
            return 0.0
        return float(np.sqrt((self.displacement_mm ** 2).sum(axis=0)).max())


@dataclass(frozen=True, eq=False)
class SynthSample:
    input: MultiChannelVolume
    target: LabelMap
    distmap: Volume


def sample_gmm_params(ids, rng, cfg=SynthConfig()):
    ids = sorted({int(i) for i in ids})
    mu = rng.uniform(cfg.mu_lo, cfg.mu_hi, size=len(ids))
    sd = rng.uniform(cfg.sig_lo, cfg.sig_hi, size=len(ids))
    return GmmParams(dict(zip(ids, mu.tolist())), dict(zip(ids, sd.tolist())))


def rotation_matrix(deg):
    ax, ay, az = np.deg2rad(np.asarray(deg, dtype=np.float64))
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _smooth_unit_noise(rng, shape, width):
    noise = rng.standard_normal(shape)
    if width > 0:
        noise = ndimage.gaussian_filter(noise, sigma=min(width, max(shape)), mode="reflect")
    sd = noise.std()
    return noise / sd if sd > 0 else np.zeros(shape)


def random_geometric_transform(rng, cfg, dims, spacing):
    dims = tuple(int(d) for d in dims)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,)).copy()
    rot = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg, 3)
    trans = rng.uniform(-cfg.trans_max_mm, cfg.trans_max_mm, 3)
    shift = rng.uniform(-cfg.crop_shift_vox, cfg.crop_shift_vox, 3)
    disp = None
    if cfg.elastic_sigma_mm > 0 and cfg.elastic_cap_mm > 0:
        disp = np.stack([_smooth_unit_noise(rng, dims, cfg.elastic_smooth_vox) for _ in range(3)])
        disp *= cfg.elastic_sigma_mm
        peak = np.sqrt((disp ** 2).sum(axis=0)).max()
        if peak > cfg.elastic_cap_mm:
            disp *= cfg.elastic_cap_mm / peak
    return TransformField(rot, trans, shift, disp, dims, spacing)


def transform_points(field):
    """Source voxel position (3, N) for every output voxel of ``field``."""
    dims = field.dims
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    idx = grid_indices(dims)
    x = field.spacing[:, None] * (idx - center[:, None])
    y = rotation_matrix(field.rotation_deg) @ x + field.translation_mm[:, None]
    if field.displacement_mm is not None:
        y = y + field.displacement_mm.reshape(3, -1)
    return center[:, None] + y / field.spacing[:, None] + field.shift_vox[:, None]


def apply_transform(payload, field, interp=None):
    """Backward-warp a LabelMap / Volume / MultiChannelVolume with ``field``."""
    is_label = isinstance(payload, LabelMap)
    if interp is None:
        interp = "nearest" if is_label else "trilinear"
    if is_label and interp != "nearest":
        raise LabelInterpError("label maps are warped with nearest neighbour only")
    if tuple(payload.dims) != tuple(field.dims):
        raise ValueError("payload and transform grids differ")
    if field.is_identity():
        return payload
    pts = transform_points(field)
    out = sample_points(payload.data, pts, interp).reshape(payload.data.shape)
    if is_label:
        return payload.with_ids(out)
    if isinstance(payload, MultiChannelVolume):
        return MultiChannelVolume(out, payload.affine)
    return Volume(out, payload.affine)


def minmax(x):
    lo, hi = x.min(), x.max()
    if hi > lo:
        return (x - lo) / (hi - lo)
    return np.zeros_like(x)


def bias_field(rng, dims, cfg):
    amp = rng.uniform(-cfg.bias_amp, cfg.bias_amp)
    noise = _smooth_unit_noise(rng, dims, cfg.bias_smooth_vox)
    peak = np.abs(noise).max()
    if peak > 0:
        noise = noise / peak
    return np.exp(amp * noise)


def render_gmm(ids, params, rng):
    """Unscaled GMM image: each voxel drawn from N(mean[id], std[id]^2); id 0 without parameters stays 0."""
    present = [int(i) for i in np.unique(ids)]
    missing = [i for i in present if i != 0 and i not in params.means]
    if missing:
        raise LabelError(f"GMM parameters missing for ids {missing}")
    mean = np.zeros(ids.shape)
    std = np.zeros(ids.shape)
    for i in present:
        if i in params.means:
            sel = ids == i
            mean[sel] = params.means[i]
            std[sel] = params.stds[i]
    return mean + std * rng.standard_normal(ids.shape)


def synthesize_intensities(T, params, rng, cfg=SynthConfig()):
    """GMM rendering of ``T``, optional bias field, min-max scaled to [0, 1]."""
    img = render_gmm(T.ids, params, rng)
    if cfg.bias and cfg.bias_amp > 0:
        img = img * bias_field(rng, T.dims, cfg)
    return Volume(minmax(img), T.affine)


def draw_spacing(rng, cfg, model_spacing):
    lo = cfg.res_lo_mm if cfg.res_lo_mm > 0 else float(np.min(model_spacing))
    lo = max(lo, float(np.min(model_spacing)))
    hi = max(cfg.res_hi_mm, lo)
    target = np.asarray(model_spacing, dtype=np.float64).copy()
    for ax in range(3):
        draw = rng.uniform(lo, hi)
        if rng.uniform() < cfg.res_axis_prob:
            target[ax] = max(draw, model_spacing[ax])
    return target


def degrade(data, model_spacing, target_spacing):
    """Blur to the target slice thickness, subsample, and interpolate back.

    Axes whose target equals the model spacing are left untouched.
    """
    data = np.asarray(data, dtype=np.float64)
    s0 = np.asarray(model_spacing, dtype=np.float64)
    t = np.asarray(target_spacing, dtype=np.float64)
    if np.all(t <= s0):
        return data.copy()
    sigma = np.sqrt(np.maximum(t ** 2 - s0 ** 2, 0.0)) / (FWHM_PER_SIGMA * s0)
    blurred = ndimage.gaussian_filter(data, sigma=sigma, mode="nearest")
    dims = np.asarray(data.shape)
    ratio = t / s0
    low_dims = np.where(t > s0, np.ceil((dims - 1) / ratio).astype(int) + 1, dims)
    down = np.diag(np.r_[np.where(t > s0, ratio, 1.0), 1.0])
    low = sample_grid(blurred, down, tuple(low_dims), "trilinear", boundary="edge")
    up = np.diag(np.r_[np.where(t > s0, 1.0 / ratio, 1.0), 1.0])
    return sample_grid(low, up, tuple(dims), "trilinear", boundary="edge")


def simulate_resolution(S, rng, cfg=SynthConfig(), target_spacing=None):
    s0 = S.spacing
    if target_spacing is None:
        if not cfg.resolution:
            return S
        target_spacing = draw_spacing(rng, cfg, s0)
    return S.with_data(np.clip(degrade(S.data, s0, target_spacing), 0.0, 1.0))


def restrict_to_hypothalamus(lm):
    ids = lm.ids
    return lm.with_ids(np.where(np.isin(ids, tx.HYPO_IDS), ids, 0))


def whole_mask(T):
    return Volume(np.isin(T.ids, tx.SUBREGION_IDS).astype(np.float64), T.affine)


def make_training_sample(L_crop, C_crop, cfg, rng, intensity_rng=None):
    """One synthetic (input, target, distance map) triple.

    Geometry is drawn from ``rng`` and everything intensity-related from
    ``intensity_rng`` (spawned from ``rng`` when omitted), so a fixed
    geometry stream gives the same target whatever the intensity draw.
    """
    if tuple(L_crop.dims) != tuple(C_crop.dims):
        raise ValueError("L_crop and C_crop grids differ")
    if intensity_rng is None:
        intensity_rng = np.random.default_rng(rng.integers(2 ** 63))
    field = random_geometric_transform(rng, cfg, L_crop.dims, L_crop.spacing)
    Lt = apply_transform(L_crop, field, "nearest")
    Ct = apply_transform(C_crop, field, "trilinear")
    ids = set(np.unique(Lt.ids).tolist()) | {0}
    params = sample_gmm_params(ids, intensity_rng, cfg)
    S = synthesize_intensities(Lt, params, intensity_rng, cfg)
    S = simulate_resolution(S, intensity_rng, cfg)
    T = restrict_to_hypothalamus(Lt)
    E = distance_map(whole_mask(T), cfg.clip_mm if cfg.clip_mm > 0 else None)
    inp = MultiChannelVolume(np.concatenate([S.data[None], Ct.data]), L_crop.affine)
    return SynthSample(inp, T, E)


def sample_rngs(seed, index):
    """Independent (geometry, intensity) generators for sample ``index``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    g, i = ss.spawn(2)
    return np.random.default_rng(g), np.random.default_rng(i)


class SampleSource:
    """Deterministic on-the-fly sample stream over one or more label maps.

    Sample ``index`` depends only on (seed, index), so batches can be
    produced by a worker pool in any order and resumed at any step.
    """

    def __init__(self, pairs, cfg=SynthConfig(), seed=0, workers=0, prefetch=4):
        self.pairs = list(pairs)
        if not self.pairs:
            raise ConfigError("sample source needs at least one (L_crop, C_crop) pair")
        self.cfg = cfg
        self.seed = int(seed)
        self.workers = int(workers)
        self.prefetch = max(1, int(prefetch))

    def sample(self, index):
        g, i = sample_rngs(self.seed, index)
        L, C = self.pairs[int(g.integers(len(self.pairs)))]
        return make_training_sample(L, C, self.cfg, g, i)

    def batch(self, step, size):
        idx = [step * size + b for b in range(size)]
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(self.sample, idx))
        return [self.sample(i) for i in idx]

    def iter_batches(self, start, stop, size):
        """Yield batches for steps [start, stop) with a bounded look-ahead."""
        if self.workers <= 1:
            for step in range(start, stop):
                yield self.batch(step, size)
            return
        with ThreadPoolExecutor(self.workers) as pool:
            pending = []
            nxt = start
            while nxt < stop and len(pending) < self.prefetch:
                pending.append(pool.map(self.sample, range(nxt * size, (nxt + 1) * size)))
                nxt += 1
            while pending:
                yield list(pending.pop(0))
                if nxt < stop:
                    pending.append(pool.map(self.sample, range(nxt * size, (nxt + 1) * size)))
                    nxt += 1

    def __call__(self, step, size):
        return self.batch(step, size)
