"""Run configuration: one JSON document, sections validated strictly.

Defaults are the full-scale values (200^3 grid at 0.3 mm, 24..384 features,
lr 5e-5, batch 32, alpha 0.3, beta 0.7, 40000 steps, delta_min 0.001).
``configs/toy.json`` scales grid, widths and steps down for desk runs.
"""
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import taxonomy as tx
from .errors import ConfigError
from .inference import MNI_ANCHOR
from .neural.train import TrainConfig
from .neural.unet import UNetConfig
from .synthgen import SynthConfig


def _strict(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass(frozen=True)
class GridConfig:
    size: int = 200
    spacing_mm: float = 0.3

    def __post_init__(self):
        if self.size < 1 or self.spacing_mm <= 0:
            raise ConfigError("grid size and spacing must be positive")

    @property
    def dims(self):
        return (self.size,) * 3


@dataclass(frozen=True)
class StageTrain:
    lr: float = 5e-5
    batch: int = 32
    alpha: float = 0.3
    beta: float = 0.7
    hyp_steps: int = 40000
    sub_max_steps: int = 40000
    delta_min: float = 0.001
    eval_interval: int = 1000
    patience: int = 5
    soft_mask: bool = False
    checkpoint_every: int = 1000
    validation_samples: int = 4

    def __post_init__(self):
        self.for_stage("hyp")  # validates the shared fields
        if self.validation_samples < 1:
            raise ConfigError("train.validation_samples must be >= 1")

    def for_stage(self, stage):
        steps = {"hyp": self.hyp_steps, "sub": self.sub_max_steps}[stage]
        return TrainConfig(lr=self.lr, batch=self.batch, alpha=self.alpha, beta=self.beta,
                           max_steps=steps, delta_min=self.delta_min,
                           eval_interval=self.eval_interval, patience=self.patience,
                           soft_mask=self.soft_mask, checkpoint_every=self.checkpoint_every)


@dataclass(frozen=True)
class InferenceSettings:
    anchor_mm: tuple = MNI_ANCHOR
    vdc_ids: tuple = (tx.FS_LEFT_VDC, tx.FS_RIGHT_VDC)
    ventricle_ids: tuple = (tx.FS_THIRD_VENTRICLE,)
    use_vdc: bool = True

    def __post_init__(self):
        for k in ("anchor_mm", "vdc_ids", "ventricle_ids"):
            object.__setattr__(self, k, tuple(getattr(self, k)))
        if len(self.anchor_mm) != 3:
            raise ConfigError("inference.anchor_mm needs 3 numbers")


@dataclass(frozen=True)
class LabelSettings:
    k_min: int = 4
    k_max: int = 9
    mirror_halfwidth_vox: int = 5
    fornix_close_radius_vox: int = 2

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigError("labels: need 1 <= k_min <= k_max")
        if self.mirror_halfwidth_vox < 0 or self.fornix_close_radius_vox < 0:
            raise ConfigError("labels: search width and closing radius must be >= 0")


def _unet_defaults(out_channels):
    return UNetConfig(out_channels=out_channels)


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = GridConfig()
    synthgen: SynthConfig = SynthConfig()
    unet_hyp: UNetConfig = field(default_factory=lambda: _unet_defaults(3))
    unet_sub: UNetConfig = field(default_factory=lambda: _unet_defaults(tx.N_SUB_CLASSES))
    train: StageTrain = StageTrain()
    inference: InferenceSettings = InferenceSettings()
    labels: LabelSettings = LabelSettings()

    SECTIONS = ("grid", "synthgen", "unet_hyp", "unet_sub", "train", "inference", "labels")

    def __post_init__(self):
        if self.unet_hyp.out_channels != 3:
            raise ConfigError("unet_hyp must have 3 outputs (2 segmentation + 1 distance)")
        if self.unet_sub.out_channels != tx.N_SUB_CLASSES:
            raise ConfigError(f"unet_sub must have {tx.N_SUB_CLASSES} outputs")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        base = cls()
        kw = {}
        for name, klass in (("grid", GridConfig), ("train", StageTrain),
                            ("inference", InferenceSettings), ("labels", LabelSettings)):
            if name in d:
                kw[name] = _strict(klass, {**asdict(getattr(base, name)), **d[name]}, name)
        if "synthgen" in d:
            if not isinstance(d["synthgen"], dict):
                raise ConfigError("section 'synthgen' must be an object")
            kw["synthgen"] = SynthConfig.from_dict({**asdict(base.synthgen), **d["synthgen"]})
        for name in ("unet_hyp", "unet_sub"):
            if name in d:
                if not isinstance(d[name], dict):
                    raise ConfigError(f"section {name!r} must be an object")
                kw[name] = UNetConfig.from_dict({**getattr(base, name).to_dict(), **d[name]})
        return replace(base, **kw)

    def to_dict(self):
        out = {}
        for name in self.SECTIONS:
            v = getattr(self, name)
            out[name] = v.to_dict() if isinstance(v, UNetConfig) else asdict(v)
        return json.loads(json.dumps(out))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)
