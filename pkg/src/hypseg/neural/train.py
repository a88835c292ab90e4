"""Training loops for the whole-structure and subregion networks."""
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import taxonomy as tx
from ..errors import ConfigError, ShapeError
from ..volume.core import LabelMap, MultiChannelVolume
from .losses import hard_dice, loss_hyp, loss_sub, softmax_channels
from .optim import adam_step


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch: int = 32
    alpha: float = 0.3
    beta: float = 0.7
    max_steps: int = 40000
    delta_min: float = 0.001
    eval_interval: int = 1000
    patience: int = 5
    soft_mask: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        for k in ("lr", "alpha", "beta", "batch", "eval_interval", "patience"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"train.{k} must be positive")
        if self.max_steps < 0 or self.delta_min < 0 or self.checkpoint_every < 0:
            raise ConfigError("max_steps, delta_min and checkpoint_every must be >= 0")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class EarlyStopper:
    """Stop once the best metric has not risen by ``delta_min`` for
    ``patience`` consecutive evaluations. The first value is the baseline."""

    def __init__(self, delta_min=0.001, patience=5):
        self.delta_min = float(delta_min)
        self.patience = int(patience)
        self.best = None
        self.best_index = -1
        self.bad = 0
        self.history = []

    def update(self, value):
        """Record one evaluation; returns True when training should stop."""
        value = float(value)
        self.history.append(value)
        if self.best is None:
            self.best, self.best_index = value, len(self.history) - 1
            return False
        # tolerance so that a gain of exactly delta_min still counts
        if value - self.best >= self.delta_min - 1e-12:
            self.best, self.best_index = value, len(self.history) - 1
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience

    @property
    def improved_last(self):
        return self.best_index == len(self.history) - 1

    def state(self):
        return {"best": self.best, "best_index": self.best_index, "bad": self.bad,
                "history": list(self.history)}

    def restore(self, st):
        self.best = st["best"]
        self.best_index = st["best_index"]
        self.bad = st["bad"]
        self.history = list(st["history"])


@dataclass
class TrainReport:
    steps: int = 0
    losses: list = field(default_factory=list)
    log: list = field(default_factory=list)  # (step, loss, val_dice or nan)
    val_history: list = field(default_factory=list)  # (step, mean dice)
    stopped_early: bool = False
    best_val: float = float("nan")
    best_step: int = -1


# --------------------------------------------------------------- batching

_CLASS_LUT = np.zeros(max(tx.SUB_CLASS_IDS) + 1, dtype=np.int64)
_CLASS_LUT[list(tx.SUB_CLASS_IDS)] = np.arange(tx.N_SUB_CLASSES)


def sub_classes(ids):
    """Label ids -> subregion-network class index 0..12 (others -> 0)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape, dtype=np.int64)
    ok = (ids >= 0) & (ids < _CLASS_LUT.size)
    out[ok] = _CLASS_LUT[ids[ok]]
    return out


def whole_classes(ids):
    return np.isin(np.asarray(ids), tx.SUBREGION_IDS).astype(np.int64)


def stack_batch(samples):
    """SynthSamples -> (X, label ids, E) arrays with a leading batch axis."""
    X = np.stack([s.input.data for s in samples])
    ids = np.stack([s.target.ids for s in samples])
    E = np.stack([s.distmap.data for s in samples])
    return X, ids, E


def _batches(source, start, stop, size):
    if hasattr(source, "iter_batches"):
        yield from source.iter_batches(start, stop, size)
    else:
        for step in range(start, stop):
            yield source(step, size)


def foreground_prob(out_hyp):
    return softmax_channels(out_hyp[:, :2])[:, 1]


def hard_foreground(out_hyp):
    return (out_hyp[:, 1] > out_hyp[:, 0]).astype(np.float64)


def mask_image(X, mask):
    """Multiply the image channel by ``mask``; coordinates pass through."""
    X = np.array(X, dtype=np.float64)
    if mask.shape != X.shape[:1] + X.shape[2:]:
        raise ShapeError(f"mask {mask.shape} does not match input {X.shape}")
    X[:, 0] *= mask
    return X


def gate_with_hyp(hyp, X, soft=False, chunk=4):
    """Image channel times the (hard or soft) foreground of ``hyp``."""
    masks = []
    for i in range(0, X.shape[0], chunk):
        out = hyp.forward(X[i:i + chunk])
        masks.append(foreground_prob(out) if soft else hard_foreground(out))
    return mask_image(X, np.concatenate(masks))


# ----------------------------------------------------------------- logging

def write_loss_log(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "val_dice"])
        for step, loss, val in rows:
            w.writerow([step, repr(float(loss)), "" if val is None or math.isnan(val) else repr(float(val))])


def read_loss_log(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["step"]), float(r["loss"]),
                         float(r["val_dice"]) if r["val_dice"] else float("nan")))
    return rows


# ------------------------------------------------------------------ loops

def train_step_hyp(model, X, T, E, tc):
    res = loss_hyp(model.forward(X), T, E, tc.alpha, tc.beta)
    grads, _ = model.backward(res.grad)
    adam_step(model, grads, tc.lr)
    return res


def train_hyp(model, source, tc=TrainConfig(), checkpoint=None, log=None):
    """Optimize the whole-structure loss until ``model.adam.step == tc.max_steps``.

    ``source(step, batch)`` returns SynthSamples; a fresh model runs exactly
    ``tc.max_steps`` steps and a resumed one continues its step counter.
    ``checkpoint(model, step)`` is called every ``tc.checkpoint_every`` steps.
    """
    report = TrainReport(log=list(log or []))
    start = model.adam.step
    for samples in _batches(source, start, tc.max_steps, tc.batch):
        X, ids, E = stack_batch(samples)
        res = train_step_hyp(model, X, whole_classes(ids), E, tc)
        step = model.adam.step
        report.losses.append(res.total)
        report.log.append((step, res.total, float("nan")))
        if checkpoint and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            checkpoint(model, step, report)
    report.steps = model.adam.step - start
    return report


def _as_arrays(pair):
    x, t = pair
    if isinstance(x, MultiChannelVolume):
        x = x.data
    if isinstance(t, LabelMap):
        t = sub_classes(t.ids)
    return np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.int64)


def subregion_dice(pred_cls, true_cls, n_classes=tx.N_SUB_CLASSES):
    """Mean hard Dice over foreground classes present in the target."""
    scores = [hard_dice(pred_cls == c, true_cls == c)
              for c in range(1, n_classes) if np.any(true_cls == c)]
    return float(np.mean(scores)) if scores else 1.0


def validate_sub(model_sub, gated_pairs):
    scores = []
    for x, t in gated_pairs:
        out = model_sub.forward(x[None])
        scores.append(subregion_dice(out[0].argmax(axis=0), t))
    return float(np.mean(scores))


def train_sub(model_sub, hyp, source, validation_set, tc=TrainConfig(), evaluator=None,
              checkpoint=None, stopper=None, log=None):
    """Optimize the subregion loss on hyp-gated inputs with early stopping.

    Validation runs before the first step and every ``tc.eval_interval``
    steps; ``evaluator(model) -> float`` overrides the default mean Dice.
    The best-scoring parameters are restored at the end.
    """
    validation_set = list(validation_set)
    if not validation_set:
        raise ConfigError("train_sub needs a non-empty validation set")
    if evaluator is None:
        gated = []
        for pair in validation_set:
            x, t = _as_arrays(pair)
            gated.append((gate_with_hyp(hyp, x[None], tc.soft_mask)[0], t))
        evaluator = lambda m: validate_sub(m, gated)  # noqa: E731
    stopper = stopper or EarlyStopper(tc.delta_min, tc.patience)
    report = TrainReport(log=list(log or []))
    start = model_sub.adam.step
    best_params = None

    def evaluate(step):
        nonlocal best_params
        v = float(evaluator(model_sub))
        report.val_history.append((step, v))
        stop = stopper.update(v)
        if stopper.improved_last:
            best_params = {k: p.copy() for k, p in model_sub.params.items()}
            report.best_step = step
        return v, stop

    stop = False
    if not stopper.history:
        _, stop = evaluate(start)
    elif start % tc.eval_interval == 0 and stopper.bad >= stopper.patience:
        stop = True
    if not stop:
        for samples in _batches(source, start, tc.max_steps, tc.batch):
            X, ids, _ = stack_batch(samples)
            Xg = gate_with_hyp(hyp, X, tc.soft_mask)
            res = loss_sub(model_sub.forward(Xg), sub_classes(ids), tc.alpha, tc.beta)
            grads, _ = model_sub.backward(res.grad)
            adam_step(model_sub, grads, tc.lr)
            step = model_sub.adam.step
            report.losses.append(res.total)
            val = float("nan")
            if step % tc.eval_interval == 0:
                val, stop = evaluate(step)
            report.log.append((step, res.total, val))
            if checkpoint and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                checkpoint(model_sub, step, report)
            if stop:
                break
    report.stopped_early = stop
    report.steps = model_sub.adam.step - start
    report.best_val = stopper.best if stopper.best is not None else float("nan")
    if best_params is not None:
        model_sub.set_params(best_params)
    report.stopper = stopper.state()
    return report
