"""Softmax, soft Dice, MSE and cross-entropy with analytic gradients.

Spatial and batch axes are pooled: Dice sums run over every voxel of every
sample, MSE and cross-entropy average over them.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import LabelError, ShapeError

DICE_EPS = 1e-6


def softmax_channels(x):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_channels(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_backward(p, gp):
    return p * (gp - (gp * p).sum(axis=1, keepdims=True))


def one_hot_classes(idx, n_classes):
    """(N, D, H, W) integer classes -> (N, C, D, H, W) one-hot."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise LabelError(f"class ids must lie in 0..{n_classes - 1}")
    out = np.zeros((idx.shape[0], n_classes) + idx.shape[1:])
    np.put_along_axis(out, idx[:, None], 1.0, axis=1)
    return out


def _sum_axes(x):
    return (0,) + tuple(range(2, x.ndim))


def dice_terms(pred, target, eps=DICE_EPS):
    """Per-foreground-channel soft Dice (2 sum(pt) + eps) / (sum p + sum t + eps)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    ax = _sum_axes(pred)
    inter = (pred * target).sum(axis=ax)[1:]
    denom = pred.sum(axis=ax)[1:] + target.sum(axis=ax)[1:] + eps
    return (2.0 * inter + eps) / denom, inter, denom


def dice_loss(pred, target, eps=DICE_EPS):
    """1 - mean over foreground channels of the soft Dice."""
    d, _, _ = dice_terms(pred, target, eps)
    return float(1.0 - d.mean())


def dice_loss_grad(pred, target, eps=DICE_EPS):
    d, inter, denom = dice_terms(pred, target, eps)
    nf = d.size
    shape = (1, nf) + (1,) * (pred.ndim - 2)
    num = 2.0 * inter + eps
    g = np.zeros_like(pred)
    # d/dp of -(num/denom)/nf
    g[:, 1:] = -(2.0 * target[:, 1:] * denom.reshape(shape) - num.reshape(shape)) / (denom ** 2).reshape(shape) / nf
    return float(1.0 - d.mean()), g


@dataclass
class LossResult:
    total: float
    dice: float
    other: float
    grad: np.ndarray  # d total / d network output


def combine(dice_term, other_term, alpha, beta):
    return alpha * dice_term + beta * other_term


def loss_hyp(output, T, E, alpha=0.3, beta=0.7):
    """Whole-structure loss on a 3-channel output (2 logits + distance).

    ``T`` holds class indices {0, 1}; ``E`` the target distance map.
    """
    output = np.asarray(output, dtype=np.float64)
    if output.ndim != 5 or output.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, D, H, W) output, got {output.shape}")
    T = np.asarray(T)
    E = np.asarray(E, dtype=np.float64)
    if T.shape != output.shape[:1] + output.shape[2:] or E.shape != T.shape:
        raise ShapeError("target/distance shapes do not match the output grid")
    p = softmax_channels(output[:, :2])
    onehot = one_hot_classes(T, 2)
    dl, g_p = dice_loss_grad(p, onehot)
    diff = output[:, 2] - E
    mse = float(np.mean(diff ** 2))
    grad = np.zeros_like(output)
    grad[:, :2] = alpha * softmax_backward(p, g_p)
    grad[:, 2] = beta * 2.0 * diff / diff.size
    return LossResult(combine(dl, mse, alpha, beta), dl, mse, grad)


def loss_sub(output, T, alpha=0.3, beta=0.7):
    """Subregion loss: Dice + voxel-mean cross-entropy over all channels."""
    output = np.asarray(output, dtype=np.float64)
    if output.ndim != 5:
        raise ShapeError(f"expected (N, C, D, H, W) output, got {output.shape}")
    C = output.shape[1]
    T = np.asarray(T)
    if T.shape != output.shape[:1] + output.shape[2:]:
        raise ShapeError("target shape does not match the output grid")
    onehot = one_hot_classes(T, C)
    p = softmax_channels(output)
    dl, g_p = dice_loss_grad(p, onehot)
    logp = log_softmax_channels(output)
    n_vox = T.size
    ce = float(-(onehot * logp).sum() / n_vox)
    grad = alpha * softmax_backward(p, g_p) + beta * (p - onehot) / n_vox
    return LossResult(combine(dl, ce, alpha, beta), dl, ce, grad)


def hard_dice(pred_mask, true_mask):
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(true_mask, dtype=bool)
    s = a.sum() + b.sum()
    return 1.0 if s == 0 else 2.0 * np.logical_and(a, b).sum() / s
