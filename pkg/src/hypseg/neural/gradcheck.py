"""Central finite-difference checks of analytic gradients (float64 only)."""
from dataclasses import dataclass, field

import numpy as np

from .layers import make_layer
from .losses import loss_hyp

FD_STEP = 1e-5
# elements whose gradients are both below this are compared absolutely
TINY = 1e-9


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    worst: tuple = ()
    checked: int = 0
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tol):
        return self.max_rel_error < tol


def rel_error(analytic, numeric):
    a, n = abs(analytic), abs(numeric)
    scale = max(a, n)
    if scale < TINY:
        return 0.0
    return abs(analytic - numeric) / scale


def check_tensors(loss_fn, tensors, analytic, h=FD_STEP, max_per_tensor=None, rng=None):
    """Perturb entries of each array in ``tensors`` (in place, restored).

    ``loss_fn()`` must recompute the scalar loss from the current arrays.
    ``analytic`` maps the same keys to gradient arrays.
    """
    report = GradCheckReport()
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        g = np.asarray(analytic[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_per_tensor, replace=False)
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2.0 * h)
            err = rel_error(g[i], num)
            if err > worst:
                worst = err
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, int(i), float(g[i]), float(num))
            report.checked += 1
        report.per_tensor[name] = worst
    return report


def nudge_off_zero(x, margin=1e-3):
    """Move entries with |x| < margin away from the ReLU kink."""
    x = np.array(x, dtype=np.float64)
    small = np.abs(x) < margin
    x[small] = np.where(x[small] >= 0, margin, -margin)
    return x


def grad_check_layer(kind, params, x, seed=0, h=FD_STEP, **kw):
    """Check d/d(params) and d/dx of loss = sum(layer(x) * R) for random R."""
    rng = np.random.default_rng(seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in (params or {}).items()}
    x = np.array(x, dtype=np.float64)
    layer = make_layer(kind, params, **kw)
    y = layer.forward(x)
    R = rng.standard_normal(y.shape)
    gx = layer.backward(R)
    analytic = {"input": gx, **{f"param.{k}": v for k, v in layer.grads.items()}}
    tensors = {"input": x, **{f"param.{k}": v for k, v in params.items()}}

    def loss():
        return float((make_layer(kind, params, **kw).forward(x) * R).sum())

    return check_tensors(loss, tensors, analytic, h)


def grad_check(model, x, loss_fn=None, h=FD_STEP, include_input=True, max_per_tensor=None):
    """Full-model check; ``loss_fn(output) -> LossResult`` defaults to a
    random-target whole-structure loss for 3-channel models."""
    x = np.array(x, dtype=np.float64)
    if loss_fn is None:
        rng = np.random.default_rng(1)
        N = x.shape[0]
        T = (rng.uniform(size=(N,) + x.shape[2:]) < 0.3).astype(np.int64)
        E = rng.uniform(size=T.shape)
        loss_fn = lambda out: loss_hyp(out, T, E)  # noqa: E731
    res = loss_fn(model.forward(x))
    grads, gx = model.backward(res.grad)
    tensors = dict(model.params)
    analytic = dict(grads)
    if include_input:
        tensors["input"] = x
        analytic["input"] = gx

    def loss():
        return loss_fn(model.forward(x)).total

    return check_tensors(loss, tensors, analytic, h, max_per_tensor)
