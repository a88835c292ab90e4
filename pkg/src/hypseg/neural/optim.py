"""Adam with bias correction, state kept on the model."""
import numpy as np

from ..errors import ShapeError


def adam_step(model, grads, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of ``model.params``; increments ``model.adam.step``."""
    for k, g in grads.items():
        if k not in model.params:
            raise ShapeError(f"gradient for unknown parameter {k}")
        if np.shape(g) != model.params[k].shape:
            raise ShapeError(f"{k}: gradient {np.shape(g)} vs parameter {model.params[k].shape}")
    st = model.adam
    st.step += 1
    t = st.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in model.params.items():
        g = grads.get(k)
        if g is None:
            continue
        m = st.m.get(k)
        if m is None:
            m = st.m[k] = np.zeros_like(p)
            st.v[k] = np.zeros_like(p)
        v = st.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
