"""3D convolution kernels (stride 1, 'same' zero padding).

The numba path is a direct loop nest; the numpy path accumulates one
batched matmul per kernel tap. Both sum taps in the same order but
reduce channels differently, so they agree to round-off, not bitwise.
"""
import numpy as np

from .._accel import NUMBA_ENABLED, jit


def _pad(x, p):
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


@jit
def _conv_fwd_numba(xp, w, b, D, H, W):
    N, Ci = xp.shape[0], xp.shape[1]
    Co, k = w.shape[0], w.shape[2]
    y = np.empty((N, Co, D, H, W))
    for n in range(N):
        for co in range(Co):
            y[n, co] = b[co]
            for ci in range(Ci):
                for a in range(k):
                    for bb in range(k):
                        for c in range(k):
                            wv = w[co, ci, a, bb, c]
                            for d in range(D):
                                for h in range(H):
                                    for q in range(W):
                                        y[n, co, d, h, q] += wv * xp[n, ci, d + a, h + bb, q + c]
    return y


@jit
def _conv_bwd_numba(xp, w, gy):
    N, Ci = xp.shape[0], xp.shape[1]
    Co, k = w.shape[0], w.shape[2]
    D, H, W = gy.shape[2], gy.shape[3], gy.shape[4]
    gxp = np.zeros(xp.shape)
    gw = np.zeros(w.shape)
    gb = np.zeros(Co)
    for n in range(N):
        for co in range(Co):
            s = 0.0
            for d in range(D):
                for h in range(H):
                    for q in range(W):
                        s += gy[n, co, d, h, q]
            gb[co] += s
            for ci in range(Ci):
                for a in range(k):
                    for bb in range(k):
                        for c in range(k):
                            wv = w[co, ci, a, bb, c]
                            acc = 0.0
                            for d in range(D):
                                for h in range(H):
                                    for q in range(W):
                                        g = gy[n, co, d, h, q]
                                        acc += g * xp[n, ci, d + a, h + bb, q + c]
                                        gxp[n, ci, d + a, h + bb, q + c] += wv * g
                            gw[co, ci, a, bb, c] += acc
    return gxp, gw, gb


def _taps(k):
    return [(a, b, c) for a in range(k) for b in range(k) for c in range(k)]


def _conv_fwd_numpy(xp, w, b, D, H, W):
    N, Ci = xp.shape[:2]
    Co, k = w.shape[0], w.shape[2]
    y = np.broadcast_to(b[None, :, None], (N, Co, D * H * W)).copy()
    for a, bb, c in _taps(k):
        xs = xp[:, :, a:a + D, bb:bb + H, c:c + W].reshape(N, Ci, -1)
        y += np.matmul(w[:, :, a, bb, c], xs)
    return y.reshape(N, Co, D, H, W)


def _conv_bwd_numpy(xp, w, gy):
    N, Ci = xp.shape[:2]
    Co, k = w.shape[0], w.shape[2]
    D, H, W = gy.shape[2:]
    g = gy.reshape(N, Co, -1)
    gxp = np.zeros(xp.shape)
    gw = np.zeros(w.shape)
    gb = g.sum(axis=(0, 2))
    for a, bb, c in _taps(k):
        xs = xp[:, :, a:a + D, bb:bb + H, c:c + W].reshape(N, Ci, -1)
        gw[:, :, a, bb, c] = np.matmul(g, xs.transpose(0, 2, 1)).sum(axis=0)
        gxp[:, :, a:a + D, bb:bb + H, c:c + W] += np.matmul(w[:, :, a, bb, c].T, g).reshape(N, Ci, D, H, W)
    return gxp, gw, gb


_fwd = _conv_fwd_numba if NUMBA_ENABLED else _conv_fwd_numpy
_bwd = _conv_bwd_numba if NUMBA_ENABLED else _conv_bwd_numpy


def conv3d_forward(x, w, b, backend=None):
    k = w.shape[2]
    p = k // 2
    D, H, W = x.shape[2:]
    xp = _pad(np.asarray(x, dtype=np.float64), p)
    fn = {"numba": _conv_fwd_numba, "numpy": _conv_fwd_numpy}.get(backend, _fwd)
    return fn(xp, np.ascontiguousarray(w), np.ascontiguousarray(b), D, H, W)


def conv3d_backward(x, w, gy, backend=None):
    """Returns (grad_x, grad_w, grad_b)."""
    k = w.shape[2]
    p = k // 2
    xp = _pad(np.asarray(x, dtype=np.float64), p)
    fn = {"numba": _conv_bwd_numba, "numpy": _conv_bwd_numpy}.get(backend, _bwd)
    gxp, gw, gb = fn(xp, np.ascontiguousarray(w), np.ascontiguousarray(gy, dtype=np.float64))
    if p:
        gxp = gxp[:, :, p:-p, p:-p, p:-p]
    return np.ascontiguousarray(gxp), gw, gb
