"""Binary morphology with discrete Euclidean balls (scipy.ndimage backed)."""
import numpy as np
from scipy import ndimage

from .core import Volume, as_binary


def ball(radius):
    r = int(radius)
    g = np.arange(-r, r + 1)
    return (g[:, None, None] ** 2 + g[None, :, None] ** 2 + g[None, None, :] ** 2) <= r * r


def close_array(mask, radius):
    """Dilate then erode with a ball of ``radius`` voxels.

    The grid is padded first so the closing matches the one on an unbounded
    domain, restricted back to the input box.
    """
    r = int(radius)
    if r < 1:
        raise ValueError("radius must be a positive integer")
    pad = r + 1
    m = np.pad(np.asarray(mask, dtype=bool), pad)
    se = ball(r)
    out = ndimage.binary_erosion(ndimage.binary_dilation(m, se), se, border_value=0)
    return out[pad:-pad, pad:-pad, pad:-pad]


def morph_close(mask, radius_vox):
    m = as_binary(mask)
    return mask.with_data(close_array(m, radius_vox).astype(np.float64))


def dilate_array(mask, radius):
    return ndimage.binary_dilation(np.asarray(mask, dtype=bool), ball(radius))
