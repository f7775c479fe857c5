"""Pure numpy versions of the hot loops.

Every function takes C-contiguous float64 arrays of shape (n, w, h), where
``n`` folds batch and channel together, and treats out-of-range reads by
clamping the index to the border (replicate padding).
"""

import numpy as np

# Sobel taps as (dx, dy, weight); dx runs along width, dy along height.
SOBEL_X_TAPS = ((-1, -1, -1.0), (1, -1, 1.0), (-1, 0, -2.0), (1, 0, 2.0), (-1, 1, -1.0), (1, 1, 1.0))
SOBEL_Y_TAPS = ((-1, -1, -1.0), (0, -1, -2.0), (1, -1, -1.0), (-1, 1, 1.0), (0, 1, 2.0), (1, 1, 1.0))


def _shifted(padded, dx, dy, r, w, h):
    return padded[:, r + dx : r + dx + w, r + dy : r + dy + h]


def sobel(f):
    n, w, h = f.shape
    p = np.pad(f, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    for dx, dy, k in SOBEL_X_TAPS:
        gx += k * _shifted(p, dx, dy, 1, w, h)
    for dx, dy, k in SOBEL_Y_TAPS:
        gy += k * _shifted(p, dx, dy, 1, w, h)
    return gx, gy


def _fold_border(p, r, w, h):
    # Adjoint of replicate padding: push halo mass back onto the edge cells.
    for k in range(r):
        p[:, r, :] += p[:, k, :]
        p[:, r + w - 1, :] += p[:, r + w + k, :]
    for k in range(r):
        p[:, :, r] += p[:, :, k]
        p[:, :, r + h - 1] += p[:, :, r + h + k]
    return np.ascontiguousarray(p[:, r : r + w, r : r + h])


def sobel_adjoint(dgx, dgy):
    n, w, h = dgx.shape
    p = np.zeros((n, w + 2, h + 2))
    for dx, dy, k in SOBEL_X_TAPS:
        p[:, 1 + dx : 1 + dx + w, 1 + dy : 1 + dy + h] += k * dgx
    for dx, dy, k in SOBEL_Y_TAPS:
        p[:, 1 + dx : 1 + dx + w, 1 + dy : 1 + dy + h] += k * dgy
    return _fold_border(p, 1, w, h)


def consistency(d, r):
    """Mean over the (2r+1)^2 window of |d(center) - d(neighbor)|."""
    n, w, h = d.shape
    out = np.zeros_like(d)
    if r == 0:
        return out
    p = np.pad(d, ((0, 0), (r, r), (r, r)), mode="edge")
    for i in range(-r, r + 1):
        for j in range(-r, r + 1):
            out += np.abs(d - _shifted(p, i, j, r, w, h))
    out /= (2 * r + 1) ** 2
    return out


def consistency_adjoint(d, r, g):
    """Gradient of sum(g * consistency(d, r)) with respect to d."""
    n, w, h = d.shape
    if r == 0:
        return np.zeros_like(d)
    scale = g / (2 * r + 1) ** 2
    p = np.pad(d, ((0, 0), (r, r), (r, r)), mode="edge")
    center = np.zeros_like(d)
    acc = np.zeros((n, w + 2 * r, h + 2 * r))
    for i in range(-r, r + 1):
        for j in range(-r, r + 1):
            s = np.sign(d - _shifted(p, i, j, r, w, h)) * scale
            center += s
            acc[:, r + i : r + i + w, r + j : r + j + h] -= s
    acc[:, r : r + w, r : r + h] += center
    return _fold_border(acc, r, w, h)
