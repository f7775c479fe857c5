"""Sobel gradients and gradient magnitude of feature maps.

The kernels

    S_x = [[-1, 0, 1],        S_y = [[-1, -2, -1],
           [-2, 0, 2],               [ 0,  0,  0],
           [-1, 0, 1]]               [ 1,  2,  1]]

are applied as a correlation (no kernel flip) with the kernel's column index
running along x (width) and its row index along y (height), so a ramp
``f = x`` gives ``gx = 8``.  Borders use replicate padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .tensor import FeatureMap, as_array

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class GradientField:
    gx: FeatureMap
    gy: FeatureMap
    magnitude: FeatureMap


def sobel_arrays(f: np.ndarray, backend=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw (gx, gy, magnitude) for a rank-4 float64 array."""
    b, c, w, h = f.shape
    k = _backend.get(backend)
    gx, gy = k.sobel(np.ascontiguousarray(f, dtype=np.float64).reshape(b * c, w, h))
    gx = np.asarray(gx).reshape(b, c, w, h)
    gy = np.asarray(gy).reshape(b, c, w, h)
    return gx, gy, np.sqrt(gx * gx + gy * gy)


def sobel_filter(m, backend=None) -> GradientField:
    gx, gy, mag = sobel_arrays(as_array(m), backend)
    return GradientField(FeatureMap._wrap(gx), FeatureMap._wrap(gy), FeatureMap._wrap(mag))


def sobel_adjoint_arrays(dgx: np.ndarray, dgy: np.ndarray, backend=None) -> np.ndarray:
    """Transpose of the Sobel correlation: maps (dL/dgx, dL/dgy) to dL/df."""
    b, c, w, h = dgx.shape
    k = _backend.get(backend)
    out = k.sobel_adjoint(
        np.ascontiguousarray(dgx, dtype=np.float64).reshape(b * c, w, h),
        np.ascontiguousarray(dgy, dtype=np.float64).reshape(b * c, w, h),
    )
    return np.asarray(out).reshape(b, c, w, h)


def magnitude_backward(gx, gy, mag, dmag):
    """Push dL/dmag through sqrt(gx^2 + gy^2); zero magnitude gets a zero subgradient."""
    safe = np.where(mag > 0.0, mag, 1.0)
    scale = np.where(mag > 0.0, dmag / safe, 0.0)
    return scale * gx, scale * gy
