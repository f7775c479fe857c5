"""Finite-difference checking of the loss gradient at differentiable points.

The loss has kinks wherever a magnitude, a magnitude difference, or a
window difference crosses zero.  A central difference with step ``eps``
moves any single Sobel response by at most ``2*sqrt(2)*eps``, so every
kink argument moves by less than ``6*eps``; points whose kink arguments all
clear that margin are smooth on the whole stencil.

Away from kinks the central difference still carries an O(eps**2)
truncation error, which is large relative to gradient components that are
themselves near zero.  The gated figure is therefore the 2-norm relative
error of the whole gradient; the worst single component is reported too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degrade import make_rng
from .gradfield import sobel_arrays
from .loss import EansdlParams, eansdl_backward, finite_diff_grad, level_radius

MARGIN_PER_EPS = 6.0
# larger margins are rarely met by random pairs; steps that big fail the check anyway
MAX_MARGIN = 0.02


def kink_margin(a: np.ndarray, b: np.ndarray, r: int) -> float:
    """Smallest absolute kink argument of the loss over every cell.

    Window terms whose neighbour clamps back onto the centre cell vanish
    identically and are skipped.
    """
    n = a.shape[0] * a.shape[1]
    w, h = a.shape[2:]
    ma = sobel_arrays(a)[2].reshape(n, w, h)
    mb = sobel_arrays(b)[2].reshape(n, w, h)
    d = ma - mb
    m = min(float(ma.min()), float(np.abs(d).min()))
    xs, ys = np.arange(w)[:, None], np.arange(h)[None, :]
    for i in range(-r, r + 1):
        for j in range(-r, r + 1):
            xn = np.clip(xs + i, 0, w - 1)
            yn = np.clip(ys + j, 0, h - 1)
            moved = (xn != xs) | (yn != ys)
            if moved.any():
                diff = np.abs(d - d[:, xn, yn])[:, moved]
                m = min(m, float(diff.min()))
    return m


def smooth_pair(seed: int, shape=(1, 2, 8, 8), r: int = 1, margin: float = 6e-3, tries: int = 10_000):
    """First seeded random (A, B) pair whose kink arguments all exceed ``margin``."""
    rng = make_rng(seed, 0x6C4)
    for _ in range(tries):
        a = rng.normal(size=shape)
        b = rng.normal(size=shape)
        if kink_margin(a, b, r) > margin:
            return a, b
    raise RuntimeError(f"no pair with kink margin {margin} in {tries} draws")


def max_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|); both below ``floor`` counts as agreement."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def norm_relative_error(analytic, numeric) -> float:
    """||a - n|| / ||n|| in the 2-norm over all elements."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.linalg.norm(n)
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else float(np.linalg.norm(a))


@dataclass(frozen=True)
class GradcheckResult:
    relative_error: float      # 2-norm, the gated figure
    max_elementwise: float     # worst single component, informational


def check_pair(a, b, params: EansdlParams, level: int = 0, eps: float = 1e-3, backend=None) -> GradcheckResult:
    analytic = eansdl_backward(a, b, params, level, backend).data
    numeric = finite_diff_grad(a, b, params, level, eps, backend).data
    return GradcheckResult(norm_relative_error(analytic, numeric), max_relative_error(analytic, numeric))


def run_gradcheck(
    seed: int, eps: float = 1e-3, shape=(1, 2, 8, 8), params: EansdlParams | None = None, level: int = 1, backend=None
) -> GradcheckResult:
    """Check one smooth random pair; the default params and level give radius 1."""
    params = params or EansdlParams(r0=2, delta=0.5)
    r = level_radius(params.r0, level)
    a, b = smooth_pair(seed, shape, r, min(MARGIN_PER_EPS * eps, MAX_MARGIN))
    return check_pair(a, b, params, level, eps, backend)
