"""Extended-area structural discrepancy loss between two feature maps.

For a non-ideal map ``A`` and an ideal map ``B`` with Sobel magnitudes
``G(A)`` and ``G(B)``, per cell:

    dS    = |G(A) - G(B)|
    Omega = mean over the (2r+1)^2 window of |dG(center) - dG(neighbor)|,
            dG = G(A) - G(B), neighbors read with replicate padding
    total = exp(-alpha * delta**beta) * mean(exp(-dS) * dS + lambda * Omega)

The mean runs over batch, channels and the spatial grid.  Reductions are
done in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .gradfield import magnitude_backward, sobel_adjoint_arrays, sobel_arrays
from .tensor import DomainError, FeatureMap, FeaturePyramid, ShapeError, as_array


@dataclass(frozen=True)
class EansdlParams:
    alpha: float = 3.0
    beta: float = 2.0
    lambda_consistency: float = 1.0
    lambda_fs: float = 0.1
    r0: int = 8
    delta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0 or not self.beta > 0:
            raise DomainError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        if self.lambda_consistency < 0 or self.lambda_fs < 0:
            raise DomainError("lambda weights must be >= 0")
        if int(self.r0) != self.r0 or self.r0 < 1:
            raise DomainError(f"r0 must be an integer >= 1, got {self.r0}")
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class LossBreakdown:
    local_term: float
    consistency_term: float
    attenuation: float
    radius_used: int
    total: float


def attenuation(delta: float, alpha: float, beta: float) -> float:
    """Training-progress weight exp(-alpha * delta**beta)."""
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"delta must lie in [0, 1], got {delta}")
    if not alpha > 0 or not beta > 0:
        raise DomainError("alpha and beta must be > 0")
    return math.exp(-alpha * delta**beta)


def level_radius(r0: int, level: int) -> int:
    return max(1, int(r0) >> int(level))


def _check_same(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"dims differ: {a.shape} vs {b.shape}")


def local_discrepancy(mag_a, mag_b) -> FeatureMap:
    a, b = as_array(mag_a), as_array(mag_b)
    _check_same(a, b)
    return FeatureMap._wrap(np.abs(a - b))


def weighted_local(ds) -> FeatureMap | float:
    """exp(-ds) * ds elementwise; scalars in, scalar out."""
    if np.ndim(ds) == 0:
        x = float(ds)
        if x < 0:
            raise DomainError(f"discrepancy must be >= 0, got {x}")
        return math.exp(-x) * x
    arr = as_array(ds)
    if (arr < 0).any():
        raise DomainError("discrepancy must be >= 0 everywhere")
    return FeatureMap._wrap(np.exp(-arr) * arr)


def _consistency(d: np.ndarray, r: int, backend=None) -> np.ndarray:
    b, c, w, h = d.shape
    out = _backend.get(backend).consistency(np.ascontiguousarray(d).reshape(b * c, w, h), int(r))
    return np.asarray(out).reshape(b, c, w, h)


def extended_consistency(mag_a, mag_b, r: int, backend=None) -> FeatureMap:
    a, b = as_array(mag_a), as_array(mag_b)
    _check_same(a, b)
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    return FeatureMap._wrap(_consistency(a - b, r, backend))


def _forward(a, b, params, level, backend):
    _check_same(a, b)
    gxa, gya, mag_a = sobel_arrays(a, backend)
    gxb, gyb, mag_b = sobel_arrays(b, backend)
    d = mag_a - mag_b
    ds = np.abs(d)
    r = level_radius(params.r0, level)
    omega = _consistency(d, r, backend)
    local = float(np.mean(np.exp(-ds) * ds))
    cons = float(np.mean(omega))
    att = attenuation(params.delta, params.alpha, params.beta)
    total = att * (local + params.lambda_consistency * cons)
    return LossBreakdown(local, cons, att, r, total), (gxa, gya, mag_a, d)


def eansdl(a, b, params: EansdlParams, level: int = 0, backend=None) -> LossBreakdown:
    return _forward(as_array(a), as_array(b), params, level, backend)[0]


def eansdl_arrays(a: np.ndarray, b: np.ndarray, params: EansdlParams, level: int = 0, backend=None):
    """Loss breakdown plus dL/dA as a raw array, sharing one forward pass."""
    out, (gxa, gya, mag_a, d) = _forward(a, b, params, level, backend)
    scale = out.attenuation / d.size
    dd = scale * np.sign(d) * np.exp(-np.abs(d)) * (1.0 - np.abs(d))
    if params.lambda_consistency != 0.0 and out.radius_used > 0:
        bsz, c, w, h = d.shape
        g = np.full((bsz * c, w, h), scale * params.lambda_consistency)
        k = _backend.get(backend)
        dd = dd + np.asarray(
            k.consistency_adjoint(np.ascontiguousarray(d).reshape(bsz * c, w, h), out.radius_used, g)
        ).reshape(d.shape)
    dgx, dgy = magnitude_backward(gxa, gya, mag_a, dd)
    return out, sobel_adjoint_arrays(dgx, dgy, backend)


def eansdl_backward(a, b, params: EansdlParams, level: int = 0, backend=None) -> FeatureMap:
    """Gradient of ``eansdl(a, b).total`` with respect to ``a``.

    Subgradients of |.| and sqrt at zero are taken as 0, so ``a == b``
    yields an exactly zero gradient.
    """
    _, grad = eansdl_arrays(as_array(a), as_array(b), params, level, backend)
    return FeatureMap._wrap(grad)


def _check_pyramids(pa: FeaturePyramid, pb: FeaturePyramid):
    if len(pa) != len(pb):
        raise ShapeError(f"pyramids have {len(pa)} and {len(pb)} levels")
    for k, (ma, mb) in enumerate(zip(pa, pb)):
        if ma.dims != mb.dims:
            raise ShapeError(f"level {k} dims differ: {ma.dims} vs {mb.dims}")


def eansdl_pyramid(pa: FeaturePyramid, pb: FeaturePyramid, params: EansdlParams, backend=None) -> float:
    """Mean over pyramid levels of the per-level total, radius halving per level."""
    _check_pyramids(pa, pb)
    totals = [eansdl(ma, mb, params, k, backend).total for k, (ma, mb) in enumerate(zip(pa, pb))]
    return float(sum(totals) / len(totals))


def eansdl_pyramid_backward(pa: FeaturePyramid, pb: FeaturePyramid, params: EansdlParams, backend=None):
    _check_pyramids(pa, pb)
    n = len(pa)
    return [
        FeatureMap._wrap(eansdl_arrays(ma.data, mb.data, params, k, backend)[1] / n)
        for k, (ma, mb) in enumerate(zip(pa, pb))
    ]


def finite_diff_grad(a, b, params: EansdlParams, level: int = 0, eps: float = 1e-3, backend=None) -> FeatureMap:
    """Central-difference estimate of d total / dA, one element at a time."""
    if not eps > 0:
        raise DomainError(f"eps must be > 0, got {eps}")
    a = np.array(as_array(a), dtype=np.float64)
    b = as_array(b)
    _check_same(a, b)
    grad = np.zeros_like(a)
    flat, gflat = a.reshape(-1), grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        fplus = _forward(a, b, params, level, backend)[0].total
        flat[idx] = orig - eps
        fminus = _forward(a, b, params, level, backend)[0].total
        flat[idx] = orig
        gflat[idx] = (fplus - fminus) / (2 * eps)
    return FeatureMap._wrap(grad)
