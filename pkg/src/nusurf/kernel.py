"""Squared-exponential covariance and its derivative expansions.

Covariance matrices over mixed function/derivative observations are built
from three blocks: the kernel itself, its first partial derivative taken
with respect to the first point argument, and the mixed second derivative
where the two differentiations act on the first and second point argument
respectively.  ``cross_cov`` assembles arbitrary blocks of this joint
covariance in one vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Axis tag marking a plain function observation (derivative rows carry the
# differentiated axis index >= 0 instead).
FUNCTION_AXIS = -1


@dataclass(frozen=True)
class KernelHyper:
    """Amplitude and per-dimension length scales of the squared exponential.

    ``amplitude`` is in output units, ``length_scales`` holds one positive
    entry per input dimension (an isotropic kernel has all entries equal).
    """

    amplitude: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        if not self.amplitude > 0.0:
            raise ValueError(f"amplitude must be > 0, got {self.amplitude}")
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0.0):
            raise ValueError("length_scales must be a 1-D array of positive reals")

    @classmethod
    def isotropic(cls, amplitude: float, length_scale: float, ndim: int) -> "KernelHyper":
        return cls(amplitude, np.full(ndim, float(length_scale)))

    @property
    def ndim(self) -> int:
        return self.length_scales.size


def _as_point(x, hyper: KernelHyper) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != hyper.ndim:
        raise ValueError(
            f"point has dimension {x.size}, kernel expects {hyper.ndim}"
        )
    return x


def _check_axis(d: int, hyper: KernelHyper) -> int:
    d = int(d)
    if not 0 <= d < hyper.ndim:
        raise ValueError(f"axis {d} out of range for dimension {hyper.ndim}")
    return d


def se_cov(x, x2, hyper: KernelHyper) -> float:
    """k(x, x2) = amplitude^2 * exp(-1/2 * sum_d (x_d - x2_d)^2 / l_d^2)."""
    x = _as_point(x, hyper)
    x2 = _as_point(x2, hyper)
    z = (x - x2) / hyper.length_scales
    return hyper.amplitude**2 * float(np.exp(-0.5 * np.dot(z, z)))


def se_cov_d1(d: int, x, x2, hyper: KernelHyper) -> float:
    """Partial derivative of ``se_cov`` along axis ``d`` of the first argument."""
    d = _check_axis(d, hyper)
    x = _as_point(x, hyper)
    x2 = _as_point(x2, hyper)
    return -(x[d] - x2[d]) / hyper.length_scales[d] ** 2 * se_cov(x, x2, hyper)


def se_cov_d2(d: int, e: int, x, x2, hyper: KernelHyper) -> float:
    """Mixed second derivative of ``se_cov``: axis ``d`` of the first argument
    and axis ``e`` of the second argument."""
    d = _check_axis(d, hyper)
    e = _check_axis(e, hyper)
    x = _as_point(x, hyper)
    x2 = _as_point(x2, hyper)
    ls2 = hyper.length_scales**2
    delta = (1.0 / ls2[d]) if d == e else 0.0
    return (delta - (x[d] - x2[d]) * (x[e] - x2[e]) / (ls2[d] * ls2[e])) * se_cov(
        x, x2, hyper
    )


def _as_points(X, hyper: KernelHyper) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != hyper.ndim:
        raise ValueError(
            f"points have dimension {X.shape[1]}, kernel expects {hyper.ndim}"
        )
    return X


def cross_cov(xa, axes_a, xb, axes_b, hyper: KernelHyper) -> np.ndarray:
    """Covariance block between two sets of mixed observations.

    Each row/column is described by a point and an axis tag: FUNCTION_AXIS
    for a function observation, or the axis index along which the row's own
    point argument is differentiated.  Returns the (len(xa), len(xb)) block.
    """
    xa = _as_points(xa, hyper)
    xb = _as_points(xb, hyper)
    axes_a = np.asarray(axes_a, dtype=int)
    axes_b = np.asarray(axes_b, dtype=int)
    if axes_a.shape != (xa.shape[0],) or axes_b.shape != (xb.shape[0],):
        raise ValueError("axis tags must align with the point lists")
    ls2 = hyper.length_scales**2

    diff = xa[:, None, :] - xb[None, :, :]
    base = hyper.amplitude**2 * np.exp(-0.5 * np.sum(diff**2 / ls2, axis=-1))

    factor = np.ones_like(base)
    ia = np.nonzero(axes_a >= 0)[0]
    if ia.size:
        da = axes_a[ia]
        rowf = np.ones_like(base)
        rowf[ia, :] = -diff[ia, :, da] / ls2[da][:, None]
        factor = rowf
    ib = np.nonzero(axes_b >= 0)[0]
    if ib.size:
        db = axes_b[ib]
        colf = np.ones_like(base)
        colf[:, ib] = diff[:, ib, db] / ls2[db][None, :]
        factor = factor * colf
    if ia.size and ib.size:
        same = (axes_a[:, None] == axes_b[None, :]) & (axes_a[:, None] >= 0)
        if same.any():
            factor = factor + same * (1.0 / ls2[np.clip(axes_a, 0, None)])[:, None]
    return factor * base


def function_axes(n: int) -> np.ndarray:
    """Axis tags for ``n`` plain function observations."""
    return np.full(n, FUNCTION_AXIS, dtype=int)
