"""Learnable kernel pre-imputation.

Each variable is first smoothed in time with a Gaussian kernel of its own
bandwidth. Missing entries are then filled by an intensity-weighted blend of
all variables' smoothed curves, with learnable cross-variable coefficients.

``smooth`` and ``merge`` evaluate one sample directly and serve as the
reference route; :class:`PreImputeLayer` evaluates whole batches on the tape
through the fused kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnum import Parameter, softplus
from .diffnum.fused import preimpute as _fused_preimpute

ALPHA_INIT = 1.0


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass
class PreImputeParams:
    alpha_raw: np.ndarray
    rho: np.ndarray

    @classmethod
    def init(cls, d, alpha=ALPHA_INIT):
        return cls(np.full(d, float(softplus_inv(alpha))), np.eye(d))

    @property
    def alpha(self):
        a = self.alpha_raw
        return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))

    def pin_diagonal(self):
        np.fill_diagonal(self.rho, 1.0)


@dataclass(frozen=True, eq=False)
class DenseMts:
    values: np.ndarray
    source_mask: np.ndarray


def kernel(t_star, t, alpha):
    """Gaussian kernel weight ``exp(-alpha (t_star - t)^2)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return math.exp(-alpha * (t_star - t) ** 2)


def intensity(t_star, mask_col, ref_times, alpha):
    """Kernel-weighted count of observations around ``t_star``."""
    return float(sum(kernel(t_star, t, alpha) for t, m in zip(ref_times, mask_col) if m))


def smooth(sample, params):
    """Per-variable kernel average ``xbar`` and own intensity ``lam``, both (d, w)."""
    alpha = params.alpha
    x = sample.filled()
    times = sample.ref_times
    d, w = x.shape
    xbar = np.zeros((d, w))
    lam = np.zeros((d, w))
    for i in range(d):
        K = np.exp(-alpha[i] * (times[:, None] - times[None, :]) ** 2)
        lam[i] = K @ sample.mask[i]
        num = K @ (sample.mask[i] * x[i])
        np.divide(num, lam[i], out=xbar[i], where=lam[i] > 0)
    return xbar, lam


def merge(sample, xbar, lam, params):
    """Fill missing entries from the smoothed curves; observed entries pass through.

    The weight of variable ``j`` when filling variable ``i`` is the intensity
    of ``i``'s own observation pattern under ``j``'s bandwidth.
    """
    alpha = params.alpha
    rho = params.rho
    x = sample.filled()
    times = sample.ref_times
    d, w = x.shape
    out = x.copy()
    for i in range(d):
        for s in range(w):
            if sample.mask[i, s]:
                continue
            num = 0.0
            den = 0.0
            for j in range(d):
                weight = intensity(times[s], sample.mask[i], times, alpha[j])
                num += rho[i, j] * weight * xbar[j, s]
                den += weight
            out[i, s] = num / den if den > 0 else 0.0
    return DenseMts(out, sample.mask.copy())


def preimpute_sample(sample, params):
    xbar, lam = smooth(sample, params)
    return merge(sample, xbar, lam, params)


class PreImputeLayer:
    """Trainable batch form; ``alpha_raw`` and ``rho`` live on the tape."""

    def __init__(self, d, alpha=ALPHA_INIT):
        init = PreImputeParams.init(d, alpha)
        self.alpha_raw = Parameter(init.alpha_raw, "pre.alpha_raw")
        self.rho = Parameter(init.rho, "pre.rho")

    def parameters(self):
        return [self.alpha_raw, self.rho]

    def params(self):
        return PreImputeParams(self.alpha_raw.data.copy(), self.rho.data.copy())

    def load(self, params):
        self.alpha_raw.data[...] = params.alpha_raw
        self.rho.data[...] = params.rho

    def pin_diagonal(self):
        np.fill_diagonal(self.rho.data, 1.0)

    def __call__(self, x, m, times):
        """Dense (B, d, w) tensor from zero-filled ``x``, mask ``m`` and ``times`` (B, w)."""
        return _fused_preimpute(x, m, times, softplus(self.alpha_raw), self.rho)
