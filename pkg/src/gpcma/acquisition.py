"""Criteria that rank candidate points for true evaluation.

All criteria consume a posterior mean/variance pair per candidate.  The
quantile criterion is minimized; probability of improvement and expected
improvement are maximized.  ``rank_candidates`` turns criterion values
into the induced linear ordering, best candidate first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(z):
    """Standard normal distribution function."""
    return ndtr(z)


def normal_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def normal_quantile(alpha: float) -> float:
    """Standard normal quantile u_alpha for alpha strictly inside (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0,1)")
    return float(ndtri(alpha))


@dataclass(frozen=True)
class AcquisitionSpec:
    """Criterion choice plus its parameters.

    kind one of "quantile" (needs alpha), "poi", "poi_threshold" (needs
    threshold T <= f_min, checked at use time), "ei".
    """

    kind: str
    alpha: float | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("quantile", "poi", "poi_threshold", "ei"):
            raise ValueError(f"unknown acquisition kind: {self.kind!r}")
        if self.kind == "quantile":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("alpha must lie in (0,1)")
        if self.kind == "poi_threshold" and self.threshold is None:
            raise ValueError("poi_threshold requires a threshold")

    @property
    def maximizes(self) -> bool:
        """True when larger criterion values are better."""
        return self.kind != "quantile"


def quantile_criterion(mu, var, alpha: float):
    """mu + sqrt(var) * u_alpha, the alpha-quantile of N(mu, var)."""
    u = normal_quantile(alpha)
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    out = mu + np.sqrt(var) * u
    return float(out) if out.ndim == 0 else out


def poi(mu, var, threshold):
    """P(f(x) < threshold) under N(mu, var).

    With zero variance the point either surely improves (mu < threshold,
    probability 1) or surely does not; equality counts as no improvement
    because the improvement event is strict.
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    sd = np.sqrt(var)
    safe = np.where(sd > 0, sd, 1.0)
    smooth = normal_cdf((threshold - mu) / safe)
    degenerate = np.where(mu < threshold, 1.0, 0.0)
    out = np.where(sd > 0, smooth, degenerate)
    return float(out) if out.ndim == 0 else out


def ei(mu, var, f_min):
    """E[(f_min - f(x)) 1{f(x) < f_min}] under N(mu, var), closed form.

    Uses the normalized mean improvement nu = (f_min - mu) / sqrt(var):
    sqrt(var) * (nu * cdf(nu) + pdf(nu)).  Zero variance degenerates to
    max(f_min - mu, 0).
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    sd = np.sqrt(var)
    safe = np.where(sd > 0, sd, 1.0)
    nu = (f_min - mu) / safe
    smooth = sd * (nu * normal_cdf(nu) + normal_pdf(nu))
    degenerate = np.maximum(f_min - mu, 0.0)
    out = np.maximum(np.where(sd > 0, smooth, degenerate), 0.0)
    return float(out) if out.ndim == 0 else out


def criterion_values(spec: AcquisitionSpec, mu, var, f_min: float = math.inf):
    """Evaluate the configured criterion for posterior (mu, var) arrays."""
    if spec.kind == "quantile":
        return quantile_criterion(mu, var, spec.alpha)
    if spec.kind == "poi":
        return poi(mu, var, f_min)
    if spec.kind == "poi_threshold":
        if spec.threshold > f_min:
            raise ValueError(
                f"poi threshold {spec.threshold} must not exceed the best fitness {f_min}"
            )
        return poi(mu, var, spec.threshold)
    return ei(mu, var, f_min)


def rank_candidates(values, spec: AcquisitionSpec) -> np.ndarray:
    """Permutation of indices ordering candidates best first.

    PoI and EI rank descending, the quantile criterion ascending; ties
    keep their original index order.
    """
    vals = np.asarray(values, dtype=float)
    if np.isnan(vals).any():
        raise ValueError("criterion values contain NaN")
    key = -vals if spec.maximizes else vals
    return np.argsort(key, kind="stable")
