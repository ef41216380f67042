"""Gaussian-process regression with configurable kernels and mean priors.

Three mean-prior variants are supported: a zero mean, a deterministic
trend function added on top of a zero-mean process, and a Bayesian
multiplicative trend w * fbar(x) with a Gaussian weight w ~ N(1, sigma_w^2).
Hyperparameters are plain configuration inputs; nothing is learned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .cma import EvaluatedPopulation

# Relative jitter ladder tried when the kernel matrix fails to factorize.
_JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# Posterior variance below this is a numerical error, above it mere roundoff.
_VAR_CLAMP = -1e-10


class Euclidean:
    """Plain Euclidean metric for distance-based kernels."""

    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return cdist(a, b)


class Mahalanobis:
    """Distance weighted by the inverse of a covariance matrix."""

    def __init__(self, cov):
        cov = np.asarray(cov, dtype=float)
        vals = np.linalg.eigvalsh((cov + cov.T) / 2.0)
        if vals[0] <= 1e-12 * max(vals[-1], 0.0) or vals[-1] <= 0:
            raise ValueError("Mahalanobis metric requires an invertible covariance")
        self.cov = cov
        self._inv = np.linalg.inv(cov)

    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return cdist(a, b, "mahalanobis", VI=self._inv)


@dataclass
class SquaredExponential:
    """k(x, x') = exp(-r^2 / (2 l^2)) with r the metric distance."""

    length_scale: float
    metric: object = field(default_factory=Euclidean)

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")


@dataclass
class GammaExponential:
    """k(x, x') = exp(-(r / l)^gamma), 0 < gamma <= 2."""

    length_scale: float
    gamma: float
    metric: object = field(default_factory=Euclidean)

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if not 0 < self.gamma <= 2:
            raise ValueError("gamma must lie in (0, 2]")
        if self.gamma < 2 and isinstance(self.metric, Mahalanobis):
            # Not guaranteed PD for arbitrary covariances; the fit-time
            # jitter ladder has to absorb any indefiniteness.
            warnings.warn(
                "gamma-exponential kernel with gamma < 2 under a Mahalanobis "
                "metric is not guaranteed positive definite",
                RuntimeWarning,
                stacklevel=2,
            )


@dataclass
class DotProduct:
    """k(x, x') = (sigma0^2 + x . x')^degree."""

    sigma0: float
    degree: int

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be a positive integer")
        self.degree = int(self.degree)


@dataclass
class GeneralizedDotProduct:
    """k(x, x') = (sigma0^2 + x^T W x')^degree with W positive definite."""

    sigma0: float
    degree: int
    weight: np.ndarray

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be a positive integer")
        self.degree = int(self.degree)
        self.weight = np.asarray(self.weight, dtype=float)
        vals = np.linalg.eigvalsh((self.weight + self.weight.T) / 2.0)
        if vals[0] <= 0:
            raise ValueError("weight matrix must be positive definite")


KernelSpec = SquaredExponential | GammaExponential | DotProduct | GeneralizedDotProduct


def kernel_matrix(kernel: KernelSpec, a, b) -> np.ndarray:
    """Cross-kernel matrix K(a, b) of shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if isinstance(kernel, SquaredExponential):
        r = kernel.metric.distances(a, b)
        return np.exp(-(r * r) / (2.0 * kernel.length_scale**2))
    if isinstance(kernel, GammaExponential):
        r = kernel.metric.distances(a, b)
        return np.exp(-((r / kernel.length_scale) ** kernel.gamma))
    if isinstance(kernel, DotProduct):
        return (kernel.sigma0**2 + a @ b.T) ** kernel.degree
    if isinstance(kernel, GeneralizedDotProduct):
        # Averaging both evaluation orders keeps k(x, y) == k(y, x) exact
        # despite the non-associative rounding of the chained products.
        forward = a @ kernel.weight @ b.T
        backward = (b @ kernel.weight @ a.T).T
        return (kernel.sigma0**2 + 0.5 * (forward + backward)) ** kernel.degree
    raise TypeError(f"unknown kernel: {kernel!r}")


def kernel_diag(kernel: KernelSpec, a) -> np.ndarray:
    """K(x, x) for each row of a; distance-based kernels give 1."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if isinstance(kernel, (SquaredExponential, GammaExponential)):
        return np.ones(len(a))
    if isinstance(kernel, DotProduct):
        return (kernel.sigma0**2 + np.einsum("ij,ij->i", a, a)) ** kernel.degree
    if isinstance(kernel, GeneralizedDotProduct):
        return (kernel.sigma0**2 + np.einsum("ij,jk,ik->i", a, kernel.weight, a)) ** kernel.degree
    raise TypeError(f"unknown kernel: {kernel!r}")


def kernel_eval(kernel: KernelSpec, x, y) -> float:
    """Kernel value for a single pair of points."""
    return float(kernel_matrix(kernel, [np.asarray(x)], [np.asarray(y)])[0, 0])


@dataclass(frozen=True)
class ConstantFunction:
    """Constant trend used as the prior mean fbar."""

    value: float

    def __call__(self, x) -> float:
        return self.value


@dataclass
class MeanPrior:
    """Prior mean specification: zero, deterministic fbar, or w * fbar."""

    kind: str
    fbar: object = None
    sigma_w: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "deterministic", "bayesian_multiplicative"):
            raise ValueError(f"unknown mean prior kind: {self.kind!r}")
        if self.kind != "zero" and self.fbar is None:
            raise ValueError(f"{self.kind} prior requires an fbar function")
        if self.kind == "bayesian_multiplicative" and self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive for the Bayesian prior")

    @classmethod
    def zero(cls) -> "MeanPrior":
        return cls(kind="zero")

    @classmethod
    def deterministic(cls, fbar) -> "MeanPrior":
        return cls(kind="deterministic", fbar=fbar)

    @classmethod
    def bayesian(cls, fbar, sigma_w: float) -> "MeanPrior":
        return cls(kind="bayesian_multiplicative", fbar=fbar, sigma_w=sigma_w)

    def values(self, points) -> np.ndarray:
        """fbar evaluated at each row; zeros for the zero prior."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "zero":
            return np.zeros(len(pts))
        return np.array([float(self.fbar(p)) for p in pts])


def bar_f_from_aggregate(history: list[EvaluatedPopulation], mode: str = "mean") -> ConstantFunction:
    """Constant trend aggregated from known fitness values.

    ``mean`` pools every fitness value; ``weighted_mean`` averages the
    per-generation means with weights growing linearly by recency, so of
    G generations the i-th (oldest first) gets weight i / (1 + ... + G).
    """
    if not history:
        raise ValueError("history must be nonempty")
    if mode == "mean":
        pooled = np.concatenate([np.asarray(gen.fitness, float) for gen in history])
        return ConstantFunction(float(pooled.mean()))
    if mode == "weighted_mean":
        gen_means = np.array([float(np.mean(gen.fitness)) for gen in history])
        weights = np.arange(1, len(history) + 1, dtype=float)
        weights /= weights.sum()
        return ConstantFunction(float(weights @ gen_means))
    raise ValueError(f"unknown aggregation mode: {mode!r}")


@dataclass
class GpModel:
    """Fitted GP: training data plus the cached factorization of K + s^2 I."""

    X: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    sigma_noise: float
    mean_prior: MeanPrior
    factor: tuple = field(repr=False, default=None)
    alpha_y: np.ndarray = field(repr=False, default=None)      # (K+s^2 I)^{-1} y
    alpha_mean: np.ndarray = field(repr=False, default=None)   # (K+s^2 I)^{-1} fbar(X)
    mean_at_train: np.ndarray = field(repr=False, default=None)
    jitter: float = 0.0

    def __len__(self) -> int:
        return len(self.X)


def fit(X, y, kernel: KernelSpec, sigma_noise: float = 0.0,
        mean_prior: MeanPrior | None = None) -> GpModel:
    """Fit a GP, caching the Cholesky factorization of K(X,X) + s^2 I.

    If the factorization fails, diagonal jitter relative to the mean
    diagonal is escalated from 1e-10 up to 1e-6 before giving up.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) < 1:
        raise ValueError("training set must be nonempty")
    if len(X) != len(y):
        raise ValueError("X and y must have equal length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be nonnegative")
    if sigma_noise == 0 and len(X) > 1:
        _, counts = np.unique(X, axis=0, return_counts=True)
        if counts.max() > 1:
            raise ValueError("duplicate training inputs with zero noise")
    if mean_prior is None:
        mean_prior = MeanPrior.zero()

    gram = kernel_matrix(kernel, X, X)
    gram = (gram + gram.T) / 2.0
    base = gram + sigma_noise**2 * np.eye(len(X))
    diag_scale = float(np.mean(np.diag(base)))

    factor = None
    jitter = 0.0
    for level in _JITTER_LADDER:
        jitter = level * diag_scale
        try:
            factor = cho_factor(base + jitter * np.eye(len(X)), lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    if factor is None:
        raise RuntimeError("kernel matrix not positive definite after max jitter")

    mean_at_train = mean_prior.values(X)
    return GpModel(
        X=X,
        y=y,
        kernel=kernel,
        sigma_noise=float(sigma_noise),
        mean_prior=mean_prior,
        factor=factor,
        alpha_y=cho_solve(factor, y),
        alpha_mean=cho_solve(factor, mean_at_train),
        mean_at_train=mean_at_train,
        jitter=jitter,
    )


def predict_batch(model: GpModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of f at each point, sharing one solve."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k_xp = kernel_matrix(model.kernel, model.X, pts)          # (n, m)
    solved = cho_solve(model.factor, k_xp)
    base_var = kernel_diag(model.kernel, pts) - np.einsum("ij,ij->j", k_xp, solved)

    prior = model.mean_prior
    if prior.kind == "zero":
        mu = k_xp.T @ model.alpha_y
        var = base_var
    elif prior.kind == "deterministic":
        mu = prior.values(pts) + k_xp.T @ (model.alpha_y - model.alpha_mean)
        var = base_var
    else:
        # Scalar-weight Bayesian prior: posterior of w shrinks the residual
        # trend r(x) = fbar(x) - k^T K^{-1} fbar(X) by w_hat and feeds its
        # remaining uncertainty back into the variance.
        residual = prior.values(pts) - k_xp.T @ model.alpha_mean
        sw2 = prior.sigma_w**2
        denom = 1.0 + sw2 * float(model.mean_at_train @ model.alpha_mean)
        w_hat = (1.0 + sw2 * float(model.mean_at_train @ model.alpha_y)) / denom
        mu = k_xp.T @ model.alpha_y + residual * w_hat
        var = base_var + sw2 * residual**2 / denom

    low = float(var.min()) if len(var) else 0.0
    if low < _VAR_CLAMP:
        raise RuntimeError(f"negative posterior variance {low:.3e} exceeds roundoff tolerance")
    return mu, np.maximum(var, 0.0)


def predict(model: GpModel, x) -> tuple[float, float]:
    """Posterior mean and variance of f at a single point."""
    mu, var = predict_batch(model, [np.asarray(x, dtype=float)])
    return float(mu[0]), float(var[0])
