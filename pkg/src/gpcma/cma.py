"""CMA-ES distribution state, sampling, and covariance geometry.

The search distribution is N(mean, sigma^2 * cov).  The covariance shape
matrix is kept together with its eigendecomposition so that sampling,
principal-component projections and Mahalanobis distances all share one
consistent basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Eigenvalue ratio below which the covariance counts as degenerate and
# receives diagonal jitter (relative to trace/dim).
_DEGENERATE_EIG_RATIO = 1e-14
_JITTER_REL = 1e-12

# 1/5th-success-rule step size multipliers (paper_simple update mode).
_SIGMA_UP = 1.22
_SIGMA_DOWN = 0.82


@dataclass
class CmaState:
    """Sampling distribution of one CMA-ES run plus adaptation bookkeeping.

    ``eigvecs`` columns are orthonormal eigenvectors of ``cov`` ordered by
    decreasing eigenvalue; ``eigvals`` holds the matching eigenvalues,
    clamped at zero.  ``path_sigma`` and ``path_cov`` are the evolution
    paths used by the standard update mode; ``best_fitness`` backs the
    1/5th-success rule of the simple mode.
    """

    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    generation: int = 0
    popsize: int = 8
    best_fitness: float = math.inf
    path_sigma: np.ndarray = field(default=None, repr=False)
    path_cov: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.sigma <= 0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("mean must be finite")
        if self.popsize < 2:
            raise ValueError(f"popsize must be >= 2, got {self.popsize}")
        d = self.dim
        if self.path_sigma is None:
            self.path_sigma = np.zeros(d)
        if self.path_cov is None:
            self.path_cov = np.zeros(d)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class EvaluatedPopulation:
    """Points paired with their true fitness values for one generation."""

    points: np.ndarray
    fitness: np.ndarray
    generation: int

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.fitness = np.asarray(self.fitness, dtype=float)
        if len(self.points) != len(self.fitness):
            raise ValueError("points and fitness must have equal length")
        if len(self.points) < 1:
            raise ValueError("population must be nonempty")

    def __len__(self) -> int:
        return len(self.points)


def initial_state(mean, sigma, popsize, cov=None) -> CmaState:
    """Build a fresh CMA state, defaulting to an identity covariance."""
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[0]
    if cov is None:
        cov = np.eye(d)
    eigvecs, eigvals = eigendecompose(np.asarray(cov, dtype=float))
    return CmaState(mean=mean, sigma=float(sigma), cov=np.asarray(cov, float),
                    eigvecs=eigvecs, eigvals=eigvals, popsize=int(popsize))


def sample_population(state: CmaState, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` points from N(mean, sigma^2 * cov).

    Points are generated as mean + sigma * E diag(sqrt(eigvals)) z with z
    standard normal, so a zero covariance collapses every draw onto the mean.
    Returns an array of shape (count, d).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if state.sigma <= 0:
        raise ValueError("sigma must be positive")
    if not np.all(np.isfinite(state.mean)):
        raise ValueError("mean must be finite")
    z = rng.standard_normal((count, state.dim))
    scaled = z * np.sqrt(state.eigvals)
    return state.mean + state.sigma * scaled @ state.eigvecs.T


def empirical_covariance(points) -> np.ndarray:
    """Unbiased sample covariance (1/(n-1)) sum (x - x_bar)(x - x_bar)^T."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n < 2:
        raise ValueError("insufficient points: covariance needs at least 2")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2.0


def eigendecompose(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a symmetric PSD matrix into (eigvecs, eigvals).

    Eigenvalues come back non-increasing with small negatives clamped to
    zero.  Each eigenvector column is flipped so its largest-magnitude
    entry is positive, which pins the sign across platforms.
    """
    cov = np.asarray(cov, dtype=float)
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    neg_limit = 1e-8 * max(float(vals[0]), 0.0) + 1e-12
    if vals[-1] < -neg_limit:
        raise ValueError(f"not PSD: eigenvalue {vals[-1]:.3e} below tolerance")
    np.clip(vals, 0.0, None, out=vals)
    anchor = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[anchor, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs, vals


def to_eigenbasis(points, basis: np.ndarray) -> np.ndarray:
    """Coordinates B^T x of each point in the orthonormal basis B."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts @ basis


def mahalanobis_distance(x, y, cov: np.ndarray) -> float:
    """sqrt((x-y)^T cov^{-1} (x-y)) for an invertible PSD covariance."""
    cov = np.asarray(cov, dtype=float)
    vals = np.linalg.eigvalsh((cov + cov.T) / 2.0)
    if vals[0] <= 1e-12 * max(vals[-1], 0.0) or vals[-1] <= 0:
        raise ValueError("singular covariance: Mahalanobis distance undefined")
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    sq = float(diff @ np.linalg.solve(cov, diff))
    return math.sqrt(max(sq, 0.0))


def regularize_covariance(cov: np.ndarray) -> np.ndarray:
    """Add diagonal jitter when the eigenvalue spread degenerates.

    Jitter is 1e-12 * trace/d, applied only if the smallest eigenvalue
    falls below 1e-14 times the largest; a zero matrix stays zero.
    """
    cov = (cov + cov.T) / 2.0
    vals = np.linalg.eigvalsh(cov)
    if vals[0] < _DEGENERATE_EIG_RATIO * max(vals[-1], 0.0):
        d = cov.shape[0]
        cov = cov + (_JITTER_REL * np.trace(cov) / d) * np.eye(d)
    return cov


def _sorted_by_fitness(evaluated: EvaluatedPopulation) -> np.ndarray:
    """Indices sorted ascending by fitness, ties kept in insertion order."""
    return np.argsort(evaluated.fitness, kind="stable")


def update_state(state: CmaState, evaluated: EvaluatedPopulation, mode: str = "standard") -> CmaState:
    """Advance the distribution one generation from an evaluated population.

    ``paper_simple`` recombines the best half unweighted, re-estimates the
    covariance as the plain sample covariance of the population, and adapts
    sigma with the 1/5th-success rule.  ``standard`` is the usual weighted
    recombination with rank-one/rank-mu covariance adaptation and cumulative
    step size adaptation.  Both refresh the cached eigendecomposition and
    increment the generation counter.
    """
    if not np.all(np.isfinite(evaluated.fitness)):
        raise ValueError("fitness values must be finite")
    if mode == "paper_simple":
        return _update_simple(state, evaluated)
    if mode == "standard":
        return _update_standard(state, evaluated)
    raise ValueError(f"unknown update mode: {mode!r}")


def _update_simple(state: CmaState, evaluated: EvaluatedPopulation) -> CmaState:
    pts = evaluated.points
    n = len(pts)
    order = _sorted_by_fitness(evaluated)
    n_sel = math.ceil(n / 2)
    new_mean = pts[order[:n_sel]].mean(axis=0)
    new_cov = regularize_covariance(empirical_covariance(pts))

    success = float(np.mean(evaluated.fitness < state.best_fitness))
    new_sigma = state.sigma * (_SIGMA_UP if success > 0.2 else _SIGMA_DOWN)

    eigvecs, eigvals = eigendecompose(new_cov)
    return replace(
        state,
        mean=new_mean,
        sigma=new_sigma,
        cov=new_cov,
        eigvecs=eigvecs,
        eigvals=eigvals,
        generation=state.generation + 1,
        best_fitness=min(state.best_fitness, float(evaluated.fitness.min())),
    )


def _update_standard(state: CmaState, evaluated: EvaluatedPopulation) -> CmaState:
    """Weighted recombination, rank-one/rank-mu adaptation, and CSA."""
    d = state.dim
    pts = evaluated.points
    n = len(pts)
    order = _sorted_by_fitness(evaluated)

    mu = max(n // 2, 1)
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / float(weights @ weights)

    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    cs = (mueff + 2) / (d + mueff + 5)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    selected = pts[order[:mu]]
    new_mean = weights @ selected
    y_w = (new_mean - state.mean) / state.sigma

    # C^{-1/2} y_w in the cached eigenbasis; zero eigenvalues contribute nothing.
    inv_sqrt = np.where(state.eigvals > 0, 1.0 / np.sqrt(np.maximum(state.eigvals, 1e-300)), 0.0)
    c_invsqrt_y = state.eigvecs @ (inv_sqrt * (state.eigvecs.T @ y_w))

    ps = (1 - cs) * state.path_sigma + math.sqrt(cs * (2 - cs) * mueff) * c_invsqrt_y
    gen = state.generation + 1
    hsig = (
        np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n
        < 1.4 + 2 / (d + 1)
    )
    pc = (1 - cc) * state.path_cov + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w

    y_sel = (selected - state.mean) / state.sigma
    rank_mu = (weights[:, None] * y_sel).T @ y_sel
    new_cov = (
        (1 - c1 - cmu) * state.cov
        + c1 * (np.outer(pc, pc) + (0.0 if hsig else cc * (2 - cc)) * state.cov)
        + cmu * rank_mu
    )
    new_cov = regularize_covariance(new_cov)

    new_sigma = state.sigma * math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
    eigvecs, eigvals = eigendecompose(new_cov)
    return replace(
        state,
        mean=new_mean,
        sigma=new_sigma,
        cov=new_cov,
        eigvecs=eigvecs,
        eigvals=eigvals,
        generation=gen,
        best_fitness=min(state.best_fitness, float(evaluated.fitness.min())),
        path_sigma=ps,
        path_cov=pc,
    )
