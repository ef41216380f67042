"""Evolution-control strategies: which sampled points get true evaluations.

Five strategies are provided.  Four are individual-based: plain surrogate
preselection, preselection with the GP living on leading principal
components, the same restricted to points near that component subspace,
and two-stage sampling where part of the population is evaluated first
and folded into the surrogate before the rest is chosen.  The fifth is
generation-based: whole generations run on the surrogate, with a few
probe points per generation accumulated into hardware-sized batches and
used to test how well the surrogate ranking agrees with true fitness.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from . import gp
from .acquisition import AcquisitionSpec, criterion_values, rank_candidates
from .cma import CmaState, EvaluatedPopulation, sample_population, update_state

_KMEANS_TOL = 1e-9
_KMEANS_MAX_ITER = 100


# ---------------------------------------------------------------------------
# Strategy parameter bundles


@dataclass(frozen=True)
class BasicControl:
    """Sample ``candidates`` points, true-evaluate the best lambda of them."""

    candidates: int
    clusters: int


@dataclass(frozen=True)
class LowDimProjection:
    """Like BasicControl, but the GP lives on the leading principal components."""

    candidates: int
    clusters: int
    projection_dim: int


@dataclass(frozen=True)
class RestrictedProjection:
    """Projection-based GP over candidates resampled close to the subspace."""

    candidates: int
    clusters: int
    projection_dim: int
    epsilon: float
    max_resamples: int = 100


@dataclass(frozen=True)
class TwoStage:
    """Evaluate ``pre_evaluated`` fresh samples first, then preselect the rest."""

    candidates: int
    clusters: int
    pre_evaluated: int


@dataclass(frozen=True)
class GenerationBased:
    """Whole generations on the surrogate, probe points batched for checking."""

    candidates: int
    clusters: int
    probes: int
    hw_batch: int
    agreement_threshold: float = 0.5
    probes_min: int = 1
    probes_max: int = 2**31 - 1
    refit_include_current: bool = False


ControlStrategy = (
    BasicControl | LowDimProjection | RestrictedProjection | TwoStage | GenerationBased
)


def validate_strategy(strategy: ControlStrategy, popsize: int, dim: int) -> None:
    """Check the cross-parameter input conditions for a strategy.

    For the two-stage strategy the pool condition weakens to
    lambda - lambda'' < lambda' and for generation-based control it is
    subsumed by probes + lambda <= lambda'.
    """
    selection_size = popsize
    if isinstance(strategy, TwoStage):
        if not 0 <= strategy.pre_evaluated < popsize:
            raise ValueError("pre_evaluated must satisfy 0 <= lambda'' < lambda")
        selection_size = popsize - strategy.pre_evaluated
        if selection_size >= strategy.candidates:
            raise ValueError(
                "candidate pool too small for the second stage: "
                "lambda - lambda'' < card{x~_1,...,x~_lambda'} must hold"
            )
    elif not isinstance(strategy, GenerationBased) and strategy.candidates <= popsize:
        raise ValueError(
            "candidate pool too small: the population size must satisfy "
            "lambda < card{x~_1,...,x~_lambda'} "
            f"(got lambda={popsize}, candidates={strategy.candidates})"
        )
    if isinstance(strategy, GenerationBased):
        if not 1 <= strategy.probes < popsize:
            raise ValueError("probes must satisfy 1 <= lambda''' < lambda")
        if strategy.probes + popsize > strategy.candidates:
            raise ValueError("probes + lambda <= lambda' must hold")
        if not 1 <= strategy.probes_min <= strategy.probes <= strategy.probes_max:
            raise ValueError("probes must lie within [probes_min, probes_max]")
        # -1 is reachable by the agreement statistic, so threshold -1 acts as
        # the documented never-refit sentinel.
        if not -1 <= strategy.agreement_threshold <= 1:
            raise ValueError("agreement_threshold must lie in [-1, 1]")
        if strategy.hw_batch < 1:
            raise ValueError("hw_batch must be >= 1")
        selection_size = strategy.probes
    if not 1 <= strategy.clusters <= selection_size:
        raise ValueError(
            f"clusters must lie in 1..{selection_size} for this strategy, "
            f"got {strategy.clusters}"
        )
    if isinstance(strategy, (LowDimProjection, RestrictedProjection)):
        if not 1 <= strategy.projection_dim < dim:
            raise ValueError("projection_dim must satisfy 1 <= l < d")
    if isinstance(strategy, RestrictedProjection):
        if strategy.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if strategy.max_resamples < 1:
            raise ValueError("max_resamples must be >= 1")


# ---------------------------------------------------------------------------
# Surrogate training window


@dataclass
class _ArchiveRecord:
    point: np.ndarray
    fitness: float
    generation: int


class SurrogateArchive:
    """Sliding window of the most recent true-evaluated points.

    Keeps at most ``capacity`` (point, fitness) pairs for GP training,
    while the best fitness ever inserted survives eviction so that the
    improvement criteria always see the run-wide optimum.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._records: deque[_ArchiveRecord] = deque(maxlen=capacity)
        self.best_fitness = math.inf
        self.last_model: gp.GpModel | None = None

    def __len__(self) -> int:
        return len(self._records)

    def extend(self, points, fitness, generation: int) -> None:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        fitness = np.asarray(fitness, dtype=float)
        if not np.all(np.isfinite(fitness)):
            raise ValueError("fitness values must be finite")
        for x, f in zip(points, fitness):
            self._records.append(_ArchiveRecord(np.array(x), float(f), generation))
        if len(fitness):
            self.best_fitness = min(self.best_fitness, float(fitness.min()))

    def points(self) -> np.ndarray:
        return np.array([r.point for r in self._records])

    def fitness(self) -> np.ndarray:
        return np.array([r.fitness for r in self._records])

    def history(self) -> list[EvaluatedPopulation]:
        """Window contents grouped by generation, oldest first."""
        groups: dict[int, list[_ArchiveRecord]] = {}
        for r in self._records:
            groups.setdefault(r.generation, []).append(r)
        return [
            EvaluatedPopulation(
                points=np.array([r.point for r in groups[g]]),
                fitness=np.array([r.fitness for r in groups[g]]),
                generation=g,
            )
            for g in sorted(groups)
        ]


def default_archive_capacity(popsize: int) -> int:
    """Training window default: the five most recent populations."""
    return 5 * popsize


# ---------------------------------------------------------------------------
# GP plumbing shared by the strategies


@dataclass
class GpConfig:
    """How to build the surrogate each generation.

    ``kernel`` acts as a template; with ``use_cma_metric`` the distance
    metric is replaced at fit time by the Mahalanobis metric of the live
    sampling covariance sigma^2 * cov (its leading-eigenvalue diagonal in
    projected space).
    """

    kernel: gp.KernelSpec
    sigma_noise: float = 1e-6
    mean_prior_kind: str = "zero"
    aggregate: str = "mean"
    weight_sigma: float = 1.0
    use_cma_metric: bool = False

    def __post_init__(self):
        if self.sigma_noise < 0:
            raise ValueError("sigma_noise must be nonnegative")
        if self.mean_prior_kind not in ("zero", "deterministic", "bayesian_multiplicative"):
            raise ValueError(f"unknown mean prior kind: {self.mean_prior_kind!r}")
        if self.aggregate not in ("mean", "weighted_mean"):
            raise ValueError(f"unknown aggregate mode: {self.aggregate!r}")


def _resolve_kernel(config: GpConfig, state: CmaState, projection_dim: int | None):
    """Instantiate the kernel, wiring in the live CMA metric if requested."""
    kernel = config.kernel
    if not config.use_cma_metric:
        return kernel
    if not isinstance(kernel, (gp.SquaredExponential, gp.GammaExponential)):
        raise ValueError("the CMA Mahalanobis metric applies only to distance-based kernels")
    if projection_dim is None:
        metric = gp.Mahalanobis(state.sigma**2 * state.cov)
    else:
        # Eigen coordinates are uncorrelated: the metric covariance reduces
        # to the leading eigenvalue diagonal.
        metric = gp.Mahalanobis(np.diag(state.sigma**2 * state.eigvals[:projection_dim]))
    if isinstance(kernel, gp.SquaredExponential):
        return gp.SquaredExponential(kernel.length_scale, metric=metric)
    return gp.GammaExponential(kernel.length_scale, kernel.gamma, metric=metric)


def _build_prior(config: GpConfig, history: list[EvaluatedPopulation]) -> gp.MeanPrior:
    if config.mean_prior_kind == "zero":
        return gp.MeanPrior.zero()
    fbar = gp.bar_f_from_aggregate(history, config.aggregate)
    if config.mean_prior_kind == "deterministic":
        return gp.MeanPrior.deterministic(fbar)
    return gp.MeanPrior.bayesian(fbar, config.weight_sigma)


def fit_surrogate(archive: SurrogateArchive, config: GpConfig, state: CmaState,
                  projection_dim: int | None = None) -> gp.GpModel:
    """Fit a GP on the archive window, optionally in eigen coordinates."""
    X = archive.points()
    if projection_dim is not None:
        X = project_to_principal_subspace(X, state, projection_dim)
    prior = _build_prior(config, archive.history())
    kernel = _resolve_kernel(config, state, projection_dim)
    model = gp.fit(X, archive.fitness(), kernel, config.sigma_noise, prior)
    archive.last_model = model
    return model


def bootstrap_threshold(dim: int) -> int:
    """Archive size below which strategies fall back to plain CMA sampling."""
    return dim + 2


# ---------------------------------------------------------------------------
# Algorithm: k-means clustering plus per-cluster criterion maxima


def kmeans_cluster(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns a label per point.

    Empty clusters are re-seeded at the point farthest from its assigned
    centroid.  Iteration stops when no centroid moves more than 1e-9.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    if k == 1:
        return np.zeros(n, dtype=int)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centroids[j] = points[idx]
        closest_sq = np.minimum(closest_sq, np.sum((points - centroids[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=int)
    for _ in range(_KMEANS_MAX_ITER):
        dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(dists, axis=1)
        moved = 0.0
        for j in range(k):
            members = points[labels == j]
            if len(members) == 0:
                assigned = dists[np.arange(n), labels]
                new_c = points[int(np.argmax(assigned))]
            else:
                new_c = members.mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new_c - centroids[j])))
            centroids[j] = new_c
        if moved < _KMEANS_TOL:
            break
    dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
    return np.argmin(dists, axis=1)


def select_from_clusters(values, spec: AcquisitionSpec, count: int,
                         labels: np.ndarray) -> np.ndarray:
    """Selection steps applied to a fixed clustering.

    First the criterion-best member of every cluster is taken, then the
    remaining slots are filled with the criterion-best of all candidates
    not yet chosen.  Returns ``count`` candidate indices.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if count > n:
        raise ValueError("cannot select more points than candidates")
    ranking = rank_candidates(values, spec)
    position = np.empty(n, dtype=int)
    position[ranking] = np.arange(n)

    chosen: list[int] = []
    taken = np.zeros(n, dtype=bool)
    for label in sorted(set(labels.tolist())):
        if len(chosen) == count:
            break
        members = np.flatnonzero(labels == label)
        best = members[np.argmin(position[members])]
        chosen.append(int(best))
        taken[best] = True
    for idx in ranking:
        if len(chosen) == count:
            break
        if not taken[idx]:
            chosen.append(int(idx))
            taken[idx] = True
    return np.array(chosen[:count], dtype=int)


def select_by_clustering(candidates, values, spec: AcquisitionSpec, count: int,
                         k: int, rng: np.random.Generator) -> np.ndarray:
    """Choose ``count`` candidate indices: cluster, take per-cluster best, fill.

    ``count`` must be strictly smaller than the candidate pool and
    ``k`` no larger than ``count``.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if count >= len(candidates):
        raise ValueError("selection size must be smaller than the candidate count")
    if not 1 <= k <= count:
        raise ValueError(f"k must lie in 1..{count}, got {k}")
    labels = kmeans_cluster(candidates, k, rng)
    return select_from_clusters(values, spec, count, labels)


# ---------------------------------------------------------------------------
# Geometry helpers for the projection strategies


def project_to_principal_subspace(points, state: CmaState, projection_dim: int) -> np.ndarray:
    """First ``projection_dim`` eigen coordinates of x - mean for each point."""
    d = state.dim
    if not 1 <= projection_dim < d:
        raise ValueError(f"projection_dim must satisfy 1 <= l < {d}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return (pts - state.mean) @ state.eigvecs[:, :projection_dim]


def resample_restricted(state: CmaState, count: int, projection_dim: int,
                        epsilon: float, max_resamples: int,
                        rng: np.random.Generator, return_stats: bool = False):
    """Sample until ``count`` points fall within ``epsilon`` of the subspace.

    A draw x is accepted when the residual of x - mean orthogonal to the
    leading ``projection_dim`` eigenvectors has norm below epsilon.  Draws
    are capped at max_resamples * count; exceeding the cap raises with the
    observed acceptance rate.
    """
    d = state.dim
    if not 1 <= projection_dim < d:
        raise ValueError(f"projection_dim must satisfy 1 <= l < {d}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_resamples < 1:
        raise ValueError("max_resamples must be >= 1")

    tail_basis = state.eigvecs[:, projection_dim:]
    cap = max_resamples * count
    accepted = np.empty((count, d))
    n_accepted = 0
    draws = 0
    while n_accepted < count and draws < cap:
        size = min(count, cap - draws)
        batch = sample_population(state, size, rng)
        residual = np.linalg.norm((batch - state.mean) @ tail_basis, axis=1)
        ok = np.flatnonzero(residual < epsilon)
        need = count - n_accepted
        if len(ok) >= need:
            # Trim at the draw that fills the request so the count is exact.
            ok = ok[:need]
            draws += int(ok[-1]) + 1
        else:
            draws += size
        accepted[n_accepted:n_accepted + len(ok)] = batch[ok]
        n_accepted += len(ok)
    if n_accepted < count:
        rate = n_accepted / draws if draws else 0.0
        raise RuntimeError(
            f"epsilon too tight: accepted {n_accepted}/{count} points "
            f"in {draws} draws (acceptance rate {rate:.4f})"
        )
    if return_stats:
        return accepted, draws
    return accepted


# ---------------------------------------------------------------------------
# Individual-based generation drivers


def _bootstrap_generation(state: CmaState, archive: SurrogateArchive, objective,
                          rng: np.random.Generator) -> tuple[EvaluatedPopulation, list[str]]:
    points = sample_population(state, state.popsize, rng)
    fitness = np.array([objective(p) for p in points])
    gen = state.generation + 1
    archive.extend(points, fitness, gen)
    return EvaluatedPopulation(points, fitness, gen), ["bootstrap"]


def _fallback_selection(archive: SurrogateArchive, candidates: np.ndarray,
                        count: int) -> tuple[np.ndarray, str]:
    """Pick points without a fresh surrogate after a failed GP fit."""
    model = archive.last_model
    if model is not None and model.X.shape[1] == candidates.shape[1]:
        try:
            mu, _ = gp.predict_batch(model, candidates)
            order = np.argsort(mu, kind="stable")
            return order[:count], "fallback_previous_model"
        except Exception:
            pass
    return np.arange(count), "fallback_random_order"


def _surrogate_preselection(state, archive, gp_config, spec, objective, rng,
                            candidates, count, k, projection_dim=None):
    """Fit, score, and cluster-select; true-evaluate the chosen points."""
    events: list[str] = []
    gp_inputs = candidates
    if projection_dim is not None:
        gp_inputs = project_to_principal_subspace(candidates, state, projection_dim)
    try:
        model = fit_surrogate(archive, gp_config, state, projection_dim)
    except (RuntimeError, ValueError, np.linalg.LinAlgError):
        sel, event = _fallback_selection(archive, gp_inputs, count)
        events.append(event)
    else:
        mu, var = gp.predict_batch(model, gp_inputs)
        values = criterion_values(spec, mu, var, archive.best_fitness)
        sel = select_by_clustering(candidates, values, spec, count, k, rng)
    points = candidates[sel]
    fitness = np.array([objective(p) for p in points])
    return points, fitness, events


def run_generation_basic(state: CmaState, archive: SurrogateArchive, gp_config: GpConfig,
                         spec: AcquisitionSpec, strategy: BasicControl, objective,
                         rng: np.random.Generator) -> tuple[EvaluatedPopulation, list[str]]:
    """One generation of surrogate preselection over a large candidate pool.

    Exactly ``state.popsize`` true evaluations happen, appended to the
    archive in place.  An archive below the bootstrap threshold makes the
    generation a plain CMA one with no surrogate involved.
    """
    if len(archive) < bootstrap_threshold(state.dim):
        return _bootstrap_generation(state, archive, objective, rng)
    candidates = sample_population(state, strategy.candidates, rng)
    points, fitness, events = _surrogate_preselection(
        state, archive, gp_config, spec, objective, rng,
        candidates, state.popsize, strategy.clusters)
    gen = state.generation + 1
    archive.extend(points, fitness, gen)
    return EvaluatedPopulation(points, fitness, gen), events


def run_generation_low_dim(state: CmaState, archive: SurrogateArchive, gp_config: GpConfig,
                           spec: AcquisitionSpec, strategy: LowDimProjection, objective,
                           rng: np.random.Generator) -> tuple[EvaluatedPopulation, list[str]]:
    """Preselection with the GP trained on leading principal components."""
    if len(archive) < bootstrap_threshold(state.dim):
        return _bootstrap_generation(state, archive, objective, rng)
    candidates = sample_population(state, strategy.candidates, rng)
    points, fitness, events = _surrogate_preselection(
        state, archive, gp_config, spec, objective, rng,
        candidates, state.popsize, strategy.clusters, strategy.projection_dim)
    gen = state.generation + 1
    archive.extend(points, fitness, gen)
    return EvaluatedPopulation(points, fitness, gen), events


def run_generation_restricted(state: CmaState, archive: SurrogateArchive, gp_config: GpConfig,
                              spec: AcquisitionSpec, strategy: RestrictedProjection, objective,
                              rng: np.random.Generator) -> tuple[EvaluatedPopulation, list[str]]:
    """Projection GP over candidates resampled close to the component subspace."""
    if len(archive) < bootstrap_threshold(state.dim):
        return _bootstrap_generation(state, archive, objective, rng)
    candidates = resample_restricted(
        state, strategy.candidates, strategy.projection_dim,
        strategy.epsilon, strategy.max_resamples, rng)
    points, fitness, events = _surrogate_preselection(
        state, archive, gp_config, spec, objective, rng,
        candidates, state.popsize, strategy.clusters, strategy.projection_dim)
    gen = state.generation + 1
    archive.extend(points, fitness, gen)
    return EvaluatedPopulation(points, fitness, gen), events


def run_generation_two_stage(state: CmaState, archive: SurrogateArchive, gp_config: GpConfig,
                             spec: AcquisitionSpec, strategy: TwoStage, objective,
                             rng: np.random.Generator) -> tuple[EvaluatedPopulation, list[str]]:
    """Evaluate a first stage outright, fold it into the GP, preselect the rest.

    Stage one samples ``pre_evaluated`` points straight from the current
    distribution and true-evaluates them; stage two preselects the other
    lambda - lambda'' points with the stage-one-augmented surrogate.  The
    generation still costs exactly lambda true evaluations.
    """
    if len(archive) < bootstrap_threshold(state.dim):
        return _bootstrap_generation(state, archive, objective, rng)
    gen = state.generation + 1
    n_pre = strategy.pre_evaluated

    stage_points = np.empty((0, state.dim))
    stage_fitness = np.empty(0)
    if n_pre > 0:
        stage_points = sample_population(state, n_pre, rng)
        stage_fitness = np.array([objective(p) for p in stage_points])
        archive.extend(stage_points, stage_fitness, gen)

    candidates = sample_population(state, strategy.candidates, rng)
    rest_points, rest_fitness, events = _surrogate_preselection(
        state, archive, gp_config, spec, objective, rng,
        candidates, state.popsize - n_pre, strategy.clusters)
    archive.extend(rest_points, rest_fitness, gen)

    points = np.vstack([stage_points, rest_points])
    fitness = np.concatenate([stage_fitness, rest_fitness])
    return EvaluatedPopulation(points, fitness, gen), events


# ---------------------------------------------------------------------------
# Generation-based control


def generations_per_batch(probes: int, batch_size: int) -> int:
    """Largest n with n * probes <= batch_size; callers floor the result at 1."""
    if probes < 1 or batch_size < 1:
        raise ValueError("probes and batch_size must be >= 1")
    return batch_size // probes


def hw_batches(evaluations: int, batch_size: int) -> int:
    """Hardware batches consumed by a chunk of evaluations (step-wise cost)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return -(-evaluations // batch_size)


def ranking_agreement(surrogate_values, true_fitness, spec: AcquisitionSpec) -> float:
    """Kendall tau-b between the criterion ordering and ascending fitness.

    Criterion values are oriented so that smaller means better before the
    comparison, matching the ordering ``rank_candidates`` induces.  Fully
    tied inputs carry no ranking information and count as agreement 0.
    """
    values = np.asarray(surrogate_values, dtype=float)
    fitness = np.asarray(true_fitness, dtype=float)
    if len(values) != len(fitness) or len(values) < 2:
        raise ValueError("ranking agreement needs two same-length rankings")
    oriented = -values if spec.maximizes else values
    tau = kendalltau(oriented, fitness).statistic
    return float(tau) if np.isfinite(tau) else 0.0


@dataclass
class _WindowGeneration:
    generation: int
    candidates: np.ndarray
    values: np.ndarray
    probe_idx: np.ndarray


@dataclass
class GenerationLedger:
    """Bookkeeping for generation-based control across batch windows."""

    probes: int
    g_last: int = 0
    gp_current: gp.GpModel | None = None
    probe_history: list[EvaluatedPopulation] = field(default_factory=list)
    hw_batches_used: int = 0


def run_generation_based(state: CmaState, ledger: GenerationLedger, archive: SurrogateArchive,
                         gp_config: GpConfig, spec: AcquisitionSpec, strategy: GenerationBased,
                         objective, rng: np.random.Generator,
                         update_mode: str = "standard") -> tuple[CmaState, list[dict]]:
    """Run one window of generation-based control and return per-generation records.

    Each window spans n_hw generations driven purely by the current
    surrogate: candidates are sampled, a handful of probe points per
    generation is set aside, and the distribution advances on predicted
    fitness.  At the window end all probes are true-evaluated in hardware
    batches and the surrogate-vs-truth ranking agreement is checked per
    generation.  Any failing generation triggers a refit on the probe
    history plus lambda extra points from that generation's candidates,
    and the probe count doubles (capped).
    """
    popsize = state.popsize
    records: list[dict] = []

    if len(archive) < bootstrap_threshold(state.dim):
        population, events = _bootstrap_generation(state, archive, objective, rng)
        ledger.hw_batches_used += hw_batches(len(population), strategy.hw_batch)
        state = update_state(state, population, update_mode)
        ledger.g_last = state.generation
        records.append({"generation": state.generation, "sigma": state.sigma,
                        "events": events})
        return state, records

    if ledger.gp_current is None:
        ledger.gp_current = fit_surrogate(archive, gp_config, state)

    n_hw = max(1, generations_per_batch(ledger.probes, strategy.hw_batch))
    window: list[_WindowGeneration] = []
    for _ in range(n_hw):
        candidates = sample_population(state, strategy.candidates, rng)
        mu, var = gp.predict_batch(ledger.gp_current, candidates)
        values = criterion_values(spec, mu, var, archive.best_fitness)
        k = min(strategy.clusters, ledger.probes)
        probe_idx = select_by_clustering(candidates, values, spec, ledger.probes, k, rng)
        gen = state.generation + 1
        window.append(_WindowGeneration(gen, candidates, np.asarray(values, float), probe_idx))

        # The distribution advances on surrogate fitness: a plain lambda-sized
        # population scored by the current GP, so selection pressure stays the
        # usual truncation inside the update.
        surrogate_pop = EvaluatedPopulation(candidates[:popsize], mu[:popsize], gen)
        state = update_state(state, surrogate_pop, update_mode)
        records.append({"generation": gen, "sigma": state.sigma,
                        "events": [f"probes_selected={ledger.probes}"]})

    # True-evaluate every probe of the window in cumulated hardware batches.
    probe_points = np.vstack([w.candidates[w.probe_idx] for w in window])
    probe_fitness = np.array([objective(p) for p in probe_points])
    ledger.hw_batches_used += hw_batches(len(probe_points), strategy.hw_batch)
    offset = 0
    per_gen_fitness: list[np.ndarray] = []
    for w in window:
        fit_w = probe_fitness[offset:offset + len(w.probe_idx)]
        offset += len(w.probe_idx)
        per_gen_fitness.append(fit_w)
        archive.extend(w.candidates[w.probe_idx], fit_w, w.generation)
        ledger.probe_history.append(
            EvaluatedPopulation(w.candidates[w.probe_idx], fit_w, w.generation))
    records[-1]["events"].append(f"probe_batch_evaluated={len(probe_points)}")

    agreements = []
    for w, fit_w in zip(window, per_gen_fitness):
        if len(fit_w) < 2:
            agreements.append(1.0)  # single probe carries no discordance evidence
        else:
            agreements.append(ranking_agreement(w.values[w.probe_idx], fit_w, spec))

    failing = [i for i, a in enumerate(agreements) if a < strategy.agreement_threshold]
    if not failing:
        ledger.g_last = state.generation
        records[-1]["events"].append("agreement_ok")
        return state, records

    # Refit from the first failing generation: lambda additional points out
    # of its retained candidates, trained together with the probe history.
    first = window[failing[0]]
    records[-1]["events"].append(f"agreement_failed@{first.generation}")
    remaining = np.setdiff1d(np.arange(len(first.candidates)), first.probe_idx)
    if popsize < len(remaining):
        k = min(strategy.clusters, popsize)
        local = select_by_clustering(
            first.candidates[remaining], first.values[remaining], spec, popsize, k, rng)
        extra_idx = remaining[local]
    else:
        extra_idx = remaining
    extra_points = first.candidates[extra_idx]
    extra_fitness = np.array([objective(p) for p in extra_points])
    # Refit evaluations land in a fresh hardware batch.
    ledger.hw_batches_used += hw_batches(len(extra_points), strategy.hw_batch)
    archive.extend(extra_points, extra_fitness, first.generation)

    training = [h for h in ledger.probe_history if h.generation <= first.generation]
    training = training + [EvaluatedPopulation(extra_points, extra_fitness, first.generation)]
    X = np.vstack([h.points for h in training])
    y = np.concatenate([h.fitness for h in training])
    if strategy.refit_include_current and ledger.gp_current is not None:
        X = np.vstack([X, ledger.gp_current.X])
        y = np.concatenate([y, ledger.gp_current.y])
        X, keep = np.unique(X, axis=0, return_index=True)
        y = y[keep]
    prior = _build_prior(gp_config, training)
    kernel = _resolve_kernel(gp_config, state, None)
    ledger.gp_current = gp.fit(X, y, kernel, gp_config.sigma_noise, prior)
    archive.last_model = ledger.gp_current

    old_probes = ledger.probes
    # Doubling is capped so the input conditions probes < lambda and
    # probes + lambda <= lambda' keep holding.
    ledger.probes = min(strategy.probes_max, 2 * ledger.probes,
                        popsize - 1, strategy.candidates - popsize)
    ledger.probes = max(ledger.probes, strategy.probes_min)
    ledger.g_last = state.generation
    records[-1]["events"].append(f"refit_training_size={len(X)}")
    if ledger.probes != old_probes:
        records[-1]["events"].append(f"probes={ledger.probes}")
    return state, records
