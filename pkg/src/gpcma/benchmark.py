"""Test objectives, run traces, and reproducible experiment execution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import control
from .acquisition import AcquisitionSpec
from .cma import EvaluatedPopulation, initial_state, sample_population, update_state
from .control import (
    BasicControl,
    GenerationBased,
    GenerationLedger,
    GpConfig,
    LowDimProjection,
    RestrictedProjection,
    SurrogateArchive,
    TwoStage,
    hw_batches,
)

_OBJECTIVE_KINDS = ("sphere", "ellipsoid", "rosenbrock", "rastrigin")


class Objective:
    """Standard test function with an exact true-evaluation counter."""

    def __init__(self, kind: str, dimension: int, shift=None, condition: float = 1e6):
        if kind not in _OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind: {kind!r}")
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if kind == "rosenbrock" and dimension < 2:
            raise ValueError("rosenbrock needs dimension >= 2")
        if condition < 1:
            raise ValueError("ellipsoid condition must be >= 1")
        self.kind = kind
        self.dimension = dimension
        self.shift = None if shift is None else np.asarray(shift, dtype=float)
        if self.shift is not None and self.shift.shape != (dimension,):
            raise ValueError("shift must have the objective dimension")
        self.condition = float(condition)
        self.evaluations = 0

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,) or not np.all(np.isfinite(x)):
            raise ValueError("objective input must be a finite vector of the right dimension")
        if self.shift is not None:
            x = x - self.shift
        self.evaluations += 1
        return _OBJECTIVE_FUNCS[self.kind](x, self.condition)


def _sphere(x, _cond):
    return float(x @ x)


def _ellipsoid(x, cond):
    d = len(x)
    if d == 1:
        return float(x[0] ** 2)
    weights = cond ** (np.arange(d) / (d - 1))
    return float(weights @ (x * x))


def _rosenbrock(x, _cond):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def _rastrigin(x, _cond):
    return float(10.0 * len(x) + np.sum(x * x - 10.0 * np.cos(2.0 * math.pi * x)))


_OBJECTIVE_FUNCS = {
    "sphere": _sphere,
    "ellipsoid": _ellipsoid,
    "rosenbrock": _rosenbrock,
    "rastrigin": _rastrigin,
}


@dataclass
class GenerationRecord:
    """One trace row: cumulative counters after a finished generation."""

    generation: int
    true_evals: int
    hw_batches: int
    best_fitness: float
    sigma: float
    events: tuple[str, ...] = ()


@dataclass
class RunTrace:
    """Per-generation records plus the reason the run stopped."""

    run_id: str
    seed: int
    records: list[GenerationRecord] = field(default_factory=list)
    terminal: str = "budget"

    def validate(self) -> None:
        evals = 0
        batches = 0
        best = math.inf
        for rec in self.records:
            if rec.true_evals < evals or rec.hw_batches < batches:
                raise ValueError("cumulative counters must be non-decreasing")
            if rec.best_fitness > best + 1e-300:
                raise ValueError("best fitness must be non-increasing")
            evals, batches, best = rec.true_evals, rec.hw_batches, rec.best_fitness

    @property
    def best_fitness(self) -> float:
        return self.records[-1].best_fitness if self.records else math.inf

    @property
    def true_evals(self) -> int:
        return self.records[-1].true_evals if self.records else 0

    @property
    def total_batches(self) -> int:
        return self.records[-1].hw_batches if self.records else 0


def run_experiment(config, seed: int | None = None) -> RunTrace:
    """Execute one seeded optimization run described by an ExperimentConfig.

    Stops at the true-evaluation budget, at the fitness target, or after
    the stagnation horizon passes without improvement.  The same config
    and seed always produce an identical trace.
    """
    if seed is None:
        seed = config.execution.seeds[0]
    rng = np.random.default_rng(seed)
    objective = Objective(
        config.objective.kind,
        config.objective.dimension,
        shift=config.objective.shift,
        condition=config.objective.condition,
    )
    state = initial_state(
        mean=config.cma.mean0,
        sigma=config.cma.sigma0,
        popsize=config.cma.population,
        )
    strategy = config.build_strategy()
    gp_config = config.build_gp_config()
    spec = config.build_acquisition()
    update_mode = config.cma.update

    trace = RunTrace(run_id=config.run_id(seed), seed=seed)
    budget = config.objective.budget
    target = config.objective.target
    horizon = config.execution.stagnation_horizon
    chunk = config.execution.hw_batch

    archive = SurrogateArchive(config.gp.train_window or
                               control.default_archive_capacity(state.popsize))
    ledger = None
    if isinstance(strategy, GenerationBased):
        ledger = GenerationLedger(probes=strategy.probes)
        chunk = strategy.hw_batch

    batches = 0
    best = math.inf
    stagnant = 0

    def finished() -> str | None:
        if objective.evaluations >= budget:
            return "budget"
        if target is not None and best <= target:
            return "target"
        if horizon and stagnant >= horizon:
            return "stagnation"
        return None

    while True:
        reason = finished()
        if reason is not None:
            trace.terminal = reason
            break

        if strategy is None:
            points = sample_population(state, state.popsize, rng)
            fitness = np.array([objective(p) for p in points])
            population = EvaluatedPopulation(points, fitness, state.generation + 1)
            batches += hw_batches(len(points), chunk)
            state = update_state(state, population, update_mode)
            new_records = [GenerationRecord(
                generation=state.generation,
                true_evals=objective.evaluations,
                hw_batches=batches,
                best_fitness=0.0,  # patched below
                sigma=state.sigma,
            )]
        elif isinstance(strategy, GenerationBased):
            state, window_records = control.run_generation_based(
                state, ledger, archive, gp_config, spec, strategy, objective, rng,
                update_mode)
            batches = ledger.hw_batches_used
            new_records = [GenerationRecord(
                generation=rec["generation"],
                true_evals=objective.evaluations if rec is window_records[-1] else 0,
                hw_batches=batches if rec is window_records[-1] else 0,
                best_fitness=0.0,
                sigma=rec["sigma"],
                events=tuple(rec["events"]),
            ) for rec in window_records]
            # Intermediate window generations consume nothing; carry the
            # previous cumulative counters forward.
            prev_evals = trace.records[-1].true_evals if trace.records else 0
            prev_batches = trace.records[-1].hw_batches if trace.records else 0
            for rec in new_records[:-1]:
                rec.true_evals = prev_evals
                rec.hw_batches = prev_batches
        else:
            runner = _INDIVIDUAL_RUNNERS[type(strategy)]
            population, events = runner(
                state, archive, gp_config, spec, strategy, objective, rng)
            if isinstance(strategy, TwoStage) and strategy.pre_evaluated > 0:
                batches += hw_batches(strategy.pre_evaluated, chunk)
                batches += hw_batches(state.popsize - strategy.pre_evaluated, chunk)
            else:
                batches += hw_batches(len(population), chunk)
            state = update_state(state, population, update_mode)
            new_records = [GenerationRecord(
                generation=state.generation,
                true_evals=objective.evaluations,
                hw_batches=batches,
                best_fitness=0.0,
                sigma=state.sigma,
                events=tuple(events),
            )]

        improved = False
        run_best = archive.best_fitness if strategy is not None else state.best_fitness
        if run_best < best:
            best = run_best
            improved = True
        for rec in new_records:
            rec.best_fitness = best
        stagnant = 0 if improved else stagnant + len(new_records)
        trace.records.extend(new_records)

    trace.validate()
    return trace


_INDIVIDUAL_RUNNERS = {
    BasicControl: control.run_generation_basic,
    LowDimProjection: control.run_generation_low_dim,
    RestrictedProjection: control.run_generation_restricted,
    TwoStage: control.run_generation_two_stage,
}


def _quartiles(values) -> dict:
    """Sort-based linear-interpolation quartiles (matching numpy's default)."""
    arr = np.sort(np.asarray(values, dtype=float))
    def at(q: float) -> float:
        pos = (len(arr) - 1) * q
        lo = int(math.floor(pos))
        hi = int(math.ceil(pos))
        return float(arr[lo] + (arr[hi] - arr[lo]) * (pos - lo))
    return {"q25": at(0.25), "median": at(0.5), "q75": at(0.75)}


def summarize(traces: list[RunTrace]) -> dict:
    """Quartile summary of final best fitness, evaluations, and batches."""
    if not traces:
        raise ValueError("no traces to summarize")
    return {
        "runs": len(traces),
        "best_fitness": _quartiles([t.best_fitness for t in traces]),
        "true_evals": _quartiles([t.true_evals for t in traces]),
        "hw_batches": _quartiles([t.total_batches for t in traces]),
    }
