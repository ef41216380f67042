"""Experiment configuration: strict JSON schema, defaults, canonical form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import control, gp
from .acquisition import AcquisitionSpec

_REQUIRED = object()

_OBJECTIVES = ("sphere", "ellipsoid", "rosenbrock", "rastrigin")
_UPDATE_MODES = ("standard", "paper_simple")
_KERNELS = ("squared_exponential", "gamma_exponential", "dot_product",
            "generalized_dot_product")
_METRICS = ("euclidean", "cma_mahalanobis")
_PRIORS = ("zero", "deterministic", "bayesian_multiplicative")
_AGGREGATES = ("mean", "weighted_mean")
_ACQUISITIONS = ("quantile", "poi", "poi_threshold", "ei")
_STRATEGIES = ("none", "basic", "low_dim_projection", "restricted_projection",
               "two_stage", "generation_based")


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field path."""


class _Section:
    """Dict wrapper that tracks consumed keys and rejects unknown ones."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def child(self, key: str, default=_REQUIRED) -> "_Section":
        raw = self.take(key, default)
        return _Section(raw if raw is not None else {}, f"{self.path}.{key}".lstrip("."))

    def take(self, key: str, default=_REQUIRED):
        self.seen.add(key)
        if key not in self.data:
            if default is _REQUIRED:
                raise ConfigError(f"{self._at(key)}: required field is missing")
            return default
        return self.data[key]

    def number(self, key: str, default=_REQUIRED, minimum=None, positive=False):
        raw = self.take(key, default)
        if raw is None:
            return None
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{self._at(key)}: expected a number")
        val = float(raw)
        if positive and val <= 0:
            raise ConfigError(f"{self._at(key)}: must be positive")
        if minimum is not None and val < minimum:
            raise ConfigError(f"{self._at(key)}: must be >= {minimum}")
        return val

    def integer(self, key: str, default=_REQUIRED, minimum=None):
        raw = self.take(key, default)
        if raw is None:
            return None
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{self._at(key)}: expected an integer")
        if minimum is not None and raw < minimum:
            raise ConfigError(f"{self._at(key)}: must be >= {minimum}")
        return int(raw)

    def choice(self, key: str, options, default=_REQUIRED):
        raw = self.take(key, default)
        if raw not in options:
            raise ConfigError(f"{self._at(key)}: must be one of {', '.join(options)}")
        return raw

    def boolean(self, key: str, default=_REQUIRED):
        raw = self.take(key, default)
        if not isinstance(raw, bool):
            raise ConfigError(f"{self._at(key)}: expected true or false")
        return raw

    def vector(self, key: str, default=_REQUIRED):
        raw = self.take(key, default)
        if raw is None:
            return None
        if not isinstance(raw, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            raise ConfigError(f"{self._at(key)}: expected a list of numbers")
        return [float(v) for v in raw]

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"{self._at(unknown[0])}: unknown field")

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key


@dataclass
class ObjectiveConfig:
    kind: str
    dimension: int
    budget: int
    target: float | None = None
    shift: list[float] | None = None
    condition: float = 1e6


@dataclass
class CmaConfig:
    population: int = 8
    sigma0: float = 1.0
    mean0: list[float] = field(default_factory=list)
    update: str = "standard"


@dataclass
class KernelConfig:
    kind: str = "squared_exponential"
    length_scale: float = 1.0
    gamma: float = 1.0
    sigma0: float = 1.0
    degree: int = 1
    weight: list[list[float]] | None = None


@dataclass
class GpSection:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    metric: str = "euclidean"
    sigma_noise: float = 1e-6
    # The constant-trend prior is the default: a zero prior makes the
    # improvement criteria chase unexplored regions on positive objectives.
    mean_prior: str = "deterministic"
    aggregate: str = "mean"
    weight_sigma: float = 1.0
    train_window: int | None = None


@dataclass
class AcquisitionConfig:
    kind: str = "ei"
    alpha: float | None = None
    threshold: float | None = None


@dataclass
class StrategyConfig:
    kind: str = "none"
    candidates: int | None = None
    clusters: int | None = None
    projection_dim: int | None = None
    epsilon: float | None = None
    max_resamples: int = 100
    pre_evaluated: int | None = None
    probes: int | None = None
    hw_batch: int | None = None
    agreement_threshold: float = 0.5
    probes_min: int = 1
    probes_max: int | None = None
    refit_include_current: bool = False


@dataclass
class ExecutionConfig:
    seeds: list[int] = field(default_factory=lambda: [0])
    jobs: int = 1
    stagnation_horizon: int = 50
    hw_batch: int = 1


@dataclass
class ExperimentConfig:
    objective: ObjectiveConfig
    cma: CmaConfig
    gp: GpSection
    acquisition: AcquisitionConfig
    strategy: StrategyConfig
    execution: ExecutionConfig

    def run_id(self, seed: int) -> str:
        return (f"{self.objective.kind}_d{self.objective.dimension}"
                f"_{self.strategy.kind}_s{seed}")

    # -- builders into runtime objects ------------------------------------

    def build_kernel(self) -> gp.KernelSpec:
        k = self.gp.kernel
        if k.kind == "squared_exponential":
            return gp.SquaredExponential(k.length_scale)
        if k.kind == "gamma_exponential":
            return gp.GammaExponential(k.length_scale, k.gamma)
        if k.kind == "dot_product":
            return gp.DotProduct(k.sigma0, k.degree)
        weight = k.weight
        if weight is None:
            weight = np.eye(self.objective.dimension).tolist()
        return gp.GeneralizedDotProduct(k.sigma0, k.degree, np.asarray(weight))

    def build_gp_config(self) -> control.GpConfig:
        return control.GpConfig(
            kernel=self.build_kernel(),
            sigma_noise=self.gp.sigma_noise,
            mean_prior_kind=self.gp.mean_prior,
            aggregate=self.gp.aggregate,
            weight_sigma=self.gp.weight_sigma,
            use_cma_metric=self.gp.metric == "cma_mahalanobis",
        )

    def build_acquisition(self) -> AcquisitionSpec:
        a = self.acquisition
        return AcquisitionSpec(kind=a.kind, alpha=a.alpha, threshold=a.threshold)

    def build_strategy(self) -> control.ControlStrategy | None:
        s = self.strategy
        lam = self.cma.population
        if s.kind == "none":
            return None
        candidates = s.candidates if s.candidates is not None else 8 * lam
        clusters = s.clusters if s.clusters is not None else max(1, lam // 2)
        if s.kind == "basic":
            built = control.BasicControl(candidates, clusters)
        elif s.kind == "low_dim_projection":
            built = control.LowDimProjection(candidates, clusters, s.projection_dim)
        elif s.kind == "restricted_projection":
            built = control.RestrictedProjection(
                candidates, clusters, s.projection_dim, s.epsilon, s.max_resamples)
        elif s.kind == "two_stage":
            built = control.TwoStage(candidates, clusters, s.pre_evaluated)
        else:
            probes = s.probes if s.probes is not None else max(1, lam // 4)
            probes_max = s.probes_max if s.probes_max is not None else lam - 1
            built = control.GenerationBased(
                candidates, min(clusters, probes), probes,
                s.hw_batch if s.hw_batch is not None else self.execution.hw_batch,
                s.agreement_threshold, s.probes_min, probes_max,
                s.refit_include_current)
        try:
            control.validate_strategy(built, lam, self.objective.dimension)
        except ValueError as exc:
            raise ConfigError(f"strategy: {exc}") from exc
        return built

    def to_dict(self) -> dict:
        """Canonical fully-defaulted form; parsing it back reproduces self."""
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config; unknown keys are rejected."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    root = _Section(raw, "")

    obj = root.child("objective")
    objective = ObjectiveConfig(
        kind=obj.choice("kind", _OBJECTIVES),
        dimension=obj.integer("dimension", minimum=1),
        budget=obj.integer("budget", minimum=0),
        target=obj.number("target", default=None),
        shift=obj.vector("shift", default=None),
        condition=obj.number("condition", default=1e6, minimum=1.0),
    )
    obj.finish()
    if objective.kind == "rosenbrock" and objective.dimension < 2:
        raise ConfigError("objective.dimension: rosenbrock needs dimension >= 2")
    if objective.shift is not None and len(objective.shift) != objective.dimension:
        raise ConfigError("objective.shift: length must equal objective.dimension")

    cma_sec = root.child("cma", default=None)
    mean0_raw = cma_sec.take("mean0", default=None)
    if mean0_raw is None:
        mean0 = [0.0] * objective.dimension
    elif isinstance(mean0_raw, (int, float)) and not isinstance(mean0_raw, bool):
        mean0 = [float(mean0_raw)] * objective.dimension
    elif isinstance(mean0_raw, list):
        mean0 = _Section({"mean0": mean0_raw}, "cma").vector("mean0")
    else:
        raise ConfigError("cma.mean0: expected a number or a list of numbers")
    if len(mean0) != objective.dimension:
        raise ConfigError("cma.mean0: length must equal objective.dimension")
    cma = CmaConfig(
        population=cma_sec.integer("population", default=8, minimum=2),
        sigma0=cma_sec.number("sigma0", default=1.0, positive=True),
        mean0=mean0,
        update=cma_sec.choice("update", _UPDATE_MODES, default="standard"),
    )
    cma_sec.finish()

    gp_sec = root.child("gp", default=None)
    kernel_sec = gp_sec.child("kernel", default=None)
    kernel = KernelConfig(
        kind=kernel_sec.choice("kind", _KERNELS, default="squared_exponential"),
        length_scale=kernel_sec.number("length_scale", default=1.0, positive=True),
        gamma=kernel_sec.number("gamma", default=1.0, positive=True),
        sigma0=kernel_sec.number("sigma0", default=1.0, minimum=0.0),
        degree=kernel_sec.integer("degree", default=1, minimum=1),
        weight=kernel_sec.take("weight", default=None),
    )
    kernel_sec.finish()
    if kernel.gamma > 2:
        raise ConfigError("gp.kernel.gamma: must lie in (0, 2]")
    gp_section = GpSection(
        kernel=kernel,
        metric=gp_sec.choice("metric", _METRICS, default="euclidean"),
        sigma_noise=gp_sec.number("sigma_noise", default=1e-6, minimum=0.0),
        mean_prior=gp_sec.choice("mean_prior", _PRIORS, default="deterministic"),
        aggregate=gp_sec.choice("aggregate", _AGGREGATES, default="mean"),
        weight_sigma=gp_sec.number("weight_sigma", default=1.0, positive=True),
        train_window=gp_sec.integer("train_window", default=None, minimum=1),
    )
    gp_sec.finish()

    acq_sec = root.child("acquisition", default=None)
    acquisition = AcquisitionConfig(
        kind=acq_sec.choice("kind", _ACQUISITIONS, default="ei"),
        alpha=acq_sec.number("alpha", default=None),
        threshold=acq_sec.number("threshold", default=None),
    )
    acq_sec.finish()
    if acquisition.kind == "quantile":
        if acquisition.alpha is None or not 0.0 < acquisition.alpha < 1.0:
            raise ConfigError("acquisition.alpha: alpha must lie in (0,1)")
    if acquisition.kind == "poi_threshold" and acquisition.threshold is None:
        raise ConfigError("acquisition.threshold: required for poi_threshold")

    strat_sec = root.child("strategy", default=None)
    strategy = StrategyConfig(
        kind=strat_sec.choice("kind", _STRATEGIES, default="none"),
        candidates=strat_sec.integer("candidates", default=None, minimum=2),
        clusters=strat_sec.integer("clusters", default=None, minimum=1),
        projection_dim=strat_sec.integer("projection_dim", default=None, minimum=1),
        epsilon=strat_sec.number("epsilon", default=None),
        max_resamples=strat_sec.integer("max_resamples", default=100, minimum=1),
        pre_evaluated=strat_sec.integer("pre_evaluated", default=None, minimum=0),
        probes=strat_sec.integer("probes", default=None, minimum=1),
        hw_batch=strat_sec.integer("hw_batch", default=None, minimum=1),
        agreement_threshold=strat_sec.number("agreement_threshold", default=0.5),
        probes_min=strat_sec.integer("probes_min", default=1, minimum=1),
        probes_max=strat_sec.integer("probes_max", default=None, minimum=1),
        refit_include_current=strat_sec.boolean("refit_include_current", default=False),
    )
    strat_sec.finish()
    _require_strategy_fields(strategy)

    exec_sec = root.child("execution", default=None)
    seeds_raw = exec_sec.take("seeds", default=[0])
    if (not isinstance(seeds_raw, list) or not seeds_raw
            or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds_raw)):
        raise ConfigError("execution.seeds: expected a nonempty list of integers")
    execution = ExecutionConfig(
        seeds=list(seeds_raw),
        jobs=exec_sec.integer("jobs", default=1, minimum=1),
        stagnation_horizon=exec_sec.integer("stagnation_horizon", default=50, minimum=0),
        hw_batch=exec_sec.integer("hw_batch", default=1, minimum=1),
    )
    exec_sec.finish()
    root.finish()

    config = ExperimentConfig(objective, cma, gp_section, acquisition, strategy, execution)
    # Cross-field checks happen by building the runtime objects once.
    config.build_strategy()
    config.build_acquisition()
    config.build_kernel()
    if config.objective.target is not None and not math.isfinite(config.objective.target):
        raise ConfigError("objective.target: must be finite")
    return config


def _require_strategy_fields(strategy: StrategyConfig) -> None:
    needed = {
        "low_dim_projection": ("projection_dim",),
        "restricted_projection": ("projection_dim", "epsilon"),
        "two_stage": ("pre_evaluated",),
    }
    for key in needed.get(strategy.kind, ()):
        if getattr(strategy, key) is None:
            raise ConfigError(f"strategy.{key}: required for kind {strategy.kind}")
    if strategy.epsilon is not None and strategy.epsilon <= 0:
        raise ConfigError("strategy.epsilon: must be positive")
