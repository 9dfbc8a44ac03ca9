"""Real-coded genetic algorithm over a bounded box.

The population lives in unit coordinates and is mapped affinely onto the box
before every objective call, so operators are independent of box scale.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NonFiniteObjectiveError

BLEND_ALPHA = 0.5


@dataclass(frozen=True)
class GaConfig:
    population: int = 60
    generations: int = 100
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    mutation_scale: float = 0.1    # fraction of the box width
    elitism: int = 1
    tournament: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError("population must be at least 2")
        if self.generations < 0:
            raise ConfigError("generations must be non-negative")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("elitism must lie in [0, population)")
        if self.tournament < 1:
            raise ConfigError("tournament size must be positive")

    def with_seed(self, seed: int) -> "GaConfig":
        return GaConfig(**{**asdict(self), "seed": int(seed)})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SearchBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or lo.size == 0:
            raise ConfigError("box bounds must be nonempty and of equal length")
        if np.any(lo > hi):
            raise ConfigError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, n: int) -> "SearchBox":
        return cls(np.zeros(n), np.ones(n))

    @property
    def n_genes(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return np.clip(self.lower + u * self.width, self.lower, self.upper)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        w = self.width
        safe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, np.clip((x - self.lower) / safe, 0.0, 1.0), 0.0)


@dataclass
class GaResult:
    best: np.ndarray
    best_fitness: float
    trace: list = field(default_factory=list)   # best fitness per generation, gen 0 first
    evaluations: int = 0


def run_ga(objective: Callable[[np.ndarray], np.ndarray], box: SearchBox,
           config: GaConfig = GaConfig(), initial=None) -> GaResult:
    """Minimise ``objective`` over ``box``.

    ``objective`` maps an (n, genes) array of individuals to n fitness values.
    Rows of ``initial`` (clamped into the box) replace the first members of the
    random generation 0.
    """
    rng = np.random.default_rng(config.seed)
    P, G = config.population, box.n_genes

    def evaluate(U):
        X = box.from_unit(U)
        fit = np.asarray(objective(X), dtype=np.float64).reshape(-1)
        bad = ~np.isfinite(fit)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteObjectiveError(X[i], fit[i])
        return fit

    U = rng.random((P, G))
    if initial is not None:
        init = np.atleast_2d(np.asarray(initial, dtype=np.float64))[:P]
        U[: len(init)] = box.to_unit(init)
    fit = evaluate(U)
    evaluations = P
    i = int(np.argmin(fit))
    best_u, best_f = U[i].copy(), float(fit[i])
    trace = [best_f]

    n_child = P - config.elitism
    for _ in range(config.generations):
        elite = np.argsort(fit, kind="stable")[: config.elitism]

        # tournament selection: the fittest of `tournament` random entrants
        entrants = rng.integers(0, P, size=(2, n_child, config.tournament))
        winners = np.take_along_axis(entrants, np.argmin(fit[entrants], axis=2)[..., None], axis=2)[..., 0]
        pa, pb = U[winners[0]], U[winners[1]]

        # BLX-alpha blend crossover
        lo, hi = np.minimum(pa, pb), np.maximum(pa, pb)
        span = hi - lo
        blend = lo - BLEND_ALPHA * span + rng.random((n_child, G)) * (1 + 2 * BLEND_ALPHA) * span
        cross = rng.random(n_child) < config.crossover_rate
        children = np.where(cross[:, None], blend, pa)

        # additive uniform mutation, width-relative
        mutate = rng.random((n_child, G)) < config.mutation_rate
        noise = rng.uniform(-config.mutation_scale, config.mutation_scale, size=(n_child, G))
        children = np.clip(np.where(mutate, children + noise, children), 0.0, 1.0)

        child_fit = evaluate(children)
        evaluations += n_child
        U = np.concatenate([U[elite], children])
        fit = np.concatenate([fit[elite], child_fit])
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_u, best_f = U[i].copy(), float(fit[i])
        trace.append(float(fit.min()))

    return GaResult(box.from_unit(best_u), best_f, trace, evaluations)
