"""Genetic algorithm over quantized phase masks with a noisy fitness oracle.

Each generation the population is re-evaluated and ranked (fresh samples by
default, so a lucky noise spike cannot pin a bad pattern at the top), the
bottom half is replaced by offspring bred from rank-weighted roulette
selection, binary-template crossover and exponentially decaying mutation.

All randomness derives from the run seed: breeding consumes one master
stream, while every fitness evaluation gets its own generator keyed by
(seed, generation, slot).  Offspring evaluations may therefore run in
parallel and still reproduce the serial run exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .masks import DEFAULT_QUANT_STEP, PhaseMask, phase_levels
from .photons import EvaluationFailedError

_STREAM_INIT = 10
_STREAM_BREED = 11
_STREAM_EVAL = 12


class FitnessOracle(Protocol):
    """One noisy, nonnegative fitness sample per call."""

    def evaluate(self, mask: PhaseMask, rng: np.random.Generator) -> float: ...


@dataclass(frozen=True)
class GAConfig:
    """Optimizer parameters.

    Attributes:
        population_size: even count >= 4; half is replaced per generation.
        generations: number of breed/replace cycles.
        r0: initial mutation rate (fraction of blocks redrawn).
        r_end: final mutation rate.
        decay: e-folding constant (in generations) of the rate decay.
        quant_step: phase lattice step for genes.
        seed: master seed; the whole run is a deterministic function of it.
        reevaluate_survivors: draw fresh fitness samples for survivors every
            generation (robust under noise); disable to cache fitness, which
            makes the best-fitness trace exactly monotone for noiseless
            oracles.
    """

    generations: int
    population_size: int = 20
    r0: float = 0.1
    r_end: float = 0.013
    decay: float = 200.0
    quant_step: float = DEFAULT_QUANT_STEP
    seed: int = 0
    reevaluate_survivors: bool = True
    width: int = 60
    height: int = 60

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2 != 0:
            raise ValueError("population_size must be even and >= 4")
        if not 0.0 <= self.r_end <= self.r0 <= 1.0:
            raise ValueError("need 0 <= r_end <= r0 <= 1")
        if self.decay <= 0:
            raise ValueError("decay must be positive")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be positive")
        phase_levels(self.quant_step)


@dataclass
class RankedPopulation:
    """Population with per-pattern fitness samples and ranks (1 = best).

    ``fitnesses`` entries are NaN for patterns not yet evaluated; ``ranks``
    is None until the population has been ranked.
    """

    patterns: list
    fitnesses: np.ndarray
    ranks: np.ndarray | None = None

    def __post_init__(self):
        self.fitnesses = np.asarray(self.fitnesses, dtype=np.float64)
        if len(self.patterns) != self.fitnesses.size:
            raise ValueError("patterns and fitnesses differ in length")

    @property
    def size(self) -> int:
        return len(self.patterns)

    def best_index(self) -> int:
        if self.ranks is None:
            raise ValueError("population is not ranked")
        return int(np.argmin(self.ranks))

    def best(self) -> tuple[PhaseMask, float]:
        idx = self.best_index()
        return self.patterns[idx], float(self.fitnesses[idx])


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    mutation_rate: float


@dataclass
class OptimizationHistory:
    """Per-generation trace plus the final best mask.

    ``records`` has one entry per generation including generation 0.  If the
    oracle failed mid-run, ``error`` carries the message and the trace is
    partial.
    """

    records: list = field(default_factory=list)
    best_mask: PhaseMask | None = None
    best_fitness: float | None = None
    error: str | None = None

    @property
    def generations(self) -> int:
        return len(self.records) - 1


def _eval_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _STREAM_EVAL, generation, slot)))


def init_population(config: GAConfig) -> RankedPopulation:
    """Generation-0 population: one blank pattern plus random ones.

    The blank pattern (index 0) guarantees the starting point is never worse
    than no modulation at all.
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _STREAM_INIT)))
    patterns = [PhaseMask.blank(config.width, config.height)]
    for _ in range(config.population_size - 1):
        patterns.append(PhaseMask.random(config.width, config.height, rng, config.quant_step))
    return RankedPopulation(patterns, np.full(config.population_size, np.nan))


def assign_ranks(fitnesses: np.ndarray) -> np.ndarray:
    """Ranks 1..n by descending fitness, ties broken by lower index."""
    n = fitnesses.size
    order = np.lexsort((np.arange(n), -fitnesses))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    return ranks


def evaluate_and_rank(
    population: RankedPopulation,
    oracle: FitnessOracle,
    seed: int,
    generation: int,
    reevaluate: bool = True,
    workers: int = 1,
) -> RankedPopulation:
    """Draw fitness samples and rank the population.

    Every pattern missing a fitness is always evaluated; with ``reevaluate``
    the survivors are re-sampled as well.  Each slot uses its own generator
    keyed by (seed, generation, slot), so results do not depend on whether
    the evaluations run serially or in ``workers`` threads.
    """
    fitnesses = population.fitnesses.copy()
    slots = [
        i
        for i in range(population.size)
        if reevaluate or np.isnan(fitnesses[i])
    ]

    def _one(i: int) -> float:
        value = oracle.evaluate(population.patterns[i], _eval_rng(seed, generation, i))
        if not np.isfinite(value) or value < 0:
            raise EvaluationFailedError(f"oracle returned invalid fitness {value!r}")
        return float(value)

    if workers > 1 and len(slots) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, slots))
    else:
        results = [_one(i) for i in slots]
    for i, value in zip(slots, results):
        fitnesses[i] = value

    return RankedPopulation(list(population.patterns), fitnesses, assign_ranks(fitnesses))


def selection_weights(ranks: np.ndarray) -> np.ndarray:
    """Roulette probabilities proportional to 1/rank, normalized to sum 1."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("ranks must not be empty")
    weights = 1.0 / ranks
    return weights / weights.sum()


def select_parents(
    ranked: RankedPopulation, rng: np.random.Generator
) -> tuple[PhaseMask, PhaseMask]:
    """Draw two distinct parents by rank-weighted roulette.

    The second parent is drawn from the remaining patterns with weights
    renormalized after removing the first.
    """
    if ranked.size < 2:
        raise ValueError("need at least two patterns to select parents")
    if ranked.ranks is None:
        raise ValueError("population is not ranked")
    weights = selection_weights(ranked.ranks)
    ma = int(rng.choice(ranked.size, p=weights))
    rest = weights.copy()
    rest[ma] = 0.0
    rest /= rest.sum()
    pa = int(rng.choice(ranked.size, p=rest))
    return ranked.patterns[ma], ranked.patterns[pa]


def crossover(ma: PhaseMask, pa: PhaseMask, rng: np.random.Generator) -> PhaseMask:
    """Offspring takes ma's gene where a Bernoulli(1/2) template is 1, else pa's."""
    if ma.shape != pa.shape:
        raise ValueError("parents differ in dimensions")
    template = rng.integers(0, 2, size=ma.n_blocks).astype(bool)
    return ma.with_phases(np.where(template, ma.phases, pa.phases))


def mutation_rate(n: int, config: GAConfig) -> float:
    """Exponentially decaying rate: (r0 - r_end)*exp(-n/decay) + r_end."""
    if n < 0:
        raise ValueError("generation index must be >= 0")
    return (config.r0 - config.r_end) * float(np.exp(-n / config.decay)) + config.r_end


def mutate(
    pattern: PhaseMask,
    rate: float,
    rng: np.random.Generator,
    step: float = DEFAULT_QUANT_STEP,
) -> PhaseMask:
    """Redraw each block, independently with probability ``rate``, to a
    uniformly random quantized level (possibly the same one)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    levels = phase_levels(step)
    selected = rng.random(pattern.n_blocks) < rate
    redraw = rng.integers(0, levels, size=pattern.n_blocks) * step
    return pattern.with_phases(np.where(selected, redraw, pattern.phases))


def replace(ranked: RankedPopulation, offspring: list) -> RankedPopulation:
    """Replace the bottom-half ranks with offspring (in index order).

    Survivors keep their positions and cached fitness; the new patterns are
    unevaluated and the result is unranked.
    """
    if ranked.ranks is None:
        raise ValueError("population is not ranked")
    half = ranked.size // 2
    if len(offspring) != half:
        raise ValueError(f"expected {half} offspring, got {len(offspring)}")
    patterns = list(ranked.patterns)
    fitnesses = ranked.fitnesses.copy()
    child = iter(offspring)
    for i in range(ranked.size):
        if ranked.ranks[i] > half:
            patterns[i] = next(child)
            fitnesses[i] = np.nan
    return RankedPopulation(patterns, fitnesses)


def run(config: GAConfig, oracle: FitnessOracle, workers: int = 1) -> OptimizationHistory:
    """Full optimization loop; deterministic given (config, oracle seed).

    On oracle failure the partial history is returned with ``error`` set.
    """
    history = OptimizationHistory()
    breed_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _STREAM_BREED)))
    population = init_population(config)
    try:
        population = evaluate_and_rank(
            population, oracle, config.seed, 0, reevaluate=True, workers=workers
        )
        _record(history, population, 0, config)
        for gen in range(1, config.generations + 1):
            rate = mutation_rate(gen - 1, config)
            offspring = []
            for _ in range(config.population_size // 2):
                ma, pa = select_parents(population, breed_rng)
                offspring.append(
                    mutate(crossover(ma, pa, breed_rng), rate, breed_rng, config.quant_step)
                )
            population = replace(population, offspring)
            population = evaluate_and_rank(
                population,
                oracle,
                config.seed,
                gen,
                reevaluate=config.reevaluate_survivors,
                workers=workers,
            )
            _record(history, population, gen, config)
    except EvaluationFailedError as exc:
        history.error = str(exc)
        return history
    return history


def _record(
    history: OptimizationHistory,
    population: RankedPopulation,
    generation: int,
    config: GAConfig,
) -> None:
    best_mask, best_fitness = population.best()
    history.records.append(
        GenerationRecord(
            generation=generation,
            best_fitness=best_fitness,
            mean_fitness=float(population.fitnesses.mean()),
            mutation_rate=mutation_rate(generation, config),
        )
    )
    history.best_mask = best_mask
    history.best_fitness = best_fitness
