"""Evolutionary search over loss-weight vectors.

Selection draws uniformly from the top fraction by fitness; mutation resamples
exactly one uniformly chosen coordinate in [0, 1]; a child replaces the current
worst individual only if strictly fitter, so best-so-far fitness is monotone.

Every random decision of round r is drawn from a generator keyed by
(seed, "round", r) and fitness is a pure function of the weights, so the loop
is bit-reproducible, resumable from its history file, and independent of how
many evaluation workers run in flight.
"""

from __future__ import annotations

import math
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import DataBundle
from .fitness import FitnessConfig, FitnessResult, evaluate_fitness
from .rngs import make_rng
from .schema import KEY_INDEX, N_WEIGHTS, WEIGHT_KEYS
from .weights import LossWeights, validate


@dataclass
class Individual:
    id: int
    weights: LossWeights
    birth_round: int
    parent_id: int | None = None
    fitness: float | None = None
    ari: float = 0.0


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 20
    rounds: int = 100
    top_fraction: float = 0.25
    seed: int = 0
    fitness: FitnessConfig = field(default_factory=FitnessConfig)

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError("top_fraction must be in (0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


@dataclass
class EvolutionHistory:
    individuals: list[Individual]
    best_so_far: list[float]            # index r = best after round r
    population_size: int

    def best(self) -> Individual:
        evaluated = [i for i in self.individuals if i.fitness is not None]
        return max(evaluated, key=lambda i: (i.fitness, -i.id))

    def rounds(self) -> int:
        return len(self.best_so_far) - 1


def init_population(cfg: EvolutionConfig) -> list[Individual]:
    """population_size individuals, every coordinate i.i.d. uniform [0, 1]."""
    rng = make_rng(cfg.seed, "init")
    return [Individual(id=i, weights=LossWeights.uniform(rng), birth_round=0)
            for i in range(cfg.population_size)]


def mutate(parent: Individual, rng: np.random.Generator, *, child_id: int,
           birth_round: int) -> Individual:
    """Child equals parent except exactly one resampled coordinate."""
    if parent.fitness is None:
        raise ValueError("parent must be evaluated before mutation")
    coord = int(rng.integers(N_WEIGHTS))
    value = float(rng.uniform())
    return Individual(id=child_id, weights=parent.weights.with_value(coord, value),
                      birth_round=birth_round, parent_id=parent.id)


def _top_k(cfg: EvolutionConfig) -> int:
    return math.ceil(cfg.top_fraction * cfg.population_size)


def _ranked(population: list[Individual]) -> list[Individual]:
    return sorted(population, key=lambda i: (-i.fitness, i.id))


def _make_child(population: list[Individual], cfg: EvolutionConfig, r: int,
                child_id: int) -> Individual:
    rng = make_rng(cfg.seed, "round", r)
    parent = _ranked(population)[int(rng.integers(_top_k(cfg)))]
    return mutate(parent, rng, child_id=child_id, birth_round=r)


def _worst_index(population: list[Individual]) -> int:
    # lowest fitness loses; ties evict the newest individual
    return min(range(len(population)),
               key=lambda i: (population[i].fitness, -population[i].id))


class StubFitness:
    """Synthetic fitness equal to one secret coordinate of the weights; used
    to test the search loop independently of network training."""

    def __init__(self, coord: int | str):
        self.coord = KEY_INDEX[coord] if isinstance(coord, str) else int(coord)
        if not 0 <= self.coord < N_WEIGHTS:
            raise ValueError(f"stub coordinate {coord} out of range")

    def __call__(self, w: LossWeights) -> FitnessResult:
        return FitnessResult(fitness=float(w.values[self.coord]), ari=0.0,
                             components={}, seed=0, wall_time_ms=0.0)


def evolve(cfg: EvolutionConfig, data: DataBundle | None = None, *,
           fitness_fn: Callable[[LossWeights], FitnessResult] | None = None,
           workers: int = 1, resume_from: EvolutionHistory | None = None,
           stop_gradient: bool = False,
           on_round: Callable[[Individual, float], None] | None = None,
           ) -> EvolutionHistory:
    """Run (or resume) the search and record every evaluation.

    `fitness_fn` must be a pure function of the weights; the default trains on
    `data` under the shared FitnessConfig. With workers > 1, candidate
    children of upcoming rounds are evaluated speculatively; committed results
    are always those of the sequential algorithm, so output is independent of
    the worker count.
    """
    if fitness_fn is None:
        if data is None:
            raise ValueError("evolve needs data unless fitness_fn is injected")
        def fitness_fn(w: LossWeights) -> FitnessResult:
            return evaluate_fitness(w, data, cfg.fitness, stop_gradient=stop_gradient)

    cache: dict[bytes, FitnessResult] = {}
    pending: dict[bytes, Future] = {}
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def submit_speculative(w: LossWeights) -> None:
        key = w.key_bytes()
        if key not in cache and key not in pending:
            pending[key] = executor.submit(fitness_fn, w)

    def fitness_of(w: LossWeights) -> FitnessResult:
        key = w.key_bytes()
        if key in cache:
            return cache[key]
        fut = pending.pop(key, None)
        res = fut.result() if fut is not None else fitness_fn(w)
        cache[key] = res
        return res

    try:
        if resume_from is None:
            population = init_population(cfg)
            if executor is not None:
                for ind in population:
                    submit_speculative(ind.weights)
            for ind in population:
                res = fitness_of(ind.weights)
                ind.fitness, ind.ari = res.fitness, res.ari
                if on_round is not None:
                    on_round(ind, max(p.fitness for p in population if p.fitness is not None))
            individuals = list(population)
            best_so_far = [max(i.fitness for i in population)]
            start_round = 1
        else:
            individuals = list(resume_from.individuals)
            best_so_far = list(resume_from.best_so_far)
            population = _replay_population(resume_from)
            start_round = resume_from.rounds() + 1

        for r in range(start_round, cfg.rounds + 1):
            if executor is not None:
                # assume in-flight children change nothing; mispredictions are
                # simply discarded, never committed
                for s in range(r, min(r + workers, cfg.rounds + 1)):
                    submit_speculative(
                        _make_child(population, cfg, s, child_id=-1).weights)
            child = _make_child(population, cfg, r,
                                child_id=cfg.population_size + r - 1)
            res = fitness_of(child.weights)
            child.fitness, child.ari = res.fitness, res.ari
            individuals.append(child)
            worst = _worst_index(population)
            if child.fitness > population[worst].fitness:
                population[worst] = child
            best_so_far.append(max(best_so_far[-1], child.fitness))
            if on_round is not None:
                on_round(child, best_so_far[-1])
    finally:
        if executor is not None:
            executor.shutdown(wait=False, cancel_futures=True)

    return EvolutionHistory(individuals=individuals, best_so_far=best_so_far,
                            population_size=cfg.population_size)


def _replay_population(history: EvolutionHistory) -> list[Individual]:
    """Reconstruct the live population by replaying commits in round order."""
    p = history.population_size
    population = list(history.individuals[:p])
    for child in history.individuals[p:]:
        worst = _worst_index(population)
        if child.fitness > population[worst].fitness:
            population[worst] = child
    return population


# ---------------------------------------------------------------------------
# history file I/O

HISTORY_COLUMNS = ("id", "parent_id", "birth_round", *WEIGHT_KEYS, "fitness", "ari")


def history_header(comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def history_row(ind: Individual) -> str:
    parent = "" if ind.parent_id is None else str(ind.parent_id)
    weights = [repr(float(v)) for v in ind.weights.values]
    return ",".join([str(ind.id), parent, str(ind.birth_round), *weights,
                     repr(float(ind.fitness)), repr(float(ind.ari))]) + "\n"


def save_history(history: EvolutionHistory, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(history_header(comment))
        for ind in history.individuals:
            fh.write(history_row(ind))


def load_history(path) -> EvolutionHistory:
    individuals: list[Individual] = []
    with open(path, "r", encoding="utf-8") as fh:
        rows = [line.rstrip("\n") for line in fh
                if line.strip() and not line.startswith("#")]
    if not rows or rows[0].split(",") != list(HISTORY_COLUMNS):
        raise ValueError(f"malformed history file {path}: bad or missing header")
    for row in rows[1:]:
        parts = row.split(",")
        if len(parts) != len(HISTORY_COLUMNS):
            raise ValueError(f"malformed history row: {row!r}")
        ind = Individual(
            id=int(parts[0]),
            parent_id=None if parts[1] == "" else int(parts[1]),
            birth_round=int(parts[2]),
            weights=LossWeights([float(v) for v in parts[3:3 + N_WEIGHTS]]),
            fitness=float(parts[3 + N_WEIGHTS]),
            ari=float(parts[4 + N_WEIGHTS]),
        )
        individuals.append(ind)
    if not individuals:
        raise ValueError(f"history file {path} holds no individuals")
    n_initial = sum(1 for i in individuals if i.birth_round == 0)
    best_so_far = [max(i.fitness for i in individuals[:n_initial])]
    for child in individuals[n_initial:]:
        best_so_far.append(max(best_so_far[-1], child.fitness))
    for ind in individuals:
        if ind.parent_id is not None and ind.parent_id >= ind.id:
            raise ValueError(f"individual {ind.id} cites a later parent")
        if validate(ind.weights):
            raise ValueError(f"individual {ind.id} carries invalid weights")
    return EvolutionHistory(individuals=individuals, best_so_far=best_so_far,
                            population_size=n_initial)
