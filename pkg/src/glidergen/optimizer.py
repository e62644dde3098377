"""Real-coded genetic search over flattened latent vectors.

The initial population is drawn one member per height-rank stratum of a
scored corpus. Each generation keeps a few elites and fills the rest with
children of binary-tournament parents: line crossover ``r*p1 + (1-r)*p2``
(with ``r`` allowed past 1 so children can extrapolate beyond the fitter
parent), then sparse Gaussian mutation scaled by the population spread.
Fitness is the absolute height error to the target, lower is better.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DELTAS = (0.1, 0.5)
_POP_MAGIC = b"POP1"


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    crossover_prob: float = 0.9
    mutation_prob: float = 0.05
    r_range: tuple = (0.0, 1.2)
    mutation_scale: float = 2.0
    generations: int = 200
    elitism: int = 2
    seed: int = 0
    stop_fitness: float = 1e-3
    failure_penalty: float = 1.0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        for name in ("crossover_prob", "mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.r_range
        if not lo < hi:
            raise ValueError("r_range lower bound must be below the upper bound")
        if self.mutation_scale < 0:
            raise ValueError("mutation_scale must be non-negative")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["r_range"] = list(self.r_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GaConfig":
        d = dict(d)
        if "r_range" in d:
            d["r_range"] = tuple(d["r_range"])
        return cls(**d)


@dataclass
class Individual:
    """``height`` is None until evaluated and NaN when evaluation failed."""

    genome: np.ndarray
    height: float | None = None
    fitness: float | None = None

    @property
    def evaluated(self) -> bool:
        return self.height is not None

    def copy(self) -> "Individual":
        return Individual(self.genome.copy(), self.height, self.fitness)


@dataclass
class GenerationStats:
    generation: int
    best: float
    median: float
    mean: float
    within: dict
    best_height: float
    evaluations: int = 0

    def row(self) -> list:
        return [self.generation, self.best, self.median, self.mean] + [self.within[d] for d in DELTAS]


@dataclass
class Population:
    generation: int
    individuals: list
    stats: GenerationStats | None = None

    @property
    def genomes(self) -> np.ndarray:
        return np.stack([ind.genome for ind in self.individuals])

    @property
    def heights(self) -> np.ndarray:
        return np.array([np.nan if ind.height is None else ind.height for ind in self.individuals])

    def best(self) -> Individual:
        return min(self.individuals, key=lambda ind: ind.fitness)


@dataclass
class GaResult:
    history: list
    config: GaConfig
    target: float
    evaluations: int
    stopped_early: bool = False

    @property
    def initial(self) -> Population:
        return self.history[0]

    @property
    def final(self) -> Population:
        return self.history[-1]


def fitness(height: float, target: float) -> float:
    """Absolute height error (m); the L2 norm of a scalar residual."""
    if not (math.isfinite(height) and math.isfinite(target)):
        raise ValueError("fitness needs finite height and target")
    return abs(target - height)


def within_fraction(fitnesses, delta: float) -> float:
    f = np.asarray(fitnesses, dtype=float)
    return float(np.mean(f <= delta)) if f.size else 0.0


def init_population(corpus: Sequence, n: int, seed: int = 0) -> Population:
    """Sort (genome, height) pairs by height and draw one member from each of
    ``n`` contiguous rank intervals.  Intervals have size N // n and the first
    N % n of them take one extra member."""
    N = len(corpus)
    if n < 1:
        raise ValueError("population size must be positive")
    if N < n:
        raise ValueError(f"corpus of {N} is smaller than population size {n}")
    heights = np.array([float(h) for _, h in corpus])
    order = np.argsort(heights, kind="stable")
    base, extra = divmod(N, n)
    rng = np.random.default_rng(seed)
    out = []
    start = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        k = order[start + int(rng.integers(size))]
        genome, h = corpus[k]
        out.append(Individual(np.array(genome, dtype=np.float64).ravel(), float(h)))
        start += size
    return Population(0, out)


def line_crossover(p1, p2, rng: np.random.Generator | None = None, r_range=(0.0, 1.2), r: float | None = None):
    """Child ``r*p1 + (1-r)*p2`` with one scalar ``r`` per child.  Components
    where the parents agree are copied exactly."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ValueError(f"genome shapes differ: {p1.shape} vs {p2.shape}")
    if r is None:
        r = rng.uniform(*r_range)
    return np.where(p1 == p2, p1, r * p1 + (1.0 - r) * p2)


def mutate(genome, prob: float, scale: float, spread, rng: np.random.Generator):
    """Add N(0, (scale*spread_j)^2) to each component with probability ``prob``.

    Both random arrays are drawn whatever ``prob`` is, so the stream advances
    identically for every individual.
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    genome = np.asarray(genome, dtype=np.float64)
    fire = rng.random(genome.shape) < prob
    noise = rng.standard_normal(genome.shape) * (scale * np.asarray(spread, dtype=np.float64))
    return np.where(fire, genome + noise, genome)


def _tournament(fit: np.ndarray, rng) -> int:
    a, b = rng.integers(len(fit), size=2)
    return int(a) if fit[a] <= fit[b] else int(b)


class _Cache:
    def __init__(self):
        self.heights = {}
        self.calls = 0

    def evaluate(self, individuals: Iterable[Individual], evaluator, map_fn) -> None:
        todo = {}
        for ind in individuals:
            if ind.height is not None:
                continue
            key = ind.genome.tobytes()
            if key in self.heights:
                ind.height = self.heights[key]
            else:
                todo.setdefault(key, ind.genome)
        if todo:
            keys = list(todo)
            results = list(map_fn(_safe(evaluator), [todo[k] for k in keys]))
            self.calls += len(keys)
            for k, h in zip(keys, results):
                self.heights[k] = h
            for ind in individuals:
                if ind.height is None:
                    ind.height = self.heights[ind.genome.tobytes()]


class _safe:
    """Picklable wrapper turning evaluator exceptions into NaN heights."""

    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, genome):
        try:
            h = float(self.evaluator(genome))
        except Exception as exc:  # noqa: BLE001 - any failure is penalized, not fatal
            log.warning("evaluation failed: %s", exc)
            return float("nan")
        if not math.isfinite(h):
            log.warning("evaluator returned non-finite height %r", h)
            return float("nan")
        return h


def _score(pop: Population, target: float, penalty: float) -> None:
    ok = [fitness(ind.height, target) for ind in pop.individuals if math.isfinite(ind.height)]
    worst = max(ok) if ok else abs(target)
    for ind in pop.individuals:
        ind.fitness = fitness(ind.height, target) if math.isfinite(ind.height) else worst + penalty


def _stats(pop: Population, evaluations: int) -> GenerationStats:
    f = np.array([ind.fitness for ind in pop.individuals])
    best = pop.individuals[int(np.argmin(f))]
    return GenerationStats(pop.generation, float(f.min()), float(np.median(f)), float(f.mean()),
                           {d: within_fraction(f, d) for d in DELTAS}, float(best.height), evaluations)


def _sorted(pop: Population) -> Population:
    order = sorted(range(len(pop.individuals)), key=lambda i: (pop.individuals[i].fitness, i))
    return Population(pop.generation, [pop.individuals[i] for i in order], pop.stats)


def _snapshot(pop: Population) -> Population:
    return Population(pop.generation, [ind.copy() for ind in pop.individuals], pop.stats)


def evolve(population: Population, evaluator: Callable, config: GaConfig, target: float,
           map_fn: Callable = map, progress: Callable | None = None) -> GaResult:
    """Run the generational loop.

    ``evaluator`` maps a genome to a landing height; ``map_fn`` (e.g. an
    executor's ordered ``map``) evaluates a list of genomes, so evaluation
    may be concurrent while all random draws stay on one seeded stream.
    """
    if len(population.individuals) != config.population_size:
        raise ValueError(f"population has {len(population.individuals)} members, "
                         f"config expects {config.population_size}")
    rng = np.random.default_rng(config.seed)
    cache = _Cache()
    pop = Population(population.generation, [ind.copy() for ind in population.individuals])
    n = config.population_size
    history = []
    stopped = False
    while True:
        cache.evaluate(pop.individuals, evaluator, map_fn)
        _score(pop, target, config.failure_penalty)
        pop = _sorted(pop)
        pop.stats = _stats(pop, cache.calls)
        history.append(_snapshot(pop))
        if progress is not None:
            progress(pop.stats)
        log.debug("generation %d best %.4f median %.4f", pop.generation, pop.stats.best, pop.stats.median)
        if pop.generation - population.generation >= config.generations:
            break
        if pop.stats.best < config.stop_fitness:
            stopped = True
            break
        genomes = pop.genomes
        spread = genomes.std(axis=0)
        fit = np.array([ind.fitness for ind in pop.individuals])
        children = [ind.copy() for ind in pop.individuals[:config.elitism]]
        while len(children) < n:
            a, b = _tournament(fit, rng), _tournament(fit, rng)
            if fit[b] < fit[a]:
                a, b = b, a
            cross = rng.random() < config.crossover_prob
            r = rng.uniform(*config.r_range)
            child = line_crossover(genomes[a], genomes[b], r=r) if cross else genomes[a].copy()
            child = mutate(child, config.mutation_prob, config.mutation_scale, spread, rng)
            children.append(Individual(child))
        pop = Population(pop.generation + 1, children)
    return GaResult(history, config, float(target), cache.calls, stopped)


# ---------------------------------------------------------------------------
# persistence


def write_generation_csv(history: Sequence[Population], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best", "median", "mean"] + [f"within_{d}" for d in DELTAS])
        for pop in history:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in pop.stats.row()])


def read_generation_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "generation" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_population(pop: Population, path) -> None:
    """``POP1``, u32 count, u32 genome length, f32 genomes, f64 heights."""
    g = pop.genomes
    out = bytearray(_POP_MAGIC)
    out += struct.pack("<II", *g.shape)
    out += g.astype("<f4").tobytes(order="C")
    out += pop.heights.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_population(path, generation: int = 0) -> Population:
    data = Path(path).read_bytes()
    if data[:4] != _POP_MAGIC:
        raise ValueError(f"{path}: not a population snapshot")
    n, m = struct.unpack_from("<II", data, 4)
    expect = 12 + 4 * n * m + 8 * n
    if len(data) != expect:
        raise ValueError(f"{path}: expected {expect} bytes, found {len(data)}")
    g = np.frombuffer(data, dtype="<f4", count=n * m, offset=12).reshape(n, m).astype(np.float64)
    h = np.frombuffer(data, dtype="<f8", count=n, offset=12 + 4 * n * m)
    return Population(generation, [Individual(g[i].copy(), None if np.isnan(h[i]) else float(h[i]))
                                   for i in range(n)])


__all__ = ["DELTAS", "GaConfig", "GaResult", "GenerationStats", "Individual", "Population", "evolve", "fitness",
           "init_population", "line_crossover", "load_population", "mutate", "read_generation_csv",
           "save_population", "within_fraction", "write_generation_csv"]
