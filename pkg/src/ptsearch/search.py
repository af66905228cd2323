"""Aging evolution over P/T genotypes.

Each generation samples ``m`` members, mutates the fittest, evaluates the
child, appends it and evicts the oldest member.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .train import DivergedError

log = logging.getLogger(__name__)

Evaluator = Callable[[str, int], "tuple[float, float]"]


class MutationKind(str, Enum):
    ADD_P = "AddP"
    ADD_T = "AddT"
    P_TO_T = "PtoT"
    T_TO_P = "TtoP"


@dataclass
class SearchConfig:
    k: int = 15
    m: int = 3
    generations: int = 80
    epochs: int = 70
    init_len: tuple[int, int] = (2, 8)
    max_len: int = 20
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("population size k must be >= 1")
        if not 1 <= self.m <= self.k:
            raise ValueError(f"tournament size m must satisfy 1 <= m <= k (m={self.m}, k={self.k})")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        lo, hi = self.init_len
        if not 1 <= lo <= hi:
            raise ValueError("init_len must satisfy 1 <= lo <= hi")
        if self.max_len < lo:
            raise ValueError("max_len must be >= the minimum initial length")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class Individual:
    genotype: str
    val_accuracy: float
    test_accuracy: float
    birth_index: int
    diverged: bool = False


@dataclass
class Population:
    k: int
    members: list[Individual] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def push(self, child: Individual) -> Individual | None:
        """Append ``child``; once over capacity evict and return the oldest."""
        self.members.append(child)
        if len(self.members) > self.k:
            oldest = min(range(len(self.members)), key=lambda i: self.members[i].birth_index)
            return self.members.pop(oldest)
        return None


@dataclass
class LogRecord:
    gen: int
    parent: str
    mutation: str
    child: str
    val_acc: float
    test_acc: float
    seconds: float
    diverged: bool = False

    def replay_key(self) -> tuple:
        """Fields that must match across seeded re-runs (wall time excluded)."""
        return (self.gen, self.parent, self.mutation, self.child, self.val_acc, self.test_acc, self.diverged)


class SearchLog(list):
    """Append-only list of :class:`LogRecord`, one per generation."""

    def to_ndjson(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")

    @classmethod
    def from_ndjson(cls, path: str | os.PathLike) -> "SearchLog":
        with open(path, encoding="utf-8") as fh:
            return cls(LogRecord(**json.loads(line)) for line in fh if line.strip())


@dataclass
class SearchResult:
    best: Individual
    top5: list[Individual]
    log: SearchLog
    history: list[Individual]
    population: Population


# --------------------------------------------------------------------------
# primitives


def random_genotype(rng: np.random.Generator, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    return "".join(np.where(rng.random(length) < 0.5, "P", "T"))


def applicable_mutations(genotype: str, max_len: int) -> list[MutationKind]:
    kinds = []
    if len(genotype) < max_len:
        kinds += [MutationKind.ADD_P, MutationKind.ADD_T]
    if "P" in genotype:
        kinds.append(MutationKind.P_TO_T)
    if "T" in genotype:
        kinds.append(MutationKind.T_TO_P)
    return kinds


def apply_mutation(genotype: str, kind: MutationKind, rng: np.random.Generator) -> str:
    if kind is MutationKind.ADD_P:
        return genotype + "P"
    if kind is MutationKind.ADD_T:
        return genotype + "T"
    src, dst = ("P", "T") if kind is MutationKind.P_TO_T else ("T", "P")
    positions = [i for i, op in enumerate(genotype) if op == src]
    if not positions:
        raise ValueError(f"{kind.value} is not applicable to {genotype!r}")
    i = positions[int(rng.integers(len(positions)))]
    return genotype[:i] + dst + genotype[i + 1 :]


def mutate(genotype: str, rng: np.random.Generator, max_len: int = 20) -> tuple[str, MutationKind]:
    """One uniformly chosen applicable mutation: appends go to the end,
    replacements hit a uniformly chosen position of the required type."""
    kinds = applicable_mutations(genotype, max_len)
    if not kinds:
        raise ValueError(f"no applicable mutation for {genotype!r}")
    kind = kinds[int(rng.integers(len(kinds)))]
    return apply_mutation(genotype, kind, rng), kind


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def sample_parent(pop: Population, m: int, rng: np.random.Generator) -> Individual:
    """Tournament of ``m`` members drawn without replacement; the oldest wins ties."""
    if not 1 <= m <= len(pop):
        raise ValueError(f"tournament size {m} outside [1, {len(pop)}]")
    picks = rng.choice(len(pop), size=m, replace=False)
    contenders = [pop.members[i] for i in picks]
    return max(contenders, key=lambda ind: (ind.val_accuracy, -ind.birth_index))


def child_seed(search_seed: int, birth_index: int) -> int:
    return int(np.random.SeedSequence([search_seed, birth_index]).generate_state(1)[0])


def _score(evaluator: Evaluator, genotype: str, seed: int) -> tuple[float, float, bool, float]:
    start = time.perf_counter()
    try:
        val, test = evaluator(genotype, seed)
        diverged = not (math.isfinite(val) and math.isfinite(test))
    except DivergedError as e:
        log.warning("%s diverged: %s", genotype, e)
        val, test, diverged = 0.0, 0.0, True
    if diverged:
        val, test = 0.0, 0.0
    return float(val), float(test), diverged, time.perf_counter() - start


def _evaluate_many(evaluator: Evaluator, jobs: list[tuple[str, int]], pool) -> list[tuple]:
    if pool is None:
        return [_score(evaluator, g, s) for g, s in jobs]
    futures = [pool.submit(_score, evaluator, g, s) for g, s in jobs]
    return [f.result() for f in futures]


# --------------------------------------------------------------------------
# the loop


class AgingEvolution:
    """Stateful driver; ``run_search`` is the one-call entry point."""

    def __init__(self, cfg: SearchConfig, evaluator: Evaluator, pool=None):
        self.cfg = cfg
        self.evaluator = evaluator
        self.pool = pool
        self.rng = np.random.default_rng(cfg.seed)
        self.population = Population(cfg.k)
        self.log = SearchLog()
        self.history: list[Individual] = []
        self._births = 0
        self.generation = 0

    def _born(self, genotype: str, val: float, test: float, diverged: bool) -> Individual:
        ind = Individual(genotype, val, test, self._births, diverged)
        self._births += 1
        self.history.append(ind)
        return ind

    def init_population(self) -> Population:
        cfg = self.cfg
        lo, hi = cfg.init_len[0], min(cfg.init_len[1], cfg.max_len)
        genotypes: list[str] = []
        for _ in range(cfg.k):
            for _attempt in range(100):
                g = random_genotype(self.rng, lo, hi)
                if g not in genotypes:
                    break
            genotypes.append(g)
        jobs = [(g, child_seed(cfg.seed, self._births + i)) for i, g in enumerate(genotypes)]
        for g, (val, test, div, _) in zip(genotypes, _evaluate_many(self.evaluator, jobs, self.pool)):
            self.population.push(self._born(g, val, test, div))
        return self.population

    def step(self, batch: int = 1) -> list[Individual]:
        """Run ``batch`` generations whose children are evaluated together.

        With ``batch=1`` this is plain sequential aging evolution.
        """
        plans = []
        for _ in range(batch):
            parent = sample_parent(self.population, self.cfg.m, self.rng)
            child, kind = mutate(parent.genotype, self.rng, self.cfg.max_len)
            plans.append((parent, child, kind))
        jobs = [(c, child_seed(self.cfg.seed, self._births + i)) for i, (_, c, _) in enumerate(plans)]
        children = []
        for (parent, child, kind), (val, test, div, secs) in zip(plans, _evaluate_many(self.evaluator, jobs, self.pool)):
            self.generation += 1
            ind = self._born(child, val, test, div)
            self.population.push(ind)
            self.log.append(LogRecord(self.generation, parent.genotype, kind.value, child, val, test, round(secs, 6), div))
            log.info("gen %d: %s -[%s]-> %s val=%.4f", self.generation, parent.genotype, kind.value, child, val)
            children.append(ind)
        return children


def top_unique(individuals: Iterable[Individual], n: int = 5) -> list[Individual]:
    """Best ``n`` distinct genotypes by validation accuracy (older wins ties)."""
    ranked = sorted(individuals, key=lambda ind: (-ind.val_accuracy, ind.birth_index))
    seen, out = set(), []
    for ind in ranked:
        if ind.genotype in seen:
            continue
        seen.add(ind.genotype)
        out.append(ind)
        if len(out) == n:
            break
    return out


def run_search(cfg: SearchConfig, evaluator: Evaluator) -> SearchResult:
    """Initialise, evolve for ``cfg.generations`` steps, return the best ever seen.

    With ``cfg.workers > 1`` evaluations run in a process pool and the
    generations are processed in batches of ``workers``.
    """
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        evo = AgingEvolution(cfg, evaluator, pool)
        evo.init_population()
        remaining = cfg.generations
        while remaining > 0:
            batch = min(cfg.workers, remaining)
            evo.step(batch)
            remaining -= batch
    finally:
        if pool is not None:
            pool.shutdown()
    top5 = top_unique(evo.history, 5)
    return SearchResult(top5[0], top5, evo.log, evo.history, evo.population)
