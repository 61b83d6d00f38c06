"""Cross-entropy-style search for high-scoring permutations.

Each iteration draws a batch of permutations from the current (mixture of)
Plackett-Luce distribution, scores them on a subsample of the inner example
pool, keeps the top fraction as elites, and updates the distribution with
one of three rules (rank-EMA, blended MLE, blended mixture EM).  After the
last iteration a handful of fresh draws are scored on the held-out
validation split and the best one is returned.

Randomness is split into four independent streams derived from the run seed
(permutation sampling, pool subsampling, final draws, mixture
initialization), so runs with equal configuration are bit-identical.
Repeated (permutation, dataset) scores are served from a memo, which keeps
the number of scorer invocations within the sampling budget.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distributions import (
    MixturePL,
    Permutation,
    PLParams,
    RandomSource,
    mixture_sample,
    sample_batch,
)
from .fitting import (
    EliteSet,
    EMAConfig,
    GradientFitConfig,
    em_fit,
    ema_blend,
    ema_rank_update,
    mle_fit,
    select_indices,
)
from .scoring import DataSplits, Example, ScoreFunction, ScoringError

UPDATE_KINDS = ("ema", "mle", "em")

_EM_INIT_SIGMA = 0.25
_VALIDATION_KEY = ("validation",)


@dataclass
class OptimizerConfig:
    """Search settings; defaults match the reference operating point."""

    n_items: int
    update: str = "ema"
    iterations: int = 15
    batch_size: int = 15
    elite_fraction: float = 0.2
    final_draws: int = 10
    mixture_components: int = 4
    em_rounds: int = 3
    min_component_weight: float = 1e-3
    weighted_elites: bool = False
    train_minibatch: int = 200
    seed: int = 0
    ema: EMAConfig = field(default_factory=EMAConfig)
    grad: GradientFitConfig = field(default_factory=GradientFitConfig)

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be >= 1")
        if self.update not in UPDATE_KINDS:
            raise ValueError(f"update must be one of {UPDATE_KINDS}")
        if self.iterations < 1 or self.batch_size < 1 or self.final_draws < 1:
            raise ValueError("iterations, batch_size, and final_draws must be >= 1")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must lie in (0, 1]")
        if self.mixture_components < 1:
            raise ValueError("mixture_components must be >= 1")
        if self.em_rounds < 1:
            raise ValueError("em_rounds must be >= 1")
        if self.train_minibatch < 1:
            raise ValueError("train_minibatch must be >= 1")

    @property
    def sample_budget(self) -> int:
        """Total permutations drawn: iteration batches plus final draws."""
        return self.iterations * self.batch_size + self.final_draws


@dataclass(frozen=True)
class IterationRecord:
    """One optimization iteration: every sample, its score, and the update."""

    iteration: int
    samples: tuple[tuple[int, ...], ...]
    scores: tuple[float, ...]
    elite_indices: tuple[int, ...]
    params: dict
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "type": "iteration",
            "iteration": self.iteration,
            "samples": [list(s) for s in self.samples],
            "scores": list(self.scores),
            "elite_indices": list(self.elite_indices),
            "params": self.params,
            "wall_ms": self.wall_ms,
        }


@dataclass(frozen=True)
class FinalRecord:
    """Validation phase: candidate draws, their scores, and the selection."""

    draws: tuple[tuple[int, ...], ...]
    scores: tuple[float, ...]
    selected: tuple[int, ...]
    scorer_calls: int
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "type": "final",
            "draws": [list(d) for d in self.draws],
            "scores": list(self.scores),
            "selected": list(self.selected),
            "scorer_calls": self.scorer_calls,
            "wall_ms": self.wall_ms,
        }


@dataclass
class ScoredTrace:
    """Complete record of a run: per-iteration records plus the final phase."""

    iterations: list[IterationRecord] = field(default_factory=list)
    final: FinalRecord | None = None

    def records(self) -> list[dict]:
        rows = [r.to_dict() for r in self.iterations]
        if self.final is not None:
            rows.append(self.final.to_dict())
        return rows

    def write_jsonl(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for row in self.records():
                handle.write(json.dumps(row) + "\n")


def snapshot_params(dist: PLParams | MixturePL) -> dict:
    """JSON-safe view of the current distribution parameters."""
    if isinstance(dist, MixturePL):
        return {
            "kind": "mixture",
            "weights": [float(w) for w in dist.weights],
            "components": [[float(x) for x in c.logits] for c in dist.components],
        }
    return {"kind": "pl", "logits": [float(x) for x in dist.logits]}


def params_from_snapshot(snapshot: dict) -> PLParams | MixturePL:
    """Inverse of snapshot_params."""
    if snapshot["kind"] == "mixture":
        components = tuple(PLParams(np.asarray(c)) for c in snapshot["components"])
        return MixturePL(np.asarray(snapshot["weights"]), components)
    return PLParams(np.asarray(snapshot["logits"]))


class _ScoreMemo:
    """Memoizes scorer calls by (permutation, dataset key)."""

    def __init__(self, scorer: ScoreFunction):
        self._scorer = scorer
        self._cache: dict[tuple, float] = {}
        self.calls = 0

    def evaluate(self, pi: Permutation, dataset: Sequence[Example], key: tuple) -> float:
        cache_key = (pi.order, key)
        if cache_key not in self._cache:
            self._cache[cache_key] = float(self._scorer.evaluate(pi, dataset))
            self.calls += 1
        return self._cache[cache_key]


def select_elites(
    samples: Sequence[Permutation],
    scores: Sequence[float],
    fraction: float,
    weighted: bool = False,
) -> EliteSet:
    """Top ``ceil(fraction * batch)`` samples by score, ties to earlier draws."""
    if len(samples) != len(scores):
        raise ValueError("samples and scores must align")
    indices = select_indices(scores, fraction)
    perms = tuple(samples[i] for i in indices)
    kept = np.asarray([scores[i] for i in indices], dtype=np.float64)
    weights = kept.copy() if weighted else None
    return EliteSet(perms, scores=kept, weights=weights)


def _draw(dist: PLParams | MixturePL, count: int, rng: RandomSource) -> list[Permutation]:
    if isinstance(dist, MixturePL):
        return [mixture_sample(dist, rng) for _ in range(count)]
    return sample_batch(dist, count, rng)


def _initial_distribution(config: OptimizerConfig, rng: RandomSource) -> PLParams | MixturePL:
    n = config.n_items
    if config.update != "em":
        return PLParams.uniform(n)
    components = []
    for _ in range(config.mixture_components):
        # Small noise breaks the symmetry between components.
        noise = rng.generator.normal(0.0, _EM_INIT_SIGMA, size=n)
        components.append(PLParams(noise - noise.mean()))
    weights = np.full(config.mixture_components, 1.0 / config.mixture_components)
    return MixturePL(weights, tuple(components))


def _updated(
    dist: PLParams | MixturePL, elites: EliteSet, config: OptimizerConfig
) -> PLParams | MixturePL:
    if config.update == "ema":
        return ema_rank_update(dist, elites, config.ema)
    if config.update == "mle":
        fitted = mle_fit(elites, init=dist, config=config.grad)
        return ema_blend(dist, fitted, config.ema.alpha)
    # The mixture refit is already smoothed by warm-starting each component's
    # inner fit from its previous logits, so its output is used directly.
    return em_fit(
        elites,
        init=dist,
        inner=config.grad,
        rounds=config.em_rounds,
        weight_floor=config.min_component_weight,
    )


def _train_minibatch(
    splits: DataSplits, size: int, rng: RandomSource
) -> tuple[list[Example], tuple]:
    pool = splits.inner_pool
    if len(pool) <= size:
        return list(pool), ("train", "full")
    chosen = np.sort(rng.generator.choice(len(pool), size=size, replace=False))
    return [pool[i] for i in chosen], ("train", *(int(i) for i in chosen))


def _score_candidates(
    draws: Sequence[Permutation],
    memo: _ScoreMemo,
    dataset: Sequence[Example],
    key: tuple,
) -> tuple[Permutation, list[float]]:
    scores = [memo.evaluate(pi, dataset, key) for pi in draws]
    # argmax returns the first maximum, so ties keep the earliest draw.
    best = int(np.argmax(scores))
    return draws[best], scores


def run(
    config: OptimizerConfig, scorer: ScoreFunction, splits: DataSplits
) -> tuple[Permutation, ScoredTrace]:
    """Full optimization run; returns the selected permutation and its trace."""
    root = RandomSource(config.seed)
    rng_sample = root.split(0)
    rng_minibatch = root.split(1)
    rng_final = root.split(2)
    rng_init = root.split(3)
    memo = _ScoreMemo(scorer)
    trace = ScoredTrace()

    if config.n_items == 1:
        # A single item has exactly one ordering; score it and stop.
        start = time.perf_counter()
        pi = Permutation.identity(1)
        score = memo.evaluate(pi, splits.validation, _VALIDATION_KEY)
        trace.final = FinalRecord(
            (pi.order,), (score,), pi.order, memo.calls,
            (time.perf_counter() - start) * 1e3,
        )
        return pi, trace

    dist = _initial_distribution(config, rng_init)
    for iteration in range(config.iterations):
        start = time.perf_counter()
        batch_examples, batch_key = _train_minibatch(splits, config.train_minibatch, rng_minibatch)
        samples = _draw(dist, config.batch_size, rng_sample)
        try:
            scores = [memo.evaluate(pi, batch_examples, batch_key) for pi in samples]
        except ScoringError as err:
            raise ScoringError(f"iteration {iteration}: {err}", iteration=iteration) from err
        indices = select_indices(scores, config.elite_fraction)
        kept = np.asarray([scores[i] for i in indices])
        elites = EliteSet(
            tuple(samples[i] for i in indices),
            scores=kept,
            weights=kept.copy() if config.weighted_elites else None,
        )
        dist = _updated(dist, elites, config)
        trace.iterations.append(
            IterationRecord(
                iteration=iteration,
                samples=tuple(pi.order for pi in samples),
                scores=tuple(float(s) for s in scores),
                elite_indices=tuple(indices),
                params=snapshot_params(dist),
                wall_ms=(time.perf_counter() - start) * 1e3,
            )
        )

    start = time.perf_counter()
    draws = _draw(dist, config.final_draws, rng_final)
    try:
        selected, final_scores = _score_candidates(draws, memo, splits.validation, _VALIDATION_KEY)
    except ScoringError as err:
        raise ScoringError(f"final selection: {err}", iteration=config.iterations) from err
    trace.final = FinalRecord(
        draws=tuple(pi.order for pi in draws),
        scores=tuple(final_scores),
        selected=selected.order,
        scorer_calls=memo.calls,
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    return selected, trace


def final_select(
    dist: PLParams | MixturePL,
    k_draws: int,
    scorer: ScoreFunction,
    dataset: Sequence[Example],
    rng: RandomSource,
) -> Permutation:
    """Draw ``k_draws`` candidates, score distinct ones once, return the best.

    Ties keep the earliest draw.
    """
    if k_draws < 1:
        raise ValueError("k_draws must be >= 1")
    memo = _ScoreMemo(scorer)
    draws = _draw(dist, k_draws, rng)
    selected, _ = _score_candidates(draws, memo, dataset, _VALIDATION_KEY)
    return selected


def baseline_static(n: int) -> Permutation:
    """The untouched order in which items were given."""
    return Permutation.identity(n)


def baseline_topk(
    n: int,
    budget: int,
    scorer: ScoreFunction,
    splits: DataSplits,
    rng: RandomSource,
) -> Permutation:
    """Best of ``budget`` uniform draws, scored on the validation split."""
    pi, _ = _run_topk(n, budget, scorer, splits, rng)
    return pi


def _run_topk(
    n: int,
    budget: int,
    scorer: ScoreFunction,
    splits: DataSplits,
    rng: RandomSource,
) -> tuple[Permutation, ScoredTrace]:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    memo = _ScoreMemo(scorer)
    start = time.perf_counter()
    draws = sample_batch(PLParams.uniform(n), budget, rng) if n > 1 else [Permutation.identity(1)]
    selected, scores = _score_candidates(draws, memo, splits.validation, _VALIDATION_KEY)
    trace = ScoredTrace()
    trace.final = FinalRecord(
        draws=tuple(pi.order for pi in draws),
        scores=tuple(scores),
        selected=selected.order,
        scorer_calls=memo.calls,
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    return selected, trace


def run_baseline(
    kind: str,
    n: int,
    scorer: ScoreFunction,
    splits: DataSplits,
    seed: int,
    budget: int = 235,
) -> tuple[Permutation, ScoredTrace]:
    """Run a baseline with the same outputs as an optimization run."""
    if kind == "static":
        memo = _ScoreMemo(scorer)
        start = time.perf_counter()
        pi = baseline_static(n)
        score = memo.evaluate(pi, splits.validation, _VALIDATION_KEY)
        trace = ScoredTrace()
        trace.final = FinalRecord(
            (pi.order,), (score,), pi.order, memo.calls,
            (time.perf_counter() - start) * 1e3,
        )
        return pi, trace
    if kind == "topk":
        rng = RandomSource(seed).split(0)
        return _run_topk(n, budget, scorer, splits, rng)
    raise ValueError(f"unknown baseline kind: {kind!r}")
