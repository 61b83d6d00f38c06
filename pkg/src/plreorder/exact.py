"""Exact computations over small symmetric groups.

For n small enough to enumerate all n! permutations, these routines provide
ground truth against which samplers and fitted models are checked: exact
probability tables for (mixtures of) Plackett-Luce distributions, total
variation distance between tables, an explicit construction that places one
sharply concentrated component on each support point of an arbitrary target
distribution, and a multi-start search for the single-component distribution
closest to a target in total variation.

Probabilities are indexed by the lexicographic order of permutations, the
order produced by ``itertools.permutations(range(n))``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import (
    MixturePL,
    Permutation,
    PLParams,
    floored_simplex,
    order_log_probs,
)
from .scoring import Example, ScoreFunction

MAX_ENUM_ITEMS = 8
MAX_CONSTRUCT_ITEMS = 6
MAX_FIT_ITEMS = 5

_MAX_SEPARATION_SCALE = 2.0**10


class ConstructionError(RuntimeError):
    """The requested approximation accuracy could not be reached."""


@lru_cache(maxsize=None)
def all_orders(n: int) -> np.ndarray:
    """All permutations of ``range(n)`` in lexicographic order, as an [n!, n] array."""
    if not 1 <= n <= MAX_ENUM_ITEMS:
        raise ValueError(f"exact enumeration is capped at {MAX_ENUM_ITEMS} items")
    orders = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    orders.flags.writeable = False
    return orders


@lru_cache(maxsize=None)
def _order_index(n: int) -> dict[tuple[int, ...], int]:
    return {tuple(row): i for i, row in enumerate(all_orders(n))}


@dataclass(eq=False)
class ExactDistribution:
    """A full probability table over the n! permutations of n items."""

    n: int
    probs: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n <= MAX_ENUM_ITEMS:
            raise ValueError(f"exact enumeration is capped at {MAX_ENUM_ITEMS} items")
        probs = np.array(self.probs, dtype=np.float64)
        expected = math.factorial(self.n)
        if probs.shape != (expected,):
            raise ValueError(f"expected {expected} probabilities, got shape {probs.shape}")
        if np.any(probs < -1e-12):
            raise ValueError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > 1e-10:
            raise ValueError("probabilities must sum to 1")
        probs = np.clip(probs, 0.0, None)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def prob(self, pi: Permutation) -> float:
        if pi.n != self.n:
            raise ValueError("permutation size does not match the table")
        return float(self.probs[_order_index(self.n)[pi.order]])

    def support(self) -> list[tuple[tuple[int, ...], float]]:
        orders = all_orders(self.n)
        return [
            (tuple(orders[i]), float(p)) for i, p in enumerate(self.probs) if p > 0.0
        ]

    @classmethod
    def uniform(cls, n: int) -> "ExactDistribution":
        size = math.factorial(n)
        return cls(n, np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, pi: Permutation) -> "ExactDistribution":
        probs = np.zeros(math.factorial(pi.n))
        probs[_order_index(pi.n)[pi.order]] = 1.0
        return cls(pi.n, probs)

    @classmethod
    def from_table(cls, n: int, table: Mapping[tuple[int, ...], float]) -> "ExactDistribution":
        probs = np.zeros(math.factorial(n))
        index = _order_index(n)
        for order, p in table.items():
            probs[index[tuple(order)]] = p
        return cls(n, probs)


def enumerate_pl(params: PLParams) -> ExactDistribution:
    """Exact probability table of a single PL distribution."""
    orders = all_orders(params.n)
    return ExactDistribution(params.n, np.exp(order_log_probs(params.logits, orders)))


def enumerate_mixture(mix: MixturePL) -> ExactDistribution:
    """Exact probability table of a PL mixture."""
    orders = all_orders(mix.n)
    logs = np.stack([order_log_probs(c.logits, orders) for c in mix.components], axis=1)
    logs = logs + np.log(mix.weights)[None, :]
    return ExactDistribution(mix.n, np.exp(np.logaddexp.reduce(logs, axis=1)))


def empirical_distribution(perms: Iterable[Permutation], n: int) -> ExactDistribution:
    """Frequency table of observed permutations."""
    index = _order_index(n)
    counts = np.zeros(math.factorial(n))
    total = 0
    for pi in perms:
        counts[index[pi.order]] += 1
        total += 1
    if total == 0:
        raise ValueError("no permutations observed")
    return ExactDistribution(n, counts / total)


def total_variation(p: ExactDistribution, q: ExactDistribution) -> float:
    """``0.5 * sum |p - q|`` over all permutations; in [0, 1]."""
    if p.n != q.n:
        raise ValueError("distributions cover different item counts")
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def _mode_mass(n: int, scale: float) -> float:
    """Probability that logits ``-scale * rank`` reproduce their own ordering."""
    theta = -scale * np.arange(n, dtype=np.float64)
    return float(np.exp(order_log_probs(theta, np.arange(n, dtype=np.intp)[None, :])[0]))


def _separation_scale(n: int, epsilon: float) -> float:
    """Smallest doubling scale whose component keeps mass 1 - eps/2 on its mode."""
    scale = 5.0
    while scale <= _MAX_SEPARATION_SCALE:
        if _mode_mass(n, scale) >= 1.0 - epsilon / 2.0:
            return scale
        scale *= 2.0
    raise ConstructionError(
        f"no separation scale <= {_MAX_SEPARATION_SCALE:g} reaches accuracy {epsilon:g}"
    )


def construct_dense_mixture(target: ExactDistribution, epsilon: float) -> MixturePL:
    """A PL mixture within total variation ``epsilon`` of an arbitrary target.

    One sharply concentrated component is placed on each support permutation
    (logits ``-scale * rank``), weighted by the target probability.  Weights
    below the mixture floor are lifted and renormalized.  Raises
    ConstructionError if the verified distance is not below ``epsilon``.
    """
    if target.n > MAX_CONSTRUCT_ITEMS:
        raise ValueError(f"construction is capped at {MAX_CONSTRUCT_ITEMS} items")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    support = target.support()
    scale = _separation_scale(target.n, epsilon)
    components = []
    weights = []
    for order, p in support:
        ranks = Permutation(order).ranks().astype(np.float64)
        theta = -scale * ranks
        components.append(PLParams(theta - theta.mean()))
        weights.append(p)
    mixture = MixturePL(floored_simplex(np.asarray(weights)), tuple(components))
    achieved = total_variation(enumerate_mixture(mixture), target)
    if achieved >= epsilon:
        raise ConstructionError(
            f"construction reached total variation {achieved:.4g}, needed < {epsilon:g}"
        )
    return mixture


def best_single_pl_fit(
    target: ExactDistribution, starts: int = 20
) -> tuple[PLParams, float]:
    """Single PL distribution closest to ``target`` in total variation.

    Multi-start coordinate descent over the n-1 free logits (the last logit
    is the negated sum, keeping the vector centered): steps start at 4.0,
    halve on sweeps without improvement, and stop below 1e-3.  The start
    points are the origin plus fixed pseudorandom draws, so the result is
    deterministic.  Returns the best parameters and their achieved distance.
    """
    n = target.n
    if n > MAX_FIT_ITEMS:
        raise ValueError(f"single-component search is capped at {MAX_FIT_ITEMS} items")
    if starts < 1:
        raise ValueError("at least one start is required")
    orders = all_orders(n)
    gen = np.random.default_rng(0)

    def distance(free: np.ndarray) -> float:
        theta = np.append(free, -free.sum())
        probs = np.exp(order_log_probs(theta, orders))
        return 0.5 * float(np.abs(probs - target.probs).sum())

    best_free = np.zeros(n - 1)
    best_value = distance(best_free)
    for start in range(starts):
        free = np.zeros(n - 1) if start == 0 else gen.uniform(-20.0, 20.0, n - 1)
        value = distance(free)
        step = 4.0
        while step >= 1e-3:
            moved = False
            for d in range(n - 1):
                for sign in (1.0, -1.0):
                    candidate = free.copy()
                    candidate[d] = float(np.clip(candidate[d] + sign * step, -20.0, 20.0))
                    cv = distance(candidate)
                    if cv < value - 1e-15:
                        free, value, moved = candidate, cv, True
            if not moved:
                step *= 0.5
        if value < best_value:
            best_free, best_value = free, value
    theta = np.append(best_free, -best_free.sum())
    return PLParams(theta), best_value


def exhaustive_argmax(
    scorer: ScoreFunction, n: int, dataset: Sequence[Example] = ()
) -> tuple[Permutation, float]:
    """Score every permutation; ties keep the lexicographically smallest."""
    if not 1 <= n <= MAX_CONSTRUCT_ITEMS:
        raise ValueError(f"exhaustive search is capped at {MAX_CONSTRUCT_ITEMS} items")
    best_pi = None
    best_score = -math.inf
    for order in itertools.permutations(range(n)):
        pi = Permutation(order)
        score = float(scorer.evaluate(pi, dataset))
        if score > best_score:
            best_pi, best_score = pi, score
    return best_pi, best_score
