"""Plackett-Luce distributions over permutations of a fixed item set.

The Plackett-Luce (PL) model assigns probability to a full ordering
``pi = (pi_0, ..., pi_{n-1})`` through a sequential choice process: the item
at each rank is drawn from the not-yet-placed items with probability
proportional to ``exp(logit)``.  Equivalently

    log Pr(pi | theta) = sum_r [ theta[pi_r] - logsumexp_{j in R_r} theta[j] ]

where ``R_r`` is the set of items still available at rank ``r``.  The density
is invariant to adding a constant to all logits, so update routines keep
parameters centered (coordinates summing to zero).

Sampling uses the Gumbel perturb-and-sort identity: with
``g_i = -ln(-ln u_i)`` for ``u_i ~ Uniform(0, 1)``, sorting ``theta_i + g_i``
in descending order yields a PL(theta)-distributed permutation in one shot.

A mixture of K PL components (convex weights over K logit vectors) lifts the
independence-of-irrelevant-alternatives restriction of a single component
while keeping sampling cheap: draw a component index, then perturb and sort.

Conventions: items are 0-indexed; ``order[r]`` is the item placed at rank
``r``, with rank 0 the earliest position.  Ties in perturbed scores resolve
toward the lower item index so sampling is reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

LOGIT_CLIP = 20.0
MIN_COMPONENT_WEIGHT = 1e-3

_TINY = np.finfo(np.float64).tiny


class RandomSource:
    """Seeded random stream; equal seeds and call sequences give equal draws.

    Streams form a tree: ``split(i)`` derives an independent child stream
    from the parent's entropy and the index ``i``, so separate consumers
    (sampling, subsampling, initialization) can each own one stream without
    perturbing the others.
    """

    def __init__(self, seed: int, _sequence: SeedSequence | None = None):
        self.seed = int(seed)
        if _sequence is None:
            _sequence = SeedSequence(self.seed)
        self._sequence = _sequence
        self.generator = Generator(PCG64(self._sequence))

    def split(self, index: int) -> "RandomSource":
        key = self._sequence.spawn_key + (int(index),)
        child = SeedSequence(entropy=self._sequence.entropy, spawn_key=key)
        return RandomSource(self.seed, _sequence=child)

    def uniform_open(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        u = self.generator.random(shape)
        # Generator.random covers [0, 1); lift exact zeros so -ln(-ln u)
        # stays finite.
        return np.maximum(u, _TINY)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, key={self._sequence.spawn_key})"


@dataclass(frozen=True)
class Permutation:
    """An ordering of items ``{0, ..., n-1}``; ``order[r]`` is the item at rank r."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        object.__setattr__(self, "order", order)
        n = len(order)
        if n < 1:
            raise ValueError("permutation must contain at least one item")
        if sorted(order) != list(range(n)):
            raise ValueError(f"not a permutation of 0..{n - 1}: {order}")

    @property
    def n(self) -> int:
        return len(self.order)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def ranks(self) -> np.ndarray:
        """Inverse view: ``ranks()[item]`` is the rank position of ``item``."""
        r = np.empty(self.n, dtype=np.intp)
        r[list(self.order)] = np.arange(self.n)
        return r

    def reversed(self) -> "Permutation":
        return Permutation(tuple(reversed(self.order)))


@dataclass(frozen=True, eq=False)
class PLParams:
    """Logit vector of a Plackett-Luce distribution (one score per item)."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size < 1:
            raise ValueError("logits must be a non-empty 1-D vector")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def n(self) -> int:
        return int(self.logits.size)

    @classmethod
    def uniform(cls, n: int) -> "PLParams":
        return cls(np.zeros(n))


@dataclass(frozen=True, eq=False)
class MixturePL:
    """Convex mixture of Plackett-Luce components over a shared item set."""

    weights: np.ndarray
    components: tuple[PLParams, ...]

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        components = tuple(self.components)
        if not components:
            raise ValueError("mixture needs at least one component")
        if weights.ndim != 1 or weights.size != len(components):
            raise ValueError("one weight per component required")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(weights < MIN_COMPONENT_WEIGHT - 1e-12):
            raise ValueError(f"mixture weights must be >= {MIN_COMPONENT_WEIGHT}")
        n = components[0].n
        if any(c.n != n for c in components):
            raise ValueError("all components must share the same item count")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def n(self) -> int:
        return self.components[0].n

    @property
    def k(self) -> int:
        return len(self.components)


def floored_simplex(weights: np.ndarray, floor: float = MIN_COMPONENT_WEIGHT) -> np.ndarray:
    """Project non-negative weights onto the simplex with a per-coordinate floor.

    Coordinates that would land below the floor are pinned to it and the
    remaining mass is shared proportionally among the rest; naive
    floor-then-renormalize can push pinned coordinates back under the floor.
    """
    weights = np.asarray(weights, dtype=np.float64)
    k = weights.size
    if k < 1:
        raise ValueError("at least one weight is required")
    if floor * k > 1.0 + 1e-12:
        raise ValueError(f"floor {floor:g} is infeasible for {k} weights")
    if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    pinned = np.zeros(k, dtype=bool)
    for _ in range(k):
        free = ~pinned
        residual = 1.0 - floor * pinned.sum()
        total = float(weights[free].sum())
        if total <= 0.0:
            return np.full(k, 1.0 / k)
        candidate = weights * (residual / total)
        candidate[pinned] = floor
        newly = free & (candidate < floor)
        if not newly.any():
            return candidate
        pinned |= newly
    return np.full(k, 1.0 / k)


def suffix_logsumexp(values: np.ndarray) -> np.ndarray:
    """Running logsumexp over suffixes along the last axis.

    ``out[..., r] = logsumexp(values[..., r:])``, computed stably in one
    accumulating pass.
    """
    return np.logaddexp.accumulate(values[..., ::-1], axis=-1)[..., ::-1]


def order_log_probs(logits: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """PL log-probability for each row of ``orders`` (an [M, n] index array)."""
    t = np.asarray(logits, dtype=np.float64)[orders]
    return np.sum(t - suffix_logsumexp(t), axis=-1)


def log_prob(params: PLParams, pi: Permutation) -> float:
    """Log-probability of ``pi`` under PL(params); always <= 0."""
    if params.n != pi.n:
        raise ValueError(f"dimension mismatch: {params.n} logits vs {pi.n} items")
    t = params.logits[list(pi.order)]
    return float(np.sum(t - suffix_logsumexp(t)))


def center(params: PLParams) -> PLParams:
    """Shift logits to mean zero; leaves every log-probability unchanged."""
    return PLParams(params.logits - params.logits.mean())


def _sample_orders(logits: np.ndarray, count: int, rng: RandomSource) -> np.ndarray:
    u = rng.uniform_open((count, logits.size))
    gumbel = -np.log(-np.log(u))
    # Stable argsort on negated keys: ties fall to the lower item index.
    return np.argsort(-(logits + gumbel), axis=1, kind="stable")


def sample(params: PLParams, rng: RandomSource) -> Permutation:
    """One Gumbel perturb-and-sort draw from PL(params)."""
    return Permutation(tuple(_sample_orders(params.logits, 1, rng)[0]))


def sample_batch(params: PLParams, count: int, rng: RandomSource) -> list[Permutation]:
    """``count`` draws; consumes the stream exactly like ``count`` calls to sample()."""
    if count < 1:
        raise ValueError("count must be >= 1")
    orders = _sample_orders(params.logits, count, rng)
    return [Permutation(tuple(row)) for row in orders]


def mixture_log_prob(mix: MixturePL, pi: Permutation) -> float:
    """Log-probability of ``pi`` under the mixture, computed in the log domain."""
    if mix.n != pi.n:
        raise ValueError(f"dimension mismatch: {mix.n} items vs {pi.n}")
    per = np.array([log_prob(c, pi) for c in mix.components])
    return float(np.logaddexp.reduce(np.log(mix.weights) + per))


def _pick_component(weights: np.ndarray, rng: RandomSource) -> int:
    u = float(rng.uniform_open(1)[0])
    k = int(np.searchsorted(np.cumsum(weights), u, side="left"))
    return min(k, weights.size - 1)


def mixture_sample(mix: MixturePL, rng: RandomSource) -> Permutation:
    """Draw a component by weight, then perturb and sort its logits."""
    k = _pick_component(mix.weights, rng)
    return sample(mix.components[k], rng)


def mixture_sample_batch(mix: MixturePL, count: int, rng: RandomSource) -> list[Permutation]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [mixture_sample(mix, rng) for _ in range(count)]


def iia_choice_ratio(
    params: PLParams, a: int, b: int, prefix: Sequence[int] = ()
) -> float:
    """Ratio P(pick a next) / P(pick b next) among items left after ``prefix``.

    For a single PL component this ratio equals exp(theta_a - theta_b) no
    matter which items the prefix removed; mixtures break that constancy.
    """
    n = params.n
    taken = tuple(int(i) for i in prefix)
    pool = [a, b, *taken]
    if len(set(pool)) != len(pool) or any(not 0 <= i < n for i in pool):
        raise ValueError("a, b, and prefix must be distinct valid items")
    remaining = [i for i in range(n) if i not in taken]
    t = params.logits[remaining]
    lse = float(np.logaddexp.reduce(t))
    pa = np.exp(params.logits[a] - lse)
    pb = np.exp(params.logits[b] - lse)
    return float(pa / pb)


def greedy_permutation(dist: PLParams | MixturePL) -> Permutation:
    """Diagnostic mode: items by descending logit (dominant component for mixtures)."""
    if isinstance(dist, MixturePL):
        dist = dist.components[int(np.argmax(dist.weights))]
    return Permutation(tuple(np.argsort(-dist.logits, kind="stable")))
