"""Parameter updates for (mixtures of) Plackett-Luce distributions.

Three routines turn a set of elite permutations into new parameters:

- ``ema_rank_update``: heuristic update that maps each item's average elite
  rank to a target logit ``-rank / tau`` and blends it into the current
  logits with exponential smoothing.
- ``mle_fit``: weighted maximum likelihood via Adam on the concave
  log-likelihood ``sum_m w_m log Pr(pi_m | theta)``, centering and clipping
  after every step.
- ``em_fit``: expectation-maximization for mixtures; responsibilities are
  formed in the log domain, mixture weights get a closed-form update with a
  floor, and each component is refit by responsibility-weighted MLE.

All outputs are centered and clipped to ``[-LOGIT_CLIP, LOGIT_CLIP]``;
duplicate permutations in an elite set are aggregated by summing weights
before gradient work, which leaves the objective unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import (
    LOGIT_CLIP,
    MIN_COMPONENT_WEIGHT,
    MixturePL,
    Permutation,
    PLParams,
    floored_simplex,
    order_log_probs,
    suffix_logsumexp,
)

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_COLLAPSE_EPS = 1e-12


@dataclass(frozen=True)
class EMAConfig:
    """Settings for the rank-based exponential-moving-average update."""

    alpha: float = 0.7
    tau: float = 1.0
    clip: float = LOGIT_CLIP

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.clip <= 0.0:
            raise ValueError("clip bound must be positive")


@dataclass(frozen=True)
class GradientFitConfig:
    """Settings for Adam-based maximum-likelihood fitting."""

    steps: int = 60
    learning_rate: float = 0.1
    l2_penalty: float = 0.0
    clip: float = LOGIT_CLIP

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.l2_penalty < 0.0:
            raise ValueError("l2 penalty must be non-negative")
        if self.clip <= 0.0:
            raise ValueError("clip bound must be positive")


@dataclass(frozen=True, eq=False)
class EliteSet:
    """Scored permutations retained for a distribution update.

    ``scores`` are the raw metric values in [0, 1]; ``weights`` are the
    per-permutation likelihood weights (all ones unless weighting by score).
    """

    perms: tuple[Permutation, ...]
    scores: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        perms = tuple(self.perms)
        if not perms:
            raise ValueError("elite set must be non-empty")
        n = perms[0].n
        if any(p.n != n for p in perms):
            raise ValueError("all elite permutations must share the item count")
        scores = self.scores
        scores = np.ones(len(perms)) if scores is None else np.array(scores, dtype=np.float64)
        weights = self.weights
        weights = np.ones(len(perms)) if weights is None else np.array(weights, dtype=np.float64)
        if scores.shape != (len(perms),) or weights.shape != (len(perms),):
            raise ValueError("scores and weights must align with perms")
        if np.any(scores < -1e-9) or np.any(scores > 1.0 + 1e-9):
            raise ValueError("scores must lie in [0, 1]")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
            raise ValueError("weights must be finite and non-negative")
        scores.flags.writeable = False
        weights.flags.writeable = False
        orders = np.array([p.order for p in perms], dtype=np.intp)
        orders.flags.writeable = False
        object.__setattr__(self, "perms", perms)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_orders", orders)

    @property
    def n(self) -> int:
        return self.perms[0].n

    @property
    def orders(self) -> np.ndarray:
        return self._orders

    def __len__(self) -> int:
        return len(self.perms)


def _center_then_clip(values: np.ndarray, bound: float) -> np.ndarray:
    centered = values - values.mean()
    return np.clip(centered, -bound, bound)


def _aggregated(elites: EliteSet) -> EliteSet:
    """Merge duplicate permutations, summing their weights."""
    uniq, inverse = np.unique(elites.orders, axis=0, return_inverse=True)
    if len(uniq) == len(elites):
        return elites
    weights = np.zeros(len(uniq))
    np.add.at(weights, inverse.ravel(), elites.weights)
    perms = tuple(Permutation(tuple(row)) for row in uniq)
    return EliteSet(perms, weights=weights)


def ema_rank_update(params: PLParams, elites: EliteSet, config: EMAConfig = EMAConfig()) -> PLParams:
    """Blend current logits toward ``-mean_elite_rank / tau`` per item."""
    if params.n != elites.n:
        raise ValueError(f"dimension mismatch: {params.n} logits vs {elites.n} items")
    mean_ranks = np.stack([p.ranks() for p in elites.perms]).mean(axis=0)
    target = -mean_ranks / config.tau
    blended = (1.0 - config.alpha) * params.logits + config.alpha * target
    return PLParams(_center_then_clip(blended, config.clip))


def ema_blend(old: PLParams, new: PLParams, alpha: float) -> PLParams:
    """Exponential smoothing between parameter vectors, then center and clip."""
    if old.n != new.n:
        raise ValueError("cannot blend parameter vectors of different sizes")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    blended = (1.0 - alpha) * old.logits + alpha * new.logits
    return PLParams(_center_then_clip(blended, LOGIT_CLIP))


def weighted_log_likelihood(params: PLParams, elites: EliteSet) -> float:
    """``sum_m w_m log Pr(pi_m | params)`` over the elite set."""
    if params.n != elites.n:
        raise ValueError(f"dimension mismatch: {params.n} logits vs {elites.n} items")
    return float(elites.weights @ order_log_probs(params.logits, elites.orders))


def pl_grad(params: PLParams, elites: EliteSet) -> np.ndarray:
    """Gradient of the weighted log-likelihood at ``params``.

    Per elite permutation, item i receives one unit for each of its own
    appearances minus the softmax mass it holds in every choice set that
    still contains it:

        grad_i = sum_m w_m * (1 - sum_{r <= rank_m(i)} softmax_{R_r}(theta)_i)
    """
    if params.n != elites.n:
        raise ValueError(f"dimension mismatch: {params.n} logits vs {elites.n} items")
    orders = elites.orders
    n = elites.n
    t = params.logits[orders]                      # [M, n] logits by rank
    lse = suffix_logsumexp(t)                      # [M, n] per choice set
    # mass[m, r, j]: softmax weight of the rank-j item inside the rank-r
    # choice set; positions j < r have already been placed, so mask them
    # to -inf before exponentiating to avoid spurious overflow.
    live = np.triu(np.ones((n, n), dtype=bool))
    diff = np.where(live[None, :, :], t[:, None, :] - lse[:, :, None], -np.inf)
    mass = np.exp(diff)
    contrib = 1.0 - mass.sum(axis=1)               # [M, n] by rank position
    grad = np.zeros(n)
    np.add.at(grad, orders, elites.weights[:, None] * contrib)
    return grad


def mle_fit(
    elites: EliteSet,
    init: PLParams,
    config: GradientFitConfig = GradientFitConfig(),
) -> PLParams:
    """Weighted maximum-likelihood fit of PL logits by Adam.

    Every step re-centers and clips the iterate.  The returned parameters are
    the best iterate by penalized objective, the (projected) starting point
    included, so short runs never end below where they began.
    """
    if init.n != elites.n:
        raise ValueError(f"dimension mismatch: {init.n} logits vs {elites.n} items")
    if float(elites.weights.sum()) <= 0.0:
        raise ValueError("elite weights must have positive total mass")
    work = _aggregated(elites)

    def objective(p: PLParams) -> float:
        value = weighted_log_likelihood(p, work)
        if config.l2_penalty > 0.0:
            value -= 0.5 * config.l2_penalty * float(p.logits @ p.logits)
        return value

    theta = _center_then_clip(init.logits, config.clip)
    best = PLParams(theta)
    best_value = objective(best)
    m = np.zeros(work.n)
    v = np.zeros(work.n)
    for step in range(1, config.steps + 1):
        grad = pl_grad(PLParams(theta), work)
        if config.l2_penalty > 0.0:
            grad = grad - config.l2_penalty * theta
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient in PL fit")
        m = _ADAM_BETA1 * m + (1.0 - _ADAM_BETA1) * grad
        v = _ADAM_BETA2 * v + (1.0 - _ADAM_BETA2) * grad * grad
        m_hat = m / (1.0 - _ADAM_BETA1**step)
        v_hat = v / (1.0 - _ADAM_BETA2**step)
        theta = theta + config.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        theta = _center_then_clip(theta, config.clip)
        candidate = PLParams(theta)
        value = objective(candidate)
        if value > best_value:
            best, best_value = candidate, value
    return best


def _component_log_joint(mix: MixturePL, elites: EliteSet) -> np.ndarray:
    """[M, K] array of ``log alpha_k + log Pr(pi_m | component_k)``."""
    cols = [order_log_probs(c.logits, elites.orders) for c in mix.components]
    return np.log(mix.weights)[None, :] + np.stack(cols, axis=1)


def responsibilities(mix: MixturePL, elites: EliteSet) -> np.ndarray:
    """Posterior component memberships per elite permutation; rows sum to 1."""
    if mix.n != elites.n:
        raise ValueError(f"dimension mismatch: {mix.n} items vs {elites.n}")
    joint = _component_log_joint(mix, elites)
    norm = np.logaddexp.reduce(joint, axis=1)
    return np.exp(joint - norm[:, None])


def mixture_log_likelihood(mix: MixturePL, elites: EliteSet) -> float:
    """Weighted data log-likelihood of the elite set under the mixture."""
    if mix.n != elites.n:
        raise ValueError(f"dimension mismatch: {mix.n} items vs {elites.n}")
    joint = _component_log_joint(mix, elites)
    return float(elites.weights @ np.logaddexp.reduce(joint, axis=1))


def em_fit(
    elites: EliteSet,
    init: MixturePL,
    inner: GradientFitConfig = GradientFitConfig(),
    rounds: int = 3,
    weight_floor: float = MIN_COMPONENT_WEIGHT,
) -> MixturePL:
    """Expectation-maximization for a PL mixture from a weighted elite set.

    Each round computes log-domain responsibilities, updates the mixture
    weights in closed form (floored at ``weight_floor`` and renormalized),
    and refits every component by responsibility-weighted MLE warm-started
    from its previous logits.  Components whose responsibility mass
    underflows keep their parameters, which prevents collapse onto NaNs.
    """
    if init.n != elites.n:
        raise ValueError(f"dimension mismatch: {init.n} items vs {elites.n}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if weight_floor < MIN_COMPONENT_WEIGHT:
        raise ValueError(f"weight floor must be >= {MIN_COMPONENT_WEIGHT}")
    mix = init
    for _ in range(rounds):
        resp = responsibilities(mix, elites)
        total = float(elites.weights.sum())
        alpha = floored_simplex((elites.weights @ resp) / total, weight_floor)
        components = []
        for k in range(mix.k):
            weights_k = elites.weights * resp[:, k]
            if float(weights_k.sum()) <= _COLLAPSE_EPS:
                components.append(mix.components[k])
                continue
            refit = mle_fit(
                EliteSet(elites.perms, elites.scores, weights_k),
                init=mix.components[k],
                config=inner,
            )
            components.append(refit)
        mix = MixturePL(alpha, tuple(components))
    return mix


def select_indices(scores: Sequence[float], fraction: float) -> list[int]:
    """Indices of the top ``ceil(fraction * len)`` scores, ties to earlier entries."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    count = len(scores)
    if count == 0:
        raise ValueError("cannot select elites from an empty batch")
    keep = max(1, math.ceil(fraction * count - 1e-9))
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return [int(i) for i in order[:keep]]
