"""Self-contained correctness checks runnable from the command line.

Each check compares a measured quantity against a fixed threshold and
reports a single pass/fail line: sampler fidelity against exact enumeration,
maximum-likelihood recovery of known logits, mixture recovery of two
opposed modes by expectation-maximization, and the expressivity gap between
a single component and a mixture on a cyclic three-item target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import MixturePL, Permutation, PLParams, RandomSource, sample_batch
from .exact import (
    ExactDistribution,
    best_single_pl_fit,
    construct_dense_mixture,
    empirical_distribution,
    enumerate_mixture,
    enumerate_pl,
    total_variation,
)
from .fitting import (
    EliteSet,
    GradientFitConfig,
    em_fit,
    mixture_log_likelihood,
    mle_fit,
    pl_grad,
)

CYCLIC_TARGET_N3 = {
    (0, 1, 2): 1.0 / 3.0,
    (1, 2, 0): 1.0 / 3.0,
    (2, 0, 1): 1.0 / 3.0,
}


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one property check."""

    name: str
    value: float
    threshold: float
    comparison: str  # "<", "<=", or ">="
    passed: bool

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}  {self.name}: measured {self.value:.6g} "
            f"(required {self.comparison} {self.threshold:g})"
        )


def _result(name: str, value: float, threshold: float, comparison: str) -> CheckResult:
    if comparison == "<":
        passed = value < threshold
    elif comparison == "<=":
        passed = value <= threshold
    elif comparison == ">=":
        passed = value >= threshold
    else:
        raise ValueError(f"unknown comparison {comparison!r}")
    return CheckResult(name, float(value), float(threshold), comparison, passed)


def check_sampler_fidelity(
    n: int = 4, trials: int = 10, draws: int = 100_000, seed: int = 0
) -> list[CheckResult]:
    """Empirical frequencies of perturb-and-sort draws match exact enumeration."""
    root = RandomSource(seed)
    worst = 0.0
    for trial in range(trials):
        rng = root.split(trial)
        params = PLParams(rng.generator.uniform(-5.0, 5.0, n))
        perms = sample_batch(params, draws, rng)
        observed = empirical_distribution(perms, n)
        worst = max(worst, total_variation(observed, enumerate_pl(params)))
    return [_result(f"sampler fidelity (worst of {trials} logit draws)", worst, 0.015, "<")]


def check_mle_recovery(
    samples: int = 5000, steps: int = 2000, learning_rate: float = 0.05, seed: int = 0
) -> list[CheckResult]:
    """Adam on the log-likelihood recovers the generating logits (2, 0, -2)."""
    truth = PLParams(np.array([2.0, 0.0, -2.0]))
    rng = RandomSource(seed)
    perms = sample_batch(truth, samples, rng)
    elites = EliteSet(tuple(perms))
    config = GradientFitConfig(steps=steps, learning_rate=learning_rate)
    fitted = mle_fit(elites, init=PLParams.uniform(3), config=config)
    coord_error = float(np.max(np.abs(fitted.logits - truth.logits)))
    grad_norm = float(np.linalg.norm(pl_grad(fitted, elites)))
    return [
        _result("MLE recovery: max coordinate error", coord_error, 0.15, "<="),
        _result("MLE recovery: gradient norm at the fit", grad_norm, 1e-3, "<"),
    ]


def check_em_recovery(
    per_mode: int = 500,
    restarts: int = 3,
    rounds: int = 10,
    seed: int = 0,
) -> list[CheckResult]:
    """EM separates a balanced sample from two opposed generating components."""
    mode_a = PLParams(np.array([6.0, 0.0, -6.0]))
    mode_b = PLParams(np.array([-6.0, 0.0, 6.0]))
    root = RandomSource(seed)
    perms = sample_batch(mode_a, per_mode, root.split(0))
    perms += sample_batch(mode_b, per_mode, root.split(1))
    elites = EliteSet(tuple(perms))
    inner = GradientFitConfig()

    best = None
    best_ll = -np.inf
    worst_delta = np.inf
    for restart in range(restarts):
        init_rng = root.split(2 + restart)
        components = []
        for _ in range(2):
            noise = init_rng.generator.normal(0.0, 0.5, 3)
            components.append(PLParams(noise - noise.mean()))
        mix = MixturePL(np.array([0.5, 0.5]), tuple(components))
        previous = mixture_log_likelihood(mix, elites)
        for _ in range(rounds):
            mix = em_fit(elites, mix, inner=inner, rounds=1)
            current = mixture_log_likelihood(mix, elites)
            worst_delta = min(worst_delta, current - previous)
            previous = current
        if previous > best_ll:
            best, best_ll = mix, previous

    modes = {tuple(np.argsort(-c.logits, kind="stable")) for c in best.components}
    modes_found = 1.0 if modes == {(0, 1, 2), (2, 1, 0)} else 0.0
    weight_error = float(np.max(np.abs(best.weights - 0.5)))
    return [
        _result("EM recovery: both generating modes found", modes_found, 1.0, ">="),
        _result("EM recovery: weight deviation from 1/2", weight_error, 0.05, "<="),
        _result("EM recovery: worst round-over-round log-likelihood delta",
                worst_delta, -1e-4, ">="),
    ]


def check_mixture_expressivity_gap() -> list[CheckResult]:
    """A mixture matches the cyclic 3-item target; no single component can."""
    target = ExactDistribution.from_table(3, CYCLIC_TARGET_N3)
    mixture = construct_dense_mixture(target, epsilon=0.01)
    mixture_tv = total_variation(enumerate_mixture(mixture), target)
    _, single_tv = best_single_pl_fit(target)
    return [
        _result("expressivity gap: mixture distance to cyclic target", mixture_tv, 0.01, "<"),
        _result("expressivity gap: best single-component distance", single_tv, 0.1, ">="),
    ]


def run_all_checks() -> list[CheckResult]:
    """Run every check at its reference size, in a stable order."""
    results: list[CheckResult] = []
    results += check_sampler_fidelity()
    results += check_mle_recovery()
    results += check_em_recovery()
    results += check_mixture_expressivity_gap()
    return results
