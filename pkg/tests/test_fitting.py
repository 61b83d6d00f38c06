"""Fitting routines: EMA rank update, gradient, weighted MLE, mixture EM."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from plreorder.distributions import (
    MixturePL,
    Permutation,
    PLParams,
    RandomSource,
    sample_batch,
)
from plreorder.fitting import (
    EliteSet,
    EMAConfig,
    GradientFitConfig,
    em_fit,
    ema_blend,
    ema_rank_update,
    mixture_log_likelihood,
    mle_fit,
    pl_grad,
    responsibilities,
    select_indices,
    weighted_log_likelihood,
)


def random_elites(gen: np.random.Generator, n: int, count: int, weighted: bool = False) -> EliteSet:
    perms = tuple(Permutation(tuple(gen.permutation(n))) for _ in range(count))
    weights = gen.uniform(0.1, 2.0, count) if weighted else None
    return EliteSet(perms, weights=weights)


class TestEliteSet:
    def test_defaults(self):
        elites = EliteSet((Permutation((0, 1)), Permutation((1, 0))))
        assert np.array_equal(elites.scores, [1.0, 1.0])
        assert np.array_equal(elites.weights, [1.0, 1.0])
        assert elites.orders.shape == (2, 2)
        assert len(elites) == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            EliteSet(())
        with pytest.raises(ValueError):
            EliteSet((Permutation((0, 1)), Permutation((0, 1, 2))))
        with pytest.raises(ValueError):
            EliteSet((Permutation((0, 1)),), scores=np.array([1.5]))
        with pytest.raises(ValueError):
            EliteSet((Permutation((0, 1)),), weights=np.array([-0.1]))
        with pytest.raises(ValueError):
            EliteSet((Permutation((0, 1)),), scores=np.array([0.5, 0.5]))


class TestSelectIndices:
    def test_fraction_count(self):
        scores = list(np.linspace(0, 1, 15))
        assert len(select_indices(scores, 0.2)) == 3
        assert len(select_indices(scores, 0.5)) == 8  # ceil(7.5)
        assert len(select_indices(scores, 1.0)) == 15
        assert len(select_indices([0.4], 0.01)) == 1  # at least one survivor

    def test_orders_by_score_then_position(self):
        assert select_indices([0.1, 0.9, 0.5, 0.9], 0.5) == [1, 3]
        assert select_indices([0.7, 0.7, 0.7], 0.34) == [0, 1]

    def test_validation(self):
        with pytest.raises(ValueError):
            select_indices([], 0.2)
        with pytest.raises(ValueError):
            select_indices([0.5], 0.0)
        with pytest.raises(ValueError):
            select_indices([0.5], 1.2)


class TestEMARankUpdate:
    def test_hand_value(self):
        # Elite ranks: item0 -> (0+0)/2=0, item1 -> (1+2)/2=1.5, item2 -> 1.5.
        # Target (0, -1.5, -1.5); blend 0.7 from zeros -> (0, -1.05, -1.05);
        # centering adds 0.7.
        elites = EliteSet((Permutation((0, 1, 2)), Permutation((0, 2, 1))))
        updated = ema_rank_update(PLParams.uniform(3), elites)
        assert np.allclose(updated.logits, [0.7, -0.35, -0.35], atol=1e-12)

    def test_alpha_zero_keeps_centered_params(self):
        params = PLParams([1.0, -1.0, 0.0])
        elites = EliteSet((Permutation((2, 1, 0)),))
        updated = ema_rank_update(params, elites, EMAConfig(alpha=0.0))
        assert np.allclose(updated.logits, params.logits, atol=1e-12)

    def test_alpha_one_is_pure_rank_target(self):
        elites = EliteSet((Permutation((1, 2, 0)),))
        updated = ema_rank_update(PLParams([5.0, -3.0, 1.0]), elites, EMAConfig(alpha=1.0, tau=1.0))
        # Ranks: item1 -> 0, item2 -> 1, item0 -> 2; target -ranks centered.
        assert np.allclose(updated.logits, [-1.0, 1.0, 0.0], atol=1e-12)

    def test_output_centered_and_clipped(self):
        elites = EliteSet((Permutation(tuple(range(6))),))
        config = EMAConfig(alpha=1.0, tau=0.05, clip=20.0)
        updated = ema_rank_update(PLParams.uniform(6), elites, config)
        assert np.max(np.abs(updated.logits)) <= 20.0
        assert updated.logits[0] == 20.0  # rank spread 0..100 clips at the bound

    def test_tau_scales_targets(self):
        elites = EliteSet((Permutation((0, 1)),))
        hot = ema_rank_update(PLParams.uniform(2), elites, EMAConfig(alpha=1.0, tau=2.0))
        assert np.allclose(hot.logits, [0.25, -0.25], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ema_rank_update(PLParams.uniform(3), EliteSet((Permutation((0, 1)),)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EMAConfig(alpha=1.5)
        with pytest.raises(ValueError):
            EMAConfig(tau=0.0)
        with pytest.raises(ValueError):
            EMAConfig(clip=-1.0)


class TestEmaBlend:
    def test_endpoints(self):
        old = PLParams([2.0, -2.0])
        new = PLParams([-4.0, 4.0])
        assert np.allclose(ema_blend(old, new, 0.0).logits, old.logits)
        assert np.allclose(ema_blend(old, new, 1.0).logits, new.logits)
        assert np.allclose(ema_blend(old, new, 0.25).logits, [0.5, -0.5])

    def test_validation(self):
        with pytest.raises(ValueError):
            ema_blend(PLParams.uniform(2), PLParams.uniform(3), 0.5)
        with pytest.raises(ValueError):
            ema_blend(PLParams.uniform(2), PLParams.uniform(2), 1.1)


class TestPLGrad:
    def test_two_item_hand_value(self):
        # At theta = 0 with one elite (0, 1): grad = (1 - 1/2, 1 - 1/2 - 1).
        elites = EliteSet((Permutation((0, 1)),))
        grad = pl_grad(PLParams.uniform(2), elites)
        assert np.allclose(grad, [0.5, -0.5], atol=1e-12)

    def test_symmetric_elites_zero_gradient(self):
        perms = tuple(Permutation(o) for o in itertools.permutations(range(3)))
        grad = pl_grad(PLParams.uniform(3), EliteSet(perms))
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_weights_scale_linearly(self):
        elites = EliteSet((Permutation((1, 0, 2)),))
        doubled = EliteSet((Permutation((1, 0, 2)),), weights=np.array([2.0]))
        params = PLParams([0.5, -1.0, 0.5])
        assert np.allclose(2 * pl_grad(params, elites), pl_grad(params, doubled), atol=1e-12)

    def test_matches_central_finite_differences(self):
        gen = np.random.default_rng(42)
        h = 1e-5
        for _ in range(5):
            params = PLParams(gen.uniform(-3, 3, 5))
            elites = random_elites(gen, 5, 8, weighted=True)
            grad = pl_grad(params, elites)
            for i in range(5):
                bump = np.zeros(5)
                bump[i] = h
                high = weighted_log_likelihood(PLParams(params.logits + bump), elites)
                low = weighted_log_likelihood(PLParams(params.logits - bump), elites)
                assert grad[i] == pytest.approx((high - low) / (2 * h), abs=1e-6)

    def test_large_logits_stay_finite(self):
        elites = EliteSet((Permutation((2, 1, 0)),))
        grad = pl_grad(PLParams([20.0, 0.0, -20.0]), elites)
        assert np.all(np.isfinite(grad))


class TestMLEFit:
    def test_uniform_is_fixed_point(self):
        perms = tuple(Permutation(o) for o in itertools.permutations(range(3)))
        fitted = mle_fit(EliteSet(perms), init=PLParams.uniform(3))
        assert np.allclose(fitted.logits, 0.0, atol=1e-9)

    def test_single_repeated_mode_orders_logits(self):
        elites = EliteSet((Permutation((2, 0, 1)),) * 4)
        fitted = mle_fit(elites, PLParams.uniform(3), GradientFitConfig(steps=300))
        assert tuple(np.argsort(-fitted.logits)) == (2, 0, 1)

    def test_loose_recovery(self):
        truth = PLParams([1.5, 0.0, -1.5])
        perms = sample_batch(truth, 3000, RandomSource(0))
        fitted = mle_fit(
            EliteSet(tuple(perms)),
            PLParams.uniform(3),
            GradientFitConfig(steps=600, learning_rate=0.05),
        )
        assert np.max(np.abs(fitted.logits - truth.logits)) < 0.2

    def test_never_below_projected_init(self):
        gen = np.random.default_rng(1)
        config = GradientFitConfig(steps=25)
        for _ in range(10):
            n = int(gen.integers(2, 6))
            elites = random_elites(gen, n, 12, weighted=True)
            init_raw = gen.uniform(-6, 6, n)
            init = PLParams(np.clip(init_raw - init_raw.mean(), -20, 20))
            fitted = mle_fit(elites, init, config)
            assert weighted_log_likelihood(fitted, elites) >= (
                weighted_log_likelihood(init, elites) - 1e-6
            )

    def test_output_clipped(self):
        elites = EliteSet((Permutation((0, 1, 2)),) * 3)
        fitted = mle_fit(elites, PLParams.uniform(3), GradientFitConfig(steps=2000, clip=1.5))
        assert np.max(np.abs(fitted.logits)) <= 1.5 + 1e-12

    def test_output_centered_when_clip_inactive(self):
        gen = np.random.default_rng(5)
        fitted = mle_fit(random_elites(gen, 4, 10), PLParams.uniform(4))
        assert fitted.logits.mean() == pytest.approx(0.0, abs=1e-9)

    def test_duplicate_aggregation_changes_nothing(self):
        gen = np.random.default_rng(3)
        perms = [Permutation(tuple(gen.permutation(4))) for _ in range(6)]
        raw = EliteSet(tuple(perms) * 5)  # every permutation five times
        merged = EliteSet(tuple(perms), weights=np.full(6, 5.0))
        fit_raw = mle_fit(raw, PLParams.uniform(4))
        fit_merged = mle_fit(merged, PLParams.uniform(4))
        assert np.array_equal(fit_raw.logits, fit_merged.logits)

    def test_deterministic(self):
        gen = np.random.default_rng(4)
        elites = random_elites(gen, 4, 10)
        a = mle_fit(elites, PLParams.uniform(4))
        b = mle_fit(elites, PLParams.uniform(4))
        assert np.array_equal(a.logits, b.logits)

    def test_l2_pulls_toward_origin(self):
        elites = EliteSet((Permutation((0, 1)),) * 10)
        free = mle_fit(elites, PLParams.uniform(2), GradientFitConfig(steps=500))
        ridged = mle_fit(elites, PLParams.uniform(2), GradientFitConfig(steps=500, l2_penalty=1.0))
        assert np.max(np.abs(ridged.logits)) < np.max(np.abs(free.logits))

    def test_objective_concavity_witness(self):
        # The log-likelihood is concave in theta; the midpoint of any two
        # points must sit at or above the chord.
        gen = np.random.default_rng(6)
        for _ in range(20):
            n = int(gen.integers(2, 6))
            elites = random_elites(gen, n, 8, weighted=True)
            a = gen.uniform(-5, 5, n)
            b = gen.uniform(-5, 5, n)
            mid = weighted_log_likelihood(PLParams((a + b) / 2), elites)
            chord = 0.5 * (
                weighted_log_likelihood(PLParams(a), elites)
                + weighted_log_likelihood(PLParams(b), elites)
            )
            assert mid >= chord - 1e-9

    def test_zero_weight_total_rejected(self):
        elites = EliteSet((Permutation((0, 1)),), weights=np.array([0.0]))
        with pytest.raises(ValueError):
            mle_fit(elites, PLParams.uniform(2))


class TestEM:
    def test_responsibilities_rows_sum_to_one(self):
        gen = np.random.default_rng(7)
        mix = MixturePL(
            np.array([0.3, 0.5, 0.2]),
            tuple(PLParams(gen.uniform(-2, 2, 4)) for _ in range(3)),
        )
        elites = random_elites(gen, 4, 20)
        resp = responsibilities(mix, elites)
        assert resp.shape == (20, 3)
        assert np.allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(resp >= 0.0)

    def test_single_component_em_matches_mle(self):
        gen = np.random.default_rng(8)
        elites = random_elites(gen, 3, 15)
        init = PLParams([0.4, -0.4, 0.0])
        mix = em_fit(elites, MixturePL(np.array([1.0]), (init,)), rounds=1)
        direct = mle_fit(elites, init)
        assert mix.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(mix.components[0].logits, direct.logits, atol=1e-12)

    def test_log_likelihood_never_decreases(self):
        gen = np.random.default_rng(9)
        perms = sample_batch(PLParams([3.0, 0.0, -3.0]), 60, RandomSource(2))
        perms += sample_batch(PLParams([-3.0, 0.0, 3.0]), 60, RandomSource(3))
        elites = EliteSet(tuple(perms))
        components = tuple(
            PLParams(gen.uniform(-1, 1, 3) - gen.uniform(-1, 1, 3).mean()) for _ in range(3)
        )
        mix = MixturePL(np.full(3, 1 / 3), components)
        previous = mixture_log_likelihood(mix, elites)
        for _ in range(6):
            mix = em_fit(elites, mix, rounds=1)
            current = mixture_log_likelihood(mix, elites)
            assert current >= previous - 1e-4
            previous = current

    def test_weights_stay_at_or_above_floor(self):
        # All elites match component 0's mode, so component 1 starves.
        elites = EliteSet((Permutation((0, 1, 2)),) * 30)
        mix = MixturePL(
            np.array([0.5, 0.5]),
            (PLParams([6.0, 0.0, -6.0]), PLParams([-6.0, 0.0, 6.0])),
        )
        refit = em_fit(elites, mix, rounds=3)
        assert refit.weights.min() >= 1e-3 - 1e-15
        assert refit.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert refit.weights[0] > 0.99

    def test_starved_component_keeps_parameters(self):
        elites = EliteSet((Permutation((0, 1, 2)),) * 30)
        survivor = PLParams([20.0, 0.0, -20.0])
        starved = PLParams([-20.0, 0.0, 20.0])
        refit = em_fit(elites, MixturePL(np.array([0.5, 0.5]), (survivor, starved)), rounds=2)
        # Responsibilities for the reversed component underflow to ~0, so its
        # logits must come through unchanged rather than as NaNs.
        assert np.allclose(refit.components[1].logits, starved.logits, atol=1e-9)

    def test_separates_two_opposed_modes(self):
        root = RandomSource(0)
        perms = sample_batch(PLParams([6.0, 0.0, -6.0]), 150, root.split(0))
        perms += sample_batch(PLParams([-6.0, 0.0, 6.0]), 150, root.split(1))
        elites = EliteSet(tuple(perms))
        init_rng = root.split(2)
        components = []
        for _ in range(2):
            noise = init_rng.generator.normal(0.0, 0.5, 3)
            components.append(PLParams(noise - noise.mean()))
        mix = em_fit(elites, MixturePL(np.array([0.5, 0.5]), tuple(components)), rounds=8)
        modes = {tuple(np.argsort(-c.logits, kind="stable")) for c in mix.components}
        assert modes == {(0, 1, 2), (2, 1, 0)}
        assert np.max(np.abs(mix.weights - 0.5)) < 0.1

    def test_validation(self):
        elites = EliteSet((Permutation((0, 1)),))
        mix = MixturePL(np.array([1.0]), (PLParams.uniform(2),))
        with pytest.raises(ValueError):
            em_fit(elites, mix, rounds=0)
        with pytest.raises(ValueError):
            em_fit(elites, mix, weight_floor=1e-5)
        with pytest.raises(ValueError):
            em_fit(EliteSet((Permutation((0, 1, 2)),)), mix)


class TestGradientFitConfig:
    def test_defaults(self):
        config = GradientFitConfig()
        assert config.steps == 60
        assert config.learning_rate == 0.1
        assert config.l2_penalty == 0.0
        assert config.clip == 20.0

    def test_validation(self):
        with pytest.raises(ValueError):
            GradientFitConfig(steps=0)
        with pytest.raises(ValueError):
            GradientFitConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            GradientFitConfig(l2_penalty=-0.1)
