import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutter import nn
from cutter.graph import Graph, GraphError, remove_nodes
from cutter.models import PrototypeEncoderParams, RewardNetParams, encode_window, reward_step
from cutter.shaping import (
    AffineCalibrator,
    CalibrationError,
    PenaltyWeights,
    PrototypePair,
    PrototypeSource,
    ShapingConfig,
    critical_window,
    embedding_penalty,
    extract_prototypes,
    fit_affine,
    predicted_return,
    predicted_returns,
    prototype_target,
    prototype_targets,
    range_matching,
    rda_true_return,
    reward_net_loss,
    shaping_steps,
    total_reward_loss,
    vda_true_return,
)

from gradcheck import TOLERANCE, check

K4 = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])


def fixed_embed(g: Graph):
    ids = g.alive_nodes()
    return ids, np.ones((len(ids), 3)) + ids[:, None]


def calibrator(alpha=1.0, beta=0.0) -> AffineCalibrator:
    return AffineCalibrator(alpha, beta, frozen=True)


class TestTrueReturns:
    def test_vda(self):
        assert vda_true_return(K4, K4) == 0.0
        assert vda_true_return(K4, remove_nodes(K4, [0])) == 0.5
        assert vda_true_return(K4, remove_nodes(K4, [0, 1, 2])) == 1.0

    def test_vda_needs_connected_pairs(self):
        with pytest.raises(GraphError):
            vda_true_return(Graph.from_edges(3, []), Graph.from_edges(3, []))

    def test_rda_nothing_removed(self):
        assert rda_true_return(K4, K4, {0}, set(), PenaltyWeights(), fixed_embed) == 1.0

    def test_rda_connectivity_only(self):
        final = remove_nodes(K4, [3])
        assert rda_true_return(K4, final, {0}, {3}, PenaltyWeights(1.0, 0.0, 0.0), fixed_embed) == 0.5

    def test_rda_everything_gone(self):
        final = remove_nodes(K4, range(4))
        assert rda_true_return(K4, final, {0, 1}, set(range(4)), PenaltyWeights(), fixed_embed) == pytest.approx(0.0)

    def test_rda_empty_vital(self):
        with pytest.raises(ValueError):
            rda_true_return(K4, K4, set(), set(), PenaltyWeights(), fixed_embed)

    def test_embedding_penalty(self):
        ids = np.array([0, 1, 2])
        before = (ids, np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        same = embedding_penalty(before, before, {0, 2})
        assert same == pytest.approx(0.0, abs=1e-15)
        rotated = (np.array([0, 2]), np.array([[0.0, 1.0], [0.0, 1.0]]))
        # means (1, .5) vs (0, 1)
        assert embedding_penalty(before, rotated, {0, 2}) == pytest.approx(1 - 0.5 / np.sqrt(1.25))
        assert embedding_penalty(before, (np.array([1]), np.ones((1, 2))), {0, 2}) == 1.0

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            PenaltyWeights(0.5, 0.5, 0.5)
        with pytest.raises(ValueError):
            PenaltyWeights(1.5, -0.5, 0.0)


class TestPredictedReturn:
    def test_empty(self, rng):
        rn = RewardNetParams(rng, 3)
        assert predicted_return(np.zeros((0, 3)), np.zeros((0, 3)), rn) == 0.0

    def test_zero_weights(self, rng):
        rn = RewardNetParams(rng, 3)
        for p in rn.params():
            p.value[...] = 0
        assert predicted_return(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rn) == 0.0

    def test_sum_of_steps(self, rng):
        rn = RewardNetParams(rng, 3)
        ge, ae = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        manual = sum(reward_step(nn.const(ge[t:t + 1]), nn.const(ae[t:t + 1]), rn).item() for t in range(3))
        assert predicted_return(ge, ae, rn) == pytest.approx(manual, abs=1e-14)

    def test_batched_segments(self, rng):
        rn = RewardNetParams(rng, 2)
        trajs = [(rng.normal(size=(t, 2)), rng.normal(size=(t, 2))) for t in (3, 1, 4)]
        totals, steps = predicted_returns([g for g, _ in trajs], [a for _, a in trajs], rn)
        assert steps.shape == (8, 1)
        for row, (g, a) in zip(totals.value[:, 0], trajs):
            assert row == pytest.approx(predicted_return(g, a, rn), abs=1e-14)


class TestAffine:
    def test_identity(self):
        cal = AffineCalibrator(fit_pairs=[(0.0, 0.0), (1.0, 1.0)])
        assert fit_affine(cal) == pytest.approx((1.0, 0.0))

    def test_planted_line(self, rng):
        pred = rng.normal(size=30)
        cal = AffineCalibrator(fit_pairs=list(zip(pred, 2 * pred + 0.3)))
        alpha, beta = fit_affine(cal)
        assert abs(alpha - 2) < 1e-6 and abs(beta - 0.3) < 1e-6

    def test_range_matching(self):
        assert range_matching(np.array([-1.0, 0.2, 1.0]), np.array([0.0, 0.5, 1.0])) == (0.5, 0.5)

    def test_negative_slope_falls_back(self):
        cal = AffineCalibrator(fit_pairs=[(-1.0, 1.0), (1.0, 0.0)])
        alpha, beta = fit_affine(cal)
        assert (alpha, beta) == (0.5, 0.5)

    def test_constant_prediction(self):
        with pytest.raises(CalibrationError):
            fit_affine(AffineCalibrator(fit_pairs=[(0.3, 0.0), (0.3, 1.0)]))

    def test_frozen_untouched(self):
        cal = AffineCalibrator(2.0, 1.0, frozen=True, fit_pairs=[(0.0, 0.0), (1.0, 1.0)])
        assert fit_affine(cal) == (2.0, 1.0) and (cal.alpha, cal.beta) == (2.0, 1.0)
        assert not cal.refit([(0.0, 5.0), (1.0, 0.0)])

    def test_freeze_on_settled_slope(self):
        cal = AffineCalibrator(settle_min_pairs=2)
        assert cal.refit([(0.0, 0.0), (1.0, 2.0)])
        assert not cal.frozen
        assert cal.refit([(0.0, 0.1), (1.0, 2.1), (2.0, 4.1)])
        assert cal.frozen and cal.alpha == pytest.approx(2.0)

    def test_small_fits_never_settle(self):
        cal = AffineCalibrator()
        line = [(float(x), 2.0 * x) for x in range(9)]
        cal.refit(line)
        cal.refit(line)
        assert not cal.frozen
        cal.refit(line + [(9.0, 18.0)])
        assert cal.frozen

    def test_freeze_after_hundred_trajectories(self, rng):
        cal = AffineCalibrator()
        pred = rng.normal(size=120)
        cal.refit(list(zip(pred[:20], 3 * pred[:20])))
        cal.refit(list(zip(pred[:99], -pred[:99] + rng.normal(size=99))))
        assert not cal.frozen
        cal.refit(list(zip(pred, 5 * pred)))
        assert cal.frozen

    def test_deferred_fit_keeps_values(self):
        cal = AffineCalibrator(1.5, 0.2)
        assert not cal.refit([(0.0, 0.0), (0.0, 1.0)])
        assert (cal.alpha, cal.beta, cal.frozen) == (1.5, 0.2, False)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 1)), min_size=2, max_size=30))
    def test_fit_is_strictly_increasing(self, pairs):
        cal = AffineCalibrator(fit_pairs=pairs)
        try:
            alpha, _ = fit_affine(cal)
        except CalibrationError:
            pred = np.array([p for p, _ in pairs])
            assert len(np.unique(pred)) < 2 or np.dot(pred - pred.mean(), pred - pred.mean()) == 0.0
            return
        assert alpha > 0


class TestRewardLoss:
    def test_perfect_predictor(self, rng):
        rn = RewardNetParams(rng, 3)
        ge, ae = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        r = predicted_return(ge, ae, rn)
        loss = reward_net_loss([ge], [ae], [2 * r + 1], calibrator(2.0, 1.0), rn)
        assert loss.item() == pytest.approx(0.0, abs=1e-24)

    def test_zero_prediction(self, rng):
        rn = RewardNetParams(rng, 3)
        for p in rn.params():
            p.value[...] = 0
        assert reward_net_loss([np.ones((2, 3))], [np.ones((2, 3))], [1.0], calibrator(), rn).item() == 1.0

    def test_hand_mse(self, rng):
        rn = RewardNetParams(rng, 2)
        trajs = [(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))) for _ in range(4)]
        true = rng.random(4)
        cal = calibrator(0.7, -0.1)
        expected = np.mean([(t - (0.7 * predicted_return(g, a, rn) - 0.1)) ** 2 for (g, a), t in zip(trajs, true)])
        loss = reward_net_loss([g for g, _ in trajs], [a for _, a in trajs], true, cal, rn)
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_empty_batch(self, rng):
        with pytest.raises(ValueError):
            reward_net_loss([], [], [], calibrator(), RewardNetParams(rng, 2))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_reach_reward_net_only(self, seed):
        rng = np.random.default_rng(seed)
        rn = RewardNetParams(rng, 3)
        trajs = [(rng.normal(size=(t, 3)), rng.normal(size=(t, 3))) for t in (2, 4)]
        true = rng.random(2)
        cal = calibrator(1.3, 0.2)
        fn = lambda: reward_net_loss([g for g, _ in trajs], [a for _, a in trajs], true, cal, rn)  # noqa: E731
        assert check(fn, rn.params()) <= TOLERANCE
        assert (cal.alpha, cal.beta) == (1.3, 0.2)


def source(ret, steps, rng, width=3):
    t = len(steps)
    return PrototypeSource(ret, np.asarray(steps, dtype=float), rng.normal(size=(t, width)), rng.normal(size=(t, width)))


class TestPrototypes:
    def test_critical_window(self):
        assert critical_window(0, 3) == (0, 1)
        assert critical_window(2, 3) == (0, 2)
        assert critical_window(7, 3) == (4, 7)

    def test_k1_two_trajectories(self, rng):
        proto = PrototypeEncoderParams(rng, 3)
        hi = source(0.9, [0.1, 0.5, 0.2, 0.0], rng)
        lo = source(0.1, [0.1, 0.2, -0.4, 0.0], rng)
        pair = extract_prototypes([lo, hi], 1, 2, proto)
        expected_pos = encode_window(list(zip(hi.graph_embeds[0:1], hi.action_embeds[0:1])), proto).value[0]
        expected_neg = encode_window(list(zip(lo.graph_embeds[0:2], lo.action_embeds[0:2])), proto).value[0]
        np.testing.assert_allclose(pair.h_pos, expected_pos)
        np.testing.assert_allclose(pair.h_neg, expected_neg)

    def test_identical_windows(self, rng):
        proto = PrototypeEncoderParams(rng, 3)
        ge, ae = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        items = [PrototypeSource(r, np.zeros(4), ge, ae) for r in (0.1, 0.5, 0.9, 0.3)]
        pair = extract_prototypes(items, 2, 2, proto)
        np.testing.assert_allclose(pair.h_pos, pair.h_neg)

    def test_k2_means(self, rng):
        proto = PrototypeEncoderParams(rng, 3)
        items = [source(r, rng.normal(size=6), rng) for r in (0.2, 0.8, 0.5, 0.9, 0.1)]
        pair = extract_prototypes(items, 2, 3, proto)

        def window(s, positive):
            k = int(np.argmax(s.step_returns) if positive else np.argmin(s.step_returns))
            lo, hi = critical_window(k, 3)
            return encode_window(list(zip(s.graph_embeds[lo:hi], s.action_embeds[lo:hi])), proto).value[0]

        np.testing.assert_allclose(pair.h_pos, (window(items[3], True) + window(items[1], True)) / 2)
        np.testing.assert_allclose(pair.h_neg, (window(items[4], False) + window(items[0], False)) / 2)

    def test_insufficient_buffer(self, rng):
        with pytest.raises(ValueError):
            extract_prototypes([source(0.5, [0.0], rng)], 1, 2, PrototypeEncoderParams(rng, 3))

    def test_target(self):
        pair = PrototypePair(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1, 2)
        assert prototype_target(np.array([1.0, 0.0]), pair) == 1.0
        assert prototype_target(np.array([0.0, 1.0]), pair) == -1.0
        assert prototype_target(np.array([1.0, 1.0]), pair) == pytest.approx(0.0)
        assert prototype_target(np.zeros(2), pair) == 0.0

    def test_shaping_steps(self):
        assert shaping_steps(6, 3) == [2, 3, 4, 5]
        assert shaping_steps(2, 5) == []

    def test_total_loss_adds_weighted_prototype_term(self, rng):
        width = 3
        rn = RewardNetParams(rng, width)
        proto = PrototypeEncoderParams(rng, width)
        pair = PrototypePair(rng.normal(size=width), rng.normal(size=width), 1, 2)
        ge, ae = [rng.normal(size=(5, width))], [rng.normal(size=(5, width))]
        cal = calibrator(0.5, 0.1)
        base = reward_net_loss(ge, ae, [0.4], cal, rn).item()
        steps, targets = prototype_targets(ge[0], ae[0], pair, proto)
        with nn.no_grad():
            r = reward_step(nn.const(ge[0]), nn.const(ae[0]), rn).value[steps, 0]
        parts = {}
        total = total_reward_loss(ge, ae, [0.4], cal, rn, pair, ShapingConfig(0.5), proto, parts=parts)
        assert parts["proto"] == pytest.approx(np.mean((r - targets) ** 2))
        assert total.item() == pytest.approx(base + 0.5 * parts["proto"])
        assert total_reward_loss(ge, ae, [0.4], cal, rn, pair, ShapingConfig(0.0), proto).item() == pytest.approx(base)
        assert total_reward_loss(ge, ae, [0.4], cal, rn, None, ShapingConfig(0.5)).item() == pytest.approx(base)
