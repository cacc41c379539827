import numpy as np
import pytest

from seg_eval.errors import (ArityError, DegenerateInputError,
                             ShapeMismatchError)
from seg_eval.fusion import StapleParams, majority_vote, staple_fuse
from seg_eval.metrics import dice
from seg_eval.volume import BinaryMask

from helpers import mask_from, random_mask
from oracles import majority_vote as majority_oracle
from oracles import staple_oracle


def raters_from_truth(truth: np.ndarray, p_list, q_list, seed):
    """Simulated raters: keep foreground with prob p, flip background
    with prob 1-q."""
    out = []
    for j, (p, q) in enumerate(zip(p_list, q_list)):
        rng = np.random.default_rng(seed + j)
        u = rng.random(truth.shape)
        voted = np.where(truth, u < p, u > q)
        out.append(BinaryMask(voted, (1.0, 1.0, 1.0)))
    return out


class TestMajorityVote:
    def test_single_rater_identity(self):
        m = mask_from([(0, 0, 0), (2, 2, 2)], (4, 4, 4))
        assert np.array_equal(majority_vote([m]).data, m.data)

    def test_two_of_three(self):
        a = mask_from([(0, 0, 0), (1, 0, 0)], (3, 3, 1))
        b = mask_from([(0, 0, 0)], (3, 3, 1))
        c = mask_from([(2, 2, 0)], (3, 3, 1))
        fused = majority_vote([a, b, c])
        assert fused.data[0, 0, 0]          # votes (1,1,0)
        assert not fused.data[1, 0, 0]      # votes (1,0,0)
        assert not fused.data[2, 2, 0]      # votes (0,0,1)

    def test_even_tie_is_background(self):
        a = mask_from([(1, 1, 1)], (3, 3, 3))
        b = mask_from([], (3, 3, 3))
        assert majority_vote([a, b]).count() == 0

    def test_matches_oracle(self):
        rng = np.random.default_rng(71)
        masks = [random_mask(rng, (6, 6, 6), density=0.4) for _ in range(5)]
        got = majority_vote(masks)
        assert np.array_equal(got.data,
                              majority_oracle([m.data for m in masks]))

    def test_empty_list_rejected(self):
        with pytest.raises(ArityError):
            majority_vote([])


class TestStapleValidation:
    def test_needs_two_masks(self):
        m = mask_from([(0, 0, 0)], (4, 4, 4))
        with pytest.raises(ArityError):
            staple_fuse([m])

    def test_all_empty_rejected(self):
        empty = mask_from([], (4, 4, 4))
        with pytest.raises(DegenerateInputError):
            staple_fuse([empty, empty])

    def test_grid_mismatch(self):
        a = mask_from([(0, 0, 0)], (4, 4, 4))
        b = mask_from([(0, 0, 0)], (4, 4, 5))
        with pytest.raises(ShapeMismatchError):
            staple_fuse([a, b])

    def test_param_validation(self):
        with pytest.raises(ValueError):
            StapleParams(max_iter=0)
        with pytest.raises(ValueError):
            StapleParams(threshold=0.0)
        with pytest.raises(ValueError):
            StapleParams(prior=1.0)


class TestStapleFixedPoints:
    def test_unanimous_raters(self):
        m = mask_from([(2, 2, 2), (2, 3, 2), (5, 5, 5)], (8, 8, 8))
        res = staple_fuse([m, m, m])
        assert np.array_equal(res.consensus.data, m.data)
        assert res.iterations <= 2
        assert res.converged
        assert (res.sensitivity >= 0.999).all()
        assert (res.specificity >= 0.999).all()

    def test_two_agree_one_empty(self):
        m = mask_from([(2, 2, 2), (3, 2, 2)], (8, 8, 8))
        empty = mask_from([], (8, 8, 8))
        res = staple_fuse([m, m, empty])
        assert np.array_equal(res.consensus.data, m.data)

    def test_symmetric_two_of_three_equals_majority(self):
        # each positive voxel is voted by exactly 2 of 3 raters and
        # every rater misses exactly one voxel: fully symmetric
        a = mask_from([(0, 0, 0), (1, 1, 0)], (4, 4, 1))
        b = mask_from([(0, 0, 0), (2, 2, 0)], (4, 4, 1))
        c = mask_from([(1, 1, 0), (2, 2, 0)], (4, 4, 1))
        res = staple_fuse([a, b, c])
        vote = majority_vote([a, b, c])
        assert np.array_equal(res.consensus.data, vote.data)
        # symmetry carries into the estimates
        assert np.ptp(res.sensitivity) < 1e-12
        assert np.ptp(res.specificity) < 1e-12


class TestStapleProperties:
    def test_vote_flip_monotone_at_fixed_parameters(self):
        rng = np.random.default_rng(72)
        params = StapleParams(max_iter=1, prior=0.2, restrict_bbox=False)
        for _ in range(10):
            masks = [random_mask(rng, (5, 5, 5), density=0.3)
                     for _ in range(4)]
            if not any(m.count() for m in masks):
                continue
            base = staple_fuse(masks, params)
            zeros = np.argwhere(~masks[0].data)
            if zeros.size == 0:
                continue
            v = tuple(zeros[0])
            flipped = masks[0].data.copy()
            flipped[v] = True
            masks2 = [BinaryMask(flipped, masks[0].spacing)] + masks[1:]
            res2 = staple_fuse(masks2, params)
            assert res2.weights[v] >= base.weights[v]

    def test_log_likelihood_never_decreases(self):
        rng = np.random.default_rng(73)
        for _ in range(8):
            masks = [random_mask(rng, (7, 7, 5), density=0.25)
                     for _ in range(3)]
            if not any(m.count() for m in masks):
                continue
            res = staple_fuse(masks, StapleParams(max_iter=40))
            diffs = np.diff(res.log_likelihood)
            assert (diffs >= -1e-9).all()
            assert len(res.log_likelihood) == res.iterations

    def test_weights_and_rates_in_unit_interval(self):
        rng = np.random.default_rng(74)
        masks = [random_mask(rng, (8, 8, 8), density=0.2) for _ in range(4)]
        res = staple_fuse(masks)
        assert res.weights.min() >= 0.0 and res.weights.max() <= 1.0
        assert (res.sensitivity >= 0.0).all() and (res.sensitivity <= 1.0).all()
        assert (res.specificity >= 0.0).all() and (res.specificity <= 1.0).all()

    def test_rater_permutation_invariance(self):
        rng = np.random.default_rng(75)
        masks = [random_mask(rng, (8, 8, 6), density=0.2) for _ in range(4)]
        res = staple_fuse(masks)
        res_rev = staple_fuse(masks[::-1])
        assert np.allclose(res.weights, res_rev.weights, atol=1e-10)
        assert np.array_equal(res.consensus.data, res_rev.consensus.data)
        assert np.allclose(res.sensitivity, res_rev.sensitivity[::-1],
                           atol=1e-10)
        assert np.allclose(res.specificity, res_rev.specificity[::-1],
                           atol=1e-10)

    def test_bitwise_reproducibility(self):
        rng = np.random.default_rng(76)
        masks = [random_mask(rng, (9, 9, 9), density=0.15) for _ in range(3)]
        a = staple_fuse(masks)
        b = staple_fuse(masks)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.sensitivity, b.sensitivity)
        assert np.array_equal(a.log_likelihood, b.log_likelihood)
        assert a.iterations == b.iterations

    def test_threshold_monotone(self):
        rng = np.random.default_rng(77)
        masks = [random_mask(rng, (8, 8, 8), density=0.25) for _ in range(3)]
        loose = staple_fuse(masks, StapleParams(threshold=0.1))
        tight = staple_fuse(masks, StapleParams(threshold=0.9))
        assert (tight.consensus.data <= loose.consensus.data).all()


class TestStapleAgainstOracle:
    def test_matches_probability_domain_em(self):
        rng = np.random.default_rng(78)
        for trial in range(5):
            masks = [random_mask(rng, (10, 9, 8), density=0.2)
                     for _ in range(3)]
            if not any(m.count() for m in masks):
                continue
            params = StapleParams(prior=0.15, restrict_bbox=False,
                                  max_iter=60, tol=1e-7)
            res = staple_fuse(masks, params)
            w, p, q, history, iters = staple_oracle(
                [m.data for m in masks], prior=0.15, max_iter=60, tol=1e-7)
            assert res.iterations == iters
            assert np.allclose(res.weights, w, atol=1e-9)
            assert np.allclose(res.sensitivity, p, atol=1e-9)
            assert np.allclose(res.specificity, q, atol=1e-9)
            assert np.allclose(res.log_likelihood, history, atol=1e-6)

    def test_bbox_restriction_is_a_faithful_speedup(self):
        rng = np.random.default_rng(79)
        masks = [random_mask(rng, (16, 14, 12), density=0.04)
                 for _ in range(3)]
        fast = staple_fuse(masks, StapleParams(restrict_bbox=True))
        full = staple_fuse(masks, StapleParams(restrict_bbox=False))
        assert np.array_equal(fast.consensus.data, full.consensus.data)
        assert np.allclose(fast.weights, full.weights, atol=1e-5)
        assert np.allclose(fast.sensitivity, full.sensitivity, atol=1e-5)

    def test_parameter_recovery_on_planted_raters(self):
        # the generative model is fully known here, so the prior is the
        # true prevalence; the AUTO vote-rate proxy overshoots it when
        # raters carry strong false-positive rates and would bias p
        truth = np.zeros((32, 32, 32), dtype=bool)
        truth[8:24, 8:24, 8:24] = True      # 12.5 % foreground
        master = np.random.default_rng(80)
        p_true = master.uniform(0.75, 0.95, size=5)
        q_true = master.uniform(0.75, 0.95, size=5)
        masks = raters_from_truth(truth, p_true, q_true, seed=81)
        res = staple_fuse(masks, StapleParams(max_iter=200, prior=0.125))
        assert res.converged
        assert np.abs(res.sensitivity - p_true).max() < 0.05
        assert np.abs(res.specificity - q_true).max() < 0.05
        truth_mask = BinaryMask(truth, (1.0, 1.0, 1.0))
        fused_dsc = dice(res.consensus, truth_mask)
        for m in masks:
            assert fused_dsc >= dice(m, truth_mask)
