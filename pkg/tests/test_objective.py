import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilsda.manifolds import ProductPoint
from ilsda.objective import (
    SOURCE,
    TARGET,
    DomainStats,
    ILSProblem,
    PairSet,
    covariance,
    discriminative_loss,
    euclidean_gradients,
    generalized_logistic,
    incidence,
    metric_regularizer,
    pair_differences,
    slack_penalty,
    smooth_hinge,
    softplus,
    statistical_loss,
    stein_divergence,
    total_loss,
)

from .oracles import numerical_gradients, random_instance, random_spd, reference_loss, stein

# hand-evaluated constants
STEIN_2_1 = 0.058891  # log(1.5) - log(2)/2
LOGISTIC_ORIGIN = 0.313262  # log(1 + e^-1)
LOG1P_EXP_M2 = 0.12692801104297263  # log(1 + e^-2)
SIGMOID_M1 = 0.2689414213699951  # 1 / (1 + e)


def scalar_stats(sigma_s, sigma_t):
    return DomainStats(np.zeros(1), np.zeros(1), np.array([[sigma_s]]), np.array([[sigma_t]]))


class TestStein:
    def test_scalar_hand_value(self):
        assert abs(stein_divergence(np.array([[2.0]]), np.array([[1.0]])) - STEIN_2_1) < 1e-6

    def test_self_divergence_zero(self, rng):
        P = random_spd(rng, 5)
        assert stein_divergence(P, P) < 1e-10

    def test_matches_slogdet_oracle(self, rng):
        P, Q = random_spd(rng, 4), random_spd(rng, 4)
        assert np.isclose(stein_divergence(P, Q), stein(P, Q), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            stein_divergence(np.eye(2), np.eye(3))

    @settings(max_examples=80, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 8))
    def test_symmetric_nonnegative_affine_invariant(self, seed, p):
        rng = np.random.default_rng(seed)
        P, Q = random_spd(rng, p, 0.5), random_spd(rng, p, 0.5)
        A = rng.normal(size=(p, p)) + 2 * np.eye(p)
        d = stein_divergence(P, Q)
        assert d >= 0
        assert abs(d - stein_divergence(Q, P)) <= 1e-12
        assert abs(stein_divergence(A @ P @ A.T, A @ Q @ A.T) - d) <= 1e-8

    def test_regularizer_zero_at_identity(self):
        assert metric_regularizer(np.eye(4)) == 0.0


class TestLogistic:
    def test_at_margin(self):
        for y in (-1, 1):
            assert np.isclose(generalized_logistic(np.eye(2), y, np.array([1.0, 0.0]), 1.0, 3.0), math.log(2) / 3)

    def test_origin_hand_value(self):
        val = generalized_logistic(np.eye(3), 1, np.zeros(3), 1.0, 1.0)
        assert abs(val - LOGISTIC_ORIGIN) < 1e-6

    def test_even_in_difference(self, rng):
        M, x = random_spd(rng, 3), rng.normal(size=3)
        assert generalized_logistic(M, -1, x, 2.0, 0.7) == generalized_logistic(M, -1, -x, 2.0, 0.7)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError):
            generalized_logistic(np.eye(1), 1, np.ones(1), 1.0, 0.0)

    def test_softplus_no_overflow(self):
        out = softplus(np.array([-800.0, 0.0, 29.0, 31.0, 800.0]))
        assert np.all(np.isfinite(out))
        assert out[-1] == 800.0
        assert np.isclose(out[2], math.log1p(math.exp(29.0)))
        assert np.isclose(out[3], math.log1p(math.exp(31.0)))

    @settings(max_examples=200, deadline=None)
    @given(z=st.floats(-50, 50), beta=st.floats(0.01, 1000))
    def test_hinge_gap_bounded(self, z, beta):
        gap = float(smooth_hinge(z, beta)) - max(0.0, z)
        assert -1e-12 <= gap <= math.log(2) / beta + 1e-12


class TestDiscriminative:
    def test_at_margin_without_slack(self):
        # two pairs at unit distance, identity metric, vanishing slacks
        Xs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        pairs = PairSet.from_tuples([((0, 0), (0, 1), 1), ((0, 0), (0, 2), -1)])
        point = ProductPoint(np.eye(2), np.eye(2), np.eye(2), np.full(2, -np.inf))
        assert np.isclose(discriminative_loss(point, Xs, Xs, pairs, 2.0), math.log(2) / 2.0, rtol=1e-14)

    def test_single_similar_pair_hand_value(self):
        Xs = np.array([[1.0], [1.0]])
        pairs = PairSet.from_tuples([((0, 0), (0, 1), 1)])
        point = ProductPoint(np.eye(1), np.eye(1), np.eye(1), np.zeros(1))
        assert np.isclose(discriminative_loss(point, Xs, Xs, pairs, 1.0), LOG1P_EXP_M2 + 1.0, rtol=1e-14)

    def test_slack_penalty_values(self):
        assert slack_penalty(np.zeros(4)) == pytest.approx(0.5)
        assert slack_penalty(np.zeros(0)) == 0.0
        assert slack_penalty(np.full(3, -np.inf)) == 0.0
        # no overflow for large log-slacks
        assert np.isfinite(slack_penalty(np.array([500.0, 0.0])))

    def test_index_out_of_range(self):
        pairs = PairSet.from_tuples([((0, 0), (1, 5), 1)])
        point = ProductPoint(np.eye(1), np.eye(1), np.eye(1), np.zeros(1))
        with pytest.raises(IndexError):
            discriminative_loss(point, np.ones((2, 1)), np.ones((2, 1)), pairs, 1.0)

    def test_pairset_validation(self):
        with pytest.raises(ValueError):
            PairSet.from_tuples([((0, 0), (0, 1), 0)])
        with pytest.raises(ValueError):
            PairSet(np.zeros(2), np.zeros(2), np.zeros(1), np.zeros(2), np.ones(2))

    def test_incidence_differences(self, rng):
        inst = random_instance(rng, "semi")
        pt, Xs, Xt = inst["point"], inst["Xs"], inst["Xt"]
        delta = pair_differences(pt, Xs, Xt, inst["pairs"])
        for k, ((d1, i1), (d2, i2), _) in enumerate(inst["tuples"]):
            z1 = Xs[i1] @ pt.Ws if d1 == SOURCE else Xt[i1] @ pt.Wt
            z2 = Xs[i2] @ pt.Ws if d2 == SOURCE else Xt[i2] @ pt.Wt
            assert np.allclose(delta[k], z1 - z2, atol=1e-14)
        D = incidence(inst["pairs"], len(Xs), len(Xt))
        assert np.all(np.asarray(D.sum(axis=1)).ravel() == 0)


class TestStatistical:
    def test_identical_domains(self, rng):
        X = rng.normal(size=(30, 5))
        C = covariance(X)
        W = np.linalg.qr(rng.normal(size=(5, 2)))[0]
        assert statistical_loss(W, W, DomainStats(None, None, C, C)) == 0.0

    def test_scalar_hand_value(self):
        val = statistical_loss(np.eye(1), np.eye(1), scalar_stats(2.0, 1.0))
        assert abs(val - STEIN_2_1) < 1e-6

    def test_swap_symmetry(self, rng):
        Cs, Ct = random_spd(rng, 6), random_spd(rng, 4)
        Ws = np.linalg.qr(rng.normal(size=(6, 3)))[0]
        Wt = np.linalg.qr(rng.normal(size=(4, 3)))[0]
        a = statistical_loss(Ws, Wt, DomainStats(None, None, Cs, Ct))
        b = statistical_loss(Wt, Ws, DomainStats(None, None, Ct, Cs))
        assert abs(a - b) < 1e-12

    def test_covariance_normalization_and_ridge(self, rng):
        X = rng.normal(size=(20, 4))
        C0 = np.cov(X, rowvar=False)
        expected = C0 + 1e-6 * np.trace(C0) / 4 * np.eye(4)
        assert np.allclose(covariance(X), expected, rtol=1e-13, atol=1e-15)

    def test_rank_deficient_covariance_becomes_spd(self, rng):
        X = rng.normal(size=(3, 6))
        assert np.linalg.eigvalsh(covariance(X))[0] > 0


class TestTotal:
    def test_lambda_zero_is_discriminative_only(self, rng):
        inst = random_instance(rng, "semi")
        args = (inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"])
        out = total_loss(*args, lam=0.0)
        disc = discriminative_loss(inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["beta"])
        assert np.isclose(out.total, disc, rtol=1e-14)

    def test_additivity(self, rng):
        inst = random_instance(rng, "semi")
        args = (inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"])
        out = total_loss(*args, lam=1.0)
        disc = discriminative_loss(inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["beta"])
        stat = statistical_loss(inst["point"].Ws, inst["point"].Wt, inst["stats"])
        assert abs(out.total - (disc + stat)) <= 1e-12 * abs(out.total)
        parts = out.discriminative + out.regularizer + out.slack_penalty + out.statistical
        assert abs(out.total - parts) <= 1e-10 * abs(out.total)

    @pytest.mark.parametrize("mode", ["unsupervised", "semi"])
    def test_matches_reference_oracle(self, rng, mode):
        for _ in range(20):
            inst = random_instance(rng, mode)
            pt = inst["point"]
            ref = reference_loss(
                pt.Ws, pt.Wt, pt.M, pt.v, inst["Xs"], inst["Xt"], inst["tuples"],
                inst["stats"].Sigma_s, inst["stats"].Sigma_t, inst["beta"], inst["lam"],
            )
            got = total_loss(pt, inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"], inst["lam"])
            assert np.isclose(got.total, ref, rtol=1e-11)

    def test_pair_order_invariance(self, rng):
        inst = random_instance(rng, "semi")
        args = (inst["Xs"], inst["Xt"])
        a = total_loss(inst["point"], *args, inst["pairs"], inst["stats"], inst["beta"])
        b = total_loss(inst["point"], *args, inst["pairs"].swapped(), inst["stats"], inst["beta"])
        for key, val in a.as_dict().items():
            assert abs(val - b.as_dict()[key]) <= 1e-12 * max(1.0, abs(val))


class TestGradients:
    def test_scalar_hand_values(self):
        # s = t = p = 1, x_s = 2, x_t = 1, m = 1, beta = 1, v = 0, one similar pair:
        # a = -1, coefficient sigma(-1); covariances 2 and 1
        pt = ProductPoint(np.eye(1), np.eye(1), np.eye(1), np.zeros(1))
        pairs = PairSet.from_tuples([((SOURCE, 0), (TARGET, 0), 1)])
        g = euclidean_gradients(pt, np.array([[2.0]]), np.array([[1.0]]), pairs, scalar_stats(2.0, 1.0), 1.0, 1.0)
        # pair: 2 x_s delta m sigma = 4 sigma; stat: 2 (2/3 - 1/2) = 1/3
        assert g.xi_s[0, 0] == pytest.approx(4 * SIGMOID_M1 + 1 / 3, rel=1e-14)
        # pair: -2 x_t delta m sigma = -2 sigma; stat: 1 (2/3 - 1) = -1/3
        assert g.xi_t[0, 0] == pytest.approx(-2 * SIGMOID_M1 - 1 / 3, rel=1e-14)
        # pair: delta^2 sigma; regularizer: 1/2 - 1/2 = 0
        assert g.xi_M[0, 0] == pytest.approx(SIGMOID_M1, rel=1e-14)
        # logistic: -eps sigma; penalty: eps^2 / |eps| = 1
        assert g.xi_v[0] == pytest.approx(1 - SIGMOID_M1, rel=1e-14)

    def test_saturation(self):
        # similar pair far inside its margin with a sharp logistic
        pt = ProductPoint(np.eye(1), np.eye(1), np.eye(1), np.full(1, -np.inf))
        pairs = PairSet.from_tuples([((0, 0), (0, 1), 1)])
        X = np.array([[0.0], [0.01]])
        g = euclidean_gradients(pt, X, X, pairs, scalar_stats(1.0, 1.0), 200.0, 0.0)
        assert abs(g.xi_s[0, 0]) < 1e-80
        assert abs(g.xi_M[0, 0]) < 1e-80

    @pytest.mark.parametrize("mode", ["unsupervised", "semi"])
    def test_finite_differences(self, rng, mode):
        for _ in range(5):
            inst = random_instance(rng, mode)
            args = (inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"], inst["lam"])
            g = euclidean_gradients(*args)
            for ana, num in zip(g.blocks(), numerical_gradients(*args)):
                assert np.max(np.abs(ana - num) / np.maximum(1.0, np.abs(num))) < 1e-5

    def test_doubled_metric_gradient_fails_certification(self, rng):
        # the alternative published constant (2 y_k instead of y_k) is rejected
        inst = random_instance(rng, "semi")
        args = (inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"], 0.0)
        g = euclidean_gradients(*args)
        reg = (np.linalg.inv(inst["point"].M + np.eye(inst["point"].p)) - 0.5 * np.linalg.inv(inst["point"].M)) / inst["point"].p
        doubled = 2 * (g.xi_M - reg) + reg
        num = numerical_gradients(*args)[2]
        assert np.max(np.abs(g.xi_M - num)) < 1e-6
        assert np.max(np.abs(doubled - num)) > 1e-4

    def test_problem_wrapper(self, rng):
        inst = random_instance(rng, "semi")
        prob = ILSProblem(inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"], inst["lam"])
        direct = total_loss(inst["point"], inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], inst["beta"], inst["lam"])
        assert prob.loss(inst["point"]).total == direct.total
        with pytest.raises(ValueError):
            ILSProblem(inst["Xs"], inst["Xt"], inst["pairs"], inst["stats"], 0.0)
