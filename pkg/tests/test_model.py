import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from rtt.errors import InvalidArgument, OutOfSupport
from rtt.gev import TailParams
from rtt.model import (
    ExtendedTail,
    ThetaFull,
    YStar,
    big_m_star,
    extended_density,
    joint_density,
    log_extended_density_parts,
    m_star,
    recombine,
    sample_extended_tail,
    sample_extended_tail_block,
    sample_ystar,
    sample_ystar_block,
    single_tail_density,
)

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


class TestMStar:
    def test_at_origin_quarter_shape(self):
        assert_allclose(m_star(0.0, 0.0, 0.25), 4.0 / 3.0, rtol=1e-14)

    def test_zero_shape_limit(self):
        # Analytic limit e^{-x}(kappa + x + 1) and the generic formula at a
        # tiny shape agree.
        assert_allclose(m_star(0.0, 0.0, 0.0), 1.0, rtol=1e-14)
        assert_allclose(m_star(0.3, 0.7, 1e-8), m_star(0.3, 0.7, 0.0), rtol=1e-6)

    def test_pareto_location(self):
        # kappa = 1/xi collapses m* to (1+xi x)^(1-1/xi) / (xi (1-xi)).
        xi = 0.4
        want = (1.4) ** (1.0 - 1.0 / xi) / (xi * (1.0 - xi))
        assert_allclose(m_star(1.0, 1.0 / xi, xi), want, rtol=1e-12)
        assert_allclose(want, 2.515, atol=5e-4)

    def test_domain_errors(self):
        with pytest.raises(InvalidArgument):
            m_star(0.0, 0.0, 1.0)
        with pytest.raises(OutOfSupport):
            m_star(-3.0, 0.0, 0.5)

    def test_big_m_star_scaling(self):
        theta = TailParams(0.0, 1.0, 0.25)
        base = big_m_star(np.array([0.0]), theta)
        assert_allclose(base, 4.0 / 3.0, rtol=1e-14)
        # Linear in eta at fixed standardized coordinates.
        theta2 = TailParams(0.0, 2.0, 0.25)
        assert_allclose(big_m_star(np.array([0.0]), theta2), 2.0 * base, rtol=1e-14)
        assert_allclose(big_m_star(np.array([0.0]), TailParams(0.0, 1.0, 0.0)), 1.0, rtol=1e-14)


class TestSampling:
    def test_mu_enters_additively(self):
        theta = ThetaFull(TailParams(0.2, 0.5, 0.1), TailParams(0.4, 0.8, 0.3))
        a = sample_ystar(theta, 0.0, 4, np.random.default_rng(9))
        b = sample_ystar(theta, 5.0, 4, np.random.default_rng(9))
        assert_allclose(b.y0 - a.y0, 5.0, rtol=1e-12)
        assert_allclose(a.y_right, b.y_right)
        assert_allclose(a.y_left, b.y_left)

    def test_symmetric_parameter_sign_flip(self):
        # Under equal tails, (Y_R, Y_L, Y0) and (Y_L, Y_R, -Y0) share a
        # distribution, so Y0 is symmetric about zero and the tail blocks are
        # exchangeable in law.
        t = TailParams(0.5, 0.7, 0.2)
        theta = ThetaFull(t, t)
        yr, yl, y0 = sample_ystar_block(theta, 0.0, 3, np.random.default_rng(21), 200_000)
        assert stats.ks_2samp(y0, -y0).statistic < 0.005
        assert stats.ks_2samp(yr[:, 0], yl[:, 0]).statistic < 0.005

    def test_mean_shift_decomposition(self):
        from rtt.model import _m_star_raw
        from rtt.gev import sample_joint_tail

        theta = ThetaFull(TailParams(0.3, 0.6, -0.2), TailParams(1.2, 0.4, 0.35))
        n = 400_000
        yr, yl, y0 = sample_ystar_block(theta, 1.5, 4, np.random.default_rng(33), n)
        # Monte Carlo oracle for E[m*] on independent streams.
        rng = np.random.default_rng(99)
        xr = sample_joint_tail(4, theta.right.xi, rng, size=n)
        xl = sample_joint_tail(4, theta.left.xi, rng, size=n)
        want = (
            1.5
            - theta.right.eta * _m_star_raw(xr[:, -1], theta.right.kappa, theta.right.xi).mean()
            + theta.left.eta * _m_star_raw(xl[:, -1], theta.left.kappa, theta.left.xi).mean()
        )
        se = y0.std(ddof=1) / math.sqrt(n)
        assert abs(y0.mean() - want) < 5.0 * se


class TestJointDensity:
    def test_gumbel_point_value(self):
        t = TailParams(0.0, 1.0, 0.0)
        y = YStar(np.array([0.0]), np.array([0.0]), 0.0)
        want = math.exp(-2.0) * PHI0
        assert_allclose(joint_density(y, ThetaFull(t, t), 0.0), want, rtol=1e-12)
        assert_allclose(want, 0.05400, atol=1e-5)

    def test_out_of_support_tail_gives_zero(self):
        theta = ThetaFull(TailParams(0.0, 1.0, 0.0), TailParams(0.0, 1.0, -1.0))
        y = YStar(np.array([2.0]), np.array([0.0]), 0.0)
        assert joint_density(y, theta, 0.0) == 0.0

    def test_swap_symmetry(self):
        tl = TailParams(0.1, 0.5, -0.2)
        tr = TailParams(0.8, 0.9, 0.3)
        theta = ThetaFull(tl, tr)
        y = YStar(np.array([1.2, 0.4]), np.array([0.9, 0.1]), -0.3)
        mirrored = YStar(y.y_left, y.y_right, 0.3)
        assert_allclose(
            joint_density(y, theta, 0.0),
            joint_density(mirrored, theta.swapped(), 0.0),
            rtol=1e-12,
        )


class TestSingleTailDensity:
    def test_zero_thin_tail_reduces(self):
        theta = TailParams(0.0, 1.0, 0.0)
        got = single_tail_density(np.array([0.0]), np.array([0.0]), -1.0, theta)
        assert_allclose(got, math.exp(-1.0) * PHI0, rtol=1e-12)
        assert_allclose(got, 0.14676, atol=5e-6)

    def test_out_of_support_heavy_tail(self):
        theta = TailParams(0.0, 1.0, -1.0)
        assert single_tail_density(np.array([2.0]), np.array([0.0]), 0.0, theta) == 0.0

    def test_thin_tail_enters_through_sums(self):
        theta = TailParams(0.2, 0.7, 0.1)
        heavy = np.array([0.9, 0.3])
        thin_a = np.array([0.5, 0.1])
        thin_b = np.array([0.1, 0.5])  # same sums, different order
        got_a = single_tail_density(heavy, thin_a, 0.4, theta)
        got_b = single_tail_density(heavy, np.sort(thin_b)[::-1], 0.4, theta)
        assert_allclose(got_a, got_b, rtol=1e-12)


class TestExtendedTails:
    def test_conditional_variance_is_half(self):
        theta = TailParams(0.5, 0.8, 0.2)
        y_tail, y0e = sample_extended_tail_block(theta, 3, np.random.default_rng(17), 200_000)
        from rtt.model import big_m_star

        u = y0e + big_m_star(y_tail, theta)
        assert abs(u.mean()) < 4.0 * u.std(ddof=1) / math.sqrt(u.size)
        assert abs(u.var(ddof=1) - 0.5) < 0.01

    def test_density_normalizes(self):
        theta = TailParams(0.3, 1.1, 0.25)
        rng = np.random.default_rng(4)
        ref_tail = stats.t(df=1.5, scale=4.0)
        ref_mid = stats.t(df=3.0, scale=6.0)
        y = ref_tail.rvs(size=400_000, random_state=rng)
        y0 = ref_mid.rvs(size=400_000, random_state=rng)
        logref = ref_tail.logpdf(y) + ref_mid.logpdf(y0)
        logf = log_extended_density_parts(y[:, None], y0, theta)
        w = np.exp(logf - logref)
        est = w.mean()
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(est - 1.0) < max(0.01, 4.0 * se)

    def test_recombination_matches_direct_sampling(self):
        tl = TailParams(0.6, 0.5, -0.1)
        tr = TailParams(1.4, 0.9, 0.3)
        theta = ThetaFull(left=tl, right=tr)
        rng = np.random.default_rng(8)
        n = 50_000
        r_tail, r_y0e = sample_extended_tail_block(tr, 3, rng, n)
        l_tail, l_y0e = sample_extended_tail_block(tl, 3, rng, n)
        y0_rec = r_y0e - l_y0e
        _, _, y0_dir = sample_ystar_block(theta, 0.0, 3, np.random.default_rng(80), n)
        ks = stats.ks_2samp(y0_rec, y0_dir)
        assert ks.statistic < 1.63 * math.sqrt(2.0 / n)

    def test_recombine_roles(self):
        a = ExtendedTail(np.array([2.0, 1.0]), 0.25)
        b = ExtendedTail(np.array([1.5, 0.5]), -0.75)
        y = recombine(a, b)
        assert_allclose(y.y_right, a.y_tail)
        assert_allclose(y.y_left, b.y_tail)
        assert_allclose(y.y0, 1.0)

    def test_scalar_extended_api(self):
        theta = TailParams(0.0, 1.0, 0.0)
        e = sample_extended_tail(theta, 2, np.random.default_rng(0))
        assert e.y_tail.shape == (2,)
        assert extended_density(e, theta) > 0.0
