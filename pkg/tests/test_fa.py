import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import gammaln
from scipy import integrate

from rtt.errors import InvalidArgument
from rtt.fa import DEFAULT_XI_GRID, f_a_single, log_f_a_single


class TestScaling:
    def test_scale_location_rule(self):
        # f_a(c y + b) = c^{-k} f_a(y) for any c > 0, b.
        y = np.array([2.0, 0.7, -0.4, -1.1])
        base = log_f_a_single(y)
        got = log_f_a_single(2.0 * y + 1.0)
        assert_allclose(got, base - 4.0 * math.log(2.0), rtol=1e-10)

    def test_positive_for_strictly_decreasing(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = np.sort(rng.normal(size=5))[::-1]
            assert np.isfinite(log_f_a_single(y))

    def test_tied_block_is_unbounded(self):
        assert log_f_a_single(np.array([1.0, 1.0, 1.0])) == np.inf


class TestQuadratureAccuracy:
    def test_zero_shape_closed_form(self):
        # Single-point grid at xi = 0: Gamma(k)^2 / S^k exactly.
        y = np.array([1.5, 0.4, -0.2])
        s = (y - y[-1]).sum()
        want = 2.0 * gammaln(3) - 3.0 * math.log(s)
        assert_allclose(log_f_a_single(y, xi_grid=[0.0]), want, rtol=1e-12)

    @pytest.mark.parametrize("xi", [-0.5, -0.2, 0.1, 0.3, 0.5])
    def test_against_adaptive_quadrature(self, xi):
        # Independent oracle: integrate the reduced integrand adaptively.
        y = np.array([1.0, 0.35, 0.0])
        d = (y[:-1] - y[-1])
        k = y.size

        def integrand(r):
            return r ** (k - 1) * np.prod((1.0 + xi * d * r) ** (-1.0 - 1.0 / xi))

        rmax = np.inf if xi > 0 else -1.0 / (xi * d[0])
        val, _ = integrate.quad(integrand, 0.0, rmax, limit=200)
        want = gammaln(k - xi) + math.log(val)
        assert_allclose(log_f_a_single(y, xi_grid=[xi], nodes=60), want, rtol=5e-5)

    def test_node_doubling_stability(self):
        y = np.array([1.0, 0.0])
        a = log_f_a_single(y, nodes=40)
        b = log_f_a_single(y, nodes=80)
        assert abs(a - b) < 1e-4

    def test_grid_average(self):
        y = np.array([0.8, 0.1, -0.5])
        per_xi = np.array([log_f_a_single(y, xi_grid=[x]) for x in DEFAULT_XI_GRID])
        want = math.log(np.exp(per_xi).mean())
        assert_allclose(log_f_a_single(y), want, rtol=1e-10)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        ys = np.sort(rng.normal(size=(10, 4)), axis=1)[:, ::-1]
        batch = log_f_a_single(ys)
        for i in range(10):
            assert_allclose(batch[i], log_f_a_single(ys[i]), rtol=1e-12)


class TestValidation:
    def test_small_block_rejected(self):
        with pytest.raises(InvalidArgument):
            log_f_a_single(np.array([1.0]))

    def test_empty_grid_rejected(self):
        with pytest.raises(InvalidArgument):
            f_a_single(np.array([1.0, 0.0]), xi_grid=[])
