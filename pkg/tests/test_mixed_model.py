import numpy as np
import pytest

from gxgkm.errors import NumericError
from gxgkm.mixed_model import (VarianceComponents, assemble_v, blup_from_coefficients,
                               henderson_blup, reml_fit, reml_score, restricted_loglik,
                               ss_first_order_solve)

from conftest import random_am_kernels, random_psd


def loglik_oracle(y, kernels, beta):
    """Straight-line restricted log-likelihood with explicit inverses."""
    n = len(y)
    V = beta[0] * np.eye(n) + sum(b * K for b, K in zip(beta[1:], kernels))
    Vi = np.linalg.inv(V)
    one = np.ones(n)
    s = one @ Vi @ one
    mu = (one @ Vi @ y) / s
    r = y - mu
    return -0.5 * (np.linalg.slogdet(V)[1] + np.log(s) + r @ Vi @ r)


def central_difference(y, kernels, beta, h=1e-5):
    g = np.zeros(4)
    for i in range(1 + len(kernels)):
        up, dn = beta.copy(), beta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (restricted_loglik(y, kernels, up) - restricted_loglik(y, kernels, dn)) / (2 * h)
    return g


class TestRestrictedLoglik:
    def test_zero_trait_identity_covariance(self):
        assert restricted_loglik([0.0, 0.0], [], [1.0]) == pytest.approx(-0.5 * np.log(2))

    def test_matches_straight_line_evaluation(self, rng):
        n = 15
        ks = [random_psd(rng, n) for _ in range(3)]
        y = rng.standard_normal(n)
        beta = np.array([0.7, 0.2, 0.3, 0.1])
        assert restricted_loglik(y, ks, beta) == pytest.approx(loglik_oracle(y, ks, beta), rel=1e-12)

    def test_scaling_v(self, rng):
        n = 12
        ks = [random_psd(rng, n) for _ in range(2)]
        y = rng.standard_normal(n)
        beta = np.array([0.5, 0.4, 0.2, 0.0])
        c = 3.0
        # |cV| adds n ln c, 1'(cV)^-1 1 subtracts ln c, quadratic scales by 1/c
        l1 = restricted_loglik(y, ks, beta)
        l2 = restricted_loglik(y, ks, c * beta)
        quad = -2 * (l1 + 0.5 * np.log(np.linalg.det(assemble_v(ks, beta))) +
                     0.5 * np.log(np.ones(n) @ np.linalg.solve(assemble_v(ks, beta), np.ones(n))))
        expected = l1 - 0.5 * (n - 1) * np.log(c) + 0.5 * quad * (1 - 1 / c)
        assert l2 == pytest.approx(expected, rel=1e-10)

    def test_constant_trait_has_no_quadratic(self, rng):
        n = 10
        ks = [random_psd(rng, n)]
        beta = np.array([1.0, 0.5])
        y = np.full(n, 4.2)
        V = assemble_v(ks, beta)
        one = np.ones(n)
        expected = -0.5 * (np.linalg.slogdet(V)[1] + np.log(one @ np.linalg.solve(V, one)))
        assert restricted_loglik(y, ks, beta) == pytest.approx(expected, rel=1e-12)

    def test_location_invariance(self, rng):
        n = 10
        ks = [random_psd(rng, n) for _ in range(3)]
        y = rng.standard_normal(n)
        beta = [1.0, 0.2, 0.2, 0.2]
        assert restricted_loglik(y + 17.0, ks, beta) == pytest.approx(restricted_loglik(y, ks, beta), rel=1e-10)

    def test_non_pd_raises(self):
        with pytest.raises(NumericError):
            restricted_loglik(np.ones(3), [-np.eye(3)], [0.5, 1.0])


class TestRemlScore:
    def test_matches_finite_differences(self, rng):
        n = 20
        ks = list(random_am_kernels(rng, n))
        y = rng.standard_normal(n)
        beta = np.array([0.6, 0.3, 0.2, 0.4])
        g = reml_score(y, ks, beta)
        fd = central_difference(y, ks, beta)
        np.testing.assert_allclose(g, fd, rtol=1e-4)

    def test_zero_kernels_only_sigma_entry(self, rng):
        n = 8
        ks = [np.zeros((n, n))] * 3
        g = reml_score(rng.standard_normal(n), ks, [1.3, 0.1, 0.1, 0.1])
        assert g[0] != 0 and np.all(g[1:] == 0)


class TestRemlFit:
    def test_interior_optimum_has_zero_gradient(self, rng):
        n = 300
        K1, K2, _ = random_am_kernels(rng, n, snps=(10, 10))
        V = assemble_v([K1, K2], [0.5, 1.0, 1.0])
        y = np.linalg.cholesky(V) @ rng.standard_normal(n)
        fit = reml_fit(y, [K1, K2])
        assert fit.components.tau1 > 0 and fit.components.tau2 > 0
        beta = fit.components.as_array()[:3]
        g = reml_score(y, [K1, K2], beta)[:3]
        # the stopping rule bounds the log-scale gradient, not the raw one
        assert np.max(np.abs(g * beta)) < 1e-3
        best = fit.reml_loglik
        for i in range(3):
            for h in (1e-3, -1e-3):
                b = beta.copy()
                b[i] *= np.exp(h)
                assert restricted_loglik(y, [K1, K2], b) <= best + 1e-9

    def test_beats_truth_and_is_deterministic(self, rng):
        n = 100
        ks = list(random_am_kernels(rng, n))
        truth = np.array([0.8, 0.1, 0.1, 0.0])
        y = np.linalg.cholesky(assemble_v(ks, truth)) @ rng.standard_normal(n)
        f1 = reml_fit(y, ks, (True, True, True, False))
        f2 = reml_fit(y, ks, (True, True, True, False))
        assert f1.components == f2.components
        assert f1.components.tau3 == 0.0
        assert f1.reml_loglik >= restricted_loglik(y, ks, truth) - 1e-9

    def test_kernel_order_permutes_components(self, rng):
        n = 80
        K1, K2, _ = random_am_kernels(rng, n)
        y = np.linalg.cholesky(assemble_v([K1, K2], [0.6, 0.4, 0.3])) @ rng.standard_normal(n)
        a = reml_fit(y, [K1, K2]).components
        b = reml_fit(y, [K2, K1]).components
        np.testing.assert_allclose([a.sigma2, a.tau1, a.tau2], [b.sigma2, b.tau2, b.tau1], rtol=1e-4, atol=1e-8)

    def test_sigma_only(self, rng):
        y = rng.standard_normal(50)
        fit = reml_fit(y, [])
        # intercept-only REML estimate is the unbiased sample variance
        assert fit.components.sigma2 == pytest.approx(np.var(y, ddof=1), rel=1e-6)


class TestHendersonDuality:
    def _instance(self, rng, n=10):
        ks = [random_psd(rng, n, ridge=0.1) for _ in range(3)]
        vc = VarianceComponents(*rng.uniform(0.2, 1.5, 4))
        y = rng.standard_normal(n) + 2.0
        return y, ks, vc

    def test_blup_equals_spline_solution(self, rng):
        y, ks, vc = self._instance(rng)
        b = henderson_blup(y, ks, vc)
        mu, *C = ss_first_order_solve(y, ks, vc.lambdas())
        m = blup_from_coefficients(ks, C)
        assert mu == pytest.approx(b.mu, rel=1e-8)
        for got, ref in zip((b.m1, b.m2, b.m12), m):
            np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-10 * np.abs(ref).max())

    def test_blup_equals_gls_form(self, rng):
        y, ks, vc = self._instance(rng)
        V = assemble_v(ks, vc)
        Vi = np.linalg.inv(V)
        one = np.ones(len(y))
        mu = one @ Vi @ y / (one @ Vi @ one)
        b = henderson_blup(y, ks, vc)
        assert b.mu == pytest.approx(mu, rel=1e-9)
        for tau, K, m in zip(vc.taus, ks, (b.m1, b.m2, b.m12)):
            np.testing.assert_allclose(m, tau * K @ Vi @ (y - mu), rtol=1e-8, atol=1e-12)

    def test_constant_trait(self, rng):
        _, ks, vc = self._instance(rng)
        b = henderson_blup(np.full(10, 3.0), ks, vc)
        assert b.mu == pytest.approx(3.0)
        for m in (b.m1, b.m2, b.m12):
            assert np.max(np.abs(m)) < 1e-10

    def test_residual_shrinks_as_taus_grow(self, rng):
        y, ks, _ = self._instance(rng)
        res = []
        for scale in (0.01, 0.1, 1.0, 10.0, 100.0):
            b = henderson_blup(y, ks, [1.0, scale, scale, scale])
            res.append(np.linalg.norm(y - b.mu - b.m1 - b.m2 - b.m12))
        assert all(a > b for a, b in zip(res, res[1:]))

    def test_singular_am_kernel_is_regularized(self, rng):
        # 3 SNPs cannot give a full-rank 12 x 12 kernel
        K1, K2, K3 = random_am_kernels(rng, 12, snps=(3, 3))
        b = henderson_blup(rng.standard_normal(12), [K1, K2, K3], [1.0, 0.5, 0.5, 0.5])
        assert np.all(np.isfinite(b.m1))


class TestSplineSystem:
    def test_heavy_penalty(self, rng):
        n = 10
        ks = [random_psd(rng, n, ridge=0.1) for _ in range(3)]
        y = rng.standard_normal(n)
        mu, *C = ss_first_order_solve(y, ks, [1e8] * 3)
        assert mu == pytest.approx(y.mean(), abs=1e-6)
        assert max(np.abs(c).max() for c in C) < 1e-6

    def test_normal_equations_residual(self, rng):
        n = 10
        ks = [random_psd(rng, n, ridge=0.1) for _ in range(3)]
        y = rng.standard_normal(n)
        lam = np.array([0.5, 2.0, 1.0])
        mu, *C = ss_first_order_solve(y, ks, lam)
        fit = mu + sum(K @ c for K, c in zip(ks, C))
        # gradient of the penalized criterion vanishes
        assert abs(np.sum(y - fit)) < 1e-8
        for K, c, l in zip(ks, C, lam):
            assert np.max(np.abs(K @ (y - fit) - l * K @ c)) < 1e-8
