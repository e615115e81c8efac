import numpy as np
import pytest

from conftest import random_design
from sparseproj.debias import (DebiasError, bvm_diagnostic, build_theta_hat, credible_intervals, debias_draw,
                               debias_ensemble, debiased_gl_estimator, fit_nodewise, nodewise_lambda_max,
                               theta_identity_report)
from sparseproj.design import GroupSpec, build_grouped_design, gram
from sparseproj.penalties import PenaltyConfig
from sparseproj.posterior import fit_ridge_posterior, sample_posterior
from sparseproj.projection import GramProblem, cross_validate_lambda, fit_group_lasso, project_draws
from sparseproj.simulation import LinearScenario, generate_linear


def _orthonormal(n, sizes, seed=0):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, sum(sizes))))
    return build_grouped_design(Q * np.sqrt(n), GroupSpec.from_sizes(sizes))


class TestNodewise:
    def test_orthogonal_blocks_give_zero(self):
        d = _orthonormal(40, [2, 2, 2])
        f = fit_nodewise(d, 1, 0, 0.1)
        assert np.all(f.gamma == 0)
        assert np.allclose(f.residual, d.X[:, 2])

    def test_above_lambda_max_is_zero(self, rng):
        d = random_design(rng, 50, [2, 3, 2])
        prob = GramProblem.from_design(d)
        lmax = nodewise_lambda_max(prob, 1, 3)
        assert np.all(fit_nodewise(d, 1, 1, lmax * 1.0001).gamma == 0)
        assert np.any(fit_nodewise(d, 1, 1, lmax * 0.5).gamma != 0)

    def test_matches_regression_solver(self, rng):
        d = random_design(rng, 60, [2, 3, 2])
        sl = d.groups.slice(1)
        others = np.r_[0:sl.start, sl.stop:d.p]
        sub = build_grouped_design(d.X[:, others], GroupSpec.from_sizes([2, 2]))
        lam = 0.05
        ref = fit_group_lasso(sub, d.X[:, sl.start + 2], lam, tol=1e-11).beta_star
        got = fit_nodewise(d, 1, 2, lam, tol=1e-11).gamma
        assert np.allclose(got, ref, atol=1e-8)

    def test_bad_column(self, rng):
        d = random_design(rng, 20, [2, 2])
        with pytest.raises((ValueError, DebiasError)):
            fit_nodewise(d, 0, 2, 0.1)


class TestThetaHat:
    def test_identity_gram_gives_identity(self):
        d = _orthonormal(30, [2, 2, 3])
        th = build_theta_hat(d, lambdas=0.1)
        assert np.allclose(th.theta, np.eye(7), atol=1e-8)

    def test_block_orthogonal_gives_block_inverse(self):
        rng = np.random.default_rng(2)
        Q, _ = np.linalg.qr(rng.standard_normal((40, 4)))
        A = Q[:, :2] @ np.array([[1.0, 0.5], [0.0, 1.0]])
        B = Q[:, 2:] @ np.array([[2.0, 0.0], [0.3, 1.0]])
        d = build_grouped_design(np.hstack([A, B]) * np.sqrt(40), GroupSpec.from_sizes([2, 2]))
        th = build_theta_hat(d, lambdas=0.2)
        S = gram(d)
        want = np.zeros((4, 4))
        want[:2, :2] = np.linalg.inv(S[:2, :2])
        want[2:, 2:] = np.linalg.inv(S[2:, 2:])
        assert np.allclose(th.theta, want, atol=1e-8)

    def test_identities_random_design(self, rng):
        d = random_design(rng, 100, [2, 2, 2, 2])
        th = build_theta_hat(d, lambdas="cv", seed=1)
        rep = theta_identity_report(th, d)
        assert rep["diag"] <= 1e-8
        assert rep["offdiag"] <= 1e-6
        assert rep["kkt"] <= 1e-6
        assert np.all(th.condition_numbers < 1e12)

    def test_schedules(self, rng):
        d = random_design(rng, 60, [2, 3])
        a = build_theta_hat(d, lambdas=[0.1, 0.2])
        b = build_theta_hat(d, lambdas={(0, 0): 0.1, (0, 1): 0.1, (1, 0): 0.2, (1, 1): 0.2, (1, 2): 0.2})
        assert np.allclose(a.theta, b.theta)
        c = build_theta_hat(d, lambdas="cv", per_column=True)
        assert theta_identity_report(c, d)["diag"] <= 1e-8
        with pytest.raises(ValueError):
            build_theta_hat(d, lambdas="bogus")

    def test_singular_block_rejected(self, rng):
        X = rng.standard_normal((30, 4))
        X[:, 1] = X[:, 0]
        d = build_grouped_design(X, GroupSpec.from_sizes([2, 2]))
        with pytest.raises(DebiasError, match="singular"):
            build_theta_hat(d, lambdas=0.1)


class TestDebiasDraws:
    def test_formula_and_trivial_cases(self, rng):
        d = random_design(rng, 40, [2, 2, 2])
        th = build_theta_hat(d, lambdas=0.1)
        beta, bstar, b0 = rng.standard_normal((3, 6))
        got, delta = debias_draw(th, d, beta, bstar, beta0=b0)
        S = d.X.T @ d.X / d.n
        assert np.allclose(got, bstar + th.theta @ S @ (beta - bstar), atol=1e-10)
        assert np.allclose(delta, (th.theta @ S - np.eye(6)) @ (bstar - b0), atol=1e-10)
        assert np.allclose(debias_draw(th, d, bstar, bstar), bstar)

    def test_identity_case(self):
        d = _orthonormal(20, [2, 2])
        beta, bstar = np.array([1.0, 2, 3, 4]), np.array([0.5, 0, 0, 1])
        assert np.allclose(debias_draw(np.eye(4), d, beta, bstar), beta, atol=1e-12)

    def test_ensemble_matches_single(self, rng):
        d = random_design(rng, 40, [2, 2, 2])
        th = build_theta_hat(d, lambdas=0.1)
        B, Bs = rng.standard_normal((2, 5, 6))
        ens = debias_ensemble(th, d, (B, Bs), beta0=np.zeros(6))
        for i in range(5):
            assert np.allclose(ens.beta_dd[i], debias_draw(th, d, B[i], Bs[i]), atol=1e-10)
        assert ens.correction_norms.shape == (5, 3)

    def test_debiased_gl_estimator(self, rng):
        d = random_design(rng, 50, [2, 2])
        y = rng.standard_normal(50)
        th = build_theta_hat(d, lambdas=0.1)
        bgl = fit_group_lasso(d, y, 0.1).beta_star
        assert np.allclose(debiased_gl_estimator(d, d.X @ bgl, bgl, th), bgl)
        S_inv = np.linalg.inv(gram(d))
        ols = np.linalg.lstsq(d.X, y, rcond=None)[0]
        assert np.allclose(debiased_gl_estimator(d, y, bgl, S_inv), ols, atol=1e-10)


class TestIntervals:
    def test_identical_draws(self):
        band = credible_intervals(np.tile([1.0, -2.0], (10, 1)))
        assert np.all(band.length == 0) and np.allclose(band.lower, [1, -2])

    def test_normal_quantiles(self):
        z = np.random.default_rng(0).standard_normal(100_000)
        band = credible_intervals(z)
        assert band.lower[0] == pytest.approx(-1.96, abs=0.03)
        assert band.upper[0] == pytest.approx(1.96, abs=0.03)

    def test_interquartile(self):
        band = credible_intervals(np.random.default_rng(1).standard_normal((50, 3)), alpha=0.5)
        assert np.all(band.lower < band.median) and np.all(band.median < band.upper)
        assert band.lower_position == pytest.approx(49 * 0.25)

    def test_linear_interpolation(self):
        band = credible_intervals(np.arange(5.0)[:, None], alpha=0.5)
        assert band.lower[0] == 1.0 and band.upper[0] == 3.0
        band = credible_intervals(np.arange(4.0)[:, None], alpha=0.5)
        assert band.lower[0] == 0.75

    def test_errors(self):
        with pytest.raises(ValueError):
            credible_intervals(np.ones((1, 2)))
        with pytest.raises(ValueError):
            credible_intervals(np.ones((5, 2)), alpha=1.0)


def _bvm_run(n, seed, K=10, s0=3, D=400):
    design, y, beta0, _ = generate_linear(LinearScenario(K=K, n=n, s0=s0, seed=seed))
    from sparseproj.design import standardize
    d = standardize(design)
    b0 = beta0 * d.column_scales
    post = fit_ridge_posterior(d, y - y.mean(), sigma=1.0)
    draws = sample_posterior(post, D, seed)
    lam = cross_validate_lambda(d, y - y.mean(), "gl", seed=seed)
    ens = project_draws(d, draws, PenaltyConfig("gl", lam))
    th = build_theta_hat(d, lambdas="cv", seed=seed)
    return d, post, th, debias_ensemble(th, d, ens, beta0=b0), b0


def test_bvm_mean_discrepancy_small():
    d, post, th, dens, b0 = _bvm_run(500, 3)
    rep = bvm_diagnostic(dens, th, d, post, beta0=b0)
    assert rep["max_mean_discrepancy_se"] < 5
    assert np.all(np.abs(rep["sd_ratio"] - 1) < 0.25)


def test_bvm_degenerate_fixture(rng):
    d = random_design(rng, 30, [2, 2])
    post = fit_ridge_posterior(d, rng.standard_normal(30), sigma=0.0)
    draws = sample_posterior(post, 5, 0)
    th = build_theta_hat(d, lambdas=0.1)
    ens = debias_ensemble(th, d, (draws.draws, np.tile(post.mean, (5, 1))))
    rep = bvm_diagnostic(ens, th, d, post, beta0=post.mean)
    assert np.allclose(rep["emp_sd"], 0) and np.allclose(rep["pred_sd"], 0)


@pytest.mark.slow
def test_bvm_discrepancy_trend():
    disc = {}
    for n in (100, 500):
        vals = []
        for r in range(10):
            d, post, th, dens, b0 = _bvm_run(n, 100 + r, D=100)
            vals.append(bvm_diagnostic(dens, th, d, post, beta0=b0)["mean_abs_discrepancy"])
        disc[n] = np.mean(vals)
    assert disc[500] <= disc[100]
