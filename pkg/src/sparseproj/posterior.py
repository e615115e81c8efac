"""Conjugate Gaussian (ridge) posterior and reproducible sampling from it."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .design import GroupedDesign

log = logging.getLogger(__name__)

AUTO = "auto"


class PosteriorError(RuntimeError):
    pass


@dataclass(frozen=True)
class RidgePosterior:
    """``N(mean, F F^T)`` with ``F F^T = sigma^2 (X^T X + a_n I)^-1``.

    ``df`` is the trace of the ridge hat matrix ``X (X^T X + a_n I)^-1 X^T``.
    """

    mean: np.ndarray
    cov_factor: np.ndarray
    sigma: float
    a_n: float
    df: float = float("nan")
    form: str = "primal"

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T


@dataclass(frozen=True)
class PosteriorDraws:
    draws: np.ndarray
    seed: int
    a_n: float = float("nan")
    sigma: float = float("nan")

    @property
    def D(self) -> int:
        return self.draws.shape[0]


def ridge_mean(X: np.ndarray, y: np.ndarray, a_n: float, form: str | None = None) -> np.ndarray:
    """``(X^T X + a_n I)^-1 X^T y``, via the n x n dual system when ``p > n``."""
    n, p = X.shape
    form = form or ("dual" if p > n else "primal")
    if form == "dual":
        G = X @ X.T
        G[np.diag_indices(n)] += a_n
        alpha = linalg.cho_solve(linalg.cho_factor(G, lower=True), y)
        return X.T @ alpha
    A = X.T @ X
    A[np.diag_indices(p)] += a_n
    return linalg.cho_solve(linalg.cho_factor(A, lower=True), X.T @ y)


def _inverse_cholesky(A: np.ndarray) -> np.ndarray:
    """Lower-triangular ``F`` with ``F F^T = A^-1``."""
    p = A.shape[0]
    try:
        L = linalg.cholesky(A, lower=True)
        Linv = linalg.solve_triangular(L, np.eye(p), lower=True)
        Ainv = Linv.T @ Linv
        return linalg.cholesky(0.5 * (Ainv + Ainv.T), lower=True)
    except linalg.LinAlgError:
        log.info("Cholesky failed; falling back to eigendecomposition")
    w, Q = linalg.eigh(A)
    w = np.maximum(w, 1e-12)
    Ainv = (Q / w) @ Q.T
    try:
        return linalg.cholesky(0.5 * (Ainv + Ainv.T), lower=True)
    except linalg.LinAlgError:
        return Q / np.sqrt(w)


def hat_singular_values(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U, d, _ = linalg.svd(X, full_matrices=False)
    return U, d


def hat_matrix(design: GroupedDesign, a_n: float) -> np.ndarray:
    """``H(a_n) = X (X^T X + a_n I)^-1 X^T``."""
    U, d = hat_singular_values(design.X)
    w = d**2 / (d**2 + a_n)
    return (U * w) @ U.T


def ridge_sigma(design: GroupedDesign, y: np.ndarray, mean: np.ndarray, df: float) -> float:
    """``||y - X mean||^2 / max(n - df, 1)``, square-rooted."""
    resid = y - design.X @ mean
    return float(np.sqrt(resid @ resid / max(design.n - df, 1.0)))


def lasso_residual_sigma(design: GroupedDesign, y, beta_fit) -> float:
    """``||y - X beta||^2 / (n - 1 - nnz(beta))`` from a cross-validated sparse fit.

    Used in place of the ridge residual estimate when ``p`` is comparable to
    or larger than ``n``, where the ridge fit interpolates and its residual
    variance collapses toward zero.
    """
    y = np.asarray(y, dtype=float)
    resid = y - design.X @ beta_fit
    dof = max(design.n - 1 - int(np.count_nonzero(beta_fit)), 1)
    return float(np.sqrt(resid @ resid / dof))


def fit_ridge_posterior(design: GroupedDesign, y, a_n: float | None = None,
                        sigma: float | str = AUTO) -> RidgePosterior:
    """Posterior of ``beta`` under the prior ``N(0, sigma^2 / a_n I)``.

    Parameters
    ----------
    design : GroupedDesign
    y : array of shape (n,)
    a_n : float, optional
        Prior precision scale; defaults to ``1 / n``.
    sigma : float or "auto"
        Noise level. ``"auto"`` plugs in the ridge residual estimate
        ``||y - X mean||^2 / max(n - df, 1)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (design.n,):
        raise PosteriorError(f"y must have length {design.n}, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise PosteriorError("y contains non-finite values")
    a_n = 1.0 / design.n if a_n is None else float(a_n)
    if not a_n > 0:
        raise PosteriorError(f"a_n must be positive, got {a_n}")
    X = design.X
    form = "dual" if design.p > design.n else "primal"
    try:
        mean = ridge_mean(X, y, a_n, form)
    except linalg.LinAlgError as exc:
        raise PosteriorError(f"ridge system factorization failed: {exc}") from exc
    d = linalg.svdvals(X)
    df = float(np.sum(d**2 / (d**2 + a_n)))
    if isinstance(sigma, str):
        if sigma != AUTO:
            raise PosteriorError(f"sigma must be a positive number or 'auto', got {sigma!r}")
        sigma = ridge_sigma(design, y, mean, df)
    sigma = float(sigma)
    if not sigma >= 0:
        raise PosteriorError(f"sigma must be non-negative, got {sigma}")
    A = X.T @ X
    A[np.diag_indices(design.p)] += a_n
    F = sigma * _inverse_cholesky(A)
    return RidgePosterior(mean, F, sigma, a_n, df, form)


def draw_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for draw ``index``; independent of evaluation order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_posterior(post: RidgePosterior, D: int, seed: int) -> PosteriorDraws:
    """``D`` draws ``mean + F z_i`` with ``z_i`` from the ``(seed, i)`` substream."""
    if D < 1:
        raise ValueError("need at least one draw")
    Z = np.empty((D, post.p))
    for i in range(D):
        Z[i] = draw_generator(seed, i).standard_normal(post.p)
    draws = post.mean + Z @ post.cov_factor.T
    return PosteriorDraws(draws, int(seed), post.a_n, post.sigma)


def posterior_predictive_mean(post: RidgePosterior, design: GroupedDesign) -> np.ndarray:
    """``X mean``."""
    return design.X @ post.mean
