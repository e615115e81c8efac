"""Nodewise group LASSO inverse-Gram surrogate, debiased draws and credible bands."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .design import GroupedDesign, gram
from .penalties import PenaltyConfig, PenaltyKind
from .posterior import RidgePosterior, hat_singular_values
from .projection import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    PATIENCE,
    GramProblem,
    ProjectionEnsemble,
    _fold_ids,
    lambda_grid,
    solve_gram,
)

log = logging.getLogger(__name__)


class DebiasError(RuntimeError):
    pass


@dataclass
class NodewiseFit:
    """Group LASSO of column ``l`` of group ``g`` on all other groups.

    ``gamma`` has length ``p - p_g`` (the other groups in column order) and
    ``subgradient`` is the matching block of ``K_g``: ``sqrt(p_k) gamma_k / ||gamma_k||``
    on active groups and ``(2/n) X_k^T r / lambda`` elsewhere.
    """

    g: int
    l: int
    gamma: np.ndarray
    lambda_gl: float
    residual: np.ndarray
    kkt_residual: float
    subgradient: np.ndarray
    converged: bool = True


@dataclass
class ThetaHat:
    theta: np.ndarray
    T_sq: list[np.ndarray]
    Gamma: list[np.ndarray]
    Lambda: list[np.ndarray]
    K: list[np.ndarray]
    condition_numbers: np.ndarray
    max_nodewise_kkt: float
    fits: list[list[NodewiseFit]] = field(default_factory=list, repr=False)


@dataclass
class DebiasedEnsemble:
    """Debiased draws ``beta** = beta* + Theta Sigma (beta - beta*)``.

    ``correction_norms`` holds per-draw per-group ``||Delta_k||`` and is only
    available when the true coefficients are known.
    """

    beta_dd: np.ndarray
    correction_norms: np.ndarray | None = None
    bvm_mean: np.ndarray | None = None
    bvm_cov_diag: np.ndarray | None = None
    draws: np.ndarray | None = None
    beta_star: np.ndarray | None = None

    @property
    def D(self) -> int:
        return self.beta_dd.shape[0]


@dataclass
class CredibleBand:
    level: float
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    lower_position: float
    upper_position: float

    @property
    def length(self) -> np.ndarray:
        return self.upper - self.lower

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


def _excluding(design: GroupedDesign, g: int, lam: float) -> PenaltyConfig:
    w = np.ones(design.K)
    w[g] = np.inf
    return PenaltyConfig(PenaltyKind.ADAPTIVE_GROUP_LASSO, lam, weights=w)


def _other_columns(design: GroupedDesign, g: int) -> np.ndarray:
    sl = design.groups.slice(g)
    return np.r_[0:sl.start, sl.stop:design.p]


def nodewise_lambda_max(prob: GramProblem, g: int, j: int) -> float:
    groups = prob.groups
    best = 0.0
    for k in range(groups.K):
        if k == g:
            continue
        sl = groups.slice(k)
        best = max(best, 2.0 * float(np.linalg.norm(prob.S[sl, j])) / math.sqrt(sl.stop - sl.start))
    return best


def fit_nodewise(design: GroupedDesign, g: int, l: int, lambda_gl: float, prob: GramProblem | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, u0=None) -> NodewiseFit:
    """Regress column ``l`` (0-based) of group ``g`` on ``X_{-g}`` with a group LASSO penalty.

    The penalty is ``lambda_gl * sum_{k != g} sqrt(p_k) ||gamma_k||``.
    """
    sl = design.groups.slice(g)
    p_g = sl.stop - sl.start
    if not 0 <= l < p_g:
        raise ValueError(f"column {l} out of range for group {g} of size {p_g}")
    prob = prob or GramProblem.from_design(design)
    j = sl.start + l
    res = solve_gram(prob, prob.S[:, j], _excluding(design, g, lambda_gl), u0=u0, tol=tol,
                     max_iter=max_iter, offset=float(prob.S[j, j]))
    if not res.converged:
        raise DebiasError(f"nodewise fit (group {g + 1}, column {l + 1}) did not converge: {res.error}")
    others = _other_columns(design, g)
    gamma = res.beta_star[others]
    resid = design.X[:, j] - design.X[:, others] @ gamma
    # 2/n X_{-g}^T r, expressed through the Gram matrix
    score = 2.0 * (prob.S[others, j] - prob.S[np.ix_(others, others)] @ gamma)
    sub = np.zeros_like(gamma)
    pos = 0
    for k in range(design.K):
        if k == g:
            continue
        sk = design.groups.slice(k)
        w = sk.stop - sk.start
        gk = gamma[pos:pos + w]
        nk = float(np.linalg.norm(gk))
        if nk > 0:
            sub[pos:pos + w] = math.sqrt(w) * gk / nk
        elif lambda_gl > 0:
            sub[pos:pos + w] = score[pos:pos + w] / lambda_gl
        pos += w
    return NodewiseFit(g, l, gamma, float(lambda_gl), resid, res.kkt_residual, sub, res.converged)


class _FoldCache:
    """Training-fold Gram problems shared by every nodewise cross-validation."""

    def __init__(self, design: GroupedDesign, folds: int, seed: int):
        self.design = design
        ids = _fold_ids(design.n, folds, seed)
        self.splits = []
        for f in range(folds):
            tr, te = ids != f, ids == f
            Xtr = design.X[tr]
            prob = GramProblem.from_gram(Xtr.T @ Xtr / tr.sum(), design.groups)
            self.splits.append((prob, design.X[te]))

    def cv_lambda(self, g: int, j: int, grid: np.ndarray, tol: float, max_iter: int,
                  patience: int | None = PATIENCE) -> float:
        """Grid value with the smallest mean held-out error (ties to the larger lambda).

        All folds walk the decreasing grid together with warm starts. With
        ``patience`` set, the walk stops once the mean error has exceeded its
        running minimum by more than one standard error for ``patience``
        consecutive grid points.
        """
        if grid.size == 1:
            return float(grid[0])
        design = self.design
        sl = design.groups.slice(g)
        F = len(self.splits)
        errs = np.full((F, grid.size), np.inf)
        warm = [None] * F
        best, worse = 0, 0
        for i, lam in enumerate(grid):
            pen = _excluding(design, g, float(lam))
            for f, (prob, Xte) in enumerate(self.splits):
                res = solve_gram(prob, prob.S[:, j], pen, u0=warm[f], tol=tol, max_iter=max_iter)
                warm[f] = u = res.beta_star
                r = Xte[:, j] - Xte @ u  # group g is pinned at zero
                errs[f, i] = float(r @ r) / Xte.shape[0]
            mean = errs[:, i].mean()
            if mean < errs[:, best].mean():
                best, worse = i, 0
            elif patience is not None:
                se = errs[:, best].std(ddof=1) / math.sqrt(F)
                worse = worse + 1 if mean > errs[:, best].mean() + se else 0
                if worse >= patience:
                    break
        return float(grid[best])


def _path_fit(design, g, l, lam, grid, prob, tol, max_iter) -> NodewiseFit:
    """Fit at ``lam`` after warm-starting through the grid values above it."""
    u = None
    for lv in grid[grid > lam]:
        u = solve_gram(prob, prob.S[:, design.groups.slice(g).start + l], _excluding(design, g, float(lv)),
                       u0=u, tol=tol, max_iter=max_iter).beta_star
    return fit_nodewise(design, g, l, lam, prob=prob, tol=tol, max_iter=max_iter, u0=u)


def build_theta_hat(design: GroupedDesign, lambdas="cv", folds: int = 5, seed: int = 0,
                    n_lambda: int = 50, per_column: bool = False, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, kkt_tol: float = 1e-6,
                    patience: int | None = PATIENCE) -> ThetaHat:
    """Assemble the nodewise surrogate for the inverse Gram matrix.

    Parameters
    ----------
    lambdas : "cv", float, sequence of per-group floats, or dict ``{(g, l): lam}``
        With ``"cv"`` each group's lambda is chosen by ``folds``-fold
        cross-validation on its first column and reused for the others; with
        ``per_column=True`` every column gets its own cross-validated value.
    patience : int or None
        Early stop for the cross-validation path; ``None`` walks the full grid.

    Every final fit is warm-started down its own grid to the chosen lambda.

    Row block ``g`` of the result is ``(T_g^2)^-T C_g^T`` where ``C_g`` has the
    identity in the rows of group ``g`` and ``-Gamma_g`` elsewhere, so the
    diagonal blocks of ``Theta Sigma`` are the identity by construction.
    """
    prob = GramProblem.from_design(design)
    cache = _FoldCache(design, folds, seed) if isinstance(lambdas, str) else None
    if isinstance(lambdas, str) and lambdas != "cv":
        raise ValueError(f"unknown lambda schedule {lambdas!r}")
    p = design.p
    theta = np.zeros((p, p))
    T_sq, Gammas, Lambdas, Ks, conds, fits = [], [], [], [], [], []
    worst_kkt = 0.0
    for g in range(design.K):
        sl = design.groups.slice(g)
        p_g = sl.stop - sl.start
        others = _other_columns(design, g)
        lam_g = np.empty(p_g)
        for l in range(p_g):
            if cache is not None:
                if l == 0 or per_column:
                    j = sl.start + l
                    grid = lambda_grid(nodewise_lambda_max(prob, g, j), n_lambda)
                    lam_g[l] = cache.cv_lambda(g, j, grid, tol, max_iter, patience)
                else:
                    lam_g[l] = lam_g[0]
            elif isinstance(lambdas, dict):
                lam_g[l] = float(lambdas[(g, l)])
            elif np.ndim(lambdas) == 0:
                lam_g[l] = float(lambdas)
            else:
                lam_g[l] = float(lambdas[g])
        gfits = [_path_fit(design, g, l, lam_g[l],
                           lambda_grid(nodewise_lambda_max(prob, g, sl.start + l), n_lambda),
                           prob, tol, max_iter)
                 for l in range(p_g)]
        Gamma = np.column_stack([f.gamma for f in gfits])
        Kg = np.column_stack([f.subgradient for f in gfits])
        Xg = design.X[:, sl]
        R = Xg - design.X[:, others] @ Gamma
        T2 = Xg.T @ R / design.n
        cond = float(np.linalg.cond(T2))
        if not np.isfinite(cond) or cond > 1e12:
            raise DebiasError(f"T_g^2 for group {g + 1} is singular (condition {cond:.3g})")
        # KKT in matrix form: 2/n X_{-g}^T R_g = K_g Lambda_g
        lhs = 2.0 * design.X[:, others].T @ R / design.n
        ident = float(np.max(np.abs(lhs - Kg * lam_g))) if lhs.size else 0.0
        if ident > kkt_tol:
            raise DebiasError(f"nodewise KKT identity violated for group {g + 1}: {ident:.3g}")
        worst_kkt = max(worst_kkt, ident, max(f.kkt_residual for f in gfits))
        C = np.zeros((p, p_g))
        C[sl] = np.eye(p_g)
        C[others] = -Gamma
        theta[sl] = np.linalg.solve(T2.T, C.T)
        T_sq.append(T2)
        Gammas.append(Gamma)
        Lambdas.append(np.diag(lam_g))
        Ks.append(Kg)
        conds.append(cond)
        fits.append(gfits)
    return ThetaHat(theta, T_sq, Gammas, Lambdas, Ks, np.array(conds), worst_kkt, fits)


def theta_identity_report(theta: ThetaHat, design: GroupedDesign) -> dict:
    """Deviations from the block identities of ``Theta Sigma - I``.

    ``diag`` is the max-abs entry over diagonal blocks (zero by construction);
    ``offdiag`` compares each off-diagonal block ``(j, k)`` with
    ``(T_j^2)^-T (Lambda_j / 2) K_{j,k}^T``; ``kkt`` is the nodewise matrix
    identity error.
    """
    M = theta.theta @ gram(design) - np.eye(design.p)
    groups = design.groups
    diag = offdiag = 0.0
    for j in range(groups.K):
        sj = groups.slice(j)
        diag = max(diag, float(np.max(np.abs(M[sj, sj]))))
        others = _other_columns(design, j)
        Tinv_T = np.linalg.inv(theta.T_sq[j]).T
        pred_rows = Tinv_T @ (0.5 * theta.Lambda[j]) @ theta.K[j].T  # p_j x (p - p_j)
        offdiag = max(offdiag, float(np.max(np.abs(M[sj][:, others] - pred_rows))) if others.size else 0.0)
    return {"diag": diag, "offdiag": offdiag, "kkt": theta.max_nodewise_kkt}


def debias_draw(theta: ThetaHat | np.ndarray, design: GroupedDesign, beta_draw, beta_star,
                beta0=None):
    """``beta** = beta* + n^-1 Theta X^T (X beta - X beta*)``.

    With ``beta0`` also returns ``Delta = (Theta Sigma - I)(beta* - beta0)``.
    """
    Th = theta.theta if isinstance(theta, ThetaHat) else np.asarray(theta)
    beta_draw = np.asarray(beta_draw, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    X = design.X
    out = beta_star + Th @ (X.T @ (X @ (beta_draw - beta_star))) / design.n
    if beta0 is None:
        return out
    diff = beta_star - np.asarray(beta0, dtype=float)
    delta = Th @ (X.T @ (X @ diff)) / design.n - diff
    return out, delta


def debias_ensemble(theta: ThetaHat, design: GroupedDesign, ensemble: ProjectionEnsemble | tuple,
                    beta0=None) -> DebiasedEnsemble:
    """Debias every projected draw; output rows follow the ensemble rows."""
    if isinstance(ensemble, ProjectionEnsemble):
        B, Bs = ensemble.draws, ensemble.beta_star
    else:
        B, Bs = (np.asarray(a, dtype=float) for a in ensemble)
    M = theta.theta @ gram(design)
    Bdd = Bs + (B - Bs) @ M.T
    norms = None
    if beta0 is not None:
        diff = Bs - np.asarray(beta0, dtype=float)
        Delta = diff @ M.T - diff
        groups = design.groups
        norms = np.column_stack([np.linalg.norm(Delta[:, groups.slice(k)], axis=1)
                                 for k in range(groups.K)])
    return DebiasedEnsemble(Bdd, norms, draws=B, beta_star=Bs)


def _type7_positions(D: int, alpha: float) -> tuple[float, float]:
    return (D - 1) * alpha / 2, (D - 1) * (1 - alpha / 2)


def credible_intervals(ensemble: DebiasedEnsemble | np.ndarray, alpha: float = 0.05) -> CredibleBand:
    """Per-coordinate ``(alpha/2, 1 - alpha/2)`` empirical quantiles (linear interpolation)."""
    B = ensemble.beta_dd if isinstance(ensemble, DebiasedEnsemble) else np.asarray(ensemble, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    D = B.shape[0]
    if D < 2:
        raise ValueError("credible intervals need at least two draws")
    lo, hi, med = np.quantile(B, [alpha / 2, 1 - alpha / 2, 0.5], axis=0, method="linear")
    lo_pos, hi_pos = _type7_positions(D, alpha)
    return CredibleBand(1 - alpha, lo, hi, med, lo_pos, hi_pos)


def debiased_gl_estimator(design: GroupedDesign, y, beta_gl, theta: ThetaHat | np.ndarray) -> np.ndarray:
    """``beta_gl + n^-1 Theta X^T (y - X beta_gl)``."""
    Th = theta.theta if isinstance(theta, ThetaHat) else np.asarray(theta)
    beta_gl = np.asarray(beta_gl, dtype=float)
    return beta_gl + Th @ (design.X.T @ (np.asarray(y, dtype=float) - design.X @ beta_gl)) / design.n


def bvm_diagnostic(ensemble: DebiasedEnsemble, theta: ThetaHat, design: GroupedDesign,
                   post: RidgePosterior, beta0=None, y=None, beta_dgl=None) -> dict:
    """Compare the debiased draws with their Gaussian limit.

    With ``beta0`` the draws of ``sqrt(n) (beta** - beta0) / sigma`` are
    compared with ``N(m / sigma, V)``, ``m = sqrt(n) Theta Sigma (mean_R - beta0)``
    and ``V = n^-1 Theta X^T H(a_n) X Theta^T``. Without it the centering is
    the debiased group LASSO estimate and the predicted mean is
    ``sqrt(n) Theta X^T (X mean_R - y) / (n sigma)``.

    Everything is also reported on the coefficient scale (``pred_sd`` is
    ``sigma sqrt(V_jj / n)``) so a zero-variance posterior is handled.
    """
    n = design.n
    Th = theta.theta
    X = design.X
    if beta0 is not None:
        center = np.asarray(beta0, dtype=float)
        shift = Th @ (X.T @ (X @ (post.mean - center))) / n
    else:
        if y is None or beta_dgl is None:
            raise ValueError("without beta0 both y and beta_dgl are required")
        center = np.asarray(beta_dgl, dtype=float)
        shift = Th @ (X.T @ (X @ post.mean - np.asarray(y, dtype=float))) / n
    U, d = hat_singular_values(X)
    w = d**2 / (d**2 + post.a_n)
    WU = (Th @ X.T / math.sqrt(n)) @ U
    V_diag = np.sum(WU**2 * w, axis=1)
    pred_mean = center + shift
    pred_sd = post.sigma * np.sqrt(V_diag / n)
    B = ensemble.beta_dd
    D = B.shape[0]
    emp_mean = B.mean(axis=0)
    emp_sd = B.std(axis=0, ddof=1) if D > 1 else np.zeros(B.shape[1])
    mc_se = pred_sd / math.sqrt(D)
    gap = np.abs(emp_mean - pred_mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(mc_se > 0, gap / mc_se, np.where(gap > 1e-12, np.inf, 0.0))
        sd_ratio = np.where(pred_sd > 0, emp_sd / pred_sd, np.where(emp_sd > 1e-12, np.inf, 1.0))
    m_std = math.sqrt(n) * shift / post.sigma if post.sigma > 0 else np.zeros_like(shift)
    ensemble.bvm_mean = m_std
    ensemble.bvm_cov_diag = V_diag
    return {
        "m": m_std,
        "V_diag": V_diag,
        "pred_mean": pred_mean,
        "pred_sd": pred_sd,
        "emp_mean": emp_mean,
        "emp_sd": emp_sd,
        "mean_discrepancy_se": z,
        "max_mean_discrepancy_se": float(np.max(z)) if z.size else 0.0,
        "mean_abs_discrepancy": float(np.mean(gap) * math.sqrt(n) / post.sigma) if post.sigma > 0 else float(np.mean(gap)),
        "sd_ratio": sd_ratio,
    }
