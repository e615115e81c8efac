"""Group-penalized projections of posterior draws and classical group fits.

Every problem here is a penalized least-squares fit in Gram form,

    minimize  u^T S u - 2 c^T u + sum_k pen_k(||u_k||),

with ``S = n^-1 X^T X``. Projecting a draw ``beta`` uses ``c = S beta`` (so
the smooth part equals ``n^-1 ||X beta - X u||^2`` up to a constant) and a
regression of ``y`` on ``X`` uses ``c = n^-1 X^T y``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernel
from .design import GroupedDesign, GroupSpec, gram
from .penalties import PenaltyConfig, PenaltyKind, scad_penalty

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000
PATIENCE = 5
POLISH_AFTER = 20
NEWTON_STEPS = 30


class ConvergenceError(RuntimeError):
    """A solver hit its iteration cap."""


@dataclass
class ProjectionResult:
    beta_star: np.ndarray
    active_groups: list[int]
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool = True
    error: str | None = None


@dataclass(frozen=True)
class GramProblem:
    """Gram matrix plus the per-group eigen data the kernel needs."""

    S: np.ndarray
    groups: GroupSpec
    evals: np.ndarray
    evecs: np.ndarray
    evoff: np.ndarray

    @classmethod
    def from_gram(cls, S: np.ndarray, groups: GroupSpec) -> "GramProblem":
        S = np.ascontiguousarray(S, dtype=np.float64)
        evals = np.empty(groups.p)
        vecs, offs, off = [], [], 0
        for k in range(groups.K):
            sl = groups.slice(k)
            w, V = np.linalg.eigh(S[sl, sl])
            evals[sl] = np.maximum(w, 0.0)
            vecs.append(np.ascontiguousarray(V).ravel())
            offs.append(off)
            off += V.size
        return cls(S, groups, evals, np.concatenate(vecs), np.asarray(offs, dtype=np.int64))

    @classmethod
    def from_design(cls, design: GroupedDesign) -> "GramProblem":
        return cls.from_gram(gram(design), design.groups)


def _penalty_args(penalty: PenaltyConfig, groups: GroupSpec):
    thresh = np.ascontiguousarray(penalty.group_thresholds(groups.sizes), dtype=np.float64)
    kind = _kernel.KIND_SCAD if penalty.kind is PenaltyKind.GROUP_SCAD else _kernel.KIND_GL
    return thresh, kind


def penalty_value(u: np.ndarray, penalty: PenaltyConfig, groups: GroupSpec) -> float:
    thresh, kind = _penalty_args(penalty, groups)
    total = 0.0
    for k in range(groups.K):
        nu = float(np.linalg.norm(u[groups.slice(k)]))
        if nu == 0.0:
            continue
        if math.isinf(thresh[k]):
            return math.inf
        if kind == _kernel.KIND_SCAD:
            total += scad_penalty(nu, thresh[k], penalty.tau)
        else:
            total += thresh[k] * nu
    return total


def gram_objective(prob: GramProblem, c: np.ndarray, u: np.ndarray, penalty: PenaltyConfig,
                   offset: float = 0.0) -> float:
    """``u^T S u - 2 c^T u + offset + penalty``."""
    return float(u @ prob.S @ u - 2.0 * c @ u + offset) + penalty_value(u, penalty, prob.groups)


def _active_newton(prob: GramProblem, c: np.ndarray, u: np.ndarray, thresh: np.ndarray,
                   tol: float, max_steps: int = NEWTON_STEPS) -> int:
    """Damped Newton steps on the groups currently nonzero, in place on ``u``.

    On the active groups the group LASSO objective is smooth. Each step
    solves the Newton system with a tiny ridge. A full step is taken when it
    passes an Armijo test; otherwise the group the step shrinks most is set
    to zero and dropped if that lowers the objective, and failing that the
    step is backtracked. Every accepted move lowers the true objective.
    Returns the number of accepted moves.
    """
    groups = prob.groups
    act = [k for k in range(groups.K) if np.isfinite(thresh[k]) and np.any(u[groups.slice(k)])]
    accepted = 0
    while act and accepted < max_steps:
        sizes = groups.sizes[act]
        offs = np.r_[0, np.cumsum(sizes)[:-1]]
        spans = [slice(o, o + w) for o, w in zip(offs, sizes)]
        cols = np.concatenate([np.arange(groups.starts[k], groups.starts[k] + groups.sizes[k]) for k in act])
        S_AA = prob.S[np.ix_(cols, cols)]
        c_A = c[cols]
        t_A = thresh[act]

        def objective(z):
            norms = np.sqrt(np.add.reduceat(z * z, offs))
            return float(z @ (S_AA @ z) - 2.0 * c_A @ z + t_A @ norms), norms

        z = u[cols].copy()
        eps = 1e-12 * max(float(np.max(np.diag(S_AA))), 1.0)
        f, norms = objective(z)
        drop = False
        while accepted < max_steps:
            if np.any(norms == 0.0):
                drop = True
                break
            w = np.repeat(t_A / norms, sizes)
            e = z * np.repeat(1.0 / norms, sizes)
            g = 2.0 * (S_AA @ z - c_A) + w * z
            H = 2.0 * S_AA
            H[np.diag_indices_from(H)] += w + eps
            for sp, t, nz in zip(spans, t_A, norms):
                H[sp, sp] -= (t / nz) * np.outer(e[sp], e[sp])
            try:
                d = -linalg.cho_solve(linalg.cho_factor(H, overwrite_a=True, check_finite=False), g,
                                      check_finite=False)
            except linalg.LinAlgError:
                d = -linalg.lstsq(2.0 * S_AA + np.diag(w), g)[0]
            slope = float(g @ d)
            if not slope < 0:
                break
            f_new, n_new = objective(z + d)
            damped = False
            if f_new <= f + 1e-4 * slope:
                step_z = z + d
            else:
                # groups the step drives through or close to zero
                zd = z + d
                radial = np.add.reduceat(z * zd, offs)
                ratio = np.sqrt(np.add.reduceat(zd * zd, offs)) / norms
                shrink = np.flatnonzero((radial <= 0.0) | (ratio < 0.5))
                cands = []
                if shrink.size:
                    for base in (zd, z):
                        zc = base.copy()
                        for j in shrink:
                            zc[spans[j]] = 0.0
                        cands.append(zc)
                    k = int(shrink[np.argmin(ratio[shrink])])
                    zc = z.copy()
                    zc[spans[k]] = 0.0
                    cands.append(zc)
                for zc in cands:
                    f_c, n_c = objective(zc)
                    if f_c < f:
                        z, f, norms = zc, f_c, n_c
                        drop = True
                        break
                if drop:
                    accepted += 1
                    break
                step = 0.5
                while step > 1e-10:
                    f_new, n_new = objective(z + step * d)
                    if f_new <= f + 1e-4 * step * slope:
                        break
                    step *= 0.5
                else:
                    break
                step_z = z + step * d
                damped = True
            if not f_new < f:
                break
            dz = step_z - z
            z, f, norms = step_z, f_new, n_new
            accepted += 1
            if damped or float(np.max(np.abs(dz))) <= 0.1 * tol * (1.0 + float(np.max(np.abs(z)))):
                break
        u[cols] = z
        if not drop:
            break
        act = [k for k, nz in zip(act, norms) if nz > 0.0]
    return accepted


def solve_gram(prob: GramProblem, c: np.ndarray, penalty: PenaltyConfig, u0=None,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, offset: float = 0.0,
               backend: str | None = None, polish: bool = True) -> ProjectionResult:
    """Solve the Gram-form problem; ``offset`` makes the objective a true loss.

    Block coordinate descent runs first. If it has not converged after
    ``POLISH_AFTER`` sweeps and the penalty is convex, it alternates with
    damped Newton steps on the active groups (``polish=False`` disables
    this). Convergence is always certified by a coordinate descent sweep
    plus the KKT check, whichever steps got there.
    """
    groups = prob.groups
    c = np.ascontiguousarray(c, dtype=np.float64)
    u = np.zeros(groups.p) if u0 is None else np.array(u0, dtype=np.float64)
    thresh, kind = _penalty_args(penalty, groups)
    polish = polish and kind == _kernel.KIND_GL
    budget = int(max_iter)
    sweeps = 0
    while True:
        chunk = min(budget - sweeps, POLISH_AFTER) if polish else budget - sweeps
        done, converged, kkt = _kernel.solve(
            prob.S, c, u, groups.starts, groups.sizes, prob.evals, prob.evecs, prob.evoff,
            thresh, kind, float(penalty.tau), float(tol), int(chunk), backend=backend,
        )
        sweeps += int(done)
        if converged or sweeps >= budget:
            break
        _active_newton(prob, c, u, thresh, tol)
    active = [k for k in range(groups.K) if np.any(u[groups.slice(k)])]
    obj = gram_objective(prob, c, u, penalty, offset)
    res = ProjectionResult(u, active, obj, sweeps, float(kkt), bool(converged))
    if not converged:
        res.error = f"not converged after {sweeps} sweeps (kkt {kkt:.3g})"
        log.warning("solver %s", res.error)
    return res


def solve_penalized_ls(design: GroupedDesign, target, penalty: PenaltyConfig,
                       tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, u0=None,
                       prob: GramProblem | None = None) -> ProjectionResult:
    """Minimize ``n^-1 ||target - X u||^2 + sum_k pen(||u_k||)`` by block coordinate descent.

    Parameters
    ----------
    design : GroupedDesign
    target : array of shape (n,)
        For a projection this is ``X beta`` for a posterior draw ``beta``.
    penalty : PenaltyConfig
    tol : float
        Bound on both the largest relative block change and the KKT violation.
    max_iter : int
        Cap on coordinate sweeps. When reached the best iterate is returned
        with ``converged=False``.

    Returns
    -------
    ProjectionResult
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (design.n,):
        raise ValueError(f"target must have length {design.n}")
    prob = prob or GramProblem.from_design(design)
    c = design.X.T @ target / design.n
    return solve_gram(prob, c, penalty, u0=u0, tol=tol, max_iter=max_iter,
                      offset=float(target @ target) / design.n)


def kkt_residual(prob: GramProblem, c: np.ndarray, u: np.ndarray, penalty: PenaltyConfig) -> float:
    """First-order optimality violation for any of the three penalties."""
    thresh, kind = _penalty_args(penalty, prob.groups)
    return float(_kernel.kkt_value(prob.S, c, np.ascontiguousarray(u, dtype=float),
                                   prob.groups.starts, prob.groups.sizes, thresh, kind,
                                   float(penalty.tau)))


def kkt_residual_group_lasso(design: GroupedDesign, beta, result, lam: float) -> float:
    """KKT violation of a group LASSO projection of ``beta``.

    ``result`` is a :class:`ProjectionResult` or the projected vector itself.
    Active groups contribute ``||(2/n) X_k^T X (beta - beta*) - lam sqrt(p_k) z_k||``
    with ``z_k = beta*_k / ||beta*_k||``; inactive ones contribute
    ``(||(2/n) X_k^T X (beta - beta*)|| - lam sqrt(p_k))_+``. Returns the max.
    """
    beta_star = result.beta_star if isinstance(result, ProjectionResult) else np.asarray(result)
    S = gram(design)
    g = 2.0 * S @ (np.asarray(beta, dtype=float) - beta_star)
    worst = 0.0
    for k in range(design.K):
        sl = design.groups.slice(k)
        t = lam * math.sqrt(sl.stop - sl.start)
        bk = beta_star[sl]
        nb = float(np.linalg.norm(bk))
        if nb == 0.0:
            viol = max(float(np.linalg.norm(g[sl])) - t, 0.0)
        else:
            viol = float(np.linalg.norm(g[sl] - t * bk / nb))
        worst = max(worst, viol)
    return worst


@dataclass
class ProjectionEnsemble:
    """Dense draws with their projected images, row-aligned."""

    draws: np.ndarray
    beta_star: np.ndarray
    results: list[ProjectionResult]
    penalty: PenaltyConfig
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.draws.shape[0]

    def selection_frequencies(self, groups: GroupSpec) -> np.ndarray:
        sel = np.zeros((self.D, groups.K), dtype=bool)
        for k in range(groups.K):
            sel[:, k] = np.any(self.beta_star[:, groups.slice(k)] != 0.0, axis=1)
        return sel.mean(axis=0)

    def convergence_stats(self) -> dict:
        its = np.array([r.iterations for r in self.results])
        kkts = np.array([r.kkt_residual for r in self.results])
        return {
            "n_converged": int(sum(r.converged for r in self.results)),
            "n_failed": len(self.failures),
            "max_kkt": float(kkts.max()) if kkts.size else 0.0,
            "mean_sweeps": float(its.mean()) if its.size else 0.0,
        }


def project_draws(design: GroupedDesign, draws, penalty: PenaltyConfig, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, warm_start=None, jobs: int = 1,
                  prob: GramProblem | None = None) -> ProjectionEnsemble:
    """Project every draw: ``beta -> argmin_u n^-1 ||X beta - X u||^2 + pen(u)``.

    Each draw is solved from the same starting point (``warm_start`` or zero)
    and written to its own slot, so the output does not depend on ``jobs``.
    A draw whose solve fails is recorded in ``failures`` and does not stop
    the ensemble.
    """
    B = np.asarray(getattr(draws, "draws", draws), dtype=np.float64)
    if B.ndim == 1:
        B = B[None, :]
    prob = prob or GramProblem.from_design(design)
    C = B @ prob.S  # rows are c = S beta (S symmetric)
    results: list[ProjectionResult | None] = [None] * B.shape[0]
    failures: dict[int, str] = {}

    def one(i):
        try:
            res = solve_gram(prob, C[i], penalty, u0=warm_start, tol=tol, max_iter=max_iter,
                             offset=float(B[i] @ C[i]))
        except Exception as exc:  # recorded per draw
            failures[i] = repr(exc)
            res = ProjectionResult(np.full(design.p, np.nan), [], math.nan, 0, math.inf, False,
                                   repr(exc))
        else:
            if not res.converged:
                failures[i] = res.error
        results[i] = res

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(one, range(B.shape[0])))
    else:
        for i in range(B.shape[0]):
            one(i)
    beta_star = np.vstack([r.beta_star for r in results])
    return ProjectionEnsemble(B, beta_star, results, penalty, dict(sorted(failures.items())))


def lambda_max(prob: GramProblem, c: np.ndarray, penalty: PenaltyConfig | PenaltyKind,
               weights=None, scad_group_scale: bool = True) -> float:
    """Smallest lambda at which the zero vector is optimal.

    For the group LASSO this is ``max_k 2 ||c_k|| / sqrt(p_k)``; the adaptive
    version divides by the weights and ignores excluded groups.
    """
    kind = penalty.kind if isinstance(penalty, PenaltyConfig) else PenaltyKind.parse(penalty)
    if isinstance(penalty, PenaltyConfig):
        weights = penalty.weights if weights is None else weights
        scad_group_scale = penalty.scad_group_scale
    sizes = prob.groups.sizes.astype(float)
    norms = np.array([2.0 * np.linalg.norm(c[prob.groups.slice(k)]) for k in range(prob.groups.K)])
    scale = np.sqrt(sizes)
    if kind is PenaltyKind.GROUP_SCAD and not scad_group_scale:
        scale = np.ones_like(scale)
    if kind is PenaltyKind.ADAPTIVE_GROUP_LASSO:
        w = np.asarray(weights, dtype=float)
        ok = np.isfinite(w) & (w > 0)
        if not np.any(ok):
            return 0.0
        return float(np.max(norms[ok] / (scale[ok] * w[ok])))
    return float(np.max(norms / scale))


def lambda_grid(lam_max: float, n_lambda: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from ``lam_max`` down to ``ratio * lam_max``."""
    if lam_max <= 0:
        return np.array([1e-8])
    return np.geomspace(lam_max, ratio * lam_max, n_lambda)


def fit_group_lasso(design: GroupedDesign, y, lam: float, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, penalty: PenaltyConfig | None = None,
                    u0=None, prob: GramProblem | None = None) -> ProjectionResult:
    """Penalized regression of ``y`` on ``X`` (the group LASSO unless ``penalty`` is given)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (design.n,):
        raise ValueError(f"y must have length {design.n}")
    penalty = penalty.with_lambda(lam) if penalty is not None else PenaltyConfig(PenaltyKind.GROUP_LASSO, lam)
    prob = prob or GramProblem.from_design(design)
    c = design.X.T @ y / design.n
    return solve_gram(prob, c, penalty, u0=u0, tol=tol, max_iter=max_iter,
                      offset=float(y @ y) / design.n)


def adaptive_weights(beta_gl, groups: GroupSpec) -> np.ndarray:
    """``w_k = 1 / ||beta_gl_k||``, infinite for groups the initial fit dropped."""
    beta_gl = np.asarray(beta_gl, dtype=float)
    norms = np.array([np.linalg.norm(beta_gl[groups.slice(k)]) for k in range(groups.K)])
    with np.errstate(divide="ignore"):
        return np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), np.inf)


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        if chunk.size < 2:
            raise ValueError(f"fold {f + 1} has {chunk.size} rows; need at least 2")
        ids[chunk] = f
    if n - np.bincount(ids, minlength=folds).max() < 2:
        raise ValueError("training split too small")
    return ids


@dataclass
class CVResult:
    lam: float
    grid: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray


def cv_path(design: GroupedDesign, y, penalty: PenaltyConfig | PenaltyKind, folds: int = 5,
            grid=None, seed: int = 0, n_lambda: int = 50, tol: float = DEFAULT_TOL,
            max_iter: int = DEFAULT_MAX_ITER, patience: int | None = PATIENCE,
            **penalty_kw) -> CVResult:
    """K-fold cross-validation of the penalized fit of ``y`` on ``X``.

    Folds come from a seeded shuffle. All folds walk the grid from the
    largest lambda down together, each warm-started from its previous
    solution; the held-out error is the mean squared prediction error. Ties
    go to the larger lambda. With ``patience`` set the walk stops once the
    mean error has stayed more than one standard error above its running
    minimum for ``patience`` consecutive grid points; unvisited grid points
    get ``nan`` errors.
    """
    if not isinstance(penalty, PenaltyConfig):
        penalty = PenaltyConfig(penalty, 1.0, **penalty_kw)
    y = np.asarray(y, dtype=np.float64)
    X = design.X
    n = design.n
    if grid is None:
        prob_full = GramProblem.from_design(design)
        grid = lambda_grid(lambda_max(prob_full, X.T @ y / n, penalty), n_lambda)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.zeros(1), np.zeros(1))
    order = np.argsort(-grid, kind="stable")
    ids = _fold_ids(n, folds, seed)
    splits = []
    for f in range(folds):
        tr, te = ids != f, ids == f
        Xtr = X[tr]
        prob = GramProblem.from_gram(Xtr.T @ Xtr / tr.sum(), design.groups)
        splits.append((prob, Xtr.T @ y[tr] / tr.sum(), X[te], y[te]))
    errs = np.full((folds, grid.size), np.nan)
    warm = [None] * folds
    best, worse = None, 0
    for j in order:
        pen = penalty.with_lambda(float(grid[j]))
        for f, (prob, c, Xte, yte) in enumerate(splits):
            res = solve_gram(prob, c, pen, u0=warm[f], tol=tol, max_iter=max_iter)
            warm[f] = res.beta_star
            resid = yte - Xte @ res.beta_star
            errs[f, j] = float(resid @ resid) / yte.size
        m = errs[:, j].mean()
        if best is None or m < errs[:, best].mean():
            best, worse = j, 0
        elif patience is not None:
            se = errs[:, best].std(ddof=1) / math.sqrt(folds)
            worse = worse + 1 if m > errs[:, best].mean() + se else 0
            if worse >= patience:
                break
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / math.sqrt(folds)
    return CVResult(float(grid[best]), grid, mean, se)


def cross_validate_lambda(design: GroupedDesign, y, penalty_kind, folds: int = 5, grid=None,
                          seed: int = 0, **kw) -> float:
    """Lambda minimizing the mean held-out squared error; see :func:`cv_path`."""
    return cv_path(design, y, penalty_kind, folds=folds, grid=grid, seed=seed, **kw).lam
