"""End-to-end projection-posterior fit: posterior, tuning, projection, debiasing."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .debias import (
    CredibleBand,
    DebiasedEnsemble,
    ThetaHat,
    build_theta_hat,
    credible_intervals,
    debias_ensemble,
)
from .design import GroupedDesign, standardize
from .penalties import PenaltyConfig, PenaltyKind
from .posterior import (
    AUTO,
    PosteriorDraws,
    RidgePosterior,
    fit_ridge_posterior,
    sample_posterior,
)
from .projection import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    CVResult,
    GramProblem,
    ProjectionEnsemble,
    adaptive_weights,
    cv_path,
    fit_group_lasso,
    project_draws,
    solve_gram,
)

log = logging.getLogger(__name__)

STAGES = ("input", "standardize", "posterior", "sample", "tune", "project", "debias", "intervals")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class FitConfig:
    penalty: str = "gl"
    lam: float | str = "cv"
    tau: float = 3.7
    a_n: float | None = None
    sigma: float | str = AUTO
    draws: int = 200
    seed: int = 0
    folds: int = 5
    n_lambda: int = 50
    debias: bool = False
    alpha: float = 0.05
    jobs: int = 1
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    standardize: bool = True
    center_y: bool = True
    scad_group_scale: bool = True
    nodewise_lambda: float | str = "cv"
    per_column: bool = False
    strict: bool = True

    def __post_init__(self):
        self.penalty = PenaltyKind.parse(self.penalty).value
        if isinstance(self.lam, str) and self.lam != "cv":
            self.lam = float(self.lam)
        if isinstance(self.sigma, str) and self.sigma != AUTO:
            self.sigma = float(self.sigma)
        if self.draws < 1:
            raise ValueError("draws must be at least 1")
        if self.debias and self.penalty != PenaltyKind.GROUP_LASSO.value:
            raise ValueError("debiasing is defined for the group LASSO projection only")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    config: FitConfig
    design: GroupedDesign
    y: np.ndarray
    posterior: RidgePosterior
    draws: PosteriorDraws
    penalty: PenaltyConfig
    ensemble: ProjectionEnsemble
    selection_frequencies: np.ndarray
    selected: list[int]
    point_estimate: np.ndarray
    sigma_source: str
    cv: CVResult | None = None
    beta_gl: np.ndarray | None = None
    theta: ThetaHat | None = None
    debiased: DebiasedEnsemble | None = None
    band: CredibleBand | None = None
    timings: dict = field(default_factory=dict)
    gl_cv: CVResult | None = None

    @property
    def lam(self) -> float:
        return self.penalty.lam

    def original_scale(self, beta) -> np.ndarray:
        return self.design.to_original_scale(beta)

    def interval_table(self) -> np.ndarray | None:
        """Rows ``(lower, median, upper)`` on the original coefficient scale."""
        if self.band is None:
            return None
        s = self.design.column_scales
        return np.column_stack([self.band.lower / s, self.band.median / s, self.band.upper / s])


def mpm_select(ensemble: ProjectionEnsemble | np.ndarray, groups, threshold: float = 0.5):
    """Median probability model over projected draws.

    Group ``k`` is selected when the fraction of draws with ``beta*_k != 0``
    strictly exceeds ``threshold``. The point estimate is the draw average of
    ``beta*`` on selected groups and zero elsewhere.

    Returns
    -------
    selected : list of 0-based group indices
    estimate : (p,) array
    freq : (K,) selection frequencies
    """
    B = ensemble.beta_star if isinstance(ensemble, ProjectionEnsemble) else np.atleast_2d(ensemble)
    if B.shape[0] < 1:
        raise ValueError("need at least one projected draw")
    freq = np.array([np.mean(np.any(B[:, groups.slice(k)] != 0.0, axis=1)) for k in range(groups.K)])
    selected = [k for k in range(groups.K) if freq[k] > threshold]
    est = np.zeros(B.shape[1])
    mean = B.mean(axis=0)
    for k in selected:
        sl = groups.slice(k)
        est[sl] = mean[sl]
    return selected, est, freq


def _timed(timings: dict, stage: str):
    class _T:
        def __enter__(self_):
            self_.t = time.perf_counter()

        def __exit__(self_, exc_type, exc, tb):
            timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - self_.t
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(stage, str(exc)) from exc
    return _T()


def ridge_sigma_usable(design: GroupedDesign, a_n: float) -> bool:
    """True when the ridge hat matrix leaves at least ``n / 2`` residual degrees of freedom."""
    d = np.linalg.svd(design.X, compute_uv=False)
    df = float(np.sum(d**2 / (d**2 + a_n)))
    return design.n - df >= design.n / 2


def resolve_sigma(design: GroupedDesign, cfg: FitConfig, a_n: float,
                  gl_cv: CVResult | None) -> tuple[float | str, str]:
    """Noise level to plug into the posterior and where it came from.

    In ``auto`` mode the ridge residual estimate is kept when the ridge fit
    leaves at least half the degrees of freedom for the residual. Otherwise
    (``p`` comparable to or above ``n``, where the ridge fit nearly
    interpolates) the square root of the smallest mean held-out error of the
    cross-validated group LASSO is used; it is always defined and errs on the
    large side.
    """
    if cfg.sigma != AUTO:
        return float(cfg.sigma), "fixed"
    if ridge_sigma_usable(design, a_n):
        return AUTO, "ridge"
    if gl_cv is None:
        raise ValueError("group LASSO cross-validation required for the sigma estimate")
    return float(np.sqrt(np.nanmin(gl_cv.cv_error))), "cv_error"


def fit(X_or_design, y, groups=None, config: FitConfig | None = None, gl_cv: CVResult | None = None,
        **overrides) -> FitResult:
    """Run the projection-posterior pipeline.

    Steps: standardize, ridge posterior, ``D`` seeded draws, lambda by
    cross-validation (or fixed), projection of every draw, and optionally
    debiasing with quantile credible intervals. Any failure is raised as a
    :class:`StageError` carrying the stage name.

    ``gl_cv`` reuses a group LASSO cross-validation already run on the same
    data and config (see :attr:`FitResult.gl_cv`), so several penalties can
    share it.
    """
    cfg = config or FitConfig(**overrides)
    if config is not None and overrides:
        cfg = FitConfig(**{**config.to_dict(), **overrides})
    timings: dict = {}
    with _timed(timings, "input"):
        if isinstance(X_or_design, GroupedDesign):
            design = X_or_design
        else:
            from .design import build_grouped_design
            design = build_grouped_design(X_or_design, groups)
        y = np.asarray(y, dtype=float)
        if y.shape != (design.n,):
            raise ValueError(f"y has shape {y.shape}, expected ({design.n},)")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
    with _timed(timings, "standardize"):
        if cfg.standardize:
            design = standardize(design)
        yc = y - y.mean() if cfg.center_y else y
    kind = PenaltyKind.parse(cfg.penalty)
    prob = GramProblem.from_design(design)
    a_n = 1.0 / design.n if cfg.a_n is None else float(cfg.a_n)
    cv_res = None
    beta_gl = None
    gl_lam = None
    sigma_from_cv = cfg.sigma == AUTO and not ridge_sigma_usable(design, a_n)
    with _timed(timings, "tune"):
        need_gl = sigma_from_cv or (kind is PenaltyKind.ADAPTIVE_GROUP_LASSO and cfg.lam == "cv")
        if need_gl and gl_cv is None:
            gl_cv = cv_path(design, yc, PenaltyKind.GROUP_LASSO, folds=cfg.folds, seed=cfg.seed,
                            n_lambda=cfg.n_lambda, tol=cfg.tol, max_iter=cfg.max_iter)
        if gl_cv is not None and kind is PenaltyKind.GROUP_LASSO and cfg.lam == "cv":
            cv_res = gl_cv
        if kind is PenaltyKind.ADAPTIVE_GROUP_LASSO:
            gl_lam = gl_cv.lam if gl_cv is not None else float(cfg.lam)
            gl = fit_group_lasso(design, yc, gl_lam, tol=cfg.tol, max_iter=cfg.max_iter, prob=prob)
            if not gl.converged and cfg.strict:
                raise StageError("tune", f"group LASSO fit: {gl.error}")
            beta_gl = gl.beta_star
    with _timed(timings, "posterior"):
        sigma, sigma_source = resolve_sigma(design, cfg, a_n, gl_cv)
        post = fit_ridge_posterior(design, yc, a_n=a_n, sigma=sigma)
    with _timed(timings, "sample"):
        draws = sample_posterior(post, cfg.draws, cfg.seed)
    with _timed(timings, "tune"):
        weights = adaptive_weights(beta_gl, design.groups) if kind is PenaltyKind.ADAPTIVE_GROUP_LASSO else None
        base = PenaltyConfig(kind, 1.0, tau=cfg.tau, weights=weights, scad_group_scale=cfg.scad_group_scale)
        if cfg.lam == "cv":
            if cv_res is None:
                cv_res = cv_path(design, yc, base, folds=cfg.folds, seed=cfg.seed, n_lambda=cfg.n_lambda,
                                 tol=cfg.tol, max_iter=cfg.max_iter)
            lam = cv_res.lam
        else:
            lam = float(cfg.lam)
        penalty = base.with_lambda(lam)
    with _timed(timings, "project"):
        u0 = None
        if kind is not PenaltyKind.GROUP_SCAD:
            # convex maps have a unique image, so a shared start only saves sweeps
            u0 = solve_gram(prob, prob.S @ post.mean, penalty, tol=cfg.tol, max_iter=cfg.max_iter).beta_star
            if not np.all(np.isfinite(u0)):
                u0 = None
        ens = project_draws(design, draws, penalty, tol=cfg.tol, max_iter=cfg.max_iter,
                            warm_start=u0, jobs=cfg.jobs, prob=prob)
        if ens.failures and cfg.strict:
            i, msg = next(iter(ens.failures.items()))
            raise StageError("project", f"{len(ens.failures)} draw(s) failed; first is draw {i}: {msg}")
    selected, est, freq = mpm_select(ens, design.groups)
    theta = debiased = band = None
    if cfg.debias:
        with _timed(timings, "debias"):
            theta = build_theta_hat(design, lambdas=cfg.nodewise_lambda, folds=cfg.folds, seed=cfg.seed,
                                    n_lambda=cfg.n_lambda, per_column=cfg.per_column, tol=cfg.tol,
                                    max_iter=cfg.max_iter)
            debiased = debias_ensemble(theta, design, ens)
        with _timed(timings, "intervals"):
            if cfg.draws >= 2:
                band = credible_intervals(debiased, cfg.alpha)
    return FitResult(cfg, design, yc, post, draws, penalty, ens, freq, selected, est, sigma_source,
                     cv=cv_res, beta_gl=beta_gl, theta=theta, debiased=debiased, band=band,
                     timings=timings, gl_cv=gl_cv if gl_cv is not None else
                     (cv_res if kind is PenaltyKind.GROUP_LASSO else None))
