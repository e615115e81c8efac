"""B-spline expansion of additive models into grouped designs, and component recovery."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .design import DesignError, GroupedDesign, GroupSpec


@dataclass(frozen=True)
class SplineBasisSpec:
    """Per-variable clamped knot sequences for a spline basis of size ``B_n``.

    ``knots[k]`` has ``B_n + degree + 1`` entries: the boundary knots repeated
    ``degree + 1`` times and ``B_n - degree - 1`` interior knots.
    """

    B_n: int
    degree: int
    knots: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.degree < 0:
            raise DesignError("spline degree must be non-negative")
        if self.B_n < self.degree + 1:
            raise DesignError(f"B_n={self.B_n} is below degree + 1 = {self.degree + 1}")
        for k, t in enumerate(self.knots):
            t = np.asarray(t)
            if t.size != self.B_n + self.degree + 1:
                raise DesignError(f"variable {k + 1}: expected {self.B_n + self.degree + 1} knots, got {t.size}")
            if np.any(np.diff(t) < 0):
                raise DesignError(f"variable {k + 1}: knots must be non-decreasing")
            m = self.degree + 1
            if np.any(t[:m] != t[0]) or np.any(t[-m:] != t[-1]) or not t[-1] > t[0]:
                raise DesignError(f"variable {k + 1}: boundary knots need multiplicity {m}")

    @property
    def K(self) -> int:
        return len(self.knots)

    @property
    def n_interior(self) -> int:
        return self.B_n - self.degree - 1

    def bounds(self, k: int) -> tuple[float, float]:
        t = self.knots[k]
        return float(t[0]), float(t[-1])


def quantile_spline_spec(X_raw, B_n: int = 8, degree: int = 3) -> SplineBasisSpec:
    """Clamped knots with interior knots at equally spaced empirical quantiles.

    Boundary knots sit at each variable's sample minimum and maximum.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim == 1:
        X_raw = X_raw[:, None]
    if B_n < degree + 1:
        raise DesignError(f"B_n={B_n} is below degree + 1 = {degree + 1}")
    n_int = B_n - degree - 1
    probs = np.linspace(0.0, 1.0, n_int + 2)[1:-1]
    knots = []
    for k in range(X_raw.shape[1]):
        x = X_raw[:, k]
        if not np.all(np.isfinite(x)):
            raise DesignError(f"variable {k + 1} has non-finite values")
        if np.unique(x).size < degree + 2:
            raise DesignError(f"variable {k + 1} needs at least {degree + 2} distinct values"
                              + (" (it is constant)" if np.ptp(x) == 0 else ""))
        lo, hi = float(x.min()), float(x.max())
        inner = np.quantile(x, probs) if n_int else np.empty(0)
        knots.append(np.r_[np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
    return SplineBasisSpec(B_n, degree, tuple(knots))


def bspline_basis(x, spec: SplineBasisSpec, k: int) -> np.ndarray:
    """Evaluate the ``B_n`` basis functions of variable ``k`` at ``x``.

    The closed right end of the knot range is included. Raises
    :class:`DesignError` for points outside the knot range.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = spec.bounds(k)
    bad = (x < lo) | (x > hi) | ~np.isfinite(x)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DesignError(f"variable {k + 1}: x={x[i]!r} outside knot range [{lo}, {hi}]")
    return BSpline.design_matrix(x, spec.knots[k], spec.degree).toarray()


def expand_additive_design(X_raw, B_n: int = 8, degree: int = 3,
                           spec: SplineBasisSpec | None = None) -> tuple[GroupedDesign, SplineBasisSpec]:
    """Expand each raw variable into a centered block of ``B_n`` basis columns.

    Group ``k`` covers columns ``k * B_n`` to ``(k + 1) * B_n - 1``. The column
    means removed here are kept in ``column_means`` so new points can be
    evaluated on the same basis.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 2:
        raise DesignError(f"raw covariates must be a matrix, got shape {X_raw.shape}")
    spec = spec or quantile_spline_spec(X_raw, B_n, degree)
    if spec.K != X_raw.shape[1]:
        raise DesignError(f"spline spec has {spec.K} variables, data has {X_raw.shape[1]}")
    B = np.hstack([bspline_basis(X_raw[:, k], spec, k) for k in range(spec.K)])
    means = B.mean(axis=0)
    groups = GroupSpec.from_sizes([spec.B_n] * spec.K, names=[f"x{k + 1}" for k in range(spec.K)])
    return GroupedDesign(np.ascontiguousarray(B - means), groups, column_means=means), spec


def theoretical_basis_count(n: int, alpha: float, degree: int = 3) -> int:
    """``ceil(n^(1 / (2 alpha + 1)))``, floored at ``degree + 1``."""
    if alpha <= 0:
        raise ValueError("smoothness alpha must be positive")
    return max(degree + 1, math.ceil(n ** (1.0 / (2.0 * alpha + 1.0))))


@dataclass
class AdditiveFit:
    """Expanded design, its spline spec and (optionally) projected coefficient draws.

    ``design`` is the working design the draws live on; it may have been
    standardized after expansion, which ``column_means`` / ``column_scales``
    record.
    """

    design: GroupedDesign
    spec: SplineBasisSpec
    X_raw: np.ndarray
    beta_star: np.ndarray | None = None

    def basis_at(self, k: int, x) -> np.ndarray:
        """Working-scale basis block of variable ``k`` at new points."""
        sl = self.design.groups.slice(k)
        B = bspline_basis(x, self.spec, k)
        return (B - self.design.column_means[sl]) / self.design.column_scales[sl]

    def components(self, beta=None) -> np.ndarray:
        """``f*_k`` at the sample points for one coefficient vector, shape (n, K)."""
        beta = self.beta_star.mean(axis=0) if beta is None else np.asarray(beta, dtype=float)
        return np.column_stack([self.design.block(k) @ beta[self.design.groups.slice(k)]
                                for k in range(self.spec.K)])


@dataclass
class ComponentRecovery:
    sample_values: np.ndarray
    grid: np.ndarray
    grid_values: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    level: float

    @property
    def D(self) -> int:
        return self.sample_values.shape[0]


def recover_components(fit: AdditiveFit, beta_star_draws=None, grid=None, n_grid: int = 50,
                       alpha: float = 0.05) -> ComponentRecovery:
    """Per-draw component functions and pointwise quantile bands.

    Parameters
    ----------
    beta_star_draws : (D, p) array, optional
        Projected draws on ``fit.design``; defaults to ``fit.beta_star``.
    grid : (K, G) array, optional
        Evaluation points per variable; defaults to ``n_grid`` equally spaced
        points across each knot range.

    Returns
    -------
    ComponentRecovery
        ``sample_values`` has shape (D, K, n) and ``grid_values`` (D, K, G);
        bands are type-7 quantiles over draws, shape (K, G).
    """
    B = fit.beta_star if beta_star_draws is None else beta_star_draws
    B = np.atleast_2d(np.asarray(B, dtype=float))
    groups = fit.design.groups
    K = fit.spec.K
    if grid is None:
        grid = np.vstack([np.linspace(*fit.spec.bounds(k), n_grid) for k in range(K)])
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    D = B.shape[0]
    samp = np.empty((D, K, fit.design.n))
    gv = np.empty((D, K, grid.shape[1]))
    for k in range(K):
        sl = groups.slice(k)
        samp[:, k, :] = B[:, sl] @ fit.design.block(k).T
        gv[:, k, :] = B[:, sl] @ fit.basis_at(k, grid[k]).T
    lo, med, hi = np.quantile(gv, [alpha / 2, 0.5, 1 - alpha / 2], axis=0)
    return ComponentRecovery(samp, grid, gv, lo, med, hi, 1 - alpha)


def additive_recovery_error(component_draws, f0, center: bool = True) -> dict:
    """Mean squared error ``n^-1 sum_i (sum_k f*_k(x_ki) - f0(x_i))^2`` per draw.

    Parameters
    ----------
    component_draws : ComponentRecovery or array (D, K, n) or (K, n)
    f0 : array (n, K) of true component values, or (n,) for the total
    center : bool
        Center each true component over the sample first, which removes the
        part an intercept-free centered basis cannot represent.
    """
    V = component_draws.sample_values if isinstance(component_draws, ComponentRecovery) else np.asarray(component_draws, dtype=float)
    if V.ndim == 2:
        V = V[None]
    total = V.sum(axis=1)  # (D, n)
    f0 = np.asarray(f0, dtype=float)
    if f0.ndim == 2:
        if center:
            f0 = f0 - f0.mean(axis=0)
        f0 = f0.sum(axis=1)
    elif center:
        f0 = f0 - f0.mean()
    err = np.mean((total - f0) ** 2, axis=1)
    q = np.quantile(err, [0.05, 0.5, 0.95])
    return {"mean": float(err.mean()), "q05": float(q[0]), "median": float(q[1]),
            "q95": float(q[2]), "per_draw": err}
