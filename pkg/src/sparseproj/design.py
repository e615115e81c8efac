"""Grouped design matrices, standardization and assumption diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DesignError(ValueError):
    """Raised for malformed designs or group specifications."""


@dataclass(frozen=True)
class GroupSpec:
    """Contiguous partition of the columns into groups.

    ``starts``/``ends`` are 0-based half-open column ranges. Use
    :meth:`from_ranges` for the 1-based inclusive convention of group files.
    """

    starts: np.ndarray
    ends: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.int64)
        ends = np.asarray(self.ends, dtype=np.int64)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"g{k + 1}" for k in range(len(starts))))
        if len(self.names) != len(starts):
            raise DesignError("one name per group required")

    @classmethod
    def from_ranges(cls, ranges: Iterable[tuple[int, int]], names: Sequence[str] = ()) -> "GroupSpec":
        """Build from 1-based inclusive ``(start, end)`` pairs."""
        ranges = [(int(a), int(b)) for a, b in ranges]
        if not ranges:
            raise DesignError("at least one group is required")
        starts, ends = [], []
        for a, b in ranges:
            if a < 1 or b < a:
                raise DesignError(f"invalid group range ({a}, {b})")
            starts.append(a - 1)
            ends.append(b)
        return cls(np.array(starts), np.array(ends), tuple(names))

    @classmethod
    def from_sizes(cls, sizes: Iterable[int], names: Sequence[str] = ()) -> "GroupSpec":
        sizes = np.asarray(list(sizes), dtype=np.int64)
        if sizes.size == 0 or np.any(sizes < 1):
            raise DesignError("group sizes must be positive")
        ends = np.cumsum(sizes)
        return cls(ends - sizes, ends, tuple(names))

    @property
    def K(self) -> int:
        return len(self.starts)

    @property
    def sizes(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def p(self) -> int:
        return int(self.ends[-1])

    @property
    def p_min(self) -> int:
        return int(self.sizes.min())

    @property
    def p_max(self) -> int:
        return int(self.sizes.max())

    def slice(self, k: int) -> slice:
        return slice(int(self.starts[k]), int(self.ends[k]))

    def ranges(self) -> list[tuple[int, int]]:
        """1-based inclusive ranges, as written to group files."""
        return [(int(a) + 1, int(b)) for a, b in zip(self.starts, self.ends)]

    def column_groups(self) -> np.ndarray:
        """Group index of every column."""
        return np.repeat(np.arange(self.K), self.sizes)

    def columns(self, groups: Iterable[int]) -> np.ndarray:
        idx = [np.arange(self.starts[k], self.ends[k]) for k in sorted(set(int(g) for g in groups))]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)

    def validate(self, p: int | None = None) -> None:
        if self.starts[0] != 0:
            raise DesignError(f"columns 1..{self.starts[0]} are not covered by any group")
        for k in range(1, self.K):
            if self.starts[k] < self.ends[k - 1]:
                raise DesignError(f"overlapping groups {k} and {k + 1}")
            if self.starts[k] > self.ends[k - 1]:
                raise DesignError(
                    f"columns {self.ends[k - 1] + 1}..{self.starts[k]} are not covered by any group"
                )
        if np.any(self.sizes < 1):
            raise DesignError("empty group")
        if p is not None and self.p != p:
            if self.p < p:
                raise DesignError(f"columns {self.p + 1}..{p} are not covered by any group")
            raise DesignError(f"groups cover {self.p} columns but the design has {p}")


@dataclass(frozen=True)
class GroupedDesign:
    """Design matrix ``X`` (n x p) with its group partition.

    ``column_scales`` maps standardized coefficients back to the original
    scale (``beta_orig = beta_std / column_scales``); ``column_means`` records
    the centering applied by :func:`standardize`, on the original scale.
    """

    X: np.ndarray
    groups: GroupSpec
    column_scales: np.ndarray = field(default=None)
    column_means: np.ndarray = field(default=None)

    def __post_init__(self):
        p = self.X.shape[1]
        if self.column_scales is None:
            object.__setattr__(self, "column_scales", np.ones(p))
        if self.column_means is None:
            object.__setattr__(self, "column_means", np.zeros(p))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.groups.K

    @property
    def standardized(self) -> bool:
        return not (np.all(self.column_scales == 1.0) and np.all(self.column_means == 0.0))

    def block(self, k: int) -> np.ndarray:
        """Columns of group ``k`` (0-based)."""
        return self.X[:, self.groups.slice(k)]

    def drop_group(self, g: int) -> np.ndarray:
        """``X`` without the columns of group ``g``."""
        sl = self.groups.slice(g)
        return np.delete(self.X, np.arange(sl.start, sl.stop), axis=1)

    def to_original_scale(self, beta: np.ndarray) -> np.ndarray:
        return np.asarray(beta) / self.column_scales


def build_grouped_design(X, groups: GroupSpec | Sequence[tuple[int, int]]) -> GroupedDesign:
    """Validate ``X`` against a contiguous group partition.

    ``groups`` may be a :class:`GroupSpec` or 1-based inclusive ranges.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DesignError(f"design must be a matrix, got shape {X.shape}")
    if not isinstance(groups, GroupSpec):
        groups = GroupSpec.from_ranges(groups)
    groups.validate(X.shape[1])
    if X.shape[0] < 2:
        raise DesignError("need at least two samples")
    if not np.all(np.isfinite(X)):
        i, j = np.argwhere(~np.isfinite(X))[0]
        raise DesignError(f"non-finite entry at row {i + 1}, column {j + 1}")
    return GroupedDesign(np.ascontiguousarray(X), groups)


def permute_to_contiguous(labels: Sequence) -> tuple[np.ndarray, GroupSpec]:
    """Column order that makes arbitrary group labels contiguous.

    Returns ``(order, spec)`` such that ``X[:, order]`` is grouped by ``spec``.
    Groups appear in order of first occurrence.
    """
    labels = list(labels)
    seen: dict = {}
    for lab in labels:
        seen.setdefault(lab, len(seen))
    codes = np.array([seen[lab] for lab in labels])
    order = np.argsort(codes, kind="stable")
    sizes = np.bincount(codes)
    return order, GroupSpec.from_sizes(sizes, names=[str(lab) for lab in seen])


def standardize(design: GroupedDesign) -> GroupedDesign:
    """Center every column and scale it to ``n^-1 ||x_j||^2 = 1``.

    Scales and means compose with any standardization already applied, so
    re-standardizing a standardized design is a no-op up to rounding.
    """
    X = design.X
    means = X.mean(axis=0)
    Xc = X - means
    scales = np.sqrt(np.mean(Xc**2, axis=0))
    bad = np.flatnonzero(scales <= 1e-12 * np.maximum(1.0, np.abs(means)))
    if bad.size:
        raise DesignError(f"constant column {bad[0] + 1} cannot be standardized")
    Xs = Xc / scales
    return GroupedDesign(
        np.ascontiguousarray(Xs),
        design.groups,
        column_scales=design.column_scales * scales,
        column_means=design.column_means + means * design.column_scales,
    )


def gram(design: GroupedDesign) -> np.ndarray:
    """``n^-1 X^T X``."""
    X = design.X
    S = X.T @ X / design.n
    return 0.5 * (S + S.T)


def restricted_eigenvalue(design: GroupedDesign, S: Iterable[int]) -> float:
    """Smallest eigenvalue of ``n^-1 X_S^T X_S`` for a set of groups ``S``."""
    cols = design.groups.columns(S)
    if cols.size == 0:
        raise DesignError("restricted eigenvalue needs a nonempty group set")
    XS = design.X[:, cols]
    G = XS.T @ XS / design.n
    return float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])


def _operator_norm(M: np.ndarray, tol: float = 1e-10, max_iter: int | None = None) -> float:
    """Largest singular value by power iteration on ``M^T M``.

    Falls back to a dense SVD when the iteration has not settled within
    ``max_iter`` steps (nearly tied top singular values).
    """
    m, d = M.shape
    if m == 0 or d == 0 or not np.any(M):
        return 0.0
    max_iter = max_iter if max_iter is not None else 10 * d
    G = M.T @ M
    # column of largest norm is never orthogonal to the top eigenvector
    v = G[:, np.argmax(np.diag(G))].copy()
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            return float(np.sqrt(new))
        est = new
    return float(np.linalg.norm(M, 2))


def irrepresentability_statistic(design: GroupedDesign, S0: Iterable[int]) -> float:
    """``max_{k not in S0} || X_k^T X_S0 (X_S0^T X_S0)^-1 ||`` (spectral norm).

    The irrepresentability condition holds when the value is below 1.
    """
    S0 = sorted(set(int(g) for g in S0))
    cols = design.groups.columns(S0)
    if cols.size == 0:
        raise DesignError("irrepresentability needs a nonempty active set")
    XS = design.X[:, cols]
    G = XS.T @ XS
    if np.linalg.cond(G) > 1e12:
        raise DesignError("X_S0^T X_S0 is singular")
    stat = 0.0
    for k in range(design.K):
        if k in S0:
            continue
        M = np.linalg.solve(G, XS.T @ design.block(k)).T  # = X_k^T X_S G^-1 by symmetry of G
        stat = max(stat, _operator_norm(M))
    return stat
