"""Group penalties and their scalar thresholding rules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class PenaltyKind(str, enum.Enum):
    GROUP_LASSO = "gl"
    GROUP_SCAD = "gscad"
    ADAPTIVE_GROUP_LASSO = "agl"

    @classmethod
    def parse(cls, value) -> "PenaltyKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {
            "group_lasso": cls.GROUP_LASSO,
            "group_scad": cls.GROUP_SCAD,
            "scad": cls.GROUP_SCAD,
            "adaptive_group_lasso": cls.ADAPTIVE_GROUP_LASSO,
            "adaptive": cls.ADAPTIVE_GROUP_LASSO,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family plus its tuning.

    ``weights`` is only used by the adaptive penalty; ``np.inf`` marks a group
    that is excluded (held at zero). ``scad_group_scale`` multiplies the SCAD
    threshold by ``sqrt(p_k)`` as for the group LASSO.
    """

    kind: PenaltyKind
    lam: float
    tau: float = 3.7
    weights: np.ndarray | None = None
    scad_group_scale: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind))
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and non-negative, got {self.lam}")
        if self.kind is PenaltyKind.GROUP_SCAD and not self.tau > 2:
            raise ValueError(f"SCAD requires tau > 2, got {self.tau}")
        if self.kind is PenaltyKind.ADAPTIVE_GROUP_LASSO:
            if self.weights is None:
                raise ValueError("adaptive penalty requires group weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(np.isnan(w)) or np.any(w < 0):
                raise ValueError("adaptive weights must be non-negative")
            object.__setattr__(self, "weights", w)

    def with_lambda(self, lam: float) -> "PenaltyConfig":
        return PenaltyConfig(self.kind, lam, self.tau, self.weights, self.scad_group_scale)

    def group_thresholds(self, sizes: np.ndarray) -> np.ndarray:
        """Per-group level ``lambda_k``; ``inf`` marks excluded groups.

        For the group LASSO and its adaptive version this is the coefficient
        of ``||u_k||`` in the penalty; for SCAD it is the kink location.
        """
        root = np.sqrt(np.asarray(sizes, dtype=float))
        if self.kind is PenaltyKind.GROUP_LASSO:
            return self.lam * root
        if self.kind is PenaltyKind.GROUP_SCAD:
            return self.lam * root if self.scad_group_scale else np.full(root.shape, self.lam)
        w = self.weights
        if w.shape != root.shape:
            raise ValueError(f"expected {root.size} adaptive weights, got {w.size}")
        # lam = 0 with an infinite weight is still an exclusion
        excluded = np.isinf(w)
        return np.where(excluded, np.inf, self.lam * root * np.where(excluded, 0.0, w))


def group_soft_threshold(v, t: float) -> np.ndarray:
    """``(1 - t / ||v||)_+ v``; the zero vector when ``||v|| <= t``."""
    if t < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv <= t:
        return np.zeros_like(v)
    return (1.0 - t / nv) * v


def scad_penalty(t, lam: float, tau: float):
    """SCAD penalty evaluated at ``|t|`` (vectorized)."""
    a = np.abs(np.asarray(t, dtype=float))
    inner = lam * a
    # continuous at |t| = lam and |t| = tau * lam
    mid = -(a**2 - 2 * tau * lam * a + lam**2) / (2 * (tau - 1))
    outer = lam**2 * (tau + 1) / 2
    out = np.where(a <= lam, inner, np.where(a <= tau * lam, mid, outer))
    return out if out.ndim else float(out)


def scad_derivative(t, lam: float, tau: float):
    """``P'(t) = lam`` for ``t <= lam``, ``(tau lam - t)_+ / (tau - 1)`` beyond."""
    a = np.abs(np.asarray(t, dtype=float))
    out = np.where(a <= lam, lam, np.maximum(tau * lam - a, 0.0) / (tau - 1))
    return out if out.ndim else float(out)


def scad_threshold(z: float, lam: float, tau: float, curvature: float = 1.0) -> float:
    """Global minimizer over ``t >= 0`` of ``e (t - z)^2 + P(t)``, ``e = curvature``.

    With ``e = 1`` this is the radial SCAD solution for an orthonormal block:
    zero below ``lam / 2``, shifted by ``lam / 2`` up to ``1.5 lam``, linearly
    interpolated up to ``tau lam`` and untouched beyond.
    """
    e = curvature
    if z <= 0 or (lam == 0):
        return max(z, 0.0)
    if math.isinf(lam):
        return 0.0
    s = 2.0 * e * (tau - 1.0)
    if s > 1.0:
        if z <= lam / (2 * e):
            return 0.0
        if z <= lam * (1.0 + 1.0 / (2 * e)):
            return z - lam / (2 * e)
        if z <= tau * lam:
            return (s * z - tau * lam) / (s - 1.0)
        return z
    # radial objective not convex: compare the segment candidates
    cands = [0.0, min(max(z - lam / (2 * e), 0.0), lam), lam, tau * lam, max(z, tau * lam)]
    vals = [e * (c - z) ** 2 + scad_penalty(c, lam, tau) for c in cands]
    return cands[int(np.argmin(vals))]
