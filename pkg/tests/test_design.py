import numpy as np
import pytest

from sparseproj.design import (DesignError, GroupSpec, build_grouped_design, gram, irrepresentability_statistic,
                               permute_to_contiguous, restricted_eigenvalue, standardize)
from sparseproj.penalties import (PenaltyConfig, PenaltyKind, group_soft_threshold, scad_derivative, scad_penalty,
                                  scad_threshold)


class TestGroupSpec:
    def test_from_ranges_is_one_based_inclusive(self):
        g = GroupSpec.from_ranges([(1, 2), (3, 5)])
        assert g.K == 2 and g.p == 5
        assert list(g.sizes) == [2, 3]
        assert g.slice(1) == slice(2, 5)
        assert g.ranges() == [(1, 2), (3, 5)]

    @pytest.mark.parametrize("ranges", [[(0, 2)], [(3, 2)]])
    def test_bad_ranges(self, ranges):
        with pytest.raises(DesignError):
            GroupSpec.from_ranges(ranges)

    def test_gap_or_overlap_rejected(self):
        X = np.ones((4, 5))
        with pytest.raises(DesignError):
            build_grouped_design(X, [(1, 2), (4, 5)])
        with pytest.raises(DesignError):
            build_grouped_design(X, [(1, 3), (3, 5)])

    def test_must_cover_all_columns(self):
        with pytest.raises(DesignError):
            build_grouped_design(np.ones((4, 5)), [(1, 2), (3, 4)])

    def test_permute_to_contiguous(self):
        order, spec = permute_to_contiguous(["b", "a", "b", "c", "a"])
        assert list(order) == [0, 2, 1, 4, 3]
        assert list(spec.sizes) == [2, 2, 1]
        assert spec.names == ("b", "a", "c")


class TestDesign:
    def test_nonfinite_reports_position(self):
        X = np.ones((3, 2))
        X[1, 1] = np.nan
        with pytest.raises(DesignError, match="row 2, column 2"):
            build_grouped_design(X, [(1, 2)])

    def test_standardize_scales(self, rng):
        X = rng.normal(3.0, 2.0, (50, 4))
        d = standardize(build_grouped_design(X, [(1, 2), (3, 4)]))
        assert np.allclose(d.X.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(np.mean(d.X**2, axis=0), 1, atol=1e-12)
        beta = rng.standard_normal(4)
        # predictions agree after mapping back
        orig = d.to_original_scale(beta)
        assert np.allclose((X - X.mean(0)) @ orig, d.X @ beta)
        # idempotent up to rounding
        d2 = standardize(d)
        assert np.allclose(d2.X, d.X) and np.allclose(d2.column_scales, d.column_scales)

    def test_constant_column_rejected(self):
        X = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        with pytest.raises(DesignError, match="constant column 2"):
            standardize(build_grouped_design(X, [(1, 1), (2, 2)]))

    def test_diagnostics_on_orthogonal_design(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((40, 6)))
        d = build_grouped_design(Q * np.sqrt(40), [(1, 2), (3, 4), (5, 6)])
        assert np.allclose(gram(d), np.eye(6), atol=1e-12)
        assert restricted_eigenvalue(d, [0, 2]) == pytest.approx(1.0)
        assert irrepresentability_statistic(d, [0]) == pytest.approx(0.0, abs=1e-12)

    def test_irrepresentability_detects_copy(self, rng):
        X = rng.standard_normal((30, 3))
        X[:, 2] = X[:, 0]
        d = build_grouped_design(X, [(1, 1), (2, 2), (3, 3)])
        assert irrepresentability_statistic(d, [0]) == pytest.approx(1.0)


class TestPenalties:
    def test_soft_threshold(self):
        assert np.allclose(group_soft_threshold([3.0, 4.0], 2.5), [1.5, 2.0])
        # tie at ||v|| = t returns zero
        assert np.all(group_soft_threshold([3.0, 4.0], 5.0) == 0)
        with pytest.raises(ValueError):
            group_soft_threshold([1.0], -1)

    def test_scad_continuous_and_derivative(self):
        lam, tau = 0.7, 3.7
        for t0 in (lam, tau * lam):
            assert scad_penalty(t0 - 1e-9, lam, tau) == pytest.approx(scad_penalty(t0 + 1e-9, lam, tau), abs=1e-8)
        t = np.linspace(0.01, 4, 400)
        num = (scad_penalty(t + 1e-6, lam, tau) - scad_penalty(t - 1e-6, lam, tau)) / 2e-6
        assert np.allclose(num, scad_derivative(t, lam, tau), atol=1e-5)

    def test_scad_threshold_segments(self):
        lam, tau = 1.0, 3.7
        assert scad_threshold(0.4, lam, tau) == 0.0
        assert scad_threshold(1.2, lam, tau) == pytest.approx(0.7)
        assert scad_threshold(5.0, lam, tau) == 5.0
        z = np.linspace(0, 6, 601)
        r = np.linspace(0, 7, 70001)
        for zi in z[::20]:
            brute = r[np.argmin((r - zi) ** 2 + scad_penalty(r, lam, tau))]
            assert scad_threshold(zi, lam, tau) == pytest.approx(brute, abs=2e-4)

    def test_penalty_config(self):
        assert PenaltyKind.parse("scad") is PenaltyKind.GROUP_SCAD
        with pytest.raises(ValueError):
            PenaltyConfig("gscad", 1.0, tau=2.0)
        with pytest.raises(ValueError):
            PenaltyConfig("agl", 1.0)
        with pytest.raises(ValueError):
            PenaltyConfig("gl", -1.0)
        th = PenaltyConfig("agl", 2.0, weights=np.array([1.0, np.inf])).group_thresholds(np.array([4, 1]))
        assert th[0] == 4.0 and np.isinf(th[1])
        th0 = PenaltyConfig("agl", 0.0, weights=np.array([np.inf])).group_thresholds(np.array([1]))
        assert np.isinf(th0[0])
