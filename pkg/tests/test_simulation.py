import math

import numpy as np
import pytest

from sparseproj.design import GroupSpec
from sparseproj.pipeline import mpm_select
from sparseproj.simulation import (AdditiveScenario, LinearScenario, ReplicateError, StudyConfig, compute_metrics,
                                   generate_linear, run_replicate, run_replicated, selection_scores)


class TestMetrics:
    def test_perfect(self):
        b = np.array([1.0, 2.0, 0.0, 0.0])
        rep = compute_metrics([0], b, b, [0], band=(b - 0.1, b + 0.1))
        assert rep.f1 == 1.0 and rep.mse == 0.0 and rep.exact
        assert rep.signal_coverage == 1.0 and rep.noise_coverage == 1.0
        assert rep.signal_length == pytest.approx(0.2)

    def test_disjoint_and_empty(self):
        assert selection_scores([3, 4], [0, 1])[3:] == (0.0, 0.0, 0.0)
        assert selection_scores([], [0, 1])[3:] == (0.0, 0.0, 0.0)

    def test_half_right(self):
        tp, fp, fn, p, r, f1 = selection_scores(list(range(5)) + list(range(20, 25)), range(10))
        assert (tp, fp, fn) == (5, 5, 5)
        assert p == r == f1 == 0.5

    def test_f1_invariant_to_noise_labels(self):
        a = selection_scores([0, 1, 30, 31], range(3))
        b = selection_scores([0, 1, 44, 12], range(3))
        assert a == b

    def test_coverage_counts_partition(self, rng):
        beta0 = np.r_[rng.standard_normal(5), np.zeros(5)]
        lo, hi = beta0 - rng.uniform(-1, 1, 10), beta0 + 0.5
        rep = compute_metrics([], np.zeros(10), beta0, range(5), (lo, hi))
        inside = (lo[:5] <= beta0[:5]) & (beta0[:5] <= hi[:5])
        assert rep.signal_coverage + np.mean(~inside) == 1.0


class TestMPM:
    groups = GroupSpec.from_sizes([2, 2, 2, 2])

    def test_single_group(self):
        B = np.zeros((6, 8))
        B[:, 6] = 1.0
        sel, est, freq = mpm_select(B, self.groups)
        assert sel == [3] and np.array_equal(freq, [0, 0, 0, 1])
        assert np.array_equal(est, B[0])

    def test_strict_tie(self):
        B = np.zeros((4, 8))
        B[:2, 0] = 1.0
        assert mpm_select(B, self.groups)[0] == []

    def test_hand_count(self):
        # D = 10 fixture; active patterns per draw listed by group
        patterns = [{0, 1}, {0}, {0, 2}, {0, 1}, {1}, {0, 1, 3}, {0}, {1, 2}, {0, 1}, {2}]
        B = np.zeros((10, 8))
        for i, act in enumerate(patterns):
            for k in act:
                B[i, 2 * k + 1] = i + 1.0
        sel, est, freq = mpm_select(B, self.groups)
        assert np.allclose(freq, [0.7, 0.6, 0.3, 0.1])
        assert sel == [0, 1]
        assert est[1] == pytest.approx(np.mean([1, 2, 3, 4, 0, 6, 7, 0, 9, 0]))
        assert np.all(est[4:] == 0)


class TestGeneration:
    def test_dimensions(self):
        sc = LinearScenario(K=50, n=20, s0=10)
        d, y, beta0, S0 = generate_linear(sc)
        assert d.p == 500 and sc.p == 500 and S0 == list(range(10))
        nz = np.abs(beta0[beta0 != 0])
        assert nz.size == 100 and nz.min() >= 0.5 and nz.max() <= 2.0

    def test_null_model(self):
        d, y, beta0, S0 = generate_linear(LinearScenario(K=5, n=30, s0=0, seed=3))
        assert not beta0.any() and S0 == []
        assert 0.5 < y.std() < 1.5

    def test_deterministic(self):
        a = generate_linear(LinearScenario(K=5, n=30, s0=2, seed=7))
        b = generate_linear(LinearScenario(K=5, n=30, s0=2, seed=7))
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1], b[1])

    def test_jittered_sizes(self):
        sc = LinearScenario(K=20, n=30, jitter=2, seed=1)
        sizes = sc.group_sizes()
        assert sizes.sum() == 200 and sizes.min() >= 8 and sizes.max() <= 12

    def test_invalid_sparsity(self):
        with pytest.raises(ValueError, match="s0"):
            LinearScenario(K=3, s0=5)


TINY = LinearScenario(K=6, n=60, s0=2, group_size=3, name="tiny")


class TestStudy:
    def test_single_replicate_matches_run(self):
        study = StudyConfig([TINY], methods=("gl",), replicates=1, draws=20, master_seed=5)
        res = run_replicated(study)
        _, _, out, _ = run_replicate(study, 0, 0)
        for k, v in out["gl"].scalars().items():
            assert res.mean("tiny", "gl", k) == pytest.approx(v, nan_ok=True)
            assert res.aggregate["tiny"]["gl"][k]["se"] == 0.0 or math.isnan(v)

    def test_fixed_seed_zero_se(self):
        study = StudyConfig([TINY], methods=("gl",), replicates=2, draws=20, fixed_seed=True)
        agg = run_replicated(study).aggregate["tiny"]["gl"]
        assert agg["mse"]["se"] == 0.0 and agg["f1"]["se"] == 0.0

    def test_deterministic_and_seeds_distinct(self):
        study = StudyConfig([TINY], methods=("gl", "debiased"), replicates=2, draws=20, master_seed=9)
        a, b = run_replicated(study), run_replicated(study)
        assert a.records == b.records
        assert study.replicate_seed(0, 0) != study.replicate_seed(0, 1)
        assert {r["method"] for r in a.records} == {"gl", "debiased"}

    def test_parallel_matches_serial(self):
        study = StudyConfig([TINY], methods=("gl",), replicates=2, draws=20, master_seed=2)
        par = StudyConfig.from_dict({**study.to_dict(), "jobs": 2})
        assert run_replicated(study).records == run_replicated(par).records

    def test_config_round_trip(self):
        study = StudyConfig([TINY, AdditiveScenario(K=4, n=40, s0=3)], methods=("gl", "agl"), replicates=3)
        assert StudyConfig.from_dict(study.to_dict()) == study

    def test_validation(self):
        with pytest.raises(ValueError):
            StudyConfig([TINY], replicates=0)
        with pytest.raises(ValueError):
            StudyConfig([TINY], methods=("bgl",))
        with pytest.raises(ValueError):
            StudyConfig([AdditiveScenario()], methods=("debiased",))

    def test_failure_names_replicate(self):
        study = StudyConfig([TINY], methods=("gl",), draws=20, fit={"folds": 1})
        with pytest.raises(ReplicateError, match="replicate 0"):
            run_replicated(study)

    def test_additive_replicate(self):
        sc = AdditiveScenario(K=4, n=60, s0=2, B_n=5, name="add")
        res = run_replicated(StudyConfig([sc], methods=("gl",), draws=20))
        assert 0 <= res.mean("add", "gl", "f1") <= 1
        assert res.mean("add", "gl", "mse") >= 0
