import itertools
import json
import time

import numpy as np
import pytest

from sparseproj import io
from sparseproj.cli import EXIT_CODES, main
from sparseproj.design import GroupSpec

TOY = [str(io.bundled(f)) for f in ("toy_X.csv", "toy_y.csv", "toy_groups.json")]
ADD = [str(io.bundled(f)) for f in ("additive_X.csv", "additive_y.csv")]


def _toy_args(out, *extra):
    return ["fit", "--x", TOY[0], "--y", TOY[1], "--groups", TOY[2], "--seed", "3", "--draws", "60",
            "--out", str(out), *extra]


def _strip(rep):
    rep = dict(rep)
    rep.pop("timings", None)
    return rep


def _bic_best_subset(X, y, groups):
    n = X.shape[0]
    X = X - X.mean(axis=0)
    y = y - y.mean()
    best = (n * np.log(y @ y / n), ())
    for r in range(1, groups.K + 1):
        for sub in itertools.combinations(range(groups.K), r):
            cols = np.concatenate([np.arange(groups.starts[k], groups.starts[k] + groups.sizes[k]) for k in sub])
            coef = np.linalg.lstsq(X[:, cols], y, rcond=None)[0]
            rss = np.sum((y - X[:, cols] @ coef) ** 2)
            best = min(best, (n * np.log(rss / n) + np.log(n) * cols.size, sub))
    return set(best[1])


class TestIO:
    def test_csv_error_position(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(io.InputError, match="line 3, column 2"):
            io.read_matrix_csv(f)

    def test_ragged_row(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("1,2\n3\n")
        with pytest.raises(io.InputError, match="line 2"):
            io.read_matrix_csv(f)

    def test_matrix_round_trip(self, tmp_path, rng):
        M = rng.standard_normal((4, 3))
        io.write_matrix_csv(tmp_path / "m.csv", M, names=["u", "v", "w"])
        got, names = io.read_matrix_csv(tmp_path / "m.csv")
        assert names == ["u", "v", "w"] and np.array_equal(got, M)

    def test_groups_round_trip(self, tmp_path):
        g = GroupSpec.from_sizes([2, 3], names=["a", "b"])
        io.write_groups_json(tmp_path / "g.json", g)
        back = io.read_groups_json(tmp_path / "g.json")
        assert back.ranges() == [(1, 2), (3, 5)] and back.names == ("a", "b")

    def test_bad_json(self, tmp_path):
        f = tmp_path / "g.json"
        f.write_text("{\n  'x': 1}")
        with pytest.raises(io.InputError, match="line 2"):
            io.read_json(f)

    def test_headers(self, tmp_path):
        io.write_csv(tmp_path / "t.csv", ["a"], [[1.0]], 7, "abc")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == f"# sparseproj {io.software_version()} seed=7 config_hash=abc"
        io.write_json(tmp_path / "t.json", {"a": 1}, 7, "abc")
        assert json.loads((tmp_path / "t.json").read_text())["_header"]["seed"] == 7

    def test_config_hash_is_order_free(self):
        assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
        assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


class TestFitCommand:
    def test_missing_groups(self, tmp_path, capsys):
        rc = main(["fit", "--x", TOY[0], "--y", TOY[1], "--seed", "1", "--out", str(tmp_path)])
        assert rc == 2 and "--groups" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        rc = main(["fit", "--x", TOY[0], "--y", TOY[1], "--groups", TOY[2], "--out", str(tmp_path)])
        assert rc == 2 and "--seed" in capsys.readouterr().err

    def test_bad_csv_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "x.csv"
        bad.write_text("1,2,3,4,5,6\n1,2,3,x,5,6\n")
        rc = main(["fit", "--x", str(bad), "--y", TOY[1], "--groups", TOY[2], "--seed", "1", "--out", str(tmp_path)])
        assert rc == EXIT_CODES["input"] and "line 2, column 4" in capsys.readouterr().err

    def test_toy_report(self, tmp_path):
        assert main(_toy_args(tmp_path)) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["selected_groups"]
        for f in ("estimates.csv", "selection.csv"):
            first = (tmp_path / f).read_text().splitlines()[0]
            assert "seed=3" in first and f"config_hash={rep['_header']['config_hash']}" in first

    def test_toy_selection_matches_exhaustive_search(self, tmp_path):
        X, _ = io.read_matrix_csv(TOY[0])
        y = io.read_vector_csv(TOY[1])
        groups = io.read_groups_json(TOY[2])
        want = {groups.names[k] for k in _bic_best_subset(X, y, groups)}
        assert main(_toy_args(tmp_path)) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert set(rep["selected_groups"]) == want

    def test_deterministic(self, tmp_path):
        main(_toy_args(tmp_path / "a"))
        main(_toy_args(tmp_path / "b"))
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert _strip(a) == _strip(b)
        assert (tmp_path / "a" / "estimates.csv").read_bytes() == (tmp_path / "b" / "estimates.csv").read_bytes()

    def test_rerun_from_report(self, tmp_path):
        main(_toy_args(tmp_path / "a", "--penalty", "agl"))
        rc = main(["fit", "--config", str(tmp_path / "a" / "report.json"), "--out", str(tmp_path / "b")])
        assert rc == 0
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert _strip(a) == _strip(b) and a["config"]["fit"]["penalty"] == "agl"

    def test_debias_intervals(self, tmp_path):
        rc = main(["debias", "--x", TOY[0], "--y", TOY[1], "--groups", TOY[2], "--seed", "2", "--draws", "60",
                   "--out", str(tmp_path)])
        assert rc == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        lo, hi = np.array(rep["intervals"]["lower"]), np.array(rep["intervals"]["upper"])
        assert np.all(lo <= hi) and rep["theta_identity"]["diag"] <= 1e-8

    def test_debias_rejects_scad(self, tmp_path):
        assert main(_toy_args(tmp_path, "--penalty", "gscad", "--debias")) == 2

    def test_diagnose(self, tmp_path):
        rc = main(["diagnose", "--x", TOY[0], "--groups", TOY[2], "--seed", "1", "--active", "1,3",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "diagnostics.json").exists()


class TestAdditiveCommand:
    def _run(self, tmp_path, *extra):
        return main(["additive", "--x", ADD[0], "--y", ADD[1], "--seed", "4", "--draws", "60",
                     "--out", str(tmp_path), *extra])

    def test_expanded_dimension_logged(self, tmp_path, caplog):
        caplog.set_level("INFO", logger="sparseproj")
        assert self._run(tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["expanded_shape"] == [200, 80]
        assert "200 x 80" in caplog.text
        lines = (tmp_path / "component_bands.csv").read_text().splitlines()
        assert lines[1] == "variable,grid_point,x,lower,median,upper"

    def test_fixture_selects_true_components(self, tmp_path):
        assert self._run(tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["selected_indices"] == [1, 2, 3, 4, 5]

    def test_basis_below_degree(self, tmp_path, capsys):
        assert self._run(tmp_path, "--basis", "3") == 2
        assert "--basis" in capsys.readouterr().err


class TestSimulateCommand:
    def test_tiny_run_is_fast(self, tmp_path):
        t0 = time.perf_counter()
        rc = main(["simulate", "--K", "5", "--n", "60", "--s0", "2", "--replicates", "1", "--draws", "50",
                   "--methods", "gl,debiased", "--seed", "1", "--out", str(tmp_path)])
        assert rc == 0 and time.perf_counter() - t0 < 60
        for f in ("metrics.csv", "aggregate.json", "figure_mse.csv", "figure_f1.csv", "coverage.csv"):
            assert (tmp_path / f).exists()
        first = (tmp_path / "metrics.csv").read_text().splitlines()[:2]
        assert "seed=1" in first[0] and first[1] == "scenario,method,replicate,metric,value"

    def test_invalid_sparsity(self, tmp_path, capsys):
        rc = main(["simulate", "--K", "3", "--s0", "5", "--seed", "1", "--out", str(tmp_path)])
        assert rc == 2 and "s0" in capsys.readouterr().err

    def test_study_file_round_trip(self, tmp_path):
        args = ["simulate", "--K", "4", "--n", "50", "--s0", "1", "--draws", "20", "--seed", "8"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        agg = tmp_path / "a" / "aggregate.json"
        assert main(["simulate", "--study", str(agg), "--seed", "8", "--out", str(tmp_path / "b")]) == 0
        a = json.loads(agg.read_text())["aggregate"]
        b = json.loads((tmp_path / "b" / "aggregate.json").read_text())["aggregate"]
        assert a == b
