"""Regenerate the bundled example data in ``src/sparseproj/data``."""
from pathlib import Path

import numpy as np

from sparseproj.design import GroupSpec
from sparseproj.io import write_groups_json, write_matrix_csv
from sparseproj.simulation import AdditiveScenario, generate_additive

DATA = Path(__file__).resolve().parents[1] / "src" / "sparseproj" / "data"


def toy():
    # n = 40, p = 6, three groups of two; groups 1 and 3 carry signal
    rng = np.random.default_rng(20240601)
    X = rng.standard_normal((40, 6))
    beta = np.array([1.5, -1.0, 0.0, 0.0, 0.0, 2.0])
    y = X @ beta + 0.5 * rng.standard_normal(40)
    write_matrix_csv(DATA / "toy_X.csv", X, [f"x{j + 1}" for j in range(6)])
    write_matrix_csv(DATA / "toy_y.csv", y[:, None], ["y"])
    write_groups_json(DATA / "toy_groups.json", GroupSpec.from_sizes([2, 2, 2], ["a", "b", "c"]))


def additive():
    # ten raw covariates, the first five active, low noise
    X, y, _ = generate_additive(AdditiveScenario(K=10, n=200, sigma=0.5, seed=11))
    write_matrix_csv(DATA / "additive_X.csv", X, [f"x{k + 1}" for k in range(X.shape[1])])
    write_matrix_csv(DATA / "additive_y.csv", y[:, None], ["y"])


if __name__ == "__main__":
    toy()
    additive()
