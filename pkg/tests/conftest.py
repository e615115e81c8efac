import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparseproj import _kernel  # noqa: E402
from sparseproj.design import GroupSpec, build_grouped_design, standardize  # noqa: E402


def _has_compiled():
    try:
        _kernel.get_backend("cython")
    except ImportError:
        return False
    return True


BACKENDS = ["python"] + (["cython"] if _has_compiled() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_design(rng, n, sizes, standardized=True, rho=0.0):
    sizes = list(sizes)
    X = rng.standard_normal((n, sum(sizes)))
    if rho:
        X[:, 1:] = rho * X[:, :-1] + np.sqrt(1 - rho**2) * X[:, 1:]
    d = build_grouped_design(X, GroupSpec.from_sizes(sizes))
    return standardize(d) if standardized else d


def random_sizes(rng, K, lo=1, hi=4):
    return rng.integers(lo, hi + 1, K).tolist()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def record_acceptance(label: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    print(ACCEPTANCE[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
