"""Synthetic scenarios, selection and coverage metrics, and replicated studies."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .additive import AdditiveFit, additive_recovery_error, expand_additive_design, recover_components
from .debias import credible_intervals
from .design import DesignError, GroupedDesign, GroupSpec, build_grouped_design
from .pipeline import FitConfig, fit, mpm_select

log = logging.getLogger(__name__)

METHODS = ("gl", "gscad", "agl", "debiased")
METHOD_LABELS = {"gl": "GL-P", "gscad": "GS-P", "agl": "AGL-P", "debiased": "Debiased-P"}

ADDITIVE_TRUTH = (
    lambda x: 3.0 * np.sin(x),
    lambda x: 2.0 * x**2,
    lambda x: -1.5 * x,
    np.exp,
    lambda x: np.log(np.abs(x) + 1.0),
)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass(frozen=True)
class LinearScenario:
    """Grouped linear model with the first ``s0`` groups active.

    ``jitter`` > 0 draws group sizes uniformly from
    ``group_size +- jitter`` and then nudges them so they sum to
    ``K * group_size``. ``rho`` > 0 gives AR(1)-correlated columns.
    ``beta_seed`` fixes the coefficients across replicates when set.
    """

    K: int = 50
    n: int = 100
    s0: int = 10
    group_size: int = 10
    magnitude: tuple[float, float] = (0.5, 2.0)
    sigma: float = 1.0
    seed: int = 0
    jitter: int = 0
    rho: float = 0.0
    beta_seed: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.K < 1 or self.n < 2 or self.group_size < 1:
            raise ValueError("K >= 1, n >= 2 and group_size >= 1 are required")
        if not 0 <= self.s0 <= self.K:
            raise ValueError(f"s0 = {self.s0} must lie in [0, K = {self.K}]")
        lo, hi = self.magnitude
        if not 0 <= lo <= hi:
            raise ValueError("magnitude must be an increasing pair of non-negative numbers")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= self.jitter < self.group_size:
            raise ValueError("jitter must lie in [0, group_size)")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if not self.name:
            object.__setattr__(self, "name", f"linear_K{self.K}_n{self.n}")

    @property
    def p(self) -> int:
        return self.K * self.group_size

    def group_sizes(self) -> np.ndarray:
        if self.jitter == 0:
            return np.full(self.K, self.group_size)
        rng = _rng([self.seed, 1])
        lo, hi = self.group_size - self.jitter, self.group_size + self.jitter
        sizes = rng.integers(lo, hi + 1, self.K)
        while (gap := int(sizes.sum()) - self.p) != 0:
            room = np.flatnonzero(sizes > lo) if gap > 0 else np.flatnonzero(sizes < hi)
            sizes[rng.choice(room)] -= int(np.sign(gap))
        return sizes

    def replace(self, **kw) -> "LinearScenario":
        d = asdict(self)
        if "n" in kw or "K" in kw:
            d["name"] = ""
        d.update(kw)
        return LinearScenario(**d)


@dataclass(frozen=True)
class AdditiveScenario:
    """Sparse additive model on uniform[-2, 2] covariates.

    The first ``s0`` (at most five) variables carry the components
    ``3 sin x``, ``2 x^2``, ``-1.5 x``, ``exp(x)`` and ``log(|x| + 1)``.
    """

    K: int = 50
    n: int = 100
    s0: int = 5
    B_n: int = 8
    degree: int = 3
    sigma: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.s0 <= min(self.K, len(ADDITIVE_TRUTH)):
            raise ValueError(f"s0 must lie in [0, {min(self.K, len(ADDITIVE_TRUTH))}]")
        if self.B_n < self.degree + 1:
            raise ValueError(f"B_n = {self.B_n} is below degree + 1 = {self.degree + 1}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.name:
            object.__setattr__(self, "name", f"additive_K{self.K}_n{self.n}")

    @property
    def p(self) -> int:
        return self.K * self.B_n

    def replace(self, **kw) -> "AdditiveScenario":
        d = asdict(self)
        if "n" in kw or "K" in kw:
            d["name"] = ""
        d.update(kw)
        return AdditiveScenario(**d)


def _correlated_normals(rng, n, p, rho):
    Z = rng.standard_normal((n, p))
    if rho == 0:
        return Z
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * Z[:, j]
    return X


def generate_linear(sc: LinearScenario):
    """Draw ``(design, y, beta0, S0)``; ``S0`` lists the active groups (0-based)."""
    groups = GroupSpec.from_sizes(sc.group_sizes())
    rng = _rng([sc.seed, 0])
    X = _correlated_normals(rng, sc.n, sc.p, sc.rho)
    brng = rng if sc.beta_seed is None else _rng([sc.beta_seed, 2])
    beta0 = np.zeros(sc.p)
    S0 = list(range(sc.s0))
    cols = groups.columns(S0) if S0 else np.empty(0, dtype=int)
    mag = brng.uniform(*sc.magnitude, cols.size)
    beta0[cols] = mag * brng.choice([-1.0, 1.0], cols.size)
    y = X @ beta0 + sc.sigma * rng.standard_normal(sc.n)
    return build_grouped_design(X, groups), y, beta0, S0


def additive_truth(X_raw, s0: int = 5) -> np.ndarray:
    """True component values, shape (n, K); columns past ``s0`` are zero."""
    X_raw = np.asarray(X_raw, dtype=float)
    F = np.zeros_like(X_raw)
    for k in range(s0):
        F[:, k] = ADDITIVE_TRUTH[k](X_raw[:, k])
    return F


def generate_additive(sc: AdditiveScenario):
    """Draw ``(X_raw, y, f0)`` with ``f0`` the (n, K) true component values."""
    rng = _rng([sc.seed, 3])
    X = rng.uniform(-2.0, 2.0, (sc.n, sc.K))
    F = additive_truth(X, sc.s0)
    y = F.sum(axis=1) + sc.sigma * rng.standard_normal(sc.n)
    return X, y, F


@dataclass
class MetricsReport:
    mse: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    selected: list[int]
    exact: bool
    signal_coverage: float = math.nan
    noise_coverage: float = math.nan
    signal_length: float = math.nan
    noise_length: float = math.nan

    def scalars(self) -> dict:
        d = asdict(self)
        d.pop("selected")
        d["exact"] = float(d["exact"])
        d["n_selected"] = len(self.selected)
        return d


def selection_scores(selected, S0) -> tuple[int, int, int, float, float, float]:
    """``(tp, fp, fn, precision, recall, f1)``; empty or disjoint selections score 0."""
    sel, truth = set(int(k) for k in selected), set(int(k) for k in S0)
    tp = len(sel & truth)
    fp = len(sel - truth)
    fn = len(truth - sel)
    precision = tp / len(sel) if sel else 0.0
    recall = tp / len(truth) if truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if tp > 0 else 0.0
    return tp, fp, fn, precision, recall, f1


def compute_metrics(selected, estimate, beta0, S0, band=None) -> MetricsReport:
    """Selection, estimation and (optional) interval metrics against the truth.

    Parameters
    ----------
    band : (lower, upper) pair of (p,) arrays or an object with ``lower`` and
        ``upper``, on the same scale as ``beta0``.
    """
    estimate = np.asarray(estimate, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    tp, fp, fn, prec, rec, f1 = selection_scores(selected, S0)
    rep = MetricsReport(float(np.sum((estimate - beta0) ** 2)), tp, fp, fn, prec, rec, f1,
                        sorted(int(k) for k in selected), set(selected) == set(S0))
    if band is not None:
        lo, hi = (band.lower, band.upper) if hasattr(band, "lower") else band
        lo, hi = np.asarray(lo), np.asarray(hi)
        inside = (lo <= beta0) & (beta0 <= hi)
        sig = beta0 != 0
        if sig.any():
            rep.signal_coverage = float(inside[sig].mean())
            rep.signal_length = float((hi - lo)[sig].mean())
        if (~sig).any():
            rep.noise_coverage = float(inside[~sig].mean())
            rep.noise_length = float((hi - lo)[~sig].mean())
    return rep


@dataclass
class StudyConfig:
    """Replicated simulation study.

    ``sigma`` is ``"scenario"`` (plug in the scenario's noise level),
    ``"auto"`` (estimate it) or a number. ``fit`` holds extra
    :class:`FitConfig` fields shared by every method.
    """

    scenarios: list
    methods: tuple[str, ...] = ("gl",)
    replicates: int = 1
    master_seed: int = 0
    draws: int = 200
    sigma: float | str = "auto"
    alpha: float = 0.05
    jobs: int = 1
    fixed_seed: bool = False
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if any(isinstance(s, AdditiveScenario) for s in self.scenarios) and "debiased" in self.methods:
            raise ValueError("debiased intervals are available for linear scenarios only")

    def replicate_seed(self, scenario_index: int, replicate: int) -> int:
        if self.fixed_seed:
            return int(self.master_seed)
        ss = np.random.SeedSequence([int(self.master_seed), scenario_index, replicate])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenarios"] = [{"type": type(s).__name__, **asdict(s)} for s in self.scenarios]
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        scen = []
        for s in d.pop("scenarios"):
            s = dict(s)
            kind = s.pop("type", "LinearScenario")
            if kind == "LinearScenario":
                if "magnitude" in s:
                    s["magnitude"] = tuple(s["magnitude"])
                scen.append(LinearScenario(**s))
            elif kind == "AdditiveScenario":
                scen.append(AdditiveScenario(**s))
            else:
                raise ValueError(f"unknown scenario type {kind!r}")
        d["methods"] = tuple(d.get("methods", ("gl",)))
        return cls(scenarios=scen, **d)


class ReplicateError(RuntimeError):
    def __init__(self, scenario: str, replicate: int, cause: BaseException):
        super().__init__(f"scenario {scenario!r}, replicate {replicate}: {cause}")
        self.scenario = scenario
        self.replicate = replicate


def _fit_config(study: StudyConfig, method: str, sigma: float, seed: int) -> FitConfig:
    penalty = "gl" if method == "debiased" else method
    kw = dict(penalty=penalty, draws=study.draws, seed=seed, alpha=study.alpha,
              sigma=sigma, debias=method == "debiased", strict=False)
    kw.update(study.fit)
    return FitConfig(**kw)


def _resolve_sigma(study: StudyConfig, scenario):
    if study.sigma == "scenario":
        return float(scenario.sigma)
    return study.sigma


def _run_linear(study: StudyConfig, sc: LinearScenario, seed: int) -> dict:
    design, y, beta0, S0 = generate_linear(sc.replace(seed=seed))
    out = {}
    methods = list(study.methods)
    if "debiased" in methods and "gl" in methods:
        methods.remove("gl")  # one debiased run also yields GL-P
    gl_cv = None
    for m in methods:
        res = fit(design, y, config=_fit_config(study, m, _resolve_sigma(study, sc), seed), gl_cv=gl_cv)
        gl_cv = res.gl_cv or gl_cv
        scale = res.design.column_scales
        est = res.original_scale(res.point_estimate)
        band = credible_intervals(res.ensemble.beta_star, study.alpha)
        gl_band = (band.lower / scale, band.upper / scale)
        if m == "debiased":
            if "gl" in study.methods:
                out["gl"] = compute_metrics(res.selected, est, beta0, S0, gl_band)
            t = res.interval_table()
            dd_est = res.original_scale(res.debiased.beta_dd.mean(axis=0))
            out["debiased"] = compute_metrics(res.selected, dd_est, beta0, S0, (t[:, 0], t[:, 2]))
        else:
            out[m] = compute_metrics(res.selected, est, beta0, S0, gl_band)
        if res.ensemble.failures:
            log.warning("%s/%s seed %d: %d draw(s) did not converge", sc.name, m, seed,
                        len(res.ensemble.failures))
    return out


def _run_additive(study: StudyConfig, sc: AdditiveScenario, seed: int) -> dict:
    X_raw, y, F = generate_additive(sc.replace(seed=seed))
    design, spec = expand_additive_design(X_raw, sc.B_n, sc.degree)
    S0 = list(range(sc.s0))
    out = {}
    gl_cv = None
    for m in study.methods:
        res = fit(design, y, config=_fit_config(study, m, _resolve_sigma(study, sc), seed), gl_cv=gl_cv)
        gl_cv = res.gl_cv or gl_cv
        afit = AdditiveFit(res.design, spec, X_raw, res.ensemble.beta_star)
        rec = recover_components(afit)
        err = additive_recovery_error(rec, F)
        rep = compute_metrics(res.selected, np.zeros(sc.K), np.zeros(sc.K), S0)
        rep.mse = err["mean"]
        out[m] = rep
    return out


def run_replicate(study: StudyConfig, scenario_index: int, replicate: int) -> tuple[int, int, dict, float]:
    """One replicate of one scenario; returns its metrics keyed by method."""
    sc = study.scenarios[scenario_index]
    seed = study.replicate_seed(scenario_index, replicate)
    t0 = time.perf_counter()
    try:
        if isinstance(sc, AdditiveScenario):
            out = _run_additive(study, sc, seed)
        else:
            out = _run_linear(study, sc, seed)
    except Exception as exc:
        raise ReplicateError(sc.name, replicate, exc) from exc
    return scenario_index, replicate, out, time.perf_counter() - t0


def _call(args):
    return run_replicate(*args)


@dataclass
class StudyResult:
    config: StudyConfig
    records: list[dict]
    aggregate: dict
    seconds: float = 0.0

    def values(self, scenario: str, method: str, metric: str) -> np.ndarray:
        return np.array([r["value"] for r in self.records
                         if r["scenario"] == scenario and r["method"] == method and r["metric"] == metric])

    def mean(self, scenario: str, method: str, metric: str) -> float:
        return self.aggregate[scenario][method][metric]["mean"]


def aggregate_records(records: list[dict]) -> dict:
    """Mean and standard error (``sd / sqrt(R)``, 0 for one replicate) per cell; nan-aware."""
    cells: dict = {}
    for r in records:
        cells.setdefault(r["scenario"], {}).setdefault(r["method"], {}).setdefault(r["metric"], []).append(r["value"])
    agg: dict = {}
    for s, by_m in cells.items():
        for m, by_metric in by_m.items():
            for k, vals in by_metric.items():
                v = np.asarray(vals, dtype=float)
                v = v[~np.isnan(v)]
                mean = float(v.mean()) if v.size else math.nan
                se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else (0.0 if v.size else math.nan)
                agg.setdefault(s, {}).setdefault(m, {})[k] = {"mean": mean, "se": se, "count": int(v.size)}
    return agg


def run_replicated(study: StudyConfig) -> StudyResult:
    """Run every scenario for ``study.replicates`` replicates.

    Replicates are independent and may run in ``study.jobs`` processes; the
    records are sorted afterwards so the output depends only on the config.
    A failing replicate raises :class:`ReplicateError` naming it.
    """
    t0 = time.perf_counter()
    tasks = [(study, i, r) for i in range(len(study.scenarios)) for r in range(study.replicates)]
    if study.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=study.jobs) as ex:
            results = list(ex.map(_call, tasks))
    else:
        results = [_call(t) for t in tasks]
    records = []
    for i, r, out, secs in sorted(results, key=lambda t: (t[0], t[1])):
        name = study.scenarios[i].name
        log.info("%s replicate %d: %.1f s", name, r, secs)
        for m in study.methods:
            for k, v in out[m].scalars().items():
                records.append({"scenario": name, "method": m, "replicate": r, "metric": k, "value": float(v)})
    return StudyResult(study, records, aggregate_records(records), time.perf_counter() - t0)
