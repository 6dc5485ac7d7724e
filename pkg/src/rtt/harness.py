"""Monte Carlo harness: comparator tests, experiment runner, reporting.

Reproduces the size/length experiment designs at desk scale: inference for
the mean, difference of two means, and a clustered regression with a
heterogeneous within-cluster component.  Rejection rates carry binomial
standard errors; confidence interval lengths are reported relative to the
infeasible size-corrected t benchmark whose critical value is calibrated by
simulation.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .adapters import ClusteredDataset, cluster_robust_t, clustered_ols_w, two_sample_w
from .errors import ConfigurationError, DegenerateSample, InvalidArgument
from .inference import confidence_interval, decide
from .populations import Population, make_population
from .table import TestTable

CLUSTER_SIZE = 10
N_CONTROLS = 5


@dataclass(frozen=True)
class TestOutcome:
    reject: bool
    ci_low: float = math.nan
    ci_high: float = math.nan

    @property
    def ci_length(self) -> float:
        return self.ci_high - self.ci_low


def t_test(w, mu0: float, alpha: float, with_ci: bool = True) -> TestOutcome:
    """Plain t test with student-t critical value at n-1 degrees of freedom."""
    w = np.asarray(w, dtype=float)
    n = w.size
    s = w.std(ddof=1)
    if s <= 0.0:
        raise DegenerateSample("constant sample")
    se = s / math.sqrt(n)
    cv = float(stats.t.ppf(1.0 - alpha / 2.0, n - 1))
    mean = float(w.mean())
    reject = abs((mean - mu0) / se) > cv
    if not with_ci:
        return TestOutcome(reject)
    return TestOutcome(reject, mean - cv * se, mean + cv * se)


_MAX_REDRAWS = 100


def _bootstrap_t_draws(w: np.ndarray, B: int, rng: np.random.Generator) -> np.ndarray:
    """Studentized statistics of bootstrap resamples, recentered at the
    sample mean (resampling the demeaned empirical distribution)."""
    n = w.size
    mean = w.mean()
    t_star = np.empty(B)
    pending = np.arange(B)
    for _ in range(_MAX_REDRAWS):
        idx = rng.integers(0, n, size=(pending.size, n))
        res = w[idx]
        m = res.mean(axis=1)
        s = res.std(axis=1, ddof=1)
        ok = s > 0.0
        t_star[pending[ok]] = (m[ok] - mean) / (s[ok] / math.sqrt(n))
        pending = pending[~ok]
        if pending.size == 0:
            return t_star
    raise DegenerateSample(f"{pending.size} bootstrap resamples stayed degenerate")


def boot_sym(w, mu0: float, alpha: float, B: int = 999, rng=None, with_ci: bool = True) -> TestOutcome:
    """Percentile-t bootstrap on the absolute studentized statistic."""
    if B < 99:
        raise InvalidArgument("bootstrap needs at least 99 replicates")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    w = np.asarray(w, dtype=float)
    n = w.size
    s = w.std(ddof=1)
    if s <= 0.0:
        raise DegenerateSample("constant sample")
    t_star = _bootstrap_t_draws(w, B, rng)
    q = float(np.quantile(np.abs(t_star), 1.0 - alpha))
    se = s / math.sqrt(n)
    mean = float(w.mean())
    reject = abs((mean - mu0) / se) > q
    if not with_ci:
        return TestOutcome(reject)
    return TestOutcome(reject, mean - q * se, mean + q * se)


def boot_asym(w, mu0: float, alpha: float, B: int = 999, rng=None, with_ci: bool = True) -> TestOutcome:
    """Percentile-t bootstrap with equal-tail signed quantiles."""
    if B < 99:
        raise InvalidArgument("bootstrap needs at least 99 replicates")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    w = np.asarray(w, dtype=float)
    n = w.size
    s = w.std(ddof=1)
    if s <= 0.0:
        raise DegenerateSample("constant sample")
    t_star = _bootstrap_t_draws(w, B, rng)
    q_lo = float(np.quantile(t_star, alpha / 2.0))
    q_hi = float(np.quantile(t_star, 1.0 - alpha / 2.0))
    se = s / math.sqrt(n)
    mean = float(w.mean())
    t_obs = (mean - mu0) / se
    reject = t_obs < q_lo or t_obs > q_hi
    if not with_ci:
        return TestOutcome(reject)
    return TestOutcome(reject, mean - q_hi * se, mean - q_lo * se)


def wild_cluster_boot(
    dataset: ClusteredDataset,
    beta0: float,
    alpha: float,
    B: int = 999,
    rng=None,
    with_ci: bool = True,
) -> TestOutcome:
    """Wild cluster bootstrap imposing the null, Rademacher weights.

    The observed CR0 statistic is compared against bootstrap quantiles of the
    null-restricted resampled statistics; the interval uses the bootstrap
    critical value around the unrestricted estimate.
    """
    if B < 99:
        raise InvalidArgument("bootstrap needs at least 99 replicates")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    y = np.asarray(dataset.y, dtype=float)
    x = np.asarray(dataset.x, dtype=float)
    z = np.asarray(dataset.controls, dtype=float)
    labels = np.asarray(dataset.clusters)
    uniq, inv = np.unique(labels, return_inverse=True)
    n_cl = uniq.size
    # null-restricted fit
    gamma, _, _, _ = np.linalg.lstsq(z, y - beta0 * x, rcond=None)
    u_tilde = y - beta0 * x - z @ gamma
    base = z @ gamma + beta0 * x
    design = np.column_stack([x, z])
    pinv = np.linalg.pinv(design)
    x_til = x - np.linalg.qr(z)[0] @ (np.linalg.qr(z)[0].T @ x)
    denom = float(x_til @ x_til)
    cmat = np.zeros((n_cl, y.size))
    cmat[inv, np.arange(y.size)] = 1.0

    signs = np.where(rng.random((n_cl, B)) < 0.5, -1.0, 1.0)
    y_star = base[:, None] + u_tilde[:, None] * signs[inv]
    coefs = pinv @ y_star
    resid = y_star - design @ coefs
    h = cmat @ (x_til[:, None] * resid)
    se_star = np.sqrt((h * h).sum(axis=0)) / denom
    t_star = (coefs[0] - beta0) / se_star

    t_obs = cluster_robust_t(dataset, beta0)
    q = float(np.quantile(np.abs(t_star), 1.0 - alpha))
    reject = abs(t_obs) > q
    if not with_ci:
        return TestOutcome(reject)
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    h_obs = cmat @ (x_til * (y - design @ coef))
    se_obs = math.sqrt(float(h_obs @ h_obs)) / denom
    beta_hat = float(coef[0])
    return TestOutcome(reject, beta_hat - q * se_obs, beta_hat + q * se_obs)


# ---------------------------------------------------------------------------
# experiment designs


ADAPTERS = ("mean", "two_sample", "cluster_ols")
METHODS = ("t_test", "sym_boot", "asym_boot", "wild_cluster", "new")


@dataclass(frozen=True)
class ExperimentDesign:
    population: str
    adapter: str = "mean"
    n: int = 50
    replications: int = 1000
    alpha: float = 0.05
    methods: tuple[str, ...] = ("t_test",)
    seed: int = 0
    table: TestTable | None = None
    compute_ci: bool = True
    bootstrap_b: int = 999
    calibration_reps: int = 100_000

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidArgument("need at least one replication")
        if self.adapter not in ADAPTERS:
            raise InvalidArgument(f"unknown adapter {self.adapter!r}; known: {ADAPTERS}")
        if self.adapter == "two_sample" and self.n % 2:
            raise InvalidArgument("two-sample designs need an even total sample size")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidArgument(f"unknown method {m!r}; known: {METHODS}")
        if "wild_cluster" in self.methods and self.adapter != "cluster_ols":
            raise InvalidArgument("wild_cluster applies only to the cluster_ols adapter")
        if "new" in self.methods and self.table is None:
            raise InvalidArgument("method 'new' needs a test table")


def _generate(design: ExperimentDesign, pop: Population, rng: np.random.Generator):
    """One replication's effective observations (plus the raw dataset when
    the design is a clustered regression)."""
    if design.adapter == "mean":
        return pop.draw(rng, design.n), None
    if design.adapter == "two_sample":
        half = design.n // 2
        nu = pop.draw(rng, half)
        w1 = nu + math.sqrt(0.1) * rng.standard_normal(half)
        w2 = math.sqrt(0.1) * rng.standard_normal(half)
        return two_sample_w(w1, w2), None
    n_cl = design.n
    t_i = CLUSTER_SIZE
    n_obs = n_cl * t_i
    x = rng.standard_normal(n_obs)
    z = np.column_stack([np.ones(n_obs), rng.standard_normal((n_obs, N_CONTROLS))])
    nu = pop.draw(rng, n_cl)
    labels = np.repeat(np.arange(n_cl), t_i)
    u = nu[labels] * x + rng.standard_normal(n_obs)
    dataset = ClusteredDataset(y=u, x=x, controls=z, clusters=labels)
    return clustered_ols_w(dataset), dataset


def _plain_t_stat(w: np.ndarray) -> float:
    return float(w.mean() / (w.std(ddof=1) / math.sqrt(w.size)))


def size_corrected_benchmark(design: ExperimentDesign) -> float:
    """Critical value making the plain t test exactly level-alpha by
    simulation under the design (the infeasible benchmark)."""
    pop = make_population(design.population)
    stats_ = np.empty(design.calibration_reps)
    for r in range(design.calibration_reps):
        rng = np.random.default_rng([design.seed, 10 ** 6 + r])
        eff, _ = _generate(design, pop, rng)
        stats_[r] = _plain_t_stat(eff)
    return float(np.quantile(np.abs(stats_), 1.0 - design.alpha))


@dataclass
class Report:
    design: ExperimentDesign
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, destination) -> None:
        close = False
        if isinstance(destination, (str, os.PathLike)):
            fh = open(destination, "w", newline="", encoding="utf-8")
            close = True
        else:
            fh = destination
        try:
            writer = csv.DictWriter(
                fh,
                fieldnames=["method", "population", "n", "reject_rate", "se", "rel_ci_length"],
            )
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)
        finally:
            if close:
                fh.close()

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def rate(self, method: str) -> float:
        for row in self.rows:
            if row["method"] == method:
                return row["reject_rate"]
        raise KeyError(method)

    def rel_length(self, method: str) -> float:
        for row in self.rows:
            if row["method"] == method:
                return row["rel_ci_length"]
        raise KeyError(method)


def run_experiment(design: ExperimentDesign) -> Report:
    """Null rejection rates and relative interval lengths for each method.

    Deterministic given the design seed: every replication derives its own
    stream from (seed, replication index), so results do not depend on
    execution order.
    """
    pop = make_population(design.population)
    mu0 = 0.0
    rejects = {m: np.zeros(design.replications, dtype=bool) for m in design.methods}
    lengths = {m: np.full(design.replications, np.nan) for m in design.methods}
    bench = np.full(design.replications, np.nan)
    cv_star = size_corrected_benchmark(design) if design.compute_ci else math.nan

    for r in range(design.replications):
        rng = np.random.default_rng([design.seed, r])
        eff, dataset = _generate(design, pop, rng)
        if design.compute_ci:
            bench[r] = 2.0 * cv_star * eff.std(ddof=1) / math.sqrt(eff.size)
        for m in design.methods:
            if m == "t_test":
                out = t_test(eff, mu0, design.alpha, with_ci=design.compute_ci)
            elif m == "sym_boot":
                out = boot_sym(eff, mu0, design.alpha, design.bootstrap_b, rng, design.compute_ci)
            elif m == "asym_boot":
                out = boot_asym(eff, mu0, design.alpha, design.bootstrap_b, rng, design.compute_ci)
            elif m == "wild_cluster":
                out = wild_cluster_boot(
                    dataset, mu0, design.alpha, design.bootstrap_b, rng, design.compute_ci
                )
            else:
                dec = decide(eff, mu0, design.table)
                if design.compute_ci:
                    lo, hi = confidence_interval(eff, 1.0 - design.alpha, design.table)
                    out = TestOutcome(dec.reject, lo, hi)
                else:
                    out = TestOutcome(dec.reject)
            rejects[m][r] = out.reject
            if design.compute_ci:
                lengths[m][r] = out.ci_length

    report = Report(design=design)
    bench_mean = float(np.nanmean(bench)) if design.compute_ci else math.nan
    for m in design.methods:
        rate = float(rejects[m].mean())
        se = math.sqrt(max(rate * (1.0 - rate), 1e-12) / design.replications)
        rel = float(np.nanmean(lengths[m]) / bench_mean) if design.compute_ci else math.nan
        report.rows.append(
            {
                "method": m,
                "population": pop.name,
                "n": design.n,
                "reject_rate": rate,
                "se": se,
                "rel_ci_length": rel,
            }
        )
    return report


# ---------------------------------------------------------------------------
# plain-text design files


def parse_design_config(text: str, table_loader=None) -> ExperimentDesign:
    """Parse the key=value design format (# starts a comment).

    Keys: population, adapter, n, reps, alpha, methods (comma-separated),
    seed, table (path, optional), ci (true/false), bootstrap_b,
    calibration_reps.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigurationError(f"design line {lineno}: expected key = value")
        values[key.strip().lower()] = val.strip()
    if "population" not in values:
        raise ConfigurationError("design file must set 'population'")
    table = None
    if "table" in values and values["table"]:
        if table_loader is None:
            from .table import read_table as table_loader
        table = table_loader(values["table"])
    methods = tuple(
        m.strip() for m in values.get("methods", "t_test").split(",") if m.strip()
    )
    return ExperimentDesign(
        population=values["population"],
        adapter=values.get("adapter", "mean"),
        n=int(values.get("n", "50")),
        replications=int(values.get("reps", "1000")),
        alpha=float(values.get("alpha", "0.05")),
        methods=methods,
        seed=int(values.get("seed", "0")),
        table=table,
        compute_ci=values.get("ci", "true").strip().lower() in ("1", "true", "yes"),
        bootstrap_b=int(values.get("bootstrap_b", "999")),
        calibration_reps=int(values.get("calibration_reps", "100000")),
    )
