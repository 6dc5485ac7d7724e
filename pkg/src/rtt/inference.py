"""Runtime inference: sample summaries, decisions, p-values, intervals.

A raw sample is reduced to the standardized statistic (both extreme blocks
plus the scaled middle sum) and evaluated against a stored test table.
P-values come from a nested family of tables over a level grid; confidence
intervals from test inversion on a deterministic grid refined by bisection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateSample,
    IntervalNotFound,
    InvalidArgument,
    SampleTooSmall,
)
from .model import YStar
from .solver import TestEvaluator, blended_cv, t_statistic
from .table import TestTable, read_table


@dataclass(frozen=True)
class SampleSummary:
    """Order-statistic blocks and middle moments of a (shifted) sample."""

    w_right: np.ndarray  # k largest, descending
    w_left_neg: np.ndarray  # k smallest, negated, descending
    middle_sum: float
    s2: float
    n: int

    @property
    def k(self) -> int:
        return self.w_right.size

    @property
    def denom(self) -> float:
        return math.sqrt((self.n - 2 * self.k) * self.s2)


def summarize(w, k: int, mu0: float = 0.0) -> SampleSummary:
    """Shift by the hypothesized mean, split off both k-tails, summarize."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise InvalidArgument("sample must be one-dimensional")
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("sample contains non-finite values")
    n = w.size
    if n < 2 * k + 2:
        raise SampleTooSmall(f"need at least {2 * k + 2} observations for k={k}, got {n}")
    v = np.sort(w - mu0)
    middle = v[k : n - k]
    s2 = float(middle.var(ddof=1))
    if s2 <= 0.0:
        raise DegenerateSample("middle observations are constant")
    return SampleSummary(
        w_right=v[n - k :][::-1].copy(),
        w_left_neg=-v[:k],
        middle_sum=float(middle.sum()),
        s2=s2,
        n=n,
    )


def to_ystar(s: SampleSummary) -> YStar:
    """Scale all blocks by the middle-sample standard deviation norm."""
    d = s.denom
    return YStar(y_right=s.w_right / d, y_left=s.w_left_neg / d, y0=s.middle_sum / d)


@lru_cache(maxsize=16)
def _evaluator(table: TestTable) -> TestEvaluator:
    return TestEvaluator(table)


@dataclass(frozen=True)
class Decision:
    reject: bool
    t_statistic: float
    critical_value: float
    alpha: float
    notes: tuple[str, ...] = ()


def _gate_values(y: YStar, ev: TestEvaluator) -> tuple[float, float]:
    t = float(t_statistic(y.y_right, y.y_left, y.y0))
    s2sum = float((y.y_right ** 2).sum() + (y.y_left ** 2).sum())
    cv = float(blended_cv(s2sum, ev.cv_z, ev.cv_t))
    return t, cv


def decide(w, mu0: float, table: TestTable) -> Decision:
    """Apply the stored test to H0: mean = mu0 for the given sample."""
    ev = _evaluator(table)
    s = summarize(w, table.k, mu0)
    notes = ()
    if s.n < table.n0:
        msg = f"sample size {s.n} is below the table's design horizon n0={table.n0}"
        warnings.warn(msg)
        notes = (msg,)
    y = to_ystar(s)
    t, cv = _gate_values(y, ev)
    reject = bool(ev.decide(y.y_right, y.y_left, y.y0))
    return Decision(reject=reject, t_statistic=t, critical_value=cv, alpha=table.alpha, notes=notes)


class TableSet:
    """Tables over a level grid, evaluated with nested rejection regions.

    The effective test at a grid level rejects only if every stored test at
    that level or above rejects, which makes p-values coherent with levels
    and confidence intervals nested across levels by construction.
    """

    def __init__(self, tables):
        tables = list(tables)
        if not tables:
            raise ConfigurationError("table set is empty")
        k0, n0 = tables[0].k, tables[0].n0
        for t in tables:
            if t.k != k0 or t.n0 != n0:
                raise ConfigurationError(
                    "tables in a set must share k and n0 "
                    f"(found k={t.k}, n0={t.n0} vs k={k0}, n0={n0})"
                )
        alphas = [t.alpha for t in tables]
        if len(set(alphas)) != len(alphas):
            raise ConfigurationError("duplicate levels in table set")
        self.tables = sorted(tables, key=lambda t: t.alpha)

    @classmethod
    def from_paths(cls, paths) -> "TableSet":
        return cls(read_table(p) for p in paths)

    @property
    def alphas(self) -> list[float]:
        return [t.alpha for t in self.tables]

    @property
    def k(self) -> int:
        return self.tables[0].k

    def table_at(self, alpha: float) -> TestTable:
        for t in self.tables:
            if abs(t.alpha - alpha) < 1e-12:
                return t
        raise ConfigurationError(f"no table at level alpha={alpha}")

    def raw_decisions(self, w, mu0: float) -> list[bool]:
        return [decide(w, mu0, t).reject for t in self.tables]

    def nested_reject(self, w, mu0: float, alpha: float) -> bool:
        """Reject at alpha only if all tests at levels >= alpha reject."""
        ok = False
        for t in self.tables:
            if t.alpha + 1e-12 >= alpha:
                ok = True
                if not decide(w, mu0, t).reject:
                    return False
        if not ok:
            raise ConfigurationError(f"no table at level >= {alpha}")
        return True


@dataclass(frozen=True)
class PValueResult:
    """Smallest grid level that rejects; ``exceeds_max`` if none does."""

    value: float
    exceeds_max: bool = False

    def __str__(self):
        return f"> {self.value:g}" if self.exceeds_max else f"{self.value:g}"

    def __float__(self):
        return self.value


def p_value(w, mu0: float, tables: TableSet) -> PValueResult:
    """Scan levels from the largest down while the tests keep rejecting."""
    if not isinstance(tables, TableSet):
        tables = TableSet(tables)
    smallest = None
    for t in sorted(tables.tables, key=lambda t: -t.alpha):
        if decide(w, mu0, t).reject:
            smallest = t.alpha
        else:
            break
    if smallest is None:
        return PValueResult(value=tables.alphas[-1], exceeds_max=True)
    return PValueResult(value=smallest)


CI_GRID_POINTS = 512
CI_SPAN_RANGES = 10.0
_BISECT_ITER = 80


def _decide_grid(w, mu0s: np.ndarray, table: TestTable, tables: TableSet | None, alpha: float) -> np.ndarray:
    """Vectorized decisions over a grid of hypothesized means.

    Shifting the hypothesized mean moves every block affinely, so a single
    summary at mu0 = 0 generates the whole family.
    """
    if tables is None:
        ev = _evaluator(table)
        s = summarize(w, table.k, 0.0)
        d = s.denom
        shift = np.asarray(mu0s, dtype=float) / d
        yr = s.w_right[None, :] / d - shift[:, None]
        yl = s.w_left_neg[None, :] / d + shift[:, None]
        y0 = s.middle_sum / d - (s.n - 2 * s.k) * shift
        return ev.decide_batch(yr, yl, y0)
    return np.array([tables.nested_reject(w, float(m), alpha) for m in mu0s])


def confidence_interval(w, level: float, table: TestTable | TableSet) -> tuple[float, float]:
    """Test inversion: hull of non-rejected means on a refined grid."""
    if not 0.0 < level < 1.0:
        raise InvalidArgument("confidence level must lie in (0, 1)")
    alpha = 1.0 - level
    tables = None
    if isinstance(table, TableSet):
        tables = table
        base = tables.table_at(min(tables.alphas, key=lambda a: abs(a - alpha)))
        if abs(base.alpha - alpha) > 1e-9:
            raise ConfigurationError(f"no table at level alpha={alpha}")
    else:
        base = table
        if abs(base.alpha - alpha) > 1e-9:
            raise ConfigurationError(
                f"table level alpha={base.alpha} does not match requested {alpha}"
            )
    w = np.asarray(w, dtype=float)
    center = float(w.mean())
    span = CI_SPAN_RANGES * float(np.ptp(w)) / math.sqrt(w.size)
    if span <= 0.0:
        raise DegenerateSample("sample has zero range")
    for widen in (1.0, 4.0):
        grid = np.linspace(center - widen * span, center + widen * span, CI_GRID_POINTS)
        reject = _decide_grid(w, grid, base, tables, alpha)
        accept = np.flatnonzero(~reject)
        if accept.size:
            break
    else:
        raise IntervalNotFound("every candidate mean was rejected on the widened grid")

    lo_idx, hi_idx = accept[0], accept[-1]

    def _refine(a_rej: float, b_acc: float) -> float:
        # invariant: a_rej rejected, b_acc accepted
        for _ in range(_BISECT_ITER):
            mid = 0.5 * (a_rej + b_acc)
            if mid == a_rej or mid == b_acc:
                break
            if _decide_grid(w, np.array([mid]), base, tables, alpha)[0]:
                a_rej = mid
            else:
                b_acc = mid
        return b_acc

    lo = grid[lo_idx] if lo_idx == 0 else _refine(grid[lo_idx - 1], grid[lo_idx])
    hi = grid[hi_idx] if hi_idx == grid.size - 1 else _refine(grid[hi_idx + 1], grid[hi_idx])
    return float(lo), float(hi)
