"""Numerical determination of the robust test and its runtime evaluator.

The composite test rejects only when four conditions hold simultaneously: a
blended-critical-value gate on the full-sample statistic, two single-tail
likelihood-ratio conditions (one per tail, each softened by the opposite
tail's switching index), and a two-tail likelihood-ratio condition.  The
construction proceeds in four stages over increasingly large parts of the
nuisance space:

1. choose switching constants so the gate alone controls size where both
   tails switch with 90% probability;
2. determine the single-tail atoms so gate+single-tail-condition controls
   size when one tail rides the switching boundary and the other is heavy;
3. determine the full atoms so the complete test controls size when both
   tails are heavy;
4. spot-check the final test over a wide grid plus random interior points.

Null rejection probabilities are estimated throughout by importance
sampling over a pool of "extended" single tails recombined pairwise.
Progress is logged one line per iteration on the ``rtt.solver`` logger as

    lfd stage=<n> iter=<i> max_rp=<float> se=<float> worst=<theta>

which is the documented plain-text diagnostic format.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import (
    CalibrationError,
    ConfigurationError,
    InvalidArgument,
    NonconvergenceError,
)
from .fa import DEFAULT_NODES, DEFAULT_XI_GRID, log_f_a_single
from .gev import TailParams, XI_ZERO_TOL, log_tail_density, sample_joint_tail
from .model import (
    ThetaFull,
    _m_star_raw,
    big_m_star,
    log_extended_density_parts,
    sample_ystar_block,
)
from .space import (
    SpaceConfig,
    contains,
    eta_max_d,
    kappa_max,
    kappa_min,
    single_tail_ok,
)

logger = logging.getLogger("rtt.solver")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_SQRT_PI = 0.5 * math.log(math.pi)

# Candidate switching constants, smallest first; stage 1 keeps the first pair
# for which the gate alone respects the level on the switching boundary.
DEFAULT_LADDER: tuple[tuple[float, float], ...] = (
    (0.05, 0.05),
    (0.10, 0.10),
    (0.15, 0.15),
    (0.20, 0.20),
    (0.25, 0.25),
    (0.30, 0.30),
    (0.40, 0.40),
    (0.50, 0.50),
    (0.70, 0.70),
    (1.00, 1.00),
    (1.50, 1.50),
)


@dataclass(frozen=True)
class SwitchConstants:
    """Thresholds of the switching index: absolute level and spread ratio."""

    rho1: float
    rho_r: float

    def __post_init__(self):
        if not (self.rho1 > 0.0 and self.rho_r > 0.0):
            raise InvalidArgument("switching constants must be positive")


@dataclass(frozen=True)
class LfdAtom:
    """One atom of an approximate least favorable distribution."""

    theta: TailParams | ThetaFull
    weight: float

    def __post_init__(self):
        if not self.weight > 0.0:
            raise InvalidArgument("atom weight must be positive")


@dataclass(frozen=True)
class RpEstimate:
    rp: float
    se: float
    degenerate: bool = False


@dataclass
class IsPool:
    """Importance-sampling pool of extended single tails."""

    y_tail: np.ndarray
    y0e: np.ndarray
    proposal_logdens: np.ndarray
    K: int
    components: tuple[TailParams, ...] = ()
    seed: int = 0

    def __post_init__(self):
        n = self.y_tail.shape[0]
        if n < 1:
            raise InvalidArgument("pool must contain at least one draw")
        if not 1 <= self.K < n:
            raise InvalidArgument("recombination count K must satisfy 1 <= K < N")
        if self.y0e.shape != (n,) or self.proposal_logdens.shape != (n,):
            raise InvalidArgument("pool arrays have inconsistent shapes")
        self._ctx_cache = {}

    @property
    def n(self) -> int:
        return self.y_tail.shape[0]

    @property
    def k(self) -> int:
        return self.y_tail.shape[1]


def fmt_tail(t: TailParams) -> str:
    return f"{t.kappa:.4g}:{t.eta:.4g}:{t.xi:.4g}"


def fmt_theta(theta) -> str:
    if isinstance(theta, ThetaFull):
        return fmt_tail(theta.left) + "|" + fmt_tail(theta.right)
    return fmt_tail(theta)


def critical_values(alpha: float) -> tuple[float, float]:
    """Two-sided normal and heavy-df student-t critical values.

    The student degrees of freedom follow 80 + 10 log(alpha) with the
    natural logarithm, floored at 2.
    """
    cv_z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    df = max(2.0, 80.0 + 10.0 * math.log(alpha))
    cv_t = float(stats.t.ppf(1.0 - alpha / 2.0, df))
    return cv_z, cv_t


def switching_index(y_tail, switch: SwitchConstants):
    """chi(Y) = max(0, min(Y1 - rho1, [Yk > 0](Y1/Yk - 1 - rho_r)))."""
    y = np.asarray(y_tail, dtype=float)
    y1 = y[..., 0]
    yk = y[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(yk > 0.0, y1 / np.where(yk > 0.0, yk, 1.0) - 1.0 - switch.rho_r, 0.0)
    return np.maximum(0.0, np.minimum(y1 - switch.rho1, ratio))


def t_statistic(y_right, y_left, y0):
    """Full-sample analogue statistic of the approximate model."""
    yr = np.asarray(y_right, dtype=float)
    yl = np.asarray(y_left, dtype=float)
    num = np.asarray(y0, dtype=float) + yr.sum(axis=-1) - yl.sum(axis=-1)
    den = np.sqrt(1.0 + (yr * yr).sum(axis=-1) + (yl * yl).sum(axis=-1))
    return num / den


def blended_cv(s2sum, cv_z: float, cv_t: float):
    """Critical value interpolating normal and student-t by tail weight."""
    w = 1.0 / (1.0 + np.asarray(s2sum, dtype=float))
    return w * cv_z + (1.0 - w) * cv_t


# ---------------------------------------------------------------------------
# proposal construction


def build_proposal(
    cfg: SpaceConfig,
    target_region: list[TailParams],
    size: int,
    K: int = 16,
    seed: int = 0,
) -> IsPool:
    """Draw extended tails from an equal-weight mixture over the region.

    The mixture density is recorded exactly per draw for reweighting, so the
    pool is a valid proposal for any parameter the mixture covers.
    """
    if not target_region:
        raise InvalidArgument("proposal target region must be nonempty")
    comps = tuple(target_region)
    m = len(comps)
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, m, size)
    y_tail = np.empty((size, cfg.k))
    y0e = np.empty(size)
    for c, th in enumerate(comps):
        idx = np.where(assign == c)[0]
        if idx.size == 0:
            continue
        x = sample_joint_tail(cfg.k, th.xi, rng, size=idx.size)
        z = rng.standard_normal(idx.size)
        y_tail[idx] = th.eta * (x + th.kappa)
        y0e[idx] = z / math.sqrt(2.0) - th.eta * _m_star_raw(x[:, -1], th.kappa, th.xi)
    logdens = np.empty(size)
    chunk = max(1, int(4e6 // m))
    for lo in range(0, size, chunk):
        sl = slice(lo, min(lo + chunk, size))
        mat = np.empty((sl.stop - sl.start, m))
        for c, th in enumerate(comps):
            mat[:, c] = log_extended_density_parts(y_tail[sl], y0e[sl], th)
        mx = mat.max(axis=1)
        logdens[sl] = mx + np.log(np.exp(mat - mx[:, None]).sum(axis=1)) - math.log(m)
    return IsPool(
        y_tail=y_tail,
        y0e=y0e,
        proposal_logdens=logdens,
        K=K,
        components=comps,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# pool context: derived statistics, tail caches, condition-1 pair index


class _PoolCtx:
    """Precomputed per-draw statistics and the gate-passing pair index."""

    def __init__(self, pool: IsPool, alpha: float, xi_grid=DEFAULT_XI_GRID, fa_nodes=DEFAULT_NODES, all_pairs: bool = False):
        self.pool = pool
        self.alpha = alpha
        self.all_pairs = all_pairs
        self.xi_grid = tuple(xi_grid)
        self.fa_nodes = fa_nodes
        y = pool.y_tail
        self.S1 = y.sum(axis=1)
        self.S2 = (y * y).sum(axis=1)
        self.tnum = pool.y0e + self.S1
        self.cv_z, self.cv_t = critical_values(alpha)
        self._tails: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._weights: dict[tuple, np.ndarray] = {}
        self._logfa = None
        self._mask_built = False
        self._chi = None
        self._switch = None

    # -- condition-1 entries -------------------------------------------------
    def _build_mask(self):
        pool = self.pool
        n, K = pool.n, pool.K
        idx = np.arange(n, dtype=np.int64)
        las, lbs = [], []
        for j in range(1, K + 1):
            jdx = (idx + j) % n
            tdiff = self.tnum - self.tnum[jdx]
            dsq = 1.0 + self.S2 + self.S2[jdx]
            cv = blended_cv(dsq - 1.0, self.cv_z, self.cv_t)
            if self.all_pairs:
                keep = np.ones(n, dtype=bool)
            else:
                keep = tdiff * tdiff > cv * cv * dsq
            las.append(idx[keep].astype(np.int32))
            lbs.append(jdx[keep].astype(np.int32))
        self.la = np.concatenate(las) if las else np.empty(0, np.int32)
        self.lb = np.concatenate(lbs) if lbs else np.empty(0, np.int32)
        # fixed per-entry pieces reused by every condition evaluation
        self.vA = 1.0 + self.S2[self.lb]  # thin-side variance for condition 2
        self.vB = 1.0 + self.S2[self.la]  # thin-side variance for condition 3
        self.y0e_la = self.pool.y0e[self.la]
        self.y0e_lb = self.pool.y0e[self.lb]
        self.tnum_la = self.tnum[self.la]
        self.tnum_lb = self.tnum[self.lb]
        self._mask_built = True

    @property
    def entries(self) -> int:
        if not self._mask_built:
            self._build_mask()
        return self.la.size

    @property
    def logfa(self) -> np.ndarray:
        if self._logfa is None:
            self._logfa = log_f_a_single(self.pool.y_tail, self.xi_grid, self.fa_nodes)
        return self._logfa

    def set_switch(self, switch: SwitchConstants):
        if self._switch != switch:
            self._switch = switch
            self._chi = switching_index(self.pool.y_tail, switch)

    @property
    def chi(self) -> np.ndarray:
        if self._chi is None:
            raise ConfigurationError("switching constants not set on pool context")
        return self._chi

    # -- per-parameter caches -------------------------------------------------
    def tail_arrays(self, t: TailParams, cache: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(log f_T, M*) of every pool draw under t, float32, NaN-free."""
        key = t.astuple()
        got = self._tails.get(key)
        if got is None:
            lf = log_tail_density(self.pool.y_tail, t)
            ok = np.isfinite(lf)
            ms = np.zeros(self.pool.n)
            if np.any(ok):
                ms[ok] = big_m_star(self.pool.y_tail[ok], t)
            got = (lf.astype(np.float32), ms.astype(np.float32))
            if cache:
                self._tails[key] = got
        return got

    def log_extended(self, t: TailParams, cache: bool = True) -> np.ndarray:
        lf, ms = self.tail_arrays(t, cache=cache)
        u = self.pool.y0e + ms.astype(float)
        return lf.astype(float) - u * u - _LOG_SQRT_PI

    def weight(self, t: TailParams, cache: bool = True) -> np.ndarray:
        key = t.astuple()
        got = self._weights.get(key)
        if got is None:
            with np.errstate(over="ignore"):
                got = np.exp(self.log_extended(t, cache=cache) - self.pool.proposal_logdens)
            if cache:
                self._weights[key] = got
        return got


def _ctx_for(pool: IsPool, alpha: float, xi_grid=DEFAULT_XI_GRID, fa_nodes=DEFAULT_NODES) -> _PoolCtx:
    key = (round(alpha, 12), tuple(xi_grid), fa_nodes)
    ctx = pool._ctx_cache.get(key)
    if ctx is None:
        ctx = _PoolCtx(pool, alpha, xi_grid, fa_nodes)
        pool._ctx_cache[key] = ctx
    return ctx


def _block_se_from_per_draw(r: np.ndarray, K: int) -> float:
    """Batch-means standard error of sum(r); blocks exceed the offset range."""
    n = r.size
    block = max(64, 4 * K)
    nb = n // block
    if nb < 2:
        return float(r.std() * math.sqrt(n))
    s = r[: nb * block].reshape(nb, block).sum(axis=1)
    scale = n / (nb * block)
    return float(s.std(ddof=1) * math.sqrt(nb) * scale)


# ---------------------------------------------------------------------------
# public importance-sampling estimator


def estimate_rp(test, theta: ThetaFull, pool: IsPool, offsets=None) -> RpEstimate:
    """Recombined importance-sampling estimate of the null rejection rate.

    ``test`` is a vectorized candidate test: called with (y_right (m, k),
    y_left (m, k), y0 (m,)) it returns a boolean array.  Each pool draw is
    recombined with K others (offsets wrap modulo N); the right-tail role is
    taken by the first index, whose extended coordinate enters positively.
    """
    n, K = pool.n, pool.K
    if offsets is None:
        offsets = range(1, K + 1)
    offsets = [int(j) % n for j in offsets]
    if any(j == 0 for j in offsets):
        raise InvalidArgument("recombination offsets must be nonzero modulo N")
    lf_r = log_extended_density_parts(pool.y_tail, pool.y0e, theta.right)
    lf_l = log_extended_density_parts(pool.y_tail, pool.y0e, theta.left)
    with np.errstate(over="ignore"):
        u = np.exp(lf_r - pool.proposal_logdens)
        v = np.exp(lf_l - pool.proposal_logdens)
    if not (np.any(u > 0.0) and np.any(v > 0.0)):
        return RpEstimate(rp=0.0, se=0.0, degenerate=True)
    acc = np.zeros(n)
    for j in offsets:
        yl = np.roll(pool.y_tail, -j, axis=0)
        y0 = pool.y0e - np.roll(pool.y0e, -j)
        bits = np.asarray(test(pool.y_tail, yl, y0), dtype=float)
        acc += bits * u * np.roll(v, -j)
    r = acc / (len(offsets) * n)
    return RpEstimate(rp=float(r.sum()), se=_block_se_from_per_draw(r, max(offsets)))


def simulate_rp(test, theta: ThetaFull, mu: float, k: int, n: int, seed: int = 0) -> RpEstimate:
    """Plain Monte Carlo rejection rate (the direct oracle for estimate_rp)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    chunk = 100_000
    done = 0
    hits = 0.0
    while done < n:
        m = min(chunk, n - done)
        yr, yl, y0 = sample_ystar_block(theta, mu, k, rng, m)
        hits += float(np.asarray(test(yr, yl, y0), dtype=float).sum())
        done += m
        total += m
    p = hits / total
    return RpEstimate(rp=p, se=math.sqrt(max(p * (1.0 - p), 1e-12) / total))


# ---------------------------------------------------------------------------
# stage 1: switching constants


def _switch_boundary_eta(kappa: float, x_draws: np.ndarray, switch: SwitchConstants, prob: float = 0.9):
    """Scale at which the switch probability equals ``prob``; None if the
    tail switches at least that often at every scale."""
    a1 = x_draws[:, 0] + kappa
    ak = x_draws[:, -1] + kappa
    always = (a1 <= 0.0) | (ak <= 0.0) | (a1 <= (1.0 + switch.rho_r) * ak)
    frac_always = always.mean()
    if frac_always >= prob:
        return None
    h = switch.rho1 / a1[~always]
    need = int(round((prob - frac_always) * x_draws.shape[0]))
    if need < 1:
        return None
    if need > h.size:
        need = h.size
    return float(np.sort(h)[-need])


def _cond1_rp_pairs(ctx: _PoolCtx, pairs: list[ThetaFull]) -> list[RpEstimate]:
    """RP of the gate-only test at each pair, with per-pair block SE."""
    n, K = ctx.pool.n, ctx.pool.K
    _ = ctx.entries
    out = []
    for theta in pairs:
        u = ctx.weight(theta.right, cache=False)
        v = ctx.weight(theta.left, cache=False)
        c = u[ctx.la] * v[ctx.lb] / (K * n)
        r = np.bincount(ctx.la, weights=c, minlength=n)
        out.append(RpEstimate(rp=float(c.sum()), se=_block_se_from_per_draw(r, K)))
    return out


def calibrate_switching(
    cfg: SpaceConfig,
    pool: IsPool,
    alpha: float,
    ladder=DEFAULT_LADDER,
    seed: int = 0,
    boundary_draws: int = 30_000,
    xi_cells=(-0.3, 0.0, 0.2, 0.4),
    kappa_offsets=(0.0, 2.0),
) -> SwitchConstants:
    """Stage 1: smallest ladder point whose gate-only test respects the level
    on the 90%-switching boundary manifold."""
    ctx = _ctx_for(pool, alpha)
    rng = np.random.default_rng(seed)
    draws = {xi: sample_joint_tail(cfg.k, xi, rng, size=boundary_draws) for xi in xi_cells}
    diagnostics = []
    for rho1, rho_r in ladder:
        switch = SwitchConstants(rho1, rho_r)
        singles = []
        for xi in xi_cells:
            k_lo, k_hi = kappa_min(xi, cfg), kappa_max(xi, cfg)
            for off in kappa_offsets:
                kappa = min(k_lo + off, k_hi)
                eta = _switch_boundary_eta(kappa, draws[xi], switch)
                if eta is None:
                    continue
                cand = TailParams(float(kappa), float(eta), float(xi))
                if single_tail_ok(cand, cfg):
                    singles.append(cand)
        pairs = [
            ThetaFull(left=a, right=b)
            for a in singles
            for b in singles
            if contains(ThetaFull(left=a, right=b), cfg)
        ]
        if not pairs:
            logger.info("lfd stage=1 ladder=(%g,%g) boundary empty; accepted", rho1, rho_r)
            return switch
        rps = _cond1_rp_pairs(ctx, pairs)
        worst = max(range(len(pairs)), key=lambda i: rps[i].rp)
        ok = all(r.rp <= alpha + 2.0 * r.se for r in rps)
        logger.info(
            "lfd stage=1 ladder=(%g,%g) max_rp=%.6f se=%.6f worst=%s ok=%d",
            rho1, rho_r, rps[worst].rp, rps[worst].se, fmt_theta(pairs[worst]), int(ok),
        )
        diagnostics.append((rho1, rho_r, rps[worst].rp, rps[worst].se, fmt_theta(pairs[worst])))
        if ok:
            return switch
    lines = "; ".join(f"rho=({a:g},{b:g}) max_rp={c:.4f} se={d:.4f} at {e}" for a, b, c, d, e in diagnostics)
    raise CalibrationError(f"no ladder point controls the gate-only size: {lines}")

# ---------------------------------------------------------------------------
# candidate grids


def heavy_single_candidates(
    cfg: SpaceConfig,
    switch: SwitchConstants,
    n_xi: int = 9,
    n_kappa: int = 5,
    n_eta: int = 4,
    seed: int = 0,
    boundary_draws: int = 30_000,
) -> list[TailParams]:
    """Single-tail grid over the non-switching part of the one-tail space."""
    rng = np.random.default_rng(seed)
    out = []
    for xi in np.linspace(-0.5, 0.499, n_xi):
        draws = sample_joint_tail(cfg.k, xi, rng, size=boundary_draws)
        k_lo, k_hi = kappa_min(xi, cfg), kappa_max(xi, cfg)
        for kappa in np.linspace(k_lo, k_hi, n_kappa):
            e_max = eta_max_d(kappa, xi, cfg)
            e_star = _switch_boundary_eta(kappa, draws, switch)
            if e_star is None:
                continue
            lo = max(e_star, e_max * 1e-3)
            if lo >= e_max:
                continue
            for eta in np.geomspace(lo, e_max, n_eta):
                cand = TailParams(float(kappa), float(eta), float(xi))
                if single_tail_ok(cand, cfg):
                    out.append(cand)
    return out


def boundary_left_reps(
    cfg: SpaceConfig,
    switch: SwitchConstants,
    xi_cells=(-0.3, 0.0, 0.2, 0.4),
    kappa_offsets=(0.0, 2.0),
    eta_factors=(1.0, 0.3),
    seed: int = 1,
    boundary_draws: int = 30_000,
) -> list[TailParams]:
    """Thin-side representatives on (and just inside) the switching boundary."""
    rng = np.random.default_rng(seed)
    out = []
    for xi in xi_cells:
        draws = sample_joint_tail(cfg.k, xi, rng, size=boundary_draws)
        k_lo, k_hi = kappa_min(xi, cfg), kappa_max(xi, cfg)
        for off in kappa_offsets:
            kappa = min(k_lo + off, k_hi)
            e_star = _switch_boundary_eta(kappa, draws, switch)
            if e_star is None:
                continue
            e_max = eta_max_d(kappa, xi, cfg)
            for fac in eta_factors:
                eta = min(max(e_star * fac, e_max * 2e-3), e_max)
                cand = TailParams(float(kappa), float(eta), float(xi))
                if single_tail_ok(cand, cfg):
                    out.append(cand)
    return out


def proposal_region(
    cfg: SpaceConfig,
    n_xi: int = 9,
    n_kappa: int = 5,
    per_cell: int = 8,
    eta_decades: float = 3.0,
) -> list[TailParams]:
    """Mixture components spanning each cell's scale range for the pool."""
    out = []
    for xi in np.linspace(-0.5, 0.499, n_xi):
        k_lo, k_hi = kappa_min(xi, cfg), kappa_max(xi, cfg)
        for kappa in np.linspace(k_lo, k_hi, n_kappa):
            e_max = eta_max_d(kappa, xi, cfg)
            for eta in e_max * np.geomspace(10.0 ** (-eta_decades), 1.0, per_cell):
                cand = TailParams(float(kappa), float(eta), float(xi))
                if single_tail_ok(cand, cfg):
                    out.append(cand)
    return out


# ---------------------------------------------------------------------------
# shared LFD iteration


@dataclass(frozen=True)
class SolverTuning:
    """Iteration schedule of the multiplicative weight updates."""

    step_c: float = 5.0
    margin_se: float = 0.5
    max_iter: int = 200
    min_iter: int = 3
    prune_rel: float = 1e-12
    max_log_step: float = 0.7
    prescale_iter: int = 24


_EXP_CAP = 50.0  # cap on per-atom log terms; beyond it the mixture dominates 1


class _DenomBase:
    """Per-entry mixture denominators, already shifted by the numerator."""

    def denom(self, lam: np.ndarray, sub=None) -> np.ndarray:
        raise NotImplementedError


class _SingleDenom(_DenomBase):
    """Shifted denominator of the single-tail condition (heavy right)."""

    def __init__(self, ctx: _PoolCtx, atoms: list[TailParams]):
        self.ctx = ctx
        self.atoms = atoms
        _ = ctx.entries
        self.shift = ctx.logfa[ctx.la] + 5.0 * ctx.chi[ctx.lb]
        self.base = ctx.y0e_la - ctx.tnum_lb
        self.log_va = np.log(ctx.vA)

    def denom(self, lam, sub=None):
        ctx = self.ctx
        la = ctx.la if sub is None else ctx.la[sub]
        base = self.base if sub is None else self.base[sub]
        va = ctx.vA if sub is None else ctx.vA[sub]
        logva = self.log_va if sub is None else self.log_va[sub]
        shift = self.shift if sub is None else self.shift[sub]
        out = np.zeros(la.size)
        for lam_i, t in zip(lam, self.atoms):
            if lam_i <= 0.0:
                continue
            lf, ms = ctx.tail_arrays(t)
            u = base + ms[la]
            term = (
                lf[la].astype(float)
                - 0.5 * u * u / va
                - 0.5 * logva
                - _LOG_SQRT_2PI
                - shift
            )
            np.add(out, lam_i * np.exp(np.minimum(term, _EXP_CAP)), out=out)
        return out


class _SingleDenomSwapped(_DenomBase):
    """Same condition with the roles of the two blocks exchanged."""

    def __init__(self, ctx: _PoolCtx, atoms: list[TailParams]):
        self.ctx = ctx
        self.atoms = atoms
        _ = ctx.entries
        self.shift = ctx.logfa[ctx.lb] + 5.0 * ctx.chi[ctx.la]
        self.base = ctx.y0e_lb - ctx.tnum_la
        self.log_vb = np.log(ctx.vB)

    def denom(self, lam, sub=None):
        ctx = self.ctx
        lb = ctx.lb if sub is None else ctx.lb[sub]
        base = self.base if sub is None else self.base[sub]
        vb = ctx.vB if sub is None else ctx.vB[sub]
        logvb = self.log_vb if sub is None else self.log_vb[sub]
        shift = self.shift if sub is None else self.shift[sub]
        out = np.zeros(lb.size)
        for lam_i, t in zip(lam, self.atoms):
            if lam_i <= 0.0:
                continue
            lf, ms = ctx.tail_arrays(t)
            u = base + ms[lb]
            term = (
                lf[lb].astype(float)
                - 0.5 * u * u / vb
                - 0.5 * logvb
                - _LOG_SQRT_2PI
                - shift
            )
            np.add(out, lam_i * np.exp(np.minimum(term, _EXP_CAP)), out=out)
        return out


class _PairDenom(_DenomBase):
    """Shifted denominator of the two-tail condition; atoms are unordered
    pairs contributing both orderings with half weight each."""

    def __init__(self, ctx: _PoolCtx, atom_pairs: list[tuple[TailParams, TailParams]], sub: np.ndarray):
        self.ctx = ctx
        self.pairs = atom_pairs
        self.sub = sub
        _ = ctx.entries
        self.la = ctx.la[sub]
        self.lb = ctx.lb[sub]
        self.shift = ctx.logfa[self.la] + ctx.logfa[self.lb]
        self.y0e_la = ctx.pool.y0e[self.la]
        self.y0e_lb = ctx.pool.y0e[self.lb]

    def _ordered_term(self, left: TailParams, right: TailParams):
        ctx = self.ctx
        lf_r, ms_r = ctx.tail_arrays(right)
        lf_l, ms_l = ctx.tail_arrays(left)
        u = (self.y0e_la + ms_r[self.la].astype(float)) - (self.y0e_lb + ms_l[self.lb].astype(float))
        return (
            lf_r[self.la].astype(float)
            + lf_l[self.lb].astype(float)
            - 0.5 * u * u
            - _LOG_SQRT_2PI
            - self.shift
        )

    def denom(self, lam, sub=None):
        out = np.zeros(self.la.size)
        for lam_i, (a, b) in zip(lam, self.pairs):
            if lam_i <= 0.0:
                continue
            t1 = self._ordered_term(a, b)
            if a.astuple() == b.astuple():
                np.add(out, lam_i * np.exp(np.minimum(t1, _EXP_CAP)), out=out)
            else:
                t2 = self._ordered_term(b, a)
                np.add(out, 0.5 * lam_i * np.exp(np.minimum(t1, _EXP_CAP)), out=out)
                np.add(out, 0.5 * lam_i * np.exp(np.minimum(t2, _EXP_CAP)), out=out)
        return out


class _RpSweep:
    """RP of a bit vector at many check points over the ctx entry index."""

    def __init__(self, ctx: _PoolCtx, checks: list[ThetaFull], sub=None, cache_budget=4e8):
        self.ctx = ctx
        self.checks = checks
        self.la = ctx.la if sub is None else ctx.la[sub]
        self.lb = ctx.lb if sub is None else ctx.lb[sub]
        self.scale = 1.0 / (ctx.pool.K * ctx.pool.n)
        uniq_r = {th.right.astuple(): th.right for th in checks}
        uniq_l = {th.left.astuple(): th.left for th in checks}
        budget = (len(uniq_r) + len(uniq_l)) * self.la.size * 4
        self._cache_gathers = budget <= cache_budget
        self._ug: dict[tuple, np.ndarray] = {}
        self._vg: dict[tuple, np.ndarray] = {}

    def _u_at(self, t: TailParams) -> np.ndarray:
        key = t.astuple()
        got = self._ug.get(key)
        if got is None:
            got = self.ctx.weight(t)[self.la].astype(np.float32)
            if self._cache_gathers:
                self._ug[key] = got
        return got

    def _v_at(self, t: TailParams) -> np.ndarray:
        key = t.astuple()
        got = self._vg.get(key)
        if got is None:
            got = self.ctx.weight(t)[self.lb].astype(np.float32)
            if self._cache_gathers:
                self._vg[key] = got
        return got

    def rp(self, bits: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.checks))
        for i, th in enumerate(self.checks):
            w = bits * self._u_at(th.right)
            out[i] = float(w @ self._v_at(th.left)) * self.scale
        return out

    def rp_se(self, bits: np.ndarray, i: int) -> RpEstimate:
        th = self.checks[i]
        c = bits * self._u_at(th.right).astype(float) * self._v_at(th.left).astype(float) * self.scale
        r = np.bincount(self.la, weights=c, minlength=self.ctx.pool.n)
        return RpEstimate(rp=float(c.sum()), se=_block_se_from_per_draw(r, self.ctx.pool.K))


def _iterate_lfd(
    stage: int,
    denom: _DenomBase,
    sweep: _RpSweep,
    atom_of_check: np.ndarray,
    alpha: float,
    tuning: SolverTuning,
    n_atoms: int,
) -> tuple[np.ndarray, dict]:
    """Multiplicative-weights fixed point: binding checks pushed to level alpha."""
    lam = np.full(n_atoms, 1.0 / n_atoms)

    def bits_of(scale_lam):
        return (denom.denom(scale_lam) < 1.0).astype(np.float32)

    # bracket a global scale so the worst check starts near the level
    lo, hi = -30.0, 30.0
    for _ in range(tuning.prescale_iter):
        mid = 0.5 * (lo + hi)
        worst = sweep.rp(bits_of(lam * math.exp(mid))).max(initial=0.0)
        if worst > alpha:
            lo = mid
        else:
            hi = mid
    lam *= math.exp(hi)

    history = []
    converged = False
    worst_report = []
    for it in range(1, tuning.max_iter + 1):
        bits = bits_of(lam)
        rp = sweep.rp(bits)
        i_worst = int(np.argmax(rp))
        est = sweep.rp_se(bits, i_worst)
        logger.info(
            "lfd stage=%d iter=%d max_rp=%.6f se=%.6f worst=%s",
            stage, it, est.rp, est.se, fmt_theta(sweep.checks[i_worst]),
        )
        history.append((it, est.rp, est.se))
        if it >= tuning.min_iter and est.rp <= alpha + 2.0 * est.se:
            over = [i for i in np.flatnonzero(rp > alpha) if i != i_worst]
            fine = True
            for i in over:
                ei = sweep.rp_se(bits, i)
                if ei.rp > alpha + 2.0 * ei.se:
                    fine = False
                    break
            if fine:
                converged = True
                break
        # worst violation per atom across its checks; slack atoms decay at a
        # quarter of the violation rate to keep the fixed point from cycling
        v = np.full(n_atoms, -np.inf)
        np.maximum.at(v, atom_of_check, rp)
        v[~np.isfinite(v)] = 0.0
        raw = tuning.step_c * (v - alpha)
        step = np.where(raw >= 0.0, raw, 0.25 * raw)
        step = np.clip(step, -0.5 * tuning.max_log_step, tuning.max_log_step)
        lam *= np.exp(step)
    if not converged:
        bits = bits_of(lam)
        rp = sweep.rp(bits)
        order = np.argsort(rp)[::-1][:5]
        worst_report = [(fmt_theta(sweep.checks[i]), float(rp[i])) for i in order]
        raise NonconvergenceError(
            f"stage {stage} hit the iteration cap with max RP {rp.max():.4f} > {alpha}",
            worst=worst_report,
        )
    return lam, {"iterations": history, "converged": converged}

# ---------------------------------------------------------------------------
# stages 2 and 3


def solve_single_tail(
    cfg: SpaceConfig,
    alpha: float,
    pool: IsPool,
    switch: SwitchConstants,
    candidates: list[TailParams] | None = None,
    left_boundary: list[TailParams] | None = None,
    tuning: SolverTuning = SolverTuning(),
    xi_grid=DEFAULT_XI_GRID,
    fa_nodes: int = DEFAULT_NODES,
    seed: int = 0,
) -> list[LfdAtom]:
    """Stage 2: single-tail atoms so that gate+condition-2 respects the level
    for pairs (thin boundary left, heavy right) inside the null space."""
    ctx = _ctx_for(pool, alpha, xi_grid, fa_nodes)
    ctx.set_switch(switch)
    if candidates is None:
        candidates = heavy_single_candidates(cfg, switch, seed=seed)
    if left_boundary is None:
        left_boundary = boundary_left_reps(cfg, switch, seed=seed + 1)
    if not candidates:
        raise ConfigurationError("no heavy single-tail candidates; switching absorbs the space")
    if not left_boundary:
        raise ConfigurationError("no boundary representatives for the thin tail")
    checks, atom_of_check = [], []
    for i, cand in enumerate(candidates):
        for left in left_boundary:
            theta = ThetaFull(left=left, right=cand)
            if contains(theta, cfg):
                checks.append(theta)
                atom_of_check.append(i)
    if not checks:
        raise ConfigurationError("no admissible (boundary, heavy) pairs to check")
    denom = _SingleDenom(ctx, candidates)
    sweep = _RpSweep(ctx, checks)
    lam, _ = _iterate_lfd(
        2, denom, sweep, np.asarray(atom_of_check), alpha, tuning, len(candidates)
    )
    keep = lam > tuning.prune_rel * lam.max()
    return [
        LfdAtom(theta=t, weight=float(w))
        for t, w, kp in zip(candidates, lam, keep)
        if kp
    ]


def _single_rows(atoms: list[LfdAtom]):
    return tuple(
        (a.weight, a.theta.kappa, a.theta.eta, a.theta.xi) for a in atoms
    )


def _full_rows(atoms: list[LfdAtom]):
    out = []
    for a in atoms:
        th = a.theta
        out.append(
            (a.weight, th.left.kappa, th.left.eta, th.left.xi, th.right.kappa, th.right.eta, th.right.xi)
        )
    return tuple(out)


def _single_condition_bits(ctx: _PoolCtx, single_atoms: list[LfdAtom]):
    """Conditions 2 and 3 of the stored single-tail test at every entry."""
    params = [a.theta for a in single_atoms]
    lam = np.array([a.weight for a in single_atoms])
    bits2 = _SingleDenom(ctx, params).denom(lam) < 1.0
    bits3 = _SingleDenomSwapped(ctx, params).denom(lam) < 1.0
    return bits2 & bits3


def solve_two_tail(
    cfg: SpaceConfig,
    alpha: float,
    pool: IsPool,
    single_atoms: list[LfdAtom],
    switch: SwitchConstants,
    pair_pool: list[TailParams] | None = None,
    max_pairs: int = 420,
    tuning: SolverTuning = SolverTuning(),
    xi_grid=DEFAULT_XI_GRID,
    fa_nodes: int = DEFAULT_NODES,
    seed: int = 0,
) -> list[LfdAtom]:
    """Stage 3: full atoms so the complete four-condition test respects the
    level on heavy/heavy pairs.  Atoms are kept mirror-symmetric: each
    unordered pair contributes both orderings with half its weight."""
    ctx = _ctx_for(pool, alpha, xi_grid, fa_nodes)
    ctx.set_switch(switch)
    if pair_pool is None:
        pair_pool = heavy_single_candidates(cfg, switch, seed=seed)
    if not pair_pool:
        raise ConfigurationError("no heavy single-tail candidates for pairing")
    diag = []
    offdiag = []
    for i, a in enumerate(pair_pool):
        if contains(ThetaFull(left=a, right=a), cfg):
            diag.append((a, a))
        for b in pair_pool[i + 1 :]:
            if contains(ThetaFull(left=a, right=b), cfg):
                offdiag.append((a, b))
    rng = np.random.default_rng(seed)
    room = max(0, max_pairs - len(diag))
    if len(offdiag) > room:
        pick = rng.choice(len(offdiag), size=room, replace=False)
        offdiag = [offdiag[int(i)] for i in np.sort(pick)]
    pairs = diag + offdiag
    if not pairs:
        raise ConfigurationError("no admissible heavy/heavy pairs")
    gate = _single_condition_bits(ctx, single_atoms)
    sub = np.flatnonzero(gate)
    checks = [ThetaFull(left=a, right=b) for a, b in pairs]
    denom = _PairDenom(ctx, pairs, sub)
    sweep = _RpSweep(ctx, checks, sub=sub)
    lam, _ = _iterate_lfd(
        3, denom, sweep, np.arange(len(pairs)), alpha, tuning, len(pairs)
    )
    keep = lam > tuning.prune_rel * lam.max()
    atoms = []
    for (a, b), w, kp in zip(pairs, lam, keep):
        if not kp:
            continue
        if a.astuple() == b.astuple():
            atoms.append(LfdAtom(theta=ThetaFull(left=a, right=b), weight=float(w)))
        else:
            atoms.append(LfdAtom(theta=ThetaFull(left=a, right=b), weight=float(w / 2.0)))
            atoms.append(LfdAtom(theta=ThetaFull(left=b, right=a), weight=float(w / 2.0)))
    return atoms

# ---------------------------------------------------------------------------
# runtime evaluation of a stored test


def _big_m_star_grid(y_k: np.ndarray, kappa: np.ndarray, eta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """M*(y, theta_a) for y_k (m,) against parameter vectors (a,); entries
    outside the support are zero-filled (masked by the -inf tail density)."""
    x = y_k[:, None] / eta[None, :] - kappa[None, :]
    xib = xi[None, :]
    near0 = (np.abs(xi) < XI_ZERO_TOL)[None, :]
    t = 1.0 + xib * x
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        gen = np.exp(-np.log(np.where(t > 0.0, t, 1.0)) / np.where(near0, 1.0, xib)) * (
            kappa[None, :] + (x + 1.0) / (1.0 - xib)
        )
        gmb = np.exp(-x) * (kappa[None, :] + x + 1.0)
    out = np.where(near0, gmb, gen)
    out = np.where(near0 | (t > 0.0), out, 0.0)
    return eta[None, :] * out


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(over="ignore"):
        s = np.exp(a - safe[:, None]).sum(axis=1)
    out = safe + np.log(s)
    out[~np.isfinite(mx)] = -np.inf
    return out


class TestEvaluator:
    """Vectorized evaluation of a stored composite test on standardized data."""

    __test__ = False  # not a pytest class

    def __init__(self, table, fa_nodes: int = DEFAULT_NODES):
        from .gev import log_tail_density_multi  # local alias for hot loop

        self._ltdm = log_tail_density_multi
        self.table = table
        self.k = table.k
        self.alpha = table.alpha
        self.switch = SwitchConstants(table.rho1, table.rho_r)
        self.xi_grid = tuple(table.xi_grid)
        self.fa_nodes = fa_nodes
        self.cv_z, self.cv_t = critical_values(table.alpha)
        s = np.asarray(table.single_atoms, dtype=float).reshape(-1, 4)
        self.s_loglam = np.log(s[:, 0])
        self.s_kap, self.s_eta, self.s_xi = s[:, 1], s[:, 2], s[:, 3]
        f = np.asarray(table.full_atoms, dtype=float).reshape(-1, 7)
        self.f_loglam = np.log(f[:, 0])
        self.fl_kap, self.fl_eta, self.fl_xi = f[:, 1], f[:, 2], f[:, 3]
        self.fr_kap, self.fr_eta, self.fr_xi = f[:, 4], f[:, 5], f[:, 6]

    def _single_mixture(self, heavy: np.ndarray, thin: np.ndarray, y0: np.ndarray) -> np.ndarray:
        lft = self._ltdm(heavy, self.s_kap, self.s_eta, self.s_xi)
        ms = _big_m_star_grid(heavy[:, -1], self.s_kap, self.s_eta, self.s_xi)
        y0t = y0 - thin.sum(axis=1)
        vt = 1.0 + (thin * thin).sum(axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            u = y0t[:, None] + ms
            logn = -0.5 * u * u / vt[:, None] - 0.5 * np.log(vt)[:, None] - _LOG_SQRT_2PI
            logf = np.where(np.isfinite(lft) & np.isfinite(logn), lft + logn, -np.inf)
        return _logsumexp_rows(self.s_loglam[None, :] + logf)

    def _full_mixture(self, yr: np.ndarray, yl: np.ndarray, y0: np.ndarray) -> np.ndarray:
        lfr = self._ltdm(yr, self.fr_kap, self.fr_eta, self.fr_xi)
        lfl = self._ltdm(yl, self.fl_kap, self.fl_eta, self.fl_xi)
        msr = _big_m_star_grid(yr[:, -1], self.fr_kap, self.fr_eta, self.fr_xi)
        msl = _big_m_star_grid(yl[:, -1], self.fl_kap, self.fl_eta, self.fl_xi)
        with np.errstate(over="ignore", invalid="ignore"):
            u = y0[:, None] + msr - msl
            logn = -0.5 * u * u - _LOG_SQRT_2PI
            ok = np.isfinite(lfr) & np.isfinite(lfl) & np.isfinite(logn)
            logf = np.where(ok, lfr + lfl + logn, -np.inf)
        return _logsumexp_rows(self.f_loglam[None, :] + logf)

    def condition1(self, y_right, y_left, y0):
        t = t_statistic(y_right, y_left, y0)
        yr = np.atleast_2d(np.asarray(y_right, dtype=float))
        yl = np.atleast_2d(np.asarray(y_left, dtype=float))
        s2sum = (yr * yr).sum(axis=1) + (yl * yl).sum(axis=1)
        cv = blended_cv(s2sum, self.cv_z, self.cv_t)
        return np.abs(t) > cv

    def decide_batch(self, y_right, y_left, y0) -> np.ndarray:
        yr = np.atleast_2d(np.asarray(y_right, dtype=float))
        yl = np.atleast_2d(np.asarray(y_left, dtype=float))
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        out = np.zeros(y0.shape, dtype=bool)
        c1 = np.atleast_1d(self.condition1(yr, yl, y0))
        idx = np.flatnonzero(c1)
        if idx.size == 0:
            return out
        yrs, yls, y0s = yr[idx], yl[idx], y0[idx]
        logfa_r = np.atleast_1d(log_f_a_single(yrs, self.xi_grid, self.fa_nodes))
        logfa_l = np.atleast_1d(log_f_a_single(yls, self.xi_grid, self.fa_nodes))
        chi_r = np.atleast_1d(switching_index(yrs, self.switch))
        chi_l = np.atleast_1d(switching_index(yls, self.switch))
        c2 = 5.0 * chi_l + logfa_r > self._single_mixture(yrs, yls, y0s)
        c3 = 5.0 * chi_r + logfa_l > self._single_mixture(yls, yrs, -y0s)
        c4 = logfa_r + logfa_l > self._full_mixture(yrs, yls, y0s)
        out[idx] = c2 & c3 & c4
        return out

    def decide(self, y_right, y_left, y0: float) -> bool:
        return bool(self.decide_batch(y_right, y_left, [y0])[0])


def evaluate_conditions(
    y,
    atoms_full: list[LfdAtom],
    atoms_single: list[LfdAtom],
    switch: SwitchConstants,
    alpha: float,
    xi_grid=DEFAULT_XI_GRID,
    fa_nodes: int = DEFAULT_NODES,
) -> bool:
    """Single-observation evaluation of the four rejection conditions."""
    from .table import TestTable

    if not atoms_full or not atoms_single:
        raise InvalidArgument("both atom lists must be nonempty")
    table = TestTable(
        k=len(np.atleast_1d(y.y_right)),
        n0=2 * len(np.atleast_1d(y.y_right)) + 2,
        alpha=alpha,
        rho1=switch.rho1,
        rho_r=switch.rho_r,
        single_atoms=_single_rows(atoms_single),
        full_atoms=_full_rows(atoms_full),
        xi_grid=tuple(xi_grid),
    )
    ev = TestEvaluator(table, fa_nodes=fa_nodes)
    return ev.decide(y.y_right, y.y_left, y.y0)


# ---------------------------------------------------------------------------
# stage 4 spot check


def _table_entry_bits(ctx: _PoolCtx, table) -> np.ndarray:
    """Composite-test bits at the gate-passing pool entries for a table."""
    ctx.set_switch(SwitchConstants(table.rho1, table.rho_r))
    s_atoms = [LfdAtom(theta=TailParams(r[1], r[2], r[3]), weight=r[0]) for r in table.single_atoms]
    gate = _single_condition_bits(ctx, s_atoms)
    sub = np.flatnonzero(gate)
    la, lb = ctx.la[sub], ctx.lb[sub]
    shift = ctx.logfa[la] + ctx.logfa[lb]
    y0e_la, y0e_lb = ctx.pool.y0e[la], ctx.pool.y0e[lb]
    acc = np.zeros(sub.size)
    for row in table.full_atoms:
        lam = row[0]
        tl = TailParams(row[1], row[2], row[3])
        tr = TailParams(row[4], row[5], row[6])
        lf_r, ms_r = ctx.tail_arrays(tr)
        lf_l, ms_l = ctx.tail_arrays(tl)
        u = (y0e_la + ms_r[la].astype(float)) - (y0e_lb + ms_l[lb].astype(float))
        term = (
            lf_r[la].astype(float)
            + lf_l[lb].astype(float)
            - 0.5 * u * u
            - _LOG_SQRT_2PI
            - shift
        )
        np.add(acc, lam * np.exp(np.minimum(term, _EXP_CAP)), out=acc)
    bits = np.zeros(ctx.entries, dtype=np.float32)
    bits[sub[acc < 1.0]] = 1.0
    return bits


def spot_check(table, pool: IsPool, thetas: list[ThetaFull], fa_nodes: int = DEFAULT_NODES) -> list[RpEstimate]:
    """Estimated null rejection rate of the stored test at each point."""
    ctx = _ctx_for(pool, table.alpha, table.xi_grid, fa_nodes)
    bits = _table_entry_bits(ctx, table)
    n, K = pool.n, pool.K
    out = []
    for theta in thetas:
        u = ctx.weight(theta.right, cache=False)
        v = ctx.weight(theta.left, cache=False)
        c = bits * u[ctx.la] * v[ctx.lb] / (K * n)
        r = np.bincount(ctx.la, weights=c, minlength=n)
        out.append(RpEstimate(rp=float(c.sum()), se=_block_se_from_per_draw(r, K)))
    return out

# ---------------------------------------------------------------------------
# end-to-end build


@dataclass(frozen=True)
class BuildConfig:
    """All knobs of the four-stage construction; everything is recorded in
    the resulting table's metadata."""

    k: int = 4
    n0: int = 50
    alpha: float = 0.05
    n_draws: int = 200_000
    recombine: int = 16
    seed: int = 0
    xi_grid: tuple[float, ...] = DEFAULT_XI_GRID
    fa_nodes: int = DEFAULT_NODES
    n_xi: int = 9
    n_kappa: int = 5
    n_eta: int = 4
    proposal_per_cell: int = 8
    eta_decades: float = 3.0
    ladder: tuple[tuple[float, float], ...] = DEFAULT_LADDER
    tuning: SolverTuning = field(default_factory=SolverTuning)
    max_pairs: int = 420
    spot_boundary_resolution: int = 3
    spot_interior: int = 200
    spot_slack: float = 0.005


def smoke_build_config(**overrides) -> BuildConfig:
    """Small, fast configuration for tests and demos (not a production table)."""
    base = dict(
        n_draws=20_000,
        recombine=8,
        n_xi=5,
        n_kappa=3,
        n_eta=2,
        proposal_per_cell=5,
        eta_decades=2.5,
        fa_nodes=24,
        tuning=SolverTuning(max_iter=80, prescale_iter=18),
        max_pairs=60,
        spot_boundary_resolution=2,
        spot_interior=25,
        spot_slack=0.02,
    )
    base.update(overrides)
    return BuildConfig(**base)


def build_table(config: BuildConfig):
    """Run the four-stage construction and return a serializable table."""
    from .space import boundary_grid, sample_interior
    from .table import TestTable

    cfg = SpaceConfig(n0=config.n0, k=config.k)
    switch = calibrate_switching_direct(
        cfg, config.alpha, ladder=config.ladder, seed=config.seed + 1
    )
    candidates = heavy_single_candidates(
        cfg, switch, config.n_xi, config.n_kappa, config.n_eta, seed=config.seed + 2
    )
    lefts = boundary_left_reps(cfg, switch, seed=config.seed + 3)
    # the proposal covers the whole space and, exactly, every candidate atom
    # and boundary representative, which bounds the importance weights at
    # all the points the solver iterates over
    region = proposal_region(
        cfg, config.n_xi, config.n_kappa, config.proposal_per_cell, config.eta_decades
    )
    seen = {t.astuple() for t in region}
    for extra in candidates + lefts:
        if extra.astuple() not in seen:
            region.append(extra)
            seen.add(extra.astuple())
    logger.info("lfd stage=0 proposal components=%d draws=%d", len(region), config.n_draws)
    pool = build_proposal(cfg, region, config.n_draws, config.recombine, seed=config.seed)
    atoms_s = solve_single_tail(
        cfg,
        config.alpha,
        pool,
        switch,
        candidates=candidates,
        left_boundary=lefts,
        tuning=config.tuning,
        xi_grid=config.xi_grid,
        fa_nodes=config.fa_nodes,
    )
    atoms_f = solve_two_tail(
        cfg,
        config.alpha,
        pool,
        atoms_s,
        switch,
        pair_pool=candidates,
        max_pairs=config.max_pairs,
        tuning=config.tuning,
        xi_grid=config.xi_grid,
        fa_nodes=config.fa_nodes,
        seed=config.seed + 4,
    )
    meta = [
        ("format", "1"),
        ("seed", str(config.seed)),
        ("n_draws", str(config.n_draws)),
        ("recombine", str(config.recombine)),
        ("step_c", repr(config.tuning.step_c)),
        ("margin_se", repr(config.tuning.margin_se)),
        ("max_iter", str(config.tuning.max_iter)),
        ("fa_nodes", str(config.fa_nodes)),
        ("grid", f"{config.n_xi}x{config.n_kappa}x{config.n_eta}"),
    ]
    table = TestTable(
        k=config.k,
        n0=config.n0,
        alpha=config.alpha,
        rho1=switch.rho1,
        rho_r=switch.rho_r,
        single_atoms=_single_rows(atoms_s),
        full_atoms=_full_rows(atoms_f),
        xi_grid=tuple(config.xi_grid),
        build_metadata=tuple(meta),
    )
    # stage 4: wide spot check
    points = boundary_grid(cfg, config.spot_boundary_resolution)
    points += sample_interior(cfg, config.spot_interior, np.random.default_rng(config.seed + 5))
    rps = spot_check(table, pool, points, fa_nodes=config.fa_nodes)
    worst = max(range(len(points)), key=lambda i: rps[i].rp - 2.0 * rps[i].se)
    n_bad = sum(
        1 for r in rps if r.rp > config.alpha + 2.0 * r.se + config.spot_slack
    )
    logger.info(
        "lfd stage=4 points=%d max_rp=%.6f se=%.6f worst=%s violations=%d",
        len(points), rps[worst].rp, rps[worst].se, fmt_theta(points[worst]), n_bad,
    )
    if n_bad:
        import warnings

        warnings.warn(
            f"stage-4 spot check found {n_bad} points above "
            f"alpha + 2 se + {config.spot_slack}; worst at {fmt_theta(points[worst])}"
        )
    meta += [
        ("spot_points", str(len(points))),
        ("spot_max_rp", f"{rps[worst].rp:.6f}"),
        ("spot_max_rp_se", f"{rps[worst].se:.6f}"),
        ("spot_violations", str(n_bad)),
    ]
    return TestTable(
        k=table.k,
        n0=table.n0,
        alpha=table.alpha,
        rho1=table.rho1,
        rho_r=table.rho_r,
        single_atoms=table.single_atoms,
        full_atoms=table.full_atoms,
        xi_grid=table.xi_grid,
        build_metadata=tuple(meta),
    )

# ---------------------------------------------------------------------------
# direct-simulation stage 1 (used by the builder so the proposal can include
# the switching-dependent grids)


def _direct_gate_rp(theta: ThetaFull, alpha: float, k: int, n: int, seed: int) -> RpEstimate:
    cv_z, cv_t = critical_values(alpha)

    def gate(yr, yl, y0):
        s2sum = (yr * yr).sum(axis=1) + (yl * yl).sum(axis=1)
        cv = blended_cv(s2sum, cv_z, cv_t)
        return np.abs(t_statistic(yr, yl, y0)) > cv

    return simulate_rp(gate, theta, 0.0, k, n, seed=seed)


def calibrate_switching_direct(
    cfg: SpaceConfig,
    alpha: float,
    ladder=DEFAULT_LADDER,
    seed: int = 0,
    boundary_draws: int = 30_000,
    rp_draws: int = 20_000,
    xi_cells=(-0.3, 0.0, 0.2, 0.4),
    kappa_offsets=(0.0, 2.0),
) -> SwitchConstants:
    """Stage 1 by plain Monte Carlo; needs no importance-sampling pool.

    The gate statistic is cheap to simulate, so the boundary sweep can be
    done directly, which lets the pool built afterwards cover the
    switching-dependent candidate grids exactly.
    """
    rng = np.random.default_rng(seed)
    draws = {xi: sample_joint_tail(cfg.k, xi, rng, size=boundary_draws) for xi in xi_cells}
    diagnostics = []
    for rho1, rho_r in ladder:
        switch = SwitchConstants(rho1, rho_r)
        singles = []
        for xi in xi_cells:
            k_lo, k_hi = kappa_min(xi, cfg), kappa_max(xi, cfg)
            for off in kappa_offsets:
                kappa = min(k_lo + off, k_hi)
                eta = _switch_boundary_eta(kappa, draws[xi], switch)
                if eta is None:
                    continue
                cand = TailParams(float(kappa), float(eta), float(xi))
                if single_tail_ok(cand, cfg):
                    singles.append(cand)
        pairs = [
            ThetaFull(left=a, right=b)
            for a in singles
            for b in singles
            if contains(ThetaFull(left=a, right=b), cfg)
        ]
        if not pairs:
            logger.info("lfd stage=1 ladder=(%g,%g) boundary empty; accepted", rho1, rho_r)
            return switch
        worst = RpEstimate(rp=-1.0, se=0.0)
        worst_pair = pairs[0]
        ok = True
        for i, pair in enumerate(pairs):
            est = _direct_gate_rp(pair, alpha, cfg.k, rp_draws, seed=seed + 17 * i + 1)
            if est.rp > worst.rp:
                worst, worst_pair = est, pair
            if est.rp > alpha + 2.0 * est.se:
                ok = False
        logger.info(
            "lfd stage=1 ladder=(%g,%g) max_rp=%.6f se=%.6f worst=%s ok=%d",
            rho1, rho_r, worst.rp, worst.se, fmt_theta(worst_pair), int(ok),
        )
        diagnostics.append((rho1, rho_r, worst.rp, worst.se, fmt_theta(worst_pair)))
        if ok:
            return switch
    lines = "; ".join(
        f"rho=({a:g},{b:g}) max_rp={c:.4f} se={d:.4f} at {e}" for a, b, c, d, e in diagnostics
    )
    raise CalibrationError(f"no ladder point controls the gate-only size: {lines}")
