import logging
import math
import re

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rtt.errors import CalibrationError, InvalidArgument
from rtt.fa import log_f_a_single
from rtt.gev import TailParams
from rtt.model import ThetaFull, YStar, log_joint_density_parts
from rtt.solver import (
    DEFAULT_LADDER,
    IsPool,
    LfdAtom,
    SwitchConstants,
    TestEvaluator,
    _ctx_for,
    _iterate_lfd,
    _PairDenom,
    _PoolCtx,
    _RpSweep,
    _SingleDenom,
    SolverTuning,
    build_proposal,
    calibrate_switching,
    critical_values,
    estimate_rp,
    evaluate_conditions,
    proposal_region,
    simulate_rp,
    solve_single_tail,
    smoke_build_config,
    build_table,
    switching_index,
    t_statistic,
)
from rtt.space import SpaceConfig
from rtt.table import TestTable

CFG = SpaceConfig(n0=50, k=4)


def _always(yr, yl, y0):
    return np.ones(np.shape(y0), dtype=bool)


def _never(yr, yl, y0):
    return np.zeros(np.shape(y0), dtype=bool)


def _t_gt_2(yr, yl, y0):
    return np.abs(t_statistic(yr, yl, y0)) > 2.0


@pytest.fixture(scope="module")
def pool():
    region = proposal_region(CFG, n_xi=5, n_kappa=3, per_cell=5, eta_decades=2.5)
    return build_proposal(CFG, region, size=30_000, K=8, seed=1)


class TestEstimateRp:
    def test_unit_test_with_matching_proposal(self):
        th = TailParams(2.0, 0.1, 0.1)
        p = build_proposal(CFG, [th], size=1500, K=4, seed=0)
        est = estimate_rp(_always, ThetaFull(th, th), p)
        assert_allclose(est.rp, 1.0, rtol=1e-10)

    def test_zero_test(self, pool):
        th = TailParams(3.0, 0.05, 0.0)
        est = estimate_rp(_never, ThetaFull(th, th), pool)
        assert est.rp == 0.0 and est.se == 0.0

    def test_matches_direct_simulation(self, pool):
        theta = ThetaFull(TailParams(3.0, 0.05, 0.0), TailParams(2.2, 0.08, 0.2))
        a = estimate_rp(_t_gt_2, theta, pool)
        b = simulate_rp(_t_gt_2, theta, 0.0, 4, 400_000, seed=7)
        assert abs(a.rp - b.rp) < 3.0 * math.hypot(a.se, b.se)

    def test_offset_reseeding_is_within_noise(self, pool):
        rng = np.random.default_rng(3)
        theta = ThetaFull(TailParams(2.8, 0.06, 0.1), TailParams(2.8, 0.06, 0.1))
        base = estimate_rp(_t_gt_2, theta, pool)
        alt_offsets = rng.choice(np.arange(1, pool.n), size=pool.K, replace=False)
        alt = estimate_rp(_t_gt_2, theta, pool, offsets=alt_offsets)
        assert abs(base.rp - alt.rp) < 3.0 * (base.se + alt.se)

    def test_degenerate_flag_for_uncovered_target(self):
        th = TailParams(2.0, 0.1, 0.1)
        p = build_proposal(CFG, [th], size=800, K=4, seed=0)
        # a scale far outside the proposal's support has zero weights
        far = TailParams(30.0, 1e4, -0.45)
        est = estimate_rp(_always, ThetaFull(far, far), p)
        assert est.degenerate

    def test_zero_offset_rejected(self, pool):
        th = TailParams(2.0, 0.1, 0.1)
        with pytest.raises(InvalidArgument):
            estimate_rp(_always, ThetaFull(th, th), pool, offsets=[0])


class TestPool:
    def test_invariants(self):
        with pytest.raises(InvalidArgument):
            IsPool(
                y_tail=np.zeros((5, 2)),
                y0e=np.zeros(5),
                proposal_logdens=np.zeros(5),
                K=5,
            )

    def test_proposal_covers_own_draws(self, pool):
        assert np.all(np.isfinite(pool.proposal_logdens))

    def test_effective_sample_size_at_grid_points(self, pool):
        ctx = _ctx_for(pool, 0.05)
        for th in pool.components[:: max(1, len(pool.components) // 12)]:
            w = ctx.weight(th, cache=False)
            ess = w.sum() ** 2 / (w * w).sum()
            assert ess >= 0.01 * pool.n

    def test_deterministic_given_seed(self):
        region = [TailParams(2.5, 0.05, 0.2), TailParams(3.0, 0.02, 0.0)]
        a = build_proposal(CFG, region, size=500, K=3, seed=9)
        b = build_proposal(CFG, region, size=500, K=3, seed=9)
        assert np.array_equal(a.y_tail, b.y_tail) and np.array_equal(a.y0e, b.y0e)


class TestSwitching:
    def test_index_definition(self):
        sw = SwitchConstants(0.1, 0.2)
        # ratio branch: Y1/Yk - 1 - rho_r
        got = switching_index(np.array([[2.0, 1.0]]), sw)
        assert_allclose(got, [min(2.0 - 0.1, 2.0 - 1.0 - 0.2)], rtol=1e-12)
        # small first component switches
        assert switching_index(np.array([[0.05, 0.01]]), sw) == 0.0
        # non-positive k-th component switches regardless of the ratio
        assert switching_index(np.array([[5.0, -1.0]]), sw) == 0.0

    def test_monotone_in_constants(self):
        rng = np.random.default_rng(0)
        y = np.sort(rng.exponential(size=(200, 3)), axis=1)[:, ::-1]
        small = switching_index(y, SwitchConstants(0.1, 0.1))
        large = switching_index(y, SwitchConstants(0.3, 0.3))
        assert np.all(large <= small + 1e-15)

    def test_huge_alpha_accepts_first_ladder_point(self, pool):
        sw = calibrate_switching(CFG, pool, alpha=0.5, seed=2)
        assert (sw.rho1, sw.rho_r) == DEFAULT_LADDER[0]

    def test_no_passing_ladder_point_raises(self, pool, monkeypatch):
        import rtt.solver as solver_mod
        from rtt.solver import RpEstimate

        def all_high(ctx, pairs):
            return [RpEstimate(rp=0.5, se=1e-6) for _ in pairs]

        monkeypatch.setattr(solver_mod, "_cond1_rp_pairs", all_high)
        with pytest.raises(CalibrationError, match="no ladder point"):
            calibrate_switching(CFG, pool, alpha=0.05, seed=2, ladder=((0.05, 0.05),))


def _stub_table(alpha=0.05, lam=1e-250, k=4):
    # near-zero weights make conditions 2-4 hold almost surely, so the
    # decision reduces to the condition-1 gate
    single = ((lam, 3.0, 0.05, 0.0),)
    full = ((lam, 3.0, 0.05, 0.0, 3.0, 0.05, 0.0),)
    return TestTable(
        k=k, n0=50, alpha=alpha, rho1=0.1, rho_r=0.1,
        single_atoms=single, full_atoms=full, xi_grid=tuple(np.linspace(-0.5, 0.5, 5)),
    )


class TestEvaluateConditions:
    def test_zero_observation_never_rejects(self):
        y = YStar(np.zeros(4), np.zeros(4), 0.0)
        atoms_s = [LfdAtom(TailParams(3.0, 0.05, 0.0), 1.0)]
        atoms_f = [LfdAtom(ThetaFull(TailParams(3.0, 0.05, 0.0), TailParams(3.0, 0.05, 0.0)), 1.0)]
        assert not evaluate_conditions(y, atoms_f, atoms_s, SwitchConstants(0.1, 0.1), 0.05)

    def test_blended_cv_at_zero_tails(self):
        cv_z, cv_t = critical_values(0.05)
        assert_allclose(cv_z, 1.959964, atol=1e-5)
        # w_cv = 1 at zero tails: the gate critical value is the normal one
        ev = TestEvaluator(_stub_table())
        t = 1.97
        y0 = t  # zero tails: T = y0
        assert ev.condition1(np.zeros((1, 4)), np.zeros((1, 4)), np.array([y0]))[0]
        assert not ev.condition1(np.zeros((1, 4)), np.zeros((1, 4)), np.array([1.9]))[0]

    def test_df_rule_uses_natural_log(self):
        _, cv_t = critical_values(0.05)
        from scipy import stats
        df = 80.0 + 10.0 * math.log(0.05)
        assert_allclose(cv_t, stats.t.ppf(0.975, df), rtol=1e-12)
        assert 49.0 < df < 51.0

    def test_chi_zero_below_rho1(self):
        sw = SwitchConstants(0.1, 0.1)
        assert switching_index(np.array([[0.05, 0.04, 0.03, 0.02]]), sw) == 0.0

    def test_soft_boost_at_least_one(self):
        rng = np.random.default_rng(1)
        y = np.sort(rng.exponential(size=(50, 4)), axis=1)[:, ::-1]
        chi = switching_index(y, SwitchConstants(0.2, 0.2))
        boost = np.exp(5.0 * chi)
        assert np.all(boost >= 1.0)
        assert np.all((boost == 1.0) == (chi == 0.0))

    def test_gate_is_hard(self):
        # with huge weights conditions 2-4 essentially never hold, and with
        # tiny weights they almost always do; the gate bounds both
        rng = np.random.default_rng(8)
        yr = np.sort(rng.exponential(size=(300, 4)), axis=1)[:, ::-1]
        yl = np.sort(rng.exponential(size=(300, 4)), axis=1)[:, ::-1]
        y0 = rng.standard_normal(300)
        loose = TestEvaluator(_stub_table(lam=1e-250))
        gate = loose.condition1(yr, yl, y0)
        dec = loose.decide_batch(yr, yl, y0)
        assert not np.any(dec & ~gate)

    def test_doubling_weights_shrinks_rejections(self):
        rng = np.random.default_rng(9)
        yr = np.sort(rng.exponential(size=(400, 4)), axis=1)[:, ::-1] * 2.0
        yl = np.sort(rng.exponential(size=(400, 4)), axis=1)[:, ::-1]
        y0 = rng.standard_normal(400) * 2.0
        base = _stub_table(lam=1e-3)
        doubled = TestTable(
            k=base.k, n0=base.n0, alpha=base.alpha, rho1=base.rho1, rho_r=base.rho_r,
            single_atoms=tuple((2 * r[0],) + r[1:] for r in base.single_atoms),
            full_atoms=tuple((2 * r[0],) + r[1:] for r in base.full_atoms),
            xi_grid=base.xi_grid,
        )
        d_base = TestEvaluator(base).decide_batch(yr, yl, y0)
        d_doub = TestEvaluator(doubled).decide_batch(yr, yl, y0)
        assert not np.any(d_doub & ~d_base)

    def test_mirror_symmetry_with_symmetric_atoms(self):
        rng = np.random.default_rng(10)
        a = TailParams(2.5, 0.08, 0.2)
        b = TailParams(3.0, 0.05, 0.0)
        table = TestTable(
            k=4, n0=50, alpha=0.05, rho1=0.1, rho_r=0.1,
            single_atoms=((0.01, *a.astuple()), (0.02, *b.astuple())),
            full_atoms=(
                (0.01, *a.astuple(), *b.astuple()),
                (0.01, *b.astuple(), *a.astuple()),
                (0.03, *b.astuple(), *b.astuple()),
            ),
            xi_grid=tuple(np.linspace(-0.5, 0.5, 9)),
        )
        ev = TestEvaluator(table)
        yr = np.sort(rng.exponential(size=(500, 4)), axis=1)[:, ::-1]
        yl = np.sort(rng.exponential(size=(500, 4)), axis=1)[:, ::-1]
        y0 = rng.standard_normal(500)
        fwd = ev.decide_batch(yr, yl, y0)
        rev = ev.decide_batch(yl, yr, -y0)
        assert np.array_equal(fwd, rev)


class TestNeymanPearsonOracle:
    def test_single_atom_reproduces_np_test(self):
        # Collapse the null to one theta; the fixed point of the iteration is
        # the likelihood-ratio test of f_a against f(.|theta, 0) at level
        # alpha.  Verified against direct simulation of the solved test.
        alpha = 0.05
        th = TailParams(2.5, 0.15, 0.2)
        theta = ThetaFull(th, th)
        region = [th, TailParams(2.5, 0.25, 0.2), TailParams(2.5, 0.08, 0.2)]
        p = build_proposal(CFG, region, size=30_000, K=8, seed=11)
        ctx = _PoolCtx(p, alpha, all_pairs=True)
        ctx.set_switch(SwitchConstants(0.1, 0.1))
        _ = ctx.entries
        pairs = [(th, th)]
        denom = _PairDenom(ctx, pairs, np.arange(ctx.entries))
        sweep = _RpSweep(ctx, [theta])
        lam, _ = _iterate_lfd(
            3, denom, sweep, np.zeros(1, dtype=int), alpha,
            SolverTuning(max_iter=120, min_iter=10, prescale_iter=30), 1,
        )
        lam_star = float(lam[0])

        xi_grid = ctx.xi_grid

        def np_test(yr, yl, y0):
            num = log_f_a_single(yr, xi_grid) + log_f_a_single(yl, xi_grid)
            den = math.log(lam_star) + log_joint_density_parts(yr, yl, y0, theta, 0.0)
            return num > den

        direct = simulate_rp(np_test, theta, 0.0, 4, 300_000, seed=12)
        # IS noise at this pool size dominates; allow a generous band
        assert abs(direct.rp - alpha) < 0.015


class TestSolveSingleTail:
    def test_smoke_solve_properties(self, pool, caplog):
        sw = SwitchConstants(0.1, 0.1)
        with caplog.at_level(logging.INFO, logger="rtt.solver"):
            atoms = solve_single_tail(
                CFG, 0.05, pool, sw,
                tuning=SolverTuning(max_iter=60, prescale_iter=14),
                fa_nodes=24,
            )
        assert atoms and all(a.weight > 0 for a in atoms)
        # documented progress format
        pat = re.compile(r"lfd stage=2 iter=\d+ max_rp=\d\.\d+ se=\d\.\d+ worst=\S+")
        lines = [r.getMessage() for r in caplog.records]
        assert any(pat.match(ln) for ln in lines)

    def test_fixed_point_band_at_convergence(self, pool):
        # fixed-point property: at convergence the binding check sits inside
        # [alpha - 3 se, alpha + 2 se] and no check exceeds the upper edge
        alpha = 0.05
        sw = SwitchConstants(0.1, 0.1)
        atoms = solve_single_tail(
            CFG, alpha, pool, sw,
            tuning=SolverTuning(max_iter=120, min_iter=25, prescale_iter=14),
            fa_nodes=24,
        )
        ctx = _ctx_for(pool, alpha)
        ctx.set_switch(sw)
        from rtt.solver import boundary_left_reps, heavy_single_candidates
        from rtt.space import contains

        lefts = boundary_left_reps(CFG, sw, seed=1)
        cands = heavy_single_candidates(CFG, sw, seed=0)
        params = [a.theta for a in atoms]
        lam = np.array([a.weight for a in atoms])
        denom = _SingleDenom(ctx, params)
        bits = (denom.denom(lam) < 1.0).astype(np.float32)
        checks = [
            ThetaFull(left=l, right=h)
            for h in cands
            for l in lefts
            if contains(ThetaFull(left=l, right=h), CFG)
        ]
        sweep = _RpSweep(ctx, checks)
        rp = sweep.rp(bits)
        i_star = int(np.argmax(rp))
        est = sweep.rp_se(bits, i_star)
        assert est.rp <= alpha + 2.0 * est.se + 1e-12
        assert est.rp >= alpha - 3.0 * est.se - 0.01


class TestSmokeBuild:
    def test_build_and_metadata(self):
        table = build_table(smoke_build_config(seed=3))
        assert table.k == 4 and table.alpha == 0.05
        meta = dict(table.build_metadata)
        assert int(meta["spot_points"]) > 20
        assert "spot_max_rp" in meta
        ev = TestEvaluator(table)
        assert not ev.decide(np.zeros(4), np.zeros(4), 0.0)
