import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rtt.adapters import ClusteredDataset
from rtt.errors import ConfigurationError, DegenerateSample, InvalidArgument
from rtt.harness import (
    ExperimentDesign,
    boot_asym,
    boot_sym,
    parse_design_config,
    run_experiment,
    size_corrected_benchmark,
    t_test,
    wild_cluster_boot,
    _generate,
)
from rtt.populations import make_population, population_names


class TestPopulations:
    @pytest.mark.parametrize("name", population_names())
    def test_standardization(self, name):
        # analytic normalization confirmed on ten million draws
        pop = make_population(name)
        rng = np.random.default_rng(42)
        x = pop.draw(rng, 10_000_000)
        se_mean = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean()) < 4.0 * se_mean
        v = x ** 2
        se_var = v.std(ddof=1) / math.sqrt(v.size)
        assert abs(v.mean() - 1.0) < 4.0 * se_var

    def test_lognormal_constants(self):
        pop = make_population("LogN")
        assert_allclose(pop.shift, math.exp(0.5), rtol=1e-12)
        assert_allclose(pop.scale, math.sqrt(math.exp(2) - math.exp(1)), rtol=1e-12)

    def test_pareto_constants(self):
        pop = make_population("P(0.4)")
        assert_allclose(pop.shift, 5.0 / 3.0, rtol=1e-12)
        assert_allclose(pop.scale ** 2, 20.0 / 9.0, rtol=1e-12)

    def test_aliases_and_unknown(self):
        assert make_population("logn").name == "LogN"
        with pytest.raises(InvalidArgument):
            make_population("cauchy")


class TestComparators:
    def test_t_test_size_on_normal(self):
        rng = np.random.default_rng(0)
        hits = sum(
            t_test(rng.standard_normal(50), 0.0, 0.05, with_ci=False).reject
            for _ in range(2000)
        )
        rate = hits / 2000
        assert abs(rate - 0.05) < 0.02

    def test_t_test_ci_covers_mean(self):
        out = t_test(np.arange(10.0), 4.5, 0.05)
        assert not out.reject
        assert out.ci_low < 4.5 < out.ci_high

    def test_constant_sample_errors(self):
        with pytest.raises(DegenerateSample):
            t_test(np.ones(20), 0.0, 0.05)
        with pytest.raises(DegenerateSample):
            boot_sym(np.ones(20), 0.0, 0.05, B=99, rng=0)

    def test_boot_requires_replicates(self):
        with pytest.raises(InvalidArgument):
            boot_sym(np.arange(10.0), 0.0, 0.05, B=10, rng=0)

    def test_boot_deterministic_given_rng(self):
        w = np.random.default_rng(1).standard_normal(40)
        a = boot_sym(w, 0.0, 0.05, B=199, rng=np.random.default_rng(5))
        b = boot_sym(w, 0.0, 0.05, B=199, rng=np.random.default_rng(5))
        assert a == b

    def test_asym_interval_is_equal_tail(self):
        w = np.random.default_rng(2).lognormal(size=60)
        out = boot_asym(w, 0.0, 0.1, B=999, rng=np.random.default_rng(3))
        assert out.ci_low < out.ci_high

    def test_wild_cluster_boot_runs(self):
        rng = np.random.default_rng(4)
        n_cl, t_i = 30, 6
        labels = np.repeat(np.arange(n_cl), t_i)
        x = rng.standard_normal(n_cl * t_i)
        z = np.column_stack([np.ones(n_cl * t_i), rng.standard_normal((n_cl * t_i, 2))])
        nu = rng.standard_normal(n_cl)
        y = 0.0 * x + nu[labels] * x + rng.standard_normal(n_cl * t_i)
        d = ClusteredDataset(y=y, x=x, controls=z, clusters=labels)
        out = wild_cluster_boot(d, 0.0, 0.05, B=199, rng=np.random.default_rng(6))
        assert out.ci_low < out.ci_high
        # imposing an absurd null must reject
        far = wild_cluster_boot(d, 50.0, 0.05, B=199, rng=np.random.default_rng(7))
        assert far.reject


class TestDesigns:
    def test_cluster_design_recovers_beta(self):
        # the within-cluster heteroskedastic design keeps the coefficient
        # identified: OLS on one large draw recovers beta = 0
        design = ExperimentDesign(population="LogN", adapter="cluster_ols", n=400,
                                  replications=1, methods=("t_test",), seed=3,
                                  compute_ci=False)
        pop = make_population("LogN")
        eff, dataset = _generate(design, pop, np.random.default_rng(11))
        assert dataset is not None and eff.size == 400
        beta_hat = eff.mean()
        se = eff.std(ddof=1) / math.sqrt(eff.size)
        assert abs(beta_hat) < 4.0 * se

    def test_two_sample_design_centered(self):
        design = ExperimentDesign(population="LogN", adapter="two_sample", n=600,
                                  replications=1, methods=("t_test",), seed=3,
                                  compute_ci=False)
        pop = make_population("LogN")
        eff, _ = _generate(design, pop, np.random.default_rng(12))
        assert eff.size == 600
        se = eff.std(ddof=1) / math.sqrt(eff.size)
        assert abs(eff.mean()) < 4.0 * se

    def test_validation(self):
        with pytest.raises(InvalidArgument):
            ExperimentDesign(population="LogN", adapter="two_sample", n=51)
        with pytest.raises(InvalidArgument):
            ExperimentDesign(population="LogN", methods=("wild_cluster",))
        with pytest.raises(InvalidArgument):
            ExperimentDesign(population="LogN", methods=("new",))
        with pytest.raises(InvalidArgument):
            ExperimentDesign(population="LogN", methods=("bogus",))


class TestRunExperiment:
    def test_deterministic_given_seed(self):
        design = ExperimentDesign(
            population="LogN", n=40, replications=60, methods=("t_test", "sym_boot"),
            seed=7, compute_ci=False, bootstrap_b=99,
        )
        a = run_experiment(design).csv_text()
        b = run_experiment(design).csv_text()
        assert a == b

    def test_binomial_standard_errors(self):
        design = ExperimentDesign(
            population="LogN", n=40, replications=50, methods=("t_test",),
            seed=8, compute_ci=False,
        )
        row = run_experiment(design).rows[0]
        p = row["reject_rate"]
        assert_allclose(row["se"], math.sqrt(max(p * (1 - p), 1e-12) / 50), rtol=1e-9)

    def test_t_test_relative_length_near_one_on_normal(self):
        design = ExperimentDesign(
            population="N(0,1)", n=50, replications=400, methods=("t_test",),
            seed=9, compute_ci=True, calibration_reps=20_000,
        )
        report = run_experiment(design)
        assert abs(report.rel_length("t_test") - 1.0) < 0.05

    def test_benchmark_critical_value_near_t_quantile_for_normal(self):
        from scipy import stats

        design = ExperimentDesign(
            population="N(0,1)", n=50, replications=1, methods=("t_test",),
            seed=10, calibration_reps=40_000,
        )
        cv = size_corrected_benchmark(design)
        assert abs(cv - stats.t.ppf(0.975, 49)) < 0.06

    def test_report_csv_shape(self):
        design = ExperimentDesign(
            population="Mix1", n=30, replications=25, methods=("t_test", "asym_boot"),
            seed=11, compute_ci=False, bootstrap_b=99,
        )
        text = run_experiment(design).csv_text()
        lines = text.strip().splitlines()
        assert lines[0] == "method,population,n,reject_rate,se,rel_ci_length"
        assert len(lines) == 3


class TestDesignConfig:
    def test_round_trip(self):
        text = """
        # comment
        population = LogN
        adapter = mean
        n = 40
        reps = 10
        alpha = 0.1
        methods = t_test, sym_boot
        seed = 5
        ci = false
        """
        d = parse_design_config(text)
        assert d.population == "LogN" and d.n == 40 and d.alpha == 0.1
        assert d.methods == ("t_test", "sym_boot") and not d.compute_ci

    def test_missing_population(self):
        with pytest.raises(ConfigurationError):
            parse_design_config("n = 40")

    def test_malformed_line(self):
        with pytest.raises(ConfigurationError, match="line 2"):
            parse_design_config("population = LogN\nbogus line")
