import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pmle_lab import bounds
from pmle_lab import mcharness as mc
from pmle_lab.errors import AggregationMismatch, InvalidInput, LevelTooLarge

N = 100_000


def cfg(kind, replicates=N, **params):
    return mc.ExperimentConfig(kind, params, replicates=replicates, master_seed=2024)


def assert_matches(rep, exact):
    """Empirical frequencies within 5 binomial SE of an exact tail probability."""
    for r, p in zip(rep.records, exact):
        se = math.sqrt(max(p * (1 - p), 1e-12) / rep.replicates)
        assert abs(r.empirical_freq - p) <= 5 * se + 1e-12, (r.x, r.empirical_freq, p)


class TestConfig:
    def test_validation(self):
        with pytest.raises(InvalidInput):
            mc.ExperimentConfig("nope")
        with pytest.raises(InvalidInput):
            mc.ExperimentConfig("slicing", replicates=0)
        with pytest.raises(InvalidInput):
            mc.ExperimentConfig("slicing", x_grid=[])

    def test_unknown_param(self):
        with pytest.raises(InvalidInput):
            mc.run(cfg("quadform-tail", 10, colour="red"))

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("PMLE_LAB_THREADS", "2")
        assert mc.effective_width(8) == 2
        monkeypatch.setenv("PMLE_LAB_THREADS", "x")
        with pytest.raises(InvalidInput):
            mc.effective_width(8)


class TestAggregate:
    def parts(self):
        g = (0.5, 1.0)
        return [mc.Partial(g, (3, 1), 10, 1.5), mc.Partial(g, (0, 0), 7, 0.25), mc.Partial(g, (5, 2), 12, 2.0)]

    def test_sum(self):
        a = mc.aggregate(self.parts())
        assert a.exceed == (8, 3) and a.n == 29 and a.total == 3.75

    @given(st.permutations(range(3)))
    def test_order_independent(self, perm):
        ps = self.parts()
        assert mc.aggregate([ps[i] for i in perm]) == mc.aggregate(ps)

    def test_associative(self):
        ps = self.parts()
        left = mc.aggregate([mc.aggregate(ps[:2]), ps[2]])
        assert left == mc.aggregate(ps)

    def test_mismatch(self):
        with pytest.raises(AggregationMismatch):
            mc.aggregate([mc.Partial((1.0,), (0,), 1), mc.Partial((2.0,), (0,), 1)])
        with pytest.raises(AggregationMismatch):
            mc.aggregate([])

    def test_wilson(self):
        assert mc.wilson_upper_99(0, 1000) > 0
        assert mc.wilson_upper_99(30, 1000) >= 0.03


class TestDeterminism:
    @pytest.mark.parametrize("kind", ["process-sup", "quadform-tail", "subexp-sum", "vector-norm", "slicing"])
    def test_parallel_width(self, kind):
        c1 = cfg(kind, 5000)
        c4 = cfg(kind, 5000)
        c4.parallel_width = 4
        assert mc.run(c1).to_csv() == mc.run(c4).to_csv()

    def test_fit_parallel_width(self):
        c1 = mc.ExperimentConfig("concentration", {"n": 200, "p": 2, "nsamples": 64}, replicates=20)
        c3 = mc.ExperimentConfig("concentration", {"n": 200, "p": 2, "nsamples": 64}, replicates=20,
                                 parallel_width=3)
        assert mc.run(c1).to_csv() == mc.run(c3).to_csv()

    def test_seed_changes_result(self):
        a = cfg("quadform-tail", 3000)
        b = cfg("quadform-tail", 3000)
        b.master_seed = 7
        assert mc.run(a).to_csv() != mc.run(b).to_csv()

    def test_prefix_blocks(self):
        # one block of replicates is shared between runs of different lengths
        short = mc.run(cfg("process-sup", mc.BLOCK, p=5))
        long = mc.run(cfg("process-sup", 2 * mc.BLOCK, p=5))
        assert all(a.exceed_count <= b.exceed_count for a, b in zip(short.records, long.records))


class TestReportFormat:
    def test_csv_and_json(self):
        rep = mc.run(cfg("quadform-tail", 2000))
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(mc.CSV_COLUMNS)
        assert len(lines) == 1 + len(mc.DEFAULT_X_GRID)
        d = json.loads(rep.to_json())
        assert d["replicates"] == 2000
        for r in rep.records:
            assert 0 <= r.empirical_freq <= 1
            assert r.wilson_upper_99 >= r.empirical_freq


class TestOracles:
    """Tail experiments against exact distributions."""

    def test_process_sup_chi(self):
        rep = mc.run(cfg("process-sup", p=2, r=0.2))
        exact = [stats.chi.sf(r.bound_level / 0.2, 2) for r in rep.records]
        assert_matches(rep, exact)

    def test_vector_norm_scalar(self):
        rep = mc.run(cfg("vector-norm", q=1, p=1, r=0.1, entropy="vector"))
        exact = [2 * stats.norm.sf(r.bound_level / 0.1) for r in rep.records]
        assert_matches(rep, exact)

    @pytest.mark.parametrize("b", [[1.0, 1.0, 1.0], [1.0, 0.1, 0.01]])
    def test_quadform_chi2(self, b):
        rep = mc.run(cfg("quadform-tail", b=b, g=None))
        if len(set(b)) == 1:
            exact = [stats.chi2.sf(r.bound_level**2, len(b)) for r in rep.records]
            assert_matches(rep, exact)
        assert not rep.violations()

    def test_quadform_large_x(self):
        c = mc.ExperimentConfig("quadform-tail", {"b": [1.0, 1.0]}, x_grid=[4.0, 6.0, 8.0], replicates=N)
        rep = mc.run(c)
        assert [r.exceed_count for r in rep.records][-1] == 0
        assert all(r.empirical_freq < r.theoretical_prob / 5 for r in rep.records)

    def test_subexp_single_gaussian(self):
        rep = mc.run(cfg("subexp-sum", levels=[1.0], weights=[1.0]))
        assert_matches(rep, [stats.norm.sf(r.bound_level) for r in rep.records])

    def test_max_of_gaussians_cdf(self):
        rng = np.random.default_rng(0)
        z = mc.max_of_gaussians(rng, np.array([1.0, 20.0]), 50_000)
        for j, m in enumerate((1, 20)):
            ks = stats.kstest(z[:, j], lambda t: stats.norm.cdf(t) ** m)
            assert ks.pvalue > 1e-3

    def test_level_cap(self):
        with pytest.raises(LevelTooLarge):
            mc.run(cfg("subexp-sum", 10, levels=[6.0], weights=[1.0]))

    def test_slicing_threshold_at_least_local(self):
        d = dict(mc.SLICING_DEFAULTS)
        assert mc.slicing_threshold(d, 1.0) > 0
        # a single radius reduces to the local bound at r0 / rho
        d1 = dict(d, r_ratio=1.0)
        e = bounds.ball_entropy(2)
        local = bounds.slicing_drift(2.0, 1.0, 1.0, bounds.TailParams(), e, 0.5).f_value
        assert mc.slicing_threshold(d1, 1.0) == pytest.approx(local)


class TestFitExperiments:
    def test_expansion_gaussian_linear(self):
        c = mc.ExperimentConfig("expansion", {"family": "gaussian-linear", "n_grid": [20, 40], "p": 3},
                                replicates=10)
        rep = mc.run(c)
        assert max(rep.p95_fisher) <= 1e-8 and max(rep.p95_wilks) <= 1e-8
        assert rep.dropped == [0, 0]

    def test_concentration_gaussian_linear(self):
        c = mc.ExperimentConfig("concentration", {"family": "gaussian-linear", "n": 60, "p": 3}, replicates=300)
        rep = mc.run(c)
        assert not rep.violations()
        # the estimator is exactly Gaussian here, so the bound has a wide margin
        assert all(r.empirical_freq <= 0.1 * r.theoretical_prob for r in rep.records)

    def test_risk_unpenalized(self):
        c = mc.ExperimentConfig("risk", {"ridge": 0.0, "n": 30, "p": 3}, replicates=3000)
        rep = mc.run(c)
        assert rep.bias_sq == pytest.approx(0.0, abs=1e-20)
        assert rep.variance_trace == pytest.approx(3.0)
        assert rep.within_closed_form()

    def test_risk_oversmoothing(self):
        c = mc.ExperimentConfig("risk", {"ridge": 50.0, "n": 30, "p": 3, "weight": "identity"}, replicates=2000)
        rep = mc.run(c)
        assert rep.bias_sq > rep.variance_trace
        assert rep.below_bound() and rep.within_closed_form()
