"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a PASS/FAIL line shown in the pytest terminal summary.
"""
import math
import time

import numpy as np
import pytest

from pmle_lab import bounds as bd
from pmle_lab import mcharness as mc
from pmle_lab import models as md
from pmle_lab import pmle as pm
from pmle_lab import quadform as qf
from pmle_lab.numerics import sqrtm_psd

from conftest import record_criterion

X_GRID = [0.5, 1.0, 2.0, 3.0]


def tail_ok(rep):
    return not rep.violations()


def worst(rep):
    return ", ".join(f"x={r.x:g}: {r.empirical_freq:.4g} <= {r.theoretical_prob:.4g}" for r in rep.records)


def test_c01_gaussian_linear_exactness():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_f = worst_w = 0.0
    for i in range(100):
        p = int(rng.integers(1, 11))
        n = int(rng.integers(max(p, 2), 101))
        x = rng.standard_normal((n, p))
        a = rng.standard_normal((p, p))
        spec = md.ModelSpec("gaussian-linear", x, rng.standard_normal(p), 1.0)
        pen = pm.PenaltySpec(a @ a.T / p + 0.1 * np.eye(p))
        d = pm.expansion_diagnostics(spec, md.simulate(spec, i), pen)
        worst_f, worst_w = max(worst_f, d.fisher_residual), max(worst_w, d.wilks_residual)
    wall = time.perf_counter() - t0
    ok = worst_f <= 1e-8 and worst_w <= 1e-8 and wall < 1.0
    record_criterion(1, "Gaussian-linear exactness", ok,
                     f"max fisher {worst_f:.2e}, max wilks {worst_w:.2e}, {wall:.2f}s")
    assert ok


def test_c02_entropy_identities():
    ok = all(bd.penalized_entropy(np.eye(p)) == bd.EntropyBudget(1.0, 1 + 8 * p / 3) for p in range(1, 51))
    ok &= bd.ball_entropy(2).q2 == 8.0 and math.isclose(bd.ball_entropy(1).q2, 5.4, rel_tol=1e-15)
    series = {p: bd.entropy_series([bd.ball_log2M(p, k) for k in range(bd.BALL_SERIES_K + 1)]).q2
              for p in range(1, 11)}
    ok &= all(series[p] <= 2 * bd.c1_const(p) * p for p in series)
    record_criterion(2, "entropy identities", ok, f"series Q2 at p=1,2: {series[1]:.4f}, {series[2]:.4f}")
    assert ok


def test_c03_branch_continuity():
    rng = np.random.default_rng(3)
    gap = 0.0
    for _ in range(100):
        q2 = float(rng.uniform(0.0, 50.0))
        g = math.sqrt(q2 + 1.0) + float(rng.uniform(1e-6, 20.0))
        xs = (g * g - q2) / 2
        gap = max(gap, abs(math.sqrt(q2 + 2 * xs) - (xs / g + (q2 / g + g) / 2)))
    ok = gap <= 1e-12
    record_criterion(3, "z_H branch continuity", ok, f"max gap {gap:.2e}")
    assert ok


def test_c04_process_sup():
    t0 = time.perf_counter()
    reps = [mc.run(mc.ExperimentConfig("process-sup", {"p": p}, X_GRID, 100_000)) for p in (1, 2, 5)]
    wall = time.perf_counter() - t0
    ok = all(map(tail_ok, reps)) and wall < 120
    record_criterion(4, "process-sup tail", ok, f"p=5: {worst(reps[-1])}; {wall:.1f}s")
    assert ok


def test_c05_vector_norm():
    t0 = time.perf_counter()
    reps = []
    for q, p in ((2, 2), (5, 3)):
        reps.append(mc.run(mc.ExperimentConfig("vector-norm", {"q": q, "p": p}, X_GRID, 100_000)))
        reps.append(mc.run(mc.ExperimentConfig("vector-norm", {"q": q, "p": p, "s": 2.0}, X_GRID, 100_000)))
    wall = time.perf_counter() - t0
    ok = all(map(tail_ok, reps)) and wall < 300
    record_criterion(5, "vector-norm tail", ok, f"(5,3) with S: {worst(reps[-1])}; {wall:.1f}s")
    assert ok


def test_c06_quadform_tail():
    reps = [mc.run(mc.ExperimentConfig("quadform-tail", {"b": b, "g": 10.0}, X_GRID, 100_000))
            for b in ([1.0] * 2, [1.0] * 5, [1.0, 0.5, 0.25, 0.1, 0.05])]
    ok = all(map(tail_ok, reps))
    record_criterion(6, "quadratic-form tail", ok, f"I_5: {worst(reps[1])}")
    assert ok


def test_c07_subexp_sum():
    rep = mc.run(mc.ExperimentConfig("subexp-sum", {"k": 8}, X_GRID, 100_000))
    mean, bound = rep.extra["empirical_mean"], rep.extra["q1"] + 3.0
    ok = tail_ok(rep) and mean <= bound
    record_criterion(7, "sub-exponential sum", ok, f"mean {mean:.4f} <= {bound:.4f}")
    assert ok


def test_c08_slicing():
    rep = mc.run(mc.ExperimentConfig("slicing", {"rho": 0.5, "r_ratio": 32.0}, [0.5, 1.0, 2.0], 100_000))
    ok = tail_ok(rep) and all(math.isclose(r.theoretical_prob, math.exp(-r.x)) for r in rep.records)
    record_criterion(8, "slicing", ok, worst(rep))
    assert ok


def test_c09_iid_scaling():
    t0 = time.perf_counter()
    rep = mc.run(mc.ExperimentConfig("scaling", {"family": "logistic", "p": 5, "ridge": 1.0},
                                     replicates=500))
    wall = time.perf_counter() - t0
    decreasing = all(b < a for a, b in zip(rep.median_wilks, rep.median_wilks[1:]))
    ok = -0.75 <= rep.slope_fisher <= -0.25 and decreasing and wall < 600
    record_criterion(9, "i.i.d. scaling", ok,
                     f"fisher slope {rep.slope_fisher:.3f}, wilks medians "
                     + "/".join(f"{m:.4f}" for m in rep.median_wilks) + f"; {wall:.1f}s")
    assert ok


def test_c10_concentration():
    rep = mc.run(mc.ExperimentConfig("concentration", {"family": "logistic", "n": 1000}, [2.0], 1000))
    r = rep.records[0]
    ok = r.empirical_freq <= 3 * math.exp(-2)
    record_criterion(10, "concentration", ok, f"r_G {r.bound_level:.3f}, freq {r.empirical_freq:.4f}")
    assert ok


def test_c11_risk_and_bias():
    rep = mc.run(mc.ExperimentConfig("risk", {"family": "gaussian-linear"}, replicates=10_000))
    rng = np.random.default_rng(11)
    bias_viol = 0
    for _ in range(100):
        p = int(rng.integers(1, 8))
        n = int(rng.integers(p + 1, 60))
        spec = md.ModelSpec("gaussian-linear", rng.standard_normal((n, p)), rng.standard_normal(p))
        a = rng.standard_normal((p, p))
        pen = pm.PenaltySpec(a @ a.T)
        diff = spec.design @ (spec.theta_star - pm.population_target(spec, pen))
        gth = sqrtm_psd(pen.g_sq) @ spec.theta_star
        bias_viol += int(diff @ diff > gth @ gth * (1 + 1e-12))
    ok = rep.within_closed_form(3.0) and rep.below_bound(3.0) and bias_viol == 0
    record_criterion(11, "risk bound and bias inequality", ok,
                     f"mse {rep.empirical_mse:.4f} +- {rep.standard_error:.4f}, closed form {rep.r_risk:.4f}, "
                     f"bound {rep.risk_bound:.4f}, bias violations {bias_viol}")
    assert ok


def test_c12_effective_dimension():
    rng = np.random.default_rng(12)
    gap = 0.0
    for _ in range(50):
        p0, p1 = int(rng.integers(0, 6)), int(rng.integers(1, 6))
        g, s = float(rng.uniform(0, 5)), float(rng.uniform(0.2, 3))
        gap = max(gap, abs(qf.effdim_block(p0, p1, g, s) - qf.effective_dimension(*qf.block_matrices(p0, p1, g, s))))
        p, L, beta = int(rng.integers(1, 30)), float(rng.uniform(0.2, 3)), float(rng.uniform(0.6, 3))
        gap = max(gap, abs(qf.effdim_sobolev(p, L, beta, s)
                           - qf.effective_dimension(*qf.sobolev_matrices(p, L, beta, s))))
        v, gj = rng.uniform(0.1, 3, 6), rng.uniform(0, 3, 6)
        d = float(rng.uniform(0, 2))
        gap = max(gap, abs(qf.effdim_inverse(v, d, gj) - qf.effective_dimension(*qf.inverse_matrices(v, d, gj))))
    sob = qf.effdim_sobolev(10, 1.0, 1.0, 1.0)
    ok = gap <= 1e-10 and abs(sob - 0.981793) <= 1e-6
    record_criterion(12, "effective-dimension oracle", ok, f"max gap {gap:.2e}, sobolev {sob:.6f}")
    assert ok
