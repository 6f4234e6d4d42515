"""Seeded Monte Carlo experiments checking the bounds against simulation.

Tail experiments draw replicates in fixed blocks of BLOCK; block ``b`` uses
``numpy.random.default_rng([master_seed, b])``.  Fit-based experiments give
replicate ``i`` the dataset seed derived from ``(master_seed, i)``.  Either way
the result does not depend on how many workers run the blocks.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from statsmodels.stats.proportion import proportion_confint

from . import bounds, models, pmle, quadform
from .bounds import TailParams
from .errors import AggregationMismatch, ExperimentDegenerate, InvalidInput, LevelTooLarge, NotConverged
from .numerics import as_sym, sqrtm_psd

BLOCK = 1024
MAX_MAX_OF = 10**7
DEFAULT_X_GRID = (0.5, 1.0, 2.0, 3.0)
TAIL_KINDS = ("process-sup", "vector-norm", "quadform-tail", "subexp-sum", "slicing", "concentration")
KINDS = TAIL_KINDS + ("expansion", "scaling", "risk")
CSV_COLUMNS = ("kind", "x", "bound_level", "theoretical_prob", "empirical_freq", "wilson_upper_99",
               "replicates", "seed")


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    x_grid: List[float] = field(default_factory=lambda: list(DEFAULT_X_GRID))
    replicates: int = 100_000
    master_seed: int = 0
    parallel_width: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.x_grid:
            raise InvalidInput("x_grid must be non-empty")
        if int(self.replicates) < 1:
            raise InvalidInput("replicates must be >= 1")
        if int(self.parallel_width) < 1:
            raise InvalidInput("parallel_width must be >= 1")
        self.x_grid = [float(x) for x in self.x_grid]
        self.replicates = int(self.replicates)
        self.master_seed = int(self.master_seed)
        self.parallel_width = int(self.parallel_width)


class Partial(NamedTuple):
    """Counts from a disjoint range of replicates."""

    x_grid: tuple
    exceed: tuple
    n: int
    total: float = 0.0  # running sum of a tracked statistic


@dataclass
class XRecord:
    x: float
    bound_level: float
    theoretical_prob: float
    empirical_freq: float
    wilson_upper_99: float
    exceed_count: int


@dataclass
class McReport:
    kind: str
    records: List[XRecord]
    replicates: int
    master_seed: int
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def violations(self) -> List[XRecord]:
        return [r for r in self.records if r.empirical_freq > r.theoretical_prob]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([self.kind, repr(r.x), repr(r.bound_level), repr(r.theoretical_prob), repr(r.empirical_freq),
                        repr(r.wilson_upper_99), self.replicates, self.master_seed])
        return buf.getvalue()


def wilson_upper_99(count: int, n: int) -> float:
    return float(proportion_confint(count, n, alpha=0.01, method="wilson")[1])


def aggregate(partials: Sequence[Partial]) -> Partial:
    """Sum counts over partials; order does not matter."""
    if not partials:
        raise AggregationMismatch("nothing to aggregate")
    grid = partials[0].x_grid
    exceed = np.zeros(len(grid), dtype=np.int64)
    n, total = 0, 0.0
    for pt in partials:
        if tuple(pt.x_grid) != tuple(grid):
            raise AggregationMismatch(f"x grids differ: {pt.x_grid} vs {grid}")
        exceed += np.asarray(pt.exceed, dtype=np.int64)
        n += pt.n
    # sum the float totals in a fixed order so the result is order independent
    total = math.fsum(pt.total for pt in partials)
    return Partial(tuple(grid), tuple(int(e) for e in exceed), n, total)


def make_report(kind: str, agg: Partial, levels, probs, master_seed: int, wall: float, extra=None) -> McReport:
    recs = []
    for x, lvl, pr, cnt in zip(agg.x_grid, levels, probs, agg.exceed):
        recs.append(XRecord(float(x), float(lvl), float(pr), cnt / agg.n, wilson_upper_99(cnt, agg.n), int(cnt)))
    return McReport(kind, recs, agg.n, master_seed, wall, dict(extra or {}))


def effective_width(requested: int) -> int:
    cap = os.environ.get("PMLE_LAB_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise InvalidInput(f"PMLE_LAB_THREADS must be an integer, got {cap!r}")
    return max(1, requested)


def _block_sizes(replicates: int):
    nb = (replicates + BLOCK - 1) // BLOCK
    return [(b, min(BLOCK, replicates - b * BLOCK)) for b in range(nb)]


def run_blocks(cfg: ExperimentConfig, draw: Callable[[np.random.Generator, int], np.ndarray],
               thresholds: Sequence[float], stat_total: bool = False) -> Partial:
    """Count per-x exceedances ``stat >= threshold`` over all replicates.

    ``draw(rng, m)`` returns m replicate statistics.
    """
    thr = np.asarray(thresholds, dtype=float)
    grid = tuple(cfg.x_grid)

    def one(block):
        b, m = block
        rng = np.random.default_rng([cfg.master_seed, b])
        s = draw(rng, m)
        exc = (s[:, None] >= thr[None, :]).sum(axis=0)
        return Partial(grid, tuple(int(e) for e in exc), m, math.fsum(s) if stat_total else 0.0)

    blocks = _block_sizes(cfg.replicates)
    width = effective_width(cfg.parallel_width)
    if width == 1:
        parts = [one(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=width) as ex:
            parts = list(ex.map(one, blocks))
    return aggregate(parts)


def _merge_params(cfg: ExperimentConfig, defaults: dict) -> dict:
    unknown = set(cfg.params) - set(defaults)
    if unknown:
        raise InvalidInput(f"unknown parameter(s) for {cfg.kind}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(cfg.params)
    return out


def _tail(d: dict) -> TailParams:
    g = d.get("g")
    return TailParams(float(d.get("nu0", 1.0)), math.inf if g is None else float(g))


# --- process supremum -------------------------------------------------------

PROCESS_SUP_DEFAULTS = {"p": 2, "r": 1.0, "nu0": 1.0, "g": None}


def run_process_sup(cfg: ExperimentConfig) -> McReport:
    """Linear Gaussian process U(v) = v^T xi; its sup over the r-ball is r ||xi||."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, PROCESS_SUP_DEFAULTS)
    p, r, t = int(d["p"]), float(d["r"]), _tail(d)
    e = bounds.ball_entropy(p)
    levels = [bounds.sup_bound(r, t, e, x, "scalar") for x in cfg.x_grid]
    agg = run_blocks(cfg, lambda rng, m: r * np.linalg.norm(rng.standard_normal((m, p)), axis=1), levels)
    probs = [math.exp(-x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, levels, probs, cfg.master_seed, time.perf_counter() - t0,
                       {"q1": e.q1, "q2": e.q2})


# --- norm of a vector process -------------------------------------------------

VECTOR_NORM_DEFAULTS = {"q": 2, "p": 2, "r": 1.0, "a": None, "s": None, "entropy": "auto"}


def _matrix_param(v, dim: int, name: str) -> np.ndarray:
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1:
        return np.diag(a)
    if a.shape != (dim, dim):
        raise InvalidInput(f"{name} must be {dim}x{dim}")
    return a


def vector_norm_setup(d: dict):
    """(A, W, entropy) for the experiment parameters."""
    q, p = int(d["q"]), int(d["p"])
    a = _matrix_param(d["a"], q, "a")
    if a is None:
        a = np.eye(q)
    s = _matrix_param(d["s"], p, "s")
    f_sq = as_sym(a.T @ a)
    mode = d["entropy"]
    if mode == "auto":
        mode = "constrained" if s is not None else "weighted"
    if mode == "vector":
        if not np.allclose(f_sq, np.eye(q)) or s is not None:
            raise InvalidInput("entropy 'vector' needs A = I and no constraint")
        return a, np.eye(p), bounds.vector_norm_entropy(p, q)
    if mode == "weighted":
        if s is not None:
            raise InvalidInput("entropy 'weighted' takes no constraint")
        return a, np.eye(p), bounds.weighted_norm_entropy(f_sq, p)
    if mode != "constrained":
        raise InvalidInput(f"unknown entropy mode {mode!r}")
    w_sq = bounds.constraint_weight(np.zeros((p, p)) if s is None else s)
    return a, sqrtm_psd(w_sq), bounds.constrained_norm_entropy(f_sq, w_sq)


def run_vector_norm(cfg: ExperimentConfig) -> McReport:
    """Y(v) = M v with Gaussian M; sup over the r-ball of ||A Y(W v)|| is r ||A M W||_op."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, VECTOR_NORM_DEFAULTS)
    q, p, r = int(d["q"]), int(d["p"]), float(d["r"])
    a, w, e = vector_norm_setup(d)
    t = TailParams(1.0, math.inf)
    levels = [bounds.sup_bound(r, t, e, x, "vector") for x in cfg.x_grid]

    def draw(rng, m):
        mm = rng.standard_normal((m, q, p))
        # batched spectral norms in the replicate loop
        return r * np.linalg.norm(a @ mm @ w, ord=2, axis=(1, 2))

    agg = run_blocks(cfg, draw, levels)
    probs = [math.exp(-x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, levels, probs, cfg.master_seed, time.perf_counter() - t0,
                       {"q1": e.q1, "q2": e.q2})


# --- quadratic form ----------------------------------------------------------

QUADFORM_DEFAULTS = {"b": [1.0, 1.0], "g": 10.0, "mode": "full"}


def run_quadform_tail(cfg: ExperimentConfig) -> McReport:
    """xi = B^(1/2) eta; compares P(||xi|| >= z_G(x)) with 2e^-x + 8.4e^-x_c."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, QUADFORM_DEFAULTS)
    b = np.asarray(d["b"], dtype=float)
    b = np.diag(b) if b.ndim == 1 else as_sym(b)
    g = math.inf if d["g"] is None else float(d["g"])
    spec = quadform.quadform_from_b(b, g)
    root = sqrtm_psd(b)
    levels = [quadform.quad_quantile(spec, x, d["mode"]) for x in cfg.x_grid]
    dim = b.shape[0]
    agg = run_blocks(cfg, lambda rng, m: np.linalg.norm(rng.standard_normal((m, dim)) @ root, axis=1), levels)
    probs = [quadform.quad_tail_bound(spec, x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, levels, probs, cfg.master_seed, time.perf_counter() - t0,
                       {"p_g": spec.p_g, "x_c": spec.x_c})


# --- sums of sub-exponential terms -------------------------------------------

SUBEXP_DEFAULTS = {"levels": None, "weights": None, "k": 8}


def default_levels(k: int) -> np.ndarray:
    return np.sqrt(2.0 * np.arange(k) * math.log(2.0) + 2.0)


def max_of_gaussians(rng: np.random.Generator, counts: np.ndarray, m: int) -> np.ndarray:
    """m x K draws of max(Z_1..Z_M) for each M in counts, by inverting Phi^M."""
    u = rng.random((m, counts.size))
    return -ndtri(-np.expm1(np.log(u) / counts))


def subexp_setup(d: dict):
    q = default_levels(int(d["k"])) if d["levels"] is None else np.asarray(d["levels"], dtype=float)
    if d["weights"] is None:
        c = 2.0 ** -np.arange(q.size)
        c /= c.sum()
    else:
        c = np.asarray(d["weights"], dtype=float)
    counts = np.floor(np.exp(q**2 / 2.0))
    if np.any(counts > MAX_MAX_OF):
        raise LevelTooLarge(f"level needs a maximum of {counts.max():.3g} Gaussians (cap {MAX_MAX_OF:g})")
    return q, c, counts


def run_subexp_sum(cfg: ExperimentConfig) -> McReport:
    """S = sum c_k zeta_k with zeta_k the max of floor(exp(q_k^2/2)) standard Gaussians."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, SUBEXP_DEFAULTS)
    q, c, counts = subexp_setup(d)
    t = TailParams()
    res = [bounds.subexp_sum_quantile(c, q, t, x) for x in cfg.x_grid]
    levels = [s.quantile for s in res]
    agg = run_blocks(cfg, lambda rng, m: max_of_gaussians(rng, counts, m) @ c, levels, stat_total=True)
    probs = [math.exp(-x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, levels, probs, cfg.master_seed, time.perf_counter() - t0,
                       {"q1": res[0].q1, "q2": res[0].q2, "empirical_mean": agg.total / agg.n,
                        "mean_bound": res[0].mean_bound})


# --- slicing -----------------------------------------------------------------

SLICING_DEFAULTS = {"p": 2, "rho": 0.5, "r0": 1.0, "r_ratio": 32.0, "nu0": 1.0, "g": None, "r_points": 2001}


def slicing_threshold(d: dict, x: float) -> float:
    """Smallest ||xi|| for which some r in [r0, r*] has r ||xi|| >= f(r/rho, r0)."""
    p, rho, r0 = int(d["p"]), float(d["rho"]), float(d["r0"])
    ratio = float(d["r_ratio"])
    if not 1.0 <= ratio <= 1e3:
        raise InvalidInput("r_ratio must lie in [1, 1000]")
    t, e = _tail(d), bounds.ball_entropy(p)
    rs = r0 * np.geomspace(1.0, ratio, int(d["r_points"])) if ratio > 1 else np.array([r0])
    return min(bounds.slicing_drift(r / rho, r0, x, t, e, rho).f_value / r for r in rs)


def run_slicing(cfg: ExperimentConfig) -> McReport:
    """Uniform-in-radius check for the linear process; sup over the annulus is r ||xi||."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, SLICING_DEFAULTS)
    p, rho = int(d["p"]), float(d["rho"])
    if not 0 < rho < 1:
        raise InvalidInput("rho must lie in (0, 1)")
    levels = [slicing_threshold(d, x) for x in cfg.x_grid]
    agg = run_blocks(cfg, lambda rng, m: np.linalg.norm(rng.standard_normal((m, p)), axis=1), levels)
    probs = [rho / (1.0 - rho) * math.exp(-x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, levels, probs, cfg.master_seed, time.perf_counter() - t0)


# --- fit-based experiments -----------------------------------------------------

MODEL_DEFAULTS = {"family": "logistic", "n": 1000, "p": 5, "ridge": 1.0, "noise_sigma": 1.0,
                  "theta_star": None, "design_seed": 12345}


def replicate_seed(master_seed: int, i: int) -> int:
    return int(np.random.SeedSequence([master_seed, i]).generate_state(1, dtype=np.uint64)[0])


def default_theta(p: int) -> np.ndarray:
    return np.array([(-1.0) ** j * 0.5 / (1.0 + 0.5 * j) for j in range(p)])


def build_model(d: dict, n: Optional[int] = None) -> models.ModelSpec:
    """Design rows i.i.d. N(0, I_p) from the design seed; same rows prefix for every n."""
    n = int(d["n"] if n is None else n)
    p = int(d["p"])
    rng = np.random.default_rng(int(d["design_seed"]))
    x = rng.standard_normal((n, p))
    th = default_theta(p) if d["theta_star"] is None else np.asarray(d["theta_star"], dtype=float)
    return models.ModelSpec(d["family"], x, th, float(d["noise_sigma"]))


def map_replicates(cfg: ExperimentConfig, fn: Callable[[int], object], count: Optional[int] = None) -> list:
    idx = range(cfg.replicates if count is None else count)
    width = effective_width(cfg.parallel_width)
    if width == 1:
        return [fn(i) for i in idx]
    with ThreadPoolExecutor(max_workers=width) as ex:
        return list(ex.map(fn, idx))


@dataclass
class ScalingReport:
    kind: str
    family: str
    n_grid: List[int]
    median_fisher: List[float]
    median_wilks: List[float]
    median_sqrt_wilks: List[float]
    p95_fisher: List[float]
    p95_wilks: List[float]
    p95_sqrt_wilks: List[float]
    slope_fisher: float
    slope_wilks: float
    slope_sqrt_wilks: float
    dropped: List[int]
    replicates: int
    master_seed: int
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "n", "median_fisher", "median_wilks", "median_sqrt_wilks", "p95_fisher", "p95_wilks",
                    "p95_sqrt_wilks", "replicates", "seed"])
        for i, n in enumerate(self.n_grid):
            w.writerow([self.kind, n, repr(self.median_fisher[i]), repr(self.median_wilks[i]),
                        repr(self.median_sqrt_wilks[i]), repr(self.p95_fisher[i]), repr(self.p95_wilks[i]),
                        repr(self.p95_sqrt_wilks[i]), self.replicates, self.master_seed])
        return buf.getvalue()


EXPANSION_DEFAULTS = dict(MODEL_DEFAULTS, n_grid=[250, 500, 1000, 2000, 4000], max_unconverged=0.01)


def log_log_slope(n, y) -> float:
    return float(np.polyfit(np.log(np.asarray(n, float)), np.log(np.asarray(y, float)), 1)[0])


def run_expansion(cfg: ExperimentConfig) -> ScalingReport:
    """Fisher and Wilks residual distributions across a grid of sample sizes."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, EXPANSION_DEFAULTS)
    ns = [int(n) for n in d["n_grid"]]
    cols = {k: [] for k in ("mf", "mw", "ms", "pf", "pw", "ps")}
    dropped = []
    for n in ns:
        spec = build_model(d, n)
        pen = pmle.PenaltySpec.ridge(spec.p, float(d["ridge"]))
        geom = pmle.geometry(spec, pen)

        def one(i):
            data = models.simulate(spec, replicate_seed(cfg.master_seed, i))
            try:
                return pmle.expansion_diagnostics(spec, data, pen, geom)
            except NotConverged:
                return None

        res = map_replicates(cfg, one)
        ok = [r for r in res if r is not None]
        dropped.append(len(res) - len(ok))
        if dropped[-1] > float(d["max_unconverged"]) * len(res):
            raise ExperimentDegenerate(f"{dropped[-1]} of {len(res)} fits failed at n={n}")
        f = np.array([r.fisher_residual for r in ok])
        w = np.array([r.wilks_residual for r in ok])
        s = np.array([r.sqrt_wilks_residual for r in ok])
        for key, arr in (("f", f), ("w", w), ("s", s)):
            cols["m" + key].append(float(np.median(arr)))
            cols["p" + key].append(float(np.quantile(arr, 0.95)))
    slopes = [log_log_slope(ns, cols[k]) if len(ns) > 1 else math.nan for k in ("mf", "mw", "ms")]
    return ScalingReport(cfg.kind, d["family"], ns, cols["mf"], cols["mw"], cols["ms"], cols["pf"], cols["pw"],
                         cols["ps"], slopes[0], slopes[1], slopes[2], dropped, cfg.replicates, cfg.master_seed,
                         time.perf_counter() - t0)


CONCENTRATION_DEFAULTS = dict(MODEL_DEFAULTS, nsamples=512)


def bound_params(spec: models.ModelSpec, pen: pmle.PenaltySpec, geom: pmle.Geometry, nsamples: int = 512,
                 seed: int = 0):
    """BoundParams with sampled delta_G(r), b_G(r) and spectral lambda_G, a_G; also S."""
    info = models.info_matrices(spec, geom.theta_star_g)
    lam_g, a_g = pmle.identifiability(info.v0_sq, info.v2_bound, geom)
    s_mat = pmle.s_matrix(info.v2_bound, geom)[0]
    nu0 = 1.0 if info.nu0 is None else info.nu0
    g = math.inf if info.g is None else info.g
    bp = pmle.BoundParams(
        delta_r=lambda r: pmle.estimate_delta_l0g(spec, pen, r, nsamples, seed, geom),
        b_r=lambda r: pmle.estimate_b_llg(spec, pen, r, nsamples, seed, geom),
        nu0=nu0, g=g, omega=info.omega, a_g=a_g, lambda_gp=lam_g)
    return bp, s_mat, info


def run_concentration(cfg: ExperimentConfig) -> McReport:
    """Frequency of ||D_G (theta~ - theta*_G)|| > r_G against 3 e^-x."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, CONCENTRATION_DEFAULTS)
    spec = build_model(d)
    pen = pmle.PenaltySpec.ridge(spec.p, float(d["ridge"]))
    geom = pmle.geometry(spec, pen)
    bp, s_mat, info = bound_params(spec, pen, geom, int(d["nsamples"]))
    qf = quadform.build_quadform(geom.d_g_sq, info.v0_sq, math.inf)
    radii = [pmle.solve_r_g(x, bp, qf, s_mat) for x in cfg.x_grid]

    def one(i):
        data = models.simulate(spec, replicate_seed(cfg.master_seed, i))
        fit = pmle.fit_pmle(spec, data, pen, theta0=geom.theta_star_g)
        if not fit.converged:
            return None
        return float(np.linalg.norm(geom.d_g @ (fit.theta_hat - geom.theta_star_g)))

    dist = map_replicates(cfg, one)
    ok = np.array([v for v in dist if v is not None])
    if ok.size < 0.99 * len(dist):
        raise ExperimentDegenerate(f"{len(dist) - ok.size} of {len(dist)} fits failed")
    exceed = tuple(int(np.sum(ok > r)) for r in radii)
    agg = Partial(tuple(cfg.x_grid), exceed, int(ok.size))
    probs = [3.0 * math.exp(-x) for x in cfg.x_grid]
    return make_report(cfg.kind, agg, radii, probs, cfg.master_seed, time.perf_counter() - t0,
                       {"p_g": qf.p_g, "median_distance": float(np.median(ok))})


@dataclass
class RiskReport:
    kind: str
    empirical_mse: float
    standard_error: float
    bias_sq: float
    variance_trace: float
    r_risk: float
    diamond_star: float
    risk_bound: float
    replicates: int
    master_seed: int
    wall_time: float = 0.0

    def within_closed_form(self, k: float = 3.0) -> bool:
        return abs(self.empirical_mse - self.r_risk) <= k * self.standard_error

    def below_bound(self, k: float = 3.0) -> bool:
        return self.empirical_mse <= self.risk_bound + k * self.standard_error

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = [k for k in asdict(self) if k != "wall_time"]
        w.writerow(keys)
        w.writerow([repr(v) if isinstance(v, float) else v for k, v in asdict(self).items() if k != "wall_time"])
        return buf.getvalue()


RISK_DEFAULTS = dict(MODEL_DEFAULTS, family="gaussian-linear", n=50, p=4, weight="d0", r_g_x=2.0, nsamples=64)


def run_risk(cfg: ExperimentConfig) -> RiskReport:
    """Empirical E||W (theta~ - theta*)||^2 against the bias-variance closed form and its bound."""
    t0 = time.perf_counter()
    d = _merge_params(cfg, RISK_DEFAULTS)
    spec = build_model(d)
    pen = pmle.PenaltySpec.ridge(spec.p, float(d["ridge"]))
    geom = pmle.geometry(spec, pen)
    info = models.info_matrices(spec, geom.theta_star_g)
    if d["weight"] == "d0":
        w = sqrtm_psd(info.d0_sq)
    elif d["weight"] == "identity":
        w = np.eye(spec.p)
    else:
        raise InvalidInput(f"unknown weight {d['weight']!r}; use 'd0' or 'identity'")
    bp, s_mat, _ = bound_params(spec, pen, geom, int(d["nsamples"]))
    qf = quadform.build_quadform(geom.d_g_sq, info.v0_sq, math.inf)
    r_g = pmle.solve_r_g(float(d["r_g_x"]), bp, qf, s_mat)
    rd = pmle.risk_decomposition(spec, pen, w, bp, r_g, s_mat, geom, info.v0_sq)

    def one(i):
        data = models.simulate(spec, replicate_seed(cfg.master_seed, i))
        fit = pmle.fit_pmle(spec, data, pen, theta0=geom.theta_star_g)
        if not fit.converged:
            return None
        e = w @ (fit.theta_hat - spec.theta_star)
        return float(e @ e)

    vals = [v for v in map_replicates(cfg, one) if v is not None]
    if len(vals) < 0.99 * cfg.replicates:
        raise ExperimentDegenerate("too many fits failed")
    arr = np.array(vals)
    return RiskReport(cfg.kind, float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), rd.bias_sq,
                      rd.variance_trace, rd.r_risk, rd.diamond_star, rd.risk_bound, arr.size, cfg.master_seed,
                      time.perf_counter() - t0)


RUNNERS: Dict[str, Callable] = {
    "process-sup": run_process_sup,
    "vector-norm": run_vector_norm,
    "quadform-tail": run_quadform_tail,
    "subexp-sum": run_subexp_sum,
    "slicing": run_slicing,
    "expansion": run_expansion,
    "scaling": run_expansion,
    "concentration": run_concentration,
    "risk": run_risk,
}

PARAM_DEFAULTS = {
    "process-sup": PROCESS_SUP_DEFAULTS,
    "vector-norm": VECTOR_NORM_DEFAULTS,
    "quadform-tail": QUADFORM_DEFAULTS,
    "subexp-sum": SUBEXP_DEFAULTS,
    "slicing": SLICING_DEFAULTS,
    "expansion": EXPANSION_DEFAULTS,
    "scaling": EXPANSION_DEFAULTS,
    "concentration": CONCENTRATION_DEFAULTS,
    "risk": RISK_DEFAULTS,
}

DEFAULT_REPLICATES = {k: 100_000 for k in TAIL_KINDS}
DEFAULT_REPLICATES.update({"expansion": 500, "scaling": 500, "concentration": 1000, "risk": 10_000})


def run(cfg: ExperimentConfig):
    return RUNNERS[cfg.kind](cfg)
