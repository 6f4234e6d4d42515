"""Penalized MLE: solver, population target, expansions and error terms.

Notation: L_G(theta) = L(theta) - ||G theta||^2 / 2, theta~ its maximizer,
theta*_G the maximizer of E L_G, D_G^2 = -E Hess L(theta*_G) + G^2 and
xi_G = D_G^-1 (grad L(theta*_G) - G^2 theta*_G).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from . import models
from .bounds import EntropyBudget, TailParams, penalized_entropy, zz_quantile
from .errors import (
    InvalidInput,
    InvalidWeightOrder,
    LinkOverflow,
    NoConcentrationRadius,
    NotConverged,
    SingularMatrix,
    SolverInconsistency,
)
from .models import Dataset, ModelSpec
from .numerics import SpectralDecomp, as_sym, loewner_leq, operator_norm, solve_psd, sym_eig
from .quadform import QuadFormSpec, quad_quantile

R_GRID_RATIO = 1.05
R_GRID_MAX = 1e6
FIXED_POINT_ITERS = 10
DEFAULT_SAMPLES = 512


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    g_sq: np.ndarray

    def __post_init__(self):
        g = as_sym(self.g_sq)
        sym_eig(g, psd=True)  # raises on an indefinite penalty
        g.setflags(write=False)
        object.__setattr__(self, "g_sq", g)

    @classmethod
    def ridge(cls, p: int, scale: float = 1.0) -> "PenaltySpec":
        return cls(scale * np.eye(p))

    @property
    def dim(self) -> int:
        return self.g_sq.shape[0]


class FitResult(NamedTuple):
    theta_hat: np.ndarray
    iterations: int
    final_grad_norm: float
    converged: bool


def _levenberg_step(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return solve_psd(h, g)
    except SingularMatrix:
        pass
    scale = 1.0 + operator_norm(h)
    tau = 1e-8 * scale
    while tau <= 1e8 * scale:
        try:
            return solve_psd(h + tau * np.eye(h.shape[0]), g)
        except SingularMatrix:
            tau *= 10.0
    raise NotConverged("Levenberg shift exhausted: penalized Hessian is not usable")


def _newton(fun, theta0, tol: float, max_iter: int) -> FitResult:
    """Damped Newton ascent; fun returns (value, gradient, negative Hessian)."""
    th = np.array(theta0, dtype=float)
    f, g, h = fun(th)
    gn = float(np.linalg.norm(g))
    for it in range(max_iter):
        if gn <= tol:
            return FitResult(th, it, gn, True)
        step = _levenberg_step(h, g)
        slope = float(g @ step)
        alpha, accepted = 1.0, False
        while alpha >= 1e-12:
            cand = th + alpha * step
            try:
                fc, gc, hc = fun(cand)
            except LinkOverflow:
                alpha *= 0.5
                continue
            # Armijo test with slack for rounding in large sums
            if fc >= f + 1e-4 * alpha * slope - 1e-13 * (1.0 + abs(f)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return FitResult(th, it, gn, False)
        th, f, g, h = cand, fc, gc, hc
        gn = float(np.linalg.norm(g))
    return FitResult(th, max_iter, gn, gn <= tol)


def _check_penalty(spec: ModelSpec, penalty: PenaltySpec) -> None:
    if penalty.dim != spec.p:
        raise InvalidInput(f"penalty has dimension {penalty.dim}, model has {spec.p}")


def fit_pmle(spec: ModelSpec, data: Dataset, penalty: PenaltySpec, tol_grad: float = 1e-9,
             max_iter: int = 200, theta0=None) -> FitResult:
    """Maximize L(theta) - ||G theta||^2/2; check ``converged`` on the result."""
    _check_penalty(spec, penalty)
    g2 = penalty.g_sq

    def fun(th):
        val, gr, hs = models.loglik_all(spec, data, th)
        return val - 0.5 * th @ g2 @ th, gr - g2 @ th, g2 - hs

    start = np.zeros(spec.p) if theta0 is None else theta0
    return _newton(fun, start, tol_grad, max_iter)


def population_target(spec: ModelSpec, penalty: PenaltySpec, tol_grad: float = 1e-9,
                      max_iter: int = 200) -> np.ndarray:
    """theta*_G, the maximizer of E L(theta) - ||G theta||^2/2."""
    _check_penalty(spec, penalty)
    g2 = penalty.g_sq

    def fun(th):
        val, gr, hs = models.expected_all(spec, th)
        return val - 0.5 * th @ g2 @ th, gr - g2 @ th, g2 - hs

    res = _newton(fun, spec.theta_star, tol_grad, max_iter)
    if not res.converged:
        raise NotConverged(f"population target did not converge (grad norm {res.final_grad_norm:.3e})", res)
    return res.theta_hat


class Geometry(NamedTuple):
    """D_G^2 at theta*_G together with D_G and D_G^-1 from one decomposition."""

    theta_star_g: np.ndarray
    d_g_sq: np.ndarray
    d_g: np.ndarray
    d_g_inv: np.ndarray


def geometry(spec: ModelSpec, penalty: PenaltySpec, theta_star_g=None) -> Geometry:
    if theta_star_g is None:
        theta_star_g = population_target(spec, penalty)
    d2 = as_sym(-models.expected_hessian(spec, theta_star_g) + penalty.g_sq)
    dec = sym_eig(d2)
    lam = dec.eigenvalues
    if not (lam[-1] > 0 and lam[0] > 1e-12 * lam[-1]):
        raise SingularMatrix("D_G^2 is not positive definite")
    q = dec.eigenvectors
    d = SpectralDecomp(np.sqrt(lam), q).reconstruct()
    dinv = SpectralDecomp(1.0 / np.sqrt(lam), q).reconstruct()
    return Geometry(np.asarray(theta_star_g, dtype=float), d2, d, dinv)


def penalized_grad(spec, data, penalty, theta) -> np.ndarray:
    return models.grad(spec, data, theta) - penalty.g_sq @ theta


def penalized_loglik(spec, data, penalty, theta) -> float:
    th = np.asarray(theta, dtype=float)
    return float(models.loglik(spec, data, th) - 0.5 * th @ penalty.g_sq @ th)


def score_xi(spec: ModelSpec, data: Dataset, theta_star_g, penalty: PenaltySpec,
             geom: Optional[Geometry] = None) -> np.ndarray:
    geom = geom or geometry(spec, penalty, theta_star_g)
    return geom.d_g_inv @ penalized_grad(spec, data, penalty, geom.theta_star_g)


class ExpansionDiagnostics(NamedTuple):
    xi_g: np.ndarray
    fisher_residual: float
    wilks_residual: float
    sqrt_wilks_residual: float
    excess: float
    xi_norm: float


def expansion_diagnostics(spec: ModelSpec, data: Dataset, penalty: PenaltySpec,
                          geom: Optional[Geometry] = None, fit: Optional[FitResult] = None,
                          tol_grad: float = 1e-9) -> ExpansionDiagnostics:
    """Fisher and Wilks residuals of one sample."""
    geom = geom or geometry(spec, penalty)
    fit = fit or fit_pmle(spec, data, penalty, tol_grad=tol_grad, theta0=geom.theta_star_g)
    if not fit.converged:
        raise NotConverged(f"fit did not converge (grad norm {fit.final_grad_norm:.3e})", fit)
    xi = score_xi(spec, data, geom.theta_star_g, penalty, geom)
    xi_norm = float(np.linalg.norm(xi))
    excess = float(penalized_loglik(spec, data, penalty, fit.theta_hat)
                   - penalized_loglik(spec, data, penalty, geom.theta_star_g))
    if excess < -1e-9:
        raise SolverInconsistency(f"fitted value is below the target by {-excess:.3e}")
    fisher = float(np.linalg.norm(geom.d_g @ (fit.theta_hat - geom.theta_star_g) - xi))
    wilks = abs(2.0 * excess - xi_norm**2)
    sqrt_wilks = abs(math.sqrt(2.0 * max(excess, 0.0)) - xi_norm)
    return ExpansionDiagnostics(xi, fisher, wilks, sqrt_wilks, excess, xi_norm)


RFunc = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class BoundParams:
    """Constants of the local conditions; delta_r and b_r are r-maps or constants."""

    delta_r: RFunc
    b_r: RFunc
    nu0: float = 1.0
    g: float = math.inf
    omega: float = 0.0
    a_g: float = 1.0
    lambda_gp: float = 1.0

    def delta(self, r: float) -> float:
        return float(self.delta_r(r) if callable(self.delta_r) else self.delta_r)

    def b(self, r: float) -> float:
        return float(self.b_r(r) if callable(self.b_r) else self.b_r)

    @property
    def tail(self) -> TailParams:
        return TailParams(self.nu0, self.g)


def s_matrix(v2_sq, geom: Geometry):
    """(S, a_G) with S^-2 = a_G^-2 D_G^-1 V_2^2 D_G^-1 and a_G^2 its top eigenvalue."""
    m = as_sym(geom.d_g_inv @ as_sym(v2_sq) @ geom.d_g_inv)
    dec = sym_eig(m)
    lam = dec.eigenvalues
    if not lam[0] > 1e-12 * lam[-1] or lam[-1] <= 0:
        raise SingularMatrix("D_G^-1 V_2^2 D_G^-1 must be positive definite")
    a_g = math.sqrt(lam[-1])
    return SpectralDecomp(a_g / np.sqrt(lam), dec.eigenvectors).reconstruct(), a_g


def identifiability(v0_sq, v2_sq, geom: Geometry):
    """Smallest (lambda_G, a_G) with lambda_G^2 D_G^2 >= V_0^2 and a_G^2 D_G^2 >= V_2^2."""
    lam0 = sym_eig(geom.d_g_inv @ as_sym(v0_sq) @ geom.d_g_inv, psd=True).eigenvalues[-1]
    lam2 = sym_eig(geom.d_g_inv @ as_sym(v2_sq) @ geom.d_g_inv, psd=True).eigenvalues[-1]
    return math.sqrt(lam0), math.sqrt(lam2)


def _q_entropy(s_mat) -> EntropyBudget:
    return penalized_entropy(s_mat).scaled(2.0)


def q_quantile(x: float, bp: BoundParams, s_mat) -> float:
    return zz_quantile(x, _q_entropy(s_mat), bp.tail)


def diamond(x: float, bp: BoundParams, r_g: float, s_mat) -> float:
    """{delta(r_G) + 6 nu0 a_G q_Q(x) omega} r_G."""
    if bp.omega == 0.0:
        return bp.delta(r_g) * r_g
    return (bp.delta(r_g) + 6.0 * bp.nu0 * bp.a_g * q_quantile(x, bp, s_mat) * bp.omega) * r_g


def r_grid(start: float) -> np.ndarray:
    k = int(math.floor(math.log(R_GRID_MAX / start) / math.log(R_GRID_RATIO)))
    return start * R_GRID_RATIO ** np.arange(max(k, 0) + 1)


def solve_r_g(x: float, bp: BoundParams, qf: QuadFormSpec, s_mat=None) -> float:
    """Smallest grid radius r with b(r) r >= 2 {z_G(x) + rho_G(r, x)} from r onward."""
    z = quad_quantile(qf, x)
    grid = r_grid(2.0 * z)
    br = np.array([bp.b(r) for r in grid]) * grid
    ent = _q_entropy(s_mat) if (bp.omega > 0 and s_mat is not None) else None
    if bp.omega > 0 and ent is None:
        raise InvalidInput("a positive omega needs the S matrix")

    def radius(r_g: float) -> float:
        if ent is None:
            rho = np.zeros_like(grid)
        else:
            rho = np.array([6.0 * bp.nu0 * bp.a_g * bp.omega * zz_quantile(x + math.log(2.0 * r / r_g), ent, bp.tail)
                            for r in grid])
        bad = np.flatnonzero(br < 2.0 * (z + rho))
        if bad.size == 0:
            return float(grid[0])
        if bad[-1] == grid.size - 1:
            raise NoConcentrationRadius(f"no radius up to {R_GRID_MAX:g} satisfies the concentration condition")
        return float(grid[bad[-1] + 1])

    r_g = float(grid[0])
    for _ in range(FIXED_POINT_ITERS):
        nxt = radius(r_g)
        if abs(nxt - r_g) <= 1e-6 * r_g:
            return nxt
        r_g = nxt
    raise NoConcentrationRadius("fixed-point iteration for r_G did not settle")


def _sphere(geom: Geometry, r: float, nsamples: int, seed, ball: bool = False) -> np.ndarray:
    """Rows theta with ||D_G (theta - theta*_G)|| = r (or <= r with ball=True)."""
    rng = np.random.default_rng(seed)
    p = geom.d_g.shape[0]
    u = rng.standard_normal((nsamples, p))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    if ball:
        u *= rng.random((nsamples, 1)) ** (1.0 / p)
    return geom.theta_star_g + r * u @ geom.d_g_inv


def estimate_delta_l0g(spec: ModelSpec, penalty: PenaltySpec, r: float, nsamples: int = DEFAULT_SAMPLES,
                       seed=0, geom: Optional[Geometry] = None) -> float:
    """Sampled max of ||D_G^-1 D_G^2(theta) D_G^-1 - I|| on the D_G-sphere of radius r.

    A lower estimate of delta_G(r): the true value is a supremum.
    """
    if not r > 0:
        raise InvalidInput("r must be positive")
    if spec.family == "gaussian-linear":
        return 0.0  # constant Hessian
    return float(np.max(delta_samples(spec, penalty, r, nsamples, seed, geom)))


def delta_samples(spec: ModelSpec, penalty: PenaltySpec, r: float, nsamples: int = DEFAULT_SAMPLES,
                  seed=0, geom: Optional[Geometry] = None) -> np.ndarray:
    """Per-sample ||D_G^-1 D_G^2(theta) D_G^-1 - I|| on the D_G-sphere of radius r."""
    if not r > 0:
        raise InvalidInput("r must be positive")
    geom = geom or geometry(spec, penalty)
    th = _sphere(geom, r, nsamples, seed)
    x = spec.design
    w = -models.expected_terms(spec, x @ th.T).d2  # n x m curvature weights
    z = x @ geom.d_g_inv
    gz = geom.d_g_inv @ penalty.g_sq @ geom.d_g_inv
    m = np.einsum("ni,nk,nj->kij", z, w, z, optimize=True) + gz - np.eye(spec.p)
    # batched symmetric eigenvalues for the sample loop
    ev = np.linalg.eigvalsh(m)
    return np.max(np.abs(ev), axis=1)


def _expected_pen(spec, penalty, thetas: np.ndarray) -> np.ndarray:
    ell = models.expected_terms(spec, spec.design @ thetas.T).ell.sum(axis=0)
    return ell - 0.5 * np.einsum("ki,ij,kj->k", thetas, penalty.g_sq, thetas)


def estimate_b_llg(spec: ModelSpec, penalty: PenaltySpec, r: float, nsamples: int = DEFAULT_SAMPLES,
                   seed=0, geom: Optional[Geometry] = None) -> float:
    """Sampled min of -2 E L_G(theta, theta*_G) / r^2 on the D_G-sphere of radius r."""
    if not r > 0:
        raise InvalidInput("r must be positive")
    if spec.family == "gaussian-linear":
        return 1.0  # E L_G is exactly quadratic with curvature D_G^2
    geom = geom or geometry(spec, penalty)
    th = _sphere(geom, r, nsamples, seed)
    diff = _expected_pen(spec, penalty, th) - _expected_pen(spec, penalty, geom.theta_star_g[None, :])[0]
    return float(np.min(-2.0 * diff / r**2))


def _grad_batch(spec, data, penalty, thetas: np.ndarray) -> np.ndarray:
    x = spec.design
    pt = models.point_terms(spec, data.responses[:, None], x @ thetas.T)
    return (x.T @ pt.d1).T - thetas @ penalty.g_sq


def _loglik_batch(spec, data, penalty, thetas: np.ndarray) -> np.ndarray:
    pt = models.point_terms(spec, data.responses[:, None], spec.design @ thetas.T)
    return pt.ell.sum(axis=0) - 0.5 * np.einsum("ki,ij,kj->k", thetas, penalty.g_sq, thetas)


def linear_approx_error(spec: ModelSpec, data: Dataset, penalty: PenaltySpec, r: float,
                        nsamples: int = DEFAULT_SAMPLES, seed=0, geom: Optional[Geometry] = None) -> float:
    """Sampled sup over the D_G-ball of ||D_G^-1 {grad L_G(theta) - grad L_G(theta*_G)} + D_G (theta - theta*_G)||."""
    if not r > 0:
        raise InvalidInput("r must be positive")
    geom = geom or geometry(spec, penalty)
    th = _sphere(geom, r, nsamples, seed, ball=True)
    g0 = penalized_grad(spec, data, penalty, geom.theta_star_g)
    chi = (_grad_batch(spec, data, penalty, th) - g0) @ geom.d_g_inv + (th - geom.theta_star_g) @ geom.d_g
    return float(np.max(np.linalg.norm(chi, axis=1)))


class QuadApprox(NamedTuple):
    sup_normalized: float
    sup_absolute: float


def quad_approx_error(spec: ModelSpec, data: Dataset, penalty: PenaltySpec, r: float,
                      nsamples: int = DEFAULT_SAMPLES, seed=0, geom: Optional[Geometry] = None) -> QuadApprox:
    """Sampled sups of |alpha(theta, theta0)| (raw and over ||D_G(theta - theta0)||) for pairs in the ball.

    alpha(theta, theta0) = L_G(theta) - L_G(theta0) - (theta - theta0)^T grad L_G(theta0)
    + ||D_G (theta - theta0)||^2 / 2.
    """
    if not r > 0:
        raise InvalidInput("r must be positive")
    geom = geom or geometry(spec, penalty)
    rng = np.random.default_rng(seed)
    s1, s2 = rng.integers(0, 2**63, size=2)
    th = _sphere(geom, r, nsamples, s1, ball=True)
    th0 = _sphere(geom, r, nsamples, s2, ball=True)
    d = th - th0
    dn = np.linalg.norm(d @ geom.d_g, axis=1)
    alpha = (_loglik_batch(spec, data, penalty, th) - _loglik_batch(spec, data, penalty, th0)
             - np.einsum("ki,ki->k", d, _grad_batch(spec, data, penalty, th0)) + 0.5 * dn**2)
    a = np.abs(alpha)
    keep = dn > 0
    norm = float(np.max(a[keep] / dn[keep])) if keep.any() else 0.0
    return QuadApprox(norm, float(np.max(a)))


class RiskDecomposition(NamedTuple):
    bias_sq: float
    variance_trace: float
    r_risk: float
    diamond_star: float
    risk_bound: float


def risk_decomposition(spec: ModelSpec, penalty: PenaltySpec, w, bp: BoundParams, r_g: float,
                       s_mat=None, geom: Optional[Geometry] = None, v0_sq=None) -> RiskDecomposition:
    """Bias-variance split of E||W (theta~ - theta*)||^2 and its bound."""
    geom = geom or geometry(spec, penalty)
    w = as_sym(w)
    if not loewner_leq(w @ w, geom.d_g_sq, tol=1e-10):
        raise InvalidWeightOrder("need W^2 <= D_G^2")
    if v0_sq is None:
        v0_sq = models.info_matrices(spec, geom.theta_star_g).v0_sq
    bias = w @ (geom.theta_star_g - spec.theta_star)
    dinv2 = geom.d_g_inv @ geom.d_g_inv
    var = float(np.trace(w @ dinv2 @ as_sym(v0_sq) @ dinv2 @ w))
    r_risk = float(bias @ bias) + var
    star = bp.delta(r_g) * r_g
    if bp.omega > 0:
        if s_mat is None:
            raise InvalidInput("a positive omega needs the S matrix")
        e = _q_entropy(s_mat)
        core = e.q1 + (0.0 if math.isinf(bp.g) else e.q2 / bp.g) + 4.0
        star += 6.0 * bp.nu0 * bp.a_g * r_g * core * bp.omega
    star *= 4.0
    return RiskDecomposition(float(bias @ bias), var, r_risk, star, (math.sqrt(r_risk) + star) ** 2)
