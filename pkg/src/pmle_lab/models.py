"""I.i.d. regression families: likelihoods, expectations, information matrices.

Log-likelihoods drop additive constants that do not depend on theta (the
Gaussian normalizer, log y! for Poisson).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .errors import InvalidInput, LinkOverflow
from .numerics import as_sym, inv_pd, inv_sqrtm_pd, sym_eig

FAMILIES = ("gaussian-linear", "logistic", "poisson", "gaussian-nonlinear")
POISSON_CLAMP = 30.0
SIGMOID_CURV_SUP = 1.0 / (6.0 * math.sqrt(3.0))  # sup |d^2/dt^2 expit(t)|


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: str
    design: np.ndarray
    theta_star: np.ndarray
    noise_sigma: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInput(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        x = np.array(self.design, dtype=float, ndmin=2)
        th = np.array(self.theta_star, dtype=float).ravel()
        n, p = x.shape
        if not n >= p >= 1:
            raise InvalidInput(f"need n >= p >= 1, got n={n}, p={p}")
        if th.size != p:
            raise InvalidInput(f"theta_star has length {th.size}, design has {p} columns")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(th))):
            raise InvalidInput("design and theta_star must be finite")
        lam = sym_eig(x.T @ x).eigenvalues
        if not lam[0] > 1e-20 * lam[-1]:
            raise InvalidInput("design is not of full column rank")
        if not self.noise_sigma >= 0:
            raise InvalidInput("noise_sigma must be nonnegative")
        x.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "theta_star", th)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "design": self.design.tolist(),
            "theta_star": self.theta_star.tolist(),
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        unknown = set(d) - {"family", "design", "theta_star", "noise_sigma"}
        if unknown:
            raise InvalidInput(f"unknown model keys: {sorted(unknown)}")
        return cls(d["family"], np.asarray(d["design"]), np.asarray(d["theta_star"]), float(d.get("noise_sigma", 1.0)))


@dataclass(frozen=True, eq=False)
class Dataset:
    responses: np.ndarray
    seed: Optional[int]
    spec: ModelSpec = field(repr=False)

    def __post_init__(self):
        y = np.array(self.responses, dtype=float).ravel()
        if y.size != self.spec.n:
            raise InvalidInput(f"{y.size} responses for {self.spec.n} design rows")
        fam = self.spec.family
        if fam == "logistic" and not np.all((y == 0) | (y == 1)):
            raise InvalidInput("logistic responses must be 0 or 1")
        if fam == "poisson" and not np.all((y >= 0) & (y == np.floor(y))):
            raise InvalidInput("poisson responses must be nonnegative integers")
        y.setflags(write=False)
        object.__setattr__(self, "responses", y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "response"])
        for i, v in enumerate(self.responses):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, spec: ModelSpec, seed: Optional[int] = None) -> "Dataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        y = np.empty(len(rows))
        for r in rows:
            y[int(r["row"])] = float(r["response"])
        return cls(y, seed, spec)


def simulate(spec: ModelSpec, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    t = spec.design @ spec.theta_star
    fam = spec.family
    if fam == "gaussian-linear":
        y = t + spec.noise_sigma * rng.standard_normal(spec.n)
    elif fam == "gaussian-nonlinear":
        y = expit(t) + spec.noise_sigma * rng.standard_normal(spec.n)
    elif fam == "logistic":
        y = (rng.random(spec.n) < expit(t)).astype(float)
    else:
        _check_poisson(t)
        y = rng.poisson(np.exp(t)).astype(float)
    return Dataset(y, seed, spec)


def _check_poisson(t: np.ndarray) -> None:
    if np.any(np.abs(t) > POISSON_CLAMP):
        raise LinkOverflow(f"poisson linear predictor exceeds +-{POISSON_CLAMP}: max |t| = {np.abs(t).max():.4g}")


def _sigma2(spec: ModelSpec) -> float:
    if not spec.noise_sigma > 0:
        raise InvalidInput("likelihood needs noise_sigma > 0")
    return spec.noise_sigma**2


def _sigmoid_derivs(t):
    mu = expit(t)
    d1 = mu * (1.0 - mu)
    return mu, d1, d1 * (1.0 - 2.0 * mu)


class PointTerms(NamedTuple):
    """Per-observation log-likelihood and its first two t-derivatives."""

    ell: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def point_terms(spec: ModelSpec, y: np.ndarray, t: np.ndarray) -> PointTerms:
    fam = spec.family
    if fam == "gaussian-linear":
        s2 = _sigma2(spec)
        r = y - t
        return PointTerms(-0.5 * r * r / s2, r / s2, np.full(np.shape(r), -1.0 / s2))
    if fam == "logistic":
        return PointTerms(y * t - np.logaddexp(0.0, t), y - expit(t), -expit(t) * expit(-t))
    if fam == "poisson":
        _check_poisson(t)
        et = np.exp(t)
        return PointTerms(y * t - et, y - et, -et)
    s2 = _sigma2(spec)
    mu, m1, m2 = _sigmoid_derivs(t)
    r = y - mu
    return PointTerms(-0.5 * r * r / s2, r * m1 / s2, (-m1 * m1 + r * m2) / s2)


def mean_response(spec: ModelSpec, t: np.ndarray) -> np.ndarray:
    fam = spec.family
    if fam == "gaussian-linear":
        return t
    if fam == "poisson":
        _check_poisson(t)
        return np.exp(t)
    return expit(t)


def expected_terms(spec: ModelSpec, t: np.ndarray) -> PointTerms:
    """Expectations of point_terms under the true parameter.

    ``t`` has shape (n,) or (n, m) for a batch of m parameter values.
    """
    ts = spec.design @ spec.theta_star
    ts = ts.reshape(ts.shape + (1,) * (np.ndim(t) - 1))
    ey = mean_response(spec, ts)
    fam = spec.family
    if fam in ("logistic", "poisson"):
        # linear in y, so substitute E y
        return point_terms(spec, ey, t)
    s2 = _sigma2(spec)
    if fam == "gaussian-linear":
        r = ts - t
        return PointTerms(-0.5 * (r * r + s2) / s2, r / s2, np.full(np.shape(r), -1.0 / s2))
    mu, m1, m2 = _sigmoid_derivs(t)
    r = ey - mu
    return PointTerms(-0.5 * (r * r + s2) / s2, r * m1 / s2, (-m1 * m1 + r * m2) / s2)


def _assemble(x: np.ndarray, pt: PointTerms):
    return float(np.sum(pt.ell)), x.T @ pt.d1, as_sym((x.T * pt.d2) @ x)


def _theta(spec, theta):
    th = np.asarray(theta, dtype=float).ravel()
    if th.size != spec.p or not np.all(np.isfinite(th)):
        raise InvalidInput("theta must be a finite vector of length p")
    return th


def loglik_all(spec: ModelSpec, data: Dataset, theta):
    """(L, grad L, hess L) in one pass."""
    x = spec.design
    return _assemble(x, point_terms(spec, data.responses, x @ _theta(spec, theta)))


def loglik(spec, data, theta) -> float:
    return loglik_all(spec, data, theta)[0]


def grad(spec, data, theta) -> np.ndarray:
    return loglik_all(spec, data, theta)[1]


def hessian(spec, data, theta) -> np.ndarray:
    return loglik_all(spec, data, theta)[2]


def expected_all(spec: ModelSpec, theta):
    x = spec.design
    return _assemble(x, expected_terms(spec, x @ _theta(spec, theta)))


def expected_loglik(spec, theta) -> float:
    return expected_all(spec, theta)[0]


def expected_grad(spec, theta) -> np.ndarray:
    return expected_all(spec, theta)[1]


def expected_hessian(spec, theta) -> np.ndarray:
    return expected_all(spec, theta)[2]


def _bernoulli_subgauss_ratio(p: np.ndarray) -> np.ndarray:
    """Optimal sub-Gaussian variance proxy of Bernoulli(p) divided by its variance."""
    p = np.clip(p, 1e-300, 1.0 - 1e-16)
    var = p * (1.0 - p)
    near = np.abs(p - 0.5) < 1e-6
    out = np.ones_like(p)
    q = p[~near]
    proxy = (1.0 - 2.0 * q) / (2.0 * np.log((1.0 - q) / q))
    out[~near] = proxy / var[~near]
    return out


class InfoMatrices(NamedTuple):
    d0_sq: np.ndarray
    v0_sq: np.ndarray
    v2_bound: np.ndarray
    omega: float
    nu0: Optional[float]  # None where the exponential-moment constants are not computed
    g: Optional[float]


def info_matrices(spec: ModelSpec, theta_ref) -> InfoMatrices:
    """D_0^2, V_0^2, V_2^2, omega and the score's sub-Gaussian constants at theta_ref.

    Gaussian-nonlinear: the Hessian of the stochastic part is
    sum eps_i mu''(t_i)/sigma x_i x_i^T with eps_i standard normal, so with
    V_2^2 = (sup|mu''|/sigma) X^T X it is sub-Gaussian with omega equal to
    the square root of the largest leverage x_i^T (X^T X)^-1 x_i.
    """
    th = _theta(spec, theta_ref)
    x = spec.design
    t = x @ th
    ts = x @ spec.theta_star
    d0 = as_sym(-expected_hessian(spec, th))
    fam = spec.family
    if fam == "gaussian-linear":
        w = np.full(spec.n, 1.0 / _sigma2(spec))
    elif fam == "logistic":
        m = expit(ts)
        w = m * (1.0 - m)
    elif fam == "poisson":
        _check_poisson(ts)
        w = np.exp(ts)
    else:
        m1 = _sigmoid_derivs(t)[1]
        w = m1 * m1 / _sigma2(spec)
    v0 = as_sym((x.T * w) @ x)
    # fails loudly on a degenerate D_0^2
    inv_sqrtm_pd(d0)
    if fam == "gaussian-nonlinear":
        xtx = as_sym(x.T @ x)
        v2 = (SIGMOID_CURV_SUP / spec.noise_sigma) * xtx
        lev = np.einsum("ij,jk,ik->i", x, inv_pd(xtx), x)
        omega = math.sqrt(float(lev.max()))
        return InfoMatrices(d0, v0, v2, omega, 1.0, math.inf)
    if fam == "gaussian-linear":
        return InfoMatrices(d0, v0, d0.copy(), 0.0, 1.0, math.inf)
    if fam == "logistic":
        nu0 = math.sqrt(max(1.0, float(_bernoulli_subgauss_ratio(expit(ts)).max())))
        return InfoMatrices(d0, v0, d0.copy(), 0.0, nu0, math.inf)
    return InfoMatrices(d0, v0, d0.copy(), 0.0, None, None)
