"""Deviation quantiles for ||xi_G||^2 and the effective dimension p_G."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GConstraintViolated, InvalidInput, InvalidSmoothness
from .numerics import as_sym, inv_sqrtm_pd, sym_eig

MU_C = 2.0 / 3.0


@dataclass(frozen=True)
class QuadFormSpec:
    b_matrix: np.ndarray
    p_g: float
    v_g: float
    lambda_g: float
    g: float
    mu_c: float
    gamma_c: float
    x_c: float
    y_c: float


def quadform_from_b(b, g: float = math.inf) -> QuadFormSpec:
    """Derived constants for a given B_G; g may be math.inf."""
    b = as_sym(b)
    lam = sym_eig(b, psd=True).eigenvalues
    p_g = float(np.sum(lam))
    v_g = math.sqrt(2.0 * float(np.sum(lam**2)))
    lam_max = float(lam[-1])
    if math.isinf(g):
        return QuadFormSpec(b, p_g, v_g, lam_max, g, MU_C, math.inf, math.inf, math.inf)
    if not g > 0:
        raise GConstraintViolated(f"g must be positive, got {g}")
    if g * g < 2.0 * p_g:
        raise GConstraintViolated(f"need g^2 >= 2 p_G, got g^2 = {g * g:.6g}, p_G = {p_g:.6g}")
    if MU_C * lam_max**2 >= 1.0:
        raise GConstraintViolated(f"need mu_c lambda_max^2 < 1, got lambda_max = {lam_max:.6g}")
    logdet = float(np.sum(np.log1p(-MU_C * lam**2)))
    x_c = 0.5 * (g * g / MU_C - p_g + logdet)
    gamma_c = math.sqrt(g * g - MU_C * p_g)
    y_c = math.sqrt(p_g + 6.0 * lam_max * x_c)
    return QuadFormSpec(b, p_g, v_g, lam_max, g, MU_C, gamma_c, x_c, y_c)


def build_quadform(d_g_sq, v0_sq, g: float = math.inf) -> QuadFormSpec:
    """QuadFormSpec for B_G = D_G^-1 V_0^2 D_G^-1."""
    dinv = inv_sqrtm_pd(d_g_sq)
    return quadform_from_b(dinv @ as_sym(v0_sq) @ dinv, g)


def quad_quantile(spec: QuadFormSpec, x: float, mode: str = "full") -> float:
    """Level z_G(x) for ||xi_G||, piecewise over three regimes in full mode."""
    if not x > 0:
        raise InvalidInput(f"x must be positive, got {x}")
    p, lam, v = spec.p_g, spec.lambda_g, spec.v_g
    if mode == "simple":
        return math.sqrt(p + 6.0 * x * lam)
    if mode != "full":
        raise InvalidInput(f"unknown mode {mode!r}")
    if lam == 0.0 or x <= v / (18.0 * lam):
        return math.sqrt(p + 2.0 * v * math.sqrt(x))
    if x <= spec.x_c:
        return math.sqrt(p + 6.0 * lam * x)
    return spec.y_c + 2.0 * (x - spec.x_c) / spec.gamma_c


def quad_tail_bound(spec: QuadFormSpec, x: float) -> float:
    if not x > 0:
        raise InvalidInput(f"x must be positive, got {x}")
    if math.isinf(spec.x_c):
        return 2.0 * math.exp(-x)
    return 2.0 * math.exp(-x) + 8.4 * math.exp(-spec.x_c)


def effective_dimension(d0_sq, g_sq, v0_sq) -> float:
    """p_G = tr(D_G^-1 V_0^2 D_G^-1) with D_G^2 = D_0^2 + G^2."""
    dinv = inv_sqrtm_pd(as_sym(d0_sq) + as_sym(g_sq))
    return float(np.trace(dinv @ as_sym(v0_sq) @ dinv))


def effdim_block(p0: int, p1: int, g: float, sigma: float) -> float:
    if p0 < 0 or p1 < 0 or not sigma > 0:
        raise InvalidInput("need p0, p1 >= 0 and sigma > 0")
    return p0 + p1 / (1.0 + g * g / sigma**2)


def effdim_sobolev(p: int, L: float, beta: float, sigma: float) -> float:
    if not beta > 0.5:
        raise InvalidSmoothness(f"beta must exceed 1/2, got {beta}")
    if p < 0 or not L > 0 or not sigma > 0:
        raise InvalidInput("need p >= 0, L > 0, sigma > 0")
    j = np.arange(1, p + 1, dtype=float)
    return float(np.sum(1.0 / (1.0 + L**2 * j ** (2.0 * beta) / sigma**2)))


def effdim_inverse(v, d: float, g) -> float:
    v = np.asarray(v, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if v.shape != g.shape:
        raise InvalidInput(f"length mismatch: {v.size} noise values vs {g.size} penalties")
    if d < 0:
        raise InvalidInput("d must be nonnegative")
    den = d * d + g * g + v * v
    if np.any(den <= 0):
        raise InvalidInput("every term needs d^2 + g_j^2 + v_j^2 > 0")
    return float(np.sum(v * v / den))


# Matrices whose trace formula reproduces each closed form above.

def block_matrices(p0: int, p1: int, g: float, sigma: float):
    p = p0 + p1
    d0 = sigma**2 * np.eye(p)
    g_sq = np.diag(np.r_[np.zeros(p0), np.full(p1, g * g)])
    return d0, g_sq, d0.copy()


def sobolev_matrices(p: int, L: float, beta: float, sigma: float):
    j = np.arange(1, p + 1, dtype=float)
    d0 = sigma**2 * np.eye(p)
    return d0, np.diag((L * j**beta) ** 2), d0.copy()


def inverse_matrices(v, d: float, g):
    v2 = np.asarray(v, dtype=float) ** 2
    g2 = np.asarray(g, dtype=float) ** 2
    # the closed form's denominator d^2 + g^2 + v^2 means D_0^2 = d^2 I + V_0^2
    return np.diag(d * d + v2), np.diag(g2), np.diag(v2)
