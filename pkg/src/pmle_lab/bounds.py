"""Chaining entropy constants (Q1, Q2) and the tail quantiles built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    InvalidEntropySequence,
    InvalidLemmaInput,
    InvalidPenalizedShape,
    InvalidWeight,
    OutOfValidRange,
)
from .numerics import as_sym, operator_norm, sym_eig

BALL_SERIES_K = 60
RULES = ("auto", "additive", "piecewise")
FACTORS = {"scalar": 3.0, "vector": 6.0}


@dataclass(frozen=True)
class EntropyBudget:
    q1: float
    q2: float

    def __post_init__(self):
        if not (self.q1 >= 0 and self.q2 >= 0):
            raise InvalidEntropySequence(f"entropy constants must be nonnegative, got ({self.q1}, {self.q2})")

    def __add__(self, other: "EntropyBudget") -> "EntropyBudget":
        return EntropyBudget(self.q1 + other.q1, self.q2 + other.q2)

    def scaled(self, k: float) -> "EntropyBudget":
        return EntropyBudget(k * self.q1, k * self.q2)


@dataclass(frozen=True)
class TailParams:
    nu0: float = 1.0
    g: float = math.inf

    def __post_init__(self):
        if not self.nu0 >= 1:
            raise OutOfValidRange(f"nu0 must be >= 1, got {self.nu0}")
        if not self.g > 0:
            raise OutOfValidRange(f"g must be positive, got {self.g}")


def c1_const(p: int) -> float:
    return 2.7 if p == 1 else 2.0


def series_weights(n: int) -> np.ndarray:
    """c_0 = 1/3, c_k = 2^(1-k)/3; the infinite sequence sums to one."""
    k = np.arange(n, dtype=float)
    c = 2.0 ** (1.0 - k) / 3.0
    c[0] = 1.0 / 3.0
    return c


def entropy_series(log2M: Sequence[float]) -> EntropyBudget:
    """Weighted series Q1 = sum c_k sqrt(2 log 2M_k), Q2 = 2 sum c_k log 2M_k."""
    a = np.asarray(log2M, dtype=float).ravel()
    if a.size == 0:
        raise InvalidEntropySequence("empty sequence")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise InvalidEntropySequence("terms must be finite and nonnegative")
    c = series_weights(a.size)
    return EntropyBudget(float(c @ np.sqrt(2.0 * a)), float(2.0 * (c @ a)))


def ball_log2M(p: int, k: int) -> float:
    """log of the bound on 2M_k for the unit ball in R^p."""
    if p < 1 or k < 0:
        raise OutOfValidRange("need p >= 1 and k >= 0")
    if k == 0:
        return (1 + p) * math.log(2.0)
    return (2 + k * p) * math.log(2.0) - p * math.log1p(-(2.0 ** (-k - 1)))


def ball_series_entropy(p: int, kmax: int = BALL_SERIES_K) -> EntropyBudget:
    return entropy_series([ball_log2M(p, k) for k in range(kmax + 1)])


def ball_entropy(p: int) -> EntropyBudget:
    if p < 1:
        raise OutOfValidRange("p must be >= 1")
    q2 = 2.0 * c1_const(p) * p
    return EntropyBudget(math.sqrt(q2), q2)


def vector_norm_entropy(p: int, q: int) -> EntropyBudget:
    if p < 1 or q < 1:
        raise OutOfValidRange("p and q must be >= 1")
    q2 = 2.0 * 2.0 * (p + q)
    return EntropyBudget(math.sqrt(q2), q2)


def penalized_entropy(b) -> EntropyBudget:
    """Entropy of the penalized set, for a shape matrix B with eigenvalues >= 1."""
    lam = sym_eig(b).eigenvalues
    if lam[0] < 1.0 - 1e-10:
        raise InvalidPenalizedShape(f"B must have eigenvalues >= 1, smallest is {lam[0]:.6g}")
    lam = np.maximum(lam, 1.0)
    q2 = 1.0 + 8.0 * float(np.sum(1.0 / lam)) / 3.0
    lg = np.maximum(np.log(lam**2), 0.0)
    q1 = 1.0 + 2.0 * math.sqrt(float(np.sum(lg**2 / lam**2)))
    return EntropyBudget(q1, q2)


def weight_entropy(f_sq) -> EntropyBudget:
    """Q(F) for a weight with 0 <= F <= I, F substituted for B^-1.

    Q2(F) = 1 + 8/3 tr F and Q1(F) = 1 + 2 sqrt(tr F^2 log_+^2 F^-2).
    """
    lam = sym_eig(f_sq, psd=True).eigenvalues
    if lam[-1] > 1.0 + 1e-12:
        raise InvalidWeight(f"weight must satisfy ||F^2|| <= 1, got {lam[-1]:.6g}")
    lam = np.clip(lam, 0.0, 1.0)
    f = np.sqrt(lam)
    pos = lam > 0
    terms = np.zeros_like(lam)
    terms[pos] = lam[pos] * np.log(1.0 / lam[pos]) ** 2
    return EntropyBudget(1.0 + 2.0 * math.sqrt(float(np.sum(terms))), 1.0 + 8.0 * float(np.sum(f)) / 3.0)


def _check_weight_norm(f_sq) -> None:
    nrm = operator_norm(f_sq)
    if not (0.5 - 1e-12 <= nrm <= 1.0 + 1e-12):
        raise InvalidWeight(f"need 1/2 <= ||F^2|| <= 1, got {nrm:.6g}")


def weighted_norm_entropy(f_sq, p: int) -> EntropyBudget:
    _check_weight_norm(f_sq)
    return weight_entropy(f_sq) + ball_entropy(p)


def constraint_weight(s) -> np.ndarray:
    """W^2 = I ^ S^-2 (spectral minimum); S = 0 gives the identity."""
    dec = sym_eig(s)
    s2 = dec.eigenvalues**2
    w2 = np.where(s2 > 1.0, 1.0 / np.where(s2 > 1.0, s2, 1.0), 1.0)
    q = dec.eigenvectors
    return as_sym((q * w2) @ q.T)


def constrained_norm_entropy(f_sq, w_sq) -> EntropyBudget:
    _check_weight_norm(f_sq)
    return weight_entropy(f_sq) + weight_entropy(w_sq)


def _check_x(x: float) -> None:
    if not x >= 0.5:
        raise OutOfValidRange(f"x must be >= 1/2, got {x}")


def _additive(x: float, e: EntropyBudget, g: float) -> float:
    return e.q1 + math.sqrt(2.0 * x) + (x / g**2 + 1.0) * e.q2 / g


def _piecewise(x: float, e: EntropyBudget, g: float) -> float:
    if e.q2 + 2.0 * x <= g * g:
        return math.sqrt(e.q2 + 2.0 * x)
    return x / g + (e.q2 / g + g) / 2.0


def zz_quantile(x: float, e: EntropyBudget, t: TailParams, rule: str = "auto") -> float:
    """Level exceeded by the normalized supremum with probability at most e^-x."""
    _check_x(x)
    if rule not in RULES:
        raise OutOfValidRange(f"unknown rule {rule!r}")
    if math.isinf(t.g):
        return e.q1 + math.sqrt(2.0 * x)
    if rule == "additive":
        return _additive(x, e, t.g)
    if rule == "piecewise":
        return _piecewise(x, e, t.g)
    return min(_additive(x, e, t.g), _piecewise(x, e, t.g))


class SubexpSum(NamedTuple):
    q1: float
    q2: float
    quantile: float
    mean_bound: Optional[float]
    l2_bound: Optional[float]


def _moment_core(e: EntropyBudget, g: float) -> float:
    if math.isinf(g):
        return e.q1
    if g * g < e.q2 + 1.0:
        raise InvalidLemmaInput(f"moment bounds need g^2 >= Q2 + 1 (g={g}, Q2={e.q2})")
    return e.q1 + e.q2 / g


def subexp_sum_quantile(c, q, t: TailParams, x: float) -> SubexpSum:
    """Quantile and moment bounds for S = sum c_k zeta_k.

    The moment fields are None when g^2 < Q2 + 1; the quantile remains valid.
    """
    c = np.asarray(c, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if c.shape != q.shape or c.size == 0:
        raise InvalidLemmaInput("weights and levels must be non-empty and of equal length")
    if np.any(c < 0) or abs(c.sum() - 1.0) > 1e-12:
        raise InvalidLemmaInput(f"weights must be nonnegative and sum to 1, sum is {c.sum()!r}")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise InvalidLemmaInput("levels must be finite and nonnegative")
    if np.exp(-q).sum() > 1.0 + 1e-12:
        raise InvalidLemmaInput(f"need sum exp(-q_k) <= 1, got {np.exp(-q).sum():.6g}")
    e = EntropyBudget(float(c @ q), float(c @ q**2))
    quant = zz_quantile(x, e, t)
    try:
        core = _moment_core(e, t.g)
    except InvalidLemmaInput:
        return SubexpSum(e.q1, e.q2, quant, None, None)
    return SubexpSum(e.q1, e.q2, quant, core + 3.0, core + 4.0)


def sup_bound(r: float, t: TailParams, e: EntropyBudget, x: float, factor="scalar") -> float:
    """Deviation level for the supremum over a ball of radius r."""
    if not r > 0:
        raise OutOfValidRange("r must be positive")
    k = FACTORS[factor] if isinstance(factor, str) else float(factor)
    if k not in FACTORS.values():
        raise OutOfValidRange(f"factor must be one of {FACTORS}")
    return k * t.nu0 * r * zz_quantile(x, e, t)


class MomentBounds(NamedTuple):
    mean_bound: float
    l2_bound: float


def moment_bounds(r0: float, t: TailParams, e: EntropyBudget) -> MomentBounds:
    if not r0 > 0:
        raise OutOfValidRange("r0 must be positive")
    core = _moment_core(e, t.g)
    s = 3.0 * t.nu0 * r0
    return MomentBounds(s * (core + 3.0), s * (core + 4.0))


class SlicingDrift(NamedTuple):
    f_value: float
    uniform_prob_bound: float


def slicing_drift(r: float, r0: float, x: float, t: TailParams, e: EntropyBudget, rho: float) -> SlicingDrift:
    if not r0 > 0 or not r >= r0:
        raise OutOfValidRange(f"need r >= r0 > 0, got r={r}, r0={r0}")
    if not 0 < rho < 1:
        raise OutOfValidRange("rho must lie in (0, 1)")
    _check_x(x)
    f = 3.0 * t.nu0 * r * zz_quantile(x + math.log(r / r0), e, t)
    return SlicingDrift(f, rho / (1.0 - rho) * math.exp(-x))
