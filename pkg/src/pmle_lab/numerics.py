"""Dense symmetric linear algebra: Jacobi eigensolver and spectral calculus.

Matrices are plain ``numpy`` arrays.  ``as_sym`` builds a symmetric matrix
from the upper triangle of its argument, so every matrix passing through this
module is symmetric by construction.
"""
from __future__ import annotations

import logging
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidMatrix, SingularMatrix

log = logging.getLogger(__name__)

JACOBI_RTOL = 1e-14
JACOBI_MAX_SWEEPS = 100
EPS_PD = 1e-12
PSD_CLAMP = 1e-12

SymMatrix = np.ndarray


class SpectralDecomp(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self) -> np.ndarray:
        q, lam = self.eigenvectors, self.eigenvalues
        return as_sym((q * lam) @ q.T)


def as_sym(a) -> SymMatrix:
    """Return the symmetric matrix whose upper triangle is that of ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidMatrix(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


@lru_cache(maxsize=64)
def _round_robin(n: int):
    """Disjoint (p, q) index pairs per round; each sweep visits every pair once."""
    m = n + (n % 2)
    arr = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(arr[i], arr[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return tuple(rounds)


def sym_eig(a, psd: bool = False) -> SpectralDecomp:
    """Eigendecomposition by cyclic Jacobi rotations.

    Each sweep runs through a round-robin ordering and applies all rotations
    of a round as one block-rotation matrix (the pairs are disjoint).
    With ``psd=True`` eigenvalues in ``(-1e-12 * lam_max, 0)`` are clamped to
    zero (with a logged warning); more negative ones raise ``InvalidMatrix``.
    """
    a = as_sym(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    target = JACOBI_RTOL * np.linalg.norm(a)
    rounds = _round_robin(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        if np.linalg.norm(a - np.diag(np.diag(a))) <= target:
            break
        for p, q in rounds:
            apq2 = 2.0 * a[p, q]
            d = a[q, q] - a[p, p]
            # t = tan of the rotation angle, the smaller root of t^2 + 2 t d/apq2 - 1 = 0
            den = np.abs(d) + np.hypot(d, apq2)
            t = apq2 * np.copysign(1.0, d) / (den + (den == 0.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            j = np.eye(n)
            j[p, p] = c
            j[q, q] = c
            j[p, q] = s
            j[q, p] = -s
            a = j.T @ a @ j
            a[p, q] = a[q, p] = 0.0
            v = v @ j
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    lam, v = lam[order], v[:, order]
    if psd:
        lam = _clamp_psd(lam)
    return SpectralDecomp(lam, v)


def _clamp_psd(lam: np.ndarray) -> np.ndarray:
    top = max(float(np.max(np.abs(lam))), 0.0)
    tol = PSD_CLAMP * top
    if np.any(lam < -tol):
        raise InvalidMatrix(f"matrix is not PSD: smallest eigenvalue {lam.min():.3e}")
    neg = lam < 0
    if np.any(neg):
        log.warning("clamping %d slightly negative eigenvalue(s) to 0", int(neg.sum()))
        lam = np.where(neg, 0.0, lam)
    return lam


def apply_spectral_function(a, f: Callable[[np.ndarray], np.ndarray], psd: bool = False) -> SymMatrix:
    """Return Q f(Lambda) Q^T; ``f`` acts elementwise on the eigenvalue array."""
    dec = sym_eig(a, psd=psd)
    with np.errstate(all="ignore"):
        try:
            fl = np.asarray(f(dec.eigenvalues), dtype=float)
        except (ZeroDivisionError, ValueError) as exc:
            raise SingularMatrix(f"spectral function undefined: {exc}") from exc
    if fl.shape != dec.eigenvalues.shape or not np.all(np.isfinite(fl)):
        raise SingularMatrix("spectral function is undefined at some eigenvalue")
    return SpectralDecomp(fl, dec.eigenvectors).reconstruct()


def _check_pd(lam: np.ndarray) -> None:
    top = lam[-1]
    if top <= 0 or lam[0] <= EPS_PD * top:
        raise SingularMatrix(f"matrix is not positive definite (eigenvalues {lam[0]:.3e} .. {top:.3e})")


def solve_psd(a, b) -> np.ndarray:
    """Solve ``a x = b`` for positive definite ``a`` (one refinement step)."""
    a = as_sym(a)
    b = np.asarray(b, dtype=float)
    dec = sym_eig(a)
    _check_pd(dec.eigenvalues)
    q, lam = dec.eigenvectors, dec.eigenvalues
    x = q @ ((q.T @ b) / lam)
    x = x + q @ ((q.T @ (b - a @ x)) / lam)
    return x


def operator_norm(a) -> float:
    lam = sym_eig(a).eigenvalues
    return float(max(abs(lam[0]), abs(lam[-1])))


def sqrtm_psd(a) -> SymMatrix:
    return apply_spectral_function(a, np.sqrt, psd=True)


def inv_sqrtm_pd(a) -> SymMatrix:
    dec = sym_eig(a)
    _check_pd(dec.eigenvalues)
    return SpectralDecomp(1.0 / np.sqrt(dec.eigenvalues), dec.eigenvectors).reconstruct()


def inv_pd(a) -> SymMatrix:
    dec = sym_eig(a)
    _check_pd(dec.eigenvalues)
    return SpectralDecomp(1.0 / dec.eigenvalues, dec.eigenvectors).reconstruct()


def loewner_leq(a, b, tol: float = 1e-10) -> bool:
    """``a <= b`` in PSD order, up to ``tol * (1 + ||b||)``."""
    lam = sym_eig(as_sym(b) - as_sym(a)).eigenvalues
    return bool(lam[0] >= -tol * (1.0 + operator_norm(b)))
