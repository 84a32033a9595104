"""Spectral-norm estimation for implicit symmetric operators, plus dense spectra."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .combinat import catalan
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

STALL_COUNT = 3


class SymmetricOperator(Protocol):
    dim: int

    def matvec(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class SpectralEstimate:
    norm: float
    iterations: int
    residual: float
    converged: bool
    restarts_used: int
    vector: np.ndarray | None = field(default=None, repr=False)


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of ints."""
    digest = hashlib.blake2b(repr(tuple(int(p) for p in parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rayleigh(op: SymmetricOperator, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    xx = float(x @ x)
    if xx == 0.0:
        raise InvalidArgumentError("Rayleigh quotient of the zero vector")
    return float(x @ op.matvec(x)) / xx


def _power_run(op, x, tol, max_iter):
    x = x / np.linalg.norm(x)
    prev = None
    stalls = 0
    quotient = 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        mx = op.matvec(x)
        # <x, M^2 x> = |Mx|^2 for unit x
        quotient = float(mx @ mx)
        if quotient == 0.0:
            return 0.0, it, 0.0, True, x
        if prev is not None:
            residual = abs(quotient - prev) / quotient
            stalls = stalls + 1 if residual <= tol else 0
            if stalls >= STALL_COUNT:
                return quotient, it, residual, True, x
        prev = quotient
        y = op.matvec(mx)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return quotient, it, 0.0, True, x
        x = y / ny
    return quotient, max_iter, residual, False, x


def estimate_norm(
    op: SymmetricOperator,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 3,
    seed: int = 0,
) -> SpectralEstimate:
    """Estimate the spectral norm by power iteration on ``M @ M``.

    Each restart starts from a Gaussian vector seeded by ``(seed, restart)``
    and stops once the relative change of ``|M x|^2`` stays below ``tol`` for
    three consecutive steps. The largest ``|M x|`` over restarts is returned;
    it never exceeds the true norm beyond rounding, converged or not.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    if restarts < 1 or max_iter < 1:
        raise InvalidArgumentError("need restarts >= 1 and max_iter >= 1")
    best = None
    total_iters = 0
    for k in range(restarts):
        rng = np.random.default_rng(derive_seed(seed, k))
        x0 = rng.standard_normal(op.dim)
        quotient, iters, residual, converged, x = _power_run(op, x0, tol, max_iter)
        total_iters += iters
        if best is None or quotient > best[0]:
            best = (quotient, residual, converged, x)
    quotient, residual, converged, x = best
    if not converged:
        logger.warning("power iteration did not converge in %d steps (residual %.3g)", max_iter, residual)
    return SpectralEstimate(
        norm=float(np.sqrt(quotient)),
        iterations=total_iters,
        residual=float(residual) if np.isfinite(residual) else float("inf"),
        converged=converged,
        restarts_used=restarts,
        vector=x,
    )


def top_eigenvector(op: SymmetricOperator, estimate: SpectralEstimate) -> tuple[np.ndarray, float]:
    """Resolve the sign mixture left by squared power iteration.

    ``x`` lies near the span of the eigenvectors for ``+s`` and ``-s``; one
    more matvec separates them: ``x +- Mx / s``. Returns the unit vector and
    its eigen-residual ``|Mu - (u.Mu) u|``.
    """
    x = estimate.vector
    if x is None or estimate.norm == 0.0:
        raise InvalidArgumentError("estimate carries no iterate")
    mx = op.matvec(x)
    sign = 1.0 if float(x @ mx) >= 0 else -1.0
    u = x + sign * mx / estimate.norm
    nu = np.linalg.norm(u)
    if nu < 1e-12:
        u = x
    else:
        u = u / nu
    mu = op.matvec(u)
    lam = float(u @ mu)
    residual = float(np.linalg.norm(mu - lam * u))
    return u, residual


def full_spectrum(dense: np.ndarray, symmetry_tol: float = 1e-12) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {dense.shape}")
    asym = float(np.max(np.abs(dense - dense.T))) if dense.size else 0.0
    if asym > symmetry_tol:
        raise InvalidArgumentError(f"matrix not symmetric (max asymmetry {asym:.3g})")
    return np.linalg.eigvalsh(dense)


@dataclass
class SpectralMoments:
    """Normalized even moments ``m[q-1] = mean(eigs ** (2q))`` for ``q = 1..max_q``
    and the semicircle references ``Catalan(q) * m_2 ** q``."""

    moments: list[float]
    semicircle: list[float]

    @property
    def kurtosis_ratio(self) -> float:
        """``m_4 / m_2^2``; equals 2 for the semicircle."""
        return self.moments[1] / self.moments[0] ** 2


def spectral_moments(eigs, max_q: int) -> SpectralMoments:
    eigs = np.asarray(eigs, dtype=np.float64)
    if eigs.size == 0:
        raise InvalidArgumentError("no eigenvalues")
    sq = eigs * eigs
    moments = []
    power = np.ones_like(eigs)
    for _ in range(max_q):
        power = power * sq
        moments.append(float(np.mean(power)))
    m2 = moments[0]
    semicircle = [catalan(q) * m2**q for q in range(1, max_q + 1)]
    return SpectralMoments(moments, semicircle)
