"""Detection and recovery of a planted spike through the Kikuchi spectrum."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb

import numpy as np

from .combinat import all_subsets, rank_rows
from .errors import InvalidArgumentError
from .operator import KikuchiOperator
from .spectral import derive_seed, estimate_norm, top_eigenvector
from .tensor import SymmetricTensor, sample_tensor

logger = logging.getLogger(__name__)


def _check_boolean(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or not np.all(np.abs(v) == 1.0):
        raise InvalidArgumentError("expected a vector with entries in {-1, +1}")
    return v


def signal_vector(v, ell: int) -> np.ndarray:
    """``out[rank(S)] = prod(v[i] for i in S)`` over the ell-subsets S."""
    v = _check_boolean(v)
    return np.prod(v[all_subsets(v.size, ell)], axis=1)


def planted_qform_even(n: int, ell: int, r: int, lam: float) -> float:
    """``<s, M s> / <s, s>`` for ``M = M_ell(lam v^r)`` and ``s = signal_vector(v)``.

    Every pair at symmetric difference r contributes ``lam`` and each row
    has the same number of such pairs.
    """
    if r % 2:
        raise InvalidArgumentError("planted_qform_even needs even r")
    h = r // 2
    return lam * comb(n - ell, h) * comb(ell, h)


def odd_qform_count(n: int, ell: int, r: int) -> int:
    """Number of summands per row in the odd planted quadratic form.

    Ordered disjoint halves A, B of the removed part inside I, ordered
    disjoint halves S, T of the added part outside I, and a free vertex t
    outside both I and J.
    """
    if r % 2 == 0:
        raise InvalidArgumentError("odd_qform_count needs odd r")
    h = (r - 1) // 2
    inside = comb(ell, h) * comb(ell - h, h)
    outside = comb(n - ell, h) * comb(n - ell - h, h)
    free = max(n - ell - (r - 1), 0)
    return inside * outside * free


def planted_qform_odd(n: int, ell: int, r: int, lam: float) -> float:
    return lam * lam * odd_qform_count(n, ell, r)


def planted_qform(n: int, ell: int, r: int, lam: float) -> float:
    if r % 2:
        return planted_qform_odd(n, ell, r, lam)
    return planted_qform_even(n, ell, r, lam)


def lambda_min_detectable(n: int, ell: int, r: int, norm_bound: float) -> float:
    """Smallest ``lam`` with ``planted_qform(lam) >= 2 * norm_bound``."""
    if r % 2 == 0:
        return 2.0 * norm_bound / planted_qform_even(n, ell, r, 1.0)
    return float(np.sqrt(2.0 * norm_bound / odd_qform_count(n, ell, r)))


@dataclass
class DetectionParams:
    lam: float | None = None
    norm_bound: float | None = None
    threshold: float | None = None
    calibration_trials: int = 200
    quantile: float = 0.99
    distribution: str = "gaussian"
    tol: float = 1e-6
    max_iter: int = 2000
    restarts: int = 3


@dataclass
class DetectionVerdict:
    decision: str
    measured_norm: float
    threshold_used: float
    lambda_min_detectable: float
    calibration: str

    @property
    def planted(self) -> bool:
        return self.decision == "planted"


def null_norms(n: int, r: int, ell: int, params: DetectionParams, seed: int) -> np.ndarray:
    """Norms of ``M_ell(G)`` over ``params.calibration_trials`` fresh noise tensors."""
    trials = params.calibration_trials
    if trials < 1:
        raise InvalidArgumentError("empirical calibration needs calibration_trials >= 1")
    norms = np.empty(trials)
    for k in range(trials):
        g = sample_tensor(n, r, params.distribution, derive_seed(seed, 0xCA11, k))
        est = estimate_norm(KikuchiOperator(g, ell), params.tol, params.max_iter, params.restarts, derive_seed(seed, k))
        norms[k] = est.norm
    return norms


def calibrate_threshold(n: int, r: int, ell: int, params: DetectionParams, seed: int) -> float:
    return float(np.quantile(null_norms(n, r, ell, params, seed), params.quantile))


def detect(
    tensor: SymmetricTensor,
    ell: int,
    mode: str = "empirical",
    params: DetectionParams | None = None,
    seed: int = 0,
) -> DetectionVerdict:
    """Declare ``planted`` when the Kikuchi norm strictly exceeds a threshold.

    ``empirical``: the ``params.quantile`` of null norms (``params.threshold``
    when already calibrated). ``analytic``: half the planted quadratic form
    at ``params.lam``, which defaults to the smallest detectable strength for
    the supplied ``params.norm_bound``.
    """
    params = params or DetectionParams()
    n, r = tensor.n, tensor.r
    if mode == "empirical":
        threshold = params.threshold
        if threshold is None:
            threshold = calibrate_threshold(n, r, ell, params, seed)
        bound = threshold
    elif mode == "analytic":
        if params.norm_bound is None:
            raise InvalidArgumentError("analytic detection needs params.norm_bound")
        bound = params.norm_bound
        lam = params.lam if params.lam is not None else lambda_min_detectable(n, ell, r, bound)
        threshold = planted_qform(n, ell, r, lam) / 2.0
    else:
        raise InvalidArgumentError(f"unknown threshold mode {mode!r}")
    est = estimate_norm(KikuchiOperator(tensor, ell), params.tol, params.max_iter, params.restarts, seed)
    decision = "planted" if est.norm > threshold else "null"
    return DetectionVerdict(decision, est.norm, float(threshold), lambda_min_detectable(n, ell, r, bound), mode)


@dataclass
class RecoveryResult:
    v_hat: np.ndarray
    correlation: float | None
    eigenvector_residual: float
    converged: bool
    signed_correlation: float | None = None
    ties: int = 0


def correlation(v, v_hat) -> float:
    """``|<v, v_hat>| / n``; the global sign is not identifiable for even r."""
    v = _check_boolean(v)
    v_hat = _check_boolean(v_hat)
    if v.shape != v_hat.shape:
        raise InvalidArgumentError(f"length mismatch {v.size} vs {v_hat.size}")
    return abs(float(v @ v_hat)) / v.size


def vote(u: np.ndarray, n: int, ell: int) -> tuple[np.ndarray, int]:
    """Round an (approximate) signal eigenvector to a sign vector.

    Anchored at coordinate 0: ``v_hat[j] = sign(sum u[S] * u[S - {0} + {j}])``
    over ell-sets S holding 0 but not j. Zero sums resolve to +1; the number
    of such ties is returned alongside.
    """
    if ell < 1:
        raise InvalidArgumentError("voting needs ell >= 1")
    u = np.asarray(u, dtype=np.float64)
    rest = all_subsets(n - 1, ell - 1) + 1  # (ell-1)-subsets of 1..n-1
    with_zero = rank_rows(np.concatenate([np.zeros((rest.shape[0], 1), np.int64), rest], axis=1), n)
    v_hat = np.ones(n)
    ties = 0
    for j in range(1, n):
        keep = ~np.any(rest == j, axis=1)
        swapped = np.sort(np.concatenate([rest[keep], np.full((int(keep.sum()), 1), j)], axis=1), axis=1)
        total = float(u[with_zero[keep]] @ u[rank_rows(swapped, n)])
        if total < 0:
            v_hat[j] = -1.0
        elif total == 0:
            ties += 1
    if ties:
        logger.info("voting resolved %d tied coordinates to +1", ties)
    return v_hat, ties


def recover(
    tensor: SymmetricTensor,
    ell: int,
    seed: int = 0,
    truth=None,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 3,
) -> RecoveryResult:
    if 2 * ell < tensor.r:
        raise InvalidArgumentError("recovery needs ell >= r/2")
    op = KikuchiOperator(tensor, ell)
    est = estimate_norm(op, tol, max_iter, restarts, seed)
    if est.norm == 0.0:
        u = np.ones(op.dim) / np.sqrt(op.dim)
        residual = 0.0
    else:
        u, residual = top_eigenvector(op, est)
    if not est.converged:
        logger.warning("eigenvector not converged; residual %.3g", residual)
    v_hat, ties = vote(u, tensor.n, ell)
    corr = signed = None
    if truth is not None:
        truth = _check_boolean(truth)
        corr = correlation(truth, v_hat)
        signed = float(truth @ v_hat) / truth.size
    return RecoveryResult(v_hat, corr, residual, est.converged, signed, ties)
