from itertools import product
from math import comb

import numpy as np
import pytest

from kikuchi.combinat import all_subsets
from kikuchi.errors import InvalidArgumentError
from kikuchi.operator import KikuchiOperator, row_degree
from kikuchi.pca import (
    DetectionParams,
    calibrate_threshold,
    correlation,
    detect,
    lambda_min_detectable,
    null_norms,
    planted_qform_even,
    planted_qform_odd,
    recover,
    signal_vector,
    vote,
)
from kikuchi.spectral import rayleigh
from kikuchi.tensor import Spike, add_spike, planted_tensor, sample_tensor


def test_signal_vector_examples(rng):
    assert np.all(signal_vector(np.ones(6), 2) == 1)
    v = np.ones(6)
    v[0] = -1
    s = signal_vector(v, 2)
    for row, value in zip(all_subsets(6, 2), s):
        assert value == (-1 if 0 in row else 1)
    w = rng.choice([-1.0, 1.0], size=9)
    assert signal_vector(w, 3) @ signal_vector(w, 3) == comb(9, 3)


def test_signal_vector_rejects_non_boolean():
    with pytest.raises(InvalidArgumentError):
        signal_vector(np.array([1.0, 0.5, -1.0]), 1)


def test_planted_qform_even_examples():
    assert planted_qform_even(10, 4, 4, 1) == comb(6, 2) * comb(4, 2) == 90
    assert planted_qform_even(10, 4, 4, 0) == 0
    assert planted_qform_even(8, 3, 4, 2) == 60
    spike = Spike.random(8, 2.0, 3)
    op = KikuchiOperator(planted_tensor(8, 4, spike), 3)
    assert rayleigh(op, signal_vector(spike.v, 3)) == pytest.approx(60, rel=1e-10)


def odd_qform_bruteforce(n, ell, r, lam, v):
    spike = Spike(v, lam)
    dense = KikuchiOperator(planted_tensor(n, r, spike), ell).assemble_dense()
    s = signal_vector(v, ell)
    return s @ dense @ s / (s @ s)


def test_planted_qform_odd_matches_dense(rng):
    v = rng.choice([-1.0, 1.0], size=8)
    assert planted_qform_odd(8, 2, 3, 1.0) == pytest.approx(odd_qform_bruteforce(8, 2, 3, 1.0, v), rel=1e-12)
    assert planted_qform_odd(8, 2, 3, 1.0) == 240


def test_planted_qform_odd_scaling():
    assert planted_qform_odd(9, 3, 3, 0.0) == 0
    assert planted_qform_odd(9, 3, 3, 2.0) == 4 * planted_qform_odd(9, 3, 3, 1.0)


@pytest.mark.parametrize(
    "n,ell,r",
    [(n, ell, r) for r in (4, 6) for n in range(r + 1, 11) for ell in range(r // 2, 5) if 2 * ell <= n],
)
def test_quadratic_form_identity_even(n, ell, r):
    rng = np.random.default_rng(n * 100 + ell * 10 + r)
    for _ in range(20):
        v = rng.choice([-1.0, 1.0], size=n)
        lam = rng.uniform(0.1, 3.0)
        op = KikuchiOperator(planted_tensor(n, r, Spike(v, lam)), ell)
        assert rayleigh(op, signal_vector(v, ell)) == pytest.approx(planted_qform_even(n, ell, r, lam), rel=1e-10)


@pytest.mark.parametrize("n,ell", [(6, 2), (7, 3), (8, 3), (9, 4)])
def test_quadratic_form_identity_odd(n, ell):
    rng = np.random.default_rng(n + ell)
    for _ in range(3):
        v = rng.choice([-1.0, 1.0], size=n)
        op = KikuchiOperator(planted_tensor(n, 3, Spike(v, 1.3)), ell)
        assert rayleigh(op, signal_vector(v, ell)) == pytest.approx(planted_qform_odd(n, ell, 3, 1.3), rel=1e-10)


@pytest.mark.parametrize("n,ell", [(6, 2), (8, 3), (10, 2), (10, 3)])
def test_voting_recovers_every_boolean_vector(n, ell):
    for signs in product([-1.0, 1.0], repeat=n):
        v = np.array(signs)
        s = signal_vector(v, ell)
        v_hat, ties = vote(s / np.linalg.norm(s), n, ell)
        assert ties == 0
        assert correlation(v, v_hat) == 1.0


def test_all_ones_votes_positive():
    v_hat, ties = vote(signal_vector(np.ones(9), 3), 9, 3)
    assert ties == 0 and np.all(v_hat == 1)


def test_recover_noiseless():
    spike = Spike.random(10, 1.0, 7)
    res = recover(planted_tensor(10, 4, spike), 3, truth=spike.v)
    assert res.correlation == 1.0
    assert res.converged
    assert abs(res.signed_correlation) == 1.0


def test_recover_noiseless_odd():
    spike = Spike.random(9, 1.0, 2)
    res = recover(planted_tensor(9, 3, spike), 2, truth=spike.v)
    assert res.correlation == 1.0


def test_correlation_examples():
    v = np.array([1.0, -1, 1, 1, -1, 1])
    assert correlation(v, v) == 1.0
    assert correlation(v, -v) == 1.0
    w = v.copy()
    w[[1, 4]] *= -1
    assert correlation(v, w) == abs(6 - 2 * 2) / 6
    with pytest.raises(InvalidArgumentError):
        correlation(v, v[:5])


def test_detect_pure_signal_analytic():
    spike = Spike.random(10, 5.0, 1)
    verdict = detect(planted_tensor(10, 4, spike), 3, "analytic", DetectionParams(lam=5.0, norm_bound=1.0))
    assert verdict.planted
    assert verdict.threshold_used == pytest.approx(planted_qform_even(10, 3, 4, 5.0) / 2)
    assert verdict.measured_norm > verdict.threshold_used


def test_analytic_lambda_min():
    B = 37.5
    n, ell, r = 12, 3, 4
    verdict = detect(sample_tensor(n, r, "gaussian", 1), ell, "analytic", DetectionParams(norm_bound=B))
    assert verdict.lambda_min_detectable == pytest.approx(2 * B / (comb(n - ell, 2) * comb(ell, 2)))
    assert lambda_min_detectable(n, ell, r, B) == verdict.lambda_min_detectable
    # at lam = lambda_min the threshold equals the bound itself
    assert verdict.threshold_used == pytest.approx(B)


def test_detect_needs_calibration_trials():
    with pytest.raises(InvalidArgumentError):
        detect(sample_tensor(8, 4), 2, "empirical", DetectionParams(calibration_trials=0))
    with pytest.raises(InvalidArgumentError):
        detect(sample_tensor(8, 4), 2, "analytic", DetectionParams())


def test_empirical_false_positive_rate():
    n, ell, r = 10, 2, 4
    params = DetectionParams(calibration_trials=200, tol=1e-5)
    params.threshold = calibrate_threshold(n, r, ell, params, seed=1)
    hits = sum(detect(sample_tensor(n, r, "gaussian", 10_000 + k), ell, params=params, seed=k).planted for k in range(200))
    # 0.99 quantile: expect ~2 of 200; 8 is beyond the 99.9% binomial tail even with quantile noise
    assert hits <= 8


def test_null_norm_quantile_threshold_is_deterministic():
    params = DetectionParams(calibration_trials=5, tol=1e-4)
    a = null_norms(8, 4, 2, params, seed=3)
    b = null_norms(8, 4, 2, params, seed=3)
    assert np.array_equal(a, b)


def test_detection_flips_once_along_lambda_grid():
    n, ell, r = 10, 3, 4
    params = DetectionParams(calibration_trials=40, tol=1e-8)
    params.threshold = calibrate_threshold(n, r, ell, params, seed=2)
    deg = row_degree(n, ell, r)
    for noise in range(5):
        g = sample_tensor(n, r, "gaussian", 500 + noise)
        spike = Spike.random(n, 1.0, 900 + noise)
        verdicts = []
        for scale in np.linspace(0, 4, 17):
            lam = scale * params.threshold / deg
            verdicts.append(detect(add_spike(g, Spike(spike.v, lam)), ell, params=params, seed=noise).planted)
        flips = sum(a != b for a, b in zip(verdicts, verdicts[1:]))
        assert flips <= 1
        assert verdicts[-1]
        if flips:
            assert not verdicts[0]
