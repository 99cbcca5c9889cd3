import math

import numpy as np
import pytest

from nhld.chain_model import AlternatingTwoState, MetropolisSchedule, MetropolisSpec, Cooling
from nhld.decomposition import decompose
from nhld.errors import InvalidSpec
from nhld.fixtures import S3_ENERGY, s3_proposal
from nhld.routing import (RatePair, _path_cost_dfs, cost_T0, cost_U0, estimate_rates,
                          log_monotone_envelope, monotone_envelope, path_cost_bruteforce, path_cost_matrix, rate_limits)


def random_costs(rng, K, p_missing=0.3):
    B = -rng.exponential(2.0, size=(K, K))
    B[rng.random((K, K)) < p_missing] = -math.inf
    np.fill_diagonal(B, 0.0)
    return B


def test_triangle_inequality_200_matrices():
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(200):
        K = int(rng.integers(3, 9))
        U = path_cost_matrix(random_costs(rng, K))
        for i in range(K):
            for j in range(K):
                for k in range(K):
                    if len({i, j, k}) < 3:
                        continue
                    lhs = U[i, j] + U[j, k]
                    if lhs > U[i, k] + 1e-12:
                        violations += 1
    assert violations == 0


@pytest.mark.parametrize("K", [2, 3, 4, 5, 6])
def test_dp_equals_enumeration(K):
    rng = np.random.default_rng(K)
    for _ in range(25):
        B = random_costs(rng, K)
        U = path_cost_matrix(B)
        for i in range(K):
            for j in range(K):
                if i != j:
                    assert U[i, j] == path_cost_bruteforce(B, i, j)


def test_dfs_fallback_equals_dp():
    rng = np.random.default_rng(3)
    for _ in range(10):
        B = random_costs(rng, 7)
        assert np.array_equal(_path_cost_dfs(B), path_cost_matrix(B))


def test_longest_path_prefers_detour():
    B = np.array([[0, -5, -1], [-math.inf, 0, -math.inf], [-math.inf, -1, 0]])
    U = path_cost_matrix(B)
    assert U[0, 1] == -2.0
    assert U[1, 0] == -math.inf


# envelope: the three cases of the monotone majorant, checked in log space

def _check_envelope(lt, lh, rate, W_tail=0.2, tol=0.01):
    assert np.all(lh >= lt - 1e-12)
    assert np.all(np.diff(lh) <= 1e-12)
    assert np.all(lh <= 0) and np.all(np.isfinite(lh))
    n = np.arange(1, len(lt) + 1)
    k = int(len(lt) * (1 - W_tail))
    tail = lh[k:] / n[k:]
    if rate == -math.inf:
        # (1/n) log t_hat = -n runs off to -inf
        assert np.all(np.diff(tail) < 0) and tail[-1] == -len(lt)
    else:
        assert np.max(np.abs(tail - rate)) <= tol


def test_envelope_positive_limit():
    n = np.arange(1, 2001)
    t = 0.5 + (-1.0) ** n / (n + 2)
    lh = log_monotone_envelope(np.log(t), 0.5)
    _check_envelope(np.log(t), lh, 0.0)
    assert math.exp(lh[-1]) == pytest.approx(0.5, abs=1e-3)
    assert np.allclose(monotone_envelope(t, 0.5), np.exp(lh))


def test_envelope_negative_rate():
    n = np.arange(1, 2001)
    lt = np.where(n % 2 == 0, -n * math.log(2), -n * math.log(3))
    lh = log_monotone_envelope(lt, 0.0, -math.log(2))
    _check_envelope(lt, lh, -math.log(2), tol=2e-3)
    # a monotone geometric sequence is its own envelope
    g = -n * math.log(2)
    assert np.allclose(log_monotone_envelope(g, 0.0, -math.log(2)), g, rtol=1e-12)


def test_envelope_eventually_zero():
    n = np.arange(1, 101)
    t = np.where(n < 10, 0.5, 0.0)
    with np.errstate(divide="ignore"):
        lt = np.log(t)
    lh = log_monotone_envelope(lt, 0.0)
    assert np.all(lh[:9] == 0.0)
    assert lh[20] == -21.0 ** 2
    _check_envelope(lt, lh, -math.inf)


def test_envelope_zero_rate():
    n = np.arange(1, 2001)
    lt = -np.log(n + 1.0)
    lh = log_monotone_envelope(lt, 0.0, 0.0)
    assert np.allclose(lh, lt, rtol=1e-12)
    _check_envelope(lt, lh, 0.0)
    # non-monotone slowly decaying sequence
    lt2 = np.where(n % 3 == 0, -0.5 * np.log(n), -np.log(n + 1.0))
    _check_envelope(lt2, log_monotone_envelope(lt2, 0.0, 0.0), 0.0)


def test_envelope_zero_rate_needs_t_below_one():
    t = np.ones(50)
    with pytest.raises(InvalidSpec):
        monotone_envelope(t, 0.0, 0.0)


def test_envelope_rejects_out_of_range():
    with pytest.raises(InvalidSpec):
        monotone_envelope([0.5, 1.5], 0.5)


# rate pairs

def test_rate_pair_validation():
    with pytest.raises(InvalidSpec):
        RatePair(np.array([[0.0, 0.1], [0, 0]]), np.zeros((2, 2)), "analytic")
    with pytest.raises(InvalidSpec):
        RatePair(np.array([[0.0, -1.0], [0, 0]]), np.array([[0.0, -0.5], [0, 0]]), "analytic")


def test_alternating_rates_analytic_and_estimated():
    s = AlternatingTwoState()
    dec = decompose(s.limit)
    rp = rate_limits(s, dec)
    i, j = dec.block_of(0), dec.block_of(1)
    assert rp.v[i, j] == -math.log(2)
    assert rp.tau[i, j] == -math.log(3)
    assert rp.provenance == "analytic"
    est = estimate_rates(s, dec, (1, 4000))
    assert est.v[i, j] == pytest.approx(-math.log(2), abs=1e-3)
    assert est.tau[i, j] == pytest.approx(-math.log(3), abs=1e-3)


def test_metropolis_rates_are_minus_uphill_energy():
    spec = MetropolisSpec(s3_proposal(), np.array(S3_ENERGY), Cooling("linear", c=1.0))
    s = MetropolisSchedule(spec)
    dec = decompose(s.limit)
    rp = rate_limits(s, dec)
    # blocks {6} (H=0) -> {2} (H=3): uphill by 3 through the proposal 6 -> 5 -> ... path
    b6, b2 = dec.block_of(5), dec.block_of(1)
    U = cost_U0(rp)
    assert U[b6, b2] == pytest.approx(-5.0)
    assert np.array_equal(U, cost_T0(rp))
