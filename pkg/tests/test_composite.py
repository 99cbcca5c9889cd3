import math

import networkx as nx
import numpy as np
import pytest
import scipy.linalg

from conftest import random_stochastic, random_substochastic
from nhld.chain_model import Cooling, Observable
from nhld.composite import build_composite, inner_cost, j_curve, j_eval, j_eval_grid, routing_cost
from nhld.decomposition import decompose
from nhld.errors import UnsupportedDimension
from nhld.fixtures import S3_ENERGY, s3_chain, s3_expected
from nhld.routing import classify_regime, cost_T0, cost_U0, path_cost_matrix, rate_limits
from nhld.spectral import BlockRate

LAMS = np.arange(-200.0, 200.0 + 1e-9, 0.01)
STEP = 1e-3          # coarsest x spacing; narrow domains get 2000 points


def cycle_mean_range(P, f):
    """Exact domain of I: the extreme mean values of f over simple cycles."""
    G = nx.DiGraph(list(zip(*np.nonzero(P))))
    means = [np.mean(f[c]) for c in nx.simple_cycles(G)]
    return min(means), max(means)


def legendre_table(P, f):
    """x grid over the exact domain and I on it, by a discrete Legendre transform."""
    T = P[None, :, :] * np.exp(LAMS[:, None] * f[None, :])[:, None, :]
    press = np.log(np.abs(np.linalg.eigvals(T)).max(axis=1))
    lo, hi = cycle_mean_range(P, f)
    xs = np.linspace(lo, hi, max(int(math.ceil((hi - lo) / STEP)), 2000) + 1 if hi > lo else 1)
    I = np.empty_like(xs)
    for k in range(0, len(xs), 64):
        chunk = xs[k:k + 64]
        I[k:k + 64] = (chunk[:, None] * LAMS[None, :] - press[None, :]).max(axis=1)
    return xs, I


def _interp(xs, I, x):
    out = np.interp(x, xs, I)
    return np.where((x < xs[0] - 1e-12) | (x > xs[-1] + 1e-12), np.inf, out)


def brute_inner(v, tables, z):
    """min over the x grid of sum v_i I_i(x_i) subject to sum v_i x_i = z.

    The block with the widest domain is solved for from the constraint.
    """
    k = int(np.argmax([t[0][-1] - t[0][0] for t in tables]))
    perm = [i for i in range(len(v)) if i != k] + [k]
    v = np.asarray(v)[perm]
    tables = [tables[i] for i in perm]
    (x1, I1), last = tables[0], tables[-1]
    if len(tables) == 2:
        x2 = (z - v[0] * x1) / v[1]
        return float(np.min(v[0] * I1 + v[1] * _interp(*last, x2)))
    x2, I2 = tables[1]
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    x3 = (z - v[0] * X1 - v[1] * X2) / v[2]
    obj = v[0] * I1[:, None] + v[1] * I2[None, :] + v[2] * _interp(*last, x3)
    return float(obj.min())


def random_instance(rng, tables=True):
    M = int(rng.integers(2, 4))
    sizes = [int(rng.integers(2, 4)) for _ in range(M)]
    while sum(sizes) > 6:
        sizes[int(np.argmax(sizes))] -= 1
    rates, tables, mids = [], [], []
    for r in sizes:
        P = random_stochastic(rng, r) if rng.random() < 0.5 else random_substochastic(rng, r, (0.6, 1.0))
        f = rng.uniform(-1, 1, r)
        rates.append(BlockRate(P, range(r), Observable(f)))
        if tables is not False:
            tables.append(legendre_table(P, f))
        lo, hi = rates[-1].domain_box()
        mids.append(rng.uniform(lo[0] + 0.2 * (hi[0] - lo[0]), hi[0] - 0.2 * (hi[0] - lo[0])))
    v = rng.dirichlet(np.ones(M))
    z = float(v @ np.array(mids))
    return v, rates, tables, z


def test_inner_cost_matches_brute_force_grid():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(30):
        v, rates, tables, z = random_instance(rng)
        dual = inner_cost(v, rates, z)
        brute = brute_inner(v, tables, z)
        worst = max(worst, abs(dual - brute))
    assert worst <= 2e-3


def test_zero_weight_prefix_is_exact():
    rng = np.random.default_rng(12)
    for _ in range(20):
        v, rates, _, z = random_instance(rng, tables=False)
        M = len(v)
        U = path_cost_matrix(-rng.exponential(1.0, size=(M + 1, M + 1)))
        order = tuple(range(1, M + 1))
        extra = BlockRate(random_stochastic(rng, 2), range(2), Observable(rng.uniform(-1, 1, 2)))
        assert routing_cost((0,) + order, np.r_[0.0, v], U) == routing_cost(order, v, U)
        assert inner_cost(np.r_[0.0, v], [extra] + rates, z) == inner_cost(v, rates, z)
        # appending a block after the last one costs -u(last, new) * 1
        grown = routing_cost(order + (0,), np.r_[v, 0.0], U)
        assert grown == pytest.approx(routing_cost(order, v, U) - U[order[-1], 0], abs=1e-12)
        assert grown >= routing_cost(order, v, U)


def test_routing_cost_zero_times_infinity():
    U = np.array([[0.0, -math.inf], [-math.inf, 0.0]])
    assert routing_cost((0, 1), np.array([0.0, 1.0]), U) == 0.0
    assert routing_cost((0, 1), np.array([0.5, 0.5]), U) == math.inf


def block_diag_instance(rng, sizes, d=1):
    Ps = [random_stochastic(rng, r) for r in sizes]
    L = scipy.linalg.block_diag(*Ps)
    dec = decompose(L)
    f = Observable(rng.uniform(-1, 1, size=(L.shape[0], d)))
    K = len(dec.blocks)
    U = path_cost_matrix(-rng.exponential(1.0, size=(K, K)))
    return build_composite(L, dec, f, U)


@pytest.mark.parametrize("seed", range(6))
def test_minimax_agrees_with_simplex_grid(seed):
    rng = np.random.default_rng(300 + seed)
    cr = block_diag_instance(rng, [2, 2] if seed % 2 else [2, 1, 2])
    lo = min(cr.box(b)[0][0] for b in cr.G)
    hi = max(cr.box(b)[1][0] for b in cr.G)
    for z in np.linspace(lo, hi, 7)[1:-1]:
        val, wit = j_eval(cr, z)
        # the simplex grid only sees some proportions: an upper bound
        assert val <= j_eval_grid(cr, z, res=32) + 1e-7
        # the witness proportions are feasible and attain the value
        used = wit.v > 0
        assert float(wit.v[used] @ wit.x[used, 0]) == pytest.approx(z, abs=1e-6)
        brs = [cr.rates[b] for b in wit.order]
        primal = routing_cost(wit.order, wit.v, cr.U) + inner_cost(wit.v, brs, z)
        assert primal == pytest.approx(val, abs=1e-6)
        assert wit.value == val


def test_two_dimensional_observable():
    rng = np.random.default_rng(5)
    cr = block_diag_instance(rng, [2, 2], d=2)
    means = [cr.rates[b].stationary_mean() for b in cr.G]
    z = 0.5 * (means[0] + means[1])
    val, _ = j_eval(cr, z)
    assert val <= j_eval_grid(cr, z, res=16) + 1e-6
    assert val >= 0.0
    for m in means:
        # stochastic blocks give zero cost at their own means
        assert j_eval(cr, m)[0] <= 1e-7


def test_three_dimensions_unsupported():
    rng = np.random.default_rng(6)
    cr = block_diag_instance(rng, [2, 2], d=3)
    with pytest.raises(UnsupportedDimension):
        j_eval(cr, np.zeros(3))


def test_upper_cost_bounds_lower_cost():
    from nhld.fixtures import s12_2_chain
    ch = s12_2_chain()
    s = ch.schedule
    dec = decompose(s.limit)
    rp = rate_limits(s, dec)
    ju = build_composite(s.limit, dec, ch.f, cost_U0(rp))
    jt = build_composite(s.limit, dec, ch.f, cost_T0(rp))
    for z in np.linspace(0, 1, 11):
        assert j_eval(ju, z)[0] <= j_eval(jt, z)[0] + 1e-12


def test_s3_curve_matches_pieces():
    ch = s3_chain()
    s = ch.schedule
    dec = decompose(s.limit)
    cr = build_composite(s.limit, dec, ch.f, cost_U0(rate_limits(s, dec)))
    grid = np.linspace(-1, 3, 41)
    rows = j_curve(cr, grid)
    err = max(abs(r[1] - s3_expected(z)) for r, z in zip(rows, grid))
    assert err <= 1e-6
    assert j_eval(cr, 3.5)[0] == math.inf


def test_trivial_regime_vanishes_on_hull():
    ch = s3_chain(Cooling("logarithmic", c=1.0))
    s = ch.schedule
    dec = decompose(s.limit)
    rp = rate_limits(s, dec)
    U = cost_U0(rp)
    assert classify_regime(U, dec, s.limit, rp.v).value == "Trivial"
    cr = build_composite(s.limit, dec, ch.f, U)
    lows = [S3_ENERGY[b[0]] for b, c in zip(dec.blocks, dec.classes) if c.value == "Stochastic"]
    for z in np.linspace(min(lows), max(lows), 9):
        assert j_eval(cr, z)[0] <= 1e-9


def test_j_curve_threads_identical(monkeypatch):
    ch = s3_chain()
    s = ch.schedule
    dec = decompose(s.limit)
    cr = build_composite(s.limit, dec, ch.f, cost_U0(rate_limits(s, dec)))
    grid = np.linspace(-1, 3, 9)
    a = j_curve(cr, grid, threads=1)
    b = j_curve(cr, grid, threads=3)
    assert [r[:2] for r in a] == [r[:2] for r in b]
