"""Composite rate J_U over visit orders and time proportions.

For a fixed visit order sigma of the G-blocks the routing term is linear in
the visit proportions: sum_i v_i w_i with w_i = -sum_{k >= i} u(sigma_k,
sigma_{k+1}). The inner problem over (v, x) is then the lower convex hull of
min_i (w_i + I_i), whose conjugate is max_i (Lambda_i - w_i). So

    J_sigma(z) = sup_lambda  <lambda, z> - max_i (Lambda_i(lambda) - w_i)

and J_U = min over sigma. A block with w_i = +inf (it precedes a -inf edge)
can only carry zero weight and is dropped. The simplex-grid evaluation is
kept as :func:`j_eval_grid` for cross-checks.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from .decomposition import CanonicalDecomposition
from .errors import NotConverged, UnsupportedDimension
from .numerics import INF, NEG_INF
from .spectral import ZERO_TOL, BlockRate, in_weighted_hulls, maximize_concave

MAX_BLOCKS_DEFAULT = 7
BISECT_ITERS = 200


@dataclass
class Witness:
    order: tuple          # G-block indices in visit order
    v: np.ndarray         # proportions aligned with ``order``
    x: np.ndarray         # (M, d) per-block means aligned with ``order``
    value: float

    def support(self):
        return tuple(b for b, w in zip(self.order, self.v) if w > 1e-12)


@dataclass
class CompositeRate:
    dec: CanonicalDecomposition
    rates: dict                 # block index -> BlockRate, for every block in G
    U: np.ndarray               # cost matrix over all blocks
    dim: int
    allow_large: bool = False
    _boxes: dict = field(default_factory=dict, repr=False)

    @property
    def G(self):
        return tuple(self.dec.G)

    def box(self, b):
        if b not in self._boxes:
            self._boxes[b] = self.rates[b].domain_box()
        return self._boxes[b]

    def offsets(self, order) -> np.ndarray:
        """w_i = -(sum of costs of the edges after position i); +inf before a -inf edge."""
        M = len(order)
        w = np.zeros(M)
        acc = 0.0
        for i in range(M - 2, -1, -1):
            u = self.U[order[i], order[i + 1]]
            acc = INF if (acc == INF or u == NEG_INF) else acc - u
            w[i] = acc
        return w

    def orders(self):
        G = self.G
        if len(G) > MAX_BLOCKS_DEFAULT and not self.allow_large:
            raise UnsupportedDimension(
                f"{len(G)} blocks means {math.factorial(len(G))} visit orders; pass allow_large")
        return list(itertools.permutations(G))


def build_composite(limit, dec: CanonicalDecomposition, f, U, **rate_kw) -> CompositeRate:
    rates = {b: BlockRate(limit, dec.blocks[b], f, **rate_kw) for b in dec.G}
    return CompositeRate(dec, rates, np.asarray(U, dtype=float), f.dim)


# --------------------------------------------------------------------------
# the inner problem at fixed proportions


def inner_cost(v, rates, z) -> float:
    """inf over x with sum v_i x_i = z of sum_{v_i > 0} v_i I_i(x_i), by duality."""
    v = np.asarray(v, dtype=float)
    if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-12:
        raise ValueError("v must lie on the simplex")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    act = [(w, r) for w, r in zip(v, rates) if w > 0]
    dim = act[0][1].dim
    lo = sum(w * r.domain_box()[0] for w, r in act)
    hi = sum(w * r.domain_box()[1] for w, r in act)
    if np.any(z < lo - 1e-9) or np.any(z > hi + 1e-9):
        return INF
    # the box is exact in one dimension; otherwise test the Minkowski sum of hulls
    exact = dim == 1
    if not exact:
        pts = [r.cycle_points() for _, r in act]
        if all(p is not None for p in pts):
            if not in_weighted_hulls(pts, [w for w, _ in act], z):
                return INF
            exact = True

    def fun_grad(lam):
        val = float(lam @ z)
        grad = z.copy()
        for w, r in act:
            p, g = r.pressure(lam)
            val -= w * p
            grad = grad - w * g
        return val, grad

    cap = max(r.lambda_cap for _, r in act)
    smooth = not all(r._scalar for _, r in act)
    # in one dimension the box test above is exact, so the sup is finite
    val, _ = maximize_concave(fun_grad, dim, cap, act[0][1].slope_floor, smooth=smooth,
                              bounded=exact)
    return INF if val > act[0][1].inf_threshold else float(val)


def routing_cost(order, v, U) -> float:
    """-sum_{i<M} (sum_{j<=i} v_j) u(order_i, order_{i+1}) with (+-inf) * 0 = 0."""
    total = 0.0
    cum = 0.0
    for i in range(len(order) - 1):
        cum += v[i]
        u = U[order[i], order[i + 1]]
        if cum <= 0:
            continue
        if u == NEG_INF:
            return INF
        total -= cum * u
    return total


# --------------------------------------------------------------------------
# one-dimensional evaluation, vectorised over visit orders


def _pressures_1d(cr: CompositeRate, lams: np.ndarray):
    """Lambda_b and Lambda_b' at each lambda, arrays of shape (len(G), len(lams))."""
    vals = np.empty((len(cr.G), lams.size))
    grads = np.empty_like(vals)
    for k, b in enumerate(cr.G):
        v, g = cr.rates[b].pressure_many(lams[:, None])
        vals[k] = v
        grads[k] = g[:, 0]
    return vals, grads


def _lambda_cap(cr: CompositeRate, W: np.ndarray) -> float:
    base = max(r.lambda_cap for r in cr.rates.values())
    finite = W[np.isfinite(W)]
    span = float(finite.max() - finite.min()) if finite.size else 0.0
    lam0 = max(abs(r.pressure(np.zeros(r.dim))[0]) for r in cr.rates.values())
    norm = max(1.0, max(float(np.abs(r.fb).max()) for r in cr.rates.values()))
    return base + 4.0 * (span + lam0) / norm * 10.0


def _sup_1d(cr: CompositeRate, W: np.ndarray, z: float):
    """sup_lambda lambda z - max_b (Lambda_b(lambda) - W[s, b]) for each row s."""
    S = W.shape[0]
    cap = _lambda_cap(cr, W)
    lo = np.full(S, -cap)
    hi = np.full(S, cap)

    def phi(lams):
        P, D = _pressures_1d(cr, lams)
        inner = P.T - W                       # (S, M); +inf offsets give -inf
        j = np.argmax(inner, axis=1)
        rows = np.arange(S)
        val = lams * z - inner[rows, j]
        slope = z - D.T[rows, j]
        return val, slope

    for _ in range(BISECT_ITERS):
        if np.all(hi - lo <= 1e-13 * (1.0 + np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        _, g = phi(mid)
        up = g > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    vlo, _ = phi(lo)
    vhi, _ = phi(hi)
    best = np.where(vlo >= vhi, lo, hi)
    return np.maximum(vlo, vhi), best


def _domain_1d(cr: CompositeRate, order, w):
    boxes = [cr.box(b) for b, wi in zip(order, w) if np.isfinite(wi)]
    return min(float(b[0][0]) for b in boxes), max(float(b[1][0]) for b in boxes)


def _witness_1d(cr: CompositeRate, order, w, lam, z, value):
    P = np.array([cr.rates[b].pressure(np.array([lam])) for b in order], dtype=object)
    vals = np.array([float(p[0]) - wi for p, wi in zip(P, w)])
    means = np.array([float(p[1][0]) for p in P])
    top = vals.max()
    active = [i for i in range(len(order)) if np.isfinite(vals[i]) and vals[i] >= top - 1e-9 * (1 + abs(top))]
    v = np.zeros(len(order))
    x = np.full((len(order), 1), np.nan)
    below = [i for i in active if means[i] <= z + 1e-12]
    above = [i for i in active if means[i] >= z - 1e-12]
    if below and above:
        a = max(below, key=lambda i: means[i])
        b = min(above, key=lambda i: means[i])
        if a == b or abs(means[b] - means[a]) <= 1e-15:
            v[a] = 1.0
        else:
            v[a] = (means[b] - z) / (means[b] - means[a])
            v[b] = 1.0 - v[a]
    else:
        # z sits at the edge of the domain: the optimal lambda is at the cap
        k = min(active, key=lambda i: abs(means[i] - z))
        v[k] = 1.0
    for i in range(len(order)):
        if v[i] > 0:
            x[i, 0] = means[i] if (below and above) else z
    return Witness(tuple(order), v, x, value)


def _j_eval_1d(cr: CompositeRate, z: float):
    orders = cr.orders()
    Wall = np.array([cr.offsets(o) for o in orders])
    vals = np.full(len(orders), INF)
    keep = []
    for s, o in enumerate(orders):
        lo, hi = _domain_1d(cr, o, Wall[s])
        if lo - 1e-12 <= z <= hi + 1e-12:
            keep.append(s)
    if not keep:
        return INF, None
    # align offsets with G order for the vectorised pressure evaluation
    pos = {b: k for k, b in enumerate(cr.G)}
    W = np.full((len(keep), len(cr.G)), INF)
    for r, s in enumerate(keep):
        for b, wi in zip(orders[s], Wall[s]):
            W[r, pos[b]] = wi
    sup, lam = _sup_1d(cr, W, z)
    vals[keep] = np.where(sup > ZERO_TOL, sup, 0.0)
    best = float(vals.min())
    s_best = int(np.flatnonzero(vals <= best + 1e-12 * (1.0 + abs(best)))[0])
    r = keep.index(s_best)
    wit = _witness_1d(cr, orders[s_best], Wall[s_best], float(lam[r]), z, best)
    return best, wit


# --------------------------------------------------------------------------
# two-dimensional evaluation, epigraph form per order


def _sup_nd_order(cr: CompositeRate, order, w, z):
    keep = [(b, wi) for b, wi in zip(order, w) if np.isfinite(wi)]
    d = cr.dim
    cap = _lambda_cap(cr, np.array([wi for _, wi in keep]))
    cons = []
    for b, wi in keep:
        br = cr.rates[b]
        cons.append({
            "type": "ineq",
            "fun": lambda y, br=br, wi=wi: y[d] - br.pressure(y[:d])[0] + wi,
            "jac": lambda y, br=br: np.append(-br.pressure(y[:d])[1], 1.0),
        })
    start = np.zeros(d + 1)
    start[d] = max(cr.rates[b].pressure(np.zeros(d))[0] - wi for b, wi in keep) + 1.0
    res = minimize(lambda y: y[d] - y[:d] @ z, start,
                   jac=lambda y: np.append(-z, 1.0),
                   constraints=cons, method="SLSQP",
                   bounds=[(-cap, cap)] * d + [(None, None)],
                   options={"ftol": 1e-13, "maxiter": 1000})
    if not res.success and res.status not in (8,):
        raise NotConverged(f"epigraph solve failed: {res.message}")
    lam = res.x[:d]
    val = float(lam @ z - max(cr.rates[b].pressure(lam)[0] - wi for b, wi in keep))
    if np.any(np.abs(lam) >= cap * (1 - 1e-6)):
        # at the box edge: finite only if z is in the hull of the blocks' domains
        pts = [cr.rates[b].cycle_points() for b, _ in keep]
        if any(p is None for p in pts) or not in_weighted_hulls([np.vstack(pts)], [1.0], z):
            return INF, lam
    return val, lam


def _j_eval_nd(cr: CompositeRate, z: np.ndarray):
    best, wit = INF, None
    for o in cr.orders():
        w = cr.offsets(o)
        val, lam = _sup_nd_order(cr, o, w, z)
        val = val if val > ZERO_TOL else 0.0
        if val < best and (best == INF or val < best - 1e-12 * (1.0 + abs(best))):
            best = val
            keep = [i for i in range(len(o)) if np.isfinite(w[i])]
            vals = np.array([cr.rates[o[i]].pressure(lam)[0] - w[i] for i in keep])
            act = [keep[k] for k in np.flatnonzero(vals >= vals.max() - 1e-7)]
            X = np.array([cr.rates[o[i]].pressure(lam)[1] for i in act])
            A = np.vstack([X.T, np.ones(len(act))])
            coef, _ = nnls(A, np.append(z, 1.0))
            v = np.zeros(len(o))
            x = np.full((len(o), cr.dim), np.nan)
            for k, i in enumerate(act):
                v[i] = coef[k]
                x[i] = X[k]
            s = v.sum()
            wit = Witness(tuple(o), v / s if s > 0 else v, x, val)
    return best, wit


# --------------------------------------------------------------------------


def j_eval(cr: CompositeRate, z):
    """J_U(z) and a minimising witness (order, proportions, block means)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (cr.dim,):
        raise ValueError(f"z must have dimension {cr.dim}")
    if cr.dim > 2:
        raise UnsupportedDimension("composite rate is implemented for d <= 2")
    G = cr.G
    if len(G) == 1:
        b = G[0]
        val = cr.rates[b].rate(z)
        return val, Witness((b,), np.ones(1), z[None, :].copy(), val)
    if cr.dim == 1:
        return _j_eval_1d(cr, float(z[0]))
    return _j_eval_nd(cr, z)


def j_curve(cr: CompositeRate, grid, threads=None):
    """Rows (z, J, order, support) along a one-dimensional grid."""
    if cr.dim != 1:
        raise UnsupportedDimension("curves are one-dimensional")
    grid = [float(z) for z in grid]
    if threads is None:
        threads = int(os.environ.get("NHLD_THREADS", "1") or 1)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda z: j_eval(cr, z), grid))
    else:
        results = [j_eval(cr, z) for z in grid]
    rows = []
    for z, (val, wit) in zip(grid, results):
        order = wit.order if wit is not None else ()
        support = wit.support() if wit is not None else ()
        rows.append((z, val, order, support))
    return rows


# --------------------------------------------------------------------------
# simplex-grid evaluation


def compositions(M: int, res: int):
    """All v in the simplex with coordinates in (1/res) Z."""
    for cut in itertools.combinations(range(res + M - 1), M - 1):
        prev = -1
        parts = []
        for c in cut + (res + M - 1,):
            parts.append(c - prev - 1)
            prev = c
        yield np.array(parts, dtype=float) / res


def j_eval_grid(cr: CompositeRate, z, res: int = 64) -> float:
    """min over orders and grid proportions of routing + inner cost."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    G = cr.G
    if len(G) == 1:
        return cr.rates[G[0]].rate(z)
    best = INF
    for o in cr.orders():
        brs = [cr.rates[b] for b in o]
        for v in compositions(len(o), res):
            r = routing_cost(o, v, cr.U)
            if r >= best:
                continue
            c = inner_cost(v, brs, z)
            best = min(best, r + c)
    return best
