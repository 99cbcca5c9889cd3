"""Block pressures log rho(C, lambda) and their Legendre transforms.

The pressure of an irreducible block C is the log Perron-Frobenius eigenvalue
of the tilted matrix ``P(i, j) exp<lambda, f(j)>``, i, j in C. Its Legendre
transform is the block rate function I_C. For a substochastic block the
pressure at zero is <= 0 and I_C >= -Lambda_C(0) >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .chain_model import Observable
from .decomposition import EDGE_EPS, _is_irreducible
from .errors import NotConverged, NotIrreducible
from .numerics import INF

PF_TOL = 1e-12
ZERO_TOL = 1e-13
PF_MAX_ITER = 100_000


def tilted_matrix(block, P, f: Observable, lam) -> np.ndarray:
    idx = list(block)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    sub = np.asarray(P, dtype=float)[np.ix_(idx, idx)]
    return sub * np.exp(f.values[idx] @ lam)[None, :]


@dataclass(frozen=True)
class PFResult:
    rho: float
    right: np.ndarray   # ||v||_1 = 1
    left: np.ndarray    # u . v = 1
    iterations: int
    residual: float


def pf_eigen(A, tol=PF_TOL, max_iter=PF_MAX_ITER, check=True) -> PFResult:
    """Perron-Frobenius eigenvalue and eigenvectors of an irreducible A >= 0.

    Power iteration on S = A + cI with c a rough estimate of rho, so S is
    primitive even when A is periodic and the spectral gap of S stays away
    from 1 however badly A is scaled. The iteration is accelerated by
    repeated squaring (S^(2^k)); products of nonnegative matrices lose no
    relative precision, so this is safe. The eigenpair is then polished by
    plain power steps until the componentwise relative residual
    max |Av - rho v| / (rho v) drops below ``tol``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        a = float(A[0, 0])
        if not a > 0:
            raise NotIrreducible("1x1 block with zero entry")
        one = np.ones(1)
        return PFResult(a, one, one, 0, 0.0)
    if check and not _is_irreducible(A):
        raise NotIrreducible("matrix is not irreducible")

    An = A / A.max()
    c = float(np.abs(np.linalg.eigvals(An)).max())
    if not c > 0:
        c = float(An.sum(axis=1).min()) or 1.0
    S = An + c * np.eye(n)

    def vecs(B):
        v, u = B.sum(axis=1), B.sum(axis=0)
        return v / v.sum(), u / u.sum()

    B = S / S.max()
    v, u = vecs(B)
    steps = 1
    while steps < max_iter:
        B = B @ B
        top = B.max()
        if not (np.isfinite(top) and top > 0):
            raise NotConverged("Perron-Frobenius squaring underflowed; matrix too badly scaled", INF)
        B /= top
        steps *= 2
        v2, u2 = vecs(B)
        with np.errstate(divide="ignore", invalid="ignore"):
            dv = np.max(np.abs(v2 - v) / v2)
            du = np.max(np.abs(u2 - u) / u2)
        v, u = v2, u2
        if dv <= 1e-14 and du <= 1e-14:
            break

    residual = INF
    rho = math.nan
    extra = 0
    for extra in range(200):
        Av = An @ v
        rho = float(u @ Av / (u @ v))
        diff = np.abs(Av - rho * v)
        # exact zeros (entries underflowed at large tilts) count as converged
        with np.errstate(divide="ignore", invalid="ignore"):
            residual = float(np.max(np.where(diff == 0, 0.0, diff / (rho * v))))
        if residual <= tol:
            break
        v = S @ v
        v /= v.sum()
        u = u @ S
        u /= u.sum()
    if not residual <= max(tol, 1e-9):
        raise NotConverged(f"Perron-Frobenius iteration stalled, residual {residual:.3e}", residual)
    u = u / (u @ v)
    return PFResult(rho * A.max(), v, u, steps + extra, residual)


# --------------------------------------------------------------------------
# one-dimensional concave maximisation


def _bisect_sup(phi: Callable[[float], tuple[float, float]], cap: float, slope_floor: float,
                smooth: bool, grad_tol=1e-10, xtol=1e-13, max_iter=400, bounded=False):
    """sup of a concave function of one variable on [-cap, cap].

    ``phi(l)`` returns (value, a supergradient). Returns (sup, argmax) or
    (inf, +-cap) when the function is still climbing at the cap, unless
    ``bounded`` says the sup is known to be finite; then the value at the
    cap is returned.
    """
    v0, g0 = phi(0.0)
    if abs(g0) <= grad_tol:
        return v0, 0.0
    sign = 1.0 if g0 > 0 else -1.0
    lo, hi = 0.0, None
    step = 1.0
    while True:
        t = min(step, cap)
        vt, gt = phi(sign * t)
        if sign * gt <= 0:
            hi = t
            break
        if t >= cap:
            if sign * gt >= slope_floor and not bounded:
                return INF, sign * cap
            return vt, sign * cap
        lo = t
        step *= 2.0
    # bracket [lo, hi] in the direction of ascent: derivative > 0 at lo, <= 0 at hi
    best_v, best_l = -INF, 0.0
    for _ in range(max_iter):
        if hi - lo <= xtol * (1.0 + hi):
            break
        mid = 0.5 * (lo + hi)
        if smooth:
            # secant on the directional derivative, safeguarded by the bracket
            _, glo = phi(sign * lo)
            _, ghi = phi(sign * hi)
            dl, dh = sign * glo, sign * ghi
            if dl - dh > 0:
                cand = lo + dl * (hi - lo) / (dl - dh)
                if lo < cand < hi:
                    mid = cand if (hi - lo) > 1e-3 else 0.5 * (mid + cand)
        vm, gm = phi(sign * mid)
        if vm > best_v:
            best_v, best_l = vm, sign * mid
        if smooth and abs(gm) <= grad_tol:
            return vm, sign * mid
        if sign * gm > 0:
            lo = mid
        else:
            hi = mid
    for t in (lo, hi):
        vt, _ = phi(sign * t)
        if vt > best_v:
            best_v, best_l = vt, sign * t
    return best_v, best_l


def _newton_polish(phi, lam, cap, grad_tol=1e-10, iters=20):
    """Newton steps on a smooth concave 1-D function, kept inside [-cap, cap]."""
    v, g = phi(lam)
    for _ in range(iters):
        if abs(g) <= grad_tol:
            break
        h = 1e-6 * (1.0 + abs(lam))
        _, gp = phi(lam + h)
        _, gm = phi(lam - h)
        curv = (gp - gm) / (2 * h)
        if not curv < 0:
            break
        cand = min(max(lam - g / curv, -cap), cap)
        if cand == lam:
            break
        vc, gc = phi(cand)
        if vc < v - 1e-15 * (1 + abs(v)):
            break
        lam, v, g = cand, vc, gc
    return v, lam


def maximize_concave(fun_grad, dim: int, cap: float, slope_floor: float,
                     smooth=True, grad_tol=1e-10, max_iter=10_000, bounded=False):
    """sup over lambda in R^d of a concave function given value and gradient.

    Returns (value, argmax). ``value`` is ``inf`` when the ascent is still
    climbing (directional slope >= slope_floor) on the sphere of radius cap;
    in one dimension ``bounded=True`` returns the value at the cap instead.
    """
    if dim == 1:
        def phi(l):
            v, g = fun_grad(np.array([l]))
            return float(v), float(g[0])
        val, arg = _bisect_sup(phi, cap, slope_floor, smooth, grad_tol=grad_tol, bounded=bounded)
        if smooth and np.isfinite(val):
            val2, arg2 = _newton_polish(phi, arg, cap, grad_tol=grad_tol)
            if val2 >= val:
                val, arg = val2, arg2
        return val, np.array([arg])
    return _ascent_nd(fun_grad, dim, cap, slope_floor, grad_tol, max_iter, bounded)


def _ascent_nd(fun_grad, dim, cap, slope_floor, grad_tol, max_iter, bounded=False):
    """Damped Newton / gradient ascent with Armijo backtracking on a ball."""
    lam = np.zeros(dim)
    val, g = fun_grad(lam)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= grad_tol:
            return float(val), lam
        H = np.empty((dim, dim))
        h = 1e-6 * (1.0 + np.linalg.norm(lam))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            H[:, k] = (fun_grad(lam + e)[1] - fun_grad(lam - e)[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        direction = g
        try:
            w, V = np.linalg.eigh(-H)
            if w.min() > 1e-12 * max(1.0, w.max()):
                direction = V @ ((V.T @ g) / w)
        except np.linalg.LinAlgError:
            pass
        if direction @ g <= 0:
            direction = g
        t = 1.0
        improved = False
        while t > 1e-20:
            cand = lam + t * direction
            norm = np.linalg.norm(cand)
            clipped = norm > cap
            if clipped:
                cand = cand * (cap / norm)
            vc, gc = fun_grad(cand)
            if vc >= val + 1e-4 * t * (direction @ g) or (clipped and vc > val):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        lam, val, g = cand, vc, gc
        norm = np.linalg.norm(lam)
        if norm >= cap * (1 - 1e-12):
            radial = g @ (lam / norm)
            if radial >= slope_floor and not bounded:
                return INF, lam
            # tangential progress only
            tang = g - radial * lam / norm
            if np.linalg.norm(tang) <= grad_tol and radial <= 0:
                return float(val), lam
            if np.linalg.norm(tang) <= grad_tol:
                return float(val), lam
    if np.linalg.norm(g) <= max(grad_tol, 1e-7):
        return float(val), lam
    raise NotConverged(f"ascent stalled with gradient norm {np.linalg.norm(g):.3e}",
                       float(np.linalg.norm(g)))


# --------------------------------------------------------------------------


MAX_CYCLES = 20_000


def simple_cycles(adj, limit=MAX_CYCLES):
    """Simple cycles of a small digraph as node lists, each listed once.

    Returns None when there are more than ``limit`` of them.
    """
    adj = np.asarray(adj) > 0
    n = adj.shape[0]
    out = []
    for s in range(n):
        stack = [(s, iter(np.flatnonzero(adj[s])))]
        path, on = [s], {s}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on.discard(path.pop())
                continue
            nxt = int(nxt)
            if nxt == s:
                out.append(list(path))
                if len(out) > limit:
                    return None
            elif nxt > s and nxt not in on:
                path.append(nxt)
                on.add(nxt)
                stack.append((nxt, iter(np.flatnonzero(adj[nxt]))))
    return out


def in_weighted_hulls(point_sets, weights, z, tol=1e-9) -> bool:
    """Is z in sum_i w_i conv(point_sets[i])? An LP feasibility problem."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    sets = [(w, np.asarray(p, dtype=float)) for w, p in zip(weights, point_sets) if w > 0]
    k = sum(len(p) for _, p in sets)
    d = z.size
    A_eq = np.zeros((d + len(sets), k))
    b_eq = np.concatenate([z, np.ones(len(sets))])
    col = 0
    for i, (w, p) in enumerate(sets):
        A_eq[:d, col:col + len(p)] = w * p.T
        A_eq[d + i, col:col + len(p)] = 1.0
        col += len(p)
    # minimise the constraint violation; feasible iff the optimum is ~0
    slack = np.hstack([np.eye(d), -np.eye(d)])
    A = np.hstack([A_eq, np.vstack([slack, np.zeros((len(sets), 2 * d))])])
    c = np.concatenate([np.zeros(k), np.ones(2 * d)])
    res = linprog(c, A_eq=A, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(res.status == 0 and res.fun <= tol * (1.0 + np.abs(z).max()))


def cycle_mean_range(sub, g) -> tuple[float, float]:
    """Least and greatest mean of g over the cycles of an irreducible block.

    Karp's minimum mean cycle recursion, with g counted at the arrival state.
    These are the ends of the range of Lambda'(lambda) as lambda runs over R.
    """
    adj = np.asarray(sub) > 0
    g = np.asarray(g, dtype=float)
    n = len(g)

    def min_mean(w):
        W = np.where(adj, w[None, :], INF)
        D = np.full((n + 1, n), INF)
        D[0, 0] = 0.0
        for k in range(1, n + 1):
            D[k] = (D[k - 1][:, None] + W).min(axis=0)
        best = INF
        for v in range(n):
            if not np.isfinite(D[n, v]):
                continue
            ks = np.flatnonzero(np.isfinite(D[:n, v]))
            best = min(best, max((D[n, v] - D[k, v]) / (n - k) for k in ks))
        return float(best)

    return min_mean(g), -min_mean(-g)


class BlockRate:
    """Pressure and rate function of one irreducible block of a matrix."""

    def __init__(self, P, block, f: Observable, lambda_cap=None, inf_threshold=1e6,
                 slope_floor=1e-8):
        self.block = tuple(block)
        idx = list(self.block)
        self.sub = np.asarray(P, dtype=float)[np.ix_(idx, idx)]
        self.sub = np.where(self.sub > EDGE_EPS, self.sub, 0.0)
        if not _is_irreducible(self.sub):
            raise NotIrreducible(f"block {self.block} is not irreducible")
        self.f = f
        self.fb = f.values[idx]
        self.dim = f.dim
        self.stochastic = bool(np.all(np.abs(self.sub.sum(axis=1) - 1.0) <= 1e-12))
        ranges = [cycle_mean_range(self.sub, self.fb[:, k]) for k in range(self.dim)]
        self._lo = np.array([r[0] for r in ranges])
        self._hi = np.array([r[1] for r in ranges])
        # at the cap Lambda' sits within about exp(-40 * gap / spread) of the
        # domain ends; larger tilts underflow products of the tilted matrix
        spread = float((self.fb.max(axis=0) - self.fb.min(axis=0)).max())
        if lambda_cap is None:
            lambda_cap = 40.0 / max(1.0, f.norm)
            if spread > 0:
                lambda_cap = max(lambda_cap, 40.0 / spread)
        self.lambda_cap = float(lambda_cap)
        self.inf_threshold = float(inf_threshold)
        self.slope_floor = float(slope_floor)
        self._scalar = len(idx) == 1

    def pressure(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if self._scalar:
            return math.log(self.sub[0, 0]) + float(self.fb[0] @ lam), self.fb[0].copy()
        norm = float(np.linalg.norm(lam))
        if norm > self.lambda_cap:
            # past the cap Lambda is affine along rays up to exp(-lambda * gap)
            edge = lam * (self.lambda_cap / norm)
            v, g = self._pressure(edge)
            return v + float(g @ (lam - edge)), g
        return self._pressure(lam)

    def _pressure(self, lam):
        expo = self.fb @ lam
        shift = expo.max()
        T = self.sub * np.exp(expo - shift)[None, :]
        pf = pf_eigen(T, check=False)
        # d rho / d lam_k = u^T (T o F_k) v / (u^T v), with u^T v = 1
        w = (pf.left @ T) * pf.right
        grad = (w @ self.fb) / pf.rho
        return math.log(pf.rho) + shift, grad

    def pressure_many(self, lams):
        lams = np.asarray(lams, dtype=float).reshape(-1, self.dim)
        if self._scalar:
            vals = math.log(self.sub[0, 0]) + lams @ self.fb[0]
            return vals, np.broadcast_to(self.fb[0], lams.shape).copy()
        out = [self.pressure(l) for l in lams]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])

    def cycle_points(self):
        """Mean of f over each simple cycle; the domain of I is their hull.

        None when the block has too many cycles to list.
        """
        if not hasattr(self, "_cycles"):
            cyc = simple_cycles(self.sub)
            self._cycles = None if cyc is None else np.array([self.fb[c].mean(axis=0) for c in cyc])
        return self._cycles

    def in_domain(self, x, tol=1e-12) -> bool:
        """x in the hull of cycle means; one dimension needs only the range."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        slack = tol * (1.0 + np.abs(x))
        if not (np.all(x >= self._lo - slack) and np.all(x <= self._hi + slack)):
            return False
        if self.dim == 1:
            return True
        pts = self.cycle_points()
        return True if pts is None else in_weighted_hulls([pts], [1.0], x)

    def rate(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.in_domain(x):
            return INF
        if self._scalar and self.dim == 1:
            # the point mass needs no iteration
            if abs(x[0] - self.fb[0, 0]) <= 1e-12:
                return -math.log(self.sub[0, 0])
        def fun_grad(lam):
            v, g = self.pressure(lam)
            return float(lam @ x) - v, x - g
        val, _ = maximize_concave(fun_grad, self.dim, self.lambda_cap, self.slope_floor,
                                  smooth=not self._scalar,
                                  bounded=self.dim == 1 or self.cycle_points() is not None)
        if val > self.inf_threshold:
            return INF
        # I >= -Lambda(0) >= 0; drop round-off below zero and at zero
        return float(val) if val > ZERO_TOL else 0.0

    def stationary_mean(self):
        return self.pressure(np.zeros(self.dim))[1]

    def domain_box(self):
        """Per-coordinate (lo, hi) of the domain of I: extreme cycle means."""
        return self._lo.copy(), self._hi.copy()


def pressure(br: BlockRate, lam):
    return br.pressure(lam)


def rate_eval(br: BlockRate, x) -> float:
    return br.rate(x)


def domain_box(br: BlockRate):
    return br.domain_box()
