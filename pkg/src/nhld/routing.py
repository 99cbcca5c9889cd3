"""Connection weights between blocks, their decay exponents and routing costs.

``t(n, (i, j))`` is the largest one-step probability from block i to block j
at step n. Its limsup / liminf exponential rates ``v`` and ``tau`` feed the
upper and lower cost matrices U0 and T0, each obtained as a longest simple
path over blocks.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .chain_model import Schedule
from .decomposition import CanonicalDecomposition, EDGE_EPS, StarBlock, is_primitive
from .errors import InvalidSpec
from .numerics import NEG_INF

DP_MAX_BLOCKS = 16


# --------------------------------------------------------------------------
# connection weights and rates


def connection_weight(s: Schedule, dec: CanonicalDecomposition, n: int, i: int, j: int) -> float:
    if i == j:
        raise ValueError("connection weight needs distinct blocks")
    P = s.matrix(n)
    return float(P[np.ix_(dec.blocks[i], dec.blocks[j])].max())


def log_connection_weights(s: Schedule, dec: CanonicalDecomposition, n: int) -> np.ndarray:
    """log t(n, (i, j)) for all block pairs (diagonal left at 0)."""
    L = s.log_matrix(n)
    k = len(dec.blocks)
    out = np.zeros((k, k))
    for i, Ci in enumerate(dec.blocks):
        for j, Cj in enumerate(dec.blocks):
            if i != j:
                out[i, j] = L[np.ix_(Ci, Cj)].max()
    return out


@dataclass(frozen=True)
class RatePair:
    v: np.ndarray
    tau: np.ndarray
    provenance: str               # "analytic" or "estimated"
    entry_limits: bool = False    # lim (1/n) log p_n(x, y) known to exist entrywise
    stderr: np.ndarray | None = None

    def __post_init__(self):
        for m in (self.v, self.tau):
            off = m[~np.eye(m.shape[0], dtype=bool)]
            if np.any(off > 1e-12):
                raise InvalidSpec("decay exponents must be <= 0")
        off = ~np.eye(self.v.shape[0], dtype=bool)
        if np.any(self.tau[off] > self.v[off] + 1e-9):
            raise InvalidSpec("liminf exponent exceeds limsup exponent")


def _fit_envelope_slopes(ns, logs):
    """Slopes of log t(n) along its upper and lower halves, with a stderr."""
    x = ns.astype(float)
    slope, icpt = np.polyfit(x, logs, 1)
    resid = logs - (slope * x + icpt)
    up = resid >= -1e-12 * (1 + np.abs(logs))
    lo = resid <= 1e-12 * (1 + np.abs(logs))

    def fit(mask):
        if mask.sum() < 2:
            return slope
        return float(np.polyfit(x[mask], logs[mask], 1)[0])

    se = float(np.sqrt(np.sum(resid ** 2) / max(1, len(x) - 2)) / np.sqrt(np.sum((x - x.mean()) ** 2)))
    return max(fit(up), slope), min(fit(lo), slope), se


def estimate_rates(s: Schedule, dec: CanonicalDecomposition, window=(1, 10_000)) -> RatePair:
    lo, hi = window
    start = max(lo, hi - max(2, (hi - lo + 1) // 5) + 1)
    ns = np.arange(start, hi + 1)
    stack = np.array([log_connection_weights(s, dec, int(n)) for n in ns])
    k = len(dec.blocks)
    v = np.zeros((k, k))
    tau = np.zeros((k, k))
    se = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            logs = stack[:, i, j]
            finite = np.isfinite(logs)
            if not finite.any():
                v[i, j] = tau[i, j] = NEG_INF
                continue
            up, down, err = _fit_envelope_slopes(ns[finite], logs[finite])
            v[i, j] = min(up, 0.0)
            tau[i, j] = NEG_INF if not finite.all() else min(down, v[i, j])
            se[i, j] = err
    return RatePair(v, tau, "estimated", False, se)


def rate_limits(s: Schedule, dec: CanonicalDecomposition, window=(1, 10_000)) -> RatePair:
    got = s.analytic_rates(dec)
    if got is not None:
        v, tau, entry = got
        return RatePair(np.asarray(v, float), np.asarray(tau, float), "analytic", bool(entry))
    return estimate_rates(s, dec, window)


# --------------------------------------------------------------------------
# monotone envelope


def log_monotone_envelope(log_t, limit: float, limsup_rate: float | None = None,
                          eventually_zero: bool | None = None) -> np.ndarray:
    """log of a nonincreasing majorant of t_1..t_W with the same exponential rate.

    Works on log t_n (``-inf`` for zeros) so sequences like 2^-n stay
    representable. ``limit`` is the declared limit of t_n; ``limsup_rate``
    the declared limsup of (1/n) log t_n (estimated from the tail when
    omitted). Values past the window follow the declared limit and rate.
    """
    lt = np.asarray(log_t, dtype=float)
    if np.any(lt > 0) or np.any(np.isnan(lt)):
        raise InvalidSpec("envelope input must lie in [0, 1]")
    W = len(lt)
    n = np.arange(1, W + 1)

    if limit > 0:
        tail_sup = np.maximum.accumulate(lt[::-1])[::-1]
        return np.maximum(tail_sup, math.log(limit))

    nz = np.flatnonzero(np.isfinite(lt))
    if eventually_zero is None:
        eventually_zero = nz.size == 0 or nz[-1] < W - 1
    per_step = lt / n
    if limsup_rate is None:
        if eventually_zero:
            limsup_rate = NEG_INF
        else:
            tail = slice(W - max(2, W // 5), W)
            limsup_rate = min(0.0, float(np.max(per_step[tail])))

    if limsup_rate < 0 and eventually_zero:
        N0 = (nz[-1] + 2) if nz.size else 1
        return np.where(n < N0, 0.0, -(n.astype(float) ** 2))

    if limsup_rate < 0:
        # a_l = sup_{j >= l} (1/j) log t_j, the tail beyond W contributing the rate
        a = np.maximum(np.maximum.accumulate(per_step[::-1])[::-1], limsup_rate)
        beyond = (W + 1) * limsup_rate
        return np.maximum(np.maximum.accumulate((n * a)[::-1])[::-1], beyond)

    # limsup rate 0: needs t_n < 1 from some N2 on
    ones = np.flatnonzero(lt >= 0.0)
    if ones.size and ones[-1] == W - 1:
        raise InvalidSpec("t_n = 1 at the end of the window; the rate-zero envelope needs t_n < 1 eventually")
    N2 = (ones[-1] + 2) if ones.size else 1
    out = np.zeros(W)
    k = N2 - 1
    b = np.maximum.accumulate(per_step[k:])
    out[k:] = np.maximum.accumulate((n[k:] * b)[::-1])[::-1]
    return out


def monotone_envelope(t, limit: float, limsup_rate: float | None = None,
                      eventually_zero: bool | None = None) -> np.ndarray:
    """exp of ``log_monotone_envelope``; entries may underflow to 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise InvalidSpec("envelope input must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        lt = np.log(t)
    return np.exp(log_monotone_envelope(lt, limit, limsup_rate, eventually_zero))


# --------------------------------------------------------------------------
# longest simple paths


def path_cost_matrix(base) -> np.ndarray:
    """All-pairs maximum of summed base costs over simple paths i -> j."""
    base = np.asarray(base, dtype=float)
    K = base.shape[0]
    if K > DP_MAX_BLOCKS:
        return _path_cost_dfs(base)
    B = base.copy()
    np.fill_diagonal(B, NEG_INF)
    full = 1 << K
    dp = np.full((full, K, K), NEG_INF)     # dp[mask, start, last]
    for s in range(K):
        dp[1 << s, s, s] = 0.0
    bits = [1 << j for j in range(K)]
    for mask in range(1, full):
        cur = dp[mask]
        if not np.isfinite(cur).any():
            continue
        # extend every (start, last) by one edge last -> j
        ext = (cur[:, :, None] + B[None, :, :]).max(axis=1)   # (start, j)
        for j in range(K):
            if mask & bits[j]:
                continue
            col = ext[:, j]
            tgt = dp[mask | bits[j], :, j]
            np.maximum(tgt, col, out=tgt)
    out = dp.max(axis=0)
    np.fill_diagonal(out, 0.0)
    return out


def _path_cost_dfs(base):
    K = base.shape[0]
    out = np.full((K, K), NEG_INF)
    np.fill_diagonal(out, 0.0)

    def dfs(start, node, visited, total):
        for j in range(K):
            if visited & (1 << j) or not np.isfinite(base[node, j]):
                continue
            val = total + base[node, j]
            if val > out[start, j]:
                out[start, j] = val
            dfs(start, j, visited | (1 << j), val)

    for s in range(K):
        dfs(s, s, 1 << s, 0.0)
    return out


def path_cost(base, i: int, j: int) -> float:
    if i == j:
        raise ValueError("path cost needs distinct blocks")
    return float(path_cost_matrix(base)[i, j])


def path_cost_bruteforce(base, i: int, j: int) -> float:
    """Enumerate every tuple of distinct intermediate blocks; test oracle."""
    base = np.asarray(base, dtype=float)
    K = base.shape[0]
    others = [k for k in range(K) if k not in (i, j)]
    best = NEG_INF
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            seq = (i, *mid, j)
            best = max(best, sum(base[a, b] for a, b in zip(seq, seq[1:])))
    return best


def cost_U0(rp: RatePair) -> np.ndarray:
    return path_cost_matrix(rp.v)


def cost_T0(rp: RatePair) -> np.ndarray:
    return path_cost_matrix(rp.tau)


# --------------------------------------------------------------------------
# assumptions and regimes


@dataclass(frozen=True)
class AssumptionReport:
    assumption_A: bool
    LIM: bool
    PRM_limit: bool
    assumption_C: bool
    lower_cost_valid: bool

    def lines(self):
        yes = lambda b: "yes" if b else "no"
        return [
            f"assumption_A: {yes(self.assumption_A)}",
            f"LIM: {yes(self.LIM)}",
            f"PRM_limit: {yes(self.PRM_limit)}",
            f"assumption_C: {yes(self.assumption_C)}",
            f"lower_cost_valid: {yes(self.lower_cost_valid)}",
        ]


def check_assumptions(rp: RatePair, dec: CanonicalDecomposition, star, limit=None) -> AssumptionReport:
    off = ~np.eye(rp.v.shape[0], dtype=bool)
    if rp.provenance == "analytic":
        a = bool(np.array_equal(rp.v[off], rp.tau[off]))
    else:
        both_inf = np.isneginf(rp.v[off]) & np.isneginf(rp.tau[off])
        with np.errstate(invalid="ignore"):
            close = np.abs(rp.v[off] - rp.tau[off]) <= 1e-9
        a = bool(np.all(both_inf | close))
    lim = bool(rp.provenance == "analytic" and rp.entry_limits and a)
    star = list(star)
    if limit is not None:
        prm = all(is_primitive(limit, dec.blocks[i]) for i in dec.G)
    else:
        prm = all(is_primitive(np.where(sb.matrix > 0, sb.matrix, 0), range(sb.matrix.shape[0]))
                  and np.array_equal(sb.matrix > 0, sb.matrix > 0) for sb in star)
    c = all(sb.primitive for sb in star) or prm
    return AssumptionReport(a, lim, prm, c, lim or c)


class Regime(enum.Enum):
    HOMOGENEOUS = "Homogeneous"
    TRIVIAL = "Trivial"
    INTERMEDIATE = "Intermediate"
    MIXED = "Mixed"
    SINGLE_BLOCK = "SingleBlock"


def homogeneous_costs(limit, dec: CanonicalDecomposition) -> np.ndarray:
    """U0 of the time-homogeneous chain run with the limit: 0 if reachable, else -inf."""
    k = len(dec.blocks)
    base = np.full((k, k), NEG_INF)
    for i, Ci in enumerate(dec.blocks):
        for j, Cj in enumerate(dec.blocks):
            if i == j or np.asarray(limit)[np.ix_(Ci, Cj)].max() > EDGE_EPS:
                base[i, j] = 0.0
    return path_cost_matrix(base)


def classify_regime(U0, dec: CanonicalDecomposition, limit, v=None) -> Regime:
    if dec.M == 1:
        return Regime.SINGLE_BLOCK
    limit = np.asarray(limit)
    k = len(dec.blocks)
    homogeneous = True
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            vanishing = limit[np.ix_(dec.blocks[i], dec.blocks[j])].max() <= EDGE_EPS
            if v is not None:
                if vanishing and v[i, j] != NEG_INF:
                    homogeneous = False
            elif vanishing and U0[i, j] != homogeneous_costs(limit, dec)[i, j]:
                homogeneous = False
    if homogeneous:
        return Regime.HOMOGENEOUS
    ms = dec.M_set
    pairs = [U0[i, j] for i in ms for j in ms if i != j]
    if pairs and all(c == 0.0 for c in pairs):
        return Regime.TRIVIAL
    if pairs and all(NEG_INF < c < 0 for c in pairs):
        return Regime.INTERMEDIATE
    return Regime.MIXED
