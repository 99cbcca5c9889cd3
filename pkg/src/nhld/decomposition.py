"""Canonical upper block form of a stochastic limit matrix.

Communicating classes are the strongly connected components of the support
digraph. A class is stochastic when it has no positive exit, degenerate
transient when it is a single state without a self loop, and nondegenerate
transient otherwise. Blocks are listed in a topological order of the class
condensation (a class precedes every class it can reach), ties broken by the
smallest original state index, and stochastic classes come last.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .chain_model import ROW_TOL, Schedule, check_stochastic
from .errors import NotIrreducible
from .numerics import NEG_INF

EDGE_EPS = 1e-300


class BlockClass(enum.Enum):
    DEGENERATE = "DegenerateTransient"
    NONDEGENERATE = "NondegenerateTransient"
    STOCHASTIC = "Stochastic"


@dataclass(frozen=True)
class CanonicalDecomposition:
    blocks: tuple          # tuple of sorted state-index tuples
    classes: tuple         # BlockClass per block
    state_order: tuple     # permutation realising the upper block form
    p_min: float

    @property
    def D(self):
        return tuple(i for i, c in enumerate(self.classes) if c is BlockClass.DEGENERATE)

    @property
    def N_set(self):
        return tuple(i for i, c in enumerate(self.classes) if c is BlockClass.NONDEGENERATE)

    @property
    def M_set(self):
        return tuple(i for i, c in enumerate(self.classes) if c is BlockClass.STOCHASTIC)

    @property
    def G(self):
        return tuple(i for i, c in enumerate(self.classes) if c is not BlockClass.DEGENERATE)

    @property
    def N(self):
        return len(self.D)

    @property
    def M(self):
        return len(self.G)

    def block_of(self, state: int) -> int:
        for i, b in enumerate(self.blocks):
            if state in b:
                return i
        raise KeyError(state)


def _support(P):
    return np.asarray(P) > EDGE_EPS


def strongly_connected_components(adj: np.ndarray) -> list[list[int]]:
    """Tarjan's algorithm, iterative. Components come out in reverse topological order."""
    n = adj.shape[0]
    succ = [np.flatnonzero(adj[v]).tolist() for v in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            for k in range(pos, len(succ[v])):
                w = succ[v][k]
                if index[w] == -1:
                    work.append((v, k + 1))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return comps


def decompose(P) -> CanonicalDecomposition:
    P = check_stochastic(P, "limit matrix", tol=ROW_TOL)
    adj = _support(P)
    comps = strongly_connected_components(adj)
    comp_of = np.empty(P.shape[0], dtype=int)
    for c, members in enumerate(comps):
        comp_of[members] = c

    k = len(comps)
    succ = [set() for _ in range(k)]
    indeg = [0] * k
    for x, y in zip(*np.nonzero(adj)):
        a, b = comp_of[x], comp_of[y]
        if a != b and b not in succ[a]:
            succ[a].add(b)
            indeg[b] += 1

    closed = [not succ[c] for c in range(k)]

    def classify(c):
        members = comps[c]
        if closed[c]:
            return BlockClass.STOCHASTIC
        if len(members) == 1 and not adj[members[0], members[0]]:
            return BlockClass.DEGENERATE
        return BlockClass.NONDEGENERATE

    # Kahn's algorithm; among ready classes pick transient before stochastic,
    # then the smallest state index.
    ready = [c for c in range(k) if indeg[c] == 0]
    order = []
    indeg = indeg[:]
    while ready:
        ready.sort(key=lambda c: (closed[c], comps[c][0]))
        c = ready.pop(0)
        order.append(c)
        for b in sorted(succ[c]):
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    # stochastic blocks are sinks; move them to the end keeping relative order
    order = [c for c in order if not closed[c]] + [c for c in order if closed[c]]

    blocks = tuple(tuple(comps[c]) for c in order)
    classes = tuple(classify(c) for c in order)
    state_order = tuple(s for b in blocks for s in b)

    positives = [
        P[x, y]
        for b, cl in zip(blocks, classes) if cl is not BlockClass.DEGENERATE
        for x in b for y in b if P[x, y] > EDGE_EPS
    ]
    p_min = min(positives) if positives else math.nan
    return CanonicalDecomposition(blocks, classes, state_order, p_min)


def reordered(P, dec: CanonicalDecomposition) -> np.ndarray:
    idx = list(dec.state_order)
    return np.asarray(P)[np.ix_(idx, idx)]


def _is_irreducible(A) -> bool:
    adj = _support(A)
    if adj.shape[0] == 0:
        return False
    comps = strongly_connected_components(adj)
    if len(comps) != 1:
        return False
    return adj.shape[0] > 1 or bool(adj[0, 0])


def period(P, block) -> int:
    """Common period of an irreducible block, by BFS levels.

    With BFS depths ``lvl`` from any root, the period is the gcd of
    ``lvl[x] + 1 - lvl[y]`` over all edges x -> y inside the block.
    """
    idx = list(block)
    A = np.asarray(P)[np.ix_(idx, idx)]
    if not _is_irreducible(A):
        raise NotIrreducible(f"block {tuple(block)} is not irreducible")
    adj = _support(A)
    n = len(idx)
    lvl = [-1] * n
    lvl[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for x in frontier:
            for y in np.flatnonzero(adj[x]):
                if lvl[y] == -1:
                    lvl[y] = lvl[x] + 1
                    nxt.append(int(y))
        frontier = nxt
    diffs = [lvl[x] + 1 - lvl[y] for x, y in zip(*np.nonzero(adj))]
    return reduce(math.gcd, (abs(d) for d in diffs), 0)


def is_primitive(P, block) -> bool:
    """True iff some boolean power of the block is entrywise positive.

    Checked at Wielandt's exponent (m - 1)**2 + 1 for an m-state block, by
    repeated squaring; powers of a primitive matrix stay positive.
    """
    idx = list(block)
    A = _support(np.asarray(P)[np.ix_(idx, idx)]).astype(np.int64)
    m = len(idx)
    target = (m - 1) ** 2 + 1
    B = A.copy()
    k = 1
    while k < target:
        B = np.minimum(B @ B, 1)
        k *= 2
    return bool(B.all())


# --------------------------------------------------------------------------
# Assumption C and initial ergodicity


def estimate_liminf_rate(s: Schedule, x: int, y: int, window=(1, 10_000)):
    """Least-squares slope of log p_n(x, y) over the last 20% of the window."""
    lo, hi = window
    start = max(lo, hi - max(2, (hi - lo + 1) // 5) + 1)
    ns = np.arange(start, hi + 1)
    logs = np.array([s.log_matrix(int(n))[x, y] for n in ns])
    if np.any(~np.isfinite(logs)):
        return NEG_INF
    slope = np.polyfit(ns.astype(float), logs, 1)[0]
    return float(slope)


@dataclass(frozen=True)
class StarBlock:
    block: int
    matrix: np.ndarray
    primitive: bool
    provenance: str


def star_matrices(s: Schedule, dec: CanonicalDecomposition, window=(1, 10_000)):
    """P*(i) for i in G with primitivity flags.

    A zero limit entry is promoted to 1 when its liminf decay rate is zero.
    Closed-form rates are used when the schedule has them; otherwise the rate
    counts as zero when the fitted slope exceeds -10/W.
    """
    W = window[1] - window[0] + 1
    tol = 10.0 / W
    out = []
    for i in dec.G:
        idx = list(dec.blocks[i])
        Pi = s.limit[np.ix_(idx, idx)]
        star = np.where(Pi > EDGE_EPS, Pi, 0.0)
        prov = "analytic"
        for a, x in enumerate(idx):
            for b, y in enumerate(idx):
                if star[a, b] > 0:
                    continue
                rate = s.entry_liminf_rate(x, y)
                if rate is None:
                    prov = "estimated"
                    rate = estimate_liminf_rate(s, x, y, window)
                    zero = rate > -tol
                else:
                    zero = rate == 0.0
                if zero:
                    star[a, b] = 1.0
        out.append(StarBlock(i, star, is_primitive(star, range(len(idx))), prov))
    return out


@dataclass(frozen=True)
class SIEReport:
    ok: bool
    starved_blocks: tuple
    unsupported_edges: tuple  # (n, x, y) where the limit is positive but p_n vanishes

    def lines(self, labels):
        out = [f"SIE-1: {'yes' if self.ok else 'no'}"]
        for b in self.starved_blocks:
            out.append(f"  initial distribution gives no mass to block {b}")
        for n, x, y in self.unsupported_edges[:10]:
            out.append(f"  p_{n}({labels[x]},{labels[y]}) = 0 but the limit entry is positive")
        return out


def check_sie1(s: Schedule, dec: CanonicalDecomposition, window=50) -> SIEReport:
    starved = tuple(i for i in dec.G if s.pi[list(dec.blocks[i])].sum() <= 0)
    edges = [(x, y) for i in dec.G for x in dec.blocks[i] for y in dec.blocks[i]
             if s.limit[x, y] > EDGE_EPS]
    bad = []
    for n in range(1, window + 1):
        L = s.log_matrix(n)
        for x, y in edges:
            if not np.isfinite(L[x, y]):
                bad.append((n, x, y))
    return SIEReport(not starved and not bad, starved, tuple(bad))
