"""Exact law of the additive average Z_n and a Monte Carlo simulator.

The exact law is computed by a forward recursion over (state, integer sum)
in log space. f is scaled by the least common denominator Q of its values
so sums live on a lattice. Each state keeps its support as one contiguous
interval of sums; absorbing states (p(y, y) = 1 and nothing else leaving y)
are updated in place so long horizons on such chains stay linear in n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .chain_model import Observable, Schedule
from .decomposition import CanonicalDecomposition
from .errors import BudgetExceeded, InvalidSpec, UnsupportedDimension
from .numerics import NEG_INF

MAX_DENOMINATOR = 10 ** 6
DEFAULT_BUDGET = 2 * 10 ** 8


def lattice_scale(f: Observable) -> tuple[int, np.ndarray]:
    """(Q, Q f as integers) with Q the lcm of the denominators of f.

    Each value is read as the simplest fraction within 1e-12 of it, so 1/3
    typed as 0.333333333333 still lands on the lattice with Q = 3.
    """
    if f.dim != 1:
        raise UnsupportedDimension("the exact oracle handles one-dimensional f only")
    fracs = []
    for x in f.values[:, 0]:
        fr = Fraction(float(x)).limit_denominator(MAX_DENOMINATOR)
        if abs(float(fr) - x) > 1e-12 * max(1.0, abs(x)):
            raise InvalidSpec(f"f value {x!r} is not a fraction with denominator <= {MAX_DENOMINATOR}")
        fracs.append(fr)
    Q = 1
    for fr in fracs:
        Q = Q * fr.denominator // math.gcd(Q, fr.denominator)
        if Q > MAX_DENOMINATOR:
            raise InvalidSpec(f"f needs a lattice denominator above {MAX_DENOMINATOR}")
    return Q, np.array([int(fr * Q) for fr in fracs], dtype=np.int64)


class _Segment:
    """Log-probabilities over the sums off, off+1, ..., off+size-1."""

    __slots__ = ("buf", "lo", "size", "off")

    def __init__(self, off: int, values: np.ndarray):
        self.buf = np.array(values, dtype=float)
        self.lo = 0
        self.size = len(values)
        self.off = int(off)

    @property
    def values(self):
        return self.buf[self.lo:self.lo + self.size]

    def _reserve(self, new_off: int, new_end: int):
        end = self.off + self.size
        left = max(0, self.off - new_off)
        right = max(0, new_end - end)
        if left <= self.lo and self.lo + self.size + right <= len(self.buf):
            self.lo -= left
            self.off -= left
            self.size += left + right
            return
        n = self.size + left + right
        cap = max(2 * n, 16)
        buf = np.full(cap, NEG_INF)
        start = (cap - n) // 2
        buf[start + left:start + left + self.size] = self.values
        self.buf, self.lo, self.size, self.off = buf, start, n, self.off - left

    def merge(self, off: int, vals: np.ndarray):
        self._reserve(off, off + len(vals))
        a = self.lo + off - self.off
        sl = self.buf[a:a + len(vals)]
        np.logaddexp(sl, vals, out=sl)

    def trim(self, floor: float):
        v = self.values
        keep = np.flatnonzero(v >= floor)
        if keep.size == 0:
            self.size = 0
            return
        a, b = int(keep[0]), int(keep[-1]) + 1
        self.lo += a
        self.off += a
        self.size = b - a


@dataclass
class ExactDistribution:
    n: int
    Q: int
    offset: int                 # sum value of logp[0]
    logp: np.ndarray            # log P(sum Q f(X_i) = offset + k)
    by_state: list              # per terminal state: (offset, logp) or None

    def sums(self):
        return self.offset + np.arange(len(self.logp))

    def values(self):
        """Support points of Z_n as floats."""
        return self.sums() / (self.n * self.Q)

    def total(self) -> float:
        return _lse(self.logp)

    def mean(self) -> float:
        p = np.exp(self.logp - self.total())
        return float(p @ self.values())


def _lse(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return NEG_INF
    m = a.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(a - m).sum()))


class _Recursion:
    """Forward recursion state; ``advance`` moves from step t to t + 1."""

    def __init__(self, s: Schedule, f: Observable, horizon: int, budget=DEFAULT_BUDGET, prune=True):
        self.s = s
        self.Q, self.qf = lattice_scale(f)
        r = s.size
        span = int(self.qf.max() - self.qf.min())
        required = r * (horizon * span + 1)
        if required > budget:
            raise BudgetExceeded(f"exact recursion needs about {required} cells, budget {budget}", required)
        self.floor = -10.0 * horizon * max(1, int(np.abs(self.qf).max())) if prune else NEG_INF
        with np.errstate(divide="ignore"):
            lpi = np.log(s.pi)
        self.seg = [_Segment(0, [lpi[x]]) if s.pi[x] > 0 else None for x in range(r)]
        self.t = 0

    def advance(self):
        t = self.t + 1
        L = self.s.log_matrix(t)
        r = L.shape[0]
        old = self.seg
        finite = np.isfinite(L)
        absorbing = [bool(L[y, y] == 0.0 and finite[y].sum() == 1) for y in range(r)]
        new = [None] * r
        for y in sorted(range(r), key=lambda y: absorbing[y]):
            q = int(self.qf[y])
            srcs = [x for x in range(r) if finite[x, y] and old[x] is not None and old[x].size > 0
                    and not (absorbing[y] and x == y)]
            if absorbing[y] and old[y] is not None and old[y].size > 0:
                acc = old[y]
                acc.off += q
            else:
                acc = None
            for x in srcs:
                sx = old[x]
                vals = sx.values + L[x, y]
                if acc is None:
                    acc = _Segment(sx.off + q, vals)
                else:
                    acc.merge(sx.off + q, vals)
            if acc is not None and self.floor > NEG_INF:
                acc.trim(self.floor)
            new[y] = acc if acc is not None and acc.size > 0 else None
        self.seg = new
        self.t = t

    def snapshot(self) -> ExactDistribution:
        segs = [(sg.off, sg.values.copy()) if sg is not None else None for sg in self.seg]
        live = [g for g in segs if g is not None]
        if not live:
            return ExactDistribution(self.t, self.Q, 0, np.array([NEG_INF]), segs)
        lo = min(o for o, _ in live)
        hi = max(o + len(v) for o, v in live)
        out = np.full(hi - lo, NEG_INF)
        for o, v in live:
            sl = out[o - lo:o - lo + len(v)]
            np.logaddexp(sl, v, out=sl)
        return ExactDistribution(self.t, self.Q, lo, out, segs)


def exact_distribution(s: Schedule, f: Observable, n: int, budget=DEFAULT_BUDGET,
                       prune=True) -> ExactDistribution:
    if n < 1:
        raise ValueError("horizon must be >= 1")
    rec = _Recursion(s, f, n, budget, prune)
    for _ in range(n):
        rec.advance()
    return rec.snapshot()


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: Fraction
    lo_open: bool = False
    hi_open: bool = False

    def sum_range(self, n: int, Q: int) -> tuple[int, int]:
        """Inclusive range of lattice sums s with s / (n Q) inside the interval."""
        a = self.lo * n * Q
        b = self.hi * n * Q
        first = math.floor(a) + 1 if self.lo_open else math.ceil(a)
        last = math.ceil(b) - 1 if self.hi_open else math.floor(b)
        return first, last

    def contains(self, z: Fraction) -> bool:
        above = z > self.lo if self.lo_open else z >= self.lo
        below = z < self.hi if self.hi_open else z <= self.hi
        return above and below


def _frac(tok) -> Fraction:
    tok = str(tok).strip()
    if tok in ("inf", "+inf"):
        return Fraction(10 ** 30)
    if tok == "-inf":
        return Fraction(-10 ** 30)
    return Fraction(tok)


def parse_event(text: str) -> list[Interval]:
    """``a,b`` or ``a,b,open`` or ``a,b,open,closed``; unions separated by ``;``."""
    out = []
    for part in text.split(";"):
        toks = [t.strip() for t in part.split(",") if t.strip()]
        if len(toks) not in (2, 3, 4):
            raise InvalidSpec(f"cannot parse interval {part!r}; expected a,b[,open|closed[,open|closed]]")
        flags = toks[2:] or ["closed"]
        if len(flags) == 1:
            flags = flags * 2
        for fl in flags:
            if fl not in ("open", "closed"):
                raise InvalidSpec(f"interval flag must be open or closed, got {fl!r}")
        try:
            lo, hi = _frac(toks[0]), _frac(toks[1])
        except (ValueError, ZeroDivisionError):
            raise InvalidSpec(f"bad interval endpoints in {part!r}") from None
        if lo > hi:
            raise InvalidSpec(f"interval {part!r} has lo > hi")
        out.append(Interval(lo, hi, flags[0] == "open", flags[1] == "open"))
    return out


def event_log_prob(ed: ExactDistribution, B) -> float:
    if isinstance(B, Interval):
        B = [B]
    if isinstance(B, str):
        B = parse_event(B)
    sums = ed.sums()
    mask = np.zeros(len(sums), dtype=bool)
    for iv in B:
        a, b = iv.sum_range(ed.n, ed.Q)
        mask |= (sums >= a) & (sums <= b)
    return _lse(ed.logp[mask])


def rate_trace(s: Schedule, f: Observable, B, ns, budget=DEFAULT_BUDGET):
    """Rows (n, log P(Z_n in B), (1/n) log P(Z_n in B)), one recursion for all n."""
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise ValueError("horizons must be positive")
    if isinstance(B, str):
        B = parse_event(B)
    rec = _Recursion(s, f, ns[-1], budget)
    rows = []
    for n in ns:
        while rec.t < n:
            rec.advance()
        lp = event_log_prob(rec.snapshot(), B)
        rows.append((n, lp, lp / n))
    return rows


# --------------------------------------------------------------------------
# brute force and moments


def enumerate_paths(s: Schedule, f: Observable, n: int) -> dict:
    """log P(sum Q f = k) by walking every positive-probability path."""
    Q, qf = lattice_scale(f)
    logs = [s.log_matrix(t) for t in range(1, n + 1)]
    acc: dict[int, list] = {}

    def walk(t, x, lp, total):
        if t == n:
            acc.setdefault(total, []).append(lp)
            return
        row = logs[t][x]
        for y in np.flatnonzero(np.isfinite(row)):
            walk(t + 1, int(y), lp + row[y], total + int(qf[y]))

    for x0 in range(s.size):
        if s.pi[x0] > 0:
            walk(0, x0, math.log(s.pi[x0]), 0)
    return {k: _lse(v) for k, v in acc.items()}


def state_marginals(s: Schedule, n: int) -> np.ndarray:
    """Rows mu_1..mu_n of the state law, mu_t = pi P_1 ... P_t."""
    mu = s.pi.copy()
    out = np.empty((n, s.size))
    for t in range(1, n + 1):
        mu = mu @ s.matrix(t)
        out[t - 1] = mu
    return out


def exact_mean(s: Schedule, f: Observable, n: int) -> np.ndarray:
    return state_marginals(s, n).mean(axis=0) @ f.values


# --------------------------------------------------------------------------
# simulation


@dataclass
class SimulationReport:
    replicas: int
    n: int
    seed: int
    Z: np.ndarray                  # (R, d)
    terminal_state: np.ndarray
    terminal_block: np.ndarray
    histogram: dict                # block index -> count

    def lines(self, dec: CanonicalDecomposition, labels):
        out = [f"replicas: {self.replicas}", f"horizon: {self.n}", f"seed: {self.seed}"]
        for b in sorted(self.histogram):
            names = ",".join(labels[x] for x in dec.blocks[b])
            out.append(f"block {b} {{{names}}}: {self.histogram[b]}")
        return out


def simulate(s: Schedule, f: Observable, n: int, R: int, seed: int, dec: CanonicalDecomposition | None = None,
             batch: int = 2048) -> SimulationReport:
    """R trajectories; replica i draws from the stream spawned as child i of ``seed``."""
    if R < 1 or n < 1:
        raise ValueError("need R >= 1 and n >= 1")
    children = np.random.SeedSequence(seed).spawn(R)
    r = s.size
    Z = np.zeros((R, f.dim))
    term = np.empty(R, dtype=np.int64)
    cum_cache: dict[int, np.ndarray] = {}

    def cum(t):
        if t not in cum_cache:
            c = np.cumsum(s.matrix(t), axis=1)
            c[:, -1] = np.inf
            cum_cache[t] = c
        return cum_cache[t]

    pi_cum = np.cumsum(s.pi)
    pi_cum[-1] = np.inf
    for start in range(0, R, batch):
        idx = range(start, min(R, start + batch))
        U = np.stack([np.random.default_rng(children[i]).random(n + 1) for i in idx])
        x = np.searchsorted(pi_cum, U[:, 0], side="right")
        total = np.zeros((len(idx), f.dim))
        for t in range(1, n + 1):
            c = cum(t)[x]
            x = (U[:, t][:, None] >= c).sum(axis=1)
            total += f.values[x]
        Z[start:start + len(idx)] = total / n
        term[start:start + len(idx)] = x
        if len(cum_cache) > 64:
            cum_cache.clear()
    if dec is not None:
        block_of = np.empty(r, dtype=np.int64)
        for b, members in enumerate(dec.blocks):
            block_of[list(members)] = b
        tb = block_of[term]
    else:
        tb = np.full(R, -1)
    hist = {int(b): int(c) for b, c in zip(*np.unique(tb, return_counts=True))}
    return SimulationReport(R, n, seed, Z, term, tb, hist)
