"""State spaces, observables and transition schedules n -> P_n.

A schedule knows its limit matrix exactly. Families with closed forms also
report their connection decay exponents analytically (see
:meth:`Schedule.analytic_rates`) so downstream code never has to estimate a
limit it can compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidSpec, NotStochastic, OutOfRange
from .numerics import INF, NEG_INF, ext_mul

ROW_TOL = 1e-12


def check_stochastic(P, what="matrix", tol=ROW_TOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidSpec(f"{what}: expected a square matrix, got shape {P.shape}")
    if np.any(P < 0) or np.any(P > 1 + tol) or not np.all(np.isfinite(P)):
        raise NotStochastic(f"{what}: entries must lie in [0, 1]")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        i = int(bad[0])
        raise NotStochastic(f"{what}: row {i} sums to {float(sums[i])!r}, not 1")
    return P


def _safe_log(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(P)


@dataclass(frozen=True)
class Observable:
    """f : states -> R^d, stored as an (r, d) array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1 or not np.all(np.isfinite(v)):
            raise InvalidSpec("observable must be a finite (r, d) array")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        return float(np.abs(self.values).max())

    def cube(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.norm
        return np.full(self.dim, -n), np.full(self.dim, n)

    def in_cube(self, x, tol=1e-12) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(np.abs(x) <= self.norm + tol))


# --------------------------------------------------------------------------
# schedules


class Schedule:
    """Base class; subclasses implement :meth:`matrix`.

    ``rates`` optionally carries user-supplied analytic block rates ``(v, tau)``
    in decomposition block order.
    """

    family = "custom"

    def __init__(self, limit, pi=None, labels=None, rates=None):
        self.limit = check_stochastic(limit, "limit")
        r = self.limit.shape[0]
        self.labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(r))
        if len(self.labels) != r or len(set(self.labels)) != r:
            raise InvalidSpec("labels must be r distinct strings")
        pi = np.full(r, 1.0 / r) if pi is None else np.asarray(pi, dtype=float)
        if pi.shape != (r,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > ROW_TOL:
            raise InvalidSpec("initial distribution must be a probability vector of length r")
        self.pi = pi
        if rates is not None:
            v, tau = (np.asarray(a, dtype=float) for a in rates)
            if v.shape != tau.shape or v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise InvalidSpec("rates v and tau must be square matrices of equal shape")
            rates = (v, tau)
        self.rates = rates

    @property
    def size(self) -> int:
        return self.limit.shape[0]

    def matrix(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def log_matrix(self, n: int) -> np.ndarray:
        """Entrywise log of P_n; overridden where tiny entries underflow."""
        return _safe_log(self.matrix(n))

    # analytic knowledge ------------------------------------------------
    def analytic_rates(self, dec):
        """Return ``(v, tau, entry_limits)`` over blocks of ``dec`` or None.

        ``entry_limits`` is True when lim (1/n) log p_n(x, y) is known to exist
        for every cross-block pair (x, y).
        """
        if self.rates is not None:
            v, tau = self.rates
            k = len(dec.blocks)
            if v.shape != (k, k):
                raise InvalidSpec(f"supplied rates are {v.shape}, decomposition has {k} blocks")
            return v.copy(), tau.copy(), False
        return None

    def entry_liminf_rate(self, x: int, y: int):
        """liminf (1/n) log p_n(x, y) if known in closed form, else None."""
        return None

    def _check_n(self, n):
        if int(n) != n or n < 1:
            raise OutOfRange(f"step index must be a positive integer, got {n!r}")


def _constant_block_rates(P, dec):
    k = len(dec.blocks)
    v = np.full((k, k), NEG_INF)
    for i, Ci in enumerate(dec.blocks):
        for j, Cj in enumerate(dec.blocks):
            if i != j and P[np.ix_(Ci, Cj)].max() > 0:
                v[i, j] = 0.0
    np.fill_diagonal(v, 0.0)
    return v


class ConstantSchedule(Schedule):
    family = "constant"

    def matrix(self, n):
        self._check_n(n)
        return self.limit.copy()

    def analytic_rates(self, dec):
        supplied = super().analytic_rates(dec)
        if supplied is not None:
            return supplied
        v = _constant_block_rates(self.limit, dec)
        return v, v.copy(), True

    def entry_liminf_rate(self, x, y):
        return 0.0 if self.limit[x, y] > 0 else NEG_INF


class TabulatedSchedule(Schedule):
    """Explicit P_1..P_T followed by a constant tail, which is the limit."""

    family = "tabulated"

    def __init__(self, table, tail, pi=None, labels=None, rates=None):
        super().__init__(tail, pi=pi, labels=labels, rates=rates)
        self.table = [check_stochastic(m, f"table[{k}]") for k, m in enumerate(table)]
        for m in self.table:
            if m.shape != self.limit.shape:
                raise InvalidSpec("table matrices must match the tail shape")

    def matrix(self, n):
        self._check_n(n)
        if n <= len(self.table):
            return self.table[n - 1].copy()
        return self.limit.copy()

    def analytic_rates(self, dec):
        supplied = super().analytic_rates(dec)
        if supplied is not None:
            return supplied
        v = _constant_block_rates(self.limit, dec)
        return v, v.copy(), True

    def entry_liminf_rate(self, x, y):
        return 0.0 if self.limit[x, y] > 0 else NEG_INF


class CustomSchedule(Schedule):
    """Wraps a user callable ``n -> P_n``; rates are estimated unless supplied."""

    family = "custom"

    def __init__(self, fn: Callable[[int], np.ndarray], limit, pi=None, labels=None,
                 rates=None, log_fn=None, name="custom"):
        super().__init__(limit, pi=pi, labels=labels, rates=rates)
        self._fn = fn
        self._log_fn = log_fn
        self.name = name

    def matrix(self, n):
        self._check_n(n)
        return np.asarray(self._fn(n), dtype=float)

    def log_matrix(self, n):
        if self._log_fn is not None:
            self._check_n(n)
            return np.asarray(self._log_fn(n), dtype=float)
        return super().log_matrix(n)


# --------------------------------------------------------------------------
# Metropolis


@dataclass(frozen=True)
class Cooling:
    """Inverse temperature beta_n.

    kinds: ``linear`` (c n), ``logarithmic`` (c log n), ``power`` (c n^p) and
    ``tabulated`` (explicit values, optionally continued by ``tail``).
    """

    kind: str
    c: float = 1.0
    p: float = 1.0
    table: tuple = ()
    tail: "Cooling | None" = None

    def __post_init__(self):
        if self.kind not in ("linear", "logarithmic", "power", "tabulated"):
            raise InvalidSpec(f"unknown cooling kind {self.kind!r}")
        if self.kind == "tabulated":
            t = tuple(float(b) for b in self.table)
            if any(b < 0 for b in t) or any(b2 < b1 for b1, b2 in zip(t, t[1:])):
                raise InvalidSpec("tabulated cooling must be nonnegative and nondecreasing")
            object.__setattr__(self, "table", t)
        elif self.c < 0:
            raise InvalidSpec("cooling constant must be nonnegative")

    def beta(self, n: int) -> float:
        if self.kind == "linear":
            return self.c * n
        if self.kind == "logarithmic":
            return self.c * math.log(n)
        if self.kind == "power":
            return self.c * float(n) ** self.p
        if n <= len(self.table):
            return self.table[n - 1]
        if self.tail is None:
            raise OutOfRange(f"cooling table has {len(self.table)} entries, asked for n={n}")
        return self.tail.beta(n)

    @property
    def diverges(self) -> bool:
        if self.kind == "tabulated":
            return self.tail is not None and self.tail.diverges
        return self.c > 0 and (self.kind != "power" or self.p > 0)

    @property
    def speed(self) -> float:
        """lim beta_n / n in [0, inf]."""
        if self.kind == "tabulated":
            if self.tail is None:
                return 0.0
            return self.tail.speed
        if self.kind == "logarithmic" or self.c == 0:
            return 0.0
        if self.kind == "linear":
            return self.c
        if self.p < 1:
            return 0.0
        if self.p == 1:
            return self.c
        return INF


@dataclass(frozen=True)
class MetropolisSpec:
    g: np.ndarray
    H: np.ndarray
    cooling: Cooling

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        try:
            check_stochastic(g, "proposal g")
        except NotStochastic as exc:
            raise InvalidSpec(str(exc)) from None
        H = np.asarray(self.H, dtype=float).ravel()
        if H.shape != (g.shape[0],):
            raise InvalidSpec("energy H must have one value per state")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "H", H)

    def uphill(self) -> np.ndarray:
        """(H(j) - H(i))_+ as a matrix."""
        return np.maximum(self.H[None, :] - self.H[:, None], 0.0)


def metropolis_kernel(spec: MetropolisSpec, n: int) -> np.ndarray:
    if n < 1:
        raise OutOfRange("n must be >= 1")
    beta = spec.cooling.beta(n)
    with np.errstate(over="ignore", invalid="ignore"):
        P = spec.g * np.exp(-beta * spec.uphill())
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, np.clip(1.0 - P.sum(axis=1), 0.0, 1.0))
    return P


def metropolis_log_kernel(spec: MetropolisSpec, n: int) -> np.ndarray:
    beta = spec.cooling.beta(n)
    up = spec.uphill()
    logg = _safe_log(spec.g)
    L = logg - np.where(up > 0, beta * up, 0.0)
    P = metropolis_kernel(spec, n)
    np.fill_diagonal(L, _safe_log(np.diag(P)))
    return L


def metropolis_limit(spec: MetropolisSpec) -> np.ndarray:
    if not spec.cooling.diverges:
        raise InvalidSpec("cooling schedule is bounded; the limit is not a zero-temperature kernel")
    down = (spec.H[None, :] <= spec.H[:, None]).astype(float)
    P = spec.g * down
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


class MetropolisSchedule(Schedule):
    family = "metropolis"

    def __init__(self, spec: MetropolisSpec, pi=None, labels=None, rates=None):
        self.spec = spec
        super().__init__(metropolis_limit(spec), pi=pi, labels=labels, rates=rates)

    def matrix(self, n):
        self._check_n(n)
        return metropolis_kernel(self.spec, n)

    def log_matrix(self, n):
        self._check_n(n)
        return metropolis_log_kernel(self.spec, n)

    def entry_rate(self, x: int, y: int) -> float:
        """lim (1/n) log p_n(x, y) for x != y."""
        if self.spec.g[x, y] == 0:
            return NEG_INF
        return -ext_mul(self.spec.uphill()[x, y], self.spec.cooling.speed)

    def entry_liminf_rate(self, x, y):
        if x == y:
            return 0.0
        return self.entry_rate(x, y)

    def analytic_rates(self, dec):
        supplied = super().analytic_rates(dec)
        if supplied is not None:
            return supplied
        k = len(dec.blocks)
        v = np.zeros((k, k))
        for i, Ci in enumerate(dec.blocks):
            for j, Cj in enumerate(dec.blocks):
                if i != j:
                    v[i, j] = max(self.entry_rate(x, y) for x in Ci for y in Cj)
        return v, v.copy(), True


# --------------------------------------------------------------------------
# two-state alternating families


def _two_state(base: float, k: int):
    a = base ** k
    return np.array([[1.0 - a, a], [0.0, 1.0]])


def _two_state_log(base: float, k: int):
    la = k * math.log(base)
    return np.array([[math.log1p(-math.exp(la)), la], [NEG_INF, 0.0]])


class AlternatingTwoState(Schedule):
    """P_n = A_n for even n, B_n for odd n, where the 0 -> 1 entry is base^n."""

    family = "alternating"

    def __init__(self, even_base=0.5, odd_base=1.0 / 3.0, pi=(0.5, 0.5), labels=("0", "1")):
        if not (0 < even_base < 1 and 0 < odd_base < 1):
            raise InvalidSpec("alternating bases must lie in (0, 1)")
        self.even_base = float(even_base)
        self.odd_base = float(odd_base)
        super().__init__(np.eye(2), pi=pi, labels=labels)

    def base(self, n):
        return self.even_base if n % 2 == 0 else self.odd_base

    def matrix(self, n):
        self._check_n(n)
        return _two_state(self.base(n), n)

    def log_matrix(self, n):
        self._check_n(n)
        return _two_state_log(self.base(n), n)

    def analytic_rates(self, dec):
        hi = math.log(max(self.even_base, self.odd_base))
        lo = math.log(min(self.even_base, self.odd_base))
        return _two_block_rates(dec, hi, lo)

    def entry_liminf_rate(self, x, y):
        if x == y:
            return 0.0
        return math.log(min(self.even_base, self.odd_base)) if (x, y) == (0, 1) else NEG_INF


def _two_block_rates(dec, hi, lo):
    order = [tuple(b) for b in dec.blocks]
    i0, i1 = order.index((0,)), order.index((1,))
    v = np.full((2, 2), NEG_INF)
    tau = np.full((2, 2), NEG_INF)
    np.fill_diagonal(v, 0.0)
    np.fill_diagonal(tau, 0.0)
    v[i0, i1] = hi
    tau[i0, i1] = lo
    return v, tau, hi == lo


def default_block_boundary(k: int) -> int:
    return 2 ** (k * k)


class BlockAlternating(Schedule):
    """Identity up to g(2), then A_n on (g(2k), g(2k+1)] and B_n on (g(2k+1), g(2k+2)]."""

    family = "block_alternating"

    def __init__(self, boundary: Callable[[int], int] = default_block_boundary,
                 even_base=0.5, odd_base=1.0 / 3.0, pi=(0.5, 0.5), labels=("0", "1")):
        self.boundary = boundary
        self.a_base = float(even_base)
        self.b_base = float(odd_base)
        super().__init__(np.eye(2), pi=pi, labels=labels)

    def segment(self, n: int) -> str:
        """'I', 'A' or 'B' for step n."""
        if n <= self.boundary(2):
            return "I"
        k = 2
        while self.boundary(k) < n:
            k += 1
        # n lies in (g(k-1), g(k)]
        return "A" if k % 2 == 1 else "B"

    def matrix(self, n):
        self._check_n(n)
        seg = self.segment(n)
        if seg == "I":
            return np.eye(2)
        return _two_state(self.a_base if seg == "A" else self.b_base, n)

    def log_matrix(self, n):
        self._check_n(n)
        seg = self.segment(n)
        if seg == "I":
            return _safe_log(np.eye(2))
        return _two_state_log(self.a_base if seg == "A" else self.b_base, n)

    def analytic_rates(self, dec):
        hi = math.log(max(self.a_base, self.b_base))
        lo = math.log(min(self.a_base, self.b_base))
        return _two_block_rates(dec, hi, lo)

    def entry_liminf_rate(self, x, y):
        if x == y:
            return 0.0
        return NEG_INF if (x, y) != (0, 1) else math.log(min(self.a_base, self.b_base))


# --------------------------------------------------------------------------
# three-class periodic trap


class PeriodicTrap(Schedule):
    """Nine-state chain with a period-3 middle class whose exits are phase locked.

    States 0..8 (labels "1".."9") form C1 = {1,2,3}, C2 = {4,5,6} (a
    deterministic 3-cycle) and C3 = {7,8,9}. Entries from C1 into C2 decay at
    rate 0; exits from C2 to C3 decay at rate ``A`` along a rotating departure
    state and at rate ``2A + eps`` elsewhere. Every entry from C1 lands on the
    cycle phase that has no rate-``A`` exit, so paths C1 -> C2 -> C3 can only
    leave C2 at the exceptional times 3^(2^j) + 1, j >= ``exceptional_from``.
    Rows are renormalised.
    """

    family = "custom"
    name = "periodic-trap"

    def __init__(self, A=-1.0, eps=0.1, exceptional_from=5, pi=None):
        if not (A < 0 and eps > 0 and 2 * A + eps < A):
            raise InvalidSpec("need A < 0 and 0 < eps < -A")
        self.A = float(A)
        self.eps = float(eps)
        self.exceptional_from = int(exceptional_from)
        limit = np.zeros((9, 9))
        limit[0:3, 0:3] = 1.0 / 3.0
        limit[6:9, 6:9] = 1.0 / 3.0
        limit[3, 4] = limit[4, 5] = limit[5, 3] = 1.0
        super().__init__(limit, pi=pi, labels=[str(i) for i in range(1, 10)])

    # log of the three vanishing connection weights
    def log_t12(self, n):
        return -0.5 * math.log(n + 1.0)

    def log_t23(self, n):
        return self.A * n

    def log_t23_low(self, n):
        return (2 * self.A + self.eps) * n

    def is_exceptional(self, n: int) -> bool:
        j = self.exceptional_from
        while True:
            e = 3 ** (2 ** j) + 1
            if e == n:
                return True
            if e > n:
                return False
            j += 1

    def _log_unnormalised(self, n):
        L = _safe_log(self.limit.copy())
        t12, t23, low = self.log_t12(n), self.log_t23(n), self.log_t23_low(n)
        phase = n % 3
        if phase == 1 and self.is_exceptional(n):
            L[1, 5] = t12
            L[3, 8] = t23
            L[4, 8] = low
        elif phase == 1:
            L[1, 5] = t12
            L[3, 8] = t23
            L[5, 8] = low
        elif phase == 2:
            L[2, 3] = t12
            L[3, 6] = low
            L[4, 6] = t23
        else:
            L[0, 4] = t12
            L[4, 7] = low
            L[5, 7] = t23
        return L

    def log_matrix(self, n):
        self._check_n(n)
        L = self._log_unnormalised(n)
        m = L.max(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            norm = m + np.log(np.exp(L - m).sum(axis=1, keepdims=True))
        return L - norm

    def matrix(self, n):
        return np.exp(self.log_matrix(n))

    def analytic_rates(self, dec):
        k = len(dec.blocks)
        pos = {tuple(b): i for i, b in enumerate(dec.blocks)}
        c1, c2, c3 = pos[(0, 1, 2)], pos[(3, 4, 5)], pos[(6, 7, 8)]
        v = np.full((k, k), NEG_INF)
        np.fill_diagonal(v, 0.0)
        v[c1, c2] = 0.0
        v[c2, c3] = self.A
        return v, v.copy(), False

    def entry_liminf_rate(self, x, y):
        if self.limit[x, y] > 0:
            return 0.0
        return NEG_INF


# --------------------------------------------------------------------------


@dataclass
class Chain:
    """A schedule together with the observable f."""

    schedule: Schedule
    f: Observable
    name: str = "chain"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f.size != self.schedule.size:
            raise InvalidSpec(f"observable has {self.f.size} states, schedule has {self.schedule.size}")

    @property
    def labels(self):
        return self.schedule.labels


def schedule_matrix(s: Schedule, n: int) -> np.ndarray:
    return s.matrix(n)
