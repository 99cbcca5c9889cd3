"""Extended-real and log-domain helpers.

Extended reals are plain Python floats, with ``math.inf`` and ``-math.inf``
as the two infinite elements. IEEE arithmetic gets ``inf * 0`` wrong for our
purposes (NaN), so every product that can meet an infinity goes through
:func:`ext_mul`, which applies the convention ``(+-inf) * 0 = 0``.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

INF = math.inf
NEG_INF = -math.inf


def ext_mul(a: float, b: float) -> float:
    """Product with the convention that an infinity times zero is zero."""
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


def ext_add(a: float, b: float) -> float:
    """Sum of extended reals; ``inf + (-inf)`` is undefined and raises."""
    if (a == INF and b == NEG_INF) or (a == NEG_INF and b == INF):
        raise ValueError("inf + -inf is undefined")
    return a + b


def ext_log(p: float) -> float:
    """Natural log with ``log 0 = -inf``."""
    if p < 0:
        raise ValueError(f"log of negative number {p!r}")
    if p == 0.0:
        return NEG_INF
    return math.log(p)


def log_sum_exp(xs: Iterable[float]) -> float:
    """Stable ``log(sum(exp(x)))``; the empty sum gives ``-inf``."""
    arr = np.fromiter(xs, dtype=float)
    if arr.size == 0:
        return NEG_INF
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    if m == INF:
        return INF
    return float(m + math.log(np.exp(arr - m).sum()))


def logaddexp_into(acc: np.ndarray, other: np.ndarray) -> np.ndarray:
    """In-place ``acc <- log(exp(acc) + exp(other))`` for equal-shape arrays."""
    np.logaddexp(acc, other, out=acc)
    return acc


def fmt_ext(x: float, digits: int = 12) -> str:
    """Render an extended real with ``inf``/``-inf`` literals."""
    if x == INF:
        return "inf"
    if x == NEG_INF:
        return "-inf"
    if x == 0.0:
        return "0"
    return f"{x:.{digits}g}"


def parse_ext(token) -> float:
    """Inverse of :func:`fmt_ext`; also accepts YAML's ``.inf`` spellings."""
    if isinstance(token, (int, float)):
        return float(token)
    s = str(token).strip().lower()
    if s in ("inf", "+inf", ".inf", "+.inf", "infinity"):
        return INF
    if s in ("-inf", "-.inf", "-infinity"):
        return NEG_INF
    return float(s)
