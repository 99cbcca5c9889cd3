"""Chain-spec files: one YAML document describing states, f, pi and a schedule.

    states: ["1", "2"]
    f: [[1, 0]]               # d rows of r reals
    pi: [0.5, 0.5]
    schedule:
      family: constant        # constant | tabulated | metropolis | alternating
      matrix: [[...], ...]    #   | block_alternating | custom
    rates: {v: [[...]], tau: [[...]]}   # optional, -inf allowed

Family parameters: ``tabulated`` takes ``table`` (list of matrices) and
``tail``; ``metropolis`` takes ``g``, ``H`` and ``beta`` (``kind``, ``c``,
``p``, ``table``, ``tail``); ``alternating`` and ``block_alternating`` take
``even_base`` and ``odd_base``; ``custom`` takes ``name`` (only
``periodic-trap``) and ``params``.

Errors carry the line number of the offending node.
"""

from __future__ import annotations

import numpy as np
import yaml

from .chain_model import (AlternatingTwoState, BlockAlternating, Chain, ConstantSchedule, Cooling,
                          MetropolisSchedule, MetropolisSpec, Observable, PeriodicTrap, ROW_TOL,
                          TabulatedSchedule)
from .errors import InvalidSpec, NotStochastic
from .numerics import parse_ext


class _List(list):
    line = 0


class _Dict(dict):
    line = 0


class _Loader(yaml.SafeLoader):
    pass


def _seq(loader, node):
    out = _List(loader.construct_sequence(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


def _map(loader, node):
    out = _Dict(loader.construct_mapping(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _seq)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _map)


def _line(obj, fallback=0):
    return getattr(obj, "line", fallback)


def _fail(msg, obj=None, line=None):
    ln = line if line is not None else _line(obj)
    raise InvalidSpec(f"line {ln}: {msg}" if ln else msg)


def _keys(d, allowed, required, what):
    if not isinstance(d, dict):
        _fail(f"{what} must be a mapping", d)
    for k in d:
        if k not in allowed:
            _fail(f"unknown field {k!r} in {what}", d)
    for k in required:
        if k not in d:
            _fail(f"missing field {k!r} in {what}", d)


def _real(x, where, allow_inf=False):
    if isinstance(x, bool):
        _fail(f"{where}: expected a number", where)
    try:
        v = parse_ext(x) if allow_inf else float(x)
    except (TypeError, ValueError):
        raise InvalidSpec(f"line {_line(where)}: expected a number, got {x!r}") from None
    if not allow_inf and not np.isfinite(v):
        _fail(f"expected a finite number, got {x!r}", where)
    return v


def _vector(seq, what, n=None, allow_inf=False):
    if not isinstance(seq, list):
        _fail(f"{what} must be a list", seq)
    if n is not None and len(seq) != n:
        _fail(f"{what} must have {n} entries, has {len(seq)}", seq)
    return np.array([_real(x, seq, allow_inf) for x in seq])


def _matrix(rows, what, r=None, stochastic=True, allow_inf=False):
    if not isinstance(rows, list) or not rows:
        _fail(f"{what} must be a non-empty list of rows", rows)
    r = r or len(rows)
    if len(rows) != r:
        _fail(f"{what} must have {r} rows, has {len(rows)}", rows)
    out = np.empty((r, r))
    for i, row in enumerate(rows):
        vals = _vector(row, f"{what} row {i + 1}", r, allow_inf)
        if stochastic:
            if np.any(vals < 0) or np.any(vals > 1 + ROW_TOL):
                raise NotStochastic(f"line {_line(row, _line(rows))}: {what} row {i + 1} has entries outside [0, 1]")
            if abs(vals.sum() - 1.0) > ROW_TOL:
                raise NotStochastic(f"line {_line(row, _line(rows))}: {what} row {i + 1} sums to {float(vals.sum())!r}, not 1")
        out[i] = vals
    return out


def _cooling(d, what="beta"):
    _keys(d, {"kind", "c", "p", "table", "tail"}, {"kind"}, what)
    kw = {"kind": str(d["kind"])}
    if "c" in d:
        kw["c"] = _real(d["c"], d)
    if "p" in d:
        kw["p"] = _real(d["p"], d)
    if "table" in d:
        kw["table"] = tuple(_vector(d["table"], f"{what}.table"))
    if "tail" in d:
        kw["tail"] = _cooling(d["tail"], f"{what}.tail")
    try:
        return Cooling(**kw)
    except InvalidSpec as exc:
        _fail(str(exc), d)


def chain_from_dict(doc, name="chain") -> Chain:
    _keys(doc, {"states", "f", "pi", "schedule", "rates", "name"}, {"states", "f", "schedule"}, "chain spec")
    states = doc["states"]
    if not isinstance(states, list) or not states:
        _fail("states must be a non-empty list of labels", doc)
    labels = [str(s) for s in states]
    if len(set(labels)) != len(labels):
        _fail("state labels must be distinct", states)
    r = len(labels)
    f_rows = doc["f"]
    if not isinstance(f_rows, list) or not f_rows:
        _fail("f must be a list of d rows", doc)
    f = Observable(np.array([_vector(row, "f row", r) for row in f_rows]).T)
    pi = _vector(doc["pi"], "pi", r) if "pi" in doc else None
    if pi is not None and (np.any(pi < 0) or abs(pi.sum() - 1) > ROW_TOL):
        _fail("pi must be a probability vector", doc["pi"])
    rates = None
    if "rates" in doc:
        rd = doc["rates"]
        _keys(rd, {"v", "tau"}, {"v", "tau"}, "rates")
        k = len(rd["v"])
        rates = (_matrix(rd["v"], "rates.v", k, stochastic=False, allow_inf=True),
                 _matrix(rd["tau"], "rates.tau", k, stochastic=False, allow_inf=True))

    sd = doc["schedule"]
    if not isinstance(sd, dict) or "family" not in sd:
        _fail("schedule needs a family", sd if isinstance(sd, dict) else doc)
    fam = sd["family"]
    common = dict(pi=pi, labels=labels, rates=rates)
    try:
        if fam == "constant":
            _keys(sd, {"family", "matrix"}, {"matrix"}, "schedule")
            s = ConstantSchedule(_matrix(sd["matrix"], "matrix", r), **common)
        elif fam == "tabulated":
            _keys(sd, {"family", "table", "tail"}, {"table", "tail"}, "schedule")
            table = [_matrix(m, f"table[{k}]", r) for k, m in enumerate(sd["table"])]
            s = TabulatedSchedule(table, _matrix(sd["tail"], "tail", r), **common)
        elif fam == "metropolis":
            _keys(sd, {"family", "g", "H", "beta"}, {"g", "H", "beta"}, "schedule")
            spec = MetropolisSpec(_matrix(sd["g"], "g", r), _vector(sd["H"], "H", r), _cooling(sd["beta"]))
            s = MetropolisSchedule(spec, **common)
        elif fam in ("alternating", "block_alternating"):
            _keys(sd, {"family", "even_base", "odd_base"}, set(), "schedule")
            if r != 2:
                _fail(f"{fam} chains have two states", states)
            kw = {k: _real(sd[k], sd) for k in ("even_base", "odd_base") if k in sd}
            cls = AlternatingTwoState if fam == "alternating" else BlockAlternating
            if pi is not None:
                kw["pi"] = pi
            s = cls(labels=labels, **kw)
        elif fam == "custom":
            _keys(sd, {"family", "name", "params"}, {"name"}, "schedule")
            if sd["name"] != "periodic-trap":
                _fail(f"unknown custom schedule {sd['name']!r}; available: periodic-trap", sd)
            if r != 9:
                _fail("periodic-trap has nine states", states)
            params = sd.get("params") or {}
            _keys(params, {"A", "eps", "exceptional_from"}, set(), "params")
            kw = {k: _real(v, params) for k, v in params.items()}
            if "exceptional_from" in kw:
                kw["exceptional_from"] = int(kw["exceptional_from"])
            s = PeriodicTrap(pi=pi, **kw)
        else:
            _fail(f"unknown schedule family {fam!r}", sd)
    except NotStochastic:
        raise
    except InvalidSpec as exc:
        msg = str(exc)
        if not msg.startswith("line "):
            msg = f"line {_line(sd)}: {msg}"
        raise InvalidSpec(msg) from None
    return Chain(s, f, str(doc.get("name", name)))


def loads(text: str, name="chain") -> Chain:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        ln = mark.line + 1 if mark is not None else 0
        raise InvalidSpec(f"line {ln}: malformed chain spec: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        raise InvalidSpec("empty chain spec")
    return chain_from_dict(doc, name)


def load(path) -> Chain:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidSpec(f"cannot read {path}: {exc.strerror}") from None
    return loads(text, name=str(path))
