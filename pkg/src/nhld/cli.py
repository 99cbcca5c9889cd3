"""Command-line front end.

Exit status: 0 success, 1 invalid input, 2 numerical non-convergence,
3 budget exceeded. Errors go to stderr as ``nhld: <code>: <message>``.
"""

from __future__ import annotations

import argparse
import math
import re
import sys

import numpy as np

from . import chainspec, fixtures
from .composite import build_composite, j_curve, j_eval
from .decomposition import check_sie1, decompose, is_primitive, period, star_matrices
from .errors import InvalidSpec, NHLDError
from .numerics import fmt_ext
from .oracle import exact_distribution, parse_event, rate_trace, simulate
from .routing import check_assumptions, classify_regime, cost_T0, cost_U0, rate_limits
from .spectral import BlockRate


def _range(text: str, what: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise InvalidSpec(f"{what} must look like a:b:steps, got {text!r}")
    try:
        a, b, k = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise InvalidSpec(f"bad {what} {text!r}") from None
    if k < 1 or not (math.isfinite(a) and math.isfinite(b)) or b < a:
        raise InvalidSpec(f"{what} needs a <= b and steps >= 1")
    return [a + (b - a) * i / k for i in range(k + 1)]


def _window(text: str):
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise InvalidSpec(f"window must look like a:b, got {text!r}") from None
    if a < 1 or b <= a:
        raise InvalidSpec("window needs 1 <= a < b")
    return a, b


def _ints(text: str):
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidSpec(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise InvalidSpec("horizons must be positive integers")
    return out


def _vec(text: str):
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InvalidSpec(f"expected comma-separated numbers, got {text!r}") from None


def _chain(args):
    if args.fixture and args.spec:
        raise InvalidSpec("give either a chain-spec path or --fixture, not both")
    if args.fixture:
        return fixtures.get_fixture(args.fixture)
    if not args.spec:
        raise InvalidSpec("a chain-spec path or --fixture NAME is required")
    return chainspec.load(args.spec)


def _block_name(dec, b, labels):
    return "{" + ",".join(labels[x] for x in dec.blocks[b]) + "}"


def _matrix_lines(title, M, names):
    out = [title]
    w = max(len(n) for n in names)
    out.append(" " * (w + 1) + " ".join(n.rjust(14) for n in names))
    for name, row in zip(names, M):
        out.append(name.rjust(w) + " " + " ".join(fmt_ext(float(x)).rjust(14) for x in row))
    return out


class _Ctx:
    def __init__(self, chain, window=(1, 10_000)):
        self.chain = chain
        self.s = chain.schedule
        self.f = chain.f
        self.labels = self.s.labels
        self.dec = decompose(self.s.limit)
        self.window = window
        self._rp = None

    @property
    def rp(self):
        if self._rp is None:
            self._rp = rate_limits(self.s, self.dec, self.window)
        return self._rp

    def names(self):
        return [_block_name(self.dec, b, self.labels) for b in range(len(self.dec.blocks))]

    def report(self):
        star = star_matrices(self.s, self.dec, self.window)
        return check_assumptions(self.rp, self.dec, star, self.s.limit)

    def composite(self, cost, allow_large=False):
        U = cost_U0(self.rp) if cost == "U0" else cost_T0(self.rp)
        cr = build_composite(self.s.limit, self.dec, self.f, U)
        cr.allow_large = allow_large
        return cr


# --------------------------------------------------------------------------
# subcommands


def cmd_decompose(args, out):
    ctx = _Ctx(_chain(args))
    dec = ctx.dec
    out(f"states: {len(ctx.labels)}")
    out(f"blocks: {len(dec.blocks)}  N = {dec.N}  M = {dec.M}  stochastic = {len(dec.M_set)}")
    out("block,class,states,period,primitive")
    for b, (members, cl) in enumerate(zip(dec.blocks, dec.classes)):
        states = " ".join(ctx.labels[x] for x in members)
        if b in dec.G:
            per = str(period(ctx.s.limit, members))
            prim = "yes" if is_primitive(ctx.s.limit, members) else "no"
        else:
            per, prim = "-", "-"
        out(f"{b},{cl.value},{states},{per},{prim}")
    out("state_order: " + " ".join(ctx.labels[x] for x in dec.state_order))
    out(f"p_min: {fmt_ext(dec.p_min) if math.isfinite(dec.p_min) else 'nan'}")
    for line in check_sie1(ctx.s, dec).lines(ctx.labels):
        out(line)
    return 0


def cmd_rate(args, out):
    ctx = _Ctx(_chain(args))
    blocks = list(ctx.dec.G) if args.block is None else [args.block]
    for b in blocks:
        if b not in ctx.dec.G:
            raise InvalidSpec(f"block {b} is degenerate or does not exist; rate blocks are {list(ctx.dec.G)}")
    if args.x is not None:
        points = [_vec(args.x)]
    else:
        if ctx.f.dim != 1:
            raise InvalidSpec("--grid needs d = 1; use --x for a single point")
        points = [np.array([z]) for z in _range(args.grid, "grid")]
    out("block,x,rate")
    for b in blocks:
        br = BlockRate(ctx.s.limit, ctx.dec.blocks[b], ctx.f)
        for x in points:
            xs = " ".join(fmt_ext(float(c)) for c in x)
            out(f"{b},{xs},{fmt_ext(br.rate(x))}")
    return 0


def cmd_routing(args, out):
    ctx = _Ctx(_chain(args), _window(args.window))
    rp = ctx.rp
    names = ctx.names()
    out(f"provenance: {rp.provenance}")
    for title, M in (("v", rp.v), ("tau", rp.tau), ("U0", cost_U0(rp)), ("T0", cost_T0(rp))):
        for line in _matrix_lines(title, M, names):
            out(line)
    for line in ctx.report().lines():
        out(line)
    regime = classify_regime(cost_U0(rp), ctx.dec, ctx.s.limit, rp.v)
    out(f"regime: {regime.value}")
    return 0


def cmd_ldp(args, out, err):
    ctx = _Ctx(_chain(args), _window(args.window))
    if args.cost == "T0" and not ctx.report().lower_cost_valid:
        err("nhld: warning: lower_cost_valid is false; the T0 curve is not guaranteed to be a lower bound")
    cr = ctx.composite(args.cost, args.allow_large)
    out("z,J,order,support")
    if args.z is not None:
        z = _vec(args.z)
        val, wit = j_eval(cr, z)
        rows = [(" ".join(fmt_ext(float(c)) for c in z), val, wit)]
        for zs, val, wit in rows:
            order = " ".join(str(b) for b in wit.order) if wit else ""
            sup = " ".join(str(b) for b in wit.support()) if wit else ""
            out(f"{zs},{fmt_ext(val)},{order},{sup}")
        return 0
    grid = _range(args.grid, "grid")
    for z, val, order, sup in j_curve(cr, grid):
        out(f"{fmt_ext(z)},{fmt_ext(val)},{' '.join(map(str, order))},{' '.join(map(str, sup))}")
    return 0


def cmd_oracle(args, out):
    ctx = _Ctx(_chain(args))
    if args.seq:
        ns = _ints(args.seq)
    elif args.n:
        ns = [args.n]
    else:
        raise InvalidSpec("oracle needs --n or --seq")
    if args.set is None:
        if len(ns) != 1:
            raise InvalidSpec("the full distribution is printed for a single --n; give --set with --seq")
        ed = exact_distribution(ctx.s, ctx.f, ns[0], budget=args.budget)
        out("z,log_prob")
        for z, lp in zip(ed.values(), ed.logp):
            if np.isfinite(lp):
                out(f"{fmt_ext(float(z))},{fmt_ext(float(lp))}")
        return 0
    B = parse_event(args.set)
    out("n,log_prob,rate")
    for n, lp, rate in rate_trace(ctx.s, ctx.f, B, ns, budget=args.budget):
        out(f"{n},{fmt_ext(lp)},{fmt_ext(rate)}")
    return 0


def cmd_simulate(args, out):
    ctx = _Ctx(_chain(args))
    if args.n < 1 or args.replicas < 1:
        raise InvalidSpec("--n and --replicas must be positive")
    rep = simulate(ctx.s, ctx.f, args.n, args.replicas, args.seed, ctx.dec)
    for line in rep.lines(ctx.dec, ctx.labels):
        out("# " + line)
    cols = ",".join(f"Z{k + 1}" for k in range(ctx.f.dim))
    out(f"replica,{cols},terminal_state,terminal_block")
    for i in range(rep.replicas):
        zs = ",".join(fmt_ext(float(c)) for c in rep.Z[i])
        out(f"{i},{zs},{ctx.labels[rep.terminal_state[i]]},{rep.terminal_block[i]}")
    return 0


def cmd_fixture(args, out):
    if args.dump:
        out(fixtures.fixture_spec(args.name).rstrip("\n"))
        return 0
    rows = fixtures.run_fixture(args.name)
    out("check,expected,computed,tolerance,status")
    for r in rows:
        out(",".join(r.cells()))
    return 0


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="nhld", description="Large deviations of additive functionals "
                                "of nonhomogeneous Markov chains with converging kernels.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_chain(sp):
        sp.add_argument("spec", nargs="?", help="chain-spec file")
        sp.add_argument("--fixture", choices=sorted(fixtures.FIXTURES), help="use a built-in chain")
        return sp

    with_chain(sub.add_parser("decompose", help="canonical block decomposition of the limit"))
    sp = with_chain(sub.add_parser("rate", help="block rate functions"))
    sp.add_argument("--block", type=int)
    sp.add_argument("--grid", default="-1:1:20")
    sp.add_argument("--x")
    sp = with_chain(sub.add_parser("routing", help="decay exponents, costs, assumptions, regime"))
    sp.add_argument("--window", default="1:10000")
    sp = with_chain(sub.add_parser("ldp", help="composite rate function"))
    sp.add_argument("--cost", choices=("U0", "T0"), default="U0")
    sp.add_argument("--grid", default="-1:1:20")
    sp.add_argument("--z")
    sp.add_argument("--window", default="1:10000")
    sp.add_argument("--allow-large", action="store_true")
    sp = with_chain(sub.add_parser("oracle", help="exact probabilities of Z_n"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--seq")
    sp.add_argument("--set")
    sp.add_argument("--budget", type=int, default=2 * 10 ** 8)
    sp = with_chain(sub.add_parser("simulate", help="Monte Carlo trajectories"))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--replicas", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp = sub.add_parser("fixture", help="run a built-in worked example")
    sp.add_argument("name", choices=sorted(fixtures.FIXTURES))
    sp.add_argument("--dump", action="store_true", help="print the fixture's chain spec")
    return p


_VALUE_OPTS = ("--grid", "--z", "--x", "--set", "--seq")


def _glue_negative_values(argv):
    """'--grid -1:3:9' -> '--grid=-1:3:9'; argparse reads '-1...' as an option."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTS and i + 1 < len(argv) and re.match(r"-[\d.]", argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr

    def out(line):
        stdout.write(line + "\n")

    def err(line):
        stderr.write(line + "\n")

    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(sys.argv[1:] if argv is None else list(argv)))
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if args.command == "ldp":
            return cmd_ldp(args, out, err)
        handler = {
            "decompose": cmd_decompose, "rate": cmd_rate, "routing": cmd_routing,
            "oracle": cmd_oracle, "simulate": cmd_simulate, "fixture": cmd_fixture,
        }[args.command]
        return handler(args, out)
    except NHLDError as exc:
        err(f"nhld: {exc.code}: {exc}")
        return exc.exit_status
    except (ValueError, ZeroDivisionError) as exc:
        err(f"nhld: invalid-input: {exc}")
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
