"""Rewrite strategy turning a scalar log-density graph into a sum of
einsum monomials.

The driver alternates two phases until a fixed point:

1. a pattern-directed phase that fires the first matching rule from an
   ordered registry anywhere in the graph, searching from the output
   (distributing einsum over addition, splitting logs of products,
   quotients, roots and powers);
2. a single input-to-output sweep of local, one-primitive simplifications
   with hash-consing: every polynomial primitive (subtract, multiply,
   divide, negate, square, integer powers, sum_axis, broadcast_to) is
   rewritten into einsum form, constants are folded, nested einsums are
   merged flat, scalar factors sharing a base collect their exponents,
   add-trees flatten into right-leaning chains ordered by structural hash,
   and einsum index names are canonically renamed.

The fixed point is the canonical form: the output is an add-tree whose
leaves are einsum monomials (or lone atoms/constants), each einsum
argument being a constant, an input, or a non-polynomial node (an atom).
Nonlinear atoms are never rewritten away: they are the candidate
sufficient statistics. There is no termination proof; a rewrite budget
bounds the driver and an optional progress check asserts that a
termination measure never increases.

The log-splitting rules (log of a product/quotient/root) assume positive
factors, which is the standing convention for the scale and probability
quantities log densities are built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as G
from .errors import CanonicalizationError, GraphError, NonTerminationError
from .graph import (
    ConstNode, GraphBuilder, InputNode, PrimNode, TermGraph, espec,
)
from .pattern import Choice, Const, OpPat, Rule, Segment, Str, Val, apply_rule
from .tensor import INDEX_ALPHABET

__all__ = ["CanonicalForm", "Monomial", "canonicalize", "is_canonical",
           "local_simplify", "normalize_graph", "index_monomials", "REGISTRY"]

# polynomial primitives: always eliminable in favor of einsum/add
POLY_OPS = {"subtract", "multiply", "divide", "negate", "square",
            "sum_axis", "broadcast_to"}
# non-polynomial roots allowed as einsum arguments in canonical form
ATOM_OPS = {"log", "log1p", "exp", "sqrt", "reciprocal", "logistic",
            "log_gamma", "digamma", "one_hot", "logsumexp", "power",
            "inverse", "logdet"}


@dataclass(frozen=True)
class Monomial:
    """One additive term of a canonical graph: its root node, the constant
    einsum operands (coefficients) and the remaining operands (factors)."""
    root: int
    coefficients: tuple
    factors: tuple


@dataclass(frozen=True)
class CanonicalForm:
    graph: TermGraph
    monomials: tuple
    atoms: frozenset


# ---------------------------------------------------------------------------
# local simplification sweep


def _letters(n, used=()):
    pool = [c for c in INDEX_ALPHABET if c not in used]
    if len(pool) < n:
        raise GraphError("einsum index alphabet exhausted")
    return pool[:n]


def _fresh_pool(used):
    """Iterator over unused index letters; raises only when drawn dry."""
    def gen():
        for c in INDEX_ALPHABET:
            if c not in used:
                yield c
        raise GraphError("einsum index alphabet exhausted")
    return gen()


class _LazySum:
    """Deferred sum of leaves: multiset of non-constant handles plus a
    folded constant, materialized on demand."""

    __slots__ = ("counts", "order", "const", "shape", "realized")

    def __init__(self, shape):
        self.counts = {}
        self.order = []
        self.const = None
        self.shape = tuple(shape)
        self.realized = None

    def add_leaf(self, h, k=1):
        if h.nid in self.counts:
            self.counts[h.nid][1] += k
        else:
            self.counts[h.nid] = [h, k]
            self.order.append(h.nid)

    @staticmethod
    def merge(a, b):
        shape = a.shape if a.shape == b.shape else tuple(
            np.broadcast_shapes(a.shape, b.shape))
        out = _LazySum(shape)
        for src in (a, b):
            for nid in src.order:
                h, k = src.counts[nid]
                out.add_leaf(h, k)
            if src.const is not None:
                out.const = (src.const if out.const is None
                             else out.const + src.const)
        return out


class _Simplifier:
    def __init__(self):
        self.gb = GraphBuilder(dedup=True)
        self._const_kind = {}  # nid -> (is_all_ones, is_any_zero_annihilator)

    # -- small helpers ----------------------------------------------------

    def node(self, h):
        return self.gb.node(h)

    def is_const(self, h):
        return isinstance(self.node(h), ConstNode)

    def cval(self, h):
        return self.node(h).value

    def const(self, v):
        return self.gb.constant(v)

    def const_kind(self, h):
        kind = self._const_kind.get(h.nid)
        if kind is None:
            v = self.cval(h)
            kind = (v.shape != () and bool(np.all(v == 1.0)),
                    bool(v.size) and not np.any(v))
            self._const_kind[h.nid] = kind
        return kind

    def _try_fold(self, op, attrs, args):
        if all(self.is_const(a) for a in args):
            try:
                return self.const(
                    G._eval_prim(op, attrs, [self.cval(a) for a in args]))
            except Exception:
                return None
        return None

    # -- elementwise/broadcast formula construction -----------------------

    def _ew_parts(self, shapes):
        """Trailing-broadcast subscripts for elementwise products. Size-1
        axes of an operand get private letters (summed over harmlessly)."""
        out_shape = tuple(np.broadcast_shapes(*[tuple(s) for s in shapes]))
        rank = len(out_shape)
        out_letters = _letters(rank)
        pool = _fresh_pool(set(out_letters))
        subs = []
        for s in shapes:
            off = rank - len(s)
            chars = []
            for i, d in enumerate(s):
                if d == out_shape[off + i]:
                    chars.append(out_letters[off + i])
                else:  # d == 1 broadcast against a larger extent
                    chars.append(next(pool))
            subs.append("".join(chars))
        return subs, "".join(out_letters), out_shape

    def ew_product(self, args):
        subs, out, _ = self._ew_parts([a.shape for a in args])
        return self.emit_einsum(",".join(subs) + "->" + out, list(args))

    def scale(self, coef, h):
        """coef * h as an einsum with a scalar constant coefficient."""
        return self.ew_product([self.const(float(coef)), h])

    def broadcast(self, h, target):
        """Broadcast a handle to a target shape via einsum with ones
        factors (the IR has no reshape)."""
        target = tuple(target)
        if tuple(h.shape) == target:
            return h
        rank = len(target)
        out_letters = _letters(rank)
        pool = _fresh_pool(set(out_letters))
        off = rank - len(h.shape)
        chars = []
        ops = [h]
        subs = []
        covered = set()
        for i, d in enumerate(h.shape):
            if d == target[off + i]:
                chars.append(out_letters[off + i])
                covered.add(off + i)
            else:
                chars.append(next(pool))
        subs.append("".join(chars))
        for j in range(rank):
            if j not in covered:
                ops.append(self.const(np.ones(target[j])))
                subs.append(out_letters[j])
        return self.emit_einsum(",".join(subs) + "->" + "".join(out_letters), ops)

    # -- einsum emission with merging/collection/renaming -----------------

    def emit_einsum(self, formula, args):
        spec = espec(formula)
        out = spec.output
        operands = list(zip(spec.operand_subscripts, args))

        # inline nested einsums (arguments are already simplified)
        merged = []
        used = set("".join(spec.operand_subscripts) + out)
        for subs, h in operands:
            node = self.node(h)
            if isinstance(node, PrimNode) and node.op == "einsum":
                inner = espec(node.attrs[0])
                mapping = dict(zip(inner.output, subs))
                fresh = _fresh_pool(used)
                for ch in "".join(inner.operand_subscripts):
                    if ch not in mapping:
                        mapping[ch] = next(fresh)
                        used.add(mapping[ch])
                for isubs, anid in zip(inner.operand_subscripts, node.args):
                    ah = G.ExprHandle(self.gb, anid)
                    merged.append(("".join(mapping[c] for c in isubs), ah))
            else:
                merged.append((subs, h))
        operands = merged

        # constant folding: zeros annihilate, scalars multiply into a
        # single coefficient, all-ones factors fold or slim down
        extents = {}
        for subs, h in operands:
            for ch, d in zip(subs, h.shape):
                extents[ch] = d
        out_shape = tuple(extents[c] for c in out)
        coef = 1.0

        def _is_ones(h):
            return self.is_const(h) and self.const_kind(h)[0]

        # duplicate copies of one all-ones factor multiply to itself
        deduped = []
        seen_ones = set()
        for subs, h in operands:
            if _is_ones(h):
                key = (subs, h.nid)
                if key in seen_ones:
                    continue
                seen_ones.add(key)
            deduped.append((subs, h))
        operands = deduped

        kept = []
        for j, (subs, h) in enumerate(operands):
            if not self.is_const(h):
                kept.append((subs, h))
                continue
            if self.const_kind(h)[1]:
                return self.const(np.zeros(out_shape))
            v = self.cval(h)
            if subs == "":
                coef *= float(v)
            elif _is_ones(h):
                elsewhere = set(out)
                for j2, (s2, _h2) in enumerate(operands):
                    if j2 != j:
                        elsewhere.update(s2)
                needed = [c for c in dict.fromkeys(subs) if c in elsewhere]
                for c in dict.fromkeys(subs):
                    if c not in elsewhere:
                        coef *= extents[c]
                if needed:
                    kept.append(("".join(needed),
                                 self.const(np.ones([extents[c] for c in needed]))))
            else:
                kept.append((subs, h))
        operands = kept

        # collect exponents of scalar factors sharing a base node
        scalars = [(s, h) for s, h in operands if s == ""]
        if len(scalars) > 1:
            rest = [(s, h) for s, h in operands if s != ""]
            groups: dict[int, list] = {}
            order = []
            for _, h in scalars:
                base, e = self._base_exp(h)
                if base.nid not in groups:
                    groups[base.nid] = [base, 0.0]
                    order.append(base.nid)
                groups[base.nid][1] += e
            operands = rest
            for nid in order:
                base, e = groups[nid]
                for h in self._power_factors(base, e):
                    operands.append(("", h))

        if not operands:
            return self.const(np.full(out_shape, coef))
        if all(self.is_const(h) for _, h in operands):
            lhs = ",".join(s for s, _ in operands)
            val = coef * G._eval_prim(
                "einsum", (lhs + "->" + out,), [self.cval(h) for _, h in operands])
            return self.const(val)
        if coef != 1.0:
            operands.append(("", self.const(coef)))

        # identity contraction unwraps
        if len(operands) == 1 and operands[0][0] == out:
            return operands[0][1]

        # deterministic operand order, then canonical index renaming
        def key(item):
            subs, h = item
            node = self.node(h)
            name = node.name if isinstance(node, InputNode) else ""
            return (0 if self.is_const(h) else 1, name, self.gb.digest(h), subs)

        operands.sort(key=key)
        mapping = {}
        for ch in out + "".join(s for s, _ in operands):
            if ch not in mapping:
                mapping[ch] = INDEX_ALPHABET[len(mapping)]
        lhs = ",".join("".join(mapping[c] for c in s) for s, _ in operands)
        new_out = "".join(mapping[c] for c in out)
        return self.gb.prim("einsum", [h for _, h in operands],
                            (lhs + "->" + new_out,))

    def _base_exp(self, h):
        node = self.node(h)
        if isinstance(node, PrimNode) and node.op == "reciprocal":
            base, e = self._base_exp(G.ExprHandle(self.gb, node.args[0]))
            return base, -e
        if isinstance(node, PrimNode) and node.op == "sqrt":
            base, e = self._base_exp(G.ExprHandle(self.gb, node.args[0]))
            return base, 0.5 * e
        if isinstance(node, PrimNode) and node.op == "power":
            exp_node = self.node(G.ExprHandle(self.gb, node.args[1]))
            if isinstance(exp_node, ConstNode) and exp_node.value.shape == ():
                base, e = self._base_exp(G.ExprHandle(self.gb, node.args[0]))
                return base, e * float(exp_node.value)
        return h, 1.0

    def _power_factors(self, base, e):
        """Scalar factors realizing base**e after exponent collection."""
        if e == 0:
            return []
        if e == round(e):
            n = int(round(e))
            if n > 0:
                return [base] * n
            rec = self.gb.prim("reciprocal", (base,))
            return [rec] * (-n)
        if e == 0.5:
            return [self.gb.prim("sqrt", (base,))]
        if e == -0.5:
            return [self.gb.prim("reciprocal", (self.gb.prim("sqrt", (base,)),))]
        return [self.gb.prim("power", (base, self.const(float(e))))]

    # -- add flattening ----------------------------------------------------
    #
    # Sums are accumulated lazily during the sweep (a multiset of leaves
    # plus a folded constant) and materialized as one sorted right-leaning
    # chain only when a non-add consumer needs a node, so rebuilding a long
    # add spine costs one chain, not one per spine step.

    def _as_lazy(self, x):
        if isinstance(x, _LazySum):
            return x
        node = self.node(x)
        if isinstance(node, PrimNode) and node.op == "add":
            left = self._as_lazy(G.ExprHandle(self.gb, node.args[0]))
            return _LazySum.merge(
                left, self._as_lazy(G.ExprHandle(self.gb, node.args[1])))
        lazy = _LazySum(tuple(x.shape))
        if self.is_const(x):
            lazy.const = self.cval(x)
        else:
            lazy.add_leaf(x)
        return lazy

    def emit_add(self, a, b):
        return _LazySum.merge(self._as_lazy(a), self._as_lazy(b))

    def realize(self, x):
        if not isinstance(x, _LazySum):
            return x
        if x.realized is not None:
            return x.realized
        terms = []
        for nid in x.order:
            h, k = x.counts[nid]
            terms.append(h if k == 1 else self.scale(float(k), h))
        if x.const is not None and np.any(x.const):
            terms.append(self.const(x.const))
        if not terms:
            acc = self.const(np.zeros(x.shape))
        else:
            terms.sort(key=self.gb.digest)
            acc = terms[-1]
            for h in reversed(terms[:-1]):
                acc = self.gb.prim("add", (h, acc))
            if tuple(acc.shape) != x.shape:
                acc = self.broadcast(acc, x.shape)
        x.realized = acc
        return acc

    def lazy_scale(self, c, x):
        lx = self._as_lazy(x)
        out = _LazySum(lx.shape)
        for nid in lx.order:
            h, k = lx.counts[nid]
            out.add_leaf(self.scale(c, h), k)
        if lx.const is not None:
            out.const = c * lx.const
        return out

    # -- per-node emission -------------------------------------------------

    def emit(self, op, attrs, args):
        if op == "add":
            return self.emit_add(args[0], args[1])
        if op == "subtract":
            return _LazySum.merge(self._as_lazy(args[0]),
                                  self.lazy_scale(-1.0, args[1]))
        if op == "negate":
            return self.lazy_scale(-1.0, args[0])
        args = [self.realize(a) for a in args]
        folded = self._try_fold(op, attrs, args)
        if folded is not None:
            return folded
        if op == "multiply":
            return self.ew_product(args)
        if op == "divide":
            return self.ew_product(
                [args[0], self.emit("reciprocal", (), [args[1]])])
        if op == "square":
            return self.ew_product([args[0], args[0]])
        if op == "power":
            exp_node = self.node(args[1])
            if isinstance(exp_node, ConstNode) and exp_node.value.shape == ():
                c = float(exp_node.value)
                if c == round(c) and -8 <= c <= 8:
                    n = int(round(c))
                    if n == 0:
                        return self.const(np.ones(args[0].shape))
                    if n > 0:
                        return self.ew_product([args[0]] * n)
                    inv = self.emit("reciprocal", (), [args[0]])
                    return self.ew_product([inv] * (-n))
                if c == 0.5:
                    return self.emit("sqrt", (), [args[0]])
                if c == -0.5:
                    return self.emit(
                        "reciprocal", (), [self.emit("sqrt", (), [args[0]])])
            return self.gb.prim("power", args)
        if op == "sum_axis":
            rank = len(args[0].shape)
            axis = int(attrs[0]) % rank
            letters = _letters(rank)
            sub = "".join(letters)
            out = sub[:axis] + sub[axis + 1:]
            return self.emit_einsum(f"{sub}->{out}", [args[0]])
        if op == "broadcast_to":
            return self.broadcast(args[0], attrs[0])
        if op == "einsum":
            return self.emit_einsum(attrs[0], args)
        if op == "reciprocal":
            inner = self.node(args[0])
            if isinstance(inner, PrimNode) and inner.op == "reciprocal":
                return G.ExprHandle(self.gb, inner.args[0])
            return self.gb.prim("reciprocal", args)
        if op == "log":
            inner = self.node(args[0])
            if isinstance(inner, PrimNode) and inner.op == "exp":
                return G.ExprHandle(self.gb, inner.args[0])
            return self.gb.prim("log", args)
        if op == "exp":
            inner = self.node(args[0])
            if isinstance(inner, PrimNode) and inner.op == "log":
                return G.ExprHandle(self.gb, inner.args[0])
            return self.gb.prim("exp", args)
        return self.gb.prim(op, args, attrs)


def local_simplify(g: TermGraph) -> TermGraph:
    """One input-to-output sweep of single-primitive rewrites into einsum
    form, with constant folding, nested-einsum merging and hash-consing.
    Evaluation-preserving."""
    s = _Simplifier()
    memo = {}
    for i in g.inputs:
        node = g.nodes[i]
        memo[i] = s.gb.input(node.name, node.shape, node.support)
    reach = g.reachable()
    for i, node in enumerate(g.nodes):
        if not reach[i] or i in memo:
            continue
        if isinstance(node, ConstNode):
            memo[i] = s.const(node.value)
        elif isinstance(node, InputNode):
            memo[i] = s.gb.input(node.name, node.shape, node.support)
        else:
            memo[i] = s.emit(node.op, node.attrs, [memo[a] for a in node.args])
    return G.cse(s.gb.finish(s.realize(memo[g.output])))


# ---------------------------------------------------------------------------
# pattern rule registry


def _is_splittable_product(formula):
    spec = espec(formula)
    if spec.operand_count < 2:
        return False
    for subs in spec.operand_subscripts:
        if len(set(subs)) != len(subs):
            return False
        if any(c not in spec.output for c in subs):
            return False
    return True


def _distribute_rewriter(b, gb):
    add_shape = tuple(np.broadcast_shapes(b["x"].shape, b["y"].shape))

    def inject(v):
        if tuple(v.shape) != add_shape:
            v = gb.prim("broadcast_to", (v,), (add_shape,))
        args = list(b["args1"]) + [v] + list(b["args2"])
        return gb.prim("einsum", args, (b["formula"],))

    return gb.prim(b["op"], (inject(b["x"]), inject(b["y"])))


DISTRIBUTE_EINSUM = Rule(
    "distribute_einsum",
    OpPat("einsum", [Str("formula"), Segment("args1"),
                     Choice(OpPat("subtract", [Val("x"), Val("y")], as_op="op"),
                            OpPat("add", [Val("x"), Val("y")], as_op="op")),
                     Segment("args2")]),
    _distribute_rewriter)


def _log_product_rewriter(b, gb):
    spec = espec(b["formula"])
    args = b["args"]
    extents = {}
    for subs, h in zip(spec.operand_subscripts, args):
        extents.update(zip(subs, h.shape))
    total = None
    for subs, h in zip(spec.operand_subscripts, args):
        term = gb.prim("log", (h,))
        if subs != spec.output:
            ops = [term]
            parts = [subs]
            for c in spec.output:
                if c not in subs:
                    ops.append(gb.constant(np.ones(extents[c])))
                    parts.append(c)
            term = gb.prim("einsum", ops,
                           (",".join(parts) + "->" + spec.output,))
        total = term if total is None else gb.prim("add", (total, term))
    return total


LOG_PRODUCT = Rule(
    "log_product",
    OpPat("log", [OpPat("einsum",
                        [Str("formula", predicate=_is_splittable_product),
                         Segment("args")])]),
    _log_product_rewriter)

LOG_RECIPROCAL = Rule(
    "log_reciprocal",
    OpPat("log", [OpPat("reciprocal", [Val("x")])]),
    lambda b, gb: gb.prim("negate", (gb.prim("log", (b["x"],)),)))

LOG_SQRT = Rule(
    "log_sqrt",
    OpPat("log", [OpPat("sqrt", [Val("x")])]),
    lambda b, gb: gb.prim("multiply",
                          (gb.constant(0.5), gb.prim("log", (b["x"],)))))

LOG_POWER = Rule(
    "log_power",
    OpPat("log", [OpPat("power", [Val("x"), Const(name="c")])]),
    lambda b, gb: gb.prim("multiply", (b["c"], gb.prim("log", (b["x"],)))))

REGISTRY = (DISTRIBUTE_EINSUM, LOG_PRODUCT, LOG_RECIPROCAL, LOG_SQRT,
            LOG_POWER)


# ---------------------------------------------------------------------------
# canonical-form predicate and index


def _add_leaves(g, root):
    """Monomial roots: leaves of the maximal add-tree at the output."""
    node = g.nodes[root]
    if isinstance(node, PrimNode) and node.op == "add":
        return (_add_leaves(g, node.args[0]) + _add_leaves(g, node.args[1]))
    return [root]


def is_canonical(g: TermGraph) -> bool:
    """Structural predicate: the output is an add-tree of monomials, every
    monomial an einsum over atoms (constants, inputs, or non-polynomial
    nodes), a lone atom, or a constant; no polynomial primitive survives
    on the spine."""
    for root in _add_leaves(g, g.output):
        node = g.nodes[root]
        if isinstance(node, (InputNode, ConstNode)):
            continue
        if node.op in POLY_OPS:
            return False
        if node.op == "einsum":
            for a in node.args:
                arg = g.nodes[a]
                if isinstance(arg, (InputNode, ConstNode)):
                    continue
                if arg.op in POLY_OPS or arg.op in ("einsum", "add"):
                    return False
        elif node.op not in ATOM_OPS:
            return False
    return True


def _index(g: TermGraph):
    monomials = []
    atoms = set()
    for root in _add_leaves(g, g.output):
        node = g.nodes[root]
        if isinstance(node, ConstNode):
            monomials.append(Monomial(root, (root,), ()))
            continue
        if isinstance(node, InputNode) or node.op != "einsum":
            monomials.append(Monomial(root, (), (root,)))
            atoms.add(root)
            continue
        coeffs = tuple(a for a in node.args
                       if isinstance(g.nodes[a], ConstNode))
        factors = tuple(a for a in node.args
                        if not isinstance(g.nodes[a], ConstNode))
        monomials.append(Monomial(root, coeffs, factors))
        atoms.update(factors)
    return tuple(monomials), frozenset(atoms)


# ---------------------------------------------------------------------------
# termination measure and driver


def progress_measure(g: TermGraph) -> int:
    """Nonnegative measure zero exactly on canonical graphs: distinct
    polynomial primitives remaining, distinct add nodes sitting below
    einsum nodes (pending distribution, as node sets so sharing does not
    inflate the count), and logs whose argument a log rule can still
    split."""
    below: list[frozenset] = []
    for node in g.nodes:
        if isinstance(node, PrimNode):
            here = set()
            for a in node.args:
                here |= below[a]
                here.add(a)
            below.append(frozenset(here))
        else:
            below.append(frozenset())
    reach = g.reachable()
    adds_union: set = set()
    log_redexes = 0
    poly = 0
    for i, node in enumerate(g.nodes):
        if not reach[i] or not isinstance(node, PrimNode):
            continue
        if node.op in POLY_OPS:
            poly += 1
        if node.op == "einsum":
            for a in below[i]:
                an = g.nodes[a]
                if isinstance(an, PrimNode) and an.op in ("add", "subtract"):
                    adds_union.add(a)
        if node.op == "log":
            arg = g.nodes[node.args[0]]
            if isinstance(arg, PrimNode):
                if arg.op in ("reciprocal", "sqrt"):
                    log_redexes += 1
                elif arg.op == "power" and isinstance(
                        g.nodes[arg.args[1]], ConstNode):
                    log_redexes += 1
                elif (arg.op == "einsum"
                      and _is_splittable_product(arg.attrs[0])):
                    log_redexes += 1
    return poly + len(adds_union) + log_redexes


def canonicalize(g: TermGraph, max_rules: int = 10000,
                 check_progress: bool = False,
                 firing_log: list | None = None) -> CanonicalForm:
    """Drive the alternating rewrite strategy to its canonical fixed point.

    Raises :class:`NonTerminationError` listing the last rules fired when
    the budget is exhausted. Deterministic for a given input graph. Pass a
    list as ``firing_log`` to collect the names of the rules fired.
    """
    if g.shapes[g.output] != ():
        raise CanonicalizationError("canonicalize requires a scalar output")
    g = normalize_graph(g, max_rules=max_rules, check_progress=check_progress,
                        firing_log=firing_log)
    if not is_canonical(g):
        raise CanonicalizationError(
            "rewriting reached a fixed point that is not canonical")
    monomials, atoms = _index(g)
    return CanonicalForm(graph=g, monomials=monomials, atoms=atoms)


def normalize_graph(g: TermGraph, max_rules: int = 10000,
                    check_progress: bool = False,
                    firing_log: list | None = None) -> TermGraph:
    """The rewrite loop without the scalar-output requirement; used
    internally on tensor-valued subgraphs (e.g. natural-parameter graphs)."""
    g = local_simplify(g)
    fired: list[str] = []
    measure = progress_measure(g) if check_progress else None
    window: list[int] = []
    seen_states = {_state_digest(g)}
    while True:
        applied = False
        for rule in REGISTRY:
            g2, applied = apply_rule(rule, g)
            if applied:
                g = local_simplify(g2)
                fired.append(rule.name)
                break
        if not applied:
            break
        if len(fired) > max_rules:
            raise NonTerminationError(
                f"rewrite budget of {max_rules} rule applications exhausted",
                recent_rules=fired[-10:])
        # the driver is deterministic, so revisiting a graph state is a
        # certain livelock
        digest = _state_digest(g)
        if digest in seen_states:
            raise NonTerminationError(
                "rewriting revisited a previous graph state",
                recent_rules=fired[-10:])
        seen_states.add(digest)
        if check_progress:
            new_measure = progress_measure(g)
            if new_measure > measure:
                raise CanonicalizationError(
                    f"termination measure increased {measure} -> "
                    f"{new_measure} after {fired[-1]}")
            window.append(new_measure)
            if len(window) >= 50 and window[-50] <= new_measure:
                raise CanonicalizationError(
                    "termination measure stalled over 50 consecutive firings")
            measure = new_measure
    if firing_log is not None:
        firing_log.extend(fired)
    return g


def _state_digest(g):
    hashes = g.structural_hashes()
    return hashes[g.output]


def index_monomials(g: TermGraph):
    """Monomial index and atom set of a graph already in canonical form."""
    return _index(g)


def split_common_scalar_factor(gb, h):
    """Factor a scalar common to every monomial out of a tensor-valued
    subexpression under construction.

    Normalizes the subgraph below handle ``h``, intersects the non-constant
    scalar einsum operands across its monomials (with multiplicity), and
    when the intersection is nonempty returns ``(scalar, residual)``
    handles with ``scalar * residual == h``; otherwise ``(None, h)``.
    Used by Gaussian marginalization so that precision-like scalars stay
    outside matrix inverses and determinants."""
    from collections import Counter

    snapshot = gb.finish(h)
    sub = G.subgraph(snapshot, h.nid)
    norm = normalize_graph(sub)
    monos, _ = _index(norm)
    hashes = norm.structural_hashes()
    per = []
    for m in monos:
        node = norm.nodes[m.root]
        if not (isinstance(node, PrimNode) and node.op == "einsum"):
            return None, h
        cnt = Counter()
        for a in node.args:
            if norm.shapes[a] == () and not isinstance(norm.nodes[a], ConstNode):
                cnt[hashes[a]] += 1
        per.append((m, cnt))
    if not per:
        return None, h
    common = per[0][1].copy()
    for _, cnt in per[1:]:
        common &= cnt
    common = +common
    if not common:
        return None, h

    binds = {name: gb.input_handle(name) for name in norm.input_names}
    memo: dict[int, object] = {}

    def emit(nid):
        return G._emit_into(gb, norm, memo, nid, binds)

    reps = {}
    first_root = per[0][0].root
    for a in norm.nodes[first_root].args:
        dgs = hashes[a]
        if dgs in common and dgs not in reps:
            reps[dgs] = a
    factors = []
    for dgs in sorted(common, key=lambda d: d.hex() if hasattr(d, "hex") else d):
        factors.extend([emit(reps[dgs])] * common[dgs])
    scalar = factors[0]
    for f in factors[1:]:
        scalar = gb.prim("multiply", (scalar, f))

    terms = []
    for m, _cnt in per:
        node = norm.nodes[m.root]
        spec = espec(node.attrs[0])
        remove = dict(common)
        kept_ops, kept_subs = [], []
        for subs, a in zip(spec.operand_subscripts, node.args):
            dgs = hashes[a]
            if (norm.shapes[a] == ()
                    and not isinstance(norm.nodes[a], ConstNode)
                    and remove.get(dgs, 0) > 0):
                remove[dgs] -= 1
                continue
            kept_ops.append(emit(a))
            kept_subs.append(subs)
        if not kept_ops:
            kept_ops, kept_subs = [gb.constant(1.0)], [""]
        if len(kept_ops) == 1 and kept_subs[0] == spec.output:
            terms.append(kept_ops[0])
        else:
            terms.append(gb.prim(
                "einsum", kept_ops,
                (",".join(kept_subs) + "->" + spec.output,)))
    acc = terms[0]
    for t in terms[1:]:
        acc = gb.prim("add", (acc, t))
    return scalar, acc
