"""Static forward-mode differentiation over the expression graph.

Derivatives are appended to the graph as ordinary nodes so the same graph
feeds GLSL emission and CPU evaluation. Derivatives that are known to be zero
(anything not depending on ``position``) are tracked as ``None`` while rules
run and are only materialized where an expression needs a zero operand.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import graph as g
from .dsl import WarpProgram, compile_source
from .graph import ExprGraph, GraphError, ValueType

WRT = ("x", "y", "z")


class NoDerivativeRule(GraphError):
    pass


@dataclass(frozen=True)
class JacobianExpr:
    """Ids of the vec3 columns d offset/dx, d offset/dy, d offset/dz."""

    d_dx: int
    d_dy: int
    d_dz: int

    @property
    def columns(self) -> tuple[int, int, int]:
        return (self.d_dx, self.d_dy, self.d_dz)


class _Differentiator:
    def __init__(self, graph: ExprGraph, wrt: str):
        if wrt not in WRT:
            raise ValueError(f"wrt must be one of {WRT}, got {wrt!r}")
        self.g = graph
        self.wrt = wrt
        self.deriv: dict[int, int | None] = {}
        self.owner: int | None = None
        self._zero_lit: int | None = None
        self._zeros: dict[ValueType, int] = {}

    # node creation tags everything made inside a rule as a helper of the
    # node being differentiated; the rule's result is re-tagged as the head
    def _tag(self, nid: int) -> int:
        if self.owner is not None and nid not in self.g.roles and nid >= self._mark:
            self.g.roles[nid] = ("helper", self.owner, self.wrt)
        return nid

    def lit(self, value: float) -> int:
        return self.g.literal(value)

    def zero(self, vtype: ValueType) -> int:
        if self._zero_lit is None:
            self._zero_lit = self.g.literal(0.0)
        if vtype is g.SCALAR:
            return self._zero_lit
        if vtype not in self._zeros:
            self._zeros[vtype] = self.g.construct(vtype, self._zero_lit)
        return self._zeros[vtype]

    def or_zero(self, d: int | None, like: int) -> int:
        return self.zero(self.g.type_of(like)) if d is None else d

    def add(self, a, b):
        return self._tag(self.g.binary("add", a, b))

    def sub(self, a, b):
        return self._tag(self.g.binary("sub", a, b))

    def mul(self, a, b):
        return self._tag(self.g.binary("mul", a, b))

    def div(self, a, b):
        return self._tag(self.g.binary("div", a, b))

    def neg(self, a):
        return self._tag(self.g.neg(a))

    def call(self, name, *args):
        return self._tag(self.g.call(name, *args))

    def construct(self, vtype, *args):
        return self._tag(self.g.construct(vtype, *args))

    def swizzle(self, base, fields):
        return self._tag(self.g.swizzle(base, fields))

    def total(self, terms: list[int | None]) -> int | None:
        terms = [t for t in terms if t is not None]
        if not terms:
            return None
        acc = terms[0]
        for t in terms[1:]:
            acc = self.add(acc, t)
        return acc

    def _as_zero(self, nid: int) -> int | None:
        return None if g.is_constant_zero(self.g, nid) else nid

    def run(self, root: int) -> int | None:
        for i in g.topo_order(self.g, [root]):
            if i in self.deriv:
                continue
            self.owner = i
            self._mark = len(self.g)
            d = self.rule(i)
            self.owner = None
            if d is not None and d >= self._mark:
                self.g.roles[d] = ("head", i, self.wrt)
            self.deriv[i] = d
        return self.deriv[root]

    def rule(self, i: int) -> int | None:
        node = self.g[i]
        kind = node.kind
        ops = node.operands
        d = [self.deriv[o] for o in ops]

        if kind == g.LITERAL:
            return None
        if kind == g.INPUT:
            if node.op != "position":
                return None
            basis = [self.lit(1.0) if c == self.wrt else self.zero(g.SCALAR) for c in WRT]
            return self.g.construct(g.VEC3, *basis)
        if kind == g.UNARY:
            return None if d[0] is None else self.neg(d[0])
        if kind == g.SWIZZLE:
            return self.route_swizzle(d[0], node.op)
        if kind == g.CONSTRUCT:
            if all(x is None for x in d):
                return None
            args = [self.or_zero(x, o) for x, o in zip(d, ops)]
            return self.construct(node.type, *args)
        if kind == g.BINARY:
            return self.binary(node.op, ops, d)
        if kind == g.CALL:
            return self.call_rule(i, node.op, ops, d)
        raise NoDerivativeRule(f"no derivative rule for {kind}", i)

    def route_swizzle(self, du: int | None, fields: str) -> int | None:
        if du is None:
            return None
        base = self.g[du]
        # constructors of scalars route straight to the selected argument
        if base.kind == g.CONSTRUCT and all(self.g.type_of(o) is g.SCALAR for o in base.operands):
            args = base.operands
            if len(args) == 1:
                args = args * self.g.type_of(du).width
            picked = [args[g.SWIZZLE_FIELDS.index(c)] for c in fields]
            if all(g.is_constant_zero(self.g, p) for p in picked):
                return None
            if len(picked) == 1:
                return picked[0]
            return self.construct(g.ValueType.of_width(len(picked)), *picked)
        return self.swizzle(du, fields)

    def binary(self, op: str, ops, d) -> int | None:
        a, b = ops
        da, db = d
        if da is None and db is None:
            return None
        if op in ("add", "sub"):
            fn = self.add if op == "add" else self.sub
            return fn(self.or_zero(da, a), self.or_zero(db, b))
        if op == "mul":
            if db is None:
                return self.mul(b, da)
            if da is None:
                return self.mul(a, db)
            return self.add(self.mul(da, b), self.mul(a, db))
        if op == "div":
            if db is None:
                return self.div(da, b)
            bb = self.mul(b, b)
            if da is None:
                return self.div(self.neg(self.mul(a, db)), bb)
            return self.div(self.sub(self.mul(da, b), self.mul(a, db)), bb)
        raise NoDerivativeRule(f"no derivative rule for binary {op}")

    def call_rule(self, i: int, name: str, ops, d) -> int | None:
        if all(x is None for x in d):
            return None
        u = ops[0]
        du = d[0]
        one = lambda: self.lit(1.0)  # noqa: E731

        if name == "sin":
            return self.mul(self.call("cos", u), du)
        if name == "cos":
            return self.mul(self.neg(self.call("sin", u)), du)
        if name == "tan":
            c = self.call("cos", u)
            return self.div(du, self.mul(c, c))
        if name == "asin":
            return self.div(du, self.call("sqrt", self.sub(one(), self.mul(u, u))))
        if name == "acos":
            return self.div(self.neg(du), self.call("sqrt", self.sub(one(), self.mul(u, u))))
        if name == "atan":
            return self.div(du, self.add(one(), self.mul(u, u)))
        if name == "exp":
            return self.mul(i, du)
        if name == "log":
            return self.div(du, u)
        if name == "sqrt":
            return self.div(du, self.mul(self.lit(2.0), i))
        if name == "abs":
            return self.mul(self.call("sign", u), du)
        if name in ("floor", "sign", "step"):
            return None
        if name == "fract":
            return du
        if name == "pow":
            v = ops[1]
            dv = d[1]
            terms = []
            if dv is not None:
                terms.append(self.mul(dv, self.call("log", u)))
            if du is not None:
                terms.append(self.div(self.mul(v, du), u))
            return self.mul(i, self.total(terms))
        if name == "mod":
            k = ops[1]
            dk = d[1]
            if dk is None:
                return du
            fl = self.call("floor", self.div(u, k))
            return self.sub(self.or_zero(du, u), self.mul(dk, fl))
        if name in ("min", "max"):
            a, b = ops
            da, db = d
            # step(a, b) == 1 where a <= b; ties pick the first argument
            sel = self.call("step", a, b) if name == "min" else self.call("step", b, a)
            return self.call("mix", self.or_zero(db, b), self.or_zero(da, a), sel)
        if name == "clamp":
            x, lo, hi = ops
            dx, dlo, dhi = d
            inner = self.call("max", x, lo)
            d_inner = self.call("mix", self.or_zero(dlo, lo), self.or_zero(dx, x), self.call("step", lo, x))
            return self.call("mix", self.or_zero(dhi, hi), d_inner, self.call("step", inner, hi))
        if name == "mix":
            a, b, t = ops
            da, db, dt = d
            terms = []
            if da is not None:
                terms.append(self.mul(da, self.sub(one(), t)))
            if db is not None:
                terms.append(self.mul(db, t))
            if dt is not None:
                terms.append(self.mul(self.sub(b, a), dt))
            return self.total(terms)
        if name == "dot":
            a, b = ops
            da, db = d
            return self.total([
                None if da is None else self.call("dot", da, b),
                None if db is None else self.call("dot", a, db),
            ])
        if name == "cross":
            a, b = ops
            da, db = d
            return self.total([
                None if da is None else self.call("cross", da, b),
                None if db is None else self.call("cross", a, db),
            ])
        if name == "length":
            return self.div(self.call("dot", u, du), i)
        if name == "normalize":
            length = self.call("length", u)
            radial = self.div(self.call("dot", u, du), length)
            num = self.sub(self.mul(du, length), self.mul(u, radial))
            return self.div(num, self.mul(length, length))
        raise NoDerivativeRule(f"no derivative rule for {name}", i)


def _differentiate_in_place(graph: ExprGraph, root: int, wrt: str) -> int:
    if not 0 <= root < len(graph):
        raise GraphError(f"unknown root {root}", root)
    diff = _Differentiator(graph, wrt)
    d = diff.run(root)
    if d is None:
        d = diff.zero(graph.type_of(root))
    return d


def differentiate(graph: ExprGraph, root: int, wrt: str) -> tuple[ExprGraph, int]:
    """Append d(root)/d(position.wrt) to a copy of ``graph``.

    Existing nodes keep their ids and contents. The returned id has the same
    value type as ``root``; a derivative that is identically zero comes back
    as a zero literal (or zero splat for vectors).
    """
    out = graph.copy()
    return out, _differentiate_in_place(out, root, wrt)


def jacobian(graph: ExprGraph, offset_root: int) -> tuple[ExprGraph, JacobianExpr]:
    if graph.type_of(offset_root) is not g.VEC3:
        raise GraphError(f"offset root must be vec3, got {graph.type_of(offset_root).glsl}", offset_root)
    out = graph.copy()
    cols = [_differentiate_in_place(out, offset_root, w) for w in WRT]
    return out, JacobianExpr(*cols)


@dataclass(frozen=True)
class CompiledWarp:
    """A parsed warp together with its differentiated graph."""

    program: WarpProgram
    graph: ExprGraph
    offset: int
    jacobian: JacobianExpr

    @property
    def roots(self) -> tuple[int, int, int, int]:
        return (self.offset, *self.jacobian.columns)

    @property
    def inputs(self) -> frozenset[str]:
        return self.program.inputs


def compile_warp(source: str | WarpProgram) -> CompiledWarp:
    program = compile_source(source) if isinstance(source, str) else source
    extended, jac = jacobian(program.graph, program.offset)
    return CompiledWarp(program, extended, program.offset, jac)
