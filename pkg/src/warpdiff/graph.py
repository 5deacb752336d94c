"""Typed, append-only expression DAG shared by autodiff, eval and codegen.

Node ids are dense and assigned in insertion order, and every operand id is
strictly smaller than the id of the node that uses it, so any id-sorted
subset of the graph is already in topological order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable


class ValueType(enum.Enum):
    SCALAR = 1
    VEC2 = 2
    VEC3 = 3
    VEC4 = 4

    @property
    def width(self) -> int:
        return self.value

    @property
    def glsl(self) -> str:
        return "float" if self is ValueType.SCALAR else f"vec{self.value}"

    @classmethod
    def of_width(cls, n: int) -> "ValueType":
        return cls(n)

    def __repr__(self) -> str:
        return self.glsl


SCALAR = ValueType.SCALAR
VEC2 = ValueType.VEC2
VEC3 = ValueType.VEC3
VEC4 = ValueType.VEC4

# kind names
LITERAL = "literal"
INPUT = "input"
UNARY = "unary"
BINARY = "binary"
CALL = "call"
SWIZZLE = "swizzle"
CONSTRUCT = "construct"

KINDS = (LITERAL, INPUT, UNARY, BINARY, CALL, SWIZZLE, CONSTRUCT)
BINARY_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
SWIZZLE_FIELDS = "xyzw"

INPUT_TYPES = {
    "position": VEC3,
    "normal": VEC3,
    "millis": SCALAR,
    "mouse": VEC2,
    "resolution": VEC2,
}

# name -> arity. ``sign`` and ``step`` are only produced by differentiation
# rules; the DSL does not expose them.
COMPONENTWISE_1 = (
    "sin", "cos", "tan", "asin", "acos", "atan", "exp", "log", "sqrt",
    "abs", "floor", "fract", "sign",
)
SAME_TYPE_2 = ("pow", "mod", "min", "max", "step")
CALL_ARITY = {name: 1 for name in COMPONENTWISE_1}
CALL_ARITY.update({name: 2 for name in SAME_TYPE_2})
CALL_ARITY.update(
    {"clamp": 3, "mix": 3, "dot": 2, "cross": 2, "length": 1, "normalize": 1}
)
INTERNAL_CALLS = frozenset({"sign", "step"})
CONSTRUCTORS = {"vec2": VEC2, "vec3": VEC3, "vec4": VEC4}

# switching loci of these builtins are excluded from derivative checks
NON_SMOOTH_CALLS = frozenset({"abs", "min", "max", "clamp", "floor", "fract", "mod", "sign", "step"})


class GraphError(Exception):
    """Structural or type violation while building a graph."""

    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message)
        self.node_id = node_id


class GraphTypeError(GraphError):
    pass


@dataclass(frozen=True)
class Node:
    kind: str
    op: str
    operands: tuple[int, ...]
    type: ValueType
    value: float | None = None

    def key(self) -> tuple:
        """Structural identity; literals compare by their exact decimal repr."""
        lit = repr(self.value) if self.kind == LITERAL else None
        return (self.kind, self.op, self.operands, self.type, lit)


def infer_type(kind: str, op: str, types: tuple[ValueType, ...]) -> ValueType:
    """Result type of applying ``kind``/``op`` to operands of ``types``.

    Raises GraphTypeError when the signature does not check.
    """
    if kind == UNARY:
        if op != "neg" or len(types) != 1:
            raise GraphTypeError(f"unknown unary op {op!r}")
        return types[0]

    if kind == BINARY:
        if op not in BINARY_OPS:
            raise GraphTypeError(f"unknown binary op {op!r}")
        if len(types) != 2:
            raise GraphTypeError(f"{op} takes 2 operands, got {len(types)}")
        a, b = types
        if a is b:
            return a
        if a is SCALAR:
            return b
        if b is SCALAR:
            return a
        raise GraphTypeError(f"cannot apply '{BINARY_OPS[op]}' to {a.glsl} and {b.glsl}")

    if kind == CALL:
        if op not in CALL_ARITY:
            raise GraphTypeError(f"unknown builtin {op!r}")
        arity = CALL_ARITY[op]
        if len(types) != arity:
            raise GraphTypeError(f"{op} expects {arity} argument(s), got {len(types)}")
        if op in COMPONENTWISE_1 or op == "normalize":
            return types[0]
        if op in SAME_TYPE_2 or op == "clamp":
            if any(t is not types[0] for t in types):
                raise GraphTypeError(
                    f"{op} arguments must share a type, got {', '.join(t.glsl for t in types)}"
                )
            return types[0]
        if op == "mix":
            a, b, t = types
            if a is not b or (t is not a and t is not SCALAR):
                raise GraphTypeError(f"mix({a.glsl}, {b.glsl}, {t.glsl}) is not defined")
            return a
        if op == "dot":
            if types[0] is not types[1]:
                raise GraphTypeError(f"dot of {types[0].glsl} and {types[1].glsl}")
            return SCALAR
        if op == "cross":
            if types != (VEC3, VEC3):
                raise GraphTypeError(
                    f"cross expects (vec3, vec3), got ({types[0].glsl}, {types[1].glsl})"
                )
            return VEC3
        if op == "length":
            return SCALAR
        raise GraphTypeError(f"no type rule for {op!r}")  # pragma: no cover

    if kind == SWIZZLE:
        if len(types) != 1:
            raise GraphTypeError("swizzle takes one operand")
        base = types[0]
        if base is SCALAR:
            raise GraphTypeError(f"cannot swizzle a float with .{op}")
        if not 1 <= len(op) <= 4:
            raise GraphTypeError(f"bad swizzle .{op}")
        for ch in op:
            idx = SWIZZLE_FIELDS.find(ch)
            if idx < 0 or idx >= base.width:
                raise GraphTypeError(f"swizzle .{op} out of range for {base.glsl}")
        return ValueType.of_width(len(op))

    if kind == CONSTRUCT:
        if op not in CONSTRUCTORS:
            raise GraphTypeError(f"unknown constructor {op!r}")
        target = CONSTRUCTORS[op]
        if len(types) == 1 and types[0] is SCALAR:
            return target
        total = sum(t.width for t in types)
        if total != target.width:
            raise GraphTypeError(f"{op} needs {target.width} components, got {total}")
        return target

    raise GraphTypeError(f"no type rule for kind {kind!r}")


@dataclass
class ExprGraph:
    """Node table plus input registry.

    ``roles`` is bookkeeping written by differentiation: it maps a node id to
    ``(role, primal_id, wrt)`` with role ``"head"`` (the derivative of
    ``primal_id``) or ``"helper"`` (an intermediate of that derivative rule).
    """

    nodes: list[Node] = field(default_factory=list)
    inputs: dict[str, int] = field(default_factory=dict)
    roles: dict[int, tuple[str, int, str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def copy(self) -> "ExprGraph":
        return ExprGraph(list(self.nodes), dict(self.inputs), dict(self.roles))

    def add_node(self, node: Node) -> int:
        n = len(self.nodes)
        for o in node.operands:
            if not 0 <= o < n:
                raise GraphError(f"dangling operand {o}", n)
        if node.kind == LITERAL:
            if node.operands or node.value is None or node.type is not SCALAR:
                raise GraphError("literal must be a scalar with a value and no operands", n)
        elif node.kind == INPUT:
            if node.operands:
                raise GraphError("input takes no operands", n)
            if node.op in self.inputs:
                raise GraphError(f"input {node.op!r} already registered", n)
        else:
            try:
                expected = infer_type(node.kind, node.op, tuple(self.nodes[o].type for o in node.operands))
            except GraphTypeError as exc:
                raise GraphTypeError(str(exc), n) from None
            if expected is not node.type:
                raise GraphTypeError(f"declared {node.type.glsl}, rule gives {expected.glsl}", n)
        self.nodes.append(node)
        if node.kind == INPUT:
            self.inputs[node.op] = n
        return n

    # convenience builders

    def literal(self, value: float) -> int:
        return self.add_node(Node(LITERAL, "", (), SCALAR, float(value)))

    def input(self, name: str, vtype: ValueType | None = None) -> int:
        if name in self.inputs:
            return self.inputs[name]
        if vtype is None:
            if name not in INPUT_TYPES:
                raise GraphError(f"unknown input {name!r}")
            vtype = INPUT_TYPES[name]
        return self.add_node(Node(INPUT, name, (), vtype))

    def op(self, kind: str, op: str, *operands: int) -> int:
        try:
            vtype = infer_type(kind, op, tuple(self.nodes[o].type for o in operands))
        except IndexError:
            raise GraphError(f"dangling operand in {operands}", len(self.nodes)) from None
        return self.add_node(Node(kind, op, tuple(operands), vtype))

    def binary(self, op: str, a: int, b: int) -> int:
        return self.op(BINARY, op, a, b)

    def call(self, name: str, *args: int) -> int:
        return self.op(CALL, name, *args)

    def construct(self, vtype: ValueType, *args: int) -> int:
        return self.op(CONSTRUCT, vtype.glsl, *args)

    def swizzle(self, base: int, fields: str) -> int:
        return self.op(SWIZZLE, fields, base)

    def neg(self, a: int) -> int:
        return self.op(UNARY, "neg", a)

    def type_of(self, node_id: int) -> ValueType:
        return self.nodes[node_id].type


def validate(graph: ExprGraph) -> list[tuple[int, str]]:
    """Return every (node id, violation) pair; an empty list means valid."""
    problems: list[tuple[int, str]] = []
    seen_inputs: dict[str, int] = {}
    for i, node in enumerate(graph.nodes):
        if node.kind not in KINDS:
            problems.append((i, f"unknown kind {node.kind!r}"))
            continue
        bad = [o for o in node.operands if not 0 <= o < i]
        if bad:
            problems.append((i, f"operand ids {bad} not below own id"))
            continue
        if node.kind == LITERAL:
            if node.operands or node.value is None:
                problems.append((i, "malformed literal"))
            elif node.type is not SCALAR:
                problems.append((i, "literal must be scalar"))
            continue
        if node.kind == INPUT:
            if node.op in seen_inputs:
                problems.append((i, f"duplicate input {node.op!r} (first at {seen_inputs[node.op]})"))
            elif graph.inputs.get(node.op) != i:
                problems.append((i, "input missing from registry"))
            seen_inputs.setdefault(node.op, i)
            continue
        try:
            expected = infer_type(node.kind, node.op, tuple(graph.nodes[o].type for o in node.operands))
        except GraphTypeError as exc:
            problems.append((i, str(exc)))
            continue
        if expected is not node.type:
            problems.append((i, f"declared {node.type.glsl}, rule gives {expected.glsl}"))
    for name, nid in graph.inputs.items():
        if not 0 <= nid < len(graph.nodes) or graph.nodes[nid].kind != INPUT or graph.nodes[nid].op != name:
            problems.append((nid, f"registry entry {name!r} does not point at its input node"))
    return problems


def topo_order(graph: ExprGraph, roots: Iterable[int]) -> list[int]:
    """Ids reachable from ``roots`` in ascending (hence topological) order."""
    roots = list(roots)
    n = len(graph.nodes)
    for r in roots:
        if not 0 <= r < n:
            raise GraphError(f"unknown root {r}", r)
    seen = [False] * n
    stack = list(roots)
    while stack:
        i = stack.pop()
        if seen[i]:
            continue
        seen[i] = True
        stack.extend(o for o in graph.nodes[i].operands if not seen[o])
    return [i for i in range(n) if seen[i]]


def use_counts(graph: ExprGraph, reachable: Iterable[int]) -> dict[int, int]:
    """Operand-slot references to each node from within ``reachable``."""
    counts: dict[int, int] = {}
    for i in reachable:
        for o in graph.nodes[i].operands:
            counts[o] = counts.get(o, 0) + 1
    return counts


def is_constant_zero(graph: ExprGraph, node_id: int) -> bool:
    node = graph.nodes[node_id]
    if node.kind == LITERAL:
        return node.value == 0.0
    if node.kind == CONSTRUCT:
        return all(is_constant_zero(graph, o) for o in node.operands)
    return False


def depends_on(graph: ExprGraph, root: int, input_name: str) -> bool:
    target = graph.inputs.get(input_name)
    if target is None:
        return False
    return target in topo_order(graph, [root])


def node_label(node: Node) -> str:
    if node.kind == LITERAL:
        return f"{node.value!r}"
    if node.kind == INPUT:
        return node.op
    if node.kind == BINARY:
        return BINARY_OPS[node.op]
    if node.kind == SWIZZLE:
        return f".{node.op}"
    if node.kind == UNARY:
        return "-"
    return node.op


def to_dot(graph: ExprGraph, roots: Iterable[int] | None = None, name: str = "warp") -> str:
    """DOT text for the graph (or the part reachable from ``roots``)."""
    ids = range(len(graph.nodes)) if roots is None else topo_order(graph, roots)
    lines = [f"digraph {name} {{", "  node [shape=box, fontname=monospace];"]
    for i in ids:
        node = graph.nodes[i]
        label = f"{node.kind} {node_label(node)} : {node.type.glsl}".replace('"', r"\"")
        lines.append(f'  n{i} [label="{i}: {label}"];')
    for i in ids:
        for slot, o in enumerate(graph.nodes[i].operands):
            lines.append(f'  n{o} -> n{i} [label="{slot}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def dedupe(graph: ExprGraph) -> tuple[ExprGraph, list[int]]:
    """Structural-hashing CSE. Returns the new graph and an old->new id map.

    Differentiation roles are dropped; run this before ``jacobian``.
    """
    out = ExprGraph()
    table: dict[tuple, int] = {}
    remap: list[int] = []
    for node in graph.nodes:
        operands = tuple(remap[o] for o in node.operands)
        moved = Node(node.kind, node.op, operands, node.type, node.value)
        k = moved.key()
        if k in table:
            remap.append(table[k])
            continue
        nid = out.add_node(moved)
        table[k] = nid
        remap.append(nid)
    return out, remap
