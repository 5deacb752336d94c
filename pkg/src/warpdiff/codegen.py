"""Linearize differentiated graphs and print GLSL ES 1.00.

Statement naming: ``v{id}`` for values, ``d_v{id}_d_{x|y|z}`` for the
derivative of value ``id``; the four outputs are always ``offset``, ``dodx``,
``dody`` and ``dodz``.

Condensation depth counts operation nodes along an inlined expression tree.
Leaves (literals, inputs, swizzles of those, all-literal constructors) and
the intermediates of a derivative rule cost nothing, so at depth 1 each value
and each derivative lands on its own line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import graph as g
from .autodiff import WRT, JacobianExpr
from .graph import ExprGraph, GraphError, Node, ValueType

OUTPUT_NAMES = ("offset", "dodx", "dody", "dodz")
DEFAULT_CONDENSE_DEPTH = 8
INDENT = "  "


class CodegenError(Exception):
    pass


@dataclass(frozen=True)
class Ref:
    name: str
    type: ValueType


@dataclass(frozen=True)
class Op:
    node: Node
    node_id: int | None
    args: tuple["Ref | Op", ...]

    @property
    def type(self) -> ValueType:
        return self.node.type


Expr = Ref | Op


@dataclass(frozen=True)
class Statement:
    target: str
    type: ValueType
    expr: Expr
    node_id: int | None = None


@dataclass(frozen=True)
class LinearProgram:
    statements: tuple[Statement, ...]
    inputs: frozenset[str]
    outputs: tuple[str, ...] = OUTPUT_NAMES
    condense_depth: int = DEFAULT_CONDENSE_DEPTH

    def __post_init__(self):
        defined: set[str] = set(self.inputs)
        for st in self.statements:
            for name in _refs(st.expr):
                if name not in defined:
                    raise CodegenError(f"statement '{st.target}' uses '{name}' before it is defined")
            defined.add(st.target)
        missing = [o for o in self.outputs if o not in defined]
        if missing:
            raise CodegenError(f"outputs never assigned: {', '.join(missing)}")

    def __len__(self) -> int:
        return len(self.statements)

    @property
    def value_statements(self) -> tuple[Statement, ...]:
        return tuple(s for s in self.statements if s.target not in self.outputs)


def _refs(expr: Expr):
    if isinstance(expr, Ref):
        yield expr.name
        return
    if expr.node.kind == g.INPUT:
        yield expr.node.op
    for a in expr.args:
        yield from _refs(a)


def is_atom(graph: ExprGraph, i: int) -> bool:
    node = graph[i]
    if node.kind in (g.LITERAL, g.INPUT):
        return True
    if node.kind == g.SWIZZLE:
        return is_atom(graph, node.operands[0])
    if node.kind == g.CONSTRUCT:
        return all(graph[o].kind == g.LITERAL for o in node.operands)
    return False


def _weight(graph: ExprGraph, i: int) -> int:
    if is_atom(graph, i):
        return 0
    role = graph.roles.get(i)
    if role is not None and role[0] == "helper":
        return 0
    return 1


def _value_name(graph: ExprGraph, i: int) -> str:
    role = graph.roles.get(i)
    if role is not None and role[0] == "head":
        return f"d_v{role[1]}_d_{role[2]}"
    return f"v{i}"


def _sort_key(graph: ExprGraph, i: int) -> tuple:
    role = graph.roles.get(i)
    if role is None:
        return (i, 0, 0, i)
    return (role[1], 1, WRT.index(role[2]), i)


def linearize(
    graph: ExprGraph,
    offset: int,
    jacobian: JacobianExpr,
    condense_depth: int = DEFAULT_CONDENSE_DEPTH,
) -> LinearProgram:
    """Order the nodes feeding the four outputs into named statements.

    A node is inlined into its consumer when it is used exactly once and the
    consumer's expression stays within ``condense_depth``; anything used more
    than once gets its own statement. Derivative columns that are constant
    zero become ``vec3(0.0)``.
    """
    if condense_depth < 1:
        raise ValueError("condense_depth must be >= 1")
    problems = g.validate(graph)
    if problems:
        nid, why = problems[0]
        raise GraphError(f"invalid graph: node {nid}: {why}", nid)

    roots = (offset, *jacobian.columns)
    zero_cols = [col != 0 and g.is_constant_zero(graph, r) for col, r in enumerate(roots)]
    live_roots = [r for r, z in zip(roots, zero_cols) if not z]
    reachable = g.topo_order(graph, live_roots)
    uses = g.use_counts(graph, reachable)

    output_of: dict[int, str] = {}
    for name, r, z in zip(OUTPUT_NAMES, roots, zero_cols):
        if not z and r not in output_of:
            output_of[r] = name

    atoms = {i for i in reachable if is_atom(graph, i)}
    consumer: dict[int, int] = {}
    for j in reachable:
        for o in graph[j].operands:
            consumer.setdefault(o, j)

    # bottom-up: decide which operands get inlined and track tree depth
    depth: dict[int, int] = {}
    inline: set[int] = set()
    for i in reachable:
        if i in atoms:
            depth[i] = 0
            continue
        w = _weight(graph, i)
        d = w
        for o in graph[i].operands:
            if o in inline or o in atoms:
                d = max(d, w + depth[o])
        depth[i] = d
        if i in output_of or uses.get(i, 0) != 1:
            continue
        if _weight(graph, consumer[i]) + d <= condense_depth:
            inline.add(i)

    named = [i for i in reachable if i not in atoms and i not in inline]
    named.sort(key=lambda i: _sort_key(graph, i))
    names = {i: output_of.get(i) or _value_name(graph, i) for i in named}

    def build(i: int, top: bool = False) -> Expr:
        if not top and i in names:
            return Ref(names[i], graph[i].type)
        node = graph[i]
        return Op(node, i, tuple(build(o) for o in node.operands))

    statements = [Statement(names[i], graph[i].type, build(i, top=True), i) for i in named]

    # outputs that are atoms, or that alias another output's node
    for name, r, z in zip(OUTPUT_NAMES, roots, zero_cols):
        if z or names.get(r) == name:
            continue
        expr = Ref(names[r], g.VEC3) if r in names else build(r, top=True)
        statements.append(Statement(name, g.VEC3, expr, r))
    zero = Op(Node(g.CONSTRUCT, "vec3", (0,), g.VEC3), None, (Op(Node(g.LITERAL, "", (), g.SCALAR, 0.0), None, ()),))
    for name, z in zip(OUTPUT_NAMES, zero_cols):
        if z:
            statements.append(Statement(name, g.VEC3, zero, None))

    inputs = frozenset(graph[i].op for i in reachable if graph[i].kind == g.INPUT)
    return LinearProgram(tuple(statements), inputs, OUTPUT_NAMES, condense_depth)


# printing ---------------------------------------------------------------------

def format_float(value: float) -> str:
    """GLSL float literal; always carries a decimal point."""
    text = repr(float(value))
    if text in ("inf", "-inf", "nan"):
        raise CodegenError(f"literal {text} has no GLSL spelling")
    mantissa, _, exponent = text.partition("e")
    if "." not in mantissa:
        mantissa += ".0"
    return mantissa + ("e" + exponent if exponent else "")


def _is_binary(e: Expr) -> bool:
    return isinstance(e, Op) and e.node.kind == g.BINARY


def _is_neg(e: Expr) -> bool:
    return isinstance(e, Op) and e.node.kind == g.UNARY


def format_expr(e: Expr) -> str:
    if isinstance(e, Ref):
        return e.name
    node = e.node
    kind = node.kind
    if kind == g.LITERAL:
        return format_float(node.value)
    if kind == g.INPUT:
        return node.op
    if kind == g.UNARY:
        inner = format_expr(e.args[0])
        if _is_binary(e.args[0]) or _is_neg(e.args[0]):
            inner = f"({inner})"
        return f"-{inner}"
    if kind == g.BINARY:
        parts = []
        for a in e.args:
            text = format_expr(a)
            if _is_binary(a) or _is_neg(a):
                text = f"({text})"
            parts.append(text)
        return f"{parts[0]} {g.BINARY_OPS[node.op]} {parts[1]}"
    if kind == g.SWIZZLE:
        base = format_expr(e.args[0])
        if _is_binary(e.args[0]) or _is_neg(e.args[0]):
            base = f"({base})"
        return f"{base}.{node.op}"
    # call or constructor
    return f"{node.op}({', '.join(format_expr(a) for a in e.args)})"


def emit_glsl_snippet(program: LinearProgram) -> str:
    lines = [f"{st.type.glsl} {st.target} = {format_expr(st.expr)};" for st in program.statements]
    return "\n".join(lines) + "\n"


# vertex shader -------------------------------------------------------------------

_UNIFORM_TYPES = {"millis": "float", "mouse": "vec2", "resolution": "vec2"}

_MODEL_HEAD = """\
precision highp float;

attribute vec3 aPosition;
attribute vec3 aNormal;

uniform mat4 uP;
uniform mat4 uVM;
uniform mat3 uN;
{uniforms}
varying vec3 vNormal;

void main() {{
  // Start from attributes
  vec3 position = aPosition;
  vec3 normal = aNormal;
"""

_WORLD_HEAD = """\
precision highp float;

attribute vec3 aPosition;
attribute vec3 aNormal;

uniform mat4 uP;
uniform mat4 uV;
uniform mat4 uM;
uniform mat3 uN;
{uniforms}
varying vec3 vNormal;

void main() {{
  // Start from attributes, moved to world space
  vec3 position = (uM * vec4(aPosition, 1.)).xyz;
  vec3 normal = normalize(uN * aNormal);
"""

_SPLICE = """
  // Splice in auto-generated code.
  // This defines `vec3 offset`, and
  // three `vec3`s for each column of
  // the Jacobian: `dodx`, `dody`,
  // and `dodz`
{snippet}
  position += offset;
  vec3 w =
    (normal.y == 0. && normal.z == 0.)
      ? vec3(0., 1., 0.)
      : vec3(1., 0., 0.);
  vec3 v =
    normalize(cross(w, normal));
  vec3 u = cross(v, normal);
  mat3 jacobian =
    mat3(dodx, dody, dodz);
  normal = normalize(cross(
    u + jacobian * u,
    v + jacobian * v
  ));

  // Apply camera transforms
  // and output
"""

_MODEL_TAIL = """\
  gl_Position =
    uP * uVM * vec4(position, 1.);

  // Pass on to fragment shader
  vNormal = uN * normal;
}
"""

_WORLD_TAIL = """\
  gl_Position =
    uP * uV * vec4(position, 1.);

  // Pass on to fragment shader (world space)
  vNormal = normal;
}
"""


def _declared(snippet: str, name: str) -> bool:
    return re.search(rf"\b(?:float|vec[234])\s+{name}\s*=", snippet) is not None


def emit_vertex_shader(snippet: str, space: str = "model") -> str:
    """Wrap a snippet in the vertex shader that applies the normal update."""
    if space not in ("model", "world"):
        raise ValueError(f"space must be 'model' or 'world', got {space!r}")
    missing = [name for name in OUTPUT_NAMES if not _declared(snippet, name)]
    if missing:
        raise CodegenError(f"snippet does not define {', '.join(missing)}")
    used = [n for n in _UNIFORM_TYPES if re.search(rf"\b{n}\b", snippet)]
    uniforms = "".join(f"uniform {_UNIFORM_TYPES[n]} {n};\n" for n in used)
    body = "\n".join(INDENT + line if line else line for line in snippet.rstrip("\n").split("\n"))
    head, tail = (_MODEL_HEAD, _MODEL_TAIL) if space == "model" else (_WORLD_HEAD, _WORLD_TAIL)
    return head.format(uniforms=uniforms) + _SPLICE.format(snippet=body) + tail


def generate(warp, *, condense_depth: int = DEFAULT_CONDENSE_DEPTH, mode: str = "snippet", space: str = "model") -> str:
    program = linearize(warp.graph, warp.offset, warp.jacobian, condense_depth)
    snippet = emit_glsl_snippet(program)
    if mode == "snippet":
        return snippet
    if mode == "shader":
        return emit_vertex_shader(snippet, space)
    raise ValueError(f"mode must be 'snippet' or 'shader', got {mode!r}")
