"""Lexer, parser and lowering for ``.warp`` offset programs.

A program is a sequence of ``let name = expr;`` bindings followed by one
final expression, the vec3 offset. Example::

    // sine ripple along x
    let phase = millis * 0.005 + position.y * 2.0;
    vec3(sin(phase) * 0.5, 0.0, 0.0)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import graph as g
from .graph import ExprGraph, GraphTypeError, ValueType

KEYWORD_LET = "let"

NUMBER = "number"
IDENT = "identifier"
OPERATOR = "operator"
PUNCT = "punctuation"
LET = "keyword-let"
END = "end"

DSL_BUILTINS = frozenset(
    n for n in g.CALL_ARITY if n not in g.INTERNAL_CALLS
) | frozenset(g.CONSTRUCTORS)


class WarpError(Exception):
    """A diagnostic tied to a byte span of the warp source."""

    kind = "error"

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def render(self, source: str | None = None, filename: str = "<warp>") -> str:
        if self.span is None or source is None:
            return f"{filename}: {self.kind}: {self.message}"
        line, col = line_col(source, self.span[0])
        return f"{filename}:{line}:{col}: {self.kind}: {self.message}"


class WarpLexError(WarpError):
    kind = "lexical error"


class WarpSyntaxError(WarpError):
    kind = "syntax error"


class WarpTypeError(WarpError):
    kind = "type error"


class WarpNameError(WarpError):
    kind = "name error"


def line_col(source: str, byte_offset: int) -> tuple[int, int]:
    """1-based line and character column of a byte offset."""
    prefix = source.encode("utf-8")[:byte_offset].decode("utf-8", errors="replace")
    line = prefix.count("\n") + 1
    col = len(prefix) - (prefix.rfind("\n") + 1) + 1
    return line, col


@dataclass(frozen=True)
class Token:
    kind: str
    lexeme: str
    span: tuple[int, int]


_TOKEN_RE = re.compile(
    rb"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<number>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/=])
  | (?P<punct>[(),.;])
    """,
    re.VERBOSE,
)
_NUMBER_TAIL = re.compile(rb"[A-Za-z0-9_.]")


def tokenize(source: str) -> list[Token]:
    data = source.encode("utf-8")
    tokens: list[Token] = []
    pos = 0
    while pos < len(data):
        m = _TOKEN_RE.match(data, pos)
        if m is None:
            ch = data[pos:pos + 4].decode("utf-8", errors="replace")[:1]
            raise WarpLexError(f"unexpected character {ch!r} at byte {pos}", (pos, pos + 1))
        kind = m.lastgroup
        end = m.end()
        if kind == "number" and end < len(data) and _NUMBER_TAIL.match(data, end):
            tail = _NUMBER_TAIL.match(data, end)
            while tail:
                end = tail.end()
                tail = _NUMBER_TAIL.match(data, end)
            bad = data[pos:end].decode()
            raise WarpLexError(f"malformed number {bad!r} at byte {pos}", (pos, end))
        if kind not in ("ws", "comment"):
            lexeme = m.group().decode("utf-8")
            tkind = {
                "number": NUMBER,
                "ident": IDENT,
                "op": OPERATOR,
                "punct": PUNCT,
            }[kind]
            if tkind == IDENT and lexeme == KEYWORD_LET:
                tkind = LET
            tokens.append(Token(tkind, lexeme, (pos, end)))
        pos = end
    tokens.append(Token(END, "", (len(data), len(data))))
    return tokens


# AST


@dataclass(frozen=True)
class Number:
    value: float
    text: str
    span: tuple[int, int]


@dataclass(frozen=True)
class Name:
    name: str
    span: tuple[int, int]


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    span: tuple[int, int]


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * /
    lhs: "Expr"
    rhs: "Expr"
    span: tuple[int, int]


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]
    span: tuple[int, int]


@dataclass(frozen=True)
class Swizzle:
    base: "Expr"
    fields: str
    span: tuple[int, int]


Expr = Number | Name | Neg | Binary | Call | Swizzle


@dataclass(frozen=True)
class Binding:
    name: str
    expr: Expr
    span: tuple[int, int]


@dataclass(frozen=True)
class Ast:
    bindings: tuple[Binding, ...]
    result: Expr


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != END:
            self.i += 1
        return t

    def at(self, kind: str, lexeme: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (lexeme is None or t.lexeme == lexeme)

    def expect(self, kind: str, lexeme: str | None = None, what: str | None = None) -> Token:
        if not self.at(kind, lexeme):
            wanted = what or (f"'{lexeme}'" if lexeme else kind)
            raise WarpSyntaxError(f"expected {wanted}, found {_describe(self.tok)}", self.tok.span)
        return self.advance()

    def program(self) -> Ast:
        bindings = []
        while self.at(LET):
            start = self.advance().span[0]
            name = self.expect(IDENT, what="binding name")
            self.expect(OPERATOR, "=")
            expr = self.expr()
            semi = self.expect(PUNCT, ";")
            bindings.append(Binding(name.lexeme, expr, (start, semi.span[1])))
        if self.at(END):
            raise WarpSyntaxError("expected the offset expression, found end of input", self.tok.span)
        result = self.expr()
        if self.at(PUNCT, ";"):
            self.advance()
        if not self.at(END):
            raise WarpSyntaxError(f"expected end of input, found {_describe(self.tok)}", self.tok.span)
        return Ast(tuple(bindings), result)

    def expr(self) -> Expr:
        lhs = self.term()
        while self.at(OPERATOR, "+") or self.at(OPERATOR, "-"):
            op = self.advance().lexeme
            rhs = self.term()
            lhs = Binary(op, lhs, rhs, (lhs.span[0], rhs.span[1]))
        return lhs

    def term(self) -> Expr:
        lhs = self.unary()
        while self.at(OPERATOR, "*") or self.at(OPERATOR, "/"):
            op = self.advance().lexeme
            rhs = self.unary()
            lhs = Binary(op, lhs, rhs, (lhs.span[0], rhs.span[1]))
        return lhs

    def unary(self) -> Expr:
        if self.at(OPERATOR, "-"):
            start = self.advance().span[0]
            operand = self.unary()
            return Neg(operand, (start, operand.span[1]))
        return self.postfix()

    def postfix(self) -> Expr:
        node = self.primary()
        while self.at(PUNCT, "."):
            self.advance()
            fields = self.expect(IDENT, what="swizzle fields after '.'")
            node = Swizzle(node, fields.lexeme, (node.span[0], fields.span[1]))
        return node

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == NUMBER:
            self.advance()
            return Number(float(t.lexeme), t.lexeme, t.span)
        if t.kind == IDENT:
            self.advance()
            if self.at(PUNCT, "("):
                self.advance()
                args = []
                if not self.at(PUNCT, ")"):
                    args.append(self.expr())
                    while self.at(PUNCT, ","):
                        self.advance()
                        args.append(self.expr())
                close = self.expect(PUNCT, ")", what="',' or ')'")
                return Call(t.lexeme, tuple(args), (t.span[0], close.span[1]))
            return Name(t.lexeme, t.span)
        if self.at(PUNCT, "("):
            self.advance()
            inner = self.expr()
            self.expect(PUNCT, ")")
            return inner
        raise WarpSyntaxError(f"expected an expression, found {_describe(t)}", t.span)


def _describe(t: Token) -> str:
    return "end of input" if t.kind == END else f"'{t.lexeme}'"


def parse(tokens: list[Token] | str) -> Ast:
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    return _Parser(tokens).program()


# lowering


@dataclass
class WarpProgram:
    source: str
    ast: Ast
    graph: ExprGraph
    offset: int
    inputs: frozenset[str] = field(default_factory=frozenset)

    @property
    def node_count(self) -> int:
        return len(self.graph)


_BINOP_NAMES = {"+": "add", "-": "sub", "*": "mul", "/": "div"}
# arguments splatted to a common vector type before the call node is built
_SPLAT_ALL = frozenset({"pow", "mod", "min", "max", "clamp", "step"})


class _Lowerer:
    def __init__(self, allow_internal: bool):
        self.graph = ExprGraph()
        self.scope: dict[str, int] = {}
        self.allow_internal = allow_internal

    def node(self, kind: str, op: str, operands: tuple[int, ...], span) -> int:
        try:
            return self.graph.op(kind, op, *operands)
        except GraphTypeError as exc:
            raise WarpTypeError(str(exc), span) from None

    def splat(self, nid: int, vtype: ValueType) -> int:
        if self.graph.type_of(nid) is g.SCALAR and vtype is not g.SCALAR:
            return self.graph.construct(vtype, nid)
        return nid

    def lower(self, e: Expr) -> int:
        if isinstance(e, Number):
            return self.graph.literal(e.value)
        if isinstance(e, Name):
            if e.name in self.scope:
                return self.scope[e.name]
            if e.name in g.INPUT_TYPES:
                return self.graph.input(e.name)
            hint = " (builtins must be called)" if e.name in DSL_BUILTINS else ""
            raise WarpNameError(f"unknown identifier '{e.name}'{hint}", e.span)
        if isinstance(e, Neg):
            return self.node(g.UNARY, "neg", (self.lower(e.operand),), e.span)
        if isinstance(e, Binary):
            a = self.lower(e.lhs)
            b = self.lower(e.rhs)
            return self.node(g.BINARY, _BINOP_NAMES[e.op], (a, b), e.span)
        if isinstance(e, Swizzle):
            return self.node(g.SWIZZLE, e.fields, (self.lower(e.base),), e.span)
        if isinstance(e, Call):
            return self.call(e)
        raise TypeError(f"not an expression: {e!r}")  # pragma: no cover

    def call(self, e: Call) -> int:
        name = e.name
        if name in g.CONSTRUCTORS:
            args = tuple(self.lower(a) for a in e.args)
            if not args:
                raise WarpTypeError(f"{name} needs at least one argument", e.span)
            return self.node(g.CONSTRUCT, name, args, e.span)
        known = name in g.CALL_ARITY and (self.allow_internal or name not in g.INTERNAL_CALLS)
        if not known:
            raise WarpNameError(f"unknown builtin '{name}'", e.span)
        arity = g.CALL_ARITY[name]
        if len(e.args) != arity:
            raise WarpTypeError(f"{name} expects {arity} argument(s), got {len(e.args)}", e.span)
        args = [self.lower(a) for a in e.args]
        types = [self.graph.type_of(a) for a in args]
        if name in _SPLAT_ALL or name == "mix":
            splat_over = types if name != "mix" else types[:2]
            wide = [t for t in splat_over if t is not g.SCALAR]
            if wide and all(t is wide[0] for t in wide):
                n_splat = len(splat_over)
                args = [self.splat(a, wide[0]) for a in args[:n_splat]] + args[n_splat:]
        return self.node(g.CALL, name, tuple(args), e.span)


def lower(ast: Ast, source: str = "", *, allow_internal: bool = False) -> WarpProgram:
    """Type-check ``ast`` and build its graph; the result must be a vec3."""
    lw = _Lowerer(allow_internal)
    for b in ast.bindings:
        if b.name in g.INPUT_TYPES:
            raise WarpNameError(f"'{b.name}' is an input and cannot be rebound", b.span)
        if b.name in DSL_BUILTINS or b.name in g.INTERNAL_CALLS:
            raise WarpNameError(f"'{b.name}' is a builtin and cannot be rebound", b.span)
        if b.name in lw.scope:
            raise WarpNameError(f"'{b.name}' is already bound", b.span)
        lw.scope[b.name] = lw.lower(b.expr)
    root = lw.lower(ast.result)
    rtype = lw.graph.type_of(root)
    if rtype is not g.VEC3:
        raise WarpTypeError(f"offset must be a vec3, got {rtype.glsl}", ast.result.span)
    reached = g.topo_order(lw.graph, [root])
    inputs = frozenset(lw.graph[i].op for i in reached if lw.graph[i].kind == g.INPUT)
    return WarpProgram(source, ast, lw.graph, root, inputs)


def compile_source(source: str, *, allow_internal: bool = False) -> WarpProgram:
    return lower(parse(tokenize(source)), source, allow_internal=allow_internal)
