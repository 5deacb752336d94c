"""Double-precision reference semantics for graphs and linear programs.

All evaluators are batch-aware: an :class:`Env` whose ``position`` has shape
``(..., 3)`` evaluates every node over the leading batch shape at once.
Scalars come back with the batch shape, vectors with an extra trailing axis.
A single environment has batch shape ``()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from . import graph as g
from .graph import ExprGraph, Node

ABS_FLOOR = 1e-6
NON_SMOOTH_MARGIN = 1e-3


class DomainError(ArithmeticError):
    """An operation was applied outside its domain (log of 0, x/0, ...)."""

    def __init__(self, message: str, node_id: int | None = None, where: str | None = None):
        super().__init__(message)
        self.node_id = node_id
        self.where = where


@dataclass(frozen=True)
class Env:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    millis: float | np.ndarray = 0.0
    mouse: np.ndarray = field(default_factory=lambda: np.zeros(2))
    resolution: np.ndarray = field(default_factory=lambda: np.array([1200.0, 1200.0]))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        for name in ("position", "mouse", "resolution", "normal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "millis", np.asarray(self.millis, dtype=np.float64))

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(
            self.position.shape[:-1],
            self.millis.shape,
            self.mouse.shape[:-1],
            self.resolution.shape[:-1],
            self.normal.shape[:-1],
        )

    def with_position(self, position) -> "Env":
        return replace(self, position=np.asarray(position, dtype=np.float64))

    def value_of(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def take(self, index) -> "Env":
        """Single environment ``index`` of a batch."""
        shape = self.batch_shape

        def pick(a, vec):
            full = np.broadcast_to(a, shape + a.shape[a.ndim - 1:] if vec else shape)
            return np.array(full[index])

        return Env(
            position=pick(self.position, True),
            millis=float(pick(self.millis, False)),
            mouse=pick(self.mouse, True),
            resolution=pick(self.resolution, True),
            normal=pick(self.normal, True),
        )


# primitive semantics ---------------------------------------------------------

def _lift(x: np.ndarray, t: g.ValueType, other: g.ValueType) -> np.ndarray:
    """Expand a scalar so it broadcasts against a vector operand."""
    if t is g.SCALAR and other is not g.SCALAR:
        return np.asarray(x)[..., None]
    return x


def _bad(mask) -> bool:
    return bool(np.any(mask))


def _domain_mask(node: Node, args: list[np.ndarray], types: list[g.ValueType]) -> np.ndarray | None:
    """Elementwise mask of domain violations, reduced to the batch shape."""
    op = node.op
    m = None
    if node.kind == g.BINARY and op == "div":
        m = args[1] == 0.0
    elif node.kind == g.CALL:
        u = args[0]
        if op == "log":
            m = u <= 0.0
        elif op == "sqrt":
            m = u < 0.0
        elif op in ("asin", "acos"):
            m = np.abs(u) > 1.0
        elif op == "pow":
            m = (u < 0.0) | ((u == 0.0) & (args[1] <= 0.0))
        elif op == "mod":
            m = args[1] == 0.0
        elif op == "normalize":
            if types[0] is g.SCALAR:
                return np.asarray(u == 0.0)
            return np.sum(u * u, axis=-1) == 0.0
    if m is None:
        return None
    m = np.asarray(m)
    # reduce the vector axis of vector-typed operands
    if node.kind == g.BINARY:
        if types[1] is not g.SCALAR:
            m = m.any(axis=-1)
    elif types[0] is not g.SCALAR:
        m = m.any(axis=-1)
    return m


def apply_op(node: Node, args: list[np.ndarray], types: list[g.ValueType]) -> np.ndarray:
    """Evaluate one non-leaf node on already-evaluated operands."""
    kind, op = node.kind, node.op
    if kind == g.UNARY:
        return -args[0]
    if kind == g.BINARY:
        a = _lift(args[0], types[0], types[1])
        b = _lift(args[1], types[1], types[0])
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        return a / b
    if kind == g.SWIZZLE:
        idx = [g.SWIZZLE_FIELDS.index(c) for c in op]
        base = args[0]
        return base[..., idx[0]] if len(idx) == 1 else base[..., idx]
    if kind == g.CONSTRUCT:
        width = node.type.width
        if len(args) == 1 and types[0] is g.SCALAR:
            x = np.asarray(args[0])[..., None]
            return np.broadcast_to(x, x.shape[:-1] + (width,)).copy()
        parts = [np.asarray(a)[..., None] if t is g.SCALAR else np.asarray(a) for a, t in zip(args, types)]
        shape = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
        parts = [np.broadcast_to(p, shape + p.shape[-1:]) for p in parts]
        return np.concatenate(parts, axis=-1)
    if kind == g.CALL:
        u = args[0]
        if op == "sin":
            return np.sin(u)
        if op == "cos":
            return np.cos(u)
        if op == "tan":
            return np.tan(u)
        if op == "asin":
            return np.arcsin(u)
        if op == "acos":
            return np.arccos(u)
        if op == "atan":
            return np.arctan(u)
        if op == "exp":
            return np.exp(u)
        if op == "log":
            return np.log(u)
        if op == "sqrt":
            return np.sqrt(u)
        if op == "abs":
            return np.abs(u)
        if op == "floor":
            return np.floor(u)
        if op == "fract":
            return u - np.floor(u)
        if op == "sign":
            return np.sign(u)
        if op == "pow":
            return np.power(u, args[1])
        if op == "mod":
            return u - args[1] * np.floor(u / args[1])
        if op == "min":
            return np.minimum(u, args[1])
        if op == "max":
            return np.maximum(u, args[1])
        if op == "step":
            return np.where(args[1] < u, 0.0, 1.0)
        if op == "clamp":
            return np.minimum(np.maximum(u, args[1]), args[2])
        if op == "mix":
            t = _lift(args[2], types[2], types[0])
            return u * (1.0 - t) + args[1] * t
        if op == "dot":
            if types[0] is g.SCALAR:
                return u * args[1]
            return np.sum(u * args[1], axis=-1)
        if op == "cross":
            a, b = u, args[1]
            return np.stack(
                [
                    a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                    a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                    a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
                ],
                axis=-1,
            )
        if op == "length":
            if types[0] is g.SCALAR:
                return np.abs(u)
            return np.sqrt(np.sum(u * u, axis=-1))
        if op == "normalize":
            if types[0] is g.SCALAR:
                return u / np.abs(u)
            return u / np.sqrt(np.sum(u * u, axis=-1))[..., None]
    raise ValueError(f"cannot evaluate {kind} {op}")  # pragma: no cover


def leaf_value(node: Node, env: Env) -> np.ndarray:
    if node.kind == g.LITERAL:
        return np.float64(node.value)
    return env.value_of(node.op)


class _Evaluation:
    """One evaluation pass; ``errors`` is 'raise' or 'mask'."""

    def __init__(self, graph: ExprGraph, env: Env, errors: str = "raise"):
        self.graph = graph
        self.env = env
        self.errors = errors
        self.bad = np.zeros(env.batch_shape, dtype=bool)
        self.values: dict[int, np.ndarray] = {}

    def node(self, i: int, args: list[np.ndarray]) -> np.ndarray:
        node = self.graph[i]
        if not node.operands:
            return leaf_value(node, self.env)
        types = [self.graph[o].type for o in node.operands]
        mask = _domain_mask(node, args, types)
        if mask is not None and _bad(mask):
            if self.errors == "raise":
                raise DomainError(_domain_message(node), i)
            self.bad = self.bad | np.broadcast_to(mask, self.bad.shape)
        with np.errstate(all="ignore"):
            return apply_op(node, args, types)

    def run(self, roots: Iterable[int]) -> None:
        for i in g.topo_order(self.graph, roots):
            self.values[i] = self.node(i, [self.values[o] for o in self.graph[i].operands])


def _domain_message(node: Node) -> str:
    if node.kind == g.BINARY:
        return "division by zero"
    return {
        "log": "log of a non-positive value",
        "sqrt": "sqrt of a negative value",
        "asin": "asin outside [-1, 1]",
        "acos": "acos outside [-1, 1]",
        "pow": "pow with negative base (or zero base, non-positive exponent)",
        "mod": "mod by zero",
        "normalize": "normalize of a zero vector",
    }.get(node.op, f"domain error in {node.op}")


def _finish(value: np.ndarray):
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        return float(v)
    return v.copy()


def eval_graph(graph: ExprGraph, root: int, env: Env, *, memoize: bool = True):
    """Value of ``root`` under ``env``; raises DomainError naming the node."""
    if memoize:
        ev = _Evaluation(graph, env)
        ev.run([root])
        return _finish(ev.values[root])
    return _finish(_eval_unmemoized(graph, root, env))


def _eval_unmemoized(graph: ExprGraph, root: int, env: Env) -> np.ndarray:
    ev = _Evaluation(graph, env)

    def rec(i):
        return ev.node(i, [rec(o) for o in graph[i].operands])

    return rec(root)


def eval_many(graph: ExprGraph, roots: Iterable[int], env: Env, *, errors: str = "raise"):
    """Evaluate several roots in one pass.

    Returns ``(values, bad)`` where ``bad`` flags batch entries that hit a
    domain error (only populated with ``errors='mask'``).
    """
    roots = list(roots)
    ev = _Evaluation(graph, env, errors)
    ev.run(roots)
    shape = env.batch_shape
    out = []
    for r in roots:
        v = np.asarray(ev.values[r], dtype=np.float64)
        width = graph[r].type.width
        tail = (width,) if graph[r].type is not g.SCALAR else ()
        out.append(np.broadcast_to(v, shape + tail).copy())
    return out, ev.bad


# linear programs -------------------------------------------------------------

def eval_linear(program, env: Env, *, errors: str = "raise"):
    """Run a LinearProgram statement by statement.

    Returns a dict with ``offset``, ``dodx``, ``dody``, ``dodz``. With
    ``errors='mask'`` returns ``(outputs, bad)`` instead.
    """
    from .codegen import Op, Ref

    scope: dict[str, np.ndarray] = {}
    bad = np.zeros(env.batch_shape, dtype=bool)

    def run(expr, target):
        nonlocal bad
        if isinstance(expr, Ref):
            return scope[expr.name]
        node = expr.node
        if not node.operands:
            return leaf_value(node, env)
        args = [run(a, target) for a in expr.args]
        types = [a.type for a in expr.args]
        mask = _domain_mask(node, args, types)
        if mask is not None and _bad(mask):
            if errors == "raise":
                raise DomainError(f"{_domain_message(node)} in statement '{target}'", expr.node_id, target)
            bad = bad | np.broadcast_to(mask, bad.shape)
        with np.errstate(all="ignore"):
            return apply_op(node, args, types)

    for st in program.statements:
        scope[st.target] = run(st.expr, st.target)
    shape = env.batch_shape
    outputs = {}
    for name in program.outputs:
        v = np.asarray(scope[name], dtype=np.float64)
        outputs[name] = np.broadcast_to(v, shape + (3,)).copy()
    if errors == "raise":
        return outputs
    return outputs, bad


# Jacobians -------------------------------------------------------------------

def ad_jacobian(warp, env: Env, *, errors: str = "raise"):
    """(offset, J) from the differentiated graph; J[..., :, j] is column j."""
    (f, dx, dy, dz), bad = eval_many(warp.graph, warp.roots, env, errors=errors)
    J = np.stack([dx, dy, dz], axis=-1)
    if errors == "raise":
        return f, J
    return f, J, bad


def default_step(position) -> np.ndarray:
    """h = 1e-3 * max(1, |p|), per sample."""
    p = np.asarray(position, dtype=np.float64)
    return 1e-3 * np.maximum(1.0, np.linalg.norm(p, axis=-1))


def finite_diff_jacobian(graph: ExprGraph, offset_root: int, env: Env, h, *, errors: str = "raise"):
    """Central differences along the coordinate axes.

    Column j is (f(p + h e_j) - f(p - h e_j)) / (2h), where 2h is taken as
    the rounded distance between the two stencil points so that linear maps
    come out exact. ``h`` may be a scalar or one step per batch entry.
    """
    h = np.asarray(h, dtype=np.float64)
    if np.any(h <= 0):
        raise ValueError("finite-difference step must be positive")
    p = np.broadcast_to(env.position, env.batch_shape + (3,))
    bad = np.zeros(env.batch_shape, dtype=bool)
    cols = []
    for j in range(3):
        step = np.zeros(3)
        step[j] = 1.0
        shift = h[..., None] * step
        hi, lo = p + shift, p - shift
        (fp,), bp = eval_many(graph, [offset_root], env.with_position(hi), errors=errors)
        (fm,), bm = eval_many(graph, [offset_root], env.with_position(lo), errors=errors)
        bad = bad | bp | bm
        # divide by the step actually taken after rounding p +- h
        cols.append((fp - fm) / (hi[..., j] - lo[..., j])[..., None])
    J = np.stack(cols, axis=-1)
    if errors == "raise":
        return J
    return J, bad


def collapse_diagnostic(J) -> float:
    """det(I + J); zero exactly when -1 is an eigenvalue of J."""
    m = np.eye(3) + np.asarray(J, dtype=np.float64)
    det = (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )
    return float(det) + 0.0


def tangent_collapse(J, u, v) -> float:
    """|(u + Ju) x (v + Jv)|: the area scale of the tangent map on span(u, v)."""
    J = np.asarray(J, dtype=np.float64)
    a = np.asarray(u) + J @ np.asarray(u)
    b = np.asarray(v) + J @ np.asarray(v)
    return float(np.linalg.norm(np.cross(a, b)))


# non-smooth loci --------------------------------------------------------------

def branch_signature(graph: ExprGraph, root: int, env: Env) -> np.ndarray:
    """Discrete branch taken by every non-smooth node, per batch entry.

    Two environments with equal signatures sit on the same smooth piece of
    the offset function.
    """
    ev = _Evaluation(graph, env, errors="mask")
    ev.run([root])
    shape = env.batch_shape
    cols = []
    for i in sorted(ev.values):
        node = graph[i]
        if node.kind != g.CALL or node.op not in g.NON_SMOOTH_CALLS:
            continue
        a = [ev.values[o] for o in node.operands]
        with np.errstate(all="ignore"):
            if node.op in ("abs", "sign"):
                s = np.sign(a[0])
            elif node.op == "min":
                s = (a[0] <= a[1]).astype(float)
            elif node.op in ("max", "step"):
                s = (a[0] >= a[1]).astype(float)
            elif node.op == "clamp":
                s = (a[0] >= a[1]).astype(float) + (np.maximum(a[0], a[1]) > a[2]).astype(float)
            elif node.op in ("floor", "fract"):
                s = np.floor(a[0])
            else:  # mod
                s = np.floor(a[0] / a[1])
        s = np.asarray(s, dtype=np.float64)
        if node.type is not g.SCALAR:
            s = np.broadcast_to(s, shape + (node.type.width,))
            cols.extend(s[..., k] for k in range(node.type.width))
        else:
            cols.append(np.broadcast_to(s, shape))
    if not cols:
        return np.zeros(shape + (0,))
    return np.stack(cols, axis=-1)


def near_non_smooth(graph: ExprGraph, root: int, env: Env, h) -> np.ndarray:
    """Entries whose FD stencil (or a 1e-3 axis neighbourhood) crosses a switching locus."""
    h = np.maximum(np.asarray(h, dtype=np.float64), NON_SMOOTH_MARGIN)
    p = np.broadcast_to(env.position, env.batch_shape + (3,))
    centre = branch_signature(graph, root, env)
    out = np.zeros(env.batch_shape, dtype=bool)
    if centre.shape[-1] == 0:
        return out
    for j in range(3):
        for sgn in (1.0, -1.0):
            shift = np.zeros(3)
            shift[j] = sgn
            sig = branch_signature(graph, root, env.with_position(p + h[..., None] * shift))
            with np.errstate(invalid="ignore"):
                out |= np.any(sig != centre, axis=-1)
    return out


# derivative check harness -------------------------------------------------------

def sample_envs(n: int, rng: np.random.Generator, *, box: float = 10.0, max_millis: float = 1e5) -> Env:
    """Random environments: positions in [-box, box]^3, millis in [0, max_millis]."""
    resolution = rng.uniform(200.0, 2000.0, size=(n, 2))
    normal = rng.normal(size=(n, 3))
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return Env(
        position=rng.uniform(-box, box, size=(n, 3)),
        millis=rng.uniform(0.0, max_millis, size=n),
        mouse=rng.uniform(0.0, 1.0, size=(n, 2)) * resolution,
        resolution=resolution,
        normal=normal,
    )


@dataclass
class CheckReport:
    warp: str
    samples: int
    tolerance: float
    max_abs_err: float
    max_rel_err: float
    worst_sample: dict | None
    degenerate_samples: int
    excluded_samples: int
    domain_error_samples: int
    passed: bool
    checked_samples: int = 0
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "warp": self.warp,
            "samples": self.samples,
            "max_abs_err": self.max_abs_err,
            "max_rel_err": self.max_rel_err,
            "degenerate_samples": self.degenerate_samples,
            "pass": self.passed,
            "tolerance": self.tolerance,
            "checked_samples": self.checked_samples,
            "excluded_samples": self.excluded_samples,
            "domain_error_samples": self.domain_error_samples,
            "worst_sample": self.worst_sample,
            "notes": list(self.notes),
        }

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"{status} {self.warp}: max_rel_err={self.max_rel_err:.3e} max_abs_err={self.max_abs_err:.3e} "
            f"(tol {self.tolerance:g}, {self.checked_samples}/{self.samples} samples checked)",
        ]
        if self.excluded_samples:
            lines.append(f"  {self.excluded_samples} sample(s) near non-smooth points excluded")
        if self.domain_error_samples:
            lines.append(f"  {self.domain_error_samples} sample(s) hit domain errors")
        if self.degenerate_samples:
            lines.append(f"  {self.degenerate_samples} sample(s) with det(I + J) = 0")
        if self.worst_sample is not None:
            w = self.worst_sample
            lines.append(f"  worst at position={w['position']} millis={w['millis']:.6g} entry={w['entry']}")
        lines.extend(f"  {n}" for n in self.notes)
        return "\n".join(lines)


def relative_error(ad: np.ndarray, fd: np.ndarray, tol: float) -> np.ndarray:
    """|ad - fd| scaled so that <= tol means within max(tol*|ad|, 1e-6)."""
    return np.abs(ad - fd) / np.maximum(np.abs(ad), ABS_FLOOR / tol)


def check_derivatives(
    warp,
    *,
    samples: int = 1000,
    tol: float = 1e-4,
    seed: int = 0,
    name: str = "warp",
    sampler: Callable[[int, np.random.Generator], Env] | None = None,
    step: Callable[[np.ndarray], np.ndarray] = default_step,
) -> CheckReport:
    """Compare the AD Jacobian against central differences at random samples."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    env = (sampler or sample_envs)(samples, rng)
    h = step(env.position)

    _, J_ad, bad_ad = ad_jacobian(warp, env, errors="mask")
    J_fd, bad_fd = finite_diff_jacobian(warp.graph, warp.offset, env, h, errors="mask")
    domain = bad_ad | bad_fd
    excluded = near_non_smooth(warp.graph, warp.offset, env, h) & ~domain
    finite = np.all(np.isfinite(J_ad), axis=(-2, -1)) & np.all(np.isfinite(J_fd), axis=(-2, -1))
    domain |= ~finite & ~excluded
    keep = ~(domain | excluded)

    abs_err = np.abs(J_ad - J_fd)
    rel_err = relative_error(J_ad, J_fd, tol)
    max_abs = float(abs_err[keep].max()) if keep.any() else 0.0
    max_rel = float(rel_err[keep].max()) if keep.any() else 0.0

    worst = None
    if keep.any():
        masked = np.where(keep[:, None, None], rel_err, -1.0)
        k, r, c = np.unravel_index(int(np.argmax(masked)), masked.shape)
        worst = {
            "index": int(k),
            "position": [float(x) for x in env.position[k]],
            "millis": float(np.broadcast_to(env.millis, env.batch_shape)[k]),
            "entry": [int(r), int(c)],
            "ad": float(J_ad[k, r, c]),
            "fd": float(J_fd[k, r, c]),
        }
    dets = np.array([collapse_diagnostic(J_ad[k]) for k in np.flatnonzero(keep)])
    degenerate = int(np.sum(np.abs(dets) < 1e-12)) if dets.size else 0

    notes = []
    if not keep.any():
        notes.append("no sample could be checked")
    return CheckReport(
        warp=name,
        samples=samples,
        tolerance=tol,
        max_abs_err=max_abs,
        max_rel_err=max_rel,
        worst_sample=worst,
        degenerate_samples=degenerate,
        excluded_samples=int(excluded.sum()),
        domain_error_samples=int(domain.sum()),
        passed=bool(max_rel <= tol),
        checked_samples=int(keep.sum()),
        notes=notes,
    )


def outputs_close(a: dict, b: dict, rel: float = 1e-12) -> bool:
    for key in b:
        x, y = np.asarray(a[key]), np.asarray(b[key])
        both_nan = np.isnan(x) & np.isnan(y)
        diff = np.abs(x - y)
        ok = both_nan | (x == y) | (diff <= rel * np.maximum(np.abs(x), np.abs(y)))
        if not np.all(ok):
            return False
    return True


def condensation_check(warp, *, depths=(1, 2, 4, 8, 16), samples: int = 100, seed: int = 0) -> dict[int, bool]:
    """eval_linear at each depth against eval_graph on random environments."""
    from .codegen import OUTPUT_NAMES, linearize

    env = sample_envs(samples, np.random.default_rng(seed))
    values, bad_g = eval_many(warp.graph, warp.roots, env, errors="mask")
    reference = dict(zip(OUTPUT_NAMES, values))
    result = {}
    for depth in depths:
        prog = linearize(warp.graph, warp.offset, warp.jacobian, depth)
        out, bad_l = eval_linear(prog, env, errors="mask")
        result[depth] = bool(np.array_equal(bad_g, bad_l)) and outputs_close(out, reference)
    return result
