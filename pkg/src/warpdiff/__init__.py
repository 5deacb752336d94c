"""warpdiff: differentiable vertex warps with exact normal updates.

Write a displacement ``f(position)`` in a small GLSL-like language, get its
Jacobian by forward-mode differentiation, and emit vertex-shader code (or
warp meshes on the CPU) that moves vertices and recomputes their normals.
"""

from pathlib import Path

from .autodiff import CompiledWarp, JacobianExpr, compile_warp, differentiate, jacobian
from .codegen import emit_glsl_snippet, emit_vertex_shader, generate, linearize
from .dsl import WarpError, compile_source, parse, tokenize
from .eval import (
    DomainError,
    Env,
    ad_jacobian,
    check_derivatives,
    collapse_diagnostic,
    eval_graph,
    eval_linear,
    finite_diff_jacobian,
)
from .graph import ExprGraph, GraphError, ValueType
from .mesh import Mesh, MeshError, TangentFrame, load_obj, tangent_frame, warp_mesh, warp_vertex, write_obj

__version__ = "0.1.0"


def corpus_dir() -> Path:
    """Directory of the shipped example warps."""
    return Path(__file__).parent / "corpus"


__all__ = [
    "CompiledWarp",
    "DomainError",
    "Env",
    "ExprGraph",
    "GraphError",
    "JacobianExpr",
    "Mesh",
    "MeshError",
    "TangentFrame",
    "ValueType",
    "WarpError",
    "ad_jacobian",
    "check_derivatives",
    "collapse_diagnostic",
    "compile_source",
    "compile_warp",
    "corpus_dir",
    "differentiate",
    "emit_glsl_snippet",
    "emit_vertex_shader",
    "eval_graph",
    "eval_linear",
    "finite_diff_jacobian",
    "generate",
    "jacobian",
    "linearize",
    "load_obj",
    "parse",
    "tangent_frame",
    "tokenize",
    "warp_mesh",
    "warp_vertex",
    "write_obj",
]
