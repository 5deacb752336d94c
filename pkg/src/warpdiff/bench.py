"""Synthetic workloads: stacked-sine warps and CPU throughput timing."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import compile_warp
from .codegen import emit_glsl_snippet, linearize
from .dsl import compile_source
from .eval import Env
from .mesh import sphere_with_vertices, warp_mesh

_AXES = ("x", "y", "z")


def _term(rng: np.random.Generator) -> str:
    amp = rng.uniform(0.02, 0.1)
    freq = rng.uniform(0.5, 3.0)
    phase = rng.uniform(0.0, 6.0)
    speed = rng.uniform(0.0005, 0.003)
    axis = _AXES[rng.integers(3)]
    return (
        f"{amp:.4f} * sin(position.{axis} * {freq:.4f} + millis * {speed:.5f} + {phase:.4f})"
    )


def _source(terms: list[list[str]]) -> str:
    comps = [" + ".join(ts) if ts else "0.0" for ts in terms]
    return f"vec3({comps[0]}, {comps[1]}, {comps[2]})"


def _stacked(count: int, seed: int) -> str:
    rng = np.random.default_rng(seed)
    terms: list[list[str]] = [[], [], []]
    for k in range(count):
        terms[k % 3].append(_term(rng))
    return _source(terms)


def stacked_sine_source(target_nodes: int, seed: int = 0) -> str:
    """DSL source of a sum of random sine waves with about ``target_nodes`` graph nodes.

    Terms go round-robin to the three offset components; the term count is
    the one whose lowered graph lands closest to the target (at least one).
    """
    def size(k):
        return compile_source(_stacked(k, seed)).node_count

    lo, hi = 1, 1
    while size(hi) < target_nodes:
        lo, hi = hi, hi * 2
    while lo < hi:
        mid = (lo + hi) // 2
        if size(mid) < target_nodes:
            lo = mid + 1
        else:
            hi = mid
    best = lo
    if lo > 1 and target_nodes - size(lo - 1) < size(lo) - target_nodes:
        best = lo - 1
    return _stacked(best, seed)


@dataclass
class BenchResult:
    vertices: int
    nodes: int
    statements: int
    codegen_seconds: float
    warp_seconds: dict[str, float]

    def vertices_per_second(self, backend: str) -> float:
        t = self.warp_seconds[backend]
        return self.vertices / t if t > 0 else float("inf")

    def lines(self) -> list[str]:
        out = [
            f"mesh vertices: {self.vertices}",
            f"warp graph nodes: {self.nodes}",
            f"codegen: {self.codegen_seconds * 1e3:.2f} ms ({self.statements} statements)",
        ]
        for backend, t in self.warp_seconds.items():
            out.append(
                f"warp_mesh [{backend}]: {t * 1e3:.2f} ms, "
                f"{self.vertices_per_second(backend):,.0f} vertices/s"
            )
        return out


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(vertices: int, nodes: int, repeat: int = 3, seed: int = 0, backends=None) -> BenchResult:
    """Best-of-``repeat`` timings for codegen and for warp_mesh per kernel backend."""
    if vertices < 1 or nodes < 1 or repeat < 1:
        raise ValueError("vertices, nodes and repeat must be >= 1")
    source = stacked_sine_source(nodes, seed)
    mesh = sphere_with_vertices(vertices)
    env = Env(millis=1234.0)

    holder = {}

    def codegen():
        warp = compile_warp(source)
        prog = linearize(warp.graph, warp.offset, warp.jacobian)
        emit_glsl_snippet(prog)
        holder["warp"], holder["prog"] = warp, prog

    codegen_seconds = _best(codegen, repeat)
    warp = holder["warp"]
    if backends is None:
        backends = ["numba", "numpy"] if _kernels.HAVE_NUMBA else ["numpy"]
    timings = {}
    for backend in backends:
        warp_mesh(mesh, warp, env, backend=backend)  # warm-up, triggers JIT
        timings[backend] = _best(lambda: warp_mesh(mesh, warp, env, backend=backend), repeat)
    return BenchResult(
        vertices=len(mesh),
        nodes=warp.program.node_count,
        statements=len(holder["prog"]),
        codegen_seconds=codegen_seconds,
        warp_seconds=timings,
    )
