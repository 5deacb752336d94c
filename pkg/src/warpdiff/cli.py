"""Command-line interface: ``warpdiff codegen|apply|check|show|bench``.

Exit codes: 0 success, 1 warp diagnostics (parse/type/domain errors or a
failed check), 2 I/O errors, 3 mesh errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import graph as g
from .autodiff import compile_warp
from .codegen import DEFAULT_CONDENSE_DEPTH, emit_glsl_snippet, emit_vertex_shader, linearize
from .dsl import WarpError
from .eval import DomainError, Env, check_derivatives, condensation_check
from .graph import GraphError
from .mesh import DEFAULT_EDGE_WARN, MeshError, load_obj, warp_mesh, write_obj

EXIT_OK = 0
EXIT_WARP = 1
EXIT_IO = 2
EXIT_MESH = 3

GOLDEN_DEPTH = 1


class UsageError(Exception):
    pass


# argument types -----------------------------------------------------------------

def _finite(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be finite: {text!r}")
    return x


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _vector(width: int):
    def parse(text: str) -> np.ndarray:
        parts = text.replace(" ", "").split(",")
        if len(parts) != width:
            raise argparse.ArgumentTypeError(f"expected {width} comma-separated numbers, got {text!r}")
        return np.array([_finite(p) for p in parts])

    return parse


# helpers ---------------------------------------------------------------------------

def _read_text(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _compile_file(path: Path):
    source = _read_text(path)
    try:
        return compile_warp(source)
    except WarpError as err:
        raise _Diagnostic(err.render(source, str(path))) from err


class _Diagnostic(Exception):
    pass


def _env_from(args) -> Env:
    return Env(millis=args.millis, mouse=args.mouse, resolution=args.resolution)


# commands -------------------------------------------------------------------------

def cmd_codegen(args) -> int:
    warp = _compile_file(Path(args.warp))
    program = linearize(warp.graph, warp.offset, warp.jacobian, args.condense_depth)
    snippet = emit_glsl_snippet(program)
    text = snippet if args.mode == "snippet" else emit_vertex_shader(snippet, args.space)
    _write_text(args.out, text)
    print(f"nodes: {len(warp.graph)} ({warp.program.node_count} before differentiation)", file=sys.stderr)
    print(f"statements: {len(program)}", file=sys.stderr)
    return EXIT_OK


def cmd_apply(args) -> int:
    warp = _compile_file(Path(args.warp))
    mesh = load_obj(args.mesh)
    model = None
    if args.model_matrix is not None:
        model = np.array(args.model_matrix, dtype=np.float64).reshape(4, 4)
    out, summary = warp_mesh(
        mesh, warp, _env_from(args), model_matrix=model, edge_warn_factor=args.warn_edge_length
    )
    write_obj(out, args.out)
    for line in summary.lines():
        print(line)
    return EXIT_OK


def _check_one(path: Path, args) -> tuple[dict, bool, list[str]]:
    warp = _compile_file(path)
    report = check_derivatives(warp, samples=args.samples, tol=args.tol, seed=args.seed, name=path.stem)
    depths = condensation_check(warp, samples=min(args.samples, 100), seed=args.seed)
    lines = [report.summary()]
    ok = report.passed
    cond_ok = all(depths.values())
    lines.append(
        "  condensation: "
        + ("ok" if cond_ok else "MISMATCH")
        + " at depths "
        + ", ".join(f"{d}{'' if v else '!'}" for d, v in depths.items())
    )
    ok &= cond_ok
    data = report.to_json()
    data["condensation"] = {str(d): v for d, v in depths.items()}

    expect = path.with_suffix(".expect")
    if expect.exists():
        prog = linearize(warp.graph, warp.offset, warp.jacobian, GOLDEN_DEPTH)
        golden_ok = emit_glsl_snippet(prog) == _read_text(expect)
        lines.append(f"  golden {expect.name}: {'ok' if golden_ok else 'MISMATCH'}")
        data["golden"] = golden_ok
        ok &= golden_ok
    data["pass"] = bool(ok)
    return data, ok, lines


def cmd_check(args) -> int:
    if args.corpus:
        root = Path(args.corpus)
        if not root.is_dir():
            raise OSError(f"{root}: not a directory")
        paths = sorted(root.glob("*.warp"))
        if not paths:
            raise OSError(f"{root}: no .warp files")
    else:
        paths = [Path(args.warp)]

    reports, failed = [], []
    for path in paths:
        try:
            data, ok, lines = _check_one(path, args)
        except _Diagnostic as err:
            print(str(err), file=sys.stderr)
            data, ok, lines = {"warp": path.stem, "pass": False, "error": str(err)}, False, []
        print("\n".join(lines) if lines else f"FAIL {path.stem}: does not compile")
        reports.append(data)
        if not ok:
            failed.append(path.stem)

    if args.json:
        payload = reports[0] if len(reports) == 1 and not args.corpus else reports
        _write_text(args.json, json.dumps(payload, indent=2) + "\n")
    if failed:
        print(f"failing warps: {', '.join(failed)}")
        return EXIT_WARP
    print(f"all {len(reports)} warp(s) pass")
    return EXIT_OK


def cmd_show(args) -> int:
    warp = _compile_file(Path(args.warp))
    if args.dot:
        sys.stdout.write(g.to_dot(warp.graph, warp.roots))
    else:
        program = linearize(warp.graph, warp.offset, warp.jacobian, args.linear)
        sys.stdout.write(emit_glsl_snippet(program))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_bench

    result = run_bench(args.vertices, args.nodes, repeat=args.repeat, seed=args.seed)
    for line in result.lines():
        print(line)
    return EXIT_OK


# parser ---------------------------------------------------------------------------

def _add_uniforms(p: argparse.ArgumentParser) -> None:
    p.add_argument("--millis", type=_finite, default=0.0, help="time uniform in milliseconds")
    p.add_argument("--mouse", type=_vector(2), default=np.zeros(2), metavar="X,Y", help="mouse position in pixels")
    p.add_argument(
        "--resolution", type=_vector(2), default=np.array([1200.0, 1200.0]), metavar="W,H",
        help="canvas size in pixels",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warpdiff", description="Differentiable vertex warps.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codegen", help="emit GLSL for a warp")
    p.add_argument("--warp", required=True, metavar="FILE.warp")
    p.add_argument("--out", default="-", metavar="FILE", help="output path, '-' for stdout")
    p.add_argument("--mode", choices=("snippet", "shader"), default="snippet")
    p.add_argument("--space", choices=("model", "world"), default="model")
    p.add_argument("--condense-depth", type=_positive_int, default=DEFAULT_CONDENSE_DEPTH, metavar="N")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("apply", help="warp an OBJ mesh on the CPU")
    p.add_argument("--warp", required=True, metavar="FILE.warp")
    p.add_argument("--mesh", required=True, metavar="IN.obj")
    p.add_argument("--out", required=True, metavar="OUT.obj")
    _add_uniforms(p)
    p.add_argument(
        "--model-matrix", type=_finite, nargs=16, metavar="M",
        help="row-major 4x4 model matrix; warp in world space",
    )
    p.add_argument(
        "--warn-edge-length", type=_finite, default=DEFAULT_EDGE_WARN, metavar="K",
        help="warn when an edge grows more than K times (default %(default)s)",
    )
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("check", help="compare AD derivatives with finite differences")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--warp", metavar="FILE.warp")
    src.add_argument("--corpus", metavar="DIR", help="check every *.warp in DIR (and *.expect goldens)")
    p.add_argument("--samples", type=_positive_int, default=1000)
    p.add_argument("--tol", type=_finite, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", metavar="PATH", help="write a JSON report, '-' for stdout")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("show", help="print the graph or the linear program")
    p.add_argument("--warp", required=True, metavar="FILE.warp")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--dot", action="store_true", help="Graphviz DOT dump of the differentiated graph")
    what.add_argument("--linear", type=_positive_int, metavar="N", help="linear program at condense depth N")
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("bench", help="time codegen and CPU warping on synthetic inputs")
    p.add_argument("--vertices", type=_positive_int, default=14000)
    p.add_argument("--nodes", type=_positive_int, default=150)
    p.add_argument("--repeat", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _Diagnostic as err:
        print(str(err), file=sys.stderr)
        return EXIT_WARP
    except (DomainError, GraphError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_WARP
    except MeshError as err:
        print(f"mesh error: {err}", file=sys.stderr)
        return EXIT_MESH
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
