"""Apply warps to indexed triangle meshes with baked per-vertex normals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .eval import Env, ad_jacobian

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6
INGEST_UNIT_TOL = 1e-4
DEFAULT_EDGE_WARN = 3.0


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    positions: np.ndarray
    normals: np.ndarray
    faces: np.ndarray
    # OBJ texture data carried through untouched
    texcoords: np.ndarray | None = None
    face_texcoords: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        if self.positions.shape != self.normals.shape:
            raise MeshError(f"{len(self.positions)} positions but {len(self.normals)} normals")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise MeshError("face index out of range")
        if not np.all(np.isfinite(self.positions)) or not np.all(np.isfinite(self.normals)):
            raise MeshError("non-finite vertex data")
        lengths = np.linalg.norm(self.normals, axis=1)
        if np.any(lengths == 0.0):
            raise MeshError(f"zero normal at vertex {int(np.flatnonzero(lengths == 0.0)[0])}")

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) index array."""
        if not self.faces.size:
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def copy(self) -> "Mesh":
        return Mesh(
            self.positions.copy(),
            self.normals.copy(),
            self.faces.copy(),
            None if self.texcoords is None else self.texcoords.copy(),
            None if self.face_texcoords is None else self.face_texcoords.copy(),
        )


@dataclass(frozen=True)
class TangentFrame:
    u: np.ndarray
    v: np.ndarray


def _check_unit(n: np.ndarray) -> None:
    if abs(float(np.linalg.norm(n)) - 1.0) > UNIT_TOL:
        raise MeshError(f"normal {n.tolist()} is not unit length")


def tangent_frame(n) -> TangentFrame:
    """Tangent u and bitangent v with u x v = n.

    The helper axis is +y when n is (within 1e-6) along +-x, else +x; then
    v = normalize(w x n) and u = v x n.
    """
    n = np.asarray(n, dtype=np.float64)
    _check_unit(n)
    u, v = _kernels.tangent_frames_numpy(n[None, :])
    return TangentFrame(u[0], v[0])


def warp_vertex(p, n, f, J) -> tuple[np.ndarray, np.ndarray]:
    """Displace one vertex and return (p', n'); degenerate normals are zero."""
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    J = np.asarray(J, dtype=np.float64)
    _check_unit(n)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(J))):
        raise MeshError("offset or Jacobian is not finite")
    out, _ = _kernels.update_normals_numpy(n[None, :], J[None, :, :])
    return p + np.asarray(f, dtype=np.float64), out[0]


@dataclass
class WarpSummary:
    vertices: int
    degenerate_normals: int
    max_edge_growth: float
    long_edges: int = 0
    edge_warn_factor: float = DEFAULT_EDGE_WARN
    degenerate_mask: np.ndarray | None = field(default=None, repr=False)

    def lines(self) -> list[str]:
        out = [
            f"vertices: {self.vertices}",
            f"degenerate normals: {self.degenerate_normals}",
            f"max edge growth: {self.max_edge_growth:.6g}",
        ]
        if self.long_edges:
            out.append(
                f"warning: {self.long_edges} edge(s) grew more than {self.edge_warn_factor:g}x; "
                "the mesh may be too coarse for this warp"
            )
        return out


def _split_model_matrix(model_matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    M = np.asarray(model_matrix, dtype=np.float64).reshape(4, 4)
    L = M[:3, :3]
    t = M[:3, 3]
    if abs(np.linalg.det(L)) < 1e-12:
        raise MeshError("model matrix is not invertible")
    return L, t, np.linalg.inv(L)


def warp_mesh(
    mesh: Mesh,
    warp,
    env: Env | None = None,
    *,
    model_matrix=None,
    edge_warn_factor: float = DEFAULT_EDGE_WARN,
    backend: str | None = None,
) -> tuple[Mesh, WarpSummary]:
    """Warp every vertex of ``mesh``; faces are never modified.

    ``env`` supplies millis/mouse/resolution; positions and normals come from
    the mesh. With ``model_matrix`` (4x4, row-major, column vectors) the warp
    runs on world-space positions and normals and the result stays in world
    space.
    """
    mesh.validate()
    env = env or Env()
    positions = mesh.positions
    normals = mesh.normals
    if model_matrix is not None:
        L, t, L_inv = _split_model_matrix(model_matrix)
        positions = positions @ L.T + t
        normals = normals @ L_inv
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)

    batch = Env(
        position=positions,
        millis=env.millis,
        mouse=env.mouse,
        resolution=env.resolution,
        normal=normals,
    )
    f, J = ad_jacobian(warp, batch)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(J))):
        bad = np.flatnonzero(~(np.isfinite(f).all(axis=1) & np.isfinite(J).all(axis=(1, 2))))
        raise MeshError(f"warp is not finite at {len(bad)} vertices (first: {int(bad[0])})")

    tangent, update, growth = _kernels.kernels(backend)
    new_positions = positions + f
    new_normals, degenerate = update(
        np.ascontiguousarray(normals), np.ascontiguousarray(J)
    )

    edges = mesh.edges()
    ratios = growth(np.ascontiguousarray(positions), np.ascontiguousarray(new_positions), edges)
    max_growth = float(ratios.max()) if len(ratios) else 1.0
    long_edges = int(np.sum(ratios > edge_warn_factor))
    if long_edges:
        log.warning("%d edges grew more than %gx", long_edges, edge_warn_factor)

    out = Mesh(
        new_positions,
        new_normals,
        mesh.faces.copy(),
        mesh.texcoords,
        mesh.face_texcoords,
    )
    summary = WarpSummary(
        vertices=len(mesh),
        degenerate_normals=int(degenerate.sum()),
        max_edge_growth=max_growth,
        long_edges=long_edges,
        edge_warn_factor=edge_warn_factor,
        degenerate_mask=degenerate,
    )
    return out, summary


# OBJ ------------------------------------------------------------------------------

def _parse_floats(parts, want, lineno, record):
    if len(parts) < want:
        raise MeshError(f"line {lineno}: '{record}' needs {want} numbers")
    try:
        return [float(x) for x in parts[:want]]
    except ValueError:
        raise MeshError(f"line {lineno}: malformed number in '{record}' record") from None


def _resolve(index: str, count: int, lineno: int, what: str) -> int:
    try:
        k = int(index)
    except ValueError:
        raise MeshError(f"line {lineno}: malformed {what} index {index!r}") from None
    if k == 0:
        raise MeshError(f"line {lineno}: {what} index 0 is invalid")
    k = k - 1 if k > 0 else count + k
    if not 0 <= k < count:
        raise MeshError(f"line {lineno}: {what} index {index} out of range")
    return k


def load_obj(path) -> Mesh:
    """Read ``v``/``vn``/``vt``/``f`` records; polygons are fan-triangulated.

    Every distinct (position, normal) pair becomes one mesh vertex.
    """
    path = Path(path)
    vs, vns, vts = [], [], []
    corners = []  # per polygon: list of (v, vt or -1, vn, lineno)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag, rest = parts[0], parts[1:]
            if tag == "v":
                vs.append(_parse_floats(rest, 3, lineno, "v"))
            elif tag == "vn":
                vns.append(_parse_floats(rest, 3, lineno, "vn"))
            elif tag == "vt":
                if not rest:
                    raise MeshError(f"line {lineno}: 'vt' needs at least 1 number")
                vts.append(_parse_floats(rest, len(rest), lineno, "vt"))
            elif tag == "f":
                if len(rest) < 3:
                    raise MeshError(f"line {lineno}: face needs at least 3 vertices")
                poly = []
                for item in rest:
                    fields = item.split("/")
                    if len(fields) != 3 or not fields[2]:
                        if not vns:
                            raise MeshError(
                                f"line {lineno}: mesh has no baked normals (face vertex {item!r} "
                                "has no normal index); per-vertex normals are required"
                            )
                        raise MeshError(f"line {lineno}: face vertex {item!r} has no normal index")
                    vi = _resolve(fields[0], len(vs), lineno, "vertex")
                    ti = _resolve(fields[1], len(vts), lineno, "texcoord") if fields[1] else -1
                    ni = _resolve(fields[2], len(vns), lineno, "normal")
                    poly.append((vi, ti, ni, lineno))
                corners.append(poly)
    if not vns:
        raise MeshError(f"{path}: mesh has no baked normals (no 'vn' records)")

    # vertices ordered by (v, vn) index so files written by write_obj reload unchanged
    first_line = {}
    for poly in corners:
        for vi, _, ni, lineno in poly:
            first_line.setdefault((vi, ni), lineno)
    vertex_of = {key: k for k, key in enumerate(sorted(first_line))}
    positions, normals = [], []
    for (vi, ni), k in vertex_of.items():
        n = np.asarray(vns[ni], dtype=np.float64)
        length = float(np.linalg.norm(n))
        if length == 0.0:
            raise MeshError(f"line {first_line[(vi, ni)]}: zero normal")
        if abs(length - 1.0) > INGEST_UNIT_TOL:
            log.debug("line %d: renormalizing normal of length %g", first_line[(vi, ni)], length)
        positions.append(vs[vi])
        normals.append(n / length)

    faces, face_tex = [], []
    any_tex = False
    for poly in corners:
        ids = [(vertex_of[(vi, ni)], ti) for vi, ti, ni, _ in poly]
        any_tex = any_tex or any(ti >= 0 for _, ti in ids)
        for k in range(1, len(ids) - 1):
            tri = (ids[0], ids[k], ids[k + 1])
            faces.append([c[0] for c in tri])
            face_tex.append([c[1] for c in tri])

    texcoords = None
    face_texcoords = None
    if any_tex:
        width = max(len(t) for t in vts)
        texcoords = np.array([t + [0.0] * (width - len(t)) for t in vts], dtype=np.float64)
        face_texcoords = np.asarray(face_tex, dtype=np.int64)
    mesh = Mesh(np.asarray(positions), np.asarray(normals), np.asarray(faces, dtype=np.int64),
                texcoords, face_texcoords)
    mesh.validate()
    return mesh


def _fmt(x: float) -> str:
    return f"{x + 0.0:.9g}"


def write_obj(mesh: Mesh, path) -> None:
    """Write positions and normals one-to-one; floats at 9 significant digits."""
    path = Path(path)
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.positions]
    if mesh.texcoords is not None:
        lines += ["vt " + " ".join(_fmt(c) for c in t) for t in mesh.texcoords]
    lines += [f"vn {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.normals]
    tex = mesh.face_texcoords
    for k, (a, b, c) in enumerate(mesh.faces + 1):
        if tex is not None and np.all(tex[k] >= 0):
            ta, tb, tc = tex[k] + 1
            lines.append(f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}")
        else:
            lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# synthetic meshes -------------------------------------------------------------------

def cube_mesh(size: float = 1.0) -> Mesh:
    """Axis-aligned cube centred at the origin with flat per-face normals (24 vertices)."""
    h = size / 2.0
    positions, normals, faces = [], [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            a, b = [k for k in range(3) if k != axis]
            base = len(positions)
            quad = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
            for sa, sb in quad:
                p = np.zeros(3)
                p[axis] = sign * h
                p[a] = sa * h
                p[b] = sb * h
                positions.append(p)
                normals.append(n)
            # wind counter-clockwise seen from outside
            tri = [(0, 1, 2), (0, 2, 3)]
            e1 = positions[base + 1] - positions[base]
            e2 = positions[base + 2] - positions[base]
            if np.dot(np.cross(e1, e2), n) < 0:
                tri = [(0, 2, 1), (0, 3, 2)]
            faces += [[base + i, base + j, base + k] for i, j, k in tri]
    return Mesh(np.array(positions), np.array(normals), np.array(faces))


def uv_sphere(rings: int = 21, segments: int = 24, radius: float = 1.0) -> Mesh:
    """UV sphere with single pole vertices: 2 + (rings - 1) * segments vertices."""
    if rings < 2 or segments < 3:
        raise MeshError("uv_sphere needs rings >= 2 and segments >= 3")
    normals = [np.array([0.0, 1.0, 0.0])]
    for r in range(1, rings):
        theta = math.pi * r / rings
        for s in range(segments):
            phi = 2.0 * math.pi * s / segments
            normals.append(np.array([
                math.sin(theta) * math.cos(phi),
                math.cos(theta),
                math.sin(theta) * math.sin(phi),
            ]))
    normals.append(np.array([0.0, -1.0, 0.0]))
    normals = np.array(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    last = len(normals) - 1

    def ring(r, s):
        return 1 + (r - 1) * segments + (s % segments)

    faces = []
    for s in range(segments):
        faces.append([0, ring(1, s + 1), ring(1, s)])
        faces.append([last, ring(rings - 1, s), ring(rings - 1, s + 1)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    return Mesh(normals * radius, normals, np.array(faces))


def sphere_with_vertices(target: int, radius: float = 1.0) -> Mesh:
    """UV sphere with roughly ``target`` vertices (at least 8)."""
    target = max(int(target), 1)
    segments = max(3, int(round(math.sqrt(2.0 * max(target - 2, 1)))))
    rings = max(2, int(round((target - 2) / segments)) + 1)
    return uv_sphere(rings, segments, radius)
