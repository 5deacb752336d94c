"""Per-vertex kernels: tangent frames, the normal update, edge growth.

Each kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
version with identical semantics. The public names bind to numba unless
``WARPDIFF_DISABLE_NUMBA`` is set to a non-empty value other than ``0`` or
numba cannot be imported.
"""

from __future__ import annotations

import os

import numpy as np

AXIS_TOL = 1e-6
DEGENERATE_TOL = 1e-12


def _numba_wanted() -> bool:
    flag = os.environ.get("WARPDIFF_DISABLE_NUMBA", "")
    return flag in ("", "0")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


# numpy ------------------------------------------------------------------------

def tangent_frames_numpy(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(normals, dtype=np.float64)
    along_x = (np.abs(n[:, 1]) < AXIS_TOL) & (np.abs(n[:, 2]) < AXIS_TOL)
    # w x n with w = (1,0,0) or (0,1,0), written out
    c = np.empty_like(n)
    c[:, 0] = np.where(along_x, n[:, 2], 0.0)
    c[:, 1] = np.where(along_x, 0.0, -n[:, 2])
    c[:, 2] = np.where(along_x, -n[:, 0], n[:, 1])
    v = c / np.sqrt(np.sum(c * c, axis=1))[:, None]
    u = np.cross(v, n)
    return u, v


def update_normals_numpy(normals: np.ndarray, jac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(normals, dtype=np.float64)
    J = np.asarray(jac, dtype=np.float64)
    u, v = tangent_frames_numpy(n)
    a = u + np.einsum("nij,nj->ni", J, u)
    b = v + np.einsum("nij,nj->ni", J, v)
    c = np.cross(a, b)
    norm = np.sqrt(np.sum(c * c, axis=1))
    degenerate = norm < DEGENERATE_TOL
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(degenerate[:, None], 0.0, c / norm[:, None])
    # J == 0 leaves the input normal untouched, bit for bit
    still = ~np.any(J != 0.0, axis=(1, 2))
    out[still] = n[still]
    degenerate &= ~still
    return out, degenerate


def edge_growth_numpy(before: np.ndarray, after: np.ndarray, edges: np.ndarray) -> np.ndarray:
    e0 = np.linalg.norm(before[edges[:, 0]] - before[edges[:, 1]], axis=1)
    e1 = np.linalg.norm(after[edges[:, 0]] - after[edges[:, 1]], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(e0 > 0.0, e1 / e0, np.where(e1 > 0.0, np.inf, 1.0))
    return ratio


# numba ------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _frame(nx, ny, nz):
        if abs(ny) < AXIS_TOL and abs(nz) < AXIS_TOL:
            cx, cy, cz = nz, 0.0, -nx
        else:
            cx, cy, cz = 0.0, -nz, ny
        s = np.sqrt(cx * cx + cy * cy + cz * cz)
        vx, vy, vz = cx / s, cy / s, cz / s
        ux = vy * nz - vz * ny
        uy = vz * nx - vx * nz
        uz = vx * ny - vy * nx
        return ux, uy, uz, vx, vy, vz

    @numba.njit(cache=True)
    def tangent_frames_numba(normals):
        m = normals.shape[0]
        u = np.empty((m, 3))
        v = np.empty((m, 3))
        for i in range(m):
            ux, uy, uz, vx, vy, vz = _frame(normals[i, 0], normals[i, 1], normals[i, 2])
            u[i, 0] = ux
            u[i, 1] = uy
            u[i, 2] = uz
            v[i, 0] = vx
            v[i, 1] = vy
            v[i, 2] = vz
        return u, v

    @numba.njit(cache=True)
    def update_normals_numba(normals, jac):
        m = normals.shape[0]
        out = np.empty((m, 3))
        degenerate = np.zeros(m, dtype=np.bool_)
        for i in range(m):
            J = jac[i]
            nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
            still = True
            for r in range(3):
                for c in range(3):
                    if J[r, c] != 0.0:
                        still = False
            if still:
                out[i, 0] = nx
                out[i, 1] = ny
                out[i, 2] = nz
                continue
            ux, uy, uz, vx, vy, vz = _frame(nx, ny, nz)
            ax = ux + (J[0, 0] * ux + J[0, 1] * uy + J[0, 2] * uz)
            ay = uy + (J[1, 0] * ux + J[1, 1] * uy + J[1, 2] * uz)
            az = uz + (J[2, 0] * ux + J[2, 1] * uy + J[2, 2] * uz)
            bx = vx + (J[0, 0] * vx + J[0, 1] * vy + J[0, 2] * vz)
            by = vy + (J[1, 0] * vx + J[1, 1] * vy + J[1, 2] * vz)
            bz = vz + (J[2, 0] * vx + J[2, 1] * vy + J[2, 2] * vz)
            cx = ay * bz - az * by
            cy = az * bx - ax * bz
            cz = ax * by - ay * bx
            s = np.sqrt(cx * cx + cy * cy + cz * cz)
            if s < DEGENERATE_TOL:
                out[i, 0] = 0.0
                out[i, 1] = 0.0
                out[i, 2] = 0.0
                degenerate[i] = True
            else:
                out[i, 0] = cx / s
                out[i, 1] = cy / s
                out[i, 2] = cz / s
        return out, degenerate

    @numba.njit(cache=True)
    def edge_growth_numba(before, after, edges):
        m = edges.shape[0]
        ratio = np.empty(m)
        for k in range(m):
            i, j = edges[k, 0], edges[k, 1]
            d0 = 0.0
            d1 = 0.0
            for c in range(3):
                d0 += (before[i, c] - before[j, c]) ** 2
                d1 += (after[i, c] - after[j, c]) ** 2
            d0 = np.sqrt(d0)
            d1 = np.sqrt(d1)
            if d0 > 0.0:
                ratio[k] = d1 / d0
            elif d1 > 0.0:
                ratio[k] = np.inf
            else:
                ratio[k] = 1.0
        return ratio

else:  # pragma: no cover
    tangent_frames_numba = tangent_frames_numpy
    update_normals_numba = update_normals_numpy
    edge_growth_numba = edge_growth_numpy


USING_NUMBA = HAVE_NUMBA and _numba_wanted()
BACKEND = "numba" if USING_NUMBA else "numpy"

_IMPLS = {
    "numba": (tangent_frames_numba, update_normals_numba, edge_growth_numba),
    "numpy": (tangent_frames_numpy, update_normals_numpy, edge_growth_numpy),
}


def kernels(backend: str | None = None):
    """(tangent_frames, update_normals, edge_growth) for ``backend``."""
    return _IMPLS[backend or BACKEND]


def _contig(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def tangent_frames(normals, backend: str | None = None):
    return kernels(backend)[0](_contig(normals))


def update_normals(normals, jac, backend: str | None = None):
    return kernels(backend)[1](_contig(normals), _contig(jac))


def edge_growth(before, after, edges, backend: str | None = None):
    return kernels(backend)[2](_contig(before), _contig(after), _contig(edges, np.int64))
