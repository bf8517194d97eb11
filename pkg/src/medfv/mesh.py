"""Admissible two-point meshes on rectangles.

Geometry is stored as flat numpy arrays so the scheme and the norms can be
evaluated edge-wise without Python loops.  :class:`Cell` and :class:`Edge`
are lightweight views for inspection and dumping.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

DIM = 2
GEOM_TOL = 1e-10


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class Cell:
    id: int
    center: Point
    measure: float
    edges: tuple


@dataclass(frozen=True)
class Edge:
    id: int
    kind: str
    cellK: int
    cellL: Optional[int]
    length: float
    normal: tuple
    dK: float
    dL: float
    dSigma: float
    diamondMeasure: float


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _point_segment_distance(p, a, b):
    """Distance from points ``p`` to segments ``[a, b]`` (all shape (M, 2))."""
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * ab
    return np.linalg.norm(p - foot, axis=1)


@dataclass(frozen=True, eq=False)
class AdmissibleMesh:
    """Cell-centred mesh with the per-edge geometry of a two-point scheme.

    Interior edges carry ``edge_l >= 0``; boundary edges have ``edge_l == -1``
    and ``d_l == 0``.  ``normals[e]`` points out of ``edge_k[e]``.
    """

    centers: np.ndarray
    measures: np.ndarray
    cell_vertices: np.ndarray
    edge_vertices: np.ndarray
    edge_k: np.ndarray
    edge_l: np.ndarray
    domain_measure: float
    nx: Optional[int] = None
    ny: Optional[int] = None
    lx: Optional[float] = None
    ly: Optional[float] = None
    # derived
    lengths: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    d_k: np.ndarray = field(init=False, repr=False)
    d_l: np.ndarray = field(init=False, repr=False)
    d_sigma: np.ndarray = field(init=False, repr=False)
    diamond_measures: np.ndarray = field(init=False, repr=False)
    interior: np.ndarray = field(init=False, repr=False)
    boundary: np.ndarray = field(init=False, repr=False)
    h: float = field(init=False)
    xi: float = field(init=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("centers", _frozen(self.centers))
        set_("measures", _frozen(self.measures))
        set_("cell_vertices", _frozen(self.cell_vertices))
        set_("edge_vertices", _frozen(self.edge_vertices))
        set_("edge_k", _frozen(self.edge_k, int))
        set_("edge_l", _frozen(self.edge_l, int))
        set_("domain_measure", float(self.domain_measure))

        a, b = self.edge_vertices[:, 0], self.edge_vertices[:, 1]
        tangent = b - a
        lengths = np.linalg.norm(tangent, axis=1)
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
        xk = self.centers[self.edge_k]
        mid = 0.5 * (a + b)
        flip = np.einsum("ij,ij->i", mid - xk, normals) < 0
        normals[flip] *= -1.0

        interior = self.edge_l >= 0
        # distance of a centre to the edge *line*
        d_k = np.abs(np.einsum("ij,ij->i", xk - a, normals))
        d_l = np.zeros_like(d_k)
        d_sigma = d_k.copy()
        li = self.edge_l[interior]
        xl = self.centers[li]
        d_l[interior] = np.abs(np.einsum("ij,ij->i", xl - a[interior], normals[interior]))
        d_sigma[interior] = np.linalg.norm(xl - xk[interior], axis=1)

        diam = 0.0
        nv = self.cell_vertices.shape[1]
        for i in range(nv):
            for j in range(i + 1, nv):
                diam = max(diam, float(np.max(np.linalg.norm(
                    self.cell_vertices[:, i] - self.cell_vertices[:, j], axis=1))))

        set_("lengths", _frozen(lengths))
        set_("normals", _frozen(normals))
        set_("d_k", _frozen(d_k))
        set_("d_l", _frozen(d_l))
        set_("d_sigma", _frozen(d_sigma))
        set_("diamond_measures", _frozen(d_sigma * lengths / DIM))
        set_("interior", _frozen(np.flatnonzero(interior), int))
        set_("boundary", _frozen(np.flatnonzero(~interior), int))
        set_("h", diam)
        set_("xi", compute_xi(self))

    @property
    def n_cells(self) -> int:
        return len(self.measures)

    @property
    def n_edges(self) -> int:
        return len(self.lengths)

    @property
    def is_rectangular(self) -> bool:
        """Built as a uniform grid and still carrying centroid cell centres."""
        if self.nx is None or self.n_cells != self.nx * self.ny:
            return False
        scale = max(self.lx, self.ly)
        return bool(np.all(np.abs(self.centers - self.cell_vertices.mean(axis=1))
                           <= GEOM_TOL * scale))

    def cell_edges(self, k: int) -> tuple:
        return tuple(int(e) for e in np.flatnonzero((self.edge_k == k) | (self.edge_l == k)))

    def cell(self, k: int) -> Cell:
        c = self.centers[k]
        return Cell(k, Point(float(c[0]), float(c[1])), float(self.measures[k]), self.cell_edges(k))

    def edge(self, e: int) -> Edge:
        l = int(self.edge_l[e])
        return Edge(
            id=e,
            kind="interior" if l >= 0 else "boundary",
            cellK=int(self.edge_k[e]),
            cellL=l if l >= 0 else None,
            length=float(self.lengths[e]),
            normal=(float(self.normals[e, 0]), float(self.normals[e, 1])),
            dK=float(self.d_k[e]),
            dL=float(self.d_l[e]),
            dSigma=float(self.d_sigma[e]),
            diamondMeasure=float(self.diamond_measures[e]),
        )

    @property
    def cells(self) -> list:
        return [self.cell(k) for k in range(self.n_cells)]

    @property
    def edges(self) -> list:
        return [self.edge(e) for e in range(self.n_edges)]

    def with_centers(self, centers) -> "AdmissibleMesh":
        """Copy of the mesh with moved cell centres (geometry recomputed)."""
        return replace(self, centers=np.asarray(centers, dtype=float))


def build_rect_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> AdmissibleMesh:
    """Uniform ``nx`` x ``ny`` grid of ``[0, lx] x [0, ly]``.

    Cell ``(i, j)`` has index ``j * nx + i``.  Edges are numbered x-faces
    first (row by row), then y-faces.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got {nx}, {ny}")
    if not (lx > 0 and ly > 0):
        raise ValueError(f"lx and ly must be positive, got {lx}, {ly}")
    nx, ny = int(nx), int(ny)
    dx, dy = lx / nx, ly / ny
    xs = np.arange(nx + 1) * dx
    ys = np.arange(ny + 1) * dy
    xs[-1], ys[-1] = lx, ly

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    x0, x1, y0, y1 = xs[ii], xs[ii + 1], ys[jj], ys[jj + 1]
    centers = np.column_stack([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
    measures = (x1 - x0) * (y1 - y0)
    cell_vertices = np.stack(
        [np.column_stack(p) for p in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))], axis=1)

    ev, ek, el = [], [], []
    # x-faces at x = xs[i]
    for j in range(ny):
        for i in range(nx + 1):
            ev.append(((xs[i], ys[j]), (xs[i], ys[j + 1])))
            if i == 0:
                ek.append(j * nx), el.append(-1)
            elif i == nx:
                ek.append(j * nx + nx - 1), el.append(-1)
            else:
                ek.append(j * nx + i - 1), el.append(j * nx + i)
    # y-faces at y = ys[j]
    for j in range(ny + 1):
        for i in range(nx):
            ev.append(((xs[i], ys[j]), (xs[i + 1], ys[j])))
            if j == 0:
                ek.append(i), el.append(-1)
            elif j == ny:
                ek.append((ny - 1) * nx + i), el.append(-1)
            else:
                ek.append((j - 1) * nx + i), el.append(j * nx + i)

    return AdmissibleMesh(
        centers=centers,
        measures=measures,
        cell_vertices=cell_vertices,
        edge_vertices=np.array(ev, dtype=float),
        edge_k=np.array(ek),
        edge_l=np.array(el),
        domain_measure=lx * ly,
        nx=nx, ny=ny, lx=float(lx), ly=float(ly),
    )


def compute_xi(mesh: AdmissibleMesh) -> float:
    """Largest ``xi`` with ``d(x_K, sigma) >= xi * d_sigma`` for every cell/edge pair."""
    a, b = mesh.edge_vertices[:, 0], mesh.edge_vertices[:, 1]
    dist_k = _point_segment_distance(mesh.centers[mesh.edge_k], a, b)
    ratios = [dist_k / mesh.d_sigma]
    inner = mesh.edge_l >= 0
    if np.any(inner):
        dist_l = _point_segment_distance(mesh.centers[mesh.edge_l[inner]], a[inner], b[inner])
        ratios.append(dist_l / mesh.d_sigma[inner])
    # ratios are geometric quotients; drop rounding noise far below GEOM_TOL
    return float(np.round(np.min(np.concatenate(ratios)), 12))


def _inside_convex(points, polys):
    """Strict inside test of points in counter-clockwise convex polygons."""
    nv = polys.shape[1]
    ok = np.ones(len(points), dtype=bool)
    for i in range(nv):
        p0, p1 = polys[:, i], polys[:, (i + 1) % nv]
        cross = (p1[:, 0] - p0[:, 0]) * (points[:, 1] - p0[:, 1]) - \
                (p1[:, 1] - p0[:, 1]) * (points[:, 0] - p0[:, 0])
        ok &= cross > GEOM_TOL
    return ok


def check_admissibility(mesh: AdmissibleMesh, tol: float = GEOM_TOL) -> list:
    """List every violated admissibility condition; empty means admissible."""
    report = []
    scale = max(mesh.h, 1.0)
    if np.any(mesh.measures <= 0):
        report.append(f"non-positive cell measure in cells {np.flatnonzero(mesh.measures <= 0).tolist()}")
    total = float(np.sum(mesh.measures))
    if abs(total - mesh.domain_measure) > tol * max(mesh.domain_measure, 1.0):
        report.append(f"sum of cell measures {total!r} != domain measure {mesh.domain_measure!r}")
    for k in np.flatnonzero(~_inside_convex(mesh.centers, mesh.cell_vertices)):
        report.append(f"cell {k}: center not strictly inside the cell")
    counts = np.bincount(mesh.edge_k, minlength=mesh.n_cells) + \
        np.bincount(mesh.edge_l[mesh.interior], minlength=mesh.n_cells)
    for k in np.flatnonzero(counts == 0):
        report.append(f"cell {k}: no edges")

    a, b = mesh.edge_vertices[:, 0], mesh.edge_vertices[:, 1]
    t = (b - a) / mesh.lengths[:, None]
    for e in mesh.interior:
        K, L = mesh.edge_k[e], mesh.edge_l[e]
        dvec = mesh.centers[L] - mesh.centers[K]
        if abs(float(dvec @ t[e])) > tol * scale:
            report.append(f"edge {e}: segment (x_{K}, x_{L}) not orthogonal to the edge")
        if abs(mesh.d_sigma[e] - mesh.d_k[e] - mesh.d_l[e]) > tol * scale:
            report.append(f"edge {e}: d_sigma != d_K + d_L")
        # the line (x_K, x_L) must cross the edge between its endpoints
        s0 = (a[e] - mesh.centers[K]) @ np.array([-dvec[1], dvec[0]])
        s1 = (b[e] - mesh.centers[K]) @ np.array([-dvec[1], dvec[0]])
        if s0 * s1 > 0:
            report.append(f"edge {e}: line (x_{K}, x_{L}) misses the edge")
    for e in mesh.boundary:
        K = mesh.edge_k[e]
        s = (mesh.centers[K] - a[e]) @ t[e]
        if s < -tol * scale or s > mesh.lengths[e] + tol * scale:
            report.append(f"edge {e}: orthogonal line through x_{K} misses the boundary edge")
    if np.any(mesh.d_sigma <= 0):
        report.append("non-positive d_sigma")
    if not np.allclose(mesh.diamond_measures, mesh.d_sigma * mesh.lengths / DIM, rtol=0, atol=tol):
        report.append("diamond measure != d_sigma * m(sigma) / d")
    diamonds = float(np.sum(mesh.lengths * mesh.d_sigma))
    if abs(diamonds - DIM * mesh.domain_measure) > tol * max(mesh.domain_measure, 1.0):
        report.append(f"sum of m(sigma) d_sigma over edges {diamonds!r} != d * m(Omega)")
    if not _connected(mesh):
        report.append("interior-edge adjacency graph is not connected")
    return report


def _connected(mesh: AdmissibleMesh) -> bool:

    k, l = mesh.edge_k[mesh.interior], mesh.edge_l[mesh.interior]
    g = coo_matrix((np.ones(len(k)), (k, l)), shape=(mesh.n_cells, mesh.n_cells))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp == 1


def refine(mesh: AdmissibleMesh) -> AdmissibleMesh:
    """Split every cell of a rectangular grid into 2 x 2 children."""
    if not mesh.is_rectangular:
        raise ValueError("refine only supports meshes built by build_rect_mesh")
    return build_rect_mesh(2 * mesh.nx, 2 * mesh.ny, mesh.lx, mesh.ly)


def mesh_hierarchy(nx: int, ny: int, levels: int, lx: float = 1.0, ly: float = 1.0) -> list:
    meshes = [build_rect_mesh(nx, ny, lx, ly)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    return meshes


def _num(x) -> str:
    return repr(float(x))


def dump_mesh(mesh: AdmissibleMesh) -> str:
    """Text dump: header, one ``C`` line per cell, one ``E`` line per edge."""
    lines = [f"cells {mesh.n_cells} edges {mesh.n_edges} h {_num(mesh.h)} XI {_num(mesh.xi)}"]
    for k in range(mesh.n_cells):
        x, y = mesh.centers[k]
        lines.append(f"C {k} {_num(x)} {_num(y)} {_num(mesh.measures[k])}")
    for e in range(mesh.n_edges):
        l = int(mesh.edge_l[e])
        kind = "interior" if l >= 0 else "boundary"
        nx_, ny_ = mesh.normals[e]
        lines.append(
            f"E {e} {kind} {int(mesh.edge_k[e])} {l} {_num(mesh.lengths[e])} {_num(nx_)} "
            f"{_num(ny_)} {_num(mesh.d_k[e])} {_num(mesh.d_l[e])}")
    return "\n".join(lines) + "\n"


def parse_mesh_dump(text: str) -> dict:
    """Parse :func:`dump_mesh` output back into plain python structures."""
    lines = text.strip().splitlines()
    head = lines[0].split()
    out = {"cells": [], "edges": [], "n_cells": int(head[1]), "n_edges": int(head[3]),
           "h": float(head[5]), "xi": float(head[7])}
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "C":
            out["cells"].append((int(parts[1]), *map(float, parts[2:5])))
        elif parts[0] == "E":
            out["edges"].append((int(parts[1]), parts[2], int(parts[3]), int(parts[4]),
                                 *map(float, parts[5:10])))
        else:
            raise ValueError(f"unrecognised mesh dump line: {line!r}")
    return out
