"""Upwind two-point finite volume operator for a frozen coefficient field.

The linear system ``A U = F`` assembled here has a one-dimensional kernel
spanned by a positive vector and ``ker(A^T) = span(1)``.  :func:`linear_scheme_solve`
picks the unique solution with null lower median.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConsistencyError, LinearSolveError
from .fields import CellField, lower_median, rsum
from .mesh import AdmissibleMesh, Edge

DIRECT_LIMIT = 20_000
COMPAT_RTOL = 1e-8
_PROBE = np.concatenate([np.linspace(-1e3, 1e3, 2001), np.linspace(-10.0, 10.0, 2001)])


def zero_velocity(x, y):
    z = np.zeros_like(np.asarray(x, dtype=float))
    return z, z


def zero_source(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemData:
    """Coefficients of ``-div(lambda(u) grad u - v u) = f``.

    ``lambda_law``, ``velocity`` and ``source`` must accept numpy arrays;
    ``velocity(x, y)`` returns the pair ``(vx, vy)``.
    """

    lambda_law: Callable
    mu: float
    lambda_inf: float
    velocity: Callable = zero_velocity
    source: Callable = zero_source
    p: float = 4.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lambda_inf >= self.mu:
            raise ValueError("lambda_inf must be >= mu")
        if not 2 < self.p < np.inf:
            raise ValueError(f"velocity exponent must satisfy 2 < p < inf in 2-D, got {self.p}")
        lam = np.asarray(self.lambda_law(_PROBE), dtype=float)
        slack = 1e-12 * self.lambda_inf
        if np.any(lam < self.mu - slack) or np.any(lam > self.lambda_inf + slack):
            raise ValueError(
                f"lambda leaves [{self.mu}, {self.lambda_inf}] on the probe grid "
                f"(range [{lam.min()}, {lam.max()}])")

    @property
    def frozen_coefficients(self) -> bool:
        """True when lambda is constant, so the linearised map ignores its argument."""
        return self.mu == self.lambda_inf

    def lam(self, r):
        return np.asarray(self.lambda_law(np.asarray(r, dtype=float)), dtype=float) * \
            np.ones_like(np.asarray(r, dtype=float))


def constant_lambda(c: float) -> tuple:
    return (lambda r: np.full_like(np.asarray(r, dtype=float), float(c))), c, c


def rational_lambda(a: float) -> tuple:
    """``lambda(r) = a + 1 / (1 + r^2)`` with bounds ``(a, a + 1)``."""
    return (lambda r: a + 1.0 / (1.0 + np.asarray(r, dtype=float) ** 2)), a, a + 1.0


@dataclass(frozen=True)
class EdgeCoefficients:
    """Per-edge scheme coefficients; boundary entries are unused zeros."""

    lambda_sigma: np.ndarray
    v_k_sigma: np.ndarray
    transmissibility: np.ndarray
    convective: np.ndarray


# -- quadrature -------------------------------------------------------------

def _triangle_centroids(n: int) -> np.ndarray:
    """Barycentric centroids of the n^2 congruent sub-triangles of a triangle."""
    pts = []
    for i in range(n):
        for j in range(n - i):
            pts.append(((i + 1 / 3) / n, (j + 1 / 3) / n))
            if i + j <= n - 2:
                pts.append(((i + 2 / 3) / n, (j + 2 / 3) / n))
    s = np.array(pts)
    return np.column_stack([1.0 - s[:, 0] - s[:, 1], s[:, 0], s[:, 1]])


def cell_quadrature(mesh: AdmissibleMesh, quad_subdiv: int):
    """Composite midpoint rule on a ``q x q`` subgrid of every rectangular cell.

    Returns ``(x, y, w)`` of shape ``(n_cells, q*q)``.
    """
    if quad_subdiv < 1:
        raise ValueError("quad_subdiv must be a positive integer")
    q = int(quad_subdiv)
    cv = mesh.cell_vertices
    x0, x1 = cv[:, :, 0].min(axis=1), cv[:, :, 0].max(axis=1)
    y0, y1 = cv[:, :, 1].min(axis=1), cv[:, :, 1].max(axis=1)
    s = (np.arange(q) + 0.5) / q
    sx, sy = np.meshgrid(s, s)
    sx, sy = sx.ravel(), sy.ravel()
    x = x0[:, None] + (x1 - x0)[:, None] * sx[None, :]
    y = y0[:, None] + (y1 - y0)[:, None] * sy[None, :]
    w = np.broadcast_to((mesh.measures / (q * q))[:, None], x.shape)
    return x, y, w


def source_l1_norm(mesh: AdmissibleMesh, data: ProblemData, quad_subdiv: int = 4) -> float:
    x, y, w = cell_quadrature(mesh, quad_subdiv)
    return rsum(w * np.abs(data.source(x, y)))


def velocity_lp_norm(mesh: AdmissibleMesh, data: ProblemData, p: float,
                     quad_subdiv: int = 4) -> float:
    x, y, w = cell_quadrature(mesh, quad_subdiv)
    vx, vy = data.velocity(x, y)
    speed = np.hypot(vx * np.ones_like(x), vy * np.ones_like(x))
    return rsum(w * speed ** p) ** (1.0 / p)


def edge_velocity(mesh: AdmissibleMesh, data: ProblemData, quad_subdiv: int = 4) -> np.ndarray:
    """Diamond average of ``v . n_{K,sigma}`` on every interior edge (zero on the boundary).

    Each diamond is split into its two triangles, each refined into
    ``quad_subdiv**2`` sub-triangles evaluated at their centroids.
    """
    if quad_subdiv < 1:
        raise ValueError("quad_subdiv must be a positive integer")
    bary = _triangle_centroids(int(quad_subdiv))
    nsub = bary.shape[0]
    out = np.zeros(mesh.n_edges)
    e = mesh.interior
    if e.size == 0:
        return out
    a, b = mesh.edge_vertices[e, 0], mesh.edge_vertices[e, 1]
    normals = mesh.normals[e]
    total = np.zeros(e.size)
    for apex in (mesh.centers[mesh.edge_k[e]], mesh.centers[mesh.edge_l[e]]):
        area = 0.5 * np.abs((a[:, 0] - apex[:, 0]) * (b[:, 1] - apex[:, 1])
                            - (a[:, 1] - apex[:, 1]) * (b[:, 0] - apex[:, 0]))
        px = bary[None, :, 0] * apex[:, None, 0] + bary[None, :, 1] * a[:, None, 0] + \
            bary[None, :, 2] * b[:, None, 0]
        py = bary[None, :, 0] * apex[:, None, 1] + bary[None, :, 1] * a[:, None, 1] + \
            bary[None, :, 2] * b[:, None, 1]
        vx, vy = data.velocity(px, py)
        vn = (vx * normals[:, 0, None] + vy * normals[:, 1, None]) * np.ones_like(px)
        total += area * vn.sum(axis=1) / nsub
    out[e] = total / mesh.diamond_measures[e]
    return out


def cell_source(mesh: AdmissibleMesh, data: ProblemData, quad_subdiv: int = 4) -> np.ndarray:
    """Cell integrals of ``f`` followed by the compatibility projection."""
    x, y, w = cell_quadrature(mesh, quad_subdiv)
    F = np.sum(w * data.source(x, y), axis=1)
    total = rsum(F)
    l1 = rsum(np.abs(F))
    if abs(total) > COMPAT_RTOL * l1:
        warnings.warn(
            f"source violates compatibility: sum F = {total:.3e} (|F|_1 = {l1:.3e}); projecting",
            RuntimeWarning, stacklevel=2)
    return F - mesh.measures / mesh.domain_measure * total


# -- coefficients and assembly ----------------------------------------------

def lambda_edge(u: CellField, data: ProblemData) -> np.ndarray:
    """Arithmetic mean of ``lambda(u_K)`` and ``lambda(u_L)`` per edge.

    Boundary edges get ``lambda(u_K)``; the scheme never reads them.
    """
    m = u.mesh
    lam = data.lam(u.values)
    out = lam[m.edge_k].copy()
    e = m.interior
    lk, ll = lam[m.edge_k[e]], lam[m.edge_l[e]]
    out[e] = 0.5 * (lk + ll)
    lo, hi = np.minimum(lk, ll), np.maximum(lk, ll)
    if np.any(out[e] < lo) or np.any(out[e] > hi):
        raise ConsistencyError("edge diffusivity left the [min, max] bracket")
    return out


def edge_coefficients(mesh: AdmissibleMesh, lambda_sigma, v_k_sigma) -> EdgeCoefficients:
    lambda_sigma = np.asarray(lambda_sigma, dtype=float)
    v_k_sigma = np.asarray(v_k_sigma, dtype=float)
    trans = np.zeros(mesh.n_edges)
    conv = np.zeros(mesh.n_edges)
    e = mesh.interior
    trans[e] = mesh.lengths[e] * lambda_sigma[e] / mesh.d_sigma[e]
    conv[e] = mesh.lengths[e] * v_k_sigma[e]
    if np.any(trans[e] <= 0):
        raise ValueError("transmissibilities must be positive")
    return EdgeCoefficients(lambda_sigma, v_k_sigma, trans, conv)


def upwind_index(edge: Edge, v_k_sigma: float) -> int:
    """Cell carrying the upstream value: ``K`` when ``v_{K,sigma} >= 0``, else ``L``."""
    if edge.cellL is None:
        raise ValueError(f"edge {edge.id} is a boundary edge; no upwind value")
    return edge.cellK if v_k_sigma >= 0 else edge.cellL


def upwind_values(u_values, mesh: AdmissibleMesh, v_edges):
    """``(u_plus, u_minus)`` on the interior edges, in ``mesh.interior`` order."""
    e = mesh.interior
    uk, ul = u_values[mesh.edge_k[e]], u_values[mesh.edge_l[e]]
    up = v_edges[e] >= 0
    return np.where(up, uk, ul), np.where(up, ul, uk)


def assemble(mesh: AdmissibleMesh, coeffs: EdgeCoefficients) -> sp.csr_matrix:
    e = mesh.interior
    K, L = mesh.edge_k[e], mesh.edge_l[e]
    T = coeffs.transmissibility[e]
    c = coeffs.convective[e]
    cp, cm = np.maximum(c, 0.0), np.maximum(-c, 0.0)
    rows = np.concatenate([K, K, L, L])
    cols = np.concatenate([K, L, L, K])
    vals = np.concatenate([T + cp, -T - cm, T + cm, -T - cp])
    n = mesh.n_cells
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def matrix_dump(A: sp.spmatrix) -> str:
    """Coordinate text dump ``row col value`` with a trailing checksum line."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    buf = io.StringIO()
    for i in order:
        buf.write(f"{C.row[i]} {C.col[i]} {float(C.data[i])!r}\n")
    buf.write(f"checksum nnz {C.nnz} sum {rsum(C.data)!r} abs {rsum(np.abs(C.data))!r}\n")
    return buf.getvalue()


def read_matrix_dump(text: str) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    lines = text.strip().splitlines()
    for line in lines[:-1]:
        r, c, v = line.split()
        rows.append(int(r)), cols.append(int(c)), vals.append(float(v))
    tail = lines[-1].split()
    if tail[0] != "checksum" or int(tail[2]) != len(vals):
        raise ValueError("matrix dump checksum line missing or inconsistent")
    if abs(sum(vals) - float(tail[4])) > 1e-12 * max(1.0, float(tail[6])):
        raise ValueError("matrix dump checksum mismatch")
    n = max(rows + cols) + 1 if rows else 0
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# -- singular solves ----------------------------------------------------------

def _inf_norm(A) -> float:
    return float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0


class PinnedSystem:
    """``A`` with row ``pin`` replaced by the equation ``u_pin = value``.

    The kernel vector of ``A`` has no zero entry, so the pinned matrix is
    nonsingular for any pin.  One factorisation serves both the particular
    solution and the kernel vector.
    """

    def __init__(self, A, pin: int = 0, method: str = "auto"):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        if not 0 <= pin < n:
            raise ValueError(f"pin cell {pin} out of range")
        mask = np.ones(n)
        mask[pin] = 0.0
        self.A = A
        self.pin = pin
        self.B = (sp.diags(mask) @ A + sp.csr_matrix(([1.0], ([pin], [pin])), shape=(n, n))).tocsc()
        if method == "auto":
            method = "direct" if n <= DIRECT_LIMIT else "iterative"
        if method not in ("direct", "iterative"):
            raise ValueError(f"unknown linear solver method {method!r}")
        self.method = method
        self.iterations = 0
        if method == "direct":
            try:
                self._lu = spla.splu(self.B)
            except RuntimeError as exc:
                raise LinearSolveError(f"pinned system is singular: {exc}") from exc
        else:
            self._ilu = spla.spilu(self.B, drop_tol=1e-5, fill_factor=20)

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.method == "direct":
            x = self._lu.solve(rhs)
            self.iterations = 0
        else:
            n = len(rhs)
            M = spla.LinearOperator(self.B.shape, self._ilu.solve)
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.bicgstab(self.B, rhs, rtol=1e-12, atol=0.0, maxiter=10 * n,
                                    M=M, callback=cb)
            if info != 0:
                # bicgstab can break down (e.g. on the kernel right-hand side e_pin)
                x, info = spla.gmres(self.B, rhs, rtol=1e-12, atol=0.0, restart=200,
                                     maxiter=max(1, 10 * n // 200), M=M, callback=cb,
                                     callback_type="pr_norm")
            self.iterations = count[0]
            if info != 0:
                raise LinearSolveError(f"Krylov solver did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("pinned solve produced non-finite values")
        return x


def kernel_vector(A, pin: int = 0, system: Optional[PinnedSystem] = None) -> np.ndarray:
    """Positive generator ``V`` of ``ker(A)`` normalised by ``V[pin] = 1``."""
    system = system or PinnedSystem(A, pin)
    A = system.A
    e = np.zeros(A.shape[0])
    e[system.pin] = 1.0
    V = system.solve(e)
    V[system.pin] = 1.0  # the pinned row is exact; drop elimination round-off
    res = np.max(np.abs(A @ V)) if len(V) else 0.0
    if res > 1e-10 * max(_inf_norm(A), 1e-300) * np.max(np.abs(V)):
        raise ConsistencyError(f"kernel residual too large: {res:.3e}")
    if np.any(V <= 0):
        raise ConsistencyError("kernel vector is not strictly positive; assembly is inconsistent")
    return V


def solve_pinned(A, F, pin: int = 0, system: Optional[PinnedSystem] = None) -> np.ndarray:
    """Particular solution of ``A U = F`` with ``U[pin] = 0``."""
    system = system or PinnedSystem(A, pin)
    A = system.A
    F = np.asarray(F, dtype=float)
    rhs = F.copy()
    rhs[system.pin] = 0.0
    U = system.solve(rhs)
    U[system.pin] = 0.0
    res = np.max(np.abs(A @ U - F)) if len(U) else 0.0
    scale = _inf_norm(A) * np.max(np.abs(U), initial=0.0) + np.max(np.abs(F), initial=0.0)
    if res > 1e-9 * scale + 1e-300:
        raise ConsistencyError(
            f"A U = F not satisfied (residual {res:.3e}, scale {scale:.3e}); is sum F = 0?")
    return U


def median_shift(u_bar: CellField, V) -> float:
    """The ``t`` with ``lower_median(u_bar + t V) = 0``.

    ``u_bar + t V`` vanishes at cell ``K`` for ``t = -u_bar_K / V_K``; the root
    is the smallest such candidate whose cumulative cell measure exceeds half
    the domain.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise ValueError("kernel vector must be strictly positive")
    m = u_bar.mesh
    cand = -u_bar.values / V
    order = np.argsort(cand, kind="stable")
    cum = np.cumsum(m.measures[order])
    half = 0.5 * m.domain_measure
    hit = np.flatnonzero(cum > half * (1 + 64 * np.finfo(float).eps))
    if hit.size == 0:
        raise ConsistencyError("no candidate shift reaches a null lower median")
    return float(cand[order[hit[0]]])


def median_normalize(u_bar: CellField, V) -> CellField:
    V = np.asarray(V, dtype=float)
    t = median_shift(u_bar, V)
    # V_K (t - c_K) instead of u_K + t V_K: the sign of each entry is then exact
    vals = V * (t - (-u_bar.values / V))
    u = u_bar.with_values(vals)
    if lower_median(u) != 0.0:
        raise ConsistencyError(f"median normalisation failed (lower median {lower_median(u)!r})")
    return u


@dataclass
class LinearSolution:
    u: CellField
    kernel: np.ndarray
    matrix: sp.csr_matrix
    linear_iters: int


def gamma(mesh: AdmissibleMesh, data: ProblemData, u_tilde: CellField, F, v_edges,
          pin: int = 0, method: str = "auto") -> LinearSolution:
    """Solve the scheme linearised at ``u_tilde``; normalise to null lower median."""
    coeffs = edge_coefficients(mesh, lambda_edge(u_tilde, data), v_edges)
    A = assemble(mesh, coeffs)
    system = PinnedSystem(A, pin, method)
    u_bar = solve_pinned(A, F, system=system)
    iters = system.iterations
    V = kernel_vector(A, system=system)
    iters += system.iterations
    u = median_normalize(CellField(mesh, u_bar), V)
    return LinearSolution(u, V, A, iters)


def linear_scheme_solve(mesh: AdmissibleMesh, data: ProblemData, u_tilde: CellField, F,
                        v_edges=None, pin: int = 0, quad_subdiv: int = 4) -> CellField:
    if v_edges is None:
        v_edges = edge_velocity(mesh, data, quad_subdiv)
    return gamma(mesh, data, u_tilde, F, v_edges, pin).u
