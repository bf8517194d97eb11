"""Picard iteration on the median-normalised linear solve."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PicardDivergence
from .fields import CellField, lp_norm, rsum
from .mesh import AdmissibleMesh
from .scheme import (ProblemData, cell_source, edge_velocity, gamma, median_normalize,
                     upwind_values)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PicardOptions:
    tol: float = 1e-8
    max_iter: int = 200
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class PicardReport:
    iterations: int = 0
    converged: bool = False
    update_history: list = field(default_factory=list)
    linear_iters: list = field(default_factory=list)
    final_residual: float = float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "update_norm", "linear_iters"])
        for k, (upd, it) in enumerate(zip(self.update_history, self.linear_iters), start=1):
            w.writerow([k, repr(float(upd)), it])
        return buf.getvalue()


def scheme_residual(mesh: AdmissibleMesh, data: ProblemData, u: CellField, F, v_edges) -> np.ndarray:
    """Per-cell residual of the nonlinear scheme with coefficients taken at ``u``.

    Evaluated edge by edge, independently of the assembled matrix.
    """
    e = mesh.interior
    K, L = mesh.edge_k[e], mesh.edge_l[e]
    lam = data.lam(u.values)
    lam_s = 0.5 * (lam[K] + lam[L])
    uk, ul = u.values[K], u.values[L]
    u_plus, _ = upwind_values(u.values, mesh, v_edges)
    flux = mesh.lengths[e] / mesh.d_sigma[e] * lam_s * (uk - ul) + \
        mesh.lengths[e] * v_edges[e] * u_plus
    r = -np.asarray(F, dtype=float).copy()
    np.add.at(r, K, flux)
    np.add.at(r, L, -flux)
    return r


def residual_scale(mesh: AdmissibleMesh, data: ProblemData, u: CellField, F, v_edges) -> float:
    """Magnitude against which scheme residuals are compared."""
    e = mesh.interior
    row = np.zeros(mesh.n_cells)
    w = mesh.lengths[e] * (data.lambda_inf / mesh.d_sigma[e] + np.abs(v_edges[e]))
    np.add.at(row, mesh.edge_k[e], 2 * w)
    np.add.at(row, mesh.edge_l[e], 2 * w)
    return float(row.max(initial=0.0) * np.max(np.abs(u.values), initial=0.0)
                 + np.max(np.abs(F), initial=0.0)) or 1.0


def picard_solve(mesh: AdmissibleMesh, data: ProblemData, opts: PicardOptions = PicardOptions(),
                 F=None, v_edges=None, quad_subdiv: int = 4, pin: int = 0,
                 method: str = "auto", raise_on_failure: bool = True):
    """Fixed point of the linearised solve, starting from ``u = 0``.

    Returns ``(u, report)``.  When the coefficients are frozen (constant
    lambda) the linear map does not depend on its argument and one
    application is the fixed point.
    """
    if v_edges is None:
        v_edges = edge_velocity(mesh, data, quad_subdiv)
    if F is None:
        F = cell_source(mesh, data, quad_subdiv)
    F = np.asarray(F, dtype=float)
    theta = opts.damping
    u = CellField.constant(mesh, 0.0)
    report = PicardReport()
    sol = None
    for k in range(1, opts.max_iter + 1):
        sol = gamma(mesh, data, u, F, v_edges, pin, method)
        new = u.values + theta * (sol.u.values - u.values) if theta < 1 else sol.u.values
        upd = lp_norm(u.with_values(new - u.values), 2)
        u_norm = lp_norm(u, 2)
        report.update_history.append(upd)
        report.linear_iters.append(sol.linear_iters)
        report.iterations = k
        u = u.with_values(new)
        log.debug("picard %d: update %.3e", k, upd)
        if data.frozen_coefficients or upd <= opts.tol * (1.0 + u_norm):
            report.converged = True
            break
    if report.converged and theta < 1:
        # the damped combination need not have a null lower median
        u = median_normalize(u, sol.kernel)
    r = scheme_residual(mesh, data, u, F, v_edges)
    report.final_residual = float(np.max(np.abs(r), initial=0.0)) / \
        residual_scale(mesh, data, u, F, v_edges)
    if not report.converged and raise_on_failure:
        raise PicardDivergence(
            f"Picard did not converge in {opts.max_iter} iterations "
            f"(last update {report.update_history[-1]:.3e})", report, u)
    return u, report


def fixed_point_defect(mesh, data, u: CellField, F, v_edges, pin: int = 0) -> float:
    """``||Gamma(u) - u||_{0,2}``: distance of ``u`` from being a fixed point."""
    g = gamma(mesh, data, u, F, v_edges, pin).u
    return lp_norm(u.with_values(g.values - u.values), 2)


def flux_balance(mesh, u: CellField, F, v_edges, data) -> float:
    """Sum of the per-cell residuals; vanishes for every ``u`` (conservation)."""
    return rsum(scheme_residual(mesh, data, u, F, v_edges))
