"""Measured counterparts of the a priori estimates and functional inequalities.

None of the constants is known in closed form, so every estimate is reported
as ``lhs``, ``rhs`` and their ratio; callers judge boundedness across meshes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import (CellField, discrete_gradient, edge_jumps, exceedance_measure,
                     lower_median, lp_norm, rsum, s_n_values, truncate_values, w1p_norm,
                     w1p_seminorm)
from .mesh import DIM
from .scheme import ProblemData, source_l1_norm, upwind_values, velocity_lp_norm

MEDIAN_ATOL = 1e-12


@dataclass(frozen=True)
class EstimateReport:
    name: str
    lhs: float
    rhs: float

    def __post_init__(self):
        if self.lhs < 0 or self.rhs < 0:
            raise ValueError(f"{self.name}: estimate sides must be non-negative")

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return 0.0 if self.lhs == 0 else math.inf
        return self.lhs / self.rhs


@dataclass(frozen=True)
class EdgeClassification:
    """Boolean masks over ``mesh.interior``; ``in_a`` and ``in_b`` partition it."""

    in_a: np.ndarray
    in_b: np.ndarray


def log_phi(s):
    """``phi(s) = int_0^s dt / (1 + |t|)^2 = s / (1 + |s|)``."""
    s = np.asarray(s, dtype=float)
    return s / (1.0 + np.abs(s))


def _require_null_median(u: CellField):
    med = lower_median(u)
    if abs(med) > MEDIAN_ATOL * max(1.0, float(np.max(np.abs(u.values)))):
        raise ValueError(f"field must have null lower median, got {med!r}")


def classify_edges(u: CellField, v_edges) -> EdgeClassification:
    up, down = upwind_values(u.values, u.mesh, np.asarray(v_edges))
    in_a = ((up >= down) & (up < 0)) | ((up < down) & (up >= 0))
    return EdgeClassification(in_a, ~in_a)


def log_estimate(u: CellField, data: ProblemData, quad_subdiv: int = 4) -> EstimateReport:
    _require_null_median(u)
    m = u.mesh
    w = u.with_values(np.log1p(np.abs(u.values)))
    lhs = w1p_norm(w, 2) ** 2
    vp = velocity_lp_norm(m, data, data.p, quad_subdiv)
    rhs = 2 * source_l1_norm(m, data, quad_subdiv) + \
        DIM * m.domain_measure ** ((data.p - 2) / data.p) * vp ** 2
    return EstimateReport("log_estimate", lhs, rhs)


def exceedance_bound(u: CellField, n_values) -> list:
    out = []
    for n in n_values:
        meas = exceedance_measure(u, n)
        out.append((float(n), meas, meas * math.log1p(n) ** 2))
    return out


def tn_estimate(u: CellField, n: float, data: ProblemData, quad_subdiv: int = 4) -> EstimateReport:
    _require_null_median(u)
    m = u.mesh
    lhs = w1p_norm(u.with_values(truncate_values(u.values, n)), 2)
    v2 = velocity_lp_norm(m, data, 2.0, quad_subdiv)
    rhs = n * source_l1_norm(m, data, quad_subdiv) + n ** 2 * DIM * v2 ** 2 + 1.0
    return EstimateReport(f"tn_estimate_n{n:g}", lhs, rhs)


def _truncated_jumps(u: CellField, n: float):
    m = u.mesh
    t = truncate_values(u.values, n)
    e = m.interior
    return t[m.edge_k[e]] - t[m.edge_l[e]]


def diffusive_energy(u: CellField, n: float, data: ProblemData) -> float:
    if not n > 0:
        raise ValueError("n must be positive")
    m = u.mesh
    e = m.interior
    lam = data.lam(u.values)
    lam_s = 0.5 * (lam[m.edge_k[e]] + lam[m.edge_l[e]])
    terms = m.lengths[e] / m.d_sigma[e] * lam_s * edge_jumps(u) * _truncated_jumps(u, n)
    return rsum(terms) / n


def convective_energy(u: CellField, n: float, v_edges) -> float:
    if not n > 0:
        raise ValueError("n must be positive")
    m = u.mesh
    e = m.interior
    v_edges = np.asarray(v_edges)
    up, down = upwind_values(u.values, m, v_edges)
    dt = np.abs(truncate_values(up, n) - truncate_values(down, n))
    return rsum(m.lengths[e] * np.abs(v_edges[e]) * np.abs(up) * dt) / n


def pw_median_check(u: CellField, p: float, xi: float) -> EstimateReport:
    c = lower_median(u)
    lhs = lp_norm(u.with_values(u.values - c), p)
    rhs = w1p_seminorm(u, p) / xi ** ((p - 1) / p)
    return EstimateReport(f"pw_median_p{p:g}", lhs, rhs)


def sobolev_check(u: CellField, q: float) -> EstimateReport:
    return EstimateReport(f"sobolev_q{q:g}", lp_norm(u, q), w1p_seminorm(u, 2) + lp_norm(u, 2))


def renormalized_identity(u: CellField, data: ProblemData, F, v_edges, phi: Callable,
                          n: float) -> tuple:
    """Scheme tested against ``phi(x_K) S_n(u_K)``, gathered by edges.

    Returns ``(T1, T2, T3, T1 + T2 - T3)``.
    """
    m = u.mesh
    e = m.interior
    K, L = m.edge_k[e], m.edge_l[e]
    weight = np.broadcast_to(phi(m.centers[:, 0], m.centers[:, 1]), (m.n_cells,)) * \
        s_n_values(u.values, n)
    dw = weight[K] - weight[L]
    lam = data.lam(u.values)
    lam_s = 0.5 * (lam[K] + lam[L])
    v_edges = np.asarray(v_edges)
    up, _ = upwind_values(u.values, m, v_edges)
    t1 = rsum(m.lengths[e] / m.d_sigma[e] * lam_s * (u.values[K] - u.values[L]) * dw)
    t2 = rsum(m.lengths[e] * v_edges[e] * up * dw)
    t3 = rsum(np.asarray(F) * weight)
    return t1, t2, t3, t1 + t2 - t3


def diamond_average_sn(u: CellField, n: float) -> np.ndarray:
    m = u.mesh
    s = s_n_values(u.values, n)
    out = s[m.edge_k].copy()
    e = m.interior
    out[e] = 0.5 * (s[m.edge_k[e]] + s[m.edge_l[e]])
    return out


def diamond_sn_gap(u: CellField, n: float) -> tuple:
    """``(||S_bar - S_n(u)||_{L2}, majorant)`` for the diamond-averaged cut-off.

    On each half diamond the gap is ``|S_n(u_K) - S_n(u_L)| / 2``; the
    majorant is ``h |T_{2n}(u)|_{1,2} / (2 n sqrt(d))``.
    """
    m = u.mesh
    e = m.interior
    s = s_n_values(u.values, n)
    gap = math.sqrt(0.25 * rsum(m.diamond_measures[e] * (s[m.edge_k[e]] - s[m.edge_l[e]]) ** 2))
    t2n = w1p_seminorm(u.with_values(truncate_values(u.values, 2 * n)), 2)
    return gap, m.h * t2n / (2 * n * math.sqrt(DIM))


def gradient_pairings(u: CellField, n: float, vector_fields) -> list:
    """``int grad_M T_n(u) . Phi`` for each smooth ``Phi(x, y) -> (px, py)``.

    ``Phi`` is taken at edge midpoints; the weak limit of the discrete
    gradient is probed by watching these pairings across refinements.
    """
    m = u.mesh
    g = discrete_gradient(u.with_values(truncate_values(u.values, n))).vectors
    mid = m.edge_vertices.mean(axis=1)
    out = []
    for phi in vector_fields:
        px, py = phi(mid[:, 0], mid[:, 1])
        dot = g[:, 0] * px + g[:, 1] * py
        out.append(rsum(m.diamond_measures * dot))
    return out


# -- scalar lemmas used in the log estimate ------------------------------------

def phi_difference(a, b):
    """``phi(a) - phi(b)`` without cancellation when ``a`` and ``b`` share a sign."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    same = (a >= 0) == (b >= 0)
    with np.errstate(invalid="ignore"):
        close = (a - b) / ((1.0 + np.abs(a)) * (1.0 + np.abs(b)))
    return np.where(same, close, log_phi(a) - log_phi(b))


def log_difference(a, b):
    """``ln(1+|a|) - ln(1+|b|)`` evaluated as a single ``log1p``."""
    a, b = np.abs(np.asarray(a, dtype=float)), np.abs(np.asarray(b, dtype=float))
    return np.log1p((a - b) / (1.0 + b))


def log_lemma_terms(x, y):
    """``((x - y)(phi(x) - phi(y)), (ln(1+|x|) - ln(1+|y|))^2)``; the first dominates."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return (x - y) * phi_difference(x, y), log_difference(x, y) ** 2


def log_lemma_gap(x, y):
    big, small = log_lemma_terms(x, y)
    return big - small


def a_edge_lemma_terms(u_plus, u_minus):
    """``(|u- - u+| |dphi|, |u+|^2 |dphi|^2)`` with ``dphi = phi(u-) - phi(u+)``."""
    up, um = np.asarray(u_plus, dtype=float), np.asarray(u_minus, dtype=float)
    dphi = np.abs(phi_difference(um, up))
    return np.abs(um - up) * dphi, up ** 2 * dphi ** 2


def a_edge_lemma_gap(u_plus, u_minus):
    big, small = a_edge_lemma_terms(u_plus, u_minus)
    return big - small


def in_edge_set_a(u_plus, u_minus):
    up, um = np.asarray(u_plus), np.asarray(u_minus)
    return ((up >= um) & (up < 0)) | ((up < um) & (up >= 0))


# -- CSV ----------------------------------------------------------------------

ESTIMATE_COLUMNS = ["name", "level", "h", "lhs", "rhs", "ratio"]
ENERGY_COLUMNS = ["n", "level", "h", "diffusive", "convective"]


def estimates_csv(rows) -> str:
    """``rows`` are ``(level, h, EstimateReport)`` triples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for level, h, rep in rows:
        w.writerow([rep.name, level, repr(float(h)), repr(float(rep.lhs)), repr(float(rep.rhs)),
                    repr(float(rep.ratio))])
    return buf.getvalue()


def energy_csv(rows) -> str:
    """``rows`` are ``(n, level, h, diffusive, convective)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ENERGY_COLUMNS)
    for n, level, h, dif, con in rows:
        w.writerow([repr(float(n)), level, repr(float(h)), repr(float(dif)), repr(float(con))])
    return buf.getvalue()
