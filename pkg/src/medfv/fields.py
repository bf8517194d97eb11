"""Piecewise-constant cell fields, discrete norms, medians and cut-offs."""

from __future__ import annotations

import contextlib
import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import DIM, AdmissibleMesh

_REPRODUCIBLE = False


def set_reproducible(flag: bool) -> None:
    """Switch every reduction to exactly rounded (order independent) sums."""
    global _REPRODUCIBLE
    _REPRODUCIBLE = bool(flag)


@contextlib.contextmanager
def reproducible(flag: bool = True):
    old = _REPRODUCIBLE
    set_reproducible(flag)
    try:
        yield
    finally:
        set_reproducible(old)


def rsum(a) -> float:
    a = np.asarray(a, dtype=float)
    if _REPRODUCIBLE:
        return math.fsum(a.ravel().tolist())
    return float(np.sum(a))


# half-measure comparisons in the median are done with this relative slack so
# that exact ties on dyadic meshes are not broken by rounding in cumulative sums
_MEDIAN_RTOL = 64 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class CellField:
    mesh: AdmissibleMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if v.shape[0] != self.mesh.n_cells:
            raise ValueError(f"expected {self.mesh.n_cells} values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("cell field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh: AdmissibleMesh, c: float = 0.0) -> "CellField":
        return cls(mesh, np.full(mesh.n_cells, float(c)))

    @classmethod
    def sample(cls, mesh: AdmissibleMesh, func: Callable) -> "CellField":
        """Evaluate ``func(x, y)`` at the cell centres."""
        c = mesh.centers
        return cls(mesh, np.broadcast_to(func(c[:, 0], c[:, 1]), (mesh.n_cells,)))

    def with_values(self, values) -> "CellField":
        return CellField(self.mesh, values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class DiamondField:
    mesh: AdmissibleMesh
    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float, copy=True)
        if v.shape != (self.mesh.n_edges, DIM):
            raise ValueError(f"expected shape {(self.mesh.n_edges, DIM)}, got {v.shape}")
        if np.any(v[self.mesh.boundary] != 0.0):
            raise ValueError("diamond field must vanish on boundary diamonds")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def l2_norm(self) -> float:
        sq = np.einsum("ij,ij->i", self.vectors, self.vectors)
        return math.sqrt(rsum(self.mesh.diamond_measures * sq))


@dataclass(frozen=True)
class MedianInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"empty median interval [{self.lower}, {self.upper}]")

    def __contains__(self, t) -> bool:
        return self.lower <= t <= self.upper


def _check_p(p):
    if not p >= 1 or not np.isfinite(p):
        raise ValueError(f"p must lie in [1, inf), got {p}")


def lp_norm(u: CellField, p: float = 2.0) -> float:
    _check_p(p)
    return rsum(u.mesh.measures * np.abs(u.values) ** p) ** (1.0 / p)


def edge_jumps(u: CellField) -> np.ndarray:
    """``u_K - u_L`` on the interior edges, in ``mesh.interior`` order."""
    m = u.mesh
    return u.values[m.edge_k[m.interior]] - u.values[m.edge_l[m.interior]]


def w1p_seminorm(u: CellField, p: float = 2.0) -> float:
    _check_p(p)
    m = u.mesh
    ds = m.d_sigma[m.interior]
    terms = m.lengths[m.interior] / ds ** (p - 1) * np.abs(edge_jumps(u)) ** p
    return rsum(terms) ** (1.0 / p)


def w1p_norm(u: CellField, p: float = 2.0) -> float:
    return lp_norm(u, p) + w1p_seminorm(u, p)


def truncate_values(s, n: float):
    return np.clip(s, -n, n)


def truncate(u: CellField, n: float) -> CellField:
    if not n > 0:
        raise ValueError(f"truncation height must be positive, got {n}")
    return u.with_values(truncate_values(u.values, n))


def s_n_values(s, n: float):
    """Plateau-ramp cut-off: 1 on [-n, n], linear down to 0 at +-2n."""
    return np.clip(2.0 - np.abs(np.asarray(s, dtype=float)) / n, 0.0, 1.0)


def s_n(u: CellField, n: float) -> CellField:
    if not n > 0:
        raise ValueError(f"n must be positive, got {n}")
    return u.with_values(s_n_values(u.values, n))


def weighted_median_interval(values, weights, total=None) -> MedianInterval:
    """Lower and upper medians of a weighted sample.

    ``lower = inf{t : W{v > t} <= total/2}``,
    ``upper = sup{t : W{v > t} >= total/2}``.  Both are attained at sample
    values, so no interpolation is involved.
    """
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("median of an empty field")
    total = float(np.sum(weights)) if total is None else float(total)
    half = 0.5 * total
    slack = _MEDIAN_RTOL * total
    distinct, inv = np.unique(values, return_inverse=True)
    w = np.bincount(inv, weights=weights, minlength=len(distinct))
    # at_least[i] = W{v >= distinct[i]}, above[i] = W{v > distinct[i]}
    at_least = np.cumsum(w[::-1])[::-1]
    above = at_least - w
    lo = int(np.argmax(above <= half + slack))
    hi = int(np.flatnonzero(at_least >= half - slack)[-1])
    return MedianInterval(float(distinct[lo]), float(distinct[hi]))


def median_interval(u: CellField) -> MedianInterval:
    return weighted_median_interval(u.values, u.mesh.measures, u.mesh.domain_measure)


def lower_median(u: CellField) -> float:
    return median_interval(u).lower


def discrete_gradient(u: CellField) -> DiamondField:
    """Diamond-wise gradient ``d (u_L - u_K) / d_sigma n_{K,sigma}``; zero on the boundary."""
    m = u.mesh
    g = np.zeros((m.n_edges, DIM))
    e = m.interior
    coef = DIM * (-edge_jumps(u)) / m.d_sigma[e]
    g[e] = coef[:, None] * m.normals[e]
    return DiamondField(m, g)


def exceedance_measure(u: CellField, n: float) -> float:
    """Measure of the strict super-level set ``{|u| > n}``."""
    if not n > 0:
        raise ValueError(f"n must be positive, got {n}")
    return rsum(u.mesh.measures[np.abs(u.values) > n])


def cell_field_csv(u: CellField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id", "value"])
    for k, val in enumerate(u.values):
        w.writerow([k, repr(float(val))])
    return buf.getvalue()


def diamond_field_csv(g: DiamondField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["edge_id", "gx", "gy"])
    for e, (gx, gy) in enumerate(g.vectors):
        w.writerow([e, repr(float(gx)), repr(float(gy))])
    return buf.getvalue()


def read_cell_field_csv(mesh: AdmissibleMesh, text: str) -> CellField:
    rows = list(csv.DictReader(io.StringIO(text)))
    vals = np.empty(len(rows))
    for r in rows:
        vals[int(r["cell_id"])] = float(r["value"])
    return CellField(mesh, vals)
