"""Case definitions, refinement studies and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import analysis
from .errors import MedFVError
from .fields import CellField, cell_field_csv, lp_norm, truncate_values
from .mesh import AdmissibleMesh, build_rect_mesh
from .scheme import (ProblemData, cell_source, constant_lambda, edge_velocity,
                     rational_lambda, zero_source, zero_velocity)
from .solver import PicardOptions, PicardReport, picard_solve

log = logging.getLogger(__name__)

PI = math.pi
DIPOLE_A = (0.25, 0.5)
DIPOLE_B = (0.75, 0.5)
TN_LEVELS = (1.0, 2.0, 4.0, 8.0)
ENERGY_LEVELS = (2.0, 4.0, 8.0, 16.0, 32.0)
EXCEEDANCE_LEVELS = (2.0, 4.0, 8.0, 16.0, 32.0)
CONVERGENCE_COLUMNS = ["level", "h", "N", "errL2", "errL2_T1", "errL2_T2", "order", "picardIters"]


@dataclass
class CaseConfig:
    case_name: str
    lambda_spec: tuple = ("constant", 1.0)
    velocity_spec: tuple = ("zero",)
    source_spec: tuple = ("zero",)
    mesh_levels: list = field(default_factory=lambda: [(8, 8), (16, 16), (32, 32), (64, 64)])
    lx: float = 1.0
    ly: float = 1.0
    quad_subdiv: int = 4
    picard: PicardOptions = field(default_factory=PicardOptions)
    outputs: str = "out"
    velocity_p: float = 4.0

    def __post_init__(self):
        hs = [math.hypot(self.lx / nx, self.ly / ny) for nx, ny in self.mesh_levels]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ValueError("mesh levels must have strictly decreasing h")
        # resolving the tags here surfaces unknown ones early
        lambda_law(self.lambda_spec)
        velocity_field(self.velocity_spec)


# -- coefficient tags ---------------------------------------------------------

def lambda_law(tag) -> tuple:
    kind = tag[0]
    if kind == "constant":
        return constant_lambda(float(tag[1]))
    if kind == "rational1":
        return rational_lambda(float(tag[1]))
    raise ValueError(f"unknown lambda kind {kind!r}")


def velocity_field(tag) -> Callable:
    kind = tag[0]
    if kind == "zero":
        return zero_velocity
    if kind == "constant":
        vx, vy = float(tag[1]), float(tag[2])
        return lambda x, y: (np.full_like(np.asarray(x, dtype=float), vx),
                             np.full_like(np.asarray(x, dtype=float), vy))
    if kind == "stream":
        # curl of psi = (c / pi) sin(pi x) sin(pi y): divergence free, v.n = 0 on the unit square
        c = float(tag[1])
        return lambda x, y: (-c * np.sin(PI * x) * np.cos(PI * y),
                             c * np.cos(PI * x) * np.sin(PI * y))
    raise ValueError(f"unknown velocity kind {kind!r}")


def cos_solution(x, y):
    return np.cos(PI * x) * np.cos(PI * y)


def manufactured_source(lambda_spec, velocity_spec) -> Callable:
    """``f = -div(lambda(u) grad u - v u)`` for ``u = cos(pi x) cos(pi y)``.

    Uses ``div v = 0`` for every supported velocity tag.
    """
    lam, _, _ = lambda_law(lambda_spec)
    if lambda_spec[0] == "constant":
        dlam = lambda r: 0.0 * r  # noqa: E731
    else:
        dlam = lambda r: -2.0 * r / (1.0 + r * r) ** 2  # noqa: E731
    vel = velocity_field(velocity_spec)

    def f(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        u = cos_solution(x, y)
        ux = -PI * np.sin(PI * x) * np.cos(PI * y)
        uy = -PI * np.cos(PI * x) * np.sin(PI * y)
        vx, vy = vel(x, y)
        return -dlam(u) * (ux * ux + uy * uy) + lam(u) * 2 * PI ** 2 * u + vx * ux + vy * uy

    return f


@lru_cache(maxsize=None)
def _bump_constant() -> float:
    val, _ = integrate.quad(lambda r: r * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)
    return 1.0 / (2 * PI * val)


def bump(zx, zy):
    """Smooth unit-mass bump supported in the unit disc."""
    r2 = np.asarray(zx, dtype=float) ** 2 + np.asarray(zy, dtype=float) ** 2
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = _bump_constant() * np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def dipole_source(eps: float, amplitude: float = 1.0) -> Callable:
    if not 0 < eps < 0.25:
        raise ValueError(f"dipole width must lie in (0, 1/4) to stay inside the domain, got {eps}")
    (ax, ay), (bx, by) = DIPOLE_A, DIPOLE_B

    def f(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return amplitude * (bump((x - ax) / eps, (y - ay) / eps)
                            - bump((x - bx) / eps, (y - by) / eps)) / eps ** 2

    return f


def source_field(config: CaseConfig) -> Callable:
    kind = config.source_spec[0]
    if kind == "zero":
        return zero_source
    if kind == "manufactured":
        return manufactured_source(config.lambda_spec, config.velocity_spec)
    if kind == "dipole":
        amp = float(config.source_spec[2]) if len(config.source_spec) > 2 else 1.0
        return dipole_source(float(config.source_spec[1]), amp)
    if kind == "cos":
        return lambda x, y: float(config.source_spec[1]) * cos_solution(x, y)
    raise ValueError(f"unknown source kind {kind!r}")


def build_problem(config: CaseConfig) -> ProblemData:
    law, mu, lam_inf = lambda_law(config.lambda_spec)
    return ProblemData(law, mu, lam_inf, velocity_field(config.velocity_spec),
                       source_field(config), config.velocity_p)


# -- named cases --------------------------------------------------------------

MANUFACTURED = {
    "diffusion-cos": (("constant", 1.0), ("zero",)),
    "convdiff-cos": (("constant", 1.0), ("stream", 2.0)),
    "nonlinear-cos": (("rational1", 1.0), ("zero",)),
}


def manufactured_case(name: str):
    """``(config, exact)`` for a manufactured cosine case on the unit square."""
    if name not in MANUFACTURED:
        raise ValueError(f"unknown manufactured case {name!r}; choose from {sorted(MANUFACTURED)}")
    lam, vel = MANUFACTURED[name]
    config = CaseConfig(case_name=name, lambda_spec=lam, velocity_spec=vel,
                        source_spec=("manufactured",))
    return config, cos_solution


def singular_case(eps: float = 0.05) -> CaseConfig:
    """Mollified dipole with a nonlinear diffusivity and a rotating velocity."""
    dipole_source(eps)  # validates eps
    return CaseConfig(
        case_name="dipole",
        lambda_spec=("rational1", 1.0),
        velocity_spec=("stream", 1.0),
        source_spec=("dipole", eps),
        mesh_levels=[(16, 16), (32, 32), (64, 64), (128, 128)],
    )


def zero_case() -> CaseConfig:
    return CaseConfig(case_name="zero", lambda_spec=("rational1", 1.0),
                      velocity_spec=("stream", 1.0), source_spec=("zero",))


def named_case(name: str, eps: float = 0.05) -> tuple:
    if name in MANUFACTURED:
        return manufactured_case(name)
    if name == "dipole":
        return singular_case(eps), None
    if name == "zero":
        return zero_case(), None
    raise ValueError(f"unknown case {name!r}")


# -- studies ------------------------------------------------------------------

@dataclass
class LevelSolution:
    level: int
    mesh: AdmissibleMesh
    data: ProblemData
    F: np.ndarray
    v_edges: np.ndarray
    u: Optional[CellField]
    report: Optional[PicardReport]
    error: Optional[str] = None


def solve_level(config: CaseConfig, level: int) -> LevelSolution:
    nx, ny = config.mesh_levels[level]
    mesh = build_rect_mesh(nx, ny, config.lx, config.ly)
    data = build_problem(config)
    F = cell_source(mesh, data, config.quad_subdiv)
    v_edges = edge_velocity(mesh, data, config.quad_subdiv)
    try:
        u, rep = picard_solve(mesh, data, config.picard, F=F, v_edges=v_edges)
    except MedFVError as exc:
        log.warning("level %d (%dx%d) failed: %s", level, nx, ny, exc)
        return LevelSolution(level, mesh, data, F, v_edges, None, getattr(exc, "report", None),
                             str(exc))
    return LevelSolution(level, mesh, data, F, v_edges, u, rep)


def solve_levels(config: CaseConfig) -> list:
    return [solve_level(config, k) for k in range(len(config.mesh_levels))]


def inject(fine: CellField, coarse: AdmissibleMesh) -> CellField:
    """Measure-weighted average of a nested fine field onto a coarser grid."""
    fm = fine.mesh
    rx, ry = fm.nx // coarse.nx, fm.ny // coarse.ny
    if rx * coarse.nx != fm.nx or ry * coarse.ny != fm.ny:
        raise ValueError("meshes are not nested")
    vals = (fine.values * fm.measures).reshape(coarse.ny, ry, coarse.nx, rx).sum(axis=(1, 3))
    meas = fm.measures.reshape(coarse.ny, ry, coarse.nx, rx).sum(axis=(1, 3))
    return CellField(coarse, (vals / meas).ravel())


@dataclass
class ConvergenceRow:
    level: int
    h: float
    N: int
    errL2: float
    errL2_T1: float
    errL2_T2: float
    order: float
    picardIters: int


@dataclass
class ConvergenceTable:
    rows: list

    def orders(self) -> list:
        return [r.order for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for r in self.rows:
            w.writerow([r.level, repr(float(r.h)), r.N, repr(float(r.errL2)),
                        repr(float(r.errL2_T1)), repr(float(r.errL2_T2)), repr(float(r.order)),
                        r.picardIters])
        return buf.getvalue()


def _errors(u: CellField, ref: CellField) -> tuple:
    d = lp_norm(u.with_values(u.values - ref.values), 2)
    t = [lp_norm(u.with_values(truncate_values(u.values, n) - truncate_values(ref.values, n)), 2)
         for n in (1.0, 2.0)]
    return d, t[0], t[1]


def convergence_table(levels: list, exact: Optional[Callable] = None) -> ConvergenceTable:
    ref = levels[-1].u if exact is None else None
    rows = []
    prev = None
    for lv in levels:
        iters = lv.report.iterations if lv.report else 0
        if lv.u is None or (exact is None and ref is None):
            rows.append(ConvergenceRow(lv.level, lv.mesh.h, lv.mesh.n_cells, math.nan, math.nan,
                                       math.nan, math.nan, iters))
            prev = None
            continue
        target = CellField.sample(lv.mesh, exact) if exact is not None else inject(ref, lv.mesh)
        err = _errors(lv.u, target)
        order = math.log2(prev / err[0]) if prev and err[0] > 0 else math.nan
        rows.append(ConvergenceRow(lv.level, lv.mesh.h, lv.mesh.n_cells, *err, order, iters))
        prev = err[0]
    return ConvergenceTable(rows)


def run_convergence(config: CaseConfig, exact: Optional[Callable] = None,
                    levels: Optional[list] = None) -> ConvergenceTable:
    """Error table; against ``exact`` when given, else against the finest level."""
    levels = levels if levels is not None else solve_levels(config)
    return convergence_table(levels, exact)


def random_test_functions(count: int, seed: int = 0) -> list:
    """Smooth and piecewise-smooth random functions on the unit square.

    Sampled at cell centres on every level, so inequality ratios can be
    compared across refinements for the same underlying function.
    """
    rng = np.random.default_rng(seed)
    funcs = []
    for i in range(count):
        family = i % 3
        if family == 0:
            modes = rng.integers(0, 5, size=(4, 2))
            amps = rng.normal(size=4)
            phases = rng.uniform(0, 2 * PI, size=(4, 2))

            def f(x, y, modes=modes, amps=amps, phases=phases):
                out = 0.0
                for (k, l), a, (p, q) in zip(modes, amps, phases):
                    out = out + a * np.cos(PI * k * x + p) * np.cos(PI * l * y + q)
                return out
        elif family == 1:
            nrm = rng.normal(size=2)
            nrm /= np.linalg.norm(nrm)
            off, jump, base = rng.uniform(0.2, 0.8), rng.normal(), rng.normal()

            def f(x, y, nrm=nrm, off=off, jump=jump, base=base):
                return base + jump * (nrm[0] * (x - 0.5) + nrm[1] * (y - 0.5) + 0.5 > off)
        else:
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            width, amp = rng.uniform(0.05, 0.3), rng.normal()

            def f(x, y, cx=cx, cy=cy, width=width, amp=amp):
                return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / width ** 2)
        funcs.append(f)
    return funcs


def verify_level(lv: LevelSolution, quad_subdiv: int = 4, n_random: int = 20, seed: int = 0):
    """Estimate rows ``(level, h, report)`` and energy rows for one solved level."""
    est, energy = [], []
    m, u, data = lv.mesh, lv.u, lv.data
    est.append((lv.level, m.h, analysis.log_estimate(u, data, quad_subdiv)))
    for n in TN_LEVELS:
        est.append((lv.level, m.h, analysis.tn_estimate(u, n, data, quad_subdiv)))
    for n, meas, _ in analysis.exceedance_bound(u, EXCEEDANCE_LEVELS):
        est.append((lv.level, m.h,
                    analysis.EstimateReport(f"exceedance_n{n:g}", meas, 1.0 / math.log1p(n) ** 2)))
    for n in ENERGY_LEVELS:
        energy.append((n, lv.level, m.h, analysis.diffusive_energy(u, n, data),
                       analysis.convective_energy(u, n, lv.v_edges)))
    fields = [("solution", u)] + [
        (f"rand{i:02d}", CellField.sample(m, f))
        for i, f in enumerate(random_test_functions(n_random, seed))]
    for tag, w in fields:
        for p in (1.0, 2.0):
            r = analysis.pw_median_check(w, p, m.xi)
            est.append((lv.level, m.h, replace(r, name=f"{r.name}_{tag}")))
        r = analysis.sobolev_check(w, 4.0)
        est.append((lv.level, m.h, replace(r, name=f"{r.name}_{tag}")))
    return est, energy


def run_verify(config: CaseConfig, levels: Optional[list] = None, n_random: int = 20) -> dict:
    """CSV texts keyed by file name: ``estimates.csv`` and ``energy.csv``."""
    levels = levels if levels is not None else solve_levels(config)
    est, energy = [], []
    for lv in levels:
        if lv.u is None:
            continue
        e, g = verify_level(lv, config.quad_subdiv, n_random)
        est.extend(e)
        energy.extend(g)
    return {"estimates.csv": analysis.estimates_csv(est), "energy.csv": analysis.energy_csv(energy)}


def solution_files(levels: list) -> dict:
    out = {}
    for lv in levels:
        if lv.u is not None:
            out[f"solution_{lv.level}.csv"] = cell_field_csv(lv.u)
        if lv.report is not None:
            out[f"picard_{lv.level}.csv"] = lv.report.to_csv()
    return out


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(outdir: str, files: dict) -> list:
    paths = []
    for name in sorted(files):
        path = os.path.join(outdir, name)
        write_atomic(path, files[name])
        paths.append(path)
    return paths


# -- config files -------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


KNOWN_KEYS = {
    "case.name", "mesh.nx", "mesh.ny", "mesh.levels", "mesh.lx", "mesh.ly", "lambda.kind",
    "lambda.value", "velocity.kind", "velocity.c", "velocity.vx", "velocity.vy", "velocity.p",
    "source.kind", "source.eps", "source.amplitude", "source.scale", "quad.subdiv",
    "picard.tol", "picard.maxiter", "picard.damping", "out.dir",
}


def config_from_mapping(kv: dict, base_dir: str = ".") -> tuple:
    """Build ``(CaseConfig, exact)`` from parsed config keys."""
    unknown = set(kv) - KNOWN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    name = kv.get("case.name", "custom")
    eps = float(kv.get("source.eps", 0.05))
    if name == "custom":
        config, exact = CaseConfig(case_name="custom"), None
    else:
        config, exact = named_case(name, eps)

    lam = config.lambda_spec
    if "lambda.kind" in kv or "lambda.value" in kv:
        lam = (kv.get("lambda.kind", lam[0]), float(kv.get("lambda.value", lam[1])))
    vel = config.velocity_spec
    if "velocity.kind" in kv or any(k in kv for k in ("velocity.c", "velocity.vx", "velocity.vy")):
        kind = kv.get("velocity.kind", vel[0])
        if kind == "stream":
            vel = ("stream", float(kv.get("velocity.c", vel[1] if vel[0] == "stream" else 1.0)))
        elif kind == "constant":
            vel = ("constant", float(kv.get("velocity.vx", 0.0)), float(kv.get("velocity.vy", 0.0)))
        else:
            vel = (kind,)
    src = config.source_spec
    if "source.kind" in kv:
        kind = kv["source.kind"]
        if kind == "dipole":
            src = ("dipole", eps, float(kv.get("source.amplitude", 1.0)))
        elif kind == "cos":
            src = ("cos", float(kv.get("source.scale", 1.0)))
        else:
            src = (kind,)
    elif src[0] == "dipole":
        src = ("dipole", eps, float(kv.get("source.amplitude", 1.0)))
    if exact is not None and (lam != config.lambda_spec or vel != config.velocity_spec
                              or src != config.source_spec):
        # the manufactured source follows the coefficients; the exact solution stays u*
        if src[0] != "manufactured":
            exact = None

    levels = config.mesh_levels
    if any(k in kv for k in ("mesh.nx", "mesh.ny", "mesh.levels")):
        nx = int(kv.get("mesh.nx", levels[0][0]))
        ny = int(kv.get("mesh.ny", kv.get("mesh.nx", levels[0][1])))
        count = int(kv.get("mesh.levels", len(levels)))
        levels = [(nx * 2 ** k, ny * 2 ** k) for k in range(count)]
    picard = PicardOptions(
        tol=float(kv.get("picard.tol", config.picard.tol)),
        max_iter=int(kv.get("picard.maxiter", config.picard.max_iter)),
        damping=float(kv.get("picard.damping", config.picard.damping)),
    )
    out_dir = kv.get("out.dir", config.outputs)
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(base_dir, out_dir)
    config = replace(
        config, lambda_spec=lam, velocity_spec=vel, source_spec=src, mesh_levels=levels,
        lx=float(kv.get("mesh.lx", config.lx)), ly=float(kv.get("mesh.ly", config.ly)),
        quad_subdiv=int(kv.get("quad.subdiv", config.quad_subdiv)), picard=picard,
        outputs=out_dir, velocity_p=float(kv.get("velocity.p", config.velocity_p)))
    return config, exact


def load_config(path: str) -> tuple:
    with open(path) as fh:
        text = fh.read()
    return config_from_mapping(parse_config_text(text), os.path.dirname(os.path.abspath(path)))
