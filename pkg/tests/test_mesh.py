import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medfv.mesh import (DIM, build_rect_mesh, check_admissibility, compute_xi, dump_mesh,
                        mesh_hierarchy, parse_mesh_dump, refine)


def test_single_cell():
    m = build_rect_mesh(1, 1, 1.0, 1.0)
    assert m.n_cells == 1 and m.measures[0] == 1.0
    assert m.interior.size == 0 and m.boundary.size == 4
    assert np.all(m.lengths == 1.0)
    assert m.h == pytest.approx(math.sqrt(2))
    assert compute_xi(m) == 1.0


def test_two_cells():
    m = build_rect_mesh(2, 1, 2.0, 1.0)
    assert np.allclose(m.centers, [[0.5, 0.5], [1.5, 0.5]])
    (e,) = m.interior
    assert m.lengths[e] == 1.0 and m.d_sigma[e] == 1.0
    assert m.edge(e).cellK == 0 and m.edge(e).cellL == 1
    np.testing.assert_allclose(m.normals[e], [1.0, 0.0])


def test_four_by_four_counts():
    m = build_rect_mesh(4, 4)
    assert m.n_cells == 16
    assert m.interior.size == 24
    # enumeration oracle: count shared faces between grid neighbours
    count = sum(1 for j in range(4) for i in range(4) for di, dj in ((1, 0), (0, 1))
                if i + di < 4 and j + dj < 4)
    assert count == 24
    assert math.isclose(m.measures.sum(), 1.0, rel_tol=1e-12)


@pytest.mark.parametrize("nx,ny,lx,ly", [(0, 1, 1, 1), (1, -2, 1, 1), (2, 2, 0.0, 1), (2, 2, 1, -1)])
def test_rejects_bad_dims(nx, ny, lx, ly):
    with pytest.raises(ValueError):
        build_rect_mesh(nx, ny, lx, ly)


@pytest.mark.parametrize("nx,ny", [(2, 2), (3, 7), (8, 5), (16, 16)])
def test_xi_half(nx, ny):
    assert compute_xi(build_rect_mesh(nx, ny, 1.3, 0.7)) == 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 10), st.floats(0.1, 10))
def test_invariants(nx, ny, lx, ly):
    m = build_rect_mesh(nx, ny, lx, ly)
    assert check_admissibility(m) == []
    assert math.isclose(m.measures.sum(), lx * ly, rel_tol=1e-12)
    assert math.isclose(np.sum(m.lengths * m.d_sigma), DIM * lx * ly, rel_tol=1e-12)
    np.testing.assert_allclose(m.diamond_measures, m.d_sigma * m.lengths / DIM, rtol=1e-14)
    e = m.interior
    K, L = m.edge_k[e], m.edge_l[e]
    seg = m.centers[L] - m.centers[K]
    tangent = m.edge_vertices[e, 1] - m.edge_vertices[e, 0]
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    assert np.all(np.abs(np.sum(seg * tangent, axis=1)) <= 1e-12 * m.d_sigma[e])
    np.testing.assert_allclose(np.linalg.norm(seg, axis=1), m.d_sigma[e], rtol=1e-14)
    np.testing.assert_allclose(m.d_sigma[e], m.d_k[e] + m.d_l[e], rtol=1e-14)
    b = m.boundary
    assert np.all(m.d_l[b] == 0) and np.all(m.d_sigma[b] == m.d_k[b])
    # adjacency symmetry
    for k in range(m.n_cells):
        for edge in m.cell_edges(k):
            assert k in (m.edge_k[edge], m.edge_l[edge])


def test_interior_diamond_sum_bounded():
    m = build_rect_mesh(6, 4)
    s_int = np.sum(m.lengths[m.interior] * m.d_sigma[m.interior])
    assert s_int < DIM * m.domain_measure


def test_moved_center_reported():
    m = build_rect_mesh(3, 3)
    c = m.centers.copy()
    c[4] += [0.0, 0.05]
    report = check_admissibility(m.with_centers(c))
    assert report
    bad = [line for line in report if "orthogonal" in line]
    assert bad
    # the edges between cell 4 and its left/right neighbours are the ones hit
    named = {int(line.split()[1].rstrip(":")) for line in bad}
    lr = {e for e in m.cell_edges(4) if abs(m.normals[e][0]) == 1.0}
    assert lr <= named


def test_measure_mismatch_reported():
    m = build_rect_mesh(3, 3)
    meas = m.measures.copy()
    meas[0] *= 1.5
    report = check_admissibility(replace(m, measures=meas))
    assert any("measure" in line for line in report)


def test_refine():
    m = build_rect_mesh(2, 2)
    r = refine(m)
    assert (r.nx, r.ny) == (4, 4)
    assert r.n_cells == 4 * m.n_cells
    assert (m.interior.size, r.interior.size) == (4, 24)
    assert r.h == pytest.approx(m.h / 2)
    assert compute_xi(m) == compute_xi(r) == 0.5
    assert check_admissibility(r) == []


def test_refine_rejects_non_rectangular():
    m = build_rect_mesh(2, 2)
    c = m.centers.copy()
    c[0] += 0.01
    with pytest.raises(ValueError):
        refine(m.with_centers(c))


def test_hierarchy_nested():
    ms = mesh_hierarchy(2, 3, 3)
    assert [(x.nx, x.ny) for x in ms] == [(2, 3), (4, 6), (8, 12)]


def test_immutable():
    m = build_rect_mesh(2, 2)
    with pytest.raises(ValueError):
        m.centers[0, 0] = 3.0


def test_dump_roundtrip():
    m = build_rect_mesh(3, 2, 1.5, 1.0)
    text = dump_mesh(m)
    head = text.splitlines()[0].split()
    assert head[0::2] == ["cells", "edges", "h", "XI"]
    d = parse_mesh_dump(text)
    assert d["n_cells"] == 6 and d["n_edges"] == m.n_edges
    assert d["xi"] == 0.5 and d["h"] == m.h
    for (k, x, y, meas) in d["cells"]:
        assert (x, y) == tuple(m.centers[k]) and meas == m.measures[k]
    for (e, kind, K, L, length, nx, ny, dk, dl) in d["edges"]:
        assert kind == ("boundary" if L < 0 else "interior")
        assert (K, length, dk, dl) == (m.edge_k[e], m.lengths[e], m.d_k[e], m.d_l[e])
