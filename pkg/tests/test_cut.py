import numpy as np
import pytest

from cutflux.cut import (
    CUT,
    IN1,
    IN2,
    build_quadrature,
    circle_levelset,
    classify,
    ellipse_levelset,
    line_levelset,
    make_levelset,
    resolve_geometry,
    sinusoidal_levelset,
)
from cutflux.mesh import Mesh, generate_mesh, lshape, square
from cutflux.verify import sampled_cut_count


def _signed(tri):
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def one_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def test_single_cut_triangle():
    cut = classify(one_triangle(), line_levelset(1.0, 0.0, 0.5))
    assert cut.n_cut == 1 and cut.tri_class[0] == CUT
    np.testing.assert_allclose(cut.n_gamma[0], [1.0, 0.0])
    np.testing.assert_allclose(cut.part_areas()[0], [0.375, 0.125])
    assert np.isclose(cut.gamma_len[0], 0.5)
    np.testing.assert_allclose(cut.x_gamma[0], [0.5, 0.25])
    # h_min: smallest cut-edge part
    assert np.isclose(cut.h_min[0], 0.5)


def test_uncut_classification():
    m = generate_mesh(square(), np.sqrt(2.0) / 4)
    cut = classify(m, line_levelset(1.0, 0.0, 2.0))
    assert cut.n_cut == 0 and np.all(cut.tri_class == IN1)
    cut = classify(m, line_levelset(-1.0, 0.0, -2.0))
    assert np.all(cut.tri_class == IN2)


def test_vertex_on_interface_is_snapped():
    m = generate_mesh(square(), np.sqrt(2.0) / 4)
    cut = classify(m, line_levelset(1.0, 0.0, 0.5))
    # vertices with phi = 0 move to side 2, leaving slivers of width ~1e-12 h on the left column
    on_line = np.isclose(m.vertices[:, 0], 0.5)
    assert np.all(cut.vert_side[on_line] == 2)
    assert np.all(np.abs(cut.phi) > 0)
    parts = cut.part_areas()
    np.testing.assert_allclose(parts.sum(axis=1), m.areas, atol=1e-15)
    assert np.isclose(parts[:, 0].sum(), 0.5, atol=1e-10)
    assert np.all(parts[cut.cut_tris, 1] < 1e-11 * m.areas[cut.cut_tris])


def test_ellipse_cut_count_against_sampling():
    m = generate_mesh(square(-1, 1, -1, 1), 2.0 / 32 * np.sqrt(2.0))
    ls = ellipse_levelset(np.pi / 6.18, 1.5 * np.pi / 6.18)
    cut = classify(m, ls)
    assert cut.n_cut == sampled_cut_count(m, ls)
    np.testing.assert_allclose(cut.part_areas().sum(axis=1), m.areas, atol=1e-15)


def test_ellipse_area_converges():
    a = np.pi / 6.18
    m = generate_mesh(square(-1, 1, -1, 1), 2.0 / 64 * np.sqrt(2.0))
    cut = classify(m, ellipse_levelset(a, 1.5 * a))
    inside = cut.part_areas()[:, 0].sum()
    assert abs(inside - np.pi * a * 1.5 * a) < 2e-3


def test_subtriangles_orientation_and_sides():
    m = generate_mesh(square(-1, 1, -1, 1), 2.0 / 16 * np.sqrt(2.0))
    ls = circle_levelset(0.61, 0.03, -0.02)
    cut = classify(m, ls)
    st = cut.sub_tris
    assert np.all(_signed(st) > 0)
    # side of each subtriangle from the P1 interpolant of phi at its centroid
    cen = st.mean(axis=2)
    tv = m.vertices[m.triangles[cut.cut_tris]]
    ph = cut.phi[m.triangles[cut.cut_tris]]
    area = _signed(tv)
    phi_h = np.zeros(cen.shape[:2])
    for j in range(3):
        a, b = tv[:, (j + 1) % 3], tv[:, (j + 2) % 3]
        lam = ((b - a)[:, None, 0] * (cen[..., 1] - a[:, None, 1]) - (b - a)[:, None, 1] * (cen[..., 0] - a[:, None, 0]))
        phi_h += lam / (2 * area[:, None]) * ph[:, j, None]
    assert np.all((phi_h < 0) == (cut.sub_side == 1))
    # the normal points from side 1 to side 2
    g = ls.grad(cut.x_gamma[:, 0], cut.x_gamma[:, 1])
    assert np.all(np.einsum("cd,cd->c", g, cut.n_gamma) > 0.9)


def test_sets_of_active_entities():
    m = generate_mesh(square(-1, 1, -1, 1), 2.0 / 8 * np.sqrt(2.0))
    m, cut = resolve_geometry(m, circle_levelset(0.55))
    assert np.array_equal(cut.tri_in[0], (cut.tri_class == IN1) | (cut.tri_class == CUT))
    assert np.array_equal(cut.tri_in[1], (cut.tri_class == IN2) | (cut.tri_class == CUT))
    # ghost edges: interior edges of T_h^i touching a cut cell
    for i in (0, 1):
        g = np.flatnonzero(cut.ghost[i])
        et = m.edge_tris[g]
        assert np.all(et[:, 1] >= 0)
        assert np.all(cut.tri_in[i][et[:, 0]] & cut.tri_in[i][et[:, 1]])
        assert np.all((cut.tri_class[et[:, 0]] == CUT) | (cut.tri_class[et[:, 1]] == CUT))


def test_sinusoidal_resolved_geometry():
    m = generate_mesh(square(-1, 1, -1, 1), 2.0 / 16 * np.sqrt(2.0))
    m2, cut = resolve_geometry(m, sinusoidal_levelset())
    assert m2.n_triangles >= m.n_triangles
    assert np.all(cut.h_min > 0)
    np.testing.assert_allclose(cut.part_areas().sum(axis=1), m2.areas, atol=1e-15)


def test_lshape_circle():
    m = generate_mesh(lshape(5.0), 10.0 / 64 * np.sqrt(2.0))
    cut = classify(m, circle_levelset(2 * np.sqrt(2.0)))
    assert cut.n_cut > 0
    inside = cut.part_areas()[:, 0].sum()
    assert abs(inside - 0.75 * np.pi * 8.0) < 0.01


def test_subcell_quadrature_integrates_polynomials():
    m = generate_mesh(square(), np.sqrt(2.0) / 4)
    ls = line_levelset(1.0, 0.7, 0.8)
    cut = classify(m, ls)
    q = build_quadrature(cut, 4)
    # integral of x^2 over side-1 parts of cut cells against the exact subtriangle formula
    w = q.side_weights(cut, 1)
    val = np.einsum("csq,csq->", w, q.sub_pts[..., 0] ** 2)
    st = cut.sub_tris
    exact = 0.0
    for c in range(cut.n_cut):
        for s in range(3):
            if cut.sub_side[c, s] != 1:
                continue
            P = st[c, s]
            area = _signed(P)
            x = P[:, 0]
            exact += area / 12.0 * (x @ x + x.sum() ** 2)
    assert np.isclose(val, exact, rtol=1e-13)
    assert np.isclose(q.gamma_wts.sum(), cut.gamma_len.sum())


def test_make_levelset():
    assert make_levelset("circle", radius=2.0)(2.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        make_levelset("torus")
