import numpy as np

from cutflux.multiplier import b_form, interior_nodes, node_sign, solve_multiplier


def test_defining_equation_against_direct_form(ellipse_state):
    # the assembled per-node systems against a direct edge-by-edge evaluation of b_h
    _, st = ellipse_state
    sol = st.solution
    mf = solve_multiplier(sol)
    rng = np.random.default_rng(3)
    c = sol.system.data.coeffs
    for _ in range(3):
        v = rng.normal(size=(2, sol.mesh.n_triangles, 3)) * sol.cut.tri_in[:, :, None]
        lhs = b_form(mf.theta, sol.cut, c, v)
        rhs = mf.rhs_slot @ v.ravel()
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))
    assert mf.residual < 1e-12


def test_theta_defined_exactly_on_active_edges(ellipse_state):
    _, st = ellipse_state
    mf = solve_multiplier(st.solution)
    for i in (0, 1):
        on = st.cut.edge_in[i]
        assert np.isfinite(mf.theta[i, on]).all()
        assert np.isnan(mf.theta[i, ~on]).all()


def test_patch_multiplier_vanishes(contrast_patch_run):
    _, st = contrast_patch_run
    mf = solve_multiplier(st.solution)
    assert np.nanmax(np.abs(mf.theta)) < 1e-10


def test_node_sign_antisymmetric(ellipse_state):
    _, st = ellipse_state
    m = st.mesh
    e = np.arange(m.n_edges)
    s0 = node_sign(m, e, m.edges[:, 0])
    s1 = node_sign(m, e, m.edges[:, 1])
    assert np.all(s0 == -s1)


def test_interior_nodes(ellipse_state):
    _, st = ellipse_state
    cut = st.cut
    for i in (1, 2):
        nodes = interior_nodes(cut, i)
        assert cut.vert_in[i - 1][nodes].all()
        assert not st.mesh.boundary_vertices[nodes].any() if hasattr(st.mesh, "boundary_vertices") else True
