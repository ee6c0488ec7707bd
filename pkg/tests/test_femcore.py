import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kellersegel.femcore import (FieldError, P1Space, consistent_mass, interpolate, lumped_mass,
                                 stiffness, vertex_quadrature, weighted_stiffness)
from kellersegel.mesh import Mesh, build_uniform_rect_mesh, refine
from oracles import barycentric, integrate_over_mesh, p1_function, triangle_gauss

UNIT_TRI = Mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
TRI_PTS = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def square(n):
    return build_uniform_rect_mesh((0, 1), (0, 1), n, n)


def test_vertex_quadrature_examples():
    assert vertex_quadrature(0.5, [1, 1, 1]) == pytest.approx(0.5)
    exact_x = triangle_gauss(lambda x, y: x, *TRI_PTS)
    assert exact_x == pytest.approx(1 / 6)
    assert vertex_quadrature(0.5, [0, 1, 0]) == pytest.approx(exact_x, abs=1e-15)
    exact_x2 = triangle_gauss(lambda x, y: x ** 2, *TRI_PTS)
    assert exact_x2 == pytest.approx(1 / 12)
    assert vertex_quadrature(0.5, [0, 1, 0]) - exact_x2 == pytest.approx(1 / 12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), n=st.integers(1, 6))
def test_vertex_quadrature_exact_for_affine(a, b, c, n):
    m = square(n)
    f = lambda x, y: a * x + b * y + c  # noqa: E731
    total = sum(vertex_quadrature(A, f(*m.vertices[t].T)) for A, t in zip(m.areas, m.triangles))
    assert total == pytest.approx(integrate_over_mesh(f, m.vertices, m.triangles, order=2), abs=1e-12)


def test_lumped_mass_two_triangles():
    S = P1Space(square(1))
    # vertices 0 and 3 lie on the shared diagonal
    np.testing.assert_allclose(S.lumped, [1 / 3, 1 / 6, 1 / 6, 1 / 3], rtol=1e-15)
    assert S.lumped.sum() == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_allclose(lumped_mass(UNIT_TRI).diagonal(), [1 / 6] * 3)


def test_inner_product_examples():
    S = P1Space(square(1))
    one = np.ones(4)
    assert S.inner(one, one) == pytest.approx(1.0)
    u = np.array([0.3, -1.2, 2.0, 0.7])
    assert S.inner(u, one) == pytest.approx(np.sum(S.lumped * u))
    hat = np.array([1.0, 0, 0, 0])
    assert S.inner(hat, hat) == pytest.approx(1 / 3)
    with pytest.raises(FieldError):
        S.inner(np.ones(5), one)


def _exact_local_matrices(pts):
    lam = barycentric(*pts)
    M = np.array([[triangle_gauss(lambda x, y: lam[i](x, y) * lam[j](x, y), *pts) for j in range(3)] for i in range(3)])
    P = np.array([[*p, 1.0] for p in pts]).T
    C = np.linalg.inv(P)
    grads = C[:, :2]
    area = triangle_gauss(lambda x, y: np.ones_like(x), *pts)
    K = area * grads @ grads.T
    return M, K


def test_local_matrices_unit_triangle():
    M_exact, K_exact = _exact_local_matrices(TRI_PTS)
    np.testing.assert_allclose(M_exact, np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=1e-15)
    np.testing.assert_allclose(K_exact, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)
    np.testing.assert_allclose(consistent_mass(UNIT_TRI).toarray(), M_exact, atol=1e-15)
    np.testing.assert_allclose(stiffness(UNIT_TRI).toarray(), K_exact, atol=1e-15)


def test_global_assembly_against_quadrature_oracle():
    m = build_uniform_rect_mesh((0, 2), (-1, 0.5), 3, 2)
    n = m.n_vertices
    M_ref = np.zeros((n, n))
    K_ref = np.zeros((n, n))
    for t in m.triangles:
        Me, Ke = _exact_local_matrices([tuple(p) for p in m.vertices[t]])
        M_ref[np.ix_(t, t)] += Me
        K_ref[np.ix_(t, t)] += Ke
    np.testing.assert_allclose(consistent_mass(m).toarray(), M_ref, atol=1e-14)
    np.testing.assert_allclose(stiffness(m).toarray(), K_ref, atol=1e-13)


def test_matrix_properties():
    m = square(5)
    S = P1Space(m)
    rng = np.random.default_rng(0)
    M, K = S.mass, S.stiffness
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), S.lumped, atol=1e-14)
    np.testing.assert_allclose(K @ np.ones(S.n), 0.0, atol=1e-14)
    assert abs(M - M.T).max() <= 1e-14 and abs(K - K.T).max() <= 1e-14
    for _ in range(10):
        x = rng.standard_normal(S.n)
        assert x @ (M @ x) > 0
        assert x @ (K @ x) >= -1e-12
    # kernel of K is exactly the constants (one zero eigenvalue)
    ev = np.linalg.eigvalsh(K.toarray())
    assert abs(ev[0]) < 1e-12 and ev[1] > 1e-3
    # sparsity within the vertex adjacency graph plus diagonal
    adj = {tuple(sorted(e)) for t in m.triangles for e in [(t[0], t[1]), (t[1], t[2]), (t[0], t[2])]}
    rows, cols = K.nonzero()
    assert all(r == c or (min(r, c), max(r, c)) in adj for r, c in zip(rows, cols))


def test_weighted_stiffness_examples():
    m = square(4)
    S = P1Space(m)
    K = S.stiffness.toarray()
    np.testing.assert_allclose(weighted_stiffness(m, np.ones(m.n_vertices)).toarray(), K, atol=1e-14)
    np.testing.assert_allclose(S.weighted_stiffness(np.full(S.n, 2.5)).toarray(), 2.5 * K, atol=1e-14)
    np.testing.assert_allclose(weighted_stiffness(UNIT_TRI, [3.0, 0.0, 0.0]).toarray(),
                               stiffness(UNIT_TRI).toarray(), atol=1e-15)
    with pytest.raises(FieldError):
        weighted_stiffness(m, np.ones(3))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 5))
def test_weighted_stiffness_matches_lumped_quadrature_oracle(seed, n):
    """Entry (i, j) is the vertex-quadrature of w grad(phi_i).grad(phi_j), summed over triangles."""
    m = square(n)
    rng = np.random.default_rng(seed)
    w1, w2 = rng.random(m.n_vertices), rng.random(m.n_vertices)
    S = P1Space(m)
    A = S.weighted_stiffness(w1).toarray()
    ref = np.zeros_like(A)
    for t, area, g in zip(m.triangles, m.areas, m.basis_gradients):
        for a in range(3):
            for b in range(3):
                ref[t[a], t[b]] += vertex_quadrature(area, w1[t] * (g[a] @ g[b]))
    np.testing.assert_allclose(A, ref, atol=1e-13)
    np.testing.assert_allclose(A, weighted_stiffness(m, w1).toarray(), atol=1e-14)
    # linearity in the weight, symmetry, PSD for nonnegative weights, zero row sums
    np.testing.assert_allclose(S.weighted_stiffness(w1 + 3 * w2).toarray(),
                               A + 3 * S.weighted_stiffness(w2).toarray(), atol=1e-13)
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    assert np.linalg.eigvalsh(A).min() > -1e-12
    np.testing.assert_allclose(A.sum(axis=1), 0, atol=1e-13)


def test_interpolation():
    m = square(2)
    np.testing.assert_array_equal(interpolate(m, lambda x, y: x), m.vertices[:, 0])
    np.testing.assert_array_equal(interpolate(m, lambda x, y: 0.0 * x), np.zeros(9))
    vals = interpolate(m, lambda x, y: x ** 2)
    assert set(np.round(vals, 12)) == {0.0, 0.25, 1.0}
    with pytest.raises(FieldError):
        with np.errstate(divide="ignore"):
            interpolate(m, lambda x, y: 1.0 / x)


def test_interpolation_error_is_second_order():
    errs = []
    for n in (2, 4, 8, 16):
        m = square(n)
        vals = interpolate(m, lambda x, y: x ** 2)
        err2 = sum(triangle_gauss(lambda x, y, f=f: (x ** 2 - f(x, y)) ** 2, *pts)
                   for pts, f in p1_function(m.vertices, m.triangles, vals))
        errs.append(np.sqrt(err2))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.02)


def test_norms():
    S = P1Space(square(4))
    one = np.ones(S.n)
    assert S.l2h_norm(one) == pytest.approx(1.0)
    assert S.h1_seminorm(one) == pytest.approx(0.0, abs=1e-7)
    x = S.interpolate(lambda x, y: x)
    assert S.h1_seminorm(x) == pytest.approx(1.0, rel=1e-14)
    u = np.random.default_rng(1).standard_normal(S.n)
    assert S.l2h_norm(-3.5 * u) == pytest.approx(3.5 * S.l2h_norm(u))


def test_gradient_norm_is_exact_for_p1():
    m = build_uniform_rect_mesh((0, 1), (0, 1), 3, 3)
    S = P1Space(m)
    u = np.random.default_rng(2).standard_normal(S.n)
    exact = sum(area * np.sum((u[t] @ g) ** 2) for t, area, g in zip(m.triangles, m.areas, m.basis_gradients))
    assert S.h1_seminorm(u) ** 2 == pytest.approx(exact, rel=1e-12)


def test_quadrature_error_examples():
    S = P1Space(square(1))
    hat = np.array([1.0, 0, 0, 0])
    M_dd = sum(triangle_gauss(lambda x, y, l=l: l(x, y) ** 2, *pts)
               for pts in ([(0, 0), (1, 0), (1, 1)], [(0, 0), (1, 1), (0, 1)])
               for l in [barycentric(*pts)[0]])
    assert S.quadrature_error(hat, hat) == pytest.approx(1 / 3 - M_dd, abs=1e-15)
    assert S.quadrature_error(hat, hat) == pytest.approx(1 / 6, abs=1e-15)
    S4 = P1Space(square(4))
    r = np.random.default_rng(3).standard_normal(S4.n)
    assert S4.quadrature_error(r, np.full(S4.n, 2.0)) == pytest.approx(0.0, abs=1e-14)


def test_quadrature_error_scales_like_h_squared():
    ratios = []
    m = square(2)
    for _ in range(4):
        S = P1Space(m)
        x = S.interpolate(lambda x, y: x)
        ratios.append(abs(S.quadrature_error(x, x)) / S.h1_seminorm(x) ** 2)
        m = refine(m)
    np.testing.assert_allclose(np.array(ratios[:-1]) / ratios[1:], 4.0, rtol=0.05)


def test_assembly_is_bitwise_reproducible():
    m = square(7)
    w = np.random.default_rng(4).random(m.n_vertices)
    a, b = P1Space(m).weighted_stiffness(w), P1Space(m).weighted_stiffness(w)
    assert np.array_equal(a.data, b.data) and np.array_equal(a.indices, b.indices)
