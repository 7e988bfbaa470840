from dataclasses import replace
from math import factorial

import numpy as np
import pytest
import scipy.sparse as sp

from otmesh.errors import NumericFailureError
from otmesh.fem.assembly import (
    assemble_functional,
    assemble_mass,
    assemble_mixed_divergence,
    assemble_stiffness,
    assembler_for,
)
from otmesh.fem.elements import element
from otmesh.fem.geometry import tabulate_geometry
from otmesh.fem.quadrature import quad_rule, rule_for, triangle_rule
from otmesh.fem.spaces import Field, scalar_space, tensor_space, vector_space
from otmesh.mesh import build_cubed_sphere, build_icosahedral, build_periodic_plane
from otmesh.monitor import ring
from otmesh.sphere import tangential_fixup

ELEMENTS = [("quad", 1), ("quad", 2), ("triangle", 1), ("triangle", 2)]


@pytest.mark.invariant
@pytest.mark.parametrize("shape,degree", ELEMENTS)
def test_partition_of_unity(shape, degree, rng):
    pts = rng.random((20, 2))
    if shape == "triangle":
        pts[pts.sum(axis=1) > 1] = 1 - pts[pts.sum(axis=1) > 1]
    vals, grads = element(shape, degree).tabulate(pts)
    assert np.max(np.abs(vals.sum(axis=1) - 1)) <= 1e-13
    assert np.max(np.abs(grads.sum(axis=1))) <= 1e-12


@pytest.mark.parametrize("shape,degree", ELEMENTS)
def test_nodal_basis(shape, degree):
    el = element(shape, degree)
    vals, _ = el.tabulate(el.nodes)
    assert np.allclose(vals, np.eye(el.n_basis), atol=1e-14)


@pytest.mark.invariant
def test_quad_rule_exactness():
    r = quad_rule(8)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(r.weights > 0)
    for a in range(9):
        for b in range(9):
            exact = 1.0 / ((a + 1) * (b + 1))
            got = np.sum(r.weights * r.points[:, 0] ** a * r.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-12 * exact


@pytest.mark.invariant
def test_triangle_rule_exactness():
    r = triangle_rule(8)
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.all(r.weights > 0)
    for a in range(9):
        for b in range(9 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = np.sum(r.weights * r.points[:, 0] ** a * r.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-12 * exact


class TestGeometry:
    def test_affine_cell(self):
        m = build_periodic_plane(2)
        g = tabulate_geometry(m, rule_for("quad"), 3)
        assert np.allclose(g.scale, 0.25, rtol=1e-14)
        assert g.normal is None

    def test_icosahedron_area(self):
        m = build_icosahedral(0)
        edge = 4.0 / np.sqrt(10.0 + 2.0 * np.sqrt(5.0))
        exact = 20 * np.sqrt(3.0) / 4.0 * edge**2
        total = sum(np.sum(tabulate_geometry(m, rule_for("triangle"), c).scale
                           * rule_for("triangle").weights) for c in range(m.n_cells))
        assert total == pytest.approx(exact, rel=1e-12)
        assert total == pytest.approx(9.5746, abs=1e-4)

    def test_cubed_positive_scale(self):
        m = build_cubed_sphere(5, 2)
        geo = assembler_for(m).geo
        assert np.all(geo.scale > 0)
        assert np.allclose(np.linalg.norm(geo.normal, axis=-1), np.linalg.norm(geo.points, axis=-1))

    def test_bad_index(self, plane8):
        with pytest.raises(IndexError):
            tabulate_geometry(plane8, rule_for("quad"), plane8.n_cells)

    @pytest.mark.invariant
    @pytest.mark.parametrize("builder", [lambda: build_cubed_sphere(3, 2), lambda: build_icosahedral(1, 2)])
    def test_surface_gradient_of_linear_function(self, builder):
        # the interpolant of a . x is a . X(xi) exactly, so its surface gradient
        # is the projection of a onto the tangent plane of the discrete surface
        m = builder()
        V = scalar_space(m, 2)
        asm = assembler_for(m)
        a = np.array([0.3, -1.2, 0.7])
        g = asm.grads(V, V.node_coords() @ a)
        J = asm.geo.jacobian
        P = np.einsum("cqdk,cqek->cqde", asm.geo.pullback, J)
        assert np.max(np.abs(g - P @ a)) <= 1e-10


class TestMass:
    def test_total(self, plane8):
        M = assemble_mass(scalar_space(plane8, 2))
        assert M.sum() == pytest.approx(1.0, rel=1e-13)

    def test_tensor_components(self, plane8):
        S = tensor_space(plane8, 2)
        asm = assembler_for(plane8)
        ones = np.ones(S.size)
        assert ones @ asm.integrate_test(S, np.ones((plane8.n_cells, asm.rule.n_points, 2, 2))) == \
            pytest.approx(4.0, rel=1e-13)

    @pytest.mark.parametrize("mesh", ["plane8", "cubed4", "ico2"])
    def test_symmetric_positive(self, mesh, request, rng):
        M = assemble_mass(scalar_space(request.getfixturevalue(mesh), 2))
        assert abs(M - M.T).max() <= 1e-14 * abs(M).max()
        X = rng.standard_normal((M.shape[0], 100))
        assert np.all(np.einsum("ij,ij->j", X, M @ X) > 0)

    def test_row_sums_are_lumped(self, cubed4):
        V = scalar_space(cubed4, 2)
        M = assemble_mass(V)
        lumped = assembler_for(cubed4).integrate_test(V, np.ones_like(assembler_for(cubed4).dx))
        assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), lumped, rtol=1e-12)


class TestStiffness:
    @pytest.mark.invariant
    @pytest.mark.parametrize("mesh", ["plane8", "cubed4", "ico2"])
    def test_constant_nullspace(self, mesh, request):
        K = assemble_stiffness(scalar_space(request.getfixturevalue(mesh), 2))
        assert np.max(np.abs(K @ np.ones(K.shape[0]))) <= 1e-10
        assert abs(K - K.T).max() <= 1e-14

    def test_dirichlet_energy(self):
        V = scalar_space(build_periodic_plane(60), 2)
        phi = V.interpolate(lambda x: np.sin(2 * np.pi * x[:, 0]))
        energy = phi @ (assemble_stiffness(V) @ phi)
        assert energy == pytest.approx(2 * np.pi**2, rel=1e-4)

    def test_semidefinite(self, ico2, rng):
        K = assemble_stiffness(scalar_space(ico2, 2))
        X = rng.standard_normal((K.shape[0], 20))
        assert np.all(np.einsum("ij,ij->j", X, K @ X) >= -1e-12)


class TestMixedDivergence:
    def test_kills_constants(self, plane8):
        B = assemble_mixed_divergence(tensor_space(plane8), scalar_space(plane8))
        for blk in B:
            assert np.max(np.abs(blk @ np.ones(blk.shape[1]))) <= 1e-12

    def test_hessian_recovery_order(self):
        eps = 1e-2
        k = 2 * np.pi

        def hess(x):
            c0, c1 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
            s0, s1 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
            return eps * k**2 * np.stack([np.stack([-c0 * c1, s0 * s1], -1), np.stack([s0 * s1, -c0 * c1], -1)], -2)

        errs = []
        for n in (15, 30, 60):
            m = build_periodic_plane(n)
            V, S = scalar_space(m), tensor_space(m)
            asm = assembler_for(m)
            phi = V.interpolate(lambda x: eps * np.cos(k * x[:, 0]) * np.cos(k * x[:, 1]))
            sigma = asm.solve_mass(S, -(sp.vstack(assemble_mixed_divergence(S, V)) @ phi))
            diff = asm.values(S, sigma) - hess(asm.points)
            errs.append(np.sqrt(asm.integrate(np.sum(diff**2, axis=(-1, -2)))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.9), orders

    def test_sphere_identity_area_ratio(self):
        from otmesh.monitor import uniform
        from otmesh.sphere import SphereProblem

        p = SphereProblem(build_cubed_sphere(16, 2), uniform())
        phi = np.zeros(p.V.size)
        ev = p.evaluate(phi, p.sigma_from_phi(phi))
        assert np.max(np.abs(ev.ratio - 1.0)) <= 5e-3


class TestFunctional:
    def test_unit_integrand(self, plane8):
        assert assemble_functional(plane8, lambda a: np.ones_like(a.dx)) == pytest.approx(1.0, rel=1e-14)

    def test_ring_against_midpoint_oracle(self):
        m = build_periodic_plane(60)
        got = assemble_functional(m, lambda a: ring()(a.points))
        h = 1.0 / 400
        x = (np.arange(400) + 0.5) * h
        X, Y = np.meshgrid(x, x)
        oracle = np.sum(ring()(np.stack([X, Y], -1))) * h * h
        assert got == pytest.approx(oracle, abs=1e-6)

    def test_nan_names_cell(self, plane8):
        def f(a):
            v = np.ones_like(a.dx)
            v[5, 2] = np.nan
            return v

        with pytest.raises(NumericFailureError) as info:
            assemble_functional(plane8, f)
        assert info.value.cell == 5 and "cell 5" in str(info.value)

    def test_vector_mode(self, plane8):
        V = scalar_space(plane8, 2)
        r = assemble_functional(plane8, lambda a: np.ones_like(a.dx), V)
        assert r.shape == (V.size,) and r.sum() == pytest.approx(1.0, rel=1e-13)


class TestProjection:
    def test_identity_on_space(self, cubed4, rng):
        V = vector_space(cubed4, 2)
        asm = assembler_for(cubed4)
        c = rng.standard_normal(V.size)
        out = asm.project_l2(asm.values(V, c), V)
        assert np.max(np.abs(out.coefficients - c)) <= 1e-10

    def test_gradient_projection_converges(self):
        errs = []
        for n in (10, 20, 40):
            m = build_periodic_plane(n)
            V, W = scalar_space(m, 2), vector_space(m, 1)
            asm = assembler_for(m)
            phi = V.interpolate(lambda x: np.sin(2 * np.pi * x[:, 0]))
            w = asm.project_l2(asm.grads(V, phi), W).components()
            exact = 2 * np.pi * np.cos(2 * np.pi * m.vertex_coords[:, 0])
            errs.append(np.max(np.abs(w[0] - exact)) + np.max(np.abs(w[1])))
        rates = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(rates >= 1.9), rates

    def test_tangent_field_fixup(self, cubed4, rng):
        V = vector_space(cubed4, 2)
        asm = assembler_for(cubed4)
        xi = asm.points
        w = tangential_fixup(rng.standard_normal(xi.shape), xi)
        out = asm.project_l2(w, V).components().T
        nodes = V.node_coords()
        fixed = tangential_fixup(out, nodes)
        assert np.max(np.abs(np.einsum("ij,ij->i", fixed, nodes))) <= 1e-15 * np.max(np.abs(out))


@pytest.mark.invariant
def test_assembly_invariant_under_cell_order(rng):
    m = build_cubed_sphere(3, 2)
    perm = rng.permutation(m.n_cells)
    mp = replace(m, cells=m.cells[perm], cell_edges=m.cell_edges[perm], _cache={})
    V, Vp = scalar_space(m, 2), scalar_space(mp, 2)
    # cell-interior dofs follow the cell numbering; map them back before comparing
    q = np.empty(V.size, dtype=int)
    q[Vp.dof_map] = V.dof_map[perm]
    for fn in (assemble_mass, assemble_stiffness):
        A = fn(V)
        B = fn(Vp)
        assert abs(A[q][:, q] - B).max() <= 1e-13 * abs(A).max()


def test_field_length_checked(plane8):
    from otmesh.errors import ShapeMismatchError

    with pytest.raises(ShapeMismatchError):
        Field(scalar_space(plane8, 2), np.zeros(3))


@pytest.mark.invariant
def test_dof_map_continuity(ico2):
    # shared nodes get the same global index: node coordinates agree from every cell
    V = scalar_space(ico2, 2)
    el = element("triangle", 2)
    vals, _ = element("triangle", 2).tabulate(el.nodes)
    X = np.einsum("an,cnd->cad", vals, ico2.cell_coords())
    ref = np.zeros((V.n_dofs, 3))
    ref[V.dof_map.ravel()] = X.reshape(-1, 3)
    assert np.allclose(ref[V.dof_map], X, atol=1e-14)
    assert V.dof_map.min() == 0 and V.dof_map.max() == V.n_dofs - 1
