import numpy as np
import pytest

from otmesh import _kernels as K
from otmesh.errors import ConvexityLossError, DivergenceError
from otmesh.fem.spaces import Field
from otmesh.mesh import build_periodic_plane
from otmesh.monitor import bell, ring, uniform
from otmesh.plane import (
    PlaneProblem,
    assemble_approx_jacobian,
    assemble_residual,
    compute_theta,
    initial_state,
    recover_coordinates,
    relaxation_step,
)
from otmesh.solver import NonlinearConfig, SolverState, quasi_newton_solve, relaxation_solve


@pytest.fixture(scope="module")
def ring12():
    return PlaneProblem(build_periodic_plane(12), ring())


@pytest.fixture(scope="module")
def ring30_result():
    p = PlaneProblem(build_periodic_plane(30), ring())
    return p, relaxation_solve(p, None, NonlinearConfig("relaxation", dt=0.1))


def state_from_phi(p, phi):
    return SolverState(Field(p.V, phi), Field(p.S, p.sigma_from_phi(phi)))


def smooth_phi(p, eps, rng=None):
    """A small smooth potential; random Fourier coefficients when ``rng`` is given."""
    a = rng.standard_normal(4) if rng is not None else np.array([1.0, 0.5, -0.3, 0.2])

    def f(x):
        k = 2 * np.pi
        return eps * (a[0] * np.sin(k * x[:, 0]) + a[1] * np.cos(k * x[:, 1])
                      + a[2] * np.sin(k * (x[:, 0] + x[:, 1])) + a[3] * np.cos(2 * k * x[:, 0]))

    return p.gauge(p.V.interpolate(f))


def frozen_residual(p, ev, phi, sigma):
    """Residual with monitor and normalisation frozen at ``ev``."""
    A = p.asm.values(p.S, sigma) + np.eye(2)
    det, _ = K.det_adj2(A)
    F_v = p.asm.integrate_test(p.V, ev.m_q * det - ev.theta)
    s = sigma.reshape(p.S.ncomp, -1)
    F_tau = np.concatenate([p.M @ s[k] + p.B[k] @ phi for k in range(4)])
    return np.concatenate([F_v, F_tau])


class TestRecoverCoordinates:
    def test_zero(self, plane8):
        from otmesh.fem.spaces import scalar_space

        x = recover_coordinates(Field(scalar_space(plane8, 2), np.zeros(scalar_space(plane8, 2).size)), plane8)
        assert np.array_equal(x, plane8.vertex_coords)

    def test_constant(self, ring12):
        x = ring12.recover_coordinates(np.full(ring12.V.size, 3.7))
        assert np.max(np.abs(x - ring12.xi)) <= 1e-13

    def test_sine(self):
        eps = 1e-3
        errs = []
        for n in (10, 20, 40):
            p = PlaneProblem(build_periodic_plane(n), uniform())
            phi = p.V.interpolate(lambda x: eps * np.sin(2 * np.pi * x[:, 0]) / (2 * np.pi))
            d = p.recover_coordinates(phi) - p.xi
            errs.append(np.max(np.abs(d[:, 0] - eps * np.cos(2 * np.pi * p.xi[:, 0]))) / eps)
            assert np.max(np.abs(d[:, 1])) <= 1e-15
        rates = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(rates >= 1.9) and errs[2] < 5e-3


class TestTheta:
    def test_uniform_zero(self, ring12):
        m = Field(ring12.W1, np.ones(ring12.W1.size))
        assert compute_theta(m, Field(ring12.S, np.zeros(ring12.S.size))) == pytest.approx(1.0, abs=1e-14)

    def test_transport_preserves_measure(self):
        p = PlaneProblem(build_periodic_plane(30), uniform())
        phi = smooth_phi(p, 0.01)
        sig = Field(p.S, p.sigma_from_phi(phi))
        theta = compute_theta(Field(p.W1, np.ones(p.W1.size)), sig)
        assert theta == pytest.approx(1.0, abs=1e-8)
        assert np.max(np.abs(sig.coefficients)) > 0.1

    def test_ring_mean_against_midpoint_oracle(self):
        from otmesh.fem.spaces import scalar_space, tensor_space

        n = 200
        mesh = build_periodic_plane(n)
        W1, S = scalar_space(mesh, 1), tensor_space(mesh, 2)
        m = ring()(mesh.vertex_coords)
        theta = compute_theta(Field(W1, m), Field(S, np.zeros(S.size)))
        # the bilinear interpolant integrates like the periodic trapezoid rule
        assert theta == pytest.approx(m.mean(), abs=1e-13)
        x = (np.arange(400) + 0.5) / 400
        oracle = np.mean(ring()(np.stack(np.meshgrid(x, x), -1)))
        assert theta == pytest.approx(oracle, abs=1e-6)

    def test_nonpositive(self, ring12):
        with pytest.raises(ConvexityLossError):
            compute_theta(Field(ring12.W1, np.ones(ring12.W1.size)), Field(ring12.S, np.full(ring12.S.size, -1.0)))


class TestResidual:
    def test_uniform_zero_state(self):
        p = PlaneProblem(build_periodic_plane(10), uniform())
        F_v, F_tau = assemble_residual(p, initial_state(p))
        assert np.max(np.abs(F_v)) <= 1e-15 and np.max(np.abs(F_tau)) == 0.0

    def test_ring_zero_state(self, ring12):
        F_v, F_tau = assemble_residual(ring12, initial_state(ring12))
        m = ring()(ring12.xi)
        mean = ring12.asm.integrate(ring12.asm.values(ring12.W1, m))
        expected = ring12.asm.mass(ring12.V, ring12.W1) @ m - mean * ring12.lumped
        assert np.max(np.abs(F_v - expected)) <= 1e-13 * np.max(np.abs(expected))
        assert np.max(np.abs(F_tau)) <= 1e-14

    def test_converged_ring(self, ring30_result):
        p, res = ring30_result
        ev = p.evaluate(res.state.phi.coefficients, res.state.sigma.coefficients)
        assert p.normalised(ev) <= 1e-8


class TestJacobian:
    def test_trace_form_at_identity(self):
        p = PlaneProblem(build_periodic_plane(6), uniform())
        J = assemble_approx_jacobian(p, initial_state(p))
        assert J.blocks[0][0] is None
        d = np.random.default_rng(3).standard_normal(p.S.size).reshape(4, -1)
        got = J.blocks[0][1] @ d.ravel()
        assert np.allclose(got, p.M @ (d[0] + d[3]), atol=1e-14)

    def test_linear_blocks_fixed(self, ring12, rng):
        s = state_from_phi(ring12, smooth_phi(ring12, 0.01, rng))
        J = assemble_approx_jacobian(ring12, s)
        assert (J.blocks[1][0] != ring12.B_stack).nnz == 0
        assert (J.blocks[1][1] != ring12.mass_blockdiag()).nnz == 0

    @pytest.mark.invariant
    @pytest.mark.parametrize("seed", range(5))
    def test_central_differences(self, ring12, seed):
        rng = np.random.default_rng(seed)
        phi = smooth_phi(ring12, 0.005, rng)
        sigma = ring12.sigma_from_phi(phi) + 0.01 * rng.standard_normal(ring12.S.size)
        ev = ring12.evaluate(phi, sigma)
        J = ring12.jacobian(phi, sigma, ev)
        w = rng.standard_normal(J.shape[0])
        eps = 1e-6
        wp, ws = w[: ring12.V.size], w[ring12.V.size:]
        fd = (frozen_residual(ring12, ev, phi + eps * wp, sigma + eps * ws)
              - frozen_residual(ring12, ev, phi - eps * wp, sigma - eps * ws)) / (2 * eps)
        Jw = J.matvec(w)
        assert np.linalg.norm(Jw - fd) <= 1e-6 * np.linalg.norm(Jw)


class TestRelaxation:
    @pytest.mark.invariant
    def test_uniform_fixed_point(self):
        p = PlaneProblem(build_periodic_plane(10), uniform())
        s0 = initial_state(p)
        s1 = relaxation_step(p, s0, 0.1)
        assert np.max(np.abs(s1.phi.coefficients)) <= 1e-15
        assert np.max(np.abs(s1.sigma.coefficients)) <= 1e-15
        res = relaxation_solve(p, None, NonlinearConfig("relaxation"))
        assert res.converged and res.iterations == 0

    def test_ring_decreases_first_steps(self):
        p = PlaneProblem(build_periodic_plane(60), ring())
        res = []
        s = initial_state(p)
        for _ in range(11):
            res.append(p.normalised(p.evaluate(s.phi.coefficients, s.sigma.coefficients)))
            s = relaxation_step(p, s, 0.1)
        assert np.all(np.diff(res) < 0)

    def test_huge_step_diverges(self):
        p = PlaneProblem(build_periodic_plane(30), ring())
        with pytest.raises(DivergenceError) as info:
            relaxation_solve(p, None, NonlinearConfig("relaxation", dt=10.0, max_iters=500))
        assert info.value.history and info.value.iteration >= info.value.history[-1].iteration

    def test_linear_convergence(self, ring30_result):
        _, res = ring30_result
        r = np.log(res.residuals[-50:])
        it = np.arange(len(r))
        fit = np.polyfit(it, r, 1, full=True)
        ss_res = fit[1][0]
        r2 = 1 - ss_res / np.sum((r - r.mean()) ** 2)
        assert fit[0][0] < 0 and r2 >= 0.99

    def test_no_tangling(self, ring30_result):
        _, res = ring30_result
        assert res.converged
        assert all(rec.min_area_ratio > 0 for rec in res.history)

    def test_cv_nonzero_plateau(self, ring30_result):
        _, res = ring30_result
        cv = [r.equidistribution_cv for r in res.history]
        assert cv[-1] > 0 and cv[-1] < 0.2 * cv[0]
        assert abs(cv[-1] - cv[-10]) <= 1e-6 * cv[-1]

    def test_state_invariants(self, ring30_result):
        p, res = ring30_result
        assert res.state.theta > 0
        assert abs(p.lumped @ res.state.phi.coefficients) <= 1e-12
        assert np.allclose(res.state.physical_coords, p.recover_coordinates(res.state.phi.coefficients))


class TestQuasiNewton:
    def test_uniform_zero_iterations(self):
        p = PlaneProblem(build_periodic_plane(10), uniform())
        res = quasi_newton_solve(p, None, NonlinearConfig("quasi_newton"))
        assert res.converged and res.iterations == 0

    def test_ring_small(self):
        p = PlaneProblem(build_periodic_plane(24), ring())
        res = quasi_newton_solve(p, None, NonlinearConfig("quasi_newton"))
        assert res.converged and res.history[-1].residual <= 1e-8
        steps = [r.step_length for r in res.history[1:]]
        assert all(1e-3 <= s <= 1.0 for s in steps)
        assert res.history[0].step_length is None

    def test_bell_small(self):
        p = PlaneProblem(build_periodic_plane(24), bell())
        res = quasi_newton_solve(p, None, NonlinearConfig("quasi_newton"))
        assert res.converged and res.history[-1].min_area_ratio > 0


@pytest.mark.invariant
def test_gauge_invariance(ring12, rng):
    phi = smooth_phi(ring12, 0.01, rng)
    sigma = ring12.sigma_from_phi(phi)
    a = ring12.evaluate(phi, sigma)
    b = ring12.evaluate(phi + 2.5, sigma)
    assert np.max(np.abs(a.F_v - b.F_v)) <= 1e-12
    assert np.max(np.abs(a.F_tau - b.F_tau)) <= 1e-12
    assert np.max(np.abs(a.coords - b.coords)) <= 1e-12


@pytest.mark.invariant
def test_uniform_fixed_point_both_solvers():
    p = PlaneProblem(build_periodic_plane(6), uniform())
    for method in ("relaxation", "quasi_newton"):
        res = relaxation_solve(p) if method == "relaxation" else quasi_newton_solve(p)
        assert res.iterations == 0
        assert np.array_equal(res.state.physical_coords, p.xi)


def test_translation_equivariance():
    n, shift = 30, 6
    delta = shift / n
    out = []
    for c in (0.5, 0.5 + delta):
        p = PlaneProblem(build_periodic_plane(n), ring((c, c)))
        out.append(quasi_newton_solve(p, None, NonlinearConfig("quasi_newton", tol=1e-10)).state.physical_coords)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    src = (j * n + i).ravel()
    dst = (((j + shift) % n) * n + (i + shift) % n).ravel()
    d = out[1][dst] - out[0][src] - delta
    d -= np.round(d)
    assert np.max(np.abs(d)) <= 1e-6


def test_rejects_sphere_mesh(cubed4):
    with pytest.raises(ValueError):
        PlaneProblem(cubed4, ring())
