"""Optimal-transport mesh generation on the sphere of radius ``R``.

The physical mesh is ``x = exp(grad phi) xi``: the computational point is moved
along the great circle in the direction of the surface gradient by a geodesic
distance ``|grad phi|``. The tensor unknown ``sigma`` is a 3x3 ambient-component
stand-in for the gradient of that map, and the area ratio is

    r = det(sigma P + (x / R) (xi / R)^T),   P = I - xi xi^T / R^2.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .diagnostics import exact_vertices
from .errors import DomainError
from .fem.assembly import check_finite
from .linalg import BlockOperator
from .mesh import MeshData
from .monitor import MonitorSpec, axisymmetric, eval_monitor
from .plane import Evaluation, MongeAmpereProblem
from .fem.spaces import Field, scalar_space
from .solver import NonlinearConfig, SolverState, quasi_newton_solve, relaxation_solve

SERIES_THRESHOLD = 1e-8


def exp_map(xi, w, R=1.0, check=True):
    """Move ``xi`` (on the sphere) along the geodesic with initial velocity ``w``.

    ``x = cos(|w|/R) xi + R sin(|w|/R) w/|w|``, with the limit ``xi + w`` for
    ``|w|/R < 1e-8``; the result is rescaled onto the sphere.
    Works on single points or stacks of shape (..., 3).
    """
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = np.linalg.norm(w, axis=-1)
    if check:
        dot = np.abs(np.einsum("...i,...i->...", xi, w))
        if np.any(dot > 1e-10 * R * wn):
            raise DomainError("displacement is not tangent to the sphere")
    a = wn / R
    small = a < SERIES_THRESHOLD
    safe = np.where(small, 1.0, wn)
    x = np.where(
        small[..., None],
        xi + w,
        np.cos(a)[..., None] * xi + (R * np.sin(a) / safe)[..., None] * w,
    )
    return x * (R / np.linalg.norm(x, axis=-1))[..., None]


def tangential_fixup(w, xi, R=1.0):
    """Remove the normal component: ``w - (w . xi / R^2) xi`` nodewise."""
    return w - (np.einsum("...i,...i->...", w, xi) / R**2)[..., None] * xi


def area_ratio(sigma, grad_phi, xi, R=1.0):
    """``det(sigma P_xi + (x/R) (xi/R)^T)`` with ``x`` the exponential-map image."""
    sigma = np.asarray(sigma, float)
    xi = np.asarray(xi, float)
    x, _ = K.expmap_points(xi, np.asarray(grad_phi, float), R)
    return K.sphere_det_adj(sigma, x, xi, R)[0]


class SphereProblem(MongeAmpereProblem):
    def __init__(self, mesh: MeshData, monitor: MonitorSpec, oracle: bool = False):
        if not mesh.is_sphere:
            raise ValueError("SphereProblem needs a sphere mesh")
        super().__init__(mesh, monitor)
        self.R = mesh.radius
        self.Cn = scalar_space(mesh, mesh.coord_degree).with_shape((3,))
        self.xi_nodes = self.Cn.node_coords()
        self.xi_q = self.asm.points
        self.P_q = np.eye(3) - np.einsum("cqi,cqj->cqij", self.xi_q, self.xi_q) / self.R**2
        self.oracle_vertices = None
        if oracle:
            self.oracle_vertices = exact_vertices(axisymmetric(monitor), mesh)

    @property
    def H(self) -> float:
        return self.R

    def prepare(self, method: str) -> None:
        super().prepare(method)
        self.asm.test_grad_operators(self.V)

    def _div_pairing(self, x):
        """``<div tau, x>`` for every tensor basis function ``tau`` (row-wise divergence).

        Component ``(i, j)`` of the result is ``int x_i (grad N_a)_j``.
        """
        check_finite(x, "mapped position")
        xs = x.reshape(-1, 3)
        Z = [G @ xs for G in self.asm.test_grad_operators(self.V)]
        return np.concatenate([Z[j][:, i] for i in range(3) for j in range(3)])

    def pointwise_map(self, phi):
        g = self.asm.grads(self.V, phi)
        x, D = K.expmap_points(self.xi_q, g, self.R)
        return g, x, D

    def sigma_from_phi(self, phi) -> np.ndarray:
        _, x, _ = self.pointwise_map(phi)
        return self.asm.solve_mass(self.S, -self._div_pairing(x))

    def recover_coordinates(self, phi) -> np.ndarray:
        """Project the surface gradient to the coordinate space, make it tangent, exponentiate."""
        g = self.asm.grads(self.V, phi)
        w = self.asm.project_l2(g, self.Cn).coefficients.reshape(3, -1).T
        w = tangential_fixup(w, self.xi_nodes, self.R)
        return exp_map(self.xi_nodes, w, self.R, check=False)

    def evaluate(self, phi, sigma) -> Evaluation:
        g, x, D = self.pointwise_map(phi)
        coords = self.recover_coordinates(phi)
        m_nodes = eval_monitor(self.monitor, coords[: self.mesh.n_vertices])
        m_q = self.asm.values(self.W1, m_nodes)
        sq = self.asm.values(self.S, sigma)
        det, adj = K.sphere_det_adj(sq, x, self.xi_q, self.R)
        theta = self.theta_of(m_q, det)
        F_v = self.residual_v(m_q, det, theta)
        s = np.asarray(sigma).reshape(self.S.ncomp, -1)
        F_tau = np.concatenate([self.M @ s[k] for k in range(self.S.ncomp)]) + self._div_pairing(x)
        return Evaluation(F_v, F_tau, theta, coords, m_nodes, m_q, det, adj, {"D": D, "x": x})

    def jacobian(self, phi, sigma, ev: Evaluation) -> BlockOperator:
        """Linearisation with the monitor and normalisation constant frozen.

        d det(A)[dA] = tr(adj(A) dA) with dA = dsigma P + (D grad dphi / R)(xi / R)^T.
        """
        D = ev.extra["D"]
        R = self.R
        u = np.einsum("cqji,cqj->cqi", ev.adj, self.xi_q)  # adj^T xi
        vec = ev.m_q[..., None] * np.einsum("cqi,cqid->cqd", u, D) / R**2
        J00 = self.asm.value_grad(self.V, self.V, vec)
        G = np.einsum("cqji,cqjk->cqik", ev.adj, self.P_q)  # adj^T P
        J01 = sp.hstack([self.asm.mass(self.V, self.V, coeff=ev.m_q * G[..., i, k])
                         for i in range(3) for k in range(3)], format="csr")
        gg = self.asm.grad_grad_blocks(self.V, self.V, coeff=D)
        J10 = sp.vstack([gg[j][i] for i in range(3) for j in range(3)], format="csr")
        return BlockOperator([[J00, J01], [J10, self.mass_blockdiag()]],
                             (self.V.size, self.S.size), self.nullspace)


def recover_sphere_coordinates(phi: Field, mesh: MeshData) -> np.ndarray:
    from .monitor import uniform

    key = ("sphere_problem", None)
    if key not in mesh._cache:
        mesh._cache[key] = SphereProblem(mesh, uniform(mesh.radius))
    return mesh._cache[key].recover_coordinates(phi.coefficients)


def sphere_relaxation_step(problem: SphereProblem, state: SolverState, dt: float) -> SolverState:
    from .plane import relaxation_step

    return relaxation_step(problem, state, dt)


def assemble_sphere_residual(problem: SphereProblem, state: SolverState):
    ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
    return ev.F_v, ev.F_tau


def assemble_sphere_jacobian(problem: SphereProblem, state: SolverState) -> BlockOperator:
    ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
    return problem.jacobian(state.phi.coefficients, state.sigma.coefficients, ev)


def solve_relaxation(mesh, monitor, dt=2.0, tol=1e-8, max_iters=2000, oracle=False, state=None):
    problem = SphereProblem(mesh, monitor, oracle=oracle)
    return relaxation_solve(problem, state, NonlinearConfig("relaxation", dt=dt, tol=tol, max_iters=max_iters))


def quasi_newton(mesh, monitor, tol=1e-8, max_iters=200, oracle=False, state=None, **kw):
    problem = SphereProblem(mesh, monitor, oracle=oracle)
    return quasi_newton_solve(problem, state, NonlinearConfig("quasi_newton", tol=tol, max_iters=max_iters, **kw))
