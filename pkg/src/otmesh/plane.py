"""Mesh-generation Monge-Ampere problem on the doubly periodic unit square.

Unknowns are a Q2 potential ``phi`` and a ``(Q2)^{2x2}`` tensor ``sigma``
standing in for its Hessian. The physical mesh is ``x = xi + grad phi`` with
the gradient L2-projected onto the vertex (Q1) space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .errors import ConvexityLossError
from .fem.assembly import assemble_mixed_divergence, assembler_for
from .fem.spaces import Field, scalar_space, tensor_space
from .linalg import BlockOperator, ConstantNullspace, PinnedSolver, make_riesz_preconditioner
from .mesh import MeshData
from .monitor import MonitorSpec, eval_monitor
from .solver import NonlinearConfig, SolverState, initial_state, quasi_newton_solve, relaxation_solve


@dataclass
class Evaluation:
    """Residual blocks and the intermediate quantities they were built from."""

    F_v: np.ndarray
    F_tau: np.ndarray
    theta: float
    coords: np.ndarray  # physical vertex positions (unwrapped on the plane)
    m_nodes: np.ndarray
    m_q: np.ndarray  # (C, Q)
    ratio: np.ndarray  # (C, Q) area ratio det(I + sigma) or its sphere analogue
    adj: np.ndarray  # adjugate of the determinant argument at quadrature points
    extra: dict | None = None


class MongeAmpereProblem:
    """State-independent operators shared by the plane and sphere problems."""

    def __init__(self, mesh: MeshData, monitor: MonitorSpec):
        self.mesh = mesh
        self.monitor = monitor
        self.asm = assembler_for(mesh)
        self.V = scalar_space(mesh, 2)
        self.S = tensor_space(mesh, 2)
        self.W1 = scalar_space(mesh, 1)
        self.M = self.asm.mass(self.V)
        self.K = self.asm.stiffness(self.V)
        self.lumped = np.asarray(self.M.sum(axis=1)).ravel()
        self.measure = float(self.lumped.sum())
        self.nullspace = ConstantNullspace(self.lumped, slice(0, self.V.size))
        self._poisson = None
        self._prec = None
        self._mass_blocks = None

    # -- shared pieces ---------------------------------------------------
    @property
    def H(self) -> float:
        return 1.0

    def gauge(self, phi):
        """Remove the lumped-mass weighted mean of the potential."""
        return self.nullspace.project(phi)

    def poisson_solve(self, rhs):
        if self._poisson is None:
            self._poisson = PinnedSolver(self.K, self.lumped)
        return self._poisson.solve(rhs)

    def preconditioner(self):
        if self._prec is None:
            self._prec = make_riesz_preconditioner(self.V, self.S, self.H, self.asm)
        return self._prec

    def prepare(self, method: str) -> None:
        """Build the factorisations a solve needs, ahead of the timed nonlinear loop."""
        self.asm.mass_solver(self.S)
        if method == "relaxation":
            self.poisson_solve(np.zeros(self.V.size))
        else:
            self.preconditioner()

    def release_solvers(self):
        """Drop cached factorisations (they dominate memory on fine meshes)."""
        self._poisson = None
        self._prec = None
        self.asm._solvers = {k: v for k, v in self.asm._solvers.items() if not str(k[0]).endswith("solver")}

    def mass_blockdiag(self):
        if self._mass_blocks is None:
            self._mass_blocks = sp.block_diag([self.M] * self.S.ncomp, format="csr")
        return self._mass_blocks

    def theta_of(self, m_q, ratio) -> float:
        theta = self.asm.integrate(m_q * ratio, "monitor-weighted area ratio") / self.measure
        if not theta > 0.0:
            raise ConvexityLossError(f"normalisation constant is not positive ({theta:.3e})")
        return theta

    def residual_v(self, m_q, ratio, theta):
        return self.asm.integrate_test(self.V, m_q * ratio - theta, "equidistribution residual")

    def normalised(self, ev: Evaluation) -> float:
        return float(np.linalg.norm(ev.F_v) / (ev.theta * np.linalg.norm(self.lumped)))

    def state(self, phi, sigma) -> SolverState:
        ev = self.evaluate(phi, sigma)
        return SolverState(Field(self.V, phi), Field(self.S, sigma), ev.theta, 0, ev.coords)


class PlaneProblem(MongeAmpereProblem):
    def __init__(self, mesh: MeshData, monitor: MonitorSpec):
        if mesh.is_sphere:
            raise ValueError("PlaneProblem needs a periodic plane mesh")
        super().__init__(mesh, monitor)
        self.B = assemble_mixed_divergence(self.S, self.V)
        self.B_stack = sp.vstack(self.B, format="csr")
        self.xi = mesh.vertex_coords.copy()

    def recover_coordinates(self, phi) -> np.ndarray:
        g = self.asm.grads(self.V, phi)
        w = self.asm.solve_mass(self.W1.with_shape((2,)), self.asm.integrate_test(self.W1.with_shape((2,)), g))
        return self.xi + w.reshape(2, -1).T

    def sigma_from_phi(self, phi) -> np.ndarray:
        return self.asm.solve_mass(self.S, -(self.B_stack @ phi))

    def evaluate(self, phi, sigma) -> Evaluation:
        coords = self.recover_coordinates(phi)
        m_nodes = eval_monitor(self.monitor, coords)
        m_q = self.asm.values(self.W1, m_nodes)
        A = self.asm.values(self.S, sigma) + np.eye(2)
        det, adj = K.det_adj2(A)
        theta = self.theta_of(m_q, det)
        F_v = self.residual_v(m_q, det, theta)
        s = np.asarray(sigma).reshape(self.S.ncomp, -1)
        F_tau = np.concatenate([self.M @ s[k] + self.B[k] @ phi for k in range(self.S.ncomp)])
        return Evaluation(F_v, F_tau, theta, coords, m_nodes, m_q, det, adj)

    def jacobian(self, phi, sigma, ev: Evaluation) -> BlockOperator:
        """Frozen-monitor linearisation; the (v, dphi) block is empty."""
        blocks = []
        for i in range(2):
            for j in range(2):
                # d det(A)[dA] = sum_ij adj(A)_ji dA_ij
                blocks.append(self.asm.mass(self.V, self.V, coeff=ev.m_q * ev.adj[..., j, i]))
        J01 = sp.hstack(blocks, format="csr")
        return BlockOperator([[None, J01], [self.B_stack, self.mass_blockdiag()]],
                             (self.V.size, self.S.size), self.nullspace)


# -- functional interface -------------------------------------------------

def recover_coordinates(phi: Field, mesh: MeshData) -> np.ndarray:
    """Physical vertex positions ``xi + P1-projection of grad phi`` (unwrapped)."""
    return _problem_for(mesh).recover_coordinates(phi.coefficients)


def compute_theta(m_field: Field, sigma: Field) -> float:
    mesh = sigma.space.mesh
    asm = assembler_for(mesh)
    m_q = asm.values(m_field.space, m_field.coefficients)
    det, _ = K.det_adj2(asm.values(sigma.space, sigma.coefficients) + np.eye(2))
    theta = asm.integrate(m_q * det) / asm.integrate(np.ones_like(det))
    if not theta > 0.0:
        raise ConvexityLossError(f"normalisation constant is not positive ({theta:.3e})")
    return theta


def _problem_for(mesh, monitor=None):
    from .monitor import uniform

    key = ("plane_problem", monitor)
    if key not in mesh._cache:
        mesh._cache[key] = PlaneProblem(mesh, monitor or uniform())
    return mesh._cache[key]


def relaxation_step(problem: PlaneProblem, state: SolverState, dt: float) -> SolverState:
    ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
    phi = problem.gauge(state.phi.coefficients + dt * problem.poisson_solve(ev.F_v))
    return SolverState(Field(problem.V, phi), Field(problem.S, problem.sigma_from_phi(phi)), ev.theta,
                       state.iteration + 1, ev.coords)


def assemble_residual(problem: PlaneProblem, state: SolverState):
    ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
    return ev.F_v, ev.F_tau


def assemble_approx_jacobian(problem: PlaneProblem, state: SolverState) -> BlockOperator:
    ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
    return problem.jacobian(state.phi.coefficients, state.sigma.coefficients, ev)


def solve_relaxation(mesh: MeshData, monitor: MonitorSpec, dt=0.1, tol=1e-8, max_iters=2000, state=None):
    problem = PlaneProblem(mesh, monitor)
    return relaxation_solve(problem, state, NonlinearConfig("relaxation", dt=dt, tol=tol, max_iters=max_iters))


def quasi_newton(mesh: MeshData, monitor: MonitorSpec, tol=1e-8, max_iters=200, state=None, **kw):
    problem = PlaneProblem(mesh, monitor)
    return quasi_newton_solve(problem, state, NonlinearConfig("quasi_newton", tol=tol, max_iters=max_iters, **kw))


__all__ = [
    "PlaneProblem", "Evaluation", "recover_coordinates", "compute_theta", "relaxation_step",
    "assemble_residual", "assemble_approx_jacobian", "solve_relaxation", "quasi_newton", "initial_state",
]
