"""Nonlinear drivers shared by the plane and sphere problems.

A *problem* object (see :mod:`otmesh.plane` and :mod:`otmesh.sphere`) supplies
residual evaluation, the frozen-monitor Jacobian, the potential-to-tensor map
and the Poisson solver; the functions here run the relaxation and
quasi-Newton iterations on top of it and record diagnostics.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConvexityLossError,
    DivergenceError,
    NonconvergenceError,
    NumericFailureError,
    StagnationError,
    StepFailureError,
)
from .fem.spaces import Field
from .linalg import KrylovConfig, gmres_solve

log = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SolverState:
    """Potential, tensor, normalisation constant and physical coordinates."""

    phi: Field
    sigma: Field
    theta: float = 1.0
    iteration: int = 0
    physical_coords: np.ndarray | None = None

    def copy(self) -> "SolverState":
        return SolverState(
            Field(self.phi.space, self.phi.coefficients.copy()),
            Field(self.sigma.space, self.sigma.coefficients.copy()),
            self.theta,
            self.iteration,
            None if self.physical_coords is None else self.physical_coords.copy(),
        )


SphereSolverState = SolverState


@dataclass
class NonlinearConfig:
    method: str = "relaxation"
    dt: float = 0.1
    tol: float = 1e-8
    max_iters: int = 2000
    line_search_iters: int = 5
    lambda_min: float = 1e-3
    divergence_factor: float = 1e3
    growth_window: int = 10
    linear: KrylovConfig = field(default_factory=KrylovConfig)

    def __post_init__(self):
        if self.method not in ("relaxation", "quasi_newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "relaxation" and self.dt <= 0.0:
            raise ValueError("dt must be positive for relaxation")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.line_search_iters < 1:
            raise ValueError("line_search_iters must be >= 1")


@dataclass
class SolveResult:
    state: SolverState
    history: list
    converged: bool
    wall_time: float = 0.0
    linear_iterations: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.state.iteration

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.history])


def _attach(exc, history, state, wall_time):
    exc.history = history
    exc.state = state
    exc.wall_time = wall_time
    return exc


def initial_state(problem) -> SolverState:
    """Zero potential with its consistent tensor (the unadapted mesh)."""
    phi = np.zeros(problem.V.size)
    return SolverState(Field(problem.V, phi), Field(problem.S, problem.sigma_from_phi(phi)))


def _with_eval(state, ev, phi=None, sigma=None):
    new = SolverState(
        state.phi if phi is None else Field(state.phi.space, phi),
        state.sigma if sigma is None else Field(state.sigma.space, sigma),
        ev.theta,
        state.iteration,
        ev.coords,
    )
    return new


def relaxation_solve(problem, state: SolverState | None = None, config: NonlinearConfig | None = None,
                     callback=None) -> SolveResult:
    """Pseudo-time relaxation: Poisson update of the potential, then a mass solve for the tensor.

    Diagnostics and the termination test are evaluated after the normalisation
    constant is formed and before the Poisson solve.
    """
    from .diagnostics import make_record

    config = config or NonlinearConfig()
    state = (state or initial_state(problem)).copy()
    problem.prepare("relaxation")
    history = []
    t0 = time.perf_counter()
    initial_res = None
    growth = 0
    tangled = False
    while True:
        try:
            ev = problem.evaluate(state.phi.coefficients, state.sigma.coefficients)
        except (NumericFailureError, ConvexityLossError) as exc:
            raise _attach(DivergenceError(f"relaxation broke down at iteration {state.iteration}: {exc}",
                                          iteration=state.iteration, tangled=True),
                          history, state, time.perf_counter() - t0) from exc
        state = _with_eval(state, ev)
        rec = make_record(problem, state, ev)
        history.append(rec)
        tangled = tangled or rec.min_area_ratio <= 0.0
        if callback is not None:
            callback(state, rec)
        res = rec.residual
        log.debug("relaxation it=%d residual=%.3e cv=%.3e", state.iteration, res, rec.equidistribution_cv)
        if initial_res is None:
            initial_res = max(res, np.finfo(float).tiny)
        elif len(history) > 1:
            growth = growth + 1 if res > history[-2].residual else 0
        if not np.isfinite(res) or res > config.divergence_factor * initial_res or (
            growth >= config.growth_window and res > initial_res
        ):
            raise _attach(DivergenceError(f"relaxation diverged at iteration {state.iteration} "
                                          f"(residual {res:.3e})", iteration=state.iteration,
                                          tangled=tangled), history, state, time.perf_counter() - t0)
        if res <= config.tol:
            return SolveResult(state, history, True, time.perf_counter() - t0)
        if state.iteration >= config.max_iters:
            raise _attach(NonconvergenceError(f"relaxation did not converge in {config.max_iters} "
                                              f"iterations", residual=res, iterations=state.iteration),
                          history, state, time.perf_counter() - t0)
        phi = problem.gauge(state.phi.coefficients + config.dt * problem.poisson_solve(ev.F_v))
        sigma = problem.sigma_from_phi(phi)
        state = SolverState(Field(problem.V, phi), Field(problem.S, sigma), ev.theta,
                            state.iteration + 1, ev.coords)


def _line_search(problem, phi, sigma, dphi, dsig, n_evals, lambda_min, f0):
    """Minimise the full residual l2 norm over the step length.

    The full step is sampled first; the remaining budget is spent on a
    golden-section search over ``[lambda_min, 1]``. Returns the best sample.
    """
    cache = {}

    def f(lam):
        if lam not in cache:
            try:
                ev = problem.evaluate(phi + lam * dphi, sigma + lam * dsig)
                val = np.hypot(np.linalg.norm(ev.F_v), np.linalg.norm(ev.F_tau))
            except (NumericFailureError, ConvexityLossError):
                ev, val = None, np.inf
            cache[lam] = (val if np.isfinite(val) else np.inf, ev)
        return cache[lam][0]

    f(1.0)
    a, b = lambda_min, 1.0
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    remaining = n_evals - 1
    if remaining >= 1:
        f(c)
        remaining -= 1
    if remaining >= 1:
        f(d)
        remaining -= 1
    while remaining > 0:
        if f(c) < f(d):
            b, d = d, c
            c = b - GOLDEN * (b - a)
            f(c)
        else:
            a, c = c, d
            d = a + GOLDEN * (b - a)
            f(d)
        remaining -= 1
    lam = min(cache, key=lambda k: cache[k][0])
    val, ev = cache[lam]
    if not val < f0:
        return None, None, val
    return lam, ev, val


def quasi_newton_solve(problem, state: SolverState | None = None, config: NonlinearConfig | None = None,
                       callback=None) -> SolveResult:
    """Quasi-Newton iteration with the frozen-monitor Jacobian and a residual line search."""
    from .diagnostics import make_record

    config = config or NonlinearConfig(method="quasi_newton")
    state = (state or initial_state(problem)).copy()
    problem.prepare("quasi_newton")
    history = []
    lin_its = []
    t0 = time.perf_counter()
    phi = state.phi.coefficients
    sigma = state.sigma.coefficients
    ev = problem.evaluate(phi, sigma)
    step = None
    while True:
        state = _with_eval(state, ev, phi, sigma)
        rec = make_record(problem, state, ev, step_length=step)
        history.append(rec)
        if callback is not None:
            callback(state, rec)
        log.debug("quasi-newton it=%d residual=%.3e step=%s", state.iteration, rec.residual, step)
        if rec.residual <= config.tol:
            return SolveResult(state, history, True, time.perf_counter() - t0, lin_its)
        if state.iteration >= config.max_iters:
            raise _attach(NonconvergenceError(f"quasi-Newton did not converge in {config.max_iters} "
                                              f"iterations", residual=rec.residual,
                                              iterations=state.iteration),
                          history, state, time.perf_counter() - t0)
        J = problem.jacobian(phi, sigma, ev)
        prec = problem.preconditioner().with_coupling(J.blocks[1][0])
        rhs = -np.concatenate([ev.F_v, ev.F_tau])
        try:
            delta, stats = gmres_solve(J, rhs, config.linear, preconditioner=prec, nullspace=problem.nullspace)
        except StagnationError as exc:
            raise _attach(ConvexityLossError(f"linear solve stagnated at nonlinear iteration "
                                             f"{state.iteration}: {exc}", iteration=state.iteration),
                          history, state, time.perf_counter() - t0) from exc
        except NonconvergenceError as exc:
            raise _attach(ConvexityLossError(f"linear solve failed at nonlinear iteration "
                                             f"{state.iteration}: {exc}", iteration=state.iteration),
                          history, state, time.perf_counter() - t0) from exc
        lin_its.append(stats.iterations)
        dphi, dsig = delta[: problem.V.size], delta[problem.V.size:]
        f0 = np.hypot(np.linalg.norm(ev.F_v), np.linalg.norm(ev.F_tau))
        lam, ev_new, val = _line_search(problem, phi, sigma, dphi, dsig, config.line_search_iters,
                                        config.lambda_min, f0)
        if lam is None:
            raise _attach(StepFailureError(f"line search found no residual decrease at iteration "
                                           f"{state.iteration} (best {val:.3e} vs {f0:.3e})",
                                           iteration=state.iteration),
                          history, state, time.perf_counter() - t0)
        phi = problem.gauge(phi + lam * dphi)
        sigma = sigma + lam * dsig
        ev = ev_new
        step = lam
        state = replace(state, iteration=state.iteration + 1)


def solve(problem, config: NonlinearConfig, state: SolverState | None = None, callback=None) -> SolveResult:
    if config.method == "relaxation":
        return relaxation_solve(problem, state, config, callback)
    return quasi_newton_solve(problem, state, config, callback)
