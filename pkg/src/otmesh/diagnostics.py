"""Convergence diagnostics and the exact axisymmetric transport map on the sphere."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import InvalidMonitorError
from .fem.elements import element
from .monitor import AxisymmetricMonitor, geodesic_distance

CSV_FIELDS = ("iter", "residual", "equidistribution_cv", "rms_deviation", "theta", "step_length",
              "min_area_ratio")


@dataclass
class DiagnosticsRecord:
    iteration: int
    residual: float
    equidistribution_cv: float
    theta: float
    min_area_ratio: float
    rms_deviation: float | None = None
    step_length: float | None = None

    @property
    def tangled(self) -> bool:
        return self.min_area_ratio <= 0.0

    def csv_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [str(self.iteration), fmt(self.residual), fmt(self.equidistribution_cv),
                fmt(self.rms_deviation), fmt(self.theta), fmt(self.step_length), fmt(self.min_area_ratio)]

    def as_dict(self) -> dict:
        return asdict(self)


def residual_norm(problem, ev) -> float:
    """l2 norm of the equidistribution residual over that of ``<v, theta>``."""
    denom = ev.theta * np.linalg.norm(problem.lumped)
    if not denom > 0.0:
        raise ArithmeticError("zero normalisation in residual norm")
    return float(np.linalg.norm(ev.F_v) / denom)


def _coord_tables(mesh, rule):
    key = ("coord_tables", rule.degree)
    if key not in mesh._cache:
        mesh._cache[key] = element(mesh.cell_shape, mesh.coord_degree).tabulate(rule.points)
    return mesh._cache[key]


def physical_area(mesh, coords, rule) -> np.ndarray:
    """Area elements ``(C, Q)`` of the physical mesh at the quadrature points.

    The physical cell is the image of the reference cell under the
    coordinate-degree interpolant of the node positions ``coords``. Plane
    area elements are signed, so inverted cells contribute negatively.
    """
    _, dref = _coord_tables(mesh, rule)
    X = np.asarray(coords, float)[mesh.cells]
    if mesh.shifts is not None:
        X = X + mesh.shifts
    J0 = np.matmul(dref[None, :, :, 0], X)  # (C, Q, gdim) tangent vectors
    J1 = np.matmul(dref[None, :, :, 1], X)
    if mesh.is_sphere:
        area = np.linalg.norm(np.cross(J0, J1), axis=-1)
    else:
        area = J0[..., 0] * J1[..., 1] - J0[..., 1] * J1[..., 0]
    return area * rule.weights[None, :]


def cell_masses(problem, ev) -> np.ndarray:
    """Per-cell ``int_{physical cell} m dx / |computational cell|``.

    ``m`` is the vertex monitor field of the evaluation ``ev``, integrated
    over the cells of the physical mesh ``ev.coords``.
    """
    asm = problem.asm
    dx = physical_area(problem.mesh, ev.coords, asm.rule)
    return np.sum(ev.m_q * dx, axis=1) / np.sum(asm.dx, axis=1)


def equidistribution_cv(problem, ev) -> float:
    """Coefficient of variation (std / mean) of the per-cell monitor masses."""
    Mi = cell_masses(problem, ev)
    return float(np.std(Mi) / np.mean(Mi))


def detect_tangling(ratio) -> tuple[float, bool]:
    """Minimum area ratio over all quadrature points and whether it is nonpositive."""
    r = float(np.min(ratio))
    return r, r <= 0.0


def make_record(problem, state, ev, step_length=None) -> DiagnosticsRecord:
    rms = None
    oracle = getattr(problem, "oracle_vertices", None)
    if oracle is not None:
        rms = rms_from_exact(ev.coords[: problem.mesh.n_vertices], oracle, problem.mesh.radius)
    return DiagnosticsRecord(
        iteration=state.iteration,
        residual=residual_norm(problem, ev),
        equidistribution_cv=equidistribution_cv(problem, ev),
        theta=ev.theta,
        min_area_ratio=float(np.min(ev.ratio)),
        rms_deviation=rms,
        step_length=step_length,
    )


# -- exact axisymmetric map --------------------------------------------------

def _checked(M):
    def f(s):
        v = float(M(s))
        if not v > 0.0:
            raise InvalidMonitorError(f"monitor profile is not positive at s={s:.6g} (M={v:.3e})")
        return v

    return f


class ExactAxisymmetricMap:
    """Monotone rearrangement of geodesic distance from the axis point.

    ``s(t)`` solves ``int_0^s M(u) sin u du = theta (1 - cos t)`` with
    ``theta = 1/2 int_0^pi M(u) sin u du``, so the whole unit sphere maps to itself.
    """

    def __init__(self, mon: AxisymmetricMonitor, quad_rtol=1e-7, bisect_tol=1e-6):
        self.mon = mon
        self.M = _checked(mon.M)
        self.quad_rtol = quad_rtol
        self.bisect_tol = bisect_tol
        self.center = np.asarray(mon.center, float) / np.linalg.norm(mon.center)
        self.theta = 0.5 * self.mass(np.pi)

    def mass(self, s) -> float:
        if s <= 0.0:
            return 0.0
        val, _ = integrate.quad(lambda u: self.M(u) * np.sin(u), 0.0, s, epsrel=self.quad_rtol,
                                epsabs=0.0, limit=200)
        return val

    def s_of_t(self, t) -> float:
        if t <= 0.0:
            return 0.0
        if t >= np.pi:
            return np.pi
        target = self.theta * (1.0 - np.cos(t))
        return optimize.bisect(lambda s: self.mass(s) - target, 0.0, np.pi, xtol=self.bisect_tol)

    def __call__(self, xi) -> np.ndarray:
        """Image of unit-sphere points ``xi`` (shape (3,) or (N, 3))."""
        xi = np.asarray(xi, float)
        pts = np.atleast_2d(xi)
        out = np.empty_like(pts)
        c = self.center
        for k, p in enumerate(pts):
            p = p / np.linalg.norm(p)
            tang = p - np.dot(p, c) * c
            tn = np.linalg.norm(tang)
            if tn <= 1e-12:
                out[k] = p
                continue
            t = float(np.arctan2(tn, np.dot(p, c)))
            s = self.s_of_t(t)
            u = tang / tn
            out[k] = np.cos(s) * c + np.sin(s) * u
        return out.reshape(xi.shape)


def exact_axisym_map(mon: AxisymmetricMonitor, xi) -> np.ndarray:
    return ExactAxisymmetricMap(mon)(xi)


def rms_from_exact(coords, exact, R=1.0) -> float:
    d = geodesic_distance(coords, exact, R)
    return float(np.sqrt(np.mean(d * d)))


def exact_vertices(mon: AxisymmetricMonitor, mesh) -> np.ndarray:
    """Exact-map images of the computational vertices (scaled to radius ``R``), cached on the mesh."""
    key = ("exact_vertices", id(mon.M), mon.center)
    if key not in mesh._cache:
        R = mesh.radius
        mesh._cache[key] = R * ExactAxisymmetricMap(mon)(mesh.vertex_coords / R)
    return mesh._cache[key]


def rms_vertex_deviation(physical_coords, mon: AxisymmetricMonitor, computational_mesh) -> float:
    """RMS geodesic distance between solver vertices and exact-map vertices."""
    exact = exact_vertices(mon, computational_mesh)
    n = computational_mesh.n_vertices
    return rms_from_exact(np.asarray(physical_coords)[:n], exact, computational_mesh.radius)
