"""Monitor functions: closed-form plane and sphere densities and a gridded field.

All evaluators are vectorised over a trailing coordinate axis. Plane monitors
measure distances on the periodic unit square (minimum image); sphere monitors
use geodesic distance ``R * arccos(x . x_c / R^2)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidMonitorError

DEFAULT_FLOOR = 0.005


class Variant(str, enum.Enum):
    RING = "ring"
    BELL = "bell"
    TANH = "tanh"
    CROSS = "cross"
    GRIDDED = "gridded"
    UNIFORM = "uniform"


PLANE_VARIANTS = {Variant.RING, Variant.BELL, Variant.GRIDDED}
SPHERE_VARIANTS = {Variant.TANH, Variant.CROSS}


@dataclass(frozen=True)
class GriddedField:
    """Nodal values on the uniform lattice ``(i / nx, j / ny)`` of the periodic unit square.

    ``values[j, i]`` is the value at ``x = i / nx, y = j / ny``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or min(v.shape) < 2:
            raise InvalidMonitorError(f"grid must be 2-D with at least 2 nodes per axis, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidMonitorError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = np.mod(x[..., 0], 1.0) * self.nx
        v = np.mod(x[..., 1], 1.0) * self.ny
        i0 = np.floor(u).astype(np.int64)
        j0 = np.floor(v).astype(np.int64)
        fu, fv = u - i0, v - j0
        i0 %= self.nx
        j0 %= self.ny
        i1 = (i0 + 1) % self.nx
        j1 = (j0 + 1) % self.ny
        g = self.values
        return ((1 - fu) * (1 - fv) * g[j0, i0] + fu * (1 - fv) * g[j0, i1]
                + (1 - fu) * fv * g[j1, i0] + fu * fv * g[j1, i1])

    @classmethod
    def sample(cls, f, nx, ny=None):
        """Grid of ``f`` sampled at the lattice nodes."""
        ny = ny or nx
        X, Y = np.meshgrid(np.arange(nx) / nx, np.arange(ny) / ny)
        return cls(f(np.stack([X, Y], axis=-1)))


def read_grid(path) -> GriddedField:
    """Read the text grid format: a header ``nx ny`` then ``nx * ny`` values, row-major."""
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise InvalidMonitorError(f"{path}: missing 'nx ny' header")
    nx, ny = int(text[0]), int(text[1])
    vals = np.array(text[2:], dtype=float)
    if vals.size != nx * ny:
        raise InvalidMonitorError(f"{path}: expected {nx * ny} values, found {vals.size}")
    return GriddedField(vals.reshape(ny, nx))


def write_grid(path, grid: GriddedField) -> None:
    with open(path, "w") as fh:
        fh.write(f"{grid.nx} {grid.ny}\n")
        np.savetxt(fh, grid.values.reshape(1, -1), fmt="%.17g")


@dataclass(frozen=True)
class MonitorSpec:
    """Description of a monitor function ``m(x) > 0``.

    Lengths (``alpha``, ``beta`` for Tanh, ``band_radius`` for Cross) are
    geodesic distances on a sphere of radius ``radius``. Centres are given as
    directions and scaled onto that sphere.
    """

    variant: Variant
    centers: tuple = ()
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0
    band_radius: float = np.pi / 2
    radius: float = 1.0
    floor: float = DEFAULT_FLOOR
    grid: GriddedField | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.TANH and not 0.0 < self.gamma <= 1.0:
            raise InvalidMonitorError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.variant is Variant.GRIDDED:
            if self.grid is None:
                raise InvalidMonitorError("gridded monitor needs a grid")
            if self.floor <= 0.0:
                raise InvalidMonitorError("gridded monitor floor must be positive")
        if self.radius <= 0.0:
            raise InvalidMonitorError("radius must be positive")

    @property
    def on_sphere(self) -> bool:
        return self.variant in SPHERE_VARIANTS

    def unit_centers(self):
        return [np.asarray(c, float) / np.linalg.norm(c) for c in self.centers]

    def __call__(self, x):
        return eval_monitor(self, x)


def ring(center=(0.5, 0.5)) -> MonitorSpec:
    return MonitorSpec(Variant.RING, centers=(tuple(center),))


def bell(center=(0.5, 0.5)) -> MonitorSpec:
    return MonitorSpec(Variant.BELL, centers=(tuple(center),))


def tanh_monitor(gamma, alpha=np.pi / 20, beta=np.pi / 6, latitude_deg=30.0, radius=1.0) -> MonitorSpec:
    lat = np.radians(latitude_deg)
    c = (np.cos(lat), 0.0, np.sin(lat))
    return MonitorSpec(Variant.TANH, centers=(c,), alpha=alpha * radius, beta=beta * radius,
                       gamma=gamma, radius=radius)


def xk_monitor(k: int, radius=1.0) -> MonitorSpec:
    """Tanh monitor whose inner/outer edge-length ratio is ``k`` (gamma = k^-4)."""
    return tanh_monitor(float(k) ** -4, radius=radius)


def cross(alpha=10.0, beta=5.0, radius=1.0) -> MonitorSpec:
    s3 = np.sqrt(3.0) / 2.0
    return MonitorSpec(Variant.CROSS, centers=((s3, 0.0, 0.5), (-s3, 0.0, 0.5)),
                       alpha=alpha, beta=beta / radius**2, band_radius=np.pi / 2 * radius, radius=radius)


def gridded(grid: GriddedField, floor=DEFAULT_FLOOR) -> MonitorSpec:
    return MonitorSpec(Variant.GRIDDED, grid=grid, floor=floor)


def uniform(radius=1.0) -> MonitorSpec:
    return MonitorSpec(Variant.UNIFORM, radius=radius)


def _sech2(z):
    return 1.0 / np.cosh(np.clip(z, -700.0, 700.0)) ** 2


def periodic_sqdist(x, c):
    d = np.asarray(x, float)[..., :2] - np.asarray(c, float)
    d -= np.round(d)
    return np.einsum("...i,...i->...", d, d)


def geodesic_distance(x, c, R=1.0):
    """Geodesic distance on the sphere of radius ``R`` between points ``x`` and ``c``."""
    x = np.asarray(x, float)
    c = np.asarray(c, float)
    # atan2 keeps full relative accuracy for nearly coincident and nearly antipodal points
    cross = np.linalg.norm(np.cross(x, c), axis=-1)
    dot = np.einsum("...i,...i->...", x, c)
    return R * np.arctan2(cross, dot)


def _check_sphere(x, R):
    r = np.linalg.norm(x, axis=-1)
    bad = np.abs(r - R) > 1e-8 * R
    if np.any(bad):
        worst = float(np.max(np.abs(r - R)))
        raise DomainError(f"point off the sphere of radius {R} by {worst:.3e}")


def eval_monitor(spec: MonitorSpec, x) -> np.ndarray:
    """Evaluate ``m`` at points ``x`` of shape (..., 2) or (..., 3)."""
    x = np.asarray(x, dtype=float)
    v = spec.variant
    if v is Variant.UNIFORM:
        return np.ones(x.shape[:-1])
    if v is Variant.RING:
        return 1.0 + 10.0 * _sech2(200.0 * (periodic_sqdist(x, spec.centers[0]) - 0.0625))
    if v is Variant.BELL:
        return 1.0 + 50.0 * _sech2(100.0 * periodic_sqdist(x, spec.centers[0]))
    if v is Variant.GRIDDED:
        return np.maximum(spec.grid(x), spec.floor)
    R = spec.radius
    _check_sphere(x, R)
    if v is Variant.TANH:
        s = geodesic_distance(x, spec.centers[0], R)
        return np.sqrt(0.5 * (1.0 - spec.gamma) * (np.tanh((spec.beta - s) / spec.alpha) + 1.0) + spec.gamma)
    if v is Variant.CROSS:
        out = np.ones(x.shape[:-1])
        for c in spec.centers:
            s = geodesic_distance(x, c, R)
            out += spec.alpha * _sech2(spec.beta * (s * s - spec.band_radius**2))
        return out
    raise InvalidMonitorError(f"unknown monitor variant {v}")


def monitor_to_field(spec: MonitorSpec, physical_vertices, computational_space):
    """Degree-1 field whose nodal values are ``m`` at the physical vertex positions."""
    from .fem.spaces import Field

    if computational_space.degree != 1:
        raise ValueError("monitor fields live in the degree-1 space")
    vals = eval_monitor(spec, np.asarray(physical_vertices)[: computational_space.n_dofs])
    return Field(computational_space, vals)


@dataclass(frozen=True)
class AxisymmetricMonitor:
    """Monitor depending only on geodesic distance ``s`` from ``center`` on the unit sphere."""

    M: object
    center: tuple


def axisymmetric(spec: MonitorSpec) -> AxisymmetricMonitor:
    """Radial profile of an axisymmetric sphere monitor, rescaled to the unit sphere."""
    if spec.variant is Variant.UNIFORM:
        return AxisymmetricMonitor(lambda s: np.ones_like(np.asarray(s, float)), (0.0, 0.0, 1.0))
    if spec.variant is not Variant.TANH:
        raise InvalidMonitorError(f"{spec.variant.value} monitor is not axisymmetric")
    R = spec.radius

    def M(s):
        s = np.asarray(s, float) * R
        return np.sqrt(0.5 * (1.0 - spec.gamma) * (np.tanh((spec.beta - s) / spec.alpha) + 1.0) + spec.gamma)

    return AxisymmetricMonitor(M, tuple(spec.unit_centers()[0]))
