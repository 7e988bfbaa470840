"""Pure NumPy implementations of the hot assembly kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; :mod:`otmesh._kernels` picks one at import.
"""
import numpy as np


def scatter_add(dof_map, local, n):
    """Sum local cell vectors ``(C, nb)`` into a global vector of length ``n``."""
    return np.bincount(dof_map.ravel(), weights=local.ravel(), minlength=n)


def gather_eval(coeffs, dof_map, table):
    """Values at quadrature points of a multi-component field.

    coeffs: (ncomp, n); dof_map: (C, nb); table: (Q, nb) -> (C, Q, ncomp)
    """
    loc = coeffs[:, dof_map]  # (ncomp, C, nb)
    return np.einsum("kcb,qb->cqk", loc, table, optimize=True)


def gather_grad(coeffs, dof_map, dtable, pullback):
    """Surface/physical gradients at quadrature points.

    dtable: (Q, nb, 2) reference gradients; pullback: (C, Q, gdim, 2).
    Returns (C, Q, ncomp, gdim).
    """
    loc = coeffs[:, dof_map]
    ref = np.einsum("kcb,qbr->cqkr", loc, dtable, optimize=True)
    return np.einsum("cqdr,cqkr->cqkd", pullback, ref, optimize=True)


def integrate_test(dof_map, table, weighted, n):
    """``sum_q weighted[c, q, k] * table[q, a]`` scattered per component.

    weighted: (C, Q, ncomp) already multiplied by dx. Returns (ncomp, n).
    """
    local = np.einsum("cqk,qa->kca", weighted, table, optimize=True)
    return np.stack([scatter_add(dof_map, local[k], n) for k in range(local.shape[0])])


def integrate_test_grad(dof_map, dtable, pullback, weighted, n):
    """``sum_q weighted[c, q, k, :] . grad N_a`` per component -> (ncomp, n).

    weighted: (C, Q, ncomp, gdim) already multiplied by dx.
    """
    ref = np.einsum("cqdr,cqkd->cqkr", pullback, weighted, optimize=True)
    local = np.einsum("cqkr,qar->kca", ref, dtable, optimize=True)
    return np.stack([scatter_add(dof_map, local[k], n) for k in range(local.shape[0])])


def local_matrices(w, T, U):
    """Cell matrices ``sum_q w[c,q] T[c,q,a] U[c,q,b]`` -> (C, na, nb).

    ``T`` and ``U`` may have a leading axis of length 1 (shared by all cells).
    """
    wt = w[:, :, None] * T
    return np.einsum("cqa,cqb->cab", wt, np.broadcast_to(U, (w.shape[0],) + U.shape[1:]), optimize=True)


def det_adj2(A):
    """Determinant and adjugate of ``(..., 2, 2)`` matrices."""
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    adj = np.empty_like(A)
    adj[..., 0, 0] = A[..., 1, 1]
    adj[..., 1, 1] = A[..., 0, 0]
    adj[..., 0, 1] = -A[..., 0, 1]
    adj[..., 1, 0] = -A[..., 1, 0]
    return det, adj


def det_adj3(A):
    """Determinant and adjugate of ``(..., 3, 3)`` matrices."""
    a = A
    c00 = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    c01 = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    c02 = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    c10 = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    c11 = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    c12 = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    c20 = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    c21 = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    c22 = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    det = a[..., 0, 0] * c00 + a[..., 0, 1] * c01 + a[..., 0, 2] * c02
    # adjugate is the transposed cofactor matrix
    adj = np.stack(
        [
            np.stack([c00, c10, c20], axis=-1),
            np.stack([c01, c11, c21], axis=-1),
            np.stack([c02, c12, c22], axis=-1),
        ],
        axis=-2,
    )
    return det, adj


def expmap_points(xi, g, R):
    """Rodrigues exponential map at many points and its derivative in ``g``.

    x = cos(a) xi + sinc(a) g with a = |g| / R, evaluated literally (no
    tangential projection, no renormalisation). Returns ``x`` (..., 3) and
    ``D = dx/dg`` (..., 3, 3).
    """
    gn = np.sqrt(np.einsum("...i,...i->...", g, g))
    a = gn / R
    small = a < 1e-4
    a2 = a * a
    safe = np.where(small, 1.0, a)
    sinc = np.where(small, 1.0 - a2 / 6.0 + a2 * a2 / 120.0, np.sin(safe) / safe)
    # c2 = (cos a - sin a / a) / a^2
    c2 = np.where(small, -1.0 / 3.0 + a2 / 30.0 - a2 * a2 / 840.0, (np.cos(safe) - np.sin(safe) / safe) / (safe * safe))
    cos = np.cos(a)
    x = cos[..., None] * xi + sinc[..., None] * g
    eye = np.eye(3)
    D = (
        sinc[..., None, None] * (eye - np.einsum("...i,...j->...ij", xi, g) / R**2)
        + (c2 / R**2)[..., None, None] * np.einsum("...i,...j->...ij", g, g)
    )
    return x, D


def sphere_det_adj(sigma, x, xi, R):
    """Determinant and adjugate of ``A = sigma (I - xi xi^T / R^2) + x xi^T / R^2``.

    sigma: (..., 3, 3); x, xi: (..., 3). This is the sphere area-ratio matrix
    at each quadrature point.
    """
    R2 = R * R
    P = np.eye(3) - xi[..., :, None] * xi[..., None, :] / R2
    A = sigma @ P + x[..., :, None] * xi[..., None, :] / R2
    return det_adj3(A)
