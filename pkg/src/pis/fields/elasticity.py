"""Plane-strain linear elasticity with bilinear quadrilateral elements.

Nodes coincide with the H x W field grid (row 0 = bottom); each of the
(H-1) x (W-1) rectangular elements takes the mean of its corner stiffness
values. Loading is pure Dirichlet: u_y = 0 along the bottom, u_y = top_uy
along the top, one horizontal pin at the bottom to remove the rigid
translation; everything else is traction-free. Under this support the
homogeneous-stiffness response is the exact uniform-stress state (linear
u_y, antisymmetric lateral bulging).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, LinearOperator

from . import SolverError

_GP = 1.0 / np.sqrt(3.0)


def _unit_stiffness(dx, dy, nu):
    """8x8 element stiffness for E = 1 (plane strain), 2x2 Gauss points."""
    d = np.array([[1.0 - nu, nu, 0.0],
                  [nu, 1.0 - nu, 0.0],
                  [0.0, 0.0, (1.0 - 2.0 * nu) / 2.0]]) / ((1.0 + nu) * (1.0 - 2.0 * nu))
    ke = np.zeros((8, 8))
    for xi in (-_GP, _GP):
        for eta in (-_GP, _GP):
            # shape function derivatives on the reference square
            dn_dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            dn_deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            dn_dx = dn_dxi * 2.0 / dx
            dn_dy = dn_deta * 2.0 / dy
            b = np.zeros((3, 8))
            b[0, 0::2] = dn_dx
            b[1, 1::2] = dn_dy
            b[2, 0::2] = dn_dy
            b[2, 1::2] = dn_dx
            ke += b.T @ d @ b * (dx * dy / 4.0)
    return ke


def assemble_stiffness(e_field, nu, lx=1.0, ly=1.0):
    """Global sparse stiffness for the nodal stiffness grid e_field (H, W)."""
    e = np.asarray(e_field, dtype=np.float64)
    if np.any(e <= 0):
        raise ValueError("elasticity: stiffness must be positive everywhere")
    h, w = e.shape
    dx = lx / (w - 1)
    dy = ly / (h - 1)
    ke = _unit_stiffness(dx, dy, nu)
    nid = np.arange(h * w).reshape(h, w)
    # corner node ids per element, counterclockwise from lower-left
    n00 = nid[:-1, :-1].ravel()
    n01 = nid[:-1, 1:].ravel()
    n11 = nid[1:, 1:].ravel()
    n10 = nid[1:, :-1].ravel()
    corners = np.stack([n00, n01, n11, n10], axis=1)            # (ne, 4)
    dofs = np.empty((corners.shape[0], 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * corners
    dofs[:, 1::2] = 2 * corners + 1
    e_elem = 0.25 * (e[:-1, :-1] + e[:-1, 1:] + e[1:, 1:] + e[1:, :-1]).ravel()

    ne = corners.shape[0]
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    vals = (e_elem[:, None] * ke.ravel()[None, :]).ravel()
    kmat = sp.csr_matrix((vals, (rows, cols)), shape=(2 * h * w, 2 * h * w))
    kmat.sum_duplicates()
    return kmat


def elasticity_solve(e_field, nu=0.40, top_uy=-0.01, lx=1.0, ly=1.0,
                     rtol=1e-12, pin_ux=True):
    """Displacement grids (u_x, u_y), each (H, W), row 0 = bottom."""
    e = np.asarray(e_field, dtype=np.float64)
    h, w = e.shape
    kmat = assemble_stiffness(e, nu, lx, ly)
    nid = np.arange(h * w).reshape(h, w)

    n_dof = 2 * h * w
    u = np.zeros(n_dof)
    fixed = np.zeros(n_dof, dtype=bool)
    fixed[2 * nid[0, :] + 1] = True                  # bottom u_y = 0
    fixed[2 * nid[-1, :] + 1] = True                 # top u_y prescribed
    u[2 * nid[-1, :] + 1] = top_uy
    if pin_ux:
        fixed[2 * nid[0, (w - 1) // 2]] = True       # horizontal pin at bottom center

    if not fixed[0::2].any():
        raise SolverError("elasticity_solve: singular stiffness — no horizontal "
                          "constraint, rigid x-translation is unconstrained")

    free = ~fixed
    k_ff = kmat[free][:, free]
    rhs = -(kmat[free][:, fixed] @ u[fixed])

    dinv = 1.0 / k_ff.diagonal()
    if not np.all(np.isfinite(dinv)):
        raise SolverError("elasticity_solve: singular stiffness (zero diagonal)")
    precond = LinearOperator(k_ff.shape, matvec=lambda x: dinv * x)
    sol, info = cg(k_ff, rhs, rtol=rtol, maxiter=40 * k_ff.shape[0], M=precond)
    if info != 0:
        raise SolverError(
            f"elasticity_solve: CG failed (info={info}); stiffness may be singular "
            "(insufficient constraints)")
    u[free] = sol
    ux = u[0::2].reshape(h, w)
    uy = u[1::2].reshape(h, w)
    return ux, uy
