"""Steady confined Darcy flow on a cell-centered finite-volume grid.

Fixed heads on the west and east boundaries, no-flux north and south.
Interface transmissivities use the harmonic mean of the adjacent cell
conductivities, which preserves flux continuity across discontinuities.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from . import SolverError


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def darcy_solve(k, h_west=11.0, h_east=10.0, lx=1.0, ly=1.0, rtol=1e-12):
    """Head grid for conductivity field k (H, W). k must be positive."""
    k = np.asarray(k, dtype=np.float64)
    if np.any(k <= 0):
        raise ValueError("darcy_solve: conductivity must be positive everywhere")
    h, w = k.shape
    dx, dy = lx / w, ly / h
    n = h * w
    idx = np.arange(n).reshape(h, w)

    tx = _harmonic(k[:, :-1], k[:, 1:]) * dy / dx          # (h, w-1) interior x-faces
    ty = _harmonic(k[:-1, :], k[1:, :]) * dx / dy          # (h-1, w) interior y-faces
    t_west = k[:, 0] * dy / (dx / 2.0)                     # boundary half-cell
    t_east = k[:, -1] * dy / (dx / 2.0)

    rows, cols, vals = [], [], []
    diag = np.zeros(n)

    def link(a, b, t):
        rows.append(a)
        cols.append(b)
        vals.append(-t)
        rows.append(b)
        cols.append(a)
        vals.append(-t)
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)

    link(idx[:, :-1].ravel(), idx[:, 1:].ravel(), tx.ravel())
    link(idx[:-1, :].ravel(), idx[1:, :].ravel(), ty.ravel())

    b = np.zeros(n)
    diag[idx[:, 0]] += t_west
    b[idx[:, 0]] += t_west * h_west
    diag[idx[:, -1]] += t_east
    b[idx[:, -1]] += t_east * h_east

    rows = np.concatenate(rows + [np.arange(n)])
    cols = np.concatenate(cols + [np.arange(n)])
    vals = np.concatenate(vals + [diag])
    a_mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    sol, info = cg(a_mat, b, rtol=rtol, maxiter=20 * n)
    if info != 0:
        res = np.linalg.norm(a_mat @ sol - b) / np.linalg.norm(b)
        raise SolverError(f"darcy_solve: CG failed (info={info}, rel residual={res:.3e})")
    return sol.reshape(h, w)


def darcy_velocity(k, head, porosity, lx=1.0, ly=1.0):
    """Cell-centered pore velocity v_i = -(K/theta) dh/dx_i.

    Central differences in the interior, one-sided at the boundaries.
    """
    k = np.asarray(k, dtype=np.float64)
    head = np.asarray(head, dtype=np.float64)
    h, w = head.shape
    gy, gx = np.gradient(head, ly / h, lx / w)
    vx = -(k / porosity) * gx
    vy = -(k / porosity) * gy
    return vx, vy


def darcy_face_velocities(k, head, porosity, h_west=11.0, h_east=10.0, lx=1.0, ly=1.0):
    """Face-normal pore velocities for conservative transport.

    Returns (vx_face (H, W+1), vy_face (H+1, W)). Harmonic-mean interface
    conductivity, half-cell gradients at the fixed-head boundaries, zero on
    the no-flux north/south faces.
    """
    k = np.asarray(k, dtype=np.float64)
    head = np.asarray(head, dtype=np.float64)
    h, w = k.shape
    dx, dy = lx / w, ly / h
    vx = np.zeros((h, w + 1))
    kh = _harmonic(k[:, :-1], k[:, 1:])
    vx[:, 1:-1] = -(kh / porosity) * (head[:, 1:] - head[:, :-1]) / dx
    vx[:, 0] = -(k[:, 0] / porosity) * (head[:, 0] - h_west) / (dx / 2.0)
    vx[:, -1] = -(k[:, -1] / porosity) * (h_east - head[:, -1]) / (dx / 2.0)
    vy = np.zeros((h + 1, w))
    kv = _harmonic(k[:-1, :], k[1:, :])
    vy[1:-1, :] = -(kv / porosity) * (head[1:, :] - head[:-1, :]) / dy
    return vx, vy
