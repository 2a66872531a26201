"""Helmholtz solve on a node-centered grid with zero Dirichlet boundary.

5-point Laplacian plus k^2 mass term; k^2 is real here so the system is
real symmetric (indefinite) and solved directly by sparse LU. Resonant
(near-singular) systems surface as residual failures for the caller's
retry logic.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import SolverError


def helmholtz_solve(k, rhs, lx=1.0, ly=1.0, rtol=1e-8):
    """Solve laplacian(u) + k^2 u = rhs with u = 0 on the boundary.

    k and rhs are (H, W) node grids including boundary nodes; returns u of
    the same shape (boundary rows identically zero).
    """
    k = np.asarray(k, dtype=np.float64)
    f = np.asarray(rhs, dtype=np.float64)
    if k.shape != f.shape:
        raise ValueError(f"helmholtz_solve: shape mismatch {k.shape} vs {f.shape}")
    h, w = k.shape
    hx = lx / (w - 1)
    hy = ly / (h - 1)
    hi, wi = h - 2, w - 2   # interior extents
    n = hi * wi
    idx = np.arange(n).reshape(hi, wi)

    diag = (-2.0 / hx ** 2 - 2.0 / hy ** 2) + k[1:-1, 1:-1] ** 2
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [diag.ravel()]

    def link(a, b, t):
        rows.append(a)
        cols.append(b)
        vals.append(np.full(a.size, t))
        rows.append(b)
        cols.append(a)
        vals.append(np.full(a.size, t))

    link(idx[:, :-1].ravel(), idx[:, 1:].ravel(), 1.0 / hx ** 2)
    link(idx[:-1, :].ravel(), idx[1:, :].ravel(), 1.0 / hy ** 2)
    a_mat = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))

    b = f[1:-1, 1:-1].ravel()
    try:
        lu = splu(a_mat)
        sol = lu.solve(b)
    except RuntimeError as exc:      # singular factorization
        raise SolverError(f"helmholtz_solve: factorization failed ({exc})")
    bnorm = np.linalg.norm(b)
    if bnorm > 0:
        res = np.linalg.norm(a_mat @ sol - b) / bnorm
        if not np.isfinite(res) or res > rtol:
            raise SolverError(f"helmholtz_solve: residual {res:.3e} exceeds {rtol:.1e} "
                              "(near-resonant wavenumber field)")
    u = np.zeros((h, w))
    u[1:-1, 1:-1] = sol.reshape(hi, wi)
    return u


def point_source(h, w, row, col, amplitude=1.0, lx=1.0, ly=1.0):
    """Delta forcing at one node, scaled to unit integral over a cell."""
    f = np.zeros((h, w))
    hx = lx / (w - 1)
    hy = ly / (h - 1)
    f[row, col] = amplitude / (hx * hy)
    return f
