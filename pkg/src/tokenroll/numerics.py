"""Small dense-matrix numerics: Riccati iteration, Lyapunov residuals and
symmetric eigenvalue bounds.

Matrices are plain 2-d ``numpy.ndarray`` objects of dtype float64.
"""
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IllConditioned,
    NonConvergent,
    NotSymmetric,
    PreconditionViolated,
)

SYMMETRY_RTOL = 1e-12
CONDITION_LIMIT = 1e12


def as_matrix(a, rows=None, cols=None, name="matrix"):
    """Coerce ``a`` to a 2-d float array, optionally checking its shape."""
    m = np.array(a, dtype=float, ndmin=2)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionMismatch(f"{name} has {m.shape[0]} rows, expected {rows}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionMismatch(f"{name} has {m.shape[1]} cols, expected {cols}")
    return m


def is_symmetric(m, rtol=SYMMETRY_RTOL):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = np.max(np.abs(m)) if m.size else 0.0
    return bool(np.max(np.abs(m - m.T), initial=0.0) <= rtol * scale)


def symmetrize(m):
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class RiccatiProblem:
    """Discrete LQ problem ``sum x'Qw x + 2 x'Nw u + u'Rw u`` under ``x+ = Ax + Bu``."""

    A: np.ndarray
    B: np.ndarray
    Qw: np.ndarray
    Rw: np.ndarray
    Nw: np.ndarray = None

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        A = as_matrix(A, n, n, "A")
        B = as_matrix(self.B, n, name="B")
        m = B.shape[1]
        Qw = as_matrix(self.Qw, n, n, "Qw")
        Rw = as_matrix(self.Rw, m, m, "Rw")
        Nw = np.zeros((n, m)) if self.Nw is None else as_matrix(self.Nw, n, m, "Nw")
        for name, w in (("Qw", Qw), ("Rw", Rw)):
            if not is_symmetric(w):
                raise NotSymmetric(f"{name} is not symmetric")
        if np.min(np.linalg.eigvalsh(Rw)) <= 0:
            raise PreconditionViolated("Rw must be positive definite")
        composite = np.block([[Qw, Nw], [Nw.T, Rw]])
        slack = -1e-12 * max(1.0, np.max(np.abs(composite)))
        if np.min(np.linalg.eigvalsh(Qw)) < slack:
            raise PreconditionViolated("Qw must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(symmetrize(composite))) < slack:
            raise PreconditionViolated("[[Qw, Nw], [Nw', Rw]] must be positive semidefinite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Qw", Qw)
        object.__setattr__(self, "Rw", Rw)
        object.__setattr__(self, "Nw", Nw)


def _gain(p, P):
    G = p.Rw + p.B.T @ P @ p.B
    if np.linalg.cond(G) > CONDITION_LIMIT:
        raise IllConditioned("Rw + B'PB is numerically singular")
    return -np.linalg.solve(G, p.Nw.T + p.B.T @ P @ p.A)


def solve_riccati(p, tol=1e-10, max_iter=10_000):
    """Solve the discrete algebraic Riccati equation by value iteration.

    Starts from ``P0 = Qw`` and iterates the Riccati map until the largest
    entrywise change drops below ``tol``.

    Returns
    -------
    P : ndarray
        Stabilizing solution (symmetric positive definite).
    K : ndarray
        Optimal feedback, ``u = K x``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = p.Qw.copy()
    residual = np.inf
    for _ in range(max_iter):
        K = _gain(p, P)
        Acl = p.A + p.B @ K
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = symmetrize(
                Acl.T @ P @ Acl + p.Qw + p.Nw @ K + K.T @ p.Nw.T + K.T @ p.Rw @ K
            )
        if not np.all(np.isfinite(P_next)):
            raise NonConvergent("Riccati iteration diverged (pair not stabilizable?)")
        residual = np.max(np.abs(P_next - P))
        P = P_next
        if residual <= tol:
            return P, _gain(p, P)
    raise NonConvergent(
        f"Riccati iteration residual {residual:.3e} > {tol:.1e} after {max_iter} iterations"
    )


def lyapunov_residual(Acl, P, W):
    """Return ``Acl' P Acl - P + W``, symmetrized."""
    Acl = as_matrix(Acl, name="Acl")
    n = Acl.shape[0]
    if Acl.shape != (n, n):
        raise DimensionMismatch("Acl must be square")
    P = as_matrix(P, n, n, "P")
    W = as_matrix(W, n, n, "W")
    return symmetrize(Acl.T @ P @ Acl - P + W)


def jacobi_eigenvalues(M, tol=1e-12, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations (unsorted)."""
    a = as_matrix(M, name="M").copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatch("M must be square")
    if not is_symmetric(a):
        raise NotSymmetric("matrix is not symmetric")
    a = symmetrize(a)
    scale = max(np.max(np.abs(a), initial=0.0), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if a[i, j] == 0.0:
                    continue
                theta = (a[j, j] - a[i, i]) / (2.0 * a[i, j])
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    # theta^2 would overflow; t ~ 1/(2 theta)
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[i, i] = rot[j, j] = c
                rot[i, j] = s
                rot[j, i] = -s
                a = rot.T @ a @ rot
                a[i, j] = a[j, i] = 0.0
    return np.diag(a).copy()


def max_eigenvalue_symmetric(M, tol=1e-12):
    return float(np.max(jacobi_eigenvalues(M, tol=tol)))


def min_eigenvalue_symmetric(M, tol=1e-12):
    return float(np.min(jacobi_eigenvalues(M, tol=tol)))
