"""Terminal ingredients for the held-input plant.

The terminal feedback ``k_p(x) = K x`` is transmitted once and then held for
``q`` steps.  ``P`` and ``K`` come from an LQR design on the q-step lifted
system, which satisfies the required q-step decrease of ``x' P x`` with
equality.
"""
from dataclasses import dataclass

import numpy as np

from .errors import CertificationFailed, DimensionMismatch
from .ncs import TerminalRegionDescriptor
from .numerics import (
    RiccatiProblem,
    as_matrix,
    lyapunov_residual,
    max_eigenvalue_symmetric,
    solve_riccati,
    symmetrize,
)

CERTIFICATION_TOL = 1e-8


@dataclass(frozen=True)
class LiftedSystem:
    A_q: np.ndarray
    B_q: np.ndarray
    Q_bar: np.ndarray
    N_bar: np.ndarray
    R_bar: np.ndarray


@dataclass(frozen=True)
class TerminalIngredients:
    P: np.ndarray
    K: np.ndarray
    q: int
    residual_eig: float
    region: TerminalRegionDescriptor

    def feedback(self, x_p):
        return self.K @ x_p


@dataclass
class TerminalCertificate:
    residual_eig: float
    residual_bound: float
    worst_margin: float
    worst_sample: np.ndarray
    sample_count: int

    @property
    def certified(self):
        return self.residual_eig <= self.residual_bound and self.worst_margin <= 0.0


def held_input_maps(A, B, q):
    """Return ``[(A_i, B_i)]`` for ``i = 0..q`` with ``x(i) = A_i x + B_i u`` under a held ``u``."""
    n = A.shape[0]
    maps = [(np.eye(n), np.zeros_like(B))]
    for _ in range(q):
        A_i, B_i = maps[-1]
        maps.append((A @ A_i, A @ B_i + B))
    return maps


def lift_held_input(plant, Q, R, q):
    if q < 1:
        raise ValueError("q must be >= 1")
    A, B = plant.A, plant.B
    n, m = B.shape
    Q = as_matrix(Q, n, n, "Q")
    R = as_matrix(R, m, m, "R")
    maps = held_input_maps(A, B, q)
    Q_bar = np.zeros((n, n))
    N_bar = np.zeros((n, m))
    R_bar = q * R
    for A_i, B_i in maps[:q]:
        Q_bar = Q_bar + A_i.T @ Q @ A_i
        N_bar = N_bar + A_i.T @ Q @ B_i
        R_bar = R_bar + B_i.T @ Q @ B_i
    A_q, B_q = maps[q]
    return LiftedSystem(A_q, B_q, symmetrize(Q_bar), N_bar, symmetrize(R_bar))


def _lifted_residual(lifted, P, K):
    Acl = lifted.A_q + lifted.B_q @ K
    W = lifted.Q_bar + lifted.N_bar @ K + K.T @ lifted.N_bar.T + K.T @ lifted.R_bar @ K
    return lyapunov_residual(Acl, P, symmetrize(W))


def ellipsoid_level(plant, P, K, q):
    """Largest ``rho`` such that ``{x' P x <= rho}`` keeps the state bounds for the
    q held-input steps and the input ``K x`` within the input bounds.

    Uses the support function of the ellipsoid, ``max h'x = sqrt(rho h' P^-1 h)``.
    """
    P_inv = np.linalg.inv(P)
    rows = []
    for A_i, B_i in held_input_maps(plant.A, plant.B, q):
        rows.append((A_i + B_i @ K, plant.x_lower, plant.x_upper))
    rows.append((K, plant.u_lower, plant.u_upper))
    rho = np.inf
    for Mmat, lower, upper in rows:
        for k in range(Mmat.shape[0]):
            h = Mmat[k]
            spread = float(h @ P_inv @ h)
            if spread <= 0:
                continue
            bound = min(-lower[k], upper[k])
            if np.isfinite(bound):
                rho = min(rho, bound * bound / spread)
    return rho


def synthesize_terminal(plant, Q, R, q, tol=1e-10, max_iter=10_000):
    lifted = lift_held_input(plant, Q, R, q)
    P, K = solve_riccati(
        RiccatiProblem(lifted.A_q, lifted.B_q, lifted.Q_bar, lifted.R_bar, lifted.N_bar),
        tol=tol, max_iter=max_iter,
    )
    residual_eig = max_eigenvalue_symmetric(_lifted_residual(lifted, P, K))
    if plant.constrained:
        region = TerminalRegionDescriptor(
            "ellipsoid", P, ellipsoid_level(plant, P, K, q), plant.u_lower, plant.u_upper
        )
    else:
        region = TerminalRegionDescriptor("full", u_lower=plant.u_lower, u_upper=plant.u_upper)
    return TerminalIngredients(P, K, q, residual_eig, region)


def _sample_in_region(rng, region, n):
    x = rng.standard_normal(n)
    if region.kind == "ellipsoid":
        level = float(x @ region.P @ x)
        if level > 0 and np.isfinite(region.rho):
            x = x * np.sqrt(region.rho / level) * rng.uniform()
    return x


def verify_assumption2(plant, Q, R, ingredients, sample_count=1000, seed=0):
    """Check the q-step decrease of ``x' P x`` under the held terminal feedback.

    Two certificates are checked: the largest eigenvalue of the lifted
    Lyapunov residual, and the decrease inequality on random plant states.

    Raises
    ------
    CertificationFailed
        If either certificate fails; ``exc.sample`` holds the worst sample.
    """
    P, K, q = ingredients.P, ingredients.K, ingredients.q
    n, m = plant.B.shape
    if P.shape != (n, n) or K.shape != (m, n):
        raise DimensionMismatch("ingredients do not match the plant")
    Q = as_matrix(Q, n, n, "Q")
    R = as_matrix(R, m, m, "R")
    lifted = lift_held_input(plant, Q, R, q)
    residual_eig = max_eigenvalue_symmetric(_lifted_residual(lifted, P, K))
    bound = CERTIFICATION_TOL * (1.0 + np.linalg.norm(P, 2))

    rng = np.random.default_rng(seed)
    maps = held_input_maps(plant.A, plant.B, q)
    worst, worst_x = -np.inf, None
    for _ in range(sample_count):
        x = _sample_in_region(rng, ingredients.region, n)
        u = K @ x
        stage = q * float(u @ R @ u)
        for A_i, B_i in maps[:q]:
            xi = A_i @ x + B_i @ u
            stage += float(xi @ Q @ xi)
        A_q, B_q = maps[q]
        xq = A_q @ x + B_q @ u
        decrease = float(xq @ P @ xq) - float(x @ P @ x) + stage
        margin = decrease - CERTIFICATION_TOL * (1.0 + float(x @ x))
        if margin > worst:
            worst, worst_x = margin, x
    report = TerminalCertificate(residual_eig, bound, worst, worst_x, sample_count)
    if residual_eig > bound:
        raise CertificationFailed(
            f"Lyapunov residual eigenvalue {residual_eig:.3e} exceeds {bound:.3e}", worst_x
        )
    if worst > 0:
        raise CertificationFailed(f"sampled decrease violated by {worst:.3e}", worst_x)
    return report
