"""Stage, terminal, storage and rotated costs."""
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolated
from .ncs import SetupVariant, applied_input, overall_step
from .numerics import as_matrix, is_symmetric


def _pd(m):
    return np.min(np.linalg.eigvalsh(m)) > 0


@dataclass(frozen=True)
class CostWeights:
    """Plant weights ``Q``, ``R``, storage weight ``S`` and bucket weights.

    ``sigma`` scales the bucket terminal cost, ``psi`` the bucket stage cost
    (direct-link setup only).  ``S`` defaults to ``R / 2``.
    """

    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray = None
    sigma: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        Q = as_matrix(self.Q, name="Q")
        R = as_matrix(self.R, name="R")
        S = 0.5 * R if self.S is None else as_matrix(self.S, *R.shape, name="S")
        for name, w in (("Q", Q), ("R", R), ("S", S)):
            if w.shape[0] != w.shape[1] or not is_symmetric(w):
                raise PreconditionViolated(f"{name} must be square and symmetric")
        if not (_pd(Q) and _pd(R) and _pd(S)):
            raise PreconditionViolated("Q, R and S must be positive definite")
        if np.min(np.linalg.eigvalsh(R - S)) < -1e-12 * np.max(np.abs(R)):
            raise PreconditionViolated("R - S must be positive semidefinite")
        if self.sigma < 0 or self.psi < 0:
            raise PreconditionViolated("sigma and psi must be nonnegative")
        for name, w in (("Q", Q), ("R", R), ("S", S)):
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "psi", float(self.psi))


def _sq(v, W):
    return float(v @ W @ v)


def bucket_stage_cost(w, variant, spec, beta):
    if variant is SetupVariant.DIRECT_LINK:
        return w.psi * (spec.b ** 2 - beta ** 2)
    return 0.0


def bucket_terminal_cost(w, spec, beta):
    return w.sigma * (spec.b ** 2 - beta ** 2)


def stage_cost(w, variant, spec, x, u):
    """Plant cost plus, in the direct-link setup, the bucket stage cost.

    The input term is ``||u_c||_R^2`` at transmission instants and the held
    input ``||u_s||_R^2`` otherwise.
    """
    u_p = applied_input(x, u)
    return _sq(x.x_p, w.Q) + _sq(u_p, w.R) + bucket_stage_cost(w, variant, spec, x.beta)


def terminal_cost(w, ingredients, spec, x):
    return _sq(x.x_p, ingredients.P) + bucket_terminal_cost(w, spec, x.beta)


def storage(w, x):
    return _sq(x.u_s, w.S)


def rotated_stage_cost(w, variant, plant, spec, x, u):
    """Stage cost rotated by the storage function (the optimal average cost is 0)."""
    x_next = overall_step(plant, spec, variant, x, u)
    return stage_cost(w, variant, spec, x, u) + storage(w, x) - storage(w, x_next)


def rotated_terminal_cost(w, ingredients, spec, x):
    return terminal_cost(w, ingredients, spec, x) + storage(w, x)
