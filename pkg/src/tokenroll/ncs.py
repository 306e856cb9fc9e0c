"""Overall networked-control-system state and dynamics.

The overall state stacks the plant state, the input held at the actuator
and the bucket level.  Two network setups are supported: every transmission
goes through the token bucket (``BUCKET_ONLY``), or an extra direct link
carries periodic transmissions that bypass the bucket (``DIRECT_LINK``).
"""
import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstraintViolated,
    DimensionMismatch,
    InvalidCombination,
    NotInTerminalRegion,
    PreconditionViolated,
)
from .numerics import as_matrix, is_symmetric
from .token_bucket import bucket_step_direct_link

DEFAULT_MEMBERSHIP_TOL = 1e-6


class SetupVariant(enum.Enum):
    BUCKET_ONLY = "bucket_only"
    DIRECT_LINK = "direct_link"


def _frozen_vector(v, size, name):
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.size != size:
        raise DimensionMismatch(f"{name} has length {arr.size}, expected {size}")
    arr.setflags(write=False)
    return arr


def _bounds(v, size, default, name):
    if v is None:
        return _frozen_vector(np.full(size, default), size, name)
    return _frozen_vector(v, size, name)


@dataclass(frozen=True)
class PlantModel:
    """Linear plant ``x+ = A x + B u`` with optional box bounds on state and input."""

    A: np.ndarray
    B: np.ndarray
    x_lower: np.ndarray = None
    x_upper: np.ndarray = None
    u_lower: np.ndarray = None
    u_upper: np.ndarray = None

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        A = as_matrix(A, n, n, "A")
        B = as_matrix(self.B, n, name="B")
        m = B.shape[1]
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        for name, size, default in (
            ("x_lower", n, -np.inf), ("x_upper", n, np.inf),
            ("u_lower", m, -np.inf), ("u_upper", m, np.inf),
        ):
            object.__setattr__(self, name, _bounds(getattr(self, name), size, default, name))
        for lo, hi, what in ((self.x_lower, self.x_upper, "state"), (self.u_lower, self.u_upper, "input")):
            if np.any(lo > hi):
                raise PreconditionViolated(f"{what} bounds have lower > upper")
            if np.any(lo > 0) or np.any(hi < 0):
                raise PreconditionViolated(f"{what} bounds must contain the origin")

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.B.shape[1]

    @property
    def constrained(self):
        return bool(
            np.any(np.isfinite(self.x_lower)) or np.any(np.isfinite(self.x_upper))
            or np.any(np.isfinite(self.u_lower)) or np.any(np.isfinite(self.u_upper))
        )

    def state_ok(self, x_p, tol=0.0):
        return bool(np.all(x_p >= self.x_lower - tol) and np.all(x_p <= self.x_upper + tol))

    def input_ok(self, u, tol=0.0):
        return bool(np.all(u >= self.u_lower - tol) and np.all(u <= self.u_upper + tol))


@dataclass(frozen=True)
class OverallState:
    x_p: np.ndarray
    u_s: np.ndarray
    beta: int

    def __post_init__(self):
        x_p = np.array(self.x_p, dtype=float).reshape(-1)
        u_s = np.array(self.u_s, dtype=float).reshape(-1)
        x_p.setflags(write=False)
        u_s.setflags(write=False)
        object.__setattr__(self, "x_p", x_p)
        object.__setattr__(self, "u_s", u_s)
        if isinstance(self.beta, bool) or int(self.beta) != self.beta:
            raise PreconditionViolated(f"bucket level must be an integer, got {self.beta!r}")
        object.__setattr__(self, "beta", int(self.beta))

    def __eq__(self, other):
        if not isinstance(other, OverallState):
            return NotImplemented
        return (
            self.beta == other.beta
            and np.array_equal(self.x_p, other.x_p)
            and np.array_equal(self.u_s, other.u_s)
        )

    __hash__ = None


@dataclass(frozen=True)
class ControlInput:
    u_c: np.ndarray
    gamma: int = 0
    delta: int = 0

    def __post_init__(self):
        u_c = np.array(self.u_c, dtype=float).reshape(-1)
        u_c.setflags(write=False)
        object.__setattr__(self, "u_c", u_c)
        if self.gamma not in (0, 1) or self.delta not in (0, 1):
            raise InvalidCombination("gamma and delta must be bits")
        if self.gamma + self.delta > 1:
            raise InvalidCombination("gamma + delta must not exceed 1")

    @property
    def transmits(self):
        return self.gamma + self.delta == 1


def check_state(plant, spec, x):
    if x.x_p.size != plant.state_dim or x.u_s.size != plant.input_dim:
        raise DimensionMismatch("state dimensions do not match the plant")
    spec.check_level(x.beta)


def periodic_delta(spec, k):
    """Direct-link pattern: 1 iff ``k`` is a multiple of ``q``."""
    if k < 0:
        raise ValueError("step index must be nonnegative")
    return 1 if k % spec.q == 0 else 0


def applied_input(x, u):
    return u.u_c if u.transmits else x.u_s


def overall_step(plant, spec, variant, x, u, k=None):
    """Advance the overall state by one step.

    ``k`` is the absolute step index; when given in the direct-link setup the
    ``delta`` bit is checked against the periodic pattern.
    """
    check_state(plant, spec, x)
    if u.u_c.size != plant.input_dim:
        raise DimensionMismatch("u_c has wrong length")
    if variant is SetupVariant.BUCKET_ONLY and u.delta:
        raise InvalidCombination("bucket-only setup has no direct link")
    if variant is SetupVariant.DIRECT_LINK and k is not None and u.delta != periodic_delta(spec, k):
        raise InvalidCombination(f"delta={u.delta} does not match the periodic pattern at k={k}")
    u_p = applied_input(x, u)
    if not plant.input_ok(u_p):
        raise ConstraintViolated(f"applied input {u_p} outside input bounds")
    x_next = plant.A @ x.x_p + plant.B @ u_p
    if not plant.state_ok(x_next):
        raise ConstraintViolated(f"successor state {x_next} outside state bounds")
    beta = bucket_step_direct_link(spec, x.beta, u.gamma, u.delta)
    return OverallState(x_next, u_p, beta)


@dataclass(frozen=True)
class TerminalRegionDescriptor:
    """Plant part of the terminal region times the input box.

    ``kind`` is ``"full"`` (the whole plant state space) or ``"ellipsoid"``
    (``{x : x' P x <= rho}``).
    """

    kind: str = "full"
    P: np.ndarray = None
    rho: float = np.inf
    u_lower: np.ndarray = None
    u_upper: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("full", "ellipsoid"):
            raise ValueError(f"unknown terminal region kind {self.kind!r}")
        if self.kind == "ellipsoid":
            P = as_matrix(self.P, name="P")
            if not is_symmetric(P):
                raise ValueError("ellipsoid matrix must be symmetric")
            object.__setattr__(self, "P", P)

    def contains_plant_state(self, x_p, tol=0.0):
        if self.kind == "full":
            return True
        return float(x_p @ self.P @ x_p) <= self.rho * (1.0 + tol) + tol

    def contains_input(self, u_s, tol=0.0):
        if self.u_lower is not None and np.any(u_s < np.asarray(self.u_lower) - tol):
            return False
        if self.u_upper is not None and np.any(u_s > np.asarray(self.u_upper) + tol):
            return False
        return True


def region_for_plant(plant, kind="full", P=None, rho=np.inf):
    return TerminalRegionDescriptor(kind, P, rho, plant.u_lower, plant.u_upper)


def in_zero_branch(spec, x, tol=DEFAULT_MEMBERSHIP_TOL):
    """Membership in the {0} x {0} x [0, c-g-1] part of the bucket-only terminal region."""
    return (
        x.beta <= spec.c - spec.g - 1
        and np.max(np.abs(x.x_p), initial=0.0) <= tol
        and np.max(np.abs(x.u_s), initial=0.0) <= tol
    )


def in_transmit_branch(spec, region, x, tol=0.0):
    """Membership in the X_fp x U_p x [c-g, b] part of the bucket-only terminal region."""
    return (
        spec.c - spec.g <= x.beta <= spec.b
        and region.contains_plant_state(x.x_p, tol)
        and region.contains_input(x.u_s, tol)
    )


def terminal_region_contains(variant, spec, region, x, tol=DEFAULT_MEMBERSHIP_TOL):
    if variant is SetupVariant.DIRECT_LINK:
        return (
            0 <= x.beta <= spec.b
            and region.contains_plant_state(x.x_p)
            and region.contains_input(x.u_s)
        )
    return in_zero_branch(spec, x, tol) or in_transmit_branch(spec, region, x)


def terminal_control(variant, spec, ingredients, x, tol=DEFAULT_MEMBERSHIP_TOL):
    """First element of the terminal control sequence for state ``x``."""
    m = x.u_s.size
    if variant is SetupVariant.DIRECT_LINK:
        if not terminal_region_contains(variant, spec, ingredients.region, x, tol):
            raise NotInTerminalRegion(f"{x} not in the terminal region")
        return ControlInput(ingredients.K @ x.x_p, 0, 1)
    if in_transmit_branch(spec, ingredients.region, x):
        return ControlInput(ingredients.K @ x.x_p, 1, 0)
    if in_zero_branch(spec, x, tol):
        return ControlInput(np.zeros(m), 0, 0)
    raise NotInTerminalRegion(f"{x} not in the terminal region")


def terminal_policy_rollout(variant, plant, spec, ingredients, x, steps, k0=None, tol=DEFAULT_MEMBERSHIP_TOL):
    """Apply the terminal control sequence for ``steps`` steps, restarting it every ``q``.

    Returns the list of visited states, ``steps + 1`` entries long.
    """
    q = spec.q
    if steps % q:
        raise PreconditionViolated(f"steps={steps} is not a multiple of q={q}")
    hold = ControlInput(np.zeros(plant.input_dim), 0, 0)
    states = [x]
    for i in range(steps):
        current = states[-1]
        u = terminal_control(variant, spec, ingredients, current, tol) if i % q == 0 else hold
        k = None if k0 is None else k0 + i
        states.append(overall_step(plant, spec, variant, current, u, k))
    return states


def rollout(plant, spec, variant, x, inputs, k0=None):
    """Fold ``overall_step`` over a sequence of inputs; returns all visited states."""
    states = [x]
    for i, u in enumerate(inputs):
        k = None if k0 is None else k0 + i
        states.append(overall_step(plant, spec, variant, states[-1], u, k))
    return states
