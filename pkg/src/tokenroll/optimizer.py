"""Finite-horizon rollout problem: transmission schedules plus control values.

For a fixed transmission schedule the plant input is piecewise constant and
affine in the values sent at the transmission instants, so the cost is a
convex quadratic in those values and is minimized in closed form.  The
binary part is handled by depth-first enumeration of the bucket-feasible
schedules.
"""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .costs import (
    bucket_stage_cost,
    bucket_terminal_cost,
    rotated_stage_cost,
    rotated_terminal_cost,
    stage_cost,
    terminal_cost,
)
from .errors import (
    BucketDrained,
    ConstraintViolated,
    IllConditioned,
    Infeasible,
    InternalFeasibilityLoss,
    PreconditionViolated,
)
from .ncs import (
    DEFAULT_MEMBERSHIP_TOL,
    ControlInput,
    SetupVariant,
    check_state,
    periodic_delta,
    rollout,
    terminal_control,
    terminal_policy_rollout,
    terminal_region_contains,
)
from .token_bucket import bucket_step_direct_link

CONDITION_LIMIT = 1e12
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    gamma: tuple
    delta: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(int(v) for v in self.gamma))
        object.__setattr__(self, "delta", tuple(int(v) for v in self.delta))
        if len(self.gamma) != len(self.delta):
            raise ValueError("gamma and delta must have equal length")
        if any(g + d > 1 for g, d in zip(self.gamma, self.delta)):
            raise ValueError("gamma + delta must not exceed 1")

    def __len__(self):
        return len(self.gamma)

    @property
    def transmission_instants(self):
        return [i for i, (g, d) in enumerate(zip(self.gamma, self.delta)) if g + d]

    @property
    def bucket_transmissions(self):
        return sum(self.gamma)


@dataclass(frozen=True)
class RolloutProblem:
    plant: object
    spec: object
    variant: SetupVariant
    weights: object
    ingredients: object
    N: int
    absolute_time: int = 0
    rotated: bool = False
    membership_tol: float = DEFAULT_MEMBERSHIP_TOL

    def __post_init__(self):
        q, M = self.spec.q, self.spec.M
        if not self.N >= M >= q >= 1:
            raise PreconditionViolated(f"need N >= M >= q >= 1, got N={self.N}, M={M}, q={q}")
        if self.ingredients.q != q:
            raise PreconditionViolated("terminal ingredients were built for a different q")
        if self.absolute_time < 0:
            raise PreconditionViolated("absolute_time must be nonnegative")
        if self.variant is SetupVariant.DIRECT_LINK:
            if q < 2:
                raise PreconditionViolated("direct-link setup requires q >= 2")
            if self.N % q:
                raise PreconditionViolated("direct-link setup requires N to be a multiple of q")
            if self.absolute_time % q:
                raise PreconditionViolated("solve instants must be aligned with the direct-link period")

    @property
    def M(self):
        return self.spec.M

    def delta_pattern(self):
        if self.variant is SetupVariant.BUCKET_ONLY:
            return (0,) * self.N
        return tuple(periodic_delta(self.spec, self.absolute_time + i) for i in range(self.N))

    def at_time(self, t):
        return dataclasses.replace(self, absolute_time=t)

    def as_rotated(self, rotated=True):
        return dataclasses.replace(self, rotated=rotated)


@dataclass
class RolloutSolution:
    schedule: Schedule
    inputs: list
    controls: list
    predicted_states: list
    cost: float
    transmissions_used: int
    notes: dict = field(default_factory=dict)

    @property
    def terminal_state(self):
        return self.predicted_states[-1]


def enumerate_feasible_schedules(problem, x0):
    """Yield every bucket-feasible schedule in lexicographic order of ``gamma``.

    Prefixes that drain the bucket are pruned and never extended.
    """
    spec, N = problem.spec, problem.N
    deltas = problem.delta_pattern()
    gamma = [0] * N

    def visit(i, beta):
        if i == N:
            yield Schedule(tuple(gamma), deltas)
            return
        options = (0,) if deltas[i] else (0, 1)
        for bit in options:
            try:
                nxt = bucket_step_direct_link(spec, beta, bit, deltas[i])
            except BucketDrained:
                continue
            gamma[i] = bit
            yield from visit(i + 1, nxt)
        gamma[i] = 0

    spec.check_level(x0.beta)
    yield from visit(0, x0.beta)


def bucket_trajectory(spec, beta0, schedule):
    levels = [beta0]
    for g, d in zip(schedule.gamma, schedule.delta):
        levels.append(bucket_step_direct_link(spec, levels[-1], g, d))
    return levels


class _Quadratic:
    """Accumulates ``sum (c + E z)' W (c + E z)`` as ``z'Hz + 2 g'z + const``."""

    def __init__(self, dim):
        self.H = np.zeros((dim, dim))
        self.g = np.zeros(dim)
        self.const = 0.0

    def add(self, c, E, W):
        WE = W @ E
        self.H += E.T @ WE
        self.g += WE.T @ c
        self.const += float(c @ W @ c)


def _affine_trajectory(problem, x0, schedule):
    """Plant states and applied inputs as affine maps of the decision vector."""
    A, B = problem.plant.A, problem.plant.B
    n, m = B.shape
    instants = schedule.transmission_instants
    dim = m * len(instants)
    slot = {t: j for j, t in enumerate(instants)}
    xs = [(x0.x_p.copy(), np.zeros((n, dim)))]
    us = []
    held = (x0.u_s.copy(), np.zeros((m, dim)))
    for i in range(problem.N):
        if i in slot:
            E = np.zeros((m, dim))
            E[:, m * slot[i]: m * (slot[i] + 1)] = np.eye(m)
            held = (np.zeros(m), E)
        us.append(held)
        a, H = xs[-1]
        xs.append((A @ a + B @ held[0], A @ H + B @ held[1]))
    return xs, us, dim


def _build_cost(problem, x0, xs, us, dim, levels):
    w, spec = problem.weights, problem.spec
    quad = _Quadratic(dim)
    for i in range(problem.N):
        quad.add(*xs[i], w.Q)
        quad.add(*us[i], w.R)
        quad.const += bucket_stage_cost(w, problem.variant, spec, levels[i])
        if problem.rotated:
            held_before = us[i - 1] if i else (x0.u_s, np.zeros((x0.u_s.size, dim)))
            quad.add(*held_before, w.S)
            quad.add(*us[i], -w.S)
    quad.add(*xs[-1], problem.ingredients.P)
    quad.const += bucket_terminal_cost(w, spec, levels[-1])
    if problem.rotated:
        quad.add(*us[-1], w.S)
    return quad


def _minimize(quad, constraint=None, tol=DEFAULT_MEMBERSHIP_TOL):
    """Minimize ``z'Hz + 2g'z`` optionally subject to ``C z = d``."""
    dim = quad.g.size
    if dim == 0:
        return np.zeros(0)
    if constraint is None:
        if np.linalg.cond(quad.H) > CONDITION_LIMIT:
            raise IllConditioned("normal equations are numerically singular")
        return np.linalg.solve(quad.H, -quad.g)
    C, d = constraint
    z0, *_ = np.linalg.lstsq(C, d, rcond=None)
    if np.max(np.abs(C @ z0 - d), initial=0.0) > tol:
        return None
    _, s, Vt = np.linalg.svd(C)
    rank = int(np.sum(s > max(C.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    Z = Vt[rank:].T
    if Z.shape[1] == 0:
        return z0
    Hr = Z.T @ quad.H @ Z
    if np.linalg.cond(Hr) > CONDITION_LIMIT:
        raise IllConditioned("reduced normal equations are numerically singular")
    w = np.linalg.solve(Hr, -Z.T @ (quad.H @ z0 + quad.g))
    return z0 + Z @ w


def trajectory_cost(problem, states, controls):
    """Cost of a trajectory, recomputed stage by stage from its states."""
    w, spec, variant = problem.weights, problem.spec, problem.variant
    total = 0.0
    for x, u in zip(states, controls):
        if problem.rotated:
            total += rotated_stage_cost(w, variant, problem.plant, spec, x, u)
        else:
            total += stage_cost(w, variant, spec, x, u)
    if problem.rotated:
        total += rotated_terminal_cost(w, problem.ingredients, spec, states[-1])
    else:
        total += terminal_cost(w, problem.ingredients, spec, states[-1])
    return total


def _controls_for(schedule, z, m):
    controls, inputs = [], []
    instants = set(schedule.transmission_instants)
    j = 0
    for i, (g, d) in enumerate(zip(schedule.gamma, schedule.delta)):
        if i in instants:
            u_c = z[m * j: m * (j + 1)]
            inputs.append(u_c.copy())
            j += 1
        else:
            u_c = np.zeros(m)
        controls.append(ControlInput(u_c, g, d))
    return controls, inputs


def solve_fixed_schedule(problem, x0, schedule):
    """Optimal control values for a fixed schedule, or ``None`` if infeasible.

    If the schedule ends in the zero branch of the bucket-only terminal
    region, ``x_p(N) = 0`` and ``u_s(N) = 0`` are imposed as equality
    constraints; otherwise the unconstrained minimizer is taken and the
    terminal set and box constraints are checked on the resulting trajectory.
    """
    spec, m = problem.spec, problem.plant.input_dim
    check_state(problem.plant, spec, x0)
    if len(schedule) != problem.N or schedule.delta != problem.delta_pattern():
        raise PreconditionViolated("schedule does not match the problem horizon or direct-link pattern")
    try:
        levels = bucket_trajectory(spec, x0.beta, schedule)
    except BucketDrained:
        raise PreconditionViolated("schedule drains the bucket") from None
    xs, us, dim = _affine_trajectory(problem, x0, schedule)
    quad = _build_cost(problem, x0, xs, us, dim, levels)

    constraint = None
    if problem.variant is SetupVariant.BUCKET_ONLY and levels[-1] <= spec.c - spec.g - 1:
        C = np.vstack([xs[-1][1], us[-1][1]])
        d = -np.concatenate([xs[-1][0], us[-1][0]])
        constraint = (C, d)
    z = _minimize(quad, constraint, problem.membership_tol)
    if z is None:
        return None

    controls, inputs = _controls_for(schedule, z, m)
    try:
        states = rollout(problem.plant, spec, problem.variant, x0, controls, problem.absolute_time)
    except ConstraintViolated:
        return None
    if not terminal_region_contains(
        problem.variant, spec, problem.ingredients.region, states[-1], problem.membership_tol
    ):
        return None
    cost = trajectory_cost(problem, states, controls)
    qp_cost = float(z @ quad.H @ z + 2 * quad.g @ z + quad.const)
    notes = {"qp_cost": qp_cost, "terminal_equality": constraint is not None}
    if problem.plant.constrained:
        notes["constraints"] = "checked on the unconstrained minimizer"
    return RolloutSolution(schedule, inputs, controls, states, cost, len(inputs), notes)


def select_best(solutions):
    """Lowest cost; near-ties go to fewer transmissions, then smaller ``gamma``."""
    solutions = [s for s in solutions if s is not None]
    if not solutions:
        return None
    best = min(s.cost for s in solutions)
    tied = [s for s in solutions if s.cost <= best + TIE_RTOL * abs(best)]
    return min(tied, key=lambda s: (s.transmissions_used, s.schedule.gamma))


def solve_rollout(problem, x0):
    """Solve the rollout problem over all bucket-feasible schedules.

    Raises
    ------
    Infeasible
        If no schedule admits a solution satisfying the terminal and box
        constraints.
    """
    schedules = list(enumerate_feasible_schedules(problem, x0))
    best = select_best(solve_fixed_schedule(problem, x0, s) for s in schedules)
    if best is None:
        raise Infeasible(
            f"none of the {len(schedules)} bucket-feasible schedules reaches the terminal region "
            f"from x_p={x0.x_p}, u_s={x0.u_s}, beta={x0.beta} within N={problem.N} steps"
        )
    return best


def shifted_candidate(problem, previous):
    """Shift ``previous`` by M steps and append M steps of the terminal policy.

    ``problem`` is the successor problem (its ``absolute_time`` is M later
    than the one ``previous`` was solved for).  The result is a feasible but
    generally suboptimal solution of that problem.
    """
    M, N = problem.M, problem.N
    start = previous.predicted_states[M]
    try:
        tail = terminal_policy_rollout(
            problem.variant, problem.plant, problem.spec, problem.ingredients,
            previous.predicted_states[N], M, k0=problem.absolute_time + N - M,
            tol=problem.membership_tol,
        )
    except Exception as exc:
        raise InternalFeasibilityLoss(f"terminal policy failed on the shifted tail: {exc}") from exc
    controls = list(previous.controls[M:])
    controls += _tail_inputs(problem, tail)
    states = rollout(problem.plant, problem.spec, problem.variant, start, controls, problem.absolute_time)
    schedule = Schedule([u.gamma for u in controls], [u.delta for u in controls])
    inputs = [u.u_c.copy() for u in controls if u.transmits]
    if not terminal_region_contains(
        problem.variant, problem.spec, problem.ingredients.region, states[-1], problem.membership_tol
    ):
        raise InternalFeasibilityLoss("shifted candidate leaves the terminal region")
    cost = trajectory_cost(problem, states, controls)
    return RolloutSolution(schedule, inputs, controls, states, cost, len(inputs), {"candidate": True})


def _tail_inputs(problem, tail):
    q = problem.spec.q
    m = problem.plant.input_dim
    hold = ControlInput(np.zeros(m), 0, 0)
    return [
        terminal_control(problem.variant, problem.spec, problem.ingredients, x, problem.membership_tol)
        if i % q == 0 else hold
        for i, x in enumerate(tail[:-1])
    ]
