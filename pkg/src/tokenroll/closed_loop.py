"""Receding-horizon closed loop and the diagnostics run on its traces."""
from dataclasses import dataclass, field

import numpy as np

from .costs import rotated_stage_cost, stage_cost
from .errors import (
    Infeasible,
    InitialInfeasible,
    InternalFeasibilityLoss,
    LengthMismatch,
    PreconditionViolated,
)
from .ncs import ControlInput, OverallState, SetupVariant, overall_step
from .optimizer import solve_rollout
from .token_bucket import alpha

MONITOR_TOL = 1e-7


@dataclass(frozen=True)
class SetpointChange:
    """New plant-state reference from ``step`` on; ``input`` is the matching
    steady-state input (solved for when omitted)."""

    step: int
    state: tuple
    input: tuple = None


@dataclass(frozen=True)
class Scenario:
    initial: OverallState
    duration: int
    setpoints: tuple = ()


@dataclass
class TraceRecord:
    k: int
    x: OverallState
    u_applied: ControlInput
    stage_cost: float
    cumulative_cost: float
    V_star: float = None
    V_bar_star: float = None
    beta_pred_terminal: int = None
    rotated_stage_cost: float = None

    @property
    def solve_instant(self):
        return self.V_star is not None

    @property
    def applied_input(self):
        return self.u_applied.u_c if self.u_applied.transmits else self.x.u_s


@dataclass
class Trace:
    records: list
    final_state: OverallState
    variant: SetupVariant
    M: int
    N: int
    change_steps: tuple = ()
    label: str = ""

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def betas(self):
        return [r.x.beta for r in self.records] + [self.final_state.beta]

    @property
    def cumulative_costs(self):
        return np.array([r.cumulative_cost for r in self.records])


def steady_state_input(plant, x_ref, tol=1e-9):
    """Input that keeps ``x_ref`` at rest, i.e. ``B u = (I - A) x_ref``."""
    x_ref = np.asarray(x_ref, dtype=float)
    rhs = x_ref - plant.A @ x_ref
    u, *_ = np.linalg.lstsq(plant.B, rhs, rcond=None)
    if np.max(np.abs(plant.B @ u - rhs), initial=0.0) > tol * (1.0 + np.max(np.abs(x_ref))):
        raise PreconditionViolated(f"reference {x_ref} is not an equilibrium of the plant")
    return u


def reference_pair(plant, change):
    """Reference state and steady-state input for a set-point change."""
    x_ref = np.asarray(change.state, dtype=float).reshape(-1)
    if x_ref.size != plant.state_dim:
        raise PreconditionViolated("set-point dimension does not match the plant")
    if change.input is None:
        return x_ref, steady_state_input(plant, x_ref)
    u_ref = np.asarray(change.input, dtype=float).reshape(-1)
    residual = x_ref - plant.A @ x_ref - plant.B @ u_ref
    if np.max(np.abs(residual)) > 1e-9 * (1.0 + np.max(np.abs(x_ref))):
        raise PreconditionViolated("set-point state/input pair is not an equilibrium")
    return x_ref, u_ref


def run_closed_loop(problem, scenario, log_rotated=True):
    """Simulate the rollout controller: solve every M steps, apply M inputs.

    Set-point changes translate the plant coordinates so that the new
    reference becomes the origin of the regulation problem; the bucket level
    is left untouched.  Stage costs are measured relative to the current
    reference.
    """
    plant, spec, M = problem.plant, problem.spec, problem.M
    changes = {c.step: c for c in scenario.setpoints}
    if any(step % M for step in changes):
        raise PreconditionViolated("set-point changes must occur at solve instants")
    if changes and plant.constrained:
        raise PreconditionViolated("set-point changes are only supported for unconstrained plants")
    x_ref = np.zeros(plant.state_dim)
    u_ref = np.zeros(plant.input_dim)
    x = scenario.initial
    records, cumulative = [], 0.0
    plan = None
    for k in range(scenario.duration):
        extras = {}
        if k % M == 0:
            if k in changes:
                x_ref, u_ref = reference_pair(plant, changes[k])
            dev = OverallState(x.x_p - x_ref, x.u_s - u_ref, x.beta)
            current = problem.at_time(k)
            try:
                sol = solve_rollout(current, dev)
            except Infeasible as exc:
                if k == 0:
                    raise InitialInfeasible(str(exc)) from exc
                raise InternalFeasibilityLoss(f"rollout problem infeasible at k={k}") from exc
            plan = sol.controls[:M]
            extras = {"V_star": sol.cost, "beta_pred_terminal": sol.terminal_state.beta}
            if log_rotated:
                extras["V_bar_star"] = solve_rollout(current.as_rotated(), dev).cost
                extras["rotated_stage_cost"] = rotated_stage_cost(
                    problem.weights, problem.variant, plant, spec, dev, sol.controls[0]
                )
        u_dev = plan[k % M]
        dev = OverallState(x.x_p - x_ref, x.u_s - u_ref, x.beta)
        cost = stage_cost(problem.weights, problem.variant, spec, dev, u_dev)
        cumulative += cost
        u_abs = ControlInput(u_dev.u_c + u_ref if u_dev.transmits else np.zeros(plant.input_dim),
                             u_dev.gamma, u_dev.delta)
        records.append(TraceRecord(k, x, u_abs, cost, cumulative, **extras))
        x = overall_step(plant, spec, problem.variant, x, u_abs, k)
    return Trace(records, x, problem.variant, M, problem.N, tuple(sorted(changes)))


def replay(plant, spec, variant, trace):
    """Re-apply the logged inputs from the first logged state."""
    x = trace.records[0].x
    states = [x]
    for r in trace.records:
        x = overall_step(plant, spec, variant, x, r.u_applied, r.k)
        states.append(x)
    return states


@dataclass
class SectorReport:
    sector: tuple
    solve_sector: tuple
    min_beta: int
    min_beta_at_solves: int
    passed: bool


def sector_bounds(spec, N, M):
    b, g = spec.b, spec.g
    return (max(0, b - N * g), b), (max(0, b - (N - M) * g), b)


def convergence_sector_check(trace, spec, N, M, tail_fraction=0.2):
    """Check the tail of a trace against the bucket-level sectors
    ``[max(0, b-Ng), b]`` (all steps) and ``[max(0, b-(N-M)g), b]`` (solve instants)."""
    if not len(trace):
        raise ValueError("empty trace")
    sector, solve_sector = sector_bounds(spec, N, M)
    start = int(np.floor(len(trace) * (1.0 - tail_fraction)))
    tail = trace.records[start:]
    betas = [r.x.beta for r in tail]
    solve_betas = [r.x.beta for r in tail if r.k % M == 0] or betas
    passed = (
        all(sector[0] <= v <= sector[1] for v in betas)
        and all(solve_sector[0] <= v <= solve_sector[1] for v in solve_betas)
    )
    return SectorReport(sector, solve_sector, min(betas), min(solve_betas), passed)


@dataclass
class DecreaseReport:
    checked: int
    worst_slack: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations


def decrease_monitor(trace, weights, spec, tol=MONITOR_TOL):
    """Check that the rotated optimal value decreases between solve instants.

    Checks ``Vbar(next) <= Vbar(now) - L(x, u*(0)) - alpha(beta*(N))`` for
    every consecutive pair of solve instants not separated by a set-point
    change.  The ``alpha`` term is only used in the bucket-only setup.
    """
    solves = [r for r in trace.records if r.V_bar_star is not None]
    use_alpha = trace.variant is SetupVariant.BUCKET_ONLY and weights.sigma > 0
    report = DecreaseReport(0, np.inf)
    for now, nxt in zip(solves, solves[1:]):
        if any(now.k < c <= nxt.k for c in trace.change_steps):
            continue
        decrease = now.rotated_stage_cost
        if use_alpha:
            decrease += alpha(weights.sigma, now.beta_pred_terminal, spec.b)
        slack = now.V_bar_star - decrease - nxt.V_bar_star
        report.checked += 1
        report.worst_slack = min(report.worst_slack, slack)
        if slack < -tol * (1.0 + abs(now.V_bar_star)):
            report.violations.append((now.k, nxt.k, slack))
    return report


@dataclass
class TrafficReport:
    transmissions: int
    steps: int
    achieved_rate: float
    rate_bound: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations


def traffic_audit(trace, spec):
    """Independent check of the traffic specification on a trace.

    Verifies ``0 <= beta(k) <= b`` and that ``c`` times the number of bucket
    transmissions during the first ``k`` steps never exceeds ``beta(0) + k g``.
    """
    records = trace.records if isinstance(trace, Trace) else list(trace)
    beta0 = records[0].x.beta
    violations = []
    count = 0
    for k, r in enumerate(records):
        if not 0 <= r.x.beta <= spec.b:
            violations.append((r.k, "level", r.x.beta))
        count += r.u_applied.gamma
        if spec.c * count > beta0 + (k + 1) * spec.g:
            violations.append((r.k, "rate", count))
    steps = len(records)
    return TrafficReport(count, steps, count / steps if steps else 0.0, spec.rate_bound, violations)


@dataclass
class CompareReport:
    labels: list
    cumulative: np.ndarray
    differences: dict
    segment_ends: list
    dominance: list


def cumulative_cost_compare(traces):
    """Align cumulative costs of several runs of one scenario.

    ``traces`` is a list of ``(label, trace)``.  ``differences[(a, b)]`` is
    ``cum_a - cum_b`` per step; ``dominance[s]`` names the cheapest run at
    the end of the ``s``-th set-point segment.
    """
    labels = [label for label, _ in traces]
    lengths = {len(t) for _, t in traces}
    if len(lengths) != 1:
        raise LengthMismatch(f"traces have different lengths {sorted(lengths)}")
    cum = np.vstack([t.cumulative_costs for _, t in traces])
    diffs = {}
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            diffs[(labels[i], labels[j])] = cum[i] - cum[j]
    changes = traces[0][1].change_steps
    ends = [c - 1 for c in changes if c > 0] + [lengths.pop() - 1]
    dominance = [labels[int(np.argmin(cum[:, e]))] for e in ends]
    return CompareReport(labels, cum, diffs, ends, dominance)


def stability_preconditions(problem):
    """Checklist for the asymptotic-stability result of the direct-link setup."""
    plant, spec, region = problem.plant, problem.spec, problem.ingredients.region
    compact = bool(np.all(np.isfinite(plant.u_lower)) and np.all(np.isfinite(plant.u_upper)))
    interior = bool(np.all(plant.u_lower < 0) and np.all(plant.u_upper > 0))
    if region.kind == "ellipsoid":
        interior = interior and region.rho > 0
    return {
        "N multiple of M": problem.N % problem.M == 0,
        "U_p compact": compact,
        "g >= 2": spec.g >= 2,
        "origin interior": interior,
    }


def perturbation_ladder(problem, base, directions, scales, duration):
    """Peak plant-state deviation for initial deflections ``scale * direction``."""
    peaks = []
    for s in scales:
        x0 = OverallState(base.x_p + s * np.asarray(directions, dtype=float), base.u_s, base.beta)
        trace = run_closed_loop(problem, Scenario(x0, duration), log_rotated=False)
        peaks.append(max(float(np.max(np.abs(r.x.x_p))) for r in trace))
    return peaks
