"""Experiment configuration files.

Configs are TOML documents.  Matrices are row-major nested lists; a scalar
``Q``/``R``/``S`` means that multiple of the identity.  A config may name a
base file with ``extends = "other.toml"``; tables are merged recursively and
every other value in the derived file replaces the base value.

Minimal example::

    name = "double_integrator"
    seed = 0

    [plant]
    A = [[1.0, 0.1], [0.0, 1.0]]
    B = [[0.005], [0.1]]

    [weights]
    Q = 10.0
    R = 1.0
    sigma = 1e-6

    [bucket]
    b = 22
    c = 8
    g = 3

    [controller]
    N = 3
    variant = "bucket_only"

    [initial]
    x_p = [1.0, 0.0]
    u_s = [0.0]
    beta = 22

    [scenario]
    duration = 75

The plant may instead be given in continuous time as ``[plant.continuous]``
with keys ``A``, ``B`` and ``dt``; it is then discretized by zero-order hold.
``plant.file`` points to a TOML file holding the ``[plant]`` table.
"""
import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .closed_loop import Scenario, SetpointChange, reference_pair
from .costs import CostWeights
from .discretize import zero_order_hold
from .errors import ConfigError, TokenrollError
from .ncs import OverallState, PlantModel, SetupVariant
from .optimizer import RolloutProblem
from .terminal import synthesize_terminal
from .token_bucket import TokenBucketSpec

_VARIANTS = {"bucket_only": SetupVariant.BUCKET_ONLY, "direct_link": SetupVariant.DIRECT_LINK}
_TOP_KEYS = {
    "name", "seed", "extends", "plant", "weights", "bucket", "controller",
    "initial", "scenario", "output",
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _read_toml(path, chain=()):
    path = Path(path).resolve()
    if path in chain:
        raise ConfigError(f"{path}: circular 'extends'")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = data.pop("extends", None)
    if base is None:
        return data
    if not isinstance(base, str):
        raise ConfigError(f"{path}: extends: expected a path string")
    return _merge(_read_toml(path.parent / base, chain + (path,)), data)


def _table(data, key, required=True):
    value = data.get(key)
    if value is None:
        if required:
            raise ConfigError(f"{key}: missing table")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a table")
    return value


def _number(table, key, where, default=None, kind=float):
    value = table.get(key, default)
    if value is None:
        raise ConfigError(f"{where}.{key}: missing")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _array(value, where, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric array") from exc
    if arr.ndim != ndim:
        raise ConfigError(f"{where}: expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def _weight(value, size, where):
    if value is None:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value) * np.eye(size)
    arr = _array(value, where, 2)
    if arr.shape != (size, size):
        raise ConfigError(f"{where}: expected shape ({size}, {size}), got {arr.shape}")
    return arr


def _plant_matrices(table, base_dir):
    if "file" in table:
        ref = Path(base_dir) / table["file"]
        table = _merge(_table(_read_toml(ref), "plant"), {k: v for k, v in table.items() if k != "file"})
        base_dir = ref.parent
    if "continuous" in table:
        ct = _table(table, "continuous")
        Ac = _array(ct.get("A"), "plant.continuous.A", 2)
        Bc = _array(ct.get("B"), "plant.continuous.B", 2)
        dt = _number(ct, "dt", "plant.continuous")
        if dt <= 0:
            raise ConfigError("plant.continuous.dt: must be positive")
        if Ac.shape[0] != Ac.shape[1] or Bc.shape[0] != Ac.shape[0]:
            raise ConfigError("plant.continuous: A must be square and B must have as many rows as A")
        A, B = zero_order_hold(Ac, Bc, dt)
    else:
        if "A" not in table or "B" not in table:
            raise ConfigError("plant: give A and B, a [plant.continuous] table, or plant.file")
        A = _array(table["A"], "plant.A", 2)
        B = _array(table["B"], "plant.B", 2)
    return A, B, table


@dataclass
class ExperimentConfig:
    """Validated experiment description; build domain objects from it."""

    name: str
    plant: PlantModel
    spec: TokenBucketSpec
    weights: CostWeights
    N: int
    variant: SetupVariant
    initial: OverallState
    scenario: Scenario
    terminal_tol: float = 1e-10
    membership_tol: float = 1e-6
    seed: int = 0
    output_dir: Path = Path("out")
    source: Path = None
    _ingredients: object = field(default=None, repr=False)

    def ingredients(self):
        if self._ingredients is None:
            self._ingredients = synthesize_terminal(
                self.plant, self.weights.Q, self.weights.R, self.spec.q, tol=self.terminal_tol
            )
        return self._ingredients

    def problem(self):
        return RolloutProblem(
            self.plant, self.spec, self.variant, self.weights, self.ingredients(), self.N,
            membership_tol=self.membership_tol,
        )


def parse_config(data, base_dir=".", source=None):
    """Validate a config mapping and build an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        With the offending field in the message.
    """
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    name = data.get("name", "experiment")
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\"):
        raise ConfigError(f"name: expected a plain file-name string, got {name!r}")
    seed = _number(data, "seed", "config", 0, int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed: must fit in an unsigned 64-bit integer")

    A, B, plant_table = _plant_matrices(_table(data, "plant"), base_dir)
    if A.shape[0] != A.shape[1]:
        raise ConfigError(f"plant.A: must be square, got {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ConfigError(f"plant.B: expected {A.shape[0]} rows, got {B.shape[0]}")
    n, m = B.shape
    bounds = {}
    for key, size in (("x_lower", n), ("x_upper", n), ("u_lower", m), ("u_upper", m)):
        if key in plant_table:
            bounds[key] = _array(plant_table[key], f"plant.{key}", 1)
            if bounds[key].size != size:
                raise ConfigError(f"plant.{key}: expected {size} entries")
    try:
        plant = PlantModel(A, B, **bounds)
    except TokenrollError as exc:
        raise ConfigError(f"plant: {exc}") from exc

    bucket = _table(data, "bucket")
    try:
        spec = TokenBucketSpec(
            _number(bucket, "b", "bucket", kind=int),
            _number(bucket, "c", "bucket", kind=int),
            _number(bucket, "g", "bucket", kind=int),
            _number(bucket, "r", "bucket", 1, int),
        )
    except TokenrollError as exc:
        raise ConfigError(f"bucket: {exc}") from exc

    wt = _table(data, "weights")
    if "Q" not in wt or "R" not in wt:
        raise ConfigError("weights: Q and R are required")
    try:
        weights = CostWeights(
            _weight(wt["Q"], n, "weights.Q"),
            _weight(wt["R"], m, "weights.R"),
            _weight(wt.get("S"), m, "weights.S"),
            _number(wt, "sigma", "weights", 0.0),
            _number(wt, "psi", "weights", 0.0),
        )
    except TokenrollError as exc:
        raise ConfigError(f"weights: {exc}") from exc

    ctrl = _table(data, "controller")
    N = _number(ctrl, "N", "controller", kind=int)
    variant_name = ctrl.get("variant", "bucket_only")
    if variant_name not in _VARIANTS:
        raise ConfigError(f"controller.variant: expected one of {sorted(_VARIANTS)}, got {variant_name!r}")
    variant = _VARIANTS[variant_name]
    terminal_tol = _number(ctrl, "terminal_tol", "controller", 1e-10)
    membership_tol = _number(ctrl, "membership_tol", "controller", 1e-6)
    if N < spec.M:
        raise ConfigError(f"controller.N: must be at least M={spec.M}")
    if variant is SetupVariant.DIRECT_LINK and (spec.q < 2 or N % spec.q):
        raise ConfigError("controller.N: the direct-link setup needs q >= 2 and N a multiple of q")

    init = _table(data, "initial")
    x_p = _array(init.get("x_p", [0.0] * n), "initial.x_p", 1)
    u_s = _array(init.get("u_s", [0.0] * m), "initial.u_s", 1)
    if x_p.size != n:
        raise ConfigError(f"initial.x_p: expected {n} entries")
    if u_s.size != m:
        raise ConfigError(f"initial.u_s: expected {m} entries")
    beta0 = _number(init, "beta", "initial", spec.b, int)
    if not 0 <= beta0 <= spec.b:
        raise ConfigError(f"initial.beta: must lie in [0, {spec.b}]")
    initial = OverallState(x_p, u_s, beta0)

    sc = _table(data, "scenario")
    duration = _number(sc, "duration", "scenario", kind=int)
    if duration < 1:
        raise ConfigError("scenario.duration: must be positive")
    changes = []
    for i, entry in enumerate(sc.get("setpoints", [])):
        where = f"scenario.setpoints[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected a table")
        step = _number(entry, "step", where, kind=int)
        if step % spec.M or not 0 <= step < duration:
            raise ConfigError(f"{where}.step: must be a multiple of M={spec.M} within the run")
        state = _array(entry.get("state"), f"{where}.state", 1)
        if state.size != n:
            raise ConfigError(f"{where}.state: expected {n} entries")
        u_ref = entry.get("input")
        if u_ref is not None:
            u_ref = _array(u_ref, f"{where}.input", 1)
            if u_ref.size != m:
                raise ConfigError(f"{where}.input: expected {m} entries")
            u_ref = tuple(u_ref)
        change = SetpointChange(step, tuple(state), u_ref)
        try:
            reference_pair(plant, change)
        except TokenrollError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        changes.append(change)
    steps = [c.step for c in changes]
    if len(set(steps)) != len(steps):
        raise ConfigError("scenario.setpoints: duplicate steps")
    if changes and plant.constrained:
        raise ConfigError("scenario.setpoints: only supported for unconstrained plants")
    changes.sort(key=lambda c: c.step)

    out = _table(data, "output", required=False)
    out_dir = Path(out.get("dir", "out"))

    return ExperimentConfig(
        name, plant, spec, weights, N, variant, initial,
        Scenario(initial, duration, tuple(changes)),
        terminal_tol, membership_tol, seed, out_dir, source,
    )


def load_config(path):
    """Read, merge (``extends``) and validate the config at ``path``."""
    path = Path(path)
    return parse_config(_read_toml(path), base_dir=path.resolve().parent, source=path)
