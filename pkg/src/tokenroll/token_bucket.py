"""Token bucket traffic specification.

Bucket levels are exact Python integers throughout; only the cost-related
quantities (``alpha``, the summed bucket stage cost) are floats.
"""
from dataclasses import dataclass

from .errors import BucketDrained, InvalidCombination, OutOfRange, PreconditionViolated


@dataclass(frozen=True)
class TokenBucketSpec:
    """Bucket size ``b``, cost per transmission ``c``, refill rate ``g`` and
    controller period multiplier ``r``."""

    b: int
    c: int
    g: int
    r: int = 1

    def __post_init__(self):
        for name in ("b", "c", "g", "r"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise PreconditionViolated(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.g < 1:
            raise PreconditionViolated("g must be >= 1")
        if self.c < self.g:
            raise PreconditionViolated("c must be >= g")
        if self.b < self.c:
            raise PreconditionViolated("b must be >= c")
        if self.r < 1:
            raise PreconditionViolated("r must be >= 1")

    @property
    def q(self):
        """Worst-case inter-transmission interval ``ceil(c/g)``."""
        return -(-self.c // self.g)

    @property
    def M(self):
        return self.r * self.q

    @property
    def rate_bound(self):
        return self.g / self.c

    def check_level(self, beta):
        if isinstance(beta, bool) or int(beta) != beta or not 0 <= beta <= self.b:
            raise OutOfRange(f"bucket level {beta!r} outside [0, {self.b}]")
        return int(beta)


def bucket_step(spec, beta, gamma):
    """One step of the bucket level: ``min(beta + g - gamma*c, b)``."""
    return bucket_step_direct_link(spec, beta, gamma, 0)


def bucket_step_direct_link(spec, beta, gamma, delta):
    """Bucket step when a direct link exists.

    Direct-link transmissions (``delta=1``) consume no tokens, but no tokens
    arrive during that step either.
    """
    beta = spec.check_level(beta)
    if gamma not in (0, 1) or delta not in (0, 1):
        raise InvalidCombination("gamma and delta must be bits")
    if gamma + delta > 1:
        raise InvalidCombination("gamma + delta must not exceed 1")
    level = beta + (1 - delta) * spec.g - gamma * spec.c
    if level < 0:
        raise BucketDrained(f"transmission at level {beta} drains the bucket ({level})")
    return min(level, spec.b)


def inter_transmission_bound(spec):
    """Return ``(q, margin_holds, q*g - c)``.

    ``margin_holds`` is true when ``c/g`` is not an integer; then ``q*g - c >= 1``.
    """
    q = spec.q
    return q, spec.c % spec.g != 0, q * spec.g - spec.c


def alpha(sigma, beta, b):
    """Guaranteed decrease of the bucket terminal cost over ``q`` terminal steps."""
    if sigma < 0:
        raise OutOfRange("sigma must be nonnegative")
    if not 0 <= beta <= b:
        raise OutOfRange(f"bucket level {beta} outside [0, {b}]")
    if beta == b:
        return 0.0
    return sigma * (2 * beta + 1)


def zeta(beta, b):
    if not 0 <= beta <= b:
        raise OutOfRange(f"bucket level {beta} outside [0, {b}]")
    return b if beta == b else b - 1


def _check_sigma_preconditions(spec):
    q = spec.q
    if q < 2:
        raise PreconditionViolated("direct-link bucket cost requires q >= 2")
    if (q - 1) * spec.g > spec.b:
        raise PreconditionViolated("requires (q-1)*g <= b")
    return q


def bucket_sum_closed_form(q, b, g):
    """Integer ``q b^2 - g^2 (q-1)(q-2)(2q-3)/6``: the sum of ``b^2 - beta_i^2``
    along the empty-bucket terminal sequence ``0, 0, g, ..., (q-2) g``."""
    correction = g * g * (q - 1) * (q - 2) * (2 * q - 3)
    # (q-1)(q-2)(2q-3) = 6 * sum_{i<q-1} i^2, so the division is exact
    return q * b * b - correction // 6


def summed_bucket_stage_cost(spec, psi):
    """Sum of ``psi*(b^2 - beta_i^2)`` over one direct-link terminal period from an
    empty bucket, in closed form."""
    q = _check_sigma_preconditions(spec)
    if psi <= 0:
        raise PreconditionViolated("psi must be positive")
    return psi * bucket_sum_closed_form(q, spec.b, spec.g)


def assumption4_threshold(spec, psi):
    """Smallest bucket terminal weight ``sigma`` compatible with stage weight ``psi``."""
    _check_sigma_preconditions(spec)
    if psi < 0:
        raise PreconditionViolated("psi must be nonnegative")
    if psi == 0:
        return 0.0
    return summed_bucket_stage_cost(spec, psi)
