"""Sigmoid objective shifting: the mixture weight lambda(t).

lambda(t) = 1 / (1 + exp(-k * (t - t0))) climbs from recall-dominant to
target-dominant.  k = 0 is admitted and gives the constant multi-task
mixture 1/2; very large k underflows to exact 0/1 in float64, recovering
plain fine-tuning from step t0 + 1 onward.
"""

import math
from dataclasses import dataclass

DEFAULT_K_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_T0_GRID = (100, 250, 500, 1000)


@dataclass(frozen=True)
class AnnealSchedule:
    k: float
    t0: int

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k >= 0):
            raise ValueError(f"annealing rate k must be finite and >= 0, got {self.k}")
        if self.t0 < 0:
            raise ValueError(f"annealing midpoint t0 must be >= 0, got {self.t0}")


def lambda_at(sched: AnnealSchedule, t: int) -> float:
    """Mixture weight at optimizer step t >= 1 (post-increment counter)."""
    if t < 1:
        raise ValueError(f"lambda(t) needs t >= 1, got {t}")
    z = sched.k * (t - sched.t0)
    # branch on the sign so exp never overflows
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def composite_loss(lambda_t: float, loss_t: float, loss_s: float) -> float:
    """Convex combination lambda * loss_t + (1 - lambda) * loss_s.

    Trace logging only; gradient flow happens inside the steppers.
    """
    if not (0.0 <= lambda_t <= 1.0):
        raise ValueError(f"lambda_t must lie in [0, 1], got {lambda_t}")
    return lambda_t * loss_t + (1.0 - lambda_t) * loss_s
