"""Adam updates for the dissipation coefficient, plus range guards.

Adam is the standard bias-corrected form; with the default learning
rate the update magnitude is effectively capped at alpha, which is
what keeps single steps from throwing theta across its admissible
interval.  Guards encode that interval explicitly: theta is bounded
below by zero (negative dissipation is an energy source and blows the
solution up) and above by the stiffness threshold where the explicit
solver's step budget dies.  The default guard mode is ``none`` so the
failure modes stay observable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = ["AdamState", "adam_step", "GuardMode", "GuardPolicy", "apply_guard"]


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and hyperparameters."""

    alpha: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: float = 0.0
    v: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("decay rates must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not math.isfinite(self.m) or not math.isfinite(self.v) or self.v < 0:
            raise ValueError("moments must be finite with v >= 0")


def adam_step(st: AdamState, theta: float, grad: float) -> tuple[AdamState, float]:
    """One bias-corrected Adam update; returns (new state, new theta)."""
    if not math.isfinite(grad):
        raise ValueError(f"non-finite gradient {grad}")
    t = st.step_count + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * grad
    v = st.beta2 * st.v + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1 ** t)
    v_hat = v / (1.0 - st.beta2 ** t)
    theta_new = theta - st.alpha * m_hat / (np.sqrt(v_hat) + st.eps)
    return replace(st, m=m, v=v, step_count=t), float(theta_new)


class GuardMode(str, enum.Enum):
    NONE = "none"
    CLAMP = "clamp"
    REJECT = "reject"


@dataclass(frozen=True)
class GuardPolicy:
    """What to do with a proposed theta outside [theta_min, theta_max]."""

    mode: GuardMode = GuardMode.NONE
    theta_min: float = 0.0
    theta_max: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "mode", GuardMode(self.mode))
        if not self.theta_min < self.theta_max:
            raise ValueError(
                f"need theta_min < theta_max, got [{self.theta_min}, {self.theta_max}]"
            )


def apply_guard(
    policy: GuardPolicy, theta_proposed: float, theta_current: float
) -> tuple[float, bool]:
    """Apply the guard; returns (theta_final, flagged).

    ``none`` passes the proposal through, ``clamp`` clips it into the
    admissible interval, ``reject`` discards out-of-range proposals and
    keeps the current value.  ``flagged`` reports whether the guard
    intervened.
    """
    if policy.mode is GuardMode.NONE:
        return theta_proposed, False
    inside = policy.theta_min <= theta_proposed <= policy.theta_max
    if inside:
        return theta_proposed, False
    if policy.mode is GuardMode.CLAMP:
        return (
            min(max(theta_proposed, policy.theta_min), policy.theta_max),
            True,
        )
    return theta_current, True
