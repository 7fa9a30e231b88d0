"""Continuous adjoint gradient of the spectrum-slope loss with respect
to the dissipation coefficient, plus a finite-difference oracle.

Given a forward segment u(t) on [t0, t1] and the terminal sensitivity
lam(t1) = dL/du(t1), the costate solves

    dlam/dt = -J(u(t))^T lam,      J = d(rhs)/du  (real view),

backward in time, and the gradient is the quadrature

    dL/dtheta = integral_{t0}^{t1} lam(t) . d(rhs)/dtheta (u(t)) dt.

Both are integrated together as one augmented system in the reversed
time variable s = t1 - t, reusing the adaptive solver, with u(t)
supplied by the forward segment's dense interpolant (no recomputation
or checkpointing; a segment of this size lives comfortably in memory).
The sign convention is fixed so that descent theta <- theta - alpha *
dL/dtheta reduces the loss, which the finite-difference oracle checks
directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .diagnostics import (
    LossConfig,
    SnapshotWindow,
    loss,
    loss_grad_state,
    window_mean_spectrum,
)
from .integrator import (
    IntegratorConfig,
    SegmentSolution,
    SolveStats,
    VectorField,
    integrate_segment,
    modified_field,
    solve_real,
)
from .model import GoyParams, ShellState, coupling_coefficients, wavenumbers

__all__ = [
    "AdjointProblem",
    "GradientResult",
    "solve_adjoint",
    "finite_diff_grad",
    "training_gradient",
]


@dataclass(frozen=True, eq=False)
class AdjointProblem:
    """One backward gradient solve over a stored forward segment."""

    segment: SegmentSolution
    theta: float
    terminal: np.ndarray
    params: GoyParams
    config: IntegratorConfig | None = None
    record_norms: bool = False

    def __post_init__(self):
        term = np.ascontiguousarray(self.terminal, dtype=np.float64)
        if term.shape != (2 * self.params.n_shells,):
            raise ValueError(
                f"terminal vector must have shape (2N,) = ({2 * self.params.n_shells},)"
            )
        if not np.all(np.isfinite(term)):
            raise ValueError("non-finite terminal sensitivity")
        object.__setattr__(self, "terminal", term)
        if self.segment.n_shells != self.params.n_shells:
            raise ValueError("segment and params disagree on shell count")


@dataclass(frozen=True, eq=False)
class GradientResult:
    dl_dtheta: float
    stats: SolveStats
    knot_times: np.ndarray | None = None
    adjoint_norms: np.ndarray | None = None


def _adjoint_field(prob: AdjointProblem) -> VectorField:
    p = prob.params
    a, b, c = coupling_coefficients(p)
    k = wavenumbers(p)
    k2 = k * k
    seg = prob.segment
    t1 = seg.t1
    ts, ys, qs = seg.ts, seg.ys, seg.qs
    theta = float(prob.theta)
    n = p.n_shells

    def make_args():
        return (t1, ts, ys, qs, a, b, c, k2, theta, np.empty(2 * n))

    return VectorField(fn=_k.goy_adjoint_rhs, dim=2 * n + 1, make_args=make_args)


def solve_adjoint(prob: AdjointProblem) -> GradientResult:
    """Integrate the augmented adjoint system and return dL/dtheta.

    Raises :class:`SolveError` if the backward pass itself fails (it
    shares the forward solver and its guard taxonomy).
    """
    seg = prob.segment
    span = seg.t1 - seg.t0
    if span == 0:
        return GradientResult(dl_dtheta=0.0, stats=SolveStats(0, 0, float("nan")))
    if seg.qs.shape[0] == 0:
        raise ValueError("adjoint needs a dense forward segment")
    cfg = prob.config if prob.config is not None else IntegratorConfig()
    n = prob.params.n_shells
    y0 = np.zeros(2 * n + 1)
    y0[: 2 * n] = prob.terminal
    if not np.any(prob.terminal):
        # homogeneous backward problem with zero data
        return GradientResult(dl_dtheta=0.0, stats=SolveStats(0, 0, float("nan")))
    res = solve_real(_adjoint_field(prob), y0, 0.0, span, cfg, dense=False)
    grad = float(res.final[2 * n])
    if prob.record_norms:
        norms = np.sqrt(np.sum(res.ys[:, : 2 * n] ** 2, axis=1))
        return GradientResult(
            dl_dtheta=grad,
            stats=res.stats,
            knot_times=seg.t1 - res.ts,
            adjoint_norms=norms,
        )
    return GradientResult(dl_dtheta=grad, stats=res.stats)


def training_gradient(
    state: ShellState,
    theta: float,
    window: SnapshotWindow,
    params: GoyParams,
    duration: float,
    integ_cfg: IntegratorConfig,
    loss_cfg: LossConfig,
) -> float:
    """Adjoint dL/dtheta for one training update taken from (state, window).

    Mirrors exactly what the training loop computes: integrate the
    segment, push its endpoint into a copy of the window, differentiate
    the window-mean loss at the newest snapshot, and run the adjoint
    backward over the segment.
    """
    seg = integrate_segment(
        state, modified_field(params, theta), integ_cfg, duration, dense=True
    )
    probe = window.copy()
    probe.push(seg.t1, seg.final_state.u)
    terminal = loss_grad_state(probe, params, loss_cfg)
    prob = AdjointProblem(
        segment=seg, theta=theta, terminal=terminal, params=params, config=integ_cfg
    )
    return solve_adjoint(prob).dl_dtheta


def finite_diff_grad(
    state: ShellState,
    theta: float,
    window: SnapshotWindow,
    params: GoyParams,
    duration: float,
    integ_cfg: IntegratorConfig,
    loss_cfg: LossConfig,
    h: float = 1e-11,
) -> float:
    """Central finite difference (L(theta+h) - L(theta-h)) / (2h).

    Each loss is evaluated the way a training update would see it:
    integrate the segment, push the endpoint snapshot into a copy of
    the window, and score the window-mean spectrum.  The default step
    reflects the timestep-theta coupling scale of the stiff shells;
    the loss gets noisy in theta below it.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    vals = []
    for sign in (1.0, -1.0):
        field = modified_field(params, theta + sign * h)
        seg = integrate_segment(state, field, integ_cfg, duration, dense=False)
        probe = window.copy()
        if duration > 0:
            probe.push(seg.t1, seg.final_state.u)
        vals.append(loss(window_mean_spectrum(probe, params), loss_cfg))
    return (vals[0] - vals[1]) / (2.0 * h)
